//! Fraction-to-count conversion.

use crate::error::{Error, Result};

/// Largest-remainder rounding of `fractions · total`.
///
/// Counts always sum to `total`. Leftover units go to the largest
/// fractional parts; ties go to the lower index.
pub fn largest_remainder(fractions: &[f64], total: usize) -> Result<Vec<usize>> {
    if fractions.is_empty() {
        return Err(Error::InvalidArgument("no fractions to apportion".into()));
    }
    let sum: f64 = fractions.iter().sum();
    if fractions.iter().any(|f| !(*f >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Validation(format!(
            "fractions {fractions:?} must be non-negative and sum to 1"
        )));
    }
    let quotas: Vec<f64> = fractions.iter().map(|f| f * total as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..fractions.len()).collect();
    // stable sort keeps lower indices first among equal remainders
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.partial_cmp(&ra).expect("finite")
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    Ok(counts)
}
