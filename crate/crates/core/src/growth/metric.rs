use crate::error::{Error, Result};

/// Members whose normalized size is this close to 1 carry no information about k.
const MIN_LOG_ETA: f64 = 1e-6;

/// Cost-accuracy metric `ε = (α/α_init) / (η/η_init)^k`.
pub fn epsilon_metric(alpha: f64, eta: u64, alpha_init: f64, eta_init: f64, k: f64) -> Result<f64> {
    if !(alpha_init > 0.0 && eta_init > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "baselines must be positive (alpha_init {alpha_init}, eta_init {eta_init})"
        )));
    }
    if eta == 0 {
        return Err(Error::InvalidArgument("parameter count η must be positive".into()));
    }
    Ok((alpha / alpha_init) / (eta as f64 / eta_init).powf(k))
}

/// Least-squares constant fit of the break-even exponents `k_i = ln ᾱ_i / ln η̄_i`
/// (the k at which member i scores ε = 1) over `(α, η)` pairs, i.e. the mean
/// of the usable pointwise values.
pub fn fit_k(members: &[(f64, u64)], alpha_init: f64, eta_init: f64) -> Result<f64> {
    if members.is_empty() {
        return Err(Error::Search("cannot fit k on an empty population".into()));
    }
    if !(alpha_init > 0.0 && eta_init > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "baselines must be positive (alpha_init {alpha_init}, eta_init {eta_init})"
        )));
    }
    let ks: Vec<f64> = members
        .iter()
        .filter_map(|&(alpha, eta)| {
            let a = alpha / alpha_init;
            let log_eta = (eta as f64 / eta_init).ln();
            (a > 0.0 && log_eta.abs() >= MIN_LOG_ETA).then(|| a.ln() / log_eta)
        })
        .collect();
    if ks.is_empty() {
        return Err(Error::Search(
            "no population member differs in size from the baseline; perturb the initial population or fix k".into(),
        ));
    }
    Ok(ks.iter().sum::<f64>() / ks.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization_point_is_one() {
        assert_eq!(epsilon_metric(0.7, 1000, 0.7, 1000.0, 0.37).unwrap(), 1.0);
    }

    #[test]
    fn worked_example() {
        let e = epsilon_metric(1.1, 2, 1.0, 1.0, 1.0).unwrap();
        assert!((e - 0.55).abs() < 1e-15);
    }

    #[test]
    fn zero_k_ignores_size() {
        let a = epsilon_metric(0.8, 10, 1.0, 5.0, 0.0).unwrap();
        let b = epsilon_metric(0.8, 10_000, 1.0, 5.0, 0.0).unwrap();
        assert_eq!(a, 0.8);
        assert_eq!(b, 0.8);
    }

    #[test]
    fn zero_eta_rejected() {
        assert!(epsilon_metric(0.5, 0, 1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn fit_examples() {
        let k = fit_k(&[(0.9, 50)], 1.0, 100.0).unwrap();
        assert!((epsilon_metric(0.9, 50, 1.0, 100.0, k).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(fit_k(&[(2.0, 10), (2.0, 40)], 2.0, 20.0).unwrap(), 0.0);
    }

    #[test]
    fn unusable_population_is_an_error() {
        assert!(matches!(fit_k(&[(0.9, 100), (0.0, 50)], 1.0, 100.0), Err(Error::Search(_))));
        assert!(fit_k(&[], 1.0, 1.0).is_err());
    }
}
