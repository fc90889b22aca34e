//! Plot-ready summaries of search results.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::arch::{structure_stats, NetworkSpec, OpKind, STACKS};
use crate::growth::SearchRecord;

pub const DEFAULT_TOP_N: usize = 10;

/// Height, width and op mix of one stack, aggregated over a set of networks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackSummary {
    pub stack: usize,
    pub networks: usize,
    pub h_mean: f64,
    pub h_std: f64,
    pub w_mean: f64,
    pub w_std: f64,
    /// Mean share of 1×1, 3×3, 5×5 and 7×7 ops among the stack's parameterized ops.
    pub op_fractions: [f64; 4],
}

/// Records with the highest ε, best first; ties go to the older record.
pub fn top_records(history: &[SearchRecord], n: usize) -> Vec<&SearchRecord> {
    let mut sorted: Vec<&SearchRecord> = history.iter().collect();
    sorted.sort_by(|a, b| b.epsilon_or_zero().total_cmp(&a.epsilon_or_zero()).then(a.age.cmp(&b.age)));
    sorted.truncate(n);
    sorted
}

/// Mean and population standard deviation.
fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn structure_summary(specs: &[&NetworkSpec]) -> Vec<StackSummary> {
    let stats: Vec<_> = specs.iter().map(|s| structure_stats(s)).collect();
    (0..STACKS)
        .map(|s| {
            let h: Vec<f64> = stats.iter().map(|st| st[s].height as f64).collect();
            let w: Vec<f64> = stats.iter().map(|st| st[s].width).collect();
            let mut op_fractions = [0.0; 4];
            for st in &stats {
                let total: usize = st[s].op_histogram.values().sum();
                if total == 0 {
                    continue;
                }
                for (i, k) in OpKind::CONVS.iter().enumerate() {
                    op_fractions[i] += st[s].op_histogram.get(k).copied().unwrap_or(0) as f64 / total as f64;
                }
            }
            if !stats.is_empty() {
                op_fractions = op_fractions.map(|v| v / stats.len() as f64);
            }
            let (h_mean, h_std) = mean_std(&h);
            let (w_mean, w_std) = mean_std(&w);
            StackSummary { stack: s, networks: stats.len(), h_mean, h_std, w_mean, w_std, op_fractions }
        })
        .collect()
}

pub fn structure_csv(rows: &[StackSummary]) -> String {
    let mut out = String::from("stack,networks,h_mean,h_std,w_mean,w_std\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{},{},{}", r.stack + 1, r.networks, r.h_mean, r.h_std, r.w_mean, r.w_std);
    }
    out
}

pub fn ops_csv(rows: &[StackSummary]) -> String {
    let mut out = String::from("stack,conv1x1,conv3x3,conv5x5,conv7x7\n");
    for r in rows {
        let f = r.op_fractions;
        let _ = writeln!(out, "{},{},{},{},{}", r.stack + 1, f[0], f[1], f[2], f[3]);
    }
    out
}

/// Per-stack φ shares as (conventional, max, coincidence).
pub fn neural_csv(composition: &[[f64; 3]]) -> String {
    let mut out = String::from("stack,conventional,max,coincidence\n");
    for (s, c) in composition.iter().enumerate() {
        let _ = writeln!(out, "{},{},{},{}", s + 1, c[0], c[1], c[2]);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedNetwork {
    pub age: usize,
    pub spec_hash: String,
    pub epsilon: f64,
    pub alpha: f64,
    pub eta: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub top_n: usize,
    pub networks: Vec<RankedNetwork>,
    pub stacks: Vec<StackSummary>,
}

pub fn growth_report(history: &[SearchRecord], top_n: usize) -> AnalysisReport {
    let top = top_records(history, top_n);
    let specs: Vec<&NetworkSpec> = top.iter().map(|r| &r.spec).collect();
    AnalysisReport {
        top_n,
        networks: top
            .iter()
            .map(|r| RankedNetwork {
                age: r.age,
                spec_hash: r.spec_hash.clone(),
                epsilon: r.epsilon_or_zero(),
                alpha: r.alpha,
                eta: r.eta,
            })
            .collect(),
        stacks: structure_summary(&specs),
    }
}
