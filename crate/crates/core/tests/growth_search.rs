use neuroforge::arch::{spec_ledger, NetworkSpec, NeuronLayerSpec, SpecTemplate};
use neuroforge::growth::{
    aging_search, epsilon_metric, fit_k, read_history, Evaluation, Evaluator, SearchConfig, SearchOutcome,
    StopReason, SurrogateEvaluator,
};
use neuroforge::{Error, Result};
use proptest::prelude::*;

fn template() -> SpecTemplate {
    SpecTemplate { n_f: 4, n_b: 1, num_classes: 4, input_shape: [3, 16, 16], neuron_layer: NeuronLayerSpec::Trainable }
}

fn config(n_p: usize, n_s: usize, n_iter: usize) -> SearchConfig {
    SearchConfig { n_p, n_s, n_iter, n_op_max: 60, n_g_init: 3, seed: 17, ..SearchConfig::default() }
}

fn check_invariants(out: &SearchOutcome, cfg: &SearchConfig) {
    let h = &out.history;
    assert!(h.len() <= cfg.n_iter);
    for (i, r) in h.iter().enumerate() {
        assert_eq!(r.age, i);
        assert!(r.ops <= cfg.n_op_max);
        assert_eq!(r.ops, r.spec.op_count());
        assert_eq!(r.spec_hash, r.spec.hash());
        let eps = if r.failed() {
            0.0
        } else {
            epsilon_metric(r.alpha, r.eta, out.baseline.alpha_init, out.baseline.eta_init, out.baseline.k).unwrap()
        };
        assert!((r.epsilon.unwrap() - eps).abs() <= 1e-12);
        if i < cfg.n_p {
            assert!(r.parent_age.is_none() && r.sample.is_empty());
            continue;
        }
        assert_eq!(r.sample.len(), cfg.n_s);
        for &a in &r.sample {
            assert!(a >= i - cfg.n_p && a < i, "record {i} sampled age {a} outside population");
        }
        let parent = r.parent_age.unwrap();
        let best = r.sample.iter().map(|&a| h[a].epsilon.unwrap()).fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(h[parent].epsilon.unwrap(), best);
        assert_eq!(r.sample.iter().find(|&&a| h[a].epsilon.unwrap() == best), Some(&parent));
        assert_eq!(r.parent_hash.as_deref(), Some(h[parent].spec_hash.as_str()));
        assert!(r.ops > h[parent].ops);
    }
    let max = h.iter().map(|r| r.epsilon.unwrap()).fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(out.best_record().epsilon.unwrap(), max);
}

#[test]
fn fit_k_examples() {
    let k = fit_k(&[(0.9, 50)], 1.0, 100.0).unwrap();
    assert!((k - 0.15200).abs() < 1e-4, "{k}");
    // break-even: the member scores exactly the baseline
    assert!((0.9 / 0.5f64.powf(k) - 1.0).abs() < 1e-12);
    assert_eq!(fit_k(&[(1.0, 50), (1.0, 400)], 1.0, 100.0).unwrap(), 0.0);
    // k1 = 0.1 and k2 = 0.3 for η̄ = 2
    let a1 = 2f64.powf(0.1);
    let a2 = 2f64.powf(0.3);
    let k = fit_k(&[(a1, 200), (a2, 200)], 1.0, 100.0).unwrap();
    assert!((k - 0.2).abs() < 1e-12);
}

proptest! {
    #[test]
    fn epsilon_is_monotone(a in 0.01f64..1.0, da in 1e-3f64..0.5, eta in 1u64..1_000_000, deta in 1u64..1000, k in 0.01f64..2.0) {
        let base = epsilon_metric(a, eta, 0.5, 1e4, k).unwrap();
        prop_assert!(epsilon_metric(a + da, eta, 0.5, 1e4, k).unwrap() > base);
        prop_assert!(epsilon_metric(a, eta + deta, 0.5, 1e4, k).unwrap() < base);
    }
}

#[test]
fn surrogate_run_keeps_invariants() {
    let cfg = SearchConfig { n_op_max: 200, ..config(20, 5, 200) };
    let out = aging_search(&template(), &cfg, &mut SurrogateEvaluator::default(), None).unwrap();
    assert_eq!(out.history.len(), 200);
    assert_eq!(out.stop, StopReason::Iterations);
    check_invariants(&out, &cfg);
}

#[test]
fn population_equal_to_budget_only_samples_random_models() {
    let cfg = config(12, 4, 12);
    let out = aging_search(&template(), &cfg, &mut SurrogateEvaluator::default(), None).unwrap();
    assert_eq!(out.history.len(), 12);
    assert!(out.history.iter().all(|r| r.parent_age.is_none()));
    check_invariants(&out, &cfg);
}

struct ConstantAlpha;

impl Evaluator for ConstantAlpha {
    fn evaluate(&mut self, spec: &NetworkSpec, _seed: u64) -> Result<Evaluation> {
        Ok(Evaluation { alpha: 0.6, eta: spec_ledger(spec)?.total() })
    }
}

#[test]
fn constant_accuracy_prefers_smallest_model() {
    let cfg = SearchConfig { fixed_k: Some(0.5), ..config(10, 3, 40) };
    let out = aging_search(&template(), &cfg, &mut ConstantAlpha, None).unwrap();
    let min_eta = out.history.iter().map(|r| r.eta).min().unwrap();
    assert_eq!(out.best_record().eta, min_eta);
    check_invariants(&out, &cfg);
}

#[test]
fn constant_accuracy_without_fixed_k_fits_zero() {
    let out = aging_search(&template(), &config(10, 3, 10), &mut ConstantAlpha, None).unwrap();
    assert!(out.baseline.k.abs() < 1e-12, "{}", out.baseline.k);
}

#[test]
fn seeded_runs_replay_byte_identically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(20, 5, 120);
    let (a, b) = (dir.path().join("a.jsonl"), dir.path().join("b.jsonl"));
    aging_search(&template(), &cfg, &mut SurrogateEvaluator::default(), Some(&a)).unwrap();
    aging_search(&template(), &cfg, &mut SurrogateEvaluator::default(), Some(&b)).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let other = SearchConfig { seed: 18, ..cfg };
    let c = dir.path().join("c.jsonl");
    aging_search(&template(), &other, &mut SurrogateEvaluator::default(), Some(&c)).unwrap();
    assert_ne!(std::fs::read(&a).unwrap(), std::fs::read(&c).unwrap());
}

#[test]
fn resume_matches_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let full = dir.path().join("full.jsonl");
    let cfg = config(20, 5, 90);
    let whole = aging_search(&template(), &cfg, &mut SurrogateEvaluator::default(), Some(&full)).unwrap();

    for cut in [7, 20, 55] {
        let part = dir.path().join(format!("part{cut}.jsonl"));
        let text = std::fs::read_to_string(&full).unwrap();
        let mut head: String = text.lines().take(cut).map(|l| format!("{l}\n")).collect();
        if cut < 20 {
            // a crash during the initial phase leaves records without ε
            head = head.lines().map(|l| l.replace(r#""epsilon":"#, r#""epsilon":null,"old":"#) + "\n").collect();
        }
        std::fs::write(&part, head).unwrap();
        let resumed = aging_search(&template(), &cfg, &mut SurrogateEvaluator::default(), Some(&part)).unwrap();
        assert_eq!(resumed.history, whole.history, "cut {cut}");
        assert_eq!(std::fs::read(&part).unwrap(), std::fs::read(&full).unwrap(), "cut {cut}");
    }
    assert_eq!(read_history(&full).unwrap(), whole.history);
}

/// Fails on every third call.
struct Flaky(usize);

impl Evaluator for Flaky {
    fn evaluate(&mut self, spec: &NetworkSpec, seed: u64) -> Result<Evaluation> {
        self.0 += 1;
        if self.0 % 3 == 0 {
            return Err(Error::Numerical("loss is NaN at step 4".into()));
        }
        SurrogateEvaluator::default().evaluate(spec, seed)
    }
}

#[test]
fn failed_evaluations_score_zero_and_search_continues() {
    let cfg = config(9, 3, 40);
    let out = aging_search(&template(), &cfg, &mut Flaky(0), None).unwrap();
    assert_eq!(out.history.len(), 40);
    let failed: Vec<_> = out.history.iter().filter(|r| r.failed()).collect();
    assert!(!failed.is_empty());
    for r in failed {
        assert_eq!((r.alpha, r.epsilon), (0.0, Some(0.0)));
        assert!(r.error.as_deref().unwrap().contains("NaN"));
    }
    check_invariants(&out, &cfg);
}

struct AlwaysFails;

impl Evaluator for AlwaysFails {
    fn evaluate(&mut self, _: &NetworkSpec, _: u64) -> Result<Evaluation> {
        Err(Error::Numerical("diverged".into()))
    }
}

#[test]
fn all_initial_failures_abort() {
    let err = aging_search(&template(), &config(5, 2, 10), &mut AlwaysFails, None).unwrap_err();
    assert!(matches!(err, Error::Search(_)));
}

#[test]
fn op_limit_stops_without_appending() {
    let cfg = SearchConfig { n_op_max: 16, n_g_init: 1, ..config(6, 2, 500) };
    let out = aging_search(&template(), &cfg, &mut SurrogateEvaluator::default(), None).unwrap();
    assert_eq!(out.stop, StopReason::OpLimit);
    assert!(out.history.len() < 500);
    check_invariants(&out, &cfg);
}

#[test]
fn config_validation() {
    let t = template();
    let mut e = SurrogateEvaluator::default();
    for bad in [config(5, 6, 10), config(5, 0, 10), config(10, 2, 5), SearchConfig { n_op_max: 2, ..config(5, 2, 10) }] {
        assert!(aging_search(&t, &bad, &mut e, None).unwrap_err().is_validation(), "{bad:?}");
    }
}
