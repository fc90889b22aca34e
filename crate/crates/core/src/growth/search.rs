use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::evaluator::{Evaluation, Evaluator};
use super::metric::{epsilon_metric, fit_k};
use crate::arch::{grow, random_model, spec_ledger, NetworkSpec, SpecTemplate};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, seeded};

/// Redraws allowed when a random initial model exceeds the op budget.
const MAX_INIT_DRAWS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    pub n_p: usize,
    pub n_s: usize,
    pub n_iter: usize,
    pub n_op_max: usize,
    pub n_g_init: usize,
    pub n_g_search: usize,
    pub n_b_search: usize,
    pub seed: u64,
    /// Use this k instead of fitting it on the initial population.
    pub fixed_k: Option<f64>,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            n_p: 100,
            n_s: 25,
            n_iter: 500,
            n_op_max: 100,
            n_g_init: 10,
            n_g_search: 1,
            n_b_search: 1,
            seed: 0,
            fixed_k: None,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_p == 0 || self.n_s == 0 || self.n_s > self.n_p {
            return Err(Error::InvalidArgument(format!("need 1 <= n_s <= n_p, got n_s={} n_p={}", self.n_s, self.n_p)));
        }
        if self.n_iter < self.n_p {
            return Err(Error::InvalidArgument(format!("n_iter {} is below n_p {}", self.n_iter, self.n_p)));
        }
        if self.n_b_search == 0 || self.n_g_search == 0 {
            return Err(Error::InvalidArgument("n_b_search and n_g_search must be positive".into()));
        }
        if let Some(k) = self.fixed_k {
            if !k.is_finite() {
                return Err(Error::InvalidArgument(format!("fixed_k {k} is not finite")));
            }
        }
        Ok(())
    }
}

/// One evaluated architecture in the search history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchRecord {
    pub age: usize,
    pub spec_hash: String,
    pub parent_hash: Option<String>,
    pub parent_age: Option<usize>,
    /// Ages of the sampled population members the parent was chosen from.
    pub sample: Vec<usize>,
    pub alpha: f64,
    pub eta: u64,
    /// `None` until k is fitted at the end of the initial phase.
    pub epsilon: Option<f64>,
    pub ops: usize,
    /// Evaluation failure message; failed records score α = 0, ε = 0.
    pub error: Option<String>,
    pub spec: NetworkSpec,
}

impl SearchRecord {
    pub fn failed(&self) -> bool {
        self.error.is_some()
    }

    pub fn epsilon_or_zero(&self) -> f64 {
        self.epsilon.unwrap_or(0.0)
    }
}

/// Normalization constants shared by every record of a search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    pub alpha_init: f64,
    pub eta_init: f64,
    pub k: f64,
}

impl Baseline {
    /// Stored ε of a record under this baseline.
    pub fn epsilon(&self, record: &SearchRecord) -> Result<f64> {
        if record.failed() {
            return Ok(0.0);
        }
        epsilon_metric(record.alpha, record.eta, self.alpha_init, self.eta_init, self.k)
    }

    /// Means over the non-failed initial records, then the k fit.
    pub fn from_initial(initial: &[SearchRecord], fixed_k: Option<f64>) -> Result<Baseline> {
        let ok: Vec<(f64, u64)> = initial.iter().filter(|r| !r.failed()).map(|r| (r.alpha, r.eta)).collect();
        if ok.is_empty() {
            return Err(Error::Search("every initial evaluation failed".into()));
        }
        let alpha_init = ok.iter().map(|m| m.0).sum::<f64>() / ok.len() as f64;
        let eta_init = ok.iter().map(|m| m.1 as f64).sum::<f64>() / ok.len() as f64;
        if !(alpha_init > 0.0) {
            return Err(Error::Search("initial population has zero mean accuracy".into()));
        }
        let k = match fixed_k {
            Some(k) => k,
            None => fit_k(&ok, alpha_init, eta_init)?,
        };
        Ok(Baseline { alpha_init, eta_init, k })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Iterations,
    OpLimit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    pub history: Vec<SearchRecord>,
    pub baseline: Baseline,
    pub stop: StopReason,
    /// Index into `history` of the highest-ε record.
    pub best: usize,
}

impl SearchOutcome {
    pub fn best_record(&self) -> &SearchRecord {
        &self.history[self.best]
    }
}

/// Aging evolution over growth-space architectures.
///
/// The initial phase evaluates `n_p` random models and fixes the baseline;
/// each later iteration samples `n_s` of the `n_p` most recent records with
/// replacement, grows the best of them, and appends the child. Stops at
/// `n_iter` records or when a child would exceed `n_op_max` ops.
///
/// With `log` set, records are persisted as JSON lines and an existing file is
/// resumed. All randomness of iteration `age` derives from `(seed, age)`, so a
/// resumed run matches an uninterrupted one.
pub fn aging_search(
    template: &SpecTemplate,
    config: &SearchConfig,
    evaluator: &mut dyn Evaluator,
    log: Option<&Path>,
) -> Result<SearchOutcome> {
    config.validate()?;
    if template.n_b * crate::arch::STACKS > config.n_op_max {
        return Err(Error::InvalidArgument(format!(
            "n_op_max {} is below the {} ops of the smallest network",
            config.n_op_max,
            template.n_b * crate::arch::STACKS
        )));
    }
    let mut history = match log {
        Some(path) if path.exists() => read_history(path)?,
        _ => Vec::new(),
    };
    for (i, r) in history.iter().enumerate() {
        if r.age != i || r.spec.template() != *template {
            return Err(Error::Format(format!("history record {i} does not belong to this search")));
        }
    }
    if let Some(path) = log {
        if !path.exists() {
            File::create(path).map_err(|e| Error::io(path, e))?;
        }
    }

    while history.len() < config.n_p {
        let age = history.len();
        let mut rng = seeded(derive_seed(config.seed, 2 * age as u64));
        let mut spec = random_model(template, config.n_g_init, &mut rng);
        let mut draws = 1;
        while spec.op_count() > config.n_op_max {
            if draws == MAX_INIT_DRAWS {
                return Err(Error::Search(format!(
                    "no random model within {} ops after {MAX_INIT_DRAWS} draws; lower n_g_init",
                    config.n_op_max
                )));
            }
            spec = random_model(template, config.n_g_init, &mut rng);
            draws += 1;
        }
        let record = evaluate_record(evaluator, spec, age, config.seed, None, Vec::new())?;
        append(log, &record)?;
        history.push(record);
    }

    let baseline = Baseline::from_initial(&history[..config.n_p], config.fixed_k)?;
    if history[..config.n_p].iter().any(|r| r.epsilon.is_none()) {
        for r in &mut history[..config.n_p] {
            r.epsilon = Some(baseline.epsilon(r)?);
        }
        if let Some(path) = log {
            rewrite(path, &history)?;
        }
    }

    let mut stop = StopReason::Iterations;
    while history.len() < config.n_iter {
        let age = history.len();
        let mut rng = seeded(derive_seed(config.seed, 2 * age as u64));
        let population = &history[age - config.n_p..];
        let sample: Vec<usize> = (0..config.n_s).map(|_| population[rng.gen_range(0..config.n_p)].age).collect();
        let parent = &history[argmax_epsilon(&history, &sample)];
        let child = grow(&parent.spec, config.n_b_search, config.n_g_search, &mut rng)?;
        if child.op_count() > config.n_op_max {
            stop = StopReason::OpLimit;
            break;
        }
        let parent_info = Some((parent.age, parent.spec_hash.clone()));
        let mut record = evaluate_record(evaluator, child, age, config.seed, parent_info, sample)?;
        record.epsilon = Some(baseline.epsilon(&record)?);
        append(log, &record)?;
        history.push(record);
    }

    let best = (0..history.len()).fold(0, |b, i| {
        if history[i].epsilon_or_zero() > history[b].epsilon_or_zero() { i } else { b }
    });
    Ok(SearchOutcome { history, baseline, stop, best })
}

/// Position in `history` of the highest-ε age in `sample`; first wins ties.
fn argmax_epsilon(history: &[SearchRecord], sample: &[usize]) -> usize {
    let mut best = sample[0];
    for &a in &sample[1..] {
        if history[a].epsilon_or_zero() > history[best].epsilon_or_zero() {
            best = a;
        }
    }
    best
}

fn evaluate_record(
    evaluator: &mut dyn Evaluator,
    spec: NetworkSpec,
    age: usize,
    seed: u64,
    parent: Option<(usize, String)>,
    sample: Vec<usize>,
) -> Result<SearchRecord> {
    let eval_seed = derive_seed(seed, 2 * age as u64 + 1);
    let (alpha, eta, error) = match evaluator.evaluate(&spec, eval_seed) {
        Ok(Evaluation { alpha, eta }) if alpha.is_finite() && eta > 0 => (alpha, eta, None),
        Ok(e) => (0.0, spec_ledger(&spec)?.total(), Some(format!("unusable evaluation {e:?}"))),
        Err(e) => (0.0, spec_ledger(&spec)?.total(), Some(e.to_string())),
    };
    let (parent_age, parent_hash) = parent.unzip();
    Ok(SearchRecord {
        age,
        spec_hash: spec.hash(),
        parent_hash,
        parent_age,
        sample,
        alpha,
        eta,
        epsilon: error.as_ref().map(|_| 0.0),
        ops: spec.op_count(),
        error,
        spec,
    })
}

fn append(log: Option<&Path>, record: &SearchRecord) -> Result<()> {
    let Some(path) = log else { return Ok(()) };
    let mut f = OpenOptions::new().append(true).open(path).map_err(|e| Error::io(path, e))?;
    writeln!(f, "{}", serde_json::to_string(record)?).map_err(|e| Error::io(path, e))
}

fn rewrite(path: &Path, history: &[SearchRecord]) -> Result<()> {
    let tmp = path.with_extension("jsonl.tmp");
    write_history(&tmp, history)?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn write_history(path: &Path, history: &[SearchRecord]) -> Result<()> {
    let mut out = String::new();
    for r in history {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_history(path: &Path) -> Result<Vec<SearchRecord>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: SearchRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Format(format!("{}:{}: {e}", path.display(), i + 1)))?;
        out.push(record);
    }
    Ok(out)
}
