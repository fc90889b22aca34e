use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::Context;
use neuroforge::analysis::{growth_report, neural_csv, ops_csv, structure_csv, AnalysisReport};
use neuroforge::arch::{materialize, spec_ledger, NeuronLayerSpec, SpecTemplate};
use neuroforge::growth::{aging_search, read_history, SearchConfig, TrainingEvaluator};
use neuroforge::model::{Network, ParamLedger};
use neuroforge::prune::{
    build_resnet, build_sp_resnet, neural_composition, pruning_search, write_prune_history, LayerSite, PruneConfig,
    PruneStop, ResNetSpec,
};
use neuroforge::train::{scale_settings, train_and_eval, ScaleRefs, TrainConfig, TrainReport};
use serde::{Deserialize, Serialize};

use crate::io::{self, ArchFile, RunManifest};
use crate::{Command, Preset};

#[derive(Debug)]
pub enum CliError {
    Validation { flag: String, message: String },
    Runtime(anyhow::Error),
}

impl CliError {
    pub fn validation(flag: &str, message: impl Into<String>) -> Self {
        CliError::Validation { flag: flag.to_owned(), message: message.into() }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation { .. } => 1,
            CliError::Runtime(_) => 2,
        }
    }

    /// Library errors caused by bad input are blamed on `flag`.
    fn from_core(flag: &str, e: neuroforge::Error) -> Self {
        if e.is_validation() {
            CliError::validation(flag, e.to_string())
        } else {
            CliError::Runtime(e.into())
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation { flag, message } => write!(f, "invalid {flag}: {message}"),
            CliError::Runtime(e) => write!(f, "{e:#}"),
        }
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Runtime(e)
    }
}

type CliResult<T = ()> = Result<T, CliError>;

pub fn run(command: Command) -> CliResult {
    match command {
        Command::GrowSearch { dataset, config, out } => grow_search(&dataset, &config, &out),
        Command::PruneSearch { dataset, config, out } => prune_search(&dataset, &config, &out),
        Command::Train { arch, dataset, config, out } => train(&arch, &dataset, &config, &out),
        Command::Build { preset, nb, nf, classes, input_shape, out } => build(preset, nb, nf, classes, input_shape, &out),
        Command::Analyze { history, out, top } => analyze(&history, &out, top),
        Command::Scale { n_ds, c_ds, no_channel_factor } => scale(n_ds, c_ds, !no_channel_factor),
        Command::Params { arch } => params(&arch),
    }
}

fn default_n_b() -> usize {
    3
}

fn default_neuron_layer() -> NeuronLayerSpec {
    NeuronLayerSpec::Trainable
}

/// `grow-search` configuration file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GrowConfig {
    /// Base filter count; derived from the dataset size when absent.
    #[serde(default)]
    n_f: Option<usize>,
    #[serde(default = "default_n_b")]
    n_b: usize,
    #[serde(default = "default_neuron_layer")]
    neuron_layer: NeuronLayerSpec,
    #[serde(default)]
    search: SearchConfig,
    #[serde(default)]
    train: TrainConfig,
}

fn grow_search(dataset: &Path, config: &Path, out: &Path) -> CliResult {
    let mut cfg: GrowConfig = io::read_json(config, "--config")?;
    if let Some(seed) = io::seed_override()? {
        cfg.search.seed = seed;
        cfg.train.seed = seed;
    }
    let ds = io::load_dataset(dataset, cfg.search.seed)?;
    let n_f = match cfg.n_f {
        Some(n) => n,
        None => {
            let [c, _, _] = ds.example_shape();
            scale_settings(ds.train_indices().len(), c, &ScaleRefs::default(), true)
                .map_err(|e| CliError::from_core("--dataset", e))?
                .n_f
        }
    };
    cfg.n_f = Some(n_f);
    let template = SpecTemplate {
        n_f,
        n_b: cfg.n_b,
        num_classes: ds.num_classes(),
        input_shape: ds.example_shape(),
        neuron_layer: cfg.neuron_layer,
    };
    io::ensure_dir(out)?;
    let manifest = RunManifest::start(
        "grow-search",
        serde_json::to_value(&cfg).context("config snapshot")?,
        Some(cfg.search.seed),
        vec![dataset.into(), config.into()],
    );
    let mut evaluator = TrainingEvaluator { dataset: &ds, config: cfg.train.clone() };
    let outcome = aging_search(&template, &cfg.search, &mut evaluator, Some(&out.join("history.jsonl")))
        .map_err(|e| CliError::from_core("--config", e))?;
    let best = outcome.best_record();
    io::write_text(&out.join("best_spec.json"), &(best.spec.to_canonical_json() + "\n"))?;
    #[derive(Serialize)]
    struct Summary<'a> {
        records: usize,
        stop: neuroforge::growth::StopReason,
        baseline: neuroforge::growth::Baseline,
        best_age: usize,
        best_hash: &'a str,
        best_alpha: f64,
        best_eta: u64,
        best_epsilon: f64,
    }
    io::write_json(
        &out.join("summary.json"),
        &Summary {
            records: outcome.history.len(),
            stop: outcome.stop,
            baseline: outcome.baseline,
            best_age: best.age,
            best_hash: &best.spec_hash,
            best_alpha: best.alpha,
            best_eta: best.eta,
            best_epsilon: best.epsilon_or_zero(),
        },
    )?;
    println!(
        "{} records, best age {} (alpha={:.4} eta={} epsilon={:.4})",
        outcome.history.len(),
        best.age,
        best.alpha,
        best.eta,
        best.epsilon_or_zero()
    );
    manifest.finish(out, &["history.jsonl", "best_spec.json", "summary.json"])?;
    Ok(())
}

fn default_preset() -> String {
    "resnet".into()
}

fn default_n_f() -> usize {
    48
}

/// `prune-search` configuration file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PruneCliConfig {
    /// `resnet` or `sp-resnet`; ignored when `arch` is given.
    #[serde(default = "default_preset")]
    preset: String,
    #[serde(default = "default_n_b")]
    n_b: usize,
    #[serde(default = "default_n_f")]
    n_f: usize,
    /// Residual network architecture file.
    #[serde(default)]
    arch: Option<PathBuf>,
    /// Training of the network before pruning.
    #[serde(default)]
    train: TrainConfig,
    #[serde(default)]
    prune: PruneConfig,
}

#[derive(Debug, Serialize)]
struct PrunedLayer {
    site: LayerSite,
    kinds: [usize; 3],
    pruned: Vec<usize>,
}

#[derive(Debug, Serialize)]
struct PruneState {
    spec: ResNetSpec,
    alpha0: f64,
    eta0: u64,
    alpha: f64,
    eta: u64,
    stop: PruneStop,
    iterations: usize,
    /// Per-stack φ share of (conventional, max, coincidence).
    composition: Vec<[f64; 3]>,
    layers: Vec<PrunedLayer>,
}

fn prune_search(dataset: &Path, config: &Path, out: &Path) -> CliResult {
    let mut cfg: PruneCliConfig = io::read_json(config, "--config")?;
    if let Some(seed) = io::seed_override()? {
        cfg.train.seed = seed;
        cfg.prune.seed = seed;
    }
    let ds = io::load_dataset(dataset, cfg.train.seed)?;
    let spec = match &cfg.arch {
        Some(path) => match io::read_arch(path)? {
            ArchFile::ResNet(s) => s,
            ArchFile::Growth(_) => {
                return Err(CliError::validation("--config", "`arch` must be a residual network file"));
            }
        },
        None => {
            let base = ResNetSpec::baseline(cfg.n_b, cfg.n_f, ds.num_classes(), ds.example_shape());
            match cfg.preset.as_str() {
                "resnet" => base,
                "sp-resnet" => build_sp_resnet(&base).map_err(|e| CliError::from_core("--config", e))?,
                other => return Err(CliError::validation("--config", format!("unknown preset `{other}`"))),
            }
        }
    };
    check_shape(&ds, spec.input_shape, spec.num_classes)?;
    io::ensure_dir(out)?;
    let manifest = RunManifest::start(
        "prune-search",
        serde_json::to_value(&cfg).context("config snapshot")?,
        Some(cfg.prune.seed),
        vec![dataset.into(), config.into()],
    );
    let mut net = build_resnet(&spec, cfg.train.seed).map_err(|e| CliError::from_core("--config", e))?;
    let eta0 = net.eta();
    train_and_eval(&mut net, &ds, &cfg.train).map_err(|e| CliError::from_core("--config", e))?;
    let outcome = pruning_search(net, &ds, &cfg.prune).map_err(|e| CliError::from_core("--config", e))?;
    write_prune_history(&out.join("prune_history.csv"), &outcome.history).map_err(|e| CliError::Runtime(e.into()))?;
    let net = &outcome.network;
    let composition = neural_composition(net).map_err(|e| CliError::Runtime(e.into()))?;
    let layers = (0..net.layer_count())
        .map(|l| PrunedLayer {
            site: net.site(l),
            kinds: net.neurons(l).kind_counts(),
            pruned: net.neurons(l).pruned_mask().iter().enumerate().filter(|(_, &p)| p).map(|(c, _)| c).collect(),
        })
        .collect();
    let state = PruneState {
        spec,
        alpha0: outcome.alpha0,
        eta0,
        alpha: outcome.alpha,
        eta: net.eta(),
        stop: outcome.stop,
        iterations: outcome.history.last().map_or(0, |r| r.iteration + 1),
        composition,
        layers,
    };
    io::write_json(&out.join("prune_state.json"), &state)?;
    println!(
        "alpha0={:.4} alpha={:.4} eta {} -> {} ({:?})",
        state.alpha0, state.alpha, state.eta0, state.eta, state.stop
    );
    manifest.finish(out, &["prune_history.csv", "prune_state.json"])?;
    Ok(())
}

fn check_shape(ds: &neuroforge::train::Dataset, input_shape: [usize; 3], classes: usize) -> CliResult {
    if ds.example_shape() != input_shape || ds.num_classes() > classes {
        return Err(CliError::validation(
            "--arch",
            format!(
                "architecture expects {input_shape:?} inputs and {classes} classes, dataset has {:?} and {}",
                ds.example_shape(),
                ds.num_classes()
            ),
        ));
    }
    Ok(())
}

fn train(arch: &Path, dataset: &Path, config: &Path, out: &Path) -> CliResult {
    let mut cfg: TrainConfig = io::read_json(config, "--config")?;
    if let Some(seed) = io::seed_override()? {
        cfg.seed = seed;
    }
    let arch_file = io::read_arch(arch)?;
    let ds = io::load_dataset(dataset, cfg.seed)?;
    io::ensure_dir(out)?;
    let manifest = RunManifest::start(
        "train",
        serde_json::to_value(&cfg).context("config snapshot")?,
        Some(cfg.seed),
        vec![arch.into(), dataset.into(), config.into()],
    );
    let report: TrainReport = match arch_file {
        ArchFile::Growth(spec) => {
            check_shape(&ds, spec.input_shape, spec.num_classes)?;
            let mut net = materialize(&spec, cfg.seed).map_err(|e| CliError::from_core("--arch", e))?;
            train_and_eval(&mut net, &ds, &cfg).map_err(|e| CliError::from_core("--config", e))?
        }
        ArchFile::ResNet(spec) => {
            check_shape(&ds, spec.input_shape, spec.num_classes)?;
            let mut net = build_resnet(&spec, cfg.seed).map_err(|e| CliError::from_core("--arch", e))?;
            train_and_eval(&mut net, &ds, &cfg).map_err(|e| CliError::from_core("--config", e))?
        }
    };
    io::write_json(&out.join("report.json"), &report)?;
    println!("alpha={:.4} eta={}", report.alpha, report.eta);
    manifest.finish(out, &["report.json"])?;
    Ok(())
}

fn build(preset: Preset, nb: usize, nf: usize, classes: usize, input_shape: [usize; 3], out: &Path) -> CliResult {
    if nb == 0 {
        return Err(CliError::validation("--nb", "must be positive"));
    }
    if nf == 0 {
        return Err(CliError::validation("--nf", "must be positive"));
    }
    if classes == 0 {
        return Err(CliError::validation("--classes", "must be positive"));
    }
    let base = ResNetSpec::baseline(nb, nf, classes, input_shape);
    let spec = match preset {
        Preset::Resnet => base,
        Preset::SpResnet => {
            if nb != 3 {
                return Err(CliError::validation("--nb", "sp-resnet derives from the 3-block baseline"));
            }
            if nf != 48 {
                return Err(CliError::validation("--nf", "sp-resnet derives from the 48-filter baseline"));
            }
            build_sp_resnet(&base).map_err(|e| CliError::from_core("--preset", e))?
        }
    };
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)
            .map_err(|e| CliError::validation("--out", format!("cannot create {}: {e}", parent.display())))?;
    }
    io::write_json(out, &spec)?;
    Ok(())
}

#[derive(Serialize)]
struct AnalysisOutput {
    growth: Option<AnalysisReport>,
    /// Per-stack φ share of (conventional, max, coincidence) after pruning.
    neural: Option<Vec<[f64; 3]>>,
}

fn analyze(history: &Path, out: &Path, top: usize) -> CliResult {
    if top == 0 {
        return Err(CliError::validation("--top", "must be positive"));
    }
    if !history.is_dir() {
        return Err(CliError::validation("--history", format!("{} is not a directory", history.display())));
    }
    let growth_path = history.join("history.jsonl");
    let prune_path = history.join("prune_state.json");
    if !growth_path.exists() && !prune_path.exists() {
        return Err(CliError::validation(
            "--history",
            format!("{} holds neither history.jsonl nor prune_state.json", history.display()),
        ));
    }
    io::ensure_dir(out)?;
    let manifest = RunManifest::start(
        "analyze",
        serde_json::json!({ "top": top }),
        None,
        vec![history.into()],
    );
    let mut outputs = vec!["analysis.json"];
    let growth = if growth_path.exists() {
        let records = read_history(&growth_path).map_err(|e| CliError::validation("--history", e.to_string()))?;
        let report = growth_report(&records, top);
        io::write_text(&out.join("structure.csv"), &structure_csv(&report.stacks))?;
        io::write_text(&out.join("ops.csv"), &ops_csv(&report.stacks))?;
        outputs.extend(["structure.csv", "ops.csv"]);
        Some(report)
    } else {
        None
    };
    let neural = if prune_path.exists() {
        #[derive(Deserialize)]
        struct Composition {
            composition: Vec<[f64; 3]>,
        }
        let state: Composition = io::read_json(&prune_path, "--history")?;
        io::write_text(&out.join("neural.csv"), &neural_csv(&state.composition))?;
        outputs.push("neural.csv");
        Some(state.composition)
    } else {
        None
    };
    io::write_json(&out.join("analysis.json"), &AnalysisOutput { growth, neural })?;
    manifest.finish(out, &outputs)?;
    Ok(())
}

fn scale(n_ds: usize, c_ds: usize, channel_factor: bool) -> CliResult {
    if n_ds == 0 {
        return Err(CliError::validation("--n-ds", "must be positive"));
    }
    if c_ds == 0 {
        return Err(CliError::validation("--c-ds", "must be positive"));
    }
    let s = scale_settings(n_ds, c_ds, &ScaleRefs::default(), channel_factor)
        .map_err(|e| CliError::from_core("--n-ds", e))?;
    println!("N_F={} N_S={}", s.n_f, s.n_s);
    Ok(())
}

fn params(arch: &Path) -> CliResult {
    let (ledger, per_stack): (ParamLedger, Option<[usize; 3]>) = match io::read_arch(arch)? {
        ArchFile::Growth(spec) => (spec_ledger(&spec).map_err(|e| CliError::from_core("--arch", e))?, None),
        ArchFile::ResNet(spec) => (
            spec.ledger().map_err(|e| CliError::from_core("--arch", e))?,
            Some(spec.conv_layers_per_stack()),
        ),
    };
    let mut text = String::new();
    for item in &ledger.items {
        let kind = serde_json::to_value(item.kind).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default();
        text.push_str(&format!("{}\t{}\t{}\n", item.name, kind, item.count));
    }
    text.push_str(&format!("eta\t{}\n", ledger.total()));
    if let Some(c) = per_stack {
        text.push_str(&format!("conv_layers_per_stack\t{} {} {}\n", c[0], c[1], c[2]));
    }
    print!("{text}");
    Ok(())
}
