//! One PASS/FAIL line per acceptance criterion. Exits non-zero if any fail.

mod common;

use std::time::{Duration, Instant};

use neuroforge::arch::{random_model, NetworkSpec, NeuronLayerSpec, SpecTemplate};
use neuroforge::growth::{
    aging_search, epsilon_metric, fit_k, SearchConfig, SearchOutcome, SurrogateEvaluator, TrainingEvaluator,
};
use neuroforge::model::Network;
use neuroforge::neuron::{coincidence, max_neuron, NeuronKind, TrainableNeuronLayer};
use neuroforge::prune::{build_resnet, build_sp_resnet, importance_l2, pruning_search, PruneConfig, ResNetSpec};
use neuroforge::rng::seeded;
use neuroforge::tensor::{Mode, ParamStore, ShiftKind, Tape};
use neuroforge::train::{
    decode_nft, encode_nft, evaluate, load_cifar10_binary, parse_cifar10_records, read_nft, scale_settings,
    synth_dataset, train_and_eval, write_nft, ScaleRefs, SynthSpec, TrainConfig,
};
use rand::Rng;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn truth_tables() -> Outcome {
    let mut rng = seeded(1);
    let mut drawn = 0;
    while drawn < 10_000 {
        let (a, b): (f32, f32) = (rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
        if a.abs() <= 0.05 || b.abs() <= 0.05 {
            continue;
        }
        drawn += 1;
        ensure!((coincidence(a, b) > 0.0) == (a > 0.0 && b > 0.0), "coincidence violates AND at ({a}, {b})");
        ensure!((max_neuron(a, b) > 0.0) == (a > 0.0 || b > 0.0), "max violates OR at ({a}, {b})");
    }
    Ok("10000 samples, 0 violations".into())
}

fn gradients() -> Outcome {
    let cases = common::primitive_cases();
    let mut worst = (0.0f64, "");
    for (i, case) in cases.iter().enumerate() {
        let e = common::run_case(case, 100, 1000 + i as u64).map_err(err)?;
        ensure!(e < common::GRAD_TOL, "{}: rel err {e:.2e}", case.name);
        if e > worst.0 {
            worst = (e, case.name);
        }
    }
    Ok(format!("{} primitives x 100 points, worst {:.2e} ({})", cases.len(), worst.0, worst.1))
}

fn trainable_layer() -> Outcome {
    let mut rng = seeded(3);
    let x = common::uniform(&mut rng, &[2, 3, 4, 4], -2.0, 2.0);
    let pure = |kind: NeuronKind| -> Vec<f64> {
        let mut tape = Tape::new();
        let v = tape.leaf(x.clone());
        let mut store = ParamStore::new();
        let layer = TrainableNeuronLayer::new(&mut store, "p", 3, ShiftKind::Conv);
        let w = store.get_mut(layer.weights).data_mut();
        let bi = NeuronKind::ALL.iter().position(|&k| k == kind).unwrap();
        for r in 0..3 {
            for c in 0..3 {
                w[r * 3 + c] = if r == bi { 10.0 } else { -10.0 };
            }
        }
        let y = layer.forward(&mut tape, &store, v).unwrap();
        tape.value(y).data().iter().map(|&v| v as f64).collect()
    };
    // pure branches from the primitive responses
    let mut tape = Tape::new();
    let v = tape.leaf(x.clone());
    let shifted = tape.shift(v, ShiftKind::Conv).map_err(err)?;
    let r = tape.relu(v);
    let co = tape.coincidence(v, shifted).map_err(err)?;
    let mx = tape.max_neuron(v, shifted).map_err(err)?;
    let mut max_dev = 0.0f64;
    for (kind, var) in [(NeuronKind::Conventional, r), (NeuronKind::Max, mx), (NeuronKind::Coincidence, co)] {
        for (a, b) in pure(kind).iter().zip(tape.value(var).data()) {
            max_dev = max_dev.max((a - *b as f64).abs());
        }
    }
    ensure!(max_dev <= 1e-6, "saturated branch deviates by {max_dev:.2e}");
    let mut store = ParamStore::new();
    let layer = TrainableNeuronLayer::new(&mut store, "z", 3, ShiftKind::Conv);
    let mut t2 = Tape::new();
    let v2 = t2.leaf(x.clone());
    let y = layer.forward(&mut t2, &store, v2).map_err(err)?;
    let mut mix_dev = 0.0f64;
    for i in 0..x.numel() {
        let want = (tape.value(r).data()[i] as f64 + tape.value(mx).data()[i] as f64 + tape.value(co).data()[i] as f64)
            / 3.0;
        mix_dev = mix_dev.max((t2.value(y).data()[i] as f64 - want).abs());
    }
    ensure!(mix_dev <= 1e-6, "zero-weight mixture deviates by {mix_dev:.2e}");
    for p in layer.branch_probabilities(&store) {
        ensure!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-9, "softmax sums to {}", p.iter().sum::<f64>());
    }
    Ok(format!("pure max dev {max_dev:.1e}, mixture max dev {mix_dev:.1e}"))
}

fn k_fit() -> Outcome {
    let k = fit_k(&[(0.9, 1)], 1.0, 2.0).map_err(err)?;
    ensure!((k - 0.15200).abs() <= 1e-4, "k = {k}");
    let at_norm = epsilon_metric(0.7, 12_345, 0.7, 12_345.0, k).map_err(err)?;
    ensure!(at_norm == 1.0, "epsilon at normalization point = {at_norm}");
    let mut rng = seeded(4);
    for _ in 0..10_000 {
        let k: f64 = rng.gen_range(0.01..2.0);
        let a: f64 = rng.gen_range(0.01..0.99);
        let e: u64 = rng.gen_range(10..10_000_000);
        let base = epsilon_metric(a, e, 0.5, 100_000.0, k).map_err(err)?;
        let up = epsilon_metric(a + rng.gen_range(1e-3..0.01), e, 0.5, 100_000.0, k).map_err(err)?;
        let bigger = epsilon_metric(a, e + rng.gen_range(1..e), 0.5, 100_000.0, k).map_err(err)?;
        ensure!(up > base, "not increasing in alpha at ({a}, {e}, {k})");
        ensure!(bigger < base, "not decreasing in eta at ({a}, {e}, {k})");
    }
    Ok(format!("k = {k:.5}"))
}

fn check_search(out: &SearchOutcome, n_p: usize, n_s: usize, n_op_max: usize) -> std::result::Result<(), String> {
    let h = &out.history;
    for (i, r) in h.iter().enumerate() {
        ensure!(r.ops <= n_op_max, "record {i} has {} ops", r.ops);
        if i < n_p {
            continue;
        }
        ensure!(r.sample.len() == n_s && r.sample.iter().all(|&a| a + n_p >= i && a < i), "record {i} sample outside population");
        let best = r.sample.iter().map(|&a| h[a].epsilon_or_zero()).fold(f64::NEG_INFINITY, f64::max);
        let parent = r.parent_age.ok_or(format!("record {i} has no parent"))?;
        ensure!(h[parent].epsilon_or_zero() == best, "record {i} parent is not the sample argmax");
    }
    Ok(())
}

fn aging_surrogate() -> Outcome {
    let template = SpecTemplate { n_f: 4, n_b: 1, num_classes: 4, input_shape: [3, 16, 16], neuron_layer: NeuronLayerSpec::Trainable };
    let cfg = SearchConfig { n_p: 20, n_s: 5, n_iter: 200, n_op_max: 100, n_g_init: 3, seed: 11, ..SearchConfig::default() };
    let run = || aging_search(&template, &cfg, &mut SurrogateEvaluator::default(), None).map_err(err);
    let a = run()?;
    check_search(&a, 20, 5, 100)?;
    let b = run()?;
    let text = |o: &SearchOutcome| serde_json::to_string(&o.history).unwrap();
    ensure!(text(&a) == text(&b), "replay differs");
    Ok(format!("{} records, stop {:?}", a.history.len(), a.stop))
}

fn growth_invariants() -> Outcome {
    let mut rng = seeded(6);
    for _ in 0..1000 {
        let width = rng.gen_range(1..40);
        let mut g = neuroforge::arch::BlockGraph::single(width, neuroforge::arch::OpKind::random(&mut rng));
        for _ in 0..rng.gen_range(1..25) {
            let next = g.grow_random(&mut rng);
            next.validate().map_err(err)?;
            ensure!(next.op_count() > g.op_count(), "op count did not increase");
            g = next;
        }
    }
    use neuroforge::arch::{BlockGraph, Growth, OpKind};
    let mut g = BlockGraph::single(16, OpKind::Conv3x3);
    g = g.splitting(0, &mut rng).map_err(err)?;
    g = g.splitting(0, &mut rng).map_err(err)?;
    g.edges[1].op = OpKind::Conv3x3;
    g.edges[2].op = OpKind::Conv5x5;
    let mut deepest = 0;
    for _ in 0..3 {
        let next = g.grow_at(Growth::Branching, deepest, &mut rng).map_err(err)?.0;
        deepest = g.edges.len();
        g = next;
    }
    for e in g.edges.iter_mut().skip(3) {
        e.op = OpKind::Conv1x1;
    }
    ensure!(g.height() == 4 && g.width_stat() == 3.0, "example block H={} W={}", g.height(), g.width_stat());
    Ok("1000 sequences valid; example H=4, W=3".into())
}

fn param_ledger() -> Outcome {
    let spec = |n_b, n_f| ResNetSpec::baseline(n_b, n_f, 10, [3, 32, 32]);
    let total = |n_b, n_f| spec(n_b, n_f).ledger().map(|l| l.total()).map_err(err);
    let conv = |n_b, n_f| spec(n_b, n_f).ledger().map(|l| l.conv_total()).map_err(err);
    let delta = conv(4, 48)? - conv(3, 48)?;
    ensure!(delta == 870_912, "4-48 minus 3-48 conv = {delta}");
    let reference_delta = 2.99e6 - 2.12e6;
    ensure!((delta as f64 / reference_delta - 1.0).abs() < 0.10, "delta {delta} vs reference {reference_delta}");
    let ratio = total(3, 32)? as f64 / total(3, 48)? as f64;
    ensure!((ratio / (32.0f64 / 48.0).powi(2) - 1.0).abs() < 0.10, "3-32/3-48 ratio {ratio}");
    let mut rel = Vec::new();
    for (n_f, reference) in [(32, 943e3), (48, 2.12e6), (64, 3.77e6)] {
        let r = total(3, n_f)? as f64 / reference - 1.0;
        ensure!(r.abs() <= 0.30, "3-{n_f}: {} vs {reference}", total(3, n_f)?);
        rel.push(format!("3-{n_f} {:+.1}%", 100.0 * r));
    }
    Ok(format!("delta 870912, ratio {ratio:.3}, {}", rel.join(", ")))
}

fn sp_structure() -> Outcome {
    let base = ResNetSpec::baseline(3, 48, 10, [3, 32, 32]);
    let sp = build_sp_resnet(&base).map_err(err)?;
    ensure!(sp.conv_layers_per_stack() == [6, 8, 4], "layers {:?}", sp.conv_layers_per_stack());
    ensure!(sp.stack_filters == [48, 96, 144], "widths {:?}", sp.stack_filters);
    let count = |s: usize, k: usize| sp.stack_kernels(s).map(|v| v.iter().filter(|&&x| x == k).count());
    let ops: Vec<[usize; 4]> = (0..3)
        .map(|s| Ok([count(s, 1)?, count(s, 3)?, count(s, 5)?, count(s, 7)?]))
        .collect::<neuroforge::Result<_>>()
        .map_err(err)?;
    ensure!(ops == [[1, 3, 1, 1], [2, 4, 1, 1], [1, 3, 0, 0]], "op counts {ops:?}");
    let net = build_resnet(&sp, 0).map_err(err)?;
    ensure!(net.neurons(0).kind_counts() == [22, 19, 7], "stack-1 neurons {:?}", net.neurons(0).kind_counts());
    let ratio = sp.ledger().map_err(err)?.total() as f64 / base.ledger().map_err(err)?.total() as f64;
    ensure!(ratio <= 0.80, "SP/baseline = {ratio:.3}");
    Ok(format!("SP/baseline = {ratio:.3}"))
}

fn desk_pruning() -> Outcome {
    let ds = synth_dataset(&SynthSpec { num_classes: 4, examples: 800, size: 16, channels: 3, difficulty: 0.93, seed: 21 })
        .map_err(err)?;
    let mut net = build_resnet(&ResNetSpec::baseline(1, 6, 4, [3, 16, 16]), 21).map_err(err)?;
    let train = TrainConfig { steps: 300, batch_size: 32, seed: 21, ..TrainConfig::default() };
    train_and_eval(&mut net, &ds, &train).map_err(err)?;
    let cfg = PruneConfig { n_iter: 30, steps_per_epoch: Some(10), train, seed: 21, ..PruneConfig::default() };
    let mut out = pruning_search(net, &ds, &cfg).map_err(err)?;
    let accepted: Vec<_> = out.history.iter().filter(|r| r.accepted).collect();
    let mut last = u64::MAX;
    for r in &accepted {
        ensure!(r.event.eta_after < r.event.eta_before && r.event.eta_before <= last, "eta not strictly decreasing at {}", r.iteration);
        last = r.event.eta_after;
    }
    for r in &accepted {
        let phi = importance_l2(&out.network, r.event.neuron).map_err(err)?;
        ensure!(phi == 0.0, "pruned neuron {:?} has phi {phi}", r.event.neuron);
    }
    let (x, _) = ds.batch(&ds.eval_indices()[..32]);
    let mut tape = Tape::new();
    let input = tape.leaf(x);
    let (_, taps) = out.network.forward_with_taps(&mut tape, input, Mode::Train).map_err(err)?;
    for r in &accepted {
        let id = r.event.neuron;
        let t = tape.value(taps[id.layer]);
        let (c, plane) = (t.shape()[1], t.shape()[2] * t.shape()[3]);
        for n in 0..t.shape()[0] {
            let s = &t.data()[(n * c + id.channel) * plane..(n * c + id.channel + 1) * plane];
            ensure!(s.iter().all(|&v| v == 0.0), "pruned channel {id:?} produces output");
        }
    }
    let alpha = evaluate(&mut out.network, &ds).map_err(err)?;
    ensure!(alpha >= out.alpha0 - 0.02, "accuracy {alpha} below {} - 0.02", out.alpha0);
    Ok(format!(
        "{} pruned, stop {:?}, alpha0 {:.3} -> {:.3}, eta {}",
        accepted.len(),
        out.stop,
        out.alpha0,
        alpha,
        out.network.eta()
    ))
}

fn desk_growth() -> Outcome {
    let ds = synth_dataset(&SynthSpec { num_classes: 4, examples: 2000, size: 16, channels: 3, difficulty: 0.9, seed: 31 })
        .map_err(err)?;
    let n_f = scale_settings(ds.len(), 3, &ScaleRefs::default(), true).map_err(err)?.n_f;
    let template = SpecTemplate { n_f, n_b: 1, num_classes: 4, input_shape: [3, 16, 16], neuron_layer: NeuronLayerSpec::Trainable };
    let cfg = SearchConfig { n_p: 8, n_s: 3, n_iter: 30, n_g_init: 3, seed: 31, ..SearchConfig::default() };
    let train = TrainConfig { steps: 300, batch_size: 32, seed: 31, ..TrainConfig::default() };
    let mut eval = TrainingEvaluator { dataset: &ds, config: train };
    let out = aging_search(&template, &cfg, &mut eval, None).map_err(err)?;
    check_search(&out, cfg.n_p, cfg.n_s, cfg.n_op_max)?;
    let best = out.best_record();
    ensure!(!best.failed(), "best record failed");
    NetworkSpec::from_json(&best.spec.to_canonical_json()).map_err(err)?;
    let initial: Vec<f64> = out.history[..cfg.n_p].iter().map(|r| r.epsilon_or_zero()).collect();
    let mean = initial.iter().sum::<f64>() / initial.len() as f64;
    let eps = best.epsilon_or_zero();
    ensure!(eps >= mean, "best epsilon {eps} < initial mean {mean}");
    Ok(format!("n_f {n_f}, k {:.3}, best eps {eps:.3} (age {}) vs initial mean {mean:.3}", out.baseline.k, best.age))
}

fn scaling_rules() -> Outcome {
    // (name, N_DS, channels, channel factor, N_F, N_S)
    let rows = [
        ("CIFAR-10", 50_000, 3, true, 16, 3900),
        ("CIFAR-100", 50_000, 3, true, 16, 3900),
        ("EMNIST", 700_000, 1, true, 19, 14_600),
        ("CROHME", 300_000, 1, true, 13, 9600),
        ("Paintings", 7000, 3, true, 6, 1400),
        ("Wikiart", 64_000, 3, true, 18, 4400),
        ("Commands", 85_000, 1, false, 20, 5000),
        ("Vocalset", 3500, 1, false, 4, 1000),
        ("ESC", 2000, 1, false, 4, 800),
        ("Urbansound", 8000, 1, false, 6, 1600),
        ("GTZAN", 1000, 1, false, 3, 500),
        ("FMA", 25_000, 1, false, 12, 2700),
    ];
    let mut bad = Vec::new();
    for (name, n_ds, c, factor, n_f, n_s) in rows {
        let s = scale_settings(n_ds, c, &ScaleRefs::default(), factor).map_err(err)?;
        if s.n_f.abs_diff(n_f) > 1 {
            bad.push(format!("{name} N_F {} vs {n_f}", s.n_f));
        }
        let rel = (s.n_s as f64 / n_s as f64 - 1.0).abs();
        if rel > 0.05 {
            bad.push(format!("{name} N_S {} vs {n_s} ({:.1}%)", s.n_s, 100.0 * rel));
        }
    }
    ensure!(bad.is_empty(), "{}", bad.join("; "));
    Ok("12 rows".into())
}

fn round_trips() -> Outcome {
    let template = SpecTemplate { n_f: 12, n_b: 3, num_classes: 10, input_shape: [3, 32, 32], neuron_layer: NeuronLayerSpec::Trainable };
    let spec = random_model(&template, 8, &mut seeded(12));
    let text = spec.to_canonical_json();
    let again = NetworkSpec::from_json(&text).map_err(err)?.to_canonical_json();
    ensure!(again == text, "spec JSON differs after round trip");
    let dir = tempfile::tempdir().map_err(err)?;
    let t = common::uniform(&mut seeded(13), &[3, 2, 5, 4], -1e3, 1e3);
    let (a, b) = (dir.path().join("a.nft"), dir.path().join("b.nft"));
    write_nft(&a, &t).map_err(err)?;
    write_nft(&b, &read_nft(&a).map_err(err)?).map_err(err)?;
    ensure!(std::fs::read(&a).map_err(err)? == std::fs::read(&b).map_err(err)?, "NFT1 bytes differ");
    ensure!(decode_nft(&encode_nft(&t)[..10]).is_err(), "truncated NFT1 accepted");
    ensure!(parse_cifar10_records(&[0u8; 3072]).is_err(), "short CIFAR record accepted");
    let mut bad_label = vec![10u8];
    bad_label.extend([0u8; 3072]);
    ensure!(parse_cifar10_records(&bad_label).is_err(), "label 10 accepted");
    let mut bytes = Vec::new();
    for (label, rgb) in [(3u8, [0u8, 100, 7]), (9, [255, 200, 7])] {
        bytes.push(label);
        for v in rgb {
            bytes.extend(std::iter::repeat(v).take(1024));
        }
    }
    let (x, labels) = parse_cifar10_records(&bytes).map_err(err)?;
    ensure!(labels == [3, 9] && x.shape() == [2, 3, 32, 32], "labels {labels:?} shape {:?}", x.shape());
    ensure!(x.data()[1024] == 100.0 / 255.0 && x.data()[3072] == 1.0, "pixel scaling");
    let path = dir.path().join("two.bin");
    std::fs::write(&path, &bytes).map_err(err)?;
    let ds = load_cifar10_binary(&path).map_err(err)?;
    // per-channel standardization over two images: R {0, 255} -> {-1, 1}
    let v = ds.features().data();
    ensure!((v[0] + 1.0).abs() < 1e-6 && (v[3072] - 1.0).abs() < 1e-6, "R channel standardized to {} / {}", v[0], v[3072]);
    ensure!(v[2048] == 0.0, "constant B channel standardized to {}", v[2048]);
    Ok("spec JSON, NFT1, CIFAR-10".into())
}

fn main() {
    let criteria: [(&str, fn() -> Outcome, Option<u64>); 12] = [
        ("neuron truth tables", truth_tables, Some(1)),
        ("gradient checks", gradients, Some(30)),
        ("trainable neuron layer", trainable_layer, None),
        ("k fit and epsilon", k_fit, None),
        ("aging evolution (surrogate)", aging_surrogate, Some(10)),
        ("growth procedures", growth_invariants, None),
        ("parameter ledger", param_ledger, None),
        ("SP-ResNet structure", sp_structure, None),
        ("desk-scale pruning", desk_pruning, Some(300)),
        ("desk-scale growth search", desk_growth, Some(900)),
        ("scaling rules", scaling_rules, None),
        ("format round trips", round_trips, None),
    ];
    let filter: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (i, (name, run, limit)) in criteria.iter().enumerate() {
        let id = i + 1;
        if !filter.is_empty() && !filter.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let mut result = run();
        let took = start.elapsed();
        if let (Ok(_), Some(secs)) = (&result, limit) {
            if took > Duration::from_secs(*secs) {
                result = Err(format!("took {:.1}s, limit {secs}s", took.as_secs_f64()));
            }
        }
        match result {
            Ok(detail) => println!("PASS {id:>2} {name}: {detail} [{:.1}s]", took.as_secs_f64()),
            Err(why) => {
                failed += 1;
                println!("FAIL {id:>2} {name}: {why} [{:.1}s]", took.as_secs_f64());
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
