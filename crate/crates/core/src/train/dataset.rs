use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::seeded;
use crate::tensor::Tensor;

/// Labelled image-like examples with a train/eval split.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    features: Tensor,
    labels: Vec<u32>,
    num_classes: usize,
    train: Vec<usize>,
    eval: Vec<usize>,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        features: Tensor,
        labels: Vec<u32>,
        num_classes: usize,
        train: Vec<usize>,
        eval: Vec<usize>,
    ) -> Result<Self> {
        let (n, _, _, _) = features.dims4()?;
        if labels.len() != n {
            return Err(Error::InvalidArgument(format!("{n} examples but {} labels", labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= num_classes) {
            return Err(Error::InvalidArgument(format!("label {bad} outside 0..{num_classes}")));
        }
        let mut seen = vec![0u8; n];
        for &i in &train {
            if i >= n {
                return Err(Error::InvalidArgument(format!("train index {i} out of range")));
            }
            seen[i] |= 1;
        }
        for &i in &eval {
            if i >= n {
                return Err(Error::InvalidArgument(format!("eval index {i} out of range")));
            }
            if seen[i] & 1 != 0 {
                return Err(Error::InvalidArgument(format!("example {i} is in both splits")));
            }
        }
        Ok(Dataset {
            name: name.into(),
            features,
            labels,
            num_classes,
            train,
            eval,
        })
    }

    /// Random 80-20 train/eval split.
    pub fn with_random_split(
        name: impl Into<String>,
        features: Tensor,
        labels: Vec<u32>,
        num_classes: usize,
        seed: u64,
    ) -> Result<Self> {
        let n = labels.len();
        let (train, eval) = split_80_20(n, seed);
        Self::new(name, features, labels, num_classes, train, eval)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// `[channels, height, width]` of one example.
    pub fn example_shape(&self) -> [usize; 3] {
        let s = self.features.shape();
        [s[1], s[2], s[3]]
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn train_indices(&self) -> &[usize] {
        &self.train
    }

    pub fn eval_indices(&self) -> &[usize] {
        &self.eval
    }

    /// Gather examples into a `[B, C, H, W]` batch and their labels.
    pub fn batch(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        let [c, h, w] = self.example_shape();
        let per = c * h * w;
        let src = self.features.data();
        let mut data = Vec::with_capacity(indices.len() * per);
        for &i in indices {
            data.extend_from_slice(&src[i * per..(i + 1) * per]);
        }
        let labels = indices.iter().map(|&i| self.labels[i] as usize).collect();
        (Tensor::new(vec![indices.len(), c, h, w], data).expect("sized"), labels)
    }

    /// Multi-channel data: per-channel zero mean, unit variance using
    /// training-split statistics. Single-channel data: min-max scaled to
    /// `[0, 1]` using the training split.
    pub fn standardize(&mut self) {
        let [c, h, w] = self.example_shape();
        let plane = h * w;
        let stats_idx: Vec<usize> = if self.train.is_empty() {
            (0..self.len()).collect()
        } else {
            self.train.clone()
        };
        let data = self.features.data_mut();
        for ch in 0..c {
            let plane_of = |i: usize| (i * c + ch) * plane;
            if c == 1 {
                let (mut lo, mut hi) = (f32::INFINITY, f32::NEG_INFINITY);
                for &i in &stats_idx {
                    for &v in &data[plane_of(i)..plane_of(i) + plane] {
                        lo = lo.min(v);
                        hi = hi.max(v);
                    }
                }
                let span = if hi > lo { (hi - lo) as f64 } else { 1.0 };
                for v in data.iter_mut() {
                    *v = ((*v - lo) as f64 / span) as f32;
                }
            } else {
                let m = (stats_idx.len() * plane) as f64;
                let mut sum = 0.0f64;
                for &i in &stats_idx {
                    sum += data[plane_of(i)..plane_of(i) + plane].iter().map(|&v| v as f64).sum::<f64>();
                }
                let mean = sum / m;
                let mut ss = 0.0f64;
                for &i in &stats_idx {
                    ss += data[plane_of(i)..plane_of(i) + plane]
                        .iter()
                        .map(|&v| (v as f64 - mean).powi(2))
                        .sum::<f64>();
                }
                let std = (ss / m).sqrt();
                let std = if std > 0.0 { std } else { 1.0 };
                let n = data.len() / (c * plane);
                for i in 0..n {
                    for v in &mut data[plane_of(i)..plane_of(i) + plane] {
                        *v = ((*v as f64 - mean) / std) as f32;
                    }
                }
            }
        }
    }
}

pub(crate) fn split_80_20(n: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seeded(seed));
    let n_train = (0.8 * n as f64).round() as usize;
    let eval = idx.split_off(n_train);
    (idx, eval)
}

/// Parameters of a synthetic classification dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub num_classes: usize,
    pub examples: usize,
    /// Spatial extent D of the D×D examples.
    pub size: usize,
    pub channels: usize,
    /// 0 = well separated classes, 1 = no class signal.
    pub difficulty: f64,
    pub seed: u64,
}

/// Class-conditional textured patterns.
///
/// Each class owns a per-channel mean offset and an oriented sinusoidal
/// texture. Every example draws a random texture phase and i.i.d. Gaussian
/// pixel noise; `difficulty` scales the class signal by `1 − difficulty`.
pub fn synth_dataset(spec: &SynthSpec) -> Result<Dataset> {
    let SynthSpec { num_classes, examples, size, channels, difficulty, seed } = *spec;
    if num_classes < 2 || examples == 0 || size == 0 || channels == 0 {
        return Err(Error::InvalidArgument(format!("invalid synthetic dataset parameters {spec:?}")));
    }
    if !(0.0..=1.0).contains(&difficulty) {
        return Err(Error::InvalidArgument(format!("difficulty {difficulty} outside [0, 1]")));
    }
    let mut rng = seeded(seed);
    let signal = 1.0 - difficulty;
    const NOISE: f64 = 0.5;
    struct Class {
        offsets: Vec<f64>,
        angle: f64,
        freq: f64,
    }
    let classes: Vec<Class> = (0..num_classes)
        .map(|k| Class {
            offsets: (0..channels).map(|_| 1.5 * rng.sample::<f64, _>(StandardNormal)).collect(),
            angle: std::f64::consts::PI * k as f64 / num_classes as f64 + rng.gen_range(-0.1..0.1),
            freq: 1.0 + (k % 3) as f64 + rng.gen_range(0.0..0.5),
        })
        .collect();
    let per = channels * size * size;
    let mut data = Vec::with_capacity(examples * per);
    let mut labels = Vec::with_capacity(examples);
    for i in 0..examples {
        let label = i % num_classes;
        let cls = &classes[label];
        let phase = rng.gen_range(0.0..std::f64::consts::TAU);
        let (ca, sa) = (cls.angle.cos(), cls.angle.sin());
        for ch in 0..channels {
            for y in 0..size {
                for x in 0..size {
                    let u = (x as f64 * ca + y as f64 * sa) / size as f64;
                    let texture = (std::f64::consts::TAU * cls.freq * u + phase).cos();
                    let v = signal * (cls.offsets[ch] + texture) + NOISE * rng.sample::<f64, _>(StandardNormal);
                    data.push(v as f32);
                }
            }
        }
        labels.push(label as u32);
    }
    // shuffle example order so labels are not periodic
    let mut order: Vec<usize> = (0..examples).collect();
    order.shuffle(&mut rng);
    let mut shuffled = Vec::with_capacity(data.len());
    let mut shuffled_labels = Vec::with_capacity(examples);
    for &i in &order {
        shuffled.extend_from_slice(&data[i * per..(i + 1) * per]);
        shuffled_labels.push(labels[i]);
    }
    let features = Tensor::new(vec![examples, channels, size, size], shuffled)?;
    let mut ds = Dataset::with_random_split(
        format!("synth-{num_classes}c-{size}px-s{seed}"),
        features,
        shuffled_labels,
        num_classes,
        seed,
    )?;
    ds.standardize();
    Ok(ds)
}
