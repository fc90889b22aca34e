//! On-disk dataset formats: the NFT1 tensor archive and CIFAR-10 binary records.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::dataset::Dataset;

const NFT_MAGIC: &[u8; 4] = b"NFT1";
const CIFAR_RECORD: usize = 1 + 3 * 32 * 32;

/// Serialize a tensor as `"NFT1"`, u32 rank, u32 extents, then f32 payload,
/// all little-endian.
pub fn encode_nft(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 4 * t.rank() + 4 * t.numel());
    out.extend_from_slice(NFT_MAGIC);
    out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_nft(bytes: &[u8]) -> Result<Tensor> {
    if bytes.len() < 8 || &bytes[..4] != NFT_MAGIC {
        return Err(Error::Format("missing NFT1 header".into()));
    }
    let word = |i: usize| -> Result<u32> {
        bytes
            .get(i..i + 4)
            .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
            .ok_or_else(|| Error::Format("truncated NFT1 header".into()))
    };
    let rank = word(4)? as usize;
    let shape = (0..rank).map(|i| word(8 + 4 * i).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
    let start = 8 + 4 * rank;
    let numel: usize = shape.iter().product();
    let payload = &bytes[start..];
    if payload.len() != 4 * numel {
        return Err(Error::Format(format!(
            "NFT1 payload holds {} bytes, shape {shape:?} needs {}",
            payload.len(),
            4 * numel
        )));
    }
    let data = payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
    Tensor::new(shape, data)
}

pub fn write_nft(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_nft(t)).map_err(|e| Error::io(path, e))
}

pub fn read_nft(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    decode_nft(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

/// Labels sit next to the features: `data.nft` pairs with `data.labels`.
pub fn labels_path(features: &Path) -> PathBuf {
    features.with_extension("labels")
}

pub fn write_labels(path: impl AsRef<Path>, labels: &[u32]) -> Result<()> {
    let path = path.as_ref();
    let bytes: Vec<u8> = labels.iter().flat_map(|l| l.to_le_bytes()).collect();
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<Vec<u32>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() % 4 != 0 {
        return Err(Error::Format(format!("{}: label file length {} is not a multiple of 4", path.display(), bytes.len())));
    }
    Ok(bytes.chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes"))).collect())
}

/// Write a dataset's features and labels (splits are not stored).
pub fn save_nft_dataset(path: impl AsRef<Path>, ds: &Dataset) -> Result<()> {
    let path = path.as_ref();
    write_nft(path, ds.features())?;
    write_labels(labels_path(path), ds.labels())
}

/// Load an NFT1 feature archive with its sibling label file and split it 80-20.
pub fn load_nft_dataset(path: impl AsRef<Path>, split_seed: u64) -> Result<Dataset> {
    let path = path.as_ref();
    let features = read_nft(path)?;
    if features.rank() != 4 {
        return Err(Error::Format(format!("{}: expected rank-4 features, got {:?}", path.display(), features.shape())));
    }
    let labels = read_labels(labels_path(path))?;
    let num_classes = labels.iter().max().map_or(0, |&m| m as usize + 1);
    let name = path.file_stem().map_or_else(|| "nft".into(), |s| s.to_string_lossy().into_owned());
    let mut ds = Dataset::with_random_split(name, features, labels, num_classes, split_seed)?;
    ds.standardize();
    Ok(ds)
}

/// Decode CIFAR-10 records (label byte + 3072 channel-major pixel bytes)
/// into `[N, 3, 32, 32]` values in `[0, 1]`.
pub fn parse_cifar10_records(bytes: &[u8]) -> Result<(Tensor, Vec<u32>)> {
    if bytes.is_empty() || bytes.len() % CIFAR_RECORD != 0 {
        return Err(Error::Format(format!(
            "CIFAR-10 data length {} is not a positive multiple of {CIFAR_RECORD}",
            bytes.len()
        )));
    }
    let n = bytes.len() / CIFAR_RECORD;
    let mut data = Vec::with_capacity(n * (CIFAR_RECORD - 1));
    let mut labels = Vec::with_capacity(n);
    for (i, rec) in bytes.chunks_exact(CIFAR_RECORD).enumerate() {
        if rec[0] > 9 {
            return Err(Error::Format(format!("record {i}: label {} outside 0..10", rec[0])));
        }
        labels.push(rec[0] as u32);
        data.extend(rec[1..].iter().map(|&b| b as f32 / 255.0));
    }
    Ok((Tensor::new(vec![n, 3, 32, 32], data)?, labels))
}

/// Load CIFAR-10 from a directory (`data_batch_*.bin` train, `test_batch.bin`
/// eval) or from a single record file, which becomes the training split.
/// Values are standardized per channel with training statistics.
pub fn load_cifar10_binary(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let read = |p: &Path| fs::read(p).map_err(|e| Error::io(p, e));
    let (train_bytes, eval_bytes) = if path.is_dir() {
        let mut batches: Vec<PathBuf> = fs::read_dir(path)
            .map_err(|e| Error::io(path, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with("data_batch_") && n.ends_with(".bin")))
            .collect();
        batches.sort();
        if batches.is_empty() {
            return Err(Error::Format(format!("{}: no data_batch_*.bin files", path.display())));
        }
        let mut train = Vec::new();
        for b in &batches {
            train.extend(read(b)?);
        }
        let test = path.join("test_batch.bin");
        let eval = if test.exists() { read(&test)? } else { Vec::new() };
        (train, eval)
    } else {
        (read(path)?, Vec::new())
    };
    let (train_x, mut labels) = parse_cifar10_records(&train_bytes)?;
    let n_train = labels.len();
    let mut data = train_x.into_data();
    if !eval_bytes.is_empty() {
        let (eval_x, eval_labels) = parse_cifar10_records(&eval_bytes)?;
        data.extend(eval_x.into_data());
        labels.extend(eval_labels);
    }
    let n = labels.len();
    let features = Tensor::new(vec![n, 3, 32, 32], data)?;
    let mut ds = Dataset::new("cifar10", features, labels, 10, (0..n_train).collect(), (n_train..n).collect())?;
    ds.standardize();
    Ok(ds)
}
