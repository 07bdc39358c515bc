//! Dataset ingestion, train/test splitting and non-iid client partitions.
//!
//! Spambase is read from its native CSV (57 features and a 0/1 label per
//! line) and z-scored per column. MNIST is read from IDX files with pixels
//! scaled to `[0, 1]`.
//!
//! Partitions keep, for every shard, the indices of its samples in the
//! partitioned dataset so the disjoint-cover property can be checked.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use thiserror::Error;

use crate::rng::{self, Purpose};

pub const SPAMBASE_FEATURES: usize = 57;
pub const MNIST_SIDE: usize = 28;
pub const MNIST_FEATURES: usize = MNIST_SIDE * MNIST_SIDE;
pub const MNIST_CLASSES: usize = 10;
pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}: file contains no samples")]
    Empty { path: PathBuf },
    #[error("{path}: bad IDX magic {found:#010x}, expected {expected:#010x}")]
    Magic {
        path: PathBuf,
        expected: u32,
        found: u32,
    },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("image/label count mismatch: {images} images, {labels} labels")]
    CountMismatch { images: usize, labels: usize },
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("cannot partition: {0}")]
    Partition(String),
}

pub type Result<T> = std::result::Result<T, DataError>;

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub features: Vec<f64>,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub n_features: usize,
    pub n_classes: usize,
}

impl Dataset {
    /// Builds a dataset, checking every sample against the declared shape.
    pub fn new(samples: Vec<Sample>, n_features: usize, n_classes: usize) -> Result<Self> {
        if n_features == 0 || n_classes == 0 {
            return Err(DataError::Argument(
                "n_features and n_classes must be positive".into(),
            ));
        }
        for (i, s) in samples.iter().enumerate() {
            if s.features.len() != n_features {
                return Err(DataError::Argument(format!(
                    "sample {i} has {} features, expected {n_features}",
                    s.features.len()
                )));
            }
            if s.label >= n_classes {
                return Err(DataError::Argument(format!(
                    "sample {i} has label {} outside 0..{n_classes}",
                    s.label
                )));
            }
            if !s.features.iter().all(|v| v.is_finite()) {
                return Err(DataError::Argument(format!("sample {i} has a non-finite feature")));
            }
        }
        Ok(Self {
            samples,
            n_features,
            n_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Dataset holding the samples at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        Dataset {
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
            n_features: self.n_features,
            n_classes: self.n_classes,
        }
    }

    /// Appends `other`; both must share the same shape.
    pub fn concat(mut self, other: Dataset) -> Result<Dataset> {
        if self.n_features != other.n_features || self.n_classes != other.n_classes {
            return Err(DataError::Argument("cannot concatenate datasets of different shapes".into()));
        }
        self.samples.extend(other.samples);
        Ok(self)
    }

    /// Seeded uniform subset of `n` samples (the whole set if `n >= len`).
    pub fn subset(&self, n: usize, seed: u64) -> Dataset {
        if n >= self.len() {
            return self.clone();
        }
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut rng::data_stream(seed, Purpose::Subset));
        idx.truncate(n);
        self.select(&idx)
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes];
        for s in &self.samples {
            counts[s.label] += 1;
        }
        counts
    }
}

/// One client's local data.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientShard {
    pub client_id: usize,
    pub samples: Vec<Sample>,
    /// Positions of `samples` in the dataset the shard was cut from.
    pub source_indices: Vec<usize>,
}

impl ClientShard {
    pub fn n(&self) -> usize {
        self.samples.len()
    }

    pub fn labels(&self) -> Vec<usize> {
        let mut labels: Vec<usize> = self.samples.iter().map(|s| s.label).collect();
        labels.sort_unstable();
        labels.dedup();
        labels
    }

    pub fn to_dataset(&self, n_features: usize, n_classes: usize) -> Dataset {
        Dataset {
            samples: self.samples.clone(),
            n_features,
            n_classes,
        }
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Loads Spambase: 57 real features then an integer label, one record per
/// line. Features are standardised per column over the whole file;
/// zero-variance columns become 0.
pub fn load_spambase(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let bytes = read(path)?;
    let text = String::from_utf8(bytes).map_err(|_| DataError::Format {
        path: path.to_path_buf(),
        message: "not valid UTF-8".into(),
    })?;
    parse_spambase(&text, path)
}

fn parse_spambase(text: &str, path: &Path) -> Result<Dataset> {
    let parse_err = |line: usize, message: String| DataError::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut samples = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != SPAMBASE_FEATURES + 1 {
            return Err(parse_err(
                line_no,
                format!("expected {} fields, found {}", SPAMBASE_FEATURES + 1, fields.len()),
            ));
        }
        let mut features = Vec::with_capacity(SPAMBASE_FEATURES);
        for (col, f) in fields[..SPAMBASE_FEATURES].iter().enumerate() {
            let v: f64 = f
                .parse()
                .map_err(|_| parse_err(line_no, format!("field {} is not numeric: {f:?}", col + 1)))?;
            if !v.is_finite() {
                return Err(parse_err(line_no, format!("field {} is not finite", col + 1)));
            }
            features.push(v);
        }
        let label_field = fields[SPAMBASE_FEATURES];
        let label = match label_field.parse::<f64>() {
            Ok(0.0) => 0,
            Ok(1.0) => 1,
            _ => {
                return Err(parse_err(
                    line_no,
                    format!("label must be 0 or 1, found {label_field:?}"),
                ))
            }
        };
        samples.push(Sample { features, label });
    }
    if samples.is_empty() {
        return Err(DataError::Empty {
            path: path.to_path_buf(),
        });
    }
    standardize(&mut samples, SPAMBASE_FEATURES);
    Dataset::new(samples, SPAMBASE_FEATURES, 2)
}

/// Column-wise z-score with the population standard deviation.
fn standardize(samples: &mut [Sample], n_features: usize) {
    let n = samples.len() as f64;
    for col in 0..n_features {
        let mean = samples.iter().map(|s| s.features[col]).sum::<f64>() / n;
        let var = samples
            .iter()
            .map(|s| (s.features[col] - mean).powi(2))
            .sum::<f64>()
            / n;
        let std = var.sqrt();
        for s in samples.iter_mut() {
            s.features[col] = if std > 0.0 {
                (s.features[col] - mean) / std
            } else {
                0.0
            };
        }
    }
}

struct IdxReader<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> IdxReader<'a> {
    fn u32(&mut self) -> Result<u32> {
        let end = self.pos + 4;
        let word = self.bytes.get(self.pos..end).ok_or_else(|| DataError::Format {
            path: self.path.to_path_buf(),
            message: "truncated IDX header".into(),
        })?;
        self.pos = end;
        Ok(u32::from_be_bytes(word.try_into().unwrap()))
    }

    fn magic(&mut self, expected: u32) -> Result<()> {
        let found = self.u32()?;
        if found != expected {
            return Err(DataError::Magic {
                path: self.path.to_path_buf(),
                expected,
                found,
            });
        }
        Ok(())
    }

    fn payload(&self, len: usize) -> Result<&'a [u8]> {
        let rest = &self.bytes[self.pos..];
        if rest.len() < len {
            return Err(DataError::Format {
                path: self.path.to_path_buf(),
                message: format!("truncated payload: {} of {len} bytes", rest.len()),
            });
        }
        Ok(&rest[..len])
    }
}

/// Loads an IDX image/label pair (`n x 28 x 28` unsigned bytes, `n` labels).
pub fn load_mnist(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let images_path = images_path.as_ref();
    let labels_path = labels_path.as_ref();
    let image_bytes = read(images_path)?;
    let label_bytes = read(labels_path)?;

    let mut images = IdxReader {
        path: images_path,
        bytes: &image_bytes,
        pos: 0,
    };
    images.magic(IDX_IMAGES_MAGIC)?;
    let n_images = images.u32()? as usize;
    let rows = images.u32()? as usize;
    let cols = images.u32()? as usize;
    if rows != MNIST_SIDE || cols != MNIST_SIDE {
        return Err(DataError::Format {
            path: images_path.to_path_buf(),
            message: format!("expected 28x28 images, found {rows}x{cols}"),
        });
    }
    let pixels = images.payload(n_images * MNIST_FEATURES)?;

    let mut labels = IdxReader {
        path: labels_path,
        bytes: &label_bytes,
        pos: 0,
    };
    labels.magic(IDX_LABELS_MAGIC)?;
    let n_labels = labels.u32()? as usize;
    let label_data = labels.payload(n_labels)?;

    if n_images != n_labels {
        return Err(DataError::CountMismatch {
            images: n_images,
            labels: n_labels,
        });
    }
    let mut samples = Vec::with_capacity(n_images);
    for (i, (img, &label)) in pixels.chunks_exact(MNIST_FEATURES).zip(label_data).enumerate() {
        if label as usize >= MNIST_CLASSES {
            return Err(DataError::Format {
                path: labels_path.to_path_buf(),
                message: format!("label {label} of sample {i} is not a digit"),
            });
        }
        samples.push(Sample {
            features: img.iter().map(|&p| f64::from(p) / 255.0).collect(),
            label: label as usize,
        });
    }
    Dataset::new(samples, MNIST_FEATURES, MNIST_CLASSES)
}

/// Seeded shuffle, then the first `floor(train_fraction * n)` samples train.
pub fn split_train_test(ds: &Dataset, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(DataError::Argument(format!(
            "train_fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let order = shuffled_indices(ds.len(), seed, Purpose::Split);
    let n_train = train_count(ds.len(), train_fraction);
    Ok((ds.select(&order[..n_train]), ds.select(&order[n_train..])))
}

/// `floor(fraction * n)`, absorbing representation error in fractions such
/// as 2/3 so that `3 * (2/3)` floors to 2.
pub fn train_count(n: usize, fraction: f64) -> usize {
    ((fraction * n as f64) + 1e-9).floor() as usize
}

fn shuffled_indices(n: usize, seed: u64, purpose: Purpose) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::data_stream(seed, purpose));
    idx
}

/// Deals `indices` round-robin over `clients`, appending to their lists.
fn deal(indices: &[usize], clients: &[usize], out: &mut [Vec<usize>]) {
    for (j, &idx) in indices.iter().enumerate() {
        out[clients[j % clients.len()]].push(idx);
    }
}

fn build_shards(ds: &Dataset, assignment: Vec<Vec<usize>>) -> Vec<ClientShard> {
    assignment
        .into_iter()
        .enumerate()
        .map(|(client_id, source_indices)| ClientShard {
            client_id,
            samples: source_indices.iter().map(|&i| ds.samples[i].clone()).collect(),
            source_indices,
        })
        .collect()
}

/// Spam-style label skew: label-1 samples go round-robin to clients
/// `0..n_spam_clients`, label-0 samples to the rest. Within each class the
/// dealing order is a seeded shuffle.
pub fn partition_spam(
    ds: &Dataset,
    n_clients: usize,
    n_spam_clients: usize,
    seed: u64,
) -> Result<Vec<ClientShard>> {
    if ds.n_classes != 2 {
        return Err(DataError::Argument(format!(
            "spam partition needs a binary dataset, got {} classes",
            ds.n_classes
        )));
    }
    if n_spam_clients == 0 || n_spam_clients >= n_clients {
        return Err(DataError::Argument(format!(
            "need 0 < n_spam_clients < n_clients, got {n_spam_clients} of {n_clients}"
        )));
    }
    let order = shuffled_indices(ds.len(), seed, Purpose::Partition);
    let (spam, ham): (Vec<usize>, Vec<usize>) = order.into_iter().partition(|&i| ds.samples[i].label == 1);
    let spam_clients: Vec<usize> = (0..n_spam_clients).collect();
    let ham_clients: Vec<usize> = (n_spam_clients..n_clients).collect();
    if spam.len() < spam_clients.len() {
        return Err(DataError::Partition(format!(
            "{} label-1 samples for {} clients",
            spam.len(),
            spam_clients.len()
        )));
    }
    if ham.len() < ham_clients.len() {
        return Err(DataError::Partition(format!(
            "{} label-0 samples for {} clients",
            ham.len(),
            ham_clients.len()
        )));
    }
    let mut assignment = vec![Vec::new(); n_clients];
    deal(&spam, &spam_clients, &mut assignment);
    deal(&ham, &ham_clients, &mut assignment);
    Ok(build_shards(ds, assignment))
}

/// Digit-per-client skew: samples of class `d` alternate between clients
/// `2d` and `2d + 1`, in source order.
pub fn partition_mnist(ds: &Dataset, n_clients: usize) -> Result<Vec<ClientShard>> {
    if n_clients != 2 * ds.n_classes {
        return Err(DataError::Argument(format!(
            "digit partition needs exactly {} clients, got {n_clients}",
            2 * ds.n_classes
        )));
    }
    let mut by_class = vec![Vec::new(); ds.n_classes];
    for (i, s) in ds.samples.iter().enumerate() {
        by_class[s.label].push(i);
    }
    let mut assignment = vec![Vec::new(); n_clients];
    for (digit, indices) in by_class.iter().enumerate() {
        if indices.len() < 2 {
            return Err(DataError::Partition(format!(
                "digit {digit} has {} samples, needs at least 2",
                indices.len()
            )));
        }
        deal(indices, &[2 * digit, 2 * digit + 1], &mut assignment);
    }
    Ok(build_shards(ds, assignment))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Write;

    fn spam_line(label: &str, value: f64) -> String {
        let mut fields = vec![format!("{value}"); SPAMBASE_FEATURES];
        fields.push(label.to_string());
        fields.join(",")
    }

    fn write_tmp(content: &[u8]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content).unwrap();
        f
    }

    fn toy(labels: &[usize], n_classes: usize) -> Dataset {
        let samples = labels
            .iter()
            .enumerate()
            .map(|(i, &label)| Sample {
                features: vec![i as f64],
                label,
            })
            .collect();
        Dataset::new(samples, 1, n_classes).unwrap()
    }

    #[test]
    fn spambase_single_line_standardizes_to_zero() {
        let f = write_tmp(spam_line("1", 3.5).as_bytes());
        let ds = load_spambase(f.path()).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.n_features, 57);
        assert_eq!(ds.n_classes, 2);
        assert!(ds.samples[0].features.iter().all(|&v| v == 0.0));
        assert_eq!(ds.samples[0].label, 1);
    }

    #[test]
    fn spambase_standardizes_columns() {
        let text = format!("{}\n{}\n", spam_line("0", 1.0), spam_line("1", 3.0));
        let f = write_tmp(text.as_bytes());
        let ds = load_spambase(f.path()).unwrap();
        assert_eq!(ds.samples[0].features[0], -1.0);
        assert_eq!(ds.samples[1].features[56], 1.0);
    }

    #[test]
    fn spambase_missing_label_names_line() {
        let short = vec!["0"; SPAMBASE_FEATURES].join(",");
        let text = format!("{}\n{}\n", spam_line("0", 1.0), short);
        let f = write_tmp(text.as_bytes());
        match load_spambase(f.path()) {
            Err(DataError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn spambase_rejects_non_numeric_and_empty() {
        let text = spam_line("0", 1.0).replacen("1", "x", 1);
        let f = write_tmp(text.as_bytes());
        assert!(matches!(load_spambase(f.path()), Err(DataError::Parse { line: 1, .. })));
        let f = write_tmp(b"\n\n");
        assert!(matches!(load_spambase(f.path()), Err(DataError::Empty { .. })));
    }

    fn idx_images(images: &[[u8; MNIST_FEATURES]]) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
        out.extend_from_slice(&(images.len() as u32).to_be_bytes());
        out.extend_from_slice(&28u32.to_be_bytes());
        out.extend_from_slice(&28u32.to_be_bytes());
        for img in images {
            out.extend_from_slice(img);
        }
        out
    }

    fn idx_labels(labels: &[u8]) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
        out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
        out.extend_from_slice(labels);
        out
    }

    #[test]
    fn idx_two_zero_images() {
        let imgs = write_tmp(&idx_images(&[[0; MNIST_FEATURES]; 2]));
        let labs = write_tmp(&idx_labels(&[3, 7]));
        let ds = load_mnist(imgs.path(), labs.path()).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.n_features, 784);
        assert_eq!(ds.n_classes, 10);
        assert!(ds.samples.iter().all(|s| s.features.iter().all(|&v| v == 0.0)));
        assert_eq!(ds.samples.iter().map(|s| s.label).collect::<Vec<_>>(), vec![3, 7]);
    }

    #[test]
    fn idx_swapped_files_report_expected_magic() {
        let imgs = write_tmp(&idx_images(&[[0; MNIST_FEATURES]]));
        let labs = write_tmp(&idx_labels(&[1]));
        match load_mnist(labs.path(), imgs.path()) {
            Err(DataError::Magic { expected, found, .. }) => {
                assert_eq!(expected, IDX_IMAGES_MAGIC);
                assert_eq!(found, IDX_LABELS_MAGIC);
            }
            other => panic!("expected magic error, got {other:?}"),
        }
    }

    #[test]
    fn idx_count_mismatch_and_truncation() {
        let imgs = write_tmp(&idx_images(&[[0; MNIST_FEATURES]; 2]));
        let labs = write_tmp(&idx_labels(&[1]));
        assert!(matches!(
            load_mnist(imgs.path(), labs.path()),
            Err(DataError::CountMismatch { images: 2, labels: 1 })
        ));
        let mut bytes = idx_images(&[[0; MNIST_FEATURES]; 2]);
        bytes.truncate(bytes.len() - 10);
        let imgs = write_tmp(&bytes);
        let labs = write_tmp(&idx_labels(&[1, 2]));
        assert!(matches!(load_mnist(imgs.path(), labs.path()), Err(DataError::Format { .. })));
        let imgs = write_tmp(&[0, 0, 8]);
        assert!(matches!(load_mnist(imgs.path(), labs.path()), Err(DataError::Format { .. })));
    }

    proptest! {
        #[test]
        fn idx_round_trip(pixels in proptest::collection::vec(any::<u8>(), MNIST_FEATURES * 3), labels in proptest::collection::vec(0u8..10, 3)) {
            let imgs: Vec<[u8; MNIST_FEATURES]> = pixels.chunks_exact(MNIST_FEATURES).map(|c| c.try_into().unwrap()).collect();
            let fi = write_tmp(&idx_images(&imgs));
            let fl = write_tmp(&idx_labels(&labels));
            let ds = load_mnist(fi.path(), fl.path()).unwrap();
            for (s, (img, &l)) in ds.samples.iter().zip(imgs.iter().zip(&labels)) {
                prop_assert_eq!(s.label, l as usize);
                let back: Vec<u8> = s.features.iter().map(|v| (v * 255.0).round() as u8).collect();
                prop_assert_eq!(&back[..], &img[..]);
            }
        }
    }

    #[test]
    fn split_counts() {
        assert_eq!(train_count(4601, 2.0 / 3.0), 3067);
        assert_eq!(4601 - train_count(4601, 2.0 / 3.0), 1534);
        for seed in 0..5 {
            let (train, test) = split_train_test(&toy(&[0, 1, 0], 2), 2.0 / 3.0, seed).unwrap();
            assert_eq!((train.len(), test.len()), (2, 1));
        }
    }

    #[test]
    fn split_is_deterministic_and_validated() {
        let ds = toy(&[0, 1, 0, 1, 1, 0, 0, 1, 0, 1], 2);
        let a = split_train_test(&ds, 0.5, 11).unwrap();
        let b = split_train_test(&ds, 0.5, 11).unwrap();
        assert_eq!(a, b);
        for bad in [0.0, 1.0, -0.2, 1.5, f64::NAN] {
            assert!(matches!(split_train_test(&ds, bad, 0), Err(DataError::Argument(_))));
        }
    }

    #[test]
    fn spam_partition_defaults() {
        let labels: Vec<usize> = (0..200).map(|i| usize::from(i % 5 == 0)).collect();
        let ds = toy(&labels, 2);
        let shards = partition_spam(&ds, 20, 4, 3).unwrap();
        assert_eq!(shards.len(), 20);
        for s in &shards[..4] {
            assert_eq!(s.labels(), vec![1]);
        }
        for s in &shards[4..] {
            assert_eq!(s.labels(), vec![0]);
        }
    }

    #[test]
    fn spam_partition_round_robin_sizes() {
        let mut labels = vec![1; 1813];
        labels.extend(vec![0; 40]);
        let shards = partition_spam(&toy(&labels, 2), 20, 4, 0).unwrap();
        let sizes: Vec<usize> = shards[..4].iter().map(ClientShard::n).collect();
        assert_eq!(sizes, vec![454, 453, 453, 453]);
    }

    #[test]
    fn spam_partition_minimal_and_errors() {
        let shards = partition_spam(&toy(&[1, 0], 2), 2, 1, 0).unwrap();
        assert_eq!(shards[0].n(), 1);
        assert_eq!(shards[1].n(), 1);
        assert!(matches!(
            partition_spam(&toy(&[1, 0, 0], 2), 3, 2, 0),
            Err(DataError::Partition(_))
        ));
        assert!(partition_spam(&toy(&[1, 0], 2), 2, 2, 0).is_err());
    }

    #[test]
    fn mnist_partition_layout() {
        let labels: Vec<usize> = (0..205).map(|i| i % 10).collect();
        let shards = partition_mnist(&toy(&labels, 10), 20).unwrap();
        assert_eq!(shards[0].labels(), vec![0]);
        assert_eq!(shards[1].labels(), vec![0]);
        assert_eq!(shards[18].labels(), vec![9]);
        assert_eq!(shards[19].labels(), vec![9]);
        // 21 samples of digits 0..4, 20 of the rest
        assert_eq!((shards[0].n(), shards[1].n()), (11, 10));
        assert_eq!((shards[18].n(), shards[19].n()), (10, 10));
        assert!(matches!(partition_mnist(&toy(&labels, 10), 10), Err(DataError::Argument(_))));
    }

    #[test]
    fn mnist_partition_odd_count() {
        let mut labels = vec![3; 5];
        labels.extend((0..10).filter(|&d| d != 3).flat_map(|d| [d, d]));
        let shards = partition_mnist(&toy(&labels, 10), 20).unwrap();
        assert_eq!((shards[6].n(), shards[7].n()), (3, 2));
    }

    fn assert_cover(shards: &[ClientShard], n: usize) {
        let mut all: Vec<usize> = shards.iter().flat_map(|s| s.source_indices.clone()).collect();
        all.sort_unstable();
        assert_eq!(all, (0..n).collect::<Vec<_>>());
    }

    proptest! {
        #[test]
        fn partitions_cover_disjointly(labels in proptest::collection::vec(0usize..2, 40..120), seed in any::<u64>()) {
            let ds = toy(&labels, 2);
            let spam = labels.iter().filter(|&&l| l == 1).count();
            prop_assume!(spam >= 3 && labels.len() - spam >= 5);
            let shards = partition_spam(&ds, 8, 3, seed).unwrap();
            assert_cover(&shards, ds.len());
            for s in &shards {
                prop_assert_eq!(s.labels().len(), 1);
                for (sample, &i) in s.samples.iter().zip(&s.source_indices) {
                    prop_assert_eq!(sample, &ds.samples[i]);
                }
            }
            let sizes: Vec<usize> = shards[..3].iter().map(ClientShard::n).collect();
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
            prop_assert_eq!(shards.clone(), partition_spam(&ds, 8, 3, seed).unwrap());
        }

        #[test]
        fn digit_partition_covers(labels in proptest::collection::vec(0usize..10, 60..200)) {
            let counts = toy(&labels, 10).class_counts();
            prop_assume!(counts.iter().all(|&c| c >= 2));
            let shards = partition_mnist(&toy(&labels, 10), 20).unwrap();
            assert_cover(&shards, labels.len());
            for d in 0..10 {
                prop_assert!(shards[2 * d].n().abs_diff(shards[2 * d + 1].n()) <= 1);
                prop_assert_eq!(shards[2 * d].labels(), vec![d]);
            }
        }
    }
}
