//! Bags, datasets, and their on-disk form.
//!
//! The dataset file is JSON lines: a header object
//! `{"name": .., "feature_dim": d, "label_count": t}` followed by one bag per
//! line, `{"instances": [[f64; d], ..], "labels": [0|1; t]}`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util;

/// One MIML sample: a set of instance rows sharing a logical label vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Bag {
    instances: Array2<f64>,
    labels: Vec<u8>,
}

impl Bag {
    pub fn new(instances: Array2<f64>, labels: Vec<u8>) -> Result<Self> {
        if instances.nrows() == 0 {
            return Err(Error::shape("a bag needs at least one instance"));
        }
        if let Some(v) = labels.iter().find(|&&l| l > 1) {
            return Err(Error::config(format!("logical label {v} is not 0 or 1")));
        }
        if !util::all_finite(instances.iter()) {
            return Err(Error::NumericInput("instance features must be finite".into()));
        }
        Ok(Bag { instances, labels })
    }

    pub fn instances(&self) -> ArrayView2<'_, f64> {
        self.instances.view()
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn labels_f64(&self) -> Array1<f64> {
        self.labels.iter().map(|&l| f64::from(l)).collect()
    }

    pub fn num_instances(&self) -> usize {
        self.instances.nrows()
    }

    pub fn feature_dim(&self) -> usize {
        self.instances.ncols()
    }

    pub fn label_count(&self) -> usize {
        self.labels.len()
    }

    /// Arithmetic mean of the instance rows.
    pub fn mean_instance(&self) -> Array1<f64> {
        util::mean_rows(self.instances.view())
    }

    pub fn has_positive_and_negative(&self) -> bool {
        self.labels.contains(&1) && self.labels.contains(&0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MimlDataset {
    name: String,
    feature_dim: usize,
    label_count: usize,
    bags: Vec<Bag>,
}

impl MimlDataset {
    pub fn new(name: impl Into<String>, feature_dim: usize, label_count: usize, bags: Vec<Bag>) -> Result<Self> {
        if feature_dim == 0 || label_count == 0 {
            return Err(Error::config("feature_dim and label_count must be positive"));
        }
        if bags.is_empty() {
            return Err(Error::Degenerate("a dataset needs at least one bag".into()));
        }
        for (i, bag) in bags.iter().enumerate() {
            check_bag_dims(i, bag, feature_dim, label_count)?;
        }
        Ok(MimlDataset {
            name: name.into(),
            feature_dim,
            label_count,
            bags,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn label_count(&self) -> usize {
        self.label_count
    }

    pub fn bags(&self) -> &[Bag] {
        &self.bags
    }

    pub fn len(&self) -> usize {
        self.bags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bags.is_empty()
    }

    /// Logical labels stacked into a `B x t` matrix of 0.0 / 1.0.
    pub fn label_matrix(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.bags.len(), self.label_count));
        for (mut row, bag) in out.outer_iter_mut().zip(&self.bags) {
            row.assign(&bag.labels_f64());
        }
        out
    }

    /// Sub-dataset made of the given bag indices, in the given order.
    pub fn subset(&self, indices: &[usize], name: impl Into<String>) -> Result<Self> {
        let bags = indices.iter().map(|&i| self.bags[i].clone()).collect();
        MimlDataset::new(name, self.feature_dim, self.label_count, bags)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        load_dataset(path)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        write_dataset(self, path)
    }
}

fn check_bag_dims(index: usize, bag: &Bag, feature_dim: usize, label_count: usize) -> Result<()> {
    if bag.feature_dim() != feature_dim {
        return Err(Error::Dimension {
            bag: index,
            message: format!("instances have {} entries, expected {feature_dim}", bag.feature_dim()),
        });
    }
    if bag.label_count() != label_count {
        return Err(Error::Dimension {
            bag: index,
            message: format!("{} labels, expected {label_count}", bag.label_count()),
        });
    }
    Ok(())
}

/// Simplex vector of per-label descriptiveness; only the synthetic generator
/// produces these.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GroundTruthDistribution(Vec<f64>);

impl GroundTruthDistribution {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        let total: f64 = values.iter().sum();
        if values.iter().any(|&v| v.is_nan() || v < 0.0) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::config("ground-truth distribution must lie on the simplex"));
        }
        Ok(GroundTruthDistribution(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSpec {
    pub train_frac: f64,
    pub test_frac: f64,
    pub val_frac: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train_frac: 0.7,
            test_frac: 0.2,
            val_frac: 0.1,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let fracs = [self.train_frac, self.test_frac, self.val_frac];
        if fracs.iter().any(|&f| f.is_nan() || f <= 0.0) {
            return Err(Error::config("split fractions must be positive"));
        }
        let total: f64 = fracs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::config(format!("split fractions sum to {total}, not 1")));
        }
        Ok(())
    }
}

/// Bag indices of each part of a split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub val: Vec<usize>,
}

pub fn split_indices(num_bags: usize, spec: &SplitSpec) -> Result<SplitIndices> {
    spec.validate()?;
    if num_bags < 10 {
        return Err(Error::config(format!("splitting needs at least 10 bags, got {num_bags}")));
    }
    // Guard against 2000 * 0.2 landing a hair under 400.
    let part = |frac: f64| (num_bags as f64 * frac + 1e-9).floor() as usize;
    let test_n = part(spec.test_frac);
    let val_n = part(spec.val_frac);
    let train_n = num_bags - test_n - val_n;

    let mut order: Vec<usize> = (0..num_bags).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let (train, rest) = order.split_at(train_n);
    let (test, val) = rest.split_at(test_n);
    Ok(SplitIndices {
        train: train.to_vec(),
        test: test.to_vec(),
        val: val.to_vec(),
    })
}

/// Splits into `(train, test, val)`; remainder bags go to train.
pub fn split_dataset(ds: &MimlDataset, spec: &SplitSpec) -> Result<(MimlDataset, MimlDataset, MimlDataset)> {
    let idx = split_indices(ds.len(), spec)?;
    Ok((
        ds.subset(&idx.train, format!("{}/train", ds.name))?,
        ds.subset(&idx.test, format!("{}/test", ds.name))?,
        ds.subset(&idx.val, format!("{}/val", ds.name))?,
    ))
}

#[derive(Serialize, Deserialize)]
struct Header {
    name: String,
    feature_dim: usize,
    label_count: usize,
}

#[derive(Serialize, Deserialize)]
struct BagRecord {
    instances: Vec<Vec<f64>>,
    labels: Vec<u8>,
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<MimlDataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };

    let mut lines = BufReader::new(file).lines().enumerate();
    let header: Header = loop {
        match lines.next() {
            None => return Err(parse_err(1, "missing header line".into())),
            Some((i, line)) => {
                let line = line.map_err(|e| Error::io(path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                break serde_json::from_str(&line).map_err(|e| parse_err(i + 1, e.to_string()))?;
            }
        }
    };
    if header.feature_dim == 0 || header.label_count == 0 {
        return Err(parse_err(1, "feature_dim and label_count must be positive".into()));
    }

    let mut bags = Vec::new();
    for (i, line) in lines {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: BagRecord = serde_json::from_str(&line).map_err(|e| parse_err(i + 1, e.to_string()))?;
        let bag_index = bags.len();
        if record.instances.is_empty() {
            return Err(Error::Dimension {
                bag: bag_index,
                message: "bag has no instances".into(),
            });
        }
        if let Some(row) = record.instances.iter().find(|r| r.len() != header.feature_dim) {
            return Err(Error::Dimension {
                bag: bag_index,
                message: format!("instance has {} entries, expected {}", row.len(), header.feature_dim),
            });
        }
        if record.labels.len() != header.label_count {
            return Err(Error::Dimension {
                bag: bag_index,
                message: format!("{} labels, expected {}", record.labels.len(), header.label_count),
            });
        }
        if record.labels.iter().any(|&l| l > 1) {
            return Err(parse_err(i + 1, "labels must be 0 or 1".into()));
        }
        let n = record.instances.len();
        let flat: Vec<f64> = record.instances.into_iter().flatten().collect();
        let instances = Array2::from_shape_vec((n, header.feature_dim), flat).expect("row lengths checked");
        bags.push(Bag::new(instances, record.labels)?);
    }
    if bags.is_empty() {
        return Err(parse_err(1, "dataset has no bags".into()));
    }
    MimlDataset::new(header.name, header.feature_dim, header.label_count, bags)
}

pub fn write_dataset(ds: &MimlDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    write_jsonl(ds, &mut out).map_err(|e| Error::io(path, e))
}

fn write_jsonl(ds: &MimlDataset, out: &mut impl Write) -> std::io::Result<()> {
    let header = Header {
        name: ds.name.clone(),
        feature_dim: ds.feature_dim,
        label_count: ds.label_count,
    };
    serde_json::to_writer(&mut *out, &header)?;
    out.write_all(b"\n")?;
    for bag in &ds.bags {
        let record = BagRecord {
            instances: bag.instances.outer_iter().map(|r| r.to_vec()).collect(),
            labels: bag.labels.clone(),
        };
        serde_json::to_writer(&mut *out, &record)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub num_bags: usize,
    pub feature_dim: usize,
    pub label_count: usize,
    pub instances_min: usize,
    pub instances_max: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_bags: 500,
            feature_dim: 10,
            label_count: 6,
            instances_min: 2,
            instances_max: 5,
            seed: 7,
        }
    }
}

// Spread of the Gaussian scores behind each ground-truth distribution.
const SCORE_SPREAD: f64 = 1.0;
// Per-instance jitter of the mixing scores around the bag's scores.
const MIX_JITTER: f64 = 0.5;
const FEATURE_NOISE: f64 = 0.1;
const MAX_RESAMPLES: usize = 10_000;

/// Generates a dataset whose label distributions are known.
///
/// Each label owns a Gaussian prototype in feature space. A bag draws scores
/// `g ~ N(0, SCORE_SPREAD^2)` and sets its distribution to `softmax(g)`; each
/// instance mixes the prototypes with weights `softmax(g + jitter)` and adds
/// isotropic noise. Label `j` is relevant iff `d_j > 1 / (2t)`, and bags
/// without both a relevant and an irrelevant label are redrawn.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<(MimlDataset, Vec<GroundTruthDistribution>)> {
    if cfg.num_bags == 0 || cfg.feature_dim == 0 {
        return Err(Error::config("num_bags and feature_dim must be positive"));
    }
    if cfg.label_count < 2 {
        return Err(Error::config("label_count must be at least 2"));
    }
    if cfg.instances_min < 1 || cfg.instances_max < cfg.instances_min {
        return Err(Error::config(format!(
            "need 1 <= instances_min <= instances_max, got {}..{}",
            cfg.instances_min, cfg.instances_max
        )));
    }

    let t = cfg.label_count;
    let d = cfg.feature_dim;
    let threshold = 1.0 / (2.0 * t as f64);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let normal = |rng: &mut ChaCha8Rng| -> f64 { rng.sample(StandardNormal) };

    let prototypes = Array2::from_shape_fn((t, d), |_| normal(&mut rng));

    let mut bags = Vec::with_capacity(cfg.num_bags);
    let mut truths = Vec::with_capacity(cfg.num_bags);
    for _ in 0..cfg.num_bags {
        let mut attempts = 0;
        let (scores, dist, labels) = loop {
            attempts += 1;
            if attempts > MAX_RESAMPLES {
                return Err(Error::config("could not draw a bag with both relevant and irrelevant labels"));
            }
            let scores: Array1<f64> = (0..t).map(|_| SCORE_SPREAD * normal(&mut rng)).collect();
            let dist = util::softmax(scores.view());
            let labels: Vec<u8> = dist.iter().map(|&v| u8::from(v > threshold)).collect();
            if labels.contains(&0) && labels.contains(&1) {
                break (scores, dist, labels);
            }
        };

        let n = rng.random_range(cfg.instances_min..=cfg.instances_max);
        let mut instances = Array2::zeros((n, d));
        for mut row in instances.outer_iter_mut() {
            let jittered = &scores + &Array1::from_shape_fn(t, |_| MIX_JITTER * normal(&mut rng));
            let weights = util::softmax(jittered.view());
            row.assign(&weights.dot(&prototypes));
            row.mapv_inplace(|v| v + FEATURE_NOISE * normal(&mut rng));
        }
        bags.push(Bag::new(instances, labels)?);
        truths.push(GroundTruthDistribution::new(dist.to_vec())?);
    }
    let ds = MimlDataset::new("synthetic", d, t, bags)?;
    Ok((ds, truths))
}
