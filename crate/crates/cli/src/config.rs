use std::path::{Path, PathBuf};

use glemiml::data::generate_synthetic;
use glemiml::loss::SimilarityMode;
use glemiml::optim::OptimizerKind;
use glemiml::{GroundTruthDistribution, MimlDataset, SplitSpec, SynthConfig, TrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    /// `default` or comma-separated `key=value` overrides of the generator.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub synth: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    /// Write a checkpoint every N epochs; 0 keeps only the final model.
    pub checkpoint_every: usize,
    pub export_distributions: bool,
    pub dump_graph: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    pub split: SplitSpec,
    pub train: TrainConfig,
    pub output: OutputConfig,
}

/// Flag values that override the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub data: Option<PathBuf>,
    pub synth: Option<String>,
    pub seed: Option<u64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub optimizer: Option<String>,
    pub similarity: Option<String>,
    pub depth: Option<usize>,
    pub embed_dim: Option<usize>,
    pub instance_k: Option<usize>,
    pub label_k: Option<usize>,
    pub beta: Option<[f64; 3]>,
    pub rho: Option<f64>,
    pub gamma_pos: Option<f64>,
    pub gamma_neg: Option<f64>,
    pub out: Option<PathBuf>,
    pub checkpoint_every: Option<usize>,
    pub export_distributions: bool,
    pub dump_graph: bool,
}

pub enum DataSource {
    File(PathBuf),
    Synthetic(SynthConfig),
}

pub struct LoadedData {
    pub dataset: MimlDataset,
    pub truth: Option<Vec<GroundTruthDistribution>>,
}

impl ExperimentConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(ExperimentConfig::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<(), CliError> {
        if let Some(p) = &o.data {
            self.data = DataConfig {
                path: Some(p.clone()),
                synth: None,
            };
        }
        if let Some(s) = &o.synth {
            self.data = DataConfig {
                path: None,
                synth: Some(s.clone()),
            };
        }
        if let Some(seed) = o.seed {
            self.train.seed = seed;
            self.split.seed = seed;
        }
        let t = &mut self.train;
        set(&mut t.epochs, o.epochs);
        set(&mut t.batch_size, o.batch_size);
        set(&mut t.learning_rate, o.learning_rate);
        set(&mut t.classifier_depth, o.depth);
        set(&mut t.embed_dim, o.embed_dim);
        set(&mut t.instance_k, o.instance_k);
        set(&mut t.label_k, o.label_k);
        if let Some(s) = &o.optimizer {
            t.optimizer = s.parse::<OptimizerKind>()?;
        }
        if let Some(s) = &o.similarity {
            t.similarity = s.parse::<SimilarityMode>()?;
        }
        if let Some([b1, b2, b3]) = o.beta {
            t.loss.beta1 = b1;
            t.loss.beta2 = b2;
            t.loss.beta3 = b3;
        }
        set(&mut t.loss.rho, o.rho);
        set(&mut t.loss.gamma_pos, o.gamma_pos);
        set(&mut t.loss.gamma_neg, o.gamma_neg);
        if let Some(dir) = &o.out {
            self.output.dir = Some(dir.clone());
        }
        set(&mut self.output.checkpoint_every, o.checkpoint_every);
        self.output.export_distributions |= o.export_distributions;
        self.output.dump_graph |= o.dump_graph;
        Ok(())
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.source()?;
        self.split.validate()?;
        self.train.validate()?;
        Ok(())
    }

    pub fn source(&self) -> Result<DataSource, CliError> {
        match (&self.data.path, &self.data.synth) {
            (Some(p), None) => Ok(DataSource::File(p.clone())),
            (None, Some(spec)) => Ok(DataSource::Synthetic(parse_synth(spec)?)),
            (None, None) => Err(CliError::Config("no data source: pass --data FILE or --synth SPEC".into())),
            (Some(_), Some(_)) => Err(CliError::Config("choose either a dataset path or a synth spec, not both".into())),
        }
    }

    pub fn load_data(&self) -> Result<LoadedData, CliError> {
        match self.source()? {
            DataSource::File(path) => Ok(LoadedData {
                dataset: MimlDataset::load(path)?,
                truth: None,
            }),
            DataSource::Synthetic(cfg) => {
                let (dataset, truth) = generate_synthetic(&cfg)?;
                Ok(LoadedData {
                    dataset,
                    truth: Some(truth),
                })
            }
        }
    }

    /// Hash of everything that determines the results; output settings are
    /// excluded.
    pub fn hash(&self) -> String {
        #[derive(Serialize)]
        struct Hashed<'a> {
            data: &'a DataConfig,
            split: &'a SplitSpec,
            train: &'a TrainConfig,
        }
        let text = serde_json::to_string(&Hashed {
            data: &self.data,
            split: &self.split,
            train: &self.train,
        })
        .expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string_pretty(self).map_err(|e| CliError::Config(e.to_string()))
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

/// Parses `default` or `key=value,...` into a generator config.
pub fn parse_synth(spec: &str) -> Result<SynthConfig, CliError> {
    let mut cfg = SynthConfig::default();
    for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        if part == "default" {
            continue;
        }
        let (key, value) = part
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("synth spec entry `{part}` is not key=value")))?;
        let bad = |_| CliError::Config(format!("synth spec `{key}` needs a non-negative integer, got `{value}`"));
        let n: u64 = value.trim().parse().map_err(bad)?;
        match key.trim() {
            "num_bags" => cfg.num_bags = n as usize,
            "feature_dim" => cfg.feature_dim = n as usize,
            "label_count" => cfg.label_count = n as usize,
            "instances_min" => cfg.instances_min = n as usize,
            "instances_max" => cfg.instances_max = n as usize,
            "seed" => cfg.seed = n,
            other => return Err(CliError::Config(format!("unknown synth spec key `{other}`"))),
        }
    }
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synth_spec_parsing() {
        assert_eq!(parse_synth("default").unwrap(), SynthConfig::default());
        let c = parse_synth("num_bags=40, seed=3").unwrap();
        assert_eq!((c.num_bags, c.seed, c.feature_dim), (40, 3, 10));
        assert!(parse_synth("bags=3").is_err());
        assert!(parse_synth("seed=x").is_err());
        assert!(parse_synth("seed").is_err());
    }

    #[test]
    fn flags_override_file_values() {
        let mut cfg: ExperimentConfig = toml::from_str(
            "[data]\nsynth = \"default\"\n[train]\nepochs = 9\nseed = 1\n[train.loss]\nrho = 0.25\n",
        )
        .unwrap();
        assert_eq!(cfg.train.epochs, 9);
        assert_eq!(cfg.train.loss.rho, 0.25);
        assert_eq!(cfg.train.loss.gamma_neg, 4.0);
        cfg.apply(&Overrides {
            epochs: Some(3),
            seed: Some(5),
            similarity: Some("signed-sum".into()),
            ..Overrides::default()
        })
        .unwrap();
        assert_eq!((cfg.train.epochs, cfg.train.seed, cfg.split.seed), (3, 5, 5));
        assert_eq!(cfg.train.similarity, SimilarityMode::SignedSum);
        cfg.validate().unwrap();
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<ExperimentConfig>("[train]\nepoch = 3\n").is_err());
    }

    #[test]
    fn toml_roundtrip_and_hash() {
        let mut cfg = ExperimentConfig::default();
        cfg.data.synth = Some("default".into());
        let text = cfg.to_toml().unwrap();
        let back: ExperimentConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
        let mut other = cfg.clone();
        other.output.dir = Some("elsewhere".into());
        assert_eq!(other.hash(), cfg.hash());
        other.train.epochs += 1;
        assert_ne!(other.hash(), cfg.hash());
    }

    #[test]
    fn data_source_must_be_unique() {
        let mut cfg = ExperimentConfig::default();
        assert!(matches!(cfg.validate(), Err(CliError::Config(_))));
        cfg.data.path = Some("x.jsonl".into());
        cfg.data.synth = Some("default".into());
        assert!(matches!(cfg.validate(), Err(CliError::Config(_))));
    }
}
