//! Benchmark configuration files.
//!
//! A configuration is a TOML document with five sections. Only `[cluster]`,
//! `[executor]` and `[hpo]` are meant to be edited; `[benchmark]` holds the
//! rules every submission shares, and `[dataset]` may be shrunk for testing
//! at the price of marking the run nonstandard. Every key is optional.
//!
//! ```toml
//! [benchmark]                 # fixed; any other value is rejected
//! nas_method = "network-morphism"
//! hpo_method = "bayesian"
//! seed_architecture = "resnet50"
//! min_precision_bits = 16
//! max_error = 0.3
//!
//! [dataset]                   # changing anything marks the run nonstandard
//! name = "imagenet"
//! train_images = 1281167
//! val_images = 50000
//! image_shape = "224x224x3"
//! num_classes = 1000
//!
//! [cluster]
//! replica_count = 1
//! accelerators_per_replica = 8
//! peak_ops_per_accelerator = 1.25e14
//! efficiency = 0.5
//! epoch_overhead_seconds = 10.0
//! run_budget_seconds = 36000.0
//! max_epoch = 60
//! patience = 5
//! rng_seed = 42
//! shared_history = true
//!
//! [executor]
//! kind = "simulated"          # or "command"
//! command_template = ""       # required for "command"
//! work_dir = "work"
//! schedule = "deterministic"  # or "threaded"
//!
//! [hpo]
//! batch_size = 448
//! kernel_size = 3
//! learning_rate = 0.1
//! learning_rate_schedule = "linear-decay"
//! optimizer = "sgd-momentum"
//! loss = "categorical-crossentropy"
//! parallel_data_transformation = 48
//! ```
//!
//! The `[hpo]` training settings are recorded in the run log and exported
//! to command executors as `AIPERF_*` environment variables; the simulator
//! ignores them. `batch_size` and `kernel_size` are the hyperparameters the
//! seed architecture is trained with.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::TensorShape;
use crate::harness::{ClusterConfig, Schedule};
use crate::hpo::HyperParams;
use crate::opcount::DatasetDescriptor;

pub const SEED_ENV: &str = "AIPERF_SEED";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading config: {0}")]
    Io(#[from] std::io::Error),
    #[error("config syntax: {0}")]
    Parse(String),
    #[error("`{field}` is fixed at {expected}; found {found}")]
    FixedFieldOverride { field: String, expected: String, found: String },
    #[error("out of range: {0}")]
    Range(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FixedSettings {
    pub nas_method: String,
    pub hpo_method: String,
    pub seed_architecture: String,
    pub min_precision_bits: u32,
    pub max_error: f64,
}

impl Default for FixedSettings {
    fn default() -> Self {
        FixedSettings {
            nas_method: "network-morphism".into(),
            hpo_method: "bayesian".into(),
            seed_architecture: "resnet50".into(),
            min_precision_bits: 16,
            max_error: crate::score::MAX_ERROR,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSettings {
    pub name: String,
    pub train_images: u64,
    pub val_images: u64,
    pub image_shape: String,
    pub num_classes: u32,
}

impl Default for DatasetSettings {
    fn default() -> Self {
        DatasetSettings {
            name: "imagenet".into(),
            train_images: DatasetDescriptor::IMAGENET_TRAIN,
            val_images: DatasetDescriptor::IMAGENET_VAL,
            image_shape: "224x224x3".into(),
            num_classes: 1000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ExecutorKind {
    #[default]
    Simulated,
    Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    #[default]
    Deterministic,
    Threaded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExecutorSettings {
    pub kind: ExecutorKind,
    pub command_template: String,
    /// Relative paths are resolved against the run's output directory.
    pub work_dir: String,
    pub schedule: ScheduleKind,
}

impl Default for ExecutorSettings {
    fn default() -> Self {
        ExecutorSettings {
            kind: ExecutorKind::Simulated,
            command_template: String::new(),
            work_dir: "work".into(),
            schedule: ScheduleKind::Deterministic,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HpoSettings {
    pub batch_size: u32,
    pub kernel_size: u32,
    pub learning_rate: f64,
    pub learning_rate_schedule: String,
    pub optimizer: String,
    pub loss: String,
    pub parallel_data_transformation: u32,
}

impl Default for HpoSettings {
    fn default() -> Self {
        HpoSettings {
            batch_size: crate::hpo::DEFAULT_BATCH_SIZE,
            kernel_size: crate::hpo::DEFAULT_KERNEL_SIZE,
            learning_rate: 0.1,
            learning_rate_schedule: "linear-decay".into(),
            optimizer: "sgd-momentum".into(),
            loss: "categorical-crossentropy".into(),
            parallel_data_transformation: 48,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub benchmark: FixedSettings,
    pub dataset: DatasetSettings,
    pub cluster: ClusterConfig,
    pub executor: ExecutorSettings,
    pub hpo: HpoSettings,
}

/// Rejects any attempt to set a fixed field to something else. Fixed keys
/// are also caught at the top level, where they would otherwise be reported
/// as unknown.
fn check_fixed(doc: &toml::Table) -> Result<(), ConfigError> {
    let fixed = toml::Table::try_from(FixedSettings::default()).expect("fixed settings serialize");
    let mut places: Vec<&toml::Table> = vec![doc];
    if let Some(toml::Value::Table(t)) = doc.get("benchmark") {
        places.push(t);
    }
    for table in places {
        for (key, expected) in &fixed {
            let Some(found) = table.get(key) else { continue };
            let same = match (expected, found) {
                (toml::Value::Float(a), toml::Value::Float(b)) => a == b,
                (toml::Value::Float(a), toml::Value::Integer(b)) => *a == *b as f64,
                (toml::Value::Integer(a), toml::Value::Float(b)) => *a as f64 == *b,
                (a, b) => a == b,
            };
            if !same {
                return Err(ConfigError::FixedFieldOverride {
                    field: key.clone(),
                    expected: expected.to_string(),
                    found: found.to_string(),
                });
            }
        }
    }
    Ok(())
}

impl BenchmarkConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let doc: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        check_fixed(&doc)?;
        let config: BenchmarkConfig = doc.try_into().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.cluster.validate().map_err(|e| ConfigError::Range(e.to_string()))?;
        if self.cluster.rng_seed > i64::MAX as u64 {
            return Err(ConfigError::Range(format!("rng_seed {} exceeds {}", self.cluster.rng_seed, i64::MAX)));
        }
        self.dataset()?;
        self.default_hyperparams()?;
        if !(self.hpo.learning_rate.is_finite() && self.hpo.learning_rate > 0.0) {
            return Err(ConfigError::Range("learning_rate must be positive".into()));
        }
        if self.executor.kind == ExecutorKind::Command && self.executor.command_template.trim().is_empty() {
            return Err(ConfigError::Range("command executor needs a command_template".into()));
        }
        Ok(())
    }

    pub fn dataset(&self) -> Result<DatasetDescriptor, ConfigError> {
        let shape: TensorShape = self.dataset.image_shape.parse().map_err(|e| ConfigError::Range(format!("{e}")))?;
        if self.dataset.num_classes == 0 {
            return Err(ConfigError::Range("num_classes must be positive".into()));
        }
        DatasetDescriptor::new(self.dataset.train_images, self.dataset.val_images, shape)
            .map_err(|e| ConfigError::Range(e.to_string()))
    }

    pub fn default_hyperparams(&self) -> Result<HyperParams, ConfigError> {
        HyperParams::new(self.hpo.batch_size, self.hpo.kernel_size).map_err(|e| ConfigError::Range(e.to_string()))
    }

    /// True when the dataset differs from the standard ImageNet setup.
    pub fn nonstandard(&self) -> bool {
        self.dataset != DatasetSettings::default()
    }

    pub fn schedule(&self) -> Schedule {
        match self.executor.schedule {
            ScheduleKind::Deterministic => Schedule::Deterministic,
            ScheduleKind::Threaded => Schedule::Threaded,
        }
    }

    /// Replaces the seed with the value of [`SEED_ENV`], if given.
    pub fn with_seed_override(mut self, value: Option<&str>) -> Result<Self, ConfigError> {
        if let Some(v) = value {
            let seed: u64 = v
                .trim()
                .parse()
                .map_err(|_| ConfigError::Range(format!("{SEED_ENV}={v} is not a non-negative integer")))?;
            self.cluster.rng_seed = seed;
            self.validate()?;
        }
        Ok(self)
    }

    /// Training settings for external trainers.
    pub fn executor_env(&self) -> Vec<(String, String)> {
        vec![
            ("AIPERF_LEARNING_RATE".into(), self.hpo.learning_rate.to_string()),
            ("AIPERF_LR_SCHEDULE".into(), self.hpo.learning_rate_schedule.clone()),
            ("AIPERF_OPTIMIZER".into(), self.hpo.optimizer.clone()),
            ("AIPERF_LOSS".into(), self.hpo.loss.clone()),
            ("AIPERF_DATA_WORKERS".into(), self.hpo.parallel_data_transformation.to_string()),
            ("AIPERF_MIN_PRECISION_BITS".into(), self.benchmark.min_precision_bits.to_string()),
            ("AIPERF_NUM_CLASSES".into(), self.dataset.num_classes.to_string()),
        ]
    }
}

pub fn load_config(path: &Path) -> Result<BenchmarkConfig, ConfigError> {
    BenchmarkConfig::from_toml(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_file_gets_defaults() {
        let c = BenchmarkConfig::from_toml("[cluster]\nreplica_count = 2\n").unwrap();
        assert_eq!(c.cluster.replica_count, 2);
        assert_eq!(c.hpo.batch_size, 448);
        assert_eq!(c.cluster.max_epoch, 60);
        assert_eq!(c.benchmark, FixedSettings::default());
        assert!(!c.nonstandard());
        assert!(c.dataset().unwrap().is_imagenet());
    }

    #[test]
    fn fixed_fields_are_guarded() {
        let err = BenchmarkConfig::from_toml("[benchmark]\nmax_error = 0.5\n").unwrap_err();
        assert!(matches!(err, ConfigError::FixedFieldOverride { ref field, .. } if field == "max_error"));
        assert!(matches!(BenchmarkConfig::from_toml("max_error = 0.5\n"), Err(ConfigError::FixedFieldOverride { .. })));
        assert!(matches!(
            BenchmarkConfig::from_toml("[benchmark]\nhpo_method = \"random\"\n"),
            Err(ConfigError::FixedFieldOverride { .. })
        ));
        assert!(matches!(
            BenchmarkConfig::from_toml("[benchmark]\nmin_precision_bits = 8\n"),
            Err(ConfigError::FixedFieldOverride { .. })
        ));
        assert!(BenchmarkConfig::from_toml("[benchmark]\nmax_error = 0.3\nmin_precision_bits = 16\n").is_ok());
    }

    #[test]
    fn small_dataset_is_nonstandard() {
        let c = BenchmarkConfig::from_toml("[dataset]\ntrain_images = 10\nval_images = 10\n").unwrap();
        assert!(c.nonstandard());
        assert_eq!(c.dataset().unwrap().train_images(), 10);
    }

    #[test]
    fn range_and_syntax_errors() {
        assert!(matches!(BenchmarkConfig::from_toml("[cluster]\nefficiency = 2.0\n"), Err(ConfigError::Range(_))));
        assert!(matches!(BenchmarkConfig::from_toml("[hpo]\nbatch_size = 100\n"), Err(ConfigError::Range(_))));
        assert!(matches!(BenchmarkConfig::from_toml("[dataset]\nimage_shape = \"224x224\"\n"), Err(ConfigError::Range(_))));
        assert!(matches!(BenchmarkConfig::from_toml("[executor]\nkind = \"command\"\n"), Err(ConfigError::Range(_))));
        assert!(matches!(BenchmarkConfig::from_toml("[cluster\n"), Err(ConfigError::Parse(_))));
        assert!(matches!(BenchmarkConfig::from_toml("[cluster]\nbogus = 1\n"), Err(ConfigError::Parse(_))));
    }

    #[test]
    fn round_trip() {
        let c = BenchmarkConfig::from_toml("[cluster]\nreplica_count = 3\nrng_seed = 7\n[executor]\nschedule = \"threaded\"\n").unwrap();
        assert_eq!(BenchmarkConfig::from_toml(&c.to_toml()).unwrap(), c);
        assert_eq!(c.schedule(), Schedule::Threaded);
    }

    #[test]
    fn seed_override() {
        let c = BenchmarkConfig::default().with_seed_override(Some("99")).unwrap();
        assert_eq!(c.cluster.rng_seed, 99);
        assert!(BenchmarkConfig::default().with_seed_override(Some("x")).is_err());
        assert_eq!(BenchmarkConfig::default().with_seed_override(None).unwrap().cluster.rng_seed, 42);
    }
}
