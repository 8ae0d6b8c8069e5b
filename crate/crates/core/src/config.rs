//! TOML experiment configuration and dataset preparation.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{load_idx, make_rot, permutation, split_train_val, ImageDataset};
use crate::error::{GcnError, Result};
use crate::model::ModelConfig;
use crate::network::FeatureShape;
use crate::train::TrainSchedule;

fn default_train_size() -> usize {
    2000
}

fn default_test_size() -> usize {
    1000
}

fn default_val_size() -> usize {
    500
}

fn default_full_val_size() -> usize {
    10_000
}

fn default_subset_seed() -> u64 {
    1
}

fn default_train_rot_seed() -> u64 {
    11
}

fn default_test_rot_seed() -> u64 {
    12
}

/// Where samples come from and how the desk-scale subsets are drawn.
///
/// Without a separate test file, the test, train and validation subsets are
/// disjoint slices of one seeded permutation of the training file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    #[serde(default)]
    pub test_images: Option<PathBuf>,
    #[serde(default)]
    pub test_labels: Option<PathBuf>,
    #[serde(default = "default_train_size")]
    pub train_size: usize,
    #[serde(default = "default_test_size")]
    pub test_size: usize,
    #[serde(default = "default_val_size")]
    pub val_size: usize,
    /// Use every available sample; validation is split off with `full_val_size`.
    #[serde(default)]
    pub full: bool,
    #[serde(default = "default_full_val_size")]
    pub full_val_size: usize,
    #[serde(default = "default_subset_seed")]
    pub subset_seed: u64,
    #[serde(default)]
    pub rotate: bool,
    #[serde(default = "default_train_rot_seed")]
    pub train_rot_seed: u64,
    #[serde(default = "default_test_rot_seed")]
    pub test_rot_seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub schedule: TrainSchedule,
    pub data: DataConfig,
    #[serde(default)]
    pub run: RunConfig,
}

pub const MNIST_SHAPE: FeatureShape = FeatureShape {
    channels: 1,
    height: 28,
    width: 28,
    orient_groups: None,
};

impl ExperimentConfig {
    /// Parses `path`; relative data paths are resolved against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| GcnError::io(path, e))?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| GcnError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.schedule.validate()?;
        if self.data.test_images.is_some() != self.data.test_labels.is_some() {
            return Err(GcnError::Config(
                "test_images and test_labels must be given together".into(),
            ));
        }
        Ok(())
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.data.train_images);
        fix(&mut self.data.train_labels);
        if let Some(p) = self.data.test_images.as_mut() {
            fix(p);
        }
        if let Some(p) = self.data.test_labels.as_mut() {
            fix(p);
        }
    }
}

#[derive(Debug, Clone)]
pub struct DataSplits {
    pub train: ImageDataset,
    pub val: ImageDataset,
    pub test: ImageDataset,
}

impl DataSplits {
    pub fn get(&self, name: &str) -> Result<&ImageDataset> {
        match name {
            "train" => Ok(&self.train),
            "val" => Ok(&self.val),
            "test" => Ok(&self.test),
            other => Err(GcnError::Config(format!("unknown split {other:?} (train, val, test)"))),
        }
    }
}

fn range(start: usize, len: usize) -> Vec<usize> {
    (start..start + len).collect()
}

/// Loads the configured files and draws the train, validation and test sets.
pub fn load_splits(cfg: &DataConfig) -> Result<DataSplits> {
    let source = load_idx(&cfg.train_images, &cfg.train_labels)?;
    let separate_test = match (&cfg.test_images, &cfg.test_labels) {
        (Some(i), Some(l)) => Some(load_idx(i, l)?),
        _ => None,
    };
    let perm = permutation(source.len(), cfg.subset_seed);
    let (pool, test) = match separate_test {
        Some(test) => {
            let test = if cfg.full {
                test
            } else {
                if cfg.test_size > test.len() {
                    return Err(GcnError::Config(format!(
                        "test_size {} exceeds the {} test samples",
                        cfg.test_size,
                        test.len()
                    )));
                }
                test.subset(&permutation(test.len(), cfg.subset_seed.wrapping_add(1))[..cfg.test_size])
            };
            (perm, test)
        }
        None => {
            if cfg.test_size > perm.len() {
                return Err(GcnError::Config(format!(
                    "test_size {} exceeds the {} samples",
                    cfg.test_size,
                    perm.len()
                )));
            }
            let test = source.subset(&perm[..cfg.test_size]);
            (perm[cfg.test_size..].to_vec(), test)
        }
    };
    let (train, val) = if cfg.full {
        let all = source.subset(&pool);
        let all = if cfg.rotate {
            make_rot(&all, cfg.train_rot_seed)?
        } else {
            all
        };
        split_train_val(&all, cfg.full_val_size.min(all.len()), cfg.subset_seed)?
    } else {
        let need = cfg.train_size + cfg.val_size;
        if need > pool.len() {
            return Err(GcnError::Config(format!(
                "train_size + val_size = {need} exceeds the {} samples left",
                pool.len()
            )));
        }
        let trainval = source.subset(&pool[..need]);
        let trainval = if cfg.rotate {
            make_rot(&trainval, cfg.train_rot_seed)?
        } else {
            trainval
        };
        (
            trainval.subset(&range(0, cfg.train_size)),
            trainval.subset(&range(cfg.train_size, cfg.val_size)),
        )
    };
    let test = if cfg.rotate {
        make_rot(&test, cfg.test_rot_seed)?
    } else {
        test
    };
    Ok(DataSplits { train, val, test })
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[model]
kind = "gcn"
widths = [10, 20, 40, 80]

[schedule]
epochs = 15

[data]
train_images = "images.idx"
train_labels = "labels.idx"
"#;

    #[test]
    fn defaults_fill_in() {
        let cfg = ExperimentConfig::parse(MINIMAL).unwrap();
        assert_eq!(cfg.model.kernel, 3);
        assert_eq!(cfg.model.orientations, 4);
        assert_eq!(cfg.schedule.batch_size, 128);
        assert_eq!(cfg.data.train_size, 2000);
        assert_eq!(cfg.data.test_size, 1000);
        assert!(!cfg.data.rotate);
        assert_eq!(cfg.run.seed, 0);
    }

    #[test]
    fn unknown_key_is_config_error() {
        let text = MINIMAL.replace("epochs = 15", "epochs = 15\nmomentum = 0.9");
        assert!(matches!(ExperimentConfig::parse(&text), Err(GcnError::Config(_))));
    }

    #[test]
    fn even_kernel_is_config_error() {
        let text = MINIMAL.replace("widths", "kernel = 4\nwidths");
        assert!(matches!(ExperimentConfig::parse(&text), Err(GcnError::Config(_))));
    }

    #[test]
    fn relative_paths_follow_config_dir() {
        let mut cfg = ExperimentConfig::parse(MINIMAL).unwrap();
        cfg.resolve_paths(Path::new("/cfg"));
        assert_eq!(cfg.data.train_images, PathBuf::from("/cfg/images.idx"));
    }

    #[test]
    fn config_round_trips_through_toml() {
        let cfg = ExperimentConfig::parse(MINIMAL).unwrap();
        let text = toml::to_string(&cfg).unwrap();
        assert_eq!(ExperimentConfig::parse(&text).unwrap(), cfg);
    }
}
