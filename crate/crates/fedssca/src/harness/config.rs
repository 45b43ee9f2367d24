//! Experiment descriptions: TOML-backed config files and checked-in presets.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baselines::SgdConfig;
use crate::error::{Error, Result};
use crate::federation::{PartitionPolicy, RunConfig};
use crate::harness::data::SyntheticSpec;
use crate::model::Dims;
use crate::schedules::StepSchedule;

/// Environment variable naming the default directory for IDX files.
pub const DATA_DIR_ENV: &str = "FEDSSCA_DATA_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    SscaUnconstrained,
    SscaConstrained,
    Fedavg,
    Compare,
    PenaltyContinuation,
}

/// Where the samples come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSpec {
    /// IDX file pair; optional held-out pair for evaluation. Without one the
    /// training pair is split by `train_frac`.
    Idx {
        images: PathBuf,
        labels: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        test_images: Option<PathBuf>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        test_labels: Option<PathBuf>,
    },
    Synthetic(SyntheticSpec),
}

/// One experiment: data, model shape, federation layout, and the algorithm
/// parameters for the selected mode.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub mode: Mode,
    pub data: DataSpec,
    pub dims: Dims,
    pub clients: usize,
    pub partition: PartitionPolicy,
    /// Train share when the data source has no held-out part.
    #[serde(default = "default_train_frac")]
    pub train_frac: f64,
    pub run: RunConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sgd: Option<SgdConfig>,
    /// Increasing penalty stages for continuation mode.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub penalty_sequence: Vec<f64>,
    #[serde(default = "default_slack_tol")]
    pub slack_tol: f64,
    #[serde(default = "default_repeats")]
    pub repeats: u32,
}

fn default_train_frac() -> f64 {
    0.8
}

fn default_slack_tol() -> f64 {
    1e-3
}

fn default_repeats() -> u32 {
    1
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dims.k == 0 || self.dims.j == 0 || self.dims.l == 0 {
            return Err(Error::Config(format!(
                "dims must be positive, got {:?}",
                self.dims
            )));
        }
        if self.clients == 0 {
            return Err(Error::Config("need at least one client".into()));
        }
        if self.repeats == 0 {
            return Err(Error::Config("repeats must be >= 1".into()));
        }
        match &self.data {
            DataSpec::Synthetic(s) => {
                if s.k != self.dims.k || s.l != self.dims.l {
                    return Err(Error::Config(format!(
                        "synthetic data is {}x{} classes but dims say {}x{}",
                        s.k, s.l, self.dims.k, self.dims.l
                    )));
                }
            }
            DataSpec::Idx { images, labels, .. } => {
                for p in [images, labels] {
                    if !p.exists() {
                        return Err(Error::Config(format!("missing file: {}", p.display())));
                    }
                }
            }
        }
        match self.mode {
            Mode::Fedavg | Mode::Compare => {
                if self.sgd.is_none() {
                    return Err(Error::Config(
                        "fedavg/compare modes need an [sgd] section".into(),
                    ));
                }
            }
            Mode::PenaltyContinuation => {
                if self.penalty_sequence.is_empty() {
                    return Err(Error::Config(
                        "penalty_continuation mode needs a penalty_sequence".into(),
                    ));
                }
            }
            _ => {}
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let spec: Self =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Ok(spec)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(format!("serialize: {e}")))
    }
}

/// Directory holding IDX files: `$FEDSSCA_DATA_DIR`, defaulting to `data/`.
pub fn data_dir() -> PathBuf {
    std::env::var_os(DATA_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("data"))
}

/// Named, reproducible experiment descriptions.
pub fn preset(name: &str) -> Result<ExperimentSpec> {
    match name {
        "synthetic-small" => Ok(ExperimentSpec {
            mode: Mode::SscaUnconstrained,
            data: DataSpec::Synthetic(SyntheticSpec {
                n: 1000,
                k: 20,
                l: 4,
                margin: 1.0,
                seed: 7,
            }),
            dims: Dims::new(20, 16, 4),
            clients: 5,
            partition: PartitionPolicy::Iid,
            train_frac: 0.8,
            run: RunConfig {
                rounds: 300,
                batch_size: 10,
                tau: 0.1,
                lambda: 1e-5,
                penalty_c: 1e5,
                cost_limit: 0.5,
                schedule: StepSchedule::new(0.6, 0.9, 0.3, 0.35),
                seed: 1,
                init_scale: 0.1,
                threads: 0,
            },
            sgd: Some(SgdConfig {
                e: 2,
                batch_size: 5,
                lr_a: 0.5,
                lr_alpha: 0.4,
                rounds: 300,
                lambda: 1e-5,
                seed: 1,
                init_scale: 0.1,
                threads: 0,
            }),
            penalty_sequence: vec![1e2, 1e3, 1e4, 1e5],
            slack_tol: 1e-3,
            repeats: 5,
        }),
        "mnist-paper" => {
            let dir = data_dir();
            Ok(ExperimentSpec {
                mode: Mode::SscaConstrained,
                data: DataSpec::Idx {
                    images: dir.join("train-images-idx3-ubyte"),
                    labels: dir.join("train-labels-idx1-ubyte"),
                    test_images: None,
                    test_labels: None,
                },
                dims: Dims::new(784, 128, 10),
                clients: 10,
                partition: PartitionPolicy::Iid,
                train_frac: 0.8,
                run: RunConfig {
                    rounds: 100,
                    batch_size: 100,
                    tau: 0.1,
                    lambda: 0.0,
                    penalty_c: 1e5,
                    cost_limit: 0.13,
                    schedule: StepSchedule::new(0.9, 0.9, 0.3, 0.35),
                    seed: 1,
                    init_scale: 0.05,
                    threads: 0,
                },
                sgd: Some(SgdConfig {
                    e: 2,
                    batch_size: 50,
                    lr_a: 0.5,
                    lr_alpha: 0.4,
                    rounds: 100,
                    lambda: 0.0,
                    seed: 1,
                    init_scale: 0.05,
                    threads: 0,
                }),
                penalty_sequence: vec![1e2, 1e3, 1e4, 1e5],
                slack_tol: 1e-3,
                repeats: 1,
            })
        }
        other => Err(Error::Config(format!(
            "unknown preset '{other}' (known: synthetic-small, mnist-paper)"
        ))),
    }
}
