//! Experiment configuration: optional TOML file, flag overrides on top, and
//! the fully-resolved echo written next to every command's artifacts.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use vaelab::trainer::{AugmentConfig, TrainConfig, DEFAULT_BETAS};
use vaelab::vae::Arch;

use crate::{CliError, CliResult};

pub const DATA_DIR_ENV: &str = "VAELAB_DATA_DIR";

/// Values as they appear in a config file; every field optional.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub data_dir: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub classifier_cache: Option<PathBuf>,
    pub seed: Option<u64>,
    pub arch: Option<String>,
    pub beta: Option<f64>,
    pub betas: Option<Vec<f64>>,
    pub jobs: Option<usize>,
    #[serde(default)]
    pub augment: AugmentFile,
    #[serde(default)]
    pub metrics: MetricsFile,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentFile {
    pub enabled: Option<bool>,
    pub gen_start_step: Option<usize>,
    pub p_sampled: Option<f64>,
    pub n_augmented: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsFile {
    pub n_samples: Option<usize>,
    pub n_reps: Option<usize>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> CliResult<FileConfig> {
        let Some(path) = path else {
            return Ok(FileConfig::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text)
            .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
    }
}

/// Flag values gathered from the command line; None means "not given".
#[derive(Debug, Default)]
pub struct Overrides {
    pub data_dir: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub classifier_cache: Option<PathBuf>,
    pub seed: Option<u64>,
    pub arch: Option<String>,
    pub beta: Option<f64>,
    pub betas: Option<Vec<f64>>,
    pub jobs: Option<usize>,
    pub augment: Option<bool>,
    pub gen_start_step: Option<usize>,
    pub p_sampled: Option<f64>,
    pub n_augmented: Option<usize>,
    pub n_samples: Option<usize>,
    pub n_reps: Option<usize>,
}

/// A fully-resolved experiment: flags beat the config file, the config file
/// beats environment and defaults.
#[derive(Debug, Clone, Serialize)]
pub struct Settings {
    pub command: String,
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    pub classifier_cache: PathBuf,
    pub seed: u64,
    pub arch: String,
    pub beta: f64,
    pub betas: Vec<f64>,
    pub jobs: usize,
    pub augment: ResolvedAugment,
    pub metrics: ResolvedMetrics,
}

#[derive(Debug, Clone, Serialize)]
pub struct ResolvedAugment {
    pub enabled: bool,
    pub gen_start_step: usize,
    pub p_sampled: f64,
    pub n_augmented: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct ResolvedMetrics {
    pub n_samples: usize,
    pub n_reps: usize,
}

impl Settings {
    pub fn resolve(command: &str, file: &FileConfig, flags: &Overrides) -> CliResult<Settings> {
        let data_dir = flags
            .data_dir
            .clone()
            .or_else(|| file.data_dir.clone())
            .or_else(|| std::env::var_os(DATA_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("data/mnist"));
        let classifier_cache = flags
            .classifier_cache
            .clone()
            .or_else(|| file.classifier_cache.clone())
            .unwrap_or_else(|| data_dir.join("classifier.ckpt"));
        let arch = flags
            .arch
            .clone()
            .or_else(|| file.arch.clone())
            .unwrap_or_else(|| "fc".to_string());
        if Arch::from_tag(&arch).is_err() {
            return Err(CliError::Usage(format!(
                "unknown architecture {arch:?} (expected \"fc\" or \"conv\")"
            )));
        }
        let beta = flags.beta.or(file.beta).unwrap_or(0.048);
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(CliError::Usage(format!(
                "beta must be positive and finite, got {beta}"
            )));
        }
        let betas = flags
            .betas
            .clone()
            .or_else(|| file.betas.clone())
            .unwrap_or_else(|| DEFAULT_BETAS.to_vec());
        if betas.is_empty() {
            return Err(CliError::Usage("beta grid is empty".into()));
        }
        if let Some(bad) = betas.iter().find(|b| !(**b > 0.0 && b.is_finite())) {
            return Err(CliError::Usage(format!(
                "beta grid values must be positive and finite, got {bad}"
            )));
        }
        let jobs = flags.jobs.or(file.jobs).unwrap_or(1);
        if jobs == 0 {
            return Err(CliError::Usage("jobs must be at least 1".into()));
        }
        let augment = ResolvedAugment {
            enabled: flags.augment.or(file.augment.enabled).unwrap_or(false),
            gen_start_step: flags
                .gen_start_step
                .or(file.augment.gen_start_step)
                .unwrap_or(2400),
            p_sampled: flags.p_sampled.or(file.augment.p_sampled).unwrap_or(1.0),
            n_augmented: flags.n_augmented.or(file.augment.n_augmented).unwrap_or(50),
        };
        if !(0.0..=1.0).contains(&augment.p_sampled) {
            return Err(CliError::Usage(format!(
                "p-sampled must lie in [0, 1], got {}",
                augment.p_sampled
            )));
        }
        if augment.gen_start_step == 0 {
            return Err(CliError::Usage("gen-start-step is 1-indexed".into()));
        }
        if augment.n_augmented == 0 {
            return Err(CliError::Usage("n-augmented must be at least 1".into()));
        }
        let metrics = ResolvedMetrics {
            n_samples: flags.n_samples.or(file.metrics.n_samples).unwrap_or(10000),
            n_reps: flags.n_reps.or(file.metrics.n_reps).unwrap_or(10),
        };
        if metrics.n_samples < 2 {
            return Err(CliError::Usage(
                "n-samples must be at least 2 to fit statistics".into(),
            ));
        }
        Ok(Settings {
            command: command.to_string(),
            data_dir,
            out_dir: flags
                .out_dir
                .clone()
                .or_else(|| file.out_dir.clone())
                .unwrap_or_else(|| PathBuf::from("out")),
            classifier_cache,
            seed: flags.seed.or(file.seed).unwrap_or(42),
            arch,
            beta,
            betas,
            jobs,
            augment,
            metrics,
        })
    }

    pub fn arch(&self) -> Arch {
        Arch::from_tag(&self.arch).expect("validated at resolution")
    }

    /// Training configuration for this settings's β and architecture.
    pub fn train_config(&self) -> TrainConfig {
        let mut config = TrainConfig::new(self.arch(), self.beta, self.seed);
        if self.augment.enabled {
            config.augment = Some(AugmentConfig {
                gen_start_step: self.augment.gen_start_step,
                p_sampled: self.augment.p_sampled,
                n_augmented: self.augment.n_augmented,
            });
        }
        config
    }

    /// Writes the resolved settings to `resolved.toml` in the output directory.
    /// Contains no timestamps, so reruns produce identical bytes.
    pub fn echo(&self) -> CliResult<()> {
        std::fs::create_dir_all(&self.out_dir).map_err(|e| CliError::runtime(&self.out_dir, e))?;
        let text = toml::to_string_pretty(self)
            .map_err(|e| CliError::Runtime(anyhow::anyhow!("serializing settings: {e}")))?;
        let path = self.out_dir.join("resolved.toml");
        std::fs::write(&path, text).map_err(|e| CliError::runtime(&path, e))?;
        Ok(())
    }
}
