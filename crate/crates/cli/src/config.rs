//! Run configuration: a TOML file with one section per module.
//!
//! Resolution order, highest first: command-line flag, `PRLF_*` environment
//! variable, config file, built-in default. Flags and environment variables
//! are merged by the argument parser; [`Overrides::apply`] then layers them
//! over the file. Unknown keys anywhere in the file are errors.

use std::path::Path;

use prlf::datagen::{ModalitySubset, SynthConfig};
use prlf::evalbench::{default_rates, F1Mode, DEFAULT_SEEDS};
use prlf::model::ModelConfig;
use prlf::training::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub train_samples: usize,
    pub val_samples: usize,
    pub test_samples: usize,
    pub noise: f64,
    pub amplitude: f64,
    /// Probability of each modality being the informative one, (V, A, L).
    pub informative: [f64; 3],
    pub key_frames: usize,
    pub seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        let s = SynthConfig::default();
        Self {
            train_samples: s.samples,
            val_samples: 300,
            test_samples: 300,
            noise: s.noise,
            amplitude: s.amplitude,
            informative: s.informative,
            key_frames: s.key_frames,
            seed: s.seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub f1: F1Mode,
    /// Mask seeds averaged over by sweeps and ablations.
    pub seeds: Vec<u64>,
    /// Intra-modality rates of the degradation sweep.
    pub rates: Vec<f64>,
    /// Rates of the phase diagnostic.
    pub phase_rates: Vec<f64>,
    /// Intra-modality rate for `eval` and `ablate`.
    pub p: f64,
    /// Available modalities for `eval`.
    pub subset: ModalitySubset,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            f1: F1Mode::Binary,
            seeds: DEFAULT_SEEDS.to_vec(),
            rates: default_rates(),
            phase_rates: vec![0.0, 0.3, 0.6, 0.9],
            p: 0.0,
            subset: ModalitySubset::FULL,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::MissingFile {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text).map_err(|message| CliError::ConfigFile {
            path: path.to_path_buf(),
            message,
        })
    }

    /// Generator settings for `samples` samples; shapes and classes come
    /// from the model section.
    pub fn synth(&self, samples: usize) -> SynthConfig {
        SynthConfig {
            samples,
            classes: self.model.classes,
            dims: self.model.dims,
            noise: self.data.noise,
            amplitude: self.data.amplitude,
            informative: self.data.informative,
            key_frames: self.data.key_frames,
            seed: self.data.seed,
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.model.validate()?;
        self.train.validate()?;
        for n in [self.data.train_samples, self.data.val_samples, self.data.test_samples] {
            self.synth(n.max(1)).validate()?;
        }
        if self.eval.seeds.is_empty() {
            return Err(CliError::Usage("eval.seeds must not be empty".into()));
        }
        let rates = self.eval.rates.iter().chain(&self.eval.phase_rates).chain([&self.eval.p]);
        for &r in rates {
            if !(0.0..=1.0).contains(&r) {
                return Err(CliError::Usage(format!("missing rate {r} outside [0,1]")));
            }
        }
        Ok(())
    }
}

/// Values taken from flags or the environment.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub epochs: Option<usize>,
    pub steps: Option<usize>,
    pub p: Option<f64>,
    pub subset: Option<ModalitySubset>,
}

impl Overrides {
    /// `seed` drives both data generation and training.
    pub fn apply(&self, config: &mut RunConfig) {
        if let Some(s) = self.seed {
            config.data.seed = s;
            config.train.seed = s;
        }
        if let Some(e) = self.epochs {
            config.train.epochs = e;
        }
        if let Some(s) = self.steps {
            config.model.interaction.steps = s;
        }
        if let Some(p) = self.p {
            config.eval.p = p;
        }
        if let Some(s) = self.subset {
            config.eval.subset = s;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_the_default() {
        assert_eq!(RunConfig::from_toml("").unwrap(), RunConfig::default());
    }

    #[test]
    fn sections_and_nested_interaction() {
        let c = RunConfig::from_toml(
            "[train]\nepochs = 3\n[model]\nwidth = 8\n[model.interaction]\nsteps = 2\n[eval]\nsubset = \"la\"\nf1 = \"weighted\"\n",
        )
        .unwrap();
        assert_eq!(c.train.epochs, 3);
        assert_eq!(c.model.width, 8);
        assert_eq!(c.model.interaction.steps, 2);
        assert_eq!(c.eval.subset.to_string(), "la");
        assert_eq!(c.eval.f1, F1Mode::Weighted);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_toml("[train]\nepoch = 3\n").is_err());
        assert!(RunConfig::from_toml("[trian]\nepochs = 3\n").is_err());
        assert!(RunConfig::from_toml("[model.interaction]\nstep = 3\n").is_err());
        assert!(RunConfig::from_toml("seed = 1\n").is_err());
    }

    #[test]
    fn overrides_beat_the_file() {
        let mut c = RunConfig::from_toml("[train]\nepochs = 3\nseed = 9\n[data]\nseed = 9\n").unwrap();
        Overrides {
            seed: Some(4),
            epochs: Some(7),
            ..Default::default()
        }
        .apply(&mut c);
        assert_eq!((c.train.epochs, c.train.seed, c.data.seed), (7, 4, 4));
        let mut d = RunConfig::from_toml("[train]\nepochs = 3\n").unwrap();
        Overrides::default().apply(&mut d);
        assert_eq!(d.train.epochs, 3);
    }

    #[test]
    fn default_config_round_trips_through_toml() {
        let c = RunConfig::default();
        let text = toml::to_string(&c).unwrap();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), c);
    }
}
