//! Experiment configuration: one TOML file drives every subcommand. All
//! defaults are explicit so the echoed effective config shows every knob,
//! and re-running from the echo reproduces results byte for byte.

use serde::{Deserialize, Serialize};

use fewstep::denoise::{NetSpec, Pathway};
use fewstep::geom::{GmmSpec, ToyKind, ToySpec};
use fewstep::metrics::MetricParams;
use fewstep::sampler::{SamplerConfig, SamplerMode};
use fewstep::train::{EvalProtocol, TrainConfig};

/// Which denoiser backend a run uses.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "backend", rename_all = "kebab-case")]
pub enum DenoiserConfig {
    /// Exact Gaussian-mixture posterior-mean oracle.
    GmmAnalytic { gmm: GmmSpec<f64> },
    /// Trainable stacked-residual network (checkpoint or fresh).
    ResidualNet {
        #[serde(flatten)]
        spec: NetSpec,
    },
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        DenoiserConfig::ResidualNet {
            spec: NetSpec::default(),
        }
    }
}

/// Sweep axes: the cross product of sampler modes, step scales and step
/// counts, scored over a grid of seeds and samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub modes: Vec<SamplerMode>,
    pub etas: Vec<f64>,
    pub steps: Vec<usize>,
    pub n_seeds: usize,
    pub n_samples: usize,
    /// Parallel workers for sweep cells; row order is deterministic
    /// regardless.
    pub workers: usize,
    pub pathway: Pathway,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            modes: vec![SamplerMode::Ode],
            etas: vec![1.0, 1.5],
            steps: vec![1, 2, 10, 100],
            n_seeds: 20,
            n_samples: 1,
            workers: 1,
            pathway: Pathway::A,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> fewstep::Result<()> {
        if self.modes.is_empty() || self.etas.is_empty() || self.steps.is_empty() {
            return Err(fewstep::Error::validation("sweep axes must be non-empty"));
        }
        if self.n_seeds == 0 || self.n_samples == 0 {
            return Err(fewstep::Error::validation("sweep grid must be non-empty"));
        }
        if self.workers == 0 {
            return Err(fewstep::Error::validation("need at least one worker"));
        }
        Ok(())
    }
}

fn default_data() -> ToySpec<f64> {
    ToySpec {
        kind: ToyKind::PolymerHelix,
        atoms: 16,
        n_chains: 1,
        bond_length: 1.5,
        gmm: None,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub master_seed: u64,
    /// Default output directory; the `--out` flag overrides it.
    pub out_dir: std::path::PathBuf,
    pub data: ToySpec<f64>,
    pub denoiser: DenoiserConfig,
    pub train: TrainConfig<f64>,
    pub sampler: SamplerConfig<f64>,
    pub metrics: MetricParams<f64>,
    pub eval: EvalProtocol<f64>,
    pub sweep: SweepConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            master_seed: 0,
            out_dir: std::path::PathBuf::from("out"),
            data: default_data(),
            denoiser: DenoiserConfig::default(),
            train: TrainConfig::default(),
            sampler: SamplerConfig::default(),
            metrics: MetricParams::default(),
            eval: EvalProtocol::default(),
            sweep: SweepConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Parses the file and applies the master seed to the training
    /// section so one value controls the whole run.
    pub fn load(path: &std::path::Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
        let mut cfg: ExperimentConfig =
            toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        cfg.train.seed = cfg.master_seed;
        cfg.validate().map_err(|e| format!("{}: {e}", path.display()))?;
        Ok(cfg)
    }

    pub fn validate(&self) -> fewstep::Result<()> {
        self.data.validate()?;
        self.train.validate()?;
        self.sampler.validate()?;
        self.sweep.validate()?;
        if let DenoiserConfig::GmmAnalytic { gmm } = &self.denoiser {
            gmm.validate()?;
        }
        if let DenoiserConfig::ResidualNet { spec } = &self.denoiser {
            spec.validate()?;
        }
        Ok(())
    }

    /// The effective configuration, serialized for the output directory.
    pub fn echo_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}
