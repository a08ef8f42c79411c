//! Experiment configuration, read from TOML.
//!
//! Every field has a default, so an empty file (or no file) reproduces the
//! reference CSTR study. Field names mirror the in-memory types of `empc-core`.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use empc_core::empc::{SolverSettings, TerminalDesign, Variant};
use empc_core::narx::RegressorSpec;
use empc_core::oracle::FitOptions;
use empc_core::plant::{OutflowVariant, PlantParams};
use serde::{Deserialize, Serialize};

use crate::signals::SignalSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantConfig {
    pub k1: f64,
    pub k2: f64,
    pub volume: f64,
    pub ca0: f64,
    pub alpha: f64,
    pub tau_s: f64,
    pub u_min: f64,
    pub u_max: f64,
    pub noise_std_frac: f64,
    /// `minus_cB` or `minus_cA_as_printed`.
    pub outflow: String,
    pub substeps: usize,
}

impl Default for PlantConfig {
    fn default() -> Self {
        let p = PlantParams::default();
        Self {
            k1: p.k1,
            k2: p.k2,
            volume: p.volume,
            ca0: p.ca0,
            alpha: p.alpha,
            tau_s: p.tau_s,
            u_min: p.u_min,
            u_max: p.u_max,
            noise_std_frac: p.noise_std_frac,
            outflow: "minus_cB".into(),
            substeps: p.substeps,
        }
    }
}

impl PlantConfig {
    pub fn params(&self) -> Result<PlantParams> {
        let outflow: OutflowVariant = self.outflow.parse().map_err(anyhow::Error::msg)?;
        let p = PlantParams {
            k1: self.k1,
            k2: self.k2,
            volume: self.volume,
            ca0: self.ca0,
            alpha: self.alpha,
            tau_s: self.tau_s,
            u_min: self.u_min,
            u_max: self.u_max,
            noise_std_frac: self.noise_std_frac,
            outflow,
            substeps: self.substeps,
        };
        p.validate()?;
        Ok(p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegressorConfig {
    pub n_a: usize,
    pub n_b: usize,
}

impl Default for RegressorConfig {
    fn default() -> Self {
        Self { n_a: 3, n_b: 2 }
    }
}

impl RegressorConfig {
    pub fn spec(&self) -> Result<RegressorSpec> {
        Ok(RegressorSpec::siso(self.n_a, self.n_b)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    /// Fixed Lipschitz constant; estimated from the data when absent.
    pub lipschitz: Option<f64>,
    /// Per-coordinate metric weights (query order); all ones when absent.
    pub weights: Option<Vec<f64>>,
    /// Multiplier on the estimated constant.
    pub safety_factor: f64,
    /// Subsampling stride applied to the training set for closed-loop use.
    pub stride: usize,
    /// Stride of the degraded oracles in the noise-band experiment.
    pub degraded_strides: Vec<usize>,
    /// Cap on sampled pairs when estimating the constant.
    pub max_pairs: usize,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            lipschitz: None,
            weights: None,
            safety_factor: 1.5,
            stride: 10,
            degraded_strides: vec![100, 1000],
            max_pairs: 200_000,
        }
    }
}

impl OracleConfig {
    pub fn fit_options(&self, seed: u64) -> FitOptions {
        FitOptions {
            lipschitz: self.lipschitz,
            weights: self.weights.clone(),
            safety_factor: self.safety_factor,
            stride: 1,
            max_pairs: self.max_pairs,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmpcSection {
    /// Controller variant for the closed-loop experiments.
    pub variant: String,
    /// Control horizon `N` (`Nc` for terminal ingredients).
    pub horizon: usize,
    /// Prediction horizon of the terminal-ingredient controller.
    pub prediction_horizon: usize,
    /// Prediction horizons swept by the feasibility experiment.
    pub feasibility_horizons: Vec<usize>,
    pub penalty_weight: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub n_starts: usize,
    pub random_starts: usize,
    pub max_penalty_rounds: usize,
    pub feasibility_tol: f64,
    /// Grid size of the steady-state sweeps.
    pub steady_grid: usize,
    pub terminal_q: f64,
    pub terminal_r: f64,
    pub terminal_samples: usize,
}

impl Default for EmpcSection {
    fn default() -> Self {
        let s = SolverSettings::default();
        let d = TerminalDesign::default();
        Self {
            variant: "oracle_terminal_eq".into(),
            horizon: 5,
            prediction_horizon: 8,
            feasibility_horizons: vec![8, 12, 16],
            penalty_weight: s.penalty_weight,
            tol: s.tol,
            max_iter: s.max_iter,
            n_starts: s.n_starts,
            random_starts: s.random_starts,
            max_penalty_rounds: s.max_penalty_rounds,
            feasibility_tol: 1e-5,
            steady_grid: 10_000,
            terminal_q: d.q_weight,
            terminal_r: d.r_weight,
            terminal_samples: d.samples,
        }
    }
}

impl EmpcSection {
    pub fn variant(&self) -> Result<Variant> {
        self.variant.parse().map_err(anyhow::Error::msg)
    }

    pub fn solver(&self, seed: u64) -> SolverSettings {
        SolverSettings {
            penalty_weight: self.penalty_weight,
            tol: self.tol,
            max_iter: self.max_iter,
            n_starts: self.n_starts,
            random_starts: self.random_starts,
            max_penalty_rounds: self.max_penalty_rounds,
            seed,
        }
    }

    pub fn design(&self, seed: u64) -> TerminalDesign {
        TerminalDesign {
            q_weight: self.terminal_q,
            r_weight: self.terminal_r,
            samples: self.terminal_samples,
            seed,
            ..TerminalDesign::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IdealConfig {
    pub n_trials: usize,
    /// Lipschitz constant of the capture oracle.
    pub lipschitz: f64,
}

impl Default for IdealConfig {
    fn default() -> Self {
        Self { n_trials: 100, lipschitz: 100.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClosedLoopConfig {
    /// Number of random initial conditions.
    pub n_init: usize,
    /// Simulated time per run (min).
    pub t_sim: f64,
    /// Tail length for the steady-band statistic (steps).
    pub tail: usize,
}

impl Default for ClosedLoopConfig {
    fn default() -> Self {
        Self { n_init: 100, t_sim: 100.0, tail: 50 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OnlineConfig {
    pub iterations: usize,
    /// Time between impulses (min).
    pub period: f64,
    /// Append the transient samples after every window.
    pub update: bool,
}

impl Default for OnlineConfig {
    fn default() -> Self {
        Self { iterations: 20, period: 10.0, update: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvConfig {
    pub n_a: Vec<usize>,
    pub n_b: Vec<usize>,
    /// Lipschitz constants; `0` stands for the data-driven estimate.
    pub lipschitz: Vec<f64>,
    /// Stride applied to both datasets before the search.
    pub stride: usize,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self { n_a: vec![2, 3, 4], n_b: vec![2, 3, 4], lipschitz: vec![0.0, 10.0, 100.0], stride: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub plant: PlantConfig,
    pub regressor: RegressorConfig,
    pub oracle: OracleConfig,
    pub empc: EmpcSection,
    /// Identification signal (training data).
    pub signal: SignalSpec,
    /// Independent signal for validation.
    pub validation_signal: SignalSpec,
    pub ideal: IdealConfig,
    pub closedloop: ClosedLoopConfig,
    pub online: OnlineConfig,
    pub cv: CvConfig,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    /// Worker threads; 0 uses all cores.
    pub threads: usize,
    /// Fill the wall-clock `solve_time` column. Off by default so that outputs are bitwise reproducible.
    pub record_timing: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            plant: PlantConfig::default(),
            regressor: RegressorConfig::default(),
            oracle: OracleConfig::default(),
            empc: EmpcSection::default(),
            signal: SignalSpec::default(),
            validation_signal: SignalSpec::default_validation(),
            ideal: IdealConfig::default(),
            closedloop: ClosedLoopConfig::default(),
            online: OnlineConfig::default(),
            cv: CvConfig::default(),
            seeds: vec![1],
            output_dir: PathBuf::from("out"),
            threads: 0,
            record_timing: false,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).context("parsing experiment config")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.plant.params()?;
        self.regressor.spec()?;
        self.empc.variant()?;
        self.signal.validate()?;
        self.validation_signal.validate()?;
        if self.seeds.is_empty() {
            bail!("seeds must not be empty");
        }
        if !(self.closedloop.t_sim > 0.0) {
            bail!("t_sim must be > 0");
        }
        if self.empc.horizon == 0 {
            bail!("horizon must be >= 1");
        }
        if self.oracle.stride == 0 {
            bail!("oracle stride must be >= 1");
        }
        if !(self.online.period > 0.0) {
            bail!("online period must be > 0");
        }
        Ok(())
    }

    /// First configured seed.
    pub fn seed(&self) -> u64 {
        self.seeds[0]
    }

    /// Closed-loop steps, `t_sim / tau_s` rounded.
    pub fn steps(&self) -> usize {
        (self.closedloop.t_sim / self.plant.tau_s).round() as usize
    }

    /// Steps between impulses of the online experiment.
    pub fn window(&self) -> usize {
        (self.online.period / self.plant.tau_s).round() as usize
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = ExperimentConfig::from_toml_str("").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert_eq!(cfg.steps(), 400);
        assert_eq!(cfg.window(), 40);
        assert_eq!(cfg.plant.params().unwrap(), PlantParams::default());
    }

    #[test]
    fn round_trip() {
        let mut cfg = ExperimentConfig::default();
        cfg.seeds = vec![3, 4];
        cfg.oracle.lipschitz = Some(12.5);
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(ExperimentConfig::from_toml_str(&text).unwrap(), cfg);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(ExperimentConfig::from_toml_str("seeds = []").is_err());
        assert!(ExperimentConfig::from_toml_str("[closedloop]\nt_sim = 0.0").is_err());
        assert!(ExperimentConfig::from_toml_str("[plant]\noutflow = \"sideways\"").is_err());
        assert!(ExperimentConfig::from_toml_str("[plant]\nvolumes = 2.0").is_err());
    }
}
