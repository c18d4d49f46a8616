//! Experiment configuration: one JSON document per run, with CLI overrides
//! applied before anything executes. The resolved document is hashed and the
//! hash recorded in every output, so a result can always be traced back to
//! the exact settings that produced it.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::DEFAULT_ORACLE_CAP;
use crate::sgld::Prior;
use crate::smc::Resampling;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Simulate,
    MaxentExact,
    Mle,
    Posterior,
    Oracle,
}

impl Mode {
    pub fn name(&self) -> &'static str {
        match self {
            Mode::Simulate => "simulate",
            Mode::MaxentExact => "maxent_exact",
            Mode::Mle => "mle",
            Mode::Posterior => "posterior",
            Mode::Oracle => "oracle",
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmcSettings {
    /// Particle count N; defaults to 2d.
    #[serde(default)]
    pub particles: Option<usize>,
    /// Bit-flip probability of the Metropolis proposal.
    #[serde(default = "default_beta")]
    pub beta: f64,
    /// Kernel applications per SMC step; defaults to d.
    #[serde(default)]
    pub sweeps: Option<usize>,
    #[serde(default = "default_resampling")]
    pub resampling: Resampling,
}

fn default_beta() -> f64 {
    0.6
}

fn default_resampling() -> Resampling {
    Resampling::Multinomial
}

impl Default for SmcSettings {
    fn default() -> Self {
        SmcSettings {
            particles: None,
            beta: default_beta(),
            sweeps: None,
            resampling: default_resampling(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSettings {
    #[serde(default = "default_schedule_kind")]
    pub kind: ScheduleKind,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// Step offset n_0; defaults to 5d.
    #[serde(default)]
    pub n0: Option<f64>,
    /// Two-phase switch iteration; defaults to 2d.
    #[serde(default)]
    pub switch: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Harmonic,
    TwoPhase,
}

fn default_schedule_kind() -> ScheduleKind {
    ScheduleKind::TwoPhase
}

fn default_epsilon() -> f64 {
    1.0
}

impl Default for ScheduleSettings {
    fn default() -> Self {
        ScheduleSettings {
            kind: default_schedule_kind(),
            epsilon: default_epsilon(),
            n0: None,
            switch: None,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanSettings {
    #[serde(default = "default_plan_n0")]
    pub n0: usize,
    #[serde(default = "default_plan_growth")]
    pub growth: usize,
    #[serde(default = "default_plan_l_max")]
    pub l_max: usize,
}

fn default_plan_n0() -> usize {
    16
}

fn default_plan_growth() -> usize {
    4
}

fn default_plan_l_max() -> usize {
    6
}

impl Default for PlanSettings {
    fn default() -> Self {
        PlanSettings {
            n0: default_plan_n0(),
            growth: default_plan_growth(),
            l_max: default_plan_l_max(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientKind {
    /// Unbiased randomized-truncation gradient (the default).
    Debiased,
    /// Plain-SMC consistent-but-biased drift. Experimental: no convergence
    /// guarantee is claimed.
    Consistent,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PosteriorSettings {
    #[serde(default = "default_prior")]
    pub prior: Prior,
    #[serde(default = "default_delta0")]
    pub delta0: f64,
    #[serde(default = "default_exponent")]
    pub exponent: f64,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_burn_in")]
    pub burn_in: f64,
    #[serde(default = "default_bins")]
    pub bins: usize,
    #[serde(default)]
    pub plan: PlanSettings,
    #[serde(default = "default_gradient")]
    pub gradient: GradientKind,
}

fn default_prior() -> Prior {
    Prior::FlatImproper
}

fn default_delta0() -> f64 {
    0.01
}

fn default_exponent() -> f64 {
    1.0 / 3.0
}

fn default_steps() -> usize {
    100_000
}

fn default_burn_in() -> f64 {
    0.5
}

fn default_bins() -> usize {
    40
}

fn default_gradient() -> GradientKind {
    GradientKind::Debiased
}

impl Default for PosteriorSettings {
    fn default() -> Self {
        PosteriorSettings {
            prior: default_prior(),
            delta0: default_delta0(),
            exponent: default_exponent(),
            steps: default_steps(),
            burn_in: default_burn_in(),
            bins: default_bins(),
            plan: PlanSettings::default(),
            gradient: default_gradient(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McmcSettings {
    /// Gibbs sweeps discarded before the first approximate sample.
    #[serde(default = "default_mcmc_burn_in")]
    pub burn_in_sweeps: usize,
    /// Gibbs sweeps between retained samples.
    #[serde(default = "default_mcmc_thin")]
    pub thin_sweeps: usize,
}

fn default_mcmc_burn_in() -> usize {
    500
}

fn default_mcmc_thin() -> usize {
    5
}

impl Default for McmcSettings {
    fn default() -> Self {
        McmcSettings {
            burn_in_sweeps: default_mcmc_burn_in(),
            thin_sweeps: default_mcmc_thin(),
        }
    }
}

/// The experiment document. Unknown fields are rejected.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mode: Mode,
    /// State dimension d.
    pub d: usize,
    #[serde(default)]
    pub seed: u64,
    /// Explicit generating / target parameters.
    #[serde(default)]
    pub lambda_true: Option<Vec<f64>>,
    /// Range for drawing λ* uniformly when `lambda_true` is absent.
    #[serde(default = "default_lambda_range")]
    pub lambda_range: (f64, f64),
    /// Explicit target moments for `maxent_exact`.
    #[serde(default)]
    pub moments: Option<Vec<f64>>,
    /// Observation file consumed by `mle` / `posterior`.
    #[serde(default)]
    pub observations: Option<PathBuf>,
    /// Number of observations written by `simulate`.
    #[serde(default)]
    pub m_count: Option<usize>,
    /// Write the packed binary observation format.
    #[serde(default)]
    pub packed: bool,
    #[serde(default)]
    pub smc: SmcSettings,
    #[serde(default)]
    pub schedule: ScheduleSettings,
    /// Robbins-Monro iteration budget K.
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    /// Record the oracle moment misfit along the trace (d within cap only).
    #[serde(default)]
    pub track_misfit: bool,
    #[serde(default)]
    pub posterior: PosteriorSettings,
    #[serde(default)]
    pub mcmc: McmcSettings,
    /// Enumeration cap; `simulate` beyond it needs `mcmc_sampling`.
    #[serde(default = "default_d_cap")]
    pub d_cap: usize,
    #[serde(default)]
    pub mcmc_sampling: bool,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

fn default_lambda_range() -> (f64, f64) {
    (-1.0, 1.0)
}

fn default_iterations() -> usize {
    10_000
}

fn default_d_cap() -> usize {
    DEFAULT_ORACLE_CAP
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text)
            .map_err(|e| Error::InvalidConfig(format!("config parse: {e}")))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the canonical serialization, hex-encoded.
    pub fn sha256(&self) -> String {
        let digest = Sha256::digest(self.to_json().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Cross-field checks that JSON typing cannot express.
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.d > 64 {
            return Err(Error::InvalidConfig(format!("d = {} outside 1..=64", self.d)));
        }
        let j = self.d * (self.d + 1) / 2;
        if let Some(lambda) = &self.lambda_true {
            if lambda.len() != j {
                return Err(Error::InvalidConfig(format!(
                    "lambda_true has {} entries, expected J = {j}",
                    lambda.len()
                )));
            }
        }
        if let Some(m) = &self.moments {
            if m.len() != j {
                return Err(Error::InvalidConfig(format!(
                    "moments has {} entries, expected J = {j}",
                    m.len()
                )));
            }
        }
        if self.lambda_range.0 >= self.lambda_range.1 {
            return Err(Error::InvalidConfig(format!(
                "lambda_range ({}, {}) is empty",
                self.lambda_range.0, self.lambda_range.1
            )));
        }
        match self.mode {
            Mode::Simulate => {
                match self.m_count {
                    None | Some(0) => {
                        return Err(Error::InvalidConfig(
                            "simulate needs m_count >= 1".into(),
                        ))
                    }
                    Some(_) => {}
                }
                if self.d > self.d_cap && !self.mcmc_sampling {
                    return Err(Error::OracleCapExceeded {
                        d: self.d,
                        cap: self.d_cap,
                        cost: 1u128 << self.d.min(127),
                    });
                }
            }
            Mode::MaxentExact => {
                if self.moments.is_none() && self.d > self.d_cap {
                    return Err(Error::OracleCapExceeded {
                        d: self.d,
                        cap: self.d_cap,
                        cost: 1u128 << self.d.min(127),
                    });
                }
            }
            Mode::Mle | Mode::Posterior => {
                if self.observations.is_none() {
                    return Err(Error::InvalidConfig(format!(
                        "{} mode needs an observations file",
                        self.mode.name()
                    )));
                }
            }
            Mode::Oracle => {
                if self.d > self.d_cap {
                    return Err(Error::OracleCapExceeded {
                        d: self.d,
                        cap: self.d_cap,
                        cost: 1u128 << self.d.min(127),
                    });
                }
            }
        }
        if !(0.0..1.0).contains(&self.posterior.burn_in) {
            return Err(Error::InvalidConfig(format!(
                "burn-in fraction {} outside [0,1)",
                self.posterior.burn_in
            )));
        }
        Ok(())
    }
}

/// Flag-level overrides applied on top of the config document.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub d_cap: Option<usize>,
    pub mcmc_sampling: bool,
}

impl ExperimentConfig {
    pub fn apply_overrides(&mut self, overrides: &Overrides) {
        if let Some(seed) = overrides.seed {
            self.seed = seed;
        }
        if let Some(dir) = &overrides.out_dir {
            self.out_dir = Some(dir.clone());
        }
        if let Some(cap) = overrides.d_cap {
            self.d_cap = cap;
        }
        if overrides.mcmc_sampling {
            self.mcmc_sampling = true;
        }
    }

    /// Output directory resolution: config, else the `MAXENT_OUT_DIR`
    /// environment variable, else the current directory.
    pub fn resolved_out_dir(&self) -> PathBuf {
        if let Some(dir) = &self.out_dir {
            return dir.clone();
        }
        if let Ok(dir) = std::env::var("MAXENT_OUT_DIR") {
            if !dir.is_empty() {
                return PathBuf::from(dir);
            }
        }
        PathBuf::from(".")
    }
}
