//! Experiment configuration: a TOML file with one table per concern.
//!
//! ```toml
//! label = "TVaR"
//!
//! [model]
//! kind = "sir_cev"
//! mu = [0.05, 0.06]
//! # ...
//!
//! [strategy]
//! delta = [0.2, 0.6, 0.1]
//! x0 = 1.0
//!
//! [copula]
//! kind = "coin"
//! u_star = 0.25
//!
//! [risk]
//! family = "tvar"
//! alpha = 0.1
//!
//! [solver]
//! eps2 = 1e-3
//! ```
//!
//! A config without `[risk]` describes the benchmark alone.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::copula::Copula;
use crate::error::{Error, Result};
use crate::estimate::KernelOptions;
use crate::market::{default_sir_steps, GbmParams, SirCevParams, Strategy};
use crate::quantile::Partition;
use crate::risk::{gamma_alpha_beta, gamma_inverse_s, gamma_tvar, gamma_ute, DistortionWeight};

pub const DEFAULT_GRID: usize = 1000;
pub const DEFAULT_PATHS: usize = 100_000;
pub const DEFAULT_SEED: u64 = 1;
/// Never stated for the Gumbel examples; exposed so it can be changed.
pub const DEFAULT_GUMBEL_THETA: f64 = 2.0;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub model: ModelConfig,
    pub strategy: Strategy,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub copula: Option<CopulaConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub risk: Option<RiskConfig>,
    #[serde(default)]
    pub solver: SolverConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelConfig {
    Gbm(GbmParams),
    SirCev(SirCevParams),
}

impl ModelConfig {
    pub fn horizon(&self) -> f64 {
        match self {
            ModelConfig::Gbm(p) => p.horizon,
            ModelConfig::SirCev(p) => p.horizon,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CopulaConfig {
    Coin {
        u_star: f64,
    },
    Gumbel {
        #[serde(default = "default_theta")]
        theta: f64,
    },
    Comonotonic,
    Independence,
    Unspecified,
}

fn default_theta() -> f64 {
    DEFAULT_GUMBEL_THETA
}

impl CopulaConfig {
    pub fn build(&self) -> Result<Copula> {
        match *self {
            CopulaConfig::Coin { u_star } => Copula::coin(u_star),
            CopulaConfig::Gumbel { theta } => Copula::gumbel(theta),
            CopulaConfig::Comonotonic => Ok(Copula::Comonotonic),
            CopulaConfig::Independence => Ok(Copula::Independence),
            CopulaConfig::Unspecified => Ok(Copula::Unspecified),
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum RiskConfig {
    Tvar { alpha: f64 },
    Ute { beta: f64 },
    AlphaBeta { alpha: f64, beta: f64, p: f64 },
    InverseS { q: f64 },
}

impl RiskConfig {
    pub fn build(&self, partition: Partition) -> Result<DistortionWeight> {
        match *self {
            RiskConfig::Tvar { alpha } => gamma_tvar(alpha, partition),
            RiskConfig::Ute { beta } => gamma_ute(beta, partition),
            RiskConfig::AlphaBeta { alpha, beta, p } => gamma_alpha_beta(alpha, beta, p, partition),
            RiskConfig::InverseS { q } => gamma_inverse_s(q, partition),
        }
    }

    pub fn label(&self) -> String {
        match *self {
            RiskConfig::Tvar { alpha } => format!("TVaR_{alpha}"),
            RiskConfig::Ute { beta } => format!("UTE_{beta}"),
            RiskConfig::AlphaBeta { alpha, beta, p } => format!("alpha-beta({alpha},{beta},{p})"),
            RiskConfig::InverseS { q } => format!("IS({q})"),
        }
    }
}

/// Numerical settings. Exactly one of `eps`, `eps2` or a tolerance pair
/// fixes the radius when optimising.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps2: Option<f64>,
    /// Lowest acceptable mean of terminal wealth.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m_lower: Option<f64>,
    /// Highest acceptable standard deviation of terminal wealth.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s_upper: Option<f64>,
    /// Tolerated drop of the mean below the benchmark's estimate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_tol: Option<f64>,
    /// Tolerated rise of the standard deviation above the benchmark's.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub std_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub paths: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_steps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h_delta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h_sdf: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h_x: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h_v: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sdf_log_scale: Option<bool>,
}

/// How the radius is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Radius {
    Fixed(f64),
    Tolerances { m_lower: f64, s_upper: f64 },
    /// Tolerances relative to the estimated benchmark mean and std.
    Deviations { mean_tol: f64, std_tol: f64 },
}

impl SolverConfig {
    pub fn grid(&self) -> usize {
        self.grid.unwrap_or(DEFAULT_GRID)
    }

    pub fn paths(&self) -> usize {
        self.paths.unwrap_or(DEFAULT_PATHS)
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(DEFAULT_SEED)
    }

    pub fn kernel_options(&self) -> KernelOptions {
        KernelOptions {
            h_delta: self.h_delta,
            h_sdf: self.h_sdf,
            h_x: self.h_x,
            h_v: self.h_v,
            sdf_log_scale: self.sdf_log_scale.unwrap_or(true),
        }
    }

    /// `None` when no radius is configured at all.
    pub fn radius(&self) -> Result<Option<Radius>> {
        let fixed = match (self.eps, self.eps2) {
            (Some(_), Some(_)) => return Err(Error::Config("give eps or eps2, not both".into())),
            (Some(e), None) => Some(e),
            (None, Some(e2)) => {
                if !(e2 > 0.0) {
                    return Err(Error::Config(format!("eps2 must be positive, got {e2}")));
                }
                Some(e2.sqrt())
            }
            (None, None) => None,
        };
        let absolute = match (self.m_lower, self.s_upper) {
            (Some(m_lower), Some(s_upper)) => Some(Radius::Tolerances { m_lower, s_upper }),
            (None, None) => None,
            _ => return Err(Error::Config("m_lower and s_upper come as a pair".into())),
        };
        let relative = match (self.mean_tol, self.std_tol) {
            (Some(mean_tol), Some(std_tol)) => Some(Radius::Deviations { mean_tol, std_tol }),
            (None, None) => None,
            _ => return Err(Error::Config("mean_tol and std_tol come as a pair".into())),
        };
        let given = [fixed.is_some(), absolute.is_some(), relative.is_some()];
        if given.iter().filter(|g| **g).count() > 1 {
            return Err(Error::Config(
                "give one of eps, eps2, (m_lower, s_upper) or (mean_tol, std_tol)".into(),
            ));
        }
        if let Some(e) = fixed {
            if !(e > 0.0 && e.is_finite()) {
                return Err(Error::Config(format!("eps must be positive, got {e}")));
            }
            return Ok(Some(Radius::Fixed(e)));
        }
        Ok(absolute.or(relative))
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.solver.grid() < 2 {
            return Err(Error::Config(format!("grid needs at least 2 cells, got {}", self.solver.grid())));
        }
        if self.solver.paths() < 2 {
            return Err(Error::Config(format!("need at least 2 paths, got {}", self.solver.paths())));
        }
        self.solver.radius()?;
        if let Some(c) = &self.copula {
            c.build()?;
        }
        if self.risk.is_some() && self.copula.is_none() {
            return Err(Error::Config("optimising needs a [copula] table".into()));
        }
        Ok(())
    }

    pub fn n_steps(&self) -> usize {
        self.solver
            .n_steps
            .unwrap_or_else(|| default_sir_steps(self.model.horizon()))
    }

    pub fn copula(&self) -> Result<Copula> {
        self.copula
            .as_ref()
            .ok_or_else(|| Error::Config("missing [copula] table".into()))?
            .build()
    }

    pub fn label(&self) -> String {
        match (&self.label, &self.risk) {
            (Some(l), _) => l.clone(),
            (None, Some(r)) => r.label(),
            (None, None) => "benchmark".into(),
        }
    }

    /// Applies command-line overrides, which take precedence over the file.
    pub fn with_overrides(mut self, seed: Option<u64>, grid: Option<usize>, paths: Option<usize>) -> Result<Self> {
        if seed.is_some() {
            self.solver.seed = seed;
        }
        if grid.is_some() {
            self.solver.grid = grid;
        }
        if paths.is_some() {
            self.solver.paths = paths;
        }
        self.validate()?;
        Ok(self)
    }

    /// The config with every defaulted setting written out, for echoing.
    pub fn resolved(&self) -> Self {
        let mut out = self.clone();
        out.label = Some(self.label());
        out.solver.grid = Some(self.solver.grid());
        out.solver.paths = Some(self.solver.paths());
        out.solver.seed = Some(self.solver.seed());
        out.solver.n_steps = Some(self.n_steps());
        out.solver.sdf_log_scale = Some(self.solver.kernel_options().sdf_log_scale);
        out
    }
}
