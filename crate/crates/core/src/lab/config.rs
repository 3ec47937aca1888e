use std::path::{Path, PathBuf};

use serde::Deserialize;
use sha2::{Digest, Sha256};

use crate::env::MarkovEnv;
use crate::error::{Error, Result};
use crate::expansion::Method;
use crate::mm1::QueueParams;
use crate::stats::Z95;

/// Default `eps` grid of the sweeps.
pub const DEFAULT_EPSILONS: [f64; 5] = [0.02, 0.04, 0.06, 0.08, 0.10];
/// Default grid of the hitting-probability fits.
pub const DEFAULT_JUMP_EPSILONS: [f64; 5] = [0.005, 0.01, 0.015, 0.02, 0.025];
/// Default time scales of the fast/slow experiment.
pub const DEFAULT_ALPHAS: [f64; 3] = [0.01, 1.0, 100.0];

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct QueueSection {
    pub lambda: f64,
    pub mu: f64,
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentSection {
    /// Rows of the generator `Q`.
    pub generator: Vec<Vec<f64>>,
    pub p: Vec<f64>,
    #[serde(default = "one")]
    pub alpha: f64,
}

/// Inputs of the special-case experiment.
#[derive(Clone, Debug, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SpecialSection {
    /// Time scales at which the non-negative case is compared with the
    /// transform formula. Empty means the environment's own `alpha`.
    #[serde(default)]
    pub alphas: Vec<f64>,
    /// Time scale of the small-`alpha` arbitration, if any.
    pub arbitration_alpha: Option<f64>,
    /// Grid of the hitting-probability fits.
    #[serde(default)]
    pub jump_epsilons: Vec<f64>,
}

/// Gate tolerances.
#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct GateSection {
    /// Bound on `|z|` for equalities stated in standard errors.
    #[serde(default = "four")]
    pub z: f64,
    /// Bound on `|z|` for equalities stated as confidence intervals.
    #[serde(default = "z95")]
    pub ci_z: f64,
    #[serde(default = "fast_rel")]
    pub fast_rel: f64,
    #[serde(default = "slow_rel")]
    pub slow_rel: f64,
    #[serde(default = "two")]
    pub loglog_target: f64,
    #[serde(default = "loglog_tol")]
    pub loglog_tol: f64,
}

impl Default for GateSection {
    fn default() -> Self {
        Self { z: 4.0, ci_z: Z95, fast_rel: 0.10, slow_rel: 0.15, loglog_target: 2.0, loglog_tol: 0.3 }
    }
}

fn one() -> f64 {
    1.0
}
fn two() -> f64 {
    2.0
}
fn four() -> f64 {
    4.0
}
fn z95() -> f64 {
    Z95
}
fn fast_rel() -> f64 {
    0.10
}
fn slow_rel() -> f64 {
    0.15
}
fn loglog_tol() -> f64 {
    0.3
}

/// One experiment config as read from TOML.
#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Free-form name written into report headers.
    #[serde(default)]
    pub experiment: Option<String>,
    pub seed: u64,
    pub replications: u64,
    #[serde(default)]
    pub epsilons: Vec<f64>,
    #[serde(default)]
    pub output_path: Option<PathBuf>,
    /// Estimation route of `coeffs`: a method tag or `both`.
    #[serde(default)]
    pub method: Option<String>,
    /// Time scales of `fast-slow`.
    #[serde(default)]
    pub alphas: Vec<f64>,
    pub queue: QueueSection,
    pub environment: EnvironmentSection,
    #[serde(default)]
    pub special: SpecialSection,
    #[serde(default)]
    pub gates: GateSection,
}

/// Config after validation, with the built model objects.
#[derive(Clone, Debug)]
pub struct ValidatedConfig {
    pub raw: ExperimentConfig,
    pub sha256: String,
    pub queue: QueueParams,
    pub env: MarkovEnv,
    pub epsilons: Vec<f64>,
    pub jump_epsilons: Vec<f64>,
    pub alphas: Vec<f64>,
    pub special_alphas: Vec<f64>,
    pub methods: Vec<Method>,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<(Self, String)> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Ok((Self::parse(&text)?, text))
    }

    /// Checks every field and the stability margin at the largest `eps`.
    pub fn validate(self, source: &str) -> Result<ValidatedConfig> {
        if self.replications < 2 {
            return Err(Error::Config(format!("replications must be at least 2, got {}", self.replications)));
        }
        let queue = QueueParams::new(self.queue.lambda, self.queue.mu).map_err(|e| Error::Config(format!("queue: {e}")))?;
        let e = &self.environment;
        if e.p.len() != e.generator.len() {
            return Err(Error::Config(format!("environment: {} p values for {} generator rows", e.p.len(), e.generator.len())));
        }
        let env = MarkovEnv::new(e.generator.clone(), e.p.clone(), e.alpha).map_err(|e| Error::Config(format!("environment: {e}")))?;
        let grid = |v: &[f64], default: &[f64], name: &str| -> Result<Vec<f64>> {
            let g = if v.is_empty() { default.to_vec() } else { v.to_vec() };
            if g.iter().any(|x| !(x.is_finite() && *x > 0.0)) || g.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Config(format!("{name} must be positive and strictly increasing")));
            }
            queue.check_perturbation(env.max_abs_p(), *g.last().unwrap()).map_err(|e| Error::Config(format!("{name}: {e}")))?;
            Ok(g)
        };
        let epsilons = grid(&self.epsilons, &DEFAULT_EPSILONS, "epsilons")?;
        let jump_epsilons = grid(&self.special.jump_epsilons, &DEFAULT_JUMP_EPSILONS, "special.jump_epsilons")?;
        let positive = |v: &[f64], name: &str| -> Result<()> {
            if v.iter().any(|a| !(a.is_finite() && *a > 0.0)) {
                return Err(Error::Config(format!("{name} must be positive")));
            }
            Ok(())
        };
        let alphas = if self.alphas.is_empty() { DEFAULT_ALPHAS.to_vec() } else { self.alphas.clone() };
        positive(&alphas, "alphas")?;
        let special_alphas = if self.special.alphas.is_empty() { vec![env.alpha()] } else { self.special.alphas.clone() };
        positive(&special_alphas, "special.alphas")?;
        if let Some(a) = self.special.arbitration_alpha {
            positive(&[a], "special.arbitration_alpha")?;
        }
        let methods = match self.method.as_deref() {
            None => vec![Method::QuadratureHybrid],
            Some("both") => vec![Method::McJoint, Method::QuadratureHybrid],
            Some(tag) => match Method::parse(tag)? {
                Method::ClosedForm => return Err(Error::Config("closed_form is not a sampling route".into())),
                m => vec![m],
            },
        };
        let g = &self.gates;
        if [g.z, g.ci_z, g.fast_rel, g.slow_rel, g.loglog_tol].iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Config("gate tolerances must be positive".into()));
        }
        let sha256 = Sha256::digest(source.as_bytes()).iter().map(|b| format!("{b:02x}")).collect();
        Ok(ValidatedConfig { raw: self, sha256, queue, env, epsilons, jump_epsilons, alphas, special_alphas, methods })
    }
}

impl ValidatedConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        ExperimentConfig::parse(text)?.validate(text)
    }

    pub fn seed(&self) -> u64 {
        self.raw.seed
    }

    pub fn replications(&self) -> u64 {
        self.raw.replications
    }

    /// Applies command-line overrides and rechecks them.
    pub fn with_overrides(mut self, seed: Option<u64>, replications: Option<u64>) -> Result<Self> {
        if let Some(s) = seed {
            self.raw.seed = s;
        }
        if let Some(n) = replications {
            if n < 2 {
                return Err(Error::Config(format!("replications must be at least 2, got {n}")));
            }
            self.raw.replications = n;
        }
        Ok(self)
    }
}
