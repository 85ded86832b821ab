//! JSON experiment configuration. Every key is optional and defaults to the
//! built-in setup, so `{}` is a complete config. Unknown keys are rejected.

use std::path::Path;

use mixlqc::filter::{FilterOptions, MixedBelief, QkFormula};
use mixlqc::harness::ExperimentConfig;
use mixlqc::horizon::CostSpec;
use mixlqc::linalg::min_eigenvalue;
use mixlqc::model::{LinearSystem, NoiseModel, SystemModel};
use mixlqc::sdp::SolverOptions;
use mixlqc::SamplingScheme;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("{key}: {message}")]
    Invalid { key: &'static str, message: String },
    #[error(transparent)]
    Model(#[from] mixlqc::Error),
}

fn invalid(key: &'static str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key,
        message: message.into(),
    }
}

pub type Matrix = Vec<Vec<f64>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub model: ModelSection,
    pub noise: NoiseSection,
    pub initial: InitialSection,
    pub cost: CostSection,
    pub runs: usize,
    pub seed: u64,
    pub confidence: f64,
    pub filter: FilterSection,
    pub solver: SolverSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    /// `A_k = (1 + modulation · sin k) · a0`.
    pub a0: Matrix,
    pub modulation: f64,
    pub b: Matrix,
    pub h: Matrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSection {
    pub pw: Matrix,
    pub pv: Matrix,
    pub mw: Matrix,
    pub mv: Matrix,
    pub scheme_w: String,
    pub scheme_v: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitialSection {
    pub x0: Vec<f64>,
    pub p0: Matrix,
    pub m0: Matrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostSection {
    pub q: Matrix,
    pub r: Matrix,
    /// Episode length.
    pub steps: usize,
    /// Receding horizon length.
    pub horizon: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterSection {
    pub qk_formula: String,
    pub tolerance: f64,
    pub max_iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSection {
    pub feasibility_tol: f64,
    pub objective_tol: f64,
    pub max_iterations: usize,
}

fn rows(m: &DMatrix<f64>) -> Matrix {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn matrix(key: &'static str, rows: &Matrix) -> Result<DMatrix<f64>, ConfigError> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if nrows == 0 || ncols == 0 {
        return Err(invalid(key, "matrix must be non-empty"));
    }
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(invalid(key, "rows have different lengths"));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(invalid(key, "entries must be finite"));
    }
    Ok(DMatrix::from_row_iterator(nrows, ncols, rows.iter().flatten().copied()))
}

fn psd(key: &'static str, rows: &Matrix) -> Result<DMatrix<f64>, ConfigError> {
    let m = matrix(key, rows)?;
    if !m.is_square() {
        return Err(invalid(key, "matrix must be square"));
    }
    if (&m - m.transpose()).amax() > 1e-10 * (1.0 + m.amax()) || min_eigenvalue(&m) < -1e-10 * (1.0 + m.amax()) {
        return Err(invalid(key, format!("{key} not positive semidefinite")));
    }
    Ok(m)
}

impl Default for ConfigFile {
    fn default() -> Self {
        Self::from_experiment(&ExperimentConfig::default())
    }
}

macro_rules! default_from_file {
    ($($t:ty => $field:ident),*) => {$(
        impl Default for $t {
            fn default() -> Self {
                ConfigFile::default().$field
            }
        }
    )*};
}
default_from_file!(
    ModelSection => model,
    NoiseSection => noise,
    InitialSection => initial,
    CostSection => cost,
    FilterSection => filter,
    SolverSection => solver
);

impl ConfigFile {
    pub fn from_experiment(cfg: &ExperimentConfig) -> Self {
        let model = &cfg.model;
        Self {
            model: ModelSection {
                a0: rows(model.base_a()),
                modulation: model.amplitude(),
                b: rows(&model.b(0)),
                h: rows(&model.h(0)),
            },
            noise: NoiseSection {
                pw: rows(&cfg.noise.pw),
                pv: rows(&cfg.noise.pv),
                mw: rows(&cfg.noise.mw),
                mv: rows(&cfg.noise.mv),
                scheme_w: cfg.noise.scheme_w.name().to_string(),
                scheme_v: cfg.noise.scheme_v.name().to_string(),
            },
            initial: InitialSection {
                x0: cfg.prior.center.iter().copied().collect(),
                p0: rows(&cfg.prior.covariance),
                m0: rows(&cfg.prior.shape),
            },
            cost: CostSection {
                q: rows(&cfg.cost.q),
                r: rows(&cfg.cost.r),
                steps: cfg.steps,
                horizon: cfg.cost.horizon,
            },
            runs: cfg.runs,
            seed: cfg.seed,
            confidence: cfg.confidence,
            filter: FilterSection {
                qk_formula: cfg.filter.qk_formula.name().to_string(),
                tolerance: cfg.filter.tolerance,
                max_iterations: cfg.filter.max_iterations,
            },
            solver: SolverSection {
                feasibility_tol: cfg.solver.feasibility_tol,
                objective_tol: cfg.solver.objective_tol,
                max_iterations: cfg.solver.max_iterations,
            },
        }
    }

    pub fn to_experiment(&self) -> Result<ExperimentConfig, ConfigError> {
        let m = &self.model;
        let a0 = matrix("model.a0", &m.a0)?;
        let b = matrix("model.b", &m.b)?;
        let h = matrix("model.h", &m.h)?;
        if !m.modulation.is_finite() {
            return Err(invalid("model.modulation", "must be finite"));
        }
        let model = SystemModel::new(a0, b, h)?.with_sinusoidal_modulation(m.modulation);

        let n = &self.noise;
        let scheme = |key: &'static str, s: &str| s.parse::<SamplingScheme>().map_err(|e| invalid(key, e.to_string()));
        let noise = NoiseModel::new(psd("pw", &n.pw)?, psd("pv", &n.pv)?, psd("mw", &n.mw)?, psd("mv", &n.mv)?)?
            .with_schemes(scheme("noise.scheme_w", &n.scheme_w)?, scheme("noise.scheme_v", &n.scheme_v)?);

        let i = &self.initial;
        if i.x0.iter().any(|v| !v.is_finite()) {
            return Err(invalid("x0", "entries must be finite"));
        }
        let prior = MixedBelief::new(DVector::from_vec(i.x0.clone()), psd("p0", &i.p0)?, psd("m0", &i.m0)?)?;

        let c = &self.cost;
        let q = psd("q", &c.q)?;
        let r = psd("r", &c.r)?;
        if min_eigenvalue(&r) <= 0.0 {
            return Err(invalid("r", "r not positive definite"));
        }
        if c.horizon == 0 {
            return Err(invalid("cost.horizon", "must be at least 1"));
        }
        let cost = CostSpec::new(q, r, c.horizon)?;

        let qk_formula = self
            .filter
            .qk_formula
            .parse::<QkFormula>()
            .map_err(|e| invalid("filter.qk_formula", e.to_string()))?;
        let cfg = ExperimentConfig {
            model,
            noise,
            prior,
            cost,
            steps: c.steps,
            runs: self.runs,
            seed: self.seed,
            confidence: self.confidence,
            filter: FilterOptions {
                qk_formula,
                tolerance: self.filter.tolerance,
                max_iterations: self.filter.max_iterations,
            },
            solver: SolverOptions {
                feasibility_tol: self.solver.feasibility_tol,
                objective_tol: self.solver.objective_tol,
                max_iterations: self.solver.max_iterations,
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn parse_config_str(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let file: ConfigFile = serde_json::from_str(text)?;
    file.to_experiment()
}

pub fn parse_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_config_str(&text)
}

/// Pretty-printed JSON with every key present.
pub fn to_canonical_json(cfg: &ExperimentConfig) -> String {
    serde_json::to_string_pretty(&ConfigFile::from_experiment(cfg)).expect("config serializes")
}
