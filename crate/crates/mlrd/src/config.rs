//! Human-editable TOML configuration: one format shared by every CLI
//! subcommand. Scalar keys (seed, threads, output) may be overridden by
//! flags; everything else lives in the file so runs are reproducible from a
//! single document.
//!
//! Key schema (subcommands read the subset they need):
//!
//! ```toml
//! experiment = "clt"            # clt | fclt | subordination | autocov
//! seed = 20260801
//! replications = 3000
//! n = 2048                      # path length (clt/fclt/subordination)
//! n_list = [512, 1024, 2048]    # autocov size ladder
//! truncation = 20480            # linear-model truncation M (default 10 n)
//! grid = [0.25, 0.5, 0.75, 1.0] # fclt time grid
//! lags = 1                      # autocov max lag H
//! k_max = 64                    # gamma subcommand lag range
//! tau = 1                       # normalize subcommand Hermite rank
//! gaussian_cap = 8192           # dense-factorization cap on n * d
//! stability_check = false       # subordination cross-n stability pass
//! stability_replications = 500
//!
//! [spec]
//! dimension = 2
//! kind = "linear_lrd"           # linear_lrd | gaussian_diagonal | white_noise
//! memory = [0.4, 0.2]           # d_1 > d_2 > ... in (0, 1/2)
//! a_plus = [[1.0, 0.0], [0.0, 1.0]]
//! a_minus = [[1.0, 0.0], [0.0, 1.0]]
//! a_zero = [[1.0, 0.0], [0.0, 1.0]]   # optional, defaults to a_plus
//! innovation = "standard_normal"      # standard_normal | rademacher | uniform_scaled
//! r_diag = [0.5, 0.5]                 # gaussian_diagonal only
//!
//! [subordination]
//! g = ["square_minus_one", "square_minus_one"]  # or a single entry for all
//! l_max = 12
//! quad_order = 128
//! rank_tol = 1e-10
//!
//! [tolerances]
//! cov_max_abs = 0.15
//! ks_p_min = 0.01
//! se_multiplier = 4.0
//! variance_ratio_low = 0.75
//! variance_ratio_high = 1.33
//! second_moment_factor = 1.25
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hermite::SubordinationMap;
use crate::matalg::SquareMatrix;
use crate::model::{MemoryParameters, ProcessKind, ProcessSpec, SlowlyVaryingSpec};
use crate::montecarlo::{ExperimentConfig, ExperimentKind, SubordinationSettings, Tolerances};
use crate::simulate::InnovationLaw;

/// `[spec]` table: serializable mirror of `ProcessSpec`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SpecConfig {
    pub dimension: usize,
    pub kind: ProcessKind,
    pub memory: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a_plus: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a_minus: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a_zero: Option<Vec<Vec<f64>>>,
    #[serde(default = "default_innovation")]
    pub innovation: InnovationLaw,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_diag: Option<Vec<f64>>,
}

fn default_innovation() -> InnovationLaw {
    InnovationLaw::StandardNormal
}

impl SpecConfig {
    fn matrix(&self, m: &Option<Vec<Vec<f64>>>, name: &str) -> Result<Option<SquareMatrix>> {
        match m {
            None => Ok(None),
            Some(rows) => {
                if rows.len() != self.dimension || rows.iter().any(|r| r.len() != self.dimension) {
                    return Err(Error::Config(format!(
                        "{name} must be a {0} x {0} matrix",
                        self.dimension
                    )));
                }
                Ok(Some(SquareMatrix::from_rows(rows)?))
            }
        }
    }

    /// Builds the process spec without the C1/C2 admissibility gate; callers
    /// run `check_conditions` and map failures to exit code 2.
    pub fn build_unchecked(&self) -> Result<ProcessSpec> {
        if self.memory.len() != self.dimension {
            return Err(Error::Config("memory length must equal dimension".into()));
        }
        let memory = MemoryParameters::new(self.memory.clone())
            .map_err(|e| Error::Config(e.to_string()))?;
        match self.kind {
            ProcessKind::LinearLrd => {
                let ap = self
                    .matrix(&self.a_plus, "a_plus")?
                    .unwrap_or_else(|| SquareMatrix::identity(self.dimension));
                let am = self
                    .matrix(&self.a_minus, "a_minus")?
                    .unwrap_or_else(|| SquareMatrix::identity(self.dimension));
                let mut sv = SlowlyVaryingSpec::new(ap, am)?;
                if let Some(a0) = self.matrix(&self.a_zero, "a_zero")? {
                    sv = sv.with_j0(a0)?;
                }
                ProcessSpec::linear_lrd_unchecked(memory, sv, self.innovation)
            }
            ProcessKind::GaussianDiagonal => {
                let r = self
                    .r_diag
                    .clone()
                    .ok_or_else(|| Error::Config("gaussian_diagonal requires r_diag".into()))?;
                ProcessSpec::gaussian_diagonal(memory, r)
            }
            ProcessKind::WhiteNoise => {
                let mut spec = ProcessSpec::white_noise(self.dimension, self.innovation)?;
                if let Some(a0) = self.matrix(&self.a_zero, "a_zero")? {
                    spec.slowly_varying = spec.slowly_varying.with_j0(a0)?;
                }
                Ok(spec)
            }
        }
    }

    /// Round-trip representation of a built spec.
    pub fn from_spec(spec: &ProcessSpec) -> Self {
        let d = spec.dim();
        let rows = |m: &SquareMatrix| -> Vec<Vec<f64>> {
            (0..d).map(|i| m.row(i).to_vec()).collect()
        };
        Self {
            dimension: d,
            kind: spec.kind,
            memory: spec.memory.values().to_vec(),
            a_plus: Some(rows(&spec.slowly_varying.a_plus)),
            a_minus: Some(rows(&spec.slowly_varying.a_minus)),
            a_zero: Some(rows(&spec.slowly_varying.j0_coefficient)),
            innovation: spec.innovation,
            r_diag: spec.r_diag.clone(),
        }
    }
}

/// `[subordination]` table.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SubordinationConfig {
    /// One map per coordinate, or a single map applied to all coordinates.
    pub g: Vec<SubordinationMap>,
    #[serde(default = "default_l_max")]
    pub l_max: usize,
    #[serde(default = "default_quad_order")]
    pub quad_order: usize,
    #[serde(default = "default_rank_tol")]
    pub rank_tol: f64,
}

fn default_l_max() -> usize {
    12
}
fn default_quad_order() -> usize {
    128
}
fn default_rank_tol() -> f64 {
    crate::hermite::RANK_TOL
}

/// Top-level configuration file.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ConfigFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub experiment: Option<ExperimentKind>,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replications: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_list: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truncation: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lags: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_max: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gaussian_cap: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stability_check: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stability_replications: Option<usize>,
    pub spec: SpecConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subordination: Option<SubordinationConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tolerances: Option<Tolerances>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("bad config: {e}")))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Resolves the file into a validated experiment configuration.
    pub fn to_experiment(&self) -> Result<ExperimentConfig> {
        let experiment = self
            .experiment
            .ok_or_else(|| Error::Config("missing `experiment` key".into()))?;
        let spec = self.spec.build_unchecked()?;
        let replications = self.replications.unwrap_or(1000);
        if replications < 100 {
            return Err(Error::Config(format!(
                "replications = {replications} below the minimum of 100"
            )));
        }
        let n = self.n.unwrap_or(1024);
        let n_list = self.n_list.clone().unwrap_or_else(|| vec![512, 1024, 2048]);
        let truncation = self.truncation.unwrap_or(10 * n);
        let grid = self.grid.clone().unwrap_or_else(|| vec![0.25, 0.5, 0.75, 1.0]);
        let maps = match &self.subordination {
            Some(sc) => {
                if sc.g.is_empty() {
                    return Err(Error::Config("subordination.g must be non-empty".into()));
                }
                if sc.g.len() == 1 {
                    vec![sc.g[0]; spec.dim()]
                } else if sc.g.len() == spec.dim() {
                    sc.g.clone()
                } else {
                    return Err(Error::Config(
                        "subordination.g needs one entry or one per coordinate".into(),
                    ));
                }
            }
            None => vec![SubordinationMap::Identity; spec.dim()],
        };
        let sub = self.subordination.clone();
        Ok(ExperimentConfig {
            experiment,
            spec,
            n,
            n_list,
            truncation,
            replications,
            seed: self.seed,
            grid,
            lags: self.lags.unwrap_or(1),
            subordination: SubordinationSettings {
                maps,
                l_max: sub.as_ref().map_or(default_l_max(), |s| s.l_max),
                quad_order: sub.as_ref().map_or(default_quad_order(), |s| s.quad_order),
                rank_tol: sub.as_ref().map_or(default_rank_tol(), |s| s.rank_tol),
            },
            tolerances: self.tolerances.clone().unwrap_or_default(),
            gaussian_cap: self.gaussian_cap.unwrap_or(crate::simulate::DEFAULT_GAUSSIAN_CAP),
            stability_check: self.stability_check.unwrap_or(false),
            stability_replications: self
                .stability_replications
                .unwrap_or_else(|| (replications / 4).max(100)),
        })
    }
}
