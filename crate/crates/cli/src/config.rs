//! Run configuration: TOML schema, validation, and lowering into core types.
//!
//! Every section is optional in the file; a command fails with a config
//! error (exit code 3) if a section it needs is missing or inconsistent.
//! Validation happens before any output directory is created, so a bad
//! config never leaves partial outputs behind.

use icalab::coeffs::{CoeffContext, Nonlinearity, Regularizer};
use icalab::model::{FeatureMode, PriorMeasure, SourceDist, StepSchedule};
use icalab::pde::{Grid1D, PdeConfig};
use icalab::simulate::{DecoupledConfig, FeatureSpec, TrialConfig};
use serde::{Deserialize, Serialize};

use crate::AppError;

fn default_nodes() -> usize {
    40
}
fn default_trials() -> usize {
    1
}
fn default_ode_dt() -> f64 {
    1e-3
}
fn default_n_cells() -> usize {
    1024
}
fn default_particles() -> usize {
    100_000
}
fn default_dec_dt() -> f64 {
    1e-3
}
fn default_drive() -> String {
    "pde".to_string()
}
fn default_record_dt() -> f64 {
    0.1
}
fn default_band_abs() -> f64 {
    0.05
}
fn default_band_sigma() -> f64 {
    2.0
}
fn default_ks_tol() -> f64 {
    0.05
}
fn default_roc_tol() -> f64 {
    0.03
}
fn default_thresholds() -> usize {
    200
}
fn default_threshold_min() -> f64 {
    1e-3
}
fn default_true() -> bool {
    true
}
fn default_cal_n() -> usize {
    2000
}
fn default_cal_samples() -> usize {
    100_000
}
fn default_cal_probe() -> f64 {
    0.5
}
fn default_seed() -> u64 {
    0
}
fn default_out_dir() -> String {
    "out".to_string()
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSection,
    pub source: SourceSection,
    pub algorithm: AlgorithmSection,
    pub time: TimeSection,
    #[serde(default)]
    pub sim: SimSection,
    #[serde(default)]
    pub ode: OdeSection,
    #[serde(default)]
    pub pde: PdeSection,
    #[serde(default)]
    pub decoupled: DecoupledSection,
    #[serde(default)]
    pub roc: RocSection,
    #[serde(default)]
    pub compare: CompareSection,
    #[serde(default)]
    pub bifurcation: BifurcationSection,
    #[serde(default)]
    pub calibrate: CalibrateSection,
    #[serde(default)]
    pub run: RunSection,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct BifurcationSection {
    pub taus: Vec<f64>,
    pub q_points: usize,
}

impl Default for BifurcationSection {
    fn default() -> Self {
        Self {
            taus: vec![0.02, 0.04, 0.06, 0.08],
            q_points: 400,
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub n: usize,
    /// Squared correlation of the initializer, q0 = Q0^2.
    pub q0: f64,
    pub prior: PriorSpec,
    /// iid | deterministic | sparse (sparse requires a sparse prior and
    /// places exactly round(rho n) nonzero coordinates)
    #[serde(default = "default_feature_mode")]
    pub feature_mode: String,
}

fn default_feature_mode() -> String {
    "iid".to_string()
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PriorSpec {
    /// Point mass at +/-1.
    Delta { value: f64 },
    /// (1 - rho) delta(0) + rho delta(1/sqrt(rho)).
    Sparse { rho: f64 },
    /// Explicit atoms (must have unit second moment).
    Atoms { values: Vec<f64>, weights: Vec<f64> },
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SourceSection {
    Rademacher,
    /// Symmetric three-atom family with nonzero mass p.
    ThreeAtom { p: f64 },
    Atoms { values: Vec<f64>, weights: Vec<f64> },
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct AlgorithmSection {
    /// cube | neg_cube | square | neg_square | tanh | neg_tanh | zero
    pub f: String,
    /// none | l1 | l2
    #[serde(default = "default_phi")]
    pub phi: String,
    #[serde(default)]
    pub beta: f64,
    pub tau: f64,
    /// Optional schedule table [[t, tau], ...]; overrides `tau` for the
    /// dynamics (tau remains the coefficient-context scale).
    #[serde(default)]
    pub tau_table: Option<Vec<(f64, f64)>>,
    #[serde(default = "default_nodes")]
    pub quadrature_nodes: usize,
}

fn default_phi() -> String {
    "none".to_string()
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSection {
    pub t_end: f64,
    #[serde(default = "default_record_dt")]
    pub record_dt: f64,
    #[serde(default)]
    pub snapshot_times: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSection {
    pub trials: usize,
}

impl Default for SimSection {
    fn default() -> Self {
        Self {
            trials: default_trials(),
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct OdeSection {
    pub dt: f64,
}

impl Default for OdeSection {
    fn default() -> Self {
        Self { dt: default_ode_dt() }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct PdeSection {
    pub n_cells: usize,
    pub x_min: Option<f64>,
    pub x_max: Option<f64>,
}

impl Default for PdeSection {
    fn default() -> Self {
        Self {
            n_cells: default_n_cells(),
            x_min: None,
            x_max: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecoupledSection {
    pub particles: usize,
    pub dt: f64,
    /// pde | ode: which solver provides the (Q, R) path.
    pub drive: String,
}

impl Default for DecoupledSection {
    fn default() -> Self {
        Self {
            particles: default_particles(),
            dt: default_dec_dt(),
            drive: default_drive(),
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct RocSection {
    pub times: Vec<f64>,
    pub thresholds: usize,
    pub threshold_min: f64,
    pub tolerance: f64,
}

impl Default for RocSection {
    fn default() -> Self {
        Self {
            times: Vec::new(),
            thresholds: default_thresholds(),
            threshold_min: default_threshold_min(),
            tolerance: default_roc_tol(),
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareSection {
    /// ode | pde | auto (ode when phi = none, else pde)
    pub target: String,
    pub band_abs: f64,
    pub band_sigma: f64,
    pub ks_tolerance: f64,
}

impl Default for CompareSection {
    fn default() -> Self {
        Self {
            target: "auto".to_string(),
            band_abs: default_band_abs(),
            band_sigma: default_band_sigma(),
            ks_tolerance: default_ks_tol(),
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrateSection {
    pub enabled: bool,
    pub n: usize,
    pub samples: usize,
    pub probe_q: f64,
}

impl Default for CalibrateSection {
    fn default() -> Self {
        Self {
            enabled: default_true(),
            n: default_cal_n(),
            samples: default_cal_samples(),
            probe_q: default_cal_probe(),
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub seed: u64,
    pub out_dir: String,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            seed: default_seed(),
            out_dir: default_out_dir(),
        }
    }
}

/// Everything a command needs, fully validated.
pub struct Resolved {
    pub raw: RunConfig,
    pub prior: PriorMeasure,
    pub source: SourceDist,
    pub f: Nonlinearity,
    pub phi: Regularizer,
    pub ctx: CoeffContext,
    pub sched: StepSchedule,
    pub feature: FeatureSpec,
    pub seed: u64,
    pub out_dir: std::path::PathBuf,
}

fn cfg_err(msg: impl Into<String>) -> AppError {
    AppError::config(msg.into())
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, AppError> {
        toml::from_str(text).map_err(|e| cfg_err(format!("config parse error: {e}")))
    }

    pub fn resolve(
        self,
        out_override: Option<&std::path::Path>,
        seed_override: Option<u64>,
    ) -> Result<Resolved, AppError> {
        let prior = match &self.model.prior {
            PriorSpec::Delta { value } => PriorMeasure::delta(*value),
            PriorSpec::Sparse { rho } => PriorMeasure::sparse(*rho),
            PriorSpec::Atoms { values, weights } => {
                if values.len() != weights.len() {
                    return Err(cfg_err("prior values/weights length mismatch"));
                }
                PriorMeasure::from_atoms(
                    values.iter().copied().zip(weights.iter().copied()).collect(),
                )
            }
        }
        .map_err(AppError::from_config_stage)?;

        let source = match &self.source {
            SourceSection::Rademacher => Ok(SourceDist::rademacher()),
            SourceSection::ThreeAtom { p } => SourceDist::three_atom(*p),
            SourceSection::Atoms { values, weights } => {
                if values.len() != weights.len() {
                    return Err(cfg_err("source values/weights length mismatch"));
                }
                SourceDist::from_atoms(
                    values.iter().copied().zip(weights.iter().copied()).collect(),
                )
            }
        }
        .map_err(AppError::from_config_stage)?;

        let f: Nonlinearity = self
            .algorithm
            .f
            .parse()
            .map_err(AppError::from_config_stage)?;
        let phi = match self.algorithm.phi.as_str() {
            "none" => Ok(Regularizer::None),
            "l1" => Regularizer::l1(self.algorithm.beta),
            "l2" => Regularizer::l2(self.algorithm.beta),
            other => {
                return Err(cfg_err(format!("unknown regularizer '{other}'")));
            }
        }
        .map_err(AppError::from_config_stage)?;

        if !(0.0..=1.0).contains(&self.model.q0) {
            return Err(cfg_err(format!(
                "model.q0 = {} outside [0, 1]",
                self.model.q0
            )));
        }
        if self.model.n == 0 {
            return Err(cfg_err("model.n must be positive"));
        }
        if self.time.t_end < 0.0 || !self.time.t_end.is_finite() {
            return Err(cfg_err(format!("time.t_end = {} invalid", self.time.t_end)));
        }
        for &t in &self.time.snapshot_times {
            if t < 0.0 || t > self.time.t_end + 1e-12 {
                return Err(cfg_err(format!(
                    "snapshot time {t} outside [0, t_end = {}]",
                    self.time.t_end
                )));
            }
        }
        for &t in &self.roc.times {
            if t < 0.0 || t > self.time.t_end + 1e-12 {
                return Err(cfg_err(format!(
                    "roc time {t} outside [0, t_end = {}]",
                    self.time.t_end
                )));
            }
        }

        let ctx = CoeffContext::with_nodes(
            f,
            phi,
            source.clone(),
            self.algorithm.tau,
            self.algorithm.quadrature_nodes,
        )
        .map_err(AppError::from_config_stage)?;
        let sched = match &self.algorithm.tau_table {
            None => StepSchedule::constant(self.algorithm.tau),
            Some(points) => StepSchedule::table(points.clone()),
        }
        .map_err(AppError::from_config_stage)?;

        let feature = match self.model.feature_mode.as_str() {
            "sparse" => match &self.model.prior {
                PriorSpec::Sparse { rho } => FeatureSpec::Sparse { rho: *rho },
                _ => {
                    return Err(cfg_err(
                        "feature_mode = \"sparse\" requires a sparse prior",
                    ));
                }
            },
            "iid" => FeatureSpec::FromPrior {
                prior: prior.clone(),
                mode: FeatureMode::Iid,
            },
            "deterministic" => FeatureSpec::FromPrior {
                prior: prior.clone(),
                mode: FeatureMode::Deterministic,
            },
            other => {
                return Err(cfg_err(format!("unknown feature_mode '{other}'")));
            }
        };

        let seed = seed_override.unwrap_or(self.run.seed);
        let out_dir = out_override
            .map(|p| p.to_path_buf())
            .unwrap_or_else(|| std::path::PathBuf::from(&self.run.out_dir));

        Ok(Resolved {
            raw: self,
            prior,
            source,
            f,
            phi,
            ctx,
            sched,
            feature,
            seed,
            out_dir,
        })
    }
}

impl Resolved {
    pub fn trial_config(&self) -> TrialConfig {
        TrialConfig {
            n: self.raw.model.n,
            feature: self.feature.clone(),
            q0: self.raw.model.q0,
            t_end: self.raw.time.t_end,
            record_dt: self.raw.time.record_dt,
            snapshot_times: self.raw.time.snapshot_times.clone(),
            seed: self.seed,
        }
    }

    pub fn grid(&self) -> Result<Grid1D, AppError> {
        match (self.raw.pde.x_min, self.raw.pde.x_max) {
            (Some(lo), Some(hi)) => {
                Grid1D::new(lo, hi, self.raw.pde.n_cells).map_err(AppError::from_config_stage)
            }
            (None, None) => {
                icalab::pde::auto_grid(&self.prior, self.raw.model.q0, self.raw.pde.n_cells)
                    .map_err(AppError::from_config_stage)
            }
            _ => Err(cfg_err("pde.x_min and pde.x_max must be given together")),
        }
    }

    pub fn pde_config(&self, snapshot_times: Vec<f64>) -> Result<PdeConfig, AppError> {
        Ok(PdeConfig {
            prior: self.prior.clone(),
            q0: self.raw.model.q0,
            t_end: self.raw.time.t_end,
            grid: Some(self.grid()?),
            n_cells: self.raw.pde.n_cells,
            snapshot_times,
        })
    }

    pub fn decoupled_config(&self, snapshot_times: Vec<f64>) -> DecoupledConfig {
        DecoupledConfig {
            n_particles: self.raw.decoupled.particles,
            prior: self.prior.clone(),
            q0: self.raw.model.q0,
            t_end: self.raw.time.t_end,
            dt: self.raw.decoupled.dt,
            record_dt: self.raw.time.record_dt,
            snapshot_times,
            seed: self.seed.wrapping_add(0x5eed_dec0),
        }
    }

    /// Atom values of the limiting feature measure (for conditioning
    /// histograms).
    pub fn atom_values(&self) -> Vec<f64> {
        self.prior.atom_values()
    }
}
