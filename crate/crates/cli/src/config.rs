//! Run configuration: a TOML file with one section per concern. Every section
//! rejects unknown keys; omitted keys take the documented defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use stark_magic::evolution::{KrylovConfig, Propagator, TimeGrid};
use stark_magic::hamiltonian::{LongRangeSpec, PowerLaw, DEFAULT_POWER_LAW_EXPONENT};
use stark_magic::quench::Diagnostics;
use stark_magic::shadows::{DEFAULT_SETTINGS, DEFAULT_SHOTS};
use stark_magic::state::DEFAULT_MAX_QUBITS;
use stark_magic::theory::SaturationMode;
use stark_magic::{ChainSpec, InitialKind, ModelSpec};

use crate::error::CliError;

pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; every random stream derives from it.
    #[serde(default)]
    pub seed: u64,
    /// Output root (`--out` wins). Not part of the run id.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub initial: InitialConfig,
    #[serde(default)]
    pub time: TimeConfig,
    #[serde(default)]
    pub evolution: EvolutionConfig,
    #[serde(default)]
    pub diagnostics: DiagnosticsConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shadows: Option<ShadowsConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theory: Option<TheoryConfig>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// Nearest-neighbour chain.
    #[default]
    Chain,
    /// Power-law couplings `J0 / |i-j|^exponent`.
    PowerLaw,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default)]
    pub kind: ModelKind,
    #[serde(default = "default_l")]
    pub l: usize,
    #[serde(default = "one")]
    pub j: f64,
    #[serde(default = "one")]
    pub h: f64,
    /// Tilt values; `quench` writes one trace per value.
    #[serde(default = "default_f")]
    pub f: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub j0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exponent: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cutoff: Option<usize>,
}

fn default_l() -> usize {
    10
}
fn one() -> f64 {
    1.0
}
fn default_f() -> Vec<f64> {
    vec![1.0]
}
fn yes() -> bool {
    true
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            kind: ModelKind::Chain,
            l: default_l(),
            j: 1.0,
            h: 1.0,
            f: default_f(),
            j0: None,
            exponent: None,
            cutoff: None,
        }
    }
}

impl ModelConfig {
    /// Model at size `l` and tilt `f`.
    pub fn spec(&self, l: usize, f: f64) -> ModelSpec {
        match self.kind {
            ModelKind::Chain => ChainSpec::new(l, self.j, self.h, f).into(),
            ModelKind::PowerLaw => {
                let law = PowerLaw {
                    j0: self.j0.unwrap_or(self.j),
                    exponent: self.exponent.unwrap_or(DEFAULT_POWER_LAW_EXPONENT),
                    cutoff: self.cutoff,
                };
                LongRangeSpec::from_power_law(l, &law, self.h, f).into()
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialConfig {
    #[serde(default = "default_kinds")]
    pub kinds: Vec<InitialKind>,
    /// Ensemble size for `random_bloch`.
    #[serde(default = "default_ensemble")]
    pub ensemble_size: usize,
}

fn default_kinds() -> Vec<InitialKind> {
    vec![InitialKind::XPolarized]
}
fn default_ensemble() -> usize {
    10
}

impl Default for InitialConfig {
    fn default() -> Self {
        Self {
            kinds: default_kinds(),
            ensemble_size: default_ensemble(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GridKind {
    #[default]
    Log,
    Linear,
    Explicit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeConfig {
    #[serde(default)]
    pub grid: GridKind,
    #[serde(default = "default_t_min")]
    pub t_min: f64,
    #[serde(default = "default_t_max")]
    pub t_max: f64,
    /// Number of grid points (the optional `t = 0` not counted for `log`).
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "yes")]
    pub include_zero: bool,
    /// Times for `grid = "explicit"`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub times: Option<Vec<f64>>,
}

fn default_t_min() -> f64 {
    0.1
}
fn default_t_max() -> f64 {
    1e3
}
fn default_n() -> usize {
    120
}

impl Default for TimeConfig {
    fn default() -> Self {
        Self {
            grid: GridKind::Log,
            t_min: default_t_min(),
            t_max: default_t_max(),
            n: default_n(),
            include_zero: true,
            times: None,
        }
    }
}

impl TimeConfig {
    pub fn to_grid(&self) -> Result<TimeGrid, CliError> {
        let grid = match self.grid {
            GridKind::Log => TimeGrid::log(self.t_min, self.t_max, self.n, self.include_zero),
            GridKind::Linear => TimeGrid::linear(self.t_max, self.n),
            GridKind::Explicit => {
                let times = self
                    .times
                    .clone()
                    .ok_or_else(|| CliError::schema("time.times", "required when time.grid = \"explicit\""))?;
                TimeGrid::from_times(times)
            }
        };
        grid.map_err(|e| CliError::schema("time", e.to_string()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    /// Exact propagation (dense eigen or Krylov).
    #[default]
    Exact,
    /// Second-order Trotter circuit with step `evolution.dt`.
    Digital,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PropagatorKind {
    #[default]
    Auto,
    Eigen,
    Krylov,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvolutionConfig {
    #[serde(default)]
    pub protocol: Protocol,
    #[serde(default)]
    pub propagator: PropagatorKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(default = "default_krylov_dimension")]
    pub krylov_dimension: usize,
    #[serde(default = "default_krylov_tolerance")]
    pub krylov_tolerance: f64,
    #[serde(default = "default_max_qubits")]
    pub max_qubits: usize,
}

fn default_krylov_dimension() -> usize {
    KrylovConfig::default().dimension
}
fn default_krylov_tolerance() -> f64 {
    KrylovConfig::default().tolerance
}
fn default_max_qubits() -> usize {
    DEFAULT_MAX_QUBITS
}

impl Default for EvolutionConfig {
    fn default() -> Self {
        Self {
            protocol: Protocol::Exact,
            propagator: PropagatorKind::Auto,
            dt: None,
            krylov_dimension: default_krylov_dimension(),
            krylov_tolerance: default_krylov_tolerance(),
            max_qubits: default_max_qubits(),
        }
    }
}

impl EvolutionConfig {
    pub fn propagator(&self) -> Result<Propagator, CliError> {
        Ok(match (self.protocol, self.propagator) {
            (Protocol::Digital, _) => Propagator::Digital {
                dt: self
                    .dt
                    .ok_or_else(|| CliError::schema("evolution.dt", "required when evolution.protocol = \"digital\""))?,
            },
            (Protocol::Exact, PropagatorKind::Auto) => Propagator::Auto,
            (Protocol::Exact, PropagatorKind::Eigen) => Propagator::Eigen,
            (Protocol::Exact, PropagatorKind::Krylov) => Propagator::Krylov,
        })
    }

    pub fn krylov(&self) -> KrylovConfig {
        KrylovConfig {
            dimension: self.krylov_dimension,
            tolerance: self.krylov_tolerance,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsConfig {
    #[serde(default = "yes")]
    pub m2: bool,
    /// Half-chain von Neumann and Rényi-2 entropies.
    #[serde(default = "yes")]
    pub entanglement: bool,
    /// Purity / Rényi-2 rows of the randomized-measurement estimators.
    #[serde(default = "yes")]
    pub purity: bool,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        Self {
            m2: true,
            entanglement: true,
            purity: true,
        }
    }
}

impl DiagnosticsConfig {
    pub fn trace(&self) -> Diagnostics {
        Diagnostics {
            m2: self.m2,
            entanglement: self.entanglement,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub l: Vec<usize>,
    pub f: Vec<f64>,
    /// Initial state whose curves are collapsed and plotted parametrically.
    #[serde(default = "default_collapse_init")]
    pub collapse_init: InitialKind,
    #[serde(default = "default_bootstrap")]
    pub n_bootstrap: usize,
    /// Gaussian smoothing width in decades of time.
    #[serde(default = "default_smoothing")]
    pub smoothing: f64,
    /// Size used for the parametric relation (largest swept size by default).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parametric_l: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget_seconds: Option<f64>,
}

fn default_collapse_init() -> InitialKind {
    InitialKind::YPolarized
}
fn default_bootstrap() -> usize {
    100
}
fn default_smoothing() -> f64 {
    stark_magic::scaling::DEFAULT_SMOOTHING
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShadowsConfig {
    /// Number of random local-Clifford settings `N_U`.
    #[serde(default = "default_settings")]
    pub n_settings: usize,
    /// Shots per setting `N_M`.
    #[serde(default = "default_shots")]
    pub n_shots: usize,
    /// Evaluation times; the configured time grid when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub times: Option<Vec<f64>>,
    /// Sites of the purity region; the left half chain when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region: Option<Vec<usize>>,
    #[serde(default = "default_shadow_bootstrap")]
    pub n_bootstrap: usize,
    /// Largest size for which exact comparison columns are filled.
    #[serde(default = "default_exact_limit")]
    pub exact_max_qubits: usize,
    /// Also write the raw shot records.
    #[serde(default)]
    pub save_shots: bool,
}

fn default_settings() -> usize {
    DEFAULT_SETTINGS
}
fn default_shots() -> usize {
    DEFAULT_SHOTS
}
fn default_shadow_bootstrap() -> usize {
    200
}
fn default_exact_limit() -> usize {
    stark_magic::magic::MOMENT_TABLE_MAX_QUBITS
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SaturationKind {
    #[default]
    Free,
    Plateau,
}

impl From<SaturationKind> for SaturationMode {
    fn from(s: SaturationKind) -> Self {
        match s {
            SaturationKind::Free => SaturationMode::Free,
            SaturationKind::Plateau => SaturationMode::Plateau,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TheoryConfig {
    /// Sizes for the Schrieffer–Wolff construction.
    #[serde(default = "default_theory_l")]
    pub l: Vec<usize>,
    /// Tilt of the construction; `h = (h/F)·F`.
    #[serde(default = "default_theory_f")]
    pub f: f64,
    #[serde(default = "default_ratios")]
    pub h_over_f: Vec<f64>,
    /// Run id of an earlier `quench` or `sweep` run in the same output root
    /// whose traces receive closure fits.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace_run: Option<String>,
    #[serde(default)]
    pub saturation: SaturationKind,
}

fn default_theory_l() -> Vec<usize> {
    vec![4, 6, 8]
}
fn default_theory_f() -> f64 {
    10.0
}
fn default_ratios() -> Vec<f64> {
    vec![0.0, 0.05, 0.1, 0.2]
}

impl RunConfig {
    /// Parses TOML; errors name the offending key path.
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let de = toml::Deserializer::parse(text).map_err(|e| CliError::schema("<document>", e.to_string()))?;
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            CliError::schema(&path, e.into_inner().to_string())
        })
    }

    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration is always representable as TOML")
    }

    /// Checks every cross-field constraint; runs before any compute.
    pub fn validate(&self) -> Result<(), CliError> {
        let m = &self.model;
        if m.l < 2 {
            return Err(CliError::schema("model.l", "at least two sites are required"));
        }
        if m.f.is_empty() {
            return Err(CliError::schema("model.f", "at least one tilt value is required"));
        }
        if m.kind == ModelKind::Chain && (m.j0.is_some() || m.exponent.is_some() || m.cutoff.is_some()) {
            return Err(CliError::schema("model", "j0/exponent/cutoff only apply to kind = \"power_law\""));
        }
        for (key, v) in [("model.j", m.j), ("model.h", m.h)] {
            if !v.is_finite() {
                return Err(CliError::schema(key, "must be finite"));
            }
        }
        if m.f.iter().any(|f| !f.is_finite()) {
            return Err(CliError::schema("model.f", "must be finite"));
        }
        if self.initial.kinds.is_empty() {
            return Err(CliError::schema("initial.kinds", "at least one initial state is required"));
        }
        if self.initial.ensemble_size == 0 {
            return Err(CliError::schema("initial.ensemble_size", "must be at least 1"));
        }
        self.time.to_grid()?;
        self.evolution.propagator()?;
        if let Some(s) = &self.sweep {
            if s.l.is_empty() || s.f.is_empty() {
                return Err(CliError::schema("sweep", "l and f must be non-empty"));
            }
            if let Some(pl) = s.parametric_l {
                if !s.l.contains(&pl) {
                    return Err(CliError::schema("sweep.parametric_l", "must be one of sweep.l"));
                }
            }
            if !(s.smoothing >= 0.0) {
                return Err(CliError::schema("sweep.smoothing", "must be >= 0"));
            }
        }
        if let Some(s) = &self.shadows {
            if s.n_shots < 4 {
                return Err(CliError::schema(
                    "shadows.n_shots",
                    format!("N_M = {} is below the bound N_M >= 4 required by the four-copy W estimator", s.n_shots),
                ));
            }
            if s.n_settings < stark_magic::shadows::MIN_BOOTSTRAP_SETTINGS {
                return Err(CliError::schema(
                    "shadows.n_settings",
                    format!("at least {} settings are required", stark_magic::shadows::MIN_BOOTSTRAP_SETTINGS),
                ));
            }
            if let Some(r) = &s.region {
                if r.iter().any(|&i| i >= m.l) {
                    return Err(CliError::schema("shadows.region", "site index outside the chain"));
                }
            }
        }
        if let Some(t) = &self.theory {
            if !(t.f > 0.0) {
                return Err(CliError::schema("theory.f", "must be positive"));
            }
            if t.l.iter().any(|&l| l < 2) || t.h_over_f.is_empty() {
                return Err(CliError::schema("theory", "l values must be >= 2 and h_over_f non-empty"));
            }
        }
        Ok(())
    }

    /// Content hash of the configuration (without the output root) and the
    /// code version, scoped to one subcommand.
    pub fn run_id(&self, command: &str) -> String {
        let mut canonical = self.clone();
        canonical.out = None;
        let json = serde_json::to_string(&canonical).expect("configuration serializes");
        let mut h = Sha256::new();
        h.update(command.as_bytes());
        h.update([0]);
        h.update(CODE_VERSION.as_bytes());
        h.update([0]);
        h.update(json.as_bytes());
        h.finalize()[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}
