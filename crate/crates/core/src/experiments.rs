//! Scenario registry, runner and result files.
//!
//! A [`Scenario`] lists one or more cases (model configuration plus initial
//! state recipes) evaluated on a shared time grid. [`Runner::run`] returns the
//! results in memory; [`write_outputs`] turns them into flat files.

use std::collections::VecDeque;
use std::f64::consts::TAU;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::environment::{build_h_e, env_eigenstate_from, EnvSpec};
use crate::error::{Error, Result};
use crate::evolution::{EvolvingState, SpectralModel};
use crate::linalg::{eigh, EigenDecomposition, PureState, Space};
use crate::model::{assemble, spectra, AssembledModel, ModelConfig, Spectra, Variant};
use crate::observables::{
    histogram, observe_with_spectrum, record_header, write_records, ObservableRecord,
    ObserveOptions, DEFAULT_TOP_K,
};
use crate::sho::WavefunctionSample;

pub const DESK_ENV_DIM: usize = 200;
pub const FULL_ENV_DIM: usize = 600;

/// Environment dimension that registry eigenstate indices refer to.
pub const REFERENCE_ENV_DIM: usize = 600;

pub const DEFAULT_BINS: usize = 60;

/// Weak and strong interaction scales.
pub const E_I_WEAK: f64 = 0.03;
pub const E_I_STRONG: f64 = 0.25;
/// Environment self-Hamiltonian scale used by the oscillator scenarios.
pub const E_E: f64 = 0.75;
/// Interaction scale of the qubit scenarios.
pub const E_I_QUBIT: f64 = 0.03;
/// Environment self-Hamiltonian scale of the qubit scenarios.
pub const E_E_QUBIT: f64 = 0.025;
pub const N_S: usize = 30;

const BATCH: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Spacing {
    Linear,
    Logarithmic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub spacing: Spacing,
    pub t_start: f64,
    pub t_end: f64,
    pub samples: usize,
}

impl TimeGrid {
    pub fn linear(t_start: f64, t_end: f64, samples: usize) -> Self {
        Self {
            spacing: Spacing::Linear,
            t_start,
            t_end,
            samples,
        }
    }

    pub fn logarithmic(t_start: f64, t_end: f64, samples: usize) -> Self {
        Self {
            spacing: Spacing::Logarithmic,
            t_start,
            t_end,
            samples,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_start.is_finite() && self.t_end.is_finite()) || self.t_start >= self.t_end {
            return Err(Error::InvalidParameter(format!(
                "time grid needs finite t_start < t_end, got [{}, {}]",
                self.t_start, self.t_end
            )));
        }
        if self.samples < 2 {
            return Err(Error::InvalidParameter(
                "time grid needs at least 2 samples".into(),
            ));
        }
        if self.spacing == Spacing::Logarithmic && self.t_start <= 0.0 {
            return Err(Error::InvalidParameter(
                "logarithmic time grid needs t_start > 0".into(),
            ));
        }
        Ok(())
    }

    pub fn times(&self) -> Result<Vec<f64>> {
        self.validate()?;
        let last = (self.samples - 1) as f64;
        let mut times: Vec<f64> = match self.spacing {
            Spacing::Linear => {
                let step = (self.t_end - self.t_start) / last;
                (0..self.samples)
                    .map(|i| self.t_start + i as f64 * step)
                    .collect()
            }
            Spacing::Logarithmic => {
                let (a, b) = (self.t_start.ln(), self.t_end.ln());
                (0..self.samples)
                    .map(|i| (a + (b - a) * i as f64 / last).exp())
                    .collect()
            }
        };
        times[0] = self.t_start;
        times[self.samples - 1] = self.t_end;
        Ok(times)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CatTerm {
    pub weight: C64,
    pub alpha: C64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PositionTerm {
    pub weight: C64,
    pub q: f64,
}

/// Initial system state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SystemRecipe {
    Coherent {
        alpha: C64,
    },
    Cat {
        terms: Vec<CatTerm>,
    },
    /// q eigenvectors nearest each target position.
    PositionSuperposition {
        terms: Vec<PositionTerm>,
    },
    NumberEigenstate {
        n: usize,
    },
    SpinCat {
        up: C64,
        down: C64,
    },
}

fn re(x: f64) -> C64 {
    C64::new(x, 0.0)
}

impl SystemRecipe {
    /// `(1/sqrt 3)|3> + sqrt(2/3)|-2.1>`.
    pub fn standard_cat() -> Self {
        SystemRecipe::Cat {
            terms: vec![
                CatTerm {
                    weight: re((1.0f64 / 3.0).sqrt()),
                    alpha: re(3.0),
                },
                CatTerm {
                    weight: re((2.0f64 / 3.0).sqrt()),
                    alpha: re(-2.1),
                },
            ],
        }
    }

    /// The cat's weights placed on q eigenvectors at the packet centers
    /// `sqrt(2) Re alpha`.
    pub fn standard_position_cat() -> Self {
        SystemRecipe::PositionSuperposition {
            terms: vec![
                PositionTerm {
                    weight: re((1.0f64 / 3.0).sqrt()),
                    q: 3.0 * std::f64::consts::SQRT_2,
                },
                PositionTerm {
                    weight: re((2.0f64 / 3.0).sqrt()),
                    q: -2.1 * std::f64::consts::SQRT_2,
                },
            ],
        }
    }

    pub fn standard_spin_cat() -> Self {
        SystemRecipe::SpinCat {
            up: re((1.0f64 / 3.0).sqrt()),
            down: re((2.0f64 / 3.0).sqrt()),
        }
    }

    pub fn build(&self, model: &AssembledModel) -> Result<PureState> {
        if let SystemRecipe::SpinCat { up, down } = self {
            if model.variant() == Variant::Acl {
                return Err(Error::InvalidParameter(
                    "spin_cat initial state requires a qubit model".into(),
                ));
            }
            return PureState::normalized(Space::System, vec![*up, *down]);
        }
        let sho = model.sho().ok_or_else(|| {
            Error::InvalidParameter("oscillator initial state requires the ACL model".into())
        })?;
        match self {
            SystemRecipe::Coherent { alpha } => sho.coherent_state(*alpha),
            SystemRecipe::Cat { terms } => {
                let t: Vec<(C64, C64)> = terms.iter().map(|c| (c.weight, c.alpha)).collect();
                sho.cat_state(&t)
            }
            SystemRecipe::PositionSuperposition { terms } => {
                let t: Vec<(C64, f64)> = terms.iter().map(|c| (c.weight, c.q)).collect();
                sho.position_superposition(&t)
            }
            SystemRecipe::NumberEigenstate { n } => sho.number_state(*n),
            SystemRecipe::SpinCat { .. } => unreachable!(),
        }
    }
}

/// Initial environment state: an eigenvector of the environment reference
/// Hamiltonian `E_e R_e + E0_e` built from the case's `EnvSpec`, whether or
/// not that term enters `H_w`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnvRecipe {
    /// 1-based index in ascending energy.
    Eigenstate { index: usize },
    /// Index given for an environment of `reference_dim` states, rescaled to
    /// the actual dimension as `max(1, round(index * n_e / reference_dim))`.
    ScaledEigenstate { index: usize, reference_dim: usize },
}

impl EnvRecipe {
    pub fn scaled(index: usize) -> Self {
        EnvRecipe::ScaledEigenstate {
            index,
            reference_dim: REFERENCE_ENV_DIM,
        }
    }

    pub fn resolve(&self, n_e: usize) -> Result<usize> {
        let index = match *self {
            EnvRecipe::Eigenstate { index } => index,
            EnvRecipe::ScaledEigenstate {
                index,
                reference_dim,
            } => {
                if reference_dim == 0 || index == 0 || index > reference_dim {
                    return Err(Error::IndexOutOfRange {
                        index,
                        valid: format!("1..={reference_dim}"),
                    });
                }
                ((index as f64 * n_e as f64 / reference_dim as f64).round() as usize).max(1)
            }
        };
        if index == 0 || index > n_e {
            return Err(Error::IndexOutOfRange {
                index,
                valid: format!("1..={n_e}"),
            });
        }
        Ok(index)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Case {
    pub label: String,
    pub config: ModelConfig,
    pub system: SystemRecipe,
    pub env: EnvRecipe,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    /// Observable trajectories on the time grid.
    #[default]
    Dynamics,
    /// Eigenvalue spectra and histograms of the first case's Hamiltonians.
    Spectra,
    /// Trajectories plus numerical-breakdown checks.
    Validation,
}

fn default_top_k() -> usize {
    DEFAULT_TOP_K
}

fn default_snapshot_states() -> usize {
    2
}

fn default_bins() -> usize {
    DEFAULT_BINS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub kind: ScenarioKind,
    #[serde(default = "default_top_k")]
    pub top_k: usize,
    /// Also record the environment-side entropy.
    #[serde(default)]
    pub env_entropy: bool,
    /// Times at which Schmidt-state wavefunctions are dumped.
    #[serde(default)]
    pub snapshot_times: Vec<f64>,
    #[serde(default = "default_snapshot_states")]
    pub snapshot_states: usize,
    #[serde(default = "default_bins")]
    pub bins: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub grid: TimeGrid,
    pub cases: Vec<Case>,
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self> {
        let s: Scenario = toml::from_str(text).map_err(|e| Error::ConfigParse(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::ConfigParse(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.cases.is_empty() {
            return Err(Error::InvalidParameter(format!(
                "scenario `{}` has no cases",
                self.name
            )));
        }
        if self.kind != ScenarioKind::Spectra {
            self.grid.validate()?;
        }
        if self.top_k == 0 {
            return Err(Error::InvalidParameter("top_k must be >= 1".into()));
        }
        if self.bins == 0 {
            return Err(Error::InvalidParameter("bins must be >= 1".into()));
        }
        let mut labels: Vec<&str> = self.cases.iter().map(|c| c.label.as_str()).collect();
        labels.sort_unstable();
        if labels.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidParameter("case labels must be unique".into()));
        }
        for case in &self.cases {
            case.config.validate()?;
            case.env.resolve(case.config.env.n_e)?;
        }
        Ok(())
    }

    /// Sets the environment dimension of every case.
    pub fn set_env_dim(&mut self, n_e: usize) {
        for case in &mut self.cases {
            case.config.env.n_e = n_e;
        }
    }

    pub fn set_seeds(&mut self, seed_interaction: Option<u64>, seed_env: Option<u64>) {
        for case in &mut self.cases {
            if let Some(s) = seed_interaction {
                case.config.env.seed_interaction = s;
            }
            if let Some(s) = seed_env {
                case.config.env.seed_env = s;
            }
        }
    }

    pub fn case(&self, label: &str) -> Option<&Case> {
        self.cases.iter().find(|c| c.label == label)
    }
}

pub const SCENARIO_NAMES: [&str; 12] = [
    "decoupled_coherent",
    "decoupled_cat",
    "entangle_weak_strong",
    "einselection_moments",
    "good_measurement",
    "copycat_snapshots",
    "equilibrium_sweep",
    "rcl",
    "rcl_env",
    "quantum_limit",
    "spectra",
    "validate_numerics",
];

pub fn registered_scenarios() -> &'static [&'static str] {
    &SCENARIO_NAMES
}

/// One-line summary of a registered scenario.
pub fn describe(name: &str) -> Option<&'static str> {
    Some(match name {
        "decoupled_coherent" => "coherent packet, no interaction: periodic wavefunction snapshots",
        "decoupled_cat" => "two-packet cat, no interaction: periodic wavefunction snapshots",
        "entangle_weak_strong" => "entropy growth for weak and strong coupling",
        "einselection_moments" => "Schmidt-state moments through einselection",
        "good_measurement" => {
            "slow oscillator, position cat: Schmidt weights track the branch weights"
        }
        "copycat_snapshots" => "early Schmidt states of a cat on log-spaced times",
        "equilibrium_sweep" => "entropy and energies for a sweep of environment eigenstates",
        "rcl" => "qubit measured by the environment, no self-Hamiltonians",
        "rcl_env" => "qubit model with an environment self-Hamiltonian",
        "quantum_limit" => "system Hamiltonian dominates: cat, coherent and number states",
        "spectra" => "eigenvalue spectra and histograms of H_s, H_e, H_w",
        "validate_numerics" => "long-time run with numerical breakdown checks",
        _ => return None,
    })
}

/// Environment indices of the equilibration sweep, for 600 states.
pub const SWEEP_INDICES: [usize; 7] = [1, 100, 200, 300, 400, 500, 600];

/// Default initial environment eigenstate, for 600 states.
pub const DEFAULT_ENV_INDEX: usize = 500;

fn acl_case(label: &str, n_e: usize, e_i: f64, e_e: f64, system: SystemRecipe) -> Case {
    Case {
        label: label.to_string(),
        config: ModelConfig::acl(N_S, EnvSpec::new(n_e, e_i, e_e)),
        system,
        env: EnvRecipe::scaled(DEFAULT_ENV_INDEX),
    }
}

fn base(name: &str, grid: TimeGrid, cases: Vec<Case>) -> Scenario {
    Scenario {
        name: name.to_string(),
        kind: ScenarioKind::Dynamics,
        top_k: DEFAULT_TOP_K,
        env_entropy: false,
        snapshot_times: Vec::new(),
        snapshot_states: 2,
        bins: DEFAULT_BINS,
        output_dir: None,
        grid,
        cases,
    }
}

fn decades(from: i32, to: i32) -> Vec<f64> {
    (from..=to).map(|k| 10f64.powi(k)).collect()
}

/// The registered scenario `name` with environment dimension `n_e`.
pub fn registered(name: &str, n_e: usize) -> Result<Scenario> {
    let cat = SystemRecipe::standard_cat;
    let scenario = match name {
        "decoupled_coherent" | "decoupled_cat" => {
            let system = if name == "decoupled_coherent" {
                SystemRecipe::Coherent { alpha: re(3.0) }
            } else {
                cat()
            };
            let mut s = base(
                name,
                TimeGrid::linear(0.0, TAU, 9),
                vec![acl_case("decoupled", n_e, 0.0, E_E, system)],
            );
            s.snapshot_times = (0..=8).map(|k| k as f64 * TAU / 8.0).collect();
            s.snapshot_states = 1;
            s
        }
        "entangle_weak_strong" => {
            let mut s = base(
                name,
                TimeGrid::logarithmic(1e-2, 1e4, 200),
                vec![
                    acl_case("weak", n_e, E_I_WEAK, E_E, cat()),
                    acl_case("strong", n_e, E_I_STRONG, E_E, cat()),
                ],
            );
            s.env_entropy = true;
            s
        }
        "einselection_moments" => {
            let mut s = base(
                name,
                TimeGrid::linear(0.0, 30.0 * TAU, 721),
                vec![acl_case("weak", n_e, E_I_WEAK, E_E, cat())],
            );
            s.snapshot_times = vec![2.5 * TAU, 4.0 * TAU];
            s
        }
        "good_measurement" => {
            let mut case = acl_case(
                "slow_oscillator",
                n_e,
                E_I_WEAK,
                E_E,
                SystemRecipe::standard_position_cat(),
            );
            case.config.omega = 1e-3;
            base(name, TimeGrid::logarithmic(1e-2, 1e5, 200), vec![case])
        }
        "copycat_snapshots" => {
            let mut s = base(
                name,
                TimeGrid::logarithmic(1e-3, 1e2, 101),
                vec![acl_case("weak", n_e, E_I_WEAK, E_E, cat())],
            );
            s.snapshot_times = decades(-3, 2);
            s
        }
        "equilibrium_sweep" => {
            let mut cases = Vec::new();
            for (tag, e_i) in [("weak", E_I_WEAK), ("strong", E_I_STRONG)] {
                for index in SWEEP_INDICES {
                    let mut c = acl_case(&format!("{tag}_ie{index}"), n_e, e_i, E_E, cat());
                    c.env = EnvRecipe::scaled(index);
                    cases.push(c);
                }
            }
            base(name, TimeGrid::logarithmic(1e-1, 1e5, 200), cases)
        }
        "rcl" | "rcl_env" => {
            let env = EnvSpec::new(n_e, E_I_QUBIT, E_E_QUBIT);
            let config = if name == "rcl" {
                ModelConfig::rcl(env)
            } else {
                ModelConfig::rcl_env(env)
            };
            base(
                name,
                TimeGrid::logarithmic(1e-1, 1e6, 351),
                vec![Case {
                    label: name.to_string(),
                    config,
                    system: SystemRecipe::standard_spin_cat(),
                    env: EnvRecipe::scaled(DEFAULT_ENV_INDEX),
                }],
            )
        }
        "quantum_limit" => {
            let (e_i, e_e) = (3e-3, 0.015);
            let mut cases = vec![
                acl_case("cat", n_e, e_i, e_e, cat()),
                acl_case(
                    "coherent",
                    n_e,
                    e_i,
                    e_e,
                    SystemRecipe::Coherent { alpha: re(3.0) },
                ),
            ];
            for n in [2, 6, 11] {
                cases.push(acl_case(
                    &format!("n{n}"),
                    n_e,
                    e_i,
                    e_e,
                    SystemRecipe::NumberEigenstate { n },
                ));
            }
            let mut s = base(name, TimeGrid::logarithmic(1e-1, 1e7, 200), cases);
            s.snapshot_times = decades(4, 7);
            s.snapshot_states = 3;
            s
        }
        "spectra" => {
            let mut s = base(
                name,
                TimeGrid::linear(0.0, 1.0, 2),
                vec![Case {
                    label: "spectra".to_string(),
                    config: ModelConfig::spectra_preset(N_S, n_e),
                    system: SystemRecipe::NumberEigenstate { n: 0 },
                    env: EnvRecipe::Eigenstate { index: 1 },
                }],
            );
            s.kind = ScenarioKind::Spectra;
            s
        }
        "validate_numerics" => {
            let mut s = base(
                name,
                TimeGrid::logarithmic(1e-2, 1e18, 201),
                vec![acl_case("weak", n_e, E_I_WEAK, E_E, cat())],
            );
            s.kind = ScenarioKind::Validation;
            s
        }
        other => {
            return Err(Error::InvalidParameter(format!(
                "unknown scenario `{other}`; known: {}",
                SCENARIO_NAMES.join(", ")
            )))
        }
    };
    Ok(scenario)
}

/// Thresholds of the numerical-breakdown checks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidationThresholds {
    pub norm_drift: f64,
    pub energy_drift: f64,
    pub entropy_excess: f64,
    /// Tolerated `1 - F` of the double-double phase comparison.
    pub phase_infidelity: f64,
}

impl Default for ValidationThresholds {
    fn default() -> Self {
        Self {
            norm_drift: 1e-9,
            energy_drift: 1e-8,
            entropy_excess: 1e-6,
            phase_infidelity: 1e-2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationSample {
    pub t: f64,
    pub norm_drift: f64,
    pub energy_drift: f64,
    /// `S - ln(n_min)`.
    pub entropy_excess: f64,
    pub phase_infidelity: f64,
    pub flags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub max_abs_energy: f64,
    /// `2^53 / max|E_k|`.
    pub predicted_horizon: f64,
    pub thresholds: ValidationThresholds,
    pub samples: Vec<ValidationSample>,
    /// Time of the first flagged sample.
    pub first_flag: Option<f64>,
}

impl ValidationReport {
    pub fn first_flagged(&self) -> Option<&ValidationSample> {
        self.samples.iter().find(|s| !s.flags.is_empty())
    }
}

/// One Schmidt state at one snapshot time.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub t: f64,
    /// 1-based rank by eigenvalue.
    pub rank: usize,
    pub p: f64,
    pub amplitudes: Vec<C64>,
    /// q-basis wavefunction (oscillator only).
    pub wavefunction: Option<Vec<WavefunctionSample>>,
}

#[derive(Debug, Clone)]
pub struct CaseResult {
    pub label: String,
    pub config: ModelConfig,
    pub system: SystemRecipe,
    pub env: EnvRecipe,
    pub env_index: usize,
    /// Eigenvalue of the initial environment eigenstate.
    pub env_energy: f64,
    pub max_abs_energy: f64,
    pub phase_horizon: f64,
    pub reconstruction_residual: f64,
    /// `<H_w>` from the eigenbasis populations.
    pub energy: f64,
    pub records: Vec<ObservableRecord>,
    pub snapshots: Vec<Snapshot>,
    pub validation: Option<ValidationReport>,
}

#[derive(Debug, Clone)]
pub struct ScenarioResult {
    pub scenario: Scenario,
    pub cases: Vec<CaseResult>,
    pub spectra: Option<Spectra>,
    pub wall_seconds: f64,
}

impl ScenarioResult {
    pub fn case(&self, label: &str) -> Option<&CaseResult> {
        self.cases.iter().find(|c| c.label == label)
    }
}

/// Assembled model, its diagonalization and the environment reference basis.
#[derive(Debug)]
pub struct Prepared {
    pub model: AssembledModel,
    pub spectral: SpectralModel,
    pub env_reference: EigenDecomposition,
}

impl Prepared {
    pub fn new(config: &ModelConfig) -> Result<Self> {
        let model = assemble(config)?;
        let spectral = SpectralModel::prepare(&model)?;
        let env_reference = eigh(&build_h_e(&config.env)?)?;
        Ok(Self {
            model,
            spectral,
            env_reference,
        })
    }

    /// Encodes the product of the two recipes; returns the state and the
    /// resolved environment index.
    pub fn initial_state(
        &self,
        system: &SystemRecipe,
        env: &EnvRecipe,
    ) -> Result<(EvolvingState, usize)> {
        let psi_s = system.build(&self.model)?;
        let index = env.resolve(self.model.n_e())?;
        let psi_e = env_eigenstate_from(&self.env_reference, index)?;
        Ok((self.spectral.encode(&psi_s, &psi_e)?, index))
    }
}

/// Runs scenarios, keeping the most recently used diagonalizations.
#[derive(Debug)]
pub struct Runner {
    cache: VecDeque<(String, Arc<Prepared>)>,
    capacity: usize,
}

impl Default for Runner {
    fn default() -> Self {
        Self::new()
    }
}

impl Runner {
    /// Caches a single diagonalization.
    pub fn new() -> Self {
        Self::with_capacity(1)
    }

    pub fn with_capacity(capacity: usize) -> Self {
        Self {
            cache: VecDeque::new(),
            capacity,
        }
    }

    pub fn clear(&mut self) {
        self.cache.clear();
    }

    pub fn prepare(&mut self, config: &ModelConfig) -> Result<Arc<Prepared>> {
        let key = serde_json::to_string(config)?;
        if let Some(pos) = self.cache.iter().position(|(k, _)| *k == key) {
            let entry = self.cache.remove(pos).expect("position is valid");
            let prepared = entry.1.clone();
            self.cache.push_back(entry);
            return Ok(prepared);
        }
        // Evict first so two large decompositions never coexist.
        while !self.cache.is_empty() && self.cache.len() >= self.capacity {
            self.cache.pop_front();
        }
        let started = Instant::now();
        let prepared = Arc::new(Prepared::new(config)?);
        log::info!(
            "diagonalized dim {} world Hamiltonian in {:.1} s",
            prepared.model.world_dim(),
            started.elapsed().as_secs_f64()
        );
        if self.capacity > 0 {
            self.cache.push_back((key, prepared.clone()));
        }
        Ok(prepared)
    }

    pub fn run(&mut self, scenario: &Scenario) -> Result<ScenarioResult> {
        scenario.validate()?;
        let started = Instant::now();
        let wrap = |case: &Case, e: Error| match e {
            e @ Error::Scenario { .. } => e,
            e => Error::Case {
                scenario: scenario.name.clone(),
                case: case.label.clone(),
                source: Box::new(e),
            },
        };
        let mut cases = Vec::with_capacity(scenario.cases.len());
        let mut spectra_out = None;
        match scenario.kind {
            ScenarioKind::Spectra => {
                let case = &scenario.cases[0];
                let model = assemble(&case.config).map_err(|e| wrap(case, e))?;
                spectra_out = Some(spectra(&model).map_err(|e| wrap(case, e))?);
            }
            ScenarioKind::Dynamics | ScenarioKind::Validation => {
                for case in &scenario.cases {
                    log::info!("scenario {}: case {}", scenario.name, case.label);
                    let result = self.run_case(scenario, case).map_err(|e| wrap(case, e))?;
                    cases.push(result);
                }
            }
        }
        Ok(ScenarioResult {
            scenario: scenario.clone(),
            cases,
            spectra: spectra_out,
            wall_seconds: started.elapsed().as_secs_f64(),
        })
    }

    fn run_case(&mut self, scenario: &Scenario, case: &Case) -> Result<CaseResult> {
        let prepared = self.prepare(&case.config)?;
        let sm = &prepared.spectral;
        let model = &prepared.model;
        let (state, env_index) = prepared.initial_state(&case.system, &case.env)?;
        let opts = ObserveOptions {
            top_k: scenario.top_k,
            env_entropy: scenario.env_entropy,
        };
        let at = |index: usize, e: Error| Error::Scenario {
            scenario: scenario.name.clone(),
            index,
            source: Box::new(e),
        };

        let times = scenario.grid.times()?;
        let validating = scenario.kind == ScenarioKind::Validation;
        let mut records = Vec::with_capacity(times.len());
        let mut norms = Vec::new();
        for (chunk_no, chunk) in times.chunks(BATCH).enumerate() {
            let states = sm
                .evolve_many(&state, chunk)
                .map_err(|e| at(chunk_no * BATCH, e))?;
            for (j, (psi, &t)) in states.iter().zip(chunk).enumerate() {
                let (record, _) = observe_with_spectrum(t, psi, model, opts)
                    .map_err(|e| at(chunk_no * BATCH + j, e))?;
                records.push(record);
                if validating {
                    norms.push(psi.norm());
                }
            }
        }

        let mut snapshots = Vec::new();
        if !scenario.snapshot_times.is_empty() {
            let snap_opts = ObserveOptions {
                top_k: scenario.top_k.max(scenario.snapshot_states),
                env_entropy: false,
            };
            let states = sm.evolve_many(&state, &scenario.snapshot_times)?;
            for (i, (psi, &t)) in states.iter().zip(&scenario.snapshot_times).enumerate() {
                let (_, spectrum) = observe_with_spectrum(t, psi, model, snap_opts)
                    .map_err(|e| at(times.len() + i, e))?;
                for (rank, v) in spectrum
                    .vectors
                    .iter()
                    .take(scenario.snapshot_states)
                    .enumerate()
                {
                    let wavefunction = match model.sho() {
                        Some(sho) => Some(sho.wavefunction(v)?),
                        None => None,
                    };
                    snapshots.push(Snapshot {
                        t,
                        rank: rank + 1,
                        p: spectrum.all[rank],
                        amplitudes: v.clone(),
                        wavefunction,
                    });
                }
            }
        }

        let validation = if validating {
            Some(validation_report(sm, model, &state, &records, &norms)?)
        } else {
            None
        };

        Ok(CaseResult {
            label: case.label.clone(),
            config: case.config.clone(),
            system: case.system.clone(),
            env: case.env,
            env_index,
            env_energy: prepared.env_reference.values()[env_index - 1],
            max_abs_energy: sm.max_abs_energy(),
            phase_horizon: sm.phase_horizon(),
            reconstruction_residual: sm.reconstruction_residual(),
            energy: sm.energy(&state)?,
            records,
            snapshots,
            validation,
        })
    }
}

fn validation_report(
    sm: &SpectralModel,
    model: &AssembledModel,
    state: &EvolvingState,
    records: &[ObservableRecord],
    norms: &[f64],
) -> Result<ValidationReport> {
    let thresholds = ValidationThresholds::default();
    let s_max = (model.n_s().min(model.n_e()) as f64).ln();
    let e0 = sm.energy(state)?;
    let e_scale = e0.abs().max(f64::MIN_POSITIVE);
    let n0 = state.norm();
    let mut samples = Vec::with_capacity(records.len());
    for (r, &norm) in records.iter().zip(norms) {
        let norm_drift = (norm - n0).abs();
        let energy_drift = (r.energies.e_w - e0).abs() / e_scale;
        let entropy_excess = r.entropy - s_max;
        let phase_infidelity = 1.0 - sm.phase_fidelity(state, r.t)?;
        let mut flags = Vec::new();
        if norm_drift > thresholds.norm_drift {
            flags.push("norm".to_string());
        }
        if energy_drift > thresholds.energy_drift {
            flags.push("energy".to_string());
        }
        if entropy_excess > thresholds.entropy_excess {
            flags.push("entropy_bound".to_string());
        }
        if phase_infidelity > thresholds.phase_infidelity {
            flags.push("phase".to_string());
        }
        samples.push(ValidationSample {
            t: r.t,
            norm_drift,
            energy_drift,
            entropy_excess,
            phase_infidelity,
            flags,
        });
    }
    let first_flag = samples.iter().find(|s| !s.flags.is_empty()).map(|s| s.t);
    Ok(ValidationReport {
        max_abs_energy: sm.max_abs_energy(),
        predicted_horizon: sm.phase_horizon(),
        thresholds,
        samples,
        first_flag,
    })
}

/// Runs `scenario` with breakdown checks and returns the first case's
/// report.
pub fn validate_numerics(runner: &mut Runner, scenario: &Scenario) -> Result<ValidationReport> {
    let mut scenario = scenario.clone();
    scenario.kind = ScenarioKind::Validation;
    scenario.cases.truncate(1);
    let result = runner.run(&scenario)?;
    result
        .cases
        .into_iter()
        .next()
        .and_then(|c| c.validation)
        .ok_or_else(|| Error::InvalidParameter("scenario has no cases".into()))
}

fn file_stem(label: &str) -> String {
    label
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

#[derive(Serialize)]
struct CaseMeta<'a> {
    label: &'a str,
    config: &'a ModelConfig,
    system: &'a SystemRecipe,
    env: &'a EnvRecipe,
    env_index: usize,
    env_energy: f64,
    energy: f64,
    max_abs_energy: f64,
    phase_horizon: f64,
    reconstruction_residual: f64,
    records_file: String,
}

#[derive(Serialize)]
struct Metadata<'a> {
    scenario: &'a str,
    kind: ScenarioKind,
    code_version: &'a str,
    grid: &'a TimeGrid,
    top_k: usize,
    snapshot_times: &'a [f64],
    cases: Vec<CaseMeta<'a>>,
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    Ok(BufWriter::new(fs::File::create(path)?))
}

fn write_values(path: &Path, values: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["eigenvalue"])?;
    for v in values {
        w.write_record([v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn write_histogram(path: &Path, values: &[f64], bins: usize) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["bin_left", "bin_right", "count"])?;
    for b in histogram(values, bins)? {
        w.write_record([b.left.to_string(), b.right.to_string(), b.count.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Wavefunction CSV: `q, re_psi, im_psi, abs_psi_sq`.
pub fn write_wavefunction<W: Write>(out: W, samples: &[WavefunctionSample]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["q", "re_psi", "im_psi", "abs_psi_sq"])?;
    for s in samples {
        w.write_record([
            s.q.to_string(),
            s.psi.re.to_string(),
            s.psi.im.to_string(),
            s.probability().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes all result files into `dir` and returns their paths. Wall-clock
/// time goes to `timing.json` alone, so every other file depends only on the
/// scenario.
pub fn write_outputs(result: &ScenarioResult, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let scenario = &result.scenario;
    let mut written = Vec::new();

    let path = dir.join("scenario.toml");
    let mut replay = scenario.clone();
    replay.output_dir = None;
    fs::write(&path, replay.to_toml()?)?;
    written.push(path);

    let mut metas = Vec::new();
    for case in &result.cases {
        let stem = file_stem(&case.label);
        let records_file = format!("{stem}.csv");
        let env = &case.config.env;
        let comment = format!(
            "scenario={} case={} seed_interaction={} seed_env={} config={}",
            scenario.name,
            case.label,
            env.seed_interaction,
            env.seed_env,
            serde_json::to_string(&case.config)?
        );
        let path = dir.join(&records_file);
        let k = scenario.top_k.min(case.config.system_dim());
        write_records(create(&path)?, &comment, k, &case.records)?;
        written.push(path);

        if !case.snapshots.is_empty() {
            let index_path = dir.join(format!("{stem}_snapshots.csv"));
            let mut index = csv::Writer::from_writer(create(&index_path)?);
            index.write_record(["t", "rank", "p", "file"])?;
            for (i, snap) in case.snapshots.iter().enumerate() {
                let file = format!("{stem}_wf_{i:03}_rank{}.csv", snap.rank);
                let path = dir.join(&file);
                match &snap.wavefunction {
                    Some(wf) => write_wavefunction(create(&path)?, wf)?,
                    None => {
                        let mut w = csv::Writer::from_writer(create(&path)?);
                        w.write_record(["index", "re_psi", "im_psi", "abs_psi_sq"])?;
                        for (j, z) in snap.amplitudes.iter().enumerate() {
                            w.write_record([
                                j.to_string(),
                                z.re.to_string(),
                                z.im.to_string(),
                                z.norm_sqr().to_string(),
                            ])?;
                        }
                        w.flush()?;
                    }
                }
                index.write_record([
                    snap.t.to_string(),
                    snap.rank.to_string(),
                    snap.p.to_string(),
                    file,
                ])?;
                written.push(path);
            }
            index.flush()?;
            written.push(index_path);
        }

        if let Some(report) = &case.validation {
            let path = dir.join(format!("{stem}_validation.json"));
            fs::write(&path, serde_json::to_string_pretty(report)?)?;
            written.push(path);
        }

        metas.push(CaseMeta {
            label: &case.label,
            config: &case.config,
            system: &case.system,
            env: &case.env,
            env_index: case.env_index,
            env_energy: case.env_energy,
            energy: case.energy,
            max_abs_energy: case.max_abs_energy,
            phase_horizon: case.phase_horizon,
            reconstruction_residual: case.reconstruction_residual,
            records_file,
        });
    }

    if let Some(sp) = &result.spectra {
        for (name, values) in [("h_s", &sp.h_s), ("h_e", &sp.h_e), ("h_w", &sp.h_w)] {
            let path = dir.join(format!("spectrum_{name}.csv"));
            write_values(&path, values)?;
            written.push(path);
            let path = dir.join(format!("histogram_{name}.csv"));
            write_histogram(&path, values, scenario.bins)?;
            written.push(path);
        }
    }

    let meta = Metadata {
        scenario: &scenario.name,
        kind: scenario.kind,
        code_version: env!("CARGO_PKG_VERSION"),
        grid: &scenario.grid,
        top_k: scenario.top_k,
        snapshot_times: &scenario.snapshot_times,
        cases: metas,
    };
    let path = dir.join("metadata.json");
    fs::write(&path, serde_json::to_string_pretty(&meta)?)?;
    written.push(path);

    let path = dir.join("timing.json");
    fs::write(
        &path,
        serde_json::to_string_pretty(&serde_json::json!({ "wall_seconds": result.wall_seconds }))?,
    )?;
    written.push(path);
    Ok(written)
}

/// Header of the record CSVs written for `scenario`'s first case.
pub fn scenario_header(scenario: &Scenario) -> Vec<String> {
    let dim = scenario.cases.first().map_or(1, |c| c.config.system_dim());
    record_header(scenario.top_k.min(dim))
}
