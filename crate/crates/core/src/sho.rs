//! Truncated simple harmonic oscillator.
//!
//! The lowering operator keeps its continuum matrix elements
//! `<i|a|j> = sqrt(j) delta_{i,j-1}` on the first `n_s` number states; the
//! other operators are built from `a` and `a^dagger` with the continuum
//! formulas. Units are `hbar = 1`.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, eigh, EigenDecomposition, Operator, PureState, Space};

/// `|alpha|^2` at or above this fraction of `n_s` pushes a coherent state
/// against the edge of the truncated q grid.
pub const EDGE_WARNING_FRACTION: f64 = 0.9;

/// Tolerance for treating a target position as inside the q spectrum.
const Q_RANGE_TOL: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct ShoSpace {
    n_s: usize,
    omega: f64,
    lowering: Operator,
    raising: Operator,
    position: Operator,
    momentum: Operator,
    hamiltonian: Operator,
    q_basis: EigenDecomposition,
}

/// One point of a q-basis wavefunction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WavefunctionSample {
    pub q: f64,
    pub psi: C64,
}

impl WavefunctionSample {
    pub fn probability(&self) -> f64 {
        self.psi.norm_sqr()
    }
}

/// Energy eigenstate of the truncated oscillator next to its continuum
/// Hermite-function counterpart, both sampled on the q grid.
#[derive(Debug, Clone)]
pub struct EigenstateReport {
    pub n: usize,
    pub eigenvalue: f64,
    pub wavefunction: Vec<WavefunctionSample>,
    /// Continuum eigenfunction at the grid points, rescaled to unit norm on
    /// the grid.
    pub continuum: Vec<(f64, f64)>,
}

impl ShoSpace {
    pub fn new(n_s: usize, omega: f64) -> Result<Self> {
        if n_s < 2 {
            return Err(Error::InvalidParameter(format!(
                "oscillator truncation n_s must be >= 2, got {n_s}"
            )));
        }
        if !omega.is_finite() || omega <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "oscillator frequency must be positive, got {omega}"
            )));
        }
        let lowering = Operator::from_fn(n_s, |i, j| {
            if i + 1 == j {
                C64::new((j as f64).sqrt(), 0.0)
            } else {
                C64::new(0.0, 0.0)
            }
        })?;
        let raising = lowering.adjoint();
        // Tridiagonal with sqrt(j)/sqrt(2) on the off-diagonals.
        let position = Operator::hermitian_from_lower(n_s, |i, j| {
            if i == j + 1 {
                C64::new((i as f64).sqrt() * FRAC_1_SQRT_2, 0.0)
            } else {
                C64::new(0.0, 0.0)
            }
        })?;
        // p = i (a^dagger - a) / sqrt(2): <j+1|p|j> = i sqrt(j+1)/sqrt(2).
        let momentum = Operator::hermitian_from_lower(n_s, |i, j| {
            if i == j + 1 {
                C64::new(0.0, (i as f64).sqrt() * FRAC_1_SQRT_2)
            } else {
                C64::new(0.0, 0.0)
            }
        })?;
        let levels: Vec<f64> = (0..n_s).map(|n| omega * (n as f64 + 0.5)).collect();
        let hamiltonian = Operator::diagonal(&levels)?;
        let q_basis = eigh(&position)?;
        Ok(Self {
            n_s,
            omega,
            lowering,
            raising,
            position,
            momentum,
            hamiltonian,
            q_basis,
        })
    }

    pub fn n_s(&self) -> usize {
        self.n_s
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }

    /// Oscillator period `2 pi / omega`.
    pub fn period(&self) -> f64 {
        2.0 * PI / self.omega
    }

    pub fn lowering(&self) -> &Operator {
        &self.lowering
    }

    pub fn raising(&self) -> &Operator {
        &self.raising
    }

    pub fn position(&self) -> &Operator {
        &self.position
    }

    pub fn momentum(&self) -> &Operator {
        &self.momentum
    }

    pub fn hamiltonian(&self) -> &Operator {
        &self.hamiltonian
    }

    pub fn q_basis(&self) -> &EigenDecomposition {
        &self.q_basis
    }

    /// Eigenvalues of `q`, ascending.
    pub fn q_grid(&self) -> &[f64] {
        self.q_basis.values()
    }

    pub fn number_state(&self, n: usize) -> Result<PureState> {
        PureState::basis(Space::System, self.n_s, n)
    }

    pub fn ground_state(&self) -> PureState {
        PureState::from_raw(Space::System, unit(self.n_s, 0))
    }

    pub fn near_truncation_edge(&self, alpha: C64) -> bool {
        alpha.norm_sqr() >= EDGE_WARNING_FRACTION * self.n_s as f64
    }

    /// `exp(alpha a^dagger - alpha* a)|0>`.
    ///
    /// The exponent is `-i K` with `K = i (alpha a^dagger - alpha* a)`
    /// Hermitian, so the exponential is applied through the eigenbasis of
    /// `K` and stays unitary to round-off.
    pub fn coherent_state(&self, alpha: C64) -> Result<PureState> {
        let n = self.n_s as f64;
        if alpha.norm_sqr() > n {
            return Err(Error::InvalidParameter(format!(
                "|alpha|^2 = {} exceeds the truncation n_s = {}",
                alpha.norm_sqr(),
                self.n_s
            )));
        }
        if self.near_truncation_edge(alpha) {
            log::warn!(
                "coherent state |alpha|^2 = {:.3} is within 10% of n_s = {}; truncation edge effects expected",
                alpha.norm_sqr(),
                self.n_s
            );
        }
        if alpha == C64::new(0.0, 0.0) {
            return Ok(self.ground_state());
        }
        let i = C64::new(0.0, 1.0);
        // Lower entries: K[j+1][j] = i alpha sqrt(j+1).
        let generator = Operator::hermitian_from_lower(self.n_s, |r, c| {
            if r == c + 1 {
                i * alpha * (r as f64).sqrt()
            } else {
                C64::new(0.0, 0.0)
            }
        })?;
        let dec = eigh(&generator)?;
        // exp(-iK)|0> = sum_k v_k exp(-i lambda_k) conj(v_k[0]).
        let mut amps = vec![C64::new(0.0, 0.0); self.n_s];
        for (k, &lambda) in dec.values().iter().enumerate() {
            let v = dec.vector(k);
            let weight = C64::from_polar(1.0, -lambda) * v[0].conj();
            for (a, x) in amps.iter_mut().zip(v) {
                *a += weight * x;
            }
        }
        PureState::normalized(Space::System, amps)
    }

    /// Normalized `sum_i a_i |alpha_i>`.
    pub fn cat_state(&self, terms: &[(C64, C64)]) -> Result<PureState> {
        if terms.is_empty() {
            return Err(Error::InvalidParameter(
                "cat state needs at least one term".into(),
            ));
        }
        let mut amps = vec![C64::new(0.0, 0.0); self.n_s];
        for &(weight, alpha) in terms {
            let packet = self.coherent_state(alpha)?;
            for (a, x) in amps.iter_mut().zip(packet.amplitudes()) {
                *a += weight * x;
            }
        }
        PureState::normalized(Space::System, amps)
    }

    /// Superposition of the q eigenvectors nearest each target position.
    pub fn position_superposition(&self, terms: &[(C64, f64)]) -> Result<PureState> {
        if terms.is_empty() {
            return Err(Error::InvalidParameter(
                "position superposition needs at least one term".into(),
            ));
        }
        let mut amps = vec![C64::new(0.0, 0.0); self.n_s];
        for &(weight, target) in terms {
            let k = self.nearest_q_index(target)?;
            for (a, x) in amps.iter_mut().zip(self.q_basis.vector(k)) {
                *a += weight * x;
            }
        }
        PureState::normalized(Space::System, amps)
    }

    /// Index of the q eigenvalue closest to `target`.
    pub fn nearest_q_index(&self, target: f64) -> Result<usize> {
        let grid = self.q_grid();
        let (lo, hi) = (grid[0], grid[grid.len() - 1]);
        if !(target >= lo - Q_RANGE_TOL && target <= hi + Q_RANGE_TOL) {
            return Err(Error::InvalidParameter(format!(
                "q target {target} outside the spectrum [{lo}, {hi}]"
            )));
        }
        let mut best = 0;
        for (k, q) in grid.iter().enumerate() {
            if (q - target).abs() < (grid[best] - target).abs() {
                best = k;
            }
        }
        Ok(best)
    }

    /// `psi(q_k) = <q_k|psi>` over the q grid.
    pub fn wavefunction(&self, state: &[C64]) -> Result<Vec<WavefunctionSample>> {
        linalg::check_same_dim(self.n_s, state.len())?;
        let coords = linalg::adjoint_matvec(self.q_basis.vectors(), state);
        Ok(self
            .q_grid()
            .iter()
            .zip(coords)
            .map(|(&q, psi)| WavefunctionSample { q, psi })
            .collect())
    }

    /// Energy eigenstate `n` with its continuum reference.
    pub fn truncated_eigenstate_report(&self, n: usize) -> Result<EigenstateReport> {
        if n >= self.n_s {
            return Err(Error::IndexOutOfRange {
                index: n,
                valid: format!("0..{}", self.n_s),
            });
        }
        let wavefunction = self.wavefunction(&unit(self.n_s, n))?;
        let raw: Vec<f64> = self
            .q_grid()
            .iter()
            .map(|&q| hermite_function(n, q))
            .collect();
        let scale = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
        let continuum = self
            .q_grid()
            .iter()
            .zip(raw)
            .map(|(&q, v)| (q, if scale > 0.0 { v / scale } else { 0.0 }))
            .collect();
        Ok(EigenstateReport {
            n,
            eigenvalue: self.hamiltonian.get(n, n).re,
            wavefunction,
            continuum,
        })
    }
}

fn unit(dim: usize, k: usize) -> Vec<C64> {
    let mut v = vec![C64::new(0.0, 0.0); dim];
    v[k] = C64::new(1.0, 0.0);
    v
}

/// Normalized continuum oscillator eigenfunction
/// `(2^n n! sqrt(pi))^{-1/2} H_n(q) exp(-q^2/2)` via the stable three-term
/// recurrence.
pub fn hermite_function(n: usize, q: f64) -> f64 {
    let mut prev = PI.powf(-0.25) * (-0.5 * q * q).exp();
    if n == 0 {
        return prev;
    }
    let mut cur = 2f64.sqrt() * q * prev;
    for k in 1..n {
        let kf = k as f64;
        let next = (2.0 / (kf + 1.0)).sqrt() * q * cur - (kf / (kf + 1.0)).sqrt() * prev;
        prev = cur;
        cur = next;
    }
    cur
}
