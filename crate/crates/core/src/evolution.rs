//! Exact unitary propagation in the eigenbasis of the world Hamiltonian.
//!
//! The world Hamiltonian is diagonalized once. A state is stored by its
//! eigenbasis coefficients `c_k`, and every time sample is computed from
//! them directly: `psi(t) = sum_k c_k exp(-i E_k t) |E_k>`. Nothing is
//! accumulated between samples.
//!
//! Sign convention: `exp(-i E t)` throughout; negative `t` runs backwards.
//!
//! The phase `E_k t` is formed in double precision and reduced modulo `2 pi`.
//! Its rounding error grows like `|E_k t| * 2^-53`, so results lose meaning
//! near the phase horizon `2^53 / max |E_k|`. [`SpectralModel::phase_fidelity`]
//! measures that loss against a double-double phase reference.

use std::f64::consts::TAU;
use std::sync::atomic::{AtomicBool, Ordering};

use faer::linalg::solvers::Solve;
use faer::Mat;
use num_complex::Complex64 as C64;
use rand_chacha::ChaCha20Rng;
use rand_core::{RngCore, SeedableRng};

use crate::error::{Error, Result};
use crate::linalg::{
    adjoint_matvec, check_same_dim, eigh, kron_vec, matvec, vec_norm, EigenDecomposition, Operator,
    PureState, Space,
};
use crate::model::AssembledModel;

/// Largest dimension accepted by [`propagator_oracle`].
pub const ORACLE_MAX_DIM: usize = 256;

/// Relative reconstruction residual accepted by [`SpectralModel::prepare`].
pub const RECONSTRUCTION_TOL: f64 = 1e-8;

/// Columns evolved per batched matrix product.
const BATCH: usize = 64;

const PROBES: usize = 3;
const PROBE_SEED: u64 = 0x5eed;

// Double-double 2 pi.
const TAU_HI: f64 = TAU;
const TAU_LO: f64 = 2.449_293_598_294_706_4e-16;

/// Diagonalized world Hamiltonian.
#[derive(Debug)]
pub struct SpectralModel {
    n_s: usize,
    n_e: usize,
    dec: EigenDecomposition,
    max_abs_energy: f64,
    residual: f64,
    unitarity: f64,
    horizon_warned: AtomicBool,
}

/// Eigenbasis coefficients of a world state at `t = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct EvolvingState {
    coefficients: Vec<C64>,
}

impl EvolvingState {
    pub fn coefficients(&self) -> &[C64] {
        &self.coefficients
    }

    pub fn norm(&self) -> f64 {
        vec_norm(&self.coefficients)
    }

    /// Eigenbasis populations `|c_k|^2`.
    pub fn populations(&self) -> Vec<f64> {
        self.coefficients.iter().map(|c| c.norm_sqr()).collect()
    }
}

impl SpectralModel {
    /// Diagonalizes the model's world Hamiltonian. The world matrix is
    /// materialized only for the duration of this call.
    pub fn prepare(model: &AssembledModel) -> Result<Self> {
        let h_w = model.h_w()?;
        Self::prepare_operator(&h_w, model.n_s(), model.n_e())
    }

    /// Diagonalizes an arbitrary Hermitian world operator of dimension
    /// `n_s * n_e`.
    ///
    /// The decomposition is verified with random probe vectors:
    /// `|H x - V E V^dag x|` must stay below `1e-8 * max|E_k|` and
    /// `|V^dag V x - x|` below `1e-10`.
    pub fn prepare_operator(h_w: &Operator, n_s: usize, n_e: usize) -> Result<Self> {
        check_same_dim(n_s * n_e, h_w.dim())?;
        let dec = eigh(h_w)?;
        let max_abs_energy = dec.values().iter().fold(0.0_f64, |m, e| m.max(e.abs()));
        let (residual, unitarity) = probe_checks(h_w, &dec);
        let scale = max_abs_energy.max(f64::MIN_POSITIVE);
        if residual.is_nan()
            || residual > RECONSTRUCTION_TOL * scale
            || unitarity.is_nan()
            || unitarity > 1e-10
        {
            return Err(Error::NoConvergence {
                dim: h_w.dim(),
                norm: h_w.frobenius_norm(),
            });
        }
        log::debug!(
            "prepared dim {} spectral model: residual {residual:.3e}, unitarity {unitarity:.3e}",
            h_w.dim()
        );
        Ok(Self {
            n_s,
            n_e,
            dec,
            max_abs_energy,
            residual,
            unitarity,
            horizon_warned: AtomicBool::new(false),
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.n_s, self.n_e)
    }

    pub fn dim(&self) -> usize {
        self.n_s * self.n_e
    }

    pub fn decomposition(&self) -> &EigenDecomposition {
        &self.dec
    }

    pub fn energies(&self) -> &[f64] {
        self.dec.values()
    }

    pub fn max_abs_energy(&self) -> f64 {
        self.max_abs_energy
    }

    /// Probe estimate of `|H - V E V^dag|` found during preparation.
    pub fn reconstruction_residual(&self) -> f64 {
        self.residual
    }

    /// Probe estimate of `|V^dag V - 1|` found during preparation.
    pub fn unitarity_residual(&self) -> f64 {
        self.unitarity
    }

    /// Full `O(n^3)` verification: max-entry reconstruction error against
    /// `h_w` and max-entry deviation of `V^dag V` from the identity.
    pub fn full_check(&self, h_w: &Operator) -> Result<(f64, f64)> {
        Ok((
            self.dec.reconstruction_error(h_w)?,
            self.dec.unitarity_defect(),
        ))
    }

    /// Time beyond which `E_k t` no longer fits the double mantissa for the
    /// largest `|E_k|`: `2^53 / max|E_k|`.
    pub fn phase_horizon(&self) -> f64 {
        if self.max_abs_energy == 0.0 {
            f64::INFINITY
        } else {
            (1u64 << 53) as f64 / self.max_abs_energy
        }
    }

    pub fn encode(&self, psi_s: &PureState, psi_e: &PureState) -> Result<EvolvingState> {
        check_same_dim(self.n_s, psi_s.dim())?;
        check_same_dim(self.n_e, psi_e.dim())?;
        let world = kron_vec(psi_s.amplitudes(), psi_e.amplitudes());
        Ok(EvolvingState {
            coefficients: adjoint_matvec(self.dec.vectors(), &world),
        })
    }

    pub fn encode_world(&self, psi: &PureState) -> Result<EvolvingState> {
        check_same_dim(self.dim(), psi.dim())?;
        Ok(EvolvingState {
            coefficients: adjoint_matvec(self.dec.vectors(), psi.amplitudes()),
        })
    }

    pub fn decode(&self, state: &EvolvingState) -> Result<PureState> {
        check_same_dim(self.dim(), state.coefficients.len())?;
        Ok(PureState::from_raw(
            Space::World,
            matvec(self.dec.vectors(), &state.coefficients),
        ))
    }

    /// Eigenbasis coefficients after time `t`.
    pub fn advance(&self, state: &EvolvingState, t: f64) -> Result<EvolvingState> {
        check_same_dim(self.dim(), state.coefficients.len())?;
        self.check_horizon(t);
        let coefficients = state
            .coefficients
            .iter()
            .zip(self.dec.values())
            .map(|(c, &e)| c * phase_factor(e, t))
            .collect();
        Ok(EvolvingState { coefficients })
    }

    /// World state at time `t`.
    pub fn evolve_to(&self, state: &EvolvingState, t: f64) -> Result<PureState> {
        self.decode(&self.advance(state, t)?)
    }

    /// World states at every time in `times`, computed in batches with one
    /// dense product per batch.
    pub fn evolve_many(&self, state: &EvolvingState, times: &[f64]) -> Result<Vec<PureState>> {
        check_same_dim(self.dim(), state.coefficients.len())?;
        let n = self.dim();
        let mut out = Vec::with_capacity(times.len());
        for chunk in times.chunks(BATCH) {
            for &t in chunk {
                self.check_horizon(t);
            }
            let phased = Mat::from_fn(n, chunk.len(), |k, j| {
                state.coefficients[k] * phase_factor(self.dec.values()[k], chunk[j])
            });
            let world = self.dec.vectors() * &phased;
            for j in 0..chunk.len() {
                let amplitudes = world.col(j).iter().copied().collect();
                out.push(PureState::from_raw(Space::World, amplitudes));
            }
        }
        Ok(out)
    }

    /// `<H_w>` of the state; constant in time by construction.
    pub fn energy(&self, state: &EvolvingState) -> Result<f64> {
        check_same_dim(self.dim(), state.coefficients.len())?;
        Ok(state
            .coefficients
            .iter()
            .zip(self.dec.values())
            .map(|(c, e)| c.norm_sqr() * e)
            .sum())
    }

    /// `|<psi_ref(t)|psi(t)>|`, where `psi` uses the double-precision phases
    /// of [`advance`](Self::advance) and `psi_ref` phases computed in
    /// double-double arithmetic. Equal to 1 up to rounding well inside the
    /// phase horizon.
    pub fn phase_fidelity(&self, state: &EvolvingState, t: f64) -> Result<f64> {
        check_same_dim(self.dim(), state.coefficients.len())?;
        let mut acc = C64::new(0.0, 0.0);
        for (c, &e) in state.coefficients.iter().zip(self.dec.values()) {
            let err = reduced_phase(e, t) - reference_phase(e, t);
            acc += c.norm_sqr() * C64::from_polar(1.0, -err);
        }
        Ok(acc.norm())
    }

    fn check_horizon(&self, t: f64) {
        let horizon = self.phase_horizon();
        if t.abs() > horizon && !self.horizon_warned.swap(true, Ordering::Relaxed) {
            log::warn!(
                "t = {t:.3e} exceeds the phase-accuracy horizon {horizon:.3e}; amplitudes are unreliable"
            );
        }
    }
}

/// `E t` reduced to `[0, 2 pi)` in double precision.
fn reduced_phase(e: f64, t: f64) -> f64 {
    (e * t).rem_euclid(TAU)
}

fn phase_factor(e: f64, t: f64) -> C64 {
    C64::from_polar(1.0, -reduced_phase(e, t))
}

fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

/// `E t` reduced modulo `2 pi` with the product and the reduction carried in
/// double-double arithmetic. The result is comparable with
/// [`reduced_phase`] modulo `2 pi`; the difference is wrapped to `(-pi, pi]`.
fn reference_phase(e: f64, t: f64) -> f64 {
    let (p_hi, p_lo) = two_prod(e, t);
    let n = (p_hi / TAU_HI).floor();
    let (m_hi, m_lo) = two_prod(n, TAU_HI);
    let r = ((p_hi - m_hi) - m_lo) + p_lo - n * TAU_LO;
    r.rem_euclid(TAU)
}

fn probe_checks(h: &Operator, dec: &EigenDecomposition) -> (f64, f64) {
    let n = h.dim();
    let mut rng = ChaCha20Rng::seed_from_u64(PROBE_SEED);
    let mut draw = || (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64 - 0.5;
    let mut residual = 0.0_f64;
    let mut unitarity = 0.0_f64;
    for _ in 0..PROBES {
        let mut x: Vec<C64> = (0..n).map(|_| C64::new(draw(), draw())).collect();
        let norm = vec_norm(&x);
        x.iter_mut().for_each(|z| *z /= norm);
        let hx = matvec(h.as_mat(), &x);
        let coeffs = adjoint_matvec(dec.vectors(), &x);
        let back = matvec(dec.vectors(), &coeffs);
        let scaled: Vec<C64> = coeffs
            .iter()
            .zip(dec.values())
            .map(|(c, e)| c * e)
            .collect();
        let rebuilt = matvec(dec.vectors(), &scaled);
        let diff: Vec<C64> = hx.iter().zip(&rebuilt).map(|(a, b)| a - b).collect();
        residual = residual.max(vec_norm(&diff));
        let diff: Vec<C64> = back.iter().zip(&x).map(|(a, b)| a - b).collect();
        unitarity = unitarity.max(vec_norm(&diff));
    }
    (residual, unitarity)
}

/// Applies `exp(-i h t)` to `psi0` with a dense Pade-13 scaling-and-squaring
/// matrix exponential. Intended as an independent check of the spectral
/// path at small dimension.
pub fn propagator_oracle(h: &Operator, psi0: &PureState, t: f64) -> Result<PureState> {
    let n = h.dim();
    if n > ORACLE_MAX_DIM {
        return Err(Error::ResourceLimit {
            requested: n,
            limit: ORACLE_MAX_DIM,
        });
    }
    check_same_dim(n, psi0.dim())?;
    let factor = C64::new(0.0, -t);
    let a = Mat::from_fn(n, n, |i, j| h.get(i, j) * factor);
    let u = expm(&a);
    let out = matvec(u.as_ref(), psi0.amplitudes());
    let norm = vec_norm(&out);
    if (norm - 1.0).abs() > 1e-10 {
        return Err(Error::NoConvergence {
            dim: n,
            norm: h.frobenius_norm(),
        });
    }
    Ok(PureState::from_raw(psi0.space(), out))
}

fn one_norm(a: &Mat<C64>) -> f64 {
    (0..a.ncols())
        .map(|j| a.col(j).iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Dense matrix exponential (Higham 2005, degree 13 only).
fn expm(a: &Mat<C64>) -> Mat<C64> {
    const THETA_13: f64 = 5.371_920_351_148_152;
    const B: [f64; 14] = [
        64_764_752_532_480_000.0,
        32_382_376_266_240_000.0,
        7_771_770_303_897_600.0,
        1_187_353_796_428_800.0,
        129_060_195_264_000.0,
        10_559_470_521_600.0,
        670_442_572_800.0,
        33_522_128_640.0,
        1_323_241_920.0,
        40_840_800.0,
        960_960.0,
        16_380.0,
        182.0,
        1.0,
    ];
    let n = a.nrows();
    let norm = one_norm(a);
    let s = if norm > THETA_13 {
        (norm / THETA_13).log2().ceil() as i32
    } else {
        0
    };
    let scale = C64::new(0.5_f64.powi(s), 0.0);
    let a = Mat::from_fn(n, n, |i, j| a[(i, j)] * scale);
    let ident = Mat::<C64>::identity(n, n);
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let lin = |c: [f64; 4], m: [&Mat<C64>; 4]| {
        Mat::from_fn(n, n, |i, j| {
            c.iter().zip(m).map(|(&c, m)| m[(i, j)] * c).sum::<C64>()
        })
    };
    let inner_u = lin([B[13], B[11], B[9], 0.0], [&a6, &a4, &a2, &ident]);
    let u_poly = &a6 * &inner_u + lin([B[7], B[5], B[3], B[1]], [&a6, &a4, &a2, &ident]);
    let u = &a * &u_poly;
    let inner_v = lin([B[12], B[10], B[8], 0.0], [&a6, &a4, &a2, &ident]);
    let v = &a6 * &inner_v + lin([B[6], B[4], B[2], B[0]], [&a6, &a4, &a2, &ident]);
    let p = &v + &u;
    let q = &v - &u;
    let mut r = q.partial_piv_lu().solve(&p);
    for _ in 0..s {
        r = &r * &r;
    }
    r
}
