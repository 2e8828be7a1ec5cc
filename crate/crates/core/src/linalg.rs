//! Dense complex linear algebra used by every other module.
//!
//! Composite indices are system-major: the world basis state `|i_s>|i_e>`
//! sits at `i_s * n_e + i_e`. Every tensor product and partial trace in the
//! crate follows that convention.

use faer::{Mat, MatRef, Side};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative magnitude window inside which eigenvector entries count as tied
/// for the phase convention.
const PHASE_TIE_TOL: f64 = 1e-10;

/// Unit-norm tolerance for [`PureState`].
pub const NORM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Space {
    System,
    Environment,
    World,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subsystem {
    System,
    Environment,
}

/// Dense square complex matrix. The Hermitian flag is only ever set when the
/// entries satisfy `A_ij == conj(A_ji)` bit for bit.
#[derive(Clone, Debug)]
pub struct Operator {
    mat: Mat<C64>,
    hermitian: bool,
}

impl Operator {
    pub fn new(mat: Mat<C64>) -> Result<Self> {
        check_square(&mat)?;
        Ok(Self {
            mat,
            hermitian: false,
        })
    }

    /// Wraps `mat`, verifying exact Hermiticity.
    pub fn hermitian(mat: Mat<C64>) -> Result<Self> {
        check_square(&mat)?;
        let asymmetry = hermitian_defect(mat.as_ref());
        if asymmetry != 0.0 {
            return Err(Error::NotHermitian { asymmetry });
        }
        Ok(Self {
            mat,
            hermitian: true,
        })
    }

    /// Builds a Hermitian operator from its lower triangle (diagonal included).
    /// The imaginary part of diagonal entries is discarded.
    pub fn hermitian_from_lower(dim: usize, f: impl Fn(usize, usize) -> C64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter(
                "operator dimension must be >= 1".into(),
            ));
        }
        let mut mat = Mat::<C64>::zeros(dim, dim);
        for j in 0..dim {
            mat[(j, j)] = C64::new(f(j, j).re, 0.0);
            for i in j + 1..dim {
                let z = f(i, j);
                mat[(i, j)] = z;
                mat[(j, i)] = z.conj();
            }
        }
        Ok(Self {
            mat,
            hermitian: true,
        })
    }

    pub fn from_fn(dim: usize, f: impl Fn(usize, usize) -> C64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter(
                "operator dimension must be >= 1".into(),
            ));
        }
        Ok(Self {
            mat: Mat::from_fn(dim, dim, f),
            hermitian: false,
        })
    }

    pub fn identity(dim: usize) -> Result<Self> {
        Self::diagonal(&vec![1.0; dim])
    }

    pub fn zeros(dim: usize) -> Result<Self> {
        Self::diagonal(&vec![0.0; dim])
    }

    pub fn diagonal(values: &[f64]) -> Result<Self> {
        Self::hermitian_from_lower(values.len(), |i, j| {
            if i == j {
                C64::new(values[i], 0.0)
            } else {
                C64::new(0.0, 0.0)
            }
        })
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn is_hermitian(&self) -> bool {
        self.hermitian
    }

    pub fn get(&self, i: usize, j: usize) -> C64 {
        self.mat[(i, j)]
    }

    pub fn as_mat(&self) -> MatRef<'_, C64> {
        self.mat.as_ref()
    }

    pub fn into_mat(self) -> Mat<C64> {
        self.mat
    }

    pub fn adjoint(&self) -> Operator {
        Operator {
            mat: self.mat.adjoint().to_owned(),
            hermitian: self.hermitian,
        }
    }

    /// Real scaling preserves exact Hermiticity.
    pub fn scale(&self, factor: f64) -> Operator {
        Operator {
            mat: Mat::from_fn(self.dim(), self.dim(), |i, j| self.mat[(i, j)] * factor),
            hermitian: self.hermitian,
        }
    }

    pub fn add(&self, other: &Operator) -> Result<Operator> {
        check_same_dim(self.dim(), other.dim())?;
        Ok(Operator {
            mat: Mat::from_fn(self.dim(), self.dim(), |i, j| {
                self.mat[(i, j)] + other.mat[(i, j)]
            }),
            hermitian: self.hermitian && other.hermitian,
        })
    }

    pub fn sub(&self, other: &Operator) -> Result<Operator> {
        check_same_dim(self.dim(), other.dim())?;
        Ok(Operator {
            mat: Mat::from_fn(self.dim(), self.dim(), |i, j| {
                self.mat[(i, j)] - other.mat[(i, j)]
            }),
            hermitian: false,
        })
    }

    pub fn matmul(&self, other: &Operator) -> Result<Operator> {
        check_same_dim(self.dim(), other.dim())?;
        Ok(Operator {
            mat: &self.mat * &other.mat,
            hermitian: false,
        })
    }

    /// `[self, other]`.
    pub fn commutator(&self, other: &Operator) -> Result<Operator> {
        self.matmul(other)?.sub(&other.matmul(self)?)
    }

    pub fn apply(&self, v: &[C64]) -> Result<Vec<C64>> {
        check_same_dim(self.dim(), v.len())?;
        Ok(matvec(self.mat.as_ref(), v))
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.mat.norm_l2()
    }

    pub fn max_abs(&self) -> f64 {
        max_abs(self.mat.as_ref())
    }

    /// Largest `|A_ij - B_ij|`.
    pub fn max_abs_diff(&self, other: &Operator) -> Result<f64> {
        check_same_dim(self.dim(), other.dim())?;
        let n = self.dim();
        let mut m = 0.0f64;
        for j in 0..n {
            for i in 0..n {
                m = m.max((self.mat[(i, j)] - other.mat[(i, j)]).norm());
            }
        }
        Ok(m)
    }

    /// Entrywise bitwise equality (signed zeros compare equal).
    pub fn entries_eq(&self, other: &Operator) -> bool {
        self.dim() == other.dim()
            && (0..self.dim())
                .all(|j| (0..self.dim()).all(|i| self.mat[(i, j)] == other.mat[(i, j)]))
    }
}

fn check_square(mat: &Mat<C64>) -> Result<()> {
    if mat.nrows() == 0 {
        return Err(Error::InvalidParameter(
            "operator dimension must be >= 1".into(),
        ));
    }
    if mat.nrows() != mat.ncols() {
        return Err(Error::DimensionMismatch {
            expected: mat.nrows(),
            found: mat.ncols(),
        });
    }
    Ok(())
}

pub(crate) fn check_same_dim(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        Err(Error::DimensionMismatch { expected, found })
    } else {
        Ok(())
    }
}

fn hermitian_defect(m: MatRef<'_, C64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for j in 0..n {
        for i in j..n {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

pub(crate) fn max_abs(m: MatRef<'_, C64>) -> f64 {
    let mut worst = 0.0f64;
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            worst = worst.max(m[(i, j)].norm());
        }
    }
    worst
}

pub(crate) fn matvec(m: MatRef<'_, C64>, v: &[C64]) -> Vec<C64> {
    let col = faer::ColRef::from_slice(v);
    let out = m * col;
    out.iter().copied().collect()
}

/// `m^dagger v`.
pub(crate) fn adjoint_matvec(m: MatRef<'_, C64>, v: &[C64]) -> Vec<C64> {
    let col = faer::ColRef::from_slice(v);
    let out = m.adjoint() * col;
    out.iter().copied().collect()
}

/// Kronecker product with an upper bound on the result dimension.
pub fn tensor(a: &Operator, b: &Operator, max_dim: usize) -> Result<Operator> {
    let requested = a.dim().checked_mul(b.dim()).ok_or(Error::ResourceLimit {
        requested: usize::MAX,
        limit: max_dim,
    })?;
    if requested > max_dim {
        return Err(Error::ResourceLimit {
            requested,
            limit: max_dim,
        });
    }
    let nb = b.dim();
    let mat = Mat::from_fn(requested, requested, |r, c| {
        a.mat[(r / nb, c / nb)] * b.mat[(r % nb, c % nb)]
    });
    Ok(Operator {
        mat,
        hermitian: a.hermitian && b.hermitian,
    })
}

/// Kronecker product of two amplitude vectors.
pub fn kron_vec(a: &[C64], b: &[C64]) -> Vec<C64> {
    let mut out = Vec::with_capacity(a.len() * b.len());
    for x in a {
        for y in b {
            out.push(x * y);
        }
    }
    out
}

/// Normalized state vector tagged with the Hilbert space it lives in.
#[derive(Clone, Debug, PartialEq)]
pub struct PureState {
    space: Space,
    amplitudes: Vec<C64>,
}

impl PureState {
    /// Accepts amplitudes that are already unit norm within [`NORM_TOL`].
    pub fn new(space: Space, amplitudes: Vec<C64>) -> Result<Self> {
        if amplitudes.is_empty() {
            return Err(Error::InvalidParameter(
                "state dimension must be >= 1".into(),
            ));
        }
        let norm = vec_norm(&amplitudes);
        if (norm - 1.0).abs() > NORM_TOL {
            return Err(Error::InvalidParameter(format!(
                "state norm {norm} deviates from 1 by more than {NORM_TOL:e}"
            )));
        }
        Ok(Self { space, amplitudes })
    }

    pub fn normalized(space: Space, mut amplitudes: Vec<C64>) -> Result<Self> {
        if amplitudes.is_empty() {
            return Err(Error::InvalidParameter(
                "state dimension must be >= 1".into(),
            ));
        }
        let norm = vec_norm(&amplitudes);
        if !norm.is_finite() || norm <= 1e-12 {
            return Err(Error::ZeroNorm);
        }
        for z in &mut amplitudes {
            *z /= norm;
        }
        Ok(Self { space, amplitudes })
    }

    pub fn basis(space: Space, dim: usize, k: usize) -> Result<Self> {
        if k >= dim {
            return Err(Error::IndexOutOfRange {
                index: k,
                valid: format!("0..{dim}"),
            });
        }
        let mut amplitudes = vec![C64::new(0.0, 0.0); dim];
        amplitudes[k] = C64::new(1.0, 0.0);
        Ok(Self { space, amplitudes })
    }

    /// `|s>|e>` in the system-major world basis.
    pub fn product(system: &PureState, environment: &PureState) -> PureState {
        PureState {
            space: Space::World,
            amplitudes: kron_vec(&system.amplitudes, &environment.amplitudes),
        }
    }

    pub(crate) fn from_raw(space: Space, amplitudes: Vec<C64>) -> Self {
        Self { space, amplitudes }
    }

    pub fn space(&self) -> Space {
        self.space
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amplitudes
    }

    pub fn into_amplitudes(self) -> Vec<C64> {
        self.amplitudes
    }

    pub fn norm(&self) -> f64 {
        vec_norm(&self.amplitudes)
    }

    /// `<self|other>`.
    pub fn inner(&self, other: &PureState) -> Result<C64> {
        check_same_dim(self.dim(), other.dim())?;
        Ok(inner(&self.amplitudes, &other.amplitudes))
    }

    pub fn max_abs_diff(&self, other: &PureState) -> Result<f64> {
        check_same_dim(self.dim(), other.dim())?;
        Ok(self
            .amplitudes
            .iter()
            .zip(&other.amplitudes)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max))
    }
}

pub(crate) fn vec_norm(v: &[C64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

pub(crate) fn inner(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

/// Reduced or pure-state density matrix.
#[derive(Clone, Debug)]
pub struct DensityMatrix {
    mat: Mat<C64>,
}

impl DensityMatrix {
    pub const HERMITIAN_TOL: f64 = 1e-12;
    pub const TRACE_TOL: f64 = 1e-10;
    pub const NEGATIVITY_TOL: f64 = 1e-10;

    /// Validates Hermiticity and unit trace. Positivity is checked when the
    /// spectrum is computed.
    pub fn new(mat: Mat<C64>) -> Result<Self> {
        check_square(&mat)?;
        let defect = hermitian_defect(mat.as_ref());
        if defect > Self::HERMITIAN_TOL {
            return Err(Error::InvalidDensityMatrix(format!(
                "not Hermitian (defect {defect:e})"
            )));
        }
        let dm = Self { mat };
        let tr = dm.trace();
        if (tr - 1.0).abs() > Self::TRACE_TOL {
            return Err(Error::InvalidDensityMatrix(format!("trace {tr} != 1")));
        }
        Ok(dm)
    }

    pub fn from_pure(state: &PureState) -> Self {
        let v = &state.amplitudes;
        let n = v.len();
        let mut mat = Mat::<C64>::zeros(n, n);
        for j in 0..n {
            mat[(j, j)] = C64::new(v[j].norm_sqr(), 0.0);
            for i in j + 1..n {
                let z = v[i] * v[j].conj();
                mat[(i, j)] = z;
                mat[(j, i)] = z.conj();
            }
        }
        Self { mat }
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> C64 {
        self.mat[(i, j)]
    }

    pub fn as_mat(&self) -> MatRef<'_, C64> {
        self.mat.as_ref()
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim()).map(|i| self.mat[(i, i)].re).sum()
    }

    pub(crate) fn as_operator(&self) -> Operator {
        Operator {
            mat: self.mat.clone(),
            hermitian: true,
        }
    }

    /// Eigen-decomposition, rejecting eigenvalues below `-NEGATIVITY_TOL`.
    pub fn eigen(&self) -> Result<EigenDecomposition> {
        let dec = eigh(&self.as_operator())?;
        if let Some(&lowest) = dec.values.first() {
            if lowest < -Self::NEGATIVITY_TOL {
                return Err(Error::InvalidDensityMatrix(format!(
                    "negative eigenvalue {lowest:e}"
                )));
            }
        }
        Ok(dec)
    }

    /// Diagonal element `<v|rho|v>` for an arbitrary vector.
    pub fn quadratic_form(&self, v: &[C64]) -> Result<f64> {
        check_same_dim(self.dim(), v.len())?;
        Ok(inner(v, &matvec(self.mat.as_ref(), v)).re)
    }
}

/// Eigenvalues in ascending order with eigenvectors stored as matrix columns.
#[derive(Clone, Debug)]
pub struct EigenDecomposition {
    values: Vec<f64>,
    vectors: Mat<C64>,
}

impl EigenDecomposition {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn vectors(&self) -> MatRef<'_, C64> {
        self.vectors.as_ref()
    }

    pub fn vector(&self, k: usize) -> &[C64] {
        self.vectors.col_as_slice(k)
    }

    pub fn into_parts(self) -> (Vec<f64>, Mat<C64>) {
        (self.values, self.vectors)
    }

    /// Max-entry norm of `V diag(values) V^dagger - op`. Cubic cost.
    pub fn reconstruction_error(&self, op: &Operator) -> Result<f64> {
        check_same_dim(self.dim(), op.dim())?;
        let n = self.dim();
        let scaled = Mat::from_fn(n, n, |i, k| self.vectors[(i, k)] * self.values[k]);
        let rebuilt = &scaled * self.vectors.adjoint();
        let mut worst = 0.0f64;
        for j in 0..n {
            for i in 0..n {
                worst = worst.max((rebuilt[(i, j)] - op.get(i, j)).norm());
            }
        }
        Ok(worst)
    }

    /// Largest `||H v_k - lambda_k v_k||` over all pairs.
    pub fn max_pair_residual(&self, op: &Operator) -> Result<f64> {
        check_same_dim(self.dim(), op.dim())?;
        let hv = op.as_mat() * self.vectors.as_ref();
        let n = self.dim();
        let mut worst = 0.0f64;
        for k in 0..n {
            let r: f64 = (0..n)
                .map(|i| (hv[(i, k)] - self.vectors[(i, k)] * self.values[k]).norm_sqr())
                .sum();
            worst = worst.max(r.sqrt());
        }
        Ok(worst)
    }

    /// Max-entry deviation of `V^dagger V` from the identity.
    pub fn unitarity_defect(&self) -> f64 {
        let g = self.vectors.adjoint() * self.vectors.as_ref();
        let n = self.dim();
        let mut worst = 0.0f64;
        for j in 0..n {
            for i in 0..n {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((g[(i, j)] - target).norm());
            }
        }
        worst
    }
}

/// Hermitian eigen-decomposition with ascending eigenvalues.
///
/// Each eigenvector is rotated so that its largest-magnitude entry is real
/// and positive; entries within a relative `1e-10` of the maximum count as
/// tied and the lowest index wins.
pub fn eigh(op: &Operator) -> Result<EigenDecomposition> {
    if !op.hermitian {
        return Err(Error::NotHermitian {
            asymmetry: hermitian_defect(op.as_mat()),
        });
    }
    let dim = op.dim();
    let evd = op
        .mat
        .self_adjoint_eigen(Side::Lower)
        .map_err(|_| Error::NoConvergence {
            dim,
            norm: op.frobenius_norm(),
        })?;
    let raw_values: Vec<f64> = evd.S().column_vector().iter().map(|z| z.re).collect();
    if raw_values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NoConvergence {
            dim,
            norm: op.frobenius_norm(),
        });
    }
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| raw_values[a].total_cmp(&raw_values[b]));
    let u = evd.U();
    let mut vectors = Mat::<C64>::zeros(dim, dim);
    let mut values = Vec::with_capacity(dim);
    for (dst, &src) in order.iter().enumerate() {
        values.push(raw_values[src]);
        let col = vectors.col_as_slice_mut(dst);
        for (i, z) in col.iter_mut().enumerate() {
            *z = u[(i, src)];
        }
        fix_phase(col);
    }
    Ok(EigenDecomposition { values, vectors })
}

/// Eigenvalues only; cheaper than [`eigh`] for spectra.
pub fn eigvalsh(op: &Operator) -> Result<Vec<f64>> {
    if !op.hermitian {
        return Err(Error::NotHermitian {
            asymmetry: hermitian_defect(op.as_mat()),
        });
    }
    let mut values =
        op.mat
            .self_adjoint_eigenvalues(Side::Lower)
            .map_err(|_| Error::NoConvergence {
                dim: op.dim(),
                norm: op.frobenius_norm(),
            })?;
    values.sort_by(f64::total_cmp);
    Ok(values)
}

pub(crate) fn fix_phase(v: &mut [C64]) {
    let max = v.iter().map(|z| z.norm()).fold(0.0, f64::max);
    if max == 0.0 {
        return;
    }
    let pivot = v
        .iter()
        .position(|z| z.norm() >= max * (1.0 - PHASE_TIE_TOL))
        .unwrap_or(0);
    let mag = v[pivot].norm();
    let rot = v[pivot].conj() / mag;
    for z in v.iter_mut() {
        *z *= rot;
    }
    v[pivot] = C64::new(mag, 0.0);
}

/// Reduced density matrix of one factor of a world state.
pub fn partial_trace(
    psi: &PureState,
    n_s: usize,
    n_e: usize,
    keep: Subsystem,
) -> Result<DensityMatrix> {
    check_same_dim(n_s * n_e, psi.dim())?;
    let m = psi.amplitudes();
    let (n, pairs) = match keep {
        Subsystem::System => (n_s, n_e),
        Subsystem::Environment => (n_e, n_s),
    };
    // Amplitude of (kept index a, traced index b).
    let amp = |a: usize, b: usize| match keep {
        Subsystem::System => m[a * n_e + b],
        Subsystem::Environment => m[b * n_e + a],
    };
    let mut mat = Mat::<C64>::zeros(n, n);
    for j in 0..n {
        let mut diag = 0.0;
        for b in 0..pairs {
            diag += amp(j, b).norm_sqr();
        }
        mat[(j, j)] = C64::new(diag, 0.0);
        for i in j + 1..n {
            let mut acc = C64::new(0.0, 0.0);
            for b in 0..pairs {
                acc += amp(i, b) * amp(j, b).conj();
            }
            mat[(i, j)] = acc;
            mat[(j, i)] = acc.conj();
        }
    }
    DensityMatrix::new(mat)
}

/// Imaginary residue silently discarded up to this size.
pub const IMAG_DISCARD_TOL: f64 = 1e-10;
/// Imaginary residue above this size is an error.
pub const IMAG_ERROR_TOL: f64 = 1e-8;

/// Anything an expectation value can be taken in.
pub trait Expectation {
    fn raw_expectation(&self, op: &Operator) -> Result<C64>;
}

impl Expectation for PureState {
    fn raw_expectation(&self, op: &Operator) -> Result<C64> {
        let hv = op.apply(self.amplitudes())?;
        Ok(inner(self.amplitudes(), &hv))
    }
}

impl Expectation for DensityMatrix {
    fn raw_expectation(&self, op: &Operator) -> Result<C64> {
        check_same_dim(self.dim(), op.dim())?;
        let n = self.dim();
        let mut acc = C64::new(0.0, 0.0);
        for i in 0..n {
            for j in 0..n {
                acc += self.mat[(i, j)] * op.get(j, i);
            }
        }
        Ok(acc)
    }
}

/// `<psi|op|psi>` or `tr(rho op)`, checked to be real.
pub fn expectation<S: Expectation + ?Sized>(op: &Operator, state: &S) -> Result<f64> {
    real_part_checked(state.raw_expectation(op)?)
}

pub(crate) fn real_part_checked(z: C64) -> Result<f64> {
    let residue = z.im.abs();
    if residue > IMAG_ERROR_TOL {
        return Err(Error::ImaginaryResidue { residue });
    }
    if residue > IMAG_DISCARD_TOL {
        log::warn!("discarding imaginary residue {residue:e} in expectation value");
    }
    Ok(z.re)
}
