//! Random-matrix environment.
//!
//! `H_e^I = E_I R_I + E0_I 1` and `H_e = E_e R_e + E0_e 1`, where `R_I` and
//! `R_e` are independent Hermitian matrices whose independent real and
//! imaginary parts are uniform on `[-0.5, 0.5]`.

use num_complex::Complex64 as C64;
use rand_chacha::ChaCha20Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{eigh, EigenDecomposition, Operator, PureState, Space};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub n_e: usize,
    /// Interaction scale `E_I`.
    pub e_i: f64,
    /// Environment self-Hamiltonian scale `E_e`.
    pub e_e: f64,
    #[serde(default)]
    pub e0_i: f64,
    #[serde(default)]
    pub e0_e: f64,
    pub seed_interaction: u64,
    pub seed_env: u64,
}

impl EnvSpec {
    pub const DEFAULT_SEED_INTERACTION: u64 = 1;
    pub const DEFAULT_SEED_ENV: u64 = 2;

    pub fn new(n_e: usize, e_i: f64, e_e: f64) -> Self {
        Self {
            n_e,
            e_i,
            e_e,
            e0_i: 0.0,
            e0_e: 0.0,
            seed_interaction: Self::DEFAULT_SEED_INTERACTION,
            seed_env: Self::DEFAULT_SEED_ENV,
        }
    }

    pub fn with_seeds(mut self, seed_interaction: u64, seed_env: u64) -> Self {
        self.seed_interaction = seed_interaction;
        self.seed_env = seed_env;
        self
    }

    pub fn with_offsets(mut self, e0_i: f64, e0_e: f64) -> Self {
        self.e0_i = e0_i;
        self.e0_e = e0_e;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_e < 2 {
            return Err(Error::InvalidParameter(format!(
                "environment dimension n_e must be >= 2, got {}",
                self.n_e
            )));
        }
        for (name, v) in [
            ("e_i", self.e_i),
            ("e_e", self.e_e),
            ("e0_i", self.e0_i),
            ("e0_e", self.e0_e),
        ] {
            if !v.is_finite() {
                return Err(Error::InvalidParameter(format!("{name} must be finite")));
            }
        }
        if self.seed_interaction == self.seed_env {
            log::warn!(
                "interaction and environment seeds are both {}; R_I and R_e will be identical",
                self.seed_env
            );
        }
        Ok(())
    }
}

/// Maps a raw 64-bit draw onto `[-0.5, 0.5)` using its top 53 bits.
fn centered_uniform(rng: &mut ChaCha20Rng) -> f64 {
    const SCALE: f64 = 1.0 / (1u64 << 53) as f64;
    (rng.next_u64() >> 11) as f64 * SCALE - 0.5
}

/// Seeded random Hermitian matrix.
///
/// Stream order: upper triangle row by row; the diagonal consumes one draw
/// (real part), each off-diagonal entry consumes two (real, then imaginary).
/// The lower triangle is the conjugate mirror.
pub fn random_hermitian(n: usize, seed: u64) -> Result<Operator> {
    if n == 0 {
        return Err(Error::InvalidParameter(
            "matrix dimension must be >= 1".into(),
        ));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut upper = vec![C64::new(0.0, 0.0); n * n];
    for i in 0..n {
        upper[i * n + i] = C64::new(centered_uniform(&mut rng), 0.0);
        for j in i + 1..n {
            let re = centered_uniform(&mut rng);
            let im = centered_uniform(&mut rng);
            upper[i * n + j] = C64::new(re, im);
        }
    }
    // Lower entry (r, c) with r > c mirrors upper (c, r).
    Operator::hermitian_from_lower(n, |r, c| {
        if r == c {
            upper[r * n + r]
        } else {
            upper[c * n + r].conj()
        }
    })
}

fn scaled_with_offset(r: &Operator, scale: f64, offset: f64) -> Result<Operator> {
    Operator::hermitian_from_lower(r.dim(), |i, j| {
        let z = r.get(i, j) * scale;
        if i == j {
            z + offset
        } else {
            z
        }
    })
}

/// Environment self-Hamiltonian `E_e R_e + E0_e 1`.
pub fn build_h_e(spec: &EnvSpec) -> Result<Operator> {
    spec.validate()?;
    scaled_with_offset(
        &random_hermitian(spec.n_e, spec.seed_env)?,
        spec.e_e,
        spec.e0_e,
    )
}

/// Environment factor of the interaction, `E_I R_I + E0_I 1`.
pub fn build_h_ei(spec: &EnvSpec) -> Result<Operator> {
    spec.validate()?;
    scaled_with_offset(
        &random_hermitian(spec.n_e, spec.seed_interaction)?,
        spec.e_i,
        spec.e0_i,
    )
}

/// The `index`-th eigenvector (1-based, ascending energy) of `h_e`.
pub fn env_eigenstate(h_e: &Operator, index: usize) -> Result<PureState> {
    env_eigenstate_from(&eigh(h_e)?, index)
}

/// Same as [`env_eigenstate`] with a precomputed decomposition.
pub fn env_eigenstate_from(dec: &EigenDecomposition, index: usize) -> Result<PureState> {
    if index == 0 || index > dec.dim() {
        return Err(Error::IndexOutOfRange {
            index,
            valid: format!("1..={}", dec.dim()),
        });
    }
    Ok(PureState::from_raw(
        Space::Environment,
        dec.vector(index - 1).to_vec(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::expectation;

    #[test]
    fn random_hermitian_is_deterministic() {
        let a = random_hermitian(17, 99).unwrap();
        let b = random_hermitian(17, 99).unwrap();
        assert!(a.entries_eq(&b));
        let c = random_hermitian(17, 100).unwrap();
        assert!(!a.entries_eq(&c));
    }

    #[test]
    fn random_hermitian_entries_in_range_and_exactly_hermitian() {
        let r = random_hermitian(600, 5).unwrap();
        assert!(r.is_hermitian());
        for i in 0..600 {
            assert_eq!(r.get(i, i).im, 0.0);
            for j in 0..600 {
                let z = r.get(i, j);
                assert!((-0.5..=0.5).contains(&z.re) && (-0.5..=0.5).contains(&z.im));
                assert_eq!(z, r.get(j, i).conj());
            }
        }
    }

    #[test]
    fn stream_order_is_row_major_upper_triangle() {
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let d0 = centered_uniform(&mut rng);
        let re01 = centered_uniform(&mut rng);
        let im01 = centered_uniform(&mut rng);
        let re02 = centered_uniform(&mut rng);
        let r = random_hermitian(3, 7).unwrap();
        assert_eq!(r.get(0, 0), C64::new(d0, 0.0));
        assert_eq!(r.get(0, 1), C64::new(re01, im01));
        assert_eq!(r.get(1, 0), C64::new(re01, -im01));
        assert_eq!(r.get(0, 2).re, re02);
    }

    #[test]
    fn zero_scale_gives_offset_identity() {
        let spec = EnvSpec::new(6, 0.0, 0.0);
        let h = build_h_e(&spec).unwrap();
        assert!(h.entries_eq(&Operator::zeros(6).unwrap()));
        let spec = spec.with_offsets(0.4, 1.5);
        let h = build_h_e(&spec).unwrap();
        assert!(h.entries_eq(&Operator::identity(6).unwrap().scale(1.5)));
        let hi = build_h_ei(&spec).unwrap();
        assert!(hi.entries_eq(&Operator::identity(6).unwrap().scale(0.4)));
    }

    #[test]
    fn interaction_scales_linearly() {
        let weak = build_h_ei(&EnvSpec::new(20, 0.03, 0.75)).unwrap();
        let strong = build_h_ei(&EnvSpec::new(20, 0.25, 0.75)).unwrap();
        let ratio = 0.25 / 0.03;
        for i in 0..20 {
            for j in 0..20 {
                let want = weak.get(i, j) * ratio;
                assert!((strong.get(i, j) - want).norm() <= 1e-14 * want.norm().max(1e-300));
            }
        }
    }

    #[test]
    fn distinct_seeds_do_not_commute() {
        let spec = EnvSpec::new(40, 0.03, 0.75);
        let hi = build_h_ei(&spec).unwrap();
        let he = build_h_e(&spec).unwrap();
        let comm = hi.commutator(&he).unwrap();
        assert!(comm.frobenius_norm() > 1e-3);
    }

    #[test]
    fn env_eigenstate_indexing() {
        let h = Operator::diagonal(&[3.0, 1.0, 2.0]).unwrap();
        let psi = env_eigenstate(&h, 1).unwrap();
        assert_eq!(psi.amplitudes()[1], C64::new(1.0, 0.0));
        assert!(env_eigenstate(&h, 0).is_err());
        assert!(env_eigenstate(&h, 4).is_err());

        let spec = EnvSpec::new(30, 0.03, 0.75);
        let he = build_h_e(&spec).unwrap();
        let dec = eigh(&he).unwrap();
        for index in [1, 15, 30] {
            let psi = env_eigenstate_from(&dec, index).unwrap();
            let e = expectation(&he, &psi).unwrap();
            assert!((e - dec.values()[index - 1]).abs() < 1e-10);
        }
    }

    #[test]
    fn validation_rejects_tiny_environment() {
        assert!(EnvSpec::new(1, 0.1, 0.1).validate().is_err());
        assert!(EnvSpec::new(4, f64::NAN, 0.1).validate().is_err());
    }
}
