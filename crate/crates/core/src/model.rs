//! Composite Hamiltonians.
//!
//! Every variant has the shape
//! `H_w = H_s (x) 1 + Q (x) H_I + 1 (x) H_e`:
//!
//! * ACL: `H_s` the truncated oscillator, `Q = q`, `H_I = H_e^I`.
//! * RCL: `H_s = 0`, `Q = lambda S_z`, `H_e = 0`.
//! * RCL with environment: RCL plus the environment self-Hamiltonian.
//!
//! The model keeps the four subsystem-sized factors and only materializes
//! world-sized matrices on request.

use faer::Mat;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::environment::{build_h_e, build_h_ei, EnvSpec};
use crate::error::{Error, Result};
use crate::linalg::{eigvalsh, tensor, Operator};
use crate::sho::ShoSpace;

/// Default ceiling on `n_s * n_e`.
pub const DEFAULT_MAX_WORLD_DIM: usize = 32_768;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Acl,
    Rcl,
    RclEnv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    /// Oscillator truncation (ACL only; the qubit variants use 2).
    pub n_s: usize,
    pub omega: f64,
    pub env: EnvSpec,
    /// Coupling prefactor for the qubit variants.
    pub lambda: f64,
    pub max_world_dim: usize,
}

impl ModelConfig {
    pub fn acl(n_s: usize, env: EnvSpec) -> Self {
        Self {
            variant: Variant::Acl,
            n_s,
            omega: 1.0,
            env,
            lambda: 1.0,
            max_world_dim: DEFAULT_MAX_WORLD_DIM,
        }
    }

    pub fn rcl(env: EnvSpec) -> Self {
        Self {
            variant: Variant::Rcl,
            n_s: 2,
            omega: 1.0,
            env,
            lambda: 1.0,
            max_world_dim: DEFAULT_MAX_WORLD_DIM,
        }
    }

    pub fn rcl_env(env: EnvSpec) -> Self {
        Self {
            variant: Variant::RclEnv,
            ..Self::rcl(env)
        }
    }

    /// Parameters used for the Hamiltonian spectra: `E_I = 0.01`,
    /// `E_e = 0.05`, offsets equal to the scales.
    pub fn spectra_preset(n_s: usize, n_e: usize) -> Self {
        Self::acl(n_s, EnvSpec::new(n_e, 0.01, 0.05).with_offsets(0.01, 0.05))
    }

    pub fn system_dim(&self) -> usize {
        match self.variant {
            Variant::Acl => self.n_s,
            Variant::Rcl | Variant::RclEnv => 2,
        }
    }

    pub fn world_dim(&self) -> usize {
        self.system_dim().saturating_mul(self.env.n_e)
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        match self.variant {
            Variant::Acl => {
                if self.n_s < 2 {
                    return Err(Error::InvalidParameter(format!(
                        "ACL requires n_s >= 2, got {}",
                        self.n_s
                    )));
                }
            }
            Variant::Rcl | Variant::RclEnv => {
                if self.n_s != 2 {
                    return Err(Error::InvalidParameter(format!(
                        "qubit variants require n_s = 2, got {}",
                        self.n_s
                    )));
                }
                if !self.lambda.is_finite() {
                    return Err(Error::InvalidParameter("lambda must be finite".into()));
                }
            }
        }
        let requested = self.world_dim();
        if requested > self.max_world_dim {
            return Err(Error::ResourceLimit {
                requested,
                limit: self.max_world_dim,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct AssembledModel {
    config: ModelConfig,
    h_s: Operator,
    coupling: Operator,
    h_ei: Operator,
    h_e: Operator,
    sho: Option<ShoSpace>,
}

/// Pauli-z in the `{up, down}` basis.
pub fn s_z() -> Operator {
    Operator::diagonal(&[1.0, -1.0]).expect("2x2 diagonal")
}

/// Pauli-x in the `{up, down}` basis.
pub fn s_x() -> Operator {
    Operator::hermitian_from_lower(2, |i, j| {
        if i == j {
            C64::new(0.0, 0.0)
        } else {
            C64::new(1.0, 0.0)
        }
    })
    .expect("2x2 hermitian")
}

/// Builds the subsystem factors for `config`. Fails before any world-sized
/// allocation if the resource limit is exceeded.
pub fn assemble(config: &ModelConfig) -> Result<AssembledModel> {
    config.validate()?;
    let n_e = config.env.n_e;
    let h_ei = build_h_ei(&config.env)?;
    let h_e_full = build_h_e(&config.env)?;
    let model = match config.variant {
        Variant::Acl => {
            let sho = ShoSpace::new(config.n_s, config.omega)?;
            AssembledModel {
                config: config.clone(),
                h_s: sho.hamiltonian().clone(),
                coupling: sho.position().clone(),
                h_ei,
                h_e: h_e_full,
                sho: Some(sho),
            }
        }
        Variant::Rcl | Variant::RclEnv => {
            let h_e = if config.variant == Variant::RclEnv {
                h_e_full
            } else {
                Operator::zeros(n_e)?
            };
            AssembledModel {
                config: config.clone(),
                h_s: Operator::zeros(2)?,
                coupling: s_z().scale(config.lambda),
                h_ei,
                h_e,
                sho: None,
            }
        }
    };
    Ok(model)
}

impl AssembledModel {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    pub fn n_s(&self) -> usize {
        self.h_s.dim()
    }

    pub fn n_e(&self) -> usize {
        self.h_e.dim()
    }

    pub fn world_dim(&self) -> usize {
        self.n_s() * self.n_e()
    }

    /// System self-Hamiltonian (`n_s x n_s`).
    pub fn h_s(&self) -> &Operator {
        &self.h_s
    }

    /// System factor of the interaction: `q` or `lambda S_z`.
    pub fn coupling(&self) -> &Operator {
        &self.coupling
    }

    /// Environment factor of the interaction.
    pub fn h_ei(&self) -> &Operator {
        &self.h_ei
    }

    /// Environment self-Hamiltonian as it enters `H_w` (zero for RCL).
    pub fn h_e(&self) -> &Operator {
        &self.h_e
    }

    pub fn sho(&self) -> Option<&ShoSpace> {
        self.sho.as_ref()
    }

    fn limit(&self) -> usize {
        self.config.max_world_dim
    }

    pub fn h_s_part(&self) -> Result<Operator> {
        tensor(&self.h_s, &Operator::identity(self.n_e())?, self.limit())
    }

    pub fn h_int_part(&self) -> Result<Operator> {
        tensor(&self.coupling, &self.h_ei, self.limit())
    }

    pub fn h_e_part(&self) -> Result<Operator> {
        tensor(&Operator::identity(self.n_s())?, &self.h_e, self.limit())
    }

    /// Full world Hamiltonian, entrywise `(s + int) + e` with the same
    /// products [`tensor`] forms, so it equals the sum of the three parts
    /// exactly.
    pub fn h_w(&self) -> Result<Operator> {
        let n = self.world_dim();
        if n > self.limit() {
            return Err(Error::ResourceLimit {
                requested: n,
                limit: self.limit(),
            });
        }
        let n_e = self.n_e();
        let one = C64::new(1.0, 0.0);
        let zero = C64::new(0.0, 0.0);
        let delta = |a: usize, b: usize| if a == b { one } else { zero };
        let mut mat = Mat::<C64>::zeros(n, n);
        for c in 0..n {
            let (j, l) = (c / n_e, c % n_e);
            for r in 0..n {
                let (i, k) = (r / n_e, r % n_e);
                let s = self.h_s.get(i, j) * delta(k, l);
                let int = self.coupling.get(i, j) * self.h_ei.get(k, l);
                let e = delta(i, j) * self.h_e.get(k, l);
                mat[(r, c)] = (s + int) + e;
            }
        }
        Operator::hermitian(mat)
    }
}

/// Ascending spectra of the system, environment and world Hamiltonians.
#[derive(Debug, Clone)]
pub struct Spectra {
    pub h_s: Vec<f64>,
    pub h_e: Vec<f64>,
    pub h_w: Vec<f64>,
}

pub fn spectra(model: &AssembledModel) -> Result<Spectra> {
    if model.variant() != Variant::Acl {
        return Err(Error::InvalidParameter(
            "spectra are defined for the ACL variant".into(),
        ));
    }
    Ok(Spectra {
        h_s: eigvalsh(model.h_s())?,
        h_e: eigvalsh(model.h_e())?,
        h_w: eigvalsh(&model.h_w()?)?,
    })
}
