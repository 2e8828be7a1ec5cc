//! Measured quantities: entropy, Schmidt spectra, position moments, spin
//! coherence, subsystem energies and spectrum histograms.

use std::io::Write;

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{
    check_same_dim, inner, partial_trace, real_part_checked, DensityMatrix, Operator, PureState,
    Subsystem,
};
use crate::model::{AssembledModel, Variant};
use crate::sho::ShoSpace;

/// Eigenvalues below this are left out of the entropy sum.
pub const ENTROPY_FLOOR: f64 = 1e-14;

/// Trace deviation tolerated by [`entropy`].
pub const ENTROPY_TRACE_TOL: f64 = 1e-8;

pub const DEFAULT_TOP_K: usize = 12;

/// Number of Schmidt states whose position moments are recorded.
pub const TRACKED_PACKETS: usize = 2;

/// Von Neumann entropy `-tr(rho ln rho)` in nats.
pub fn entropy(rho: &DensityMatrix) -> Result<f64> {
    let trace = rho.trace();
    if (trace - 1.0).abs() > ENTROPY_TRACE_TOL {
        return Err(Error::InvalidDensityMatrix(format!(
            "trace {trace} differs from 1"
        )));
    }
    Ok(entropy_of_spectrum(rho.eigen()?.values()))
}

/// `-sum p ln p` over `p >= ENTROPY_FLOOR`.
pub fn entropy_of_spectrum(p: &[f64]) -> f64 {
    let s: f64 = p
        .iter()
        .filter(|&&x| x >= ENTROPY_FLOOR)
        .map(|&x| -x * x.ln())
        .sum();
    s.max(0.0)
}

/// Leading eigenpairs of a reduced density matrix, in descending order.
#[derive(Debug, Clone, PartialEq)]
pub struct SchmidtSpectrum {
    /// Eigenvalues of the full matrix, descending.
    pub all: Vec<f64>,
    /// The `k` leading eigenvectors.
    pub vectors: Vec<Vec<C64>>,
}

impl SchmidtSpectrum {
    pub fn top(&self) -> &[f64] {
        &self.all[..self.vectors.len()]
    }

    pub fn entropy(&self) -> f64 {
        entropy_of_spectrum(&self.all)
    }
}

/// Top-`k` Schmidt eigenpairs of `rho`. Ties keep the eigensolver's
/// ascending-order position.
pub fn schmidt(rho: &DensityMatrix, k: usize) -> Result<SchmidtSpectrum> {
    if k > rho.dim() {
        return Err(Error::InvalidParameter(format!(
            "requested {k} Schmidt states from a {}-dimensional matrix",
            rho.dim()
        )));
    }
    let dec = rho.eigen()?;
    let mut order: Vec<usize> = (0..dec.dim()).collect();
    order.sort_by(|&a, &b| dec.values()[b].total_cmp(&dec.values()[a]));
    Ok(SchmidtSpectrum {
        all: order.iter().map(|&i| dec.values()[i]).collect(),
        vectors: order[..k].iter().map(|&i| dec.vector(i).to_vec()).collect(),
    })
}

/// `(<q>, sqrt(<q^2> - <q>^2))` for a unit system vector.
pub fn moments(state: &[C64], sho: &ShoSpace) -> Result<(f64, f64)> {
    check_same_dim(sho.n_s(), state.len())?;
    let q_psi = sho.position().apply(state)?;
    let mean = real_part_checked(inner(state, &q_psi))?;
    let second: f64 = q_psi.iter().map(|z| z.norm_sqr()).sum();
    Ok((mean, (second - mean * mean).max(0.0).sqrt()))
}

/// `<S_x> = 2 Re rho[up, down]`.
pub fn sx_expectation(rho: &DensityMatrix) -> Result<f64> {
    check_same_dim(2, rho.dim())?;
    Ok(2.0 * rho.get(0, 1).re)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Energies {
    pub e_s: f64,
    pub e_e: f64,
    pub e_i: f64,
    pub e_w: f64,
}

/// `<A (x) B>` for a world vector reshaped as `M[s][e]`:
/// `sum_{ik} conj(M_ik) (A M B^T)_ik`. `None` stands for the identity.
fn product_expectation(
    m: &[C64],
    n_s: usize,
    n_e: usize,
    a: Option<&Operator>,
    b: Option<&Operator>,
) -> Result<f64> {
    let am: Vec<C64> = match a {
        Some(a) => {
            let mut out = vec![C64::new(0.0, 0.0); n_s * n_e];
            for i in 0..n_s {
                for j in 0..n_s {
                    let aij = a.get(i, j);
                    if aij == C64::new(0.0, 0.0) {
                        continue;
                    }
                    for k in 0..n_e {
                        out[i * n_e + k] += aij * m[j * n_e + k];
                    }
                }
            }
            out
        }
        None => m.to_vec(),
    };
    let total = match b {
        Some(b) => {
            // (AM B^T)_ik = sum_l (AM)_il B_kl
            let mut acc = C64::new(0.0, 0.0);
            for i in 0..n_s {
                let row = &am[i * n_e..(i + 1) * n_e];
                for k in 0..n_e {
                    let mut z = C64::new(0.0, 0.0);
                    for (l, x) in row.iter().enumerate() {
                        z += b.get(k, l) * x;
                    }
                    acc += m[i * n_e + k].conj() * z;
                }
            }
            acc
        }
        None => inner(m, &am),
    };
    real_part_checked(total)
}

/// Expectations of the three addends of `H_w` and their sum.
pub fn subsystem_energies(psi_w: &PureState, model: &AssembledModel) -> Result<Energies> {
    let (n_s, n_e) = (model.n_s(), model.n_e());
    check_same_dim(n_s * n_e, psi_w.dim())?;
    let m = psi_w.amplitudes();
    let e_s = product_expectation(m, n_s, n_e, Some(model.h_s()), None)?;
    let e_e = product_expectation(m, n_s, n_e, None, Some(model.h_e()))?;
    let e_i = product_expectation(m, n_s, n_e, Some(model.coupling()), Some(model.h_ei()))?;
    Ok(Energies {
        e_s,
        e_e,
        e_i,
        e_w: e_s + e_e + e_i,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub left: f64,
    pub right: f64,
    pub count: usize,
}

/// Equal-width histogram over `[min, max]`; the last bin is closed.
pub fn histogram(values: &[f64], bins: usize) -> Result<Vec<HistogramBin>> {
    if values.is_empty() {
        return Err(Error::InvalidParameter(
            "histogram of an empty vector".into(),
        ));
    }
    if bins == 0 {
        return Err(Error::InvalidParameter(
            "histogram needs at least one bin".into(),
        ));
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !lo.is_finite() || !hi.is_finite() {
        return Err(Error::InvalidParameter(
            "histogram of non-finite values".into(),
        ));
    }
    let (lo, hi) = if hi > lo {
        (lo, hi)
    } else {
        (lo - 0.5, lo + 0.5)
    };
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for &v in values {
        let idx = (((v - lo) / (hi - lo)) * bins as f64).floor() as usize;
        counts[idx.min(bins - 1)] += 1;
    }
    Ok(counts
        .into_iter()
        .enumerate()
        .map(|(i, count)| HistogramBin {
            left: lo + i as f64 * width,
            right: if i + 1 == bins {
                hi
            } else {
                lo + (i + 1) as f64 * width
            },
            count,
        })
        .collect())
}

/// Observables at one time sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservableRecord {
    pub t: f64,
    pub entropy: f64,
    /// Entropy of the environment's reduced matrix, when requested.
    pub entropy_env: Option<f64>,
    /// Leading Schmidt eigenvalues, descending.
    pub p: Vec<f64>,
    /// `(<q>, q_rms)` of the leading Schmidt states (oscillator only).
    pub packets: Vec<(f64, f64)>,
    /// `<S_x>` (qubit only).
    pub sx: Option<f64>,
    pub energies: Energies,
}

/// Options for [`observe`].
#[derive(Debug, Clone, Copy)]
pub struct ObserveOptions {
    pub top_k: usize,
    pub env_entropy: bool,
}

impl Default for ObserveOptions {
    fn default() -> Self {
        Self {
            top_k: DEFAULT_TOP_K,
            env_entropy: false,
        }
    }
}

/// Reduced quantities of `psi_w` together with its Schmidt spectrum.
pub fn observe_with_spectrum(
    t: f64,
    psi_w: &PureState,
    model: &AssembledModel,
    opts: ObserveOptions,
) -> Result<(ObservableRecord, SchmidtSpectrum)> {
    let (n_s, n_e) = (model.n_s(), model.n_e());
    let rho_s = partial_trace(psi_w, n_s, n_e, Subsystem::System)?;
    let spectrum = schmidt(&rho_s, opts.top_k.min(n_s))?;
    let entropy_env = if opts.env_entropy {
        Some(entropy(&partial_trace(
            psi_w,
            n_s,
            n_e,
            Subsystem::Environment,
        )?)?)
    } else {
        None
    };
    let (packets, sx) = match (model.variant(), model.sho()) {
        (Variant::Acl, Some(sho)) => {
            let packets = spectrum
                .vectors
                .iter()
                .take(TRACKED_PACKETS)
                .map(|v| moments(v, sho))
                .collect::<Result<Vec<_>>>()?;
            (packets, None)
        }
        _ => (Vec::new(), Some(sx_expectation(&rho_s)?)),
    };
    let record = ObservableRecord {
        t,
        entropy: spectrum.entropy(),
        entropy_env,
        p: spectrum.top().to_vec(),
        packets,
        sx,
        energies: subsystem_energies(psi_w, model)?,
    };
    Ok((record, spectrum))
}

pub fn observe(
    t: f64,
    psi_w: &PureState,
    model: &AssembledModel,
    opts: ObserveOptions,
) -> Result<ObservableRecord> {
    observe_with_spectrum(t, psi_w, model, opts).map(|(r, _)| r)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// CSV header for records with `k` Schmidt eigenvalues.
pub fn record_header(k: usize) -> Vec<String> {
    let mut h = vec!["t".to_string(), "entropy".to_string()];
    h.extend((1..=k).map(|i| format!("p{i}")));
    for i in 1..=TRACKED_PACKETS {
        h.push(format!("q_mean_{i}"));
        h.push(format!("q_rms_{i}"));
    }
    h.extend(["e_s", "e_e", "e_i", "e_w", "sx"].map(String::from));
    h
}

/// Writes records as CSV with [`record_header`] columns, preceded by one
/// `#` comment line. Missing values are left empty.
pub fn write_records<W: Write>(
    mut out: W,
    comment: &str,
    k: usize,
    records: &[ObservableRecord],
) -> Result<()> {
    writeln!(out, "# {comment}")?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(record_header(k))?;
    for r in records {
        let mut row = vec![r.t.to_string(), r.entropy.to_string()];
        row.extend((0..k).map(|i| fmt_opt(r.p.get(i).copied())));
        for i in 0..TRACKED_PACKETS {
            let packet = r.packets.get(i);
            row.push(fmt_opt(packet.map(|p| p.0)));
            row.push(fmt_opt(packet.map(|p| p.1)));
        }
        let e = r.energies;
        row.extend([e.e_s, e.e_e, e.e_i, e.e_w].map(|x| x.to_string()));
        row.push(fmt_opt(r.sx));
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}
