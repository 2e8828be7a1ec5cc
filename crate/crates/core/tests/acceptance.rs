//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Run with `cargo test -p aclsim-core --test acceptance`. The process exits
//! with status 0 unless `ACCEPTANCE_STRICT=1` is set, in which case any FAIL
//! makes it exit with status 1.

mod common;

use std::f64::consts::TAU;
use std::time::Instant;

use aclsim_core::environment::{random_hermitian, EnvSpec};
use aclsim_core::evolution::{propagator_oracle, SpectralModel};
use aclsim_core::experiments::{
    registered, validate_numerics, CaseResult, Runner, Scenario, TimeGrid, DESK_ENV_DIM,
};
use aclsim_core::linalg::{eigvalsh, partial_trace, PureState, Space, Subsystem};
use aclsim_core::model::{assemble, ModelConfig};
use aclsim_core::observables::{entropy, ObservableRecord};
use aclsim_core::sho::ShoSpace;
use aclsim_core::{Error, Result};
use common::{semicircle_chi2, CHI2_19_P01};
use num_complex::Complex64 as C64;

struct Verdict {
    pass: bool,
    detail: String,
}

impl Verdict {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

fn scenario(name: &str) -> Result<Scenario> {
    registered(name, DESK_ENV_DIM)
}

fn case<'a>(cases: &'a [CaseResult], label: &str) -> &'a CaseResult {
    cases.iter().find(|c| c.label == label).expect("case label")
}

fn mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let (sum, n) = values
        .into_iter()
        .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    sum / n as f64
}

/// Records with `t` in `[t_end / 10, t_end]`.
fn last_decade(records: &[ObservableRecord]) -> impl Iterator<Item = &ObservableRecord> {
    let t_end = records.last().map_or(0.0, |r| r.t);
    records.iter().filter(move |r| r.t >= t_end / 10.0)
}

fn c1_truncation_algebra() -> Result<Verdict> {
    let mut worst = 0.0f64;
    for n in [2, 5, 30] {
        let sho = ShoSpace::new(n, 1.0)?;
        let comm = sho.lowering().commutator(sho.raising())?;
        for i in 0..n {
            for j in 0..n {
                let expected = match (i == j, i + 1 == n) {
                    (true, true) => 1.0 - n as f64,
                    (true, false) => 1.0,
                    _ => 0.0,
                };
                worst = worst.max((comm.get(i, j) - C64::new(expected, 0.0)).norm());
            }
        }
    }
    Ok(Verdict::new(
        worst <= 1e-12,
        format!("max entry error {worst:.1e}"),
    ))
}

fn c2_decoupled_periodicity(runner: &mut Runner) -> Result<Verdict> {
    // E_I = 0: the environment only contributes a global phase, so a small
    // environment suffices.
    let scenario = registered("decoupled_coherent", 20)?;
    let case = &scenario.cases[0];
    let prepared = runner.prepare(&case.config)?;
    let sm = &prepared.spectral;
    let (start, _) = prepared.initial_state(&case.system, &case.env)?;
    let psi0 = sm.decode(&start)?;
    let sho = prepared.model.sho().expect("oscillator");
    let density = |psi: &PureState| -> Result<Vec<f64>> {
        let rho = partial_trace(psi, 30, 20, Subsystem::System)?;
        (0..30)
            .map(|k| rho.quadratic_form(sho.q_basis().vector(k)))
            .collect()
    };
    let p0 = density(&psi0)?;
    let mut worst_overlap = 0.0f64;
    let mut worst_residual = 0.0f64;
    for n in [1.0, 1e3, 1e5] {
        let psi = sm.evolve_to(&start, n * TAU)?;
        worst_overlap = worst_overlap.max(1.0 - psi0.inner(&psi)?.norm());
        let p = density(&psi)?;
        let r = p
            .iter()
            .zip(&p0)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        worst_residual = worst_residual.max(r);
    }
    Ok(Verdict::new(
        worst_overlap <= 1e-8 && worst_residual <= 1e-8,
        format!("1-|overlap| {worst_overlap:.1e}, probability residual {worst_residual:.1e}"),
    ))
}

fn c3_oracle_equivalence() -> Result<Verdict> {
    let config = ModelConfig::acl(4, EnvSpec::new(8, 0.25, 0.75));
    let model = assemble(&config)?;
    let h_w = model.h_w()?;
    let sm = SpectralModel::prepare(&model)?;
    let amps: Vec<C64> = (0..32)
        .map(|k| C64::new((0.37 * k as f64 + 0.1).cos(), (1.1 * k as f64).sin()))
        .collect();
    let psi0 = PureState::normalized(Space::World, amps)?;
    let start = sm.encode_world(&psi0)?;
    let mut worst = 0.0f64;
    for t in [0.1, 1.0, 10.0] {
        let ours = sm.evolve_to(&start, t)?;
        let oracle = propagator_oracle(&h_w, &psi0, t)?;
        worst = worst.max(ours.max_abs_diff(&oracle)?);
    }
    Ok(Verdict::new(
        worst <= 1e-10,
        format!("max amplitude deviation {worst:.1e}"),
    ))
}

fn c4_conservation(runner: &mut Runner, weak: &CaseResult) -> Result<Verdict> {
    let prepared = runner.prepare(&weak.config)?;
    let sm = &prepared.spectral;
    let (start, _) = prepared.initial_state(&weak.system, &weak.env)?;
    let times: Vec<f64> = weak.records.iter().map(|r| r.t).collect();
    let norm_drift = sm
        .evolve_many(&start, &times)?
        .iter()
        .map(|psi| (psi.norm() - 1.0).abs())
        .fold(0.0, f64::max);
    let e0 = weak.energy;
    let energy_drift = weak
        .records
        .iter()
        .map(|r| (r.energies.e_w - e0).abs() / e0.abs())
        .fold(0.0, f64::max);
    let entropy_gap = weak
        .records
        .iter()
        .map(|r| (r.entropy - r.entropy_env.expect("environment entropy")).abs())
        .fold(0.0, f64::max);
    let s_max = 30f64.ln();
    let excess = weak
        .records
        .iter()
        .map(|r| r.entropy - s_max)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(Verdict::new(
        norm_drift <= 1e-10 && energy_drift <= 1e-9 && entropy_gap <= 1e-8 && excess <= 1e-8,
        format!(
            "norm drift {norm_drift:.1e}, <H_w> drift {energy_drift:.1e}, |S_s-S_e| {entropy_gap:.1e}, max S - ln30 {excess:.3}"
        ),
    ))
}

fn initial_entropy(runner: &mut Runner, c: &CaseResult) -> Result<f64> {
    let prepared = runner.prepare(&c.config)?;
    let (start, _) = prepared.initial_state(&c.system, &c.env)?;
    let psi = prepared.spectral.decode(&start)?;
    let rho = partial_trace(
        &psi,
        prepared.model.n_s(),
        prepared.model.n_e(),
        Subsystem::System,
    )?;
    entropy(&rho)
}

fn c5_entanglement_growth(weak: &CaseResult, strong: &CaseResult, s0: [f64; 2]) -> Result<Verdict> {
    let s_max = 30f64.ln();
    let mut ok = true;
    let mut parts = Vec::new();
    for (c, s0) in [weak, strong].into_iter().zip(s0) {
        let first = c.records[0].entropy;
        let late = mean(last_decade(&c.records).map(|r| r.entropy));
        ok &= s0 < 1e-6 && late > first && late < s_max;
        parts.push(format!(
            "{}: S(0) {s0:.1e}, S({}) {first:.1e}, late {late:.3}",
            c.label, c.records[0].t
        ));
    }
    let weak_late = mean(last_decade(&weak.records).map(|r| r.entropy));
    let strong_late = mean(last_decade(&strong.records).map(|r| r.entropy));
    ok &= strong_late > weak_late;
    Ok(Verdict::new(
        ok,
        format!("{}; ln30 {s_max:.3}", parts.join("; ")),
    ))
}

fn relative_swing(values: &[f64]) -> f64 {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (hi - lo) / mean(values.iter().copied())
}

/// Per-period statistics of the leading Schmidt states on a linear grid.
/// Returns, for each period, the relative q_rms swing of states 1 and 2 and
/// the half peak-to-peak of <q> of state 1.
fn period_stats(records: &[ObservableRecord], t0: f64) -> Vec<(f64, f64, f64, f64)> {
    let periods = ((records.last().unwrap().t - t0) / TAU).floor() as usize;
    (0..periods)
        .map(|k| {
            let window: Vec<&ObservableRecord> = records
                .iter()
                .filter(|r| r.t >= t0 + k as f64 * TAU && r.t <= t0 + (k + 1) as f64 * TAU)
                .collect();
            let rms1: Vec<f64> = window.iter().map(|r| r.packets[0].1).collect();
            let rms2: Vec<f64> = window.iter().map(|r| r.packets[1].1).collect();
            let q1: Vec<f64> = window.iter().map(|r| r.packets[0].0).collect();
            let amp = 0.5
                * (q1.iter().copied().fold(f64::NEG_INFINITY, f64::max)
                    - q1.iter().copied().fold(f64::INFINITY, f64::min));
            (
                relative_swing(&rms1),
                relative_swing(&rms2),
                amp,
                mean(rms1.iter().copied()),
            )
        })
        .collect()
}

/// Start of the saturated window, well past the entropy plateau onset of the
/// weak-coupling run.
const SATURATED_START: f64 = 2000.0;
const SATURATED_PERIODS: usize = 4;

fn c6_einselection(runner: &mut Runner) -> Result<Verdict> {
    let early = runner.run(&scenario("einselection_moments")?)?;
    let first = period_stats(&early.cases[0].records, 0.0)[0];

    let mut late = scenario("einselection_moments")?;
    late.snapshot_times.clear();
    late.grid = TimeGrid::linear(
        SATURATED_START,
        SATURATED_START + SATURATED_PERIODS as f64 * TAU,
        24 * SATURATED_PERIODS + 1,
    );
    let late = runner.run(&late)?;
    let stats = period_stats(&late.cases[0].records, SATURATED_START);
    let worst1 = stats.iter().map(|s| s.0).fold(0.0, f64::max);
    let worst2 = stats.iter().map(|s| s.1).fold(0.0, f64::max);
    let packet = stats.iter().all(|s| s.2 > s.3);
    let min_ratio = stats
        .iter()
        .map(|s| s.2 / s.3)
        .fold(f64::INFINITY, f64::min);
    Ok(Verdict::new(
        first.0 > 0.2 && worst1 < 0.1 && worst2 < 0.1 && packet,
        format!(
            "first period q_rms swing {:.2}; after saturation q_rms swing {worst1:.2} / {worst2:.2}, min |<q>| amplitude / q_rms {min_ratio:.2}",
            first.0
        ),
    ))
}

/// Settled window of the qubit runs.
const RCL_SETTLED: f64 = 1e2;

fn c7_good_measurement(runner: &mut Runner) -> Result<Verdict> {
    let s = scenario("rcl")?;
    let result = runner.run(&s)?;
    let rcl = &result.cases[0];
    let settled: Vec<&ObservableRecord> =
        rcl.records.iter().filter(|r| r.t >= RCL_SETTLED).collect();
    let p1 = mean(settled.iter().map(|r| r.p[0]));
    let p2 = mean(settled.iter().map(|r| r.p[1]));

    let prepared = runner.prepare(&rcl.config)?;
    let (start, _) = prepared.initial_state(&rcl.system, &rcl.env)?;
    let times: Vec<f64> = rcl.records.iter().map(|r| r.t).collect();
    let n_e = prepared.model.n_e();
    let s_z = |psi: &PureState| -> Result<f64> {
        let rho = partial_trace(psi, 2, n_e, Subsystem::System)?;
        Ok(0.5 * (rho.get(0, 0).re - rho.get(1, 1).re))
    };
    let sz0 = s_z(&prepared.spectral.decode(&start)?)?;
    let mut drift = 0.0f64;
    for psi in prepared.spectral.evolve_many(&start, &times)? {
        drift = drift.max((s_z(&psi)? - sz0).abs());
    }
    Ok(Verdict::new(
        (p1 - 2.0 / 3.0).abs() <= 0.05 && (p2 - 1.0 / 3.0).abs() <= 0.05 && drift <= 1e-12,
        format!("settled (t >= {RCL_SETTLED:.0e}) p = ({p1:.4}, {p2:.4}), <S_z> drift {drift:.1e}"),
    ))
}

/// Late window of the qubit runs.
const RCL_LATE: f64 = 1e3;
const SEED_PAIRS: [(u64, u64); 3] = [(1, 2), (3, 4), (5, 6)];

fn c8_rcl_env_damping(runner: &mut Runner) -> Result<Verdict> {
    let mut ok = true;
    let mut parts = Vec::new();
    for (seed_int, seed_env) in SEED_PAIRS {
        let mut rms = [0.0; 2];
        for (slot, name) in ["rcl", "rcl_env"].iter().enumerate() {
            let mut s = scenario(name)?;
            s.set_seeds(Some(seed_int), Some(seed_env));
            let result = runner.run(&s)?;
            let late = result.cases[0].records.iter().filter(|r| r.t >= RCL_LATE);
            rms[slot] = mean(late.map(|r| r.sx.expect("qubit").powi(2))).sqrt();
        }
        ok &= rms[1] < rms[0];
        parts.push(format!(
            "seeds ({seed_int},{seed_env}): {:.4} -> {:.4}",
            rms[0], rms[1]
        ));
    }
    Ok(Verdict::new(
        ok,
        format!("late rms <S_x> without -> with H_e: {}", parts.join(", ")),
    ))
}

fn c9_semicircle() -> Result<Verdict> {
    let n = 600;
    let target = 2.0 * (n as f64 / 12.0).sqrt();
    // Radius implied by the generator's off-diagonal variance 1/6.
    let fitted = 2.0 * (n as f64 / 6.0).sqrt();
    let mut radius_ok = 0;
    let mut chi_ok = 0;
    let mut edges = Vec::new();
    for seed in 1..=5 {
        let ev = eigvalsh(&random_hermitian(n, seed)?)?;
        let edge = ev[0].abs().max(ev[n - 1].abs());
        edges.push(format!("{edge:.2}"));
        if (edge / target - 1.0).abs() <= 0.1 {
            radius_ok += 1;
        }
        if semicircle_chi2(&ev, fitted, 20) < CHI2_19_P01 {
            chi_ok += 1;
        }
    }
    Ok(Verdict::new(
        radius_ok >= 4 && chi_ok >= 4,
        format!(
            "max|lambda| {} vs target {target:.2} ({radius_ok}/5 within 10%); chi2 vs semicircle radius {fitted:.2}: {chi_ok}/5 pass",
            edges.join(", ")
        ),
    ))
}

fn c10_flat_spectrum() -> Result<Verdict> {
    let sho = ShoSpace::new(30, 1.0)?;
    let ev = eigvalsh(sho.hamiltonian())?;
    let worst = ev
        .iter()
        .enumerate()
        .map(|(n, e)| (e - (n as f64 + 0.5)).abs())
        .fold(0.0, f64::max);
    Ok(Verdict::new(
        worst <= 1e-12,
        format!("max deviation {worst:.1e}"),
    ))
}

/// First grid time at which `S` reaches half its late plateau.
fn half_saturation(records: &[ObservableRecord]) -> f64 {
    let plateau = mean(last_decade(records).map(|r| r.entropy));
    records
        .iter()
        .find(|r| r.entropy >= 0.5 * plateau)
        .map_or(f64::INFINITY, |r| r.t)
}

fn c11_equilibration(runner: &mut Runner) -> Result<Verdict> {
    let mut s = scenario("equilibrium_sweep")?;
    s.cases.retain(|c| c.label.starts_with("weak"));
    let result = runner.run(&s)?;
    let mut saturated = true;
    let mut halves = Vec::new();
    for c in &result.cases {
        let max = c.records.iter().map(|r| r.entropy).fold(0.0, f64::max);
        let late = mean(last_decade(&c.records).map(|r| r.entropy));
        saturated &= late > 0.9 * max;
        halves.push((c.env_index, half_saturation(&c.records), late / max));
    }
    let n_e = result.cases[0].config.env.n_e;
    let extremal: Vec<f64> = halves
        .iter()
        .filter(|h| h.0 == 1 || h.0 == n_e)
        .map(|h| h.1)
        .collect();
    // The three sweep points nearest the middle of the spectrum.
    let mut by_centre = halves.clone();
    by_centre.sort_by_key(|h| (2 * h.0).abs_diff(n_e + 1));
    let mid: Vec<f64> = by_centre[..3].iter().map(|h| h.1).collect();
    let slower = extremal.iter().copied().fold(f64::INFINITY, f64::min)
        > mid.iter().copied().fold(0.0, f64::max);
    let table: Vec<String> = halves
        .iter()
        .map(|(i, t, r)| format!("ie{i}: t_half {t:.3}, late/max {r:.3}"))
        .collect();
    Ok(Verdict::new(saturated && slower, table.join("; ")))
}

fn c12_breakdown(runner: &mut Runner) -> Result<Verdict> {
    let report = validate_numerics(runner, &scenario("validate_numerics")?)?;
    let horizon = report.predicted_horizon;
    let Some(first) = report.first_flagged() else {
        return Ok(Verdict::new(
            false,
            format!("no flag up to t = 1e18, horizon {horizon:.2e}"),
        ));
    };
    let ratio = first.t / horizon;
    Ok(Verdict::new(
        first.t >= 1e4 && (0.1..=10.0).contains(&ratio),
        format!(
            "first flag at t = {:.2e} ({}), predicted horizon {horizon:.2e}, ratio {ratio:.2}",
            first.t,
            first.flags.join(", ")
        ),
    ))
}

fn c13_quantum_limit(runner: &mut Runner) -> Result<Verdict> {
    let mut s = scenario("quantum_limit")?;
    s.cases.retain(|c| c.label == "cat" || c.label == "n2");
    s.snapshot_times.clear();
    let result = runner.run(&s)?;
    let cat = case(&result.cases, "cat");
    let n2 = case(&result.cases, "n2");
    let s_cat = mean(last_decade(&cat.records).map(|r| r.entropy));
    let s_n2 = mean(last_decade(&n2.records).map(|r| r.entropy));
    let p1_min = n2.records.iter().map(|r| r.p[0]).fold(1.0, f64::min);
    Ok(Verdict::new(
        s_cat > s_n2 && p1_min > 0.9,
        format!("late S(cat) {s_cat:.4}, late S(n=2) {s_n2:.4}, min p1(n=2) {p1_min:.4}"),
    ))
}

/// Weak case first, so it reuses the diagonalization left by 6, 11 and 12.
fn c4_c5(runner: &mut Runner) -> (Result<Verdict>, Result<Verdict>) {
    let run = |runner: &mut Runner, label: &str| -> Result<(CaseResult, f64)> {
        let mut s = scenario("entangle_weak_strong")?;
        s.cases.retain(|c| c.label == label);
        let c = runner.run(&s)?.cases.remove(0);
        let s0 = initial_entropy(runner, &c)?;
        Ok((c, s0))
    };
    let (weak, s0_weak) = match run(runner, "weak") {
        Ok(w) => w,
        Err(e) => return (Err(Error::InvalidParameter(e.to_string())), Err(e)),
    };
    let c4 = c4_conservation(runner, &weak);
    let c5 = run(runner, "strong").and_then(|(strong, s0_strong)| {
        c5_entanglement_growth(&weak, &strong, [s0_weak, s0_strong])
    });
    (c4, c5)
}

fn report(
    id: u32,
    title: &str,
    outcome: Result<Verdict>,
    started: Instant,
    results: &mut Vec<(u32, bool, String)>,
) {
    let secs = started.elapsed().as_secs_f64();
    let (pass, detail) = match outcome {
        Ok(v) => (v.pass, v.detail),
        Err(e) => (false, format!("error: {e}")),
    };
    let tag = if pass { "PASS" } else { "FAIL" };
    let line = format!("criterion {id:>2} {tag}  {title}: {detail} [{secs:.1} s]");
    eprintln!("... criterion {id} done ({tag}, {secs:.1} s)");
    results.push((id, pass, line));
}

fn main() {
    let mut results = Vec::new();
    let mut runner = Runner::new();
    macro_rules! check {
        ($id:expr, $title:expr, $body:expr) => {{
            let started = Instant::now();
            report($id, $title, $body, started, &mut results);
        }};
    }

    check!(1, "truncation algebra", c1_truncation_algebra());
    check!(
        2,
        "decoupled periodicity",
        c2_decoupled_periodicity(&mut runner)
    );
    check!(3, "propagator oracle", c3_oracle_equivalence());
    check!(9, "semicircle", c9_semicircle());
    check!(10, "flat oscillator spectrum", c10_flat_spectrum());
    check!(
        7,
        "qubit good measurement",
        c7_good_measurement(&mut runner)
    );
    check!(8, "qubit damping by H_e", c8_rcl_env_damping(&mut runner));

    // The weak-coupling world Hamiltonian is shared by 4, 5, 6, 11 and 12;
    // the runner keeps its diagonalization until the strong case replaces it.
    check!(6, "einselection", c6_einselection(&mut runner));
    check!(11, "equilibration sweep", c11_equilibration(&mut runner));
    check!(12, "breakdown detection", c12_breakdown(&mut runner));
    let started = Instant::now();
    let (c4, c5) = c4_c5(&mut runner);
    report(4, "conservation", c4, started, &mut results);
    report(5, "entanglement growth", c5, started, &mut results);
    runner.clear();
    check!(13, "quantum limit", c13_quantum_limit(&mut runner));

    results.sort_by_key(|r| r.0);
    for (_, _, line) in &results {
        println!("{line}");
    }
    let failures = results.iter().filter(|r| !r.1).count();
    println!(
        "acceptance: {failures} of {} criteria failed",
        results.len()
    );
    if failures > 0 && std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}
