//! The `verify` property suite: every module invariant evaluated on a fixed,
//! deterministic sample of inputs, reported check by check.

use std::f64::consts::PI;

use anyhow::{anyhow, Result};
use serde::Serialize;
use serde_json::json;

use nsgate::dynamics::{
    dressed_lindblad_evolve, lindblad_evolve, propagate_state, Integrator, NoiseParams, TimeGrid,
};
use nsgate::gates::{
    cz_ideal_logical, cz_protocol, equal_superposition, ns_protocol_dispersive, ns_protocol_pusc,
    ns_protocol_sc, two_rail_space, BeamSplitter, DephasingMode, NsOptions, Regime, TwoRailState,
};
use nsgate::hilbert::{
    excitation_operator, fidelity, partial_trace, CMatrix, CVector, DensityMatrix, KetState,
    OperatorMatrix, Qubit, Space,
};
use nsgate::models::{
    h_2bs, h_2bs_interaction, h_2jc, h_2jc_interaction, h_2qrm, h_dispersive, pusc_resonance_lhs,
    pusc_resonance_rhs, solve_dispersive, solve_pusc_coupling, solve_pusc_k, DetuningSpec,
    SystemParams,
};
use nsgate::units::ghz;
use nsgate::waveguide::{
    build_lorentzian_input, ideal_output, propagate_catch_release, time_reversal_overlap,
    waveform_overlap, BathDiscretization, BathState, CouplerSchedule, ScheduleParams, Sector,
    Segment, Shape, WavepacketSpec,
};
use nsgate::C64;

use crate::config::{ScenarioConfig, ScenarioId};
use crate::scenarios::{run_scenario, ScenarioOutput};

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct VerifyOptions {
    /// Negative control: perturb every Hamiltonian so the Hermiticity check
    /// must fail.
    pub inject_non_hermitian: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    /// Largest violation measured (or the smallest margin quantity, see
    /// `detail`).
    pub worst: f64,
    pub tolerance: f64,
    pub detail: String,
}

struct Measured {
    worst: f64,
    tolerance: f64,
    detail: String,
}

impl Measured {
    /// Passes when `worst < tolerance`.
    fn below(worst: f64, tolerance: f64, detail: impl Into<String>) -> Self {
        Self { worst, tolerance, detail: detail.into() }
    }
}

type Check = fn(&VerifyOptions) -> Result<Measured>;

const CHECKS: &[(&str, Check)] = &[
    ("hilbert.norm_preserved", norm_preserved),
    ("hilbert.excitation_conserved", excitation_conserved),
    ("hilbert.partial_trace_of_product", partial_trace_of_product),
    ("models.hamiltonians_hermitian", hamiltonians_hermitian),
    ("models.pusc_resonance_residual", pusc_resonance_residual),
    ("models.pusc_coupling_consistent", pusc_coupling_consistent),
    ("models.bloch_siegert_spectrum", bloch_siegert_spectrum),
    ("models.dispersive_residuals", dispersive_residuals),
    ("dynamics.density_invariants", density_invariants),
    ("dynamics.jc_closed_form", jc_closed_form),
    ("dynamics.bloch_siegert_closed_form", bloch_siegert_closed_form),
    ("dynamics.dressed_matches_bare", dressed_matches_bare),
    ("gates.beam_splitter_unitary", beam_splitter_unitary),
    ("gates.beam_splitter_block_diagonal", beam_splitter_block_diagonal),
    ("gates.cz_truth_table", cz_truth_table),
    ("gates.vanishing_noise", vanishing_noise),
    ("gates.fidelity_monotone_in_rates", fidelity_monotone),
    ("waveguide.norm_conserved", waveguide_norm),
    ("waveguide.sectors_conserved", waveguide_sectors),
    ("waveguide.qubit_stays_empty", waveguide_qubit_empty),
    ("waveguide.time_reversal", waveguide_time_reversal),
    ("waveguide.discretization_converged", waveguide_convergence),
    ("cli.csv_deterministic", csv_deterministic),
];

pub fn check_names() -> Vec<&'static str> {
    CHECKS.iter().map(|(n, _)| *n).collect()
}

/// Runs the whole suite. Never stops early; a check that errors counts as
/// failed with the error as its detail.
pub fn run_property_suite(opts: &VerifyOptions) -> Vec<CheckResult> {
    CHECKS
        .iter()
        .map(|(name, check)| {
            log::info!("verify {name}");
            match check(opts) {
                Ok(m) => CheckResult {
                    name,
                    passed: m.worst < m.tolerance,
                    worst: m.worst,
                    tolerance: m.tolerance,
                    detail: m.detail,
                },
                Err(e) => CheckResult { name, passed: false, worst: f64::NAN, tolerance: f64::NAN, detail: format!("error: {e:#}") },
            }
        })
        .collect()
}

/// Report files for the bundle writer.
pub fn report(results: &[CheckResult], opts: &VerifyOptions) -> Result<ScenarioOutput> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["check", "passed", "worst", "tolerance", "detail"])?;
    for r in results {
        w.write_record([
            r.name.to_string(),
            r.passed.to_string(),
            format!("{:e}", r.worst),
            format!("{:e}", r.tolerance),
            r.detail.clone(),
        ])?;
    }
    let mut out = ScenarioOutput::default();
    out.files.push(crate::scenarios::OutputFile { name: "verify.csv".into(), bytes: w.into_inner()? });
    let failed: Vec<&str> = results.iter().filter(|r| !r.passed).map(|r| r.name).collect();
    out.metrics.insert("checks".into(), results.len() as f64);
    out.metrics.insert("failed".into(), failed.len() as f64);
    out.details.insert("failed_checks".into(), json!(failed));
    out.details.insert("inject_non_hermitian".into(), json!(opts.inject_non_hermitian));
    Ok(out)
}

// ---------------------------------------------------------------------------
// Deterministic samples

/// Golden-ratio sequence in [0, 1).
fn quasi(i: usize) -> f64 {
    (0.5 + i as f64 * 0.618_033_988_749_894_9).fract()
}

fn sample_params() -> Vec<SystemParams> {
    (0..12)
        .map(|i| {
            let wr = 1.0 + 9.0 * quasi(3 * i);
            let r = 0.5 + 2.0 * quasi(3 * i + 1);
            let g = 0.01 + 0.29 * quasi(3 * i + 2);
            SystemParams::new(wr, r * wr, g * wr).expect("sample parameters are valid")
        })
        .collect()
}

fn sample_ket(space: &Space, seed: usize) -> Result<KetState> {
    let v: Vec<C64> = (0..space.dim())
        .map(|i| C64::new(quasi(seed * 97 + 2 * i) - 0.5, quasi(seed * 97 + 2 * i + 1) - 0.5))
        .collect();
    Ok(KetState::new(space.clone(), CVector::from_vec(v))?.normalized()?)
}

fn photonic_input(space: &Space) -> Result<(KetState, [C64; 3])> {
    let a = [C64::new(0.5, 0.0), C64::new(0.5, 0.5), C64::new(0.0, -0.5)];
    let mut v = vec![C64::new(0.0, 0.0); space.dim()];
    for (n, amp) in a.iter().enumerate() {
        v[space.index_of(&[n], &[Qubit::G]).ok_or_else(|| anyhow!("missing basis state"))?] = *amp;
    }
    Ok((KetState::new(space.clone(), CVector::from_vec(v))?, a))
}

fn inject(h: OperatorMatrix, opts: &VerifyOptions) -> Result<OperatorMatrix> {
    if !opts.inject_non_hermitian {
        return Ok(h);
    }
    let mut m = h.matrix().clone();
    m[(0, 1)] += C64::new(1e-3, 0.0);
    Ok(OperatorMatrix::new(h.space().clone(), m)?)
}

// ---------------------------------------------------------------------------
// hilbert

fn norm_preserved(_: &VerifyOptions) -> Result<Measured> {
    let space = Space::mode_qubit(5);
    let mut worst: f64 = 0.0;
    for (i, p) in sample_params().iter().enumerate().take(6) {
        let psi = sample_ket(&space, i)?;
        let h = h_2qrm(p, &space)?;
        let trace = propagate_state(&h, &psi, &TimeGrid::new(0.0, 2.0 * PI / p.g, 1000, 10)?)?;
        let steps = trace.observable("steps").ok_or_else(|| anyhow!("trace has no step count"))?;
        for (s, &n) in trace.kets().unwrap_or_default().iter().zip(steps) {
            worst = worst.max((s.norm() - 1.0).abs() / (n / 1000.0).max(1.0));
        }
    }
    Ok(Measured::below(worst, 1e-9, "max |‖ψ‖−1| per 1000 RK4 steps"))
}

fn excitation_conserved(_: &VerifyOptions) -> Result<Measured> {
    // h_2qrm is excluded: its counter-rotating terms change the excitation
    // number by construction.
    let space = Space::mode_qubit(3);
    let exc = excitation_operator(&space)?;
    let fine = Integrator { step_tolerance: Some(1e-11), ..Default::default() };
    let mut worst: f64 = 0.0;
    let bs = solve_pusc_k(4, ghz(5.0))?;
    let dp = solve_dispersive(3, DetuningSpec::ResonatorRatio(10.0), PI, ghz(1.0))?;
    for (i, p) in sample_params().iter().enumerate().take(3) {
        let psi = sample_ket(&space, i)?;
        let n0 = psi.expectation(&exc)?.re;
        let t_end = 2.0 * PI / (2f64.sqrt() * p.g.max(0.05 * p.omega_r));
        let grid = TimeGrid::sampled(t_end, 8)?;
        for h in [h_2jc(p, &space)?, h_2jc_interaction(p, &space, 0.0)?, h_2bs(&bs.base, &space)?] {
            for s in fine.propagate_state(&h, &psi, &grid)?.kets().unwrap_or_default() {
                worst = worst.max((s.expectation(&exc)?.re - n0).abs());
            }
        }
    }
    let psi = sample_ket(&space, 9)?;
    let n0 = psi.expectation(&exc)?.re;
    for h in [h_2bs_interaction(&bs, &space)?, h_dispersive(&dp, &space)?] {
        let grid = TimeGrid::sampled(bs.t_osc.min(dp.gate_time), 8)?;
        for s in fine.propagate_state(&h, &psi, &grid)?.kets().unwrap_or_default() {
            worst = worst.max((s.expectation(&exc)?.re - n0).abs());
        }
    }
    Ok(Measured::below(worst, 1e-8, "max drift of ⟨a†a + 2σ₊σ₋⟩, RWA and dispersive builders"))
}

fn partial_trace_of_product(_: &VerifyOptions) -> Result<Measured> {
    let density = |dim: usize, seed: usize| {
        let v: Vec<C64> = (0..dim * dim).map(|i| C64::new(quasi(seed + 2 * i) - 0.5, quasi(seed + 2 * i + 1) - 0.5)).collect();
        let a = CMatrix::from_vec(dim, dim, v);
        let m = &a * a.adjoint();
        let tr = m.trace();
        m / tr
    };
    let space = Space::new(vec![2], 1)?;
    let mut worst: f64 = 0.0;
    for seed in 0..10 {
        let (a, b) = (density(3, 31 * seed), density(2, 31 * seed + 17));
        let rho = DensityMatrix::new(space.clone(), a.kronecker(&b))?;
        worst = worst.max((partial_trace(&rho, &[0])?.matrix() - &a).norm());
        worst = worst.max((partial_trace(&rho, &[1])?.matrix() - &b).norm());
    }
    Ok(Measured::below(worst, 1e-12, "Frobenius error of recovered factors"))
}

// ---------------------------------------------------------------------------
// models

fn hamiltonians_hermitian(opts: &VerifyOptions) -> Result<Measured> {
    let space = Space::mode_qubit(6);
    let mut worst: f64 = 0.0;
    let mut name = "";
    let mut record = |label: &'static str, h: OperatorMatrix| -> Result<()> {
        let d = inject(h, opts)?.hermitian_deviation();
        if d > worst {
            worst = d;
            name = label;
        }
        Ok(())
    };
    for p in sample_params() {
        record("h_2jc", h_2jc(&p, &space)?)?;
        record("h_2jc_interaction", h_2jc_interaction(&p, &space, 1.3)?)?;
        record("h_2qrm", h_2qrm(&p, &space)?)?;
        record("h_2bs", h_2bs(&p, &space)?)?;
    }
    for k in [4, 7, 9] {
        record("h_2bs_interaction", h_2bs_interaction(&solve_pusc_k(k, ghz(5.0))?, &space)?)?;
    }
    record("h_dispersive", h_dispersive(&solve_dispersive(18, DetuningSpec::ResonatorRatio(10.0), PI, ghz(1.0))?, &space)?)?;
    let detail = if name.is_empty() { "‖H−H†‖ over all builders".to_string() } else { format!("‖H−H†‖, worst builder {name}") };
    Ok(Measured::below(worst, 1e-12, detail))
}

const PUSC_K: [u32; 8] = [4, 6, 7, 8, 9, 10, 11, 12];

fn pusc_resonance_residual(_: &VerifyOptions) -> Result<Measured> {
    let mut worst: f64 = 0.0;
    for k in PUSC_K {
        let bs = solve_pusc_k(k, ghz(5.0))?;
        worst = worst.max((pusc_resonance_rhs(bs.r) - pusc_resonance_lhs(k)).abs());
        worst = worst.max(bs.resonance_residual().abs() / bs.base.omega_r);
    }
    Ok(Measured::below(worst, 1e-9, "resonance condition residual, k = 4, 6..12"))
}

fn pusc_coupling_consistent(_: &VerifyOptions) -> Result<Measured> {
    let mut worst: f64 = 0.0;
    for k in PUSC_K {
        let bs = solve_pusc_k(k, ghz(5.0))?;
        let g = solve_pusc_coupling(bs.r)? * bs.base.omega_r;
        worst = worst.max((g - bs.base.g).abs() / bs.base.omega_r);
    }
    Ok(Measured::below(worst, 1e-9, "|g(r) − g stored| / ω_r"))
}

fn bloch_siegert_spectrum(_: &VerifyOptions) -> Result<Measured> {
    let space = Space::mode_qubit(20);
    let wr = ghz(5.0);
    let sorted = |h: OperatorMatrix| -> Result<Vec<f64>> {
        let mut e = h.eigenvalues()?;
        e.sort_by(|a, b| a.total_cmp(b));
        Ok(e)
    };
    let mut worst: f64 = 0.0;
    for r in [1.870, 1.742] {
        for ratio in [0.05, 0.1] {
            let p = SystemParams::new(wr, r * wr, ratio * wr)?;
            let qrm = sorted(h_2qrm(&p, &space)?)?;
            let bs = sorted(h_2bs(&p, &space)?)?;
            for i in 0..4 {
                worst = worst.max((qrm[i] - bs[i]).abs() / qrm[i].abs());
            }
        }
    }
    Ok(Measured::below(worst, 1e-3, "relative error of the 4 lowest levels, cutoff 20, g/ω_r ≤ 0.1"))
}

fn dispersive_residuals(_: &VerifyOptions) -> Result<Measured> {
    let mut worst: f64 = 0.0;
    let mut solved = 0;
    for n in [1u32, 3, 7, 18, 30] {
        for phase in [PI / 2.0, PI, 1.5 * PI] {
            for ratio in [5.0, 10.0, 20.0] {
                let Ok(dp) = solve_dispersive(n, DetuningSpec::ResonatorRatio(ratio), phase, ghz(1.0)) else { continue };
                solved += 1;
                let lin = dp.linear_phase_residual().rem_euclid(2.0 * PI);
                let non = dp.nonlinear_phase_residual().rem_euclid(2.0 * PI);
                worst = worst.max(lin.min(2.0 * PI - lin)).max(non.min(2.0 * PI - non));
            }
        }
    }
    if solved == 0 {
        return Err(anyhow!("no dispersive sample was feasible"));
    }
    Ok(Measured::below(worst, 1e-12, format!("phase-condition residuals over {solved} solutions")))
}

// ---------------------------------------------------------------------------
// dynamics

fn density_invariants(_: &VerifyOptions) -> Result<Measured> {
    let p = SystemParams::strong_coupling_default();
    let space = Space::mode_qubit(3);
    let h = h_2jc_interaction(&p, &space, 0.0)?;
    let (psi, _) = photonic_input(&space)?;
    let noise = NoiseParams::per_us(5.0, 5.0, 5.0)?;
    let trace = lindblad_evolve(&h, &noise, &psi.to_density(), &TimeGrid::sampled(p.sc_gate_time(), 50)?)?;
    // Each violation in units of its own tolerance.
    let mut worst: f64 = 0.0;
    for rho in trace.densities().unwrap_or_default() {
        worst = worst.max((rho.trace() - C64::new(1.0, 0.0)).norm() / 1e-9);
        worst = worst.max(rho.hermitian_deviation() / 1e-9);
        worst = worst.max(-rho.min_eigenvalue() / 1e-7);
    }
    Ok(Measured::below(worst, 1.0, "trace (1e-9), Hermiticity (1e-9), λ_min (−1e-7) in tolerance units"))
}

fn jc_closed_form(_: &VerifyOptions) -> Result<Measured> {
    let p = SystemParams::strong_coupling_default();
    let space = Space::mode_qubit(3);
    let h = h_2jc_interaction(&p, &space, 0.0)?;
    let (psi0, a) = photonic_input(&space)?;
    let trace = propagate_state(&h, &psi0, &TimeGrid::sampled(2.0 * PI / p.g, 400)?)?;
    let mut worst: f64 = 0.0;
    for (t, s) in trace.times.iter().zip(trace.kets().unwrap_or_default()) {
        let w = 2f64.sqrt() * p.g * t;
        let expect = [a[0], a[1], a[2] * w.cos(), a[2] * C64::new(0.0, -w.sin())];
        worst = worst.max(closed_form_error(&space, s, &expect)?);
    }
    Ok(Measured::below(worst, 1e-7, "max amplitude error on [0, 2π/g]"))
}

fn bloch_siegert_closed_form(_: &VerifyOptions) -> Result<Measured> {
    let space = Space::mode_qubit(3);
    let (psi0, a) = photonic_input(&space)?;
    let mut worst: f64 = 0.0;
    for k in [4, 7] {
        let bs = solve_pusc_k(k, ghz(5.0))?;
        let h = h_2bs_interaction(&bs, &space)?;
        let trace = propagate_state(&h, &psi0, &TimeGrid::sampled(bs.t_osc, 200)?)?;
        let (b, g) = (bs.b, bs.base.g);
        let om = (b * b + 8.0 * g * g).sqrt();
        for (t, s) in trace.times.iter().zip(trace.kets().unwrap_or_default()) {
            let (sn, cs) = (0.5 * om * t).sin_cos();
            let outer = C64::from_polar(1.0, -b * t / 2.0);
            let expect = [
                a[0],
                a[1] * C64::from_polar(1.0, -b * t / 3.0),
                a[2] * outer * C64::new(cs, -b * sn / om),
                a[2] * outer * C64::new(0.0, -2.0 * 2f64.sqrt() * g * sn / om),
            ];
            worst = worst.max(closed_form_error(&space, s, &expect)?);
        }
    }
    Ok(Measured::below(worst, 1e-7, "max amplitude error over one oscillation, k = 4, 7"))
}

/// Error against expected amplitudes on |0g⟩, |1g⟩, |2g⟩, |0e⟩ (zero elsewhere).
fn closed_form_error(space: &Space, s: &KetState, expect: &[C64; 4]) -> Result<f64> {
    let idx = |n: usize, q: Qubit| space.index_of(&[n], &[q]).ok_or_else(|| anyhow!("missing basis state"));
    let slots = [idx(0, Qubit::G)?, idx(1, Qubit::G)?, idx(2, Qubit::G)?, idx(0, Qubit::E)?];
    let mut worst: f64 = 0.0;
    for i in 0..space.dim() {
        let e = slots.iter().position(|&k| k == i).map(|j| expect[j]).unwrap_or_default();
        worst = worst.max((s.amplitude(i) - e).norm());
    }
    Ok(worst)
}

fn dressed_matches_bare(_: &VerifyOptions) -> Result<Measured> {
    let wr = ghz(5.0);
    let space = Space::mode_qubit(3);
    let (psi0, _) = photonic_input(&space)?;
    let p = SystemParams::new(wr, 2.0 * wr, 0.05 * wr)?;
    let h = h_2qrm(&p, &space)?;
    let grid = TimeGrid::endpoint(PI / (2f64.sqrt() * p.g))?;
    let target = propagate_state(&h, &psi0, &grid)?.final_ket().cloned().ok_or_else(|| anyhow!("empty trace"))?;
    let noise = NoiseParams::per_us(0.05, 0.05, 0.0)?;
    let rho0 = psi0.to_density();
    let bare = lindblad_evolve(&h, &noise, &rho0, &grid)?.final_density();
    let dressed = dressed_lindblad_evolve(&h, &p, noise.kappa, noise.gamma, None, &rho0, &grid)?.final_density();
    let d = (fidelity(&bare, &target)? - fidelity(&dressed, &target)?).abs();
    Ok(Measured::below(d, 1e-4, "|F_bare − F_dressed| at g/ω_r = 0.05"))
}

// ---------------------------------------------------------------------------
// gates

fn beam_splitter_unitary(_: &VerifyOptions) -> Result<Measured> {
    let id = CMatrix::identity(9, 9);
    let mut worst: f64 = 0.0;
    for i in 0..1000 {
        let u = BeamSplitter::new(4.0 * PI * (quasi(i) - 0.5)).two_mode_unitary();
        worst = worst.max(max_abs(&(u.adjoint() * &u - &id)));
    }
    Ok(Measured::below(worst, 1e-12, "max |U†U − 1| over 1000 angles"))
}

fn max_abs(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

fn beam_splitter_block_diagonal(_: &VerifyOptions) -> Result<Measured> {
    let space = two_rail_space();
    let count = |i: usize| space.label(i).photons.iter().sum::<usize>();
    let mut worst: f64 = 0.0;
    for i in 0..100 {
        let u = BeamSplitter::new(2.0 * PI * quasi(i)).two_mode_unitary();
        for r in 0..9 {
            for c in 0..9 {
                if count(r) != count(c) {
                    worst = worst.max(u[(r, c)].norm());
                }
            }
        }
    }
    Ok(Measured::below(worst, 1e-12, "largest element between photon-number blocks"))
}

fn cz_truth_table(_: &VerifyOptions) -> Result<Measured> {
    let m = cz_ideal_logical(PI / 4.0);
    let mut want = CMatrix::identity(4, 4);
    want[(3, 3)] = C64::new(-1.0, 0.0);
    Ok(Measured::below(max_abs(&(m - want)), 1e-12, "ideal-NS logical matrix vs diag(1,1,1,−1)"))
}

fn vanishing_noise(_: &VerifyOptions) -> Result<Measured> {
    let noise = NoiseParams::per_us(1e-6, 1e-6, 1e-6)?;
    let psi = equal_superposition();
    let opts = NsOptions { samples: 1, ..Default::default() };
    let p = SystemParams::strong_coupling_default();
    let bs = solve_pusc_k(4, ghz(5.0))?;
    let dp = solve_dispersive(18, DetuningSpec::ResonatorRatio(10.0), PI, ghz(1.0))?;
    let f = [
        ns_protocol_sc(&p, &noise, &psi, &opts)?.fidelity,
        ns_protocol_pusc(&bs, &noise, DephasingMode::Off, &psi, &opts)?.fidelity,
        ns_protocol_pusc(&bs, &noise, DephasingMode::BareSigmaZ, &psi, &opts)?.fidelity,
        ns_protocol_dispersive(&dp, &noise, &psi, &opts)?.fidelity,
        cz_protocol(&Regime::Ideal, &noise, PI / 4.0, &TwoRailState::standard_input(), &opts)?.fidelity,
    ];
    let worst = f.iter().map(|x| 1.0 - x).fold(0.0, f64::max);
    Ok(Measured::below(worst, 1e-5, "1 − F at 1e-6 μs⁻¹, every regime"))
}

fn fidelity_monotone(_: &VerifyOptions) -> Result<Measured> {
    let p = SystemParams::strong_coupling_default();
    let psi = equal_superposition();
    let opts = NsOptions { samples: 1, ..Default::default() };
    let grid = [0.0, 0.05, 0.1, 0.2, 0.5];
    let base = 0.05;
    let mut worst = f64::NEG_INFINITY;
    for which in 0..3 {
        let mut prev = f64::INFINITY;
        for &x in &grid {
            let mut r = [base; 3];
            r[which] = x;
            let f = ns_protocol_sc(&p, &NoiseParams::per_us(r[0], r[1], r[2])?, &psi, &opts)?.fidelity;
            worst = worst.max(f - prev);
            prev = f;
        }
    }
    // Non-increasing: every step must have F_next − F_prev ≤ 0.
    Ok(Measured::below(worst, 1e-12, "largest fidelity increase along κ, γ, γ_φ grids"))
}

// ---------------------------------------------------------------------------
// waveguide

fn narrow_input(n: usize) -> Result<(BathState, CouplerSchedule, ScheduleParams)> {
    let spec = WavepacketSpec::narrow();
    let p = ScheduleParams::narrow();
    let bath = BathDiscretization::new(&spec, n)?;
    let third = [C64::new(1.0 / 3f64.sqrt(), 0.0); 3];
    Ok((build_lorentzian_input(&spec, third, &bath)?, p.build()?, p))
}

fn waveguide_norm(_: &VerifyOptions) -> Result<Measured> {
    let (input, sched, p) = narrow_input(nsgate::waveguide::REFERENCE_MODES)?;
    let trace = propagate_catch_release(&input, &sched, &TimeGrid::sampled(p.t_end, 20)?)?;
    Ok(Measured::below(trace.max_norm_drift, 1e-8, format!("closed catch/release over {} ns, N = 100", p.t_end)))
}

fn random_bath_state(bath: &BathDiscretization, seed: usize, qubit_empty: bool) -> Result<BathState> {
    let mut amps: Vec<C64> =
        (0..bath.dim()).map(|i| C64::new(quasi(seed + 2 * i) - 0.5, quasi(seed + 2 * i + 1) - 0.5)).collect();
    if qubit_empty {
        amps[bath.e()] = C64::new(0.0, 0.0);
    }
    let norm = amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
    amps.iter_mut().for_each(|a| *a /= norm);
    Ok(BathState::from_amplitudes(bath, amps)?)
}

fn small_schedule(g_wr: f64, peak: Option<f64>) -> Result<CouplerSchedule> {
    let seg = vec![
        Segment::new(0.0, 2.0, Shape::Exponential { amplitude: g_wr, rate: 0.3 }),
        Segment::new(2.0, 6.0, Shape::Constant { value: 0.5 * g_wr }),
    ];
    let tri = peak.map(|p| nsgate::waveguide::Triangle::new(2.0, p)).transpose()?;
    Ok(CouplerSchedule::new(seg, tri)?)
}

fn waveguide_sectors(_: &VerifyOptions) -> Result<Measured> {
    let mut worst: f64 = 0.0;
    for (i, n) in [3usize, 5, 8].into_iter().enumerate() {
        let bath = BathDiscretization::new(&WavepacketSpec::wide(), n)?;
        let state = random_bath_state(&bath, 41 * i, false)?;
        let sched = small_schedule(0.05 + 0.05 * i as f64, Some(3.0 + i as f64))?;
        let trace = propagate_catch_release(&state, &sched, &TimeGrid::sampled(sched.t_end(), 6)?)?;
        worst = worst.max(trace.max_sector_drift.iter().cloned().fold(0.0, f64::max));
    }
    Ok(Measured::below(worst, 1e-8, "largest change of any excitation-sector norm"))
}

fn waveguide_qubit_empty(_: &VerifyOptions) -> Result<Measured> {
    let mut worst: f64 = 0.0;
    for (i, n) in [3usize, 6].into_iter().enumerate() {
        let bath = BathDiscretization::new(&WavepacketSpec::narrow(), n)?;
        let state = random_bath_state(&bath, 13 * i + 5, true)?;
        let sched = small_schedule(0.1, None)?;
        let trace = propagate_catch_release(&state, &sched, &TimeGrid::sampled(sched.t_end(), 6)?)?;
        for s in &trace.states {
            worst = worst.max(s.qubit_excited().norm());
        }
    }
    // Identically zero, so any nonzero amplitude fails.
    Ok(Measured::below(worst, f64::MIN_POSITIVE, "|⟨e|ψ⟩| with g_rq ≡ 0"))
}

fn waveguide_time_reversal(_: &VerifyOptions) -> Result<Measured> {
    let spec = WavepacketSpec::narrow();
    let p = ScheduleParams::narrow();
    let bath = BathDiscretization::new(&spec, nsgate::waveguide::REFERENCE_MODES)?;
    let ov = time_reversal_overlap(&spec, &bath, p.catch_amplitude, p.catch_rate, 200.0)?;
    Ok(Measured::below(0.99 - ov, f64::EPSILON, format!("mirrored release overlap {ov:.5} (needs ≥ 0.99)")))
}

fn waveguide_convergence(_: &VerifyOptions) -> Result<Measured> {
    let overlap = |n: usize| -> Result<f64> {
        let (input, sched, p) = narrow_input(n)?;
        let trace = propagate_catch_release(&input, &sched, &TimeGrid::endpoint(p.t_end)?)?;
        let reference = ideal_output(&input, &sched, p.t_end, false);
        Ok(waveform_overlap(trace.final_state(), &reference, Sector::One)?)
    };
    let (a, b) = (overlap(50)?, overlap(100)?);
    let rel = (a - b).abs() / b;
    Ok(Measured::below(rel, 2e-3, format!("single-photon overlap N = 50: {a:.5}, N = 100: {b:.5}")))
}

// ---------------------------------------------------------------------------
// cli

fn csv_deterministic(_: &VerifyOptions) -> Result<Measured> {
    let mut cfg = ScenarioConfig::new(ScenarioId::NsSc);
    cfg.set("scan_points=5")?;
    let a = run_scenario(&cfg)?;
    let b = run_scenario(&cfg)?;
    let csv_files = |o: &ScenarioOutput| -> Vec<(String, Vec<u8>)> {
        o.files.iter().filter(|f| f.name.ends_with(".csv")).map(|f| (f.name.clone(), f.bytes.clone())).collect()
    };
    let differing = csv_files(&a).iter().zip(csv_files(&b)).filter(|(x, y)| **x != *y).count();
    Ok(Measured::below(differing as f64, 0.5, "CSV files differing between two identical runs"))
}
