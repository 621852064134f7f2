//! Typed scenario parameters and the code that runs them.
//!
//! Every scenario produces a [`ScenarioOutput`]: summary metrics plus named
//! data files, all held in memory so the bundle writer can hash them.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use anyhow::{anyhow, bail, Context, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use nsgate::dynamics::{observable_series, population_projectors, EvolutionTrace, NoiseConfig, NoiseParams, TimeGrid};
use nsgate::gates::{
    cz_protocol, ns_protocol_dispersive, ns_protocol_pusc, ns_protocol_sc, photon_state, two_rail_space,
    DephasingMode, GateReport, NsOptions, Regime, TwoRailState,
};
use nsgate::models::{solve_dispersive, solve_pusc_k, DetuningSpec, SystemConfig, SystemParams};
use nsgate::units::{to_ghz, Frequency, Rate};
use nsgate::waveguide::{
    build_lorentzian_input, full_ns_fidelity, ideal_output, propagate_catch_release, waveform_overlap,
    BathDiscretization, ScheduleConfig, ScheduleParams, Sector, SolverMode, WaveguideOptions, WavepacketSpec,
};
use nsgate::C64;

use crate::config::{ScenarioConfig, ScenarioId};

/// Environment variable holding the sweep worker count.
pub const WORKERS_ENV: &str = "NSGATE_WORKERS";

#[derive(Debug, Clone, PartialEq)]
pub struct OutputFile {
    pub name: String,
    pub bytes: Vec<u8>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScenarioOutput {
    /// Headline numbers, also written to `summary.json`.
    pub metrics: BTreeMap<String, f64>,
    /// Extra non-numeric summary entries.
    pub details: serde_json::Map<String, serde_json::Value>,
    pub files: Vec<OutputFile>,
}

impl ScenarioOutput {
    fn metric(&mut self, name: &str, value: f64) {
        self.metrics.insert(name.to_string(), value);
    }

    fn file(&mut self, name: &str, bytes: Vec<u8>) {
        self.files.push(OutputFile { name: name.to_string(), bytes });
    }
}

// ---------------------------------------------------------------------------
// Parameter schemas

fn default_noise() -> NoiseConfig {
    NoiseConfig { kappa: Rate::per_us(0.05), gamma: Rate::per_us(0.05), gamma_phi: Rate::per_us(0.05) }
}

/// Photon-number amplitudes α₀, α₁, α₂ (normalized before use).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputConfig {
    pub re: [f64; 3],
    pub im: [f64; 3],
}

impl Default for InputConfig {
    fn default() -> Self {
        Self { re: [1.0; 3], im: [0.0; 3] }
    }
}

impl InputConfig {
    fn alphas(&self) -> Result<[C64; 3]> {
        let a = [0, 1, 2].map(|i| C64::new(self.re[i], self.im[i]));
        let n = a.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
        if !(n > 0.0) {
            bail!("input amplitudes are all zero");
        }
        Ok(a.map(|x| x / n))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NsScParams {
    pub system: SystemConfig,
    pub noise: NoiseConfig,
    pub input: InputConfig,
    /// Gate time as a multiple of π/(√2 g).
    pub gate_time_scale: f64,
    pub samples: usize,
    /// Points of the fidelity-vs-time scan around the optimum (0 skips it).
    pub scan_points: usize,
    /// Half-width of the scan as a fraction of the optimum.
    pub scan_span: f64,
}

impl Default for NsScParams {
    fn default() -> Self {
        Self {
            system: SystemParams::strong_coupling_default().into(),
            noise: default_noise(),
            input: InputConfig::default(),
            gate_time_scale: 1.0,
            samples: 200,
            scan_points: 21,
            scan_span: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NsPuscParams {
    pub k: u32,
    pub omega_r: Frequency,
    pub noise: NoiseConfig,
    pub dephasing: DephasingMode,
    pub input: InputConfig,
    pub samples: usize,
}

impl Default for NsPuscParams {
    fn default() -> Self {
        Self {
            k: 4,
            omega_r: Frequency::ghz(5.0),
            noise: default_noise(),
            dephasing: DephasingMode::Off,
            input: InputConfig::default(),
            samples: 200,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NsDispersiveParams {
    pub n: u32,
    pub detuning: DetuningSpec,
    /// Radians; π is the NS gate.
    pub target_phase: f64,
    pub omega_r: Frequency,
    pub noise: NoiseConfig,
    pub input: InputConfig,
    pub samples: usize,
}

impl Default for NsDispersiveParams {
    fn default() -> Self {
        Self {
            n: 18,
            detuning: DetuningSpec::ResonatorRatio(10.0),
            target_phase: PI,
            omega_r: Frequency::ghz(1.0),
            noise: NoiseConfig { kappa: Rate::per_us(0.01), gamma: Rate::per_us(0.01), gamma_phi: Rate::per_us(0.0) },
            input: InputConfig::default(),
            samples: 200,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegimeKind {
    Sc,
    Pusc,
    Dispersive,
    Ideal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PuscSection {
    pub k: u32,
    pub omega_r: Frequency,
    pub dephasing: DephasingMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DispersiveSection {
    pub n: u32,
    pub detuning: DetuningSpec,
    pub target_phase: f64,
    pub omega_r: Frequency,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CzParams {
    pub regime: RegimeKind,
    /// Beam-splitter angle in radians.
    pub theta: f64,
    pub noise: NoiseConfig,
    pub samples: usize,
    pub sc: SystemConfig,
    pub pusc: PuscSection,
    pub dispersive: DispersiveSection,
}

impl Default for CzParams {
    fn default() -> Self {
        let d = NsDispersiveParams::default();
        Self {
            regime: RegimeKind::Sc,
            theta: PI / 4.0 + 0.01,
            noise: default_noise(),
            samples: 50,
            sc: SystemParams::strong_coupling_default().into(),
            pusc: PuscSection { k: 4, omega_r: Frequency::ghz(5.0), dephasing: DephasingMode::Off },
            dispersive: DispersiveSection { n: d.n, detuning: d.detuning, target_phase: d.target_phase, omega_r: d.omega_r },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WaveguideSolver {
    /// Closed-system run only.
    Pure,
    DensityMatrix,
    Trajectories,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CatchReleaseParams {
    /// Bandwidth ε and center ω₀ in ns⁻¹ (angular), grid width in units of ε.
    pub packet: WavepacketSpec,
    pub schedule: ScheduleConfig,
    pub input: InputConfig,
    /// Bath modes for the closed-system run.
    pub modes: usize,
    /// Recording interval of the projection series.
    pub record_interval_ns: f64,
    pub solver: WaveguideSolver,
    /// Bath modes for density-matrix or trajectory runs.
    pub open_system_modes: usize,
    pub trajectories: usize,
    pub noise: NoiseConfig,
    pub linear_phase_correction: bool,
}

impl Default for CatchReleaseParams {
    fn default() -> Self {
        Self {
            packet: WavepacketSpec::narrow(),
            schedule: ScheduleParams::narrow().into(),
            input: InputConfig::default(),
            modes: nsgate::waveguide::REFERENCE_MODES,
            record_interval_ns: 0.5,
            solver: WaveguideSolver::Pure,
            open_system_modes: nsgate::waveguide::OPEN_SYSTEM_MODES,
            trajectories: 200,
            noise: default_noise(),
            linear_phase_correction: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepParams {
    /// Scenario run at every point; any id except `sweep`.
    pub base: ScenarioId,
    /// Dotted parameter path inside the base scenario.
    pub parameter: String,
    pub values: Vec<f64>,
    /// Overrides applied to the base scenario before sweeping.
    pub base_params: toml::Table,
}

impl Default for SweepParams {
    fn default() -> Self {
        Self {
            base: ScenarioId::NsSc,
            parameter: "noise.kappa.value".into(),
            values: vec![0.0, 0.05, 0.1, 0.2, 0.5, 1.0],
            base_params: toml::Table::new(),
        }
    }
}

// ---------------------------------------------------------------------------
// Runners

pub fn run_scenario(cfg: &ScenarioConfig) -> Result<ScenarioOutput> {
    match cfg.scenario {
        ScenarioId::NsSc => run_ns_sc(&cfg.typed()?),
        ScenarioId::NsPusc => run_ns_pusc(&cfg.typed()?),
        ScenarioId::NsDispersive => run_ns_dispersive(&cfg.typed()?),
        ScenarioId::Cz => run_cz(&cfg.typed()?),
        ScenarioId::CatchRelease => run_catch_release(&cfg.typed()?, cfg.seed),
        ScenarioId::Sweep => run_sweep(&cfg.typed()?, cfg.seed),
    }
}

fn trace_csv(trace: &EvolutionTrace) -> Result<Vec<u8>> {
    let series = observable_series(trace, &population_projectors(trace.space()))?;
    let trace = trace.clone().with_observables(series)?;
    let mut buf = Vec::new();
    trace.write_csv(&mut buf)?;
    Ok(buf)
}

fn report_output(report: &GateReport) -> Result<ScenarioOutput> {
    let mut out = ScenarioOutput::default();
    out.metric("fidelity", report.fidelity);
    out.metric("gate_time_ns", report.gate_time_ns);
    for (k, v) in &report.metrics {
        out.metric(k, *v);
    }
    out.details.insert("protocol".into(), json!(report.protocol));
    out.details.insert("params".into(), report.params.clone());
    if let Some(trace) = &report.trace {
        out.file("trace.csv", trace_csv(trace)?);
    }
    Ok(out)
}

fn ns_options(samples: usize) -> NsOptions {
    NsOptions { samples: samples.max(1), ..Default::default() }
}

fn run_ns_sc(p: &NsScParams) -> Result<ScenarioOutput> {
    let system = p.system.to_params()?;
    let noise = p.noise.to_params()?;
    let psi = photon_state(p.input.alphas()?)?;
    let t0 = system.sc_gate_time();
    let opts = NsOptions { gate_time: Some(t0 * p.gate_time_scale), ..ns_options(p.samples) };
    let report = ns_protocol_sc(&system, &noise, &psi, &opts)?;
    let mut out = report_output(&report)?;
    if p.scan_points > 0 {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["gate_time_ns", "fidelity"])?;
        let mut worst = f64::INFINITY;
        for i in 0..p.scan_points {
            let frac = if p.scan_points == 1 { 0.0 } else { -1.0 + 2.0 * i as f64 / (p.scan_points - 1) as f64 };
            let t = t0 * (1.0 + p.scan_span * frac);
            let o = NsOptions { gate_time: Some(t), samples: 1, ..Default::default() };
            let f = ns_protocol_sc(&system, &noise, &psi, &o)?.fidelity;
            worst = worst.min(f);
            w.write_record([format!("{t:.9}"), format!("{f:.12e}")])?;
        }
        out.file("fidelity_vs_time.csv", w.into_inner()?);
        out.metric("scan_min_fidelity", worst);
    }
    Ok(out)
}

fn run_ns_pusc(p: &NsPuscParams) -> Result<ScenarioOutput> {
    let bs = solve_pusc_k(p.k, p.omega_r.angular())?;
    let psi = photon_state(p.input.alphas()?)?;
    let report = ns_protocol_pusc(&bs, &p.noise.to_params()?, p.dephasing, &psi, &ns_options(p.samples))?;
    let mut out = report_output(&report)?;
    out.metric("r", bs.r);
    out.metric("omega_q_ghz", to_ghz(bs.base.omega_q));
    out.metric("g_ghz", to_ghz(bs.base.g));
    out.metric("g_over_omega_r", bs.base.g / bs.base.omega_r);
    Ok(out)
}

fn run_ns_dispersive(p: &NsDispersiveParams) -> Result<ScenarioOutput> {
    let dp = solve_dispersive(p.n, p.detuning, p.target_phase, p.omega_r.angular())?;
    let psi = photon_state(p.input.alphas()?)?;
    let report = ns_protocol_dispersive(&dp, &p.noise.to_params()?, &psi, &ns_options(p.samples))?;
    let mut out = report_output(&report)?;
    out.metric("chi_over_omega_r", dp.chi / dp.base.omega_r);
    out.metric("g_ghz", to_ghz(dp.base.g));
    out.metric("omega_q_ghz", to_ghz(dp.base.omega_q));
    Ok(out)
}

fn run_cz(p: &CzParams) -> Result<ScenarioOutput> {
    let regime = match p.regime {
        RegimeKind::Sc => Regime::StrongCoupling(p.sc.to_params()?),
        RegimeKind::Pusc => Regime::BlochSiegert {
            params: solve_pusc_k(p.pusc.k, p.pusc.omega_r.angular())?,
            dephasing: p.pusc.dephasing,
        },
        RegimeKind::Dispersive => {
            let d = &p.dispersive;
            Regime::Dispersive(solve_dispersive(d.n, d.detuning, d.target_phase, d.omega_r.angular())?)
        }
        RegimeKind::Ideal => Regime::Ideal,
    };
    let report = cz_protocol(&regime, &p.noise.to_params()?, p.theta, &TwoRailState::standard_input(), &ns_options(p.samples))?;
    let mut out = ScenarioOutput::default();
    out.metric("fidelity", report.fidelity);
    out.metric("gate_time_ns", report.gate_time_ns);
    out.metric("theta", p.theta);
    out.details.insert("protocol".into(), json!(report.protocol));
    out.details.insert("params".into(), report.params.clone());
    if let Some(rho) = &report.final_state {
        let space = two_rail_space();
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["state", "population"])?;
        for (i, p) in rho.populations().iter().enumerate() {
            w.write_record([space.label(i).to_string(), format!("{p:.12e}")])?;
        }
        out.file("output_populations.csv", w.into_inner()?);
    }
    Ok(out)
}

fn run_catch_release(p: &CatchReleaseParams, seed: u64) -> Result<ScenarioOutput> {
    let spec = WavepacketSpec::new(p.packet.epsilon, p.packet.omega0, p.packet.span_k)?;
    let sp = p.schedule.to_params();
    let schedule = sp.build()?;
    let alphas = p.input.alphas()?;
    let bath = BathDiscretization::new(&spec, p.modes)?;
    let input = build_lorentzian_input(&spec, alphas, &bath)?;
    if !(p.record_interval_ns > 0.0) {
        bail!("record_interval_ns must be positive");
    }
    let samples = (sp.t_end / p.record_interval_ns).round().max(1.0) as usize;
    let grid = TimeGrid::new(0.0, sp.t_end, samples, 1)?;
    let trace = propagate_catch_release(&input, &schedule, &grid)?;
    let reference = ideal_output(&input, &schedule, sp.t_end, false);
    let fin = trace.final_state();

    let mut out = ScenarioOutput::default();
    let pops = trace.state_at(sp.t_in).resonator_populations();
    for (n, v) in pops.iter().enumerate() {
        out.metric(&format!("resonator_population_{n}_at_t_in"), *v);
    }
    for (name, sector, alpha) in [("one_photon", Sector::One, alphas[1]), ("two_photon", Sector::Two, alphas[2])] {
        if alpha.norm() > 0.0 {
            out.metric(&format!("overlap_{name}"), waveform_overlap(fin, &reference, sector)?);
        }
    }
    out.metric("pure_state_fidelity", reference.inner(fin)?.norm_sqr());
    out.metric("max_norm_drift", trace.max_norm_drift);
    out.metric("max_sector_drift", trace.max_sector_drift.iter().cloned().fold(0.0, f64::max));
    out.metric("t_q_ns", sp.t_q());
    out.metric("modes", p.modes as f64);

    let mut buf = Vec::new();
    trace.write_projections_csv(&input, &schedule, &mut buf)?;
    out.file("projections.csv", buf);
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["time_ns", "g_wr_mhz", "g_rq_mhz"])?;
    for &t in &trace.times {
        let mhz = nsgate::units::to_mhz;
        w.write_record([format!("{t:.6}"), format!("{:.9e}", mhz(schedule.g_wr(t))), format!("{:.9e}", mhz(schedule.g_rq(t)))])?;
    }
    out.file("schedule.csv", w.into_inner()?);

    if p.solver != WaveguideSolver::Pure {
        let open_bath = BathDiscretization::new(&spec, p.open_system_modes)?;
        let open_input = build_lorentzian_input(&spec, alphas, &open_bath)?;
        let mode = match p.solver {
            WaveguideSolver::Trajectories => SolverMode::Trajectories { count: p.trajectories, seed },
            _ => SolverMode::DensityMatrix,
        };
        let opts = WaveguideOptions { mode, linear_phase_correction: p.linear_phase_correction, ..Default::default() };
        let report = full_ns_fidelity(&schedule, p.noise.to_params()?, &open_input, &opts)?;
        out.metric("fidelity", report.fidelity);
        for (k, v) in &report.metrics {
            out.metric(&format!("open_{k}"), *v);
        }
    }
    Ok(out)
}

/// Number of sweep workers from [`WORKERS_ENV`], default 1.
pub fn worker_count() -> Result<usize> {
    match std::env::var(WORKERS_ENV) {
        Ok(v) => {
            let n: usize = v.trim().parse().with_context(|| format!("{WORKERS_ENV}={v} is not a count"))?;
            Ok(n.max(1))
        }
        Err(_) => Ok(1),
    }
}

fn run_sweep(p: &SweepParams, seed: u64) -> Result<ScenarioOutput> {
    if p.base == ScenarioId::Sweep {
        bail!("a sweep cannot sweep another sweep");
    }
    if p.values.is_empty() {
        bail!("sweep needs at least one value");
    }
    let mut base = ScenarioConfig::new(p.base);
    base.seed = seed;
    for (path, v) in flatten(&p.base_params, "") {
        base.set(&format!("{path}={v}"))?;
    }
    let integer = matches!(lookup(&base.params, &p.parameter), Some(toml::Value::Integer(_)));
    let configs = p
        .values
        .iter()
        .map(|&v| {
            let mut c = base.clone();
            let text = if integer {
                if v.fract() != 0.0 {
                    bail!("{} takes integers, got {v}", p.parameter);
                }
                format!("{}", v as i64)
            } else {
                format!("{v:?}")
            };
            c.set(&format!("{}={text}", p.parameter))?;
            c.typed_check()?;
            Ok(c)
        })
        .collect::<Result<Vec<_>>>()?;

    let pool = rayon::ThreadPoolBuilder::new().num_threads(worker_count()?).build()?;
    // Indexed collect keeps parameter order whatever the completion order.
    let results: Vec<Result<ScenarioOutput>> = pool.install(|| configs.par_iter().map(run_scenario).collect());
    let results = results.into_iter().collect::<Result<Vec<_>>>()?;

    let columns: Vec<String> = results[0].metrics.keys().cloned().collect();
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec![p.parameter.clone()];
    header.extend(columns.iter().cloned());
    w.write_record(&header)?;
    for (v, r) in p.values.iter().zip(&results) {
        let mut row = vec![format!("{v}")];
        for c in &columns {
            row.push(r.metrics.get(c).map(|x| format!("{x:.12e}")).unwrap_or_default());
        }
        w.write_record(&row)?;
    }
    let mut out = ScenarioOutput::default();
    out.file("sweep.csv", w.into_inner()?);
    out.metric("points", results.len() as f64);
    if let Some(f) = results.iter().filter_map(|r| r.metrics.get("fidelity")).cloned().reduce(f64::min) {
        out.metric("min_fidelity", f);
    }
    out.details.insert("base".into(), json!(p.base.as_str()));
    out.details.insert("parameter".into(), json!(p.parameter));
    Ok(out)
}

fn flatten(t: &toml::Table, prefix: &str) -> Vec<(String, toml::Value)> {
    let mut out = Vec::new();
    for (k, v) in t {
        let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            toml::Value::Table(inner) => out.extend(flatten(inner, &path)),
            other => out.push((path, other.clone())),
        }
    }
    out
}

fn lookup<'a>(t: &'a toml::Table, path: &str) -> Option<&'a toml::Value> {
    let mut keys = path.split('.');
    let mut v = t.get(keys.next()?)?;
    for k in keys {
        v = v.as_table()?.get(k)?;
    }
    Some(v)
}

/// One row of the Bloch-Siegert parameter table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Table1Row {
    pub k: u32,
    pub r: f64,
    pub omega_q_ghz: f64,
    pub g_ghz: f64,
    pub gate_time_ns: f64,
    pub resonance_residual: f64,
    pub fidelity_dressed: f64,
    pub fidelity_dressed_sigma_z: f64,
}

pub const TABLE1_K: [u32; 5] = [4, 6, 7, 8, 9];

/// Solves every tabulated k and scores the C-Z gate at θ = π/4 + 0.01 with
/// κ = γ = γ_φ = 0.05 μs⁻¹, once without and once with σ_z dephasing.
pub fn run_table1() -> Result<(Vec<Table1Row>, ScenarioOutput)> {
    let noise: NoiseParams = default_noise().to_params()?;
    let theta = PI / 4.0 + 0.01;
    let rows = TABLE1_K
        .iter()
        .map(|&k| {
            let bs = solve_pusc_k(k, nsgate::units::ghz(5.0))?;
            let f = |dephasing| {
                cz_protocol(&Regime::BlochSiegert { params: bs, dephasing }, &noise, theta, &TwoRailState::standard_input(), &ns_options(1))
                    .map(|r| r.fidelity)
            };
            Ok(Table1Row {
                k,
                r: bs.r,
                omega_q_ghz: to_ghz(bs.base.omega_q),
                g_ghz: to_ghz(bs.base.g),
                gate_time_ns: bs.gate_time,
                resonance_residual: bs.resonance_residual() / bs.base.omega_r,
                fidelity_dressed: f(DephasingMode::Off)?,
                fidelity_dressed_sigma_z: f(DephasingMode::BareSigmaZ)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "k",
        "r",
        "omega_q_ghz",
        "g_ghz",
        "gate_time_ns",
        "resonance_residual",
        "fidelity_dressed",
        "fidelity_dressed_sigma_z",
    ])?;
    for r in &rows {
        w.write_record([
            r.k.to_string(),
            format!("{:.6}", r.r),
            format!("{:.6}", r.omega_q_ghz),
            format!("{:.6}", r.g_ghz),
            format!("{:.6}", r.gate_time_ns),
            format!("{:.3e}", r.resonance_residual),
            format!("{:.8}", r.fidelity_dressed),
            format!("{:.8}", r.fidelity_dressed_sigma_z),
        ])?;
    }
    let mut out = ScenarioOutput::default();
    out.file("table1.csv", w.into_inner()?);
    let worst = rows.iter().map(|r| r.resonance_residual.abs()).fold(0.0, f64::max);
    out.metric("max_resonance_residual", worst);
    out.details.insert("rows".into(), serde_json::to_value(&rows)?);
    Ok((rows, out))
}

impl ScenarioConfig {
    /// Schema check without running, used for sweep points.
    fn typed_check(&self) -> Result<()> {
        match self.scenario {
            ScenarioId::NsSc => self.typed::<NsScParams>().map(drop),
            ScenarioId::NsPusc => self.typed::<NsPuscParams>().map(drop),
            ScenarioId::NsDispersive => self.typed::<NsDispersiveParams>().map(drop),
            ScenarioId::Cz => self.typed::<CzParams>().map(drop),
            ScenarioId::CatchRelease => self.typed::<CatchReleaseParams>().map(drop),
            ScenarioId::Sweep => Err(crate::config::ConfigError::Schema {
                scenario: ScenarioId::Sweep,
                message: "nested sweep".into(),
            }),
        }
        .map_err(|e| anyhow!(e))
    }
}
