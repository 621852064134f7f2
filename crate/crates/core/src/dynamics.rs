//! Closed and open-system propagation.
//!
//! Everything runs on a fixed-step fourth-order Runge-Kutta integrator. The
//! step is bounded by `2π/(steps_per_period · ω_max)` and by the grid spacing,
//! and a step-doubling estimate refines it until the per-step error is below
//! `step_tolerance`.
//!
//! Master equations use D[L]ρ = LρL† − ½{L†L, ρ}, with each channel stored as
//! a sparse operator already scaled by √rate.

use std::f64::consts::PI;
use std::io::Write;

use log::debug;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hilbert::{
    ladder_ops, qubit_op, CMatrix, DensityMatrix, KetState, OperatorMatrix, QubitOp, Space,
};
use crate::models::SystemParams;
use crate::units::Rate;
use crate::C64;

/// Decoherence rates in ns⁻¹.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct NoiseParams {
    pub kappa: f64,
    pub gamma: f64,
    pub gamma_phi: f64,
}

impl NoiseParams {
    pub fn new(kappa: f64, gamma: f64, gamma_phi: f64) -> Result<Self> {
        for (name, v) in [("kappa", kappa), ("gamma", gamma), ("gamma_phi", gamma_phi)] {
            if !(v >= 0.0) {
                return Err(Error::NegativeRate(name));
            }
        }
        Ok(Self { kappa, gamma, gamma_phi })
    }

    /// Rates given in μs⁻¹.
    pub fn per_us(kappa: f64, gamma: f64, gamma_phi: f64) -> Result<Self> {
        Self::new(kappa * 1e-3, gamma * 1e-3, gamma_phi * 1e-3)
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn with_kappa(self, kappa: f64) -> Self {
        Self { kappa, ..self }
    }

    pub fn with_gamma(self, gamma: f64) -> Self {
        Self { gamma, ..self }
    }

    pub fn with_gamma_phi(self, gamma_phi: f64) -> Self {
        Self { gamma_phi, ..self }
    }
}

/// [`NoiseParams`] as written in config files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    pub kappa: Rate,
    pub gamma: Rate,
    pub gamma_phi: Rate,
}

impl NoiseConfig {
    pub fn to_params(&self) -> Result<NoiseParams> {
        NoiseParams::new(self.kappa.per_ns(), self.gamma.per_ns(), self.gamma_phi.per_ns())
    }
}

impl From<NoiseParams> for NoiseConfig {
    fn from(n: NoiseParams) -> Self {
        Self {
            kappa: Rate::per_us(n.kappa * 1e3),
            gamma: Rate::per_us(n.gamma * 1e3),
            gamma_phi: Rate::per_us(n.gamma_phi * 1e3),
        }
    }
}

/// Uniform time grid. States are recorded every `sample_stride` grid points
/// and always at `t_end`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub t_start: f64,
    pub t_end: f64,
    pub steps: usize,
    pub sample_stride: usize,
}

impl TimeGrid {
    pub fn new(t_start: f64, t_end: f64, steps: usize, sample_stride: usize) -> Result<Self> {
        if !(t_end > t_start) || !t_start.is_finite() || !t_end.is_finite() {
            return Err(Error::InvalidGrid(format!("t_end {t_end} must exceed t_start {t_start}")));
        }
        if steps == 0 || sample_stride == 0 {
            return Err(Error::InvalidGrid("steps and sample_stride must be at least 1".into()));
        }
        Ok(Self { t_start, t_end, steps, sample_stride })
    }

    /// `[0, t_end]` recording only the end point.
    pub fn endpoint(t_end: f64) -> Result<Self> {
        Self::new(0.0, t_end, 1, 1)
    }

    /// `[0, t_end]` with `samples` intervals, recording every point.
    pub fn sampled(t_end: f64, samples: usize) -> Result<Self> {
        Self::new(0.0, t_end, samples, 1)
    }

    pub fn dt(&self) -> f64 {
        (self.t_end - self.t_start) / self.steps as f64
    }

    pub fn time(&self, i: usize) -> f64 {
        if i == self.steps {
            self.t_end
        } else {
            self.t_start + i as f64 * self.dt()
        }
    }

    fn is_sample(&self, i: usize) -> bool {
        i % self.sample_stride == 0 || i == self.steps
    }

    /// Recorded times.
    pub fn sample_times(&self) -> Vec<f64> {
        (0..=self.steps).filter(|&i| self.is_sample(i)).map(|i| self.time(i)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TraceStates {
    Kets(Vec<KetState>),
    Densities(Vec<DensityMatrix>),
}

impl TraceStates {
    pub fn len(&self) -> usize {
        match self {
            TraceStates::Kets(v) => v.len(),
            TraceStates::Densities(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Recorded states plus named observable series, one value per time.
#[derive(Debug, Clone, PartialEq)]
pub struct EvolutionTrace {
    pub times: Vec<f64>,
    pub states: TraceStates,
    pub observables: Vec<(String, Vec<f64>)>,
}

impl EvolutionTrace {
    pub fn space(&self) -> &Space {
        match &self.states {
            TraceStates::Kets(v) => v[0].space(),
            TraceStates::Densities(v) => v[0].space(),
        }
    }

    /// Final state as a density matrix.
    pub fn final_density(&self) -> DensityMatrix {
        match &self.states {
            TraceStates::Kets(v) => v.last().expect("trace is never empty").to_density(),
            TraceStates::Densities(v) => v.last().expect("trace is never empty").clone(),
        }
    }

    pub fn final_ket(&self) -> Option<&KetState> {
        match &self.states {
            TraceStates::Kets(v) => v.last(),
            TraceStates::Densities(_) => None,
        }
    }

    pub fn kets(&self) -> Option<&[KetState]> {
        match &self.states {
            TraceStates::Kets(v) => Some(v),
            TraceStates::Densities(_) => None,
        }
    }

    pub fn densities(&self) -> Option<&[DensityMatrix]> {
        match &self.states {
            TraceStates::Densities(v) => Some(v),
            TraceStates::Kets(_) => None,
        }
    }

    pub fn observable(&self, name: &str) -> Option<&[f64]> {
        self.observables.iter().find(|(n, _)| n == name).map(|(_, v)| v.as_slice())
    }

    /// Appends series computed by [`observable_series`].
    pub fn with_observables(mut self, series: Vec<(String, Vec<f64>)>) -> Result<Self> {
        for (name, values) in series {
            if values.len() != self.times.len() {
                return Err(Error::SpaceMismatch(format!(
                    "series {name} has {} values for {} times",
                    values.len(),
                    self.times.len()
                )));
            }
            self.observables.push((name, values));
        }
        Ok(self)
    }

    /// CSV with a `time_ns` column followed by one column per observable.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let io = |e: csv::Error| Error::InvalidInput(format!("csv output failed: {e}"));
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["time_ns".to_string()];
        header.extend(self.observables.iter().map(|(n, _)| n.clone()));
        w.write_record(&header).map_err(io)?;
        for (i, t) in self.times.iter().enumerate() {
            let mut row = vec![format!("{t:.9}")];
            row.extend(self.observables.iter().map(|(_, v)| format!("{:.12e}", v[i])));
            w.write_record(&row).map_err(io)?;
        }
        w.flush().map_err(|e| Error::InvalidInput(format!("csv output failed: {e}")))?;
        Ok(())
    }
}

/// A Hamiltonian that may depend on time.
pub trait Hamiltonian: Sync {
    fn space(&self) -> &Space;
    fn at(&self, t: f64) -> Result<OperatorMatrix>;
    fn is_time_independent(&self) -> bool {
        false
    }
}

impl Hamiltonian for OperatorMatrix {
    fn space(&self) -> &Space {
        OperatorMatrix::space(self)
    }

    fn at(&self, _t: f64) -> Result<OperatorMatrix> {
        Ok(self.clone())
    }

    fn is_time_independent(&self) -> bool {
        true
    }
}

type Builder = dyn Fn(f64) -> Result<OperatorMatrix> + Send + Sync;

/// A Hamiltonian given by a builder closure.
pub struct TimeDependent {
    space: Space,
    builder: Box<Builder>,
}

impl TimeDependent {
    pub fn new(
        space: Space,
        builder: impl Fn(f64) -> Result<OperatorMatrix> + Send + Sync + 'static,
    ) -> Self {
        Self { space, builder: Box::new(builder) }
    }
}

impl Hamiltonian for TimeDependent {
    fn space(&self) -> &Space {
        &self.space
    }

    fn at(&self, t: f64) -> Result<OperatorMatrix> {
        let h = (self.builder)(t)?;
        if h.space() != &self.space {
            return Err(Error::SpaceMismatch("builder returned an operator on another space".into()));
        }
        Ok(h)
    }
}

fn require_hermitian(h: &OperatorMatrix, t: f64) -> Result<()> {
    if !h.is_hermitian() {
        return Err(Error::NonHermitian {
            deviation: h.hermitian_deviation(),
            context: format!(" at t = {t} ns"),
        });
    }
    Ok(())
}

/// Sparse operator as (row, col, value) triplets.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseOp {
    dim: usize,
    entries: Vec<(usize, usize, C64)>,
}

impl SparseOp {
    pub fn from_dense(m: &CMatrix) -> Self {
        let mut entries = Vec::new();
        for j in 0..m.ncols() {
            for i in 0..m.nrows() {
                let v = m[(i, j)];
                if v.norm() > 0.0 {
                    entries.push((i, j, v));
                }
            }
        }
        Self { dim: m.nrows(), entries }
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn to_dense(&self) -> CMatrix {
        let mut m = CMatrix::zeros(self.dim, self.dim);
        for &(i, j, v) in &self.entries {
            m[(i, j)] += v;
        }
        m
    }

    /// self · m for a dense right-hand side.
    pub fn mul_dense(&self, m: &CMatrix) -> CMatrix {
        let mut out = CMatrix::zeros(self.dim, m.ncols());
        for &(i, k, v) in &self.entries {
            for j in 0..m.ncols() {
                out[(i, j)] += v * m[(k, j)];
            }
        }
        out
    }

    fn scaled(&self, factor: f64) -> Self {
        Self {
            dim: self.dim,
            entries: self.entries.iter().map(|&(i, j, v)| (i, j, v * factor)).collect(),
        }
    }

    /// out += L ρ L†
    fn add_sandwich(&self, rho: &CMatrix, out: &mut CMatrix) {
        for &(ra, ca, va) in &self.entries {
            for &(rb, cb, vb) in &self.entries {
                out[(ra, rb)] += va * vb.conj() * rho[(ca, cb)];
            }
        }
    }
}

/// A collapse channel: operator `L` and rate, entering as D[√rate · L].
#[derive(Debug, Clone, PartialEq)]
pub struct Channel {
    pub label: String,
    pub rate: f64,
    pub operator: CMatrix,
}

impl Channel {
    pub fn new(label: impl Into<String>, rate: f64, operator: CMatrix) -> Self {
        Self { label: label.into(), rate, operator }
    }
}

/// Resonator damping `a` at κ, qubit relaxation `σ₋` at γ and dephasing `σ_z`
/// at γ_φ/2 for every mode and qubit of the space. Zero-rate channels are
/// omitted.
pub fn standard_channels(space: &Space, noise: &NoiseParams) -> Result<Vec<Channel>> {
    NoiseParams::new(noise.kappa, noise.gamma, noise.gamma_phi)?;
    let mut channels = Vec::new();
    if noise.kappa > 0.0 {
        for m in 0..space.modes() {
            let (a, _) = ladder_ops(space, m)?;
            channels.push(Channel::new(format!("kappa[{m}]"), noise.kappa, a.into_matrix()));
        }
    }
    for q in 0..space.qubits() {
        if noise.gamma > 0.0 {
            let sm = qubit_op(space, q, QubitOp::Lower)?;
            channels.push(Channel::new(format!("gamma[{q}]"), noise.gamma, sm.into_matrix()));
        }
        if noise.gamma_phi > 0.0 {
            let sz = qubit_op(space, q, QubitOp::Z)?;
            channels.push(Channel::new(
                format!("gamma_phi[{q}]"),
                noise.gamma_phi / 2.0,
                sz.into_matrix(),
            ));
        }
    }
    Ok(channels)
}

/// Compiled dissipator: sparse √rate·L and the dense Σ L†L.
struct Dissipator {
    jumps: Vec<SparseOp>,
    decay: CMatrix,
}

impl Dissipator {
    fn new(space: &Space, channels: &[Channel]) -> Result<Self> {
        let dim = space.dim();
        let mut decay = CMatrix::zeros(dim, dim);
        let mut jumps = Vec::with_capacity(channels.len());
        for ch in channels {
            if !(ch.rate >= 0.0) {
                return Err(Error::NegativeRate("channel"));
            }
            if ch.operator.nrows() != dim || ch.operator.ncols() != dim {
                return Err(Error::SpaceMismatch(format!("channel {} has the wrong dimension", ch.label)));
            }
            if ch.rate == 0.0 {
                continue;
            }
            decay += ch.operator.adjoint() * &ch.operator * C64::from(ch.rate);
            jumps.push(SparseOp::from_dense(&ch.operator).scaled(ch.rate.sqrt()));
        }
        Ok(Self { jumps, decay })
    }

    fn total_rate_bound(&self) -> f64 {
        self.decay.iter().map(|v| v.norm()).fold(0.0, f64::max) * self.decay.nrows() as f64
    }
}

/// Fixed-step RK4 settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Integrator {
    /// Minimum RK4 steps per period of the fastest frequency.
    pub steps_per_period: f64,
    /// Per-step error bound of the step-doubling check; `None` disables it.
    pub step_tolerance: Option<f64>,
    pub max_refinements: u32,
    /// Allowed norm drift of pure states per 1000 steps.
    pub norm_tolerance: f64,
    /// Allowed trace drift of density matrices.
    pub trace_tolerance: f64,
    /// Check density-matrix invariants at every recorded sample.
    pub check_density: bool,
}

impl Default for Integrator {
    fn default() -> Self {
        Self {
            steps_per_period: 50.0,
            step_tolerance: Some(1e-9),
            max_refinements: 16,
            norm_tolerance: 1e-9,
            trace_tolerance: 1e-8,
            check_density: true,
        }
    }
}

fn rk4_step<F>(f: &F, t: f64, y: &CMatrix, h: f64) -> Result<CMatrix>
where
    F: Fn(f64, &CMatrix) -> Result<CMatrix>,
{
    let half = C64::from(h / 2.0);
    let k1 = f(t, y)?;
    let k2 = f(t + h / 2.0, &(y + &k1 * half))?;
    let k3 = f(t + h / 2.0, &(y + &k2 * half))?;
    let k4 = f(t + h, &(y + &k3 * C64::from(h)))?;
    Ok(y + (k1 + (k2 + k3) * C64::from(2.0) + k4) * C64::from(h / 6.0))
}

fn max_abs_diff(a: &CMatrix, b: &CMatrix) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

/// Largest |eigenvalue| and eigenvalue spread over sampled times.
fn frequency_scale(h: &dyn Hamiltonian, grid: &TimeGrid) -> Result<(f64, f64)> {
    let samples: Vec<f64> = if h.is_time_independent() {
        vec![grid.t_start]
    } else {
        let n = grid.steps.min(200);
        (0..=n).map(|i| grid.t_start + (grid.t_end - grid.t_start) * i as f64 / n as f64).collect()
    };
    let mut radius: f64 = 0.0;
    let mut spread: f64 = 0.0;
    for t in samples {
        let op = h.at(t)?;
        require_hermitian(&op, t)?;
        let ev = op.eigenvalues()?;
        let (lo, hi) = (ev[0], ev[ev.len() - 1]);
        radius = radius.max(lo.abs()).max(hi.abs());
        spread = spread.max(hi - lo);
    }
    Ok((radius, spread))
}

impl Integrator {
    fn run<F, R>(&self, y0: CMatrix, grid: &TimeGrid, omega_max: f64, rhs: F, mut record: R) -> Result<()>
    where
        F: Fn(f64, &CMatrix) -> Result<CMatrix>,
        R: FnMut(f64, &CMatrix, usize) -> Result<()>,
    {
        let dt = grid.dt();
        let mut substeps = if omega_max > 0.0 {
            (dt * self.steps_per_period * omega_max / (2.0 * PI)).ceil().max(1.0) as usize
        } else {
            1
        };
        let mut y = y0;
        let mut taken = 0usize;
        record(grid.t_start, &y, taken)?;
        for i in 0..grid.steps {
            let t0 = grid.time(i);
            let t1 = grid.time(i + 1);
            if let (Some(tol), true) = (self.step_tolerance, i % grid.sample_stride == 0) {
                let mut refinements = 0;
                loop {
                    let h = (t1 - t0) / substeps as f64;
                    let full = rk4_step(&rhs, t0, &y, h)?;
                    let mid = rk4_step(&rhs, t0, &y, h / 2.0)?;
                    let halves = rk4_step(&rhs, t0 + h / 2.0, &mid, h / 2.0)?;
                    let err = max_abs_diff(&full, &halves);
                    if err <= tol {
                        break;
                    }
                    if refinements >= self.max_refinements {
                        return Err(Error::Convergence(format!(
                            "step-doubling error {err:.3e} above {tol:.1e} at t = {t0}"
                        )));
                    }
                    substeps *= 2;
                    refinements += 1;
                }
                if refinements > 0 {
                    debug!("refined to {substeps} substeps per grid interval at t = {t0}");
                }
            }
            // the check bounds the error of a full step; integrating with the
            // half step it compared against leaves a further 16x margin
            let steps_here = if self.step_tolerance.is_some() { 2 * substeps } else { substeps };
            let h = (t1 - t0) / steps_here as f64;
            for j in 0..steps_here {
                y = rk4_step(&rhs, t0 + j as f64 * h, &y, h)?;
            }
            taken += steps_here;
            if grid.is_sample(i + 1) {
                record(t1, &y, taken)?;
            }
        }
        Ok(())
    }

    /// Schrödinger evolution of a pure state.
    pub fn propagate_state(
        &self,
        h: &dyn Hamiltonian,
        psi0: &KetState,
        grid: &TimeGrid,
    ) -> Result<EvolutionTrace> {
        let space = h.space().clone();
        if psi0.space() != &space {
            return Err(Error::SpaceMismatch("initial state and Hamiltonian spaces differ".into()));
        }
        let (radius, _) = frequency_scale(h, grid)?;
        let constant = if h.is_time_independent() {
            Some(SparseOp::from_dense(h.at(grid.t_start)?.matrix()))
        } else {
            None
        };
        let minus_i = C64::new(0.0, -1.0);
        let rhs = |t: f64, y: &CMatrix| -> Result<CMatrix> {
            match &constant {
                Some(op) => Ok(op.mul_dense(y) * minus_i),
                None => {
                    let op = h.at(t)?;
                    require_hermitian(&op, t)?;
                    Ok(op.matrix() * y * minus_i)
                }
            }
        };
        let norm0 = psi0.norm();
        let mut times = Vec::new();
        let mut states = Vec::new();
        let mut norms = Vec::new();
        let mut steps = Vec::new();
        let y0 = CMatrix::from_column_slice(space.dim(), 1, psi0.amplitudes().as_slice());
        self.run(y0, grid, radius, rhs, |t, y, taken| {
            let ket = KetState::new(space.clone(), y.column(0).into_owned())?;
            let drift = (ket.norm() - norm0).abs();
            let tolerance = self.norm_tolerance * (taken as f64 / 1000.0).max(1.0);
            if drift > tolerance {
                return Err(Error::NormDrift { drift, tolerance });
            }
            times.push(t);
            norms.push(ket.norm());
            steps.push(taken as f64);
            states.push(ket);
            Ok(())
        })?;
        Ok(EvolutionTrace {
            times,
            states: TraceStates::Kets(states),
            // cumulative RK4 steps at each sample
            observables: vec![("norm".into(), norms), ("steps".into(), steps)],
        })
    }

    /// Lindblad evolution with explicit channels.
    pub fn lindblad_channels(
        &self,
        h: &dyn Hamiltonian,
        channels: &[Channel],
        rho0: &DensityMatrix,
        grid: &TimeGrid,
    ) -> Result<EvolutionTrace> {
        let space = h.space().clone();
        if rho0.space() != &space {
            return Err(Error::SpaceMismatch("initial state and Hamiltonian spaces differ".into()));
        }
        let diss = Dissipator::new(&space, channels)?;
        let (_, spread) = frequency_scale(h, grid)?;
        let omega_max = spread + diss.total_rate_bound();
        let half_decay = &diss.decay * C64::from(0.5);
        let heff_of =
            |op: &OperatorMatrix| SparseOp::from_dense(&(op.matrix() - &half_decay * C64::new(0.0, 1.0)));
        let constant = if h.is_time_independent() { Some(heff_of(&h.at(grid.t_start)?)) } else { None };
        let minus_i = C64::new(0.0, -1.0);
        let rhs = |t: f64, rho: &CMatrix| -> Result<CMatrix> {
            let owned;
            let heff = match &constant {
                Some(m) => m,
                None => {
                    let op = h.at(t)?;
                    require_hermitian(&op, t)?;
                    owned = heff_of(&op);
                    &owned
                }
            };
            let hr = heff.mul_dense(rho);
            // ρ Heff† = (Heff ρ)† for Hermitian ρ
            let mut out = (&hr - hr.adjoint()) * minus_i;
            for jump in &diss.jumps {
                jump.add_sandwich(rho, &mut out);
            }
            Ok(out)
        };
        let trace0 = rho0.trace().re;
        let mut times = Vec::new();
        let mut states = Vec::new();
        let mut traces = Vec::new();
        self.run(rho0.matrix().clone(), grid, omega_max, rhs, |t, y, _| {
            let rho = DensityMatrix::new_unchecked(space.clone(), y.clone())?;
            let drift = (rho.trace() - C64::from(trace0)).norm();
            if drift > self.trace_tolerance {
                return Err(Error::InvalidDensityMatrix(format!("trace drift {drift:.3e} at t = {t}")));
            }
            if self.check_density {
                rho.check_invariants()?;
            }
            times.push(t);
            traces.push(rho.trace().re);
            states.push(rho);
            Ok(())
        })?;
        Ok(EvolutionTrace {
            times,
            states: TraceStates::Densities(states),
            observables: vec![("trace".into(), traces)],
        })
    }

    /// Lindblad evolution with the standard channels of [`standard_channels`].
    pub fn lindblad_evolve(
        &self,
        h: &dyn Hamiltonian,
        noise: &NoiseParams,
        rho0: &DensityMatrix,
        grid: &TimeGrid,
    ) -> Result<EvolutionTrace> {
        let channels = standard_channels(h.space(), noise)?;
        self.lindblad_channels(h, &channels, rho0, grid)
    }
}

/// [`Integrator::propagate_state`] with default settings.
pub fn propagate_state(h: &dyn Hamiltonian, psi0: &KetState, grid: &TimeGrid) -> Result<EvolutionTrace> {
    Integrator::default().propagate_state(h, psi0, grid)
}

/// [`Integrator::lindblad_evolve`] with default settings.
pub fn lindblad_evolve(
    h: &dyn Hamiltonian,
    noise: &NoiseParams,
    rho0: &DensityMatrix,
    grid: &TimeGrid,
) -> Result<EvolutionTrace> {
    Integrator::default().lindblad_evolve(h, noise, rho0, grid)
}

/// A dressed-state jump |j⟩⟨k| between eigenstates k > j.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DressedJump {
    pub from: usize,
    pub to: usize,
    /// Γ_κ = κ(Δ_kj/ω_r)|⟨k|(a + a†)|j⟩|²
    pub rate_kappa: f64,
    /// Γ_γ = γ(Δ_kj/ω_q)|⟨k|σ_x|j⟩|²
    pub rate_gamma: f64,
}

/// Eigen-decomposition of a one-rail Hamiltonian and its dressed jumps.
#[derive(Debug, Clone, PartialEq)]
pub struct DressedModel {
    space: Space,
    /// Ascending eigenvalues.
    pub energies: Vec<f64>,
    /// Eigenvectors as columns, in the order of `energies`.
    pub vectors: CMatrix,
    pub jumps: Vec<DressedJump>,
}

/// Relative spacing below which two dressed levels count as degenerate.
pub const DEGENERACY_TOL: f64 = 1e-12;

impl DressedModel {
    /// Diagonalizes `h_full` (one mode, one qubit) and computes the jump rates
    /// for unit κ and γ.
    pub fn new(h_full: &OperatorMatrix, params: &SystemParams) -> Result<Self> {
        let space = h_full.space().clone();
        if space.modes() != 1 || space.qubits() != 1 {
            return Err(Error::WrongSpaceShape(
                "dressed model needs one mode and one qubit".into(),
            ));
        }
        require_hermitian(h_full, 0.0)?;
        let eig = h_full.matrix().clone().symmetric_eigen();
        let dim = space.dim();
        // stable sort by energy, ties by position of the dominant bare state
        let dominant = |c: usize| {
            (0..dim)
                .max_by(|&a, &b| eig.eigenvectors[(a, c)].norm().total_cmp(&eig.eigenvectors[(b, c)].norm()))
                .unwrap_or(0)
        };
        let mut order: Vec<usize> = (0..dim).collect();
        order.sort_by(|&a, &b| {
            eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]).then(dominant(a).cmp(&dominant(b)))
        });
        let energies: Vec<f64> = order.iter().map(|&c| eig.eigenvalues[c]).collect();
        let scale = energies.iter().fold(1.0f64, |m, e| m.max(e.abs()));
        for i in 0..dim.saturating_sub(1) {
            if energies[i + 1] - energies[i] < DEGENERACY_TOL * scale {
                return Err(Error::DegenerateSpectrum {
                    i,
                    j: i + 1,
                    e1: energies[i],
                    e2: energies[i + 1],
                });
            }
        }
        let mut vectors = CMatrix::zeros(dim, dim);
        for (new, &old) in order.iter().enumerate() {
            vectors.set_column(new, &eig.eigenvectors.column(old));
        }
        let (a, ad) = ladder_ops(&space, 0)?;
        let x = a.matrix() + ad.matrix();
        let sx = qubit_op(&space, 0, QubitOp::X)?.into_matrix();
        let x_dressed = vectors.adjoint() * x * &vectors;
        let sx_dressed = vectors.adjoint() * sx * &vectors;
        let mut jumps = Vec::new();
        for k in 0..dim {
            for j in 0..k {
                let gap = energies[k] - energies[j];
                let jump = DressedJump {
                    from: k,
                    to: j,
                    rate_kappa: gap / params.omega_r * x_dressed[(k, j)].norm_sqr(),
                    rate_gamma: gap / params.omega_q * sx_dressed[(k, j)].norm_sqr(),
                };
                if jump.rate_kappa > 0.0 || jump.rate_gamma > 0.0 {
                    jumps.push(jump);
                }
            }
        }
        Ok(Self { space, energies, vectors, jumps })
    }

    pub fn space(&self) -> &Space {
        &self.space
    }

    /// Jump operator |j⟩⟨k| in the bare basis.
    pub fn jump_operator(&self, jump: &DressedJump) -> CMatrix {
        self.vectors.column(jump.to) * self.vectors.column(jump.from).adjoint()
    }

    /// Dressed channels on the model's own space. A jump that both κ and γ
    /// drive is one channel with the summed rate.
    pub fn channels(&self, kappa: f64, gamma: f64) -> Result<Vec<Channel>> {
        self.embedded_channels(&self.space, 0, kappa, gamma)
    }

    /// Dressed channels of one rail of a multi-rail space (mode `rail` and
    /// qubit `rail`), identity on the other rails.
    pub fn embedded_channels(
        &self,
        target: &Space,
        rail: usize,
        kappa: f64,
        gamma: f64,
    ) -> Result<Vec<Channel>> {
        if !(kappa >= 0.0) {
            return Err(Error::NegativeRate("kappa"));
        }
        if !(gamma >= 0.0) {
            return Err(Error::NegativeRate("gamma"));
        }
        let factors = [rail, target.modes() + rail];
        let mut out = Vec::new();
        for jump in &self.jumps {
            let rate = kappa * jump.rate_kappa + gamma * jump.rate_gamma;
            if rate <= 0.0 {
                continue;
            }
            let local = self.jump_operator(jump);
            let op = if target == &self.space && rail == 0 {
                local
            } else {
                target.embed_factors(&factors, &local)?
            };
            out.push(Channel::new(format!("dressed[{rail}]{}->{}", jump.from, jump.to), rate, op));
        }
        Ok(out)
    }
}

/// Dressed-state master equation: evolution under `h_full` with jumps between
/// its eigenstates. `gamma_phi`, when given, adds a bare σ_z channel at
/// γ_φ/2.
pub fn dressed_lindblad_evolve(
    h_full: &OperatorMatrix,
    params: &SystemParams,
    kappa: f64,
    gamma: f64,
    gamma_phi: Option<f64>,
    rho0: &DensityMatrix,
    grid: &TimeGrid,
) -> Result<EvolutionTrace> {
    let model = DressedModel::new(h_full, params)?;
    let mut channels = model.channels(kappa, gamma)?;
    if let Some(gp) = gamma_phi {
        channels.extend(standard_channels(h_full.space(), &NoiseParams::new(0.0, 0.0, gp)?)?);
    }
    Integrator::default().lindblad_channels(h_full, &channels, rho0, grid)
}

/// ⟨P⟩ at every recorded time, one named series per projector.
pub fn observable_series(
    trace: &EvolutionTrace,
    projectors: &[(String, OperatorMatrix)],
) -> Result<Vec<(String, Vec<f64>)>> {
    let mut out = Vec::with_capacity(projectors.len());
    for (name, p) in projectors {
        if p.space() != trace.space() {
            return Err(Error::SpaceMismatch(format!("projector {name} lives on another space")));
        }
        let values = match &trace.states {
            TraceStates::Kets(v) => v.iter().map(|k| k.expectation(p).map(|z| z.re)).collect::<Result<Vec<_>>>()?,
            TraceStates::Densities(v) => {
                v.iter().map(|r| r.expectation(p).map(|z| z.re)).collect::<Result<Vec<_>>>()?
            }
        };
        out.push((name.clone(), values));
    }
    Ok(out)
}

/// Projector onto one basis vector.
pub fn basis_projector(space: &Space, index: usize) -> OperatorMatrix {
    let dim = space.dim();
    let mut m = CMatrix::zeros(dim, dim);
    m[(index, index)] = C64::from(1.0);
    OperatorMatrix::new(space.clone(), m).expect("projector has the space dimension")
}

/// Population projectors for every basis vector, named by label.
pub fn population_projectors(space: &Space) -> Vec<(String, OperatorMatrix)> {
    (0..space.dim()).map(|i| (format!("P{}", space.label(i)), basis_projector(space, i))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::Qubit;
    use crate::models::{h_2jc_interaction, SystemParams};
    use approx::assert_abs_diff_eq;

    fn sc() -> SystemParams {
        SystemParams::strong_coupling_default()
    }

    #[test]
    fn zero_hamiltonian_is_identity() {
        let space = Space::mode_qubit(2);
        let h = OperatorMatrix::zeros(&space);
        let psi = KetState::from_label(&space, &[1], &[Qubit::G]).unwrap();
        let trace = propagate_state(&h, &psi, &TimeGrid::sampled(3.0, 5).unwrap()).unwrap();
        for k in trace.kets().unwrap() {
            assert_eq!(k, &psi);
        }
        let rho = DensityMatrix::maximally_mixed(&space);
        let out = lindblad_evolve(&h, &NoiseParams::zero(), &rho, &TimeGrid::endpoint(2.0).unwrap()).unwrap();
        assert_eq!(out.final_density(), rho);
    }

    #[test]
    fn half_period_transfers_to_excited_qubit() {
        let space = Space::mode_qubit(2);
        let p = sc();
        let h = h_2jc_interaction(&p, &space, 0.0).unwrap();
        let psi = KetState::from_label(&space, &[2], &[Qubit::G]).unwrap();
        let t = p.sc_gate_time() / 2.0;
        let out = propagate_state(&h, &psi, &TimeGrid::endpoint(t).unwrap()).unwrap();
        let k = out.final_ket().unwrap();
        let e0 = space.index_of(&[0], &[Qubit::E]).unwrap();
        assert_abs_diff_eq!(k.amplitude(e0).norm_sqr(), 1.0, epsilon = 1e-9);
        let full = propagate_state(&h, &psi, &TimeGrid::endpoint(2.0 * t).unwrap()).unwrap();
        let amp = full.final_ket().unwrap().amplitude(space.index_of(&[2], &[Qubit::G]).unwrap());
        assert_abs_diff_eq!(amp.re, -1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(amp.im, 0.0, epsilon = 1e-9);
    }

    #[test]
    fn closed_lindblad_matches_schrodinger() {
        let space = Space::mode_qubit(2);
        let h = h_2jc_interaction(&sc(), &space, 0.0).unwrap();
        let psi = KetState::new(
            space.clone(),
            nalgebra::DVector::from_vec(vec![
                C64::from(1.0),
                C64::from(0.0),
                C64::from(1.0),
                C64::from(0.0),
                C64::from(1.0),
                C64::from(0.0),
            ]),
        )
        .unwrap()
        .normalized()
        .unwrap();
        let grid = TimeGrid::sampled(1.0, 10).unwrap();
        let kets = propagate_state(&h, &psi, &grid).unwrap();
        let rhos = lindblad_evolve(&h, &NoiseParams::zero(), &psi.to_density(), &grid).unwrap();
        for (k, r) in kets.kets().unwrap().iter().zip(rhos.densities().unwrap()) {
            let d = (k.to_density().matrix() - r.matrix()).norm();
            assert!(d < 1e-8, "{d}");
        }
    }

    #[test]
    fn negative_rates_rejected() {
        assert_eq!(NoiseParams::new(-1.0, 0.0, 0.0), Err(Error::NegativeRate("kappa")));
        let space = Space::mode_qubit(2);
        let bad = NoiseParams { kappa: 0.0, gamma: -1.0, gamma_phi: 0.0 };
        assert!(standard_channels(&space, &bad).is_err());
    }

    #[test]
    fn non_hermitian_hamiltonian_rejected() {
        let space = Space::mode_qubit(2);
        let (a, _) = ladder_ops(&space, 0).unwrap();
        let psi = KetState::basis(&space, 0);
        let err = propagate_state(&a, &psi, &TimeGrid::endpoint(1.0).unwrap()).unwrap_err();
        assert!(matches!(err, Error::NonHermitian { .. }));
    }

    #[test]
    fn resonator_decay_of_one_photon() {
        let space = Space::mode_qubit(2);
        let h = OperatorMatrix::zeros(&space);
        let kappa = 0.3;
        let rho0 = KetState::from_label(&space, &[1], &[Qubit::G]).unwrap().to_density();
        let out = lindblad_evolve(&h, &NoiseParams::new(kappa, 0.0, 0.0).unwrap(), &rho0, &TimeGrid::endpoint(2.0).unwrap())
            .unwrap();
        let p1 = out.final_density().populations()[space.index_of(&[1], &[Qubit::G]).unwrap()];
        assert_abs_diff_eq!(p1, (-kappa * 2.0f64).exp(), epsilon = 1e-9);
    }

    #[test]
    fn dressed_rates_are_non_negative() {
        let space = Space::mode_qubit(2);
        let p = crate::models::solve_pusc_k(4, crate::units::ghz(5.0)).unwrap();
        let h = crate::models::h_2bs(&p.base, &space).unwrap();
        let model = DressedModel::new(&h, &p.base).unwrap();
        assert!(model.energies.windows(2).all(|w| w[0] < w[1]));
        assert!(!model.jumps.is_empty());
        for j in &model.jumps {
            assert!(j.from > j.to);
            assert!(j.rate_kappa >= 0.0 && j.rate_gamma >= 0.0);
        }
    }

    #[test]
    fn observable_sum_is_one() {
        let space = Space::mode_qubit(2);
        let h = h_2jc_interaction(&sc(), &space, 0.0).unwrap();
        let psi = KetState::from_label(&space, &[2], &[Qubit::G]).unwrap();
        let trace = propagate_state(&h, &psi, &TimeGrid::sampled(1.0, 20).unwrap()).unwrap();
        let series = observable_series(&trace, &population_projectors(&space)).unwrap();
        for i in 0..trace.times.len() {
            let total: f64 = series.iter().map(|(_, v)| v[i]).sum();
            assert_abs_diff_eq!(total, 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn csv_has_time_column() {
        let space = Space::mode_qubit(2);
        let h = OperatorMatrix::zeros(&space);
        let trace = propagate_state(&h, &KetState::basis(&space, 0), &TimeGrid::sampled(1.0, 2).unwrap()).unwrap();
        let mut buf = Vec::new();
        trace.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("time_ns,norm,steps\n"));
        assert_eq!(text.lines().count(), 4);
    }
}
