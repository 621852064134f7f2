//! Waveguide catch, interact and release.
//!
//! A resonator couples to N discretized waveguide modes through a tunable
//! coupler g_wr(t), and to a qubit at twice its frequency through g_rq(t).
//! Everything runs in the frame rotating at the resonator frequency, so bath
//! mode m only carries its detuning Δ_m and the qubit is resonant.
//!
//! States live in the ≤2-excitation sector and are stored flat, sector by
//! sector:
//!
//! | block  | basis state                          | excitations |
//! |--------|--------------------------------------|-------------|
//! | vac    | \|0_r, 0_w⟩                          | 0           |
//! | R1     | \|1_r, 0_w⟩                          | 1           |
//! | B1_m   | \|0_r, 1_m⟩                          | 1           |
//! | A      | \|2_r, 0_w⟩                          | 2           |
//! | B_m    | \|1_r, 1_m⟩                          | 2           |
//! | C_ij   | \|0_r, 1_i 1_j⟩, i ≥ j (\|2_i⟩ if i = j) | 2       |
//! | E      | \|0_r, 0_w, e⟩                       | 2           |
//!
//! Every basis vector is a normalized Fock state, so a symmetric two-photon
//! amplitude φ(ω_i, ω_j) appears on C_ij with an extra √2 off the diagonal.
//! The Hamiltonian never mixes sectors, and an exactly zero sector stays
//! exactly zero.

use std::cell::Cell;
use std::collections::BTreeMap;
use std::f64::consts::{PI, SQRT_2};
use std::io::Write;
use std::ops::Range;

use argmin::core::{CostFunction, Executor};
use argmin::solver::neldermead::NelderMead;
use log::{debug, warn};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{NoiseParams, TimeGrid};
use crate::error::{Error, Result};
use crate::gates::GateReport;
use crate::units::{ghz, mhz, Frequency, FrequencyUnit};
use crate::C64;

/// Grid size the coupler amplitudes are quoted for.
pub const REFERENCE_MODES: usize = 100;

/// Default bath size for density-matrix runs.
pub const OPEN_SYSTEM_MODES: usize = 30;

const ZERO: C64 = C64::new(0.0, 0.0);

/// A Lorentzian photon wavepacket, amplitude ∝ 1/(Δ − ω₀ + iε).
///
/// `omega0` is the packet center measured from the resonator frequency, so
/// 0 means resonant. `span_k` is the total grid width in units of ε.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WavepacketSpec {
    pub epsilon: f64,
    #[serde(default)]
    pub omega0: f64,
    pub span_k: f64,
}

impl WavepacketSpec {
    pub fn new(epsilon: f64, omega0: f64, span_k: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::InvalidParameter(format!("bandwidth must be positive, got {epsilon}")));
        }
        if !(span_k >= 2.0 && span_k.is_finite()) {
            return Err(Error::InvalidParameter(format!("span_k must be at least 2, got {span_k}")));
        }
        if !omega0.is_finite() {
            return Err(Error::InvalidParameter("packet center must be finite".into()));
        }
        Ok(Self { epsilon, omega0, span_k })
    }

    /// ε = 0.02 ns⁻¹ on a 5ε grid.
    pub fn narrow() -> Self {
        Self { epsilon: 0.02, omega0: 0.0, span_k: 5.0 }
    }

    /// ε = 0.15 ns⁻¹ on a 4ε grid.
    pub fn wide() -> Self {
        Self { epsilon: 0.15, omega0: 0.0, span_k: 4.0 }
    }

    /// Unnormalized single-photon amplitude at detuning Δ.
    pub fn amplitude(&self, detuning: f64) -> C64 {
        C64::new(detuning - self.omega0, self.epsilon).inv()
    }
}

/// N equally spaced bath modes centered on the resonator frequency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BathDiscretization {
    pub n: usize,
    pub delta_omega: f64,
    /// Δ_m = ω_m − ω_r.
    pub detunings: Vec<f64>,
    /// √(N_ref/N): keeps the coupler's decay rate 2πg²/δω fixed when N changes.
    pub coupling_scale: f64,
}

impl BathDiscretization {
    pub fn new(spec: &WavepacketSpec, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParameter("bath needs at least one mode".into()));
        }
        let delta_omega = spec.span_k * spec.epsilon / n as f64;
        let center = (n as f64 - 1.0) / 2.0;
        let detunings = (0..n).map(|m| (m as f64 - center) * delta_omega).collect();
        let coupling_scale = (REFERENCE_MODES as f64 / n as f64).sqrt();
        Ok(Self { n, delta_omega, detunings, coupling_scale })
    }

    /// Absolute mode frequencies for a resonator at `omega_r`.
    pub fn omegas(&self, omega_r: f64) -> Vec<f64> {
        self.detunings.iter().map(|d| omega_r + d).collect()
    }

    pub fn pair_count(&self) -> usize {
        self.n * (self.n + 1) / 2
    }

    /// Flat state dimension N(N+1)/2 + 2N + 4.
    pub fn dim(&self) -> usize {
        self.pair_count() + 2 * self.n + 4
    }

    /// Working memory of a density-matrix run: five D×D complex buffers.
    pub fn density_memory_bytes(&self) -> usize {
        let d = self.dim();
        5 * d * d * std::mem::size_of::<C64>()
    }

    pub const VAC: usize = 0;
    pub const R1: usize = 1;

    pub fn b1(&self, m: usize) -> usize {
        2 + m
    }

    pub fn a(&self) -> usize {
        2 + self.n
    }

    pub fn b(&self, m: usize) -> usize {
        3 + self.n + m
    }

    /// Index of the unordered pair {i, j}.
    pub fn c(&self, i: usize, j: usize) -> usize {
        let (hi, lo) = if i >= j { (i, j) } else { (j, i) };
        3 + 2 * self.n + hi * (hi + 1) / 2 + lo
    }

    pub fn e(&self) -> usize {
        self.dim() - 1
    }

    fn sector_range(&self, sector: usize) -> Range<usize> {
        match sector {
            0 => 0..1,
            1 => 1..self.n + 2,
            _ => self.n + 2..self.dim(),
        }
    }

    fn single_range(&self) -> Range<usize> {
        2..2 + self.n
    }

    fn pair_range(&self) -> Range<usize> {
        3 + 2 * self.n..3 + 2 * self.n + self.pair_count()
    }

    /// Resonator photon number of each basis state.
    fn resonator_photons(&self) -> Vec<u8> {
        let mut n = vec![0u8; self.dim()];
        n[Self::R1] = 1;
        n[self.a()] = 2;
        for m in 0..self.n {
            n[self.b(m)] = 1;
        }
        n
    }

    /// Waveguide photon number of each basis state.
    fn bath_photons(&self) -> Vec<u8> {
        let mut n = vec![0u8; self.dim()];
        for m in 0..self.n {
            n[self.b1(m)] = 1;
            n[self.b(m)] = 1;
        }
        for k in self.pair_range() {
            n[k] = 2;
        }
        n
    }
}

/// Waveguide sectors compared by [`waveform_overlap`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sector {
    /// One photon in the waveguide, resonator empty.
    One,
    /// Two photons in the waveguide, resonator empty.
    Two,
}

/// Amplitudes over the flat ≤2-excitation basis.
#[derive(Debug, Clone, PartialEq)]
pub struct BathState {
    bath: BathDiscretization,
    amps: Vec<C64>,
}

impl BathState {
    pub fn zeros(bath: &BathDiscretization) -> Self {
        Self { bath: bath.clone(), amps: vec![ZERO; bath.dim()] }
    }

    pub fn vacuum(bath: &BathDiscretization) -> Self {
        let mut s = Self::zeros(bath);
        s.amps[BathDiscretization::VAC] = C64::new(1.0, 0.0);
        s
    }

    pub fn from_amplitudes(bath: &BathDiscretization, amps: Vec<C64>) -> Result<Self> {
        if amps.len() != bath.dim() {
            return Err(Error::SpaceMismatch(format!(
                "{} amplitudes for a bath state of dimension {}",
                amps.len(),
                bath.dim()
            )));
        }
        Ok(Self { bath: bath.clone(), amps })
    }

    pub fn bath(&self) -> &BathDiscretization {
        &self.bath
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amps
    }

    pub fn amplitudes_mut(&mut self) -> &mut [C64] {
        &mut self.amps
    }

    pub fn vacuum_amplitude(&self) -> C64 {
        self.amps[BathDiscretization::VAC]
    }

    /// ⟨1_r, 0_w|ψ⟩.
    pub fn resonator_one(&self) -> C64 {
        self.amps[BathDiscretization::R1]
    }

    /// ⟨2_r, 0_w|ψ⟩, the amplitude A.
    pub fn resonator_two(&self) -> C64 {
        self.amps[self.bath.a()]
    }

    /// ⟨0_r, 0_w, e|ψ⟩.
    pub fn qubit_excited(&self) -> C64 {
        self.amps[self.bath.e()]
    }

    /// One photon in the waveguide, resonator empty.
    pub fn single_photon(&self) -> &[C64] {
        &self.amps[self.bath.single_range()]
    }

    /// One photon in the resonator and one in mode m (B_m).
    pub fn mixed(&self) -> &[C64] {
        &self.amps[3 + self.bath.n..3 + 2 * self.bath.n]
    }

    /// Ordered-pair storage C_ij, i ≥ j, row by row.
    pub fn pairs(&self) -> &[C64] {
        &self.amps[self.bath.pair_range()]
    }

    pub fn pair(&self, i: usize, j: usize) -> C64 {
        self.amps[self.bath.c(i, j)]
    }

    pub fn norm(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Squared norm of the 0-, 1- and 2-excitation sectors.
    pub fn sector_norms(&self) -> [f64; 3] {
        let mut out = [0.0; 3];
        for (s, o) in out.iter_mut().enumerate() {
            *o = self.amps[self.bath.sector_range(s)].iter().map(|a| a.norm_sqr()).sum();
        }
        out
    }

    /// Reduced resonator populations P(n_r = 0, 1, 2).
    pub fn resonator_populations(&self) -> [f64; 3] {
        let mut p = [0.0; 3];
        for (a, n) in self.amps.iter().zip(self.bath.resonator_photons()) {
            p[n as usize] += a.norm_sqr();
        }
        p
    }

    pub fn qubit_population(&self) -> f64 {
        self.qubit_excited().norm_sqr()
    }

    /// ⟨self|other⟩.
    pub fn inner(&self, other: &BathState) -> Result<C64> {
        same_bath(&self.bath, &other.bath)?;
        Ok(self.amps.iter().zip(&other.amps).map(|(a, b)| a.conj() * b).sum())
    }

    fn active_range(&self) -> Range<usize> {
        active_range(&self.bath, &self.amps)
    }
}

fn same_bath(a: &BathDiscretization, b: &BathDiscretization) -> Result<()> {
    if a.n != b.n || (a.delta_omega - b.delta_omega).abs() > 1e-15 * a.delta_omega.abs().max(1.0) {
        return Err(Error::SpaceMismatch("bath discretizations differ".into()));
    }
    Ok(())
}

/// Smallest index range outside of which every amplitude is exactly zero,
/// rounded out to whole sectors.
fn active_range(bath: &BathDiscretization, amps: &[C64]) -> Range<usize> {
    let live: Vec<bool> = (0..3).map(|s| amps[bath.sector_range(s)].iter().any(|a| *a != ZERO)).collect();
    let lo = (0..3).find(|&s| live[s]);
    let hi = (0..3).rev().find(|&s| live[s]);
    match (lo, hi) {
        (Some(lo), Some(hi)) => bath.sector_range(lo).start..bath.sector_range(hi).end,
        _ => 0..0,
    }
}

/// Lorentzian input α₀|0⟩ + α₁|1⟩_w + α₂|2⟩_w with the resonator empty.
///
/// The two-photon part is the symmetrized product of two identical packets,
/// each sector normalized on the discrete grid.
pub fn build_lorentzian_input(
    spec: &WavepacketSpec,
    alphas: [C64; 3],
    bath: &BathDiscretization,
) -> Result<BathState> {
    let total: f64 = alphas.iter().map(|a| a.norm_sqr()).sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidInput(format!("unnormalized alphas: Σ|α|² = {total}")));
    }
    let mut f: Vec<C64> = bath.detunings.iter().map(|&d| spec.amplitude(d)).collect();
    let nf = f.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
    f.iter_mut().for_each(|a| *a /= nf);

    let mut s = BathState::zeros(bath);
    s.amps[BathDiscretization::VAC] = alphas[0];
    for (m, fm) in f.iter().enumerate() {
        s.amps[bath.b1(m)] = alphas[1] * fm;
    }
    if alphas[2] != ZERO {
        let mut pairs = vec![ZERO; bath.pair_count()];
        for i in 0..bath.n {
            for j in 0..=i {
                let w = if i == j { 1.0 } else { SQRT_2 };
                pairs[i * (i + 1) / 2 + j] = f[i] * f[j] * w;
            }
        }
        let np = pairs.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        for (k, p) in pairs.into_iter().enumerate() {
            s.amps[bath.pair_range().start + k] = alphas[2] * p / np;
        }
    }
    Ok(s)
}

/// Free evolution under H_I0 = Σ Δ_m b†_m b_m for a time τ.
fn free_evolve(state: &BathState, tau: f64) -> BathState {
    let bath = &state.bath;
    let mut out = state.clone();
    for m in 0..bath.n {
        let ph = C64::from_polar(1.0, -bath.detunings[m] * tau);
        out.amps[bath.b1(m)] *= ph;
        out.amps[bath.b(m)] *= ph;
    }
    for i in 0..bath.n {
        for j in 0..=i {
            let k = bath.c(i, j);
            out.amps[k] *= C64::from_polar(1.0, -(bath.detunings[i] + bath.detunings[j]) * tau);
        }
    }
    out
}

/// The input freely evolved in the waveguide, with the clock restarted once
/// the qubit interaction ends: τ = t before t_in + t_q and t − t_in − t_q after.
pub fn tilde_reference_state(input: &BathState, t: f64, t_in: f64, t_q: f64) -> BathState {
    let restart = t_in + t_q;
    let tau = if t < restart { t } else { t - restart };
    free_evolve(input, tau)
}

/// Multiplies every amplitude by (−1)^(waveguide photons): the linear phase
/// shifter that removes the single-photon scattering sign.
pub fn apply_linear_phase(state: &BathState) -> BathState {
    let mut out = state.clone();
    for (a, n) in out.amps.iter_mut().zip(state.bath.bath_photons()) {
        if n % 2 == 1 {
            *a = -*a;
        }
    }
    out
}

/// Target output α₀|0⟩ − α₁|1̃⟩ − α₂|2̃⟩ at time `t`. The single-photon sign
/// is the resonant-scattering sign; with `corrected` it is taken to have been
/// removed by [`apply_linear_phase`], giving the textbook NS target.
pub fn ideal_output(input: &BathState, schedule: &CouplerSchedule, t: f64, corrected: bool) -> BathState {
    let mut out = tilde_reference_state(input, t, schedule.t_in(), schedule.t_q());
    let bath = out.bath.clone();
    if !corrected {
        out.amps[bath.sector_range(1)].iter_mut().for_each(|a| *a = -*a);
    }
    out.amps[bath.sector_range(2)].iter_mut().for_each(|a| *a = -*a);
    out
}

/// |⟨ref|out⟩| over one waveguide sector, each side normalized.
pub fn waveform_overlap(output: &BathState, reference: &BathState, sector: Sector) -> Result<f64> {
    same_bath(&output.bath, &reference.bath)?;
    let (o, r) = match sector {
        Sector::One => (output.single_photon(), reference.single_photon()),
        Sector::Two => (output.pairs(), reference.pairs()),
    };
    let no = o.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
    let nr = r.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
    let name = match sector {
        Sector::One => "single-photon",
        Sector::Two => "two-photon",
    };
    if no < 1e-14 || nr < 1e-14 {
        return Err(Error::EmptySector(name));
    }
    let ip: C64 = r.iter().zip(o).map(|(a, b)| a.conj() * b).sum();
    Ok((ip.norm() / (no * nr)).min(1.0))
}

// ---------------------------------------------------------------------------
// Coupler schedules

/// Time profile of one g_wr segment. Times inside a segment are measured
/// from its `t_start`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Shape {
    /// amplitude · exp(−rate · (t − t_start)).
    Exponential { amplitude: f64, rate: f64 },
    /// Linear from `from` at t_start to `to` at t_end.
    Ramp { from: f64, to: f64 },
    Constant { value: f64 },
    Zero,
}

impl Shape {
    fn scaled(self, f: f64) -> Self {
        match self {
            Shape::Exponential { amplitude, rate } => Shape::Exponential { amplitude: amplitude * f, rate },
            Shape::Ramp { from, to } => Shape::Ramp { from: from * f, to: to * f },
            Shape::Constant { value } => Shape::Constant { value: value * f },
            Shape::Zero => Shape::Zero,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub t_start: f64,
    pub t_end: f64,
    #[serde(flatten)]
    pub shape: Shape,
}

impl Segment {
    pub fn new(t_start: f64, t_end: f64, shape: Shape) -> Self {
        Self { t_start, t_end, shape }
    }

    /// Value at `t`, extrapolating the formula outside the segment.
    pub fn value(&self, t: f64) -> f64 {
        match self.shape {
            Shape::Exponential { amplitude, rate } => amplitude * (-rate * (t - self.t_start)).exp(),
            Shape::Ramp { from, to } => {
                from + (to - from) * (t - self.t_start) / (self.t_end - self.t_start)
            }
            Shape::Constant { value } => value,
            Shape::Zero => 0.0,
        }
    }

    fn check(&self) -> Result<()> {
        if !(self.t_end > self.t_start) || !self.t_start.is_finite() || !self.t_end.is_finite() {
            return Err(Error::InvalidSchedule(format!(
                "segment [{}, {}] has no positive length",
                self.t_start, self.t_end
            )));
        }
        let params: Vec<f64> = match self.shape {
            Shape::Exponential { amplitude, rate } => vec![amplitude, rate],
            Shape::Ramp { from, to } => vec![from, to],
            Shape::Constant { value } => vec![value],
            Shape::Zero => vec![],
        };
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidSchedule("non-finite segment parameter".into()));
        }
        // Exponentials and ramps are monotone, so the end points bound the sign.
        if self.value(self.t_start) < 0.0 || self.value(self.t_end) < 0.0 {
            return Err(Error::InvalidSchedule(format!(
                "g_wr negative on [{}, {}]",
                self.t_start, self.t_end
            )));
        }
        Ok(())
    }
}

/// Triangular g_rq pulse rising linearly to `peak` and back. The duration
/// t_q = √2π/peak makes √2∫g_rq dt = π, the NS condition on |2⟩_r.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Triangle {
    pub t_start: f64,
    pub peak: f64,
}

impl Triangle {
    pub fn new(t_start: f64, peak: f64) -> Result<Self> {
        if !(peak > 0.0 && peak.is_finite()) || !t_start.is_finite() {
            return Err(Error::InvalidSchedule(format!("triangle peak must be positive, got {peak}")));
        }
        Ok(Self { t_start, peak })
    }

    pub fn duration(&self) -> f64 {
        SQRT_2 * PI / self.peak
    }

    pub fn t_end(&self) -> f64 {
        self.t_start + self.duration()
    }

    pub fn value(&self, t: f64) -> f64 {
        let tq = self.duration();
        let s = t - self.t_start;
        if s <= 0.0 || s >= tq {
            0.0
        } else if s < tq / 2.0 {
            2.0 * self.peak * s / tq
        } else {
            2.0 * self.peak * (tq - s) / tq
        }
    }

    /// ∫g_rq dt.
    pub fn area(&self) -> f64 {
        self.peak * self.duration() / 2.0
    }
}

/// Piecewise g_wr(t) covering [0, t_end] plus an optional g_rq triangle.
/// All values in rad/ns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplerSchedule {
    g_wr: Vec<Segment>,
    g_rq: Option<Triangle>,
}

impl CouplerSchedule {
    pub fn new(g_wr: Vec<Segment>, g_rq: Option<Triangle>) -> Result<Self> {
        let first = g_wr.first().ok_or_else(|| Error::InvalidSchedule("no g_wr segments".into()))?;
        if first.t_start.abs() > 1e-12 {
            return Err(Error::InvalidSchedule(format!("schedule starts at {} instead of 0", first.t_start)));
        }
        for s in &g_wr {
            s.check()?;
        }
        for w in g_wr.windows(2) {
            let gap = w[1].t_start - w[0].t_end;
            if gap.abs() > 1e-9 {
                let what = if gap > 0.0 { "gap" } else { "overlap" };
                return Err(Error::InvalidSchedule(format!(
                    "{what} between segments ending at {} and starting at {}",
                    w[0].t_end, w[1].t_start
                )));
            }
        }
        let end = g_wr.last().map(|s| s.t_end).unwrap_or(0.0);
        if let Some(tri) = &g_rq {
            Triangle::new(tri.t_start, tri.peak)?;
            if tri.t_start < 0.0 || tri.t_end() > end + 1e-9 {
                return Err(Error::InvalidSchedule(format!(
                    "g_rq pulse [{}, {}] outside the schedule [0, {end}]",
                    tri.t_start,
                    tri.t_end()
                )));
            }
        }
        Ok(Self { g_wr, g_rq })
    }

    pub fn segments(&self) -> &[Segment] {
        &self.g_wr
    }

    pub fn triangle(&self) -> Option<&Triangle> {
        self.g_rq.as_ref()
    }

    pub fn t_end(&self) -> f64 {
        self.g_wr.last().map(|s| s.t_end).unwrap_or(0.0)
    }

    /// Start of the qubit interaction (the end of the schedule without one).
    pub fn t_in(&self) -> f64 {
        self.g_rq.map(|t| t.t_start).unwrap_or_else(|| self.t_end())
    }

    /// Qubit interaction time, zero without a g_rq pulse.
    pub fn t_q(&self) -> f64 {
        self.g_rq.map(|t| t.duration()).unwrap_or(0.0)
    }

    fn segment_at(&self, t: f64) -> &Segment {
        self.g_wr
            .iter()
            .find(|s| t < s.t_end)
            .unwrap_or_else(|| self.g_wr.last().expect("schedule has segments"))
    }

    pub fn g_wr(&self, t: f64) -> f64 {
        if t < 0.0 || t > self.t_end() {
            return 0.0;
        }
        self.segment_at(t).value(t)
    }

    pub fn g_rq(&self, t: f64) -> f64 {
        self.g_rq.map(|tri| tri.value(t)).unwrap_or(0.0)
    }

    /// Every time where g_wr or g_rq has a kink or jump.
    fn breakpoints(&self) -> Vec<f64> {
        let mut b: Vec<f64> = self.g_wr.iter().flat_map(|s| [s.t_start, s.t_end]).collect();
        if let Some(tri) = self.g_rq {
            b.extend([tri.t_start, tri.t_start + tri.duration() / 2.0, tri.t_end()]);
        }
        b.sort_by(|x, y| x.total_cmp(y));
        b.dedup_by(|x, y| (*x - *y).abs() < 1e-12);
        b
    }

    /// The smooth formulas active around `mid`.
    fn piece(&self, mid: f64) -> Piece<'_> {
        let rq = self.g_rq.and_then(|tri| {
            let tq = tri.duration();
            let s = mid - tri.t_start;
            if s <= 0.0 || s >= tq {
                None
            } else if s < tq / 2.0 {
                Some((tri.t_start, 0.0, 2.0 * tri.peak / tq))
            } else {
                Some((tri.t_start + tq, 0.0, -2.0 * tri.peak / tq))
            }
        });
        Piece { wr: self.segment_at(mid), rq }
    }

    pub fn to_file(&self, unit: FrequencyUnit) -> ScheduleFile {
        let f = 1.0 / Frequency { value: 1.0, unit }.angular();
        ScheduleFile {
            unit,
            g_wr: self.g_wr.iter().map(|s| Segment { shape: s.shape.scaled(f), ..*s }).collect(),
            g_rq: self.g_rq.map(|tri| TriangleSpec {
                t_start: tri.t_start,
                peak: Frequency::rad_per_ns(tri.peak),
            }),
        }
    }
}

/// Smooth formulas valid on one integration interval.
#[derive(Clone, Copy)]
struct Piece<'a> {
    wr: &'a Segment,
    /// (anchor, value at anchor, slope) of the linear g_rq piece.
    rq: Option<(f64, f64, f64)>,
}

impl Piece<'_> {
    fn eval(&self, t: f64) -> (f64, f64) {
        let gq = self.rq.map(|(t0, v0, slope)| v0 + slope * (t - t0)).unwrap_or(0.0);
        (self.wr.value(t), gq)
    }

    fn max_on(&self, a: f64, b: f64) -> (f64, f64) {
        let (wa, qa) = self.eval(a);
        let (wb, qb) = self.eval(b);
        (wa.abs().max(wb.abs()), qa.abs().max(qb.abs()))
    }
}

/// g_rq pulse as written in a schedule file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TriangleSpec {
    pub t_start: f64,
    pub peak: Frequency,
}

/// Schedule file layout. Segment amplitudes are in `unit`, rates in ns⁻¹ and
/// times in ns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleFile {
    pub unit: FrequencyUnit,
    pub g_wr: Vec<Segment>,
    #[serde(default)]
    pub g_rq: Option<TriangleSpec>,
}

impl ScheduleFile {
    pub fn to_schedule(&self) -> Result<CouplerSchedule> {
        let f = Frequency { value: 1.0, unit: self.unit }.angular();
        let segs = self.g_wr.iter().map(|s| Segment { shape: s.shape.scaled(f), ..*s }).collect();
        let tri = match self.g_rq {
            Some(t) => Some(Triangle::new(t.t_start, t.peak.angular())?),
            None => None,
        };
        CouplerSchedule::new(segs, tri)
    }
}

/// The catch / interact / release family: exponential catch on [0, t_in],
/// coupler off while the g_rq triangle runs, then a linear ramp to a constant
/// release plateau until `t_end`. Frequencies in rad/ns.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleParams {
    pub catch_amplitude: f64,
    pub catch_rate: f64,
    pub t_in: f64,
    pub g0: f64,
    pub release_plateau: f64,
    pub ramp: f64,
    pub t_end: f64,
}

/// Default release ramp duration in ns.
pub const DEFAULT_RAMP: f64 = 0.1;

impl ScheduleParams {
    /// ε = 0.02 ns⁻¹ packet: catch 1.07·exp(−0.0333t) MHz for 100 ns,
    /// g₀ = 0.25 GHz, release plateau 0.35 MHz.
    pub fn narrow() -> Self {
        Self {
            catch_amplitude: mhz(1.07),
            catch_rate: 0.0333,
            t_in: 100.0,
            g0: ghz(0.25),
            release_plateau: mhz(0.35),
            ramp: DEFAULT_RAMP,
            t_end: 300.0,
        }
    }

    /// ε = 0.15 ns⁻¹ packet: catch 7.3·exp(−0.24t) MHz for 20 ns, release
    /// plateau 2.26 MHz, 70 ns in total.
    pub fn wide() -> Self {
        Self {
            catch_amplitude: mhz(7.3),
            catch_rate: 0.24,
            t_in: 20.0,
            g0: ghz(0.25),
            release_plateau: mhz(2.26),
            ramp: DEFAULT_RAMP,
            t_end: 70.0,
        }
    }

    pub fn t_q(&self) -> f64 {
        SQRT_2 * PI / self.g0
    }

    pub fn build(&self) -> Result<CouplerSchedule> {
        if !(self.t_in > 0.0) || !(self.ramp >= 0.0) {
            return Err(Error::InvalidSchedule("t_in must be positive and ramp non-negative".into()));
        }
        let tri = Triangle::new(self.t_in, self.g0)?;
        let release = tri.t_end();
        let plateau_start = release + self.ramp;
        if !(self.t_end > plateau_start) {
            return Err(Error::InvalidSchedule(format!(
                "t_end {} leaves no release window after {plateau_start}",
                self.t_end
            )));
        }
        let mut segs = vec![
            Segment::new(
                0.0,
                self.t_in,
                Shape::Exponential { amplitude: self.catch_amplitude, rate: self.catch_rate },
            ),
            Segment::new(self.t_in, release, Shape::Zero),
        ];
        if self.ramp > 0.0 {
            segs.push(Segment::new(release, plateau_start, Shape::Ramp { from: 0.0, to: self.release_plateau }));
        }
        segs.push(Segment::new(plateau_start, self.t_end, Shape::Constant { value: self.release_plateau }));
        CouplerSchedule::new(segs, Some(tri))
    }
}

/// [`ScheduleParams`] as written in config files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub catch_amplitude: Frequency,
    /// ns⁻¹.
    pub catch_rate: f64,
    pub t_in: f64,
    pub g0: Frequency,
    pub release_plateau: Frequency,
    pub ramp: f64,
    pub t_end: f64,
}

impl ScheduleConfig {
    pub fn to_params(&self) -> ScheduleParams {
        ScheduleParams {
            catch_amplitude: self.catch_amplitude.angular(),
            catch_rate: self.catch_rate,
            t_in: self.t_in,
            g0: self.g0.angular(),
            release_plateau: self.release_plateau.angular(),
            ramp: self.ramp,
            t_end: self.t_end,
        }
    }
}

impl From<ScheduleParams> for ScheduleConfig {
    fn from(p: ScheduleParams) -> Self {
        let mhz_of = |w: f64| Frequency::mhz(crate::units::to_mhz(w));
        Self {
            catch_amplitude: mhz_of(p.catch_amplitude),
            catch_rate: p.catch_rate,
            t_in: p.t_in,
            g0: Frequency::ghz(crate::units::to_ghz(p.g0)),
            release_plateau: mhz_of(p.release_plateau),
            ramp: p.ramp,
            t_end: p.t_end,
        }
    }
}

// ---------------------------------------------------------------------------
// Generator

/// Sparse pieces of H(t) = diag + g_wr(t)·W + g_rq(t)·Q plus the
/// anti-Hermitian decay and jump structure for a given noise model.
struct Generator {
    dim: usize,
    n: usize,
    diag: Vec<f64>,
    /// W edges (i < j, weight); the sector-1 ones come first.
    edges: Vec<(usize, usize, f64)>,
    split: usize,
    coupling_scale: f64,
    a: usize,
    e: usize,
}

impl Generator {
    fn new(bath: &BathDiscretization) -> Self {
        let dim = bath.dim();
        let n = bath.n;
        let mut diag = vec![0.0; dim];
        for m in 0..n {
            diag[bath.b1(m)] = bath.detunings[m];
            diag[bath.b(m)] = bath.detunings[m];
        }
        for i in 0..n {
            for j in 0..=i {
                diag[bath.c(i, j)] = bath.detunings[i] + bath.detunings[j];
            }
        }
        let mut edges = Vec::with_capacity(2 * n + n * n);
        for m in 0..n {
            edges.push((BathDiscretization::R1, bath.b1(m), 1.0));
        }
        let split = edges.len();
        for m in 0..n {
            edges.push((bath.a(), bath.b(m), SQRT_2));
            for k in 0..n {
                let w = if k == m { SQRT_2 } else { 1.0 };
                edges.push((bath.b(m), bath.c(m, k), w));
            }
        }
        Self { dim, n, diag, edges, split, coupling_scale: bath.coupling_scale, a: bath.a(), e: bath.e() }
    }

    fn max_detuning(&self, range: &Range<usize>) -> f64 {
        self.diag[range.clone()].iter().fold(0.0, |m, d| m.max(d.abs()))
    }

    /// Upper bound on ‖H‖ on `range` for coupler magnitudes (gw, gq).
    fn norm_bound(&self, range: &Range<usize>, gw: f64, gq: f64) -> f64 {
        // The collective mode Σb_m/√N sees √N·g; two excitations double it.
        self.max_detuning(range) + 2.0 * self.coupling_scale * gw * (self.n as f64).sqrt() + SQRT_2 * gq
    }

    fn edges_for(&self, range: &Range<usize>) -> &[(usize, usize, f64)] {
        let sector2 = self.n + 2;
        let lo = if range.start >= sector2 { self.split } else { 0 };
        let hi = if range.end <= sector2 { self.split } else { self.edges.len() };
        &self.edges[lo..hi.max(lo)]
    }

    /// y = −i H x − ½ decay∘x on `range`.
    fn ket_rhs(&self, gw: f64, gq: f64, decay: Option<&[f64]>, range: &Range<usize>, x: &[C64], y: &mut [C64]) {
        let gw = gw * self.coupling_scale;
        for k in range.clone() {
            y[k] = x[k] * self.diag[k];
        }
        for &(i, j, w) in self.edges_for(range) {
            let c = gw * w;
            y[i] += x[j] * c;
            y[j] += x[i] * c;
        }
        if range.end == self.dim && gq != 0.0 {
            let c = SQRT_2 * gq;
            y[self.a] += x[self.e] * c;
            y[self.e] += x[self.a] * c;
        }
        for k in range.clone() {
            let h = y[k];
            y[k] = C64::new(h.im, -h.re);
        }
        if let Some(d) = decay {
            for k in range.clone() {
                y[k] -= x[k] * (0.5 * d[k]);
            }
        }
    }
}

/// Noise model in the waveguide basis: κ·a on the resonator, γ·σ₋ and
/// (γ_φ/2)·σ_z on the qubit.
struct Dissipation {
    noise: NoiseParams,
    /// Σ L†L without the dephasing identity part.
    decay: Vec<f64>,
    /// a as (to, from, coefficient).
    lower: Vec<(usize, usize, f64)>,
    e: usize,
}

impl Dissipation {
    fn new(bath: &BathDiscretization, noise: NoiseParams) -> Self {
        let photons = bath.resonator_photons();
        let mut decay: Vec<f64> = photons.iter().map(|&n| noise.kappa * n as f64).collect();
        decay[bath.e()] += noise.gamma;
        let mut lower = vec![(BathDiscretization::VAC, BathDiscretization::R1, 1.0), (BathDiscretization::R1, bath.a(), SQRT_2)];
        for m in 0..bath.n {
            lower.push((bath.b1(m), bath.b(m), 1.0));
        }
        Self { noise, decay, lower, e: bath.e() }
    }

    /// Decay vector for the no-jump evolution of a trajectory, including the
    /// constant γ_φ/2 from σ_z†σ_z = 1.
    fn ket_decay(&self) -> Vec<f64> {
        self.decay.iter().map(|d| d + 0.5 * self.noise.gamma_phi).collect()
    }

    fn max_rate(&self) -> f64 {
        self.decay.iter().fold(0.0, |m: f64, d| m.max(*d)) + self.noise.gamma_phi
    }
}

// ---------------------------------------------------------------------------
// Time stepping

/// Step-size control for the catch / release propagators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaveguideIntegrator {
    /// Largest ‖H‖·dt for pure-state steps.
    pub ket_phase_step: f64,
    /// Largest spread·dt for density-matrix steps.
    pub density_phase_step: f64,
    pub norm_tolerance: f64,
    pub trace_tolerance: f64,
    /// Check the final density matrix for eigenvalues below
    /// −`positivity_tolerance`. RK4 truncation on a rank-deficient ρ leaves
    /// eigenvalues of order 1e-7 on either side of zero.
    pub check_positivity: bool,
    pub positivity_tolerance: f64,
}

impl Default for WaveguideIntegrator {
    fn default() -> Self {
        Self {
            ket_phase_step: 0.02,
            density_phase_step: 0.1,
            norm_tolerance: 1e-8,
            trace_tolerance: 1e-8,
            check_positivity: true,
            positivity_tolerance: 1e-6,
        }
    }
}

/// Fixed RK4 steps on [t0, t1], never crossing a schedule breakpoint.
fn plan_steps(
    schedule: &CouplerSchedule,
    t0: f64,
    t1: f64,
    mut bound: impl FnMut(f64, f64) -> f64,
    phase_step: f64,
) -> Vec<(f64, f64, f64)> {
    let mut cuts = vec![t0];
    cuts.extend(schedule.breakpoints().into_iter().filter(|&b| b > t0 + 1e-12 && b < t1 - 1e-12));
    cuts.push(t1);
    let mut steps = Vec::new();
    for w in cuts.windows(2) {
        let (a, b) = (w[0], w[1]);
        let piece = schedule.piece(0.5 * (a + b));
        let (gw, gq) = piece.max_on(a, b);
        let omega = bound(gw, gq);
        let n = ((b - a) * omega / phase_step).ceil().max(1.0) as usize;
        let h = (b - a) / n as f64;
        for k in 0..n {
            steps.push((a + k as f64 * h, h, 0.5 * (a + b)));
        }
    }
    steps
}

struct KetWork {
    k: Vec<C64>,
    acc: Vec<C64>,
    tmp: Vec<C64>,
}

impl KetWork {
    fn new(dim: usize) -> Self {
        Self { k: vec![ZERO; dim], acc: vec![ZERO; dim], tmp: vec![ZERO; dim] }
    }
}

#[allow(clippy::too_many_arguments)]
fn rk4_ket(
    gen: &Generator,
    piece: &Piece,
    t: f64,
    h: f64,
    decay: Option<&[f64]>,
    range: &Range<usize>,
    psi: &mut Vec<C64>,
    w: &mut KetWork,
) {
    let r = range.clone();
    let (gw, gq) = piece.eval(t);
    gen.ket_rhs(gw, gq, decay, range, psi, &mut w.k);
    for i in r.clone() {
        w.acc[i] = psi[i] + w.k[i] * (h / 6.0);
        w.tmp[i] = psi[i] + w.k[i] * (h / 2.0);
    }
    let (gw, gq) = piece.eval(t + h / 2.0);
    gen.ket_rhs(gw, gq, decay, range, &w.tmp, &mut w.k);
    for i in r.clone() {
        w.acc[i] += w.k[i] * (h / 3.0);
        w.tmp[i] = psi[i] + w.k[i] * (h / 2.0);
    }
    gen.ket_rhs(gw, gq, decay, range, &w.tmp, &mut w.k);
    for i in r.clone() {
        w.acc[i] += w.k[i] * (h / 3.0);
        w.tmp[i] = psi[i] + w.k[i] * h;
    }
    let (gw, gq) = piece.eval(t + h);
    gen.ket_rhs(gw, gq, decay, range, &w.tmp, &mut w.k);
    for i in r {
        psi[i] = w.acc[i] + w.k[i] * (h / 6.0);
    }
}

/// Recorded catch / release run.
#[derive(Debug, Clone)]
pub struct BathTrace {
    pub times: Vec<f64>,
    pub states: Vec<BathState>,
    pub max_norm_drift: f64,
    /// Largest change of each sector's squared norm.
    pub max_sector_drift: [f64; 3],
}

/// Projections of ψ(t) onto the tilde states and the resonator Fock states.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projections {
    pub time: f64,
    /// ⟨1̃_w, 0_r|ψ⟩.
    pub one_tilde: C64,
    /// ⟨2̃_w, 0_r|ψ⟩.
    pub two_tilde: C64,
    /// ⟨0_w, 1_r|ψ⟩.
    pub resonator_one: C64,
    /// ⟨0_w, 2_r|ψ⟩.
    pub resonator_two: C64,
}

fn normalized_projection(reference: &[C64], state: &[C64]) -> C64 {
    let nr = reference.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
    if nr == 0.0 {
        return ZERO;
    }
    reference.iter().zip(state).map(|(r, s)| r.conj() * s).sum::<C64>() / nr
}

impl BathTrace {
    pub fn final_state(&self) -> &BathState {
        self.states.last().expect("trace has at least one sample")
    }

    /// State at the sample closest to `t`.
    pub fn state_at(&self, t: f64) -> &BathState {
        let k = self
            .times
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - t).abs().total_cmp(&(b.1 - t).abs()))
            .map(|(k, _)| k)
            .unwrap_or(0);
        &self.states[k]
    }

    pub fn projections(&self, input: &BathState, schedule: &CouplerSchedule) -> Vec<Projections> {
        self.times
            .iter()
            .zip(&self.states)
            .map(|(&t, s)| {
                let r = tilde_reference_state(input, t, schedule.t_in(), schedule.t_q());
                Projections {
                    time: t,
                    one_tilde: normalized_projection(r.single_photon(), s.single_photon()),
                    two_tilde: normalized_projection(r.pairs(), s.pairs()),
                    resonator_one: s.resonator_one(),
                    resonator_two: s.resonator_two(),
                }
            })
            .collect()
    }

    /// Writes the four projections as `time_ns` plus Re/Im columns.
    pub fn write_projections_csv<W: Write>(
        &self,
        input: &BathState,
        schedule: &CouplerSchedule,
        writer: W,
    ) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let io = |e: csv::Error| Error::InvalidInput(format!("csv write failed: {e}"));
        w.write_record([
            "time_ns",
            "re_1tilde_0r",
            "im_1tilde_0r",
            "re_2tilde_0r",
            "im_2tilde_0r",
            "re_0w_1r",
            "im_0w_1r",
            "re_0w_2r",
            "im_0w_2r",
        ])
        .map_err(io)?;
        for p in self.projections(input, schedule) {
            let vals = [p.one_tilde, p.two_tilde, p.resonator_one, p.resonator_two];
            let mut rec = vec![format!("{:.6}", p.time)];
            for v in vals {
                rec.push(format!("{:.10e}", v.re));
                rec.push(format!("{:.10e}", v.im));
            }
            w.write_record(&rec).map_err(io)?;
        }
        w.flush().map_err(|e| Error::InvalidInput(format!("csv flush failed: {e}")))?;
        Ok(())
    }
}

/// Closed-system evolution of `state0` under `schedule`, recorded on `grid`.
pub fn propagate_catch_release(
    state0: &BathState,
    schedule: &CouplerSchedule,
    grid: &TimeGrid,
) -> Result<BathTrace> {
    propagate_catch_release_with(state0, schedule, grid, &WaveguideIntegrator::default())
}

pub fn propagate_catch_release_with(
    state0: &BathState,
    schedule: &CouplerSchedule,
    grid: &TimeGrid,
    integ: &WaveguideIntegrator,
) -> Result<BathTrace> {
    if grid.t_start < -1e-12 || grid.t_end > schedule.t_end() + 1e-9 {
        return Err(Error::InvalidGrid(format!(
            "grid [{}, {}] outside the schedule [0, {}]",
            grid.t_start,
            grid.t_end,
            schedule.t_end()
        )));
    }
    let n0 = state0.norm();
    if (n0 - 1.0).abs() > integ.norm_tolerance {
        return Err(Error::InvalidInput(format!("input norm {n0} is not 1")));
    }
    let gen = Generator::new(state0.bath());
    let range = state0.active_range();
    let sectors0 = state0.sector_norms();
    let mut psi = state0.amps.clone();
    let mut work = KetWork::new(gen.dim);
    let sample_times = grid.sample_times();
    let mut times = vec![sample_times[0]];
    let mut states = vec![state0.clone()];
    let mut max_norm_drift: f64 = 0.0;
    let mut max_sector_drift = [0.0f64; 3];
    let mut steps_taken = 0usize;
    for w in sample_times.windows(2) {
        let plan = plan_steps(schedule, w[0], w[1], |gw, gq| gen.norm_bound(&range, gw, gq), integ.ket_phase_step);
        for (t, h, mid) in plan {
            let piece = schedule.piece(mid);
            rk4_ket(&gen, &piece, t, h, None, &range, &mut psi, &mut work);
            steps_taken += 1;
        }
        let s = BathState { bath: state0.bath.clone(), amps: psi.clone() };
        let drift = (s.norm() - 1.0).abs();
        max_norm_drift = max_norm_drift.max(drift);
        if drift > integ.norm_tolerance {
            return Err(Error::NormDrift { drift, tolerance: integ.norm_tolerance });
        }
        for (k, v) in s.sector_norms().iter().enumerate() {
            max_sector_drift[k] = max_sector_drift[k].max((v - sectors0[k]).abs());
        }
        times.push(w[1]);
        states.push(s);
    }
    debug!("catch/release: {steps_taken} RK4 steps, dim {}, norm drift {max_norm_drift:.2e}", gen.dim);
    Ok(BathTrace { times, states, max_norm_drift, max_sector_drift })
}

// ---------------------------------------------------------------------------
// Open system

/// How [`full_ns_fidelity`] treats decoherence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SolverMode {
    /// Full Lindblad master equation; memory grows as the fourth power of N.
    DensityMatrix,
    /// Quantum-jump unraveling averaged over `count` pure-state trajectories.
    Trajectories { count: usize, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaveguideOptions {
    pub mode: SolverMode,
    /// Apply the linear phase shifter and target the textbook NS output.
    pub linear_phase_correction: bool,
    pub memory_budget_bytes: usize,
    pub integrator: WaveguideIntegrator,
}

impl Default for WaveguideOptions {
    fn default() -> Self {
        Self {
            mode: SolverMode::DensityMatrix,
            linear_phase_correction: false,
            memory_budget_bytes: 1 << 30,
            integrator: WaveguideIntegrator::default(),
        }
    }
}

struct DensityWork {
    m: Vec<C64>,
    k: Vec<C64>,
    acc: Vec<C64>,
    tmp: Vec<C64>,
}

impl Generator {
    /// out = −i(Heff ρ − ρ Heff†) + Σ LρL†, ρ row-major.
    fn lindblad_rhs(&self, gw: f64, gq: f64, diss: &Dissipation, rho: &[C64], m: &mut [C64], out: &mut [C64]) {
        let d = self.dim;
        let gw = gw * self.coupling_scale;
        for i in 0..d {
            let c = C64::new(self.diag[i], -0.5 * diss.decay[i]);
            let (src, dst) = (&rho[i * d..(i + 1) * d], &mut m[i * d..(i + 1) * d]);
            for (y, x) in dst.iter_mut().zip(src) {
                *y = x * c;
            }
        }
        let mut add_edge = |i: usize, j: usize, c: f64| {
            for (y, x) in m[i * d..(i + 1) * d].iter_mut().zip(&rho[j * d..(j + 1) * d]) {
                *y += x * c;
            }
            for (y, x) in m[j * d..(j + 1) * d].iter_mut().zip(&rho[i * d..(i + 1) * d]) {
                *y += x * c;
            }
        };
        if gw != 0.0 {
            for &(i, j, w) in &self.edges {
                add_edge(i, j, gw * w);
            }
        }
        if gq != 0.0 {
            add_edge(self.a, self.e, SQRT_2 * gq);
        }
        for i in 0..d {
            for j in i..d {
                let z = m[i * d + j] - m[j * d + i].conj();
                let v = C64::new(z.im, -z.re);
                out[i * d + j] = v;
                out[j * d + i] = v.conj();
            }
        }
        let kappa = diss.noise.kappa;
        if kappa > 0.0 {
            for &(t1, f1, c1) in &diss.lower {
                for &(t2, f2, c2) in &diss.lower {
                    out[t1 * d + t2] += rho[f1 * d + f2] * (kappa * c1 * c2);
                }
            }
        }
        let e = diss.e;
        if diss.noise.gamma > 0.0 {
            out[0] += rho[e * d + e] * diss.noise.gamma;
        }
        // σ_z is −1 everywhere except on E, so dephasing only damps row and
        // column E: (γ_φ/2)(s_i s_j − 1) = −γ_φ there.
        let gp = diss.noise.gamma_phi;
        if gp > 0.0 {
            for j in 0..d {
                if j != e {
                    out[e * d + j] -= rho[e * d + j] * gp;
                    out[j * d + e] -= rho[j * d + e] * gp;
                }
            }
        }
    }
}

fn rk4_density(
    gen: &Generator,
    diss: &Dissipation,
    piece: &Piece,
    t: f64,
    h: f64,
    rho: &mut Vec<C64>,
    w: &mut DensityWork,
) {
    let (gw, gq) = piece.eval(t);
    gen.lindblad_rhs(gw, gq, diss, rho, &mut w.m, &mut w.k);
    for ((a, t), (r, k)) in w.acc.iter_mut().zip(w.tmp.iter_mut()).zip(rho.iter().zip(&w.k)) {
        *a = r + k * (h / 6.0);
        *t = r + k * (h / 2.0);
    }
    let (gw, gq) = piece.eval(t + h / 2.0);
    gen.lindblad_rhs(gw, gq, diss, &w.tmp, &mut w.m, &mut w.k);
    for ((a, t), (r, k)) in w.acc.iter_mut().zip(w.tmp.iter_mut()).zip(rho.iter().zip(&w.k)) {
        *a += k * (h / 3.0);
        *t = r + k * (h / 2.0);
    }
    gen.lindblad_rhs(gw, gq, diss, &w.tmp, &mut w.m, &mut w.k);
    for ((a, t), (r, k)) in w.acc.iter_mut().zip(w.tmp.iter_mut()).zip(rho.iter().zip(&w.k)) {
        *a += k * (h / 3.0);
        *t = r + k * h;
    }
    let (gw, gq) = piece.eval(t + h);
    gen.lindblad_rhs(gw, gq, diss, &w.tmp, &mut w.m, &mut w.k);
    for (r, (a, k)) in rho.iter_mut().zip(w.acc.iter().zip(&w.k)) {
        *r = a + k * (h / 6.0);
    }
}

/// Final density matrix (row-major) of the open catch / release run.
fn evolve_density(
    input: &BathState,
    schedule: &CouplerSchedule,
    noise: NoiseParams,
    opts: &WaveguideOptions,
) -> Result<Vec<C64>> {
    let bath = input.bath();
    let required = bath.density_memory_bytes();
    if required > opts.memory_budget_bytes {
        return Err(Error::MemoryBudget {
            dimension: bath.dim(),
            required_bytes: required,
            budget_bytes: opts.memory_budget_bytes,
        });
    }
    let d = bath.dim();
    let gen = Generator::new(bath);
    let diss = Dissipation::new(bath, noise);
    let mut rho = vec![ZERO; d * d];
    for i in 0..d {
        for j in 0..d {
            rho[i * d + j] = input.amps[i] * input.amps[j].conj();
        }
    }
    let mut w = DensityWork { m: vec![ZERO; d * d], k: vec![ZERO; d * d], acc: vec![ZERO; d * d], tmp: vec![ZERO; d * d] };
    let full = 0..d;
    let rate = diss.max_rate();
    let plan = plan_steps(
        schedule,
        0.0,
        schedule.t_end(),
        |gw, gq| 2.0 * gen.norm_bound(&full, gw, gq) + rate,
        opts.integrator.density_phase_step,
    );
    debug!("density catch/release: dim {d}, {} RK4 steps", plan.len());
    let check_every = (plan.len() / 20).max(1);
    for (step, (t, h, mid)) in plan.iter().enumerate() {
        rk4_density(&gen, &diss, &schedule.piece(*mid), *t, *h, &mut rho, &mut w);
        if step % check_every == 0 || step + 1 == plan.len() {
            let tr: f64 = (0..d).map(|i| rho[i * d + i].re).sum();
            if (tr - 1.0).abs() > opts.integrator.trace_tolerance {
                return Err(Error::InvalidDensityMatrix(format!("trace drifted to {tr}")));
            }
        }
    }
    if opts.integrator.check_positivity {
        let mat = DMatrix::from_row_slice(d, d, &rho);
        let min = mat.symmetric_eigenvalues().iter().cloned().fold(f64::INFINITY, f64::min);
        if min < -opts.integrator.positivity_tolerance {
            return Err(Error::InvalidDensityMatrix(format!("negative eigenvalue {min:.3e}")));
        }
    }
    Ok(rho)
}

/// ⟨ψ|ρ|ψ⟩ for row-major ρ.
fn density_fidelity(rho: &[C64], psi: &[C64]) -> f64 {
    let d = psi.len();
    let mut f = ZERO;
    for i in 0..d {
        if psi[i] == ZERO {
            continue;
        }
        let row: C64 = rho[i * d..(i + 1) * d].iter().zip(psi).map(|(r, p)| r * p).sum();
        f += psi[i].conj() * row;
    }
    f.norm()
}

struct TrajectoryStats {
    mean: f64,
    std_error: f64,
    mean_jumps: f64,
}

fn run_trajectories(
    input: &BathState,
    schedule: &CouplerSchedule,
    noise: NoiseParams,
    target: &BathState,
    count: usize,
    seed: u64,
    integ: &WaveguideIntegrator,
) -> Result<TrajectoryStats> {
    if count == 0 {
        return Err(Error::InvalidParameter("trajectory count must be positive".into()));
    }
    let bath = input.bath();
    let gen = Generator::new(bath);
    let diss = Dissipation::new(bath, noise);
    let decay = diss.ket_decay();
    let mut work = KetWork::new(gen.dim);
    let full = 0..gen.dim;
    let rate = diss.max_rate();
    let plan = plan_steps(
        schedule,
        0.0,
        schedule.t_end(),
        |gw, gq| gen.norm_bound(&full, gw, gq) + rate,
        integ.ket_phase_step,
    );
    let mut fids = Vec::with_capacity(count);
    let mut jumps_total = 0usize;
    for k in 0..count {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(k as u64);
        let mut psi = input.amps.clone();
        let mut range = input.active_range();
        let mut threshold: f64 = rng.random();
        for (t, h, mid) in &plan {
            rk4_ket(&gen, &schedule.piece(*mid), *t, *h, Some(&decay), &range, &mut psi, &mut work);
            let p: f64 = psi[range.clone()].iter().map(|a| a.norm_sqr()).sum();
            if p < threshold {
                jump(&diss, bath, &mut psi, &mut rng)?;
                jumps_total += 1;
                range = active_range(bath, &psi);
                threshold = rng.random();
            }
        }
        let nrm: f64 = psi.iter().map(|a| a.norm_sqr()).sum();
        let ip: C64 = target.amps.iter().zip(&psi).map(|(a, b)| a.conj() * b).sum();
        fids.push(ip.norm_sqr() / nrm);
    }
    let n = fids.len() as f64;
    let mean = fids.iter().sum::<f64>() / n;
    let var = if fids.len() > 1 { fids.iter().map(|f| (f - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    Ok(TrajectoryStats { mean, std_error: (var / n).sqrt(), mean_jumps: jumps_total as f64 / n })
}

/// Applies one randomly chosen jump and renormalizes.
fn jump(diss: &Dissipation, bath: &BathDiscretization, psi: &mut [C64], rng: &mut ChaCha8Rng) -> Result<()> {
    let e = bath.e();
    let w_kappa: f64 = diss.noise.kappa * diss.lower.iter().map(|&(_, f, c)| c * c * psi[f].norm_sqr()).sum::<f64>();
    let w_gamma = diss.noise.gamma * psi[e].norm_sqr();
    let w_phi = 0.5 * diss.noise.gamma_phi * psi.iter().map(|a| a.norm_sqr()).sum::<f64>();
    let total = w_kappa + w_gamma + w_phi;
    if !(total > 0.0) {
        return Err(Error::Convergence("jump requested with zero jump weight".into()));
    }
    let r = rng.random::<f64>() * total;
    if r < w_kappa {
        let mut out = vec![ZERO; psi.len()];
        for &(t, f, c) in &diss.lower {
            out[t] += psi[f] * c;
        }
        psi.copy_from_slice(&out);
    } else if r < w_kappa + w_gamma {
        let v = psi[e];
        psi.iter_mut().for_each(|a| *a = ZERO);
        psi[BathDiscretization::VAC] = v;
    } else {
        for (k, a) in psi.iter_mut().enumerate() {
            if k != e {
                *a = -*a;
            }
        }
    }
    let nrm = psi.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
    psi.iter_mut().for_each(|a| *a /= nrm);
    Ok(())
}

/// End-to-end NS fidelity |⟨ψ_ideal|ρ_out|ψ_ideal⟩| of the full catch /
/// interact / release process under decoherence.
pub fn full_ns_fidelity(
    schedule: &CouplerSchedule,
    noise: NoiseParams,
    input: &BathState,
    opts: &WaveguideOptions,
) -> Result<GateReport> {
    let n0 = input.norm();
    if (n0 - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidInput(format!("input norm {n0} is not 1")));
    }
    let t_end = schedule.t_end();
    let corrected = opts.linear_phase_correction;
    let target = ideal_output(input, schedule, t_end, corrected);
    // The phase shifter acts on the output, so pull it back onto the target.
    let target_lab = if corrected { apply_linear_phase(&target) } else { target };
    let bath = input.bath();
    let mut metrics = BTreeMap::new();
    metrics.insert("modes".to_string(), bath.n as f64);
    metrics.insert("dimension".to_string(), bath.dim() as f64);
    let fidelity = match opts.mode {
        SolverMode::DensityMatrix => {
            let rho = evolve_density(input, schedule, noise, opts)?;
            density_fidelity(&rho, &target_lab.amps)
        }
        SolverMode::Trajectories { count, seed } => {
            let stats = run_trajectories(input, schedule, noise, &target_lab, count, seed, &opts.integrator)?;
            metrics.insert("trajectories".to_string(), count as f64);
            metrics.insert("fidelity_std_error".to_string(), stats.std_error);
            metrics.insert("mean_jumps".to_string(), stats.mean_jumps);
            stats.mean
        }
    };
    if bath.n < 10 {
        warn!("bath with only {} modes; overlaps will be far from converged", bath.n);
    }
    let params = serde_json::json!({
        "modes": bath.n,
        "delta_omega": bath.delta_omega,
        "kappa_per_ns": noise.kappa,
        "gamma_per_ns": noise.gamma,
        "gamma_phi_per_ns": noise.gamma_phi,
        "mode": opts.mode,
        "linear_phase_correction": corrected,
        "schedule": schedule,
    });
    Ok(GateReport {
        protocol: "catch-release".into(),
        params,
        gate_time_ns: t_end,
        fidelity,
        trace_file: None,
        metrics,
        trace: None,
        final_state: None,
    })
}

/// F as one rate at a time is swept with the others held at `base`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelityCurves {
    /// ns⁻¹.
    pub rates: Vec<f64>,
    pub kappa: Vec<f64>,
    pub gamma: Vec<f64>,
    pub gamma_phi: Vec<f64>,
}

impl FidelityCurves {
    /// Least-squares dF/d(rate) for (κ, γ, γ_φ).
    pub fn slopes(&self) -> (f64, f64, f64) {
        let slope = |ys: &[f64]| {
            let n = self.rates.len() as f64;
            let mx = self.rates.iter().sum::<f64>() / n;
            let my = ys.iter().sum::<f64>() / n;
            let sxy: f64 = self.rates.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
            let sxx: f64 = self.rates.iter().map(|x| (x - mx).powi(2)).sum();
            sxy / sxx
        };
        (slope(&self.kappa), slope(&self.gamma), slope(&self.gamma_phi))
    }
}

pub fn fidelity_curves(
    schedule: &CouplerSchedule,
    input: &BathState,
    base: NoiseParams,
    rates: &[f64],
    opts: &WaveguideOptions,
) -> Result<FidelityCurves> {
    if rates.len() < 2 {
        return Err(Error::InvalidParameter("need at least two rates".into()));
    }
    let run = |n: NoiseParams| full_ns_fidelity(schedule, n, input, opts).map(|r| r.fidelity);
    let mut curves = FidelityCurves { rates: rates.to_vec(), kappa: vec![], gamma: vec![], gamma_phi: vec![] };
    for &r in rates {
        curves.kappa.push(run(NoiseParams::new(r, base.gamma, base.gamma_phi)?)?);
        curves.gamma.push(run(NoiseParams::new(base.kappa, r, base.gamma_phi)?)?);
        curves.gamma_phi.push(run(NoiseParams::new(base.kappa, base.gamma, r)?)?);
    }
    Ok(curves)
}

/// Releases a perfectly caught photon (resonator in |1⟩) with the catch
/// profile mirrored in time over `window` ns, and returns the overlap of the
/// emitted waveform with the time-reversed input packet.
pub fn time_reversal_overlap(
    spec: &WavepacketSpec,
    bath: &BathDiscretization,
    catch_amplitude: f64,
    catch_rate: f64,
    window: f64,
) -> Result<f64> {
    let mirrored = Shape::Exponential {
        amplitude: catch_amplitude * (-catch_rate * window).exp(),
        rate: -catch_rate,
    };
    let schedule = CouplerSchedule::new(vec![Segment::new(0.0, window, mirrored)], None)?;
    let mut start = BathState::zeros(bath);
    start.amps[BathDiscretization::R1] = C64::new(1.0, 0.0);
    let trace = propagate_catch_release(&start, &schedule, &TimeGrid::endpoint(window)?)?;
    let input = build_lorentzian_input(spec, [ZERO, C64::new(1.0, 0.0), ZERO], bath)?;
    let mut reversed = input.clone();
    reversed.amps.iter_mut().for_each(|a| *a = a.conj());
    waveform_overlap(trace.final_state(), &reversed, Sector::One)
}

// ---------------------------------------------------------------------------
// Schedule optimization

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// |⟨1_r, 0_w|ψ(t_in)⟩|² for a single-photon input.
    CatchPopulation,
    /// |⟨1̃|ψ(t_end)⟩| for a single-photon input, not renormalized, so photons
    /// left in the resonator count against it.
    ReleaseOverlap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleParam {
    CatchAmplitude,
    CatchRate,
    ReleasePlateau,
    ReleaseRamp,
}

impl ScheduleParam {
    fn get(self, p: &ScheduleParams) -> f64 {
        match self {
            ScheduleParam::CatchAmplitude => p.catch_amplitude,
            ScheduleParam::CatchRate => p.catch_rate,
            ScheduleParam::ReleasePlateau => p.release_plateau,
            ScheduleParam::ReleaseRamp => p.ramp,
        }
    }

    fn set(self, p: &mut ScheduleParams, v: f64) {
        match self {
            ScheduleParam::CatchAmplitude => p.catch_amplitude = v,
            ScheduleParam::CatchRate => p.catch_rate = v,
            ScheduleParam::ReleasePlateau => p.release_plateau = v,
            ScheduleParam::ReleaseRamp => p.ramp = v,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamBound {
    pub param: ScheduleParam,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationSettings {
    pub max_iterations: u64,
    /// Simplex standard-deviation tolerance on the objective.
    pub tolerance: f64,
}

impl Default for OptimizationSettings {
    fn default() -> Self {
        Self { max_iterations: 200, tolerance: 1e-9 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptimizedSchedule {
    pub params: ScheduleParams,
    pub schedule: CouplerSchedule,
    pub initial_objective: f64,
    pub objective: f64,
    pub evaluations: usize,
    /// The best point sits on a bound, so the bounds may be limiting.
    pub at_bound: bool,
}

/// Evaluates `objective` for a single-photon packet on `bath`.
pub fn evaluate_objective(
    objective: Objective,
    params: &ScheduleParams,
    spec: &WavepacketSpec,
    bath: &BathDiscretization,
) -> Result<f64> {
    let schedule = params.build()?;
    let input = build_lorentzian_input(spec, [ZERO, C64::new(1.0, 0.0), ZERO], bath)?;
    match objective {
        Objective::CatchPopulation => {
            let trace = propagate_catch_release(&input, &schedule, &TimeGrid::endpoint(params.t_in)?)?;
            Ok(trace.final_state().resonator_one().norm_sqr())
        }
        Objective::ReleaseOverlap => {
            let t = schedule.t_end();
            let trace = propagate_catch_release(&input, &schedule, &TimeGrid::endpoint(t)?)?;
            let r = tilde_reference_state(&input, t, schedule.t_in(), schedule.t_q());
            Ok(normalized_projection(r.single_photon(), trace.final_state().single_photon()).norm())
        }
    }
}

struct NegObjective<'a> {
    objective: Objective,
    base: ScheduleParams,
    free: Vec<ParamBound>,
    spec: &'a WavepacketSpec,
    bath: &'a BathDiscretization,
    evaluations: Cell<usize>,
}

impl NegObjective<'_> {
    /// Maps unit-box coordinates (clamped) onto schedule parameters.
    fn params_at(&self, x: &[f64]) -> ScheduleParams {
        let mut p = self.base;
        for (b, &u) in self.free.iter().zip(x) {
            let u = u.clamp(0.0, 1.0);
            b.param.set(&mut p, b.lower + u * (b.upper - b.lower));
        }
        p
    }
}

impl CostFunction for NegObjective<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, x: &Self::Param) -> std::result::Result<f64, argmin::core::Error> {
        self.evaluations.set(self.evaluations.get() + 1);
        let p = self.params_at(x);
        let v = evaluate_objective(self.objective, &p, self.spec, self.bath)
            .map_err(|e| argmin::core::Error::msg(e.to_string()))?;
        // Leaving the box costs a penalty so the simplex walks back inside.
        let outside: f64 = x.iter().map(|u| (u - u.clamp(0.0, 1.0)).abs()).sum();
        Ok(-v + outside)
    }
}

/// Nelder-Mead over at most four schedule parameters inside `bounds`. The
/// result never scores below the (clamped) initial schedule.
pub fn optimize_schedule(
    objective: Objective,
    initial: &ScheduleParams,
    bounds: &[ParamBound],
    spec: &WavepacketSpec,
    bath: &BathDiscretization,
    settings: &OptimizationSettings,
) -> Result<OptimizedSchedule> {
    if bounds.len() > 4 {
        return Err(Error::InvalidParameter("at most four schedule parameters can be optimized".into()));
    }
    let mut base = *initial;
    for b in bounds {
        if !(b.upper >= b.lower) || !b.lower.is_finite() || !b.upper.is_finite() {
            return Err(Error::InvalidParameter(format!("bad bounds for {:?}", b.param)));
        }
        b.param.set(&mut base, b.param.get(initial).clamp(b.lower, b.upper));
    }
    let free: Vec<ParamBound> = bounds.iter().copied().filter(|b| b.upper > b.lower).collect();
    let initial_objective = evaluate_objective(objective, &base, spec, bath)?;
    let done = |params: ScheduleParams, value: f64, evaluations: usize, at_bound: bool| -> Result<OptimizedSchedule> {
        Ok(OptimizedSchedule {
            schedule: params.build()?,
            params,
            initial_objective,
            objective: value,
            evaluations,
            at_bound,
        })
    };
    if free.is_empty() {
        return done(base, initial_objective, 1, false);
    }
    let x0: Vec<f64> = free.iter().map(|b| (b.param.get(&base) - b.lower) / (b.upper - b.lower)).collect();
    let mut simplex = vec![x0.clone()];
    for k in 0..x0.len() {
        let mut v = x0.clone();
        v[k] = if v[k] > 0.5 { v[k] - 0.2 } else { v[k] + 0.2 };
        simplex.push(v);
    }
    let cost = NegObjective { objective, base, free: free.clone(), spec, bath, evaluations: Cell::new(1) };
    let solver = NelderMead::new(simplex)
        .with_sd_tolerance(settings.tolerance)
        .map_err(|e| Error::Convergence(e.to_string()))?;
    let res = Executor::new(cost, solver)
        .configure(|s| s.max_iters(settings.max_iterations))
        .run()
        .map_err(|e| Error::Convergence(e.to_string()))?;
    let state = res.state();
    let best = state.best_param.clone().unwrap_or(x0);
    let evaluations = res.problem.problem.as_ref().map(|p| p.evaluations.get()).unwrap_or(0);
    let best_params = NegObjective { objective, base, free: free.clone(), spec, bath, evaluations: Cell::new(0) }
        .params_at(&best);
    let value = evaluate_objective(objective, &best_params, spec, bath)?;
    let at_bound = best.iter().any(|u| *u <= 1e-6 || *u >= 1.0 - 1e-6);
    if value < initial_objective {
        return done(base, initial_objective, evaluations, at_bound);
    }
    done(best_params, value, evaluations, at_bound)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn small_bath(n: usize) -> BathDiscretization {
        BathDiscretization::new(&WavepacketSpec::narrow(), n).unwrap()
    }

    fn third() -> [C64; 3] {
        let a = C64::new(1.0 / 3f64.sqrt(), 0.0);
        [a, a, a]
    }

    #[test]
    fn layout_dimension_and_indices() {
        let b = small_bath(5);
        assert_eq!(b.dim(), 15 + 10 + 4);
        assert_eq!(b.c(4, 4) + 1, b.e());
        assert_eq!(b.c(1, 3), b.c(3, 1));
        assert_eq!(b.a(), b.b1(4) + 1);
        assert_eq!(b.sector_range(2).end, b.dim());
    }

    #[test]
    fn grid_is_symmetric_with_spacing() {
        let spec = WavepacketSpec::narrow();
        let b = BathDiscretization::new(&spec, 100).unwrap();
        assert_relative_eq!(b.delta_omega, 5.0 * 0.02 / 100.0, epsilon = 1e-15);
        for m in 0..100 {
            assert_relative_eq!(b.detunings[m], -b.detunings[99 - m], epsilon = 1e-15);
        }
        assert_relative_eq!(b.coupling_scale, 1.0);
    }

    #[test]
    fn vacuum_input() {
        let b = small_bath(6);
        let s = build_lorentzian_input(&WavepacketSpec::narrow(), [C64::new(1.0, 0.0), ZERO, ZERO], &b).unwrap();
        assert_eq!(s, BathState::vacuum(&b));
    }

    #[test]
    fn unnormalized_alphas_rejected() {
        let b = small_bath(4);
        let one = C64::new(1.0, 0.0);
        assert!(matches!(
            build_lorentzian_input(&WavepacketSpec::narrow(), [one, one, ZERO], &b),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn input_sectors_are_normalized() {
        let b = small_bath(12);
        let s = build_lorentzian_input(&WavepacketSpec::narrow(), third(), &b).unwrap();
        let n = s.sector_norms();
        for v in n {
            assert_relative_eq!(v, 1.0 / 3.0, epsilon = 1e-12);
        }
        // Product form: C_ij = √2 f_i f_j / ‖·‖ off the diagonal.
        let f = s.single_photon();
        let ratio = s.pair(3, 1) / (f[3] * f[1]);
        let diag = s.pair(2, 2) / (f[2] * f[2]);
        assert_relative_eq!((ratio / diag).re, SQRT_2, epsilon = 1e-12);
    }

    #[test]
    fn triangle_area_is_ns_condition() {
        let tri = Triangle::new(10.0, ghz(0.25)).unwrap();
        assert_relative_eq!(SQRT_2 * tri.area(), PI, epsilon = 1e-12);
        assert_relative_eq!(tri.duration(), 2.0f64.sqrt() / 0.5, epsilon = 1e-12);
        assert_eq!(tri.value(10.0), 0.0);
        assert_relative_eq!(tri.value(10.0 + tri.duration() / 2.0), ghz(0.25), epsilon = 1e-12);
    }

    #[test]
    fn schedule_gap_rejected() {
        let segs = vec![
            Segment::new(0.0, 10.0, Shape::Constant { value: 0.01 }),
            Segment::new(11.0, 20.0, Shape::Zero),
        ];
        assert!(matches!(CouplerSchedule::new(segs, None), Err(Error::InvalidSchedule(_))));
        let neg = vec![Segment::new(0.0, 10.0, Shape::Ramp { from: 0.0, to: -1.0 })];
        assert!(matches!(CouplerSchedule::new(neg, None), Err(Error::InvalidSchedule(_))));
    }

    #[test]
    fn reference_schedule_values() {
        let s = ScheduleParams::narrow().build().unwrap();
        assert_relative_eq!(s.g_wr(0.0), mhz(1.07), epsilon = 1e-15);
        assert_relative_eq!(s.g_wr(30.0), mhz(1.07) * (-0.0333f64 * 30.0).exp(), epsilon = 1e-15);
        assert_eq!(s.g_wr(101.0), 0.0);
        assert_relative_eq!(s.g_wr(200.0), mhz(0.35), epsilon = 1e-15);
        assert_relative_eq!(s.t_q(), 2.0f64.sqrt() * PI / ghz(0.25), epsilon = 1e-12);
        assert!(s.g_rq(s.t_in() + 1.0) > 0.0);
    }

    #[test]
    fn schedule_file_round_trip() {
        let s = ScheduleParams::wide().build().unwrap();
        let file = s.to_file(FrequencyUnit::MhzOver2Pi);
        let json = serde_json::to_string(&file).unwrap();
        assert!(json.contains("\"type\":\"exponential\""));
        let back: ScheduleFile = serde_json::from_str(&json).unwrap();
        let s2 = back.to_schedule().unwrap();
        for t in [0.0, 5.0, 20.5, 23.0, 50.0] {
            assert_relative_eq!(s.g_wr(t), s2.g_wr(t), epsilon = 1e-14);
            assert_relative_eq!(s.g_rq(t), s2.g_rq(t), epsilon = 1e-12);
        }
    }

    #[test]
    fn free_evolution_is_pure_phase() {
        let b = small_bath(8);
        let spec = WavepacketSpec::narrow();
        let input = build_lorentzian_input(&spec, third(), &b).unwrap();
        let segs = vec![Segment::new(0.0, 40.0, Shape::Zero)];
        let sched = CouplerSchedule::new(segs, None).unwrap();
        let trace = propagate_catch_release(&input, &sched, &TimeGrid::sampled(40.0, 4).unwrap()).unwrap();
        let out = trace.final_state();
        let expect = free_evolve(&input, 40.0);
        for (a, e) in out.amplitudes().iter().zip(expect.amplitudes()) {
            assert!((a - e).norm() < 1e-7);
        }
    }

    #[test]
    fn triangle_flips_two_photon_resonator_state() {
        let b = small_bath(3);
        let mut s = BathState::zeros(&b);
        s.amps[b.a()] = C64::new(1.0, 0.0);
        let p = ScheduleParams { t_in: 1.0, ..ScheduleParams::narrow() };
        let tri = Triangle::new(1.0, p.g0).unwrap();
        let segs = vec![Segment::new(0.0, tri.t_end() + 1.0, Shape::Zero)];
        let sched = CouplerSchedule::new(segs, Some(tri)).unwrap();
        let trace = propagate_catch_release(&s, &sched, &TimeGrid::endpoint(sched.t_end()).unwrap()).unwrap();
        let a = trace.final_state().resonator_two();
        assert!((a - C64::new(-1.0, 0.0)).norm() < 1e-8, "{a}");
    }

    #[test]
    fn linear_phase_is_involution() {
        let b = small_bath(5);
        let s = build_lorentzian_input(&WavepacketSpec::narrow(), third(), &b).unwrap();
        assert_eq!(apply_linear_phase(&apply_linear_phase(&s)), s);
        assert_eq!(apply_linear_phase(&s).single_photon()[0], -s.single_photon()[0]);
    }

    #[test]
    fn overlap_of_identical_states_is_one() {
        let b = small_bath(6);
        let s = build_lorentzian_input(&WavepacketSpec::wide(), third(), &b).unwrap();
        assert_relative_eq!(waveform_overlap(&s, &s, Sector::One).unwrap(), 1.0, epsilon = 1e-12);
        assert_relative_eq!(waveform_overlap(&s, &s, Sector::Two).unwrap(), 1.0, epsilon = 1e-12);
        let v = BathState::vacuum(&b);
        assert!(matches!(waveform_overlap(&v, &s, Sector::One), Err(Error::EmptySector(_))));
    }

    #[test]
    fn memory_budget_is_enforced() {
        let spec = WavepacketSpec::narrow();
        let b = BathDiscretization::new(&spec, 100).unwrap();
        let input = build_lorentzian_input(&spec, third(), &b).unwrap();
        let sched = ScheduleParams::narrow().build().unwrap();
        let err = full_ns_fidelity(&sched, NoiseParams::zero(), &input, &WaveguideOptions::default()).unwrap_err();
        assert!(matches!(err, Error::MemoryBudget { .. }));
        assert!(err.to_string().contains("reduce the number of bath modes"));
    }

    #[test]
    fn zero_width_bounds_return_initial() {
        let spec = WavepacketSpec::narrow();
        let b = BathDiscretization::new(&spec, 20).unwrap();
        let p = ScheduleParams::narrow();
        let bounds = [ParamBound { param: ScheduleParam::CatchRate, lower: p.catch_rate, upper: p.catch_rate }];
        let r = optimize_schedule(Objective::CatchPopulation, &p, &bounds, &spec, &b, &Default::default()).unwrap();
        assert_eq!(r.params, p);
        assert_eq!(r.objective, r.initial_objective);
    }
}
