//! Hamiltonians of the two-photon Rabi family and the solvers that tune each
//! NS protocol onto resonance.
//!
//! Builders act on a [`Space`] made of rails: mode `i` is paired with qubit
//! `i`, and the returned Hamiltonian is the sum of one copy per rail. A single
//! mode plus a single qubit is one rail; two modes plus two qubits is the
//! two-rail C-Z register.

use std::f64::consts::PI;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hilbert::{ladder_ops, number_op, qubit_op, CMatrix, OperatorMatrix, QubitOp, Space};
use crate::units::{self, Frequency};
use crate::C64;

/// Photon-number bound used for validity thresholds; gate inputs hold at
/// most two photons.
pub const N_BAR: f64 = 2.0;

/// Relative tolerance on the Bloch-Siegert resonance condition.
pub const RESONANCE_TOL: f64 = 1e-9;

/// Resonator frequency, qubit frequency and coupling, all in rad/ns.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SystemParams {
    pub omega_r: f64,
    pub omega_q: f64,
    pub g: f64,
}

impl SystemParams {
    pub fn new(omega_r: f64, omega_q: f64, g: f64) -> Result<Self> {
        for (name, v) in [("omega_r", omega_r), ("omega_q", omega_q)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        if !(g.is_finite() && g >= 0.0) {
            return Err(Error::InvalidParameter(format!("g must be non-negative, got {g}")));
        }
        Ok(Self { omega_r, omega_q, g })
    }

    /// ω_r/2π = 5 GHz, ω_q = 2ω_r, g/2π = 0.25 GHz.
    pub fn strong_coupling_default() -> Self {
        Self { omega_r: units::ghz(5.0), omega_q: units::ghz(10.0), g: units::ghz(0.25) }
    }

    /// δ = ω_q − 2ω_r.
    pub fn delta(&self) -> f64 {
        self.omega_q - 2.0 * self.omega_r
    }

    /// Resonant NS time π/(√2 g) of the strong-coupling protocol.
    pub fn sc_gate_time(&self) -> f64 {
        PI / (2f64.sqrt() * self.g)
    }

    pub fn with_g(self, g: f64) -> Self {
        Self { g, ..self }
    }

    pub fn with_omega_q(self, omega_q: f64) -> Self {
        Self { omega_q, ..self }
    }
}

/// [`SystemParams`] as written in config files, with unit tags.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    pub omega_r: Frequency,
    pub omega_q: Frequency,
    pub g: Frequency,
}

impl SystemConfig {
    pub fn to_params(&self) -> Result<SystemParams> {
        SystemParams::new(self.omega_r.angular(), self.omega_q.angular(), self.g.angular())
    }
}

impl From<SystemParams> for SystemConfig {
    fn from(p: SystemParams) -> Self {
        Self {
            omega_r: Frequency::ghz(units::to_ghz(p.omega_r)),
            omega_q: Frequency::ghz(units::to_ghz(p.omega_q)),
            g: Frequency::ghz(units::to_ghz(p.g)),
        }
    }
}

/// Operators of one rail, as dense matrices on the full space.
struct RailOps {
    a: CMatrix,
    ad: CMatrix,
    n: CMatrix,
    sp: CMatrix,
    sm: CMatrix,
    sz: CMatrix,
}

impl RailOps {
    fn new(space: &Space, rail: usize) -> Result<Self> {
        let (a, ad) = ladder_ops(space, rail)?;
        Ok(Self {
            a: a.into_matrix(),
            ad: ad.into_matrix(),
            n: number_op(space, rail)?.into_matrix(),
            sp: qubit_op(space, rail, QubitOp::Raise)?.into_matrix(),
            sm: qubit_op(space, rail, QubitOp::Lower)?.into_matrix(),
            sz: qubit_op(space, rail, QubitOp::Z)?.into_matrix(),
        })
    }

    fn a2(&self) -> CMatrix {
        &self.a * &self.a
    }

    fn ad2(&self) -> CMatrix {
        &self.ad * &self.ad
    }

    /// σ_z(a†a + (a†a)²)
    fn kerr(&self) -> CMatrix {
        &self.sz * (&self.n + &self.n * &self.n)
    }
}

fn rail_count(space: &Space, min_cutoff: usize) -> Result<usize> {
    if space.modes() == 0 || space.modes() != space.qubits() {
        return Err(Error::WrongSpaceShape(format!(
            "expected one qubit per mode, got {} modes and {} qubits",
            space.modes(),
            space.qubits()
        )));
    }
    if let Some(&cutoff) = space.mode_cutoffs().iter().find(|&&c| c < min_cutoff) {
        return Err(Error::CutoffTooSmall { cutoff, required: min_cutoff });
    }
    Ok(space.modes())
}

fn sum_rails(
    space: &Space,
    min_cutoff: usize,
    per_rail: impl Fn(&RailOps) -> CMatrix,
) -> Result<OperatorMatrix> {
    let rails = rail_count(space, min_cutoff)?;
    let dim = space.dim();
    let mut h = CMatrix::zeros(dim, dim);
    for rail in 0..rails {
        h += per_rail(&RailOps::new(space, rail)?);
    }
    // round-off in products can leave ~1e-16 asymmetry; symmetrize so the
    // Hermitian flag is exact
    let h = (&h + h.adjoint()) * C64::from(0.5);
    OperatorMatrix::new(space.clone(), h)
}

fn re(x: f64) -> C64 {
    C64::from(x)
}

/// H = ω_r a†a + (ω_q/2)σ_z + g(σ₊a² + σ₋a†²)
pub fn h_2jc(p: &SystemParams, space: &Space) -> Result<OperatorMatrix> {
    sum_rails(space, 2, |o| {
        &o.n * re(p.omega_r)
            + &o.sz * re(p.omega_q / 2.0)
            + (&o.sp * o.a2() + &o.sm * o.ad2()) * re(p.g)
    })
}

/// g(σ₊a²e^{iδt} + σ₋a†²e^{−iδt}), the two-photon JC model in the frame of
/// ω_r a†a + (ω_q/2)σ_z.
pub fn h_2jc_interaction(p: &SystemParams, space: &Space, t: f64) -> Result<OperatorMatrix> {
    let phase = C64::from_polar(1.0, p.delta() * t);
    sum_rails(space, 2, |o| {
        (&o.sp * o.a2() * phase + &o.sm * o.ad2() * phase.conj()) * re(p.g)
    })
}

/// Full two-photon Rabi model ω_r a†a + (ω_q/2)σ_z + gσ_x(a² + a†²).
pub fn h_2qrm(p: &SystemParams, space: &Space) -> Result<OperatorMatrix> {
    if space.mode_cutoffs().iter().any(|&c| c < 4) {
        warn!("two-photon Rabi model with cutoff below 4 drops counter-rotating couplings");
    }
    sum_rails(space, 2, |o| {
        let sx = &o.sp + &o.sm;
        &o.n * re(p.omega_r) + &o.sz * re(p.omega_q / 2.0) + sx * (o.a2() + o.ad2()) * re(p.g)
    })
}

/// ω_2BS = 2g²/(2ω_r + ω_q)
pub fn omega_2bs(p: &SystemParams) -> f64 {
    2.0 * p.g * p.g / (2.0 * p.omega_r + p.omega_q)
}

/// Ω_q = 2g²/ω_q
pub fn omega_q_shift(p: &SystemParams) -> f64 {
    2.0 * p.g * p.g / p.omega_q
}

/// Bloch-Siegert Hamiltonian
/// H_2JC − ω_2BS a†a + (ω_2BS/2 + Ω_q/2)σ_z + (ω_2BS/2 + 2Ω_q)σ_z(a†a + (a†a)²).
pub fn h_2bs(p: &SystemParams, space: &Space) -> Result<OperatorMatrix> {
    let ratio = p.g * (N_BAR + 1.0) / p.omega_q.min(p.omega_q + 2.0 * p.omega_r);
    if ratio > 0.3 {
        warn!("Bloch-Siegert expansion outside its range: g(n+1)/omega_q = {ratio:.3}");
    }
    let w2 = omega_2bs(p);
    let oq = omega_q_shift(p);
    let h_jc = h_2jc(p, space)?;
    let shifts = sum_rails(space, 2, |o| {
        &o.n * re(-w2) + &o.sz * re(w2 / 2.0 + oq / 2.0) + o.kerr() * re(w2 / 2.0 + 2.0 * oq)
    })?;
    h_jc.add(&shifts)
}

/// Left side of the k–r resonance relation, k/(3 + (−1)^{k+1}).
pub fn pusc_resonance_lhs(k: u32) -> f64 {
    let parity = if k % 2 == 1 { 4.0 } else { 2.0 };
    k as f64 / parity
}

/// Right side of the k–r resonance relation as a function of r = ω_q/ω_r.
/// Increases monotonically from 1.5 at r → 0 to infinity at r → 2.
pub fn pusc_resonance_rhs(r: f64) -> f64 {
    let poly = 1152.0 - r * (-880.0 + r * (230.0 + 209.0 * r));
    (1.0 + 2.0 * r) / (2.0 * (2.0 - r) * (8.0 + 5.0 * r))
        * ((2.0 - r) * poly / ((1.0 + 2.0 * r) * (1.0 + 2.0 * r))).sqrt()
}

/// g/ω_r that puts ω_q = rω_r on the Bloch-Siegert resonance
/// ω_q − 2ω_r + 3ω_2BS + Ω_q = 0.
pub fn solve_pusc_coupling(r: f64) -> Result<f64> {
    if !(r > 0.0 && r < 2.0) {
        return Err(Error::InvalidParameter(format!("r = {r} outside (0, 2)")));
    }
    Ok((4.0 * r - r * r * r).sqrt() / (2.0 * (1.0 + 2.0 * r).sqrt()))
}

/// Parameters of the perturbative-ultrastrong NS protocol.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlochSiegertParams {
    pub base: SystemParams,
    pub omega_2bs: f64,
    pub omega_q_shift: f64,
    /// B = −6(ω_2BS/2 + 2Ω_q), the |2,g⟩ level of the interaction Hamiltonian.
    pub b: f64,
    pub r: f64,
    pub k: u32,
    /// Period 2π/√(B² + 8g²) of the |2,g⟩ ↔ |0,e⟩ oscillation.
    pub t_osc: f64,
    pub gate_time: f64,
}

impl BlochSiegertParams {
    /// Derives the shifts, B and the gate time for `k` oscillations.
    pub fn from_system(base: SystemParams, k: u32) -> Self {
        let w2 = omega_2bs(&base);
        let oq = omega_q_shift(&base);
        let b = -6.0 * (w2 / 2.0 + 2.0 * oq);
        let t_osc = 2.0 * PI / (b * b + 8.0 * base.g * base.g).sqrt();
        Self {
            base,
            omega_2bs: w2,
            omega_q_shift: oq,
            b,
            r: base.omega_q / base.omega_r,
            k,
            t_osc,
            gate_time: k as f64 * t_osc,
        }
    }

    /// ω_q − 2ω_r + 3ω_2BS + Ω_q, zero on resonance.
    pub fn resonance_residual(&self) -> f64 {
        self.base.delta() + 3.0 * self.omega_2bs + self.omega_q_shift
    }

    /// Oscillation frequency √(B² + 8g²).
    pub fn rabi_frequency(&self) -> f64 {
        2.0 * PI / self.t_osc
    }

    /// Accumulated phases (θ₁, θ₂) of |1,g⟩ and |2,g⟩ at the gate time,
    /// relative to |0,g⟩.
    pub fn gate_phases(&self) -> (f64, f64) {
        let t = self.gate_time;
        (-self.b * t / 3.0, -self.b * t / 2.0 + self.k as f64 * PI)
    }
}

/// Interaction-picture Bloch-Siegert Hamiltonian
/// (ω_2BS/2 + 2Ω_q)σ_z(a†a + (a†a)²) + g(σ₊a² + σ₋a†²).
///
/// Only time-independent on resonance, which is checked.
pub fn h_2bs_interaction(p: &BlochSiegertParams, space: &Space) -> Result<OperatorMatrix> {
    let residual = p.resonance_residual();
    let tolerance = RESONANCE_TOL * p.base.omega_r;
    if residual.abs() > tolerance {
        return Err(Error::ResonanceResidual { residual, tolerance });
    }
    let kerr = p.omega_2bs / 2.0 + 2.0 * p.omega_q_shift;
    let g = p.base.g;
    sum_rails(space, 2, |o| o.kerr() * re(kerr) + (&o.sp * o.a2() + &o.sm * o.ad2()) * re(g))
}

/// Solves the k–r relation for r and fills in the resonant parameters at the
/// given ω_r. Admissible k are 4, 6, 7, 8, 9, …
pub fn solve_pusc_k(k: u32, omega_r: f64) -> Result<BlochSiegertParams> {
    if !(omega_r.is_finite() && omega_r > 0.0) {
        return Err(Error::InvalidParameter(format!("omega_r must be positive, got {omega_r}")));
    }
    let target = pusc_resonance_lhs(k);
    let f = |r: f64| pusc_resonance_rhs(r) - target;
    let (mut lo, mut hi) = (1e-9, 2.0 - 1e-12);
    if f(lo) * f(hi) > 0.0 {
        return Err(Error::NoRoot { k });
    }
    while hi - lo > 1e-14 {
        let mid = 0.5 * (lo + hi);
        if f(lo) * f(mid) <= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let r = 0.5 * (lo + hi);
    let g = solve_pusc_coupling(r)? * omega_r;
    let base = SystemParams::new(omega_r, r * omega_r, g)?;
    Ok(BlochSiegertParams::from_system(base, k))
}

/// Coupling and gate time of the alternate p-USC frame (free Hamiltonian
/// ω_r a†a + ω_q σ_z/2), used only as a cross-check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlternateFrameGate {
    /// g/ω_r
    pub g_tilde: f64,
    pub g: f64,
    pub gate_time: f64,
}

/// g̃ = √(2/(L² − 64)) with L = k/(3 + (−1)^{k+1}), t = kπ/(√2 g √(1 + 32g̃²)).
pub fn alternate_frame_gate(k: u32, omega_r: f64) -> Result<AlternateFrameGate> {
    let l = pusc_resonance_lhs(k);
    if l * l <= 64.0 {
        return Err(Error::NoRoot { k });
    }
    let g_tilde = (2.0 / (l * l - 64.0)).sqrt();
    let g = g_tilde * omega_r;
    let gate_time =
        k as f64 * PI / (2f64.sqrt() * g * (1.0 + 32.0 * g_tilde * g_tilde).sqrt());
    Ok(AlternateFrameGate { g_tilde, g, gate_time })
}

/// How the qubit detuning of the dispersive protocol is fixed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum DetuningSpec {
    /// |δ| = D·g·(n̄ + 1)
    CouplingRatio(f64),
    /// |δ| = x·ω_r
    ResonatorRatio(f64),
}

impl Default for DetuningSpec {
    fn default() -> Self {
        DetuningSpec::CouplingRatio(10.0)
    }
}

/// Parameters of the dispersive NS / C-phase protocol.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DispersiveParams {
    pub base: SystemParams,
    /// χ = 2g²/|δ|
    pub chi: f64,
    pub n: u32,
    pub m: u32,
    pub target_phase: f64,
    pub gate_time: f64,
}

impl DispersiveParams {
    /// ω_r t − 2nπ
    pub fn linear_phase_residual(&self) -> f64 {
        self.base.omega_r * self.gate_time - 2.0 * self.n as f64 * PI
    }

    /// (ω_r − χ)t − (φ + 2(m − 1)π)
    pub fn nonlinear_phase_residual(&self) -> f64 {
        (self.base.omega_r - self.chi) * self.gate_time
            - (self.target_phase + 2.0 * (self.m as f64 - 1.0) * PI)
    }
}

/// Picks χ, g and ω_q so that after t = 2nπ/ω_r the |1⟩ phase is trivial and
/// |2⟩ picks up e^{−iφ} (φ = π is the NS gate).
pub fn solve_dispersive(
    n: u32,
    detuning: DetuningSpec,
    target_phase: f64,
    omega_r: f64,
) -> Result<DispersiveParams> {
    if n == 0 {
        return Err(Error::InvalidParameter("n must be at least 1".into()));
    }
    if !(0.0..2.0 * PI).contains(&target_phase) {
        return Err(Error::InvalidParameter(format!(
            "target phase {target_phase} outside [0, 2π)"
        )));
    }
    let m = n;
    let chi = omega_r * (2.0 * PI - target_phase) / (2.0 * n as f64 * PI);
    if chi >= omega_r {
        return Err(Error::InvalidParameter(format!(
            "n = {n} with phase {target_phase} needs chi >= omega_r"
        )));
    }
    let (g, abs_delta) = match detuning {
        DetuningSpec::CouplingRatio(d) => {
            if !(d > 0.0) {
                return Err(Error::InvalidParameter(format!("coupling ratio {d} must be positive")));
            }
            let g = chi * d * (N_BAR + 1.0) / 2.0;
            (g, d * g * (N_BAR + 1.0))
        }
        DetuningSpec::ResonatorRatio(x) => {
            if !(x > 0.0) {
                return Err(Error::InvalidParameter(format!("detuning ratio {x} must be positive")));
            }
            let abs_delta = x * omega_r;
            ((chi * abs_delta / 2.0).sqrt(), abs_delta)
        }
    };
    if abs_delta < 10.0 * g * (N_BAR + 1.0) * (1.0 - 1e-12) {
        warn!(
            "dispersive condition weak: |delta|/(g(n+1)) = {:.2}",
            abs_delta / (g * (N_BAR + 1.0))
        );
    }
    let base = SystemParams::new(omega_r, 2.0 * omega_r + abs_delta, g)?;
    Ok(DispersiveParams {
        base,
        chi,
        n,
        m,
        target_phase,
        gate_time: 2.0 * n as f64 * PI / omega_r,
    })
}

/// (ω_r + χ)a†a + (ω_q + χ)σ_z/2 + (χ/2)σ_z(a†a + (a†a)²), diagonal in the
/// bare basis.
pub fn h_dispersive(p: &DispersiveParams, space: &Space) -> Result<OperatorMatrix> {
    let chi = p.chi;
    sum_rails(space, 2, |o| {
        &o.n * re(p.base.omega_r + chi)
            + &o.sz * re((p.base.omega_q + chi) / 2.0)
            + o.kerr() * re(chi / 2.0)
    })
}
