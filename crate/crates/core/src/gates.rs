//! NS gate protocols, the beam splitter lifted to Fock space, and the two-rail
//! C-Z gate built from two parallel NS gates between two beam splitters.
//!
//! Photonic two-mode states live on [`two_rail_space`] with basis index
//! `3·n₁ + n₂`. The joint register used during the NS stage is
//! [`register_space`]: mode₁ ⊗ mode₂ ⊗ qubit₁ ⊗ qubit₂, rail `i` being mode `i`
//! with qubit `i`.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::dynamics::{
    observable_series, population_projectors, standard_channels, Channel, DressedModel, EvolutionTrace,
    Hamiltonian, Integrator, NoiseParams, TimeDependent, TimeGrid,
};
use crate::error::{Error, Result};
use crate::hilbert::{
    fidelity, partial_trace, CMatrix, CVector, DensityMatrix, KetState, OperatorMatrix, Qubit, Space,
};
use crate::models::{
    h_2bs, h_2bs_interaction, h_2jc_interaction, h_dispersive, BlochSiegertParams, DispersiveParams,
    SystemParams,
};
use crate::units;
use crate::C64;

/// Default number of recorded points per gate run.
pub const DEFAULT_SAMPLES: usize = 50;

/// Single mode, cutoff 2, no qubit.
pub fn photon_space() -> Space {
    Space::new(vec![2], 0).expect("non-empty space")
}

/// Two modes with cutoff 2, no qubits.
pub fn two_rail_space() -> Space {
    Space::new(vec![2, 2], 0).expect("non-empty space")
}

/// Two modes with cutoff 2 and two qubits.
pub fn register_space() -> Space {
    Space::new(vec![2, 2], 2).expect("non-empty space")
}

/// α₀|0⟩ + α₁|1⟩ + α₂|2⟩ → α₀|0⟩ + α₁|1⟩ − α₂|2⟩ on the first mode. Other
/// factors of the space are left alone.
pub fn ns_apply_ideal(state: &KetState) -> Result<KetState> {
    ns_apply_factor(state, C64::from(-1.0))
}

/// Multiplies the two-photon amplitude of the first mode by e^{−iφ}.
pub fn ns_apply_phase(state: &KetState, phi: f64) -> Result<KetState> {
    ns_apply_factor(state, C64::from_polar(1.0, -phi))
}

fn ns_apply_factor(state: &KetState, phase: C64) -> Result<KetState> {
    let space = state.space();
    if space.modes() == 0 {
        return Err(Error::WrongSpaceShape("NS gate needs a photonic mode".into()));
    }
    if space.mode_cutoffs()[0] < 2 {
        return Err(Error::CutoffTooSmall { cutoff: space.mode_cutoffs()[0], required: 2 });
    }
    let amps = CVector::from_iterator(
        space.dim(),
        (0..space.dim()).map(|i| {
            let a = state.amplitude(i);
            if space.digits(i)[0] == 2 {
                a * phase
            } else {
                a
            }
        }),
    );
    KetState::new(space.clone(), amps)
}

/// (α₀|0⟩ + α₁|1⟩ + α₂|2⟩)/‖α‖ on [`photon_space`].
pub fn photon_state(alphas: [C64; 3]) -> Result<KetState> {
    KetState::new(photon_space(), CVector::from_vec(alphas.to_vec()))?.normalized()
}

/// (|0⟩ + |1⟩ + |2⟩)/√3
pub fn equal_superposition() -> KetState {
    photon_state([C64::from(1.0); 3]).expect("non-zero state")
}

/// Lossless beam splitter with single-photon block [[−sinθ, cosθ], [cosθ, sinθ]]
/// on (|01⟩, |10⟩), lifted to two photons by substituting
/// b† → −sinθ b† + cosθ a† and a† → cosθ b† + sinθ a†.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeamSplitter {
    pub theta: f64,
    pub block_1photon: [[f64; 2]; 2],
    /// On (|02⟩, |11⟩, |20⟩).
    pub lifted_2photon: [[f64; 3]; 3],
}

/// Image of a two-mode Fock state |n₁ n₂⟩ under a linear map of the creation
/// operators. `image[m]` gives the new (coefficient of a†, coefficient of b†)
/// for mode m (0 = a = first mode, 1 = b = second mode).
fn lift_fock(image: [[f64; 2]; 2], n1: usize, n2: usize) -> BTreeMap<(usize, usize), f64> {
    let factorial = |n: usize| (1..=n).product::<usize>() as f64;
    let factors: Vec<[f64; 2]> =
        std::iter::repeat_n(image[0], n1).chain(std::iter::repeat_n(image[1], n2)).collect();
    let mut terms: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for choice in 0..(1usize << factors.len()) {
        let mut coeff = 1.0;
        let (mut ma, mut mb) = (0, 0);
        for (bit, f) in factors.iter().enumerate() {
            if choice >> bit & 1 == 0 {
                coeff *= f[0];
                ma += 1;
            } else {
                coeff *= f[1];
                mb += 1;
            }
        }
        *terms.entry((ma, mb)).or_default() += coeff;
    }
    let norm_in = (factorial(n1) * factorial(n2)).sqrt();
    terms
        .into_iter()
        .map(|((ma, mb), c)| ((ma, mb), c * (factorial(ma) * factorial(mb)).sqrt() / norm_in))
        .collect()
}

impl BeamSplitter {
    pub fn new(theta: f64) -> Self {
        let (s, c) = theta.sin_cos();
        let block_1photon = [[-s, c], [c, s]];
        // columns of the block are the images of b† (|01⟩) and a† (|10⟩) in
        // the (b†, a†) basis; rewrite as (a†, b†) coefficients per mode
        let image = [
            [block_1photon[1][1], block_1photon[0][1]],
            [block_1photon[1][0], block_1photon[0][0]],
        ];
        let basis = [(0usize, 2usize), (1, 1), (2, 0)];
        let mut lifted_2photon = [[0.0; 3]; 3];
        for (col, &(n1, n2)) in basis.iter().enumerate() {
            for ((m1, m2), v) in lift_fock(image, n1, n2) {
                let row = basis.iter().position(|&b| b == (m1, m2)).expect("two photons stay two");
                lifted_2photon[row][col] = v;
            }
        }
        Self { theta, block_1photon, lifted_2photon }
    }

    /// 6×6 matrix on (|00⟩, |01⟩, |10⟩, |02⟩, |11⟩, |20⟩).
    pub fn sector_matrix(&self) -> CMatrix {
        let mut m = CMatrix::zeros(6, 6);
        m[(0, 0)] = C64::from(1.0);
        for i in 0..2 {
            for j in 0..2 {
                m[(1 + i, 1 + j)] = C64::from(self.block_1photon[i][j]);
            }
        }
        for i in 0..3 {
            for j in 0..3 {
                m[(3 + i, 3 + j)] = C64::from(self.lifted_2photon[i][j]);
            }
        }
        m
    }

    /// 9×9 unitary on [`two_rail_space`]; identity on the unused
    /// three- and four-photon states.
    pub fn two_mode_unitary(&self) -> CMatrix {
        let space = two_rail_space();
        let sector = [(0, 0), (0, 1), (1, 0), (0, 2), (1, 1), (2, 0)];
        let idx = |(a, b): (usize, usize)| space.index_of(&[a, b], &[]).expect("in space");
        let mut u = CMatrix::identity(9, 9);
        let m = self.sector_matrix();
        for (i, &si) in sector.iter().enumerate() {
            for (j, &sj) in sector.iter().enumerate() {
                u[(idx(si), idx(sj))] = m[(i, j)];
            }
        }
        u
    }

    pub fn apply(&self, state: &KetState) -> Result<KetState> {
        if state.space() != &two_rail_space() {
            return Err(Error::SpaceMismatch("beam splitter acts on two modes with cutoff 2".into()));
        }
        KetState::new(state.space().clone(), self.two_mode_unitary() * state.amplitudes())
    }

    pub fn apply_density(&self, rho: &DensityMatrix) -> Result<DensityMatrix> {
        if rho.space() != &two_rail_space() {
            return Err(Error::SpaceMismatch("beam splitter acts on two modes with cutoff 2".into()));
        }
        rho.conjugate_by(&self.two_mode_unitary())
    }
}

pub fn beam_splitter_unitary(theta: f64) -> BeamSplitter {
    BeamSplitter::new(theta)
}

/// Dual-rail logical state a|00⟩ + b|01⟩ + c|10⟩ + d|11⟩.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoRailState {
    ket: KetState,
}

const LOGICAL: [(usize, usize); 4] = [(0, 0), (0, 1), (1, 0), (1, 1)];

impl TwoRailState {
    pub fn logical(amplitudes: [C64; 4]) -> Result<Self> {
        let space = two_rail_space();
        let mut v = CVector::zeros(space.dim());
        for (&(a, b), amp) in LOGICAL.iter().zip(amplitudes) {
            v[space.index_of(&[a, b], &[]).expect("in space")] = amp;
        }
        Ok(Self { ket: KetState::new(space, v)?.normalized()? })
    }

    /// (|00⟩ + |01⟩ + |10⟩ + |11⟩)/2
    pub fn standard_input() -> Self {
        Self::logical([C64::from(1.0); 4]).expect("non-zero state")
    }

    /// Wraps a photonic ket, rejecting amplitude outside the logical sector.
    pub fn from_ket(ket: KetState) -> Result<Self> {
        let space = two_rail_space();
        if ket.space() != &space {
            return Err(Error::SpaceMismatch("two-rail states live on two modes with cutoff 2".into()));
        }
        let logical: Vec<usize> =
            LOGICAL.iter().map(|&(a, b)| space.index_of(&[a, b], &[]).expect("in space")).collect();
        let leak: f64 = (0..space.dim())
            .filter(|i| !logical.contains(i))
            .map(|i| ket.amplitude(i).norm_sqr())
            .sum();
        if leak > 1e-12 {
            return Err(Error::InvalidInput(format!(
                "input has weight {leak:.3e} outside span{{|00⟩,|01⟩,|10⟩,|11⟩}}"
            )));
        }
        Ok(Self { ket: ket.normalized()? })
    }

    pub fn ket(&self) -> &KetState {
        &self.ket
    }

    /// Logical amplitudes on (|00⟩, |01⟩, |10⟩, |11⟩).
    pub fn amplitudes(&self) -> [C64; 4] {
        let space = two_rail_space();
        LOGICAL.map(|(a, b)| self.ket.amplitude(space.index_of(&[a, b], &[]).expect("in space")))
    }

    /// The state after an ideal C-Z: |11⟩ negated.
    pub fn cz_target(&self) -> Self {
        let [a, b, c, d] = self.amplitudes();
        Self::logical([a, b, c, -d]).expect("non-zero state")
    }
}

/// Logical 4×4 matrix of BS(θ) · (NS ⊗ NS) · BS(θ) with ideal NS gates.
pub fn cz_ideal_logical(theta: f64) -> CMatrix {
    let space = two_rail_space();
    let u = BeamSplitter::new(theta).two_mode_unitary();
    let ns = CMatrix::from_diagonal(&CVector::from_iterator(
        9,
        (0..9).map(|i| {
            let d = space.digits(i);
            let sign = |n: usize| if n == 2 { -1.0 } else { 1.0 };
            C64::from(sign(d[0]) * sign(d[1]))
        }),
    ));
    let full = &u * ns * &u;
    let idx: Vec<usize> = LOGICAL.iter().map(|&(a, b)| space.index_of(&[a, b], &[]).expect("in space")).collect();
    CMatrix::from_fn(4, 4, |i, j| full[(idx[i], idx[j])])
}

/// Result of one protocol run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GateReport {
    pub protocol: String,
    pub params: serde_json::Value,
    pub gate_time_ns: f64,
    pub fidelity: f64,
    pub trace_file: Option<String>,
    #[serde(default)]
    pub metrics: BTreeMap<String, f64>,
    #[serde(skip)]
    pub trace: Option<EvolutionTrace>,
    #[serde(skip)]
    pub final_state: Option<DensityMatrix>,
}

impl GateReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Run-time knobs shared by the NS protocols.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NsOptions {
    /// Evolve for this long instead of the protocol's gate time.
    pub gate_time: Option<f64>,
    pub samples: usize,
    pub integrator: Integrator,
}

impl Default for NsOptions {
    fn default() -> Self {
        Self { gate_time: None, samples: DEFAULT_SAMPLES, integrator: Integrator::default() }
    }
}

/// ψ ⊗ |g⟩ from a photonic ket, or the ket itself if it already carries a
/// qubit in |g⟩.
fn with_ground_qubit(psi0: &KetState) -> Result<KetState> {
    let space = psi0.space();
    if space.modes() != 1 {
        return Err(Error::WrongSpaceShape("NS input must be a single photonic mode".into()));
    }
    match space.qubits() {
        0 => {
            let full = Space::new(space.mode_cutoffs().to_vec(), 1)?;
            let g = CVector::from_vec(vec![C64::from(1.0), C64::from(0.0)]);
            KetState::product(&full, &[psi0.amplitudes().clone(), g])
        }
        1 => {
            let excited: f64 = (0..space.dim())
                .filter(|&i| space.label(i).qubits[0] == Qubit::E)
                .map(|i| psi0.amplitude(i).norm_sqr())
                .sum();
            if excited > 1e-12 {
                return Err(Error::InvalidInput("qubit not initialized in |g⟩".into()));
            }
            Ok(psi0.clone())
        }
        _ => Err(Error::WrongSpaceShape("NS input has more than one qubit".into())),
    }
}

fn single_rail_populations(space: &Space) -> Vec<(String, OperatorMatrix)> {
    let wanted = [(0, Qubit::G), (1, Qubit::G), (2, Qubit::G), (0, Qubit::E)];
    population_projectors(space)
        .into_iter()
        .enumerate()
        .filter(|(i, _)| {
            let l = space.label(*i);
            wanted.contains(&(l.photons[0], l.qubits[0]))
        })
        .map(|(_, p)| p)
        .collect()
}

struct NsRun {
    fidelity: f64,
    trace: EvolutionTrace,
}

fn run_ns(
    h: &dyn Hamiltonian,
    channels: &[Channel],
    psi0: &KetState,
    target_phase: f64,
    gate_time: f64,
    options: &NsOptions,
) -> Result<NsRun> {
    let start = with_ground_qubit(psi0)?;
    if start.space() != h.space() {
        return Err(Error::SpaceMismatch("input cutoff differs from the Hamiltonian space".into()));
    }
    let target = ns_apply_phase(&start, target_phase)?;
    let grid = TimeGrid::sampled(gate_time, options.samples.max(1))?;
    let trace = options.integrator.lindblad_channels(h, channels, &start.to_density(), &grid)?;
    let f = fidelity(&trace.final_density(), &target)?;
    let series = observable_series(&trace, &single_rail_populations(h.space()))?;
    let mut trace = trace.with_observables(series)?;
    let fid_series = trace
        .densities()
        .expect("master equation records densities")
        .iter()
        .map(|r| fidelity(r, &target))
        .collect::<Result<Vec<_>>>()?;
    trace.observables.push(("fidelity".into(), fid_series));
    Ok(NsRun { fidelity: f, trace })
}

fn rates_json(noise: &NoiseParams) -> serde_json::Value {
    serde_json::json!({
        "kappa_per_us": units::to_per_us(noise.kappa),
        "gamma_per_us": units::to_per_us(noise.gamma),
        "gamma_phi_per_us": units::to_per_us(noise.gamma_phi),
    })
}

fn system_json(p: &SystemParams) -> serde_json::Value {
    serde_json::json!({
        "omega_r_ghz": units::to_ghz(p.omega_r),
        "omega_q_ghz": units::to_ghz(p.omega_q),
        "g_ghz": units::to_ghz(p.g),
        "delta_mhz": units::to_mhz(p.delta()),
    })
}

/// Hamiltonian of the strong-coupling protocol in the interaction picture;
/// time-dependent only off resonance.
fn sc_hamiltonian(params: &SystemParams, space: &Space) -> Result<Box<dyn Hamiltonian>> {
    if params.delta() == 0.0 {
        Ok(Box::new(h_2jc_interaction(params, space, 0.0)?))
    } else {
        h_2jc_interaction(params, space, 0.0)?;
        let p = *params;
        let s = space.clone();
        Ok(Box::new(TimeDependent::new(space.clone(), move |t| h_2jc_interaction(&p, &s, t))))
    }
}

/// Strong-coupling NS gate: ψ₀ ⊗ |g⟩ under the two-photon JC interaction for
/// t = π/(√2 g) with the standard Lindblad channels.
pub fn ns_protocol_sc(
    params: &SystemParams,
    noise: &NoiseParams,
    psi0: &KetState,
    options: &NsOptions,
) -> Result<GateReport> {
    let space = Space::new(psi0.space().mode_cutoffs().to_vec(), 1)?;
    let h = sc_hamiltonian(params, &space)?;
    let gate_time = options.gate_time.unwrap_or_else(|| params.sc_gate_time());
    let channels = standard_channels(&space, noise)?;
    let run = run_ns(h.as_ref(), &channels, psi0, PI, gate_time, options)?;
    Ok(GateReport {
        protocol: "ns-sc".into(),
        params: serde_json::json!({ "system": system_json(params), "noise": rates_json(noise) }),
        gate_time_ns: gate_time,
        fidelity: run.fidelity,
        trace_file: None,
        metrics: BTreeMap::new(),
        final_state: Some(run.trace.final_density()),
        trace: Some(run.trace),
    })
}

/// How the dephasing rate enters the dressed-state master equation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DephasingMode {
    /// Only the dressed κ and γ channels.
    #[default]
    Off,
    /// Adds a bare σ_z channel at γ_φ/2 per qubit.
    BareSigmaZ,
}

/// Dressed jump channels of every rail of `space`, built from the lab-frame
/// Bloch-Siegert Hamiltonian of one rail.
///
/// On resonance the free part of H_2BS is a multiple of the conserved
/// excitation number, so each jump only picks up a phase in the interaction
/// picture and the same channels apply there.
fn pusc_channels(
    params: &BlochSiegertParams,
    space: &Space,
    noise: &NoiseParams,
    dephasing: DephasingMode,
) -> Result<Vec<Channel>> {
    let rail = Space::new(vec![space.mode_cutoffs()[0]], 1)?;
    let model = DressedModel::new(&h_2bs(&params.base, &rail)?, &params.base)?;
    let mut channels = Vec::new();
    for r in 0..space.modes() {
        channels.extend(model.embedded_channels(space, r, noise.kappa, noise.gamma)?);
    }
    if dephasing == DephasingMode::BareSigmaZ {
        channels.extend(standard_channels(space, &NoiseParams::new(0.0, 0.0, noise.gamma_phi)?)?);
    }
    Ok(channels)
}

/// Perturbative-ultrastrong NS gate: evolution under the interaction-picture
/// Bloch-Siegert Hamiltonian for k oscillations with dressed dissipation.
pub fn ns_protocol_pusc(
    params: &BlochSiegertParams,
    noise: &NoiseParams,
    dephasing: DephasingMode,
    psi0: &KetState,
    options: &NsOptions,
) -> Result<GateReport> {
    let k = params.k;
    if k < 4 || k == 5 {
        return Err(Error::NoRoot { k });
    }
    let space = Space::new(psi0.space().mode_cutoffs().to_vec(), 1)?;
    let h = h_2bs_interaction(params, &space)?;
    let channels = pusc_channels(params, &space, noise, dephasing)?;
    let gate_time = options.gate_time.unwrap_or(params.gate_time);
    let run = run_ns(&h, &channels, psi0, PI, gate_time, options)?;
    let (theta1, theta2) = params.gate_phases();
    let wrap = |x: f64| {
        let w = x.rem_euclid(2.0 * PI);
        w.min(2.0 * PI - w)
    };
    let mut metrics = BTreeMap::new();
    metrics.insert("theta1_residual".into(), wrap(theta1));
    metrics.insert("theta2_residual".into(), wrap(theta2 - PI));
    metrics.insert("resonance_residual".into(), params.resonance_residual());
    Ok(GateReport {
        protocol: "ns-pusc".into(),
        params: serde_json::json!({
            "system": system_json(&params.base),
            "k": k,
            "r": params.r,
            "b_ghz": units::to_ghz(params.b),
            "t_osc_ns": params.t_osc,
            "noise": rates_json(noise),
            "dephasing": dephasing,
        }),
        gate_time_ns: gate_time,
        fidelity: run.fidelity,
        trace_file: None,
        metrics,
        final_state: Some(run.trace.final_density()),
        trace: Some(run.trace),
    })
}

/// Dispersive NS (or C-phase) gate: diagonal Kerr evolution in the lab frame.
pub fn ns_protocol_dispersive(
    params: &DispersiveParams,
    noise: &NoiseParams,
    psi0: &KetState,
    options: &NsOptions,
) -> Result<GateReport> {
    let space = Space::new(psi0.space().mode_cutoffs().to_vec(), 1)?;
    let h = h_dispersive(params, &space)?;
    let channels = standard_channels(&space, noise)?;
    let gate_time = options.gate_time.unwrap_or(params.gate_time);
    let run = run_ns(&h, &channels, psi0, params.target_phase, gate_time, options)?;
    let mut metrics = BTreeMap::new();
    metrics.insert("linear_phase_residual".into(), params.linear_phase_residual());
    metrics.insert("nonlinear_phase_residual".into(), params.nonlinear_phase_residual());
    Ok(GateReport {
        protocol: "ns-dispersive".into(),
        params: serde_json::json!({
            "system": system_json(&params.base),
            "chi_over_omega_r": params.chi / params.base.omega_r,
            "n": params.n,
            "m": params.m,
            "target_phase": params.target_phase,
            "noise": rates_json(noise),
        }),
        gate_time_ns: gate_time,
        fidelity: run.fidelity,
        trace_file: None,
        metrics,
        final_state: Some(run.trace.final_density()),
        trace: Some(run.trace),
    })
}

/// NS implementation used on both rails of the C-Z gate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Regime {
    StrongCoupling(SystemParams),
    BlochSiegert { params: BlochSiegertParams, dephasing: DephasingMode },
    Dispersive(DispersiveParams),
    /// Exact NS on both rails, no dynamics.
    Ideal,
}

impl Regime {
    fn name(&self) -> &'static str {
        match self {
            Regime::StrongCoupling(_) => "sc",
            Regime::BlochSiegert { .. } => "pusc",
            Regime::Dispersive(_) => "dispersive",
            Regime::Ideal => "ideal",
        }
    }

    pub fn gate_time(&self) -> f64 {
        match self {
            Regime::StrongCoupling(p) => p.sc_gate_time(),
            Regime::BlochSiegert { params, .. } => params.gate_time,
            Regime::Dispersive(p) => p.gate_time,
            Regime::Ideal => 0.0,
        }
    }
}

/// Embeds a two-mode photonic density matrix into the register with both
/// qubits in |g⟩.
fn attach_ground_qubits(rho: &DensityMatrix) -> Result<DensityMatrix> {
    let reg = register_space();
    let photonic = rho.space();
    let dim = reg.dim();
    let idx: Vec<usize> = (0..photonic.dim())
        .map(|i| {
            let p = photonic.label(i).photons;
            reg.index_of(&p, &[Qubit::G, Qubit::G]).expect("in register")
        })
        .collect();
    let mut m = CMatrix::zeros(dim, dim);
    for (i, &fi) in idx.iter().enumerate() {
        for (j, &fj) in idx.iter().enumerate() {
            m[(fi, fj)] = rho.matrix()[(i, j)];
        }
    }
    DensityMatrix::new_unchecked(reg, m)
}

/// BS(θ) → NS on both rails (one joint master equation) → trace out qubits →
/// BS(θ), scored against the ideal C-Z output of `input`.
pub fn cz_protocol(
    regime: &Regime,
    noise: &NoiseParams,
    theta: f64,
    input: &TwoRailState,
    options: &NsOptions,
) -> Result<GateReport> {
    let bs = BeamSplitter::new(theta);
    let after_bs = bs.apply(input.ket())?;
    let target = input.cz_target();
    let reg = register_space();
    let gate_time = options.gate_time.unwrap_or_else(|| regime.gate_time());

    let (photonic_out, trace, params) = match regime {
        Regime::Ideal => {
            let space = two_rail_space();
            let amps = CVector::from_iterator(
                9,
                (0..9).map(|i| {
                    let d = space.digits(i);
                    let sign = if (d[0] == 2) ^ (d[1] == 2) { -1.0 } else { 1.0 };
                    after_bs.amplitude(i) * sign
                }),
            );
            let out = KetState::new(space, amps)?.to_density();
            (out, None, serde_json::json!({}))
        }
        _ => {
            let (h, channels, params): (Box<dyn Hamiltonian>, Vec<Channel>, serde_json::Value) = match regime {
                Regime::StrongCoupling(p) => (
                    sc_hamiltonian(p, &reg)?,
                    standard_channels(&reg, noise)?,
                    serde_json::json!({ "system": system_json(p) }),
                ),
                Regime::BlochSiegert { params, dephasing } => (
                    Box::new(h_2bs_interaction(params, &reg)?),
                    pusc_channels(params, &reg, noise, *dephasing)?,
                    serde_json::json!({
                        "system": system_json(&params.base),
                        "k": params.k,
                        "r": params.r,
                        "dephasing": dephasing,
                    }),
                ),
                Regime::Dispersive(p) => (
                    Box::new(h_dispersive(p, &reg)?),
                    standard_channels(&reg, noise)?,
                    serde_json::json!({
                        "system": system_json(&p.base),
                        "chi_over_omega_r": p.chi / p.base.omega_r,
                        "n": p.n,
                    }),
                ),
                Regime::Ideal => unreachable!(),
            };
            let rho0 = attach_ground_qubits(&after_bs.to_density())?;
            let grid = TimeGrid::sampled(gate_time, options.samples.max(1))?;
            let trace = options.integrator.lindblad_channels(h.as_ref(), &channels, &rho0, &grid)?;
            let photonic = partial_trace(&trace.final_density(), &[0, 1])?;
            (photonic, Some(trace), params)
        }
    };
    let out = bs.apply_density(&photonic_out)?;
    let f = fidelity(&out, target.ket())?;
    let mut metrics = BTreeMap::new();
    metrics.insert("theta".into(), theta);
    Ok(GateReport {
        protocol: format!("cz-{}", regime.name()),
        params: serde_json::json!({
            "regime": params,
            "theta": theta,
            "noise": rates_json(noise),
        }),
        gate_time_ns: gate_time,
        fidelity: f,
        trace_file: None,
        metrics,
        trace,
        final_state: Some(out),
    })
}
