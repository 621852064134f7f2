//! Truncated Fock ⊗ qubit Hilbert spaces.
//!
//! A [`Space`] is the tensor product of bosonic modes truncated at a maximum
//! photon number and a set of qubits. The basis is ordered mode-major with
//! the last factor varying fastest: for one mode with cutoff 2 and one qubit
//! the order is `|0,g⟩ |0,e⟩ |1,g⟩ |1,e⟩ |2,g⟩ |2,e⟩`. Subsystems are indexed
//! modes first (`0..modes`) then qubits (`modes..modes + qubits`).
//!
//! States, density matrices and operators are immutable values carrying the
//! space they live on.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

/// Hermiticity threshold for operator matrices.
pub const OPERATOR_HERMITIAN_TOL: f64 = 1e-12;
/// Hermiticity threshold for density matrices.
pub const DENSITY_HERMITIAN_TOL: f64 = 1e-10;
pub const DENSITY_TRACE_TOL: f64 = 1e-8;
/// Integrator error can produce tiny negative eigenvalues; anything below
/// this is an error.
pub const DENSITY_POSITIVITY_TOL: f64 = -1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Qubit {
    G,
    E,
}

impl Qubit {
    fn index(self) -> usize {
        match self {
            Qubit::G => 0,
            Qubit::E => 1,
        }
    }
}

/// A basis vector of a [`Space`]: photon numbers per mode, states per qubit.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BasisLabel {
    pub photons: Vec<usize>,
    pub qubits: Vec<Qubit>,
}

impl BasisLabel {
    pub fn new(photons: Vec<usize>, qubits: Vec<Qubit>) -> Self {
        Self { photons, qubits }
    }
}

impl fmt::Display for BasisLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let photons: Vec<String> = self.photons.iter().map(|n| n.to_string()).collect();
        let qubits: Vec<&str> = self
            .qubits
            .iter()
            .map(|q| match q {
                Qubit::G => "g",
                Qubit::E => "e",
            })
            .collect();
        let mut parts = Vec::new();
        if !photons.is_empty() {
            parts.push(photons.join(""));
        }
        if !qubits.is_empty() {
            parts.push(qubits.join(""));
        }
        write!(f, "|{}⟩", parts.join(","))
    }
}

/// Truncated Fock ⊗ qubit space.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Space {
    mode_cutoffs: Vec<usize>,
    qubit_count: usize,
}

impl Space {
    pub fn new(mode_cutoffs: Vec<usize>, qubit_count: usize) -> Result<Self> {
        if mode_cutoffs.is_empty() && qubit_count == 0 {
            return Err(Error::ZeroDimension);
        }
        if qubit_count > 2 {
            return Err(Error::WrongSpaceShape(format!(
                "at most 2 qubits are supported, got {qubit_count}"
            )));
        }
        Ok(Self { mode_cutoffs, qubit_count })
    }

    /// One mode with the given cutoff and one qubit.
    pub fn mode_qubit(cutoff: usize) -> Self {
        Self { mode_cutoffs: vec![cutoff], qubit_count: 1 }
    }

    pub fn mode_cutoffs(&self) -> &[usize] {
        &self.mode_cutoffs
    }

    pub fn modes(&self) -> usize {
        self.mode_cutoffs.len()
    }

    pub fn qubits(&self) -> usize {
        self.qubit_count
    }

    pub fn subsystems(&self) -> usize {
        self.modes() + self.qubits()
    }

    /// Local dimension of every factor in basis order.
    pub fn factor_dims(&self) -> Vec<usize> {
        self.mode_cutoffs
            .iter()
            .map(|c| c + 1)
            .chain(std::iter::repeat_n(2, self.qubit_count))
            .collect()
    }

    pub fn dim(&self) -> usize {
        self.factor_dims().iter().product()
    }

    /// Mixed-radix digits of a basis index, one per factor.
    pub fn digits(&self, index: usize) -> Vec<usize> {
        let dims = self.factor_dims();
        let mut digits = vec![0; dims.len()];
        let mut rest = index;
        for (slot, d) in digits.iter_mut().zip(&dims).rev() {
            *slot = rest % d;
            rest /= d;
        }
        digits
    }

    fn index_of_digits(&self, digits: &[usize]) -> usize {
        self.factor_dims().iter().zip(digits).fold(0, |acc, (d, x)| acc * d + x)
    }

    pub fn label(&self, index: usize) -> BasisLabel {
        let digits = self.digits(index);
        let (photons, qubits) = digits.split_at(self.modes());
        BasisLabel {
            photons: photons.to_vec(),
            qubits: qubits.iter().map(|&q| if q == 0 { Qubit::G } else { Qubit::E }).collect(),
        }
    }

    pub fn index(&self, label: &BasisLabel) -> Option<usize> {
        if label.photons.len() != self.modes() || label.qubits.len() != self.qubits() {
            return None;
        }
        if label.photons.iter().zip(&self.mode_cutoffs).any(|(n, c)| n > c) {
            return None;
        }
        let digits: Vec<usize> = label
            .photons
            .iter()
            .copied()
            .chain(label.qubits.iter().map(|q| q.index()))
            .collect();
        Some(self.index_of_digits(&digits))
    }

    /// Index of a `|n_1 … n_M; q_1 … q_Q⟩` basis vector.
    pub fn index_of(&self, photons: &[usize], qubits: &[Qubit]) -> Option<usize> {
        self.index(&BasisLabel::new(photons.to_vec(), qubits.to_vec()))
    }

    pub fn labels(&self) -> Vec<String> {
        (0..self.dim()).map(|i| self.label(i).to_string()).collect()
    }

    fn check_mode(&self, mode: usize) -> Result<()> {
        if mode >= self.modes() {
            return Err(Error::InvalidMode { index: mode, modes: self.modes() });
        }
        Ok(())
    }

    fn check_qubit(&self, qubit: usize) -> Result<()> {
        if qubit >= self.qubits() {
            return Err(Error::InvalidQubit { index: qubit, qubits: self.qubits() });
        }
        Ok(())
    }

    /// Lifts an operator on one factor to the full space.
    pub fn embed(&self, factor: usize, local: &CMatrix) -> CMatrix {
        let dims = self.factor_dims();
        assert_eq!(local.nrows(), dims[factor], "local operator dimension");
        let dim = self.dim();
        let stride: usize = dims[factor + 1..].iter().product();
        let mut out = CMatrix::zeros(dim, dim);
        for col in 0..dim {
            let digit = (col / stride) % dims[factor];
            let base = col - digit * stride;
            for row_digit in 0..dims[factor] {
                let v = local[(row_digit, digit)];
                if v != C64::new(0.0, 0.0) {
                    out[(base + row_digit * stride, col)] = v;
                }
            }
        }
        out
    }

    /// Lifts an operator on several factors to the full space. `local` acts on
    /// the product of `factors` taken in the given order, first factor most
    /// significant.
    pub fn embed_factors(&self, factors: &[usize], local: &CMatrix) -> Result<CMatrix> {
        let dims = self.factor_dims();
        if let Some(&bad) = factors.iter().find(|&&f| f >= dims.len()) {
            return Err(Error::InvalidSubsystem { index: bad, count: dims.len() });
        }
        let local_dims: Vec<usize> = factors.iter().map(|&f| dims[f]).collect();
        let local_dim: usize = local_dims.iter().product();
        if local.nrows() != local_dim || local.ncols() != local_dim {
            return Err(Error::SpaceMismatch(format!(
                "local operator is {}x{}, factors need {local_dim}",
                local.nrows(),
                local.ncols()
            )));
        }
        let dim = self.dim();
        let mut out = CMatrix::zeros(dim, dim);
        for col in 0..dim {
            let mut digits = self.digits(col);
            let local_col = factors.iter().fold(0, |acc, &f| acc * dims[f] + digits[f]);
            for local_row in 0..local_dim {
                let v = local[(local_row, local_col)];
                if v == C64::new(0.0, 0.0) {
                    continue;
                }
                let mut rest = local_row;
                for (&f, &d) in factors.iter().zip(&local_dims).rev() {
                    digits[f] = rest % d;
                    rest /= d;
                }
                out[(self.index_of_digits(&digits), col)] = v;
            }
        }
        Ok(out)
    }

    /// Space left after keeping the given (sorted, deduplicated) subsystems.
    fn reduced(&self, keep: &[usize]) -> Result<Space> {
        let cutoffs: Vec<usize> =
            keep.iter().filter(|&&s| s < self.modes()).map(|&s| self.mode_cutoffs[s]).collect();
        let qubits = keep.iter().filter(|&&s| s >= self.modes()).count();
        Space::new(cutoffs, qubits)
    }
}

/// Builds a space, rejecting zero-dimensional requests.
pub fn build_space(mode_cutoffs: &[usize], qubit_count: usize) -> Result<Space> {
    Space::new(mode_cutoffs.to_vec(), qubit_count)
}

fn max_hermitian_deviation(m: &CMatrix) -> f64 {
    let n = m.nrows();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in i..n {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

/// Row-major JSON dump of a matrix or vector over a labelled basis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixDump {
    pub basis_labels: Vec<String>,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl MatrixDump {
    fn from_matrix(space: &Space, m: &CMatrix) -> Self {
        let mut re = Vec::with_capacity(m.len());
        let mut im = Vec::with_capacity(m.len());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                re.push(m[(i, j)].re);
                im.push(m[(i, j)].im);
            }
        }
        Self { basis_labels: space.labels(), re, im }
    }

    fn from_vector(space: &Space, v: &CVector) -> Self {
        Self {
            basis_labels: space.labels(),
            re: v.iter().map(|z| z.re).collect(),
            im: v.iter().map(|z| z.im).collect(),
        }
    }
}

/// A square operator on a [`Space`].
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorMatrix {
    space: Space,
    matrix: CMatrix,
    hermitian: bool,
}

impl OperatorMatrix {
    pub fn new(space: Space, matrix: CMatrix) -> Result<Self> {
        let dim = space.dim();
        if matrix.nrows() != dim || matrix.ncols() != dim {
            return Err(Error::SpaceMismatch(format!(
                "operator is {}x{}, space dimension is {dim}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        let hermitian = max_hermitian_deviation(&matrix) < OPERATOR_HERMITIAN_TOL;
        Ok(Self { space, matrix, hermitian })
    }

    pub fn zeros(space: &Space) -> Self {
        let dim = space.dim();
        Self { space: space.clone(), matrix: CMatrix::zeros(dim, dim), hermitian: true }
    }

    pub fn identity(space: &Space) -> Self {
        let dim = space.dim();
        Self { space: space.clone(), matrix: CMatrix::identity(dim, dim), hermitian: true }
    }

    pub fn space(&self) -> &Space {
        &self.space
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> CMatrix {
        self.matrix
    }

    pub fn is_hermitian(&self) -> bool {
        self.hermitian
    }

    pub fn hermitian_deviation(&self) -> f64 {
        max_hermitian_deviation(&self.matrix)
    }

    pub fn dagger(&self) -> Self {
        Self {
            space: self.space.clone(),
            matrix: self.matrix.adjoint(),
            hermitian: self.hermitian,
        }
    }

    pub fn element(&self, row: usize, col: usize) -> C64 {
        self.matrix[(row, col)]
    }

    fn same_space(&self, other: &Self) -> Result<()> {
        if self.space != other.space {
            return Err(Error::SpaceMismatch("operators live on different spaces".into()));
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.same_space(other)?;
        Self::new(self.space.clone(), &self.matrix + &other.matrix)
    }

    pub fn scale(&self, factor: f64) -> Self {
        Self { space: self.space.clone(), matrix: &self.matrix * C64::from(factor), hermitian: self.hermitian }
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.same_space(other)?;
        Self::new(self.space.clone(), &self.matrix * &other.matrix)
    }

    /// Frobenius norm of `[self, other]`.
    pub fn commutator_norm(&self, other: &Self) -> Result<f64> {
        self.same_space(other)?;
        Ok((&self.matrix * &other.matrix - &other.matrix * &self.matrix).norm())
    }

    pub fn apply(&self, ket: &KetState) -> Result<KetState> {
        if ket.space != self.space {
            return Err(Error::SpaceMismatch("operator and state spaces differ".into()));
        }
        Ok(KetState { space: self.space.clone(), amplitudes: &self.matrix * &ket.amplitudes })
    }

    /// Eigenvalues in ascending order. Only meaningful for Hermitian operators.
    pub fn eigenvalues(&self) -> Result<Vec<f64>> {
        if !self.hermitian {
            return Err(Error::NonHermitian {
                deviation: self.hermitian_deviation(),
                context: " (eigenvalues)".into(),
            });
        }
        let mut values: Vec<f64> =
            self.matrix.clone().symmetric_eigenvalues().iter().copied().collect();
        values.sort_by(f64::total_cmp);
        Ok(values)
    }

    pub fn to_dump(&self) -> MatrixDump {
        MatrixDump::from_matrix(&self.space, &self.matrix)
    }
}

/// Annihilation and creation operators of one mode.
///
/// Truncation drops amplitude pushed above the cutoff, so `[a, a†] = 1` holds
/// on every row except the cutoff row.
pub fn ladder_ops(space: &Space, mode: usize) -> Result<(OperatorMatrix, OperatorMatrix)> {
    space.check_mode(mode)?;
    let n = space.mode_cutoffs[mode] + 1;
    let mut local = CMatrix::zeros(n, n);
    for k in 1..n {
        local[(k - 1, k)] = C64::from((k as f64).sqrt());
    }
    let a = space.embed(mode, &local);
    let a_dag = a.adjoint();
    Ok((
        OperatorMatrix { space: space.clone(), matrix: a, hermitian: false },
        OperatorMatrix { space: space.clone(), matrix: a_dag, hermitian: false },
    ))
}

pub fn number_op(space: &Space, mode: usize) -> Result<OperatorMatrix> {
    space.check_mode(mode)?;
    let n = space.mode_cutoffs[mode] + 1;
    let local = CMatrix::from_diagonal(&CVector::from_iterator(n, (0..n).map(|k| C64::from(k as f64))));
    Ok(OperatorMatrix { space: space.clone(), matrix: space.embed(mode, &local), hermitian: true })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QubitOp {
    /// σ₋ = |g⟩⟨e|
    Lower,
    /// σ₊ = |e⟩⟨g|
    Raise,
    /// σ_z = |e⟩⟨e| − |g⟩⟨g|
    Z,
    X,
}

pub fn qubit_op(space: &Space, qubit: usize, op: QubitOp) -> Result<OperatorMatrix> {
    space.check_qubit(qubit)?;
    let one = C64::from(1.0);
    let mut local = CMatrix::zeros(2, 2);
    match op {
        QubitOp::Lower => local[(0, 1)] = one,
        QubitOp::Raise => local[(1, 0)] = one,
        QubitOp::Z => {
            local[(0, 0)] = -one;
            local[(1, 1)] = one;
        }
        QubitOp::X => {
            local[(0, 1)] = one;
            local[(1, 0)] = one;
        }
    }
    let matrix = space.embed(space.modes() + qubit, &local);
    let hermitian = matches!(op, QubitOp::Z | QubitOp::X);
    Ok(OperatorMatrix { space: space.clone(), matrix, hermitian })
}

/// `a†a + 2σ₊σ₋`, the conserved excitation number of the two-photon
/// Jaynes-Cummings model.
pub fn excitation_operator(space: &Space) -> Result<OperatorMatrix> {
    if space.modes() != 1 || space.qubits() != 1 {
        return Err(Error::WrongSpaceShape(format!(
            "excitation operator needs one mode and one qubit, got {} modes and {} qubits",
            space.modes(),
            space.qubits()
        )));
    }
    let n = number_op(space, 0)?;
    let raise = qubit_op(space, 0, QubitOp::Raise)?;
    let lower = qubit_op(space, 0, QubitOp::Lower)?;
    let excited = raise.matrix() * lower.matrix();
    OperatorMatrix::new(space.clone(), n.matrix() + excited * C64::from(2.0))
}

/// A pure state.
#[derive(Debug, Clone, PartialEq)]
pub struct KetState {
    space: Space,
    amplitudes: CVector,
}

impl KetState {
    pub fn new(space: Space, amplitudes: CVector) -> Result<Self> {
        if amplitudes.len() != space.dim() {
            return Err(Error::SpaceMismatch(format!(
                "{} amplitudes for a space of dimension {}",
                amplitudes.len(),
                space.dim()
            )));
        }
        Ok(Self { space, amplitudes })
    }

    pub fn basis(space: &Space, index: usize) -> Self {
        let mut amplitudes = CVector::zeros(space.dim());
        amplitudes[index] = C64::from(1.0);
        Self { space: space.clone(), amplitudes }
    }

    pub fn from_label(space: &Space, photons: &[usize], qubits: &[Qubit]) -> Result<Self> {
        let index = space.index_of(photons, qubits).ok_or_else(|| {
            Error::InvalidInput(format!("label {photons:?} {qubits:?} not in space"))
        })?;
        Ok(Self::basis(space, index))
    }

    /// Tensor product of one local vector per factor, in basis order.
    pub fn product(space: &Space, factors: &[CVector]) -> Result<Self> {
        let dims = space.factor_dims();
        if factors.len() != dims.len() || factors.iter().zip(&dims).any(|(f, d)| f.len() != *d) {
            return Err(Error::SpaceMismatch("factor states do not match the space".into()));
        }
        let amplitudes = CVector::from_iterator(
            space.dim(),
            (0..space.dim()).map(|i| {
                space.digits(i).iter().zip(factors).map(|(&d, f)| f[d]).product::<C64>()
            }),
        );
        Ok(Self { space: space.clone(), amplitudes })
    }

    pub fn space(&self) -> &Space {
        &self.space
    }

    pub fn amplitudes(&self) -> &CVector {
        &self.amplitudes
    }

    pub fn amplitude(&self, index: usize) -> C64 {
        self.amplitudes[index]
    }

    pub fn norm(&self) -> f64 {
        self.amplitudes.norm()
    }

    pub fn normalized(&self) -> Result<Self> {
        let norm = self.norm();
        if norm == 0.0 {
            return Err(Error::InvalidInput("zero state cannot be normalized".into()));
        }
        Ok(Self { space: self.space.clone(), amplitudes: &self.amplitudes / C64::from(norm) })
    }

    /// ⟨self|other⟩
    pub fn inner(&self, other: &Self) -> Result<C64> {
        if self.space != other.space {
            return Err(Error::SpaceMismatch("inner product of states on different spaces".into()));
        }
        Ok(self.amplitudes.dotc(&other.amplitudes))
    }

    pub fn expectation(&self, op: &OperatorMatrix) -> Result<C64> {
        let applied = op.apply(self)?;
        self.inner(&applied)
    }

    pub fn to_density(&self) -> DensityMatrix {
        DensityMatrix {
            space: self.space.clone(),
            matrix: &self.amplitudes * self.amplitudes.adjoint(),
        }
    }

    pub fn to_dump(&self) -> MatrixDump {
        MatrixDump::from_vector(&self.space, &self.amplitudes)
    }
}

/// A mixed state.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    space: Space,
    matrix: CMatrix,
}

impl DensityMatrix {
    /// Wraps a matrix and checks Hermiticity, unit trace and positivity.
    pub fn new(space: Space, matrix: CMatrix) -> Result<Self> {
        let rho = Self::new_unchecked(space, matrix)?;
        rho.check_invariants()?;
        Ok(rho)
    }

    /// Wraps a matrix checking only its shape.
    pub fn new_unchecked(space: Space, matrix: CMatrix) -> Result<Self> {
        let dim = space.dim();
        if matrix.nrows() != dim || matrix.ncols() != dim {
            return Err(Error::SpaceMismatch(format!(
                "density matrix is {}x{}, space dimension is {dim}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        Ok(Self { space, matrix })
    }

    pub fn maximally_mixed(space: &Space) -> Self {
        let dim = space.dim();
        Self {
            space: space.clone(),
            matrix: CMatrix::identity(dim, dim) / C64::from(dim as f64),
        }
    }

    pub fn space(&self) -> &Space {
        &self.space
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> CMatrix {
        self.matrix
    }

    pub fn trace(&self) -> C64 {
        self.matrix.trace()
    }

    pub fn hermitian_deviation(&self) -> f64 {
        max_hermitian_deviation(&self.matrix)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        let herm = (&self.matrix + self.matrix.adjoint()) * C64::from(0.5);
        herm.symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn populations(&self) -> Vec<f64> {
        (0..self.matrix.nrows()).map(|i| self.matrix[(i, i)].re).collect()
    }

    pub fn expectation(&self, op: &OperatorMatrix) -> Result<C64> {
        if op.space() != &self.space {
            return Err(Error::SpaceMismatch("operator and density matrix spaces differ".into()));
        }
        Ok((op.matrix() * &self.matrix).trace())
    }

    pub fn check_invariants(&self) -> Result<()> {
        let herm = self.hermitian_deviation();
        if herm > DENSITY_HERMITIAN_TOL {
            return Err(Error::InvalidDensityMatrix(format!("Hermiticity deviation {herm:.3e}")));
        }
        let trace = self.trace();
        if (trace - C64::from(1.0)).norm() > DENSITY_TRACE_TOL {
            return Err(Error::InvalidDensityMatrix(format!("trace {trace}")));
        }
        let min = self.min_eigenvalue();
        if min < DENSITY_POSITIVITY_TOL {
            return Err(Error::InvalidDensityMatrix(format!("eigenvalue {min:.3e}")));
        }
        Ok(())
    }

    /// `U ρ U†` for a unitary on the same space.
    pub fn conjugate_by(&self, unitary: &CMatrix) -> Result<Self> {
        if unitary.nrows() != self.matrix.nrows() || unitary.ncols() != self.matrix.ncols() {
            return Err(Error::SpaceMismatch("unitary dimension differs from state".into()));
        }
        Ok(Self { space: self.space.clone(), matrix: unitary * &self.matrix * unitary.adjoint() })
    }

    pub fn to_dump(&self) -> MatrixDump {
        MatrixDump::from_matrix(&self.space, &self.matrix)
    }
}

/// `|⟨ψ|ρ|ψ⟩|`, clamped to `[0, 1]`.
pub fn fidelity(rho: &DensityMatrix, target: &KetState) -> Result<f64> {
    if rho.space != target.space {
        return Err(Error::SpaceMismatch("fidelity between different spaces".into()));
    }
    let overlap = target.amplitudes.dotc(&(&rho.matrix * &target.amplitudes));
    Ok(overlap.norm().clamp(0.0, 1.0))
}

/// Traces out every subsystem not listed in `keep`.
///
/// Subsystems are numbered modes first, then qubits; the reduced space keeps
/// them in ascending order.
pub fn partial_trace(rho: &DensityMatrix, keep: &[usize]) -> Result<DensityMatrix> {
    if keep.is_empty() {
        return Err(Error::InvalidParameter("partial trace needs at least one kept subsystem".into()));
    }
    let space = &rho.space;
    let count = space.subsystems();
    let mut keep: Vec<usize> = keep.to_vec();
    keep.sort_unstable();
    keep.dedup();
    if let Some(&bad) = keep.iter().find(|&&s| s >= count) {
        return Err(Error::InvalidSubsystem { index: bad, count });
    }
    let reduced = space.reduced(&keep)?;
    let traced: Vec<usize> = (0..count).filter(|s| !keep.contains(s)).collect();
    let dims = space.factor_dims();
    let reduced_dims: Vec<usize> = keep.iter().map(|&s| dims[s]).collect();
    let traced_dims: Vec<usize> = traced.iter().map(|&s| dims[s]).collect();
    let traced_dim: usize = traced_dims.iter().product();
    let rdim = reduced.dim();

    let full_index = |kept_index: usize, traced_index: usize| -> usize {
        let mut digits = vec![0usize; count];
        let mut rest = kept_index;
        for (pos, d) in keep.iter().zip(&reduced_dims).rev() {
            digits[*pos] = rest % d;
            rest /= d;
        }
        let mut rest = traced_index;
        for (pos, d) in traced.iter().zip(&traced_dims).rev() {
            digits[*pos] = rest % d;
            rest /= d;
        }
        space.index_of_digits(&digits)
    };

    let mut out = CMatrix::zeros(rdim, rdim);
    for i in 0..rdim {
        for j in 0..rdim {
            let mut acc = C64::new(0.0, 0.0);
            for t in 0..traced_dim {
                acc += rho.matrix[(full_index(i, t), full_index(j, t))];
            }
            out[(i, j)] = acc;
        }
    }
    Ok(DensityMatrix { space: reduced, matrix: out })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn c(re: f64) -> C64 {
        C64::from(re)
    }

    #[test]
    fn dimensions() {
        assert_eq!(build_space(&[2], 1).unwrap().dim(), 6);
        assert_eq!(build_space(&[2, 2], 2).unwrap().dim(), 36);
        assert_eq!(build_space(&[0], 0).unwrap().dim(), 1);
        assert_eq!(build_space(&[], 0), Err(Error::ZeroDimension));
    }

    #[test]
    fn basis_order_is_mode_major_g_before_e() {
        let space = Space::mode_qubit(2);
        let labels = space.labels();
        assert_eq!(labels, vec!["|0,g⟩", "|0,e⟩", "|1,g⟩", "|1,e⟩", "|2,g⟩", "|2,e⟩"]);
        for i in 0..space.dim() {
            assert_eq!(space.index(&space.label(i)), Some(i));
        }
        let two = build_space(&[2, 2], 2).unwrap();
        for i in 0..two.dim() {
            assert_eq!(two.index(&two.label(i)), Some(i));
        }
        assert_eq!(space.index_of(&[3], &[Qubit::G]), None);
    }

    #[test]
    fn annihilation_on_two_photons() {
        let space = build_space(&[2], 0).unwrap();
        let (a, _) = ladder_ops(&space, 0).unwrap();
        let out = a.apply(&KetState::basis(&space, 2)).unwrap();
        assert_relative_eq!(out.amplitude(1).re, 2f64.sqrt(), epsilon = 1e-15);
        assert_eq!(out.amplitude(0), c(0.0));
        assert!(ladder_ops(&space, 1).is_err());
    }

    #[test]
    fn number_operator_on_two_g() {
        let space = Space::mode_qubit(2);
        let (a, ad) = ladder_ops(&space, 0).unwrap();
        let n = ad.mul(&a).unwrap();
        let ket = KetState::from_label(&space, &[2], &[Qubit::G]).unwrap();
        assert_relative_eq!(ket.expectation(&n).unwrap().re, 2.0, epsilon = 1e-14);
        assert_eq!(ad.matrix(), &a.matrix().adjoint());
    }

    #[test]
    fn commutator_is_identity_below_cutoff() {
        let space = build_space(&[4], 0).unwrap();
        let (a, ad) = ladder_ops(&space, 0).unwrap();
        let comm = a.matrix() * ad.matrix() - ad.matrix() * a.matrix();
        for i in 0..4 {
            for j in 0..4 {
                let expected = if i == j { 1.0 } else { 0.0 };
                assert_relative_eq!(comm[(i, j)].re, expected, epsilon = 1e-14);
            }
        }
        // the truncation shows up only on the cutoff row
        assert_relative_eq!(comm[(4, 4)].re, -4.0, epsilon = 1e-14);
    }

    #[test]
    fn excitation_operator_eigenvalues() {
        let space = Space::mode_qubit(2);
        let c2 = excitation_operator(&space).unwrap();
        let two_g = KetState::from_label(&space, &[2], &[Qubit::G]).unwrap();
        let zero_e = KetState::from_label(&space, &[0], &[Qubit::E]).unwrap();
        assert_relative_eq!(two_g.expectation(&c2).unwrap().re, 2.0);
        assert_relative_eq!(zero_e.expectation(&c2).unwrap().re, 2.0);
        let ev = c2.eigenvalues().unwrap();
        assert!(ev.iter().all(|e| (e - e.round()).abs() < 1e-12));
        assert!(excitation_operator(&build_space(&[2], 0).unwrap()).is_err());
    }

    #[test]
    fn fidelity_cases() {
        let space = Space::mode_qubit(2);
        let psi = KetState::new(
            space.clone(),
            CVector::from_vec(vec![c(1.0), c(0.0), c(1.0), c(0.0), c(1.0), c(0.0)]),
        )
        .unwrap()
        .normalized()
        .unwrap();
        assert_relative_eq!(fidelity(&psi.to_density(), &psi).unwrap(), 1.0, epsilon = 1e-14);

        let g0 = KetState::from_label(&space, &[0], &[Qubit::G]).unwrap();
        let g1 = KetState::from_label(&space, &[1], &[Qubit::G]).unwrap();
        assert_eq!(fidelity(&g0.to_density(), &g1).unwrap(), 0.0);

        // Tr(|ψ⟩⟨ψ| I/6) = 1/6 for any normalized ψ
        let mixed = DensityMatrix::maximally_mixed(&space);
        assert_relative_eq!(fidelity(&mixed, &psi).unwrap(), 1.0 / 6.0, epsilon = 1e-14);

        let other = KetState::basis(&build_space(&[2], 0).unwrap(), 0);
        assert!(fidelity(&mixed, &other).is_err());
    }

    #[test]
    fn trace_out_qubit_of_product() {
        let space = Space::mode_qubit(2);
        let rho = KetState::from_label(&space, &[2], &[Qubit::G]).unwrap().to_density();
        let photons = partial_trace(&rho, &[0]).unwrap();
        assert_eq!(photons.space(), &build_space(&[2], 0).unwrap());
        assert_relative_eq!(photons.matrix()[(2, 2)].re, 1.0);
        assert_relative_eq!(photons.matrix().norm(), 1.0);
    }

    #[test]
    fn trace_out_mode_of_entangled_state() {
        // (|2,g⟩ + |0,e⟩)/√2 reduces to I/2 on the qubit
        let space = Space::mode_qubit(2);
        let mut amps = CVector::zeros(6);
        amps[space.index_of(&[2], &[Qubit::G]).unwrap()] = c(1.0 / 2f64.sqrt());
        amps[space.index_of(&[0], &[Qubit::E]).unwrap()] = c(1.0 / 2f64.sqrt());
        let rho = KetState::new(space, amps).unwrap().to_density();
        let qubit = partial_trace(&rho, &[1]).unwrap();
        assert_relative_eq!(qubit.matrix()[(0, 0)].re, 0.5, epsilon = 1e-15);
        assert_relative_eq!(qubit.matrix()[(1, 1)].re, 0.5, epsilon = 1e-15);
        assert_relative_eq!(qubit.matrix()[(0, 1)].norm(), 0.0);
    }

    #[test]
    fn keep_everything_is_identity() {
        let space = build_space(&[1, 2], 1).unwrap();
        let mixed = DensityMatrix::maximally_mixed(&space);
        let kept = partial_trace(&mixed, &[0, 1, 2]).unwrap();
        assert_eq!(kept, mixed);
        assert!(partial_trace(&mixed, &[]).is_err());
        assert!(partial_trace(&mixed, &[3]).is_err());
    }

    #[test]
    fn density_invariants_flag_violations() {
        let space = build_space(&[1], 0).unwrap();
        let bad = CMatrix::from_row_slice(2, 2, &[c(1.2), c(0.0), c(0.0), c(-0.2)]);
        assert!(DensityMatrix::new(space.clone(), bad).is_err());
        let good = CMatrix::from_row_slice(2, 2, &[c(0.5), c(0.0), c(0.0), c(0.5)]);
        assert!(DensityMatrix::new(space, good).is_ok());
    }

    #[test]
    fn dumps_are_row_major() {
        let space = build_space(&[1], 0).unwrap();
        let m = CMatrix::from_row_slice(2, 2, &[c(1.0), C64::new(0.0, 2.0), c(3.0), c(4.0)]);
        let op = OperatorMatrix::new(space, m).unwrap();
        let dump = op.to_dump();
        assert_eq!(dump.basis_labels, vec!["|0⟩", "|1⟩"]);
        assert_eq!(dump.re, vec![1.0, 0.0, 3.0, 4.0]);
        assert_eq!(dump.im, vec![0.0, 2.0, 0.0, 0.0]);
        assert!(!op.is_hermitian());
    }
}
