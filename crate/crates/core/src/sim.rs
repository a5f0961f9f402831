//! Statevector kernel: unitaries, Pauli noise unraveling and measurement.
//!
//! Qubit 0 is the most significant bit of a basis index, so the bitstring
//! `"01"` on two qubits is basis index 1 and reads qubit 0 first.
//! Measurement bit 0 corresponds to σ_z eigenvalue +1, bit 1 to -1.

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rand::Rng;

use crate::error::{Error, Result};

pub type C64 = Complex64;

pub(crate) const ZERO: C64 = C64::new(0.0, 0.0);
pub(crate) const ONE: C64 = C64::new(1.0, 0.0);
pub(crate) const I: C64 = C64::new(0.0, 1.0);

const NORM_TOL: f64 = 1e-9;
const UNITARY_TOL: f64 = 1e-10;

/// Dense square matrix checked to be unitary on construction.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitaryMatrix {
    dim: usize,
    entries: Vec<C64>,
}

impl UnitaryMatrix {
    /// Build from row-major entries, rejecting non-unitary input.
    pub fn new(dim: usize, entries: Vec<C64>) -> Result<Self> {
        if entries.len() != dim * dim {
            return Err(Error::DimensionMismatch {
                expected: dim * dim,
                actual: entries.len(),
            });
        }
        let u = Self { dim, entries };
        let dev = u.unitarity_deviation();
        if dev > UNITARY_TOL {
            return Err(Error::NotUnitary(dev));
        }
        Ok(u)
    }

    pub(crate) fn from_entries_unchecked(dim: usize, entries: Vec<C64>) -> Self {
        debug_assert_eq!(entries.len(), dim * dim);
        Self { dim, entries }
    }

    pub fn identity(dim: usize) -> Self {
        let mut entries = vec![ZERO; dim * dim];
        for i in 0..dim {
            entries[i * dim + i] = ONE;
        }
        Self { dim, entries }
    }

    pub fn diagonal(phases: &[C64]) -> Result<Self> {
        let dim = phases.len();
        let mut entries = vec![ZERO; dim * dim];
        for (i, &p) in phases.iter().enumerate() {
            entries[i * dim + i] = p;
        }
        Self::new(dim, entries)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of qubits the matrix acts on (dim must be a power of two).
    pub fn n_qubits(&self) -> usize {
        self.dim.trailing_zeros() as usize
    }

    pub fn entries(&self) -> &[C64] {
        &self.entries
    }

    pub fn get(&self, row: usize, col: usize) -> C64 {
        self.entries[row * self.dim + col]
    }

    pub fn adjoint(&self) -> Self {
        let d = self.dim;
        let mut entries = vec![ZERO; d * d];
        for r in 0..d {
            for c in 0..d {
                entries[c * d + r] = self.entries[r * d + c].conj();
            }
        }
        Self { dim: d, entries }
    }

    /// Matrix product `self · other`.
    pub fn mul(&self, other: &Self) -> Self {
        assert_eq!(self.dim, other.dim, "matrix product dimension mismatch");
        let d = self.dim;
        let mut entries = vec![ZERO; d * d];
        for r in 0..d {
            for k in 0..d {
                let a = self.entries[r * d + k];
                if a == ZERO {
                    continue;
                }
                for c in 0..d {
                    entries[r * d + c] += a * other.entries[k * d + c];
                }
            }
        }
        Self { dim: d, entries }
    }

    /// Kronecker product `self ⊗ other`; `self` acts on the leading qubits.
    pub fn kron(&self, other: &Self) -> Self {
        let (da, db) = (self.dim, other.dim);
        let d = da * db;
        let mut entries = vec![ZERO; d * d];
        for ra in 0..da {
            for ca in 0..da {
                let a = self.entries[ra * da + ca];
                for rb in 0..db {
                    for cb in 0..db {
                        entries[(ra * db + rb) * d + ca * db + cb] = a * other.entries[rb * db + cb];
                    }
                }
            }
        }
        Self { dim: d, entries }
    }

    pub fn trace(&self) -> C64 {
        (0..self.dim).map(|i| self.entries[i * self.dim + i]).sum()
    }

    /// Largest entrywise deviation of U†U from the identity.
    pub fn unitarity_deviation(&self) -> f64 {
        let d = self.dim;
        let mut worst = 0.0f64;
        for r in 0..d {
            for c in 0..d {
                let mut acc = ZERO;
                for k in 0..d {
                    acc += self.entries[k * d + r].conj() * self.entries[k * d + c];
                }
                let target = if r == c { ONE } else { ZERO };
                worst = worst.max((acc - target).norm());
            }
        }
        worst
    }

    pub fn is_diagonal(&self, tol: f64) -> bool {
        let d = self.dim;
        (0..d).all(|r| (0..d).all(|c| r == c || self.entries[r * d + c].norm() <= tol))
    }
}

/// Single-qubit Pauli factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Pauli {
    I,
    X,
    Y,
    Z,
}

impl Pauli {
    pub const ALL: [Pauli; 4] = [Pauli::I, Pauli::X, Pauli::Y, Pauli::Z];
    pub const NONTRIVIAL: [Pauli; 3] = [Pauli::X, Pauli::Y, Pauli::Z];

    pub fn matrix(self) -> UnitaryMatrix {
        let e = match self {
            Pauli::I => [ONE, ZERO, ZERO, ONE],
            Pauli::X => [ZERO, ONE, ONE, ZERO],
            Pauli::Y => [ZERO, -I, I, ZERO],
            Pauli::Z => [ONE, ZERO, ZERO, -ONE],
        };
        UnitaryMatrix::from_entries_unchecked(2, e.to_vec())
    }

    /// Whether two single-qubit Paulis anticommute.
    pub fn anticommutes(self, other: Pauli) -> bool {
        self != Pauli::I && other != Pauli::I && self != other
    }

    fn as_char(self) -> char {
        match self {
            Pauli::I => 'I',
            Pauli::X => 'X',
            Pauli::Y => 'Y',
            Pauli::Z => 'Z',
        }
    }
}

/// Tensor product of single-qubit Paulis, e.g. `XZZXI`; position 0 is qubit 0.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PauliOperator {
    factors: Vec<Pauli>,
}

impl PauliOperator {
    pub fn new(factors: Vec<Pauli>) -> Self {
        Self { factors }
    }

    pub fn identity(n_qubits: usize) -> Self {
        Self::new(vec![Pauli::I; n_qubits])
    }

    /// A weight-one Pauli on `qubit` of an `n_qubits` register.
    pub fn single(n_qubits: usize, qubit: usize, axis: Pauli) -> Self {
        let mut factors = vec![Pauli::I; n_qubits];
        factors[qubit] = axis;
        Self::new(factors)
    }

    pub fn len(&self) -> usize {
        self.factors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.factors.is_empty()
    }

    pub fn factors(&self) -> &[Pauli] {
        &self.factors
    }

    pub fn weight(&self) -> usize {
        self.factors.iter().filter(|&&p| p != Pauli::I).count()
    }

    pub fn commutes_with(&self, other: &PauliOperator) -> bool {
        let anti = self
            .factors
            .iter()
            .zip(&other.factors)
            .filter(|(a, b)| a.anticommutes(**b))
            .count();
        anti % 2 == 0
    }

    pub fn matrix(&self) -> UnitaryMatrix {
        self.factors
            .iter()
            .map(|p| p.matrix())
            .reduce(|acc, m| acc.kron(&m))
            .unwrap_or_else(|| UnitaryMatrix::identity(1))
    }
}

impl FromStr for PauliOperator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let factors = s
            .chars()
            .map(|c| match c {
                'I' => Ok(Pauli::I),
                'X' => Ok(Pauli::X),
                'Y' => Ok(Pauli::Y),
                'Z' => Ok(Pauli::Z),
                _ => Err(Error::InvalidPauli(s.to_string())),
            })
            .collect::<Result<Vec<_>>>()?;
        if factors.is_empty() {
            return Err(Error::InvalidPauli(s.to_string()));
        }
        Ok(Self { factors })
    }
}

impl fmt::Display for PauliOperator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for p in &self.factors {
            write!(f, "{}", p.as_char())?;
        }
        Ok(())
    }
}

/// Computational-basis measurement record; qubit 0 is printed first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Bitstring {
    value: usize,
    len: usize,
}

impl Bitstring {
    pub fn new(value: usize, len: usize) -> Self {
        debug_assert!(len >= usize::BITS as usize || value < (1usize << len));
        Self { value, len }
    }

    /// Basis-state index of the outcome.
    pub fn value(self) -> usize {
        self.value
    }

    pub fn len(self) -> usize {
        self.len
    }

    pub fn is_empty(self) -> bool {
        self.len == 0
    }

    pub fn bit(self, qubit: usize) -> u8 {
        ((self.value >> (self.len - 1 - qubit)) & 1) as u8
    }

    /// σ_z eigenvalue of a single-qubit outcome: bit 0 → +1, bit 1 → -1.
    pub fn z(self) -> i8 {
        if self.bit(0) == 0 {
            1
        } else {
            -1
        }
    }
}

impl fmt::Display for Bitstring {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for q in 0..self.len {
            write!(f, "{}", self.bit(q))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    n_qubits: usize,
    amps: Vec<C64>,
}

impl StateVector {
    /// The all-zeros state |0…0⟩.
    pub fn zero(n_qubits: usize) -> Self {
        let mut amps = vec![ZERO; 1 << n_qubits];
        amps[0] = ONE;
        Self { n_qubits, amps }
    }

    pub fn from_amplitudes(amps: Vec<C64>) -> Result<Self> {
        let len = amps.len();
        if len == 0 || !len.is_power_of_two() {
            return Err(Error::DimensionMismatch {
                expected: len.next_power_of_two().max(1),
                actual: len,
            });
        }
        let s = Self {
            n_qubits: len.trailing_zeros() as usize,
            amps,
        };
        s.check_normalized()?;
        Ok(s)
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amps
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum()
    }

    pub fn check_normalized(&self) -> Result<()> {
        let n = self.norm_sqr();
        if (n - 1.0).abs() > NORM_TOL || !n.is_finite() {
            return Err(Error::Unnormalized(n));
        }
        Ok(())
    }

    pub(crate) fn renormalize(&mut self) {
        let n = self.norm_sqr().sqrt();
        for a in &mut self.amps {
            *a /= n;
        }
    }

    /// ⟨self|other⟩.
    pub fn inner(&self, other: &StateVector) -> C64 {
        self.amps
            .iter()
            .zip(&other.amps)
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    /// |⟨self|other⟩|², insensitive to global phase.
    pub fn fidelity(&self, other: &StateVector) -> f64 {
        self.inner(other).norm_sqr()
    }

    fn check_targets(&self, targets: &[usize]) -> Result<()> {
        for (i, &t) in targets.iter().enumerate() {
            if t >= self.n_qubits {
                return Err(Error::QubitOutOfRange {
                    index: t,
                    n_qubits: self.n_qubits,
                });
            }
            if targets[..i].contains(&t) {
                return Err(Error::DuplicateTarget(t));
            }
        }
        Ok(())
    }

    #[inline]
    fn qubit_mask(&self, qubit: usize) -> usize {
        1 << (self.n_qubits - 1 - qubit)
    }

    /// Apply `u` to `targets` (targets[0] is the most significant local qubit).
    pub fn apply_unitary(&mut self, u: &UnitaryMatrix, targets: &[usize]) -> Result<()> {
        self.check_targets(targets)?;
        let expected = 1usize << targets.len();
        if u.dim() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                actual: u.dim(),
            });
        }
        if targets.len() == 1 {
            self.apply_single(u, targets[0]);
            return Ok(());
        }
        let k = targets.len();
        let d = expected;
        let masks: Vec<usize> = targets.iter().map(|&t| self.qubit_mask(t)).collect();
        let all: usize = masks.iter().sum();
        let offsets: Vec<usize> = (0..d)
            .map(|l| {
                (0..k)
                    .filter(|&i| (l >> (k - 1 - i)) & 1 == 1)
                    .map(|i| masks[i])
                    .sum()
            })
            .collect();
        let mut buf = vec![ZERO; d];
        let m = u.entries();
        for base in 0..self.amps.len() {
            if base & all != 0 {
                continue;
            }
            for (l, off) in offsets.iter().enumerate() {
                buf[l] = self.amps[base | off];
            }
            for (r, off) in offsets.iter().enumerate() {
                let row = &m[r * d..(r + 1) * d];
                self.amps[base | off] = row.iter().zip(&buf).map(|(a, b)| a * b).sum();
            }
        }
        Ok(())
    }

    fn apply_single(&mut self, u: &UnitaryMatrix, qubit: usize) {
        let mask = self.qubit_mask(qubit);
        let m = u.entries();
        let (u00, u01, u10, u11) = (m[0], m[1], m[2], m[3]);
        for i in 0..self.amps.len() {
            if i & mask != 0 {
                continue;
            }
            let a0 = self.amps[i];
            let a1 = self.amps[i | mask];
            self.amps[i] = u00 * a0 + u01 * a1;
            self.amps[i | mask] = u10 * a0 + u11 * a1;
        }
    }

    /// Apply a single Pauli factor to one qubit.
    pub fn apply_pauli_on(&mut self, qubit: usize, axis: Pauli) {
        let mask = self.qubit_mask(qubit);
        match axis {
            Pauli::I => {}
            Pauli::X => {
                for i in 0..self.amps.len() {
                    if i & mask == 0 {
                        self.amps.swap(i, i | mask);
                    }
                }
            }
            Pauli::Z => {
                for (i, a) in self.amps.iter_mut().enumerate() {
                    if i & mask != 0 {
                        *a = -*a;
                    }
                }
            }
            Pauli::Y => {
                for i in 0..self.amps.len() {
                    if i & mask == 0 {
                        let a0 = self.amps[i];
                        let a1 = self.amps[i | mask];
                        self.amps[i] = -I * a1;
                        self.amps[i | mask] = I * a0;
                    }
                }
            }
        }
    }

    pub fn apply_pauli(&mut self, op: &PauliOperator) -> Result<()> {
        if op.len() != self.n_qubits {
            return Err(Error::DimensionMismatch {
                expected: self.n_qubits,
                actual: op.len(),
            });
        }
        for (q, &p) in op.factors().iter().enumerate() {
            self.apply_pauli_on(q, p);
        }
        Ok(())
    }

    /// Apply (I + sign·P)/2 and renormalize; returns the branch probability.
    /// The state is left untouched when the probability is below `min_prob`.
    pub fn project_pauli(&mut self, op: &PauliOperator, sign: f64, min_prob: f64) -> Result<f64> {
        let mut image = self.clone();
        image.apply_pauli(op)?;
        let projected: Vec<C64> = self
            .amps
            .iter()
            .zip(&image.amps)
            .map(|(a, b)| (a + b * sign) * 0.5)
            .collect();
        let prob: f64 = projected.iter().map(|a| a.norm_sqr()).sum();
        if prob >= min_prob {
            self.amps = projected;
            self.renormalize();
        }
        Ok(prob)
    }

    /// ⟨ψ|P|ψ⟩ for a Hermitian Pauli string.
    pub fn expectation(&self, op: &PauliOperator) -> Result<f64> {
        let mut image = self.clone();
        image.apply_pauli(op)?;
        Ok(self.inner(&image).re)
    }

    /// Stochastic unraveling of ρ → p·I/d + (1-p)·ρ on `targets`: with
    /// probability `p` a Pauli drawn uniformly from all 4^k strings (identity
    /// included) is applied. Returns the applied string, if any was drawn.
    pub fn apply_depolarizing<R: Rng + ?Sized>(
        &mut self,
        p: f64,
        targets: &[usize],
        rng: &mut R,
    ) -> Result<Option<Vec<Pauli>>> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidProbability(p));
        }
        self.check_targets(targets)?;
        if p == 0.0 || rng.random::<f64>() >= p {
            return Ok(None);
        }
        let drawn: Vec<Pauli> = targets
            .iter()
            .map(|_| Pauli::ALL[rng.random_range(0..4)])
            .collect();
        for (&q, &axis) in targets.iter().zip(&drawn) {
            self.apply_pauli_on(q, axis);
        }
        Ok(Some(drawn))
    }

    /// Exact Born probabilities of every computational-basis outcome.
    pub fn outcome_distribution(&self) -> Vec<f64> {
        self.amps.iter().map(|a| a.norm_sqr()).collect()
    }

    /// Sample one terminal computational-basis measurement.
    pub fn measure_computational<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Bitstring> {
        self.check_normalized()?;
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut last_nonzero = 0;
        for (i, a) in self.amps.iter().enumerate() {
            let p = a.norm_sqr();
            if p > 0.0 {
                last_nonzero = i;
            }
            acc += p;
            if u < acc {
                return Ok(Bitstring::new(i, self.n_qubits));
            }
        }
        // u landed in the rounding gap above the accumulated total.
        Ok(Bitstring::new(last_nonzero, self.n_qubits))
    }
}
