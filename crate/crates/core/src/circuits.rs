//! Circuits, shot execution with noise, and sensitivity Jacobians.
//!
//! Gate lists are stored in execution order (first element runs first).
//! A circuit runs `prefix`, then `body` repeated `repetitions` times, then
//! `suffix`, and ends with a computational-basis measurement.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gates::{self, ControlParameterSet, CzParams, GxParams, GyParams};
use crate::sim::{Bitstring, StateVector, UnitaryMatrix};

pub const FD_STEP: f64 = 1e-5;
pub const WELL_CONDITIONED: f64 = 10.0;

/// Depolarization after every calibrated gate (`p`) and before readout (`p_spam`).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseModel {
    #[serde(default)]
    pub p: f64,
    #[serde(default)]
    pub p_spam: f64,
}

impl NoiseModel {
    pub const NOISELESS: NoiseModel = NoiseModel { p: 0.0, p_spam: 0.0 };

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("noise.p", self.p), ("noise.p_spam", self.p_spam)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::config(name, format!("probability must lie in [0, 1], got {v}")));
            }
        }
        Ok(())
    }
}

/// A gate reference. Parameter slots index into the control parameter set;
/// `None` means the gate is ideal. Only gates with at least one parameter
/// slot are subject to gate depolarization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "gate", rename_all = "snake_case", deny_unknown_fields)]
pub enum Gate {
    Gx {
        qubit: usize,
        #[serde(default)]
        theta: Option<usize>,
    },
    Gy {
        qubit: usize,
        #[serde(default)]
        theta: Option<usize>,
        #[serde(default)]
        phi: Option<usize>,
    },
    /// Controlled-Z on qubits (0, 1).
    Cz {
        #[serde(default)]
        zi: Option<usize>,
        #[serde(default)]
        iz: Option<usize>,
        #[serde(default)]
        zz: Option<usize>,
    },
    H { qubit: usize },
}

fn slot(deltas: &[f64], idx: Option<usize>) -> f64 {
    idx.map_or(0.0, |i| deltas[i])
}

impl Gate {
    pub fn targets(&self) -> Vec<usize> {
        match self {
            Gate::Gx { qubit, .. } | Gate::Gy { qubit, .. } | Gate::H { qubit } => vec![*qubit],
            Gate::Cz { .. } => vec![0, 1],
        }
    }

    fn slots(&self) -> Vec<usize> {
        match self {
            Gate::Gx { theta, .. } => theta.iter().copied().collect(),
            Gate::Gy { theta, phi, .. } => theta.iter().chain(phi.iter()).copied().collect(),
            Gate::Cz { zi, iz, zz } => zi.iter().chain(iz).chain(zz).copied().collect(),
            Gate::H { .. } => Vec::new(),
        }
    }

    pub fn is_calibrated(&self) -> bool {
        !self.slots().is_empty()
    }

    /// The gate's unitary given physical error angles δ = α·Δη per parameter.
    pub fn unitary(&self, deltas: &[f64]) -> UnitaryMatrix {
        match self {
            Gate::Gx { theta, .. } => gates::build_gx(GxParams { delta: slot(deltas, *theta) }),
            Gate::Gy { theta, phi, .. } => gates::build_gy(GyParams {
                theta: slot(deltas, *theta),
                phi: slot(deltas, *phi),
            }),
            Gate::Cz { zi, iz, zz } => gates::build_cz(CzParams {
                theta_zi: slot(deltas, *zi),
                theta_iz: slot(deltas, *iz),
                theta_zz: slot(deltas, *zz),
            }),
            Gate::H { .. } => gates::hadamard(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Circuit {
    pub name: String,
    pub n_qubits: usize,
    #[serde(default)]
    pub prefix: Vec<Gate>,
    pub body: Vec<Gate>,
    pub repetitions: u32,
    #[serde(default)]
    pub suffix: Vec<Gate>,
}

impl Circuit {
    pub fn new(name: impl Into<String>, n_qubits: usize, body: Vec<Gate>, repetitions: u32) -> Result<Self> {
        let c = Self {
            name: name.into(),
            n_qubits,
            prefix: Vec::new(),
            body,
            repetitions,
            suffix: Vec::new(),
        };
        c.validate(usize::MAX)?;
        Ok(c)
    }

    fn gates(&self) -> impl Iterator<Item = &Gate> {
        self.prefix.iter().chain(&self.body).chain(&self.suffix)
    }

    /// Number of control parameters the circuit references.
    pub fn n_params(&self) -> usize {
        self.gates().flat_map(Gate::slots).map(|i| i + 1).max().unwrap_or(0)
    }

    pub fn validate(&self, n_params: usize) -> Result<()> {
        if self.n_qubits == 0 {
            return Err(Error::config("circuit.n_qubits", "must be >= 1"));
        }
        for g in self.gates() {
            for t in g.targets() {
                if t >= self.n_qubits {
                    return Err(Error::QubitOutOfRange { index: t, n_qubits: self.n_qubits });
                }
            }
            for s in g.slots() {
                if s >= n_params {
                    return Err(Error::DimensionMismatch { expected: n_params, actual: s + 1 });
                }
            }
        }
        Ok(())
    }

    pub fn n_outcomes(&self) -> usize {
        1 << self.n_qubits
    }

    /// Noiseless final state.
    pub fn final_state(&self, deltas: &[f64]) -> Result<StateVector> {
        let mut s = StateVector::zero(self.n_qubits);
        let apply = |s: &mut StateVector, gs: &[Gate]| -> Result<Vec<UnitaryMatrix>> {
            let us: Vec<UnitaryMatrix> = gs.iter().map(|g| g.unitary(deltas)).collect();
            for (g, u) in gs.iter().zip(&us) {
                s.apply_unitary(u, &g.targets())?;
            }
            Ok(us)
        };
        apply(&mut s, &self.prefix)?;
        let body: Vec<(UnitaryMatrix, Vec<usize>)> =
            self.body.iter().map(|g| (g.unitary(deltas), g.targets())).collect();
        for _ in 0..self.repetitions {
            for (u, t) in &body {
                s.apply_unitary(u, t)?;
            }
        }
        apply(&mut s, &self.suffix)?;
        Ok(s)
    }

    /// Exact noiseless outcome distribution at the parameters' current offsets.
    pub fn outcome_distribution(&self, params: &ControlParameterSet) -> Result<Vec<f64>> {
        self.validate(params.len())?;
        Ok(self.final_state(&params.deltas())?.outcome_distribution())
    }

    /// One sampled shot with gate and SPAM depolarization.
    pub fn run<R: Rng + ?Sized>(
        &self,
        params: &ControlParameterSet,
        noise: &NoiseModel,
        rng: &mut R,
    ) -> Result<Bitstring> {
        debug_assert!(self.validate(params.len()).is_ok());
        let deltas = params.deltas();
        let mut s = StateVector::zero(self.n_qubits);
        let compiled = |gs: &[Gate]| -> Vec<(UnitaryMatrix, Vec<usize>, bool)> {
            gs.iter()
                .map(|g| (g.unitary(&deltas), g.targets(), g.is_calibrated()))
                .collect()
        };
        let (pre, body, post) = (compiled(&self.prefix), compiled(&self.body), compiled(&self.suffix));
        let mut step = |s: &mut StateVector, ops: &[(UnitaryMatrix, Vec<usize>, bool)]| -> Result<()> {
            for (u, t, noisy) in ops {
                s.apply_unitary(u, t)?;
                if *noisy && noise.p > 0.0 {
                    s.apply_depolarizing(noise.p, t, rng)?;
                }
            }
            Ok(())
        };
        step(&mut s, &pre)?;
        for _ in 0..self.repetitions {
            step(&mut s, &body)?;
        }
        step(&mut s, &post)?;
        if noise.p_spam > 0.0 {
            let all: Vec<usize> = (0..self.n_qubits).collect();
            s.apply_depolarizing(noise.p_spam, &all, rng)?;
        }
        s.measure_computational(rng)
    }
}

/// One sampled shot; free-function form of [`Circuit::run`].
pub fn run_circuit<R: Rng + ?Sized>(
    c: &Circuit,
    params: &ControlParameterSet,
    noise: &NoiseModel,
    rng: &mut R,
) -> Result<Bitstring> {
    c.run(params, noise, rng)
}

/// (Gx)^r on one qubit driven by parameter 0.
pub fn gx_power(r: u32) -> Circuit {
    Circuit {
        name: format!("gx_power_{r}"),
        n_qubits: 1,
        prefix: Vec::new(),
        body: vec![Gate::Gx { qubit: 0, theta: Some(0) }],
        repetitions: r,
        suffix: Vec::new(),
    }
}

fn gx_t() -> Gate {
    Gate::Gx { qubit: 0, theta: Some(0) }
}

fn gy_t() -> Gate {
    Gate::Gy { qubit: 0, theta: Some(0), phi: Some(1) }
}

/// Gx · Gy · Gx · Gy · Gx, parameters (θ, φ) in slots (0, 1).
pub fn gxgy_c1(r: u32) -> Circuit {
    Circuit {
        name: "gxgy_c1".into(),
        n_qubits: 1,
        prefix: Vec::new(),
        body: vec![gx_t(), gy_t(), gx_t(), gy_t(), gx_t()],
        repetitions: r,
        suffix: Vec::new(),
    }
}

/// Gy, Gx, Gy, Gx, Gy, Gx, Gx in execution order.
pub fn gxgy_c2(r: u32) -> Circuit {
    Circuit {
        name: "gxgy_c2".into(),
        n_qubits: 1,
        prefix: Vec::new(),
        body: vec![gy_t(), gx_t(), gy_t(), gx_t(), gy_t(), gx_t(), gx_t()],
        repetitions: r,
        suffix: Vec::new(),
    }
}

fn cz_t() -> Gate {
    Gate::Cz { zi: Some(0), iz: Some(1), zz: Some(2) }
}

fn cz_circuit(name: &str, flip_qubit: usize, r: u32) -> Circuit {
    let flip = Gate::Gx { qubit: flip_qubit, theta: None };
    Circuit {
        name: name.into(),
        n_qubits: 2,
        prefix: vec![Gate::H { qubit: 0 }, Gate::H { qubit: 1 }],
        body: vec![flip.clone(), cz_t(), flip.clone(), cz_t(), flip, cz_t()],
        repetitions: r,
        suffix: Vec::new(),
    }
}

/// H on both qubits, then (ideal Gx on the second qubit, CZ) three times.
/// Parameters (θ_ZI, θ_IZ, θ_ZZ) in slots (0, 1, 2).
pub fn cz_c1(r: u32) -> Circuit {
    cz_circuit("cz_c1", 1, r)
}

/// As [`cz_c1`] with the ideal Gx on the first qubit.
pub fn cz_c2(r: u32) -> Circuit {
    cz_circuit("cz_c2", 0, r)
}

/// The circuit and its copy ending in a deterministic bit flip (two ideal
/// Gx on every qubit). Outcomes of the flipped copy are inverted by
/// [`AlternatingPair::corrected`] before use.
#[derive(Debug, Clone, PartialEq)]
pub struct AlternatingPair {
    pub plain: Circuit,
    pub flipped: Circuit,
}

pub fn spam_alternation_wrapper(c: &Circuit) -> AlternatingPair {
    let mut flipped = c.clone();
    flipped.name = format!("{}_flipped", c.name);
    for q in 0..c.n_qubits {
        for _ in 0..2 {
            flipped.suffix.push(Gate::Gx { qubit: q, theta: None });
        }
    }
    AlternatingPair { plain: c.clone(), flipped }
}

impl AlternatingPair {
    /// Choose the family for shot `t`: even shots plain, odd shots flipped.
    pub fn for_shot(&self, t: u64) -> (&Circuit, bool) {
        if t.is_multiple_of(2) {
            (&self.plain, false)
        } else {
            (&self.flipped, true)
        }
    }

    pub fn corrected(outcome: Bitstring, flipped: bool) -> Bitstring {
        if flipped {
            let mask = (1usize << outcome.len()) - 1;
            Bitstring::new(outcome.value() ^ mask, outcome.len())
        } else {
            outcome
        }
    }
}

/// Central finite-difference gradient of every outcome probability with
/// respect to each control parameter, evaluated at η = η_opt.
/// Rows are outcomes, columns parameters.
pub fn sensitivity_matrix(c: &Circuit, params: &ControlParameterSet) -> Result<DMatrix<f64>> {
    c.validate(params.len())?;
    let m = params.len();
    let mut at_opt = params.clone();
    at_opt.eta.clone_from(&at_opt.eta_opt);
    let mut out = DMatrix::zeros(c.n_outcomes(), m);
    for k in 0..m {
        let mut plus = at_opt.clone();
        let mut minus = at_opt.clone();
        plus.eta[k] += FD_STEP;
        minus.eta[k] -= FD_STEP;
        let pp = c.final_state(&plus.deltas())?.outcome_distribution();
        let pm = c.final_state(&minus.deltas())?.outcome_distribution();
        for (o, (a, b)) in pp.iter().zip(&pm).enumerate() {
            let v = (a - b) / (2.0 * FD_STEP);
            if !v.is_finite() {
                return Err(Error::NonFinite("sensitivity"));
            }
            out[(o, k)] = v;
        }
    }
    Ok(out)
}

/// Sensitivity vector of one outcome.
pub fn sensitivity_vector(c: &Circuit, outcome: Bitstring, params: &ControlParameterSet) -> Result<Vec<f64>> {
    let m = sensitivity_matrix(c, params)?;
    Ok(m.row(outcome.value()).iter().copied().collect())
}

/// Closed-form outcome sensitivity of (Gx)^r for r ≡ 1 mod 4: s_z = −½ z α r.
pub fn gx_outcome_sensitivity(z: i8, alpha: f64, r: u32) -> f64 {
    -0.5 * f64::from(z) * alpha * f64::from(r)
}

/// Closed-form Pr(bit 1) of (Gx)^r at error angle δ: sin²(r(π/2 + δ)/2).
pub fn gx_power_prob_one(r: u32, delta: f64) -> f64 {
    (0.5 * f64::from(r) * (std::f64::consts::FRAC_PI_2 + delta)).sin().powi(2)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Jacobian {
    pub matrix: DMatrix<f64>,
    /// (circuit name, outcome index) per row.
    pub labels: Vec<(String, usize)>,
    /// Row range owned by each circuit.
    pub blocks: Vec<Range<usize>>,
    /// Ideal outcome probabilities stacked like the rows.
    pub ideal: DVector<f64>,
}

impl Jacobian {
    pub fn n_params(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn singular_values(&self) -> Vec<f64> {
        let mut sv: Vec<f64> = self.matrix.clone().svd(false, false).singular_values.iter().copied().collect();
        sv.sort_by(|a, b| b.total_cmp(a));
        sv
    }

    pub fn rank(&self) -> usize {
        let sv = self.singular_values();
        let tol = sv.first().copied().unwrap_or(0.0) * 1e-9 * self.matrix.nrows().max(self.matrix.ncols()) as f64;
        sv.iter().filter(|&&s| s > tol).count()
    }

    /// Ratio of the largest to the smallest of the first `m` singular values.
    pub fn condition_number(&self) -> f64 {
        let sv = self.singular_values();
        let m = self.n_params().min(sv.len());
        if m == 0 || sv[m - 1] == 0.0 {
            return f64::INFINITY;
        }
        sv[0] / sv[m - 1]
    }

    pub fn is_informationally_complete(&self) -> bool {
        self.rank() == self.n_params()
    }

    pub fn is_well_conditioned(&self) -> bool {
        self.condition_number() <= WELL_CONDITIONED
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.matrix.row(i).iter().copied().collect()
    }

    /// Row index of `outcome` within circuit block `circuit`.
    pub fn row_index(&self, circuit: usize, outcome: Bitstring) -> usize {
        self.blocks[circuit].start + outcome.value()
    }

    /// Copy with every circuit block scaled to unit Frobenius norm.
    pub fn normalized_per_circuit(&self) -> Jacobian {
        let mut out = self.clone();
        for b in &self.blocks {
            let norm = self.matrix.rows(b.start, b.len()).norm();
            if norm > 0.0 {
                out.matrix.rows_mut(b.start, b.len()).unscale_mut(norm);
            }
        }
        out
    }

    /// Largest |column sum| over each circuit's outcome block.
    pub fn max_block_column_sum(&self) -> f64 {
        self.blocks
            .iter()
            .flat_map(|b| {
                let rows = self.matrix.rows(b.start, b.len());
                (0..rows.ncols()).map(move |k| rows.column(k).sum().abs()).collect::<Vec<_>>()
            })
            .fold(0.0, f64::max)
    }

    /// Least-squares offset estimate Δη = J⁺ (f − p_ideal) from stacked
    /// outcome frequencies. For circuits with uniform ideal outputs this
    /// equals J⁺ f because every block's columns sum to zero.
    pub fn pseudoinverse_estimate(&self, frequencies: &[f64]) -> Result<Vec<f64>> {
        if frequencies.len() != self.matrix.nrows() {
            return Err(Error::DimensionMismatch {
                expected: self.matrix.nrows(),
                actual: frequencies.len(),
            });
        }
        let rank = self.rank();
        if rank < self.n_params() {
            return Err(Error::RankDeficient { rank, params: self.n_params() });
        }
        let pinv = self
            .matrix
            .clone()
            .pseudo_inverse(1e-12)
            .map_err(|_| Error::Singular("jacobian"))?;
        let f = DVector::from_column_slice(frequencies) - &self.ideal;
        Ok((pinv * f).iter().copied().collect())
    }
}

/// Stack the sensitivity matrices of `circuits` into a Jacobian.
pub fn build_jacobian(circuits: &[Circuit], params: &ControlParameterSet) -> Result<Jacobian> {
    if circuits.is_empty() {
        return Err(Error::config("circuits", "at least one circuit is required"));
    }
    let mut blocks = Vec::new();
    let mut labels = Vec::new();
    let mut mats = Vec::new();
    let mut ideal = Vec::new();
    let mut at_opt = params.clone();
    at_opt.eta.clone_from(&at_opt.eta_opt);
    let mut start = 0;
    for c in circuits {
        let s = sensitivity_matrix(c, params)?;
        blocks.push(start..start + s.nrows());
        labels.extend((0..s.nrows()).map(|o| (c.name.clone(), o)));
        start += s.nrows();
        ideal.extend(c.outcome_distribution(&at_opt)?);
        mats.push(s);
    }
    let mut matrix = DMatrix::zeros(start, params.len());
    for (b, s) in blocks.iter().zip(&mats) {
        matrix.rows_mut(b.start, b.len()).copy_from(s);
    }
    Ok(Jacobian {
        matrix,
        labels,
        blocks,
        ideal: DVector::from_vec(ideal),
    })
}

/// Named built-in or explicit gate list, as written in a config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CircuitSpec {
    GxPower { repetitions: u32 },
    GxgyC1 { repetitions: u32 },
    GxgyC2 { repetitions: u32 },
    CzC1 { repetitions: u32 },
    CzC2 { repetitions: u32 },
    Custom {
        name: String,
        n_qubits: usize,
        #[serde(default)]
        prefix: Vec<Gate>,
        body: Vec<Gate>,
        repetitions: u32,
        #[serde(default)]
        suffix: Vec<Gate>,
    },
}

impl CircuitSpec {
    pub fn build(&self) -> Circuit {
        match self {
            CircuitSpec::GxPower { repetitions } => gx_power(*repetitions),
            CircuitSpec::GxgyC1 { repetitions } => gxgy_c1(*repetitions),
            CircuitSpec::GxgyC2 { repetitions } => gxgy_c2(*repetitions),
            CircuitSpec::CzC1 { repetitions } => cz_c1(*repetitions),
            CircuitSpec::CzC2 { repetitions } => cz_c2(*repetitions),
            CircuitSpec::Custom { name, n_qubits, prefix, body, repetitions, suffix } => Circuit {
                name: name.clone(),
                n_qubits: *n_qubits,
                prefix: prefix.clone(),
                body: body.clone(),
                repetitions: *repetitions,
                suffix: suffix.clone(),
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    fn single(offset: f64) -> ControlParameterSet {
        ControlParameterSet::with_offsets(&[offset])
    }

    #[test]
    fn gx_power_probabilities() {
        let p = gx_power(1).outcome_distribution(&single(0.2)).unwrap();
        assert!((p[1] - 0.5 * (1.0 + 0.2f64.sin())).abs() < 1e-10);
        let p6 = gx_power(6).outcome_distribution(&single(0.0)).unwrap();
        assert!(p6[0] < 1e-12);
        for r in [1, 5, 13, 61] {
            for d in [-0.3, 0.0, 0.05] {
                let p = gx_power(r).outcome_distribution(&single(d)).unwrap();
                assert!((p[1] - gx_power_prob_one(r, d)).abs() < 1e-10);
                assert!((p[1] - 0.5 * (1.0 + (f64::from(r) * d).sin())).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn finite_difference_matches_closed_form() {
        for r in [1u32, 5, 13, 25] {
            for alpha in [1.0, 0.5, -2.0] {
                let params = ControlParameterSet::new(vec![0.0], vec![0.0], vec![alpha]).unwrap();
                let s = sensitivity_matrix(&gx_power(r), &params).unwrap();
                for (o, z) in [(0usize, 1i8), (1, -1)] {
                    let exact = gx_outcome_sensitivity(z, alpha, r);
                    assert!((s[(o, 0)] - exact).abs() <= 1e-6 * exact.abs(), "r={r} {s}");
                }
            }
        }
        let s = sensitivity_vector(&gx_power(1), Bitstring::new(0, 1), &single(0.0)).unwrap();
        assert!((s[0] + 0.5).abs() < 1e-8);
    }

    #[test]
    fn builtin_ideal_distributions_are_uniform() {
        let zero2 = ControlParameterSet::with_offsets(&[0.0, 0.0]);
        let zero3 = ControlParameterSet::with_offsets(&[0.0, 0.0, 0.0]);
        for c in [gxgy_c1(1), gxgy_c2(1), gxgy_c1(5), gxgy_c2(5)] {
            for p in c.outcome_distribution(&zero2).unwrap() {
                assert!((p - 0.5).abs() < 1e-12);
            }
        }
        for c in [cz_c1(1), cz_c2(1)] {
            for p in c.outcome_distribution(&zero3).unwrap() {
                assert!((p - 0.25).abs() < 1e-12);
            }
        }
    }

    fn gxgy_printed_convention() -> ControlParameterSet {
        ControlParameterSet::new(vec![0.0; 2], vec![0.0; 2], vec![1.0, -1.0]).unwrap()
    }

    #[test]
    fn gxgy_jacobian_reproduces_printed_matrix() {
        let j = build_jacobian(&[gxgy_c1(1), gxgy_c2(1)], &gxgy_printed_convention())
            .unwrap()
            .normalized_per_circuit();
        let printed = [[0.316, -0.632], [-0.316, 0.632], [-0.588, 0.392], [0.588, -0.392]];
        for (i, row) in printed.iter().enumerate() {
            for (k, v) in row.iter().enumerate() {
                assert!((j.matrix[(i, k)] - v).abs() < 5e-4, "{}", j.matrix);
            }
        }
        assert_eq!(j.rank(), 2);
    }

    #[test]
    fn cz_jacobian_reproduces_printed_matrix() {
        let params = ControlParameterSet::new(vec![0.0; 3], vec![0.0; 3], vec![-0.5, -0.5, 0.5]).unwrap();
        let j = build_jacobian(&[cz_c1(1), cz_c2(1)], &params).unwrap();
        let printed = [
            [0.0, 0.0, 0.0, 0.0, 1.0, 1.0, -1.0, -1.0],
            [1.0, -1.0, 1.0, -1.0, 0.0, 0.0, 0.0, 0.0],
            [1.0, -1.0, -1.0, 1.0, 1.0, -1.0, -1.0, 1.0],
        ];
        for (k, col) in printed.iter().enumerate() {
            for (i, v) in col.iter().enumerate() {
                assert!((j.matrix[(i, k)] - v / 4.0).abs() < 5e-4, "{}", j.matrix);
            }
        }
        assert_eq!(j.rank(), 3);
        assert!(j.max_block_column_sum() < 1e-8);
    }

    #[test]
    fn duplicate_circuit_keeps_rank() {
        let p = ControlParameterSet::with_offsets(&[0.0, 0.0]);
        let one = build_jacobian(&[gxgy_c1(1)], &p).unwrap();
        let two = build_jacobian(&[gxgy_c1(1), gxgy_c1(1)], &p).unwrap();
        assert_eq!(one.rank(), two.rank());
        assert_eq!(one.rank(), 1);
        assert!(!one.is_informationally_complete());
        assert!(matches!(
            one.pseudoinverse_estimate(&[0.5, 0.5]),
            Err(Error::RankDeficient { rank: 1, params: 2 })
        ));
    }

    #[test]
    fn pseudoinverse_recovers_small_offsets() {
        let p = ControlParameterSet::with_offsets(&[0.0, 0.0]);
        let circuits = [gxgy_c1(1), gxgy_c2(1)];
        let j = build_jacobian(&circuits, &p).unwrap();
        let uniform = vec![0.5; 4];
        for v in j.pseudoinverse_estimate(&uniform).unwrap() {
            assert!(v.abs() < 1e-8);
        }
        let truth = [0.004, -0.003];
        let shifted = ControlParameterSet::with_offsets(&truth);
        let f: Vec<f64> = circuits
            .iter()
            .flat_map(|c| c.outcome_distribution(&shifted).unwrap())
            .collect();
        let est = j.pseudoinverse_estimate(&f).unwrap();
        for (e, t) in est.iter().zip(truth) {
            assert!((e - t).abs() < 10.0 * 0.004f64.powi(2), "{est:?}");
        }
    }

    #[test]
    fn one_hot_frequency_maps_through_pseudoinverse() {
        let p = ControlParameterSet::with_offsets(&[0.0, 0.0, 0.0]);
        let j = build_jacobian(&[cz_c1(1), cz_c2(1)], &p).unwrap();
        let pinv = j.matrix.clone().pseudo_inverse(1e-12).unwrap();
        let mut f = vec![0.0; 8];
        f[5] = 1.0;
        let est = j.pseudoinverse_estimate(&f).unwrap();
        let centered = DVector::from_vec(f) - &j.ideal;
        let expected = &pinv * centered;
        for (a, b) in est.iter().zip(expected.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        // Only the second block sees a one-hot; the estimate lies along its rows.
        assert!(est.iter().any(|v| v.abs() > 0.1));
    }

    #[test]
    fn alternation_pair_sensitivities_cancel() {
        let p = single(0.0);
        for c in [gx_power(1), gx_power(13)] {
            let pair = spam_alternation_wrapper(&c);
            let a = sensitivity_matrix(&pair.plain, &p).unwrap();
            let b = sensitivity_matrix(&pair.flipped, &p).unwrap();
            for o in 0..2 {
                assert!((a[(o, 0)] + b[(o, 0)]).abs() < 1e-8);
            }
            // Sign-corrected outcomes carry the original sensitivity.
            let corrected = AlternatingPair::corrected(Bitstring::new(0, 1), true);
            assert_eq!(corrected.value(), 1);
        }
    }

    #[test]
    fn noiseless_shots_follow_exact_distribution() {
        let mut rng = RngStream::new(21, 0);
        let params = ControlParameterSet::with_offsets(&[0.0, 0.0, 0.0]);
        let c = cz_c1(1);
        let n = 100_000;
        let mut counts = [0usize; 4];
        for _ in 0..n {
            counts[c.run(&params, &NoiseModel::NOISELESS, &mut rng).unwrap().value()] += 1;
        }
        let se = (0.25f64 * 0.75 / n as f64).sqrt();
        for k in counts {
            assert!((k as f64 / n as f64 - 0.25).abs() < 3.0 * se, "{counts:?}");
        }
        let six = gx_power(6);
        let p = single(0.0);
        for _ in 0..1000 {
            assert_eq!(six.run(&p, &NoiseModel::NOISELESS, &mut rng).unwrap().value(), 1);
        }
    }

    #[test]
    fn spec_parses_builtin_and_custom() {
        let b: CircuitSpec = toml::from_str("kind = \"gxgy_c1\"\nrepetitions = 5").unwrap();
        assert_eq!(b.build(), gxgy_c1(5));
        let c: CircuitSpec = toml::from_str(
            r#"
kind = "custom"
name = "ramsey"
n_qubits = 1
repetitions = 1
body = [{ gate = "gx", qubit = 0, theta = 0 }, { gate = "gx", qubit = 0 }]
"#,
        )
        .unwrap();
        let built = c.build();
        assert_eq!(built.n_params(), 1);
        assert!(built.body[0].is_calibrated());
        assert!(!built.body[1].is_calibrated());
    }

    #[test]
    fn validation_catches_bad_circuits() {
        let mut c = gx_power(1);
        c.repetitions = 0;
        assert!(c.validate(1).is_ok());
        assert!(matches!(c.validate(0), Err(Error::DimensionMismatch { .. })));
        let bad = Circuit::new("x", 1, vec![Gate::H { qubit: 2 }], 1);
        assert!(matches!(bad, Err(Error::QubitOutOfRange { .. })));
        assert!(gx_power(1).outcome_distribution(&ControlParameterSet::with_offsets(&[])).is_err());
    }
}
