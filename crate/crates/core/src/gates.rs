//! Parametrized gate families, control parameters and fidelity metrics.

use std::f64::consts::FRAC_PI_2;
use std::f64::consts::FRAC_PI_4;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::{Pauli, PauliOperator, UnitaryMatrix, C64, I, ZERO};

/// Over/under-rotation of the π/2 x-rotation.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GxParams {
    pub delta: f64,
}

/// Rotation error `theta` and axis tilt `phi` of the π/2 y-rotation.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GyParams {
    pub theta: f64,
    pub phi: f64,
}

/// Phase errors of the two-qubit controlled-Z.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CzParams {
    pub theta_zi: f64,
    pub theta_iz: f64,
    pub theta_zz: f64,
}

/// exp(i/2 (π/2 + δ) σ_x).
pub fn build_gx(p: GxParams) -> UnitaryMatrix {
    let half = 0.5 * (FRAC_PI_2 + p.delta);
    let (s, c) = half.sin_cos();
    UnitaryMatrix::from_entries_unchecked(
        2,
        vec![C64::from(c), I * s, I * s, C64::from(c)],
    )
}

/// exp(i/2 (π/2 + θ)(sin φ σ_x + cos φ σ_y)).
pub fn build_gy(p: GyParams) -> UnitaryMatrix {
    let half = 0.5 * (FRAC_PI_2 + p.theta);
    let (s, c) = half.sin_cos();
    let (sp, cp) = p.phi.sin_cos();
    UnitaryMatrix::from_entries_unchecked(
        2,
        vec![
            C64::from(c),
            C64::new(s * cp, s * sp),
            C64::new(-s * cp, s * sp),
            C64::from(c),
        ],
    )
}

/// Diagonal phase of the controlled-Z on basis state |b1 b2⟩.
fn cz_phase(p: CzParams, b1: usize, b2: usize) -> f64 {
    let z1 = if b1 == 0 { 1.0 } else { -1.0 };
    let z2 = if b2 == 0 { 1.0 } else { -1.0 };
    FRAC_PI_4 + (FRAC_PI_4 + p.theta_zz) * z1 * z2
        - (FRAC_PI_4 + p.theta_iz) * z2
        - (FRAC_PI_4 + p.theta_zi) * z1
}

/// exp[i(π/4 II + (π/4+θ_zz) ZZ − (π/4+θ_iz) IZ − (π/4+θ_zi) ZI)];
/// diag(1, 1, 1, −1) at zero error.
pub fn build_cz(p: CzParams) -> UnitaryMatrix {
    let mut entries = vec![ZERO; 16];
    for idx in 0..4 {
        entries[idx * 4 + idx] = C64::from_polar(1.0, cz_phase(p, idx >> 1, idx & 1));
    }
    UnitaryMatrix::from_entries_unchecked(4, entries)
}

pub fn hadamard() -> UnitaryMatrix {
    let h = C64::from(std::f64::consts::FRAC_1_SQRT_2);
    UnitaryMatrix::from_entries_unchecked(2, vec![h, h, h, -h])
}

pub const IDLE_QUBITS: usize = 5;
pub const IDLE_PARAMS: usize = 3 * IDLE_QUBITS;

/// exp(−i (v_x σ_x + v_y σ_y + v_z σ_z)) on one qubit.
pub fn idle_factor(v: [f64; 3]) -> UnitaryMatrix {
    let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    if norm == 0.0 {
        return UnitaryMatrix::identity(2);
    }
    let (s, c) = norm.sin_cos();
    let (nx, ny, nz) = (v[0] / norm, v[1] / norm, v[2] / norm);
    // cos|v| I − i sin|v| (n·σ)
    UnitaryMatrix::from_entries_unchecked(
        2,
        vec![
            C64::new(c, -s * nz),
            C64::new(-s * ny, -s * nx),
            C64::new(s * ny, -s * nx),
            C64::new(c, s * nz),
        ],
    )
}

/// Per-qubit factors of the coherent idle error; `deltas[3j + k]` is the
/// angle about axis k ∈ {x, y, z} on qubit j.
pub fn idle_noise_factors(deltas: &[f64]) -> Result<Vec<UnitaryMatrix>> {
    if deltas.len() != IDLE_PARAMS {
        return Err(Error::DimensionMismatch {
            expected: IDLE_PARAMS,
            actual: deltas.len(),
        });
    }
    Ok(deltas
        .chunks_exact(3)
        .map(|v| idle_factor([v[0], v[1], v[2]]))
        .collect())
}

/// exp(−i Σ_{j,k} Δη_k^{(j)} σ_k^{(j)}) on five qubits as a dense 32×32 matrix.
pub fn build_idle_noise(deltas: &[f64]) -> Result<UnitaryMatrix> {
    let factors = idle_noise_factors(deltas)?;
    Ok(factors
        .iter()
        .skip(1)
        .fold(factors[0].clone(), |acc, f| acc.kron(f)))
}

/// Tunable parameters η, their hidden optima and coupling constants α.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlParameterSet {
    pub eta: Vec<f64>,
    pub eta_opt: Vec<f64>,
    pub alpha: Vec<f64>,
}

impl ControlParameterSet {
    pub fn new(eta: Vec<f64>, eta_opt: Vec<f64>, alpha: Vec<f64>) -> Result<Self> {
        let n = eta.len();
        for len in [eta_opt.len(), alpha.len()] {
            if len != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    actual: len,
                });
            }
        }
        if let Some(a) = alpha.iter().find(|a| **a == 0.0 || !a.is_finite()) {
            return Err(Error::config("alpha", format!("coupling must be finite and nonzero, got {a}")));
        }
        Ok(Self { eta, eta_opt, alpha })
    }

    /// Parameters starting at offset `delta0` from optima at zero, α = 1.
    pub fn with_offsets(delta0: &[f64]) -> Self {
        Self {
            eta: delta0.to_vec(),
            eta_opt: vec![0.0; delta0.len()],
            alpha: vec![1.0; delta0.len()],
        }
    }

    pub fn len(&self) -> usize {
        self.eta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eta.is_empty()
    }

    /// Δη_i = η_i − η_opt,i.
    pub fn offset(&self, i: usize) -> f64 {
        self.eta[i] - self.eta_opt[i]
    }

    pub fn offsets(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.offset(i)).collect()
    }

    /// Physical error angle δ_i = α_i Δη_i.
    pub fn delta(&self, i: usize) -> f64 {
        self.alpha[i] * self.offset(i)
    }

    pub fn deltas(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.delta(i)).collect()
    }
}

/// 1 − |Tr(W†V)|²/d².
pub fn entanglement_infidelity_unitary(w: &UnitaryMatrix, v: &UnitaryMatrix) -> Result<f64> {
    if w.dim() != v.dim() {
        return Err(Error::DimensionMismatch {
            expected: w.dim(),
            actual: v.dim(),
        });
    }
    let tr: C64 = w
        .entries()
        .iter()
        .zip(v.entries())
        .map(|(a, b)| a.conj() * b)
        .sum();
    let d = w.dim() as f64;
    Ok((1.0 - tr.norm_sqr() / (d * d)).clamp(0.0, 1.0))
}

/// n-qubit Pauli strings in lexicographic order over (I, X, Y, Z).
fn pauli_basis(n_qubits: usize) -> Vec<UnitaryMatrix> {
    (0..1usize << (2 * n_qubits))
        .map(|mut idx| {
            let mut factors = vec![Pauli::I; n_qubits];
            for q in (0..n_qubits).rev() {
                factors[q] = Pauli::ALL[idx & 3];
                idx >>= 2;
            }
            PauliOperator::new(factors).matrix()
        })
        .collect()
}

/// Real Pauli-transfer matrix R_ij = Tr(P_i U P_j U†)/d of a unitary.
pub fn ptm_unitary(u: &UnitaryMatrix) -> DMatrix<f64> {
    let n = u.n_qubits();
    let d = u.dim() as f64;
    let basis = pauli_basis(n);
    let ud = u.adjoint();
    let images: Vec<UnitaryMatrix> = basis.iter().map(|p| u.mul(p).mul(&ud)).collect();
    let dim = u.dim();
    DMatrix::from_fn(basis.len(), basis.len(), |i, j| {
        let (p, m) = (basis[i].entries(), images[j].entries());
        let mut tr = ZERO;
        for a in 0..dim {
            for b in 0..dim {
                tr += p[a * dim + b] * m[b * dim + a];
            }
        }
        tr.re / d
    })
}

/// Transfer matrix of the depolarizing channel ρ → p·I/d + (1−p)ρ.
pub fn ptm_depolarizing(n_qubits: usize, p: f64) -> DMatrix<f64> {
    let dim = 1usize << (2 * n_qubits);
    let mut m = DMatrix::from_element(dim, dim, 0.0);
    m[(0, 0)] = 1.0;
    for i in 1..dim {
        m[(i, i)] = 1.0 - p;
    }
    m
}

/// Transfer matrix of `u` followed by depolarization with probability `p`.
pub fn ptm_noisy_gate(u: &UnitaryMatrix, p: f64) -> Result<DMatrix<f64>> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidProbability(p));
    }
    Ok(ptm_depolarizing(u.n_qubits(), p) * ptm_unitary(u))
}

/// 1 − Tr(Λ_G Λ_U⁻¹)/d² for a channel transfer matrix against a target unitary.
pub fn process_infidelity(channel: &DMatrix<f64>, target: &UnitaryMatrix) -> Result<f64> {
    let lu = ptm_unitary(target);
    if channel.shape() != lu.shape() {
        return Err(Error::DimensionMismatch {
            expected: lu.nrows(),
            actual: channel.nrows(),
        });
    }
    let inv = lu
        .try_inverse()
        .ok_or(Error::Singular("target transfer matrix"))?;
    let d = target.dim() as f64;
    Ok(1.0 - (channel * inv).trace() / (d * d))
}

/// Closed form of [`process_infidelity`] for Gx(δ) with depolarization `p`
/// against Gx(0): 1 − [1 + (1−p)(1 + 2 cos δ)]/4.
pub fn gx_process_infidelity(delta: f64, p: f64) -> f64 {
    1.0 - (1.0 + (1.0 - p) * (1.0 + 2.0 * delta.cos())) / 4.0
}

/// Process infidelity of `w` followed by depolarization `p` against target `v`:
/// 1 − [1 + (1−p)(|Tr W†V|² − 1)]/d².
pub fn depolarized_unitary_infidelity(w: &UnitaryMatrix, v: &UnitaryMatrix, p: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidProbability(p));
    }
    let e = entanglement_infidelity_unitary(w, v)?;
    let d2 = (w.dim() * w.dim()) as f64;
    let tr2 = d2 * (1.0 - e);
    Ok(1.0 - (1.0 + (1.0 - p) * (tr2 - 1.0)) / d2)
}

/// Infidelity of a two-qubit CZ with phase errors against the ideal gate.
pub fn cz_infidelity(p: CzParams) -> f64 {
    let ideal = CzParams::default();
    let tr: C64 = (0..4)
        .map(|idx| {
            let (b1, b2) = (idx >> 1, idx & 1);
            C64::from_polar(1.0, cz_phase(p, b1, b2) - cz_phase(ideal, b1, b2))
        })
        .sum();
    (1.0 - tr.norm_sqr() / 16.0).clamp(0.0, 1.0)
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{StateVector, ONE};
    use std::f64::consts::PI;

    /// Truncated Taylor series; exact enough for the small matrices used here.
    fn expm(a: &[C64], d: usize) -> Vec<C64> {
        let mut result = vec![ZERO; d * d];
        let mut term = vec![ZERO; d * d];
        for i in 0..d {
            result[i * d + i] = ONE;
            term[i * d + i] = ONE;
        }
        for k in 1..60 {
            let mut next = vec![ZERO; d * d];
            for r in 0..d {
                for m in 0..d {
                    for c in 0..d {
                        next[r * d + c] += term[r * d + m] * a[m * d + c];
                    }
                }
            }
            for x in &mut next {
                *x /= k as f64;
            }
            for (r, t) in result.iter_mut().zip(&next) {
                *r += t;
            }
            term = next;
        }
        result
    }

    fn scaled(m: &UnitaryMatrix, s: C64) -> Vec<C64> {
        m.entries().iter().map(|e| e * s).collect()
    }

    fn close(a: &[C64], b: &[C64], tol: f64) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).norm() < tol)
    }

    #[test]
    fn gx_matches_exponential() {
        for delta in [0.0, 0.2, -0.7, 1.3] {
            let gen = scaled(&Pauli::X.matrix(), I * 0.5 * (FRAC_PI_2 + delta));
            let oracle = expm(&gen, 2);
            assert!(close(build_gx(GxParams { delta }).entries(), &oracle, 1e-12));
        }
    }

    #[test]
    fn gy_matches_exponential() {
        let (theta, phi) = (0.1f64, 0.05f64);
        let x = scaled(&Pauli::X.matrix(), C64::from(phi.sin()));
        let y = scaled(&Pauli::Y.matrix(), C64::from(phi.cos()));
        let gen: Vec<C64> = x
            .iter()
            .zip(&y)
            .map(|(a, b)| (a + b) * I * 0.5 * (FRAC_PI_2 + theta))
            .collect();
        let u = build_gy(GyParams { theta, phi });
        assert!(close(u.entries(), &expm(&gen, 2), 1e-12));
        assert!(u.unitarity_deviation() < 1e-12);
    }

    #[test]
    fn gy_at_quarter_turn_tilt_is_gx() {
        let gy = build_gy(GyParams { theta: 0.0, phi: FRAC_PI_2 });
        assert!(close(gy.entries(), build_gx(GxParams::default()).entries(), 1e-12));
    }

    #[test]
    fn gy_on_zero_is_balanced() {
        let mut s = StateVector::zero(1);
        s.apply_unitary(&build_gy(GyParams::default()), &[0]).unwrap();
        let p = s.outcome_distribution();
        assert!((p[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn gx_twice_flips() {
        let mut s = StateVector::zero(1);
        let g = build_gx(GxParams::default());
        s.apply_unitary(&g, &[0]).unwrap();
        s.apply_unitary(&g, &[0]).unwrap();
        assert!((s.outcome_distribution()[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gx_at_minus_quarter_turn_is_identity() {
        let g = build_gx(GxParams { delta: -FRAC_PI_2 });
        assert!(entanglement_infidelity_unitary(&g, &UnitaryMatrix::identity(2)).unwrap() < 1e-12);
    }

    #[test]
    fn gx_single_shot_probability() {
        let mut s = StateVector::zero(1);
        s.apply_unitary(&build_gx(GxParams { delta: 0.2 }), &[0]).unwrap();
        let expected = 0.5 * (1.0 + 0.2f64.sin());
        assert!((s.outcome_distribution()[1] - expected).abs() < 1e-12);
        assert!((expected - 0.59933).abs() < 1e-5);
    }

    #[test]
    fn cz_matches_exponential_and_is_cz() {
        let zz = Pauli::Z.matrix().kron(&Pauli::Z.matrix());
        let iz = UnitaryMatrix::identity(2).kron(&Pauli::Z.matrix());
        let zi = Pauli::Z.matrix().kron(&UnitaryMatrix::identity(2));
        let p = CzParams { theta_zi: 0.03, theta_iz: -0.02, theta_zz: 0.05 };
        let gen: Vec<C64> = (0..16)
            .map(|k| {
                let id = if k % 5 == 0 { FRAC_PI_4 } else { 0.0 };
                I * (C64::from(id) + zz.entries()[k] * (FRAC_PI_4 + p.theta_zz)
                    - iz.entries()[k] * (FRAC_PI_4 + p.theta_iz)
                    - zi.entries()[k] * (FRAC_PI_4 + p.theta_zi))
            })
            .collect();
        assert!(close(build_cz(p).entries(), &expm(&gen, 4), 1e-11));

        let ideal = build_cz(CzParams::default());
        let target = [ONE, ONE, ONE, -ONE];
        for (i, t) in target.iter().enumerate() {
            assert!((ideal.get(i, i) - t).norm() < 1e-12);
        }
        assert!(cz_infidelity(CzParams::default()) < 1e-15);
    }

    #[test]
    fn cz_on_bell_state_flips_relative_sign() {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let mut s = StateVector::from_amplitudes(vec![C64::from(h), ZERO, ZERO, C64::from(h)]).unwrap();
        s.apply_unitary(&build_cz(CzParams::default()), &[0, 1]).unwrap();
        let target = StateVector::from_amplitudes(vec![C64::from(h), ZERO, ZERO, C64::from(-h)]).unwrap();
        assert!((s.fidelity(&target) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cz_stays_diagonal_under_errors() {
        let u = build_cz(CzParams { theta_zz: FRAC_PI_4, ..Default::default() });
        assert!(u.is_diagonal(1e-15));
        assert!(u.unitarity_deviation() < 1e-12);
        let c = CzParams { theta_zi: 0.1, theta_iz: -0.2, theta_zz: 0.05 };
        let direct = entanglement_infidelity_unitary(&build_cz(c), &build_cz(CzParams::default())).unwrap();
        assert!((cz_infidelity(c) - direct).abs() < 1e-12);
    }

    #[test]
    fn idle_noise_cases() {
        let zero = build_idle_noise(&[0.0; IDLE_PARAMS]).unwrap();
        assert!(entanglement_infidelity_unitary(&zero, &UnitaryMatrix::identity(32)).unwrap() < 1e-15);

        let mut d = [0.0; IDLE_PARAMS];
        d[0] = 0.1;
        let u = build_idle_noise(&d).unwrap();
        let gen = scaled(&Pauli::X.matrix(), -I * 0.1);
        let single = UnitaryMatrix::from_entries_unchecked(2, expm(&gen, 2));
        let expected = single.kron(&UnitaryMatrix::identity(16));
        assert!(close(u.entries(), expected.entries(), 1e-12));

        let generic: Vec<f64> = (0..IDLE_PARAMS).map(|i| 0.01 * (i as f64 - 7.0)).collect();
        assert!(build_idle_noise(&generic).unwrap().unitarity_deviation() < 1e-10);
        assert!(build_idle_noise(&[0.0; 3]).is_err());
    }

    #[test]
    fn idle_factor_matches_exponential() {
        let v = [0.03, -0.05, 0.02];
        let gen: Vec<C64> = (0..4)
            .map(|k| {
                -I * (Pauli::X.matrix().entries()[k] * v[0]
                    + Pauli::Y.matrix().entries()[k] * v[1]
                    + Pauli::Z.matrix().entries()[k] * v[2])
            })
            .collect();
        assert!(close(idle_factor(v).entries(), &expm(&gen, 2), 1e-12));
    }

    #[test]
    fn depolarized_infidelity_matches_ptm_route() {
        let cases = [
            (build_gx(GxParams { delta: 0.07 }), build_gx(GxParams::default()), 0.01),
            (build_gy(GyParams { theta: -0.04, phi: 0.1 }), build_gy(GyParams::default()), 0.002),
            (build_cz(CzParams { theta_zi: 0.1, theta_iz: -0.05, theta_zz: 0.2 }), build_cz(CzParams::default()), 0.003),
        ];
        for (w, v, p) in cases {
            let via_ptm = process_infidelity(&ptm_noisy_gate(&w, p).unwrap(), &v).unwrap();
            assert!((depolarized_unitary_infidelity(&w, &v, p).unwrap() - via_ptm).abs() < 1e-12);
        }
        assert!((depolarized_unitary_infidelity(&build_gx(GxParams { delta: 0.2 }), &build_gx(GxParams::default()), 0.001).unwrap()
            - gx_process_infidelity(0.2, 0.001)).abs() < 1e-12);
    }

    #[test]
    fn infidelity_closed_forms() {
        let g0 = build_gx(GxParams::default());
        assert_eq!(entanglement_infidelity_unitary(&g0, &g0).unwrap(), 0.0);
        let pi = build_gx(GxParams { delta: PI });
        assert!((entanglement_infidelity_unitary(&pi, &g0).unwrap() - 1.0).abs() < 1e-12);
        let small = build_gx(GxParams { delta: 0.1 });
        let v = entanglement_infidelity_unitary(&small, &g0).unwrap();
        assert!((v - 0.05f64.sin().powi(2)).abs() < 1e-12);
        assert!((v - 2.4979e-3).abs() < 1e-7);
        for k in -20..=20 {
            let delta = 0.15 * k as f64;
            let w = build_gx(GxParams { delta });
            let v = entanglement_infidelity_unitary(&w, &g0).unwrap();
            assert!((v - (delta / 2.0).sin().powi(2)).abs() < 1e-12);
        }
    }

    #[test]
    fn infidelity_symmetric_and_phase_invariant() {
        let a = build_gx(GxParams { delta: 0.3 });
        let b = build_gy(GyParams { theta: -0.1, phi: 0.2 });
        let ab = entanglement_infidelity_unitary(&a, &b).unwrap();
        let ba = entanglement_infidelity_unitary(&b, &a).unwrap();
        assert!((ab - ba).abs() < 1e-14);
        let phase = C64::from_polar(1.0, 0.77);
        let a2 = UnitaryMatrix::new(2, scaled(&a, phase)).unwrap();
        assert!((entanglement_infidelity_unitary(&a2, &b).unwrap() - ab).abs() < 1e-14);
    }

    #[test]
    fn process_infidelity_reduces_to_unitary_case() {
        let g0 = build_gx(GxParams::default());
        for delta in [0.0, 0.05, 0.4] {
            let w = build_gx(GxParams { delta });
            let ch = ptm_noisy_gate(&w, 0.0).unwrap();
            let pi = process_infidelity(&ch, &g0).unwrap();
            let ui = entanglement_infidelity_unitary(&w, &g0).unwrap();
            assert!((pi - ui).abs() < 1e-10, "{pi} vs {ui}");
        }
        let ch = ptm_unitary(&g0);
        assert!(process_infidelity(&ch, &g0).unwrap().abs() < 1e-12);
    }

    /// Kraus-form entanglement fidelity of depolarize∘W against V.
    fn kraus_infidelity(w: &UnitaryMatrix, v: &UnitaryMatrix, p: f64) -> f64 {
        let n = w.n_qubits();
        let d = w.dim() as f64;
        let basis = pauli_basis(n);
        let weight = |k: usize| {
            if k == 0 {
                1.0 - p + p / basis.len() as f64
            } else {
                p / basis.len() as f64
            }
        };
        let fid: f64 = basis
            .iter()
            .enumerate()
            .map(|(k, pk)| weight(k) * v.adjoint().mul(pk).mul(w).trace().norm_sqr() / (d * d))
            .sum();
        1.0 - fid
    }

    #[test]
    fn depolarized_gx_against_kraus_oracle() {
        let g0 = build_gx(GxParams::default());
        let p = 0.001;
        let ch = ptm_noisy_gate(&g0, p).unwrap();
        let pi = process_infidelity(&ch, &g0).unwrap();
        assert!((pi - 0.75 * p).abs() < 1e-12);
        assert!((pi - kraus_infidelity(&g0, &g0, p)).abs() < 1e-12);
        for delta in [0.05, -0.3] {
            let w = build_gx(GxParams { delta });
            let ch = ptm_noisy_gate(&w, 0.02).unwrap();
            let pi = process_infidelity(&ch, &g0).unwrap();
            assert!((pi - gx_process_infidelity(delta, 0.02)).abs() < 1e-12);
            assert!((pi - kraus_infidelity(&w, &g0, 0.02)).abs() < 1e-12);
        }
    }

    #[test]
    fn two_qubit_depolarized_cz_against_kraus_oracle() {
        let ideal = build_cz(CzParams::default());
        let w = build_cz(CzParams { theta_zi: 0.02, theta_iz: 0.01, theta_zz: -0.03 });
        let ch = ptm_noisy_gate(&w, 0.01).unwrap();
        let pi = process_infidelity(&ch, &ideal).unwrap();
        assert!((pi - kraus_infidelity(&w, &ideal, 0.01)).abs() < 1e-12);
    }

    #[test]
    fn control_parameter_validation() {
        assert!(ControlParameterSet::new(vec![0.0], vec![0.0, 1.0], vec![1.0]).is_err());
        assert!(ControlParameterSet::new(vec![0.0], vec![0.0], vec![0.0]).is_err());
        let c = ControlParameterSet::new(vec![0.3], vec![0.1], vec![2.0]).unwrap();
        assert!((c.offset(0) - 0.2).abs() < 1e-15);
        assert!((c.delta(0) - 0.4).abs() < 1e-15);
    }
}
