//! [[5,1,3]] code-capacity memory with coherent drifting idle errors and
//! fifteen parallel DOC calibrators fed by syndrome data.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::doc::{DocCounter, Estimator};
use crate::drift::{DriftProcess, DriftSpec};
use crate::error::{Error, Result};
use crate::gates::{idle_noise_factors, ControlParameterSet, IDLE_PARAMS, IDLE_QUBITS};
use crate::sim::{Pauli, PauliOperator, StateVector};

/// Branches rarer than this are never sampled.
pub const MIN_BRANCH_PROB: f64 = 1e-14;

pub const GENERATORS: [&str; 4] = ["XZZXI", "IXZZX", "XIXZZ", "ZXIXZ"];
pub const LOGICAL_X: &str = "XXXXX";
pub const LOGICAL_Z: &str = "ZZZZZ";

pub fn generators() -> [PauliOperator; 4] {
    GENERATORS.map(|g| g.parse().expect("static generator"))
}

pub fn logical_x() -> PauliOperator {
    LOGICAL_X.parse().expect("static logical")
}

pub fn logical_z() -> PauliOperator {
    LOGICAL_Z.parse().expect("static logical")
}

/// Calibrator index 3j + k for axis k ∈ {X, Y, Z} on qubit j.
pub fn param_index(qubit: usize, axis: Pauli) -> usize {
    let k = match axis {
        Pauli::X => 0,
        Pauli::Y => 1,
        Pauli::Z => 2,
        Pauli::I => panic!("identity has no calibrator"),
    };
    3 * qubit + k
}

/// Syndrome of a Pauli error; S1 is the most significant of the four bits.
pub fn syndrome_of(error: &PauliOperator) -> u8 {
    generators()
        .iter()
        .enumerate()
        .filter(|(_, g)| !g.commutes_with(error))
        .fold(0, |acc, (i, _)| acc | (1 << (3 - i)))
}

/// Lookup decoder: nontrivial syndrome → single-qubit Pauli.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyndromeTable {
    entries: [Option<(usize, Pauli)>; 16],
}

impl SyndromeTable {
    pub fn new() -> Self {
        let mut entries = [None; 16];
        for q in 0..IDLE_QUBITS {
            for axis in Pauli::NONTRIVIAL {
                let s = syndrome_of(&PauliOperator::single(IDLE_QUBITS, q, axis));
                assert!(s != 0 && entries[s as usize].is_none(), "[[5,1,3]] decoder must be a bijection");
                entries[s as usize] = Some((q, axis));
            }
        }
        Self { entries }
    }

    pub fn lookup(&self, syndrome: u8) -> Option<(usize, Pauli)> {
        self.entries.get(syndrome as usize).copied().flatten()
    }
}

impl Default for SyndromeTable {
    fn default() -> Self {
        Self::new()
    }
}

/// |0⟩_L as the normalized projection of |00000⟩ onto the code space.
pub fn encode_logical_zero() -> StateVector {
    let mut psi = StateVector::zero(IDLE_QUBITS);
    for g in generators() {
        psi.project_pauli(&g, 1.0, 0.0).expect("five-qubit operator");
    }
    psi
}

/// Projective measurement of a Pauli observable; returns ±1.
pub fn measure_stabilizer<R: Rng + ?Sized>(
    state: &mut StateVector,
    generator: &PauliOperator,
    rng: &mut R,
) -> Result<i8> {
    let p_plus = ((1.0 + state.expectation(generator)?) / 2.0).clamp(0.0, 1.0);
    let plus = if p_plus < MIN_BRANCH_PROB {
        false
    } else if 1.0 - p_plus < MIN_BRANCH_PROB {
        true
    } else {
        rng.random::<f64>() < p_plus
    };
    let sign = if plus { 1.0 } else { -1.0 };
    state.project_pauli(generator, sign, 0.0)?;
    Ok(if plus { 1 } else { -1 })
}

/// (⟨Z_L⟩ + 1)/2.
pub fn survival_probability(state: &StateVector) -> Result<f64> {
    Ok(((state.expectation(&logical_z())? + 1.0) / 2.0).clamp(0.0, 1.0))
}

fn default_n() -> u32 {
    2
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QecConfig {
    #[serde(default = "default_n")]
    pub n: u32,
    #[serde(default = "default_true")]
    pub calibrate: bool,
    #[serde(default = "default_true")]
    pub recovery: bool,
}

impl Default for QecConfig {
    fn default() -> Self {
        Self { n: 2, calibrate: true, recovery: true }
    }
}

/// Fifteen DOC counters, one per (qubit, axis).
#[derive(Debug, Clone, PartialEq)]
pub struct DocBank {
    pub counters: Vec<DocCounter>,
}

impl DocBank {
    pub fn new(n: u32) -> Result<Self> {
        let c = DocCounter::new(n, Estimator::Mle, 1)?;
        Ok(Self { counters: vec![c; IDLE_PARAMS] })
    }

    /// Advance every run count; `failed` is the calibrator whose error was
    /// detected this round. Returns `(index, signed step)` if it fired.
    pub fn record_round(&mut self, failed: Option<usize>) -> Option<(usize, f64)> {
        let mut fired = None;
        for (i, c) in self.counters.iter_mut().enumerate() {
            if let Some((coin, p)) = c.record(failed == Some(i)) {
                fired = Some((i, f64::from(coin) * p.sqrt()));
            }
        }
        fired
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundRecord {
    pub syndrome: u8,
    pub error: Option<(usize, Pauli)>,
    pub update: Option<(usize, f64)>,
    pub survival: f64,
}

/// One memory experiment.
#[derive(Debug, Clone)]
pub struct QecRealization {
    pub state: StateVector,
    pub params: ControlParameterSet,
    pub bank: DocBank,
    pub round: u64,
    cfg: QecConfig,
    drift: DriftProcess,
    table: SyndromeTable,
    generators: [PauliOperator; 4],
}

impl QecRealization {
    pub fn new(cfg: &QecConfig, drift: &DriftSpec, initial_offsets: &[f64]) -> Result<Self> {
        if initial_offsets.len() != IDLE_PARAMS {
            return Err(Error::DimensionMismatch { expected: IDLE_PARAMS, actual: initial_offsets.len() });
        }
        Ok(Self {
            state: encode_logical_zero(),
            params: ControlParameterSet::with_offsets(initial_offsets),
            bank: DocBank::new(cfg.n)?,
            round: 0,
            cfg: cfg.clone(),
            drift: DriftProcess::new(drift, vec![0.0; IDLE_PARAMS])?,
            table: SyndromeTable::new(),
            generators: generators(),
        })
    }

    /// Drift, idle error, syndrome extraction, decoding, recovery and calibration.
    pub fn round<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<RoundRecord> {
        self.drift.step(&mut self.params.eta_opt, rng);
        for (q, u) in idle_noise_factors(&self.params.deltas())?.iter().enumerate() {
            self.state.apply_unitary(u, &[q])?;
        }
        let mut syndrome = 0u8;
        for (i, g) in self.generators.iter().enumerate() {
            if measure_stabilizer(&mut self.state, g, rng)? == -1 {
                syndrome |= 1 << (3 - i);
            }
        }
        let error = if syndrome == 0 {
            None
        } else {
            let e = self.table.lookup(syndrome);
            assert!(e.is_some(), "perfect code decodes every syndrome");
            e
        };
        if self.cfg.recovery {
            if let Some((q, axis)) = error {
                self.state.apply_pauli_on(q, axis);
            }
        }
        let mut update = None;
        if self.cfg.calibrate {
            update = self.bank.record_round(error.map(|(q, a)| param_index(q, a)));
            if let Some((i, step)) = update {
                self.params.eta[i] += step;
            }
        }
        self.round += 1;
        Ok(RoundRecord { syndrome, error, update, survival: survival_probability(&self.state)? })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;
    use crate::sim::C64;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_state(n: usize, rng: &mut RngStream) -> StateVector {
        let amps: Vec<C64> = (0..1 << n).map(|_| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)).collect();
        let norm = amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        StateVector::from_amplitudes(amps.into_iter().map(|a| a / norm).collect()).unwrap()
    }

    #[test]
    fn code_algebra() {
        let g = generators();
        for a in &g {
            for b in &g {
                assert!(a.commutes_with(b));
            }
            assert!(a.commutes_with(&logical_x()));
            assert!(a.commutes_with(&logical_z()));
        }
        assert!(!logical_x().commutes_with(&logical_z()));
    }

    #[test]
    fn syndrome_table_is_bijection() {
        let table = SyndromeTable::new();
        let mut seen = std::collections::HashSet::new();
        for q in 0..5 {
            for axis in Pauli::NONTRIVIAL {
                let s = syndrome_of(&PauliOperator::single(5, q, axis));
                assert!(s != 0 && seen.insert(s));
                assert_eq!(table.lookup(s), Some((q, axis)));
            }
        }
        assert_eq!(seen.len(), 15);
        assert_eq!(table.lookup(0), None);
    }

    #[test]
    fn x_on_first_qubit_flags_last_generator() {
        assert_eq!(syndrome_of(&PauliOperator::single(5, 0, Pauli::X)), 0b0001);
    }

    #[test]
    fn logical_zero_is_codeword() {
        let psi = encode_logical_zero();
        assert!((psi.norm_sqr() - 1.0).abs() < 1e-12);
        for g in generators() {
            assert!((psi.expectation(&g).unwrap() - 1.0).abs() < 1e-10);
        }
        assert!((psi.expectation(&logical_z()).unwrap() - 1.0).abs() < 1e-10);
        assert!((survival_probability(&psi).unwrap() - 1.0).abs() < 1e-10);
        let mut flipped = psi.clone();
        flipped.apply_pauli(&logical_x()).unwrap();
        assert!(survival_probability(&flipped).unwrap() < 1e-10);
    }

    #[test]
    fn measuring_codeword_is_deterministic() {
        let mut rng = RngStream::new(0, 0);
        let psi = encode_logical_zero();
        let mut s = psi.clone();
        for g in generators() {
            assert_eq!(measure_stabilizer(&mut s, &g, &mut rng).unwrap(), 1);
        }
        assert!((s.fidelity(&psi) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_pauli_errors_are_corrected() {
        let mut rng = RngStream::new(1, 0);
        let table = SyndromeTable::new();
        let psi = encode_logical_zero();
        for q in 0..5 {
            for axis in Pauli::NONTRIVIAL {
                let mut s = psi.clone();
                s.apply_pauli_on(q, axis);
                let mut syn = 0;
                for (i, g) in generators().iter().enumerate() {
                    if measure_stabilizer(&mut s, g, &mut rng).unwrap() == -1 {
                        syn |= 1 << (3 - i);
                    }
                }
                let (eq, ea) = table.lookup(syn).unwrap();
                s.apply_pauli_on(eq, ea);
                assert!((s.fidelity(&psi) - 1.0).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn coherent_rotation_syndrome_rate() {
        let d = 0.2;
        let mut deltas = vec![0.0; 15];
        deltas[param_index(1, Pauli::X)] = d;
        let u = idle_noise_factors(&deltas).unwrap();
        let mut psi = encode_logical_zero();
        psi.apply_unitary(&u[1], &[1]).unwrap();
        // Probability that every generator reads +1.
        let mut trivial = psi.clone();
        let mut p = 1.0;
        for g in generators() {
            p *= trivial.project_pauli(&g, 1.0, 0.0).unwrap();
        }
        assert!((1.0 - p - d.sin().powi(2)).abs() < 1e-12);
        // X on one qubit anticommutes with Z_L, so ⟨Z_L⟩ = cos 2Δη before any round.
        assert!((survival_probability(&psi).unwrap() - d.cos().powi(2)).abs() < 1e-12);
    }

    #[test]
    fn generator_order_does_not_change_syndrome_statistics() {
        let mut rng = RngStream::new(5, 0);
        let base = random_state(5, &mut rng);
        let g = generators();
        let orders = [[0usize, 1, 2, 3], [3, 1, 0, 2]];
        let mut counts = [[0f64; 16]; 2];
        let trials = 20_000;
        for (o, order) in orders.iter().enumerate() {
            for _ in 0..trials {
                let mut s = base.clone();
                let mut syn = 0u8;
                for &i in order {
                    if measure_stabilizer(&mut s, &g[i], &mut rng).unwrap() == -1 {
                        syn |= 1 << (3 - i);
                    }
                }
                counts[o][syn as usize] += 1.0 / trials as f64;
            }
        }
        for (k, (a, b)) in counts[0].iter().zip(&counts[1]).enumerate() {
            let p = (a + b) / 2.0;
            let sd = (2.0 * p * (1.0 - p) / trials as f64).sqrt().max(1e-4);
            assert!((a - b).abs() < 5.0 * sd, "syndrome {k}");
        }
    }

    #[test]
    fn zero_error_rounds_are_trivial() {
        let mut q = QecRealization::new(&QecConfig::default(), &DriftSpec::None, &[0.0; 15]).unwrap();
        let mut rng = RngStream::new(2, 0);
        for _ in 0..20 {
            let rec = q.round(&mut rng).unwrap();
            assert_eq!(rec.syndrome, 0);
            assert_eq!(rec.update, None);
            assert!((rec.survival - 1.0).abs() < 1e-10);
        }
        assert!(q.bank.counters.iter().all(|c| c.runs == 20));
    }

    #[test]
    fn detected_errors_drive_their_calibrator() {
        let mut init = [0.0; 15];
        init[param_index(2, Pauli::Y)] = 0.3;
        let mut q = QecRealization::new(&QecConfig::default(), &DriftSpec::None, &init).unwrap();
        let mut rng = RngStream::new(3, 0);
        let mut fired = Vec::new();
        for _ in 0..400 {
            let rec = q.round(&mut rng).unwrap();
            if let Some((_, a)) = rec.error {
                assert_eq!(a, Pauli::Y);
            }
            fired.extend(rec.update);
        }
        assert!(!fired.is_empty());
        assert!(fired.iter().all(|(i, _)| *i == param_index(2, Pauli::Y)));
        assert!(q.params.offset(param_index(2, Pauli::Y)).abs() < 0.3);
    }

    proptest! {
        #[test]
        fn run_counts_advance_together(seed in 0u64..200) {
            let mut rng = RngStream::new(seed, 0);
            let init: Vec<f64> = (0..15).map(|_| rng.random_range(-0.2..0.2)).collect();
            let mut q = QecRealization::new(&QecConfig::default(), &DriftSpec::random_walk(1e-3), &init).unwrap();
            let mut total_failures = 0;
            for _ in 0..50 {
                let before: u32 = q.bank.counters.iter().map(|c| c.failures).sum();
                let rec = q.round(&mut rng).unwrap();
                let after: u32 = q.bank.counters.iter().map(|c| c.failures).sum();
                prop_assert!(after <= before + 1);
                prop_assert!(rec.survival >= 0.0 && rec.survival <= 1.0);
                total_failures += u32::from(rec.error.is_some());
                let runs: Vec<u32> = q.bank.counters.iter().map(|c| c.runs).collect();
                prop_assert!(runs.iter().all(|&r| r <= q.round as u32));
            }
            prop_assert!(total_failures <= 50);
        }
    }
}
