//! Definite-outcome-circuit (DOC) feedback: count failures of a circuit whose
//! ideal output is deterministic, estimate the error magnitude from the
//! failure rate, and step in alternating directions.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::analytics::events;
use crate::circuits::{gx_power, Circuit, NoiseModel};
use crate::drift::DriftProcess;
use crate::error::{Error, Result};
use crate::gates::ControlParameterSet;
use crate::sim::Bitstring;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    #[default]
    Mle,
    Mvue,
}

/// Failure probability from `n` failures and `k` successes.
///
/// MLE = n/(n+k), MVUE = (n−1)/(n+k−1).
pub fn estimate_p(n: u32, k: u32, which: Estimator) -> Result<f64> {
    match which {
        Estimator::Mle => {
            if n < 1 {
                return Err(Error::EstimatorDomain { n, min: 1 });
            }
            Ok(f64::from(n) / f64::from(n + k))
        }
        Estimator::Mvue => {
            if n < 2 {
                return Err(Error::EstimatorDomain { n, min: 2 });
            }
            Ok(f64::from(n - 1) / f64::from(n + k - 1))
        }
    }
}

/// Run / failure counters with the direction coin.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DocCounter {
    pub coin: i8,
    pub cutoff: u32,
    pub runs: u32,
    pub failures: u32,
    pub estimator: Estimator,
}

impl DocCounter {
    pub fn new(cutoff: u32, estimator: Estimator, coin: i8) -> Result<Self> {
        let min = if estimator == Estimator::Mvue { 2 } else { 1 };
        if cutoff < min {
            return Err(Error::config("doc.n", format!("cutoff must be >= {min}")));
        }
        if coin != 1 && coin != -1 {
            return Err(Error::config("doc.coin", "must be +1 or -1"));
        }
        Ok(Self { coin, cutoff, runs: 0, failures: 0, estimator })
    }

    /// Count one shot. Returns `(coin, p̂)` when the cutoff is reached, after
    /// which the coin is flipped and the counters cleared.
    pub fn record(&mut self, failure: bool) -> Option<(i8, f64)> {
        self.runs += 1;
        if failure {
            self.failures += 1;
        }
        if self.failures < self.cutoff {
            return None;
        }
        let k = self.runs - self.failures;
        let p = estimate_p(self.failures, k, self.estimator).expect("cutoff validated at construction");
        let c = self.coin;
        self.coin = -c;
        self.reset();
        Some((c, p))
    }

    pub fn reset(&mut self) {
        self.runs = 0;
        self.failures = 0;
    }
}

fn default_delta_r() -> u32 {
    8
}

/// Depth scheduling for DOC episodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DocSchedulerSpec {
    pub n_min: u32,
    pub n_max: u32,
    #[serde(default = "default_delta_r")]
    pub delta_r: u32,
    #[serde(default = "default_r_min")]
    pub r_min: u32,
    #[serde(default = "default_doc_r_cap")]
    pub r_cap: u32,
}

fn default_r_min() -> u32 {
    2
}

fn default_doc_r_cap() -> u32 {
    202
}

impl Default for DocSchedulerSpec {
    fn default() -> Self {
        Self { n_min: 10, n_max: 50, delta_r: 8, r_min: 2, r_cap: 202 }
    }
}

impl DocSchedulerSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0 < self.n_min && self.n_min < self.n_max) {
            return Err(Error::config("doc.scheduler.n_min", "need 0 < n_min < n_max"));
        }
        if self.delta_r == 0 || !self.delta_r.is_multiple_of(2) {
            return Err(Error::config("doc.scheduler.delta_r", "must be even and positive"));
        }
        if self.r_min < 2 || !self.r_min.is_multiple_of(2) || self.r_cap < self.r_min {
            return Err(Error::config("doc.scheduler.r_cap", "need even 2 <= r_min <= r_cap"));
        }
        Ok(())
    }

    fn clamp(&self, r: i64) -> u32 {
        let lo = i64::from(self.r_min);
        let hi = i64::from(self.r_cap - self.r_cap % 2);
        let r = r.clamp(lo, hi);
        (r - r % 2) as u32
    }
}

fn default_n() -> u32 {
    2
}

fn default_coin() -> i8 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DocConfig {
    pub r: u32,
    #[serde(default = "default_n")]
    pub n: u32,
    #[serde(default)]
    pub estimator: Estimator,
    #[serde(default = "default_coin")]
    pub coin: i8,
    #[serde(default)]
    pub scheduler: Option<DocSchedulerSpec>,
}

impl DocConfig {
    pub fn fixed(r: u32) -> Self {
        Self { r, n: 2, estimator: Estimator::Mle, coin: 1, scheduler: None }
    }

    pub fn validate(&self) -> Result<()> {
        if self.r == 0 || !self.r.is_multiple_of(2) {
            return Err(Error::config("doc.r", format!("DOC depth must be even and positive, got {}", self.r)));
        }
        if let Some(s) = &self.scheduler {
            s.validate()?;
            if self.r < s.r_min || self.r > s.r_cap {
                return Err(Error::config("doc.r", "initial depth outside scheduler bounds"));
            }
        }
        DocCounter::new(self.n, self.estimator, self.coin).map(|_| ())
    }
}

/// Ideal output of (Gx)^r for even r: bit 1 when r ≡ 2 mod 4.
pub fn expected_bit(r: u32) -> usize {
    usize::from(r % 4 == 2)
}

/// Largest physically meaningful step, π/(2r|α|).
pub fn step_cap(r: u32, alpha: f64) -> f64 {
    PI / (2.0 * f64::from(r) * alpha.abs())
}

/// One DOC shot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DocShot {
    pub outcome: Bitstring,
    pub failure: bool,
    /// Error angle α·Δη when the shot ran.
    pub delta: f64,
    /// Signed parameter step, when an update fired.
    pub step: Option<f64>,
    pub events: u8,
}

/// Single-parameter DOC on (Gx)^r.
#[derive(Debug, Clone)]
pub struct DocEngine {
    pub params: ControlParameterSet,
    pub counter: DocCounter,
    pub r: u32,
    pub t: u64,
    pub noise: NoiseModel,
    scheduler: Option<DocSchedulerSpec>,
    circuit: Circuit,
}

impl DocEngine {
    pub fn new(cfg: &DocConfig, params: ControlParameterSet, noise: NoiseModel) -> Result<Self> {
        cfg.validate()?;
        noise.validate()?;
        if params.len() != 1 {
            return Err(Error::DimensionMismatch { expected: 1, actual: params.len() });
        }
        Ok(Self {
            counter: DocCounter::new(cfg.n, cfg.estimator, cfg.coin)?,
            r: cfg.r,
            t: 0,
            noise,
            scheduler: cfg.scheduler,
            circuit: gx_power(cfg.r),
            params,
        })
    }

    pub fn offset(&self) -> f64 {
        self.params.offset(0)
    }

    /// h = r²α².
    pub fn second_order_sensitivity(&self) -> f64 {
        let ra = f64::from(self.r) * self.params.alpha[0];
        ra * ra
    }

    fn set_depth(&mut self, r: u32) {
        if r != self.r {
            self.r = r;
            self.circuit = gx_power(r);
        }
    }

    /// Feed an already observed shot outcome into the counters.
    pub fn record_outcome(&mut self, failure: bool) -> (Option<f64>, u8) {
        let mut ev = 0;
        let shots = self.counter.runs + 1;
        if let Some((c, p)) = self.counter.record(failure) {
            let mag = (p / self.second_order_sensitivity()).sqrt().min(step_cap(self.r, self.params.alpha[0]));
            let step = f64::from(c) * mag;
            self.params.eta[0] += step;
            ev |= events::UPDATE;
            if let Some(s) = self.scheduler {
                if shots < s.n_min {
                    self.set_depth(s.clamp(i64::from(self.r) - i64::from(s.delta_r)));
                    ev |= events::HYPER_CHANGE;
                }
            }
            return (Some(step), ev);
        }
        if let Some(s) = self.scheduler {
            if self.counter.runs >= s.n_max {
                self.counter.reset();
                self.set_depth(s.clamp(i64::from(self.r) + i64::from(s.delta_r)));
                ev |= events::ABORT | events::HYPER_CHANGE;
            }
        }
        (None, ev)
    }

    /// Drift step, one shot, counter update.
    pub fn step<R: Rng + ?Sized>(&mut self, drift: &mut DriftProcess, rng: &mut R) -> Result<DocShot> {
        let mut ev = 0;
        if drift.step(&mut self.params.eta_opt, rng) {
            ev |= events::JUMP;
        }
        let delta = self.params.delta(0);
        let outcome = self.circuit.run(&self.params, &self.noise, rng)?;
        let failure = outcome.value() != expected_bit(self.r);
        self.t += 1;
        let (step, more) = self.record_outcome(failure);
        Ok(DocShot { outcome, failure, delta, step, events: ev | more })
    }
}

/// True when consecutive update signs strictly alternate.
pub fn coin_alternation_property_check(steps: &[f64]) -> bool {
    steps.windows(2).all(|w| w[0].signum() == -w[1].signum() && w[0] != 0.0)
}
