//! Indefinite-outcome-circuit (IOC) feedback: every shot nudges the control
//! parameters in the direction indicated by its outcome.

use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::analytics::events;
use crate::circuits::{
    build_jacobian, gx_power, spam_alternation_wrapper, AlternatingPair, Circuit, Jacobian, NoiseModel,
};
use crate::drift::DriftProcess;
use crate::error::{Error, Result};
use crate::gates::ControlParameterSet;
use crate::sim::Bitstring;

pub const G_MAX: f64 = 0.45;
pub const DEFAULT_R_SEQUENCE: [u32; 6] = [1, 5, 13, 25, 41, 61];

fn default_g_max() -> f64 {
    G_MAX
}

fn default_r_cap() -> u32 {
    61
}

fn default_multiplier() -> f64 {
    10f64.sqrt()
}

fn default_r_sequence() -> Vec<u32> {
    DEFAULT_R_SEQUENCE.to_vec()
}

/// Gain / depth scheduling policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SchedulerSpec {
    #[default]
    Static,
    /// g = ℓs with ℓ known in advance.
    AnalyticOptimal { ell: f64 },
    /// Gain (and optionally depth) from binned record estimates of μ and σ².
    ApproxErrorEstimation {
        m: usize,
        n: usize,
        kappa: f64,
        delta_max: f64,
        #[serde(default)]
        sliding: bool,
        #[serde(default)]
        schedule_r: bool,
    },
    /// Gain and depth steered by the lag-one autocorrelation of the record.
    Autocorrelation {
        h: usize,
        a_ub: i64,
        a_lb: i64,
        b: i64,
        r_max: u32,
        #[serde(default = "default_multiplier")]
        g_multiplier: f64,
        #[serde(default = "default_r_sequence")]
        r_sequence: Vec<u32>,
    },
}

impl SchedulerSpec {
    /// Default autocorrelation scheduler: h=100, a in [-20, 20], b=1, r_max=61.
    pub fn autocorrelation_default() -> Self {
        SchedulerSpec::Autocorrelation {
            h: 100,
            a_ub: 20,
            a_lb: -20,
            b: 1,
            r_max: 61,
            g_multiplier: default_multiplier(),
            r_sequence: default_r_sequence(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |f: &str, why: &str| Err(Error::config(format!("ioc.scheduler.{f}"), why));
        match self {
            SchedulerSpec::Static => Ok(()),
            SchedulerSpec::AnalyticOptimal { ell } => {
                if *ell >= 0.0 && ell.is_finite() {
                    Ok(())
                } else {
                    bad("ell", "must be finite and >= 0")
                }
            }
            SchedulerSpec::ApproxErrorEstimation { m, n, kappa, delta_max, .. } => {
                if *m == 0 {
                    return bad("m", "must be >= 1");
                }
                if *n == 0 {
                    return bad("n", "must be >= 1");
                }
                if !(*kappa >= 0.0) {
                    return bad("kappa", "must be >= 0");
                }
                if !(*delta_max > 0.0) {
                    return bad("delta_max", "must be > 0");
                }
                Ok(())
            }
            SchedulerSpec::Autocorrelation { h, a_ub, a_lb, b, g_multiplier, r_sequence, .. } => {
                if *h < 2 {
                    return bad("h", "must be >= 2");
                }
                if !(*a_lb < 0 && *a_ub > 0) {
                    return bad("a_lb", "bounds must satisfy a_lb < 0 < a_ub");
                }
                if *b < 0 {
                    return bad("b", "must be >= 0");
                }
                if !(*g_multiplier > 1.0) {
                    return bad("g_multiplier", "must be > 1");
                }
                if r_sequence.is_empty() || r_sequence.windows(2).any(|w| w[0] >= w[1]) {
                    return bad("r_sequence", "must be non-empty and strictly increasing");
                }
                if r_sequence.iter().any(|r| r % 4 != 1) {
                    return bad("r_sequence", "entries must be 1 mod 4");
                }
                Ok(())
            }
        }
    }
}

/// Snap a real depth to the nearest value ≡ 1 mod 4 inside [1, r_cap].
pub fn snap_ioc_depth(r: f64, r_cap: u32) -> u32 {
    let cap = r_cap.max(1);
    let top = cap - (cap - 1) % 4;
    if !r.is_finite() || r >= f64::from(top) {
        return top;
    }
    let k = ((r - 1.0) / 4.0).round().max(0.0);
    (1 + 4 * k as u32).min(top)
}

/// Approximate mean and variance of Δη from M bins of N outcomes:
/// μ̂ = −ΣS_j/(2MNs), σ̂² = ΣS_j²/(4s²MN²) − μ̂².
pub fn approx_error_estimates(bin_sums: &[i64], n: usize, s: f64) -> (f64, f64) {
    let m = bin_sums.len() as f64;
    let n = n as f64;
    let total: i64 = bin_sums.iter().sum();
    let squares: f64 = bin_sums.iter().map(|&b| (b * b) as f64).sum();
    let mu = -(total as f64) / (2.0 * m * n * s);
    let var = squares / (4.0 * s * s * m * n * n) - mu * mu;
    (mu, var.max(0.0))
}

/// g = 2σ̂²s²/(1 − 4s²μ̂²), clamped to [0, g_max].
pub fn approx_gain(mu: f64, var: f64, s: f64, g_max: f64) -> f64 {
    let denom = 1.0 - 4.0 * s * s * mu * mu;
    if denom <= 0.0 {
        return g_max;
    }
    (2.0 * var * s * s / denom).clamp(0.0, g_max)
}

/// r = δ_max / (|α|(|μ̂| + κσ̂)), snapped to the IOC parity grid.
pub fn approx_depth(mu: f64, var: f64, alpha: f64, kappa: f64, delta_max: f64, r_cap: u32) -> u32 {
    let denom = alpha.abs() * (mu.abs() + kappa * var.sqrt());
    let raw = if denom > 0.0 { delta_max / denom } else { f64::INFINITY };
    snap_ioc_depth(raw, r_cap)
}

#[derive(Debug, Clone)]
enum SchedulerState {
    Static,
    ApproxError {
        m: usize,
        n: usize,
        kappa: f64,
        delta_max: f64,
        sliding: bool,
        schedule_r: bool,
        /// Running prefix sums of z since the last reset, trimmed to M·N + 1 entries.
        prefix: VecDeque<i64>,
    },
    Autocorrelation {
        h: usize,
        a_ub: i64,
        a_lb: i64,
        b: i64,
        r_max: u32,
        mult: f64,
        seq: Vec<u32>,
        window: VecDeque<i8>,
        /// Σ z_t z_{t−1} over `window`.
        a: i64,
    },
}

/// Change requested by a scheduler evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Retune {
    g: Option<f64>,
    r: Option<u32>,
}

impl SchedulerState {
    fn new(spec: &SchedulerSpec) -> Self {
        match spec.clone() {
            SchedulerSpec::Static | SchedulerSpec::AnalyticOptimal { .. } => SchedulerState::Static,
            SchedulerSpec::ApproxErrorEstimation { m, n, kappa, delta_max, sliding, schedule_r } => {
                let mut prefix = VecDeque::with_capacity(m * n + 2);
                prefix.push_back(0);
                SchedulerState::ApproxError { m, n, kappa, delta_max, sliding, schedule_r, prefix }
            }
            SchedulerSpec::Autocorrelation { h, a_ub, a_lb, b, r_max, g_multiplier, r_sequence } => {
                SchedulerState::Autocorrelation {
                    h,
                    a_ub,
                    a_lb,
                    b,
                    r_max,
                    mult: g_multiplier,
                    seq: r_sequence,
                    window: VecDeque::with_capacity(h + 1),
                    a: 0,
                }
            }
        }
    }

    fn clear(&mut self) {
        match self {
            SchedulerState::Static => {}
            SchedulerState::ApproxError { prefix, .. } => {
                prefix.clear();
                prefix.push_back(0);
            }
            SchedulerState::Autocorrelation { window, a, .. } => {
                window.clear();
                *a = 0;
            }
        }
    }

    /// Feed one sign-corrected outcome; returns any requested change.
    fn observe(&mut self, z: i8, g: f64, r: u32, alpha: f64, g_max: f64, r_cap: u32) -> Option<Retune> {
        match self {
            SchedulerState::Static => None,
            SchedulerState::ApproxError { m, n, kappa, delta_max, sliding, schedule_r, prefix } => {
                let last = *prefix.back().expect("prefix never empty");
                prefix.push_back(last + i64::from(z));
                let span = *m * *n;
                if prefix.len() > span + 1 {
                    prefix.pop_front();
                }
                if prefix.len() < span + 1 {
                    return None;
                }
                let end = prefix.len() - 1;
                let sums: Vec<i64> = (0..*m)
                    .map(|j| prefix[end - j * *n] - prefix[end - (j + 1) * *n])
                    .collect();
                let s = alpha.abs() * f64::from(r) / 2.0;
                let (mu, var) = approx_error_estimates(&sums, *n, s);
                let new_g = approx_gain(mu, var, s, g_max);
                let new_r = if *schedule_r {
                    approx_depth(mu, var, alpha, *kappa, *delta_max, r_cap)
                } else {
                    r
                };
                if !*sliding {
                    prefix.clear();
                    prefix.push_back(0);
                }
                Some(Retune {
                    g: (new_g != g).then_some(new_g),
                    r: (new_r != r).then_some(new_r),
                })
            }
            SchedulerState::Autocorrelation { h, a_ub, a_lb, b, r_max, mult, seq, window, a } => {
                if let Some(&prev) = window.back() {
                    *a += i64::from(prev) * i64::from(z);
                }
                window.push_back(z);
                if window.len() > *h {
                    let old = window.pop_front().expect("window non-empty");
                    *a -= i64::from(old) * i64::from(window[0]);
                }
                if window.len() < *h {
                    return None;
                }
                let next_r = seq.iter().copied().find(|&x| x > r).filter(|&x| x <= *r_max);
                if a.abs() <= *b {
                    return next_r.map(|nr| Retune { g: None, r: Some(nr) });
                }
                if *a > *a_ub {
                    return Some(Retune { g: Some((g * *mult).min(g_max)), r: None });
                }
                if *a < *a_lb {
                    return Some(Retune { g: Some(g / *mult), r: None });
                }
                None
            }
        }
    }
}

/// Parameters of a single-parameter (Gx)^r IOC engine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IocConfig {
    pub g: f64,
    pub r: u32,
    #[serde(default)]
    pub alternation: bool,
    #[serde(default = "default_g_max")]
    pub g_max: f64,
    #[serde(default = "default_r_cap")]
    pub r_cap: u32,
    #[serde(default)]
    pub scheduler: SchedulerSpec,
}

impl IocConfig {
    pub fn fixed(g: f64, r: u32) -> Self {
        Self {
            g,
            r,
            alternation: false,
            g_max: G_MAX,
            r_cap: default_r_cap(),
            scheduler: SchedulerSpec::Static,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..0.5).contains(&self.g_max) {
            return Err(Error::config("ioc.g_max", "must lie in [0, 1/2)"));
        }
        if !(0.0..0.5).contains(&self.g) {
            return Err(Error::config("ioc.g", format!("gain must lie in [0, 1/2), got {}", self.g)));
        }
        if self.r % 4 != 1 {
            return Err(Error::config("ioc.r", format!("IOC depth must be 1 mod 4, got {}", self.r)));
        }
        if self.r_cap == 0 || self.r > self.r_cap {
            return Err(Error::config("ioc.r_cap", "must be >= r"));
        }
        self.scheduler.validate()
    }
}

/// What happened on one shot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShotInfo {
    pub outcome: Bitstring,
    /// Sign-corrected σ_z outcome for single-qubit circuits.
    pub z: i8,
    /// Error angle α·Δη of parameter 0 when the shot ran.
    pub delta: f64,
    pub events: u8,
}

fn z_of(b: Bitstring) -> i8 {
    if b.value() == 0 {
        1
    } else {
        -1
    }
}

/// Single-parameter IOC on (Gx)^r.
#[derive(Debug, Clone)]
pub struct IocSingle {
    pub params: ControlParameterSet,
    pub g: f64,
    pub r: u32,
    pub t: u64,
    pub noise: NoiseModel,
    alternation: bool,
    g_max: f64,
    r_cap: u32,
    pair: AlternatingPair,
    scheduler: SchedulerState,
}

impl IocSingle {
    pub fn new(cfg: &IocConfig, params: ControlParameterSet, noise: NoiseModel) -> Result<Self> {
        cfg.validate()?;
        noise.validate()?;
        if params.len() != 1 {
            return Err(Error::DimensionMismatch { expected: 1, actual: params.len() });
        }
        let mut g = cfg.g;
        if let SchedulerSpec::AnalyticOptimal { ell } = cfg.scheduler {
            g = (ell * params.alpha[0].abs() * f64::from(cfg.r) / 2.0).min(cfg.g_max);
        }
        Ok(Self {
            g,
            r: cfg.r,
            t: 0,
            noise,
            alternation: cfg.alternation,
            g_max: cfg.g_max,
            r_cap: cfg.r_cap,
            pair: spam_alternation_wrapper(&gx_power(cfg.r)),
            scheduler: SchedulerState::new(&cfg.scheduler),
            params,
        })
    }

    /// s = |α| r / 2.
    pub fn sensitivity(&self) -> f64 {
        self.params.alpha[0].abs() * f64::from(self.r) / 2.0
    }

    pub fn offset(&self) -> f64 {
        self.params.offset(0)
    }

    /// η ← η − (g/s²)·s_z with s_z = −½ z α r (equal to η + (g/s) z for α > 0).
    /// `z` may be a batch average.
    pub fn apply_update(&mut self, z: f64) {
        let s = self.sensitivity();
        if s == 0.0 || self.g == 0.0 {
            return;
        }
        let s_z = -0.5 * z * self.params.alpha[0] * f64::from(self.r);
        self.params.eta[0] -= self.g / (s * s) * s_z;
    }

    fn shot<R: Rng + ?Sized>(&mut self, drift: &mut DriftProcess, rng: &mut R) -> Result<ShotInfo> {
        let mut ev = 0;
        if drift.step(&mut self.params.eta_opt, rng) {
            ev |= events::JUMP;
        }
        let (circuit, flipped) = if self.alternation {
            self.pair.for_shot(self.t)
        } else {
            (&self.pair.plain, false)
        };
        let delta = self.params.delta(0);
        let raw = circuit.run(&self.params, &self.noise, rng)?;
        let outcome = AlternatingPair::corrected(raw, flipped);
        Ok(ShotInfo { outcome, z: z_of(outcome), delta, events: ev })
    }

    fn after_record(&mut self, z: i8, info: &mut ShotInfo) {
        let alpha = self.params.alpha[0];
        if let Some(change) = self.scheduler.observe(z, self.g, self.r, alpha, self.g_max, self.r_cap) {
            let mut changed = false;
            if let Some(g) = change.g {
                self.g = g.clamp(0.0, self.g_max);
                changed = true;
            }
            if let Some(r) = change.r {
                self.set_depth(r);
                changed = true;
            }
            if changed {
                info.events |= events::HYPER_CHANGE;
                if change.r.is_some() || matches!(self.scheduler, SchedulerState::Autocorrelation { .. }) {
                    self.scheduler.clear();
                }
            }
        }
    }

    fn set_depth(&mut self, r: u32) {
        debug_assert_eq!(r % 4, 1);
        self.r = r;
        self.pair = spam_alternation_wrapper(&gx_power(r));
    }

    /// Drift step, one shot, update, scheduler hook.
    pub fn step<R: Rng + ?Sized>(&mut self, drift: &mut DriftProcess, rng: &mut R) -> Result<ShotInfo> {
        let mut info = self.shot(drift, rng)?;
        self.apply_update(f64::from(info.z));
        if self.g > 0.0 {
            info.events |= events::UPDATE;
        }
        self.t += 1;
        self.after_record(info.z, &mut info);
        Ok(info)
    }

    /// `n_batch` shots (drift advancing on each) followed by one update
    /// driven by their mean outcome.
    pub fn step_batched<R: Rng + ?Sized>(
        &mut self,
        n_batch: usize,
        drift: &mut DriftProcess,
        rng: &mut R,
    ) -> Result<Vec<ShotInfo>> {
        if n_batch == 0 {
            return Err(Error::config("ioc.n_batch", "must be >= 1"));
        }
        let mut shots = Vec::with_capacity(n_batch);
        for _ in 0..n_batch {
            shots.push(self.shot(drift, rng)?);
            self.t += 1;
        }
        let zbar = shots.iter().map(|s| f64::from(s.z)).sum::<f64>() / n_batch as f64;
        self.apply_update(zbar);
        if let Some(last) = shots.last_mut() {
            if self.g > 0.0 {
                last.events |= events::UPDATE;
            }
        }
        for info in shots.iter_mut() {
            let z = info.z;
            self.after_record(z, info);
        }
        Ok(shots)
    }
}

/// Multi-parameter IOC with round-robin circuits and Jacobian-row updates.
#[derive(Debug, Clone)]
pub struct IocMulti {
    pub params: ControlParameterSet,
    pub g: f64,
    pub t: u64,
    pub noise: NoiseModel,
    pairs: Vec<AlternatingPair>,
    alternation: bool,
    jacobian: Jacobian,
    skipped: u64,
}

impl IocMulti {
    /// Builds the Jacobian at Δη = 0 for `circuits`.
    pub fn new(
        circuits: &[Circuit],
        g: f64,
        alternation: bool,
        params: ControlParameterSet,
        noise: NoiseModel,
    ) -> Result<Self> {
        if !(0.0..0.5).contains(&g) {
            return Err(Error::config("ioc.g", format!("gain must lie in [0, 1/2), got {g}")));
        }
        noise.validate()?;
        let jacobian = build_jacobian(circuits, &params)?;
        if !jacobian.is_informationally_complete() {
            return Err(Error::RankDeficient { rank: jacobian.rank(), params: params.len() });
        }
        Ok(Self {
            pairs: circuits.iter().map(spam_alternation_wrapper).collect(),
            alternation,
            jacobian,
            g,
            t: 0,
            noise,
            params,
            skipped: 0,
        })
    }

    pub fn jacobian(&self) -> &Jacobian {
        &self.jacobian
    }

    /// Shots whose sensitivity vector vanished and were not applied.
    pub fn skipped(&self) -> u64 {
        self.skipped
    }

    /// η ← η − (g/|s_z|²) s_z for the observed row; returns false when s_z = 0.
    pub fn apply_row(&mut self, row: &[f64]) -> bool {
        let norm2: f64 = row.iter().map(|v| v * v).sum();
        if norm2 == 0.0 {
            return false;
        }
        for (eta, s) in self.params.eta.iter_mut().zip(row) {
            *eta -= self.g / norm2 * s;
        }
        true
    }

    pub fn step<R: Rng + ?Sized>(&mut self, drift: &mut DriftProcess, rng: &mut R) -> Result<ShotInfo> {
        let mut ev = 0;
        if drift.step(&mut self.params.eta_opt, rng) {
            ev |= events::JUMP;
        }
        let k = (self.t % self.pairs.len() as u64) as usize;
        // Alternate families on every other visit to the same circuit.
        let visit = self.t / self.pairs.len() as u64;
        let (circuit, flipped) = if self.alternation {
            self.pairs[k].for_shot(visit)
        } else {
            (&self.pairs[k].plain, false)
        };
        let delta = self.params.delta(0);
        let raw = circuit.run(&self.params, &self.noise, rng)?;
        let outcome = AlternatingPair::corrected(raw, flipped);
        let row = self.jacobian.row(self.jacobian.row_index(k, outcome));
        if self.apply_row(&row) {
            ev |= events::UPDATE;
        } else {
            self.skipped += 1;
            ev |= events::SKIPPED;
        }
        self.t += 1;
        Ok(ShotInfo { outcome, z: z_of(outcome), delta, events: ev })
    }
}

/// Ensemble statistics of a lockstep run driven by the exact gain schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleCurves {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub g: Vec<f64>,
}

/// Run `states` in lockstep on (Gx)^r with random-walk drift `ell`, choosing
/// at every step either the static gain `static_g` or, when it is `None`, the
/// exact schedule g_t = 2σ²_t s²/(1 − 4s²μ²_t) from the true ensemble moments.
pub fn run_ensemble_gain_schedule<R: Rng + ?Sized>(
    initial_offsets: &[f64],
    r: u32,
    ell: f64,
    steps: usize,
    static_g: Option<f64>,
    rng: &mut R,
) -> Result<EnsembleCurves> {
    let circuit = gx_power(r);
    let s = f64::from(r) / 2.0;
    let mut params: Vec<ControlParameterSet> =
        initial_offsets.iter().map(|d| ControlParameterSet::with_offsets(&[*d])).collect();
    let n = params.len() as f64;
    let mut out = EnsembleCurves { mean: Vec::new(), variance: Vec::new(), g: Vec::new() };
    let mut g = static_g.unwrap_or(0.0);
    for _ in 0..steps {
        let offsets: Vec<f64> = params.iter().map(|p| p.offset(0)).collect();
        let mu = offsets.iter().sum::<f64>() / n;
        let var = offsets.iter().map(|d| (d - mu).powi(2)).sum::<f64>() / n;
        out.mean.push(mu);
        out.variance.push(var);
        out.g.push(g);
        for p in params.iter_mut() {
            p.eta_opt[0] += if rng.random::<bool>() { ell } else { -ell };
            let z = z_of(circuit.run(p, &NoiseModel::NOISELESS, rng)?);
            p.eta[0] += g / s * f64::from(z);
        }
        if static_g.is_none() {
            let offsets: Vec<f64> = params.iter().map(|p| p.offset(0)).collect();
            let mu = offsets.iter().sum::<f64>() / n;
            let var = offsets.iter().map(|d| (d - mu).powi(2)).sum::<f64>() / n;
            g = crate::analytics::exact_gain_schedule(var, mu, s).unwrap_or(G_MAX).clamp(0.0, G_MAX);
        }
    }
    Ok(out)
}
