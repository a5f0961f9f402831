//! Closed-form predictions for the IOC update, trajectory records and
//! summary statistics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// μ_t = (1 − 2g)^t μ0.
pub fn predict_mean(mu0: f64, g: f64, t: u64) -> f64 {
    mu0 * (1.0 - 2.0 * g).powf(t as f64)
}

/// μ(τ) = μ0 e^{−2gτ}.
pub fn predict_mean_continuous(mu0: f64, g: f64, t: f64) -> f64 {
    mu0 * (-2.0 * g * t).exp()
}

/// Inputs shared by the variance predictions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceModel {
    pub sigma0_sq: f64,
    pub mu0: f64,
    pub g: f64,
    /// Circuit sensitivity s = |α| r / 2.
    pub s: f64,
    /// Random-walk step ℓ.
    pub ell: f64,
}

impl VarianceModel {
    /// σ²_∞ = g/(4s²) + ℓ²/(4g).
    pub fn stationary(&self) -> f64 {
        stationary_variance(self.g, self.s, self.ell)
    }

    /// Closed-form solution of the variance difference equation, including
    /// the μ0² transient term. For g = 0 the variance grows as σ0² + tℓ².
    pub fn closed_form(&self, t: u64) -> f64 {
        let VarianceModel { sigma0_sq, mu0, g, ell, .. } = *self;
        if g == 0.0 {
            return sigma0_sq + t as f64 * ell * ell;
        }
        let a = self.stationary();
        let decay = 1.0 - 4.0 * g;
        let transient = if t == 0 {
            0.0
        } else {
            4.0 * g * g * decay.powf(t as f64 - 1.0) * mu0 * mu0
        };
        (sigma0_sq - a) * decay.powf(t as f64) + a - transient
    }

    /// Direct iteration of σ²_t = σ²_{t−1} + g²/s² + ℓ² − 4gσ²_{t−1} − 4g²μ²_{t−1}
    /// with μ_t = (1 − 2g)^t μ0.
    pub fn recursion(&self, t: u64) -> f64 {
        let VarianceModel { sigma0_sq, mu0, g, s, ell } = *self;
        let mut var = sigma0_sq;
        let mut mu = mu0;
        for _ in 0..t {
            var += g * g / (s * s) + ell * ell - 4.0 * g * var - 4.0 * g * g * mu * mu;
            mu *= 1.0 - 2.0 * g;
        }
        var
    }

    /// (σ0² − g/(4s²) − ℓ²/(4g)) e^{−4gτ} + g/(4s²) + ℓ²/(4g), valid for μ ≡ 0.
    pub fn continuous(&self, t: f64) -> f64 {
        if self.g == 0.0 {
            return self.sigma0_sq + t * self.ell * self.ell;
        }
        let a = self.stationary();
        (self.sigma0_sq - a) * (-4.0 * self.g * t).exp() + a
    }
}

/// σ²_∞ = g/(4s²) + ℓ²/(4g); infinite for g = 0 with drift.
pub fn stationary_variance(g: f64, s: f64, ell: f64) -> f64 {
    let drift = if ell == 0.0 { 0.0 } else { ell * ell / (4.0 * g) };
    g / (4.0 * s * s) + drift
}

/// Gain minimizing the stationary variance, g = ℓs, and that minimum ℓ/(2s).
pub fn optimal_gain(ell: f64, s: f64) -> (f64, f64) {
    (ell * s, ell / (2.0 * s))
}

/// g_t = 2σ²s² / (1 − 4s²μ²).
pub fn exact_gain_schedule(sigma_sq: f64, mu: f64, s: f64) -> Result<f64> {
    let denom = 1.0 - 4.0 * s * s * mu * mu;
    if denom <= 0.0 {
        return Err(Error::Singular("gain schedule denominator"));
    }
    Ok(2.0 * sigma_sq * s * s / denom)
}

/// Σ z_t z_{t−1} over the last `h` entries of `record`.
pub fn autocorrelation_sum(record: &[i8], h: usize) -> Result<i64> {
    if h == 0 || record.len() < h {
        return Err(Error::DimensionMismatch {
            expected: h.max(1),
            actual: record.len(),
        });
    }
    let window = &record[record.len() - h..];
    Ok(window
        .windows(2)
        .map(|w| i64::from(w[0]) * i64::from(w[1]))
        .sum())
}

/// D = T_c / (T_c + T_e).
pub fn duty_cycle(t_c: f64, t_e: f64) -> Result<f64> {
    if t_c < 0.0 || t_e < 0.0 || t_c + t_e == 0.0 {
        return Err(Error::config("duty_cycle", "T_c and T_e must be >= 0 and not both zero"));
    }
    Ok(t_c / (t_c + t_e))
}

/// Idle shots after each calibration shot for duty cycle D: 1/D − 1, rounded.
pub fn idle_shots_per_calibration_shot(d: f64) -> u64 {
    (1.0 / d - 1.0).round().max(0.0) as u64
}

pub mod events {
    pub const UPDATE: u8 = 1;
    pub const ABORT: u8 = 2;
    pub const JUMP: u8 = 4;
    pub const SKIPPED: u8 = 8;
    pub const HYPER_CHANGE: u8 = 16;
    /// Row logged during an uncalibrated (idle) shot.
    pub const IDLE: u8 = 32;
}

/// Columnar per-shot log of one trajectory.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub n_params: usize,
    pub t: Vec<u64>,
    /// Row-major `[row][param]`, flattened.
    pub eta: Vec<f64>,
    pub eta_opt: Vec<f64>,
    /// Outcome as a basis index (or z for single-qubit protocols).
    pub outcome: Vec<i64>,
    pub g: Vec<f64>,
    pub r: Vec<u32>,
    pub infidelity: Vec<f64>,
    pub events: Vec<u8>,
}

/// One row as pushed by a protocol engine.
#[derive(Debug, Clone, Copy)]
pub struct RowRef<'a> {
    pub t: u64,
    pub eta: &'a [f64],
    pub eta_opt: &'a [f64],
    pub outcome: i64,
    pub g: f64,
    pub r: u32,
    pub infidelity: f64,
    pub events: u8,
}

impl TrajectoryRecord {
    pub fn new(n_params: usize) -> Self {
        Self {
            n_params,
            ..Default::default()
        }
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn push(&mut self, row: RowRef<'_>) {
        debug_assert_eq!(row.eta.len(), self.n_params);
        debug_assert!(self.t.last().is_none_or(|&last| row.t > last));
        self.t.push(row.t);
        self.eta.extend_from_slice(row.eta);
        self.eta_opt.extend_from_slice(row.eta_opt);
        self.outcome.push(row.outcome);
        self.g.push(row.g);
        self.r.push(row.r);
        self.infidelity.push(row.infidelity);
        self.events.push(row.events);
    }

    pub fn eta(&self, row: usize, param: usize) -> f64 {
        self.eta[row * self.n_params + param]
    }

    pub fn eta_opt(&self, row: usize, param: usize) -> f64 {
        self.eta_opt[row * self.n_params + param]
    }

    pub fn delta_eta(&self, row: usize, param: usize) -> f64 {
        self.eta(row, param) - self.eta_opt(row, param)
    }

    pub fn delta_series(&self, param: usize) -> Vec<f64> {
        (0..self.len()).map(|i| self.delta_eta(i, param)).collect()
    }

    pub fn mean_infidelity(&self) -> f64 {
        mean(&self.infidelity)
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance; zero for fewer than two samples.
pub fn sample_variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64
}

/// Linear-interpolation quantile of unsorted data.
pub fn quantile(xs: &[f64], q: f64) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

pub fn median(xs: &[f64]) -> f64 {
    quantile(xs, 0.5)
}

/// Interquartile range (q25, q75).
pub fn iqr(xs: &[f64]) -> (f64, f64) {
    (quantile(xs, 0.25), quantile(xs, 0.75))
}

/// Cross-trajectory mean, standard deviation and standard error at one step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointStats {
    pub mean: f64,
    pub sd: f64,
    pub sem: f64,
}

impl PointStats {
    pub fn of(xs: &[f64]) -> Self {
        let var = sample_variance(xs);
        Self {
            mean: mean(xs),
            sd: var.sqrt(),
            sem: (var / xs.len() as f64).sqrt(),
        }
    }
}

/// Per-step statistics across trajectories plus per-trajectory aggregates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub trajectories: usize,
    pub t: Vec<u64>,
    /// `[param][step]`.
    pub delta_eta: Vec<Vec<PointStats>>,
    pub abs_delta_eta: Vec<Vec<PointStats>>,
    pub infidelity: Vec<PointStats>,
    pub g: Vec<PointStats>,
    pub r: Vec<PointStats>,
    /// Time-averaged infidelity of each trajectory.
    pub experiment_mean_infidelity: Vec<f64>,
    pub median_experiment_infidelity: f64,
    pub iqr_experiment_infidelity: (f64, f64),
}

/// Summarize trajectories logged on a common time grid.
pub fn summarize(records: &[TrajectoryRecord]) -> Result<Summary> {
    let first = records
        .first()
        .ok_or_else(|| Error::config("trajectories", "at least one trajectory is required"))?;
    for r in records {
        if r.t != first.t || r.n_params != first.n_params {
            return Err(Error::DimensionMismatch {
                expected: first.len(),
                actual: r.len(),
            });
        }
    }
    let steps = first.len();
    let column = |f: &dyn Fn(&TrajectoryRecord, usize) -> f64| -> Vec<PointStats> {
        let mut buf = vec![0.0; records.len()];
        (0..steps)
            .map(|i| {
                for (b, r) in buf.iter_mut().zip(records) {
                    *b = f(r, i);
                }
                PointStats::of(&buf)
            })
            .collect()
    };
    let delta_eta = (0..first.n_params)
        .map(|p| column(&|r, i| r.delta_eta(i, p)))
        .collect();
    let abs_delta_eta = (0..first.n_params)
        .map(|p| column(&|r, i| r.delta_eta(i, p).abs()))
        .collect();
    let experiment: Vec<f64> = records.iter().map(TrajectoryRecord::mean_infidelity).collect();
    Ok(Summary {
        trajectories: records.len(),
        t: first.t.clone(),
        delta_eta,
        abs_delta_eta,
        infidelity: column(&|r, i| r.infidelity[i]),
        g: column(&|r, i| r.g[i]),
        r: column(&|r, i| f64::from(r.r[i])),
        median_experiment_infidelity: median(&experiment),
        iqr_experiment_infidelity: iqr(&experiment),
        experiment_mean_infidelity: experiment,
    })
}
