//! Batched Rabi curve-fit calibration used as a duty-cycle baseline.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

use nalgebra::{DMatrix, Matrix4, Vector4};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::circuits::{gx_power, NoiseModel};
use crate::drift::DriftProcess;
use crate::error::{Error, Result};
use crate::gates::ControlParameterSet;

fn default_r() -> u32 {
    20
}

fn default_n_batch() -> u32 {
    20
}

fn default_a() -> [f64; 2] {
    [0.9, 1.0]
}

fn default_theta() -> [f64; 2] {
    [FRAC_PI_4, 3.0 * FRAC_PI_4]
}

fn default_c() -> [f64; 2] {
    [0.0, 0.1]
}

fn default_duty() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RabiConfig {
    /// Depths 0..r are sampled.
    #[serde(default = "default_r")]
    pub r: u32,
    #[serde(default = "default_n_batch")]
    pub n_batch: u32,
    #[serde(default = "default_a")]
    pub a_bounds: [f64; 2],
    #[serde(default = "default_a")]
    pub b_bounds: [f64; 2],
    #[serde(default = "default_theta")]
    pub theta_bounds: [f64; 2],
    #[serde(default = "default_c")]
    pub c_bounds: [f64; 2],
    #[serde(default = "default_duty")]
    pub duty_cycle: f64,
}

impl Default for RabiConfig {
    fn default() -> Self {
        Self {
            r: default_r(),
            n_batch: default_n_batch(),
            a_bounds: default_a(),
            b_bounds: default_a(),
            theta_bounds: default_theta(),
            c_bounds: default_c(),
            duty_cycle: default_duty(),
        }
    }
}

impl RabiConfig {
    pub fn validate(&self) -> Result<()> {
        if self.r < 4 {
            return Err(Error::config("rabi.r", "need at least 4 depths to fit"));
        }
        if self.n_batch == 0 {
            return Err(Error::config("rabi.n_batch", "must be >= 1"));
        }
        for (name, b) in [
            ("rabi.a_bounds", self.a_bounds),
            ("rabi.b_bounds", self.b_bounds),
            ("rabi.theta_bounds", self.theta_bounds),
            ("rabi.c_bounds", self.c_bounds),
        ] {
            if !(b[0] <= b[1]) || !b[0].is_finite() || !b[1].is_finite() {
                return Err(Error::config(name, "bounds must be finite and ordered"));
            }
        }
        if !(self.duty_cycle > 0.0 && self.duty_cycle <= 1.0) {
            return Err(Error::config("rabi.duty_cycle", "must lie in (0, 1]"));
        }
        Ok(())
    }

    /// Calibration shots per cycle, N_batch·r.
    pub fn calibration_shots(&self) -> u64 {
        u64::from(self.n_batch) * u64::from(self.r)
    }

    /// Idle shots per cycle, round(N_batch·r·(1/D − 1)).
    pub fn idle_shots(&self) -> u64 {
        (self.calibration_shots() as f64 * (1.0 / self.duty_cycle - 1.0)).round() as u64
    }

    fn lower(&self) -> Vector4<f64> {
        Vector4::new(self.a_bounds[0], self.b_bounds[0], self.theta_bounds[0], self.c_bounds[0])
    }

    fn upper(&self) -> Vector4<f64> {
        Vector4::new(self.a_bounds[1], self.b_bounds[1], self.theta_bounds[1], self.c_bounds[1])
    }
}

/// P(r) = a·b^r·sin²(θr/2) + c.
pub fn rabi_model(a: f64, b: f64, theta: f64, c: f64, r: f64) -> f64 {
    a * b.powf(r) * (theta * r / 2.0).sin().powi(2) + c
}

fn model_grad(x: &Vector4<f64>, r: f64) -> (f64, Vector4<f64>) {
    let (a, b, th, c) = (x[0], x[1], x[2], x[3]);
    let br = b.powf(r);
    let s = (th * r / 2.0).sin();
    let s2 = s * s;
    let db = if r == 0.0 { 0.0 } else { a * r * b.powf(r - 1.0) * s2 };
    (
        a * br * s2 + c,
        Vector4::new(br * s2, db, a * br * r / 2.0 * (th * r).sin(), 1.0),
    )
}

/// Empirical frequency of outcome 1 at each depth.
#[derive(Debug, Clone, PartialEq)]
pub struct RabiData {
    pub depths: Vec<u32>,
    pub freqs: Vec<f64>,
    pub shots_per_depth: u32,
}

/// N_batch shots of (Gx)^{r_i} for r_i in 0..r with drift advancing every
/// shot. `on_shot` sees the parameters after each shot's drift step.
pub fn collect_rabi_data<R: Rng + ?Sized>(
    params: &mut ControlParameterSet,
    noise: &NoiseModel,
    drift: &mut DriftProcess,
    cfg: &RabiConfig,
    rng: &mut R,
    mut on_shot: impl FnMut(&ControlParameterSet),
) -> Result<RabiData> {
    cfg.validate()?;
    let mut freqs = Vec::with_capacity(cfg.r as usize);
    for ri in 0..cfg.r {
        let circuit = gx_power(ri);
        let mut ones = 0u32;
        for _ in 0..cfg.n_batch {
            drift.step(&mut params.eta_opt, rng);
            on_shot(params);
            ones += circuit.run(params, noise, rng)?.value() as u32;
        }
        freqs.push(f64::from(ones) / f64::from(cfg.n_batch));
    }
    Ok(RabiData { depths: (0..cfg.r).collect(), freqs, shots_per_depth: cfg.n_batch })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FitResult {
    pub a: f64,
    pub b: f64,
    pub theta: f64,
    pub c: f64,
    pub residual_norm: f64,
    /// Asymptotic standard error of θ; infinite when unidentifiable.
    pub theta_se: f64,
    pub converged: bool,
    pub degenerate: bool,
}

impl FitResult {
    /// Whether the fit may drive a correction.
    pub fn usable(&self) -> bool {
        self.converged && !self.degenerate && self.theta.is_finite()
    }

    /// δ̂ = π/2 − θ_est.
    pub fn error_estimate(&self) -> f64 {
        FRAC_PI_2 - self.theta
    }
}

const MAX_ITER: usize = 200;
const N_STARTS: usize = 5;
/// Data spanning less than this in probability carry no oscillation.
const FLAT_SPAN: f64 = 0.1;

fn cost(x: &Vector4<f64>, r: &[f64], f: &[f64]) -> f64 {
    r.iter().zip(f).map(|(ri, fi)| (model_grad(x, *ri).0 - fi).powi(2)).sum()
}

fn project(x: Vector4<f64>, lo: &Vector4<f64>, hi: &Vector4<f64>) -> Vector4<f64> {
    Vector4::from_fn(|i, _| x[i].clamp(lo[i], hi[i]))
}

/// Projected Levenberg–Marquardt from one start.
fn lm(mut x: Vector4<f64>, r: &[f64], f: &[f64], lo: &Vector4<f64>, hi: &Vector4<f64>) -> (Vector4<f64>, f64, bool) {
    let mut lambda = 1e-3;
    let mut c = cost(&x, r, f);
    for _ in 0..MAX_ITER {
        let mut jtj = Matrix4::zeros();
        let mut jtr = Vector4::zeros();
        for (ri, fi) in r.iter().zip(f) {
            let (m, g) = model_grad(&x, *ri);
            jtj += g * g.transpose();
            jtr += g * (m - fi);
        }
        let mut improved = false;
        while lambda < 1e12 {
            let mut damped = jtj;
            for i in 0..4 {
                damped[(i, i)] += lambda * jtj[(i, i)].max(1e-12);
            }
            let Some(step) = damped.lu().solve(&(-jtr)) else {
                lambda *= 10.0;
                continue;
            };
            let trial = project(x + step, lo, hi);
            let tc = cost(&trial, r, f);
            if tc < c {
                let rel = (c - tc) / c.max(1e-300);
                let moved = (trial - x).amax();
                x = trial;
                c = tc;
                lambda = (lambda / 10.0).max(1e-12);
                improved = true;
                if rel < 1e-12 || moved < 1e-12 {
                    return (x, c, true);
                }
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            // No descent direction left inside the box.
            return (x, c, true);
        }
    }
    (x, c, false)
}

/// Bounded least-squares fit of the Rabi model with multiple θ starts.
pub fn fit_rabi(data: &RabiData, cfg: &RabiConfig) -> Result<FitResult> {
    cfg.validate()?;
    let n = data.depths.len();
    if n < 4 || data.freqs.len() != n {
        return Err(Error::FitFailed(format!("need >= 4 matched points, got {n}")));
    }
    if data.freqs.iter().any(|f| !f.is_finite()) {
        return Err(Error::NonFinite("rabi data"));
    }
    let r: Vec<f64> = data.depths.iter().map(|&d| f64::from(d)).collect();
    let f = &data.freqs;
    let (lo, hi) = (cfg.lower(), cfg.upper());
    let fmin = f.iter().copied().fold(f64::INFINITY, f64::min);
    let fmax = f.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mid = (lo + hi) / 2.0;
    let mut best: Option<(Vector4<f64>, f64, bool)> = None;
    for k in 0..N_STARTS {
        let theta0 = lo[2] + (hi[2] - lo[2]) * k as f64 / (N_STARTS - 1) as f64;
        let x0 = project(Vector4::new(mid[0], mid[1], theta0, fmin), &lo, &hi);
        let run = lm(x0, &r, f, &lo, &hi);
        if best.as_ref().is_none_or(|b| run.1 < b.1) {
            best = Some(run);
        }
    }
    let (x, c, converged) = best.expect("at least one start");
    let jac = DMatrix::from_fn(n, 4, |i, j| model_grad(&x, r[i]).1[j]);
    let jtj = jac.transpose() * &jac;
    let dof = (n as f64 - 4.0).max(1.0);
    let theta_se = jtj
        .try_inverse()
        .map(|inv| (c / dof * inv[(2, 2)]).max(0.0).sqrt())
        .unwrap_or(f64::INFINITY);
    let degenerate = fmax - fmin < FLAT_SPAN || !theta_se.is_finite();
    Ok(FitResult {
        a: x[0],
        b: x[1],
        theta: x[2],
        c: x[3],
        residual_norm: c.sqrt(),
        theta_se,
        converged,
        degenerate,
    })
}

/// η ← η + (π/2 − θ_est)/α.
pub fn apply_rabi_correction(params: &mut ControlParameterSet, fit: &FitResult) -> f64 {
    let step = fit.error_estimate() / params.alpha[0];
    params.eta[0] += step;
    step
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RabiCycle {
    pub fit: FitResult,
    /// Applied correction, if the fit was usable.
    pub correction: Option<f64>,
    pub calibration_shots: u64,
    pub idle_shots: u64,
}

/// Collect, fit, correct, then let drift run for the idle period.
pub fn rabi_calibration_cycle<R: Rng + ?Sized>(
    params: &mut ControlParameterSet,
    noise: &NoiseModel,
    drift: &mut DriftProcess,
    cfg: &RabiConfig,
    rng: &mut R,
) -> Result<RabiCycle> {
    let data = collect_rabi_data(params, noise, drift, cfg, rng, |_| {})?;
    let fit = fit_rabi(&data, cfg)?;
    let correction = fit.usable().then(|| apply_rabi_correction(params, &fit));
    let idle = cfg.idle_shots();
    drift.advance(&mut params.eta_opt, idle, rng);
    Ok(RabiCycle { fit, correction, calibration_shots: cfg.calibration_shots(), idle_shots: idle })
}
