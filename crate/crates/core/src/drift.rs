//! Stochastic drift of the hidden optimal control values η_opt.
//!
//! Each parameter drifts independently. A [`DriftProcess`] keeps the anchor
//! value η_opt,0 and a per-parameter component state; after every shot
//! η_opt = anchor + Σ component offsets.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn default_components() -> usize {
    7
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
#[derive(Default)]
pub enum DriftSpec {
    #[default]
    None,
    /// η_opt += ±step with equal probability.
    RandomWalk { step: f64 },
    /// x ← x·e^{−reversion} + volatility·ε, ε ~ N(0, 1).
    OrnsteinUhlenbeck { reversion: f64, volatility: f64 },
    /// Deterministic offset `magnitude` switched on at shot `at_shot`.
    Jump { at_shot: u64, magnitude: f64 },
    /// `scale`·Σ x_i over OU components with α_i = 10/4^i, σ_i = 2^i(1 − e^{−2α_i}).
    OneOverF {
        scale: f64,
        #[serde(default = "default_components")]
        components: usize,
    },
    Composite { components: Vec<DriftSpec> },
}

/// Reversion rates and volatilities of the 1/f component bank.
pub fn one_over_f_coefficients(components: usize) -> (Vec<f64>, Vec<f64>) {
    (1..=components)
        .map(|i| {
            let a = 10.0 * 0.25f64.powi(i as i32);
            (a, 2f64.powi(i as i32) * (1.0 - (-2.0 * a).exp()))
        })
        .unzip()
}

impl DriftSpec {
    pub fn random_walk(step: f64) -> Self {
        DriftSpec::RandomWalk { step }
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_at("drift")
    }

    pub fn validate_at(&self, path: &str) -> Result<()> {
        let nonneg = |name: &str, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(Error::config(format!("{path}.{name}"), format!("must be finite and >= 0, got {v}")))
            }
        };
        match self {
            DriftSpec::None => Ok(()),
            DriftSpec::RandomWalk { step } => nonneg("step", *step),
            DriftSpec::OrnsteinUhlenbeck { reversion, volatility } => {
                nonneg("reversion", *reversion)?;
                nonneg("volatility", *volatility)
            }
            DriftSpec::Jump { magnitude, .. } => {
                if magnitude.is_finite() {
                    Ok(())
                } else {
                    Err(Error::config(format!("{path}.magnitude"), "must be finite"))
                }
            }
            DriftSpec::OneOverF { scale, components } => {
                nonneg("scale", *scale)?;
                if *components == 0 {
                    return Err(Error::config(format!("{path}.components"), "must be >= 1"));
                }
                Ok(())
            }
            DriftSpec::Composite { components } => components
                .iter()
                .enumerate()
                .try_for_each(|(i, c)| c.validate_at(&format!("{path}.components[{i}]"))),
        }
    }

    /// Whether the process can move η_opt at all.
    pub fn is_static(&self) -> bool {
        match self {
            DriftSpec::None => true,
            DriftSpec::RandomWalk { step } => *step == 0.0,
            DriftSpec::OrnsteinUhlenbeck { volatility, .. } => *volatility == 0.0,
            DriftSpec::Jump { magnitude, .. } => *magnitude == 0.0,
            DriftSpec::OneOverF { scale, .. } => *scale == 0.0,
            DriftSpec::Composite { components } => components.iter().all(DriftSpec::is_static),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Component {
    None,
    RandomWalk { step: f64, x: f64 },
    Ou { decay: f64, volatility: f64, x: f64 },
    Jump { at_shot: u64, magnitude: f64, fired: bool },
    OneOverF { scale: f64, decay: Vec<f64>, sigma: Vec<f64>, x: Vec<f64> },
    Composite(Vec<Component>),
}

impl Component {
    fn from_spec(spec: &DriftSpec) -> Self {
        match spec {
            DriftSpec::None => Component::None,
            DriftSpec::RandomWalk { step } => Component::RandomWalk { step: *step, x: 0.0 },
            DriftSpec::OrnsteinUhlenbeck { reversion, volatility } => Component::Ou {
                decay: (-reversion).exp(),
                volatility: *volatility,
                x: 0.0,
            },
            DriftSpec::Jump { at_shot, magnitude } => Component::Jump {
                at_shot: *at_shot,
                magnitude: *magnitude,
                fired: false,
            },
            DriftSpec::OneOverF { scale, components } => {
                let (alpha, sigma) = one_over_f_coefficients(*components);
                Component::OneOverF {
                    scale: *scale,
                    decay: alpha.iter().map(|a| (-a).exp()).collect(),
                    sigma,
                    x: vec![0.0; *components],
                }
            }
            DriftSpec::Composite { components } => {
                Component::Composite(components.iter().map(Component::from_spec).collect())
            }
        }
    }

    /// Advance to shot `t`; returns true if a jump fired.
    fn step<R: Rng + ?Sized>(&mut self, t: u64, rng: &mut R) -> bool {
        match self {
            Component::None => false,
            Component::RandomWalk { step, x } => {
                if *step != 0.0 {
                    *x += if rng.random::<bool>() { *step } else { -*step };
                }
                false
            }
            Component::Ou { decay, volatility, x } => {
                let eps: f64 = rng.sample(StandardNormal);
                *x = *x * *decay + *volatility * eps;
                false
            }
            Component::Jump { at_shot, fired, .. } => {
                if !*fired && t >= *at_shot {
                    *fired = true;
                    true
                } else {
                    false
                }
            }
            Component::OneOverF { decay, sigma, x, .. } => {
                for ((xi, d), s) in x.iter_mut().zip(decay.iter()).zip(sigma.iter()) {
                    let eps: f64 = rng.sample(StandardNormal);
                    *xi = *xi * d + s * eps;
                }
                false
            }
            Component::Composite(parts) => {
                let mut jumped = false;
                for p in parts {
                    jumped |= p.step(t, rng);
                }
                jumped
            }
        }
    }

    fn offset(&self) -> f64 {
        match self {
            Component::None => 0.0,
            Component::RandomWalk { x, .. } | Component::Ou { x, .. } => *x,
            Component::Jump { magnitude, fired, .. } => {
                if *fired {
                    *magnitude
                } else {
                    0.0
                }
            }
            Component::OneOverF { scale, x, .. } => *scale * x.iter().sum::<f64>(),
            Component::Composite(parts) => parts.iter().map(Component::offset).sum(),
        }
    }
}

/// Drift state for a whole parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftProcess {
    anchor: Vec<f64>,
    components: Vec<Component>,
    t: u64,
    is_static: bool,
}

impl DriftProcess {
    /// Start the process with η_opt,0 = `anchor`, one independent copy per entry.
    pub fn new(spec: &DriftSpec, anchor: Vec<f64>) -> Result<Self> {
        spec.validate()?;
        let components = anchor.iter().map(|_| Component::from_spec(spec)).collect();
        Ok(Self {
            anchor,
            components,
            t: 0,
            is_static: spec.is_static(),
        })
    }

    pub fn len(&self) -> usize {
        self.anchor.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchor.is_empty()
    }

    /// Number of steps taken so far.
    pub fn shot(&self) -> u64 {
        self.t
    }

    pub fn eta_opt(&self, i: usize) -> f64 {
        self.anchor[i] + self.components[i].offset()
    }

    /// Advance one shot and write the new optima into `eta_opt`.
    /// Returns true if a scheduled jump took effect on this step.
    pub fn step<R: Rng + ?Sized>(&mut self, eta_opt: &mut [f64], rng: &mut R) -> bool {
        debug_assert_eq!(eta_opt.len(), self.anchor.len());
        self.t += 1;
        if self.is_static {
            return false;
        }
        let mut jumped = false;
        for (i, c) in self.components.iter_mut().enumerate() {
            jumped |= c.step(self.t, rng);
            eta_opt[i] = self.anchor[i] + c.offset();
        }
        jumped
    }

    /// Advance `n` shots.
    pub fn advance<R: Rng + ?Sized>(&mut self, eta_opt: &mut [f64], n: u64, rng: &mut R) -> bool {
        let mut jumped = false;
        for _ in 0..n {
            jumped |= self.step(eta_opt, rng);
        }
        jumped
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    #[test]
    fn zero_step_walk_is_constant() {
        let mut d = DriftProcess::new(&DriftSpec::random_walk(0.0), vec![0.3]).unwrap();
        let mut opt = [0.3];
        let mut rng = RngStream::new(3, 0);
        d.advance(&mut opt, 1000, &mut rng);
        assert_eq!(opt, [0.3]);
    }

    #[test]
    fn random_walk_variance_grows_linearly() {
        let step = 0.001;
        let t = 1000;
        let n = 100_000;
        let mut sum = 0.0;
        let mut sum2 = 0.0;
        for k in 0..n {
            let mut rng = RngStream::new(11, k);
            let mut d = DriftProcess::new(&DriftSpec::random_walk(step), vec![0.0]).unwrap();
            let mut opt = [0.0];
            d.advance(&mut opt, t, &mut rng);
            sum += opt[0];
            sum2 += opt[0] * opt[0];
        }
        let mean = sum / n as f64;
        let var = sum2 / n as f64 - mean * mean;
        let expected = step * step * t as f64;
        assert!((var / expected - 1.0).abs() < 0.05, "var {var} vs {expected}");
        let se = (expected / n as f64).sqrt();
        assert!(mean.abs() < 3.0 * se, "mean {mean} se {se}");
    }

    #[test]
    fn ou_reaches_stationary_variance() {
        let (a, s) = (1e-4, 1e-3);
        let spec = DriftSpec::OrnsteinUhlenbeck { reversion: a, volatility: s };
        let n = 2000;
        let finals: Vec<f64> = (0..n)
            .map(|k| {
                let mut rng = RngStream::new(5, k);
                let mut d = DriftProcess::new(&spec, vec![0.0]).unwrap();
                let mut opt = [0.0];
                d.advance(&mut opt, 50_000, &mut rng);
                opt[0]
            })
            .collect();
        let mean = finals.iter().sum::<f64>() / n as f64;
        let var = finals.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let expected = s * s / (1.0 - (-2.0 * a).exp());
        assert!((var / expected - 1.0).abs() < 0.1, "var {var} vs {expected}");
    }

    #[test]
    fn jump_fires_once_at_its_shot() {
        let spec = DriftSpec::Jump { at_shot: 10, magnitude: 0.15 };
        let mut d = DriftProcess::new(&spec, vec![0.0]).unwrap();
        let mut opt = [0.0];
        let mut rng = RngStream::new(1, 0);
        for t in 1..=20u64 {
            let before = opt[0];
            let jumped = d.step(&mut opt, &mut rng);
            assert_eq!(jumped, t == 10);
            let expected = if t == 10 { 0.15 } else { 0.0 };
            assert!((opt[0] - before - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn jump_rides_on_ou() {
        let ou = DriftSpec::OrnsteinUhlenbeck { reversion: 1e-4, volatility: 1e-3 };
        let both = DriftSpec::Composite {
            components: vec![ou.clone(), DriftSpec::Jump { at_shot: 5, magnitude: 0.15 }],
        };
        let mut a = DriftProcess::new(&ou, vec![0.0]).unwrap();
        let mut b = DriftProcess::new(&both, vec![0.0]).unwrap();
        let (mut oa, mut ob) = ([0.0], [0.0]);
        let (mut ra, mut rb) = (RngStream::new(2, 0), RngStream::new(2, 0));
        for t in 1..=10 {
            a.step(&mut oa, &mut ra);
            b.step(&mut ob, &mut rb);
            let shift = if t >= 5 { 0.15 } else { 0.0 };
            assert!((ob[0] - oa[0] - shift).abs() < 1e-15);
        }
    }

    #[test]
    fn one_over_f_coefficients_follow_geometric_law() {
        let (alpha, sigma) = one_over_f_coefficients(7);
        assert_eq!(alpha.len(), 7);
        for i in 1..=7 {
            let a = 10.0 / 4f64.powi(i);
            assert!((alpha[i as usize - 1] - a).abs() < 1e-15);
            let s = 2f64.powi(i) * (1.0 - (-2.0 * a).exp());
            assert!((sigma[i as usize - 1] - s).abs() < 1e-15);
        }
        assert!((alpha[0] - 2.5).abs() < 1e-15);
    }

    #[test]
    fn parameters_drift_independently() {
        let mut d = DriftProcess::new(&DriftSpec::random_walk(0.01), vec![0.0, 0.0]).unwrap();
        let mut opt = [0.0, 0.0];
        let mut rng = RngStream::new(9, 0);
        let mut differ = 0;
        for _ in 0..200 {
            let prev = opt;
            d.step(&mut opt, &mut rng);
            if (opt[0] - prev[0]).signum() != (opt[1] - prev[1]).signum() {
                differ += 1;
            }
        }
        assert!(differ > 50 && differ < 150);
    }

    #[test]
    fn spec_round_trips_and_validates() {
        let text = r#"
kind = "composite"
[[components]]
kind = "ornstein_uhlenbeck"
reversion = 0.0001
volatility = 0.001
[[components]]
kind = "jump"
at_shot = 1000
magnitude = 0.15
"#;
        let spec: DriftSpec = toml::from_str(text).unwrap();
        spec.validate().unwrap();
        let bad = DriftSpec::Composite { components: vec![DriftSpec::random_walk(-1.0)] };
        let err = bad.validate().unwrap_err().to_string();
        assert!(err.contains("drift.components[0].step"), "{err}");
        let f: DriftSpec = toml::from_str("kind = \"one_over_f\"\nscale = 0.001").unwrap();
        assert_eq!(f, DriftSpec::OneOverF { scale: 0.001, components: 7 });
    }
}
