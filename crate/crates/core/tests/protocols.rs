//! End-to-end protocol checks against closed forms computed here.

use driftcal::circuits::{gx_power, NoiseModel};
use driftcal::doc::{DocConfig, DocEngine};
use driftcal::drift::{DriftProcess, DriftSpec};
use driftcal::gates::ControlParameterSet;
use driftcal::ioc::{IocConfig, IocSingle};
use driftcal::qec::{QecConfig, QecRealization};
use driftcal::rabi::{fit_rabi, rabi_model, RabiConfig, RabiData};
use driftcal::rng::RngStream;
use driftcal::runner::{execute, ExperimentConfig, RunOptions};

#[test]
fn gx_power_matches_rotation_formula() {
    let mut rng = RngStream::new(1, 0);
    let n = 200_000;
    for (r, delta) in [(1u32, 0.0), (5, 0.1), (6, 0.0), (13, -0.05)] {
        let c = gx_power(r);
        let p = ControlParameterSet::with_offsets(&[delta]);
        let ones = (0..n).filter(|_| c.run(&p, &NoiseModel::NOISELESS, &mut rng).unwrap().value() == 1).count();
        let expected = (f64::from(r) * (std::f64::consts::FRAC_PI_2 + delta) / 2.0).sin().powi(2);
        let sd = (expected * (1.0 - expected) / n as f64).sqrt().max(1e-9);
        assert!((ones as f64 / n as f64 - expected).abs() <= 4.0 * sd, "r={r}");
    }
}

#[test]
fn ioc_mean_step_matches_first_order_update() {
    // E[Δη'] = Δη − (g/s²)·E[s_z] with E[s_z] = (r/2)·sin(rδ) for r ≡ 1 mod 4.
    let (g, r, d0) = (0.05, 5u32, 0.02);
    let trials = 100_000;
    let mut rng = RngStream::new(2, 0);
    let mut drift = DriftProcess::new(&DriftSpec::None, vec![0.0]).unwrap();
    let mut acc = 0.0;
    for _ in 0..trials {
        let mut e = IocSingle::new(&IocConfig::fixed(g, r), ControlParameterSet::with_offsets(&[d0]), NoiseModel::NOISELESS).unwrap();
        e.step(&mut drift, &mut rng).unwrap();
        acc += e.params.offset(0);
    }
    let s = f64::from(r) / 2.0;
    let expected = d0 - g / (s * s) * s * (f64::from(r) * d0).sin();
    let step = g / s;
    let se = step / (trials as f64).sqrt();
    assert!((acc / trials as f64 - expected).abs() < 4.0 * se, "{} vs {expected}", acc / trials as f64);
}

#[test]
fn doc_converges_from_offset() {
    let mut finals = Vec::new();
    for k in 0..40 {
        let mut rng_k = RngStream::child(3, 0, k);
        let mut e = DocEngine::new(&DocConfig::fixed(10), ControlParameterSet::with_offsets(&[0.15]), NoiseModel::NOISELESS).unwrap();
        let mut drift = DriftProcess::new(&DriftSpec::None, vec![0.0]).unwrap();
        for _ in 0..4000 {
            e.step(&mut drift, &mut rng_k).unwrap();
        }
        finals.push(e.params.offset(0).abs());
    }
    let mean = finals.iter().sum::<f64>() / finals.len() as f64;
    assert!(mean < 0.03, "{mean}");
}

#[test]
fn rabi_fit_recovers_noiseless_angle() {
    let cfg = RabiConfig::default();
    let theta = std::f64::consts::FRAC_PI_2 + 0.03;
    let depths: Vec<u32> = (0..=cfg.r).collect();
    let freqs: Vec<f64> = depths.iter().map(|&r| rabi_model(0.98, 0.995, theta, 0.01, f64::from(r))).collect();
    let fit = fit_rabi(&RabiData { depths, freqs, shots_per_depth: cfg.n_batch }, &cfg).unwrap();
    assert!(fit.usable());
    assert!((fit.theta - theta).abs() < 1e-6, "{}", fit.theta);
}

#[test]
fn qec_without_drift_keeps_survival() {
    let mut q = QecRealization::new(&QecConfig::default(), &DriftSpec::None, &[0.0; 15]).unwrap();
    let mut rng = RngStream::new(4, 0);
    for _ in 0..20 {
        let rec = q.round(&mut rng).unwrap();
        assert_eq!(rec.syndrome, 0);
        assert!((rec.survival - 1.0).abs() < 1e-12);
    }
}

#[test]
fn runner_summary_tracks_closed_form_mean() {
    let cfg = ExperimentConfig::from_toml_str(
        "schema_version = 1\nname = \"m\"\nseed = 9\ntrajectories = 3000\nshots = 60\n\
         [output]\nstride = 20\nlog_trajectories = false\n\
         [experiment]\nkind = \"ioc_single\"\ninitial = 0.1\nioc = { g = 0.05, r = 1 }\n",
    )
    .unwrap();
    let out = execute(&cfg, RunOptions::default()).unwrap();
    assert!(out.csv.is_none());
    let arm = &out.summary["arms"][0];
    for (i, t) in arm["t"].as_array().unwrap().iter().enumerate().skip(1) {
        let t = t.as_u64().unwrap();
        let mu = arm["mean_delta_eta"][0][i].as_f64().unwrap();
        let se = arm["sem_delta_eta"][0][i].as_f64().unwrap();
        let predicted = 0.9f64.powi(t as i32) * 0.1;
        assert!((mu - predicted).abs() < 3.0 * se, "t={t}: {mu} vs {predicted}");
    }
}
