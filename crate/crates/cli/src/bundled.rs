//! Configs compiled into the binary.

pub const ALL: &[(&str, &str)] = &[
    ("fig10_analytic_predictions", include_str!("../configs/fig10_analytic_predictions.toml")),
    ("fig12_autocorrelation_scheduling", include_str!("../configs/fig12_autocorrelation_scheduling.toml")),
    ("fig13_doc_estimators", include_str!("../configs/fig13_doc_estimators.toml")),
    ("fig14_doc_r_scheduling", include_str!("../configs/fig14_doc_r_scheduling.toml")),
    ("fig15_jump_robustness", include_str!("../configs/fig15_jump_robustness.toml")),
    ("fig1_duty_cycle", include_str!("../configs/fig1_duty_cycle.toml")),
    ("fig2_mean_convergence", include_str!("../configs/fig2_mean_convergence.toml")),
    ("fig3_stationary_variance", include_str!("../configs/fig3_stationary_variance.toml")),
    ("fig4_multi_gxgy", include_str!("../configs/fig4_multi_gxgy.toml")),
    ("fig5_multi_cz", include_str!("../configs/fig5_multi_cz.toml")),
    ("fig6_batched_ioc", include_str!("../configs/fig6_batched_ioc.toml")),
    ("fig7_drift_optimal_gain", include_str!("../configs/fig7_drift_optimal_gain.toml")),
    ("fig8_approx_error_scheduling", include_str!("../configs/fig8_approx_error_scheduling.toml")),
    ("fig9_qec_survival", include_str!("../configs/fig9_qec_survival.toml")),
    ("rabi_baseline", include_str!("../configs/rabi_baseline.toml")),
];

pub fn get(name: &str) -> Option<&'static str> {
    let name = name.strip_suffix(".toml").unwrap_or(name);
    ALL.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}
