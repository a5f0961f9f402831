//! Experiment configuration, trajectory orchestration and output files.
//!
//! A config is a TOML document with a mandatory seed, a shared drift and
//! noise model, an `[experiment]` table tagged by `kind`, and optional
//! `[[variants]]` whose tables are deep-merged over the experiment to form
//! the arms of a comparison.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::analytics::{self, events, predict_mean, summarize, TrajectoryRecord, VarianceModel};
use crate::circuits::{cz_c1, cz_c2, gxgy_c1, gxgy_c2, Circuit, Gate, NoiseModel};
use crate::doc::{DocConfig, DocEngine};
use crate::drift::{DriftProcess, DriftSpec};
use crate::error::{Error, Result};
use crate::gates::{depolarized_unitary_infidelity, gx_process_infidelity, ControlParameterSet, IDLE_PARAMS};
use crate::ioc::{IocConfig, IocMulti, IocSingle, SchedulerSpec};
use crate::qec::{QecConfig, QecRealization};
use crate::rabi::{apply_rabi_correction, collect_rabi_data, fit_rabi, RabiConfig};
use crate::rng::RngStream;

pub const SCHEMA_VERSION: u32 = 1;
pub const TRAJECTORIES_FILE: &str = "trajectories.csv";
pub const SUMMARY_FILE: &str = "summary.json";

fn one() -> f64 {
    1.0
}

fn one_usize() -> usize {
    1
}

fn default_ioc_r() -> u32 {
    13
}

fn default_doc_r() -> u32 {
    10
}

/// Initial offsets Δη₀: one value for every parameter, an explicit list, or
/// independent uniform draws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Initial {
    Value(f64),
    List(Vec<f64>),
    Uniform { uniform: [f64; 2] },
}

impl Default for Initial {
    fn default() -> Self {
        Initial::Value(0.0)
    }
}

impl Initial {
    fn validate(&self, field: &str, n: usize) -> Result<()> {
        match self {
            Initial::Value(v) if !v.is_finite() => Err(Error::config(field, "must be finite")),
            Initial::List(v) if v.len() != n => {
                Err(Error::config(field, format!("expected {n} offsets, got {}", v.len())))
            }
            Initial::List(v) if v.iter().any(|x| !x.is_finite()) => Err(Error::config(field, "must be finite")),
            Initial::Uniform { uniform: [a, b] } if !(a <= b) || !a.is_finite() || !b.is_finite() => {
                Err(Error::config(field, "uniform bounds must be finite and ordered"))
            }
            _ => Ok(()),
        }
    }

    fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<f64> {
        match self {
            Initial::Value(v) => vec![*v; n],
            Initial::List(v) => v.clone(),
            Initial::Uniform { uniform: [a, b] } => {
                (0..n).map(|_| if a == b { *a } else { rng.random_range(*a..*b) }).collect()
            }
        }
    }

    /// Mean and variance of the initial offset distribution.
    fn moments(&self) -> Option<(f64, f64)> {
        match self {
            Initial::Value(v) => Some((*v, 0.0)),
            Initial::Uniform { uniform: [a, b] } => Some(((a + b) / 2.0, (b - a).powi(2) / 12.0)),
            Initial::List(_) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DutyProtocol {
    Ioc,
    Doc,
    Rabi,
}

fn all_protocols() -> Vec<DutyProtocol> {
    vec![DutyProtocol::Ioc, DutyProtocol::Doc, DutyProtocol::Rabi]
}

/// The `[experiment]` table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ExperimentSpec {
    IocSingle {
        ioc: IocConfig,
        #[serde(default)]
        initial: Initial,
        #[serde(default = "one")]
        alpha: f64,
        /// Idle shots after every calibration shot.
        #[serde(default)]
        idle_per_shot: u64,
    },
    IocBatched {
        ioc: IocConfig,
        n_batch: usize,
        #[serde(default)]
        initial: Initial,
        #[serde(default = "one")]
        alpha: f64,
    },
    IocMultiGxgy {
        g: f64,
        repetitions: u32,
        #[serde(default)]
        alternation: bool,
        #[serde(default)]
        initial: Initial,
    },
    IocMultiCz {
        g: f64,
        repetitions: u32,
        #[serde(default)]
        alternation: bool,
        #[serde(default)]
        initial: Initial,
    },
    DocSingle {
        doc: DocConfig,
        #[serde(default)]
        initial: Initial,
        #[serde(default = "one")]
        alpha: f64,
        #[serde(default)]
        idle_per_shot: u64,
    },
    #[serde(rename = "qec_513")]
    Qec513 {
        #[serde(default)]
        qec: QecConfig,
        #[serde(default)]
        initial: Initial,
    },
    Rabi {
        #[serde(default)]
        rabi: RabiConfig,
        #[serde(default)]
        initial: Initial,
        #[serde(default = "one")]
        alpha: f64,
    },
    /// IOC, DOC and Rabi at each duty cycle; IOC uses g = √(T_e+1)·ℓ·r.
    CompareDutyCycle {
        duty_cycles: Vec<f64>,
        ell: f64,
        #[serde(default = "default_ioc_r")]
        ioc_r: u32,
        #[serde(default = "default_doc_r")]
        doc_r: u32,
        #[serde(default)]
        rabi: RabiConfig,
        #[serde(default = "all_protocols")]
        protocols: Vec<DutyProtocol>,
        #[serde(default)]
        initial: Initial,
    },
    /// Closed-form predictions only; no trajectories are simulated.
    AnalyticsCheck {
        g_grid: Vec<f64>,
        r: u32,
        #[serde(default = "one")]
        alpha: f64,
        #[serde(default)]
        ell: f64,
        #[serde(default)]
        mu0: f64,
        #[serde(default)]
        sigma0_sq: f64,
    },
}

impl ExperimentSpec {
    pub const KINDS: [&'static str; 9] = [
        "ioc_single",
        "ioc_multi_gxgy",
        "ioc_multi_cz",
        "ioc_batched",
        "doc_single",
        "qec_513",
        "rabi",
        "compare_duty_cycle",
        "analytics_check",
    ];

    pub fn kind(&self) -> &'static str {
        match self {
            ExperimentSpec::IocSingle { .. } => "ioc_single",
            ExperimentSpec::IocBatched { .. } => "ioc_batched",
            ExperimentSpec::IocMultiGxgy { .. } => "ioc_multi_gxgy",
            ExperimentSpec::IocMultiCz { .. } => "ioc_multi_cz",
            ExperimentSpec::DocSingle { .. } => "doc_single",
            ExperimentSpec::Qec513 { .. } => "qec_513",
            ExperimentSpec::Rabi { .. } => "rabi",
            ExperimentSpec::CompareDutyCycle { .. } => "compare_duty_cycle",
            ExperimentSpec::AnalyticsCheck { .. } => "analytics_check",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Variant {
    pub label: String,
    #[serde(default)]
    pub experiment: toml::Table,
    #[serde(default)]
    pub noise: Option<NoiseModel>,
    #[serde(default)]
    pub drift: Option<DriftSpec>,
}

fn default_stride() -> u64 {
    1
}

fn default_true() -> bool {
    true
}

fn default_tail() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    /// Log every `stride`-th shot (plus t = 0).
    #[serde(default = "default_stride")]
    pub stride: u64,
    #[serde(default = "default_true")]
    pub log_trajectories: bool,
    /// Fraction of the run, counted from the end, used for stationary statistics.
    #[serde(default = "default_tail")]
    pub tail_fraction: f64,
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self { stride: 1, log_trajectories: true, tail_fraction: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ScaleSpec {
    pub trajectories: Option<usize>,
    pub shots: Option<u64>,
    pub stride: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub figure: String,
    pub seed: u64,
    #[serde(default = "one_usize")]
    pub trajectories: usize,
    pub shots: u64,
    #[serde(default)]
    pub noise: NoiseModel,
    #[serde(default)]
    pub drift: DriftSpec,
    #[serde(default)]
    pub output: OutputSpec,
    pub experiment: toml::Table,
    #[serde(default)]
    pub variants: Vec<Variant>,
    #[serde(default)]
    pub full_scale: Option<ScaleSpec>,
    /// Arms reuse trajectory k's random stream, so variants are compared on
    /// the same drift and shot-noise draws where their consumption agrees.
    #[serde(default = "default_true")]
    pub common_random_numbers: bool,
}

/// Prefix the field path of a configuration error.
fn scoped<T>(prefix: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::InvalidConfig { field, reason } => Error::InvalidConfig { field: format!("{prefix}.{field}"), reason },
        other => other,
    })
}

/// Deep merge; a table whose `kind` changes is replaced outright.
fn merge(base: &mut toml::Table, over: &toml::Table) {
    for (k, v) in over {
        match (base.get_mut(k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) if o.get("kind").is_none_or(|k| b.get("kind") == Some(k)) => {
                merge(b, o)
            }
            _ => {
                base.insert(k.clone(), v.clone());
            }
        }
    }
}

fn parse_experiment(table: toml::Table, field: &str) -> Result<ExperimentSpec> {
    toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| Error::config(field, e.message().to_string()))
}

/// Engine for one arm.
#[derive(Debug, Clone, PartialEq)]
pub enum Protocol {
    IocSingle { ioc: IocConfig, alpha: f64, idle_per_shot: u64 },
    IocBatched { ioc: IocConfig, alpha: f64, n_batch: usize },
    IocMulti { circuits: Vec<Circuit>, g: f64, alternation: bool },
    Doc { doc: DocConfig, alpha: f64, idle_per_shot: u64 },
    Qec { qec: QecConfig },
    Rabi { rabi: RabiConfig, alpha: f64 },
}

impl Protocol {
    pub fn n_params(&self) -> usize {
        match self {
            Protocol::IocMulti { circuits, .. } => circuits.iter().map(Circuit::n_params).max().unwrap_or(0),
            Protocol::Qec { .. } => IDLE_PARAMS,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Arm {
    pub label: String,
    pub protocol: Protocol,
    pub initial: Initial,
    pub noise: NoiseModel,
    pub drift: DriftSpec,
}

/// A validated, fully expanded experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct Plan {
    pub name: String,
    pub description: String,
    pub figure: String,
    pub kind: &'static str,
    pub seed: u64,
    pub trajectories: usize,
    pub shots: u64,
    pub output: OutputSpec,
    pub common_random_numbers: bool,
    pub arms: Vec<Arm>,
    /// Present for `analytics_check`.
    pub analytics: Option<ExperimentSpec>,
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        Ok(toml::from_str(s)?)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::from_toml_str(&fs::read_to_string(path)?)
    }

    /// Validate and expand into arms. `full_scale` applies the config's
    /// full-scale budget override.
    pub fn plan(&self, full_scale: bool) -> Result<Plan> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::config(
                "schema_version",
                format!("unsupported version {}, expected {SCHEMA_VERSION}", self.schema_version),
            ));
        }
        if self.name.trim().is_empty() {
            return Err(Error::config("name", "must not be empty"));
        }
        let mut trajectories = self.trajectories;
        let mut shots = self.shots;
        let mut output = self.output.clone();
        if full_scale {
            if let Some(s) = &self.full_scale {
                trajectories = s.trajectories.unwrap_or(trajectories);
                shots = s.shots.unwrap_or(shots);
                output.stride = s.stride.unwrap_or(output.stride);
            }
        }
        if trajectories == 0 {
            return Err(Error::config("trajectories", "must be >= 1"));
        }
        if shots == 0 {
            return Err(Error::config("shots", "must be >= 1"));
        }
        if output.stride == 0 {
            return Err(Error::config("output.stride", "must be >= 1"));
        }
        if !(output.tail_fraction > 0.0 && output.tail_fraction <= 1.0) {
            return Err(Error::config("output.tail_fraction", "must lie in (0, 1]"));
        }
        self.noise.validate()?;
        self.drift.validate()?;

        let base = parse_experiment(self.experiment.clone(), "experiment")?;
        let kind = base.kind();
        let mut specs = Vec::new();
        if self.variants.is_empty() {
            specs.push((String::new(), base.clone(), self.noise, self.drift.clone(), "experiment".to_string()));
        } else {
            for (i, v) in self.variants.iter().enumerate() {
                let path = format!("variants[{i}]");
                let mut table = self.experiment.clone();
                merge(&mut table, &v.experiment);
                let spec = parse_experiment(table, &format!("{path}.experiment"))?;
                if spec.kind() != kind {
                    return Err(Error::config(format!("{path}.experiment.kind"), "variants cannot change the experiment kind"));
                }
                let noise = v.noise.unwrap_or(self.noise);
                scoped(&path, noise.validate())?;
                let drift = v.drift.clone().unwrap_or_else(|| self.drift.clone());
                drift.validate_at(&format!("{path}.drift"))?;
                specs.push((v.label.clone(), spec, noise, drift, format!("{path}.experiment")));
            }
        }

        let mut arms = Vec::new();
        let mut analytics = None;
        for (label, spec, noise, drift, path) in specs {
            scoped(&path, expand(&label, &spec, noise, &drift, &mut arms))?;
            if let ExperimentSpec::AnalyticsCheck { .. } = spec {
                analytics = Some(spec);
            }
        }
        Ok(Plan {
            name: self.name.clone(),
            description: self.description.clone(),
            figure: self.figure.clone(),
            kind,
            seed: self.seed,
            trajectories,
            shots,
            output,
            common_random_numbers: self.common_random_numbers,
            arms,
            analytics,
        })
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha == 0.0 || !alpha.is_finite() {
        return Err(Error::config("alpha", "must be finite and nonzero"));
    }
    Ok(())
}

fn label_or(label: &str, fallback: &str) -> String {
    if label.is_empty() {
        fallback.to_string()
    } else {
        label.to_string()
    }
}

fn expand(label: &str, spec: &ExperimentSpec, noise: NoiseModel, drift: &DriftSpec, arms: &mut Vec<Arm>) -> Result<()> {
    let mut push = |label: String, protocol: Protocol, initial: &Initial| -> Result<()> {
        initial.validate("initial", protocol.n_params())?;
        arms.push(Arm { label, protocol, initial: initial.clone(), noise, drift: drift.clone() });
        Ok(())
    };
    match spec {
        ExperimentSpec::IocSingle { ioc, initial, alpha, idle_per_shot } => {
            ioc.validate()?;
            check_alpha(*alpha)?;
            push(
                label_or(label, "ioc"),
                Protocol::IocSingle { ioc: ioc.clone(), alpha: *alpha, idle_per_shot: *idle_per_shot },
                initial,
            )
        }
        ExperimentSpec::IocBatched { ioc, n_batch, initial, alpha } => {
            ioc.validate()?;
            check_alpha(*alpha)?;
            if *n_batch == 0 {
                return Err(Error::config("n_batch", "must be >= 1"));
            }
            push(
                label_or(label, &format!("batch {n_batch}")),
                Protocol::IocBatched { ioc: ioc.clone(), alpha: *alpha, n_batch: *n_batch },
                initial,
            )
        }
        ExperimentSpec::IocMultiGxgy { g, repetitions, alternation, initial }
        | ExperimentSpec::IocMultiCz { g, repetitions, alternation, initial } => {
            if !(0.0..0.5).contains(g) {
                return Err(Error::config("g", format!("gain must lie in [0, 1/2), got {g}")));
            }
            if *repetitions == 0 {
                return Err(Error::config("repetitions", "must be >= 1"));
            }
            let circuits = if matches!(spec, ExperimentSpec::IocMultiCz { .. }) {
                vec![cz_c1(*repetitions), cz_c2(*repetitions)]
            } else {
                vec![gxgy_c1(*repetitions), gxgy_c2(*repetitions)]
            };
            push(
                label_or(label, spec.kind()),
                Protocol::IocMulti { circuits, g: *g, alternation: *alternation },
                initial,
            )
        }
        ExperimentSpec::DocSingle { doc, initial, alpha, idle_per_shot } => {
            doc.validate()?;
            check_alpha(*alpha)?;
            push(
                label_or(label, "doc"),
                Protocol::Doc { doc: doc.clone(), alpha: *alpha, idle_per_shot: *idle_per_shot },
                initial,
            )
        }
        ExperimentSpec::Qec513 { qec, initial } => {
            if qec.n == 0 {
                return Err(Error::config("qec.n", "must be >= 1"));
            }
            push(label_or(label, "qec"), Protocol::Qec { qec: qec.clone() }, initial)
        }
        ExperimentSpec::Rabi { rabi, initial, alpha } => {
            rabi.validate()?;
            check_alpha(*alpha)?;
            push(label_or(label, "rabi"), Protocol::Rabi { rabi: rabi.clone(), alpha: *alpha }, initial)
        }
        ExperimentSpec::CompareDutyCycle { duty_cycles, ell, ioc_r, doc_r, rabi, protocols, initial } => {
            if duty_cycles.is_empty() {
                return Err(Error::config("duty_cycles", "must not be empty"));
            }
            if !(*ell >= 0.0 && ell.is_finite()) {
                return Err(Error::config("ell", "must be finite and >= 0"));
            }
            if protocols.is_empty() {
                return Err(Error::config("protocols", "must not be empty"));
            }
            for (i, &d) in duty_cycles.iter().enumerate() {
                if !(d > 0.0 && d <= 1.0) {
                    return Err(Error::config(format!("duty_cycles[{i}]"), "must lie in (0, 1]"));
                }
                let idle = analytics::idle_shots_per_calibration_shot(d);
                let prefix = if label.is_empty() { String::new() } else { format!("{label} ") };
                for p in protocols {
                    match p {
                        DutyProtocol::Ioc => {
                            let g = ((idle + 1) as f64).sqrt() * ell * f64::from(*ioc_r);
                            let mut ioc = IocConfig::fixed(g.min(crate::ioc::G_MAX), *ioc_r);
                            ioc.r_cap = ioc.r_cap.max(*ioc_r);
                            ioc.validate()?;
                            push(
                                format!("{prefix}ioc D={d}"),
                                Protocol::IocSingle { ioc, alpha: 1.0, idle_per_shot: idle },
                                initial,
                            )?;
                        }
                        DutyProtocol::Doc => {
                            let doc = DocConfig::fixed(*doc_r);
                            doc.validate()?;
                            push(
                                format!("{prefix}doc D={d}"),
                                Protocol::Doc { doc, alpha: 1.0, idle_per_shot: idle },
                                initial,
                            )?;
                        }
                        DutyProtocol::Rabi => {
                            let rabi = RabiConfig { duty_cycle: d, ..rabi.clone() };
                            rabi.validate()?;
                            push(format!("{prefix}rabi D={d}"), Protocol::Rabi { rabi, alpha: 1.0 }, initial)?;
                        }
                    }
                }
            }
            Ok(())
        }
        ExperimentSpec::AnalyticsCheck { g_grid, r, alpha, ell, sigma0_sq, .. } => {
            if g_grid.is_empty() {
                return Err(Error::config("g_grid", "must not be empty"));
            }
            for (i, g) in g_grid.iter().enumerate() {
                if !(0.0..0.5).contains(g) {
                    return Err(Error::config(format!("g_grid[{i}]"), "gain must lie in [0, 1/2)"));
                }
            }
            if *r == 0 {
                return Err(Error::config("r", "must be >= 1"));
            }
            check_alpha(*alpha)?;
            if *ell < 0.0 || *sigma0_sq < 0.0 {
                return Err(Error::config("ell", "ell and sigma0_sq must be >= 0"));
            }
            Ok(())
        }
    }
}

/// Per-trajectory outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryOutcome {
    pub record: TrajectoryRecord,
    /// Mean per-shot infidelity over every shot of the run.
    pub experiment_mean_infidelity: f64,
    pub counts: Counts,
    pub final_g: f64,
    pub final_r: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct Counts {
    pub updates: u64,
    pub aborts: u64,
    pub jumps: u64,
    pub skipped: u64,
    pub hyper_changes: u64,
    pub idle: u64,
    /// Nontrivial syndromes (QEC) or failures (DOC).
    pub detections: u64,
}

impl Counts {
    fn add(&mut self, ev: u8) {
        self.updates += u64::from(ev & events::UPDATE != 0);
        self.aborts += u64::from(ev & events::ABORT != 0);
        self.jumps += u64::from(ev & events::JUMP != 0);
        self.skipped += u64::from(ev & events::SKIPPED != 0);
        self.hyper_changes += u64::from(ev & events::HYPER_CHANGE != 0);
        self.idle += u64::from(ev & events::IDLE != 0);
    }

    fn merge(&mut self, o: &Counts) {
        self.updates += o.updates;
        self.aborts += o.aborts;
        self.jumps += o.jumps;
        self.skipped += o.skipped;
        self.hyper_changes += o.hyper_changes;
        self.idle += o.idle;
        self.detections += o.detections;
    }
}

struct Logger {
    stride: u64,
    record: TrajectoryRecord,
    pending: u8,
    inf_sum: f64,
    shots: u64,
    counts: Counts,
}

impl Logger {
    fn new(n_params: usize, stride: u64) -> Self {
        Self { stride, record: TrajectoryRecord::new(n_params), pending: 0, inf_sum: 0.0, shots: 0, counts: Counts::default() }
    }

    fn initial(&mut self, p: &ControlParameterSet, g: f64, r: u32, inf: f64) {
        self.push(0, p, 0, g, r, inf, 0);
    }

    #[allow(clippy::too_many_arguments)]
    fn push(&mut self, t: u64, p: &ControlParameterSet, outcome: i64, g: f64, r: u32, inf: f64, ev: u8) {
        self.record.push(analytics::RowRef { t, eta: &p.eta, eta_opt: &p.eta_opt, outcome, g, r, infidelity: inf, events: ev });
    }

    #[allow(clippy::too_many_arguments)]
    fn shot(&mut self, t: u64, p: &ControlParameterSet, outcome: i64, g: f64, r: u32, inf: f64, ev: u8) {
        self.inf_sum += inf;
        self.shots += 1;
        self.counts.add(ev);
        self.pending |= ev;
        if t.is_multiple_of(self.stride) {
            let ev = std::mem::take(&mut self.pending);
            self.push(t, p, outcome, g, r, inf, ev);
        }
    }

    fn finish(self, g: f64, r: u32) -> TrajectoryOutcome {
        TrajectoryOutcome {
            experiment_mean_infidelity: if self.shots == 0 { 0.0 } else { self.inf_sum / self.shots as f64 },
            record: self.record,
            counts: self.counts,
            final_g: g,
            final_r: r,
        }
    }
}

fn single_params(initial: f64, alpha: f64) -> Result<ControlParameterSet> {
    ControlParameterSet::new(vec![initial], vec![0.0], vec![alpha])
}

/// Calibrated gates of the circuits, deduplicated, paired with their ideal unitaries.
fn calibrated_gates(circuits: &[Circuit]) -> Vec<Gate> {
    let mut out: Vec<Gate> = Vec::new();
    for c in circuits {
        for g in c.prefix.iter().chain(&c.body).chain(&c.suffix) {
            if g.is_calibrated() && !out.contains(g) {
                out.push(g.clone());
            }
        }
    }
    out
}

fn mean_gate_infidelity(gates: &[Gate], deltas: &[f64], p: f64) -> Result<f64> {
    let zeros = vec![0.0; deltas.len()];
    let mut acc = 0.0;
    for g in gates {
        acc += depolarized_unitary_infidelity(&g.unitary(deltas), &g.unitary(&zeros), p)?;
    }
    Ok(acc / gates.len().max(1) as f64)
}

#[allow(clippy::too_many_arguments)]
fn idle_loop<R: Rng + ?Sized>(
    n: u64,
    t: &mut u64,
    shots: u64,
    params: &mut ControlParameterSet,
    drift: &mut DriftProcess,
    log: &mut Logger,
    g: f64,
    r: u32,
    p: f64,
    rng: &mut R,
) {
    for _ in 0..n {
        if *t >= shots {
            break;
        }
        let jumped = drift.step(&mut params.eta_opt, rng);
        *t += 1;
        let ev = events::IDLE | if jumped { events::JUMP } else { 0 };
        log.shot(*t, params, 0, g, r, gx_process_infidelity(params.delta(0), p), ev);
    }
}

/// Run one trajectory of `arm` for `shots` shots.
pub fn run_trajectory<R: Rng + ?Sized>(arm: &Arm, shots: u64, stride: u64, rng: &mut R) -> Result<TrajectoryOutcome> {
    let n = arm.protocol.n_params();
    let init = arm.initial.sample(n, rng);
    let mut drift = DriftProcess::new(&arm.drift, vec![0.0; n])?;
    let noise = arm.noise;
    let mut log = Logger::new(n, stride);
    let mut t = 0u64;
    match &arm.protocol {
        Protocol::IocSingle { ioc, alpha, idle_per_shot } => {
            let mut e = IocSingle::new(ioc, single_params(init[0], *alpha)?, noise)?;
            log.initial(&e.params, e.g, e.r, gx_process_infidelity(e.params.delta(0), noise.p));
            while t < shots {
                let info = e.step(&mut drift, rng)?;
                t += 1;
                log.shot(t, &e.params, i64::from(info.z), e.g, e.r, gx_process_infidelity(info.delta, noise.p), info.events);
                let (g, r) = (e.g, e.r);
                idle_loop(*idle_per_shot, &mut t, shots, &mut e.params, &mut drift, &mut log, g, r, noise.p, rng);
            }
            Ok(log.finish(e.g, e.r))
        }
        Protocol::IocBatched { ioc, alpha, n_batch } => {
            let mut e = IocSingle::new(ioc, single_params(init[0], *alpha)?, noise)?;
            log.initial(&e.params, e.g, e.r, gx_process_infidelity(e.params.delta(0), noise.p));
            while t < shots {
                let batch = (*n_batch as u64).min(shots - t) as usize;
                for info in e.step_batched(batch, &mut drift, rng)? {
                    t += 1;
                    log.shot(t, &e.params, i64::from(info.z), e.g, e.r, gx_process_infidelity(info.delta, noise.p), info.events);
                }
            }
            Ok(log.finish(e.g, e.r))
        }
        Protocol::IocMulti { circuits, g, alternation } => {
            let params = ControlParameterSet::with_offsets(&init);
            let gates = calibrated_gates(circuits);
            let r = circuits.first().map_or(0, |c| c.repetitions);
            let mut e = IocMulti::new(circuits, *g, *alternation, params, noise)?;
            log.initial(&e.params, e.g, r, mean_gate_infidelity(&gates, &e.params.deltas(), noise.p)?);
            while t < shots {
                let info = e.step(&mut drift, rng)?;
                t += 1;
                let inf = mean_gate_infidelity(&gates, &e.params.deltas(), noise.p)?;
                log.shot(t, &e.params, info.outcome.value() as i64, e.g, r, inf, info.events);
            }
            Ok(log.finish(e.g, r))
        }
        Protocol::Doc { doc, alpha, idle_per_shot } => {
            let mut e = DocEngine::new(doc, single_params(init[0], *alpha)?, noise)?;
            log.initial(&e.params, 0.0, e.r, gx_process_infidelity(e.params.delta(0), noise.p));
            while t < shots {
                let s = e.step(&mut drift, rng)?;
                t += 1;
                log.counts.detections += u64::from(s.failure);
                log.shot(t, &e.params, s.outcome.value() as i64, 0.0, e.r, gx_process_infidelity(s.delta, noise.p), s.events);
                let r = e.r;
                idle_loop(*idle_per_shot, &mut t, shots, &mut e.params, &mut drift, &mut log, 0.0, r, noise.p, rng);
            }
            Ok(log.finish(0.0, e.r))
        }
        Protocol::Qec { qec } => {
            let mut q = QecRealization::new(qec, &arm.drift, &init)?;
            log.initial(&q.params, 0.0, 0, 0.0);
            while t < shots {
                let rec = q.round(rng)?;
                t += 1;
                let ev = if rec.update.is_some() { events::UPDATE } else { 0 };
                log.counts.detections += u64::from(rec.syndrome != 0);
                log.shot(t, &q.params, i64::from(rec.syndrome), 0.0, 0, 1.0 - rec.survival, ev);
            }
            Ok(log.finish(0.0, 0))
        }
        Protocol::Rabi { rabi, alpha } => {
            let mut params = single_params(init[0], *alpha)?;
            log.initial(&params, 0.0, rabi.r, gx_process_infidelity(params.delta(0), noise.p));
            while t < shots {
                let data = collect_rabi_data(&mut params, &noise, &mut drift, rabi, rng, |p| {
                    if t < shots {
                        t += 1;
                        log.shot(t, p, 0, 0.0, rabi.r, gx_process_infidelity(p.delta(0), noise.p), 0);
                    }
                })?;
                let fit = fit_rabi(&data, rabi)?;
                if fit.usable() {
                    apply_rabi_correction(&mut params, &fit);
                    log.pending |= events::UPDATE;
                    log.counts.updates += 1;
                } else {
                    log.pending |= events::SKIPPED;
                    log.counts.skipped += 1;
                }
                idle_loop(rabi.idle_shots(), &mut t, shots, &mut params, &mut drift, &mut log, 0.0, rabi.r, noise.p, rng);
            }
            Ok(log.finish(0.0, rabi.r))
        }
    }
}

/// Options that override the config at run time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub full_scale: bool,
}

/// Everything produced by a run, held in memory until written.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub summary: serde_json::Value,
    pub csv: Option<Vec<u8>>,
    pub digest: String,
    pub arms: Vec<ArmResult>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArmResult {
    pub label: String,
    pub trajectories: Vec<TrajectoryOutcome>,
}

/// Run all arms of a plan. Trajectory k of arm a uses stream (seed, a, k),
/// or (seed, 0, k) with common random numbers, so results do not depend on
/// the worker count.
pub fn run_plan(plan: &Plan, seed: u64) -> Result<Vec<ArmResult>> {
    let n = u32::try_from(plan.trajectories).map_err(|_| Error::config("trajectories", "too many"))?;
    plan.arms
        .iter()
        .enumerate()
        .map(|(a, arm)| {
            let trajectories = (0..n)
                .into_par_iter()
                .map(|k| {
                    let stream = if plan.common_random_numbers { 0 } else { a as u32 };
                    let mut rng = RngStream::child(seed, stream, k);
                    run_trajectory(arm, plan.shots, plan.output.stride, &mut rng)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(ArmResult { label: arm.label.clone(), trajectories })
        })
        .collect()
}

fn tail_stats(outcomes: &[TrajectoryOutcome], from_t: u64) -> (Vec<f64>, Vec<f64>, f64, f64) {
    let n_params = outcomes[0].record.n_params;
    let mut abs = vec![Vec::new(); n_params];
    let mut raw = vec![Vec::new(); n_params];
    let mut inf = Vec::new();
    let mut g = Vec::new();
    for o in outcomes {
        let rec = &o.record;
        for i in 0..rec.len() {
            if rec.t[i] < from_t || rec.t[i] == 0 {
                continue;
            }
            for p in 0..n_params {
                let d = rec.delta_eta(i, p);
                abs[p].push(d.abs());
                raw[p].push(d);
            }
            inf.push(rec.infidelity[i]);
            g.push(rec.g[i]);
        }
    }
    (
        abs.iter().map(|v| analytics::mean(v)).collect(),
        raw.iter().map(|v| analytics::sample_variance(v)).collect(),
        analytics::mean(&inf),
        analytics::mean(&g),
    )
}

fn predictions(arm: &Arm, t: &[u64]) -> Option<serde_json::Value> {
    let Protocol::IocSingle { ioc, alpha, idle_per_shot: 0 } = &arm.protocol else {
        return None;
    };
    if ioc.scheduler != SchedulerSpec::Static {
        return None;
    }
    let (mu0, var0) = arm.initial.moments()?;
    let ell = match arm.drift {
        DriftSpec::None => 0.0,
        DriftSpec::RandomWalk { step } => step,
        _ => return None,
    };
    let s = alpha.abs() * f64::from(ioc.r) / 2.0;
    let model = VarianceModel { sigma0_sq: var0, mu0, g: ioc.g, s, ell };
    Some(json!({
        "mean": t.iter().map(|&t| predict_mean(mu0, ioc.g, t)).collect::<Vec<_>>(),
        "variance": t.iter().map(|&t| model.recursion(t)).collect::<Vec<_>>(),
        "stationary_variance": model.stationary(),
    }))
}

fn arm_summary(arm: &Arm, res: &ArmResult, plan: &Plan) -> Result<serde_json::Value> {
    let records: Vec<TrajectoryRecord> = res.trajectories.iter().map(|o| o.record.clone()).collect();
    let s = summarize(&records)?;
    let col = |v: &[analytics::PointStats], f: fn(&analytics::PointStats) -> f64| v.iter().map(f).collect::<Vec<_>>();
    let experiment: Vec<f64> = res.trajectories.iter().map(|o| o.experiment_mean_infidelity).collect();
    let (q1, q3) = analytics::iqr(&experiment);
    let from_t = ((1.0 - plan.output.tail_fraction) * plan.shots as f64).floor() as u64;
    let (tail_abs, tail_var, tail_inf, tail_g) = tail_stats(&res.trajectories, from_t);
    let mut counts = Counts::default();
    for o in &res.trajectories {
        counts.merge(&o.counts);
    }
    let finals: Vec<f64> = res.trajectories.iter().map(|o| o.final_g).collect();
    let final_r: Vec<f64> = res.trajectories.iter().map(|o| f64::from(o.final_r)).collect();
    let last_abs: Vec<f64> = s.abs_delta_eta.iter().map(|c| c.last().map_or(0.0, |p| p.mean)).collect();
    let mut v = json!({
        "label": arm.label,
        "trajectories": s.trajectories,
        "t": s.t,
        "mean_delta_eta": s.delta_eta.iter().map(|c| col(c, |p| p.mean)).collect::<Vec<_>>(),
        "sd_delta_eta": s.delta_eta.iter().map(|c| col(c, |p| p.sd)).collect::<Vec<_>>(),
        "sem_delta_eta": s.delta_eta.iter().map(|c| col(c, |p| p.sem)).collect::<Vec<_>>(),
        "mean_abs_delta_eta": s.abs_delta_eta.iter().map(|c| col(c, |p| p.mean)).collect::<Vec<_>>(),
        "mean_infidelity": col(&s.infidelity, |p| p.mean),
        "sem_infidelity": col(&s.infidelity, |p| p.sem),
        "mean_g": col(&s.g, |p| p.mean),
        "mean_r": col(&s.r, |p| p.mean),
        "final_mean_abs_delta_eta": last_abs,
        "final_mean_g": analytics::mean(&finals),
        "final_mean_r": analytics::mean(&final_r),
        "stationary": {
            "from_t": from_t,
            "mean_abs_delta_eta": tail_abs,
            "variance_delta_eta": tail_var,
            "mean_infidelity": tail_inf,
            "mean_g": tail_g,
        },
        "experiment_mean_infidelity": experiment,
        "median_experiment_infidelity": analytics::median(&experiment),
        "iqr_experiment_infidelity": [q1, q3],
        "counts": counts,
    });
    if let Some(p) = predictions(arm, &s.t) {
        v["prediction"] = p;
    }
    if matches!(arm.protocol, Protocol::Qec { .. }) {
        v["mean_survival"] = json!(col(&s.infidelity, |p| 1.0 - p.mean));
    }
    Ok(v)
}

fn analytics_summary(spec: &ExperimentSpec, shots: u64, stride: u64) -> serde_json::Value {
    let ExperimentSpec::AnalyticsCheck { g_grid, r, alpha, ell, mu0, sigma0_sq } = spec else {
        return serde_json::Value::Null;
    };
    let s = alpha.abs() * f64::from(*r) / 2.0;
    let t: Vec<u64> = (0..=shots).filter(|t| t % stride == 0).collect();
    let (g_opt, v_min) = analytics::optimal_gain(*ell, s);
    let curves: Vec<serde_json::Value> = g_grid
        .iter()
        .map(|&g| {
            let m = VarianceModel { sigma0_sq: *sigma0_sq, mu0: *mu0, g, s, ell: *ell };
            json!({
                "g": g,
                "stationary_variance": m.stationary(),
                "mean": t.iter().map(|&t| predict_mean(*mu0, g, t)).collect::<Vec<_>>(),
                "mean_continuous": t.iter().map(|&t| analytics::predict_mean_continuous(*mu0, g, t as f64)).collect::<Vec<_>>(),
                "variance_recursion": t.iter().map(|&t| m.recursion(t)).collect::<Vec<_>>(),
                "variance_closed_form": t.iter().map(|&t| m.closed_form(t)).collect::<Vec<_>>(),
                "variance_continuous": t.iter().map(|&t| m.continuous(t as f64)).collect::<Vec<_>>(),
            })
        })
        .collect();
    json!({ "s": s, "t": t, "optimal_gain": g_opt, "minimum_stationary_variance": v_min, "curves": curves })
}

fn write_csv(plan: &Plan, results: &[ArmResult]) -> Result<Vec<u8>> {
    let width = plan.arms.iter().map(|a| a.protocol.n_params()).max().unwrap_or(1);
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> =
        ["arm", "trajectory", "t", "outcome", "g", "r", "infidelity", "events"].iter().map(|s| s.to_string()).collect();
    for prefix in ["delta_eta", "eta", "eta_opt"] {
        header.extend((0..width).map(|i| format!("{prefix}_{i}")));
    }
    w.write_record(&header)?;
    for res in results {
        for (k, o) in res.trajectories.iter().enumerate() {
            let rec = &o.record;
            for i in 0..rec.len() {
                let mut row = vec![
                    res.label.clone(),
                    k.to_string(),
                    rec.t[i].to_string(),
                    rec.outcome[i].to_string(),
                    rec.g[i].to_string(),
                    rec.r[i].to_string(),
                    rec.infidelity[i].to_string(),
                    rec.events[i].to_string(),
                ];
                let pad = |row: &mut Vec<String>, f: &dyn Fn(usize) -> f64| {
                    for p in 0..width {
                        row.push(if p < rec.n_params { f(p).to_string() } else { String::new() });
                    }
                };
                pad(&mut row, &|p| rec.delta_eta(i, p));
                pad(&mut row, &|p| rec.eta(i, p));
                pad(&mut row, &|p| rec.eta_opt(i, p));
                w.write_record(&row)?;
            }
        }
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

/// Validate, simulate and assemble outputs in memory.
pub fn execute(config: &ExperimentConfig, opts: RunOptions) -> Result<RunOutput> {
    let plan = config.plan(opts.full_scale)?;
    let seed = opts.seed.unwrap_or(plan.seed);
    let results = match opts.workers {
        Some(0) => return Err(Error::config("workers", "must be >= 1")),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::config("workers", e.to_string()))?
            .install(|| run_plan(&plan, seed))?,
        None => run_plan(&plan, seed)?,
    };
    let mut arms = Vec::new();
    let mut digest = Vec::new();
    for (arm, res) in plan.arms.iter().zip(&results) {
        let v = arm_summary(arm, res, &plan)?;
        let final_abs: Vec<f64> = serde_json::from_value(v["final_mean_abs_delta_eta"].clone()).unwrap_or_default();
        digest.push(format!(
            "{}: median_infidelity={:.4e} final_mean_abs_delta_eta={:.4e}",
            arm.label,
            v["median_experiment_infidelity"].as_f64().unwrap_or(f64::NAN),
            analytics::mean(&final_abs),
        ));
        arms.push(v);
    }
    let mut summary = json!({
        "schema_version": SCHEMA_VERSION,
        "name": plan.name,
        "description": plan.description,
        "figure": plan.figure,
        "kind": plan.kind,
        "seed": seed,
        "trajectories": plan.trajectories,
        "shots": plan.shots,
        "stride": plan.output.stride,
        "arms": arms,
    });
    if let Some(spec) = &plan.analytics {
        summary["predictions"] = analytics_summary(spec, plan.shots, plan.output.stride);
        digest.push("closed-form predictions written".to_string());
    }
    let csv = if plan.output.log_trajectories && !plan.arms.is_empty() {
        Some(write_csv(&plan, &results)?)
    } else {
        None
    };
    Ok(RunOutput { summary, csv, digest: format!("{} [{}] {}", plan.name, plan.kind, digest.join("; ")), arms: results })
}

/// Write outputs into `dir` via temporary files renamed into place, so a
/// failed run leaves no partial files behind.
pub fn write_outputs(dir: &Path, out: &RunOutput) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut staged = Vec::new();
    let mut stage = |name: &str, bytes: &[u8]| -> Result<()> {
        let tmp = dir.join(format!(".{name}.partial"));
        fs::write(&tmp, bytes)?;
        staged.push((tmp, dir.join(name)));
        Ok(())
    };
    let result = (|| -> Result<()> {
        stage(SUMMARY_FILE, serde_json::to_string_pretty(&out.summary)?.as_bytes())?;
        if let Some(csv) = &out.csv {
            stage(TRAJECTORIES_FILE, csv)?;
        }
        Ok(())
    })();
    if let Err(e) = result {
        for (tmp, _) in &staged {
            let _ = fs::remove_file(tmp);
        }
        return Err(e);
    }
    let mut written = Vec::new();
    for (tmp, dst) in staged {
        fs::rename(&tmp, &dst)?;
        written.push(dst);
    }
    Ok(written)
}
