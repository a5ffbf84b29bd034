//! Scenario files: parsing and validation, orchestration of the analyses,
//! and the run report.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::coefficients::{AuditConfig, AuditReport, CoefficientField};
use crate::constants::{contraction_constants, ContractionReport, Thresholds};
use crate::ensemble::{euler_maruyama_ensemble, ForwardSpec, InitialLaw, StochasticEnsemble};
use crate::error::{Error, Result};
use crate::fixedpoint::{semilinear_comparability_probe, solve_bounded_solution, FixedPointTrace, SolveOptions};
use crate::green::{ProbeReport, ProbeSetup};
use crate::grid::UniformGrid;
use crate::path::Signal;
use crate::presets::{custom_galerkin, custom_scalar, example1, example2, CustomField, PresetSystem};
use crate::recurrence::{coefficient_distance, scan_almost_periods, AlmostPeriodReport, CoreSampling};
use crate::rng::derive_seed;
use crate::stability::{bounded_solution_convergence_check, convergence_check, dissipativity_check, BoundCheckReport};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OperatorConfig {
    Scalar {
        nu: f64,
    },
    Galerkin {
        n_modes: usize,
        /// Collocation points; default `4 n_modes`.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        physical_points: Option<usize>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "snake_case")]
pub enum CoefficientsConfig {
    Example1,
    Example2,
    Custom { drift: CustomField, diffusion: CustomField },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(default)]
    pub t0: f64,
    pub h: f64,
    pub horizon: f64,
}

impl GridConfig {
    pub fn grid(&self) -> Result<UniformGrid> {
        UniformGrid::new(self.t0, self.h, (self.horizon / self.h).round() as usize + 1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleConfig {
    pub n_paths: usize,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Analysis {
    RecurrenceScan,
    Solve,
    Dissipativity,
    Convergence,
    Comparability,
}

impl Analysis {
    pub fn name(self) -> &'static str {
        match self {
            Self::RecurrenceScan => "recurrence_scan",
            Self::Solve => "solve",
            Self::Dissipativity => "dissipativity",
            Self::Convergence => "convergence",
            Self::Comparability => "comparability",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
}

fn default_dir() -> String {
    "out".into()
}

fn default_formats() -> Vec<Format> {
    vec![Format::Json, Format::Csv]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputsConfig {
    #[serde(default = "default_dir")]
    pub dir: String,
    #[serde(default = "default_formats")]
    pub formats: Vec<Format>,
}

impl Default for OutputsConfig {
    fn default() -> Self {
        Self {
            dir: default_dir(),
            formats: default_formats(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveConfig {
    pub tol: Option<f64>,
    pub max_iter: usize,
    pub burn_in: Option<f64>,
    /// Exponent of the reported `theta_p`.
    pub p: f64,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self {
            tol: None,
            max_iter: 100,
            burn_in: None,
            p: 3.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ComparabilityConfig {
    /// Shifts `t_n`; when absent, the shifts found by `recurrence_scan`.
    pub shifts: Option<Vec<f64>>,
    pub max_shifts: usize,
    pub n_paths: Option<usize>,
    pub law_stride: usize,
    pub floor_pairs: usize,
    pub burn_in: Option<f64>,
}

impl Default for ComparabilityConfig {
    fn default() -> Self {
        Self {
            shifts: None,
            max_shifts: 5,
            n_paths: None,
            law_stride: 10,
            floor_pairs: 4,
            burn_in: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecurrenceConfig {
    pub epsilon: f64,
    pub window: [f64; 2],
    pub step: f64,
    pub core_half_width: f64,
    pub core_step: f64,
    /// States at which the time dependence of the coefficients is compared:
    /// `0` and `+-probe_radius/2, +-probe_radius` along each axis.
    pub probe_radius: f64,
    /// Radii of the balls in the coefficient-space distance.
    pub ball_radii: Vec<f64>,
    /// Shifts for which the coefficient distance is reported.
    pub max_reported: usize,
}

impl Default for RecurrenceConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.05,
            window: [1.0, 2.0e5],
            step: 0.005,
            core_half_width: 8.0,
            core_step: 0.05,
            probe_radius: 2.0,
            ball_radii: vec![1.0, 2.0, 4.0],
            max_reported: 10,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptionsConfig {
    pub solve: SolveConfig,
    /// Initial law for the dissipativity run; default per preset.
    pub initial: Option<InitialLaw>,
    /// Initial laws of the coupled convergence run; default per preset.
    pub initial_pair: Option<[InitialLaw; 2]>,
    pub comparability: ComparabilityConfig,
    pub recurrence: RecurrenceConfig,
    pub audit: Option<AuditConfig>,
    /// Skip the global Lipschitz audit for coefficients that are only locally Lipschitz.
    pub allow_locally_lipschitz: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    /// Fixed by the preset when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub operator: Option<OperatorConfig>,
    pub coefficients: CoefficientsConfig,
    pub grid: GridConfig,
    pub ensemble: EnsembleConfig,
    pub analyses: Vec<Analysis>,
    #[serde(default)]
    pub outputs: OutputsConfig,
    #[serde(default)]
    pub options: OptionsConfig,
}

/// One validation problem, anchored at the line of the offending key when it can be found.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationIssue {
    pub line: Option<usize>,
    pub path: String,
    pub message: String,
}

impl fmt::Display for ValidationIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}: {}", self.path, self.message),
            None => write!(f, "{}: {}", self.path, self.message),
        }
    }
}

/// One smallness condition evaluated against the declared constants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdmissibilityCheck {
    pub condition: String,
    pub constant: String,
    pub value: f64,
    pub threshold: f64,
    pub passed: bool,
    /// Requested analyses that need this condition.
    pub required_by: Vec<Analysis>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ValidationOutcome {
    pub valid: bool,
    pub issues: Vec<ValidationIssue>,
    pub checks: Vec<AdmissibilityCheck>,
    #[serde(skip)]
    pub config: Option<ScenarioConfig>,
}

/// 1-based line of the key path, searching each segment after the previous one.
fn line_of(raw: &str, path: &str) -> Option<usize> {
    let mut from = 0;
    for seg in path.split('.') {
        if seg.chars().all(|c| c.is_ascii_digit()) {
            continue;
        }
        let key = format!("\"{seg}\"");
        from += raw[from..].find(&key)?;
    }
    Some(raw[..from].matches('\n').count() + 1)
}

/// Builds the operator and coefficients a config describes.
pub fn build_system(config: &ScenarioConfig) -> Result<PresetSystem> {
    let points = |n: usize, p: Option<usize>| p.unwrap_or(4 * n);
    match (&config.coefficients, &config.operator) {
        (CoefficientsConfig::Example1, None) => example1(),
        (CoefficientsConfig::Example1, Some(OperatorConfig::Scalar { nu })) if *nu == 5.0 => example1(),
        (CoefficientsConfig::Example1, Some(_)) => Err(Error::InvalidArgument(
            "example1 fixes the operator to scalar nu = 5".into(),
        )),
        (CoefficientsConfig::Example2, None) => example2(8, 32),
        (
            CoefficientsConfig::Example2,
            Some(OperatorConfig::Galerkin {
                n_modes,
                physical_points,
            }),
        ) => example2(*n_modes, points(*n_modes, *physical_points)),
        (CoefficientsConfig::Example2, Some(_)) => {
            Err(Error::InvalidArgument("example2 needs a galerkin operator".into()))
        }
        (CoefficientsConfig::Custom { .. }, None) => {
            Err(Error::InvalidArgument("custom coefficients need an operator".into()))
        }
        (CoefficientsConfig::Custom { drift, diffusion }, Some(OperatorConfig::Scalar { nu })) => {
            custom_scalar(*nu, drift, diffusion)
        }
        (
            CoefficientsConfig::Custom { drift, diffusion },
            Some(OperatorConfig::Galerkin {
                n_modes,
                physical_points,
            }),
        ) => custom_galerkin(*n_modes, points(*n_modes, *physical_points), drift, diffusion),
    }
}

/// The five smallness conditions for a system, flagged with the analyses that need them.
pub fn admissibility_checks(system: &PresetSystem, analyses: &[Analysis]) -> Result<Vec<AdmissibilityCheck>> {
    let th = Thresholds::new(system.op.stability_constant(), system.op.stability_rate())?;
    let k = system.declared();
    let needs = |a: &[Analysis]| -> Vec<Analysis> { a.iter().copied().filter(|x| analyses.contains(x)).collect() };
    let check = |condition: &str, constant: &str, value: f64, threshold: f64, by: &[Analysis]| AdmissibilityCheck {
        condition: condition.into(),
        constant: constant.into(),
        value,
        threshold,
        passed: value < threshold,
        required_by: needs(by),
    };
    Ok(vec![
        check(
            "L < nu / (N sqrt(2 + nu))",
            "L",
            k.lipschitz,
            th.solve,
            &[Analysis::Solve, Analysis::Convergence],
        ),
        check(
            "L < nu / (2 N sqrt(1 + nu))",
            "L",
            k.lipschitz,
            th.comparability,
            &[Analysis::Comparability],
        ),
        check("L < nu / (N sqrt(2 (1 + nu)))", "L", k.lipschitz, th.bs, &[]),
        check(
            "M < nu / (N sqrt(6 (nu + 1)))",
            "M",
            k.growth,
            th.dissipativity,
            &[Analysis::Dissipativity],
        ),
        check(
            "L < nu / (N sqrt(3 (nu + 1)))",
            "L",
            k.lipschitz,
            th.convergence,
            &[Analysis::Convergence],
        ),
    ])
}

fn structural_issues(c: &ScenarioConfig) -> Vec<(String, String)> {
    let mut v: Vec<(String, String)> = Vec::new();
    let mut push = |p: &str, m: String| v.push((p.to_string(), m));
    if !(c.grid.h > 0.0 && c.grid.h.is_finite()) {
        push("grid.h", format!("step must be positive, got {}", c.grid.h));
    } else if !(c.grid.horizon >= c.grid.h && c.grid.horizon.is_finite()) {
        push(
            "grid.horizon",
            format!("horizon must be at least one step, got {}", c.grid.horizon),
        );
    }
    if !c.grid.t0.is_finite() {
        push("grid.t0", "t0 must be finite".into());
    }
    if c.ensemble.n_paths < 2 {
        push(
            "ensemble.n_paths",
            format!("need at least 2 paths, got {}", c.ensemble.n_paths),
        );
    }
    if c.analyses.is_empty() {
        push("analyses", "at least one analysis is required".into());
    }
    let mut seen = c.analyses.clone();
    seen.sort();
    if seen.windows(2).any(|w| w[0] == w[1]) {
        push("analyses", "analyses are listed more than once".into());
    }
    if c.outputs.formats.is_empty() {
        push("outputs.formats", "at least one format is required".into());
    }
    match c.operator {
        Some(OperatorConfig::Scalar { nu }) if !(nu > 0.0 && nu.is_finite()) => {
            push("operator.nu", format!("nu must be positive, got {nu}"))
        }
        Some(OperatorConfig::Galerkin {
            n_modes,
            physical_points,
        }) => {
            if n_modes == 0 {
                push("operator.n_modes", "need at least one mode".into());
            }
            if let Some(p) = physical_points {
                if p < n_modes {
                    push(
                        "operator.physical_points",
                        format!("{p} points cannot resolve {n_modes} modes"),
                    );
                }
            }
        }
        _ => {}
    }
    let o = &c.options;
    if !(o.solve.p > 2.0) {
        push("options.solve.p", format!("p must exceed 2, got {}", o.solve.p));
    }
    if o.solve.max_iter == 0 {
        push("options.solve.max_iter", "max_iter must be positive".into());
    }
    if matches!(o.solve.tol, Some(t) if !(t > 0.0)) {
        push("options.solve.tol", "tol must be positive".into());
    }
    for (p, b) in [
        ("options.solve.burn_in", o.solve.burn_in),
        ("options.comparability.burn_in", o.comparability.burn_in),
    ] {
        if matches!(b, Some(b) if !(b > 0.0)) {
            push(p, "burn-in must be positive".into());
        }
    }
    let r = &o.recurrence;
    if !(r.epsilon > 0.0) {
        push("options.recurrence.epsilon", "epsilon must be positive".into());
    }
    if !(r.step > 0.0 && r.core_step > 0.0 && r.core_half_width >= 0.0) {
        push("options.recurrence.step", "scan and core steps must be positive".into());
    }
    if !(r.window[1] >= r.window[0]) {
        push("options.recurrence.window", "scan window is empty".into());
    }
    if r.ball_radii.is_empty() || r.ball_radii[0] < 0.0 || r.ball_radii.windows(2).any(|w| w[1] <= w[0]) {
        push(
            "options.recurrence.ball_radii",
            "radii must be nonempty, nonnegative and increasing".into(),
        );
    }
    let cp = &o.comparability;
    if matches!(cp.n_paths, Some(n) if n < 2) {
        push("options.comparability.n_paths", "need at least 2 paths".into());
    }
    if cp.floor_pairs == 0 {
        push("options.comparability.floor_pairs", "need at least one pair".into());
    }
    if matches!(&cp.shifts, Some(s) if s.is_empty() || s.iter().any(|x| !x.is_finite())) {
        push(
            "options.comparability.shifts",
            "shifts must be a nonempty list of finite numbers".into(),
        );
    }
    if c.analyses.contains(&Analysis::Comparability)
        && cp.shifts.is_none()
        && !c.analyses.contains(&Analysis::RecurrenceScan)
    {
        push(
            "options.comparability.shifts",
            "comparability needs explicit shifts or the recurrence_scan analysis".into(),
        );
    }
    v
}

/// Full structural and admissibility validation of a config text.
pub fn validate_config(raw: &str) -> ValidationOutcome {
    let issue = |path: &str, message: String| ValidationIssue {
        line: line_of(raw, path),
        path: path.into(),
        message,
    };
    let config: ScenarioConfig = match serde_json::from_str(raw) {
        Ok(c) => c,
        Err(e) => {
            return ValidationOutcome {
                valid: false,
                issues: vec![ValidationIssue {
                    line: Some(e.line()),
                    path: "$".into(),
                    message: e.to_string(),
                }],
                checks: vec![],
                config: None,
            }
        }
    };
    let mut issues: Vec<ValidationIssue> = structural_issues(&config)
        .into_iter()
        .map(|(p, m)| issue(&p, m))
        .collect();
    let mut checks = Vec::new();
    match build_system(&config) {
        Err(e) => issues.push(issue("coefficients", e.to_string())),
        Ok(system) => {
            let d = system.dim();
            for (p, law) in [
                ("options.initial", config.options.initial.as_ref()),
                (
                    "options.initial_pair",
                    config.options.initial_pair.as_ref().map(|p| &p[0]),
                ),
                (
                    "options.initial_pair",
                    config.options.initial_pair.as_ref().map(|p| &p[1]),
                ),
            ] {
                if let Some(Err(e)) = law.map(|l| l.validate(d)) {
                    issues.push(issue(p, e.to_string()));
                }
            }
            match admissibility_checks(&system, &config.analyses) {
                Ok(c) => checks = c,
                Err(e) => issues.push(issue("operator", e.to_string())),
            }
            for c in checks.iter().filter(|c| !c.passed) {
                for a in &c.required_by {
                    issues.push(issue(
                        "coefficients",
                        format!(
                            "{} requires {}: {} = {} is not below {}",
                            a.name(),
                            c.condition,
                            c.constant,
                            c.value,
                            c.threshold
                        ),
                    ));
                }
            }
        }
    }
    ValidationOutcome {
        valid: issues.is_empty(),
        issues,
        checks,
        config: Some(config),
    }
}

/// Process exit codes of a run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExitStatus {
    Ok,
    BoundViolation,
    ValidationFailure,
    AuditFailure,
    RuntimeFailure,
}

impl ExitStatus {
    pub fn code(self) -> i32 {
        match self {
            Self::Ok => 0,
            Self::BoundViolation => 1,
            Self::ValidationFailure => 2,
            Self::AuditFailure => 3,
            Self::RuntimeFailure => 4,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AuditEntry {
    pub field: String,
    pub declared: crate::coefficients::FieldConstants,
    pub measured: Option<AuditReport>,
    pub error: Option<String>,
}

/// A detected shift with the coefficient-space distance of the translates.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ShiftEvidence {
    pub tau: f64,
    pub deviation: f64,
    pub drift_distance: f64,
    pub diffusion_distance: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AnalysisResult {
    RecurrenceScan {
        report: AlmostPeriodReport,
        probe_states: usize,
        shifts: Vec<ShiftEvidence>,
    },
    Solve {
        contraction: ContractionReport,
        trace: FixedPointTrace,
    },
    Dissipativity {
        check: BoundCheckReport,
    },
    Convergence {
        coupled: BoundCheckReport,
        #[serde(skip_serializing_if = "Option::is_none")]
        to_bounded: Option<BoundCheckReport>,
    },
    Comparability {
        probe: ProbeReport,
        /// `max sup / floor mean`.
        max_ratio_to_floor: f64,
    },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum AnalysisOutcome {
    Ok { result: Box<AnalysisResult> },
    Error { kind: String, message: String },
    Skipped { reason: String },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AnalysisEntry {
    pub analysis: Analysis,
    pub violations: usize,
    pub outcome: AnalysisOutcome,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunReport {
    pub version: String,
    pub config: ScenarioConfig,
    pub admissibility: Vec<AdmissibilityCheck>,
    pub audits: Vec<AuditEntry>,
    pub results: Vec<AnalysisEntry>,
    pub violations: usize,
    pub exit_status: ExitStatus,
    pub exit_code: i32,
    /// Zero under a fixed clock.
    pub wall_time_s: f64,
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Overrides `outputs.dir`.
    pub out_dir: Option<PathBuf>,
    pub fixed_clock: bool,
    /// Skip writing files.
    pub dry: bool,
}

pub fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::InvalidArgument(_) => "invalid_argument",
        Error::GridMismatch(_) => "grid_mismatch",
        Error::Truncated { .. } => "truncated",
        Error::Inadmissible(_) => "inadmissible",
        Error::Audit(_) => "audit",
        Error::Evaluator(_) => "evaluator",
        Error::NonFinite { .. } => "non_finite",
        Error::NotConverged(_) => "not_converged",
        Error::Lp(_) => "lp",
        Error::Io(_) => "io",
        Error::Json(_) => "json",
        Error::Csv(_) => "csv",
    }
}

/// Coefficient values at a fixed set of probe states, as a function of time.
struct CoefficientSignal<'a> {
    drift: &'a CoefficientField,
    diffusion: &'a CoefficientField,
    probes: Vec<Vec<f64>>,
}

impl<'a> CoefficientSignal<'a> {
    fn new(system: &'a PresetSystem, radius: f64) -> Self {
        let d = system.dim();
        let mut probes = vec![vec![0.0; d]];
        for axis in 0..d {
            for s in [-1.0, -0.5, 0.5, 1.0] {
                let mut p = vec![0.0; d];
                p[axis] = s * radius;
                probes.push(p);
            }
        }
        Self {
            drift: &system.drift,
            diffusion: &system.diffusion,
            probes,
        }
    }
}

impl Signal for CoefficientSignal<'_> {
    fn dim(&self) -> usize {
        2 * self.drift.dim() * self.probes.len()
    }

    fn eval(&self, t: f64, out: &mut [f64]) {
        let d = self.drift.dim();
        for (p, chunk) in self.probes.iter().zip(out.chunks_mut(2 * d)) {
            let (a, b) = chunk.split_at_mut(d);
            self.drift.eval(t, p, a);
            self.diffusion.eval(t, p, b);
        }
    }
}

struct Context<'a> {
    config: &'a ScenarioConfig,
    system: &'a PresetSystem,
    grid: UniformGrid,
    xi: Option<StochasticEnsemble>,
    scan_shifts: Option<Vec<(f64, f64)>>,
    csv: Vec<(String, Vec<u8>)>,
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

fn run_recurrence(ctx: &mut Context) -> Result<(AnalysisResult, usize)> {
    let r = &ctx.config.options.recurrence;
    let signal = CoefficientSignal::new(ctx.system, r.probe_radius);
    let report = scan_almost_periods(
        &signal,
        r.epsilon,
        r.window,
        r.step,
        CoreSampling {
            half_width: r.core_half_width,
            step: r.core_step,
        },
    )?;
    let clusters = report.cluster_minima();
    let n_max = r.ball_radii.len() as f64;
    let dgrid = UniformGrid::spanning(-n_max, n_max, 0.01)?;
    let mut shifts = Vec::new();
    for &(tau, deviation) in clusters.iter().take(r.max_reported) {
        let (f, g) = (&ctx.system.drift, &ctx.system.diffusion);
        shifts.push(ShiftEvidence {
            tau,
            deviation,
            drift_distance: coefficient_distance(f, &f.shifted(tau), &dgrid, &r.ball_radii, 9)?,
            diffusion_distance: coefficient_distance(g, &g.shifted(tau), &dgrid, &r.ball_radii, 9)?,
        });
    }
    ctx.csv.push((
        "recurrence_periods.csv".into(),
        csv_bytes(|buf| {
            let mut w = csv::Writer::from_writer(buf);
            w.write_record(["tau", "deviation"])?;
            for (t, d) in report.periods.iter().zip(&report.deviations) {
                w.write_record([t.to_string(), d.to_string()])?;
            }
            w.flush()?;
            Ok(())
        })?,
    ));
    ctx.scan_shifts = Some(clusters);
    Ok((
        AnalysisResult::RecurrenceScan {
            report,
            probe_states: signal.probes.len(),
            shifts,
        },
        0,
    ))
}

fn solve_options(ctx: &Context, n_replicates: usize, seed: u64) -> SolveOptions {
    let s = &ctx.config.options.solve;
    SolveOptions {
        n_replicates,
        tol: s.tol,
        max_iter: s.max_iter,
        seed,
        burn_in: s.burn_in,
    }
}

fn run_solve(ctx: &mut Context) -> Result<(AnalysisResult, usize)> {
    let (op, k) = (&ctx.system.op, ctx.system.declared());
    let contraction = contraction_constants(
        op.stability_constant(),
        op.stability_rate(),
        k.lipschitz,
        ctx.config.options.solve.p,
    )?
    .with_a0(k.a0)?;
    let opts = solve_options(
        ctx,
        ctx.config.ensemble.n_paths,
        derive_seed(ctx.config.ensemble.seed, 20, 0),
    );
    let mut trace = solve_bounded_solution(op, &ctx.system.drift, &ctx.system.diffusion, &ctx.grid, &opts)?;
    let violations = trace.ball_violations;
    let moments = trace.moments.clone().expect("recorded");
    let r = trace.r;
    ctx.csv.push((
        "solve_moments.csv".into(),
        csv_bytes(|buf| {
            let mut w = csv::Writer::from_writer(buf);
            w.write_record(["t", "second_moment", "stderr", "r_squared"])?;
            for (i, t) in moments.grid.times().enumerate() {
                w.write_record([
                    t.to_string(),
                    moments.second_moment[i].to_string(),
                    moments.stderr[i].to_string(),
                    (r * r).to_string(),
                ])?;
            }
            w.flush()?;
            Ok(())
        })?,
    ));
    ctx.csv.push((
        "solve_iterates.csv".into(),
        csv_bytes(|buf| {
            let mut w = csv::Writer::from_writer(buf);
            w.write_record(["k", "sup_distance", "ratio"])?;
            for (i, d) in trace.iterates.iter().enumerate() {
                let ratio = if i == 0 {
                    String::new()
                } else {
                    trace.ratios[i - 1].to_string()
                };
                w.write_record([(i + 1).to_string(), d.to_string(), ratio])?;
            }
            w.flush()?;
            Ok(())
        })?,
    ));
    ctx.xi = trace.final_path_ensemble.take();
    Ok((AnalysisResult::Solve { contraction, trace }, violations))
}

fn bound_csv(ctx: &mut Context, name: &str, r: &BoundCheckReport) -> Result<()> {
    let bytes = csv_bytes(|buf| r.write_csv(buf))?;
    ctx.csv.push((name.into(), bytes));
    Ok(())
}

fn run_dissipativity(ctx: &mut Context) -> Result<(AnalysisResult, usize)> {
    let s = ctx.system;
    let initial = ctx.config.options.initial.clone().unwrap_or_else(|| s.initial.clone());
    let spec = ForwardSpec {
        op: &s.op,
        drift: &s.drift,
        diffusion: &s.diffusion,
        grid: ctx.grid,
        n_paths: ctx.config.ensemble.n_paths,
        seed: derive_seed(ctx.config.ensemble.seed, 21, 0),
        noise_offset: 0,
    };
    let ens = euler_maruyama_ensemble(&spec, &initial)?;
    let k = s.declared();
    let check = dissipativity_check(
        &ens,
        s.op.stability_constant(),
        s.op.stability_rate(),
        k.a0,
        k.growth,
        ctx.grid.t0,
    )?;
    bound_csv(ctx, "dissipativity.csv", &check)?;
    let tail_miss = usize::from(!check.tail.as_ref().is_none_or(|t| t.within));
    let v = check.violations + tail_miss;
    Ok((AnalysisResult::Dissipativity { check }, v))
}

fn run_convergence(ctx: &mut Context) -> Result<(AnalysisResult, usize)> {
    let s = ctx.system;
    let pair = ctx
        .config
        .options
        .initial_pair
        .clone()
        .unwrap_or_else(|| s.initial_pair.clone());
    let coupled = convergence_check(
        &s.op,
        &s.drift,
        &s.diffusion,
        &pair[0],
        &pair[1],
        ctx.grid,
        ctx.config.ensemble.n_paths,
        derive_seed(ctx.config.ensemble.seed, 22, 0),
    )?;
    bound_csv(ctx, "convergence.csv", &coupled)?;
    let to_bounded = match &ctx.xi {
        Some(xi) => Some(bounded_solution_convergence_check(
            &s.op,
            &s.drift,
            &s.diffusion,
            &pair[0],
            xi,
        )?),
        None => None,
    };
    if let Some(r) = &to_bounded {
        bound_csv(ctx, "convergence_to_bounded.csv", r)?;
    }
    let v = coupled.violations + to_bounded.as_ref().map_or(0, |r| r.violations);
    Ok((AnalysisResult::Convergence { coupled, to_bounded }, v))
}

fn run_comparability(ctx: &mut Context) -> Result<(AnalysisResult, usize)> {
    let cp = &ctx.config.options.comparability;
    let shifts: Vec<f64> = match (&cp.shifts, &ctx.scan_shifts) {
        (Some(s), _) => s.clone(),
        (None, Some(found)) => {
            if found.is_empty() {
                return Err(Error::InvalidArgument(
                    "recurrence_scan found no shifts to probe".into(),
                ));
            }
            found.iter().take(cp.max_shifts).map(|(t, _)| *t).collect()
        }
        (None, None) => {
            return Err(Error::InvalidArgument(
                "no shifts: the recurrence scan did not complete".into(),
            ))
        }
    };
    let s = ctx.system;
    let setup = ProbeSetup {
        window: ctx.grid,
        burn_in: cp.burn_in.unwrap_or_else(|| s.op.burn_in_for(1e-8)),
        n_paths: cp.n_paths.unwrap_or(ctx.config.ensemble.n_paths),
        seed: derive_seed(ctx.config.ensemble.seed, 23, 0),
        law_stride: cp.law_stride,
        floor_pairs: cp.floor_pairs,
    };
    let probe = semilinear_comparability_probe(&s.op, &s.drift, &s.diffusion, &shifts, &s.drift, &s.diffusion, &setup)?;
    let max_sup = probe.sups.iter().copied().fold(0.0, f64::max);
    let max_ratio_to_floor = if probe.floor.mean > 0.0 {
        max_sup / probe.floor.mean
    } else if max_sup == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    let bytes = csv_bytes(|buf| {
        let mut w = csv::Writer::from_writer(buf);
        w.write_record(["shift", "sup_beta", "floor_mean", "floor_std"])?;
        for (t, v) in probe.shifts.iter().zip(&probe.sups) {
            w.write_record([
                t.to_string(),
                v.to_string(),
                probe.floor.mean.to_string(),
                probe.floor.std.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    })?;
    ctx.csv.push(("comparability.csv".into(), bytes));
    Ok((
        AnalysisResult::Comparability {
            probe,
            max_ratio_to_floor,
        },
        0,
    ))
}

/// Audits both coefficients against their declared constants.
fn audit_system(config: &ScenarioConfig, system: &PresetSystem) -> (Vec<AuditEntry>, bool) {
    let cfg = config.options.audit.clone().unwrap_or_default();
    let check_lip = !config.options.allow_locally_lipschitz;
    let mut ok = true;
    let entries = [&system.drift, &system.diffusion]
        .into_iter()
        .map(|f| {
            let (measured, error) = match f.audit_with(&cfg, check_lip) {
                Ok(r) => (Some(r), None),
                Err(e) => {
                    ok = false;
                    (None, Some(e.to_string()))
                }
            };
            AuditEntry {
                field: f.label().to_string(),
                declared: *f.constants(),
                measured,
                error,
            }
        })
        .collect();
    (entries, ok)
}

/// Runs a validated config. Writes `report.json` and the per-analysis CSVs
/// unless `opts.dry` is set.
pub fn run_scenario(config: &ScenarioConfig, opts: &RunOptions) -> Result<RunReport> {
    let start = Instant::now();
    let system = build_system(config)?;
    let admissibility = admissibility_checks(&system, &config.analyses)?;
    if let Some(c) = admissibility.iter().find(|c| !c.passed && !c.required_by.is_empty()) {
        return Err(Error::Inadmissible(format!(
            "{} = {} is not below {} ({})",
            c.constant, c.value, c.threshold, c.condition
        )));
    }
    let grid = config.grid.grid()?;
    let (audits, audit_ok) = audit_system(config, &system);

    let mut ctx = Context {
        config,
        system: &system,
        grid,
        xi: None,
        scan_shifts: None,
        csv: Vec::new(),
    };
    let mut order = config.analyses.clone();
    order.sort();
    let mut results = Vec::new();
    let mut runtime_failure = false;
    for a in order {
        let (outcome, violations) = if !audit_ok {
            (
                AnalysisOutcome::Skipped {
                    reason: "coefficient audit failed".into(),
                },
                0,
            )
        } else {
            let r = match a {
                Analysis::RecurrenceScan => run_recurrence(&mut ctx),
                Analysis::Solve => run_solve(&mut ctx),
                Analysis::Dissipativity => run_dissipativity(&mut ctx),
                Analysis::Convergence => run_convergence(&mut ctx),
                Analysis::Comparability => run_comparability(&mut ctx),
            };
            match r {
                Ok((result, v)) => (
                    AnalysisOutcome::Ok {
                        result: Box::new(result),
                    },
                    v,
                ),
                Err(e) => {
                    runtime_failure = true;
                    (
                        AnalysisOutcome::Error {
                            kind: error_kind(&e).into(),
                            message: e.to_string(),
                        },
                        0,
                    )
                }
            }
        };
        results.push(AnalysisEntry {
            analysis: a,
            violations,
            outcome,
        });
    }
    let violations: usize = results.iter().map(|r| r.violations).sum();
    let exit_status = if !audit_ok {
        ExitStatus::AuditFailure
    } else if runtime_failure {
        ExitStatus::RuntimeFailure
    } else if violations > 0 {
        ExitStatus::BoundViolation
    } else {
        ExitStatus::Ok
    };
    let csv = std::mem::take(&mut ctx.csv);
    let report = RunReport {
        version: VERSION.to_string(),
        config: config.clone(),
        admissibility,
        audits,
        results,
        violations,
        exit_status,
        exit_code: exit_status.code(),
        wall_time_s: if opts.fixed_clock {
            0.0
        } else {
            start.elapsed().as_secs_f64()
        },
    };
    if !opts.dry {
        let dir = opts
            .out_dir
            .clone()
            .unwrap_or_else(|| PathBuf::from(&config.outputs.dir));
        write_outputs(&dir, &config.outputs.formats, &report, &csv)?;
    }
    Ok(report)
}

fn write_outputs(dir: &Path, formats: &[Format], report: &RunReport, csv: &[(String, Vec<u8>)]) -> Result<()> {
    fs::create_dir_all(dir)?;
    if formats.contains(&Format::Json) {
        let mut text = serde_json::to_string_pretty(report)?;
        text.push('\n');
        fs::write(dir.join("report.json"), text)?;
    }
    if formats.contains(&Format::Csv) {
        for (name, bytes) in csv {
            fs::write(dir.join(name), bytes)?;
        }
    }
    Ok(())
}

/// Validation followed by a run; the exit status covers both.
pub fn run_config_text(raw: &str, opts: &RunOptions) -> (ExitStatus, std::result::Result<RunReport, String>) {
    let v = validate_config(raw);
    if !v.valid {
        let msg = v.issues.iter().map(|i| i.to_string()).collect::<Vec<_>>().join("\n");
        return (ExitStatus::ValidationFailure, Err(msg));
    }
    let config = v.config.expect("valid config");
    match run_scenario(&config, opts) {
        Ok(r) => (r.exit_status, Ok(r)),
        Err(e @ Error::Inadmissible(_)) => (ExitStatus::ValidationFailure, Err(e.to_string())),
        Err(e) => (ExitStatus::RuntimeFailure, Err(e.to_string())),
    }
}
