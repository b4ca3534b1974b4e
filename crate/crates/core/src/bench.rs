//! Monte Carlo experiments over simulated scenarios.
//!
//! Each grid cell `(param, k)` simulates the same replicates: replicate `r`
//! is generated from `derive_seed(seed, r)` whatever the cell, so cells are
//! compared on common random numbers. Replicates run in parallel and are
//! reduced in index order.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::{
    estimate_type1_error, CalibrationKey, SegmentQuantiles, ThresholdSource, Type1Estimate,
    Variant, DEFAULT_REPLICATES,
};
use crate::detection::{label_segments, run_procedure, DetectionConfig, SegmentLabel};
use crate::rng::derive_seed;
use crate::simulators::{compose_scenario, RegimeKind, ScenarioSpec};
use crate::statistics::ThresholdPair;
use crate::trajectory::{save_csv, Trajectory};
use crate::{Error, Result, DEFAULT_SEED};

/// Bins of `N̂ - N`: `<= -2`, `-1`, `0`, `1`, `>= 2`.
pub const DIFF_BINS: [&str; 5] = ["<=-2", "-1", "0", "1", ">=2"];

/// Scenario family swept by an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioTemplate {
    /// Brownian / drift of norm `param` / Brownian.
    Scenario1,
    /// Brownian / Ornstein–Uhlenbeck with restoring force `param` / Brownian.
    Scenario2,
    /// Arbitrary scenario; `param` overrides the drift norm of drifted
    /// regimes and the restoring force of Ornstein–Uhlenbeck regimes.
    Custom(ScenarioSpec),
}

impl ScenarioTemplate {
    pub fn instantiate(&self, param: f64, seed: u64) -> ScenarioSpec {
        match self {
            ScenarioTemplate::Scenario1 => ScenarioSpec::scenario1(param, seed),
            ScenarioTemplate::Scenario2 => ScenarioSpec::scenario2(param, seed),
            ScenarioTemplate::Custom(spec) => {
                let mut spec = spec.clone();
                spec.seed = seed;
                if param.is_finite() {
                    for regime in &mut spec.regimes {
                        match regime.kind {
                            RegimeKind::BrownianDrift => regime.v = param,
                            RegimeKind::OrnsteinUhlenbeck => regime.lambda = Some(param),
                            _ => {}
                        }
                    }
                }
                spec
            }
        }
    }

    /// Column name of the swept parameter.
    pub fn param_name(&self) -> &'static str {
        match self {
            ScenarioTemplate::Scenario1 => "v",
            ScenarioTemplate::Scenario2 => "λ",
            ScenarioTemplate::Custom(_) => "param",
        }
    }
}

/// External change-point detector, run as
/// `program [args..] --input traj.csv --output cps.json`; the output file
/// holds `{"change_points": [...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalDetector {
    pub program: PathBuf,
    #[serde(default)]
    pub args: Vec<String>,
}

#[derive(Deserialize)]
struct ExternalOutput {
    change_points: Vec<usize>,
}

impl ExternalDetector {
    pub fn run(&self, traj: &Trajectory) -> Result<Vec<usize>> {
        let dir = tempfile::tempdir().map_err(|e| Error::io(std::env::temp_dir(), e))?;
        let input = dir.path().join("traj.csv");
        let output = dir.path().join("cps.json");
        save_csv(traj, &input)?;
        let status = Command::new(&self.program)
            .args(&self.args)
            .arg("--input")
            .arg(&input)
            .arg("--output")
            .arg(&output)
            .status()
            .map_err(|e| Error::io(&self.program, e))?;
        if !status.success() {
            return Err(Error::External(format!(
                "{} exited with {status}",
                self.program.display()
            )));
        }
        let text = fs::read_to_string(&output).map_err(|e| Error::io(&output, e))?;
        let parsed: ExternalOutput =
            serde_json::from_str(&text).map_err(|e| Error::External(format!("bad output: {e}")))?;
        let mut points = parsed.change_points;
        points.sort_unstable();
        points.dedup();
        if points.iter().any(|&p| p == 0 || p >= traj.n_steps()) {
            return Err(Error::External(format!(
                "change points {points:?} outside (0, {})",
                traj.n_steps()
            )));
        }
        Ok(points)
    }
}

fn default_alpha() -> f64 {
    0.05
}

fn default_calibration_replicates() -> usize {
    DEFAULT_REPLICATES
}

fn default_calibration_seed() -> u64 {
    DEFAULT_SEED
}

fn default_variant() -> Variant {
    Variant::Relaxed
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub scenario: ScenarioTemplate,
    /// Values of the swept scenario parameter.
    pub params: Vec<f64>,
    /// Window sizes.
    pub ks: Vec<usize>,
    pub replicates: usize,
    pub seed: u64,
    #[serde(default = "default_variant")]
    pub variant: Variant,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Label segments and score them against the ground truth.
    #[serde(default)]
    pub label: bool,
    #[serde(default = "default_calibration_replicates")]
    pub calibration_replicates: usize,
    #[serde(default = "default_calibration_seed")]
    pub calibration_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub external: Option<ExternalDetector>,
}

impl ExperimentSpec {
    pub fn new(
        scenario: ScenarioTemplate,
        params: Vec<f64>,
        ks: Vec<usize>,
        replicates: usize,
        seed: u64,
    ) -> Self {
        Self {
            scenario,
            params,
            ks,
            replicates,
            seed,
            variant: Variant::Relaxed,
            alpha: 0.05,
            label: false,
            calibration_replicates: DEFAULT_REPLICATES,
            calibration_seed: DEFAULT_SEED,
            external: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(Error::InvalidParam("replicates must be at least 1".into()));
        }
        if self.params.is_empty() || self.ks.is_empty() {
            return Err(Error::InvalidParam("parameter grid is empty".into()));
        }
        if self.variant == Variant::SegmentTest {
            return Err(Error::InvalidParam(
                "detection needs the strict or relaxed variant".into(),
            ));
        }
        for &param in &self.params {
            self.scenario.instantiate(param, self.seed).validate()?;
        }
        Ok(())
    }
}

/// Mean and standard deviation of one estimated change point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TauSummary {
    pub mean: Option<f64>,
    /// Sample standard deviation; absent below two values.
    pub sd: Option<f64>,
}

impl TauSummary {
    fn from_values(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self {
                mean: None,
                sd: None,
            };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let sd = (n >= 2).then(|| {
            let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
            (ss / (n - 1) as f64).sqrt()
        });
        Self {
            mean: Some(mean),
            sd,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub param: f64,
    pub k: usize,
    pub thresholds: ThresholdPair,
    pub replicates: usize,
    /// Replicates that raised an error; excluded from every proportion.
    pub failures: usize,
    /// Counts of `N̂ - N` per [`DIFF_BINS`] bin.
    pub counts: [usize; 5],
    pub proportions: [f64; 5],
    /// Binomial standard error of the `N̂ = N` proportion.
    pub exact_se: f64,
    /// Replicates with `N̂ = N`.
    pub qualifying: usize,
    /// One entry per true change point, over qualifying replicates.
    pub tau: Vec<TauSummary>,
    /// Fraction of qualifying replicates whose segments all carry the true
    /// label; absent without labelling or qualifying replicates.
    pub label_accuracy: Option<f64>,
    pub runtime_mean_ms: f64,
    pub runtime_max_ms: f64,
}

impl CellReport {
    pub fn exact_proportion(&self) -> f64 {
        self.proportions[2]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub param_name: String,
    /// Number of true change points in the scenario.
    pub n_change_points: usize,
    pub cells: Vec<CellReport>,
}

impl ExperimentReport {
    pub fn cell(&self, param: f64, k: usize) -> Option<&CellReport> {
        self.cells.iter().find(|c| c.param == param && c.k == k)
    }
}

struct Outcome {
    change_points: Vec<usize>,
    labels: Vec<SegmentLabel>,
    millis: f64,
}

fn run_replicate(
    scenario: &ScenarioSpec,
    config: &DetectionConfig,
    quantiles: Option<&SegmentQuantiles>,
    external: Option<&ExternalDetector>,
) -> Result<Outcome> {
    let (traj, _) = compose_scenario(scenario)?;
    let started = Instant::now();
    let (change_points, labels) = match external {
        Some(ext) => {
            let points = ext.run(&traj)?;
            let labels = quantiles
                .map(|q| label_segments(&traj, &points, q))
                .unwrap_or_default();
            (points, labels)
        }
        None => {
            let report = run_procedure(&traj, config, quantiles)?;
            (report.change_points, report.raw_labels)
        }
    };
    Ok(Outcome {
        change_points,
        labels,
        millis: started.elapsed().as_secs_f64() * 1e3,
    })
}

/// Runs every `(param, k)` cell of `spec`, fetching cut-off values from
/// `source`.
pub fn run_experiment<S: ThresholdSource + ?Sized>(
    spec: &ExperimentSpec,
    source: &mut S,
) -> Result<ExperimentReport> {
    spec.validate()?;
    let probe = spec.scenario.instantiate(spec.params[0], spec.seed);
    let quantiles = if spec.label {
        Some(SegmentQuantiles::from_source(
            source,
            spec.alpha,
            spec.calibration_replicates,
            spec.calibration_seed,
        )?)
    } else {
        None
    };

    let mut cells = Vec::with_capacity(spec.params.len() * spec.ks.len());
    for &param in &spec.params {
        let template = spec.scenario.instantiate(param, spec.seed);
        let truth = template.labels();
        let n_true = template.change_points.len();
        for &k in &spec.ks {
            let key = CalibrationKey {
                alpha: spec.alpha,
                replicates: spec.calibration_replicates,
                seed: spec.calibration_seed,
                ..CalibrationKey::with_defaults(template.n, k, spec.variant)
            };
            let thresholds = source.thresholds(&key)?;
            let config = DetectionConfig {
                alpha: spec.alpha,
                ..DetectionConfig::new(k, thresholds)
            };
            config.validate(template.n)?;

            let outcomes: Vec<Result<Outcome>> = (0..spec.replicates as u64)
                .into_par_iter()
                .map(|r| {
                    let scenario = ScenarioSpec {
                        seed: derive_seed(spec.seed, r),
                        ..template.clone()
                    };
                    run_replicate(
                        &scenario,
                        &config,
                        quantiles.as_ref(),
                        spec.external.as_ref(),
                    )
                })
                .collect();

            let mut counts = [0usize; 5];
            let mut failures = 0;
            let mut taus = vec![Vec::new(); n_true];
            let mut labelled = 0usize;
            let mut correct = 0usize;
            let mut runtimes = Vec::new();
            for outcome in &outcomes {
                let Ok(out) = outcome else {
                    failures += 1;
                    continue;
                };
                runtimes.push(out.millis);
                let diff = out.change_points.len() as i64 - n_true as i64;
                counts[(diff.clamp(-2, 2) + 2) as usize] += 1;
                if diff == 0 {
                    for (acc, &cp) in taus.iter_mut().zip(&out.change_points) {
                        acc.push(cp as f64);
                    }
                    if quantiles.is_some() {
                        labelled += 1;
                        if out.labels.iter().map(|l| l.label).eq(truth.iter().copied()) {
                            correct += 1;
                        }
                    }
                }
            }
            let successes = spec.replicates - failures;
            let proportions = counts.map(|c| {
                if successes == 0 {
                    0.0
                } else {
                    c as f64 / successes as f64
                }
            });
            let p0 = proportions[2];
            let exact_se = if successes == 0 {
                0.0
            } else {
                (p0 * (1.0 - p0) / successes as f64).sqrt()
            };
            let runtime_mean_ms = if runtimes.is_empty() {
                0.0
            } else {
                runtimes.iter().sum::<f64>() / runtimes.len() as f64
            };
            cells.push(CellReport {
                param,
                k,
                thresholds,
                replicates: spec.replicates,
                failures,
                counts,
                proportions,
                exact_se,
                qualifying: counts[2],
                tau: taus.iter().map(|v| TauSummary::from_values(v)).collect(),
                label_accuracy: (labelled > 0).then(|| correct as f64 / labelled as f64),
                runtime_mean_ms,
                runtime_max_ms: runtimes.iter().copied().fold(0.0, f64::max),
            });
        }
    }
    Ok(ExperimentReport {
        param_name: spec.scenario.param_name().to_string(),
        n_change_points: probe.change_points.len(),
        cells,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Type1Spec {
    pub ns: Vec<usize>,
    pub ks: Vec<usize>,
    pub variants: Vec<Variant>,
    pub replicates: usize,
    pub seed: u64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_calibration_replicates")]
    pub calibration_replicates: usize,
    #[serde(default = "default_calibration_seed")]
    pub calibration_seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Type1Cell {
    pub n: usize,
    pub k: usize,
    pub variant: Variant,
    pub thresholds: ThresholdPair,
    pub estimate: Type1Estimate,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Type1Report {
    pub cells: Vec<Type1Cell>,
}

/// False-detection rates over `(n, k) x variant`. The null trajectories are
/// drawn from a stream independent of the calibration stream.
pub fn run_type1_experiment<S: ThresholdSource + ?Sized>(
    spec: &Type1Spec,
    source: &mut S,
) -> Result<Type1Report> {
    if spec.seed == spec.calibration_seed {
        return Err(Error::InvalidParam(
            "type-I seed must differ from the calibration seed".into(),
        ));
    }
    let mut cells = Vec::new();
    for &n in &spec.ns {
        for &k in &spec.ks {
            for &variant in &spec.variants {
                let key = CalibrationKey {
                    alpha: spec.alpha,
                    replicates: spec.calibration_replicates,
                    seed: spec.calibration_seed,
                    ..CalibrationKey::with_defaults(n, k, variant)
                };
                let thresholds = source.thresholds(&key)?;
                let estimate = estimate_type1_error(
                    n,
                    k,
                    key.c,
                    key.c_star,
                    thresholds,
                    spec.replicates,
                    spec.seed,
                )?;
                cells.push(Type1Cell {
                    n,
                    k,
                    variant,
                    thresholds,
                    estimate,
                });
            }
        }
    }
    Ok(Type1Report { cells })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Json,
    Csv,
    Markdown,
}

impl ReportFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::Json => "json",
            ReportFormat::Csv => "csv",
            ReportFormat::Markdown => "md",
        }
    }
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            other => Err(Error::InvalidParam(format!(
                "unknown report format {other:?}"
            ))),
        }
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// CSV header for a report with `n_tau` change points.
pub fn csv_header(n_tau: usize) -> Vec<String> {
    let mut cols: Vec<String> = ["param", "k", "gamma1", "gamma2", "replicates", "failures"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    cols.extend(
        ["p_le_m2", "p_m1", "p_0", "p_p1", "p_ge_2"]
            .iter()
            .map(|s| s.to_string()),
    );
    cols.extend(["se_0", "qualifying"].iter().map(|s| s.to_string()));
    for j in 1..=n_tau {
        cols.push(format!("tau{j}_mean"));
        cols.push(format!("tau{j}_sd"));
    }
    cols.extend(
        ["label_accuracy", "runtime_mean_ms", "runtime_max_ms"]
            .iter()
            .map(|s| s.to_string()),
    );
    cols
}

fn csv_text(report: &ExperimentReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::External(e.to_string());
    w.write_record(csv_header(report.n_change_points))
        .map_err(csv_err)?;
    for cell in &report.cells {
        let mut row = vec![
            cell.param.to_string(),
            cell.k.to_string(),
            cell.thresholds.gamma1.to_string(),
            cell.thresholds.gamma2.to_string(),
            cell.replicates.to_string(),
            cell.failures.to_string(),
        ];
        row.extend(cell.proportions.iter().map(f64::to_string));
        row.push(cell.exact_se.to_string());
        row.push(cell.qualifying.to_string());
        for j in 0..report.n_change_points {
            let t = cell.tau.get(j).copied().unwrap_or(TauSummary {
                mean: None,
                sd: None,
            });
            row.push(opt(t.mean));
            row.push(opt(t.sd));
        }
        row.push(opt(cell.label_accuracy));
        row.push(cell.runtime_mean_ms.to_string());
        row.push(cell.runtime_max_ms.to_string());
        w.write_record(&row).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::External(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn markdown_text(report: &ExperimentReport) -> String {
    let mut out = String::new();
    let mut header = format!("| {} | k | −2 | −1 | 0 | 1 | ≥2 |", report.param_name);
    let mut rule = String::from("|---|---|---|---|---|---|---|");
    for j in 1..=report.n_change_points {
        header.push_str(&format!(" τ{j} (SD) |"));
        rule.push_str("---|");
    }
    header.push_str(" labels |");
    rule.push_str("---|");
    let _ = writeln!(out, "{header}\n{rule}");
    for cell in &report.cells {
        let _ = write!(out, "| {} | {} |", cell.param, cell.k);
        for p in cell.proportions {
            let _ = write!(out, " {:.1} |", 100.0 * p);
        }
        for t in &cell.tau {
            match (t.mean, t.sd) {
                (Some(m), Some(s)) => {
                    let _ = write!(out, " {m:.1} ({s:.1}) |");
                }
                (Some(m), None) => {
                    let _ = write!(out, " {m:.1} |");
                }
                _ => out.push_str(" – |"),
            }
        }
        match cell.label_accuracy {
            Some(a) => {
                let _ = writeln!(out, " {:.1} |", 100.0 * a);
            }
            None => out.push_str(" – |\n"),
        }
    }
    out
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// `report` rendered in `format`.
pub fn render_report(report: &ExperimentReport, format: ReportFormat) -> Result<String> {
    Ok(match format {
        ReportFormat::Json => serde_json::to_string_pretty(report).expect("report serializes"),
        ReportFormat::Csv => csv_text(report)?,
        ReportFormat::Markdown => markdown_text(report),
    })
}

/// Writes `report` to `path` in `format`.
pub fn export_report(report: &ExperimentReport, format: ReportFormat, path: &Path) -> Result<()> {
    write_file(path, &render_report(report, format)?)
}

pub fn export_type1_report(report: &Type1Report, format: ReportFormat, path: &Path) -> Result<()> {
    write_file(path, &render_type1_report(report, format))
}

pub fn render_type1_report(report: &Type1Report, format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => serde_json::to_string_pretty(report).expect("report serializes"),
        ReportFormat::Csv => {
            let mut out =
                String::from("n,k,variant,gamma1,gamma2,replicates,detections,rate,std_error\n");
            for c in &report.cells {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{},{},{}",
                    c.n,
                    c.k,
                    variant_name(c.variant),
                    c.thresholds.gamma1,
                    c.thresholds.gamma2,
                    c.estimate.replicates,
                    c.estimate.detections,
                    c.estimate.rate,
                    c.estimate.std_error
                );
            }
            out
        }
        ReportFormat::Markdown => {
            let mut out = String::from("| n | k | variant | γ1 | γ2 | type I (%) | SE (%) |\n|---|---|---|---|---|---|---|\n");
            for c in &report.cells {
                let _ = writeln!(
                    out,
                    "| {} | {} | {} | {:.2} | {:.2} | {:.2} | {:.2} |",
                    c.n,
                    c.k,
                    variant_name(c.variant),
                    c.thresholds.gamma1,
                    c.thresholds.gamma2,
                    100.0 * c.estimate.rate,
                    100.0 * c.estimate.std_error
                );
            }
            out
        }
    }
}

fn variant_name(v: Variant) -> &'static str {
    match v {
        Variant::Strict => "strict",
        Variant::Relaxed => "relaxed",
        Variant::SegmentTest => "segment_test",
    }
}
