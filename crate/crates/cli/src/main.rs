use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use serde_json::json;

use diffswitch::bench::{
    export_report, export_type1_report, render_report, render_type1_report, run_experiment,
    run_type1_experiment, ExperimentSpec, ExternalDetector, ReportFormat, ScenarioTemplate,
    Type1Spec,
};
use diffswitch::calibration::{
    CalibrationKey, SegmentQuantiles, ThresholdCache, ThresholdSource, Variant,
    CACHE_SCHEMA_VERSION, DEFAULT_REPLICATES,
};
use diffswitch::detection::{
    default_c, default_c_star, run_procedure, segments_between, DetectionConfig,
};
use diffswitch::rng::derive_seed;
use diffswitch::simulators::{compose_scenario, ScenarioSpec};
use diffswitch::statistics::{empirical_msd, estimate_sigma2, sliding_stats, statistic_t};
use diffswitch::trajectory::{load_csv, save_csv, write_csv};
use diffswitch::{Error, Result, DEFAULT_SEED, VERSION};

#[derive(Parser)]
#[command(
    name = "diffswitch",
    about = "Detect switches between diffusion regimes along particle trajectories"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Seed for simulations, or "random".
    #[arg(long, global = true)]
    seed: Option<String>,
    /// Threshold cache file.
    #[arg(long, global = true, default_value = "thresholds.json")]
    cache: PathBuf,
    /// Print progress to stderr (repeat for more).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    /// Worker threads; all results are independent of it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Format of reports printed to stdout.
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
    Markdown,
}

impl From<Format> for ReportFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Json => ReportFormat::Json,
            Format::Csv => ReportFormat::Csv,
            Format::Markdown => ReportFormat::Markdown,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Strict,
    Relaxed,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Strict => Variant::Strict,
            VariantArg::Relaxed => Variant::Relaxed,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario and write the trajectory as CSV.
    Simulate(SimulateArgs),
    /// Diffusion estimate, excursion statistic, sliding statistics and MSD of a trajectory.
    Stats(StatsArgs),
    /// Calibrate cut-off values and store them in the cache.
    Calibrate(CalibrateArgs),
    /// Detect change points in a trajectory.
    Detect(DetectArgs),
    /// Run a Monte Carlo sweep over simulated scenarios.
    Bench(BenchArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// 1, 2 or a scenario JSON file.
    #[arg(long)]
    scenario: String,
    /// Drift norm for scenario 1.
    #[arg(long, default_value_t = 1.0)]
    v: f64,
    /// Restoring force for scenario 2.
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    /// Output CSV; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write the true change points and labels as JSON.
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(Args)]
struct StatsArgs {
    #[arg(long)]
    input: PathBuf,
    /// Window size for the sliding statistics.
    #[arg(long)]
    k: Option<usize>,
    /// Per-index CSV of (i, B, A, Q); needs --k.
    #[arg(long, requires = "k")]
    windows: Option<PathBuf>,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, value_enum, default_value_t = VariantArg::Relaxed)]
    variant: VariantArg,
    /// Calibration replicates.
    #[arg(long, default_value_t = DEFAULT_REPLICATES)]
    replicates: usize,
    /// CSV of the empirical MSD up to this lag.
    #[arg(long)]
    max_lag: Option<usize>,
    #[arg(long, requires = "max_lag")]
    msd: Option<PathBuf>,
}

#[derive(Args)]
struct CalibrateArgs {
    /// Trajectory length in steps.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    c: Option<usize>,
    #[arg(long)]
    c_star: Option<usize>,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, value_enum, default_value_t = VariantArg::Relaxed)]
    variant: VariantArg,
    #[arg(long, default_value_t = DEFAULT_REPLICATES)]
    replicates: usize,
    /// Calibrate the segment-labelling quantiles instead.
    #[arg(long, conflicts_with_all = ["n", "k", "c", "c_star"])]
    segments: bool,
}

#[derive(Args)]
struct DetectArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    k: usize,
    #[arg(long)]
    c: Option<usize>,
    #[arg(long)]
    c_star: Option<usize>,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, value_enum, default_value_t = VariantArg::Relaxed)]
    variant: VariantArg,
    /// Label segments and merge change points between equal labels.
    #[arg(long)]
    label: bool,
    #[arg(long, default_value_t = DEFAULT_REPLICATES)]
    replicates: usize,
    /// Report file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-index CSV of (i, B, A, Q).
    #[arg(long)]
    stats_out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// 1, 2 or a scenario JSON file.
    #[arg(long, default_value = "1")]
    scenario: String,
    /// Comma-separated values of v (scenario 1) or λ (scenario 2).
    #[arg(long, value_delimiter = ',', default_values_t = [1.0])]
    sweep: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = [20usize, 30, 40])]
    ks: Vec<usize>,
    #[arg(long, default_value_t = 200)]
    replicates: usize,
    #[arg(long, value_enum, default_value_t = VariantArg::Relaxed)]
    variant: VariantArg,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long)]
    label: bool,
    #[arg(long, default_value_t = DEFAULT_REPLICATES)]
    calibration_replicates: usize,
    /// External detector run as `PROG --input traj.csv --output cps.json`.
    #[arg(long)]
    external: Option<PathBuf>,
    /// Type-I sweep over --ns x --ks x both variants instead of a scenario.
    #[arg(long)]
    type1: bool,
    #[arg(long, value_delimiter = ',', default_values_t = [150usize, 300])]
    ns: Vec<usize>,
    /// Directory receiving report.json, report.csv and report.md.
    #[arg(long)]
    out: Option<PathBuf>,
}

struct Context {
    seed: Option<u64>,
    cache: PathBuf,
    verbose: u8,
    format: Format,
}

impl Context {
    fn seed(&self) -> u64 {
        self.seed.unwrap_or(DEFAULT_SEED)
    }

    fn log(&self, msg: impl AsRef<str>) {
        if self.verbose > 0 {
            eprintln!("{}", msg.as_ref());
        }
    }

    fn open_cache(&self) -> Result<ThresholdCache> {
        let cache = ThresholdCache::open(&self.cache)?;
        if let diffswitch::calibration::CacheStatus::Corrupt(reason) = cache.status() {
            eprintln!(
                "warning: ignoring unreadable cache {} ({reason}); it will be rewritten",
                self.cache.display()
            );
        }
        Ok(cache)
    }
}

fn parse_seed(raw: Option<&str>) -> std::result::Result<Option<u64>, String> {
    match raw {
        None => Ok(None),
        Some("random") => Ok(Some(rand::random())),
        Some(s) => s
            .parse()
            .map(Some)
            .map_err(|_| format!("invalid seed {s:?}")),
    }
}

fn write_text(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| Error::io(p, e)),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())
                .and_then(|_| out.flush())
                .map_err(|e| Error::io("<stdout>", e))
        }
    }
}

fn pretty(value: &serde_json::Value) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("JSON value serializes");
    s.push('\n');
    s
}

fn scenario_template(raw: &str) -> Result<ScenarioTemplate> {
    match raw {
        "1" => Ok(ScenarioTemplate::Scenario1),
        "2" => Ok(ScenarioTemplate::Scenario2),
        path => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let spec: ScenarioSpec = serde_json::from_str(&text)
                .map_err(|e| Error::InvalidParam(format!("scenario file {path}: {e}")))?;
            Ok(ScenarioTemplate::Custom(spec))
        }
    }
}

fn simulate(ctx: &Context, args: &SimulateArgs) -> Result<()> {
    let spec = match scenario_template(&args.scenario)? {
        ScenarioTemplate::Scenario1 => ScenarioSpec::scenario1(args.v, ctx.seed()),
        ScenarioTemplate::Scenario2 => ScenarioSpec::scenario2(args.lambda, ctx.seed()),
        ScenarioTemplate::Custom(mut spec) => {
            if let Some(seed) = ctx.seed {
                spec.seed = seed;
            }
            spec
        }
    };
    ctx.log(format!(
        "simulating {} steps with seed {}",
        spec.n, spec.seed
    ));
    let (traj, change_points) = compose_scenario(&spec)?;
    match &args.out {
        Some(path) => save_csv(&traj, path)?,
        None => {
            let mut buf = Vec::new();
            write_csv(&traj, &mut buf).map_err(|e| Error::io("<stdout>", e))?;
            write_text(None, &String::from_utf8_lossy(&buf))?;
        }
    }
    if let Some(path) = &args.truth {
        let truth = json!({
            "change_points": change_points,
            "labels": spec.labels(),
            "seed": spec.seed,
        });
        write_text(Some(path), &pretty(&truth))?;
    }
    Ok(())
}

fn calibration_key(
    n: usize,
    k: usize,
    c: Option<usize>,
    c_star: Option<usize>,
    alpha: f64,
    variant: Variant,
    replicates: usize,
) -> CalibrationKey {
    let c = c.unwrap_or_else(|| default_c(k));
    CalibrationKey {
        c,
        c_star: c_star.unwrap_or_else(|| default_c_star(c)),
        alpha,
        replicates,
        ..CalibrationKey::with_defaults(n, k, variant)
    }
}

fn stats(ctx: &Context, args: &StatsArgs) -> Result<()> {
    let traj = load_csv(&args.input)?;
    let mut summary = json!({
        "n_steps": traj.n_steps(),
        "delta": traj.grid().delta(),
        "dim": traj.dim(),
        "sigma2": estimate_sigma2(&traj, traj.full_segment())?,
        "T": statistic_t(&traj)?,
    });
    if let Some(k) = args.k {
        let variant = Variant::from(args.variant);
        let key = calibration_key(
            traj.n_steps(),
            k,
            None,
            None,
            args.alpha,
            variant,
            args.replicates,
        );
        let thresholds = ctx.open_cache()?.thresholds(&key)?;
        let stats = sliding_stats(&traj, k, thresholds)?;
        summary["k"] = json!(k);
        summary["thresholds"] = json!(thresholds);
        summary["potential_change_points"] = json!(stats.q.iter().filter(|&&q| q != 0).count());
        if let Some(path) = &args.windows {
            write_stats_csv(&stats, path)?;
        }
    }
    if let (Some(max_lag), Some(path)) = (args.max_lag, &args.msd) {
        let mut text = String::from("lag,time_lag,msd\n");
        for p in empirical_msd(&traj, max_lag)? {
            text.push_str(&format!("{},{},{}\n", p.lag, p.time_lag, p.msd));
        }
        write_text(Some(path), &text)?;
    }
    write_text(None, &pretty(&summary))
}

fn write_stats_csv(stats: &diffswitch::statistics::SlidingStats, path: &Path) -> Result<()> {
    let mut text = String::from("i,B,A,Q\n");
    for (i, b, a, q) in stats.rows() {
        text.push_str(&format!("{i},{b},{a},{q}\n"));
    }
    write_text(Some(path), &text)
}

fn calibrate_cmd(ctx: &Context, args: &CalibrateArgs) -> Result<()> {
    let mut cache = ctx.open_cache()?;
    let seed = DEFAULT_SEED;
    let value = if args.segments {
        let q = SegmentQuantiles::from_source(&mut cache, args.alpha, args.replicates, seed)?;
        json!({
            "alpha": q.alpha,
            "segments": q.entries.iter().map(|(n, p)| json!({"n": n, "q1": p.gamma1, "q2": p.gamma2})).collect::<Vec<_>>(),
        })
    } else {
        let (n, k) = match (args.n, args.k) {
            (Some(n), Some(k)) => (n, k),
            _ => {
                return Err(Error::InvalidParam(
                    "calibrate needs --n and --k (or --segments)".into(),
                ))
            }
        };
        let key = calibration_key(
            n,
            k,
            args.c,
            args.c_star,
            args.alpha,
            args.variant.into(),
            args.replicates,
        );
        let pair = cache.thresholds(&key)?;
        json!({"key": key, "gamma1": pair.gamma1, "gamma2": pair.gamma2})
    };
    ctx.log(format!(
        "{} calibration(s) run, cache {}",
        cache.calibrations_run(),
        ctx.cache.display()
    ));
    write_text(None, &pretty(&value))
}

fn detect_cmd(ctx: &Context, args: &DetectArgs) -> Result<()> {
    let traj = load_csv(&args.input)?;
    let n = traj.n_steps();
    let key = calibration_key(
        n,
        args.k,
        args.c,
        args.c_star,
        args.alpha,
        args.variant.into(),
        args.replicates,
    );
    let mut cache = ctx.open_cache()?;
    let thresholds = cache.thresholds(&key)?;
    let config = DetectionConfig {
        alpha: args.alpha,
        ..DetectionConfig::new(args.k, thresholds).with_cluster(key.c, key.c_star)
    };
    let quantiles = if args.label {
        Some(SegmentQuantiles::from_source(
            &mut cache,
            args.alpha,
            args.replicates,
            DEFAULT_SEED,
        )?)
    } else {
        None
    };
    ctx.log(format!(
        "thresholds {:.4} / {:.4}",
        thresholds.gamma1, thresholds.gamma2
    ));
    let report = run_procedure(&traj, &config, quantiles.as_ref())?;

    let clusters: Vec<_> = report
        .clusters
        .iter()
        .zip(&report.change_points)
        .map(|(c, &argmax)| json!({"start": c.start, "end": c.end, "argmax": argmax}))
        .collect();
    let segments: Vec<_> = if args.label {
        report.merged_labels.iter().map(|s| json!(s)).collect()
    } else {
        segments_between(n, &report.change_points)
            .iter()
            .map(|s| json!({"start": s.start, "end": s.end, "label": null, "T": null}))
            .collect()
    };
    let mut value = json!({
        "change_points": report.change_points,
        "clusters": clusters,
        "segments": segments,
        "thresholds": thresholds,
        "config": {"k": config.k, "c": config.c, "c_star": config.c_star, "alpha": config.alpha},
    });
    if args.label {
        value["merged_change_points"] = json!(report.merged_change_points);
        value["raw_segments"] = json!(report.raw_labels);
    }
    if let Some(path) = &args.stats_out {
        write_stats_csv(&sliding_stats(&traj, config.k, thresholds)?, path)?;
    }
    write_text(args.out.as_deref(), &pretty(&value))
}

fn bench_cmd(ctx: &Context, args: &BenchArgs) -> Result<()> {
    let mut cache = ctx.open_cache()?;
    let formats = [
        ReportFormat::Json,
        ReportFormat::Csv,
        ReportFormat::Markdown,
    ];
    if let Some(dir) = &args.out {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let emit = |write: &dyn Fn(ReportFormat, &Path) -> Result<()>,
                render: &dyn Fn(ReportFormat) -> Result<String>| {
        match &args.out {
            Some(dir) => {
                for f in formats {
                    let path = dir.join(format!("report.{}", f.extension()));
                    write(f, &path)?;
                    ctx.log(format!("wrote {}", path.display()));
                }
                Ok(())
            }
            None => write_text(None, &render(ctx.format.into())?),
        }
    };

    if args.type1 {
        let spec = Type1Spec {
            ns: args.ns.clone(),
            ks: args.ks.clone(),
            variants: vec![Variant::Strict, Variant::Relaxed],
            replicates: args.replicates,
            seed: derive_seed(ctx.seed(), 1),
            alpha: args.alpha,
            calibration_replicates: args.calibration_replicates,
            calibration_seed: DEFAULT_SEED,
        };
        let report = run_type1_experiment(&spec, &mut cache)?;
        return emit(&|f, p| export_type1_report(&report, f, p), &|f| {
            Ok(render_type1_report(&report, f))
        });
    }

    let spec = ExperimentSpec {
        variant: args.variant.into(),
        alpha: args.alpha,
        label: args.label,
        calibration_replicates: args.calibration_replicates,
        external: args.external.as_ref().map(|program| ExternalDetector {
            program: program.clone(),
            args: Vec::new(),
        }),
        ..ExperimentSpec::new(
            scenario_template(&args.scenario)?,
            args.sweep.clone(),
            args.ks.clone(),
            args.replicates,
            ctx.seed(),
        )
    };
    ctx.log(format!(
        "{} cells x {} replicates, seed {}",
        spec.params.len() * spec.ks.len(),
        spec.replicates,
        spec.seed
    ));
    let report = run_experiment(&spec, &mut cache)?;
    for cell in &report.cells {
        if cell.failures > 0 {
            eprintln!(
                "warning: {} failed replicate(s) at ({}, {})",
                cell.failures, cell.param, cell.k
            );
        }
    }
    emit(&|f, p| export_report(&report, f, p), &|f| {
        render_report(&report, f)
    })
}

fn run(cli: Cli, seed: Option<u64>) -> Result<()> {
    if let Some(threads) = cli.global.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| Error::InvalidParam(format!("thread pool: {e}")))?;
    }
    let ctx = Context {
        seed,
        cache: cli.global.cache,
        verbose: cli.global.verbose,
        format: cli.global.format,
    };
    if let Some(seed) = seed {
        ctx.log(format!("seed {seed}"));
    }
    match &cli.command {
        Command::Simulate(a) => simulate(&ctx, a),
        Command::Stats(a) => stats(&ctx, a),
        Command::Calibrate(a) => calibrate_cmd(&ctx, a),
        Command::Detect(a) => detect_cmd(&ctx, a),
        Command::Bench(a) => bench_cmd(&ctx, a),
    }
}

fn main() -> ExitCode {
    let version: &'static str = Box::leak(
        format!("{VERSION} (threshold cache schema {CACHE_SCHEMA_VERSION})").into_boxed_str(),
    );
    let matches = Cli::command().version(version).get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    let seed = match parse_seed(cli.global.seed.as_deref()) {
        Ok(seed) => seed,
        Err(msg) => Cli::command()
            .error(clap::error::ErrorKind::InvalidValue, msg)
            .exit(),
    };
    match run(cli, seed) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.name());
            ExitCode::from(1)
        }
    }
}
