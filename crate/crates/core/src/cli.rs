//! Command-line front end. Exit codes: 0 success, 1 invalid input or
//! domain failure, 2 internal error, 64 usage error.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, CommandFactory, Parser, Subcommand};

use crate::audit::{self, AuditReport, CalibrationResult, GateStatistic};
use crate::composite::compose_projected;
use crate::config::{self, RunConfig, SimDataMode};
use crate::ingest::{self, Ingested};
use crate::model::{validate_dataset, LoggedSample, WeightConfig};
use crate::report::{self, OutputSet};
use crate::scorers::{score_all, ScoredBatch};
use crate::seed::derive_seed;
use crate::sim::{run_experiment, OracleSpec, SimConfig, SimData};
use crate::synth::{generate_synthetic, SyntheticSpec};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_INTERNAL: i32 = 2;
pub const EXIT_USAGE: i32 = 64;

#[derive(Debug, Parser)]
#[command(name = "mdqs", version, about = "Multi-dimensional quality scoring, reliability audit and consensus simulation")]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args, Clone, Default)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Input JSONL dataset (overrides the config).
    #[arg(long)]
    input: Option<PathBuf>,
    /// Output directory (overrides the config; default `out`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed (overrides MDQS_SEED and the config).
    #[arg(long)]
    seed: Option<u64>,
    /// Treat malformed input lines as fatal.
    #[arg(long)]
    strict: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check dataset records against the schema invariants.
    Validate(Common),
    /// Compute normalized dimension scores and the composite.
    Score(Common),
    /// Correlate dimensions, evaluators, baselines and composites with the reference.
    Audit(Common),
    /// Correlation of every weight variant's composite with the reference.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// Variant preset (`paper`/`standard` or `none`).
        #[arg(long)]
        preset: Option<String>,
    },
    /// Drop dimensions whose correlation gate falls below the threshold.
    Calibrate {
        #[command(flatten)]
        common: Common,
        #[arg(long, allow_hyphen_values = true)]
        threshold: Option<f64>,
        /// pearson, spearman or taskwise_min.
        #[arg(long)]
        gate: Option<GateStatistic>,
        /// Also calibrate each task family separately.
        #[arg(long)]
        per_task: bool,
    },
    /// Run the consensus simulation grid.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Replay the input dataset or use synthetic latent qualities.
        #[arg(long, value_parser = parse_mode)]
        data: Option<SimDataMode>,
        #[arg(long)]
        rounds: Option<usize>,
    },
    /// Generate a synthetic dataset with planted correlations.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 2000)]
        n: usize,
        #[arg(long)]
        qa_fraction: Option<f64>,
        #[arg(long)]
        producers: Option<usize>,
        #[arg(long)]
        evaluators: Option<usize>,
    },
    /// Score, audit, ablate, calibrate and simulate in one run.
    Report(Common),
}

fn parse_mode(s: &str) -> Result<SimDataMode, String> {
    match s {
        "replay" => Ok(SimDataMode::Replay),
        "oracle" => Ok(SimDataMode::Oracle),
        _ => Err(format!("expected `replay` or `oracle`, got `{s}`")),
    }
}

#[derive(Debug)]
enum CliError {
    Failure(String),
    Internal(String),
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Failure(_) => EXIT_FAILURE,
            CliError::Internal(_) => EXIT_INTERNAL,
        }
    }
}

macro_rules! failure_from {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Failure(e.to_string())
            }
        }
    )*};
}

failure_from!(
    crate::config::ConfigError,
    crate::ingest::IngestError,
    crate::scorers::ScoreError,
    crate::composite::CompositeError,
    crate::audit::AuditError,
    crate::sim::SimError,
    crate::synth::SynthError
);

impl From<report::ReportError> for CliError {
    fn from(e: report::ReportError) -> Self {
        CliError::Internal(e.to_string())
    }
}

type CliResult<T> = Result<T, CliError>;

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = e.print();
                    EXIT_OK
                }
                _ => {
                    let _ = e.print();
                    eprintln!("\n{}", Cli::command().render_help());
                    EXIT_USAGE
                }
            };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();

    match std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| dispatch(cli.command))) {
        Ok(Ok(summary)) => {
            println!("{summary}");
            EXIT_OK
        }
        Ok(Err(e)) => {
            eprintln!("error: {}", match &e {
                CliError::Failure(m) | CliError::Internal(m) => m,
            });
            e.code()
        }
        Err(_) => {
            eprintln!("error: internal error");
            EXIT_INTERNAL
        }
    }
}

/// Loaded configuration plus the resolved command-line overrides.
struct Context {
    cfg: RunConfig,
    common: Common,
    out: PathBuf,
}

impl Context {
    fn new(common: Common) -> CliResult<Self> {
        let cfg = match &common.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        let out = common
            .out
            .clone()
            .or_else(|| cfg.out.clone())
            .unwrap_or_else(|| PathBuf::from("out"));
        Ok(Self { cfg, common, out })
    }

    fn input(&self) -> CliResult<PathBuf> {
        self.common
            .input
            .clone()
            .or_else(|| self.cfg.input.clone())
            .ok_or_else(|| CliError::Failure("no input dataset (use --input or `input` in the config)".into()))
    }

    fn seed(&self) -> CliResult<Option<u64>> {
        Ok(self.cfg.resolve_seed(self.common.seed)?)
    }

    fn require_seed(&self) -> CliResult<u64> {
        self.seed()?.ok_or_else(|| config::ConfigError::MissingSeed.into())
    }

    fn output(&self) -> CliResult<OutputSet> {
        Ok(OutputSet::create(&self.out)?)
    }
}

fn ingest_into(ctx: &Context, out: &mut OutputSet) -> CliResult<Vec<LoggedSample>> {
    let path = ctx.input()?;
    let Ingested { samples, rejected } = ingest::read_jsonl(&path, ctx.common.strict)?;
    if !rejected.is_empty() {
        out.jsonl("ingest_errors.jsonl", "rejected input lines", &rejected)?;
    }
    Ok(samples)
}

/// Ingests and checks every record invariant.
fn load_valid(ctx: &Context, out: &mut OutputSet) -> CliResult<Vec<LoggedSample>> {
    let samples = ingest_into(ctx, out)?;
    let report = validate_dataset(&samples);
    if !report.is_clean() {
        out.json("validation.json", "validation report", &report)?;
        let first = &report.issues[0];
        return Err(CliError::Failure(format!(
            "{} invalid record(s); first: sample `{}` field `{}`: {}",
            report.invalid, first.sample_id, first.field, first.message
        )));
    }
    Ok(samples)
}

/// Uses ingested dimension scores when every sample carries all active
/// dimensions, and scores the batch otherwise.
fn prepare(samples: Vec<LoggedSample>, cfg: &RunConfig, force: bool) -> CliResult<ScoredBatch> {
    let scoring = cfg.scoring_config()?;
    let active = scoring.weights.dims();
    let ingested = !samples.is_empty()
        && samples
            .iter()
            .all(|s| s.dims.as_ref().is_some_and(|d| active.iter().all(|k| d.get(*k).is_some())));
    if ingested && !force {
        log::info!("using ingested dimension scores");
        return Ok(ScoredBatch {
            samples,
            stats: Default::default(),
        });
    }
    config::check_columns(&samples, &scoring)?;
    Ok(score_all(&samples, &scoring)?)
}

fn composite_map(samples: &[LoggedSample], w: &WeightConfig) -> CliResult<BTreeMap<String, f64>> {
    let values = compose_projected(samples, w)?;
    Ok(samples.iter().map(|s| s.sample_id.clone()).zip(values).collect())
}

fn run_calibration(
    samples: &[LoggedSample],
    cfg: &RunConfig,
    w: &WeightConfig,
) -> CliResult<(CalibrationResult, Option<BTreeMap<String, CalibrationResult>>)> {
    let c = &cfg.calibration;
    let result = audit::calibrate(samples, w, c.threshold, c.gate)?;
    let per_task = if c.per_task {
        Some(audit::calibrate_per_task(samples, w, c.threshold, c.gate)?)
    } else {
        None
    };
    Ok((result, per_task))
}

fn simulate_grid(
    ctx: &Context,
    samples: Option<&[LoggedSample]>,
    w: &WeightConfig,
    calibrated: Option<&WeightConfig>,
    out: &mut OutputSet,
) -> CliResult<(Vec<SimConfig>, usize)> {
    let seed = ctx.require_seed()?;
    let sim = &ctx.cfg.sim;
    let grid = config::build_grid(sim, seed, w, calibrated)?;
    let oracle;
    let data = match (sim.data, samples) {
        (SimDataMode::Replay, Some(s)) => SimData::Replay(s),
        (SimDataMode::Replay, None) => return Err(CliError::Failure("replay simulation needs an input dataset".into())),
        (SimDataMode::Oracle, _) => {
            oracle = OracleSpec::spread(sim.oracle.producers, sim.oracle.queries, derive_seed(seed, "oracle"));
            SimData::Oracle(&oracle)
        }
    };
    let results = run_experiment(&grid, data);
    let mut outcomes = Vec::with_capacity(results.len());
    for (c, r) in grid.iter().zip(results) {
        outcomes.push(r.map_err(|e| CliError::Failure(format!("config {}: {e}", c.config_id)))?);
    }
    report::emit_sim(out, &grid, &outcomes)?;
    let n = grid.len();
    Ok((grid, n))
}

fn fmt_corr(x: Option<f64>) -> String {
    x.map(|v| format!("{v:.4}")).unwrap_or_else(|| "undefined".into())
}

fn dispatch(command: Command) -> CliResult<String> {
    match command {
        Command::Validate(common) => {
            let ctx = Context::new(common)?;
            let mut out = ctx.output()?;
            let samples = ingest_into(&ctx, &mut out)?;
            let report = validate_dataset(&samples);
            out.json("validation.json", "validation report", &report)?;
            let summary = format!("validate: {} valid, {} invalid", report.valid, report.invalid);
            out.finish("validate", &summary)?;
            if report.is_clean() {
                Ok(summary)
            } else {
                Err(CliError::Failure(summary))
            }
        }
        Command::Score(common) => {
            let ctx = Context::new(common)?;
            let mut out = ctx.output()?;
            let samples = load_valid(&ctx, &mut out)?;
            let w = ctx.cfg.weight_config()?;
            let scored = prepare(samples, &ctx.cfg, true)?;
            let composite = composite_map(&scored.samples, &w)?;
            report::emit_scores(&mut out, &scored, &composite)?;
            report::emit_weights(&mut out, "weights.json", &w)?;
            let summary = format!("score: {} samples, {} dimensions", scored.samples.len(), w.len());
            out.finish("score", &summary)?;
            Ok(summary)
        }
        Command::Audit(common) => {
            let ctx = Context::new(common)?;
            let mut out = ctx.output()?;
            let samples = load_valid(&ctx, &mut out)?;
            let w = ctx.cfg.weight_config()?;
            let scored = prepare(samples, &ctx.cfg, false)?;
            let composite = composite_map(&scored.samples, &w)?;
            let composites = BTreeMap::from([(w.name.clone(), composite.clone())]);
            let report = audit::audit(&scored.samples, &composites)?;
            report::emit_audit(&mut out, &report, &scored.samples, &composite)?;
            let summary = format!(
                "audit: {} samples, {} blocks, composite pearson {}",
                scored.samples.len(),
                report.blocks.len(),
                fmt_corr(composite_pearson(&report, &w.name))
            );
            out.finish("audit", &summary)?;
            Ok(summary)
        }
        Command::Ablate { common, preset } => {
            let mut ctx = Context::new(common)?;
            if let Some(p) = preset {
                ctx.cfg.audit.preset = p;
            }
            let mut out = ctx.output()?;
            let samples = load_valid(&ctx, &mut out)?;
            let w = ctx.cfg.weight_config()?;
            let scored = prepare(samples, &ctx.cfg, false)?;
            let rows = audit::ablation_grid(&scored.samples, &w, &ctx.cfg.ablation_variants()?)?;
            report::emit_ablation(&mut out, &rows)?;
            let summary = format!("ablate: {} variants over {} samples", rows.len(), scored.samples.len());
            out.finish("ablate", &summary)?;
            Ok(summary)
        }
        Command::Calibrate {
            common,
            threshold,
            gate,
            per_task,
        } => {
            let mut ctx = Context::new(common)?;
            if let Some(t) = threshold {
                ctx.cfg.calibration.threshold = t;
            }
            if let Some(g) = gate {
                ctx.cfg.calibration.gate = g;
            }
            ctx.cfg.calibration.per_task |= per_task;
            let mut out = ctx.output()?;
            let samples = load_valid(&ctx, &mut out)?;
            let w = ctx.cfg.weight_config()?;
            let scored = prepare(samples, &ctx.cfg, false)?;
            let (result, per_task) = run_calibration(&scored.samples, &ctx.cfg, &w)?;
            report::emit_calibration(&mut out, &result, per_task.as_ref())?;
            let summary = format!(
                "calibrate: removed [{}], pearson {} -> {}",
                result.removed.iter().map(|d| d.as_str()).collect::<Vec<_>>().join(", "),
                fmt_corr(result.before.pearson),
                fmt_corr(result.after.pearson)
            );
            out.finish("calibrate", &summary)?;
            Ok(summary)
        }
        Command::Simulate { common, data, rounds } => {
            let mut ctx = Context::new(common)?;
            if let Some(d) = data {
                ctx.cfg.sim.data = d;
            }
            if let Some(r) = rounds {
                ctx.cfg.sim.rounds = r;
            }
            let mut out = ctx.output()?;
            let w = ctx.cfg.weight_config()?;
            let (samples, calibrated) = if ctx.cfg.sim.data == SimDataMode::Replay {
                let samples = load_valid(&ctx, &mut out)?;
                let scored = prepare(samples, &ctx.cfg, false)?;
                let calibrated = if ctx.cfg.sim.quality_signals.iter().any(|s| s == "composite:calibrated") {
                    Some(run_calibration(&scored.samples, &ctx.cfg, &w)?.0.calibrated_config)
                } else {
                    None
                };
                (Some(scored.samples), calibrated)
            } else {
                (None, None)
            };
            let (_, n) = simulate_grid(&ctx, samples.as_deref(), &w, calibrated.as_ref(), &mut out)?;
            let summary = format!("simulate: {n} configurations, {} rounds each", ctx.cfg.sim.rounds);
            out.finish("simulate", &summary)?;
            Ok(summary)
        }
        Command::Synth {
            common,
            n,
            qa_fraction,
            producers,
            evaluators,
        } => {
            let ctx = Context::new(common)?;
            let seed = ctx.require_seed()?;
            let mut spec = SyntheticSpec::sign_pattern(n, seed);
            if let Some(f) = qa_fraction {
                spec.qa_fraction = f;
            }
            if let Some(p) = producers {
                spec.n_producers = p;
            }
            if let Some(e) = evaluators {
                spec.n_evaluators = e;
            }
            let samples = generate_synthetic(&spec)?;
            let mut out = ctx.output()?;
            out.jsonl("synthetic.jsonl", "synthetic dataset", &samples)?;
            out.json("synthetic_spec.json", "synthetic dataset spec", &spec)?;
            let summary = format!("synth: {} samples, seed {seed}", samples.len());
            out.finish("synth", &summary)?;
            Ok(summary)
        }
        Command::Report(common) => {
            let ctx = Context::new(common)?;
            let mut out = ctx.output()?;
            let samples = load_valid(&ctx, &mut out)?;
            let w = ctx.cfg.weight_config()?;
            let scored = prepare(samples, &ctx.cfg, false)?;
            let composite = composite_map(&scored.samples, &w)?;
            report::emit_scores(&mut out, &scored, &composite)?;

            let (calibration, per_task) = run_calibration(&scored.samples, &ctx.cfg, &w)?;
            let calibrated = calibration.calibrated_config.clone();
            let composites = BTreeMap::from([
                (w.name.clone(), composite.clone()),
                (calibrated.name.clone(), composite_map(&scored.samples, &calibrated)?),
            ]);
            let audit_report = audit::audit(&scored.samples, &composites)?;
            report::emit_audit(&mut out, &audit_report, &scored.samples, &composite)?;
            let rows = audit::ablation_grid(&scored.samples, &w, &ctx.cfg.ablation_variants()?)?;
            report::emit_ablation(&mut out, &rows)?;
            report::emit_calibration(&mut out, &calibration, per_task.as_ref())?;
            let (_, n_sim) = simulate_grid(&ctx, Some(&scored.samples), &w, Some(&calibrated), &mut out)?;

            let summary = format!(
                "report: {} samples, composite pearson {} -> calibrated {}, {} ablation variants, {} simulation configs",
                scored.samples.len(),
                fmt_corr(calibration.before.pearson),
                fmt_corr(calibration.after.pearson),
                rows.len(),
                n_sim
            );
            out.finish("report", &summary)?;
            Ok(summary)
        }
    }
}

fn composite_pearson(report: &AuditReport, name: &str) -> Option<f64> {
    report
        .row(audit::OVERALL, audit::SignalKind::Composite, name)
        .and_then(|r| r.pearson)
}

/// Path of the manifest written by a run into `out`.
pub fn manifest_path(out: &Path) -> PathBuf {
    out.join(report::MANIFEST)
}
