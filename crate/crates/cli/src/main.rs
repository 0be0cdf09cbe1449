use std::path::PathBuf;
use std::process::ExitCode;

use apw::datasets;
use apw::pd::{self, CheckpointSeries};
use apw::runner::config::resolve_output;
use apw::runner::report;
use apw::runner::run::{self, CHECKPOINTS_FILE, CHECKPOINT_LOSSES_FILE, TEST_DATA_FILE, TRAIN_DATA_FILE};
use apw::runner::{run_experiment, verify_dir, ExperimentConfig};
use apw::theory::CheckStatus;
use apw::Error;
use clap::{Args, Parser, Subcommand};

const EXIT_CONFIG: u8 = 1;
const EXIT_VERIFY: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Parser)]
#[command(name = "apw", version, about = "Adaptive per-sample weighting experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the train/test datasets of each configured seed.
    GenData(GenDataArgs),
    /// Run an experiment: every seed is trained and its artifacts written.
    Train(ConfigArgs),
    /// Check the convergence bounds on stored traces or on a fresh run.
    Verify(VerifyArgs),
    /// Detect the phase transition of a checkpoint series.
    Pd(PdArgs),
    /// Render figures and a summary table from experiment directories.
    Report(ReportArgs),
}

/// Config file plus flags that override its keys.
#[derive(Args)]
struct ConfigArgs {
    /// JSON experiment config.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Override any config key, e.g. `--set scheduler.tau=0.3` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Weighting variant, e.g. `vanilla`, `apw-e`, `s-apw-a`, `m-apw-ei`.
    #[arg(long)]
    variant: Option<String>,
    /// Comma-separated seed list.
    #[arg(long)]
    seeds: Option<String>,
    /// Output directory, relative paths resolve under $APW_OUTPUT_ROOT.
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Fixed error threshold `e`.
    #[arg(long)]
    threshold: Option<f64>,
    /// Fixed stabilizer `q`.
    #[arg(long)]
    q: Option<f64>,
    /// Phase threshold `tau`.
    #[arg(long)]
    tau: Option<f64>,
    /// Optimizer iteration cap (L-BFGS).
    #[arg(long)]
    max_iter: Option<usize>,
    /// Epoch count (SGD).
    #[arg(long)]
    epochs: Option<usize>,
}

impl ConfigArgs {
    fn overrides(&self) -> Result<Vec<(String, String)>, Error> {
        let mut out = vec![];
        if let Some(v) = &self.variant {
            out.push(("variant".into(), serde_json::to_string(v)?));
        }
        if let Some(s) = &self.seeds {
            let seeds = parse_seeds(s)?;
            out.push(("seeds".into(), serde_json::to_string(&seeds)?));
        }
        if let Some(d) = &self.output_dir {
            out.push(("output_dir".into(), serde_json::to_string(d)?));
        }
        if let Some(v) = self.threshold {
            out.push(("scheduler.e".into(), format!("{{\"mode\":\"fixed\",\"value\":{v}}}")));
        }
        if let Some(v) = self.q {
            out.push(("scheduler.q".into(), format!("{{\"mode\":\"fixed\",\"value\":{v}}}")));
        }
        if let Some(v) = self.tau {
            out.push(("scheduler.tau".into(), v.to_string()));
        }
        if let Some(v) = self.max_iter {
            out.push(("optimizer.max_iter".into(), v.to_string()));
        }
        if let Some(v) = self.epochs {
            out.push(("optimizer.epochs".into(), v.to_string()));
        }
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
            out.push((k.trim().to_string(), v.to_string()));
        }
        Ok(out)
    }

    fn load(&self, defaults: &[(String, String)]) -> Result<ExperimentConfig, Error> {
        ExperimentConfig::assemble_with_defaults(self.config.as_deref(), defaults, &self.overrides()?)
    }
}

fn parse_seeds(raw: &str) -> Result<Vec<u64>, Error> {
    raw.split(',')
        .map(|s| {
            s.trim()
                .parse::<u64>()
                .map_err(|_| Error::Config(format!("bad seed {s:?} in --seeds")))
        })
        .collect()
}

#[derive(Args)]
struct GenDataArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Directory receiving one `seed-N` folder per seed.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct VerifyArgs {
    /// Experiment or seed directory to re-check. Without it, the config is run first.
    run_dir: Option<PathBuf>,
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Print the full bound reports as JSON.
    #[arg(long)]
    json: bool,
    /// Also list passing checks.
    #[arg(long)]
    verbose: bool,
}

#[derive(Args)]
struct PdArgs {
    /// Checkpoint file, or a seed directory containing one.
    checkpoints: PathBuf,
    /// CSV with a `loss` column, one row per checkpoint.
    #[arg(long)]
    losses: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Experiment directories (each with a summary.json).
    #[arg(required = true)]
    dirs: Vec<PathBuf>,
    /// Destination directory.
    #[arg(long, default_value = "report")]
    out: PathBuf,
}

/// Failure carrying its exit status.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config(_) | Error::InvalidInput(_) | Error::Parse { .. } | Error::MissingArtifact(_) => EXIT_CONFIG,
            _ => EXIT_RUNTIME,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn gen_data(args: &GenDataArgs) -> Result<(), Failure> {
    let defaults = [("variant".to_string(), "\"vanilla\"".to_string()), ("seeds".to_string(), "[0]".to_string())];
    let cfg = args.cfg.load(&defaults)?;
    let root = resolve_output(&args.out);
    for &seed in &cfg.seeds {
        let data = run::build_data(&cfg, seed)?;
        let dir = root.join(run::seed_dir_name(seed));
        std::fs::create_dir_all(&dir).map_err(Error::from)?;
        datasets::write_csv(&data.train, &dir.join(TRAIN_DATA_FILE))?;
        if let Some(test) = &data.test {
            datasets::write_csv(test, &dir.join(TEST_DATA_FILE))?;
        }
        println!("{}", dir.display());
    }
    Ok(())
}

fn train(args: &ConfigArgs) -> Result<PathBuf, Failure> {
    let cfg = args.load(&[])?;
    let out = cfg.resolved_output_dir();
    let summary = run_experiment(&cfg, &out)?;
    for s in &summary.seeds {
        match &s.error {
            None => println!("seed {}: ok", s.seed),
            Some(e) => eprintln!("seed {}: {e}", s.seed),
        }
    }
    if let Some(m) = summary.eprop_test.or(summary.eprop_train) {
        println!("eprop: {:.4} +/- {:.4} over {} seeds", m.mean, m.std, m.n);
    }
    println!("{}", out.display());
    if !summary.all_ok() {
        return Err(Failure {
            code: EXIT_RUNTIME,
            message: format!("seeds failed: {:?}", summary.failed_seeds),
        });
    }
    Ok(out)
}

fn verify(args: &VerifyArgs) -> Result<(), Failure> {
    let dir = match &args.run_dir {
        Some(d) => d.clone(),
        None => train(&args.cfg)?,
    };
    let reports = verify_dir(&dir)?;
    let mut failed = 0;
    for (seed_dir, report) in &reports {
        if args.json {
            println!("{}", serde_json::to_string_pretty(report).map_err(Error::from)?);
        }
        let names: std::collections::BTreeSet<&str> = report.checks.iter().map(|c| c.name.as_str()).collect();
        println!("{}", seed_dir.display());
        for name in names {
            let n = |s| report.count(name, s);
            println!(
                "  {name:<24} pass {:>4}  fail {:>4}  flagged {:>4}  n/a {:>4}",
                n(CheckStatus::Pass),
                n(CheckStatus::Fail),
                n(CheckStatus::Flagged),
                n(CheckStatus::NotApplicable)
            );
        }
        for c in report.checks.iter().filter(|c| args.verbose || c.status == CheckStatus::Fail) {
            println!(
                "  {:?} {} epoch={} lhs={:e} rhs={:e}{}",
                c.status,
                c.name,
                c.epoch.map_or_else(|| "-".into(), |e| e.to_string()),
                c.lhs,
                c.rhs,
                c.note.as_deref().map_or_else(String::new, |n| format!(" ({n})"))
            );
        }
        failed += usize::from(!report.passed());
    }
    if failed > 0 {
        return Err(Failure {
            code: EXIT_VERIFY,
            message: format!("{failed} of {} traces violate a bound", reports.len()),
        });
    }
    println!("all bounds hold");
    Ok(())
}

fn load_series(args: &PdArgs) -> Result<CheckpointSeries, Error> {
    let (bin, default_losses) = if args.checkpoints.is_dir() {
        (
            args.checkpoints.join(CHECKPOINTS_FILE),
            Some(args.checkpoints.join(CHECKPOINT_LOSSES_FILE)),
        )
    } else {
        (args.checkpoints.clone(), None)
    };
    if !bin.is_file() {
        return Err(Error::MissingArtifact(bin));
    }
    let losses = match args.losses.clone().or(default_losses.filter(|p| p.exists())) {
        Some(p) => Some(pd::read_loss_column(&p)?),
        None => None,
    };
    CheckpointSeries::read_binary(&bin, losses)
}

fn pd_cmd(args: &PdArgs) -> Result<(), Failure> {
    let result = pd::analyze(&load_series(args)?);
    println!("{}", serde_json::to_string_pretty(&result).map_err(Error::from)?);
    Ok(())
}

fn report_cmd(args: &ReportArgs) -> Result<(), Failure> {
    for path in report::report(&args.dirs, &resolve_output(&args.out))? {
        println!("{}", path.display());
    }
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train(a).map(|_| ()),
        Command::Verify(a) => verify(a),
        Command::Pd(a) => pd_cmd(a),
        Command::Report(a) => report_cmd(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_CONFIG) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
