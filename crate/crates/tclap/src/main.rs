use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tclap::checkpoint::load_checkpoint;
use tclap::config::RunConfig;
use tclap::pipeline::{self, EvalSelection, TrainOptions};
use tclap::report::{emit_report, Report};
use tclap::{Error, Result};
use tclap_core::trainer::Ratio;

/// Temporal-contrastive language-audio workbench: synthesize corpora,
/// train dual encoders, and evaluate retrieval, zero-shot and T-Classify.
#[derive(Debug, Parser)]
#[command(name = "tclap", version, allow_negative_numbers = true)]
struct Cli {
    /// TOML run configuration; omitted fields take their defaults.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Root seed (overrides the config file).
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,

    /// Output directory [default: <out-root>/<command>].
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Parent of the default output directories.
    #[arg(long, global = true, env = "TCLAP_OUT_ROOT", default_value = "runs", value_name = "DIR")]
    out_root: PathBuf,

    #[command(flatten)]
    overrides: Overrides,

    #[command(subcommand)]
    command: Command,
}

/// Training overrides; each replaces the matching config field.
#[derive(Debug, Args)]
struct Overrides {
    /// Optimizer steps.
    #[arg(long, global = true)]
    steps: Option<u64>,
    /// Examples per batch.
    #[arg(long, global = true)]
    batch_size: Option<usize>,
    /// Post-warm-up learning rate.
    #[arg(long, global = true)]
    base_lr: Option<f64>,
    /// Linear warm-up length in steps.
    #[arg(long, global = true)]
    warmup_steps: Option<u64>,
    /// Steps between periodic checkpoints.
    #[arg(long, global = true)]
    checkpoint_every: Option<u64>,
    /// Weight of the temporal loss.
    #[arg(long, global = true)]
    lambda: Option<f64>,
    /// Share of each batch drawn from the temporal pool, e.g. "1/5".
    #[arg(long, global = true)]
    temporal_fraction: Option<Ratio>,
}

#[derive(Debug, Args)]
struct DataArg {
    /// Corpus directory written by `synth`.
    #[arg(long, value_name = "DIR")]
    data: PathBuf,
}

#[derive(Debug, Args)]
struct ModelArgs {
    #[command(flatten)]
    data: DataArg,
    /// Checkpoint to evaluate.
    #[arg(long, value_name = "PATH")]
    checkpoint: PathBuf,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build the catalog and the train/test manifests.
    Synth,
    /// Train on a synthesized corpus.
    Train {
        #[command(flatten)]
        data: DataArg,
        /// Continue from the newest checkpoint in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Retrieval recall@k and zero-shot classification.
    Eval(ModelArgs),
    /// T-Classify in both directions.
    Tclassify(ModelArgs),
    /// Finite-difference check of the full training loss.
    Gradcheck,
    /// Synth, train, train a lambda_l = 0 control, evaluate all.
    Repro,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Synth => "synth",
            Command::Train { .. } => "train",
            Command::Eval(_) => "eval",
            Command::Tclassify(_) => "tclassify",
            Command::Gradcheck => "gradcheck",
            Command::Repro => "repro",
        }
    }
}

fn effective_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let o = &cli.overrides;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(v) = o.steps {
        cfg.train.steps = v;
    }
    if let Some(v) = o.batch_size {
        cfg.train.batch_size = v;
    }
    if let Some(v) = o.base_lr {
        cfg.train.base_lr = v;
    }
    if let Some(v) = o.warmup_steps {
        cfg.train.warmup_steps = v;
    }
    if let Some(v) = o.checkpoint_every {
        cfg.train.checkpoint_every = v;
    }
    if let Some(v) = o.lambda {
        cfg.loss.lambda_l = v;
    }
    if let Some(v) = o.temporal_fraction {
        cfg.train.temporal_fraction = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_report(report: &Report, out: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let path = out.join(pipeline::REPORT_FILE);
    emit_report(report, &path)?;
    Ok(path)
}

fn evaluate(cfg: &RunConfig, args: &ModelArgs, which: EvalSelection, command: &str, out: &Path) -> Result<()> {
    let data = pipeline::load_corpus(&args.data.data)?;
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let label = args.checkpoint.display().to_string();
    let model = pipeline::evaluate_checkpoint(cfg, &ckpt, &data, &label, which)?;
    if let Some(z) = &model.zero_shot {
        if !z.unknown_tokens.is_empty() {
            eprintln!("warning: prompt tokens missing from the vocabulary: {:?}", z.unknown_tokens);
        }
    }
    let report = Report::new(command, cfg, vec![model]);
    let path = write_report(&report, out)?;
    print!("{}", report.summary());
    println!("report: {}", path.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let cfg = effective_config(&cli)?;
    let out = cli.out.clone().unwrap_or_else(|| cli.out_root.join(cli.command.name()));
    match &cli.command {
        Command::Synth => {
            let data = pipeline::synth_corpus(&cfg)?;
            pipeline::write_corpus(&cfg, &data, &out)?;
            for (name, n) in pipeline::corpus_counts(&data) {
                println!("{name}: {n} records");
            }
            println!("corpus: {}", out.display());
        }
        Command::Train { data, resume } => {
            let corpus = pipeline::load_corpus(&data.data)?;
            let opts = TrainOptions {
                resume: *resume,
                stop_after: None,
            };
            let outcome = pipeline::train(&cfg, &corpus, &out, opts)?;
            match outcome.last {
                Some(m) => println!(
                    "step {}: l_c {:.6} l_t {:.6} l_train {:.6} (temporal rows {})",
                    m.step + 1,
                    m.l_c,
                    m.l_t,
                    m.l_train,
                    m.temporal_count
                ),
                None => println!("no steps run"),
            }
            if let Some(p) = outcome.checkpoint_path {
                println!("checkpoint: {}", p.display());
            }
        }
        Command::Eval(args) => {
            let which = EvalSelection {
                t_classify: false,
                ..EvalSelection::ALL
            };
            evaluate(&cfg, args, which, "eval", &out)?;
        }
        Command::Tclassify(args) => {
            let which = EvalSelection {
                t_classify: true,
                retrieval: false,
                zero_shot: false,
            };
            evaluate(&cfg, args, which, "tclassify", &out)?;
        }
        Command::Gradcheck => {
            let report = pipeline::gradcheck(&cfg)?;
            println!(
                "max relative error {:.3e} over {} coordinates (threshold {:.0e})",
                report.max_rel_error,
                report.coords_checked,
                pipeline::GRADCHECK_THRESHOLD
            );
            pipeline::require_gradcheck(&report)?;
        }
        Command::Repro => {
            let report = pipeline::repro(&cfg, &out)?;
            print!("{}", report.summary());
            println!("report: {}", out.join(pipeline::REPORT_FILE).display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
