use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use ssrlda::config::{AdaptConfig, Preset};
use ssrlda::dataio::{write_csv, write_svmlight};
use ssrlda::eval::{
    load_pair, proxy_a_distance, run_benchmark, run_sweep, summary_table, write_reports_csv, write_sweep_csv,
    BenchOptions, SweepAxis, SweepGrid, TaskOutcome, DEFAULT_PAD_FOLDS,
};
use ssrlda::pipeline::{normalize, run_variant, write_trace, Variant};
use ssrlda::synthetic::{shifted_gaussian_pair, ShiftedGaussianSpec};

/// Exit status when some tasks or sweep cells failed but the rest finished.
const PARTIAL: u8 = 2;

#[derive(Parser)]
#[command(name = "ssrlda", version, about = "Closed-form stacked denoising domain adaptation")]
struct Cli {
    #[command(flatten)]
    global: GlobalOpts,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GlobalOpts {
    /// Config file, JSON or `key = value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Published hyper-parameters: reuters, spam, newsgroups, office.
    #[arg(long, global = true)]
    preset: Option<String>,
    /// Single override `key=value`, applied after the config file and preset.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Upper bound on concurrent tasks or sweep cells.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    /// Directory for output files; stdout when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Args)]
struct PairArgs {
    /// Labeled source file (`.csv` or svmlight).
    source: PathBuf,
    /// Target file; labels, when present, are used only for scoring.
    target: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Run the pipeline once and report target predictions.
    Solve {
        #[command(flatten)]
        pair: PairArgs,
        /// full, omda_ad or ommda.
        #[arg(long, default_value = "full")]
        variant: String,
    },
    /// Vary one parameter with the others fixed.
    Sweep {
        #[command(flatten)]
        pair: PairArgs,
        /// l, p, beta or lambda.
        #[arg(long)]
        axis: String,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
    },
    /// Run every task of a manifest (`name, source, target, overrides`).
    Bench {
        manifest: PathBuf,
        /// Also run the global-only and local-only variants.
        #[arg(long)]
        ablations: bool,
        #[arg(long, default_value_t = DEFAULT_PAD_FOLDS)]
        folds: usize,
    },
    /// Proxy-A-distance between the two domains' raw features.
    Pad {
        #[command(flatten)]
        pair: PairArgs,
        #[arg(long, default_value_t = DEFAULT_PAD_FOLDS)]
        folds: usize,
    },
    /// Compare the full method against its single-block variants.
    Ablate {
        #[command(flatten)]
        pair: PairArgs,
    },
    /// Write a seeded shifted-Gaussian domain pair as `source.csv` and `target.csv`.
    Synth {
        dir: PathBuf,
        #[arg(long, default_value_t = 200)]
        n: usize,
        #[arg(long, default_value_t = 20)]
        dim: usize,
        /// Write svmlight files instead of CSV.
        #[arg(long)]
        svmlight: bool,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<u8> {
    let g = &cli.global;
    let cfg = base_config(g)?;
    match &cli.command {
        Command::Solve { pair, variant } => solve(g, &cfg, pair, Variant::parse(variant)?),
        Command::Sweep { pair, axis, values } => sweep(g, &cfg, pair, SweepAxis::parse(axis)?, values.clone()),
        Command::Bench {
            manifest,
            ablations,
            folds,
        } => bench(g, cfg, manifest, *ablations, *folds),
        Command::Pad { pair, folds } => pad(g, &cfg, pair, *folds),
        Command::Ablate { pair } => ablate(g, &cfg, pair),
        Command::Synth { dir, n, dim, svmlight } => synth(g.seed, dir, *n, *dim, *svmlight),
    }
}

fn base_config(g: &GlobalOpts) -> Result<AdaptConfig> {
    let mut cfg = match &g.config {
        Some(path) => AdaptConfig::from_path(path)?,
        None => AdaptConfig::default(),
    };
    if let Some(name) = &g.preset {
        Preset::parse(name)?.apply(&mut cfg);
    }
    for kv in &g.overrides {
        let Some((key, value)) = kv.split_once('=') else {
            bail!("override {kv:?} is not of the form key=value");
        };
        cfg.set(key.trim(), value.trim())?;
    }
    if let Some(seed) = g.seed {
        cfg = cfg.with_seed(seed);
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Sends `body` to `<out>/<name>` or, without `--out`, to stdout.
fn emit(g: &GlobalOpts, name: &str, body: &[u8]) -> Result<()> {
    match &g.out {
        Some(dir) => {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            let path = dir.join(name);
            fs::write(&path, body).with_context(|| format!("writing {}", path.display()))?;
            log::info!("wrote {}", path.display());
        }
        None => io::stdout().write_all(body)?,
    }
    Ok(())
}

fn json_bytes(value: &impl serde::Serialize) -> Result<Vec<u8>> {
    let mut body = serde_json::to_vec_pretty(value)?;
    body.push(b'\n');
    Ok(body)
}

fn solve(g: &GlobalOpts, cfg: &AdaptConfig, args: &PairArgs, variant: Variant) -> Result<u8> {
    let pair = load_pair(&args.source, &args.target, cfg)?;
    let out = run_variant(&pair, cfg, variant)?;
    let accuracy = pair
        .held_out_target_labels
        .as_deref()
        .map(|t| out.accuracy(t))
        .transpose()?;
    match g.format {
        Format::Json => emit(
            g,
            "solve.json",
            &json_bytes(&json!({
                "variant": variant.name(),
                "accuracy": accuracy,
                "svm_accuracy": out.initial_accuracy,
                "feature_width": out.model.feature_dim(),
                "predictions": out.predictions,
                "trace": out.trace,
                "config": cfg,
            }))?,
        )?,
        Format::Csv => {
            let mut w = csv_writer();
            w.write_record(["target_row", "prediction"])?;
            for (i, p) in out.predictions.iter().enumerate() {
                w.write_record([i.to_string(), p.to_string()])?;
            }
            emit(g, "predictions.csv", &w.into_inner()?)?;
            if g.out.is_some() {
                let mut trace = Vec::new();
                write_trace(&mut trace, &out.trace)?;
                emit(g, "trace.csv", &trace)?;
            }
        }
    }
    if let Some(a) = accuracy {
        eprintln!("{} target accuracy {:.4}", variant.name(), a);
    }
    Ok(0)
}

fn sweep(g: &GlobalOpts, cfg: &AdaptConfig, args: &PairArgs, axis: SweepAxis, values: Vec<f64>) -> Result<u8> {
    let pair = load_pair(&args.source, &args.target, cfg)?;
    let grid = SweepGrid::new(axis, values)?;
    let rows = run_sweep(&pair, cfg, &grid, g.jobs)?;
    match g.format {
        Format::Json => emit(g, &format!("sweep_{}.json", axis.name()), &json_bytes(&rows)?)?,
        Format::Csv => {
            let mut body = Vec::new();
            write_sweep_csv(&mut body, axis, &rows)?;
            emit(g, &format!("sweep_{}.csv", axis.name()), &body)?;
        }
    }
    let failed = rows.iter().filter(|r| r.error.is_some()).count();
    for r in rows.iter().filter(|r| r.error.is_some()) {
        log::warn!(
            "{} = {}: {}",
            axis.name(),
            r.value,
            r.error.as_deref().unwrap_or_default()
        );
    }
    Ok(if failed > 0 { PARTIAL } else { 0 })
}

fn bench(g: &GlobalOpts, base: AdaptConfig, manifest: &Path, ablations: bool, folds: usize) -> Result<u8> {
    let opts = BenchOptions {
        base,
        jobs: g.jobs,
        ablations,
        pad_folds: folds,
    };
    let outcomes = run_benchmark(manifest, &opts)?;
    match g.format {
        Format::Json => emit(g, "report.json", &json_bytes(&outcomes)?)?,
        Format::Csv => {
            let mut body = Vec::new();
            write_reports_csv(&mut body, &outcomes)?;
            emit(g, "report.csv", &body)?;
        }
    }
    let table = summary_table(&outcomes);
    if let Some(dir) = &g.out {
        fs::write(dir.join("summary.txt"), &table)?;
        print!("{table}");
    }
    let failed = outcomes
        .iter()
        .filter(|o| matches!(o, TaskOutcome::Failed { .. }))
        .count();
    for o in &outcomes {
        if let TaskOutcome::Failed { task, error } = o {
            log::error!("task {task} failed: {error}");
        }
    }
    Ok(if failed > 0 { PARTIAL } else { 0 })
}

fn pad(g: &GlobalOpts, cfg: &AdaptConfig, args: &PairArgs, folds: usize) -> Result<u8> {
    let pair = load_pair(&args.source, &args.target, cfg)?;
    let (mut xs, mut xt) = (pair.source.dense(), pair.target.dense());
    normalize(&mut xs, cfg.normalization);
    normalize(&mut xt, cfg.normalization);
    let svm = ssrlda::classify::SvmParams {
        seed: cfg.seed,
        ..cfg.svm
    };
    let pad = proxy_a_distance(&xs.view(), &xt.view(), folds, &svm)?;
    match g.format {
        Format::Json => emit(g, "pad.json", &json_bytes(&pad)?)?,
        Format::Csv => {
            let mut w = csv_writer();
            w.write_record(["proxy_a_distance", "discriminator_error", "folds"])?;
            w.write_record([pad.distance.to_string(), pad.error.to_string(), folds.to_string()])?;
            emit(g, "pad.csv", &w.into_inner()?)?;
        }
    }
    Ok(0)
}

fn ablate(g: &GlobalOpts, cfg: &AdaptConfig, args: &PairArgs) -> Result<u8> {
    let pair = load_pair(&args.source, &args.target, cfg)?;
    let truth = pair.held_out_target_labels.as_deref();
    let mut rows = Vec::new();
    for variant in [Variant::Full, Variant::GlobalOnly, Variant::LocalOnly] {
        let out = run_variant(&pair, cfg, variant)?;
        let accuracy = truth.map(|t| out.accuracy(t)).transpose()?;
        if rows.is_empty() {
            rows.push(json!({"method": "svm", "accuracy": out.initial_accuracy, "feature_width": pair.feature_dim()}));
        }
        rows.push(json!({"method": variant.name(), "accuracy": accuracy, "feature_width": out.model.feature_dim()}));
    }
    match g.format {
        Format::Json => emit(g, "ablation.json", &json_bytes(&rows)?)?,
        Format::Csv => {
            let mut w = csv_writer();
            w.write_record(["method", "accuracy", "feature_width"])?;
            for r in &rows {
                let acc = r["accuracy"].as_f64().map(|a| a.to_string()).unwrap_or_default();
                w.write_record([
                    r["method"].as_str().unwrap_or_default(),
                    &acc,
                    &r["feature_width"].to_string(),
                ])?;
            }
            emit(g, "ablation.csv", &w.into_inner()?)?;
        }
    }
    Ok(0)
}

fn synth(seed: Option<u64>, dir: &Path, n: usize, dim: usize, svmlight: bool) -> Result<u8> {
    if n < 2 || dim < 2 {
        bail!("need at least two instances per domain and two features");
    }
    let defaults = ShiftedGaussianSpec::default();
    let spec = ShiftedGaussianSpec {
        n_per_domain: n,
        dim,
        seed: seed.unwrap_or(defaults.seed),
        ..defaults
    };
    let (s, t) = shifted_gaussian_pair(&spec);
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    if svmlight {
        write_svmlight(dir.join("source.svm"), &s)?;
        write_svmlight(dir.join("target.svm"), &t)?;
    } else {
        write_csv(dir.join("source.csv"), &s)?;
        write_csv(dir.join("target.csv"), &t)?;
    }
    Ok(0)
}

fn csv_writer() -> csv::Writer<Vec<u8>> {
    csv::Writer::from_writer(Vec::new())
}
