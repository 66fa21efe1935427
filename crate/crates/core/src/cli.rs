//! Command-line front end: `static-count`, `pipeline`, `delta-eval` and
//! `report`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::config::ExperimentConfig;
use crate::delta::write_event_trace;
use crate::network::{
    build_reference_dqn, static_network_multiplications, Activation, LayerSpec, NetworkSpec, StaticReport,
};
use crate::pruning::SparsityReport;
use crate::report::{build_table, build_tradeoff_curve, curve_to_csv, records_from_json, records_to_json, RunRecord};
use crate::rl::pipeline::{evaluate_network, lottery_pipeline};

#[derive(Debug, Parser)]
#[command(
    name = "deltadqn",
    version,
    about = "Pruning and delta-inference experiments for DQN networks"
)]
pub struct Cli {
    /// Suppress progress messages on stderr.
    #[arg(short, long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Count multiplications and parameters of an unoptimised forward pass.
    StaticCount(StaticCountArgs),
    /// Train, prune, rewind and retrain, evaluating every network.
    Pipeline(PipelineArgs),
    /// Evaluate one checkpoint with delta inference at several thresholds.
    DeltaEval(DeltaEvalArgs),
    /// Re-render the reports of a finished run directory.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct StaticCountArgs {
    /// The reference 84x84x4 DQN.
    #[arg(long)]
    pub reference_dqn: bool,
    /// Output units of the reference DQN.
    #[arg(long, default_value_t = 4)]
    pub n_output: usize,
    /// Use the network described by an experiment config.
    #[arg(long, conflicts_with = "reference_dqn")]
    pub config: Option<PathBuf>,
    /// Comma-separated layers: `conv:FILTERS:KERNEL[:STRIDE]`,
    /// `dense:OUT` or `dense:IN>OUT`. The last layer has no activation.
    #[arg(long, conflicts_with_all = ["reference_dqn", "config"], allow_hyphen_values = true)]
    pub arch: Option<String>,
    /// Input shape for `--arch`, as `C,H,W`.
    #[arg(long, default_value = "4,84,84")]
    pub input: String,
    /// Print JSON instead of a table.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    /// Experiment config (TOML); defaults apply to anything missing.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the config's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Run directory to create.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DeltaEvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Comma-separated thresholds.
    #[arg(long, default_value = "0,0.001")]
    pub threshold: String,
    /// Overrides the config's evaluation episodes.
    #[arg(long)]
    pub episodes: Option<usize>,
    /// Config supplying the environment and evaluation settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Directory for records.json and table.txt.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Run directory containing records.json.
    pub run_dir: PathBuf,
    #[arg(long, value_enum, default_value_t = ReportFormat::Table)]
    pub format: ReportFormat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ReportFormat {
    Table,
    Csv,
    Json,
}

/// Record of everything a pipeline run produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub seed: u64,
    pub config: ExperimentConfig,
    /// Paths relative to the run directory.
    pub artifacts: Vec<String>,
    pub started_unix: u64,
    pub finished_unix: u64,
}

pub fn run(cli: Cli, stdout: &mut dyn Write) -> anyhow::Result<()> {
    let quiet = cli.quiet;
    match cli.command {
        Command::StaticCount(a) => cmd_static_count(&a, stdout),
        Command::Pipeline(a) => cmd_pipeline(&a, quiet, stdout),
        Command::DeltaEval(a) => cmd_delta_eval(&a, stdout),
        Command::Report(a) => cmd_report(&a, stdout),
    }
}

/// Parses `args` (program name first) and runs the command.
pub fn run_from<I, T>(args: I, stdout: &mut dyn Write) -> anyhow::Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    run(Cli::try_parse_from(args)?, stdout)
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn parse_usize(s: &str, what: &str) -> anyhow::Result<usize> {
    s.trim().parse().with_context(|| format!("invalid {what} `{s}`"))
}

/// Parses the `--arch` layer list against an input shape.
pub fn parse_arch(input: [usize; 3], arch: &str) -> anyhow::Result<NetworkSpec> {
    let items: Vec<&str> = arch.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
    let mut layers = Vec::new();
    let mut shape = input.to_vec();
    for (n, item) in items.iter().enumerate() {
        let act = if n + 1 == items.len() {
            Activation::Identity
        } else {
            Activation::Relu
        };
        let parts: Vec<&str> = item.split(':').collect();
        match parts.as_slice() {
            ["conv", f, k, rest @ ..] if rest.len() <= 1 => {
                if shape.len() != 3 {
                    bail!("layer {}: conv after dense", n + 1);
                }
                let f = parse_usize(f, "filters")?;
                let k = parse_usize(k, "kernel")?;
                let s = rest.first().map(|s| parse_usize(s, "stride")).transpose()?.unwrap_or(1);
                if k == 0 || s == 0 || k > shape[1] || k > shape[2] {
                    bail!("layer {}: kernel {k} stride {s} does not fit {:?}", n + 1, shape);
                }
                layers.push(LayerSpec::conv2d(shape[0], f, (k, k), s, act));
                shape = vec![f, (shape[1] - k) / s + 1, (shape[2] - k) / s + 1];
            }
            ["dense", size] => {
                let volume: usize = shape.iter().product();
                let (inp, out) = match size.split_once('>') {
                    Some((i, o)) => (parse_usize(i, "dense input")?, parse_usize(o, "dense output")?),
                    None => (volume, parse_usize(size, "dense output")?),
                };
                layers.push(LayerSpec::dense(inp, out, act));
                shape = vec![out];
            }
            _ => bail!("unrecognised layer `{item}`"),
        }
    }
    Ok(NetworkSpec::new(input, layers)?)
}

fn parse_input_shape(s: &str) -> anyhow::Result<[usize; 3]> {
    let dims: Vec<usize> = s
        .split(',')
        .map(|d| parse_usize(d, "input dimension"))
        .collect::<anyhow::Result<_>>()?;
    match dims.as_slice() {
        &[c, h, w] => Ok([c, h, w]),
        _ => bail!("--input needs three dimensions C,H,W, got `{s}`"),
    }
}

pub fn render_static_table(report: &StaticReport) -> String {
    let mut out = format!("{:<10} {:>15} {:>12}\n", "Layer", "Multiplications", "Parameters");
    for row in &report.rows {
        out += &format!("{:<10} {:>15} {:>12}\n", row.name, row.multiplications, row.parameters);
    }
    out += &format!(
        "{:<10} {:>15} {:>12}\n",
        "Total", report.total_multiplications, report.total_parameters
    );
    out
}

fn cmd_static_count(a: &StaticCountArgs, stdout: &mut dyn Write) -> anyhow::Result<()> {
    let spec = if a.reference_dqn {
        build_reference_dqn(a.n_output)?
    } else if let Some(path) = &a.config {
        ExperimentConfig::load(path)?.network_spec()?
    } else if let Some(arch) = &a.arch {
        parse_arch(parse_input_shape(&a.input)?, arch)?
    } else {
        bail!("pass one of --reference-dqn, --config or --arch");
    };
    let report = static_network_multiplications(&spec);
    if a.json {
        writeln!(stdout, "{}", serde_json::to_string_pretty(&report)?)?;
    } else {
        write!(stdout, "{}", render_static_table(&report))?;
    }
    Ok(())
}

fn load_config(path: Option<&Path>) -> anyhow::Result<ExperimentConfig> {
    let cfg = match path {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    Ok(cfg)
}

fn write_file(dir: &Path, rel: &str, contents: &[u8], artifacts: &mut Vec<String>) -> anyhow::Result<()> {
    let path = dir.join(rel);
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
    artifacts.push(rel.to_string());
    Ok(())
}

fn cmd_pipeline(a: &PipelineArgs, quiet: bool, stdout: &mut dyn Write) -> anyhow::Result<()> {
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    let started = unix_now();
    let out = &a.out;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut artifacts = Vec::new();
    write_file(out, "config.toml", cfg.to_toml_string().as_bytes(), &mut artifacts)?;
    let spec = cfg.network_spec()?;

    let mut records: Vec<RunRecord> = Vec::new();
    let mut baseline_files: Vec<(String, Vec<u8>)> = Vec::new();
    let mut pending: Vec<(String, Vec<u8>)> = Vec::new();
    let log = |msg: String| {
        if !quiet {
            eprintln!("{msg}");
        }
    };
    log(format!(
        "training baseline: {} steps on {}, {} weights",
        cfg.training.steps,
        cfg.env.name,
        spec.weight_count()
    ));
    lottery_pipeline(
        &cfg,
        |base, w| {
            log(format!("baseline dense reward {:.3}", base.reward_dense));
            let mut bytes = Vec::new();
            Checkpoint::from_prunable(spec.clone(), w)?.write_to(&mut bytes)?;
            baseline_files.push(("baseline.ckpt".into(), bytes));
            baseline_files.push(("baseline.json".into(), serde_json::to_vec_pretty(base)?));
            Ok(())
        },
        |o, w| {
            log(format!(
                "iteration {}: sparsity {:.3}, dense reward {:.3}",
                o.iteration, o.sparsity.scope_total, o.dense.mean_reward
            ));
            let mut bytes = Vec::new();
            Checkpoint::from_prunable(spec.clone(), w)?.write_to(&mut bytes)?;
            pending.push((format!("checkpoints/iter_{:03}.ckpt", o.iteration), bytes));
            if cfg.delta.trace && !o.trace.is_empty() {
                let mut text = Vec::new();
                write_event_trace(&mut text, &o.trace)?;
                pending.push((format!("traces/iter_{:03}.txt", o.iteration), text));
            }
            records.extend(o.records.iter().cloned());
            Ok(())
        },
    )?;
    for (rel, bytes) in baseline_files.iter().chain(&pending) {
        write_file(out, rel, bytes, &mut artifacts)?;
    }
    let curve = build_tradeoff_curve(&records);
    let table = build_table(&records)?;
    write_file(
        out,
        "records.json",
        records_to_json(&records)?.as_bytes(),
        &mut artifacts,
    )?;
    write_file(out, "curve.csv", curve_to_csv(&curve)?.as_bytes(), &mut artifacts)?;
    write_file(out, "table.txt", table.as_bytes(), &mut artifacts)?;
    artifacts.push("manifest.json".into());
    let manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed: cfg.seed,
        config: cfg.clone(),
        artifacts,
        started_unix: started,
        finished_unix: unix_now(),
    };
    fs::write(out.join("manifest.json"), serde_json::to_vec_pretty(&manifest)?)?;
    write!(stdout, "{table}")?;
    Ok(())
}

pub fn parse_thresholds(s: &str) -> anyhow::Result<Vec<f64>> {
    let ts: Vec<f64> = s
        .split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .with_context(|| format!("invalid threshold `{t}`"))
        })
        .collect::<anyhow::Result<_>>()?;
    if ts.iter().any(|t| !t.is_finite() || *t < 0.0) {
        bail!("thresholds must be finite and >= 0");
    }
    Ok(ts)
}

fn cmd_delta_eval(a: &DeltaEvalArgs, stdout: &mut dyn Write) -> anyhow::Result<()> {
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    let episodes = a.episodes.unwrap_or(cfg.eval.episodes);
    if episodes == 0 {
        bail!("--episodes must be >= 1");
    }
    let thresholds = parse_thresholds(&a.threshold)?;
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let env = cfg.env_spec()?;
    let (iteration, sparsity) = match ckpt.to_prunable()? {
        Some(p) => (p.iteration(), p.report_sparsity()),
        None => (
            0,
            SparsityReport {
                layers: vec![0.0; ckpt.spec.num_layers()],
                total: 0.0,
                scope_total: 0.0,
            },
        ),
    };
    let (_, records, _) = evaluate_network(
        &cfg,
        &env,
        &ckpt.spec,
        &ckpt.weights,
        iteration,
        &sparsity,
        &thresholds,
        episodes,
        cfg.seed,
    )?;
    let table = build_table(&records)?;
    if let Some(out) = &a.out {
        fs::create_dir_all(out)?;
        let mut artifacts = Vec::new();
        write_file(
            out,
            "records.json",
            records_to_json(&records)?.as_bytes(),
            &mut artifacts,
        )?;
        write_file(out, "table.txt", table.as_bytes(), &mut artifacts)?;
    }
    write!(stdout, "{table}")?;
    Ok(())
}

fn cmd_report(a: &ReportArgs, stdout: &mut dyn Write) -> anyhow::Result<()> {
    let path = a.run_dir.join("records.json");
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let records = records_from_json(&text)?;
    match a.format {
        ReportFormat::Table => write!(stdout, "{}", build_table(&records)?)?,
        ReportFormat::Csv => write!(stdout, "{}", curve_to_csv(&build_tradeoff_curve(&records))?)?,
        ReportFormat::Json => writeln!(stdout, "{}", records_to_json(&records)?)?,
    }
    Ok(())
}
