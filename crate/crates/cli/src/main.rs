//! `kprune`: inspect, cluster, select and prune convolution channels from
//! model containers or built-in synthetic descriptors.
//!
//! Every flag can also be supplied through `--config <file>`, a flat JSON
//! object whose keys are the long flag names (`{"arch": "resnet56",
//! "t-prune": 4}`); explicit flags win over config values.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Parser, Subcommand};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use kprune_core::coverage::TieBreak;
use kprune_core::descriptors;
use kprune_core::flops::model_flops;
use kprune_core::linkage::{agglomerate, LinkageMethod};
use kprune_core::mask::PruneMask;
use kprune_core::pipeline::{channel_selection, run_pipeline, MockTrainer, PipelineConfig};
use kprune_core::report::{emit_report, read_report_json, report_to_json, ReportFormat};
use kprune_core::schedule::{GammaDescending, Schedule};
use kprune_core::snapshot::{load_snapshot, save_snapshot, ModelSnapshot};
use kprune_core::universe::{kernel_set, merge_budget};
use kprune_core::{Error, Result};

#[derive(Parser)]
#[command(name = "kprune", version)]
#[command(about = "Structured channel pruning via kernel clustering and cluster coverage")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    #[command(flatten)]
    opts: Opts,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Print the convolution + classifier FLOPs breakdown of a model
    Flops,
    /// Dump one layer's per-channel kernel merge sequences as JSON lines
    Cluster,
    /// Run a single coverage-driven selection pass and emit the keep mask
    Select,
    /// Run the progressive train/prune loop with the built-in mock trainer
    Pipeline,
    /// Re-emit a saved run report as JSON or CSV
    Report,
}

#[derive(clap::Args, Default)]
struct Opts {
    /// Flat JSON config file; keys are long flag names, flags override it
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Built-in descriptor to synthesize (resnet18|resnet34|resnet50|resnet56|toy8|toyres|toymix)
    #[arg(long, global = true, value_name = "NAME")]
    arch: Option<String>,

    /// Model container to load (JSON manifest; weights blob alongside)
    #[arg(long, global = true, value_name = "FILE", conflicts_with = "arch")]
    snapshot: Option<PathBuf>,

    /// Layer name to cluster (cluster subcommand)
    #[arg(long, global = true, value_name = "NAME")]
    layer: Option<String>,

    /// Restrict clustering to one input channel (default: all channels)
    #[arg(long, global = true, value_name = "N")]
    channel: Option<usize>,

    /// Merge steps to perform (default: the budget implied by --sparsity)
    #[arg(long, global = true, value_name = "N")]
    steps: Option<usize>,

    /// Linkage method: ward|single|complete|average [default: ward]
    #[arg(long, global = true, value_name = "METHOD")]
    linkage: Option<String>,

    /// Tie-break rule: random|max-l2|min-l2 [default: random]
    #[arg(long, global = true, value_name = "RULE")]
    tie: Option<String>,

    /// Target sparsity in [0, 1] [default: 0.5]
    #[arg(long, global = true, value_name = "S")]
    sparsity: Option<f64>,

    /// RNG seed for synthesis, training drift and tie-breaking [default: 0]
    #[arg(long, global = true, value_name = "SEED")]
    seed: Option<u64>,

    /// Total training epochs for the pipeline [default: 6]
    #[arg(long, global = true, value_name = "N")]
    epochs: Option<usize>,

    /// Last epoch at which pruning may fire [default: 4]
    #[arg(long = "t-prune", global = true, value_name = "N")]
    t_prune: Option<usize>,

    /// Epochs between pruning events [default: 2]
    #[arg(long = "delta-t", global = true, value_name = "N")]
    delta_t: Option<usize>,

    /// Output format where applicable: json|csv
    #[arg(long, global = true, value_name = "FMT")]
    format: Option<String>,

    /// Write primary output here instead of stdout
    #[arg(long, global = true, value_name = "FILE")]
    out: Option<PathBuf>,

    /// Saved run report to read (report subcommand)
    #[arg(long, global = true, value_name = "FILE")]
    input: Option<PathBuf>,

    /// Also write the final keep mask here (pipeline subcommand)
    #[arg(long = "mask-out", global = true, value_name = "FILE")]
    mask_out: Option<PathBuf>,

    /// Also save the pruned model container here (pipeline subcommand)
    #[arg(long = "pruned-out", global = true, value_name = "FILE")]
    pruned_out: Option<PathBuf>,
}

/// `--config` file contents; identical key set to the flags.
#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
struct FileConfig {
    arch: Option<String>,
    snapshot: Option<PathBuf>,
    layer: Option<String>,
    channel: Option<usize>,
    steps: Option<usize>,
    linkage: Option<String>,
    tie: Option<String>,
    sparsity: Option<f64>,
    seed: Option<u64>,
    epochs: Option<usize>,
    t_prune: Option<usize>,
    delta_t: Option<usize>,
    format: Option<String>,
    out: Option<PathBuf>,
    input: Option<PathBuf>,
    mask_out: Option<PathBuf>,
    pruned_out: Option<PathBuf>,
}

/// Flags merged with the config file and defaulted.
struct Settings {
    arch: Option<String>,
    snapshot: Option<PathBuf>,
    layer: Option<String>,
    channel: Option<usize>,
    steps: Option<usize>,
    linkage: LinkageMethod,
    tie: TieBreak,
    sparsity: f64,
    seed: u64,
    epochs: usize,
    t_prune: usize,
    delta_t: usize,
    format: Option<ReportFormat>,
    out: Option<PathBuf>,
    input: Option<PathBuf>,
    mask_out: Option<PathBuf>,
    pruned_out: Option<PathBuf>,
}

impl Settings {
    fn merge(opts: Opts) -> Result<Self> {
        let file = match &opts.config {
            Some(path) => {
                let text =
                    fs::read_to_string(path).map_err(|e| Error::io(path.clone(), e))?;
                serde_json::from_str::<FileConfig>(&text)?
            }
            None => FileConfig::default(),
        };
        Ok(Settings {
            arch: opts.arch.or(file.arch),
            snapshot: opts.snapshot.or(file.snapshot),
            layer: opts.layer.or(file.layer),
            channel: opts.channel.or(file.channel),
            steps: opts.steps.or(file.steps),
            linkage: opts
                .linkage
                .or(file.linkage)
                .map(|s| LinkageMethod::from_str(&s))
                .transpose()?
                .unwrap_or(LinkageMethod::Ward),
            tie: opts
                .tie
                .or(file.tie)
                .map(|s| TieBreak::from_str(&s))
                .transpose()?
                .unwrap_or(TieBreak::Random),
            sparsity: opts.sparsity.or(file.sparsity).unwrap_or(0.5),
            seed: opts.seed.or(file.seed).unwrap_or(0),
            epochs: opts.epochs.or(file.epochs).unwrap_or(6),
            t_prune: opts.t_prune.or(file.t_prune).unwrap_or(4),
            delta_t: opts.delta_t.or(file.delta_t).unwrap_or(2),
            format: opts
                .format
                .or(file.format)
                .map(|s| ReportFormat::from_str(&s))
                .transpose()?,
            out: opts.out.or(file.out),
            input: opts.input.or(file.input),
            mask_out: opts.mask_out.or(file.mask_out),
            pruned_out: opts.pruned_out.or(file.pruned_out),
        })
    }

    fn load_model(&self) -> Result<ModelSnapshot> {
        match (&self.arch, &self.snapshot) {
            (Some(_), Some(_)) => Err(Error::InvalidParameter(
                "--arch and --snapshot are mutually exclusive".into(),
            )),
            (Some(name), None) => descriptors::build(name, self.seed),
            (None, Some(path)) => load_snapshot(path),
            (None, None) => Err(Error::InvalidParameter(format!(
                "a model is required: pass --snapshot <file> or --arch <{}>",
                descriptors::names().join("|")
            ))),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command, cli.opts) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(if err.is_io() { 3 } else { 2 })
        }
    }
}

fn run(command: Command, opts: Opts) -> Result<()> {
    let settings = Settings::merge(opts)?;
    match command {
        Command::Flops => cmd_flops(&settings),
        Command::Cluster => cmd_cluster(&settings),
        Command::Select => cmd_select(&settings),
        Command::Pipeline => cmd_pipeline(&settings),
        Command::Report => cmd_report(&settings),
    }
}

/// Write `text` to `--out` if given, stdout otherwise.
fn write_text(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => fs::write(path, text).map_err(|e| Error::io(path, e)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

/// Buffered sink on `--out` if given, stdout otherwise.
fn open_sink(out: Option<&Path>) -> Result<(Box<dyn Write>, PathBuf)> {
    match out {
        Some(path) => {
            let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
            Ok((Box::new(io::BufWriter::new(file)), path.to_path_buf()))
        }
        None => Ok((Box::new(io::stdout().lock()), PathBuf::from("<stdout>"))),
    }
}

fn cmd_flops(settings: &Settings) -> Result<()> {
    let snap = settings.load_model()?;
    let report = model_flops(&snap);
    let mut text = serde_json::to_string_pretty(&report)?;
    text.push('\n');
    write_text(settings.out.as_deref(), &text)
}

fn cmd_cluster(settings: &Settings) -> Result<()> {
    let snap = settings.load_model()?;
    let name = settings.layer.as_deref().ok_or_else(|| {
        Error::InvalidParameter("cluster requires --layer <name>".into())
    })?;
    let idx = snap
        .layer_index(name)
        .ok_or_else(|| Error::InvalidParameter(format!("model has no layer named `{name}`")))?;
    let layer = snap.layer(idx);
    let live_out = vec![true; layer.out_channels()];
    let budget = match settings.steps {
        Some(steps) => steps,
        None => merge_budget(settings.sparsity, layer.out_channels())?,
    };

    let channels: Vec<usize> = match settings.channel {
        Some(c) => {
            if c >= layer.in_channels() {
                return Err(Error::InvalidParameter(format!(
                    "layer `{name}` has {} input channels, got --channel {c}",
                    layer.in_channels()
                )));
            }
            vec![c]
        }
        None => (0..layer.in_channels()).collect(),
    };

    let (mut sink, sink_path) = open_sink(settings.out.as_deref())?;
    for c in channels {
        let seq = agglomerate(&kernel_set(layer, c, &live_out)?, settings.linkage, budget)?;
        seq.write_jsonl(c, &mut sink)
            .map_err(|e| Error::io(sink_path.clone(), e))?;
    }
    sink.flush().map_err(|e| Error::io(sink_path, e))
}

/// Per-layer record printed by `select`.
#[derive(Serialize)]
struct SelectStats {
    layer: String,
    live: usize,
    kept: usize,
    merges: usize,
    cutoff: f64,
    universe: usize,
    covered: usize,
    coverage_rate: f64,
}

#[derive(Serialize)]
struct SelectReport {
    model: String,
    linkage: String,
    tie: String,
    sparsity: f64,
    seed: u64,
    layers: Vec<SelectStats>,
    #[serde(skip_serializing_if = "Option::is_none")]
    mask: Option<PruneMask>,
}

fn cmd_select(settings: &Settings) -> Result<()> {
    if !(0.0..1.0).contains(&settings.sparsity) {
        return Err(Error::InvalidParameter(format!(
            "one-shot selection needs 0 <= sparsity < 1, got {}",
            settings.sparsity
        )));
    }
    let snap = settings.load_model()?;
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let mut mask = PruneMask::all_true(&snap);
    let mut layers = Vec::new();

    for i in snap.arch().prunable_layers() {
        let layer = snap.layer(i);
        let live_out = mask.get(layer.name()).expect("mask covers layer").to_vec();
        let live_in = match snap.arch().producer(i) {
            Some(p) => mask.get(snap.layer(p).name()).expect("mask covers layer").to_vec(),
            None => vec![true; layer.in_channels()],
        };
        let outcome = channel_selection(
            layer,
            &live_out,
            &live_in,
            settings.sparsity,
            settings.linkage,
            settings.tie,
            &mut rng,
        )?;
        let mut keep = vec![false; layer.out_channels()];
        for &o in &outcome.kept {
            keep[o] = true;
        }
        layers.push(SelectStats {
            layer: layer.name().to_string(),
            live: live_out.iter().filter(|&&b| b).count(),
            kept: outcome.kept.len(),
            merges: outcome.merges,
            cutoff: outcome.cutoff,
            universe: outcome.universe,
            covered: outcome.covered,
            coverage_rate: outcome.coverage_rate,
        });
        mask.set(layer.name(), keep);
    }

    let embed_mask = settings.out.is_none();
    if let Some(path) = &settings.out {
        mask.write_json(path)?;
    }
    let report = SelectReport {
        model: snap.model().to_string(),
        linkage: settings.linkage.to_string(),
        tie: settings.tie.to_string(),
        sparsity: settings.sparsity,
        seed: settings.seed,
        layers,
        mask: embed_mask.then_some(mask),
    };
    let mut text = serde_json::to_string_pretty(&report)?;
    text.push('\n');
    print!("{text}");
    Ok(())
}

fn cmd_pipeline(settings: &Settings) -> Result<()> {
    let mut snap = settings.load_model()?;
    let cfg = PipelineConfig {
        epochs: settings.epochs,
        schedule: Schedule::new(settings.t_prune, settings.delta_t, settings.sparsity)?,
        linkage: settings.linkage,
        tie: settings.tie,
        seed: settings.seed,
    };
    let mut trainer = MockTrainer::new(settings.seed);
    let outcome = run_pipeline(&mut snap, &mut trainer, &cfg, &GammaDescending)?;

    if let Some(path) = &settings.mask_out {
        outcome.report.final_keep.write_json(path)?;
    }
    if let Some(path) = &settings.pruned_out {
        save_snapshot(path, &outcome.pruned)?;
    }
    match settings.format.unwrap_or(ReportFormat::Json) {
        ReportFormat::Json => write_text(settings.out.as_deref(), &report_to_json(&outcome.report)?),
        ReportFormat::Csv => {
            let (sink, _) = open_sink(settings.out.as_deref())?;
            emit_report(&outcome.report, ReportFormat::Csv, sink)
        }
    }
}

fn cmd_report(settings: &Settings) -> Result<()> {
    let input = settings.input.as_deref().ok_or_else(|| {
        Error::InvalidParameter("report requires --input <file>".into())
    })?;
    let report = read_report_json(input)?;
    let format = settings.format.unwrap_or(ReportFormat::Csv);
    let (sink, _) = open_sink(settings.out.as_deref())?;
    emit_report(&report, format, sink)
}
