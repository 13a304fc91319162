//! Command-line workflows: `search`, `evaluate`, `sweep`, `bench`, `synth`.
//!
//! Every option can also come from a TOML file passed with `--config`;
//! explicit flags win over the file, the file wins over built-in defaults.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::bench::{bench_dataset, run_bench, BenchConfig, BenchReport};
use crate::cbgm::{search_dataset, sweep, CbgmParams, SearchMode, SweepRecord};
use crate::dataio::{load_dataset, load_results, save_dataset, save_results, Dataset, ResultsFile, RunHeader};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, EvalConfig, EvalReport};
use crate::par::Parallelism;
use crate::synth::{fig2_fixture, generate, SynthParams};

#[derive(Debug, Parser)]
#[command(name = "cbgm", version, about = "Context bipartite graph matching for person search")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Rank gallery images for every query in a dataset.
    Search(SearchArgs),
    /// Compute mAP, CMC and detection metrics.
    Evaluate(EvaluateArgs),
    /// Evaluate a grid of (k1, k2) settings.
    Sweep(SweepArgs),
    /// Time the baseline and the context stage across gallery sizes.
    Bench(BenchArgs),
    /// Write a synthetic dataset.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Baseline,
    Cbgm,
}

/// Options shared by the commands that run searches.
#[derive(Debug, Clone, Default, Args)]
pub struct SearchOpts {
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub mode: Option<Mode>,
    /// Gallery images re-ranked per query [default: 10]
    #[arg(long)]
    pub k1: Option<usize>,
    /// Query-image people used as context, including the query [default: 3]
    #[arg(long)]
    pub k2: Option<usize>,
    /// Worker threads; 0 uses every core [default: 0]
    #[arg(long)]
    pub threads: Option<usize>,
    /// Apply NMS at load time (for raw, pre-NMS detections)
    #[arg(long)]
    pub raw_detections: bool,
    /// NMS threshold on the first-head score [default: 0.4]
    #[arg(long)]
    pub nms_first: Option<f64>,
    /// NMS threshold on the second-head score [default: 0.5]
    #[arg(long)]
    pub nms_second: Option<f64>,
    /// TOML file with default values for any option
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SearchArgs {
    #[command(flatten)]
    pub opts: SearchOpts,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub opts: SearchOpts,
    /// Results file from `search`; without it the search is run first
    #[arg(long)]
    pub results: Option<PathBuf>,
    /// IoU needed for a true positive [default: 0.5]
    #[arg(long)]
    pub iou: Option<f64>,
    /// CMC ranks [default: 1,5,10]
    #[arg(long, value_delimiter = ',')]
    pub cmc: Option<Vec<usize>>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub opts: SearchOpts,
    /// [default: 0,10,20,30,40,50]
    #[arg(long, value_delimiter = ',')]
    pub k1_values: Option<Vec<usize>>,
    /// [default: 1,2,3,4,5,6]
    #[arg(long, value_delimiter = ',')]
    pub k2_values: Option<Vec<usize>>,
    #[arg(long)]
    pub iou: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub opts: SearchOpts,
    /// Gallery sizes [default: 100,500,1000,2000,4000]
    #[arg(long, value_delimiter = ',')]
    pub sizes: Option<Vec<usize>>,
    /// Queries timed per size [default: 50]
    #[arg(long)]
    pub queries: Option<usize>,
    /// Repetitions per query; the fastest is kept [default: 3]
    #[arg(long)]
    pub repeats: Option<usize>,
    /// Seed of the generated data when no dataset is given [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    Default,
    Clean,
    Confusable,
    Fig2,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[arg(long, value_enum, default_value = "default")]
    pub preset: Preset,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub n_identities: Option<usize>,
    #[arg(long)]
    pub n_images: Option<usize>,
    #[arg(long)]
    pub embedding_dim: Option<usize>,
    #[arg(long)]
    pub noise_sigma: Option<f64>,
    #[arg(long)]
    pub confusable_pairs: Option<usize>,
    /// TOML file with a `[synth]` table of generator parameters
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

/// Values a `--config` file may provide.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub dataset: Option<PathBuf>,
    pub mode: Option<Mode>,
    pub k1: Option<usize>,
    pub k2: Option<usize>,
    pub threads: Option<usize>,
    pub raw_detections: Option<bool>,
    pub nms_first: Option<f64>,
    pub nms_second: Option<f64>,
    pub iou: Option<f64>,
    pub cmc: Option<Vec<usize>>,
    pub k1_values: Option<Vec<usize>>,
    pub k2_values: Option<Vec<usize>>,
    pub sizes: Option<Vec<usize>>,
    pub queries: Option<usize>,
    pub repeats: Option<usize>,
    pub seed: Option<u64>,
    pub synth: Option<SynthParams>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, "reading", e))?;
        toml::from_str(&text).map_err(|e| Error::InvalidParam(format!("{}: {e}", path.display())))
    }
}

/// Fully resolved settings of a search-running command.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub dataset: PathBuf,
    pub mode: SearchMode,
    pub threads: Parallelism,
    pub nms: Option<(f64, f64)>,
}

fn check_ratio(name: &str, v: f64) -> Result<f64> {
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(Error::InvalidParam(format!("{name} {v} outside [0, 1]")))
    }
}

impl SearchOpts {
    pub fn resolve(&self, file: &FileConfig) -> Result<RunConfig> {
        let dataset = self
            .dataset
            .clone()
            .or_else(|| file.dataset.clone())
            .ok_or_else(|| Error::InvalidParam("--dataset is required".into()))?;
        let defaults = CbgmParams::default();
        let mode = match self.mode.or(file.mode).unwrap_or(Mode::Cbgm) {
            Mode::Baseline => SearchMode::Baseline,
            Mode::Cbgm => SearchMode::cbgm(
                self.k1.or(file.k1).unwrap_or(defaults.k1),
                self.k2.or(file.k2).unwrap_or(defaults.k2),
            )?,
        };
        let nms = (self.raw_detections || file.raw_detections.unwrap_or(false))
            .then(|| -> Result<(f64, f64)> {
                Ok((
                    check_ratio("--nms-first", self.nms_first.or(file.nms_first).unwrap_or(0.4))?,
                    check_ratio("--nms-second", self.nms_second.or(file.nms_second).unwrap_or(0.5))?,
                ))
            })
            .transpose()?;
        Ok(RunConfig {
            dataset,
            mode,
            threads: Parallelism(self.threads.or(file.threads).unwrap_or(0)),
            nms,
        })
    }
}

fn open_dataset(config: &RunConfig) -> Result<Dataset> {
    let dataset = load_dataset(&config.dataset)?;
    match config.nms {
        Some((first, second)) => dataset.with_nms(first, second),
        None => Ok(dataset),
    }
}

fn dataset_label(config: &RunConfig, dataset: &Dataset) -> Option<String> {
    dataset
        .name
        .clone()
        .or_else(|| config.dataset.file_name().map(|f| f.to_string_lossy().into_owned()))
}

pub fn cmd_search(config: &RunConfig) -> Result<ResultsFile> {
    let dataset = open_dataset(config)?;
    let queries = search_dataset(&dataset, config.mode, config.threads)?;
    Ok(ResultsFile {
        header: RunHeader::new(dataset_label(config, &dataset), config.mode),
        report: None,
        queries,
    })
}

/// Evaluates `results` (or runs the configured search first) against the
/// dataset ground truth.
pub fn cmd_evaluate(
    config: &RunConfig,
    results: Option<ResultsFile>,
    eval: &EvalConfig,
) -> Result<ResultsFile> {
    let dataset = open_dataset(config)?;
    let mut file = match results {
        Some(r) => r,
        None => ResultsFile {
            header: RunHeader::new(dataset_label(config, &dataset), config.mode),
            report: None,
            queries: search_dataset(&dataset, config.mode, config.threads)?,
        },
    };
    file.report = Some(evaluate(
        &file.queries,
        &dataset.images,
        &dataset.ground_truth,
        eval,
    )?);
    Ok(file)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepOutput {
    pub dataset: Option<String>,
    pub k1_values: Vec<usize>,
    pub k2_values: Vec<usize>,
    /// Sorted by descending metric.
    pub records: Vec<SweepRecord>,
    pub best: SweepRecord,
}

pub fn cmd_sweep(
    config: &RunConfig,
    k1_values: &[usize],
    k2_values: &[usize],
    eval: &EvalConfig,
) -> Result<SweepOutput> {
    let dataset = open_dataset(config)?;
    let records = sweep(&dataset, k1_values, k2_values, eval, config.threads)?;
    Ok(SweepOutput {
        dataset: dataset_label(config, &dataset),
        k1_values: k1_values.to_vec(),
        k2_values: k2_values.to_vec(),
        best: records[0].clone(),
        records,
    })
}

/// Grid with k2 rows and k1 columns; `*` marks the best cell, `s`/`l` the
/// small- and large-gallery presets.
pub fn sweep_table(out: &SweepOutput) -> String {
    let mut s = String::from("k2\\k1");
    for k1 in &out.k1_values {
        let _ = write!(s, " {k1:>9}");
    }
    s.push('\n');
    for &k2 in &out.k2_values {
        let _ = write!(s, "{k2:>5}");
        for &k1 in &out.k1_values {
            let cell = out.records.iter().find(|r| r.k1 == k1 && r.k2 == k2);
            match cell {
                Some(r) => {
                    let mut mark = String::new();
                    if r.k1 == out.best.k1 && r.k2 == out.best.k2 {
                        mark.push('*');
                    }
                    match r.preset.as_deref() {
                        Some("small-gallery") => mark.push('s'),
                        Some("large-gallery") => mark.push('l'),
                        _ => {}
                    }
                    let _ = write!(s, " {:>7.2}{mark:<2}", r.metric * 100.0);
                }
                None => s.push_str("         -"),
            }
        }
        s.push('\n');
    }
    s
}

pub fn cmd_bench(args: &BenchArgs, file: &FileConfig) -> Result<BenchReport> {
    let defaults = BenchConfig::default();
    let sizes = args.sizes.clone().or_else(|| file.sizes.clone()).unwrap_or(defaults.sizes);
    let max_size = sizes.iter().copied().max().unwrap_or(0);
    let k1 = args.opts.k1.or(file.k1).unwrap_or(defaults.params.k1);
    let k2 = args.opts.k2.or(file.k2).unwrap_or(defaults.params.k2);
    let dataset = match args.opts.dataset.clone().or_else(|| file.dataset.clone()) {
        Some(_) => open_dataset(&args.opts.resolve(file)?)?,
        None => bench_dataset(max_size, args.seed.or(file.seed).unwrap_or(0))?,
    };
    run_bench(
        &dataset,
        &BenchConfig {
            sizes,
            params: CbgmParams::new(k1, k2)?,
            max_queries: args.queries.or(file.queries).unwrap_or(defaults.max_queries),
            repeats: args.repeats.or(file.repeats).unwrap_or(defaults.repeats),
        },
    )
}

pub fn cmd_synth(args: &SynthArgs, file: &FileConfig) -> Result<Dataset> {
    if args.preset == Preset::Fig2 {
        return Ok(fig2_fixture());
    }
    let mut params = match args.preset {
        Preset::Clean => SynthParams::clean(0),
        Preset::Confusable => SynthParams::confusable(0),
        _ => file.synth.clone().unwrap_or_default(),
    };
    if let Some(seed) = args.seed.or(file.seed) {
        params.seed = seed;
    }
    if let Some(v) = args.n_identities {
        params.n_identities = v;
    }
    if let Some(v) = args.n_images {
        params.n_images = v;
    }
    if let Some(v) = args.embedding_dim {
        params.embedding_dim = v;
    }
    if let Some(v) = args.noise_sigma {
        params.noise_sigma = v;
    }
    if let Some(v) = args.confusable_pairs {
        params.confusable_pairs = v;
    }
    generate(&params)
}

fn eval_config(iou: Option<f64>, cmc: Option<Vec<usize>>, file: &FileConfig) -> EvalConfig {
    let defaults = EvalConfig::default();
    EvalConfig {
        iou_threshold: iou.or(file.iou).unwrap_or(defaults.iou_threshold),
        cmc_ks: cmc.or_else(|| file.cmc.clone()).unwrap_or(defaults.cmc_ks),
    }
}

fn write_output(out: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match out {
        Some(path) => fs::write(path, bytes).map_err(|e| Error::io(path, "writing", e)),
        None => std::io::stdout().write_all(bytes).map_err(|e| Error::Io {
            context: "writing to stdout".into(),
            source: e,
        }),
    }
}

fn to_json<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut v = serde_json::to_vec_pretty(value).map_err(|e| Error::Io {
        context: "serializing output".into(),
        source: e.into(),
    })?;
    v.push(b'\n');
    Ok(v)
}

fn results_bytes(file: &ResultsFile) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    file.write_to(&mut buf)?;
    Ok(buf)
}

fn summary(report: &EvalReport) -> String {
    let cmc: Vec<String> = report
        .cmc
        .iter()
        .map(|c| format!("top-{}={:.4}", c.k, c.accuracy))
        .collect();
    format!(
        "queries={} mAP={:.4} {} det_recall={:.4} det_AP={:.4}",
        report.queries,
        report.map,
        cmc.join(" "),
        report.detection_recall,
        report.detection_ap
    )
}

/// Runs one parsed command line.
pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Search(args) => {
            let file = FileConfig::load(args.opts.config.as_deref())?;
            let results = cmd_search(&args.opts.resolve(&file)?)?;
            write_output(args.out.as_deref(), &results_bytes(&results)?)
        }
        Command::Evaluate(args) => {
            let file = FileConfig::load(args.opts.config.as_deref())?;
            let config = args.opts.resolve(&file)?;
            let results = args.results.as_deref().map(load_results).transpose()?;
            let eval = eval_config(args.iou, args.cmc.clone(), &file);
            let evaluated = cmd_evaluate(&config, results, &eval)?;
            if let (Some(report), Some(_)) = (&evaluated.report, &args.out) {
                eprintln!("{}", summary(report));
            }
            match &args.out {
                Some(path) => save_results(&evaluated, path),
                None => write_output(None, &results_bytes(&evaluated)?),
            }
        }
        Command::Sweep(args) => {
            let file = FileConfig::load(args.opts.config.as_deref())?;
            let config = args.opts.resolve(&file)?;
            let k1s = args
                .k1_values
                .clone()
                .or_else(|| file.k1_values.clone())
                .unwrap_or_else(|| vec![0, 10, 20, 30, 40, 50]);
            let k2s = args
                .k2_values
                .clone()
                .or_else(|| file.k2_values.clone())
                .unwrap_or_else(|| vec![1, 2, 3, 4, 5, 6]);
            let out = cmd_sweep(&config, &k1s, &k2s, &eval_config(args.iou, None, &file))?;
            eprint!("{}", sweep_table(&out));
            write_output(args.out.as_deref(), &to_json(&out)?)
        }
        Command::Bench(args) => {
            let file = FileConfig::load(args.opts.config.as_deref())?;
            let report = cmd_bench(&args, &file)?;
            eprintln!("gallery  baseline_ms  cbgm_ms  overhead_ms");
            for r in &report.rows {
                eprintln!(
                    "{:>7}  {:>11.3}  {:>7.3}  {:>11.4}",
                    r.gallery_size, r.baseline_ms, r.cbgm_ms, r.overhead_ms
                );
            }
            write_output(args.out.as_deref(), &to_json(&report)?)
        }
        Command::Synth(args) => {
            let file = FileConfig::load(args.config.as_deref())?;
            let dataset = cmd_synth(&args, &file)?;
            save_dataset(&dataset, &args.out)?;
            eprintln!(
                "wrote {} images, {} queries to {}",
                dataset.images.len(),
                dataset.queries.len(),
                args.out.display()
            );
            Ok(())
        }
    }
}
