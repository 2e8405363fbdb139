//! Command-line front end.
//!
//! Exit codes: 0 success, 1 internal failure, 2 bad input (arguments,
//! config, unparsable or inconsistent data), 3 I/O failure while writing
//! outputs.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::annotation::{
    parse_dataset_config, read_annotation_dir, read_prediction_dir, split_dataset,
    write_annotation_file, write_prediction_file, DatasetConfig,
};
use crate::config::{RunConfig, SinkKind};
use crate::error::Error;
use crate::eval::{
    confidence_curve_csv, evaluate_at, format_metrics_table, ingest_metrics_table, map_range,
    pr_curve, pr_curve_csv, precision_confidence_curve, precision_recall_at, Scene,
};
use crate::line::{run_simulation, TelemetryReport};
use crate::model::{to_corner_form, ClassList, TruthBox};
use crate::rng::{substream, Stream};
use crate::synthetic::{generate_can, mock_detect, FaultRates, FRAME_SIZE};
use crate::telemetry::{encode_event_log, FileSink, Publisher};

pub const EXIT_OK: u8 = 0;
pub const EXIT_INTERNAL: u8 = 1;
pub const EXIT_INPUT: u8 = 2;
pub const EXIT_IO: u8 = 3;

pub const RUN_MANIFEST: &str = "run_manifest.json";
const PUBLISH_RETRIES: usize = 3;

#[derive(Debug, Parser)]
#[command(
    name = "canline",
    version,
    about = "Canning-line inspection simulator and detection metrics"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run cans through the simulated line.
    Simulate(SimulateArgs),
    /// Score detector predictions against ground-truth annotations.
    Evaluate(EvaluateArgs),
    /// Generate a labelled synthetic dataset with a train/val split.
    GenDataset(GenDatasetArgs),
    /// Pretty-print a per-epoch training metrics CSV.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct RunSource {
    /// TOML run configuration.
    #[arg(long, conflicts_with = "manifest")]
    pub config: Option<PathBuf>,
    /// Replay the configuration, seed and count recorded in a run manifest.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of cans.
    #[arg(long)]
    pub n: Option<u64>,
    /// Output directory (created if missing).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub run: RunSource,
}

#[derive(Debug, Args)]
pub struct GenDatasetArgs {
    #[command(flatten)]
    pub run: RunSource,
    /// Fault rates as `easy_open,contour,label`; overrides the config.
    #[arg(long)]
    pub rates: Option<String>,
    /// Train fraction; overrides the config.
    #[arg(long)]
    pub ratio: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Directory of `class cx cy w h confidence` prediction files.
    #[arg(long)]
    pub detections: PathBuf,
    /// Directory of `class cx cy w h` annotation files.
    #[arg(long)]
    pub annotations: PathBuf,
    /// Dataset config holding the class names.
    #[arg(long = "names", alias = "config")]
    pub names: PathBuf,
    /// Square frame size in pixels used to denormalize boxes.
    #[arg(long, default_value_t = FRAME_SIZE)]
    pub img_size: f64,
    /// Confidence threshold for the headline precision and recall.
    #[arg(long, default_value_t = 0.25)]
    pub threshold: f64,
    /// Where to write metrics.json and the curve CSVs.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// CSV with header `epoch,precision,recall,map50,map50_95`.
    pub input: PathBuf,
}

/// Failure of a command, carrying its exit code.
#[derive(Debug)]
pub struct CommandError {
    pub code: u8,
    pub message: String,
}

impl CommandError {
    fn input(e: impl ToString) -> Self {
        CommandError {
            code: EXIT_INPUT,
            message: e.to_string(),
        }
    }

    fn output(path: &Path, e: impl ToString) -> Self {
        CommandError {
            code: EXIT_IO,
            message: format!("{}: {}", path.display(), e.to_string()),
        }
    }
}

impl From<Error> for CommandError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Io(_) | Error::Transport(_) => EXIT_IO,
            _ => EXIT_INPUT,
        };
        CommandError {
            code,
            message: e.to_string(),
        }
    }
}

type CmdResult<T = ()> = Result<T, CommandError>;

/// Everything needed to rerun a `simulate` or `gen-dataset` invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub v: u32,
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    pub n_cans: u64,
    pub config: RunConfig,
    pub outputs: Vec<String>,
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
        }
    };
    let result = match cli.command {
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Evaluate(a) => cmd_evaluate(&a),
        Command::GenDataset(a) => cmd_gen_dataset(&a),
        Command::Report(a) => cmd_report(&a),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

const DEFAULT_CANS: u64 = 100;

struct ResolvedRun {
    config: RunConfig,
    seed: u64,
    n_cans: u64,
}

fn resolve_run(src: &RunSource, command: &str) -> CmdResult<ResolvedRun> {
    let (config, seed, n) = if let Some(path) = &src.manifest {
        let text = read_input(path)?;
        let m: RunManifest = serde_json::from_str(&text)
            .map_err(|e| CommandError::input(format!("{}: {e}", path.display())))?;
        if m.command != command {
            return Err(CommandError::input(format!(
                "manifest was written by `{}`, not `{command}`",
                m.command
            )));
        }
        m.config.validate()?;
        (m.config, m.seed, Some(m.n_cans))
    } else if let Some(path) = &src.config {
        let cfg = RunConfig::load(path)?;
        let seed = cfg.seed;
        (cfg, seed, None)
    } else {
        (RunConfig::default(), 0, None)
    };
    let seed = src.seed.unwrap_or(seed);
    let mut config = config;
    config.seed = seed;
    Ok(ResolvedRun {
        config,
        seed,
        n_cans: src.n.or(n).unwrap_or(DEFAULT_CANS),
    })
}

fn read_input(path: &Path) -> CmdResult<String> {
    fs::read_to_string(path).map_err(|e| {
        let code = if e.kind() == io::ErrorKind::NotFound {
            EXIT_INPUT
        } else {
            EXIT_IO
        };
        CommandError {
            code,
            message: format!("cannot read {}: {e}", path.display()),
        }
    })
}

fn write_output(path: &Path, contents: impl AsRef<[u8]>) -> CmdResult {
    fs::write(path, contents).map_err(|e| CommandError::output(path, e))
}

fn create_dir(path: &Path) -> CmdResult {
    fs::create_dir_all(path).map_err(|e| CommandError::output(path, e))
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("value serializes to JSON");
    s.push('\n');
    s
}

fn write_manifest(out: &Path, command: &str, run: &ResolvedRun, outputs: &[&str]) -> CmdResult {
    let manifest = RunManifest {
        v: 1,
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: command.into(),
        seed: run.seed,
        n_cans: run.n_cans,
        config: run.config.clone(),
        outputs: outputs.iter().map(|s| s.to_string()).collect(),
    };
    write_output(&out.join(RUN_MANIFEST), to_json(&manifest))
}

pub fn cmd_simulate(args: &SimulateArgs) -> CmdResult {
    let run = resolve_run(&args.run, "simulate")?;
    let out = &args.run.out;
    let setup = run.config.setup();
    setup.validate()?;
    create_dir(out)?;

    let telemetry_file = match run.config.telemetry.sink {
        SinkKind::File => Some(run.config.telemetry.file.clone()),
        SinkKind::None => None,
    };
    let mut outputs = vec!["events.jsonl", "summary.json"];
    if let Some(f) = &telemetry_file {
        outputs.push(f.as_str());
    }
    write_manifest(out, "simulate", &run, &outputs)?;

    let result = run_simulation(&setup, run.n_cans, run.seed)?;
    write_output(&out.join("events.jsonl"), encode_event_log(&result.events))?;

    let mut summary = result.summary.clone();
    if let Some(f) = &telemetry_file {
        let path = out.join(f);
        let sink = FileSink::create(&path).map_err(|e| CommandError::output(&path, e))?;
        let mut publisher = Publisher::new(sink);
        for e in &result.events {
            publisher.submit(e);
        }
        let (mut sink, stats) = publisher.finish(PUBLISH_RETRIES);
        sink.close().map_err(|e| CommandError::output(&path, e))?;
        summary.telemetry = Some(TelemetryReport {
            sink: "file".into(),
            sink_dropped: stats.sink_dropped(),
            stats,
        });
    }
    write_output(&out.join("summary.json"), to_json(&summary))?;

    println!(
        "simulated {} cans on {}: accepted {}, rejected {}, sorting errors {}, {:.2} cans/min",
        summary.n_cans,
        summary.line_id,
        summary.bins.accepted,
        summary.bins.rejected,
        summary.confusion.sorting_errors(),
        summary.throughput_cans_per_min
    );
    Ok(())
}

fn parse_rates(s: &str) -> CmdResult<FaultRates> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let values: Vec<f64> = parts
        .iter()
        .map(|p| p.parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| CommandError::input(format!("invalid rates {s:?}")))?;
    let rates = match values.as_slice() {
        [p] => FaultRates::uniform(*p),
        [a, b, c] => FaultRates {
            easy_open: *a,
            contour: *b,
            label: *c,
        },
        _ => {
            return Err(CommandError::input(format!(
                "rates must be one value or easy_open,contour,label; got {s:?}"
            )))
        }
    };
    rates.validate()?;
    Ok(rates)
}

#[derive(Serialize)]
struct ManifestEntry<'a> {
    can_id: u64,
    stem: &'a str,
    easy_open_fault: bool,
    contour_fault: bool,
    label_fault: bool,
    label_text: &'a str,
}

fn can_stem(can_id: u64) -> String {
    format!("can_{can_id:06}")
}

pub fn cmd_gen_dataset(args: &GenDatasetArgs) -> CmdResult {
    let mut run = resolve_run(&args.run, "gen-dataset")?;
    if let Some(r) = &args.rates {
        run.config.fault_rates = parse_rates(r)?;
    }
    if let Some(r) = args.ratio {
        run.config.dataset.split_ratio = r;
    }
    run.config.validate()?;
    if run.n_cans == 0 {
        return Err(CommandError::input("--n must be at least 1"));
    }
    let out = &args.run.out;
    let classes = ClassList::default();
    let stems: Vec<String> = (1..=run.n_cans).map(can_stem).collect();
    let split = split_dataset(&stems, run.config.dataset.split_ratio, run.seed)?;

    create_dir(out)?;
    write_manifest(
        out,
        "gen-dataset",
        &run,
        &[
            "labels/",
            "predictions/",
            "manifest.jsonl",
            "train.txt",
            "val.txt",
            "data.yaml",
        ],
    )?;
    let labels = out.join("labels");
    let predictions = out.join("predictions");
    create_dir(&labels)?;
    create_dir(&predictions)?;

    let mut manifest = String::new();
    for (can_id, stem) in (1..=run.n_cans).zip(&stems) {
        let can = generate_can(
            can_id,
            &run.config.fault_rates,
            &mut substream(run.seed, can_id, Stream::Generate),
        );
        write_output(
            &labels.join(format!("{stem}.txt")),
            write_annotation_file(&can.truth_boxes),
        )?;
        let dets = mock_detect(
            &can,
            &run.config.detector,
            &mut substream(run.seed, can_id, Stream::Detect),
        );
        write_output(
            &predictions.join(format!("{stem}.txt")),
            write_prediction_file(&dets, FRAME_SIZE, FRAME_SIZE)?,
        )?;
        let entry = ManifestEntry {
            can_id,
            stem,
            easy_open_fault: can.easy_open_fault,
            contour_fault: can.contour_fault,
            label_fault: can.label_fault,
            label_text: &can.label_text_truth,
        };
        manifest.push_str(&serde_json::to_string(&entry).expect("entry serializes"));
        manifest.push('\n');
    }
    write_output(&out.join("manifest.jsonl"), manifest)?;

    let listing = |ids: &[String]| ids.iter().map(|s| format!("{s}\n")).collect::<String>();
    write_output(&out.join("train.txt"), listing(&split.train))?;
    write_output(&out.join("val.txt"), listing(&split.val))?;
    let data = DatasetConfig {
        train_path: "train.txt".into(),
        val_path: "val.txt".into(),
        class_names: classes.names().to_vec(),
    };
    write_output(&out.join("data.yaml"), data.render())?;

    println!(
        "generated {} cans ({} train, {} val) in {}",
        run.n_cans,
        split.train.len(),
        split.val.len(),
        out.display()
    );
    Ok(())
}

#[derive(Debug, Serialize)]
struct EvaluationReport {
    images: usize,
    detections: usize,
    ground_truths: usize,
    conf_threshold: f64,
    precision: f64,
    recall: f64,
    map50: f64,
    map50_95: f64,
    ap50: BTreeMap<String, f64>,
}

fn ensure_dir(path: &Path) -> CmdResult {
    if path.is_dir() {
        Ok(())
    } else {
        Err(CommandError::input(format!(
            "{} is not a directory",
            path.display()
        )))
    }
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> CmdResult {
    let size = args.img_size;
    if !(size.is_finite() && size > 0.0) {
        return Err(CommandError::input("--img-size must be positive"));
    }
    if !(0.0..=1.0).contains(&args.threshold) {
        return Err(CommandError::input("--threshold must be in [0, 1]"));
    }
    let data = parse_dataset_config(&read_input(&args.names)?)?;
    let classes = data.class_list()?;
    ensure_dir(&args.detections)?;
    ensure_dir(&args.annotations)?;
    let truths = read_annotation_dir(&args.annotations, &classes)?;
    let mut dets = read_prediction_dir(&args.detections, &classes, size, size)?;

    let mut scenes = Vec::new();
    for (stem, anns) in &truths {
        let truths = anns
            .iter()
            .map(|a| {
                Ok(TruthBox {
                    bbox: to_corner_form(&a.bbox, size, size)?,
                    label: a.label.clone(),
                })
            })
            .collect::<crate::Result<Vec<_>>>()?;
        scenes.push(Scene {
            detections: dets.remove(stem).unwrap_or_default(),
            truths,
        });
    }
    // Predictions for images without an annotation file are all false
    // positives.
    for (_, d) in dets {
        scenes.push(Scene {
            detections: d,
            truths: Vec::new(),
        });
    }

    let ap50 = evaluate_at(&scenes, 0.5)?;
    let map50_95 = map_range(&scenes)?;
    let (precision, recall, ranked) = precision_recall_at(&scenes, 0.5, args.threshold);
    let n_gt: usize = scenes.iter().map(|s| s.truths.len()).sum();

    let report = EvaluationReport {
        images: scenes.len(),
        detections: ranked.len(),
        ground_truths: n_gt,
        conf_threshold: args.threshold,
        precision,
        recall,
        map50: ap50.mean,
        map50_95,
        ap50: ap50
            .per_class
            .iter()
            .map(|(id, ap)| (classes.names()[*id].clone(), *ap))
            .collect(),
    };
    let json = to_json(&report);
    if let Some(out) = &args.out {
        create_dir(out)?;
        write_output(&out.join("metrics.json"), &json)?;
        write_output(
            &out.join("pr_curve.csv"),
            pr_curve_csv(&pr_curve(&ranked, n_gt)),
        )?;
        write_output(
            &out.join("confidence_precision.csv"),
            confidence_curve_csv(&precision_confidence_curve(&ranked)),
        )?;
    }
    print!("{json}");
    Ok(())
}

pub fn cmd_report(args: &ReportArgs) -> CmdResult {
    let rows = ingest_metrics_table(&read_input(&args.input)?)?;
    print!("{}", format_metrics_table(&rows));
    Ok(())
}
