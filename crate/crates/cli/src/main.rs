//! `tep`: generate synthetic scenarios, run the pipeline, evaluate and
//! compare runs, or serve the mock backends over the wire protocol.
//!
//! Exit codes: 0 success, 1 usage or config error, 2 some videos failed,
//! 3 every video failed.

use std::collections::BTreeSet;
use std::io::{self, BufReader};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use tep_core::backends::mock::{MockProfile, VideoSource};
use tep_core::backends::{BackendSet, BackendSpec, Role};
use tep_core::config::Config;
use tep_core::dataset::{list_object_dirs, read_json, read_object_sequences, write_json, write_synthetic_dataset, write_text, Dataset};
use tep_core::metrics::{evaluate, format_percent, ObjectSequences, Scores, COLUMN_NAMES};
use tep_core::pipeline::{run_dataset, DatasetReport, FailedVideo, RunOptions, VideoReport};
use tep_core::protocol::server::{serve, serve_tcp, MockHandler};
use tep_core::simulator::{generate, scenario_suite, Suite};

const TIMEOUT_ENV: &str = "TEP_BACKEND_TIMEOUT_MS";

#[derive(Parser)]
#[command(name = "tep", version, about = "Tracking-enhanced prompting for video object segmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded scenario suite and its manifest.
    Simulate {
        #[arg(long)]
        suite: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the pipeline over a manifest and write predictions and reports.
    Run(RunArgs),
    /// Score a prediction directory against a ground-truth manifest.
    Eval {
        /// Run directory, or a manifest whose ground truth serves as predictions.
        #[arg(long)]
        pred: PathBuf,
        /// Ground-truth manifest.
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Also write report.txt and report.json here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare the reports of one or more run directories.
    Report {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
    },
    /// Serve the mock backends over the line protocol.
    Serve {
        /// Dataset root holding the scenario directories.
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_enum, default_value_t = Transport::Stdio)]
        transport: Transport,
        #[arg(long, default_value_t = 0)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, value_enum, default_value_t = ServeRole::All)]
        role: ServeRole,
        /// Mock profile for every served role.
        #[arg(long, default_value = "oracle")]
        profile: String,
    },
}

#[derive(clap::Args)]
struct RunArgs {
    #[arg(long, required_unless_present = "print_config")]
    manifest: Option<PathBuf>,
    #[arg(long, required_unless_present = "print_config")]
    out: Option<PathBuf>,
    /// TOML file with [fusion], [pipeline] and [protocol] sections; every key is required.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "mock:oracle")]
    segmenter: String,
    #[arg(long, default_value = "mock:oracle")]
    tracker: String,
    #[arg(long, default_value = "mock:oracle")]
    detector: String,
    #[arg(long, default_value = "mock:oracle")]
    judge: String,
    /// Plain segmenter propagation without classification or fusion.
    #[arg(long)]
    baseline_only: bool,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Print the default configuration and exit.
    #[arg(long)]
    print_config: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Transport {
    Stdio,
    Tcp,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ServeRole {
    All,
    Segmenter,
    Tracker,
    Detector,
    Judge,
}

/// Failure with a specific exit code.
struct Exit(u8, anyhow::Error);

impl From<anyhow::Error> for Exit {
    fn from(e: anyhow::Error) -> Self {
        Exit(1, e)
    }
}

type CmdResult = Result<u8, Exit>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Simulate { suite, seed, out } => simulate(&suite, seed, &out),
        Command::Run(args) => run(args),
        Command::Eval { pred, gt, config, out } => eval(&pred, &gt, config.as_deref(), out.as_deref()),
        Command::Report { runs } => report(&runs),
        Command::Serve {
            dataset,
            transport,
            port,
            host,
            role,
            profile,
        } => serve_cmd(&dataset, transport, &host, port, role, &profile),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(Exit(code, e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(code)
        }
    }
}

fn simulate(suite: &str, seed: u64, out: &Path) -> CmdResult {
    let suite: Suite = suite.parse().map_err(anyhow::Error::from)?;
    let videos = scenario_suite(suite, seed)
        .iter()
        .map(|spec| generate(&spec.name, spec))
        .collect::<tep_core::Result<Vec<_>>>()
        .map_err(anyhow::Error::from)?;
    let manifest = write_synthetic_dataset(out, &videos).map_err(|e| Exit(3, e.into()))?;
    println!("{}", manifest.display());
    Ok(0)
}

fn default_config_toml() -> String {
    let mut out = String::new();
    let mut section = "";
    for (sec, key, value) in Config::default_entries() {
        if sec != section {
            if !section.is_empty() {
                out.push('\n');
            }
            out.push_str(&format!("[{sec}]\n"));
            section = sec;
        }
        out.push_str(&format!("{key} = {value}\n"));
    }
    out
}

/// Parses a config file, insisting on every key so runs never depend on
/// silently changing defaults.
fn parse_config(text: &str) -> anyhow::Result<Config> {
    let table: toml::Table = toml::from_str(text).context("config is not valid TOML")?;
    for (section, key, default) in Config::default_entries() {
        let present = table
            .get(section)
            .and_then(|s| s.as_table())
            .is_some_and(|s| s.contains_key(&key));
        if !present {
            bail!("missing config key `{section}.{key}` (default: {default})");
        }
    }
    let config: Config = toml::from_str(text).context("invalid config")?;
    config.validate()?;
    Ok(config)
}

fn load_config(path: Option<&Path>) -> anyhow::Result<Config> {
    let mut config = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            parse_config(&text).with_context(|| format!("in {}", p.display()))?
        }
        None => Config::default(),
    };
    if let Ok(v) = std::env::var(TIMEOUT_ENV) {
        config.protocol.timeout_ms = v
            .trim()
            .parse()
            .with_context(|| format!("{TIMEOUT_ENV}=`{v}` is not a number of milliseconds"))?;
    }
    Ok(config)
}

fn exit_code(total: usize, failed: usize) -> u8 {
    match failed {
        0 => 0,
        f if f == total => 3,
        _ => 2,
    }
}

#[derive(Serialize)]
struct RunInfo<'a> {
    config: &'a Config,
    segmenter: String,
    tracker: String,
    detector: String,
    judge: String,
    baseline_only: bool,
}

fn run(args: RunArgs) -> CmdResult {
    if args.print_config {
        print!("{}", default_config_toml());
        return Ok(0);
    }
    let manifest = args.manifest.expect("required by clap");
    let out = args.out.expect("required by clap");
    let config = load_config(args.config.as_deref())?;
    let spec = |role: &str, s: &str| -> anyhow::Result<BackendSpec> {
        s.parse().with_context(|| format!("--{role}"))
    };
    let dataset = Dataset::load(&manifest).map_err(anyhow::Error::from)?;
    let backends = BackendSet {
        segmenter: spec("segmenter", &args.segmenter)?,
        tracker: spec("tracker", &args.tracker)?,
        detector: spec("detector", &args.detector)?,
        judge: spec("judge", &args.judge)?,
        source: VideoSource::disk(dataset.root.clone()),
        timeout: Duration::from_millis(config.protocol.timeout_ms),
    };
    backends.validate().map_err(anyhow::Error::from)?;
    let opts = RunOptions {
        baseline_only: args.baseline_only,
        jobs: args.jobs.max(1),
    };
    let result = run_dataset(&dataset, &backends, &config, opts).map_err(anyhow::Error::from)?;
    let io_fail = |e: tep_core::Error| Exit(3, e.into());
    result.write_artifacts(&out).map_err(io_fail)?;
    let info = RunInfo {
        config: &config,
        segmenter: backends.segmenter.to_string(),
        tracker: backends.tracker.to_string(),
        detector: backends.detector.to_string(),
        judge: backends.judge.to_string(),
        baseline_only: args.baseline_only,
    };
    write_json(&out.join("run.json"), &info).map_err(io_fail)?;
    let report = result.report();
    print!("{}", report.to_text());
    for f in &report.failed {
        eprintln!("video {} failed: {}", f.video_id, f.error);
    }
    Ok(exit_code(result.outcomes.len(), report.failed.len()))
}

fn eval_video(pred_root: &Path, dataset: &Dataset, video: &tep_core::dataset::VideoEntry, config: &Config) -> tep_core::Result<tep_core::metrics::EvalReport> {
    let gt = dataset
        .load_gt(video)?
        .ok_or_else(|| tep_core::Error::ManifestError(format!("video {} has no ground truth", video.video_id)))?;
    let dir = pred_root.join(&video.video_id);
    let expected: BTreeSet<String> = video.objects.iter().map(|o| o.object_id.clone()).collect();
    let found = list_object_dirs(&dir)?;
    if found != expected {
        return Err(tep_core::Error::ObjectSetMismatch(format!(
            "predicted {:?}, ground truth {:?}",
            found, expected
        )));
    }
    let pred = read_object_sequences(&dir, video)?;
    evaluate(&pred, &gt, &config.fusion.metrics())
}

fn eval(pred: &Path, gt: &Path, config: Option<&Path>, out: Option<&Path>) -> CmdResult {
    let config = load_config(config)?;
    let dataset = Dataset::load(gt).map_err(anyhow::Error::from)?;
    let pred_source = if pred.is_file() {
        Some(Dataset::load(pred).map_err(anyhow::Error::from)?)
    } else {
        None
    };
    let mut videos = Vec::new();
    let mut failed = Vec::new();
    for video in &dataset.manifest.videos {
        let result = match &pred_source {
            Some(p) => eval_from_manifest(p, &dataset, video, &config),
            None => eval_video(pred, &dataset, video, &config),
        };
        match result {
            Ok(report) => videos.push(VideoReport {
                video_id: video.video_id.clone(),
                report,
            }),
            Err(e) => failed.push(FailedVideo {
                video_id: video.video_id.clone(),
                error_kind: e.kind().to_string(),
                error: e.to_string(),
            }),
        }
    }
    let report = DatasetReport::new(videos, failed);
    print!("{}", report.to_text());
    if let Some(out) = out {
        let io_fail = |e: tep_core::Error| Exit(3, e.into());
        write_text(&out.join("report.txt"), &report.to_text()).map_err(io_fail)?;
        write_json(&out.join("report.json"), &report).map_err(io_fail)?;
    }
    Ok(exit_code(dataset.manifest.videos.len(), report.failed.len()))
}

/// Uses another manifest's ground truth as the prediction set.
fn eval_from_manifest(pred: &Dataset, gt: &Dataset, video: &tep_core::dataset::VideoEntry, config: &Config) -> tep_core::Result<tep_core::metrics::EvalReport> {
    let pred_video = pred
        .manifest
        .videos
        .iter()
        .find(|v| v.video_id == video.video_id)
        .ok_or_else(|| tep_core::Error::ManifestError(format!("no video {} in prediction manifest", video.video_id)))?;
    let missing = || tep_core::Error::ManifestError(format!("video {} has no ground truth", video.video_id));
    let p: ObjectSequences = pred.load_gt(pred_video)?.ok_or_else(missing)?;
    let g: ObjectSequences = gt.load_gt(video)?.ok_or_else(missing)?;
    evaluate(&p, &g, &config.fusion.metrics())
}

fn report(runs: &[PathBuf]) -> CmdResult {
    let mut reports = Vec::new();
    for dir in runs {
        let r: DatasetReport = match read_json(&dir.join("report.json")) {
            Ok(r) => r,
            Err(e) => {
                eprintln!("warning: skipping {}: {e}", dir.display());
                continue;
            }
        };
        reports.push((dir.display().to_string(), r));
    }
    if reports.is_empty() {
        return Err(Exit(1, anyhow::anyhow!("no readable run reports")));
    }
    let sets: Vec<BTreeSet<&str>> = reports
        .iter()
        .map(|(_, r)| r.videos.iter().map(|v| v.video_id.as_str()).collect())
        .collect();
    let common: BTreeSet<&str> = sets
        .iter()
        .skip(1)
        .fold(sets[0].clone(), |acc, s| acc.intersection(s).copied().collect());
    let union: BTreeSet<&str> = sets.iter().flatten().copied().collect();
    if union.len() != common.len() {
        let excluded: Vec<&str> = union.difference(&common).copied().collect();
        eprintln!(
            "warning: video sets differ; comparing {} common videos, excluded: {}",
            common.len(),
            excluded.join(", ")
        );
    }
    let rows: Vec<(String, Option<Scores>)> = reports
        .iter()
        .map(|(name, r)| {
            let scores = Scores::mean(
                r.videos
                    .iter()
                    .filter(|v| common.contains(v.video_id.as_str()))
                    .map(|v| &v.report.scores),
            );
            (name.clone(), scores)
        })
        .collect();
    print!("{}", comparison_table(&rows));
    Ok(0)
}

fn comparison_table(rows: &[(String, Option<Scores>)]) -> String {
    let width = rows.iter().map(|(n, _)| n.chars().count() + 2).max().unwrap_or(0).max(8);
    let mut out = format!("{:<width$}", "run");
    for c in COLUMN_NAMES {
        out.push_str(&format!("{c:>15}"));
    }
    out.push('\n');
    let cells = |vals: [String; 7]| vals.iter().map(|v| format!("{v:>15}")).collect::<String>();
    for (name, scores) in rows {
        let vals = match scores {
            Some(s) => s.formatted(),
            None => std::array::from_fn(|_| "-".to_string()),
        };
        out.push_str(&format!("{name:<width$}{}\n", cells(vals)));
    }
    if let Some((_, Some(first))) = rows.first() {
        for (name, scores) in &rows[1..] {
            let Some(s) = scores else { continue };
            let vals: [String; 7] = std::array::from_fn(|i| match (first.columns()[i], s.columns()[i]) {
                (Some(a), Some(b)) => format!("{:+.2}", (b - a) * 100.0),
                _ => format_percent(None),
            });
            out.push_str(&format!("{:<width$}{}\n", format!("Δ {name}"), cells(vals)));
        }
    }
    out
}

fn serve_cmd(dataset: &Path, transport: Transport, host: &str, port: u16, role: ServeRole, profile: &str) -> CmdResult {
    let roles: Vec<Role> = match role {
        ServeRole::All => vec![Role::Segmenter, Role::Tracker, Role::Detector, Role::Judge],
        ServeRole::Segmenter => vec![Role::Segmenter],
        ServeRole::Tracker => vec![Role::Tracker],
        ServeRole::Detector => vec![Role::Detector],
        ServeRole::Judge => vec![Role::Judge],
    };
    let profiles = roles
        .into_iter()
        .map(|r| Ok((r, MockProfile::for_role(r, profile)?)))
        .collect::<tep_core::Result<Vec<_>>>()
        .map_err(anyhow::Error::from)?;
    let source = Arc::new(VideoSource::disk(dataset.to_path_buf()));
    match transport {
        Transport::Stdio => {
            let mut handler = MockHandler::new(source, &profiles);
            let stdin = io::stdin();
            serve(BufReader::new(stdin.lock()), io::stdout().lock(), &mut handler).map_err(anyhow::Error::from)?;
        }
        Transport::Tcp => {
            let listener = TcpListener::bind((host, port)).with_context(|| format!("binding {host}:{port}"))?;
            let addr = listener.local_addr().context("reading bound address")?;
            eprintln!("listening on {addr}");
            serve_tcp(listener, move || MockHandler::new(source.clone(), &profiles)).map_err(anyhow::Error::from)?;
        }
    }
    Ok(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_parses_back() {
        let text = default_config_toml();
        assert_eq!(parse_config(&text).unwrap(), Config::default());
    }

    #[test]
    fn missing_key_names_key_and_default() {
        let text = default_config_toml().replace("evaluate_every = 1\n", "");
        let err = parse_config(&text).unwrap_err().to_string();
        assert!(err.contains("fusion.evaluate_every"), "{err}");
        assert!(err.contains("default: 1"), "{err}");
    }

    #[test]
    fn unknown_key_is_rejected() {
        let text = default_config_toml() + "\n[extra]\nx = 1\n";
        assert!(parse_config(&text).is_err());
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(3, 0), 0);
        assert_eq!(exit_code(3, 1), 2);
        assert_eq!(exit_code(3, 3), 3);
    }
}
