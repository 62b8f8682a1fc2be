mod args;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::Parser;
use seqlabel_core::model::load_manifest;
use seqlabel_core::pipeline::{
    evaluate_dir, run_campseudo, run_merge, run_sequence, simulate_annotations, CamStageConfig,
    MetricsOptions, PropagateConfig, StageOutcome,
};
use seqlabel_core::sequencer::load_sequences;
use seqlabel_core::synthgen::generate_dataset;
use seqlabel_core::workspace::Workspace;
use seqlabel_core::{fsutil, Error, ErrorKind};
use serde_json::{json, Value};

use args::{Cli, Command, LogFormat};

fn exit_code(e: &Error) -> u8 {
    match e.kind() {
        ErrorKind::Io | ErrorKind::Locked => 1,
        ErrorKind::Validation => 2,
        ErrorKind::Partial => 3,
        ErrorKind::MissingAnnotation => 4,
        ErrorKind::EmptyEvaluation => 5,
    }
}

fn init_logging(format: LogFormat) {
    let filter = tracing_subscriber::EnvFilter::try_from_default_env()
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info"));
    let builder = tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr);
    match format {
        LogFormat::Json => builder.json().init(),
        LogFormat::Text => builder.init(),
    }
}

/// Prints the run record for a finished stage on stdout.
fn record(stage: &str, config: Value, started: Instant, extra: Value) {
    let mut out = json!({
        "stage": stage,
        "config": config,
        "elapsed_ms": started.elapsed().as_millis() as u64,
    });
    if let (Some(o), Value::Object(e)) = (out.as_object_mut(), extra) {
        o.extend(e);
    }
    println!("{}", serde_json::to_string(&out).expect("json values serialize"));
}

fn outcome_json(o: &StageOutcome) -> Value {
    json!({
        "written": o.written.len(),
        "warnings": o.warnings,
        "failures": o.failures,
    })
}

fn run(cli: Cli) -> seqlabel_core::Result<()> {
    let ws = Workspace::new(&cli.workspace);
    let manifest_path: PathBuf = cli.manifest.clone().unwrap_or_else(|| ws.manifest_path());
    let started = Instant::now();
    match cli.command {
        Command::Synth(a) => {
            let config = a.config(cli.seed);
            let _lock = ws.lock()?;
            let manifest = generate_dataset(&config, ws.root())?;
            record(
                "synth",
                serde_json::to_value(config).expect("config serializes"),
                started,
                json!({ "images": manifest.len(), "manifest": ws.manifest_path() }),
            );
        }
        Command::Sequence(a) => {
            let config = a.config();
            let manifest = load_manifest(&manifest_path)?;
            let _lock = ws.lock()?;
            let set = run_sequence(&ws, &manifest, &config)?;
            let sizes: Vec<usize> = set.sequences.iter().map(|s| s.len()).collect();
            let reps: Vec<&str> = set
                .sequences
                .iter()
                .map(|s| s.representative_id.as_str())
                .collect();
            record(
                "sequence",
                serde_json::to_value(config).expect("config serializes"),
                started,
                json!({ "n": set.n(), "sizes": sizes, "representatives": reps }),
            );
        }
        Command::Campseudo(a) => {
            let config = CamStageConfig {
                threshold: a.threshold(),
                crf: a.crf.stage().for_cam(a.crf.crf()),
            };
            let manifest = load_manifest(&manifest_path)?;
            let _lock = ws.lock()?;
            let outcome = run_campseudo(&ws, &manifest, &config)?;
            for w in &outcome.warnings {
                tracing::warn!("{w}");
            }
            record(
                "campseudo",
                serde_json::to_value(config).expect("config serializes"),
                started,
                outcome_json(&outcome),
            );
            outcome.into_result("campseudo")?;
        }
        Command::Merge(a) => {
            let config = PropagateConfig {
                merge: a.flags.options(),
                refine: a.flags.crf.stage().for_merge(a.flags.crf.crf()),
            };
            let manifest = load_manifest(&manifest_path)?;
            let seqs = load_sequences(&ws.sequences_path(), &manifest)?;
            let _lock = ws.lock()?;
            if a.simulate_annotations {
                simulate_annotations(&ws, &manifest, &seqs, a.annotation_noise)?;
            }
            let outcome = run_merge(&ws, &manifest, &seqs, &config)?;
            for w in &outcome.warnings {
                tracing::warn!("{w}");
            }
            record(
                "merge",
                serde_json::to_value(config).expect("config serializes"),
                started,
                outcome_json(&outcome),
            );
            outcome.into_result("merge")?;
        }
        Command::Metrics(a) => {
            let options = MetricsOptions {
                include_background: !a.exclude_background,
                ignore_as_background: a.ignore_as_background,
            };
            let manifest = load_manifest(&manifest_path)?;
            let pred = a.pred.clone().unwrap_or_else(|| ws.merged_dir());
            let report = evaluate_dir(&manifest, &pred, &options)?;
            let out = a
                .out
                .clone()
                .unwrap_or_else(|| ws.reports_dir().join("metrics.json"));
            let _lock = ws.lock()?;
            fsutil::write_json(&out, &report)?;
            record(
                "metrics",
                serde_json::to_value(options).expect("options serialize"),
                started,
                json!({
                    "report": out,
                    "images_evaluated": report.images_evaluated,
                    "mean_iou": report.mean_iou,
                    "fw_iou": report.fw_iou,
                }),
            );
        }
        Command::Serve(a) => {
            let config = seqlabel_service::ServiceConfig {
                workspace: cli.workspace.clone(),
                propagate: PropagateConfig {
                    merge: a.flags.options(),
                    refine: a.flags.crf.stage().for_merge(a.flags.crf.crf()),
                },
                max_upload_bytes: a.max_upload_bytes,
            };
            let addr = std::net::SocketAddr::new(a.bind, a.port);
            let rt = tokio::runtime::Builder::new_multi_thread()
                .enable_all()
                .build()
                .map_err(|e| Error::io(&cli.workspace, e))?;
            rt.block_on(seqlabel_service::serve(config, addr))
                .map_err(|e| Error::io(&cli.workspace, e))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(cli.log_format);
    if let Some(n) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
        {
            tracing::warn!("could not size worker pool: {e}");
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = exit_code(&e);
            let body = json!({ "error": e.code(), "message": e.to_string(), "exit_code": code });
            eprintln!("{body}");
            ExitCode::from(code)
        }
    }
}
