//! Command-line front end: `gen`, `train`, `eval`, `infer` and `plot`.
//!
//! Every command writes one `*.manifest.json` next to its outputs. Only the
//! manifest carries a timestamp, so all other outputs are byte-identical
//! across repeated runs with the same flags.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 divergence.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attention::{looking_score, looks_csv};
use crate::error::Error;
use crate::fusion::{rank_agents, NEUTRAL_LOOK};
use crate::intervene::{identify_risk_object, InterventionResult};
use crate::metrics::{ap_csv, macc_csv, ApRow, THRESHOLDS};
use crate::plot;
use crate::synthgen::{generate, ingest_raid, write_jsonl, WorldConfig};
use crate::train::{evaluate, loss_csv, resume, train, Checkpoint, TrainConfig};
use crate::types::{AgentClass, Episode, RiskSituation};

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "RISKID_OUT_DIR";

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "riskid", version, about = "Risk-object identification by masking intervention")]
pub struct Cli {
    /// Random seed, overriding the configuration file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Configuration file (world config for `gen`, training config for `train`).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output path (a file for `gen`, `train`, `infer` and `plot`; a
    /// directory for `eval`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Log progress to stderr.
    #[arg(long, short, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic episodes as JSONL.
    Gen(GenArgs),
    /// Train a model and write a checkpoint plus loss curve.
    Train(TrainArgs),
    /// Evaluate a checkpoint on labelled episodes.
    Eval(EvalArgs),
    /// Identify and rank the risk objects of one episode.
    Infer(InferArgs),
    /// Render an inference result or a loss curve as SVG.
    Plot(PlotArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Number of episodes to write
    #[arg(long)]
    pub episodes: usize,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training episodes (JSONL).
    #[arg(long)]
    pub data: PathBuf,
    /// Continue from this checkpoint instead of initialising.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Number of updates, overriding the configuration.
    #[arg(long)]
    pub iterations: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Trained checkpoint
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Test episodes (JSONL).
    #[arg(long)]
    pub data: PathBuf,
    /// Add a baseline row; only `random` is available.
    #[arg(long)]
    pub baseline: Option<String>,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    /// Trained checkpoint
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Episode file (JSONL).
    #[arg(long)]
    pub episode: PathBuf,
    /// Zero-based line of the episode within the file.
    #[arg(long, default_value_t = 0)]
    pub index: usize,
    /// Weight of attentiveness relative to the intervention score.
    #[arg(long, default_value_t = 1.0)]
    pub attention_weight: f64,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    /// Inference JSON or loss-curve CSV.
    #[arg(long)]
    pub input: PathBuf,
}

/// Provenance of one command's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// SHA-256 of the effective configuration, when the command has one.
    pub config_hash: Option<String>,
    pub seed: Option<u64>,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub artifact_version: String,
    pub timestamp: String,
}

/// One ranked agent in an inference result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub track_id: i64,
    pub class: AgentClass,
    pub s_roi: f64,
    /// Present for pedestrians with a face feature and a trained classifier.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s_look: Option<f64>,
    pub s_risk: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferOutput {
    pub situation: RiskSituation,
    pub intervention: InterventionResult,
    pub ranking: Vec<RankedEntry>,
}

/// A failed command: its message and exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Divergence { .. } => EXIT_DIVERGED,
            Error::Config(_) => EXIT_USAGE,
            _ => EXIT_DATA,
        };
        Self { code, message: e.to_string() }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Error::from(e).into()
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure { code: EXIT_USAGE, message: message.into() }
}

type Outcome = std::result::Result<(), Failure>;

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    if cli.verbose {
        let _ = env_logger::Builder::from_default_env().filter_level(log::LevelFilter::Info).try_init();
    }
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

pub fn execute(cli: &Cli) -> Outcome {
    match &cli.command {
        Command::Gen(a) => cmd_gen(cli, a),
        Command::Train(a) => cmd_train(cli, a),
        Command::Eval(a) => cmd_eval(cli, a),
        Command::Infer(a) => cmd_infer(cli, a),
        Command::Plot(a) => cmd_plot(cli, a),
    }
}

fn out_path(cli: &Cli, default_name: &str) -> PathBuf {
    cli.out.clone().unwrap_or_else(|| {
        std::env::var_os(OUT_DIR_ENV).map_or_else(|| PathBuf::from("."), PathBuf::from).join(default_name)
    })
}

/// `path` with `suffix` appended to its file name.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().map(OsString::from).unwrap_or_else(|| OsString::from("out"));
    name.push(suffix);
    path.with_file_name(name)
}

fn ensure_parent(path: &Path) -> Outcome {
    if let Some(p) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(p)?;
    }
    Ok(())
}

fn hash_text(text: &str) -> String {
    Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

fn write_manifest(path: &Path, manifest: &RunManifest) -> Outcome {
    let text = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    std::fs::write(path, text + "\n")?;
    Ok(())
}

fn manifest(
    command: &str,
    config: Option<&str>,
    seed: Option<u64>,
    inputs: &[&Path],
    outputs: &[&Path],
) -> RunManifest {
    let show = |ps: &[&Path]| ps.iter().map(|p| p.display().to_string()).collect();
    RunManifest {
        command: command.into(),
        config_hash: config.map(hash_text),
        seed,
        inputs: show(inputs),
        outputs: show(outputs),
        artifact_version: env!("CARGO_PKG_VERSION").into(),
        timestamp: chrono::Utc::now().to_rfc3339(),
    }
}

fn read_episodes(path: &Path) -> std::result::Result<Vec<Episode>, Failure> {
    if !path.exists() {
        return Err(Failure { code: EXIT_DATA, message: format!("{} does not exist", path.display()) });
    }
    let episodes = ingest_raid(path).map_err(|e| Failure {
        code: EXIT_DATA,
        message: format!("{}: {e}", path.display()),
    })?;
    if episodes.is_empty() {
        return Err(Failure { code: EXIT_DATA, message: format!("{} holds no episodes", path.display()) });
    }
    Ok(episodes)
}

pub fn cmd_gen(cli: &Cli, args: &GenArgs) -> Outcome {
    if args.episodes == 0 {
        return Err(usage("--episodes must be at least 1"));
    }
    let mut cfg = match &cli.config {
        Some(p) => WorldConfig::load(p)?,
        None => WorldConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let out = out_path(cli, "episodes.jsonl");
    ensure_parent(&out)?;
    let episodes = generate(&cfg, args.episodes)?;
    write_jsonl(&out, &episodes)?;
    let inputs: Vec<&Path> = cli.config.iter().map(PathBuf::as_path).collect();
    let text = cfg.to_toml();
    write_manifest(
        &sibling(&out, ".manifest.json"),
        &manifest("gen", Some(&text), Some(cfg.seed), &inputs, &[&out]),
    )?;
    println!("wrote {} episodes to {}", episodes.len(), out.display());
    Ok(())
}

pub fn cmd_train(cli: &Cli, args: &TrainArgs) -> Outcome {
    let episodes = read_episodes(&args.data)?;
    let out = out_path(cli, "model.ckpt");
    ensure_parent(&out)?;
    let (ckpt, records) = match &args.resume {
        Some(path) => {
            let mut ckpt = Checkpoint::load(path)?;
            if let Some(p) = &cli.config {
                let cfg = TrainConfig::load(p)?;
                if cfg.model != ckpt.config.model {
                    return Err(Failure {
                        code: EXIT_DATA,
                        message: "the configuration's model does not match the checkpoint".into(),
                    });
                }
                ckpt.config = cfg;
            }
            let more = args.iterations.unwrap_or(ckpt.config.iterations);
            resume(ckpt, &episodes, more)?
        }
        None => {
            let mut cfg = match &cli.config {
                Some(p) => TrainConfig::load(p)?,
                None => TrainConfig::default(),
            };
            if let Some(s) = cli.seed {
                cfg.seed = s;
            }
            if let Some(n) = args.iterations {
                cfg.iterations = n;
            }
            train(&cfg, &episodes)?
        }
    };
    ckpt.save(&out)?;
    let loss_path = sibling(&out, ".loss.csv");
    std::fs::write(&loss_path, loss_csv(&records))?;
    let mut inputs = vec![args.data.as_path()];
    inputs.extend(cli.config.as_deref());
    inputs.extend(args.resume.as_deref());
    let text = ckpt.config.to_toml();
    write_manifest(
        &sibling(&out, ".manifest.json"),
        &manifest("train", Some(&text), Some(ckpt.config.seed), &inputs, &[&out, &loss_path]),
    )?;
    println!("trained to iteration {}; checkpoint at {}", ckpt.iteration, out.display());
    Ok(())
}

fn fmt_ap(v: f64) -> String {
    if v.is_nan() { "-".into() } else { format!("{v:.2}") }
}

/// Summary table with the response, action and risk columns of the AP table.
fn summary_table(rows: &[ApRow]) -> String {
    let mut out = format!(
        "{:<22} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8}\n",
        "method", "left", "right", "straight", "act mAP", "continue", "alter", "resp mAP", "mAcc"
    );
    for r in rows {
        let a = r.action.map_or(["-".to_string(), "-".into(), "-".into(), "-".into()], |a| {
            [fmt_ap(a[0]), fmt_ap(a[1]), fmt_ap(a[2]), fmt_ap((a[0] + a[1] + a[2]) / 3.0)]
        });
        let resp = (r.response[0] + r.response[1]) / 2.0;
        out.push_str(&format!(
            "{:<22} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8.2}\n",
            r.method,
            a[0],
            a[1],
            a[2],
            a[3],
            fmt_ap(r.response[0]),
            fmt_ap(r.response[1]),
            fmt_ap(resp),
            r.macc
        ));
    }
    out
}

pub fn cmd_eval(cli: &Cli, args: &EvalArgs) -> Outcome {
    let with_random = match args.baseline.as_deref() {
        None => false,
        Some("random") => true,
        Some(other) => return Err(usage(format!("unknown baseline `{other}`; available: random"))),
    };
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let episodes = read_episodes(&args.data)?;
    let seed = cli.seed.unwrap_or(ckpt.config.seed);
    let report = evaluate(&ckpt, &episodes, seed)?;
    let dir = out_path(cli, "eval");
    std::fs::create_dir_all(&dir)?;

    let macc_path = dir.join("macc.csv");
    std::fs::write(&macc_path, macc_csv(&report.macc, with_random.then_some(&report.random)))?;
    let mut rows = vec![report.ap.clone()];
    if with_random {
        rows.push(ApRow { method: "random_selection".into(), action: None, response: [f64::NAN; 2], macc: report.random.average.macc });
    }
    let ap_path = dir.join("ap.csv");
    std::fs::write(&ap_path, ap_csv(&rows))?;
    let results_path = dir.join("interventions.jsonl");
    let mut lines = String::new();
    for r in &report.results {
        lines.push_str(&serde_json::to_string(r).expect("result serializes"));
        lines.push('\n');
    }
    std::fs::write(&results_path, lines)?;
    let mut outputs = vec![macc_path.as_path(), ap_path.as_path(), results_path.as_path()];

    let looks_path = dir.join("looks.csv");
    if let Some(head) = &ckpt.attention {
        let mut looks = Vec::new();
        for (i, e) in episodes.iter().enumerate() {
            for n in e.final_frame().nodes.iter().filter(|n| n.present && n.class == AgentClass::Person) {
                if let Ok(s) = looking_score(e, n.track_id, &head.classifier) {
                    looks.push((i, n.track_id, s));
                }
            }
        }
        std::fs::write(&looks_path, looks_csv(&looks))?;
        outputs.push(looks_path.as_path());
    }

    print!("{}", summary_table(&rows));
    println!(
        "causal accuracy {:.2}% (random {:.2}%) over {} episodes; thresholds {:.2}..{:.2}",
        report.causal_accuracy,
        report.random_causal_accuracy,
        report.results.len(),
        THRESHOLDS[0],
        THRESHOLDS[THRESHOLDS.len() - 1]
    );
    write_manifest(
        &dir.join("eval.manifest.json"),
        &manifest("eval", None, Some(seed), &[&args.checkpoint, &args.data], &outputs),
    )?;
    Ok(())
}

/// Intervention plus joint-risk ranking of one episode.
pub fn infer_episode(ckpt: &Checkpoint, episode: &Episode, weight: f64) -> crate::error::Result<InferOutput> {
    let intervention = identify_risk_object(episode, &ckpt.model)?;
    let mut looks = BTreeMap::new();
    let mut measured = BTreeMap::new();
    for &id in intervention.scores.keys() {
        let node = episode.final_frame().node(id).expect("candidate in the last frame");
        let s = match (&ckpt.attention, node.class) {
            (Some(head), AgentClass::Person) => looking_score(episode, id, &head.classifier).ok(),
            _ => None,
        };
        if let Some(s) = s {
            measured.insert(id, s);
        }
        looks.insert(id, s.unwrap_or(NEUTRAL_LOOK));
    }
    let ranking = rank_agents(&intervention, &looks, weight)?
        .into_iter()
        .map(|r| RankedEntry {
            track_id: r.track_id,
            class: episode.final_frame().node(r.track_id).expect("ranked track").class,
            s_roi: r.risk.s_roi,
            s_look: measured.get(&r.track_id).copied(),
            s_risk: r.risk.s_risk,
        })
        .collect();
    Ok(InferOutput { situation: episode.situation, intervention, ranking })
}

pub fn cmd_infer(cli: &Cli, args: &InferArgs) -> Outcome {
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let episodes = read_episodes(&args.episode)?;
    let episode = episodes.get(args.index).ok_or_else(|| {
        usage(format!("--index {} is out of range for {} episodes", args.index, episodes.len()))
    })?;
    let mut output = infer_episode(&ckpt, episode, args.attention_weight)?;
    output.intervention.episode = Some(args.index);
    let text = serde_json::to_string_pretty(&output).expect("inference serializes") + "\n";
    let out = out_path(cli, "inference.json");
    ensure_parent(&out)?;
    std::fs::write(&out, &text)?;
    print!("{text}");
    write_manifest(
        &sibling(&out, ".manifest.json"),
        &manifest("infer", None, None, &[&args.checkpoint, &args.episode], &[&out]),
    )?;
    Ok(())
}

pub fn cmd_plot(cli: &Cli, args: &PlotArgs) -> Outcome {
    let text = std::fs::read_to_string(&args.input)
        .map_err(|e| Failure { code: EXIT_DATA, message: format!("{}: {e}", args.input.display()) })?;
    if text.trim().is_empty() {
        return Err(Failure { code: EXIT_DATA, message: format!("{} is empty", args.input.display()) });
    }
    let svg = if text.trim_start().starts_with('{') {
        let inference: InferOutput = serde_json::from_str(&text)
            .map_err(|e| Failure { code: EXIT_DATA, message: format!("{}: {e}", args.input.display()) })?;
        plot::risk_bars(&inference)
    } else {
        plot::loss_curves(&text)?
    };
    let out = out_path(cli, "plot.svg");
    ensure_parent(&out)?;
    std::fs::write(&out, svg)?;
    write_manifest(&sibling(&out, ".manifest.json"), &manifest("plot", None, None, &[&args.input], &[&out]))?;
    println!("wrote {}", out.display());
    Ok(())
}
