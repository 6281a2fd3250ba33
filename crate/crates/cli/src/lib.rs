//! The `hspace` command line.
//!
//! Every subcommand resolves its flags and optional `--config` JSON into one
//! config document, runs, and writes `run-<command>.json` into the output
//! directory. `hspace replay <manifest>` re-runs a command from that record.
//!
//! Exit codes: 0 success, 2 config or input error, 3 model load or backend
//! failure, 4 inconsistent data, 1 anything else. Failures also print one JSON
//! line on stderr: `{"error": {"kind", "exit_code", "message"}}`.

pub mod commands;
pub mod manifest;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use hspace_core::{Error, ErrorKind, Result};
use serde::Serialize;
use serde_json::{json, Value};

use commands::{out_of, overlay, read_json, run_command};
use manifest::{hash_input, now, RunManifest, TOOLKIT_VERSION};

#[derive(Parser, Debug)]
#[command(name = "hspace", version, about = "Sample and analyse diffusion h-space vectors")]
pub struct Cli {
    /// JSON config for the subcommand; flags override its fields.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Sample h-vectors for prompts x seeds into an archive.
    Sample(SampleArgs),
    /// Build neutral counterparts and pairings for a concept-bearing corpus.
    Neutralize(NeutralizeArgs),
    /// Draft a caption corpus with the text-generation service.
    Draft,
    /// One-to-one concept gaps over seed-paired prompts.
    Compare(CompareArgs),
    /// Rank corpus prompts between two anchors.
    Rank(RankArgs),
    /// Embed, cluster and report one seed's vectors.
    Cluster(ClusterArgs),
    /// Generate with cluster averages injected into h-space.
    Condition(ConditionArgs),
    /// Classify generated images and correlate with gaps.
    Validate(ValidateArgs),
    /// Run the explorer HTTP service.
    Serve(ServeArgs),
    /// Re-run a command from its run manifest.
    Replay { manifest: PathBuf },
}

#[derive(Args, Debug, Default)]
pub struct SampleArgs {
    #[arg(long)]
    pub backend_config: Option<PathBuf>,
    #[arg(long)]
    pub prompts: Option<PathBuf>,
    /// Count (60), range (10..20) or list (1,4,9).
    #[arg(long)]
    pub seeds: Option<String>,
    #[arg(long)]
    pub archive: Option<PathBuf>,
    #[arg(long)]
    pub images: Option<PathBuf>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub deterministic: bool,
}

#[derive(Args, Debug, Default)]
pub struct NeutralizeArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub terms: Option<PathBuf>,
    #[arg(long)]
    pub concept: Option<String>,
    /// Take groups from the `group` field of JSON corpus items.
    #[arg(long, conflicts_with = "group_pattern")]
    pub group_field: bool,
    /// Take groups from the first capture of this regex.
    #[arg(long)]
    pub group_pattern: Option<String>,
}

#[derive(Args, Debug, Default)]
pub struct CompareArgs {
    #[arg(long)]
    pub archive: Option<PathBuf>,
    #[arg(long)]
    pub pairing: Option<PathBuf>,
}

#[derive(Args, Debug, Default)]
pub struct RankArgs {
    #[arg(long)]
    pub archive: Option<PathBuf>,
    #[arg(long)]
    pub anchor_a: Option<String>,
    #[arg(long)]
    pub anchor_b: Option<String>,
}

#[derive(Args, Debug, Default)]
pub struct ClusterArgs {
    #[arg(long)]
    pub archive: Option<PathBuf>,
    #[arg(long)]
    pub sampling_seed: Option<u64>,
    #[arg(long)]
    pub perplexity: Option<f64>,
    #[arg(long)]
    pub min_cluster_size: Option<usize>,
    #[arg(long)]
    pub embed_seed: Option<u64>,
    /// `embedded` (default) or `raw`.
    #[arg(long)]
    pub space: Option<String>,
    #[arg(long)]
    pub summarize: bool,
}

#[derive(Args, Debug, Default)]
pub struct ConditionArgs {
    #[arg(long)]
    pub map: Option<PathBuf>,
    /// Comma-separated cluster ids.
    #[arg(long, value_delimiter = ',')]
    pub clusters: Vec<i64>,
    #[arg(long, value_delimiter = ',')]
    pub weights: Vec<f64>,
    #[arg(long)]
    pub prompt: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, allow_negative_numbers = true)]
    pub scale: Option<f32>,
    #[arg(long)]
    pub backend_config: Option<PathBuf>,
}

#[derive(Args, Debug, Default)]
pub struct ValidateArgs {
    #[arg(long)]
    pub images: Option<PathBuf>,
    #[arg(long = "label")]
    pub labels: Vec<String>,
    /// Fixture scorer table.
    #[arg(long)]
    pub scorer_fixture: Option<PathBuf>,
    /// Remote scorer server.
    #[arg(long)]
    pub scorer_url: Option<String>,
    #[arg(long)]
    pub groups: Option<PathBuf>,
    #[arg(long)]
    pub archive: Option<PathBuf>,
    #[arg(long)]
    pub gaps: Option<PathBuf>,
    #[arg(long)]
    pub report_label: Option<String>,
    /// Classify only images of the archive's neutral prompts.
    #[arg(long)]
    pub neutral_only: bool,
}

#[derive(Args, Debug, Default)]
pub struct ServeArgs {
    #[arg(long)]
    pub archive: Option<PathBuf>,
    #[arg(long)]
    pub map: Option<PathBuf>,
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long)]
    pub backend_config: Option<PathBuf>,
    #[arg(long)]
    pub rankings: Option<PathBuf>,
    #[arg(long)]
    pub gaps: Option<PathBuf>,
    #[arg(long)]
    pub images: Option<PathBuf>,
    #[arg(long)]
    pub host: Option<String>,
    #[arg(long)]
    pub port: Option<u16>,
}

pub fn exit_code(kind: ErrorKind) -> i32 {
    match kind {
        ErrorKind::Config | ErrorKind::Input => 2,
        ErrorKind::Load | ErrorKind::Backend => 3,
        ErrorKind::Data | ErrorKind::Validation | ErrorKind::Numeric => 4,
        _ => 1,
    }
}

fn path_value(p: &Option<PathBuf>) -> Option<Value> {
    p.as_ref().map(|p| json!(p))
}

fn some<T: Serialize>(v: &Option<T>) -> Option<Value> {
    v.as_ref().map(|v| json!(v))
}

/// Merge the config file and flags into one document.
fn resolve(cli: &Cli) -> Result<(String, Value)> {
    let mut doc = match &cli.config {
        Some(path) => read_json::<Value>(path)?,
        None => json!({}),
    };
    if !doc.is_object() {
        return Err(Error::Config("config: must be a JSON object".into()));
    }
    overlay(&mut doc, "out", path_value(&cli.out));
    let name = match &cli.command {
        Command::Sample(a) => {
            if let Some(path) = &a.backend_config {
                doc["backend"] = read_json(path)?;
            }
            if a.deterministic {
                if !doc["backend"].is_object() {
                    return Err(Error::Config("backend: --deterministic needs a backend config".into()));
                }
                doc["backend"]["deterministic"] = json!(true);
            }
            overlay(&mut doc, "prompts_file", path_value(&a.prompts));
            if let Some(s) = &a.seeds {
                doc["seeds"] = json!(commands::sample::parse_seeds(s)?);
            }
            overlay(&mut doc, "archive", path_value(&a.archive));
            overlay(&mut doc, "images", path_value(&a.images));
            overlay(&mut doc, "workers", some(&a.workers));
            "sample"
        }
        Command::Neutralize(a) => {
            if let Some(path) = &a.corpus {
                doc["corpus"] = json!({"source": path});
            }
            if a.group_field || a.group_pattern.is_some() {
                if !doc["corpus"].is_object() {
                    return Err(Error::Config("corpus: group flags need --corpus or a corpus section".into()));
                }
                doc["corpus"]["group"] = match &a.group_pattern {
                    Some(p) => json!({"rule": "pattern", "pattern": p}),
                    None => json!({"rule": "field"}),
                };
            }
            overlay(&mut doc, "terms", path_value(&a.terms));
            overlay(&mut doc, "concept", some(&a.concept));
            "neutralize"
        }
        Command::Draft => "draft",
        Command::Compare(a) => {
            overlay(&mut doc, "archive", path_value(&a.archive));
            overlay(&mut doc, "pairing", path_value(&a.pairing));
            "compare"
        }
        Command::Rank(a) => {
            overlay(&mut doc, "archive", path_value(&a.archive));
            overlay(&mut doc, "anchor_a", some(&a.anchor_a));
            overlay(&mut doc, "anchor_b", some(&a.anchor_b));
            "rank"
        }
        Command::Cluster(a) => {
            overlay(&mut doc, "archive", path_value(&a.archive));
            overlay(&mut doc, "sampling_seed", some(&a.sampling_seed));
            overlay(&mut doc, "perplexity", some(&a.perplexity));
            overlay(&mut doc, "min_cluster_size", some(&a.min_cluster_size));
            overlay(&mut doc, "embed_seed", some(&a.embed_seed));
            overlay(&mut doc, "space", some(&a.space));
            if a.summarize {
                doc["summarize"] = json!(true);
            }
            "cluster"
        }
        Command::Condition(a) => {
            overlay(&mut doc, "map", path_value(&a.map));
            if !a.clusters.is_empty() {
                doc["clusters"] = json!(a.clusters);
            }
            if !a.weights.is_empty() {
                doc["weights"] = json!(a.weights);
            }
            overlay(&mut doc, "prompt", some(&a.prompt));
            overlay(&mut doc, "seed", some(&a.seed));
            overlay(&mut doc, "scale", some(&a.scale));
            if let Some(path) = &a.backend_config {
                doc["backend"] = read_json(path)?;
            }
            "condition"
        }
        Command::Validate(a) => {
            overlay(&mut doc, "images", path_value(&a.images));
            if !a.labels.is_empty() {
                doc["labels"] = json!(a.labels);
            }
            if let Some(p) = &a.scorer_fixture {
                doc["scorer"] = json!({"kind": "fixture", "path": p});
            }
            if let Some(u) = &a.scorer_url {
                doc["scorer"] = json!({"kind": "remote", "url": u});
            }
            overlay(&mut doc, "groups", path_value(&a.groups));
            overlay(&mut doc, "archive", path_value(&a.archive));
            overlay(&mut doc, "gaps", path_value(&a.gaps));
            overlay(&mut doc, "report_label", some(&a.report_label));
            if a.neutral_only {
                doc["neutral_only"] = json!(true);
            }
            "validate"
        }
        Command::Serve(a) => {
            overlay(&mut doc, "archive", path_value(&a.archive));
            overlay(&mut doc, "map", path_value(&a.map));
            overlay(&mut doc, "report", path_value(&a.report));
            overlay(&mut doc, "backend_config", path_value(&a.backend_config));
            overlay(&mut doc, "rankings", path_value(&a.rankings));
            overlay(&mut doc, "gaps", path_value(&a.gaps));
            overlay(&mut doc, "images", path_value(&a.images));
            overlay(&mut doc, "host", some(&a.host));
            overlay(&mut doc, "port", some(&a.port));
            "serve"
        }
        Command::Replay { manifest } => {
            let m = RunManifest::read(manifest)?;
            return Ok((m.command, m.config));
        }
    };
    Ok((name.to_string(), normalize(name, doc)?))
}

/// Round-trip through the typed config so the stored document has every
/// default spelled out.
fn normalize(command: &str, doc: Value) -> Result<Value> {
    use commands::from_value;
    Ok(match command {
        "sample" => json!(from_value::<commands::sample::SampleConfig>(doc, command)?.resolve()),
        "neutralize" => json!(from_value::<commands::corpus::NeutralizeConfig>(doc, command)?),
        "draft" => json!(from_value::<commands::corpus::DraftConfig>(doc, command)?),
        "compare" => json!(from_value::<commands::analyze::CompareConfig>(doc, command)?),
        "rank" => json!(from_value::<commands::analyze::RankConfig>(doc, command)?),
        "cluster" => json!(from_value::<commands::cluster::ClusterConfig>(doc, command)?),
        "condition" => json!(from_value::<commands::condition::ConditionConfig>(doc, command)?),
        "validate" => json!(from_value::<commands::validate::ValidateConfig>(doc, command)?),
        "serve" => json!(from_value::<commands::serve::ServeConfig>(doc, command)?),
        _ => doc,
    })
}

fn command_name(cli: &Cli) -> &'static str {
    match &cli.command {
        Command::Sample(_) => "sample",
        Command::Neutralize(_) => "neutralize",
        Command::Draft => "draft",
        Command::Compare(_) => "compare",
        Command::Rank(_) => "rank",
        Command::Cluster(_) => "cluster",
        Command::Condition(_) => "condition",
        Command::Validate(_) => "validate",
        Command::Serve(_) => "serve",
        Command::Replay { .. } => "replay",
    }
}

fn hashes(paths: &[PathBuf]) -> Vec<manifest::InputHash> {
    paths
        .iter()
        .flat_map(|p| match hash_input(p) {
            Ok(h) => h,
            Err(e) => {
                log::warn!("could not hash input {}: {e}", p.display());
                Vec::new()
            }
        })
        .collect()
}

/// Written by long-running commands before they block.
pub fn write_start_manifest<T: Serialize>(command: &str, config: &T, out: &Path) -> Result<()> {
    let inputs: Vec<PathBuf> = Vec::new();
    let t = now();
    RunManifest {
        command: command.to_string(),
        config: json!(config),
        inputs: hashes(&inputs),
        outputs: vec![],
        started_at: t.clone(),
        finished_at: t,
        toolkit_version: TOOLKIT_VERSION.to_string(),
        exit_code: 0,
        error: None,
    }
    .write(out)
    .map(|_| ())
}

fn report_error(e: &Error) -> i32 {
    let code = exit_code(e.kind());
    let line = json!({"error": {"kind": e.kind().as_str(), "exit_code": code, "message": e.to_string()}});
    eprintln!("{line}");
    code
}

/// Parse `args`, run, write the manifest and return the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init();

    let started_at = now();
    let (command, config, result) = match resolve(&cli) {
        Ok((command, config)) => {
            let result = run_command(&command, &config);
            (command, config, result)
        }
        Err(e) => (command_name(&cli).to_string(), Value::Null, Err(e)),
    };
    if command == "serve" && result.is_ok() {
        return 0;
    }
    let out = if config.is_null() {
        cli.out.clone().unwrap_or_else(commands::default_out)
    } else {
        out_of(&config)
    };
    let (ran, code, error) = match result {
        Ok(ran) => (ran, 0, None),
        Err(e) => (commands::Ran::default(), report_error(&e), Some(e.to_string())),
    };
    let manifest = RunManifest {
        command,
        config,
        inputs: hashes(&ran.inputs),
        outputs: ran.outputs,
        started_at,
        finished_at: now(),
        toolkit_version: TOOLKIT_VERSION.to_string(),
        exit_code: code,
        error,
    };
    if let Err(e) = manifest.write(&out) {
        let write_code = report_error(&e);
        return if code == 0 { write_code } else { code };
    }
    code
}
