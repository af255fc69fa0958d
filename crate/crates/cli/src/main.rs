//! `capedit`: batch workflows for explicit caption editing.

mod commands;
mod records;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::records::Status;

#[derive(Parser, Debug)]
#[command(name = "capedit", version, about = "Explicit caption editing toolkit")]
struct Cli {
    /// Directory that relative input paths are resolved against.
    #[arg(long, global = true, env = "CAPEDIT_DATA_ROOT")]
    data_root: Option<PathBuf>,

    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Derive the minimal KEEP/DELETE/ADD script of every instance.
    Derive(DeriveArgs),
    /// Run the multi-round editor over instances.
    Edit(EditArgs),
    /// Score edited captions; prints a text table.
    Eval(EvalArgs),
    /// Build COCO-EE style instances from captions and pair scores.
    #[command(name = "build-cocoee")]
    BuildCocoee(BuildCocoeeArgs),
    /// Build Flickr30K-EE style instances from entailment hypotheses.
    #[command(name = "build-flickr30kee")]
    BuildFlickr(BuildFlickrArgs),
    /// Dataset statistics per split.
    Stats(StatsArgs),
    /// Expand instances into per-round training samples.
    Expand(ExpandArgs),
}

#[derive(Args, Debug, Serialize)]
pub struct DeriveArgs {
    /// Instances JSONL.
    #[arg(long, short)]
    pub input: PathBuf,
    /// Scripts JSONL.
    #[arg(long, short)]
    pub output: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
pub enum PolicyKind {
    Oracle,
    #[value(name = "keep_all", alias = "keep-all")]
    #[serde(rename = "keep_all")]
    KeepAll,
    #[value(name = "external-trace", alias = "external_trace")]
    #[serde(rename = "external-trace")]
    ExternalTrace,
}

#[derive(Args, Debug, Serialize)]
pub struct EditArgs {
    #[arg(long, short)]
    pub input: PathBuf,
    /// Outputs JSONL, one {"id","ref","out","gt","trace"} per instance.
    #[arg(long, short)]
    pub output: PathBuf,
    #[arg(long, value_enum, default_value = "oracle")]
    pub policy: PolicyKind,
    /// Recorded traces as JSONL {"id","trace"}; needed by external-trace.
    #[arg(long, required_if_eq("policy", "external-trace"))]
    pub traces: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    pub max_rounds: usize,
}

#[derive(Args, Debug, Serialize)]
#[group(id = "source", required = true, multiple = true, args = ["input", "gps_csv"])]
pub struct EvalArgs {
    /// Outputs JSONL as written by `edit`.
    #[arg(long, short)]
    pub input: Option<PathBuf>,
    /// Report JSON.
    #[arg(long, short, requires = "input")]
    pub output: Option<PathBuf>,
    /// CSV of (name, c_ref, c_out, es) rows to turn into gains per step.
    #[arg(long)]
    pub gps_csv: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct BuildCocoeeArgs {
    /// Captions JSONL {"image_id","caption_id","text","is_gt","split"}.
    #[arg(long)]
    pub captions: PathBuf,
    /// Directory holding similarity.jsonl and spice.jsonl (default: data root).
    #[arg(long)]
    pub scores: Option<PathBuf>,
    #[arg(long, short)]
    pub output: PathBuf,
    #[arg(long, default_value_t = 300)]
    pub topk: usize,
    #[arg(long, default_value_t = 30)]
    pub sample_k: usize,
    #[arg(long, default_value_t = 0.4)]
    pub bleu2_min: f64,
    #[arg(long, default_value_t = 0.3)]
    pub bleu3_min: f64,
    #[arg(long, default_value_t = 0.35)]
    pub spice_max: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug, Serialize)]
pub struct BuildFlickrArgs {
    /// Hypotheses JSONL {"image_id","premise_id","label","sentence","split"?}.
    #[arg(long, short)]
    pub input: PathBuf,
    /// JSONL {"image_id","split"} for hypotheses without a split.
    #[arg(long)]
    pub split_manifest: Option<PathBuf>,
    #[arg(long, short)]
    pub output: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct StatsArgs {
    #[arg(long, short)]
    pub input: PathBuf,
    /// Stats JSON.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct ExpandArgs {
    #[arg(long, short)]
    pub input: PathBuf,
    /// Training samples JSONL.
    #[arg(long, short)]
    pub output: PathBuf,
    /// Loss weight on KEEP labels.
    #[arg(long, default_value_t = 1.5)]
    pub lambda: f64,
    /// Cap on add/insert rounds per instance (default: no cap).
    #[arg(long)]
    pub max_rounds: Option<usize>,
}

/// Shared settings every command sees.
pub struct Env {
    pub data_root: Option<PathBuf>,
    pub jobs: usize,
}

impl Env {
    pub fn input(&self, p: &Path) -> PathBuf {
        match &self.data_root {
            Some(root) if p.is_relative() => root.join(p),
            _ => p.to_path_buf(),
        }
    }

    pub fn pool(&self) -> anyhow::Result<rayon::ThreadPool> {
        Ok(rayon::ThreadPoolBuilder::new().num_threads(self.jobs).build()?)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let jobs = cli
        .jobs
        .filter(|j| *j > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let env = Env {
        data_root: cli.data_root,
        jobs,
    };
    let result = match &cli.command {
        Command::Derive(a) => commands::derive(&env, a),
        Command::Edit(a) => commands::edit(&env, a),
        Command::Eval(a) => commands::eval(&env, a),
        Command::BuildCocoee(a) => commands::build_cocoee(&env, a),
        Command::BuildFlickr(a) => commands::build_flickr(&env, a),
        Command::Stats(a) => commands::stats(&env, a),
        Command::Expand(a) => commands::expand(&env, a),
    };
    match result {
        Ok(Status::Ok) => ExitCode::SUCCESS,
        Ok(Status::Quarantined) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
