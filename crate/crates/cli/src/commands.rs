use std::collections::HashMap;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use capedit::dataset::{
    build_cocoee_split, build_flickr30kee, compute_split_stats, compute_stats, read_split_manifest,
    render_stats_table, CaptionRecord, DatasetStats, EceInstance, FilterConfig, HypothesisRecord, ScoreKind,
    ScoreRecord, ScoreTable, Split,
};
use capedit::metrics::{es_of_trace, evaluate, gps, render_table, EvalRecord};
use capedit::round_engine::{
    expand_instance, oracle_policy, run_rounds, ExpansionConfig, KeepAllPolicy, RoundTrace, TracePolicy,
    TrainingSample,
};
use capedit::{min_edit_script, EditScript, TokenSeq};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::records::{check_paths, commit, read_all, read_lines, to_jsonl, to_pretty, Line, RecordError, Status};
use crate::{BuildCocoeeArgs, BuildFlickrArgs, DeriveArgs, EditArgs, Env, EvalArgs, ExpandArgs, PolicyKind, StatsArgs};

fn config<A: Serialize>(env: &Env, args: &A) -> Result<Value> {
    Ok(json!({
        "args": serde_json::to_value(args)?,
        "data_root": env.data_root,
        "jobs": env.jobs,
    }))
}

/// Reads instances, turning unparsable or invalid lines into record errors.
fn load_instances(path: &Path) -> Result<(Vec<Line<EceInstance>>, Vec<RecordError>)> {
    let (lines, mut errors) = read_lines::<EceInstance>(path)?;
    let mut ok = Vec::with_capacity(lines.len());
    for l in lines {
        match l.value.validate() {
            Ok(()) => ok.push(l),
            Err(e) => errors.push(RecordError {
                path: path.to_path_buf(),
                line: l.line,
                message: e.to_string(),
            }),
        }
    }
    Ok((ok, errors))
}

/// Applies `f` to every record on the worker pool, keeping input order.
fn map_records<T, U, F>(
    env: &Env,
    path: &Path,
    items: &[Line<T>],
    errors: &mut Vec<RecordError>,
    f: F,
) -> Result<Vec<U>>
where
    T: Sync,
    U: Send,
    F: Fn(&Line<T>) -> Result<U, String> + Sync,
{
    let results: Vec<Result<U, String>> = env.pool()?.install(|| items.par_iter().map(&f).collect());
    let mut out = Vec::with_capacity(results.len());
    for (item, r) in items.iter().zip(results) {
        match r {
            Ok(v) => out.push(v),
            Err(message) => errors.push(RecordError {
                path: path.to_path_buf(),
                line: item.line,
                message,
            }),
        }
    }
    errors.sort_by_key(|e| e.line);
    Ok(out)
}

fn report_only(errors: &[RecordError]) -> Status {
    for e in errors {
        eprintln!("{e}");
    }
    if errors.is_empty() {
        Status::Ok
    } else {
        Status::Quarantined
    }
}

#[derive(Serialize)]
struct ScriptRow {
    image_id: String,
    #[serde(rename = "ref")]
    ref_cap: TokenSeq,
    gt: TokenSeq,
    split: Split,
    script: EditScript,
    del: usize,
    add: usize,
    steps: usize,
}

pub fn derive(env: &Env, args: &DeriveArgs) -> Result<Status> {
    let input = env.input(&args.input);
    check_paths(&[&input], Some(&args.output))?;
    let (lines, mut errors) = load_instances(&input)?;
    let rows = map_records(env, &input, &lines, &mut errors, |l| {
        let inst = &l.value;
        let script = min_edit_script(&inst.ref_cap, &inst.gt_cap);
        Ok(ScriptRow {
            image_id: inst.image_id.clone(),
            ref_cap: inst.ref_cap.clone(),
            gt: inst.gt_cap.clone(),
            split: inst.split,
            del: script.deletes(),
            add: script.adds(),
            steps: script.steps(),
            script,
        })
    })?;
    let mean = if rows.is_empty() {
        0.0
    } else {
        rows.iter().map(|r| r.steps as f64).sum::<f64>() / rows.len() as f64
    };
    println!("derived {} scripts, mean edit distance {mean:.2}", rows.len());
    commit(&args.output, &to_jsonl(&rows)?, &errors, rows.len(), config(env, args)?)
}

#[derive(Deserialize)]
struct TraceRecord {
    id: String,
    trace: RoundTrace,
}

/// Identifier of an instance inside an input file.
fn instance_id(inst: &EceInstance, line: usize) -> String {
    format!("{}:{line}", inst.image_id)
}

pub fn edit(env: &Env, args: &EditArgs) -> Result<Status> {
    let input = env.input(&args.input);
    let traces_path = args.traces.as_deref().map(|p| env.input(p));
    let mut inputs = vec![input.as_path()];
    inputs.extend(traces_path.as_deref());
    check_paths(&inputs, Some(&args.output))?;
    let cfg = ExpansionConfig {
        max_rounds: args.max_rounds,
        ..ExpansionConfig::default()
    };
    cfg.validate()?;

    let traces: HashMap<String, RoundTrace> = match (&args.policy, &traces_path) {
        (PolicyKind::ExternalTrace, Some(p)) => read_all::<TraceRecord>(p)?
            .into_iter()
            .map(|r| (r.id, r.trace))
            .collect(),
        (PolicyKind::ExternalTrace, None) => bail!("--policy external-trace needs --traces"),
        _ => HashMap::new(),
    };

    let (lines, mut errors) = load_instances(&input)?;
    let rows = map_records(env, &input, &lines, &mut errors, |l| {
        let inst = &l.value;
        let id = instance_id(inst, l.line);
        let reference = &inst.ref_cap;
        let run = match args.policy {
            PolicyKind::Oracle => run_rounds(reference, &oracle_policy(reference, &inst.gt_cap), &id, &cfg),
            PolicyKind::KeepAll => run_rounds(reference, &KeepAllPolicy, &id, &cfg),
            PolicyKind::ExternalTrace => {
                let trace = traces.get(&id).ok_or_else(|| format!("no trace for {id}"))?;
                trace
                    .replay(reference)
                    .map_err(|e| format!("trace for {id} does not fit the instance: {e}"))?;
                run_rounds(reference, &TracePolicy::new(trace.clone()), &id, &cfg)
            }
        };
        let (out, trace) = run.map_err(|e| format!("{id}: {e}"))?;
        Ok(EvalRecord {
            id,
            ref_cap: reference.clone(),
            out,
            gt: inst.gt_cap.clone(),
            trace: Some(trace),
            spice: None,
            ref_spice: None,
        })
    })?;
    let exact = rows.iter().filter(|r| r.out == r.gt).count();
    let mean_es = if rows.is_empty() {
        0.0
    } else {
        rows.iter()
            .filter_map(|r| r.trace.as_ref())
            .map(|t| es_of_trace(t).es as f64)
            .sum::<f64>()
            / rows.len() as f64
    };
    println!("edited {} instances, {exact} exact matches, mean ES {mean_es:.2}", rows.len());
    commit(&args.output, &to_jsonl(&rows)?, &errors, rows.len(), config(env, args)?)
}

#[derive(Debug, Deserialize)]
struct GpsRow {
    name: String,
    c_ref: f64,
    c_out: f64,
    es: f64,
}

fn gps_table(path: &Path, errors: &mut Vec<RecordError>) -> Result<String> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("opening {}", path.display()))?;
    let mut out = format!("{:<16}{:>8}{:>8}{:>8}{:>8}\n", "", "C(ref)", "C(out)", "ES", "GPS(C)");
    for (i, row) in reader.deserialize::<GpsRow>().enumerate() {
        // header is line 1
        let line = i + 2;
        let result = row
            .map_err(|e| e.to_string())
            .and_then(|r| gps(r.c_ref, r.c_out, r.es).map(|g| (r, g)).map_err(|e| e.to_string()));
        match result {
            Ok((r, g)) => out.push_str(&format!(
                "{:<16}{:>8.1}{:>8.1}{:>8.2}{:>8.2}\n",
                r.name, r.c_ref, r.c_out, r.es, g
            )),
            Err(message) => errors.push(RecordError {
                path: path.to_path_buf(),
                line,
                message,
            }),
        }
    }
    Ok(out)
}

pub fn eval(env: &Env, args: &EvalArgs) -> Result<Status> {
    let input = args.input.as_deref().map(|p| env.input(p));
    let gps_csv = args.gps_csv.as_deref().map(|p| env.input(p));
    let inputs: Vec<&Path> = input.iter().chain(gps_csv.iter()).map(PathBuf::as_path).collect();
    check_paths(&inputs, args.output.as_deref())?;

    let mut status = Status::Ok;
    if let Some(csv_path) = &gps_csv {
        let mut errors = Vec::new();
        print!("{}", gps_table(csv_path, &mut errors)?);
        if report_only(&errors) == Status::Quarantined {
            status = Status::Quarantined;
        }
    }
    let Some(input) = input else {
        return Ok(status);
    };

    let (lines, errors) = read_lines::<EvalRecord>(&input)?;
    let records: Vec<EvalRecord> = lines.into_iter().map(|l| l.value).collect();
    if records.is_empty() {
        report_only(&errors);
        bail!("{}: no usable records", input.display());
    }
    let evaluation = evaluate(&records)?;
    print!("{}", render_table(&evaluation));
    let step = match &args.output {
        Some(out) => commit(out, &to_pretty(&evaluation)?, &errors, records.len(), config(env, args)?)?,
        None => report_only(&errors),
    };
    if step == Status::Quarantined {
        status = Status::Quarantined;
    }
    Ok(status)
}

fn filter_config(args: &BuildCocoeeArgs) -> FilterConfig {
    FilterConfig {
        topk_similar: args.topk,
        sample_k: args.sample_k,
        bleu2_min: args.bleu2_min,
        bleu3_min: args.bleu3_min,
        spice_max: args.spice_max,
        rng_seed: args.seed,
    }
}

pub fn build_cocoee(env: &Env, args: &BuildCocoeeArgs) -> Result<Status> {
    let captions_path = env.input(&args.captions);
    let scores_dir = match (&args.scores, &env.data_root) {
        (Some(dir), _) => env.input(dir),
        (None, Some(root)) => root.clone(),
        (None, None) => bail!("no --scores directory and no data root set"),
    };
    let sim_path = scores_dir.join("similarity.jsonl");
    let spice_path = scores_dir.join("spice.jsonl");
    check_paths(&[&captions_path, &sim_path, &spice_path], Some(&args.output))?;
    let cfg = filter_config(args);
    cfg.validate()?;

    let (lines, errors) = read_lines::<CaptionRecord>(&captions_path)?;
    let captions: Vec<CaptionRecord> = lines.into_iter().map(|l| l.value).collect();
    let sim = ScoreTable::from_records(ScoreKind::ImageCaptionSimilarity, read_all::<ScoreRecord>(&sim_path)?);
    let spice = ScoreTable::from_records(ScoreKind::CaptionSpice, read_all::<ScoreRecord>(&spice_path)?);
    let built = build_cocoee_split(&captions, &sim, &spice, &cfg, env.jobs)?;
    println!("built {} instances from {} captions", built.len(), captions.len());
    let mut meta = config(env, args)?;
    meta["filter"] = serde_json::to_value(cfg)?;
    commit(&args.output, &to_jsonl(&built)?, &errors, built.len(), meta)
}

pub fn build_flickr(env: &Env, args: &BuildFlickrArgs) -> Result<Status> {
    let input = env.input(&args.input);
    let manifest_path = args.split_manifest.as_deref().map(|p| env.input(p));
    let mut inputs = vec![input.as_path()];
    inputs.extend(manifest_path.as_deref());
    check_paths(&inputs, Some(&args.output))?;

    let manifest = match &manifest_path {
        Some(p) => {
            let file = File::open(p).with_context(|| format!("opening {}", p.display()))?;
            Some(read_split_manifest(BufReader::new(file)).with_context(|| p.display().to_string())?)
        }
        None => None,
    };
    let (lines, errors) = read_lines::<HypothesisRecord>(&input)?;
    let records: Vec<HypothesisRecord> = lines.into_iter().map(|l| l.value).collect();
    let built = build_flickr30kee(&records, manifest.as_ref())?;
    println!("built {} instances from {} hypotheses", built.len(), records.len());
    commit(&args.output, &to_jsonl(&built)?, &errors, built.len(), config(env, args)?)
}

#[derive(Serialize)]
struct SplitStats<'a> {
    split: Split,
    #[serde(flatten)]
    stats: &'a DatasetStats,
}

pub fn stats(env: &Env, args: &StatsArgs) -> Result<Status> {
    let input = env.input(&args.input);
    check_paths(&[&input], args.output.as_deref())?;
    let (lines, errors) = load_instances(&input)?;
    let instances: Vec<EceInstance> = lines.into_iter().map(|l| l.value).collect();
    if instances.is_empty() {
        report_only(&errors);
        bail!("{}: no usable instances", input.display());
    }
    let overall = compute_stats(&instances)?;
    let per_split = compute_split_stats(&instances)?;
    print!("{}", render_stats_table(&per_split));
    let json = json!({
        "overall": overall,
        "splits": per_split
            .iter()
            .map(|(split, stats)| SplitStats { split: *split, stats })
            .collect::<Vec<_>>(),
    });
    match &args.output {
        Some(out) => commit(out, &to_pretty(&json)?, &errors, instances.len(), config(env, args)?),
        None => Ok(report_only(&errors)),
    }
}

#[derive(Serialize)]
struct SampleRow {
    id: String,
    #[serde(flatten)]
    sample: TrainingSample,
}

pub fn expand(env: &Env, args: &ExpandArgs) -> Result<Status> {
    let input = env.input(&args.input);
    check_paths(&[&input], Some(&args.output))?;
    let cfg = ExpansionConfig {
        lambda: args.lambda,
        max_rounds: args.max_rounds.unwrap_or(usize::MAX),
    };
    cfg.validate().map_err(|e| anyhow!(e))?;
    let (lines, mut errors) = load_instances(&input)?;
    let per_instance = map_records(env, &input, &lines, &mut errors, |l| {
        let id = instance_id(&l.value, l.line);
        Ok(expand_instance(&l.value, &cfg)
            .into_iter()
            .map(|sample| SampleRow { id: id.clone(), sample })
            .collect::<Vec<_>>())
    })?;
    let n_instances = per_instance.len();
    let rows: Vec<SampleRow> = per_instance.into_iter().flatten().collect();
    println!("expanded {n_instances} instances into {} samples", rows.len());
    commit(&args.output, &to_jsonl(&rows)?, &errors, rows.len(), config(env, args)?)
}
