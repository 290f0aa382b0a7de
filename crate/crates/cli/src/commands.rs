use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use log::{info, warn};
use rayon::prelude::*;
use serde_json::json;

use trajbench::corpus::{read_jsonl, simulate_corpus, write_jsonl, TrajectoryRecord};
use trajbench::harness::eval::{load_results, run_eval, EvalConfig};
use trajbench::harness::report::{aggregate, SampleKey};
use trajbench::masking::{build_symbol_map, leakage_in_trajectory, mask_trajectory, mask_universe, SymbolMap};
use trajbench::postprocess::{bucket_manifests, bucket_trajectory, ApproxCounter, BucketEntry, BucketSpec, TokenCounter};
use trajbench::qa::{build_dataset, mean_acl, DatasetOptions, Prefix, QASample, QuotaConfig, SectionWeight, WeightTable};
use trajbench::rollout::{Format, RolloutConfig, Setting, Trajectory};
use trajbench::universe::{generate_synthetic_universe, load_universe, AttributeSchema, NameStyle, SyntheticSpec, Universe};

use crate::{manifest, BucketArgs, CounterMode, EvaluateArgs, GenerateArgs, Global, MaskArgs, QaArgs, ReportArgs};

pub const UNIVERSE_FILE: &str = "universe.json";
pub const TRAJECTORIES_FILE: &str = "trajectories.jsonl";
pub const SYMBOL_MAP_FILE: &str = "symbol_map.json";
pub const BUCKETS_FILE: &str = "buckets.jsonl";
pub const BUCKET_MANIFEST_FILE: &str = "bucket_manifest.json";
pub const DATASET_FILE: &str = "dataset.jsonl";
pub const RESULTS_FILE: &str = "results.jsonl";

/// A mistake in how the command was invoked.
#[derive(Debug)]
pub struct Usage(pub String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

/// Requests that still failed after every retry.
#[derive(Debug)]
pub struct EndpointFailure(pub String);

impl fmt::Display for EndpointFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for EndpointFailure {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

/// 1 for usage and configuration errors, 3 for endpoint errors, 2 for
/// everything else (bad or inconsistent data).
pub fn exit_code(e: &anyhow::Error) -> u8 {
    if e.downcast_ref::<Usage>().is_some() {
        return 1;
    }
    if e.downcast_ref::<EndpointFailure>().is_some() {
        return 3;
    }
    match e.downcast_ref::<trajbench::Error>() {
        Some(trajbench::Error::Config(_)) => 1,
        Some(trajbench::Error::Endpoint(_)) => 3,
        _ => 2,
    }
}

/// Parses `32k`, `4m` or a plain token count.
pub fn parse_limit(s: &str) -> std::result::Result<u64, String> {
    let lower = s.trim().to_ascii_lowercase();
    let (digits, scale) = match lower.strip_suffix('k') {
        Some(d) => (d, 1u64 << 10),
        None => match lower.strip_suffix('m') {
            Some(d) => (d, 1u64 << 20),
            None => (lower.as_str(), 1),
        },
    };
    digits
        .parse::<u64>()
        .ok()
        .and_then(|n| n.checked_mul(scale))
        .filter(|&n| n > 0)
        .ok_or_else(|| format!("invalid token limit {s:?}"))
}

fn parse_synthetic(s: &str) -> Result<SyntheticSpec> {
    let path = Path::new(s);
    if path.is_file() {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        return Ok(serde_json::from_str(&text)?);
    }
    let mut n = None;
    let mut names = NameStyle::Indexed;
    for part in s.split(',') {
        let (k, v) = part
            .split_once('=')
            .ok_or_else(|| usage(format!("expected key=value in --synthetic, got {part:?}")))?;
        match k.trim() {
            "n" => n = Some(v.trim().parse::<usize>().map_err(|_| usage(format!("invalid item count {v:?}")))?),
            "names" => {
                names = match v.trim() {
                    "indexed" => NameStyle::Indexed,
                    "pronounceable" => NameStyle::Pronounceable,
                    other => return Err(usage(format!("unknown name style {other:?}"))),
                }
            }
            other => return Err(usage(format!("unknown --synthetic key {other:?}"))),
        }
    }
    let n = n.ok_or_else(|| usage("--synthetic needs n=<items>"))?;
    Ok(SyntheticSpec::canonical(n).with_names(names))
}

fn counter(mode: CounterMode) -> Box<dyn TokenCounter> {
    match mode {
        CounterMode::Approx => Box::new(ApproxCounter),
    }
}

fn prepare_outputs(global: &Global, command: &str, files: &[&str]) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(&global.out_dir).with_context(|| format!("creating {}", global.out_dir.display()))?;
    let mut paths: Vec<PathBuf> = files.iter().map(|f| global.out_dir.join(f)).collect();
    paths.push(manifest::manifest_path(&global.out_dir, command));
    if !global.force {
        if let Some(p) = paths.iter().find(|p| p.exists()) {
            return Err(usage(format!("{} exists; pass --force to overwrite", p.display())));
        }
    }
    paths.pop();
    Ok(paths)
}

fn input_dir(global: &Global, input: &Option<PathBuf>) -> PathBuf {
    input.clone().unwrap_or_else(|| global.out_dir.clone())
}

fn require(path: PathBuf) -> Result<PathBuf> {
    if path.exists() {
        Ok(path)
    } else {
        Err(usage(format!("{} not found", path.display())))
    }
}

pub fn generate(global: &Global, a: &GenerateArgs) -> Result<()> {
    let mut inputs = Vec::new();
    let universe = match (&a.universe, &a.synthetic) {
        (Some(path), _) => {
            let schema = match &a.schema {
                Some(s) => {
                    inputs.push(require(s.clone())?);
                    serde_json::from_str(&std::fs::read_to_string(s)?)?
                }
                None => AttributeSchema::canonical_config(),
            };
            inputs.push(require(path.clone())?);
            load_universe(path, &schema)?
        }
        (None, Some(spec)) => generate_synthetic_universe(&parse_synthetic(spec)?, global.seed)?,
        (None, None) => return Err(usage("generate needs --universe or --synthetic")),
    };
    let mut cfg = match a.format.into() {
        Format::Concise => RolloutConfig::concise(global.seed),
        Format::Verbose => RolloutConfig::verbose(global.seed),
    };
    if let Some(v) = a.max_rounds {
        cfg.max_rounds = v;
    }
    if let Some(v) = a.epsilon {
        cfg.epsilon = v;
    }
    if let Some(v) = a.history_window {
        cfg.history_window = v;
    }
    if let Some(v) = a.forget_prob {
        cfg.forget_history_prob = v;
    }
    if let Some(v) = a.mask_prob {
        cfg.mask_prob = v;
    }
    if let Some(v) = a.max_mask_sections {
        cfg.max_mask_sections = v;
    }
    cfg.stop_after_tokens = a.stop_after_tokens;
    cfg.validate()?;

    let outputs = prepare_outputs(global, "generate", &[UNIVERSE_FILE, TRAJECTORIES_FILE])?;
    let records = simulate_corpus(&universe, &cfg, a.count)?;
    let solved = records.iter().filter(|r| r.trajectory.meta.solved).count();
    let rounds: usize = records.iter().map(|r| r.trajectory.rounds.len()).sum();
    info!(
        "{} trajectories over {} items: {} solved, {:.1} rounds on average",
        records.len(),
        universe.len(),
        solved,
        rounds as f64 / records.len().max(1) as f64
    );
    universe.save_json(&outputs[0])?;
    write_jsonl(&outputs[1], &records)?;
    let inputs: Vec<&Path> = inputs.iter().map(PathBuf::as_path).collect();
    manifest::write(
        &global.out_dir,
        "generate",
        global,
        json!({"args": a, "rollout": cfg, "universe_fingerprint": universe.fingerprint()}),
        &inputs,
        &[&outputs[0], &outputs[1]],
    )
}

pub fn mask(global: &Global, a: &MaskArgs) -> Result<()> {
    let dir = input_dir(global, &a.input);
    let universe_path = require(dir.join(UNIVERSE_FILE))?;
    let traj_path = require(dir.join(TRAJECTORIES_FILE))?;
    let universe = Universe::load_json(&universe_path)?;
    let records: Vec<TrajectoryRecord> = read_jsonl(&traj_path)?;
    let inputs = [sha_input(&universe_path)?, sha_input(&traj_path)?];
    let outputs = prepare_outputs(global, "mask", &[SYMBOL_MAP_FILE, UNIVERSE_FILE, TRAJECTORIES_FILE])?;

    let map = build_symbol_map(&universe, global.seed);
    let masked = records
        .par_iter()
        .map(|r| {
            let t = mask_trajectory(&r.trajectory, &map)?;
            if let Some(leak) = leakage_in_trajectory(&t, &map).into_iter().next() {
                anyhow::bail!("{}: {:?} survives masking at {}", r.id, leak.token, leak.location);
            }
            Ok(TrajectoryRecord {
                id: r.id.clone(),
                trajectory: t,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    info!("masked {} trajectories; no original vocabulary remains", masked.len());
    map.save(&outputs[0])?;
    mask_universe(&universe, &map)?.save_json(&outputs[1])?;
    write_jsonl(&outputs[2], &masked)?;
    manifest::write(
        &global.out_dir,
        "mask",
        global,
        json!({"args": a, "symbol_map_fingerprint": map.fingerprint()}),
        &[&inputs[0].0, &inputs[1].0],
        &[&outputs[0], &outputs[1], &outputs[2]],
    )
}

/// Hashes an input before it may be overwritten by an in-place run.
fn sha_input(path: &Path) -> Result<(PathBuf, String)> {
    Ok((path.to_path_buf(), manifest::sha256_file(path)?))
}

pub fn bucket(global: &Global, a: &BucketArgs) -> Result<()> {
    let dir = input_dir(global, &a.input);
    let traj_path = require(dir.join(TRAJECTORIES_FILE))?;
    let spec = BucketSpec::new(a.buckets.clone().unwrap_or_else(|| BucketSpec::default().limits), a.fill_floor)?;
    let outputs = prepare_outputs(global, "bucket", &[BUCKETS_FILE, BUCKET_MANIFEST_FILE])?;
    let records: Vec<TrajectoryRecord> = read_jsonl(&traj_path)?;
    let counter = counter(global.counter);
    let entries: Vec<BucketEntry> = records
        .par_iter()
        .flat_map_iter(|r| bucket_trajectory(counter.as_ref(), &spec, &r.id, &r.trajectory))
        .collect();
    let manifests = bucket_manifests(counter.as_ref(), &spec, &entries);
    for m in &manifests {
        info!(
            "bucket {}: {} prefixes",
            trajbench::postprocess::bucket_label(m.bucket_limit),
            m.sample_ids.len()
        );
    }
    write_jsonl(&outputs[0], &entries)?;
    std::fs::write(&outputs[1], serde_json::to_string_pretty(&manifests)? + "\n")?;
    manifest::write(
        &global.out_dir,
        "bucket",
        global,
        json!({"args": a, "spec": spec}),
        &[&traj_path],
        &[&outputs[0], &outputs[1]],
    )
}

fn load_quota(a: &QaArgs, entries: &[BucketEntry]) -> Result<QuotaConfig> {
    let quota = if let Some(path) = &a.quota {
        let text = std::fs::read_to_string(require(path.clone())?)?;
        serde_json::from_str(&text).with_context(|| format!("parsing quota {}", path.display()))?
    } else if let Some(name) = &a.preset {
        QuotaConfig::preset(name).ok_or_else(|| usage(format!("unknown preset {name:?}")))?
    } else if let Some(n) = a.per_type {
        let mut limits: Vec<u64> = entries.iter().map(|e| e.bucket_limit).collect();
        limits.sort_unstable();
        limits.dedup();
        QuotaConfig::uniform(&limits, n)
    } else {
        return Err(usage("qa needs --quota, --preset or --per-type"));
    };
    quota.validate()?;
    Ok(match &a.buckets {
        Some(b) => quota.restrict(b),
        None => quota,
    })
}

/// Default weights keyed by the original section names, carried through the
/// symbol map for masked corpora.
fn masked_weights(dir: &Path, setting: Setting) -> Result<Option<WeightTable>> {
    let path = dir.join(SYMBOL_MAP_FILE);
    if setting != Setting::KnowledgeFree || !path.exists() {
        return Ok(None);
    }
    let map = SymbolMap::load(&path)?;
    let names: Vec<&str> = map.sections().iter().map(|s| s.name.as_str()).collect();
    let table = WeightTable::default_for(&names);
    Ok(Some(WeightTable {
        weights: table
            .weights
            .into_iter()
            .map(|w| SectionWeight {
                section: map.section(&w.section).unwrap_or(&w.section).to_string(),
                weight: w.weight,
            })
            .collect(),
    }))
}

pub fn qa(global: &Global, a: &QaArgs) -> Result<()> {
    let dir = input_dir(global, &a.input);
    let traj_path = require(dir.join(TRAJECTORIES_FILE))?;
    let buckets_path = require(dir.join(BUCKETS_FILE))?;
    let records: Vec<TrajectoryRecord> = read_jsonl(&traj_path)?;
    let entries: Vec<BucketEntry> = read_jsonl(&buckets_path)?;
    let quota = load_quota(a, &entries)?;
    let first = records.first().ok_or_else(|| trajbench::Error::EmptyInput("no trajectories".into()))?;
    let (setting, format) = (first.trajectory.setting(), first.trajectory.format());
    if records.iter().any(|r| r.trajectory.setting() != setting || r.trajectory.format() != format) {
        anyhow::bail!("corpus mixes settings or formats; build one dataset per corpus");
    }
    if quota.setting.is_some_and(|s| s != setting) || quota.format.is_some_and(|f| f != format) {
        return Err(usage(format!(
            "quota {} is for a different corpus than this {}-{} one",
            quota.name.as_deref().unwrap_or("file"),
            setting.short(),
            format.as_str()
        )));
    }
    let weights = match &a.weights {
        Some(p) => Some(serde_json::from_str(&std::fs::read_to_string(require(p.clone())?)?)?),
        None => masked_weights(&dir, setting)?,
    };
    let outputs = prepare_outputs(global, "qa", &[DATASET_FILE])?;

    let counter = counter(global.counter);
    let by_id: HashMap<&str, &Trajectory> = records.iter().map(|r| (r.id.as_str(), &r.trajectory)).collect();
    let wanted: Vec<&BucketEntry> = entries.iter().filter(|e| quota.buckets.contains(&e.bucket_limit)).collect();
    let prefixes = wanted
        .par_iter()
        .map(|e| {
            let t = by_id
                .get(e.trajectory_id.as_str())
                .ok_or_else(|| anyhow::anyhow!("bucket entry {} names an unknown trajectory", e.id))?;
            Ok(Prefix::new(&e.id, e.bucket_limit, t, e.rounds, counter.as_ref()))
        })
        .collect::<Result<Vec<_>>>()?;
    let opts = DatasetOptions {
        weights,
        min_candidates: a.min_candidates,
        ..DatasetOptions::default()
    };
    let samples = build_dataset(&prefixes, &quota, global.seed, &opts, counter.as_ref())?;
    for ((f, cat), acl) in mean_acl(&samples) {
        info!("mean ACL {}-{cat}: {acl:.1}", f.as_str());
    }
    info!("{} samples", samples.len());
    write_jsonl(&outputs[0], &samples)?;
    manifest::write(
        &global.out_dir,
        "qa",
        global,
        json!({"args": a, "quota": quota, "min_candidates": opts.min_candidates}),
        &[&traj_path, &buckets_path],
        &[&outputs[0]],
    )
}

pub fn evaluate(global: &Global, a: &EvaluateArgs) -> Result<()> {
    let dataset = require(a.dataset.clone().unwrap_or_else(|| global.out_dir.join(DATASET_FILE)))?;
    let samples: Vec<QASample> = read_jsonl(&dataset)?;
    std::fs::create_dir_all(&global.out_dir)?;
    let out = global.out_dir.join(RESULTS_FILE);
    if global.force && out.exists() {
        std::fs::remove_file(&out)?;
    }
    let mut cfg = EvalConfig::new(&a.endpoint, &a.model);
    cfg.temperature = a.temperature;
    cfg.max_concurrent = a.max_concurrent;
    cfg.timeout_secs = a.timeout_secs;
    cfg.retries = a.retries;
    cfg.backoff_ms = a.backoff_ms;
    cfg.max_tokens = a.max_tokens;
    cfg.api_key = std::env::var(&a.api_key_env).ok();
    cfg.stop_after = a.limit;
    if cfg.api_key.is_none() {
        warn!("{} is not set; sending requests without an API key", a.api_key_env);
    }
    let runtime = tokio::runtime::Runtime::new()?;
    let summary = runtime.block_on(run_eval(&samples, &cfg, &out))?;
    info!(
        "{} resumed, {} completed, {} failed, {} remaining",
        summary.resumed, summary.completed, summary.failed, summary.remaining
    );
    manifest::write(
        &global.out_dir,
        "evaluate",
        global,
        json!({"args": a, "eval": cfg, "summary": summary}),
        &[&dataset],
        &[&out],
    )?;
    if summary.failed > 0 {
        return Err(EndpointFailure(format!(
            "{} of {} requests failed after retries; they are recorded as incorrect",
            summary.failed, summary.completed
        ))
        .into());
    }
    Ok(())
}

fn result_files(input: &Path) -> Result<Vec<PathBuf>> {
    if !input.exists() {
        return Err(usage(format!("{} not found", input.display())));
    }
    if input.is_file() {
        return Ok(vec![input.to_path_buf()]);
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(input)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    files.retain(|p| p.extension().is_some_and(|x| x == "jsonl"));
    files.sort();
    Ok(files)
}

pub fn report(global: &Global, a: &ReportArgs) -> Result<()> {
    let dataset = require(a.dataset.clone().unwrap_or_else(|| global.out_dir.join(DATASET_FILE)))?;
    let files = result_files(&a.input)?;
    let keys: Vec<SampleKey> = read_jsonl(&dataset)?;
    let mut results = Vec::new();
    for f in &files {
        results.extend(load_results(f)?);
    }
    let report = aggregate(&keys, &results)?;
    let outputs = prepare_outputs(global, "report", &["report.csv", "report.json"])?;
    let csv = report.to_csv()?;
    print!("{csv}");
    std::fs::write(&outputs[0], &csv)?;
    std::fs::write(&outputs[1], serde_json::to_string_pretty(&report)? + "\n")?;
    if report.missing_results > 0 {
        warn!("{} dataset samples have no result", report.missing_results);
    }
    let mut inputs: Vec<&Path> = vec![&dataset];
    inputs.extend(files.iter().map(PathBuf::as_path));
    manifest::write(
        &global.out_dir,
        "report",
        global,
        json!({"args": a}),
        &inputs,
        &[&outputs[0], &outputs[1]],
    )
}
