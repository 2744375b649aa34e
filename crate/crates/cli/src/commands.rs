use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, Context};
use geoskill_core::evolution::{evolve_step, update_confidence, EvolveError};
use geoskill_core::expert_compiler::{
    compile_library, country_histogram, parse_trajectory_records, stage_counts, CertaintyLexicon, Gazetteer, GroundTruth,
};
use geoskill_core::geo_metrics::{faithfulness_prf, haversine_km, threshold_accuracy};
use geoskill_core::inference_engine::{Engine, InferenceError, InferenceRecord};
use geoskill_core::model_gateway::{Gateway, HttpChatBackend, MockBackend, ModelAlias, ModelBackend};
use geoskill_core::retrieval::{build_index, HashedEmbedder};
use geoskill_core::skill_model::{LibraryStore, ProvenanceKind, SkillLibrary};
use geoskill_core::LibraryError;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{BackendKind, RunConfig};

pub const HISTORY_FILE: &str = "evolution_history.jsonl";

/// An error carrying its process exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub error: anyhow::Error,
}

impl CliError {
    pub fn usage(e: impl Into<anyhow::Error>) -> Self {
        CliError { code: 1, error: e.into() }
    }
    pub fn data(e: impl Into<anyhow::Error>) -> Self {
        CliError { code: 2, error: e.into() }
    }
    pub fn backend(e: impl Into<anyhow::Error>) -> Self {
        CliError { code: 3, error: e.into() }
    }
}

type CliResult<T> = Result<T, CliError>;

fn inference_failure(e: InferenceError) -> CliError {
    match e {
        InferenceError::Config(_) => CliError::usage(e),
        InferenceError::Image { .. }
        | InferenceError::IndexMismatch { .. }
        | InferenceError::Retrieval(_)
        | InferenceError::Graph(_) => CliError::data(e),
        _ => CliError::backend(e),
    }
}

/// Writes to stdout; a reader that has gone away is not an error.
pub fn print_out(text: &str) -> CliResult<()> {
    let mut out = std::io::stdout().lock();
    match out.write_all(text.as_bytes()).and_then(|()| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(CliError::data(e)),
        _ => Ok(()),
    }
}

fn emit(value: &impl Serialize) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(CliError::data)?;
    print_out(&format!("{text}\n"))
}

fn open_library(dir: &Path) -> CliResult<SkillLibrary> {
    LibraryStore::new(dir).load_head().map_err(CliError::data)
}

/// Backends for the requested aliases only, so inference does not need an
/// offline endpoint and evolution does not need an online one.
pub fn gateway(config: &RunConfig, aliases: &[ModelAlias]) -> CliResult<Gateway> {
    let mut gw = Gateway::new();
    match config.backend.kind {
        BackendKind::Mock => {
            let mock: Arc<dyn ModelBackend> =
                Arc::new(MockBackend::from_file(&config.backend.mock_script).map_err(CliError::backend)?);
            for &alias in aliases {
                gw = gw.with_backend(alias, mock.clone());
            }
        }
        BackendKind::Http => {
            for &alias in aliases {
                let (key, endpoint) = match alias {
                    ModelAlias::OnlineInference => ("backend.online", &config.backend.online),
                    ModelAlias::OfflineRefinement => ("backend.offline", &config.backend.offline),
                };
                let http = endpoint.http_config(key).map_err(CliError::backend)?;
                gw = gw.with_backend(alias, Arc::new(HttpChatBackend::new(http)));
            }
        }
    }
    Ok(gw)
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<Vec<T>> {
    let file = File::open(path).with_context(|| format!("{}", path.display())).map_err(CliError::data)?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.with_context(|| format!("{}", path.display())).map_err(CliError::data)?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line)
            .with_context(|| format!("{}:{}", path.display(), n + 1))
            .map_err(CliError::data)?;
        out.push(item);
    }
    Ok(out)
}

fn append_line(path: &Path, value: &impl Serialize) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(CliError::data)?;
    }
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .with_context(|| format!("{}", path.display()))
        .map_err(CliError::data)?;
    let line = serde_json::to_string(value).map_err(CliError::data)?;
    writeln!(f, "{line}").map_err(CliError::data)
}

pub fn compile(config: &RunConfig, input: &Path, out: &Path, lexicon: Option<&Path>) -> CliResult<()> {
    let lexicon_path = lexicon.map(Path::to_path_buf).or_else(|| {
        let p = &config.paths.lexicon;
        (!p.as_os_str().is_empty()).then(|| p.clone())
    });
    let lexicon = match lexicon_path {
        Some(p) => CertaintyLexicon::from_json_file(&p).map_err(CliError::data)?,
        None => CertaintyLexicon::default(),
    };
    let parsed = parse_trajectory_records(input).map_err(CliError::data)?;
    for d in &parsed.diagnostics {
        eprintln!("warning: {}:{}: {}", input.display(), d.line, d.message);
    }
    if parsed.records.is_empty() {
        return Err(CliError::data(anyhow!("{}: no usable trajectories", input.display())));
    }
    let (lib, report) = compile_library(&parsed.records, &lexicon, Gazetteer::bundled());
    LibraryStore::new(out).commit(&lib).map_err(CliError::data)?;
    emit(&json!({ "library": out, "version": lib.version, "malformed_lines": parsed.diagnostics.len(), "report": report }))
}

struct Session {
    library: SkillLibrary,
    index: geoskill_core::retrieval::SkillIndex,
    embedder: HashedEmbedder,
    gateway: Gateway,
}

fn session(config: &RunConfig, library_dir: &Path) -> CliResult<Session> {
    let library = open_library(library_dir)?;
    let embedder = HashedEmbedder::default();
    let index = build_index(&library, &embedder).map_err(CliError::data)?;
    let gateway = gateway(config, &[ModelAlias::OnlineInference])?;
    Ok(Session { library, index, embedder, gateway })
}

pub struct InferArgs {
    pub image: String,
    pub id: Option<String>,
    pub library: PathBuf,
    pub rollouts: usize,
    pub records: PathBuf,
}

pub fn infer(config: &RunConfig, args: &InferArgs) -> CliResult<()> {
    let s = session(config, &args.library)?;
    let engine = Engine::new(&s.gateway, &s.library, &s.index, &s.embedder, config.inference_config())
        .map_err(inference_failure)?;
    let id = args.id.clone().unwrap_or_else(|| args.image.clone());
    let (prediction, record) = engine.vote(&id, &args.image, args.rollouts).map_err(inference_failure)?;
    append_line(&args.records, &record)?;
    emit(&json!({ "query_id": id, "prediction": prediction, "grounding_flagged": record.grounding_flagged() }))
}

#[derive(Debug, Clone, Deserialize)]
pub struct ManifestItem {
    pub id: String,
    pub image: String,
    #[serde(default)]
    pub lat: Option<f64>,
    #[serde(default)]
    pub lon: Option<f64>,
    #[serde(default)]
    pub country: Option<String>,
}

impl ManifestItem {
    fn truth(&self) -> Option<GroundTruth> {
        Some(GroundTruth { lat: self.lat?, lon: self.lon?, country: self.country.clone() })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Checkpoint {
    manifest: PathBuf,
    library_version: u64,
    done: usize,
    records_bytes: u64,
    errors_bytes: u64,
}

pub fn checkpoint_path(out: &Path) -> PathBuf {
    with_suffix(out, ".checkpoint.json")
}

pub fn errors_path(out: &Path) -> PathBuf {
    with_suffix(out, ".errors.jsonl")
}

fn with_suffix(p: &Path, suffix: &str) -> PathBuf {
    let mut s = p.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn open_log(path: &Path, keep_bytes: u64) -> CliResult<File> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(CliError::data)?;
    }
    let f = OpenOptions::new()
        .create(true)
        .write(true)
        .read(true)
        .truncate(false)
        .open(path)
        .with_context(|| format!("{}", path.display()))
        .map_err(CliError::data)?;
    // Anything past the checkpoint was written by an interrupted run.
    f.set_len(keep_bytes).map_err(CliError::data)?;
    let mut f = f;
    use std::io::Seek;
    f.seek(std::io::SeekFrom::End(0)).map_err(CliError::data)?;
    Ok(f)
}

fn write_checkpoint(path: &Path, cp: &Checkpoint) -> CliResult<()> {
    let tmp = with_suffix(path, ".tmp");
    fs::write(&tmp, serde_json::to_vec_pretty(cp).map_err(CliError::data)?).map_err(CliError::data)?;
    fs::rename(&tmp, path).map_err(CliError::data)
}

pub struct BatchArgs {
    pub manifest: PathBuf,
    pub library: PathBuf,
    pub out: PathBuf,
    pub rollouts: usize,
    pub resume: bool,
}

pub fn batch_infer(config: &RunConfig, args: &BatchArgs) -> CliResult<()> {
    let items: Vec<ManifestItem> = read_jsonl(&args.manifest)?;
    let s = session(config, &args.library)?;
    let engine = Engine::new(&s.gateway, &s.library, &s.index, &s.embedder, config.inference_config())
        .map_err(inference_failure)?;

    let cp_path = checkpoint_path(&args.out);
    let mut cp = Checkpoint {
        manifest: args.manifest.clone(),
        library_version: s.library.version,
        done: 0,
        records_bytes: 0,
        errors_bytes: 0,
    };
    if args.resume && cp_path.exists() {
        let prior: Checkpoint = serde_json::from_slice(&fs::read(&cp_path).map_err(CliError::data)?)
            .with_context(|| format!("{}", cp_path.display()))
            .map_err(CliError::data)?;
        if prior.library_version != cp.library_version || prior.done > items.len() {
            return Err(CliError::data(anyhow!(
                "{} belongs to a different run (library v{}, {} items done)",
                cp_path.display(),
                prior.library_version,
                prior.done
            )));
        }
        cp = Checkpoint { manifest: args.manifest.clone(), ..prior };
    }
    let resumed = cp.done;
    let mut records = open_log(&args.out, cp.records_bytes)?;
    let mut errors = open_log(&errors_path(&args.out), cp.errors_bytes)?;

    let (mut ok, mut failed) = (0usize, 0usize);
    let mut first_failure: Option<CliError> = None;
    let width = config.batch.parallelism;
    let todo = &items[cp.done..];
    for window in todo.chunks(width) {
        let results: Vec<Result<InferenceRecord, InferenceError>> = if width == 1 {
            window.iter().map(|item| run_item(&engine, item, args.rollouts)).collect()
        } else {
            std::thread::scope(|scope| {
                let handles: Vec<_> =
                    window.iter().map(|item| scope.spawn(|| run_item(&engine, item, args.rollouts))).collect();
                handles.into_iter().map(|h| h.join().expect("inference worker panicked")).collect()
            })
        };
        for (item, result) in window.iter().zip(results) {
            match result {
                Ok(record) => {
                    ok += 1;
                    let line = serde_json::to_string(&record).map_err(CliError::data)?;
                    writeln!(records, "{line}").map_err(CliError::data)?;
                }
                Err(e) => {
                    failed += 1;
                    let line = json!({ "id": item.id, "image": item.image, "error": e.to_string() });
                    writeln!(errors, "{line}").map_err(CliError::data)?;
                    if first_failure.is_none() {
                        first_failure = Some(inference_failure(e));
                    }
                }
            }
            cp.done += 1;
            if cp.done.is_multiple_of(config.batch.checkpoint_every) || cp.done == items.len() {
                records.sync_data().map_err(CliError::data)?;
                errors.sync_data().map_err(CliError::data)?;
                cp.records_bytes = records.metadata().map_err(CliError::data)?.len();
                cp.errors_bytes = errors.metadata().map_err(CliError::data)?.len();
                write_checkpoint(&cp_path, &cp)?;
            }
        }
    }

    let summary = json!({
        "items": items.len(),
        "resumed_from": resumed,
        "succeeded": ok,
        "failed": failed,
        "records": args.out,
        "errors": errors_path(&args.out),
        "mode": config.inference.mode,
    });
    emit(&summary)?;
    match first_failure {
        Some(e) if ok == 0 && failed > 0 => {
            Err(CliError { code: e.code, error: e.error.context("every item in the batch failed") })
        }
        _ => Ok(()),
    }
}

fn run_item(engine: &Engine, item: &ManifestItem, rollouts: usize) -> Result<InferenceRecord, InferenceError> {
    let (_, mut record) = engine.vote(&item.id, &item.image, rollouts)?;
    record.ground_truth = item.truth();
    Ok(record)
}

pub fn evolve(config: &RunConfig, library_dir: &Path, records_path: &Path, dry_run: bool) -> CliResult<()> {
    let store = LibraryStore::new(library_dir);
    let lib = store.load_head().map_err(CliError::data)?;
    let records: Vec<InferenceRecord> = read_jsonl(records_path)?;
    let gw = gateway(config, &[ModelAlias::OfflineRefinement])?;
    let evolved = evolve_step(&lib, &records, &config.evolution, &gw, &HashedEmbedder::default()).map_err(|e| match e {
        EvolveError::Config(_) => CliError::usage(e),
        EvolveError::Synthesis { .. } => CliError::backend(e),
        _ => CliError::data(e),
    })?;
    if !dry_run {
        store.commit(&evolved.library).map_err(CliError::data)?;
        append_line(&library_dir.join(HISTORY_FILE), &evolved.report)?;
    }
    emit(&evolved.report)
}

#[derive(Debug, Deserialize)]
struct GoldChain {
    id: String,
    chain: Vec<String>,
}

pub fn eval(config: &RunConfig, predictions: &Path, manifest: &Path, gold: Option<&Path>) -> CliResult<()> {
    let records: Vec<InferenceRecord> = read_jsonl(predictions)?;
    let items: Vec<ManifestItem> = read_jsonl(manifest)?;
    let by_id: BTreeMap<&str, &InferenceRecord> = records.iter().map(|r| (r.query_id.as_str(), r)).collect();

    let mut distances = Vec::new();
    let mut matched_km = Vec::new();
    let (mut missing, mut labeled, mut country_hits, mut country_total) = (0usize, 0usize, 0usize, 0usize);
    for item in &items {
        let record = by_id.get(item.id.as_str());
        if record.is_none() {
            missing += 1;
        }
        if let Some(truth) = item.truth().and_then(|t| t.coordinate()) {
            labeled += 1;
            // A missing prediction is never within any threshold.
            let d = record.map_or(f64::INFINITY, |r| haversine_km(r.prediction.coordinates, truth));
            if d.is_finite() {
                matched_km.push(d);
            }
            distances.push(d);
        }
        if let Some(country) = &item.country {
            country_total += 1;
            if record.is_some_and(|r| r.prediction.country.eq_ignore_ascii_case(country)) {
                country_hits += 1;
            }
        }
    }
    let mut thresholds = threshold_accuracy(&distances, &config.metrics.thresholds_km);
    thresholds.mean_km =
        if matched_km.is_empty() { 0.0 } else { matched_km.iter().sum::<f64>() / matched_km.len() as f64 };

    let modes: BTreeSet<&str> = records.iter().map(|r| r.mode.as_str()).collect();
    let versions: BTreeSet<u64> = records.iter().map(|r| r.library_version).collect();
    let mut report = json!({
        "predictions": predictions,
        "manifest_items": items.len(),
        "labeled": labeled,
        "missing_predictions": missing,
        "modes": modes,
        "library_versions": versions,
        "grounding_flagged": records.iter().filter(|r| r.grounding_flagged()).count(),
        "country_accuracy": if country_total == 0 { 0.0 } else { country_hits as f64 / country_total as f64 },
        "distance": thresholds,
    });
    if let Some(gold_path) = gold {
        let chains: Vec<GoldChain> = read_jsonl(gold_path)?;
        let predicted: Vec<Vec<String>> = chains
            .iter()
            .map(|g| {
                by_id
                    .get(g.id.as_str())
                    .map(|r| r.prediction.evidence.iter().map(|c| c.claim.clone()).collect())
                    .unwrap_or_default()
            })
            .collect();
        let gold: Vec<Vec<String>> = chains.into_iter().map(|g| g.chain).collect();
        let f = faithfulness_prf(&predicted, &gold, &HashedEmbedder::default(), config.metrics.theta_match)
            .map_err(CliError::data)?;
        report["faithfulness"] = serde_json::to_value(f).map_err(CliError::data)?;
    }
    emit(&report)
}

pub fn library_stats(config: &RunConfig, library_dir: &Path) -> CliResult<()> {
    let store = LibraryStore::new(library_dir);
    let lib = match store.load_head() {
        Err(LibraryError::NoLibrary(p)) => {
            return Err(CliError::data(anyhow!("no library at {} (run `geoskill compile` first)", p.display())))
        }
        other => other.map_err(CliError::data)?,
    };
    let alpha = config.evolution.pseudo_count;
    let n = lib.len().max(1) as f64;
    let mut provenance: BTreeMap<&str, usize> = BTreeMap::new();
    for s in lib.skills.values() {
        let kind = match s.provenance.kind {
            ProvenanceKind::Expert => "expert",
            ProvenanceKind::Synthesized => "synthesized",
        };
        *provenance.entry(kind).or_insert(0) += 1;
    }
    let countries = country_histogram(&lib);
    let mut top: Vec<(&String, &usize)> = countries.iter().collect();
    top.sort_by(|a, b| b.1.cmp(a.1).then(a.0.cmp(b.0)));
    top.truncate(10);
    emit(&json!({
        "library": library_dir,
        "version": lib.version,
        "skills": lib.len(),
        "stages": stage_counts(&lib).into_iter().map(|(s, c)| (s.as_str(), c)).collect::<BTreeMap<_, _>>(),
        "provenance": provenance,
        "global_skills": lib.skills.values().filter(|s| s.is_global()).count(),
        "countries": countries.len(),
        "top_countries": top.into_iter().map(|(c, k)| json!([c, k])).collect::<Vec<_>>(),
        "relation_priors": lib.relation_priors.len(),
        "failure_subset": lib.failure_subset.len(),
        "mean_prior": lib.skills.values().map(|s| s.confidence).sum::<f64>() / n,
        "mean_effective_confidence": lib.skills.values().map(|s| update_confidence(s, alpha)).sum::<f64>() / n,
        "below_v_min": lib.skills.values().filter(|s| update_confidence(s, alpha) < config.evolution.v_min).count(),
    }))
}
