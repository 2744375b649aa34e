//! Offline library evolution: outcome marking, failure diagnosis, synthesis,
//! merging, pruning and re-versioning.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap};

use serde::{Deserialize, Serialize};

use crate::expert_compiler::GroundTruth;
use crate::geo_metrics::haversine_km;
use crate::inference_engine::prompts;
use crate::inference_engine::{GeoPrediction, InferenceRecord};
use crate::model_gateway::{Gateway, GatewayError, Message, ModelAlias, ModelRequest, ResponseFormat};
use crate::retrieval::{cosine, EmbedError, EmbeddingProvider};
use crate::retrieval::{build_index, RetrievalError, SkillIndex};
use crate::skill_model::{
    is_iso2, validate_skill, AtomicSkill, FailureRef, Provenance, RelationPrior, SkillLibrary, Stage,
};

pub const DEFAULT_PSEUDO_COUNT: f64 = 5.0;

/// Effective reliability: the calibrated prior smoothed with observed
/// outcomes, `(α·v₀ + s) / (α + s + f)`.
pub fn update_confidence(skill: &AtomicSkill, alpha: f64) -> f64 {
    let s = skill.success as f64;
    let f = skill.failure as f64;
    let denom = alpha + s + f;
    if denom <= 0.0 {
        return skill.confidence;
    }
    ((alpha * skill.confidence + s) / denom).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvolutionConfig {
    pub batch_size: usize,
    pub v_min: f64,
    pub relation_failure_rate: f64,
    pub relation_min_observations: u64,
    pub theta_merge: f64,
    pub pseudo_count: f64,
    pub max_synthesized_per_batch: usize,
    pub synthesized_confidence_cap: f64,
    pub synthesis_temperature: f64,
    pub success_radius_km: f64,
    pub max_output_tokens: u32,
}

impl Default for EvolutionConfig {
    fn default() -> Self {
        EvolutionConfig {
            batch_size: 20,
            v_min: 0.30,
            relation_failure_rate: 0.80,
            relation_min_observations: 5,
            theta_merge: 0.92,
            pseudo_count: DEFAULT_PSEUDO_COUNT,
            max_synthesized_per_batch: 60,
            synthesized_confidence_cap: 0.7,
            synthesis_temperature: 0.2,
            success_radius_km: 25.0,
            max_output_tokens: 8192,
        }
    }
}

impl EvolutionConfig {
    pub fn validate(&self) -> Result<(), String> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(format!("{name} = {v} outside [0, 1]"))
            }
        };
        unit("v_min", self.v_min)?;
        unit("relation_failure_rate", self.relation_failure_rate)?;
        unit("theta_merge", self.theta_merge)?;
        unit("synthesized_confidence_cap", self.synthesized_confidence_cap)?;
        if self.batch_size == 0 {
            return Err("batch_size must be positive".into());
        }
        if !(self.pseudo_count > 0.0 && self.pseudo_count.is_finite()) {
            return Err(format!("pseudo_count = {} must be positive", self.pseudo_count));
        }
        if !(self.success_radius_km >= 0.0) {
            return Err("success_radius_km must be non-negative".into());
        }
        if !(0.0..=2.0).contains(&self.synthesis_temperature) {
            return Err("synthesis_temperature outside [0, 2]".into());
        }
        Ok(())
    }
}

/// Sets the record outcome from the distance to ground truth: 0 within
/// `radius_km`, 1 beyond. Returns the distance.
pub fn mark_outcome(record: &mut InferenceRecord, truth: &GroundTruth, radius_km: f64) -> Option<f64> {
    let truth_coord = truth.coordinate()?;
    let d = haversine_km(record.prediction.coordinates, truth_coord);
    record.ground_truth = Some(truth.clone());
    record.outcome = Some(u8::from(d > radius_km));
    Some(d)
}

/// Adds each record's outcome to the counters of the skills it invoked and
/// to relation priors along its trajectory. Unlabeled records are skipped.
pub fn apply_outcomes(lib: &mut SkillLibrary, records: &[InferenceRecord]) {
    let mut prior_pos: HashMap<(String, String), usize> = HashMap::new();
    for (i, p) in lib.relation_priors.iter().enumerate() {
        prior_pos.insert((p.from.clone(), p.to.clone()), i);
    }
    for r in records {
        let Some(e) = r.outcome else { continue };
        for id in r.invoked_skills() {
            if let Some(s) = lib.skills.get_mut(&id) {
                if e == 0 {
                    s.success += 1;
                } else {
                    s.failure += 1;
                }
            }
        }
        for pair in r.prediction.trajectory.windows(2) {
            if let Some(&i) = prior_pos.get(&(pair[0].clone(), pair[1].clone())) {
                let p = &mut lib.relation_priors[i];
                if e == 0 {
                    p.support += 1;
                } else {
                    p.failure += 1;
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorType {
    WrongContinent,
    WrongCountry,
    WrongRegion,
    CoordinateOffset,
    HallucinatedCue,
    RetrievalMiss,
}

pub const CONTINENT_KM: f64 = 5000.0;
pub const REGION_KM: f64 = 200.0;

/// Failure taxonomy. Grounding violations win, then thin retrieval support
/// for the true country (fewer than 2 retrieved skills tagged with it),
/// then the distance and country comparison.
pub fn classify_error(
    truth: &GroundTruth,
    prediction: &GeoPrediction,
    grounding_flagged: bool,
    retrieval_support: Option<usize>,
) -> ErrorType {
    if grounding_flagged {
        return ErrorType::HallucinatedCue;
    }
    if retrieval_support.is_some_and(|n| n < 2) {
        return ErrorType::RetrievalMiss;
    }
    let d = truth.coordinate().map_or(f64::INFINITY, |c| haversine_km(c, prediction.coordinates));
    let same_country = truth.country.as_deref().map(str::to_ascii_uppercase).as_deref() == Some(prediction.country.as_str());
    if d > CONTINENT_KM {
        ErrorType::WrongContinent
    } else if !same_country {
        ErrorType::WrongCountry
    } else if d > REGION_KM {
        ErrorType::WrongRegion
    } else {
        ErrorType::CoordinateOffset
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticTuple {
    pub query_id: String,
    pub truth: GroundTruth,
    pub predicted_country: String,
    pub predicted_region: String,
    pub predicted_lat: f64,
    pub predicted_lon: f64,
    pub distance_km: f64,
    pub error_type: ErrorType,
    pub trajectory: Vec<String>,
    /// Invoked skills that exist in the library.
    pub implicated: Vec<String>,
}

/// Diagnostic tuple for a failed, labeled record.
pub fn diagnose(record: &InferenceRecord, lib: &SkillLibrary) -> Option<DiagnosticTuple> {
    if record.outcome != Some(1) {
        return None;
    }
    let truth = record.ground_truth.clone()?;
    let support = truth.country.as_ref().map(|c| {
        let c = c.to_ascii_uppercase();
        record.retrieved.iter().filter(|h| lib.get(&h.id).is_some_and(|s| s.countries.contains(&c))).count()
    });
    let error_type = classify_error(&truth, &record.prediction, record.grounding_flagged(), support);
    let p = &record.prediction;
    Some(DiagnosticTuple {
        query_id: record.query_id.clone(),
        distance_km: truth.coordinate().map_or(f64::NAN, |c| haversine_km(c, p.coordinates)),
        truth,
        predicted_country: p.country.clone(),
        predicted_region: p.region.clone(),
        predicted_lat: p.coordinates.lat,
        predicted_lon: p.coordinates.lon,
        error_type,
        trajectory: p.trajectory.clone(),
        implicated: record.invoked_skills().into_iter().filter(|id| lib.contains(id)).collect(),
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SynthesisOutcome {
    pub candidates: Vec<AtomicSkill>,
    /// Items in the reply that could not become valid skills.
    pub rejected: usize,
}

#[derive(Deserialize)]
struct SynthReply {
    skills: Vec<serde_json::Value>,
}

#[derive(Deserialize)]
struct SynthItem {
    instruction: String,
    heuristic: String,
    confidence: f64,
    #[serde(default)]
    countries: Vec<String>,
    #[serde(default)]
    regions: Vec<String>,
    stage: Stage,
}

fn synthesis_prompt(batch: &[DiagnosticTuple], lib: &SkillLibrary) -> String {
    let mut diagnostics = String::new();
    for d in batch {
        diagnostics.push_str(&serde_json::to_string(d).expect("diagnostics serialize"));
        diagnostics.push('\n');
    }
    let mut skills = String::new();
    let mut seen = BTreeSet::new();
    for id in batch.iter().flat_map(|d| &d.implicated) {
        if let (true, Some(s)) = (seen.insert(id), lib.get(id)) {
            skills.push_str(&format!("[{}] {} => {}\n", s.id, s.instruction, s.heuristic));
        }
    }
    if skills.is_empty() {
        skills.push_str("(none)\n");
    }
    prompts::render(prompts::SYNTHESIZE, &[("diagnostics", diagnostics.trim_end()), ("skills", skills.trim_end())])
}

/// Φ: asks the refinement model for corrective skills for one batch of
/// diagnostics. Malformed or invalid items are dropped and counted.
pub fn synthesize(
    batch: &[DiagnosticTuple],
    lib: &SkillLibrary,
    gateway: &Gateway,
    config: &EvolutionConfig,
    source: &str,
) -> Result<SynthesisOutcome, GatewayError> {
    let request = ModelRequest {
        messages: vec![Message::user(synthesis_prompt(batch, lib))],
        temperature: config.synthesis_temperature,
        response_format: ResponseFormat::StrictJson,
        max_output_tokens: config.max_output_tokens,
        model_alias: ModelAlias::OfflineRefinement,
    };
    let response = gateway.complete(&request)?;
    let reply: SynthReply = serde_json::from_str(&response.text)
        .map_err(|e| GatewayError::Protocol(format!("synthesis reply has no skills list: {e}")))?;
    let mut out = SynthesisOutcome::default();
    for item in reply.skills {
        let Ok(item) = serde_json::from_value::<SynthItem>(item) else {
            out.rejected += 1;
            continue;
        };
        let countries: Vec<String> = item.countries.iter().map(|c| c.trim().to_ascii_uppercase()).collect();
        if !countries.iter().all(|c| is_iso2(c)) || !item.confidence.is_finite() {
            out.rejected += 1;
            continue;
        }
        let confidence = item.confidence.min(config.synthesized_confidence_cap);
        let skill = AtomicSkill::new(item.instruction.trim(), item.heuristic.trim(), confidence, item.stage, Provenance::synthesized(source))
            .with_countries(countries)
            .with_regions(item.regions.iter().map(|r| r.trim().to_lowercase()).filter(|r| !r.is_empty()));
        if validate_skill(&skill).is_empty() && out.candidates.len() < config.max_synthesized_per_batch {
            out.candidates.push(skill);
        } else {
            out.rejected += 1;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct PairKey {
    sim: f64,
    a: usize,
    b: usize,
}

impl Eq for PairKey {}

impl Ord for PairKey {
    // Max-heap: highest similarity first, then lowest positions.
    fn cmp(&self, other: &Self) -> Ordering {
        self.sim
            .total_cmp(&other.sim)
            .then_with(|| other.a.cmp(&self.a))
            .then_with(|| other.b.cmp(&self.b))
    }
}

impl PartialOrd for PairKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MergeReport {
    /// (survivor, absorbed) in merge order.
    pub merges: Vec<(String, String)>,
}

fn absorb(survivor: &mut AtomicSkill, other: &AtomicSkill) {
    survivor.confidence = survivor.confidence.max(other.confidence);
    survivor.countries.extend(other.countries.iter().cloned());
    survivor.regions.extend(other.regions.iter().cloned());
    survivor.success += other.success;
    survivor.failure += other.failure;
    survivor.version_introduced = survivor.version_introduced.min(other.version_introduced);
}

/// Replaces ids per `map` in priors and failure refs, dropping self-loops and
/// summing duplicate priors.
fn repoint(lib: &mut SkillLibrary, map: &BTreeMap<String, String>) {
    let resolve = |id: &str| -> String {
        let mut cur = id.to_string();
        while let Some(next) = map.get(&cur) {
            cur = next.clone();
        }
        cur
    };
    let mut priors: BTreeMap<(String, String), RelationPrior> = BTreeMap::new();
    for p in &lib.relation_priors {
        let (from, to) = (resolve(&p.from), resolve(&p.to));
        if from == to {
            continue;
        }
        let slot = priors
            .entry((from.clone(), to.clone()))
            .or_insert(RelationPrior { from, to, support: 0, failure: 0 });
        slot.support += p.support;
        slot.failure += p.failure;
    }
    lib.relation_priors = priors.into_values().collect();
    for f in &mut lib.failure_subset {
        let mut ids: Vec<String> = Vec::with_capacity(f.skill_ids.len());
        for id in &f.skill_ids {
            let r = resolve(id);
            if !ids.contains(&r) {
                ids.push(r);
            }
        }
        f.skill_ids = ids;
    }
}

/// Γ: greedy agglomeration. The most similar qualifying pair is merged
/// first; the survivor's embedding is recomputed and it re-enters the
/// candidate pool. Stops when no pair reaches `theta`.
pub fn merge(
    lib: &SkillLibrary,
    provider: &dyn EmbeddingProvider,
    theta: f64,
) -> Result<(SkillLibrary, MergeReport), EmbedError> {
    let mut skills: Vec<AtomicSkill> = lib.skills.values().cloned().collect();
    let texts: Vec<String> = skills.iter().map(AtomicSkill::index_text).collect();
    let mut emb = provider.embed_batch(&texts)?;
    let mut alive = vec![true; skills.len()];
    let mut stamp = vec![0u32; skills.len()];
    let mut heap: BinaryHeap<(PairKey, u32, u32)> = BinaryHeap::new();
    for a in 0..skills.len() {
        for b in a + 1..skills.len() {
            let sim = cosine(&emb[a], &emb[b]);
            if sim >= theta {
                heap.push((PairKey { sim, a, b }, 0, 0));
            }
        }
    }
    let mut map = BTreeMap::new();
    let mut report = MergeReport::default();
    while let Some((key, sa, sb)) = heap.pop() {
        let (a, b) = (key.a, key.b);
        if !alive[a] || !alive[b] || stamp[a] != sa || stamp[b] != sb {
            continue;
        }
        let a_wins = match skills[a].confidence.total_cmp(&skills[b].confidence) {
            Ordering::Greater => true,
            Ordering::Less => false,
            Ordering::Equal => skills[a].id < skills[b].id,
        };
        let (keep, gone) = if a_wins { (a, b) } else { (b, a) };
        let absorbed = skills[gone].clone();
        absorb(&mut skills[keep], &absorbed);
        alive[gone] = false;
        stamp[keep] += 1;
        map.insert(absorbed.id.clone(), skills[keep].id.clone());
        report.merges.push((skills[keep].id.clone(), absorbed.id));
        emb[keep] = provider.embed(&skills[keep].index_text())?;
        for other in 0..skills.len() {
            if other == keep || !alive[other] {
                continue;
            }
            let sim = cosine(&emb[keep], &emb[other]);
            if sim >= theta {
                let (x, y) = if keep < other { (keep, other) } else { (other, keep) };
                heap.push((PairKey { sim, a: x, b: y }, stamp[x], stamp[y]));
            }
        }
    }
    let mut next = SkillLibrary {
        version: lib.version,
        skills: skills
            .into_iter()
            .zip(alive)
            .filter(|(_, live)| *live)
            .map(|(s, _)| (s.id.clone(), s))
            .collect(),
        relation_priors: lib.relation_priors.clone(),
        failure_subset: lib.failure_subset.clone(),
    };
    repoint(&mut next, &map);
    Ok((next, report))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PruneReport {
    pub skills: Vec<String>,
    pub relations: Vec<(String, String)>,
    pub dangling_relations: usize,
}

/// True when a prior has enough observations and fails often enough to go.
pub fn relation_failing(p: &RelationPrior, config: &EvolutionConfig) -> bool {
    p.observations() >= config.relation_min_observations && p.failure_rate() >= config.relation_failure_rate
}

/// Π: drops unreliable skills and relations, then anything left dangling.
pub fn prune(lib: &SkillLibrary, config: &EvolutionConfig) -> (SkillLibrary, PruneReport) {
    let mut report = PruneReport::default();
    let mut next = lib.clone();
    next.skills.retain(|id, s| {
        let keep = update_confidence(s, config.pseudo_count) >= config.v_min;
        if !keep {
            report.skills.push(id.clone());
        }
        keep
    });
    let skills = &next.skills;
    next.relation_priors.retain(|p| {
        if relation_failing(p, config) {
            report.relations.push((p.from.clone(), p.to.clone()));
            false
        } else if !skills.contains_key(&p.from) || !skills.contains_key(&p.to) {
            report.dangling_relations += 1;
            false
        } else {
            true
        }
    });
    for f in &mut next.failure_subset {
        f.skill_ids.retain(|id| skills.contains_key(id));
    }
    (next, report)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvolutionReport {
    pub version_before: u64,
    pub version_after: u64,
    pub size_before: usize,
    pub size_after: usize,
    pub records: usize,
    pub successes: usize,
    pub failures: usize,
    pub unlabeled: usize,
    pub error_types: BTreeMap<ErrorType, usize>,
    pub batches: usize,
    pub candidates: usize,
    pub rejected: usize,
    pub duplicates: usize,
    pub added: usize,
    pub merged: usize,
    pub pruned_skills: usize,
    pub pruned_relations: usize,
    pub dangling_relations: usize,
}

impl EvolutionReport {
    pub fn balances(&self) -> bool {
        self.size_before + self.added == self.size_after + self.merged + self.pruned_skills
    }
}

#[derive(Debug, thiserror::Error)]
pub enum EvolveError {
    #[error("invalid evolution config: {0}")]
    Config(String),
    #[error("synthesis batch {batch}: {source}")]
    Synthesis { batch: usize, source: GatewayError },
    #[error("merge embeddings: {0}")]
    Embedding(#[from] EmbedError),
    #[error("rebuilding the index: {0}")]
    Index(#[from] RetrievalError),
    #[error("evolved library breaks invariants: {0}")]
    Invariant(String),
}

pub struct Evolved {
    pub library: SkillLibrary,
    /// The library after merging and before pruning.
    pub merged: SkillLibrary,
    pub report: EvolutionReport,
    pub index: SkillIndex,
    pub diagnostics: Vec<DiagnosticTuple>,
}

/// One evolution iteration producing version T+1. Pure: nothing is written;
/// callers commit the returned library through the store.
pub fn evolve_step(
    lib: &SkillLibrary,
    records: &[InferenceRecord],
    config: &EvolutionConfig,
    gateway: &Gateway,
    provider: &dyn EmbeddingProvider,
) -> Result<Evolved, EvolveError> {
    config.validate().map_err(EvolveError::Config)?;
    let mut report = EvolutionReport {
        version_before: lib.version,
        version_after: lib.version + 1,
        size_before: lib.len(),
        records: records.len(),
        ..Default::default()
    };

    let mut records: Vec<InferenceRecord> = records.to_vec();
    for r in &mut records {
        if r.outcome.is_none() {
            if let Some(truth) = r.ground_truth.clone() {
                mark_outcome(r, &truth, config.success_radius_km);
            }
        }
        match r.outcome {
            Some(0) => report.successes += 1,
            Some(_) => report.failures += 1,
            None => report.unlabeled += 1,
        }
    }

    let mut work = lib.clone();
    apply_outcomes(&mut work, &records);

    let diagnostics: Vec<DiagnosticTuple> = records.iter().filter_map(|r| diagnose(r, &work)).collect();
    for d in &diagnostics {
        *report.error_types.entry(d.error_type).or_insert(0) += 1;
        work.failure_subset.push(FailureRef { reference: d.query_id.clone(), skill_ids: d.implicated.clone() });
    }

    let new_version = lib.version + 1;
    let mut fresh: BTreeMap<String, AtomicSkill> = BTreeMap::new();
    for (batch_no, batch) in diagnostics.chunks(config.batch_size).enumerate() {
        report.batches += 1;
        let source = format!("evolve:v{new_version}:b{batch_no}");
        let outcome = synthesize(batch, &work, gateway, config, &source)
            .map_err(|source| EvolveError::Synthesis { batch: batch_no, source })?;
        report.candidates += outcome.candidates.len();
        report.rejected += outcome.rejected;
        for c in outcome.candidates {
            if work.contains(&c.id) || fresh.contains_key(&c.id) {
                report.duplicates += 1;
            } else {
                fresh.insert(c.id.clone(), c.with_version(new_version));
            }
        }
    }
    report.added = fresh.len();
    work.skills.extend(fresh);

    let (merged, merge_report) = merge(&work, provider, config.theta_merge)?;
    report.merged = merge_report.merges.len();
    let (mut pruned, prune_report) = prune(&merged, config);
    let merged_snapshot = merged;
    report.pruned_skills = prune_report.skills.len();
    report.pruned_relations = prune_report.relations.len();
    report.dangling_relations = prune_report.dangling_relations;

    pruned.version = new_version;
    pruned.canonicalize();
    let violations = pruned.check_invariants();
    if !violations.is_empty() {
        let msg = violations.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ");
        return Err(EvolveError::Invariant(msg));
    }
    report.size_after = pruned.len();
    let index = build_index(&pruned, provider)?;
    Ok(Evolved { library: pruned, merged: merged_snapshot, report, index, diagnostics })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::retrieval::HashedEmbedder;
    use crate::skill_model::library_upsert;

    fn skill(k: &str, v: f64) -> AtomicSkill {
        AtomicSkill::new(k, "", v, Stage::Country, Provenance::expert("t"))
    }

    fn lib_of(skills: Vec<AtomicSkill>) -> SkillLibrary {
        library_upsert(&SkillLibrary::empty(), skills, false).unwrap()
    }

    #[test]
    fn confidence_update_rule() {
        let mut s = skill("a", 0.9);
        assert_eq!(update_confidence(&s, 5.0), 0.9);
        s.failure = 20;
        assert!((update_confidence(&s, 5.0) - 0.18).abs() < 1e-12);
        let before = update_confidence(&s, 5.0);
        s.success = 3;
        assert!(update_confidence(&s, 5.0) > before);
    }

    fn truth(lat: f64, lon: f64, c: &str) -> GroundTruth {
        GroundTruth { lat, lon, country: Some(c.into()) }
    }

    fn pred(country: &str, lat: f64, lon: f64) -> GeoPrediction {
        GeoPrediction {
            country: country.into(),
            region: String::new(),
            coordinates: crate::GeoCoordinate::new(lat, lon).unwrap(),
            confidence: 0.5,
            evidence: vec![],
            trajectory: vec![],
        }
    }

    #[test]
    fn error_taxonomy() {
        let ad = truth(42.5063, 1.5218, "AD");
        assert_eq!(classify_error(&ad, &pred("CA", 45.42, -75.69), false, None), ErrorType::WrongContinent);
        assert_eq!(classify_error(&ad, &pred("FR", 42.9, 1.9), false, None), ErrorType::WrongCountry);
        assert_eq!(classify_error(&ad, &pred("AD", 42.55, 1.6), false, None), ErrorType::CoordinateOffset);
        assert_eq!(classify_error(&ad, &pred("AD", 42.55, 1.6), true, Some(0)), ErrorType::HallucinatedCue);
        assert_eq!(classify_error(&ad, &pred("AD", 42.55, 1.6), false, Some(1)), ErrorType::RetrievalMiss);
        assert_eq!(classify_error(&ad, &pred("AD", 42.55, 1.6), false, Some(2)), ErrorType::CoordinateOffset);
        let us = truth(40.7, -74.0, "US");
        assert_eq!(classify_error(&us, &pred("US", 42.36, -71.06), false, None), ErrorType::WrongRegion);
    }

    #[test]
    fn identical_texts_merge_with_summed_counters() {
        let mut a = skill("check the bollards for red reflectors", 0.8);
        a.success = 2;
        let mut b = AtomicSkill::new("Check the bollards for red reflectors.", "", 0.6, Stage::Country, Provenance::expert("t"));
        b.failure = 3;
        // Different content ids, identical index text.
        assert_ne!(a.id, b.id);
        let lib = lib_of(vec![a.clone(), b]);
        let (out, rep) = merge(&lib, &HashedEmbedder::default(), 0.92).unwrap();
        assert_eq!(out.len(), 1);
        let s = out.get(&a.id).unwrap();
        assert_eq!((s.success, s.failure), (2, 3));
        assert_eq!(rep.merges.len(), 1);
    }

    #[test]
    fn dissimilar_library_is_unchanged() {
        let lib = lib_of(vec![skill("yellow license plates", 0.6), skill("palm trees along the coast", 0.6)]);
        let (out, rep) = merge(&lib, &HashedEmbedder::default(), 0.92).unwrap();
        assert_eq!(out, lib);
        assert!(rep.merges.is_empty());
    }

    #[test]
    fn priors_follow_the_survivor() {
        let a = skill("snow poles with red tops", 0.9);
        let b = AtomicSkill::new("Snow poles with red tops!", "", 0.5, Stage::Country, Provenance::expert("t"));
        let c = skill("cyrillic shop signs", 0.6);
        let mut lib = lib_of(vec![a.clone(), b.clone(), c.clone()]);
        lib.relation_priors = vec![
            RelationPrior { from: a.id.clone(), to: c.id.clone(), support: 1, failure: 0 },
            RelationPrior { from: b.id.clone(), to: c.id.clone(), support: 2, failure: 1 },
            RelationPrior { from: a.id.clone(), to: b.id.clone(), support: 4, failure: 0 },
        ];
        lib.failure_subset = vec![FailureRef { reference: "q".into(), skill_ids: vec![b.id.clone(), a.id.clone()] }];
        let (out, _) = merge(&lib, &HashedEmbedder::default(), 0.92).unwrap();
        assert_eq!(out.relation_priors, vec![RelationPrior { from: a.id.clone(), to: c.id.clone(), support: 3, failure: 1 }]);
        assert_eq!(out.failure_subset[0].skill_ids, vec![a.id.clone()]);
        assert!(out.check_invariants().is_empty());
    }

    #[test]
    fn prune_rules() {
        let cfg = EvolutionConfig::default();
        let low = skill("low", 0.2);
        let ok = skill("ok", 0.5);
        let other = skill("other", 0.5);
        let mut lib = lib_of(vec![low.clone(), ok.clone(), other.clone()]);
        lib.relation_priors = vec![
            RelationPrior { from: ok.id.clone(), to: other.id.clone(), support: 0, failure: 5 },
            RelationPrior { from: other.id.clone(), to: ok.id.clone(), support: 0, failure: 3 },
            RelationPrior { from: low.id.clone(), to: ok.id.clone(), support: 9, failure: 0 },
        ];
        let (out, rep) = prune(&lib, &cfg);
        assert_eq!(rep.skills, vec![low.id.clone()]);
        assert_eq!(rep.relations.len(), 1);
        assert_eq!(rep.dangling_relations, 1);
        assert_eq!(out.relation_priors.len(), 1);
        assert_eq!(out.relation_priors[0].failure, 3);
    }

    #[test]
    fn config_defaults_and_validation() {
        let c = EvolutionConfig::default();
        assert_eq!(c.batch_size, 20);
        assert!(c.validate().is_ok());
        assert!(EvolutionConfig { v_min: 1.5, ..c.clone() }.validate().is_err());
        assert!(EvolutionConfig { batch_size: 0, ..c }.validate().is_err());
    }
}
