//! Compiles expert trajectory records into the initial skill library.
//!
//! Compilation is purely symbolic: each surviving reasoning round becomes one
//! atomic skill, consecutive rounds become relation-prior candidates, and
//! brittle trajectories seed the failure subset. No model is consulted.

mod gazetteer;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::skill_model::{
    AtomicSkill, FailureRef, GeoCoordinate, Provenance, RelationPrior, SkillLibrary, Stage,
};
use crate::text::{content_word_count, find_phrase, tokenize};

pub use gazetteer::{map_regions, map_regions_with, Gazetteer, GeoHit};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Round {
    pub reasoning: String,
    pub conclusion: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryOutcome {
    Success,
    Brittle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub lat: f64,
    pub lon: f64,
    #[serde(default)]
    pub country: Option<String>,
}

impl GroundTruth {
    pub fn coordinate(&self) -> Option<GeoCoordinate> {
        GeoCoordinate::new(self.lat, self.lon).ok()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertTrajectoryRecord {
    pub trajectory_id: String,
    pub rounds: Vec<Round>,
    pub outcome: TrajectoryOutcome,
    #[serde(default)]
    pub ground_truth: Option<GroundTruth>,
}

/// A line that could not be turned into a record.
#[derive(Debug, Clone, PartialEq)]
pub struct ParseDiagnostic {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, Default)]
pub struct TrajectoryParse {
    pub records: Vec<ExpertTrajectoryRecord>,
    pub diagnostics: Vec<ParseDiagnostic>,
}

#[derive(Debug, thiserror::Error)]
pub enum CompileError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("lexicon: {0}")]
    Lexicon(String),
}

/// Reads trajectory JSONL. Malformed lines become positioned diagnostics.
pub fn parse_trajectory_records(path: &Path) -> Result<TrajectoryParse, CompileError> {
    let text = fs::read_to_string(path)
        .map_err(|source| CompileError::Io { path: path.display().to_string(), source })?;
    Ok(parse_trajectory_text(&text))
}

pub fn parse_trajectory_text(text: &str) -> TrajectoryParse {
    let mut out = TrajectoryParse::default();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<ExpertTrajectoryRecord>(line) {
            Ok(rec) if rec.rounds.is_empty() => out.diagnostics.push(ParseDiagnostic {
                line: idx + 1,
                message: format!("trajectory {} has no rounds", rec.trajectory_id),
            }),
            Ok(rec) => out.records.push(rec),
            Err(e) => out.diagnostics.push(ParseDiagnostic { line: idx + 1, message: e.to_string() }),
        }
    }
    out
}

/// Ordered (marker phrase, confidence) table with a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertaintyLexicon {
    pub markers: Vec<(String, f64)>,
    pub default: f64,
}

impl Default for CertaintyLexicon {
    fn default() -> Self {
        let table: &[(&str, f64)] = &[
            ("definitely", 0.90),
            ("certainly", 0.90),
            ("clearly", 0.90),
            ("likely", 0.70),
            ("probably", 0.70),
            ("possibly", 0.50),
            ("maybe", 0.50),
            ("perhaps", 0.50),
            ("not sure", 0.35),
            ("uncertain", 0.35),
        ];
        CertaintyLexicon::new(table.iter().map(|(m, v)| (m.to_string(), *v)).collect(), 0.60)
            .expect("built-in lexicon is valid")
    }
}

impl CertaintyLexicon {
    /// Lowercases markers and orders them longest first.
    pub fn new(markers: Vec<(String, f64)>, default: f64) -> Result<Self, CompileError> {
        let in_range = |v: f64| (0.0..=1.0).contains(&v);
        if !in_range(default) {
            return Err(CompileError::Lexicon(format!("default {default} outside [0, 1]")));
        }
        let mut markers: Vec<(String, f64)> = markers
            .into_iter()
            .map(|(m, v)| (m.trim().to_lowercase(), v))
            .collect();
        if let Some((m, v)) = markers.iter().find(|(m, v)| !in_range(*v) || tokenize(m).is_empty()) {
            return Err(CompileError::Lexicon(format!("bad marker {m:?} = {v}")));
        }
        markers.sort_by(|a, b| {
            tokenize(&b.0).len().cmp(&tokenize(&a.0).len()).then(b.0.len().cmp(&a.0.len()))
        });
        Ok(CertaintyLexicon { markers, default })
    }

    pub fn from_json_file(path: &Path) -> Result<Self, CompileError> {
        let text = fs::read_to_string(path)
            .map_err(|source| CompileError::Io { path: path.display().to_string(), source })?;
        let raw: CertaintyLexicon =
            serde_json::from_str(&text).map_err(|e| CompileError::Lexicon(e.to_string()))?;
        CertaintyLexicon::new(raw.markers, raw.default)
    }

    /// Values of every marker present in the token stream. Tokens consumed
    /// by a longer marker are not matched again.
    fn matches(&self, tokens: &[String]) -> Vec<f64> {
        let phrases: Vec<(Vec<String>, f64)> =
            self.markers.iter().map(|(m, v)| (tokenize(m), *v)).collect();
        let mut used = vec![false; tokens.len()];
        let mut values = Vec::new();
        for (phrase, value) in &phrases {
            let mut start = 0;
            while start + phrase.len() <= tokens.len() {
                match find_phrase(&tokens[start..], phrase) {
                    Some(rel) => {
                        let at = start + rel;
                        let span = at..at + phrase.len();
                        if !used[span.clone()].iter().any(|&u| u) {
                            used[span].iter_mut().for_each(|u| *u = true);
                            values.push(*value);
                        }
                        start = at + 1;
                    }
                    None => break,
                }
            }
        }
        values
    }
}

/// Confidence of the strongest matching certainty marker, or the default.
pub fn calibrate_confidence(text: &str, lexicon: &CertaintyLexicon) -> f64 {
    lexicon.matches(&tokenize(text)).into_iter().fold(None, |acc: Option<f64>, v| {
        Some(acc.map_or(v, |a| a.max(v)))
    })
    .unwrap_or(lexicon.default)
}

const GLOBAL_VOCAB: &[&str] = &[
    "arid", "biome", "climate", "continent", "continental", "equator", "global", "hemisphere",
    "latitude", "monsoon", "subtropical", "sun", "temperate", "tropical", "worldwide",
];

const LOCAL_VOCAB: &[&str] = &[
    "address", "avenue", "building", "church", "district", "house", "landmark", "neighborhood",
    "neighbourhood", "postcode", "shop", "square", "storefront", "street", "town", "village",
];

/// Coarse-to-fine stage for a step.
///
/// Global vocabulary without a country hit gives `GlobalRegion`; otherwise
/// street-level vocabulary gives `Local`; everything else is `Country`.
pub fn assign_stage(tokens: &[String], has_country: bool) -> Stage {
    let has = |vocab: &[&str]| tokens.iter().any(|t| vocab.contains(&t.as_str()));
    if has(GLOBAL_VOCAB) && !has_country {
        Stage::GlobalRegion
    } else if has(LOCAL_VOCAB) {
        Stage::Local
    } else {
        Stage::Country
    }
}

/// Skills and ordered edge candidates extracted from one trajectory.
#[derive(Debug, Clone, Default)]
pub struct Extraction {
    pub skills: Vec<AtomicSkill>,
    pub edges: Vec<(String, String)>,
}

/// True when a step carries no geographic content worth keeping: no
/// gazetteer hit, no region token, and fewer than four content words.
pub fn is_semantically_empty(text: &str, gazetteer: &Gazetteer) -> bool {
    let tokens = tokenize(text);
    gazetteer.scan(&tokens).is_empty() && content_word_count(&tokens) < 4
}

/// Normalizes each surviving round of `record` into an atomic skill.
pub fn extract_skills(
    record: &ExpertTrajectoryRecord,
    lexicon: &CertaintyLexicon,
    gazetteer: &Gazetteer,
) -> Extraction {
    let mut out = Extraction::default();
    for (idx, round) in record.rounds.iter().enumerate() {
        let reasoning = round.reasoning.trim();
        let conclusion = round.conclusion.trim();
        let combined = format!("{reasoning} {conclusion}");
        if is_semantically_empty(&combined, gazetteer) {
            continue;
        }
        let (instruction, heuristic) = if reasoning.is_empty() {
            (conclusion, "")
        } else {
            (reasoning, conclusion)
        };
        let (countries, regions) = map_regions_with(gazetteer, conclusion);
        let tokens = tokenize(&combined);
        let stage = assign_stage(&tokens, !countries.is_empty());
        let source = format!("{}#r{}", record.trajectory_id, idx + 1);
        let skill = AtomicSkill::new(
            instruction,
            heuristic,
            calibrate_confidence(&combined, lexicon),
            stage,
            Provenance::expert(source),
        )
        .with_countries(countries)
        .with_regions(regions);
        out.skills.push(skill);
    }
    out.edges = out
        .skills
        .windows(2)
        .filter(|w| w[0].id != w[1].id)
        .map(|w| (w[0].id.clone(), w[1].id.clone()))
        .collect();
    out
}

/// Summary of a compilation run.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct CompileReport {
    pub records: usize,
    pub success_records: usize,
    pub brittle_records: usize,
    pub steps_seen: usize,
    pub steps_filtered: usize,
    pub duplicate_steps: usize,
    pub skills: usize,
    pub relation_priors: usize,
    pub failure_subset: usize,
}

/// Builds the version-0 library from parsed records.
///
/// Successful trajectories contribute skills and relation-prior support;
/// brittle trajectories contribute failure-subset entries and failure counts
/// on priors whose endpoints both exist in the library.
pub fn compile_library(
    records: &[ExpertTrajectoryRecord],
    lexicon: &CertaintyLexicon,
    gazetteer: &Gazetteer,
) -> (SkillLibrary, CompileReport) {
    let mut report = CompileReport { records: records.len(), ..Default::default() };
    let mut skills: BTreeMap<String, AtomicSkill> = BTreeMap::new();
    let mut priors: BTreeMap<(String, String), RelationPrior> = BTreeMap::new();
    let mut brittle: Vec<(&ExpertTrajectoryRecord, Extraction)> = Vec::new();

    for record in records {
        report.steps_seen += record.rounds.len();
        let extraction = extract_skills(record, lexicon, gazetteer);
        report.steps_filtered += record.rounds.len() - extraction.skills.len();
        match record.outcome {
            TrajectoryOutcome::Brittle => {
                report.brittle_records += 1;
                brittle.push((record, extraction));
            }
            TrajectoryOutcome::Success => {
                report.success_records += 1;
                for skill in extraction.skills {
                    match skills.get_mut(&skill.id) {
                        Some(existing) => {
                            report.duplicate_steps += 1;
                            existing.confidence = existing.confidence.max(skill.confidence);
                            existing.countries.extend(skill.countries);
                            existing.regions.extend(skill.regions);
                        }
                        None => {
                            skills.insert(skill.id.clone(), skill);
                        }
                    }
                }
                for (from, to) in extraction.edges {
                    priors
                        .entry((from.clone(), to.clone()))
                        .or_insert(RelationPrior { from, to, support: 0, failure: 0 })
                        .support += 1;
                }
            }
        }
    }

    let mut failure_subset = Vec::new();
    for (record, extraction) in brittle {
        let mut touched: Vec<String> = Vec::new();
        for s in &extraction.skills {
            if skills.contains_key(&s.id) && !touched.contains(&s.id) {
                touched.push(s.id.clone());
            }
        }
        for (from, to) in extraction.edges {
            if skills.contains_key(&from) && skills.contains_key(&to) {
                priors
                    .entry((from.clone(), to.clone()))
                    .or_insert(RelationPrior { from, to, support: 0, failure: 0 })
                    .failure += 1;
            }
        }
        failure_subset.push(FailureRef { reference: record.trajectory_id.clone(), skill_ids: touched });
    }

    let lib = SkillLibrary {
        version: 0,
        skills,
        relation_priors: priors.into_values().collect(),
        failure_subset,
    };
    report.skills = lib.len();
    report.relation_priors = lib.relation_priors.len();
    report.failure_subset = lib.failure_subset.len();
    (lib, report)
}

/// Country-code histogram over a library: code → number of skills tagged
/// with it.
pub fn country_histogram(lib: &SkillLibrary) -> BTreeMap<String, usize> {
    let mut hist = BTreeMap::new();
    for s in lib.skills.values() {
        for c in &s.countries {
            *hist.entry(c.clone()).or_insert(0) += 1;
        }
    }
    hist
}

/// Distinct stages present, for reporting.
pub fn stage_counts(lib: &SkillLibrary) -> BTreeMap<Stage, usize> {
    let mut out = BTreeMap::new();
    for s in lib.skills.values() {
        *out.entry(s.stage).or_insert(0) += 1;
    }
    out
}
