//! Skill domain types: atomic skills, relation priors, the versioned skill
//! library and its invariants.
//!
//! Library values are immutable snapshots. Every mutating operation returns a
//! new [`SkillLibrary`], so readers holding an older version are unaffected.

mod persist;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::text::normalize;

pub use persist::{load_library, read_snapshot, save_library, write_snapshot, LibraryStore};

/// Schema version written into every persisted line.
pub const SCHEMA_VERSION: u32 = 1;

/// Coarse-to-fine reasoning stage of a skill. Ordering is the plan order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    GlobalRegion,
    Country,
    Local,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::GlobalRegion => "global_region",
            Stage::Country => "country",
            Stage::Local => "local",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProvenanceKind {
    Expert,
    Synthesized,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub kind: ProvenanceKind,
    pub source: String,
}

impl Provenance {
    pub fn expert(source: impl Into<String>) -> Self {
        Provenance { kind: ProvenanceKind::Expert, source: source.into() }
    }

    pub fn synthesized(source: impl Into<String>) -> Self {
        Provenance { kind: ProvenanceKind::Synthesized, source: source.into() }
    }
}

/// The minimal unit of geographic reasoning: an instruction, the heuristic it
/// encodes, and a prior confidence.
///
/// `confidence` is the calibrated prior; the effective reliability is derived
/// from it together with the outcome counters
/// (see [`crate::evolution::update_confidence`]).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtomicSkill {
    pub id: String,
    pub instruction: String,
    pub heuristic: String,
    pub confidence: f64,
    pub countries: BTreeSet<String>,
    pub regions: BTreeSet<String>,
    pub stage: Stage,
    pub provenance: Provenance,
    pub success: u64,
    pub failure: u64,
    pub version_introduced: u64,
}

impl AtomicSkill {
    /// Builds a skill with zeroed counters and its content id.
    pub fn new(
        instruction: impl Into<String>,
        heuristic: impl Into<String>,
        confidence: f64,
        stage: Stage,
        provenance: Provenance,
    ) -> Self {
        let instruction = instruction.into();
        let heuristic = heuristic.into();
        AtomicSkill {
            id: skill_id(&instruction, &heuristic),
            instruction,
            heuristic,
            confidence,
            countries: BTreeSet::new(),
            regions: BTreeSet::new(),
            stage,
            provenance,
            success: 0,
            failure: 0,
            version_introduced: 0,
        }
    }

    pub fn with_countries<I, S>(mut self, codes: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.countries = codes.into_iter().map(Into::into).collect();
        self
    }

    pub fn with_regions<I, S>(mut self, tags: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.regions = tags.into_iter().map(Into::into).collect();
        self
    }

    pub fn with_version(mut self, version: u64) -> Self {
        self.version_introduced = version;
        self
    }

    /// Text used for lexical and dense indexing: instruction, heuristic and
    /// region tags.
    pub fn index_text(&self) -> String {
        let mut text = format!("{} {}", self.instruction, self.heuristic);
        for tag in &self.regions {
            text.push(' ');
            text.push_str(tag);
        }
        text
    }

    /// True when the skill carries no country constraint.
    pub fn is_global(&self) -> bool {
        self.countries.is_empty()
    }
}

/// Content id of a skill: hex SHA-256 prefix (128 bits) over the normalized
/// instruction and heuristic joined by a unit separator.
pub fn skill_id(instruction: &str, heuristic: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(normalize(instruction).as_bytes());
    hasher.update([0x1f]);
    hasher.update(normalize(heuristic).as_bytes());
    let digest = hasher.finalize();
    hex::encode(&digest[..16])
}

/// An invariant a skill fails to satisfy.
#[derive(Debug, Clone, PartialEq)]
pub enum SkillViolation {
    ConfidenceOutOfRange(f64),
    EmptyInstruction,
    CountryNotIso2(String),
    IdMismatch { expected: String, found: String },
}

impl fmt::Display for SkillViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SkillViolation::ConfidenceOutOfRange(v) => write!(f, "confidence out of range ({v})"),
            SkillViolation::EmptyInstruction => f.write_str("instruction is empty"),
            SkillViolation::CountryNotIso2(c) => write!(f, "country code {c:?} not ISO-2 shaped"),
            SkillViolation::IdMismatch { expected, found } => {
                write!(f, "id {found} does not match content hash {expected}")
            }
        }
    }
}

pub fn is_iso2(code: &str) -> bool {
    code.len() == 2 && code.bytes().all(|b| b.is_ascii_uppercase())
}

/// Returns every violated skill invariant; an empty list means valid.
pub fn validate_skill(skill: &AtomicSkill) -> Vec<SkillViolation> {
    let mut out = Vec::new();
    if !(0.0..=1.0).contains(&skill.confidence) {
        out.push(SkillViolation::ConfidenceOutOfRange(skill.confidence));
    }
    if normalize(&skill.instruction).is_empty() {
        out.push(SkillViolation::EmptyInstruction);
    }
    for code in &skill.countries {
        if !is_iso2(code) {
            out.push(SkillViolation::CountryNotIso2(code.clone()));
        }
    }
    let expected = skill_id(&skill.instruction, &skill.heuristic);
    if expected != skill.id {
        out.push(SkillViolation::IdMismatch { expected, found: skill.id.clone() });
    }
    out
}

/// Expert-derived directed dependency between two skills.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationPrior {
    pub from: String,
    pub to: String,
    pub support: u64,
    pub failure: u64,
}

impl RelationPrior {
    pub fn observations(&self) -> u64 {
        self.support + self.failure
    }

    pub fn failure_rate(&self) -> f64 {
        match self.observations() {
            0 => 0.0,
            n => self.failure as f64 / n as f64,
        }
    }
}

/// A trajectory kept as negative evidence, with the library skills it touched.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureRef {
    pub reference: String,
    pub skill_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SkillLibrary {
    pub version: u64,
    pub skills: BTreeMap<String, AtomicSkill>,
    pub relation_priors: Vec<RelationPrior>,
    pub failure_subset: Vec<FailureRef>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LibraryViolation {
    InvalidSkill { id: String, violation: SkillViolation },
    KeyMismatch { key: String, id: String },
    PriorSelfLoop { id: String },
    DanglingPrior { from: String, to: String },
    DuplicatePrior { from: String, to: String },
}

impl fmt::Display for LibraryViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LibraryViolation::InvalidSkill { id, violation } => write!(f, "skill {id}: {violation}"),
            LibraryViolation::KeyMismatch { key, id } => write!(f, "skill stored under {key} has id {id}"),
            LibraryViolation::PriorSelfLoop { id } => write!(f, "relation prior loops on {id}"),
            LibraryViolation::DanglingPrior { from, to } => {
                write!(f, "relation prior {from} -> {to} has an endpoint outside the library")
            }
            LibraryViolation::DuplicatePrior { from, to } => {
                write!(f, "relation prior {from} -> {to} listed twice")
            }
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum UpsertError {
    #[error("{} invalid skill(s): {}", .0.len(), render_report(.0))]
    InvalidSkills(Vec<(String, SkillViolation)>),
}

fn render_report(report: &[(String, SkillViolation)]) -> String {
    report.iter().map(|(id, v)| format!("{id}: {v}")).collect::<Vec<_>>().join("; ")
}

impl SkillLibrary {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.skills.len()
    }

    pub fn is_empty(&self) -> bool {
        self.skills.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&AtomicSkill> {
        self.skills.get(id)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.skills.contains_key(id)
    }

    pub fn prior(&self, from: &str, to: &str) -> Option<&RelationPrior> {
        self.relation_priors.iter().find(|p| p.from == from && p.to == to)
    }

    /// Checks every library-level invariant. Version monotonicity is checked
    /// across snapshots by [`LibraryStore`] and [`library_upsert`].
    pub fn check_invariants(&self) -> Vec<LibraryViolation> {
        let mut out = Vec::new();
        for (key, skill) in &self.skills {
            if key != &skill.id {
                out.push(LibraryViolation::KeyMismatch { key: key.clone(), id: skill.id.clone() });
            }
            for violation in validate_skill(skill) {
                out.push(LibraryViolation::InvalidSkill { id: skill.id.clone(), violation });
            }
        }
        let mut seen = HashSet::new();
        for p in &self.relation_priors {
            if p.from == p.to {
                out.push(LibraryViolation::PriorSelfLoop { id: p.from.clone() });
            }
            if !self.contains(&p.from) || !self.contains(&p.to) {
                out.push(LibraryViolation::DanglingPrior { from: p.from.clone(), to: p.to.clone() });
            }
            if !seen.insert((p.from.as_str(), p.to.as_str())) {
                out.push(LibraryViolation::DuplicatePrior { from: p.from.clone(), to: p.to.clone() });
            }
        }
        out
    }

    /// Sorts relation priors by endpoints so serialization is canonical.
    pub fn canonicalize(&mut self) {
        self.relation_priors.sort_by(|a, b| (&a.from, &a.to).cmp(&(&b.from, &b.to)));
    }
}

/// Inserts or replaces skills, returning a new library value.
///
/// A skill whose id already exists replaces the stored one in place, keeping
/// the stored success/failure counters and introduction version. The version
/// is incremented iff `bump_version`.
pub fn library_upsert(
    lib: &SkillLibrary,
    skills: impl IntoIterator<Item = AtomicSkill>,
    bump_version: bool,
) -> Result<SkillLibrary, UpsertError> {
    let skills: Vec<AtomicSkill> = skills.into_iter().collect();
    let report: Vec<(String, SkillViolation)> = skills
        .iter()
        .flat_map(|s| validate_skill(s).into_iter().map(|v| (s.id.clone(), v)))
        .collect();
    if !report.is_empty() {
        return Err(UpsertError::InvalidSkills(report));
    }
    let mut next = lib.clone();
    for mut skill in skills {
        if let Some(existing) = next.skills.get(&skill.id) {
            skill.success = existing.success;
            skill.failure = existing.failure;
            skill.version_introduced = existing.version_introduced;
        }
        next.skills.insert(skill.id.clone(), skill);
    }
    if bump_version {
        next.version += 1;
    }
    Ok(next)
}

/// A coordinate with latitude in [-90, 90] and longitude normalized into
/// (-180, 180].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawCoordinate")]
pub struct GeoCoordinate {
    pub lat: f64,
    pub lon: f64,
}

#[derive(Deserialize)]
struct RawCoordinate {
    lat: f64,
    lon: f64,
}

impl TryFrom<RawCoordinate> for GeoCoordinate {
    type Error = CoordinateError;

    fn try_from(raw: RawCoordinate) -> Result<Self, Self::Error> {
        GeoCoordinate::new(raw.lat, raw.lon)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CoordinateError {
    #[error("latitude {0} outside [-90, 90]")]
    Latitude(f64),
    #[error("longitude {0} is not finite")]
    Longitude(f64),
}

impl GeoCoordinate {
    pub fn new(lat: f64, lon: f64) -> Result<Self, CoordinateError> {
        if !lat.is_finite() || !(-90.0..=90.0).contains(&lat) {
            return Err(CoordinateError::Latitude(lat));
        }
        if !lon.is_finite() {
            return Err(CoordinateError::Longitude(lon));
        }
        Ok(GeoCoordinate { lat, lon: normalize_longitude(lon) })
    }
}

fn normalize_longitude(lon: f64) -> f64 {
    if lon > -180.0 && lon <= 180.0 {
        return lon;
    }
    let wrapped = (lon + 180.0).rem_euclid(360.0) - 180.0;
    // rem_euclid maps the boundary onto -180; the range is open there.
    if wrapped <= -180.0 {
        180.0
    } else {
        wrapped
    }
}
