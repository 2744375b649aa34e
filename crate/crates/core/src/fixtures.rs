//! Deterministic fixtures shared by unit, integration and acceptance tests.
//!
//! Three groups: the bundled expert corpus under `fixtures/expert`, the
//! Andorra street-scene case (library, scripted replies, distractor), and
//! the scripted three-step evolution replay.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::expert_compiler::{self, CertaintyLexicon, Gazetteer, GroundTruth};
use crate::graph_composer::GraphDump;
use crate::inference_engine::{AblationMode, Exchange, GeoPrediction, GroundedClaim, InferenceRecord, SceneParse};
use crate::retrieval::{cosine, EmbeddingProvider};
use crate::skill_model::{library_upsert, skill_id, AtomicSkill, Provenance, RelationPrior, SkillLibrary, Stage};
use crate::GeoCoordinate;

/// `fixtures/` at the workspace root.
pub fn fixtures_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

pub fn expert_corpus_path() -> PathBuf {
    fixtures_root().join("expert/trajectories.jsonl")
}

#[derive(Debug, Clone, Deserialize)]
pub struct ExpertManifest {
    pub records: usize,
    pub success_records: usize,
    pub brittle_records: usize,
    pub skills: usize,
    pub duplicate_steps: usize,
    pub filler_steps: usize,
    pub country_histogram: std::collections::BTreeMap<String, usize>,
}

pub fn expert_manifest() -> ExpertManifest {
    let path = fixtures_root().join("expert/manifest.json");
    let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    serde_json::from_str(&text).expect("manifest parses")
}

/// Version-0 library compiled from the bundled corpus.
pub fn expert_library() -> SkillLibrary {
    let parsed = expert_compiler::parse_trajectory_records(&expert_corpus_path()).expect("corpus readable");
    assert!(parsed.diagnostics.is_empty(), "corpus diagnostics: {:?}", parsed.diagnostics);
    expert_compiler::compile_library(&parsed.records, &CertaintyLexicon::default(), Gazetteer::bundled()).0
}

fn skill(stage: Stage, instruction: &str, heuristic: &str, confidence: f64, countries: &[&str], regions: &[&str]) -> AtomicSkill {
    AtomicSkill::new(instruction, heuristic, confidence, stage, Provenance::expert("fixture:andorra"))
        .with_countries(countries.iter().copied())
        .with_regions(regions.iter().copied())
}

/// The Andorra street scene: a Pyrenean lane signed "Camí de la Llobatera".
pub struct AndorraCase {
    /// The twelve skills the case reasons over.
    pub case_skills: Vec<AtomicSkill>,
    /// Same-stage priors among the case skills.
    pub case_priors: Vec<RelationPrior>,
    /// Case skills, the two named distractors and unrelated skills.
    pub library: SkillLibrary,
    pub terrain: String,
    pub catalan: String,
    pub street: String,
    pub greek_stucco: String,
    pub prairie_signs: String,
    pub image: String,
    /// Approximate position of the lane, used only for distance reports.
    pub truth: GroundTruth,
}

impl AndorraCase {
    pub fn new() -> Self {
        use Stage::*;
        let globals = vec![
            skill(GlobalRegion, "Steep forested slopes closing in a narrow valley", "points to a high mountain range such as the Pyrenees or the Alps", 0.7, &[], &["pyrenees", "alps"]),
            skill(GlobalRegion, "Traffic drives on the right with European road furniture", "narrows the search to continental Europe", 0.9, &[], &["europe"]),
            skill(GlobalRegion, "Latin script with Romance-language spelling on signs", "suggests southern or western Europe", 0.7, &[], &["western europe"]),
        ];
        let countries = vec![
            skill(Country, "Latin script with Catalan spelling such as the prefix Camí", "Catalan is the sole official language only in Andorra", 0.9, &["AD", "ES"], &["catalonia"]),
            skill(Country, "Car plate without the EU blue band in a European mountain setting", "a microstate outside the EU such as Andorra", 0.7, &["AD"], &[]),
            skill(Country, "Stone-and-stucco houses with wooden balconies", "Pyrenean vernacular building of Andorra and upland Catalonia", 0.7, &["AD", "ES"], &["pyrenees"]),
            skill(Country, "Catalan signage in a high valley with no French or Spanish text", "Andorra rather than Spain or France", 0.7, &["AD"], &["pyrenees"]),
            skill(Country, "Open stone water channels running beside mountain lanes", "typical of Andorran parish villages", 0.5, &["AD"], &[]),
        ];
        let locals = vec![
            skill(Local, "Street name Camí de la Llobatera on a wall plate", "names a lane in an Andorran parish", 0.9, &["AD"], &[]),
            skill(Local, "Narrow lane climbing between terraced stone houses", "upland village street rather than the capital centre", 0.5, &["AD"], &[]),
            skill(Local, "Chairlift pylons and ski-run markers on the slopes above the village", "Andorran ski parishes", 0.5, &["AD"], &[]),
            skill(Local, "Parish coat of arms on municipal street signs", "identifies the Andorran parish", 0.7, &["AD"], &[]),
        ];
        let id = |v: &[AtomicSkill], i: usize| v[i].id.clone();
        let prior = |from: String, to: String| RelationPrior { from, to, support: 3, failure: 0 };
        let case_priors = vec![
            prior(id(&countries, 0), id(&countries, 1)),
            prior(id(&countries, 0), id(&countries, 3)),
            prior(id(&countries, 1), id(&countries, 3)),
            prior(id(&countries, 2), id(&countries, 4)),
            prior(id(&locals, 0), id(&locals, 1)),
            prior(id(&locals, 1), id(&locals, 3)),
        ];
        let greek = skill(Country, "Whitewashed stucco walls on rural houses", "rural Greece and the Aegean islands", 0.7, &["GR"], &["mediterranean"]);
        let prairie = skill(Country, "Wave-style chevron signs on a flat open road", "the Canadian prairies", 0.7, &["CA"], &["prairies"]);
        let others = vec![
            skill(Country, "Yellow licence plates at the rear", "the Netherlands or Luxembourg", 0.7, &["NL", "LU"], &["benelux"]),
            skill(Country, "Bollards with a black band and red reflector", "France", 0.9, &["FR"], &[]),
            skill(Country, "Red and white kerbstones along the road edge", "Spain or Portugal", 0.5, &["ES", "PT"], &["iberia"]),
            skill(Country, "Cyrillic script on shop signs", "Eastern Europe or Central Asia", 0.7, &["RU", "UA", "BG"], &["eastern europe"]),
            skill(Country, "Utility poles with yin-yang tops", "Japan", 0.7, &["JP"], &[]),
            skill(Country, "Traffic drives on the left with yellow centre lines", "South Africa", 0.7, &["ZA"], &[]),
            skill(Country, "Thai script on roadside banners", "Thailand", 0.9, &["TH"], &[]),
            skill(Country, "Hangul on storefronts", "South Korea", 0.9, &["KR"], &[]),
            skill(Country, "Double yellow centre lines and mailboxes on posts", "the United States", 0.7, &["US"], &[]),
            skill(Country, "Black and white striped kerbs in dense tropical towns", "Brazil", 0.5, &["BR"], &[]),
            skill(Country, "Snow poles with red tops along fjord roads", "Norway", 0.7, &["NO"], &["nordics"]),
            skill(Country, "Blue street name plates with white Gothic lettering", "Germany or Austria", 0.5, &["DE", "AT"], &[]),
            skill(Country, "Orange roadside reflectors on white posts", "Italy", 0.5, &["IT"], &["mediterranean"]),
            skill(Country, "Tuk-tuks and Devanagari signage", "India", 0.7, &["IN"], &[]),
            skill(Country, "Wooden churches and birch forests on flat land", "Finland or the Baltics", 0.5, &["FI", "EE", "LV"], &["baltics"]),
            skill(Country, "Stone walls dividing green sheep pastures", "Ireland or the United Kingdom", 0.5, &["IE", "GB"], &[]),
            skill(Country, "Red earth roads through eucalyptus stands", "Uganda or Kenya", 0.5, &["UG", "KE"], &["east africa"]),
            skill(Country, "Turkish road signs with yellow text panels", "Turkey", 0.7, &["TR"], &[]),
            skill(Country, "Mountain chalets with flower boxes and Swiss flags", "Switzerland", 0.7, &["CH"], &["alps"]),
            skill(Country, "Spanish text with Andean highland scenery", "Peru or Bolivia", 0.5, &["PE", "BO"], &["andes"]),
            skill(Country, "Hebrew and Arabic on the same sign", "Israel", 0.9, &["IL"], &["middle east"]),
            skill(Country, "Slovene place names with Alpine farmhouses", "Slovenia", 0.7, &["SI"], &["alps"]),
            skill(Country, "French-language signs with the Principality emblem on the coast", "Monaco", 0.5, &["MC"], &["mediterranean"]),
            skill(Country, "Italian signs inside a small hilltop state", "San Marino", 0.5, &["SM"], &[]),
            skill(Country, "German signs in a narrow Rhine valley state", "Liechtenstein", 0.5, &["LI"], &["alps"]),
            skill(GlobalRegion, "Bright sun high overhead and palm trees", "the tropics", 0.5, &[], &["tropics"]),
            skill(GlobalRegion, "Red desert sand and sparse acacia", "the Sahara or the Sahel", 0.5, &[], &["sahara", "sahel"]),
            skill(GlobalRegion, "Taiga forest with permafrost-tilted poles", "Siberia or the far north", 0.5, &[], &["siberia"]),
            skill(Local, "Harbour front lined with pastel houses", "a coastal town centre", 0.5, &["IT", "PT"], &[]),
            skill(Local, "Roundabout with a chain hotel sign", "suburban edge of a large town", 0.35, &["FR", "ES"], &[]),
            skill(Local, "Catalan street plates in a dense city grid", "Barcelona city blocks rather than mountain villages", 0.5, &["ES"], &["catalonia"]),
            skill(Local, "Market square with arcades and a clock tower", "old town centre in Central Europe", 0.5, &["CZ", "PL"], &[]),
            skill(Local, "Gravel lay-by with a hiking trail signpost", "rural trailhead rather than a street", 0.35, &["FR", "ES", "AD"], &["pyrenees"]),
            skill(Local, "Ferry terminal signs in two languages", "a port district", 0.35, &["FI", "EE"], &[]),
        ];
        let terrain = globals[0].id.clone();
        let catalan = countries[0].id.clone();
        let street = locals[0].id.clone();
        let (greek_stucco, prairie_signs) = (greek.id.clone(), prairie.id.clone());
        let case_skills: Vec<AtomicSkill> = globals.into_iter().chain(countries).chain(locals).collect();
        let all = case_skills.iter().cloned().chain([greek, prairie]).chain(others);
        let mut library = library_upsert(&SkillLibrary::empty(), all, false).expect("fixture skills are valid");
        library.relation_priors = case_priors.clone();
        library.canonicalize();
        AndorraCase {
            case_skills,
            case_priors,
            library,
            terrain,
            catalan,
            street,
            greek_stucco,
            prairie_signs,
            image: "https://images.invalid/geoskill/andorra-llobatera.jpg".into(),
            truth: GroundTruth { lat: 42.5430, lon: 1.5170, country: Some("AD".into()) },
        }
    }

    pub fn scene_reply(&self) -> String {
        json!({
            "script_language_patterns": ["Latin script with Catalan spelling"],
            "driving_side": "right",
            "road_marking_style": "narrow mountain lane without a centre line",
            "pole_signage": "street name plate on a stone wall; car plate without the EU blue band",
            "vegetation_climate": "steep forested slopes closing in a narrow Pyrenean valley",
            "built_environment": "stone-and-stucco houses with wooden balconies and open water channels beside the lane",
            "ocr_snippets": ["Camí de la Llobatera"]
        })
        .to_string()
    }

    pub fn scene(&self) -> SceneParse {
        SceneParse::from_json(&self.scene_reply()).expect("scene reply parses").0
    }

    fn claims(&self) -> Vec<GroundedClaim> {
        let c = |claim: &str, ev: &[&str], sk: &[&String]| GroundedClaim {
            claim: claim.into(),
            evidence_refs: ev.iter().map(|s| s.to_string()).collect(),
            skill_refs: sk.iter().map(|s| s.to_string()).collect(),
        };
        vec![
            c("Steep forested slopes put the scene in a high mountain range", &["vegetation_climate"], &[&self.terrain]),
            c("The prefix Camí is Catalan, which narrows the country to Andorra", &["ocr_snippets[0]", "script_language_patterns[0]"], &[&self.catalan]),
            c("The plate names the lane Camí de la Llobatera", &["ocr_snippets[0]"], &[&self.street]),
        ]
    }

    /// The Greek-stucco claim: it cites a skill but no observed scene field.
    pub fn distractor_claim(&self) -> GroundedClaim {
        GroundedClaim {
            claim: "White stucco walls indicate rural Greece".into(),
            evidence_refs: vec![],
            skill_refs: vec![self.greek_stucco.clone()],
        }
    }

    fn prediction(&self, lat: f64, lon: f64, confidence: f64, region: &str) -> GeoPrediction {
        GeoPrediction {
            country: "AD".into(),
            region: region.into(),
            coordinates: GeoCoordinate::new(lat, lon).expect("fixture coordinate"),
            confidence,
            evidence: self.claims(),
            trajectory: vec![self.terrain.clone(), self.catalan.clone(), self.street.clone()],
        }
    }

    /// Replies of the three reasoning rollouts; the first one carries the
    /// distractor and is answered again after the corrective prompt.
    pub fn reasoning_replies(&self) -> Vec<String> {
        let mut tainted = self.prediction(42.5440, 1.5160, 0.8, "La Massana");
        tainted.evidence.insert(1, self.distractor_claim());
        [
            tainted,
            self.prediction(42.5440, 1.5160, 0.8, "La Massana"),
            self.prediction(42.5425, 1.5201, 0.75, "La Massana"),
            self.prediction(42.5090, 1.5390, 0.7, "Andorra la Vella"),
        ]
        .iter()
        .map(|p| serde_json::to_string(p).expect("prediction serializes"))
        .collect()
    }

    /// Ordinal script for `vote(.., 3)`.
    pub fn vote_script(&self) -> Vec<String> {
        std::iter::once(self.scene_reply()).chain(self.reasoning_replies()).collect()
    }

    /// Ordinal script for a single `infer` with a clean reply.
    pub fn infer_script(&self) -> Vec<String> {
        vec![self.scene_reply(), self.reasoning_replies()[1].clone()]
    }
}

impl Default for AndorraCase {
    fn default() -> Self {
        AndorraCase::new()
    }
}

/// A synthesized-skill item as the refinement model returns it.
#[derive(Debug, Clone, Serialize)]
pub struct SynthItem {
    pub instruction: String,
    pub heuristic: String,
    pub confidence: f64,
    pub countries: Vec<String>,
    pub regions: Vec<String>,
    pub stage: Stage,
}

impl SynthItem {
    fn of(skill: &AtomicSkill) -> Self {
        SynthItem {
            instruction: skill.instruction.clone(),
            heuristic: skill.heuristic.clone(),
            confidence: skill.confidence,
            countries: skill.countries.iter().cloned().collect(),
            regions: skill.regions.iter().cloned().collect(),
            stage: skill.stage,
        }
    }
}

pub fn synthesis_reply(items: &[SynthItem]) -> String {
    json!({ "skills": items }).to_string()
}

fn empty_exchange() -> Exchange {
    Exchange {
        purpose: "replay".into(),
        temperature: 0.0,
        prompt: String::new(),
        images: 0,
        response: String::new(),
        backend: "replay".into(),
        latency_ms: 0,
    }
}

/// A labeled inference record with no retrieval and the given trajectory,
/// as evolution sees a logged query.
pub fn labeled_record(query_id: &str, prediction: GeoPrediction, truth: GroundTruth, library_version: u64) -> InferenceRecord {
    InferenceRecord {
        query_id: query_id.into(),
        image: format!("replay://{query_id}"),
        mode: AblationMode::Full,
        seed: 0,
        library_version,
        template_hash: crate::inference_engine::prompts::template_hash(),
        scene: SceneParse::default(),
        scene_warnings: vec![],
        scene_exchange: empty_exchange(),
        retrieved: vec![],
        candidate_count: 0,
        graph: GraphDump::default(),
        plan: vec![],
        rollouts: vec![],
        prediction,
        outcome: None,
        ground_truth: Some(truth),
        external_verification: None,
        started_at: crate::inference_engine::Clock::FIXED_EPOCH.into(),
        finished_at: crate::inference_engine::Clock::FIXED_EPOCH.into(),
    }
}

/// A record predicting Canada for a query taken in Andorra.
fn failed_record(query_id: &str, trajectory: Vec<String>, library_version: u64) -> InferenceRecord {
    let prediction = GeoPrediction {
        country: "CA".into(),
        region: String::new(),
        coordinates: GeoCoordinate::new(50.45, -104.6).expect("fixture coordinate"),
        confidence: 0.6,
        evidence: vec![],
        trajectory,
    };
    labeled_record(query_id, prediction, GroundTruth { lat: 42.5063, lon: 1.5218, country: Some("AD".into()) }, library_version)
}

const POOL_CUES: &[&str] = &[
    "kerb stencils", "bridge railings", "tram poles", "culvert heads", "toll booths", "level crossings",
    "snow fences", "milestones", "hydrant caps", "lamp brackets", "rumble strips", "road studs",
    "sign gantries", "drain grates", "avalanche galleries", "cattle grids", "bike lanes", "parking meters",
];
const POOL_MOTIFS: &[&str] = &[
    "checkerboard", "zigzag", "hatched", "dotted", "ribbed", "riveted", "scalloped", "stencilled",
    "embossed", "perforated", "chamfered", "lattice",
];
const POOL_TONES: &[&str] = &[
    "ochre", "cobalt", "vermilion", "charcoal", "ivory", "olive", "magenta", "turquoise", "amber", "slate",
];
const POOL_HEURISTICS: &[&str] = &[
    "separates {c} from its neighbours", "is a reliable tell for {c}", "rules in {c} over nearby look-alikes",
    "should outweigh vegetation when judging {c}", "is common across {c}",
];

/// Corrective skills for the replay, each below `theta` cosine to every
/// skill in `base` and to each other. Deterministic for a given base.
pub fn replay_pool(base: &SkillLibrary, provider: &dyn EmbeddingProvider, n: usize, theta: f64) -> Vec<AtomicSkill> {
    let codes: Vec<&str> = Gazetteer::bundled().country_codes().into_iter().collect();
    let mut accepted: Vec<AtomicSkill> = Vec::new();
    let mut vectors: Vec<Vec<f64>> = base
        .skills
        .values()
        .map(|s| provider.embed(&s.index_text()).expect("embedding"))
        .collect();
    let mut i = 0usize;
    while accepted.len() < n {
        let cue = POOL_CUES[i % POOL_CUES.len()];
        let motif = POOL_MOTIFS[(i / POOL_CUES.len()) % POOL_MOTIFS.len()];
        let tone = POOL_TONES[(i / (POOL_CUES.len() * POOL_MOTIFS.len())) % POOL_TONES.len()];
        let code = codes[(i * 7) % codes.len()];
        let heuristic = POOL_HEURISTICS[i % POOL_HEURISTICS.len()].replace("{c}", code);
        let instruction = format!("Inspect {tone} {motif} {cue} before committing to a country");
        let stage = if i % 4 == 3 { Stage::Local } else { Stage::Country };
        i += 1;
        assert!(i < 50 * n + 1000, "replay pool exhausted at {} skills", accepted.len());
        let s = AtomicSkill::new(instruction, heuristic, 0.5 + 0.05 * (i % 5) as f64, stage, Provenance::synthesized("fixture:replay"))
            .with_countries([code]);
        let v = provider.embed(&s.index_text()).expect("embedding");
        if base.contains(&s.id) || vectors.iter().any(|w| cosine(&v, w) >= theta) {
            continue;
        }
        vectors.push(v);
        accepted.push(s);
    }
    accepted
}

/// Variant text with the same tokens as `s` and a different content id.
pub fn near_duplicate(s: &AtomicSkill) -> SynthItem {
    let mut item = SynthItem::of(s);
    item.instruction = format!("{} !", item.instruction.trim_end_matches(['.', '!']));
    item.confidence = 0.6;
    item
}

/// One scripted evolution step: the records fed in and the ordinal Φ
/// replies the refinement model returns.
pub struct ReplayStep {
    pub records: Vec<InferenceRecord>,
    pub replies: Vec<String>,
}

/// Sizes 1080 → 1350 → 1510 → 1425.
///
/// Step 1: 100 failures in 5 batches, 54 new skills each.
/// Step 2: 160 failures in 8 batches, 20 new skills each.
/// Step 3: 11 failures whose trajectory runs through 85 expert skills, which
/// drops each below the reliability floor; the single Φ batch returns 25
/// near-copies of other expert skills, all absorbed by merging.
pub fn scripted_replay(base: &SkillLibrary, provider: &dyn EmbeddingProvider, theta: f64) -> Vec<ReplayStep> {
    let pool = replay_pool(base, provider, 430, theta);
    let (first, second) = pool.split_at(270);
    let step = |offset: usize, count: usize, batch: usize, items: &[AtomicSkill], version: u64| ReplayStep {
        records: (0..count).map(|i| failed_record(&format!("replay-{}", offset + i), vec![], version)).collect(),
        replies: items
            .chunks(batch)
            .map(|c| synthesis_reply(&c.iter().map(SynthItem::of).collect::<Vec<_>>()))
            .collect(),
    };
    let s1 = step(0, 100, 54, first, 0);
    let s2 = step(100, 160, 20, second, 1);

    // Expert skills in id order; the 25 strongest anchor the near-copies,
    // the last 85 of the rest are worn down.
    let ids: Vec<&AtomicSkill> = base.skills.values().collect();
    let anchors: Vec<&AtomicSkill> = ids.iter().copied().filter(|s| s.confidence > 0.7).take(25).collect();
    let anchor_ids: BTreeSet<&str> = anchors.iter().map(|s| s.id.as_str()).collect();
    let worn: Vec<String> =
        ids.iter().rev().filter(|s| !anchor_ids.contains(s.id.as_str())).take(85).map(|s| s.id.clone()).collect();
    let s3 = ReplayStep {
        records: (0..11).map(|i| failed_record(&format!("replay-{}", 260 + i), worn.clone(), 2)).collect(),
        replies: vec![synthesis_reply(&anchors.iter().map(|s| near_duplicate(s)).collect::<Vec<_>>())],
    };
    vec![s1, s2, s3]
}

/// Content id helper for tests that spell out skill text.
pub fn id_of(instruction: &str, heuristic: &str) -> String {
    skill_id(instruction, heuristic)
}

const CASE_WORDS: &[&str] = &[
    "bollard", "reflector", "plate", "pole", "kerb", "gutter", "roof", "tile", "chimney", "fence", "hedge", "pine",
    "birch", "palm", "dune", "ridge", "canal", "tram", "scooter", "awning", "shutter", "balcony", "mosque", "pagoda",
    "steeple", "script", "stripe", "arrow", "chevron", "guardrail",
];
const CASE_COUNTRIES: &[&str] = &["AD", "FR", "ES", "JP", "BR", "KE", "NO", "TH"];

/// A randomized evolution input: a library, labeled records over it, and
/// ordinal Φ replies, one per failure batch.
pub struct EvolutionCase {
    pub library: SkillLibrary,
    pub records: Vec<InferenceRecord>,
    pub replies: Vec<String>,
}

fn random_skill(rng: &mut impl rand::Rng, tag: usize) -> AtomicSkill {
    use rand::seq::IndexedRandom;
    let words: Vec<&str> = (0..rng.random_range(3..7)).map(|_| *CASE_WORDS.choose(rng).unwrap()).collect();
    let stage = [Stage::GlobalRegion, Stage::Country, Stage::Local][rng.random_range(0..3)];
    let countries: Vec<&str> = if stage == Stage::GlobalRegion && rng.random_bool(0.5) {
        vec![]
    } else {
        vec![*CASE_COUNTRIES.choose(rng).unwrap()]
    };
    let mut s = AtomicSkill::new(
        format!("Look for {}", words.join(" ")),
        format!("points to cluster {tag}"),
        rng.random_range(0.1..0.95),
        stage,
        Provenance::expert(format!("case#{tag}")),
    )
    .with_countries(countries);
    s.success = rng.random_range(0..6);
    s.failure = rng.random_range(0..12);
    s
}

fn synth_item(s: &AtomicSkill) -> serde_json::Value {
    json!({
        "instruction": s.instruction,
        "heuristic": s.heuristic,
        "confidence": s.confidence,
        "countries": s.countries,
        "regions": s.regions,
        "stage": s.stage,
    })
}

/// Seeded scenario. Libraries carry exact and near duplicates, weak skills
/// and failing relations; replies mix fresh skills, copies of existing
/// ones, near-copies and malformed items.
pub fn random_evolution_case(seed: u64) -> EvolutionCase {
    use rand::seq::IndexedRandom;
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut skills: Vec<AtomicSkill> = (0..rng.random_range(20..50)).map(|i| random_skill(&mut rng, i)).collect();
    for i in 0..rng.random_range(0..6) {
        let src = skills[rng.random_range(0..skills.len())].clone();
        let mut copy = AtomicSkill::new(format!("{}!", src.instruction), src.heuristic.clone(), rng.random_range(0.1..0.95), src.stage, Provenance::expert(format!("dup#{i}")))
            .with_countries(src.countries.iter().cloned());
        copy.success = rng.random_range(0..4);
        copy.failure = rng.random_range(0..4);
        skills.push(copy);
    }
    let mut library = library_upsert(&SkillLibrary::empty(), skills, false).expect("random library");
    library.version = rng.random_range(0..4);
    let ids: Vec<String> = library.skills.keys().cloned().collect();
    let mut seen = BTreeSet::new();
    for _ in 0..rng.random_range(0..30) {
        let (a, b) = (ids.choose(&mut rng).unwrap().clone(), ids.choose(&mut rng).unwrap().clone());
        if a != b && seen.insert((a.clone(), b.clone())) {
            library.relation_priors.push(RelationPrior { from: a, to: b, support: rng.random_range(0..4), failure: rng.random_range(0..8) });
        }
    }
    library.canonicalize();

    let truth = GroundTruth { lat: 42.5063, lon: 1.5218, country: Some("AD".into()) };
    let mut records = Vec::new();
    let mut failures = 0usize;
    for q in 0..rng.random_range(10..70) {
        let mut trajectory: Vec<String> = (0..rng.random_range(0..5)).map(|_| ids.choose(&mut rng).unwrap().clone()).collect();
        if rng.random_bool(0.1) {
            trajectory.push("0".repeat(32));
        }
        let miss = rng.random_bool(0.6);
        let (lat, lon, country) = if miss { (50.45, -104.6, "CA") } else { (42.51, 1.52, "AD") };
        let prediction = GeoPrediction {
            country: country.into(),
            region: String::new(),
            coordinates: GeoCoordinate::new(lat, lon).expect("case coordinate"),
            confidence: 0.5,
            evidence: vec![],
            trajectory,
        };
        let mut r = labeled_record(&format!("case-{seed}-{q}"), prediction, truth.clone(), library.version);
        if rng.random_bool(0.1) {
            r.ground_truth = None;
        } else if miss {
            failures += 1;
        }
        records.push(r);
    }

    let batches = failures.div_ceil(20);
    let mut replies = Vec::with_capacity(batches);
    for b in 0..batches {
        let mut items = Vec::new();
        for j in 0..rng.random_range(0..8) {
            let item = match rng.random_range(0..10) {
                0 => synth_item(&library.skills[ids.choose(&mut rng).unwrap()]),
                1 => {
                    let mut v = synth_item(&library.skills[ids.choose(&mut rng).unwrap()]);
                    v["instruction"] = json!(format!("{} ?", v["instruction"].as_str().unwrap()));
                    v
                }
                2 => json!({ "instruction": "Check the plate", "heuristic": "x", "confidence": 0.5, "countries": ["XYZ"], "stage": "country" }),
                3 => json!({ "heuristic": "missing instruction" }),
                _ => synth_item(&random_skill(&mut rng, 1000 + 100 * b + j)),
            };
            items.push(item);
        }
        replies.push(json!({ "skills": items }).to_string());
    }
    EvolutionCase { library, records, replies }
}

/// Independent audit of one evolution step. Returns every broken property.
pub fn audit_evolution(
    before: &SkillLibrary,
    records: &[InferenceRecord],
    evolved: &crate::evolution::Evolved,
    config: &crate::evolution::EvolutionConfig,
    provider: &dyn EmbeddingProvider,
) -> Vec<String> {
    let mut problems = Vec::new();
    let after = &evolved.library;
    let r = &evolved.report;

    for s in after.skills.values() {
        let eff = (config.pseudo_count * s.confidence + s.success as f64) / (config.pseudo_count + (s.success + s.failure) as f64);
        if eff < config.v_min {
            problems.push(format!("skill {} kept at effective confidence {eff:.4}", s.id));
        }
    }
    for p in &after.relation_priors {
        let n = p.support + p.failure;
        if n >= config.relation_min_observations && p.failure as f64 / n as f64 >= config.relation_failure_rate {
            problems.push(format!("relation {}->{} kept at {}/{n} failures", p.from, p.to, p.failure));
        }
        if !after.contains(&p.from) || !after.contains(&p.to) {
            problems.push(format!("relation {}->{} dangles", p.from, p.to));
        }
    }

    let vectors: Vec<(&String, Vec<f64>)> =
        after.skills.values().map(|s| (&s.id, provider.embed(&s.index_text()).expect("embedding"))).collect();
    for (i, (a, va)) in vectors.iter().enumerate() {
        for (b, vb) in &vectors[i + 1..] {
            let sim = cosine(va, vb);
            if sim >= config.theta_merge {
                problems.push(format!("{a} and {b} survive at cosine {sim:.4}"));
            }
        }
    }

    // Counters: before + one per invoked library skill per labeled record,
    // all of it carried by the merged library.
    let mut expected: u64 = before.skills.values().map(|s| s.success + s.failure).sum();
    for rec in records {
        let labeled = rec.outcome.is_some() || rec.ground_truth.as_ref().is_some_and(|t| t.coordinate().is_some());
        if labeled {
            let invoked: BTreeSet<&String> =
                rec.prediction.trajectory.iter().chain(rec.prediction.evidence.iter().flat_map(|c| &c.skill_refs)).collect();
            expected += invoked.into_iter().filter(|id| before.contains(id)).count() as u64;
        }
    }
    let carried: u64 = evolved.merged.skills.values().map(|s| s.success + s.failure).sum();
    if carried != expected {
        problems.push(format!("merge lost counters: {carried} carried, {expected} expected"));
    }
    for id in after.skills.keys() {
        if !evolved.merged.contains(id) {
            problems.push(format!("{id} appeared after pruning"));
        }
    }

    if r.size_before != before.len() || r.size_after != after.len() {
        problems.push(format!("report sizes {} -> {} disagree with {} -> {}", r.size_before, r.size_after, before.len(), after.len()));
    }
    if before.len() + r.added != after.len() + r.merged + r.pruned_skills {
        problems.push(format!("{} + {} added != {} + {} merged + {} pruned", before.len(), r.added, after.len(), r.merged, r.pruned_skills));
    }
    if evolved.merged.len() != after.len() + r.pruned_skills {
        problems.push("pruned count disagrees with the merged library".into());
    }
    if after.version != before.version + 1 {
        problems.push(format!("version {} after {}", after.version, before.version));
    }
    for v in after.check_invariants() {
        problems.push(v.to_string());
    }
    problems
}
