//! Online pipeline: scene parsing, skill retrieval, graph composition and
//! skill-conditioned reasoning with dual-grounding checks and voting.

mod grounding;
pub mod prompts;
mod scene;

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use grounding::{
    validate_grounding, validate_grounding_with, validate_prediction, GeoPrediction, GroundedClaim, GroundingPolicy,
    GroundingViolation,
};
pub use scene::{DrivingSide, SceneParse};

use crate::expert_compiler::GroundTruth;
use crate::geo_metrics::haversine_km;
use crate::graph_composer::{compose_graph, order_plan, shuffle_edges, GraphDump, GraphError, TaskSkillGraph};
use crate::model_gateway::{
    image_part, Gateway, GatewayError, Message, ModelAlias, ModelRequest, ModelResponse, ResponseFormat, Role,
};
use crate::retrieval::EmbeddingProvider;
use crate::retrieval::{hybrid_retrieve, RetrievalError, RetrievalParams, ScoredSkill, SkillIndex, WeightedQuery};
use crate::skill_model::{AtomicSkill, SkillLibrary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationMode {
    #[default]
    Full,
    WoSkill,
    RandomSkill,
    ShuffledOrder,
    AtomicOnly,
}

impl AblationMode {
    pub const ALL: [AblationMode; 5] = [
        AblationMode::Full,
        AblationMode::WoSkill,
        AblationMode::RandomSkill,
        AblationMode::ShuffledOrder,
        AblationMode::AtomicOnly,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AblationMode::Full => "full",
            AblationMode::WoSkill => "wo_skill",
            AblationMode::RandomSkill => "random_skill",
            AblationMode::ShuffledOrder => "shuffled_order",
            AblationMode::AtomicOnly => "atomic_only",
        }
    }
}

impl fmt::Display for AblationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AblationMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        AblationMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown mode {s:?} (expected full, wo_skill, random_skill, shuffled_order or atomic_only)"))
    }
}

/// Source of record timestamps. `Fixed` keeps mocked runs bit-identical and
/// also zeroes logged latencies.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Clock {
    System,
    Fixed(String),
}

impl Clock {
    pub const FIXED_EPOCH: &'static str = "1970-01-01T00:00:00Z";

    pub fn fixed() -> Self {
        Clock::Fixed(Clock::FIXED_EPOCH.into())
    }

    pub fn now(&self) -> String {
        match self {
            Clock::System => chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true),
            Clock::Fixed(t) => t.clone(),
        }
    }

    fn latency(&self, ms: u64) -> u64 {
        match self {
            Clock::System => ms,
            Clock::Fixed(_) => 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InferenceConfig {
    pub retrieval: RetrievalParams,
    pub temperature_main: f64,
    pub vote_base: f64,
    pub vote_jitter: f64,
    pub task_prior: String,
    pub task_weight: f64,
    pub scene_weight: f64,
    pub mode: AblationMode,
    pub seed: u64,
    pub max_output_tokens: u32,
    pub clock: Clock,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        InferenceConfig {
            retrieval: RetrievalParams::default(),
            temperature_main: 0.2,
            vote_base: 0.1,
            vote_jitter: 0.05,
            task_prior: prompts::DEFAULT_TASK_PRIOR.to_string(),
            task_weight: 0.4,
            scene_weight: 0.6,
            mode: AblationMode::Full,
            seed: 0,
            max_output_tokens: 2048,
            clock: Clock::System,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum InferenceError {
    #[error("index was built for library version {index}, library is version {library}")]
    IndexMismatch { library: u64, index: u64 },
    #[error("image {reference}: {source}")]
    Image { reference: String, source: std::io::Error },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("scene parse: {0}")]
    SceneParse(String),
    #[error("{0}")]
    Prediction(String),
    #[error("prediction rejected after a corrective prompt: {}", .violations.join("; "))]
    Grounding { violations: Vec<String> },
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("all {} rollouts failed: {}", .0.len(), .0.join(" | "))]
    AllRolloutsFailed(Vec<String>),
    #[error("invalid inference config: {0}")]
    Config(String),
}

/// One prompt/response pair as logged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exchange {
    pub purpose: String,
    pub temperature: f64,
    pub prompt: String,
    pub images: usize,
    pub response: String,
    pub backend: String,
    pub latency_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutLog {
    pub index: usize,
    pub temperature: f64,
    pub exchanges: Vec<Exchange>,
    /// Violations found per attempt; an accepted attempt contributes an
    /// empty list.
    pub violations: Vec<Vec<String>>,
    pub prediction: Option<GeoPrediction>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceRecord {
    pub query_id: String,
    pub image: String,
    pub mode: AblationMode,
    pub seed: u64,
    pub library_version: u64,
    pub template_hash: String,
    pub scene: SceneParse,
    pub scene_warnings: Vec<String>,
    pub scene_exchange: Exchange,
    pub retrieved: Vec<ScoredSkill>,
    pub candidate_count: usize,
    pub graph: GraphDump,
    pub plan: Vec<String>,
    pub rollouts: Vec<RolloutLog>,
    pub prediction: GeoPrediction,
    pub outcome: Option<u8>,
    pub ground_truth: Option<GroundTruth>,
    pub external_verification: Option<serde_json::Value>,
    pub started_at: String,
    pub finished_at: String,
}

impl InferenceRecord {
    pub fn retrieved_ids(&self) -> Vec<String> {
        self.retrieved.iter().map(|h| h.id.clone()).collect()
    }

    /// Trajectory steps then claim skill refs, first occurrence kept.
    pub fn invoked_skills(&self) -> Vec<String> {
        let mut seen = HashSet::new();
        let refs = self.prediction.evidence.iter().flat_map(|c| c.skill_refs.iter());
        self.prediction.trajectory.iter().chain(refs).filter(|id| seen.insert(id.as_str())).cloned().collect()
    }

    /// True when any reasoning attempt was rejected for grounding.
    pub fn grounding_flagged(&self) -> bool {
        self.rollouts.iter().any(|r| r.violations.iter().any(|v| !v.is_empty()))
    }
}

/// Scene parse with its warnings and log entry.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedScene {
    pub scene: SceneParse,
    pub warnings: Vec<String>,
    pub exchange: Exchange,
}

/// Everything the reasoning stage needs for one query.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryContext {
    pub retrieved: Vec<ScoredSkill>,
    pub candidate_count: usize,
    pub graph: TaskSkillGraph,
    pub plan: Vec<String>,
    pub prompt: String,
}

const RULES_GRAPH: &str = "Every claim must cite at least one scene field and at least one retrieved skill id. The trajectory must follow edges of the skill graph from coarse to fine.";
const RULES_ATOMIC: &str = "Every claim must cite at least one scene field and at least one skill id. The skills are an unordered set: return an empty trajectory.";
const RULES_NO_SKILL: &str = "Answer from the scene evidence alone. Every claim must cite at least one scene field. Return empty skill_refs and an empty trajectory.";

fn render_messages(messages: &[Message]) -> (String, usize) {
    let mut images = 0;
    let mut text = String::new();
    for m in messages {
        images += m.parts.len() - m.parts.iter().filter(|p| matches!(p, crate::model_gateway::ContentPart::Text { .. })).count();
        if !text.is_empty() {
            text.push_str("\n\n");
        }
        text.push_str(&format!("[{}]\n{}", m.role.as_str(), m.text_content()));
    }
    (text, images)
}

pub struct Engine<'a> {
    pub gateway: &'a Gateway,
    pub library: &'a SkillLibrary,
    pub index: &'a SkillIndex,
    pub provider: &'a dyn EmbeddingProvider,
    pub config: InferenceConfig,
}

enum Attempt {
    Accepted(GeoPrediction),
    Rejected(Vec<String>),
}

impl<'a> Engine<'a> {
    pub fn new(
        gateway: &'a Gateway,
        library: &'a SkillLibrary,
        index: &'a SkillIndex,
        provider: &'a dyn EmbeddingProvider,
        config: InferenceConfig,
    ) -> Result<Self, InferenceError> {
        if !index.matches(library) {
            return Err(InferenceError::IndexMismatch { library: library.version, index: index.library_version });
        }
        config.retrieval.validate()?;
        for (name, t) in [("temperature_main", config.temperature_main), ("vote_base", config.vote_base)] {
            if !(0.0..=2.0).contains(&t) {
                return Err(InferenceError::Config(format!("{name} = {t} outside [0, 2]")));
            }
        }
        Ok(Engine { gateway, library, index, provider, config })
    }

    fn exchange(&self, purpose: &str, request: &ModelRequest, response: &ModelResponse) -> Exchange {
        let (prompt, images) = render_messages(&request.messages);
        Exchange {
            purpose: purpose.into(),
            temperature: request.temperature,
            prompt,
            images,
            response: response.text.clone(),
            backend: response.backend.clone(),
            latency_ms: self.config.clock.latency(response.latency_ms),
        }
    }

    fn image_message(&self, text: String, image: &str) -> Result<Message, InferenceError> {
        let part = image_part(image).map_err(|source| InferenceError::Image { reference: image.into(), source })?;
        Ok(Message::user(text).with_image(part))
    }

    pub fn parse_scene(&self, image: &str) -> Result<ParsedScene, InferenceError> {
        let request = ModelRequest {
            messages: vec![self.image_message(prompts::SCENE_PARSE.text.to_string(), image)?],
            temperature: self.config.temperature_main,
            response_format: ResponseFormat::StrictJson,
            max_output_tokens: self.config.max_output_tokens,
            model_alias: ModelAlias::OnlineInference,
        };
        let response = self.gateway.complete(&request)?;
        let (scene, warnings) = SceneParse::from_json(&response.text).map_err(InferenceError::SceneParse)?;
        Ok(ParsedScene { scene, warnings, exchange: self.exchange("scene_parse", &request, &response) })
    }

    fn skill(&self, id: &str) -> &AtomicSkill {
        self.library.get(id).expect("retrieved ids come from the library")
    }

    fn random_skills(&self) -> Vec<ScoredSkill> {
        let ids: Vec<&String> = self.library.skills.keys().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        let k = self.config.retrieval.k.min(ids.len());
        rand::seq::index::sample(&mut rng, ids.len(), k)
            .into_iter()
            .map(|i| ScoredSkill { id: ids[i].clone(), score: 0.0 })
            .collect()
    }

    /// Retrieval, graph composition and prompt rendering for one scene.
    pub fn prepare(&self, scene: &SceneParse) -> Result<QueryContext, InferenceError> {
        let mode = self.config.mode;
        let (retrieved, candidate_count) = match mode {
            AblationMode::WoSkill => (Vec::new(), 0),
            AblationMode::RandomSkill => (self.random_skills(), self.library.len()),
            _ => {
                let query = WeightedQuery::new(vec![
                    (self.config.task_prior.clone(), self.config.task_weight),
                    (scene.canonical_text(), self.config.scene_weight),
                ])?;
                let r = hybrid_retrieve(self.index, self.provider, &query, &self.config.retrieval)?;
                (r.hits, r.candidate_count)
            }
        };
        let skills: Vec<&AtomicSkill> = retrieved.iter().map(|h| self.skill(&h.id)).collect();
        let graph = match mode {
            AblationMode::WoSkill | AblationMode::AtomicOnly => TaskSkillGraph::default(),
            AblationMode::ShuffledOrder => shuffle_edges(&compose_graph(&skills, &self.library.relation_priors), self.config.seed),
            _ => compose_graph(&skills, &self.library.relation_priors),
        };
        let plan = match mode {
            AblationMode::WoSkill => Vec::new(),
            AblationMode::AtomicOnly => {
                let mut ids: Vec<String> = retrieved.iter().map(|h| h.id.clone()).collect();
                ids.sort();
                ids
            }
            _ => order_plan(&graph)?,
        };

        let skills_section = if mode == AblationMode::WoSkill {
            String::new()
        } else {
            let mut s = String::from("\n## Retrieved skills\n");
            if mode == AblationMode::AtomicOnly {
                s.push_str("Unordered; apply whichever are relevant.\n");
            }
            for id in &plan {
                let k = self.skill(id);
                s.push_str(&format!("- [{}] ({}) {} => {}\n", k.id, k.stage, k.instruction, k.heuristic));
            }
            s
        };
        let graph_section = if matches!(mode, AblationMode::WoSkill | AblationMode::AtomicOnly) {
            String::new()
        } else {
            let mut s = String::from("\n## Skill graph\n");
            s.push_str(&format!("Plan: {}\n", plan.join(" -> ")));
            s.push_str("Edges (prerequisite -> dependent):\n");
            for (a, b) in &graph.edges {
                s.push_str(&format!("- {a} -> {b}\n"));
            }
            s
        };
        let rules = match mode {
            AblationMode::WoSkill => RULES_NO_SKILL,
            AblationMode::AtomicOnly => RULES_ATOMIC,
            _ => RULES_GRAPH,
        };
        let prompt = prompts::render(
            prompts::REASON,
            &[
                ("task_prior", &self.config.task_prior),
                ("scene", scene.render_evidence().trim_end()),
                ("skills", &skills_section),
                ("graph", &graph_section),
                ("rules", rules),
            ],
        );
        Ok(QueryContext { retrieved, candidate_count, graph, plan, prompt })
    }

    fn policy(&self) -> GroundingPolicy {
        GroundingPolicy { require_skill_refs: self.config.mode != AblationMode::WoSkill }
    }

    fn check(&self, reply: &str, scene: &SceneParse, ctx: &QueryContext) -> Result<Attempt, InferenceError> {
        let prediction = GeoPrediction::from_reply(reply).map_err(InferenceError::Prediction)?;
        let ids: Vec<String> = ctx.retrieved.iter().map(|h| h.id.clone()).collect();
        Ok(match validate_prediction(&prediction, scene, &ids, &ctx.graph, self.policy()) {
            Ok(()) => Attempt::Accepted(prediction),
            Err(v) => Attempt::Rejected(v.iter().map(ToString::to_string).collect()),
        })
    }

    /// Skill-conditioned reasoning with one corrective re-prompt.
    fn rollout(
        &self,
        index: usize,
        temperature: f64,
        image: &str,
        scene: &SceneParse,
        ctx: &QueryContext,
    ) -> (RolloutLog, Result<GeoPrediction, InferenceError>) {
        let mut log = RolloutLog { index, temperature, exchanges: vec![], violations: vec![], prediction: None, error: None };
        let result = (|| -> Result<GeoPrediction, InferenceError> {
            let mut request = ModelRequest {
                messages: vec![self.image_message(ctx.prompt.clone(), image)?],
                temperature,
                response_format: ResponseFormat::StrictJson,
                max_output_tokens: self.config.max_output_tokens,
                model_alias: ModelAlias::OnlineInference,
            };
            let first = self.gateway.complete(&request)?;
            log.exchanges.push(self.exchange("reason", &request, &first));
            let violations = match self.check(&first.text, scene, ctx)? {
                Attempt::Accepted(p) => {
                    log.violations.push(vec![]);
                    return Ok(p);
                }
                Attempt::Rejected(v) => v,
            };
            log.violations.push(violations.clone());
            let skill_rule = if self.policy().require_skill_refs { " and at least one retrieved skill id" } else { "" };
            let bullet_list: String = violations.iter().map(|v| format!("- {v}\n")).collect();
            let correction = prompts::render(
                prompts::CORRECT,
                &[("violations", bullet_list.trim_end()), ("skill_rule", skill_rule)],
            );
            request.messages.push(Message::text(Role::Assistant, first.text));
            request.messages.push(Message::user(correction));
            let second = self.gateway.complete(&request)?;
            log.exchanges.push(self.exchange("correct", &request, &second));
            match self.check(&second.text, scene, ctx)? {
                Attempt::Accepted(p) => {
                    log.violations.push(vec![]);
                    Ok(p)
                }
                Attempt::Rejected(v) => {
                    log.violations.push(v.clone());
                    Err(InferenceError::Grounding { violations: v })
                }
            }
        })();
        match &result {
            Ok(p) => log.prediction = Some(p.clone()),
            Err(e) => log.error = Some(e.to_string()),
        }
        (log, result)
    }

    fn record(
        &self,
        query_id: &str,
        image: &str,
        parsed: ParsedScene,
        ctx: QueryContext,
        rollouts: Vec<RolloutLog>,
        prediction: GeoPrediction,
        started_at: String,
    ) -> InferenceRecord {
        InferenceRecord {
            query_id: query_id.into(),
            image: image.into(),
            mode: self.config.mode,
            seed: self.config.seed,
            library_version: self.library.version,
            template_hash: prompts::template_hash(),
            scene: parsed.scene,
            scene_warnings: parsed.warnings,
            scene_exchange: parsed.exchange,
            retrieved: ctx.retrieved,
            candidate_count: ctx.candidate_count,
            graph: ctx.graph.dump(),
            plan: ctx.plan,
            rollouts,
            prediction,
            outcome: None,
            ground_truth: None,
            external_verification: None,
            started_at,
            finished_at: self.config.clock.now(),
        }
    }

    /// Full pipeline for one image at the main reasoning temperature.
    pub fn infer(&self, query_id: &str, image: &str) -> Result<(GeoPrediction, InferenceRecord), InferenceError> {
        let started_at = self.config.clock.now();
        let parsed = self.parse_scene(image)?;
        let ctx = self.prepare(&parsed.scene)?;
        let (log, result) = self.rollout(0, self.config.temperature_main, image, &parsed.scene, &ctx);
        let prediction = result?;
        let record = self.record(query_id, image, parsed, ctx, vec![log], prediction.clone(), started_at);
        Ok((prediction, record))
    }

    /// Multi-rollout voting. The scene is parsed once and shared; rollout
    /// `i` runs at `vote_base + vote_jitter * i`. One rollout is exactly
    /// [`Engine::infer`].
    pub fn vote(
        &self,
        query_id: &str,
        image: &str,
        n_rollouts: usize,
    ) -> Result<(GeoPrediction, InferenceRecord), InferenceError> {
        if n_rollouts == 0 {
            return Err(InferenceError::Config("n_rollouts must be at least 1".into()));
        }
        if n_rollouts == 1 {
            return self.infer(query_id, image);
        }
        let started_at = self.config.clock.now();
        let parsed = self.parse_scene(image)?;
        let ctx = self.prepare(&parsed.scene)?;
        let logs: Vec<RolloutLog> = (0..n_rollouts)
            .map(|i| {
                let t = (self.config.vote_base + self.config.vote_jitter * i as f64).min(2.0);
                self.rollout(i, t, image, &parsed.scene, &ctx).0
            })
            .collect();
        let ok: Vec<GeoPrediction> = logs.iter().filter_map(|l| l.prediction.clone()).collect();
        if ok.is_empty() {
            let causes = logs.iter().map(|l| format!("rollout {}: {}", l.index, l.error.clone().unwrap_or_default())).collect();
            return Err(InferenceError::AllRolloutsFailed(causes));
        }
        let prediction = aggregate(&ok);
        let record = self.record(query_id, image, parsed, ctx, logs, prediction.clone(), started_at);
        Ok((prediction, record))
    }
}

/// Index of the point minimizing summed great-circle distance to the others;
/// ties go to the lowest index.
pub fn medoid(points: &[crate::GeoCoordinate]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, a) in points.iter().enumerate() {
        let total: f64 = points.iter().map(|b| haversine_km(*a, *b)).sum();
        if best.is_none_or(|(_, t)| total < t) {
            best = Some((i, total));
        }
    }
    best.map(|(i, _)| i)
}

/// Majority country (ties: higher mean confidence, then code ascending),
/// medoid coordinates among agreeing rollouts, and their claims merged
/// without duplicates.
pub fn aggregate(predictions: &[GeoPrediction]) -> GeoPrediction {
    assert!(!predictions.is_empty(), "aggregate needs at least one prediction");
    let mut tally: BTreeMap<&str, (usize, f64)> = BTreeMap::new();
    for p in predictions {
        let e = tally.entry(p.country.as_str()).or_insert((0, 0.0));
        e.0 += 1;
        e.1 += p.confidence;
    }
    let (country, _) = tally
        .iter()
        .max_by(|(ca, (na, sa)), (cb, (nb, sb))| {
            na.cmp(nb)
                .then_with(|| (sa / *na as f64).total_cmp(&(sb / *nb as f64)))
                .then_with(|| cb.cmp(ca))
        })
        .expect("tally is non-empty");
    let agreeing: Vec<&GeoPrediction> = predictions.iter().filter(|p| p.country == *country).collect();
    let coords: Vec<_> = agreeing.iter().map(|p| p.coordinates).collect();
    let center = agreeing[medoid(&coords).expect("agreeing is non-empty")];
    let mut seen = HashSet::new();
    let evidence = agreeing.iter().flat_map(|p| p.evidence.iter()).filter(|c| seen.insert(*c)).cloned().collect();
    GeoPrediction {
        country: center.country.clone(),
        region: center.region.clone(),
        coordinates: center.coordinates,
        confidence: agreeing.iter().map(|p| p.confidence).sum::<f64>() / agreeing.len() as f64,
        evidence,
        trajectory: center.trajectory.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::GeoCoordinate;

    fn p(country: &str, lat: f64, lon: f64, conf: f64) -> GeoPrediction {
        GeoPrediction {
            country: country.into(),
            region: format!("{lat},{lon}"),
            coordinates: GeoCoordinate::new(lat, lon).unwrap(),
            confidence: conf,
            evidence: vec![GroundedClaim { claim: country.into(), evidence_refs: vec!["driving_side".into()], skill_refs: vec![] }],
            trajectory: vec![],
        }
    }

    #[test]
    fn majority_wins() {
        let v = aggregate(&[p("AD", 42.5, 1.5, 0.5), p("AD", 42.6, 1.6, 0.6), p("FR", 43.0, 2.0, 0.99)]);
        assert_eq!(v.country, "AD");
        assert!((v.confidence - 0.55).abs() < 1e-12);
        assert_eq!(v.evidence.len(), 1);
    }

    #[test]
    fn ties_use_confidence_then_code() {
        assert_eq!(aggregate(&[p("FR", 43.0, 2.0, 0.9), p("AD", 42.5, 1.5, 0.5)]).country, "FR");
        assert_eq!(aggregate(&[p("FR", 43.0, 2.0, 0.5), p("AD", 42.5, 1.5, 0.5)]).country, "AD");
    }

    #[test]
    fn medoid_is_the_central_point() {
        let pts: Vec<GeoCoordinate> =
            [(0.0, 0.0), (0.0, 1.0), (0.0, 2.0), (0.0, 10.0)].iter().map(|(a, b)| GeoCoordinate::new(*a, *b).unwrap()).collect();
        assert_eq!(medoid(&pts), Some(1));
        assert_eq!(medoid(&[]), None);
    }

    #[test]
    fn modes_round_trip_through_strings() {
        for m in AblationMode::ALL {
            assert_eq!(m.as_str().parse::<AblationMode>(), Ok(m));
            assert_eq!(serde_json::to_string(&m).unwrap(), format!("\"{}\"", m.as_str()));
        }
        assert!("nope".parse::<AblationMode>().is_err());
    }
}
