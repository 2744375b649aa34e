mod support;

use std::sync::Arc;
use std::time::Duration;

use geoskill_core::fixtures::AndorraCase;
use geoskill_core::geo_metrics::haversine_km;
use geoskill_core::graph_composer::{compose_graph, validate_trajectory, TaskSkillGraph};
use geoskill_core::inference_engine::{
    medoid, validate_grounding, AblationMode, Clock, Engine, GroundingViolation, InferenceConfig, InferenceRecord,
};
use geoskill_core::model_gateway::transport::{HttpTransport, RetryPolicy};
use geoskill_core::model_gateway::{Gateway, HttpBackendConfig, HttpChatBackend, MockBackend, ModelBackend};
use geoskill_core::retrieval::{build_index, HashedEmbedder, SkillIndex};
use geoskill_core::GeoCoordinate;
use proptest::prelude::*;
use support::{chat_reply, StubServer};

struct Setup {
    case: AndorraCase,
    index: SkillIndex,
    embedder: HashedEmbedder,
}

fn setup() -> Setup {
    let case = AndorraCase::new();
    let embedder = HashedEmbedder::default();
    let index = build_index(&case.library, &embedder).unwrap();
    Setup { case, index, embedder }
}

fn config(mode: AblationMode) -> InferenceConfig {
    InferenceConfig { clock: Clock::fixed(), mode, seed: 7, ..Default::default() }
}

fn run_vote(s: &Setup, backend: Arc<dyn ModelBackend>, n: usize) -> InferenceRecord {
    let gw = Gateway::single(backend);
    let engine = Engine::new(&gw, &s.case.library, &s.index, &s.embedder, config(AblationMode::Full)).unwrap();
    engine.vote("andorra", &s.case.image, n).unwrap().1
}

#[test]
fn andorra_case_is_grounded_and_votes_andorra() {
    let s = setup();
    let record = run_vote(&s, Arc::new(MockBackend::ordinal(s.case.vote_script())), 3);
    let p = &record.prediction;
    assert_eq!(p.country, "AD");
    assert_eq!(validate_grounding(p, &record.scene, &record.retrieved_ids()), Ok(()));
    let graph = TaskSkillGraph::from_dump(record.graph.clone());
    assert_eq!(validate_trajectory(&graph, &p.trajectory), Ok(()));
    assert_eq!(p.trajectory, vec![s.case.terrain.clone(), s.case.catalan.clone(), s.case.street.clone()]);

    // The first rollout was corrected once; the others passed first time.
    assert_eq!(record.rollouts.len(), 3);
    assert_eq!(record.rollouts[0].exchanges.len(), 2);
    assert!(record.rollouts[0].violations[0].iter().any(|v| v.contains("claim 1 cites no scene evidence")));
    assert!(record.rollouts[0].violations[1].is_empty());
    assert!(record.grounding_flagged());
    let temps: Vec<f64> = record.rollouts.iter().map(|r| r.temperature).collect();
    assert_eq!(temps.len(), 3);
    for (t, want) in temps.iter().zip([0.1, 0.15, 0.2]) {
        assert!((t - want).abs() < 1e-12, "{temps:?}");
    }
    // Medoid of the three AD rollouts is the middle one.
    assert_eq!(p.coordinates, GeoCoordinate::new(42.5425, 1.5201).unwrap());
    assert!(haversine_km(p.coordinates, s.case.truth.coordinate().unwrap()) < 2.0);
}

#[test]
fn distractor_claim_is_the_only_flagged_claim() {
    let s = setup();
    let record = run_vote(&s, Arc::new(MockBackend::ordinal(s.case.vote_script())), 3);
    let mut p = record.prediction.clone();
    p.evidence.push(s.case.distractor_claim());
    let at = p.evidence.len() - 1;
    let violations = validate_grounding(&p, &record.scene, &record.retrieved_ids()).unwrap_err();
    assert!(violations.contains(&GroundingViolation::NoEvidence { claim: at }));
    assert!(violations.iter().all(|v| v.claim() == Some(at)), "{violations:?}");
}

#[test]
fn case_graph_has_twelve_nodes_and_fifty_three_edges() {
    let case = AndorraCase::new();
    let refs: Vec<_> = case.case_skills.iter().collect();
    let g = compose_graph(&refs, &case.case_priors);
    assert_eq!((g.nodes.len(), g.edges.len()), (12, 53));
    g.check_dag().unwrap();
    assert!(g.stage_violations().is_empty());
}

#[test]
fn vote_is_bit_identical_across_runs() {
    let s = setup();
    let a = run_vote(&s, Arc::new(MockBackend::ordinal(s.case.vote_script())), 3);
    let b = run_vote(&s, Arc::new(MockBackend::ordinal(s.case.vote_script())), 3);
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
}

#[test]
fn single_rollout_vote_is_infer() {
    let s = setup();
    let via_vote = run_vote(&s, Arc::new(MockBackend::ordinal(s.case.infer_script())), 1);
    let gw = Gateway::single(Arc::new(MockBackend::ordinal(s.case.infer_script())));
    let engine = Engine::new(&gw, &s.case.library, &s.index, &s.embedder, config(AblationMode::Full)).unwrap();
    let (_, via_infer) = engine.infer("andorra", &s.case.image).unwrap();
    assert_eq!(serde_json::to_value(&via_vote).unwrap(), serde_json::to_value(&via_infer).unwrap());
    assert_eq!(via_infer.rollouts[0].temperature, 0.2);
}

#[test]
fn http_backend_gives_the_same_record_as_the_mock() {
    let s = setup();
    let mocked = run_vote(&s, Arc::new(MockBackend::ordinal(s.case.vote_script())), 3);
    let server = StubServer::start(s.case.vote_script().iter().map(|r| (200, chat_reply(r))).collect());
    let cfg = HttpBackendConfig {
        url: server.url.clone(),
        model_name: "stub".into(),
        timeout: Duration::from_secs(5),
        max_retries: 0,
        requests_per_second: None,
    };
    let transport = HttpTransport::new(cfg.timeout, RetryPolicy::default()).with_api_key(None);
    let over_http = run_vote(&s, Arc::new(HttpChatBackend::with_transport(cfg, transport)), 3);
    assert_eq!(server.requests().len(), 5);
    assert_eq!(mocked.prediction, over_http.prediction);
    assert_eq!(mocked.graph, over_http.graph);
    assert_eq!(mocked.scene_exchange.prompt, over_http.scene_exchange.prompt);
}

#[test]
fn unscripted_backend_surfaces_as_an_error() {
    let s = setup();
    let gw = Gateway::single(Arc::new(MockBackend::ordinal(Vec::<String>::new())));
    let engine = Engine::new(&gw, &s.case.library, &s.index, &s.embedder, config(AblationMode::Full)).unwrap();
    assert!(engine.infer("q", &s.case.image).is_err());
}

#[test]
fn stale_index_is_refused() {
    let s = setup();
    let mut newer = s.case.library.clone();
    newer.version = 3;
    let gw = Gateway::single(Arc::new(MockBackend::ordinal(Vec::<String>::new())));
    assert!(Engine::new(&gw, &newer, &s.index, &s.embedder, config(AblationMode::Full)).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn medoid_minimizes_summed_distance(points in prop::collection::vec((-80.0f64..80.0, -179.0f64..179.0), 1..=5)) {
        let coords: Vec<GeoCoordinate> = points.iter().map(|&(a, b)| GeoCoordinate::new(a, b).unwrap()).collect();
        let m = medoid(&coords).unwrap();
        let total = |i: usize| coords.iter().map(|c| haversine_km(coords[i], *c)).sum::<f64>();
        for i in 0..coords.len() {
            prop_assert!(total(m) <= total(i) + 1e-9);
        }
    }
}
