use std::collections::HashMap;

use geoskill_core::graph_composer::{compose_graph, order_plan, shuffle_edges, validate_trajectory, TaskSkillGraph};
use geoskill_core::skill_model::{AtomicSkill, Provenance, RelationPrior, Stage};
use proptest::prelude::*;

const COUNTRIES: &[&str] = &["AD", "ES", "FR", "PT"];
const REGIONS: &[&str] = &["pyrenees", "iberia", "alps"];

fn stage() -> impl Strategy<Value = Stage> {
    prop_oneof![Just(Stage::GlobalRegion), Just(Stage::Country), Just(Stage::Local)]
}

fn skills() -> impl Strategy<Value = Vec<AtomicSkill>> {
    prop::collection::vec(
        (
            stage(),
            prop::collection::btree_set(prop::sample::select(COUNTRIES), 0..3),
            prop::collection::btree_set(prop::sample::select(REGIONS), 0..2),
            0.1f64..1.0,
        ),
        1..14,
    )
    .prop_map(|specs| {
        specs
            .into_iter()
            .enumerate()
            .map(|(i, (stage, countries, regions, v))| {
                AtomicSkill::new(format!("skill number {i}"), "", v, stage, Provenance::expert("prop"))
                    .with_countries(countries)
                    .with_regions(regions)
            })
            .collect()
    })
}

fn priors(n: usize) -> impl Strategy<Value = Vec<(usize, usize, u64, u64)>> {
    prop::collection::vec((0..n.max(1), 0..n.max(1), 0u64..6, 0u64..3), 0..20)
}

fn build(skills: &[AtomicSkill], raw: &[(usize, usize, u64, u64)]) -> TaskSkillGraph {
    let priors: Vec<RelationPrior> = raw
        .iter()
        .filter(|(a, b, _, _)| *a < skills.len() && *b < skills.len())
        .map(|&(a, b, support, failure)| RelationPrior { from: skills[a].id.clone(), to: skills[b].id.clone(), support, failure })
        .collect();
    let refs: Vec<&AtomicSkill> = skills.iter().collect();
    compose_graph(&refs, &priors)
}

/// Independent check: every edge goes forward in `order`, which lists
/// every node exactly once.
fn is_topological(graph: &TaskSkillGraph, order: &[String]) -> bool {
    let pos: HashMap<&str, usize> = order.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
    pos.len() == graph.nodes.len()
        && graph.nodes.iter().all(|n| pos.contains_key(n.id.as_str()))
        && graph.edges.iter().all(|(a, b)| pos[a.as_str()] < pos[b.as_str()])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn composed_graphs_are_staged_dags((skills, raw) in skills().prop_flat_map(|s| { let n = s.len(); (Just(s), priors(n)) })) {
        let g = build(&skills, &raw);
        prop_assert!(g.check_dag().is_ok());
        prop_assert!(g.stage_violations().is_empty());
        let plan = order_plan(&g).unwrap();
        prop_assert!(is_topological(&g, &plan));
        for s in skills.iter().filter(|s| s.is_global()) {
            let downstream = g.nodes.iter().filter(|n| n.stage > s.stage).count();
            prop_assert!(g.out_degree(&s.id) >= downstream);
        }
        let again = build(&skills, &raw);
        prop_assert_eq!(serde_json::to_string(&g.dump()).unwrap(), serde_json::to_string(&again.dump()).unwrap());
    }

    #[test]
    fn shuffled_graphs_stay_acyclic(skills in skills(), seed in any::<u64>()) {
        let g = build(&skills, &[]);
        let s = shuffle_edges(&g, seed);
        prop_assert_eq!(s.edges.len(), g.edges.len());
        prop_assert_eq!(&s.nodes, &g.nodes);
        prop_assert!(s.check_dag().is_ok());
        prop_assert!(is_topological(&s, &order_plan(&s).unwrap()));
        prop_assert_eq!(shuffle_edges(&g, seed), s);
    }

    #[test]
    fn edge_walks_validate(skills in skills()) {
        let g = build(&skills, &[]);
        if let Some((a, b)) = g.edges.iter().next() {
            prop_assert!(validate_trajectory(&g, &[a.clone(), b.clone()]).is_ok());
            prop_assert!(validate_trajectory(&g, &[b.clone(), a.clone()]).is_err());
        }
        prop_assert!(validate_trajectory(&g, &["not-a-node".to_string()]).is_err());
    }
}
