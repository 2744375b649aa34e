use std::collections::BTreeSet;
use std::sync::Arc;

use geoskill_core::evolution::{evolve_step, EvolutionConfig};
use geoskill_core::expert_compiler::{
    compile_library, country_histogram, parse_trajectory_records, stage_counts, CertaintyLexicon, Gazetteer,
};
use geoskill_core::fixtures::{expert_corpus_path, expert_library, expert_manifest, scripted_replay};
use geoskill_core::model_gateway::{Gateway, MockBackend};
use geoskill_core::retrieval::{cosine, EmbeddingProvider, HashedEmbedder};
use geoskill_core::skill_model::{save_library, validate_skill};

fn saved_bytes(dir: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

#[test]
fn compiling_twice_gives_identical_files() {
    let tmp = tempfile::tempdir().unwrap();
    for run in ["a", "b"] {
        save_library(&tmp.path().join(run), &expert_library()).unwrap();
    }
    let (a, b) = (saved_bytes(&tmp.path().join("a")), saved_bytes(&tmp.path().join("b")));
    assert!(!a.is_empty());
    assert_eq!(a, b);
}

#[test]
fn compilation_matches_the_manifest() {
    let manifest = expert_manifest();
    let parsed = parse_trajectory_records(&expert_corpus_path()).unwrap();
    let (lib, report) = compile_library(&parsed.records, &CertaintyLexicon::default(), Gazetteer::bundled());
    assert_eq!(lib.len(), 1080);
    assert_eq!(lib.len(), manifest.skills);
    assert_eq!(report.records, manifest.records);
    assert_eq!(report.success_records, manifest.success_records);
    assert_eq!(report.brittle_records, manifest.brittle_records);
    assert_eq!(report.failure_subset, manifest.brittle_records);
    assert!(report.duplicate_steps >= manifest.duplicate_steps);
    assert!(report.steps_filtered >= manifest.filler_steps);
    // The manifest histogram comes from the generator's own gazetteer scan.
    assert_eq!(country_histogram(&lib), manifest.country_histogram);
}

#[test]
fn compiled_skills_are_valid_and_substantive() {
    let lib = expert_library();
    for s in lib.skills.values() {
        assert!(validate_skill(s).is_empty(), "{s:?}");
        assert!((0.35..=0.9).contains(&s.confidence), "{} {}", s.id, s.confidence);
        assert!(!s.instruction.to_lowercase().contains("not sure what this is"), "{}", s.instruction);
    }
    assert!(lib.check_invariants().is_empty());
    assert_eq!(stage_counts(&lib).len(), 3);
    let priors: BTreeSet<_> = lib.skills.values().map(|s| (s.confidence * 100.0).round() as i64).collect();
    assert!(priors.contains(&90) && priors.contains(&60));
}

#[test]
fn corpus_has_no_mergeable_pairs() {
    let lib = expert_library();
    let e = HashedEmbedder::default();
    let v: Vec<Vec<f64>> = lib.skills.values().map(|s| e.embed(&s.index_text()).unwrap()).collect();
    let worst = (0..v.len())
        .flat_map(|i| (i + 1..v.len()).map(move |j| (i, j)))
        .map(|(i, j)| cosine(&v[i], &v[j]))
        .fold(f64::MIN, f64::max);
    assert!(worst < 0.92, "{worst}");
}

#[test]
fn scripted_replay_sizes() {
    let mut lib = expert_library();
    let provider = HashedEmbedder::default();
    let config = EvolutionConfig::default();
    let mut sizes = vec![lib.len()];
    for step in scripted_replay(&lib, &provider, config.theta_merge) {
        let gw = Gateway::single(Arc::new(MockBackend::ordinal(step.replies)));
        let evolved = evolve_step(&lib, &step.records, &config, &gw, &provider).unwrap();
        assert!(evolved.report.balances());
        lib = evolved.library;
        sizes.push(lib.len());
    }
    assert_eq!(sizes, vec![1080, 1350, 1510, 1425]);
    assert_eq!(lib.version, 3);
}
