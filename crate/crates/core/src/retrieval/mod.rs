//! Hybrid lexical + dense skill retrieval.
//!
//! Lexical relevance is Okapi BM25 over tokenized skill text; dense relevance
//! is cosine similarity between unit embeddings. Per query part the BM25
//! scores are min-max normalized over the corpus and blended with the cosine,
//! then parts are combined by their weights. Candidates under the score
//! threshold are dropped and the final `k` are picked by greedy maximal
//! marginal relevance.

mod embedding;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::skill_model::SkillLibrary;
use crate::text::tokenize;

pub use embedding::{
    cosine, fallback_embed, l2_normalize, EmbedError, EmbeddingProvider, HashedEmbedder, RemoteEmbedder,
    DEFAULT_DIMENSION,
};

#[derive(Debug, thiserror::Error)]
pub enum RetrievalError {
    #[error("embedding skill {skill_id}: {source}")]
    Provider {
        skill_id: String,
        #[source]
        source: EmbedError,
    },
    #[error("embedding query: {0}")]
    Query(#[source] EmbedError),
    #[error("unknown skill id {0}")]
    UnknownSkill(String),
    #[error("invalid query: {0}")]
    InvalidQuery(String),
    #[error("invalid retrieval parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k1: 1.5, b: 0.75 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalParams {
    pub k: usize,
    pub score_threshold: f64,
    pub diversity_lambda: f64,
    pub w_lex: f64,
    pub w_sem: f64,
    pub k1: f64,
    pub b: f64,
}

impl Default for RetrievalParams {
    fn default() -> Self {
        RetrievalParams {
            k: 7,
            score_threshold: 0.05,
            diversity_lambda: 0.7,
            w_lex: 0.5,
            w_sem: 0.5,
            k1: 1.5,
            b: 0.75,
        }
    }
}

impl RetrievalParams {
    pub fn bm25(&self) -> Bm25Params {
        Bm25Params { k1: self.k1, b: self.b }
    }

    pub fn validate(&self) -> Result<(), RetrievalError> {
        let bad = |m: &str| Err(RetrievalError::InvalidParams(m.to_string()));
        if self.k == 0 {
            return bad("k must be >= 1");
        }
        if !(0.0..=1.0).contains(&self.diversity_lambda) {
            return bad("diversity_lambda must lie in [0, 1]");
        }
        if !(self.w_lex >= 0.0 && self.w_sem >= 0.0) || self.score_threshold.is_nan() {
            return bad("weights must be non-negative and the threshold a number");
        }
        if self.k1 < 0.0 || !(0.0..=1.0).contains(&self.b) {
            return bad("bm25 requires k1 >= 0 and b in [0, 1]");
        }
        Ok(())
    }
}

/// Immutable retrieval index over one library version.
#[derive(Debug, Clone)]
pub struct SkillIndex {
    pub library_version: u64,
    ids: Vec<String>,
    position: HashMap<String, usize>,
    term_freqs: Vec<HashMap<String, u32>>,
    doc_lens: Vec<usize>,
    doc_freqs: HashMap<String, usize>,
    avg_len: f64,
    embeddings: Vec<Vec<f64>>,
    dimension: usize,
}

const EMBED_CHUNK: usize = 64;

/// Builds the index; skill text is instruction, heuristic and region tags.
pub fn build_index(lib: &SkillLibrary, provider: &dyn EmbeddingProvider) -> Result<SkillIndex, RetrievalError> {
    let ids: Vec<String> = lib.skills.keys().cloned().collect();
    let texts: Vec<String> = lib.skills.values().map(|s| s.index_text()).collect();
    let mut term_freqs = Vec::with_capacity(ids.len());
    let mut doc_lens = Vec::with_capacity(ids.len());
    let mut doc_freqs: HashMap<String, usize> = HashMap::new();
    for text in &texts {
        let tokens = tokenize(text);
        let mut tf: HashMap<String, u32> = HashMap::new();
        for t in &tokens {
            *tf.entry(t.clone()).or_insert(0) += 1;
        }
        for term in tf.keys() {
            *doc_freqs.entry(term.clone()).or_insert(0) += 1;
        }
        doc_lens.push(tokens.len());
        term_freqs.push(tf);
    }
    let avg_len = if ids.is_empty() { 0.0 } else { doc_lens.iter().sum::<usize>() as f64 / ids.len() as f64 };

    let dimension = provider.dimension();
    let mut embeddings = Vec::with_capacity(ids.len());
    for (chunk_ids, chunk_texts) in ids.chunks(EMBED_CHUNK).zip(texts.chunks(EMBED_CHUNK)) {
        match provider.embed_batch(chunk_texts) {
            Ok(vectors) => {
                for (id, v) in chunk_ids.iter().zip(vectors) {
                    if v.len() != dimension {
                        return Err(RetrievalError::Provider {
                            skill_id: id.clone(),
                            source: EmbedError::Dimension { expected: dimension, found: v.len() },
                        });
                    }
                    embeddings.push(v);
                }
            }
            Err(_) => {
                // Re-embed one by one to name the failing skill.
                for (id, text) in chunk_ids.iter().zip(chunk_texts) {
                    let v = provider
                        .embed(text)
                        .map_err(|source| RetrievalError::Provider { skill_id: id.clone(), source })?;
                    embeddings.push(v);
                }
            }
        }
    }

    let position = ids.iter().enumerate().map(|(i, id)| (id.clone(), i)).collect();
    Ok(SkillIndex {
        library_version: lib.version,
        ids,
        position,
        term_freqs,
        doc_lens,
        doc_freqs,
        avg_len,
        embeddings,
        dimension,
    })
}

impl SkillIndex {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn doc_freq(&self, term: &str) -> usize {
        self.doc_freqs.get(term).copied().unwrap_or(0)
    }

    pub fn avg_doc_len(&self) -> f64 {
        self.avg_len
    }

    pub fn embedding(&self, id: &str) -> Option<&[f64]> {
        self.position.get(id).map(|&i| self.embeddings[i].as_slice())
    }

    /// True iff the index covers exactly the skills of `lib` at its version.
    pub fn matches(&self, lib: &SkillLibrary) -> bool {
        self.library_version == lib.version
            && self.ids.len() == lib.skills.len()
            && self.ids.iter().zip(lib.skills.keys()).all(|(a, b)| a == b)
    }

    fn idf(&self, term: &str) -> f64 {
        let n = self.ids.len() as f64;
        let df = self.doc_freq(term) as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    fn bm25_at(&self, pos: usize, terms: &[String], params: Bm25Params) -> f64 {
        if self.avg_len == 0.0 {
            return 0.0;
        }
        let tf_map = &self.term_freqs[pos];
        let norm = 1.0 - params.b + params.b * self.doc_lens[pos] as f64 / self.avg_len;
        terms
            .iter()
            .filter_map(|t| tf_map.get(t).map(|&tf| (t, f64::from(tf))))
            .map(|(t, tf)| self.idf(t) * tf * (params.k1 + 1.0) / (tf + params.k1 * norm))
            .sum()
    }

    /// BM25 scores of every indexed skill, in index order.
    pub fn bm25_all(&self, terms: &[String], params: Bm25Params) -> Vec<f64> {
        (0..self.ids.len()).map(|i| self.bm25_at(i, terms, params)).collect()
    }
}

/// Okapi BM25 of one skill against the query terms. Repeated query terms
/// contribute once per occurrence; terms absent from the corpus contribute 0.
pub fn bm25_score(index: &SkillIndex, terms: &[String], skill_id: &str, params: Bm25Params) -> Result<f64, RetrievalError> {
    let pos = *index
        .position
        .get(skill_id)
        .ok_or_else(|| RetrievalError::UnknownSkill(skill_id.to_string()))?;
    Ok(index.bm25_at(pos, terms, params))
}

/// Query made of weighted text parts. Weights are normalized to sum to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedQuery {
    parts: Vec<(String, f64)>,
}

impl WeightedQuery {
    pub fn new(parts: Vec<(String, f64)>) -> Result<Self, RetrievalError> {
        if parts.iter().any(|(_, w)| !w.is_finite() || *w < 0.0) {
            return Err(RetrievalError::InvalidQuery("weights must be finite and non-negative".into()));
        }
        let total: f64 = parts.iter().map(|(_, w)| w).sum();
        if total <= 0.0 {
            return Err(RetrievalError::InvalidQuery("at least one part needs positive weight".into()));
        }
        Ok(WeightedQuery { parts: parts.into_iter().map(|(t, w)| (t, w / total)).collect() })
    }

    pub fn single(text: impl Into<String>) -> Self {
        WeightedQuery { parts: vec![(text.into(), 1.0)] }
    }

    pub fn parts(&self) -> &[(String, f64)] {
        &self.parts
    }
}

/// Retrieved skill with its hybrid relevance score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredSkill {
    pub id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Retrieval {
    pub hits: Vec<ScoredSkill>,
    /// Skills that cleared the score threshold before diversity selection.
    pub candidate_count: usize,
}

impl Retrieval {
    pub fn ids(&self) -> Vec<String> {
        self.hits.iter().map(|h| h.id.clone()).collect()
    }
}

fn min_max(scores: &[f64]) -> Vec<f64> {
    let (lo, hi) = scores.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &s| (lo.min(s), hi.max(s)));
    if scores.is_empty() {
        return Vec::new();
    }
    if hi > lo {
        scores.iter().map(|s| (s - lo) / (hi - lo)).collect()
    } else {
        // Flat scores carry no ranking signal; keep a positive flat score.
        let v = if hi > 0.0 { 1.0 } else { 0.0 };
        vec![v; scores.len()]
    }
}

/// Hybrid relevance of every indexed skill, in index order.
pub fn hybrid_scores(
    index: &SkillIndex,
    provider: &dyn EmbeddingProvider,
    query: &WeightedQuery,
    params: &RetrievalParams,
) -> Result<Vec<f64>, RetrievalError> {
    let mut total = vec![0.0; index.len()];
    for (text, weight) in query.parts() {
        let lexical = min_max(&index.bm25_all(&tokenize(text), params.bm25()));
        let q = provider.embed(text).map_err(RetrievalError::Query)?;
        if q.len() != index.dimension {
            return Err(RetrievalError::Query(EmbedError::Dimension { expected: index.dimension, found: q.len() }));
        }
        for (i, slot) in total.iter_mut().enumerate() {
            let semantic = cosine(&q, &index.embeddings[i]);
            *slot += weight * (params.w_lex * lexical[i] + params.w_sem * semantic);
        }
    }
    Ok(total)
}

/// Greedy maximal-marginal-relevance selection over positions whose
/// relevance clears `threshold`. Ties break by id ascending.
pub fn mmr_select(
    ids: &[String],
    relevance: &[f64],
    embeddings: &[Vec<f64>],
    k: usize,
    lambda: f64,
    threshold: f64,
) -> (Vec<usize>, usize) {
    let mut pool: Vec<usize> = (0..ids.len()).filter(|&i| relevance[i] >= threshold).collect();
    let candidates = pool.len();
    let mut chosen: Vec<usize> = Vec::new();
    // Largest similarity to anything already chosen, per pool entry.
    let mut redundancy = vec![f64::NEG_INFINITY; ids.len()];
    while chosen.len() < k && !pool.is_empty() {
        let mut best: Option<(usize, f64)> = None;
        for (slot, &i) in pool.iter().enumerate() {
            let penalty = if chosen.is_empty() { 0.0 } else { redundancy[i] };
            let mmr = lambda * relevance[i] - (1.0 - lambda) * penalty;
            let better = match best {
                None => true,
                Some((b, bs)) => mmr > bs || (mmr == bs && ids[i] < ids[pool[b]]),
            };
            if better {
                best = Some((slot, mmr));
            }
        }
        let (slot, _) = best.expect("pool is non-empty");
        let pick = pool.swap_remove(slot);
        for &i in &pool {
            redundancy[i] = redundancy[i].max(cosine(&embeddings[i], &embeddings[pick]));
        }
        chosen.push(pick);
    }
    (chosen, candidates)
}

/// Top-`k` hybrid retrieval with thresholding and MMR diversity control.
pub fn hybrid_retrieve(
    index: &SkillIndex,
    provider: &dyn EmbeddingProvider,
    query: &WeightedQuery,
    params: &RetrievalParams,
) -> Result<Retrieval, RetrievalError> {
    params.validate()?;
    if index.is_empty() {
        return Ok(Retrieval::default());
    }
    let relevance = hybrid_scores(index, provider, query, params)?;
    let (chosen, candidate_count) = mmr_select(
        &index.ids,
        &relevance,
        &index.embeddings,
        params.k,
        params.diversity_lambda,
        params.score_threshold,
    );
    let hits = chosen
        .into_iter()
        .map(|i| ScoredSkill { id: index.ids[i].clone(), score: relevance[i] })
        .collect();
    Ok(Retrieval { hits, candidate_count })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skill_model::{library_upsert, AtomicSkill, Provenance, Stage};

    fn lib_of(texts: &[&str]) -> SkillLibrary {
        let skills = texts
            .iter()
            .map(|t| AtomicSkill::new(*t, "", 0.6, Stage::Country, Provenance::expert("x")));
        library_upsert(&SkillLibrary::empty(), skills, false).unwrap()
    }

    fn terms(s: &str) -> Vec<String> {
        tokenize(s)
    }

    #[test]
    fn empty_library_gives_empty_index_and_result() {
        let idx = build_index(&SkillLibrary::empty(), &HashedEmbedder::default()).unwrap();
        assert!(idx.is_empty());
        let r = hybrid_retrieve(&idx, &HashedEmbedder::default(), &WeightedQuery::single("x"), &RetrievalParams::default()).unwrap();
        assert!(r.hits.is_empty());
    }

    #[test]
    fn document_frequencies_match_hand_count() {
        let lib = lib_of(&["red bollards", "red plates red", "blue plates"]);
        let idx = build_index(&lib, &HashedEmbedder::default()).unwrap();
        assert_eq!(idx.doc_freq("red"), 2);
        assert_eq!(idx.doc_freq("plates"), 2);
        assert_eq!(idx.doc_freq("blue"), 1);
        assert_eq!(idx.doc_freq("bollards"), 1);
        assert_eq!(idx.doc_freq("green"), 0);
        assert!((idx.avg_doc_len() - 7.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn bm25_single_document_hand_evaluated() {
        let lib = lib_of(&["yellow plates"]);
        let idx = build_index(&lib, &HashedEmbedder::default()).unwrap();
        let id = lib.skills.keys().next().unwrap();
        // N = 1, df = 1: idf = ln(1 + 0.5 / 1.5); tf = 1 and |d| = avgdl so
        // the tf factor is (k1 + 1) / (1 + k1) = 1.
        let idf = (1.0f64 + 0.5 / 1.5).ln();
        let got = bm25_score(&idx, &terms("yellow plates"), id, Bm25Params::default()).unwrap();
        assert!((got - 2.0 * idf).abs() < 1e-12);
    }

    #[test]
    fn bm25_no_overlap_and_unknown_id() {
        let lib = lib_of(&["yellow plates", "kana script"]);
        let idx = build_index(&lib, &HashedEmbedder::default()).unwrap();
        let id = lib.skills.keys().next().unwrap();
        assert_eq!(bm25_score(&idx, &terms("palm trees"), id, Bm25Params::default()).unwrap(), 0.0);
        assert!(matches!(bm25_score(&idx, &terms("x"), "nope", Bm25Params::default()), Err(RetrievalError::UnknownSkill(_))));
    }

    #[test]
    fn rarer_term_scores_higher() {
        let lib = lib_of(&["common rare", "common filler", "common other"]);
        let idx = build_index(&lib, &HashedEmbedder::default()).unwrap();
        let id = &lib.skills.values().find(|s| s.instruction == "common rare").unwrap().id;
        let p = Bm25Params::default();
        let rare = bm25_score(&idx, &terms("rare"), id, p).unwrap();
        let common = bm25_score(&idx, &terms("common"), id, p).unwrap();
        assert!(rare >= common);
    }

    #[test]
    fn lambda_one_is_top_k() {
        let lib = lib_of(&[
            "driving on the left side",
            "left-hand traffic with yellow lines",
            "palm trees and red soil",
            "cyrillic script on shop signs",
            "snow poles with red tops",
        ]);
        let emb = HashedEmbedder::default();
        let idx = build_index(&lib, &emb).unwrap();
        let q = WeightedQuery::single("left traffic yellow lines");
        let params = RetrievalParams { k: 3, diversity_lambda: 1.0, score_threshold: f64::NEG_INFINITY, ..Default::default() };
        let got = hybrid_retrieve(&idx, &emb, &q, &params).unwrap();
        let scores = hybrid_scores(&idx, &emb, &q, &params).unwrap();
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(idx.ids()[a].cmp(&idx.ids()[b])));
        let expected: Vec<String> = order[..3].iter().map(|&i| idx.ids()[i].clone()).collect();
        assert_eq!(got.ids(), expected);
        assert!(got.hits.windows(2).all(|w| w[0].score >= w[1].score));
    }

    #[test]
    fn threshold_drops_candidates() {
        let lib = lib_of(&["driving on the left", "palm trees"]);
        let emb = HashedEmbedder::default();
        let idx = build_index(&lib, &emb).unwrap();
        let q = WeightedQuery::single("driving on the left");
        let params = RetrievalParams { score_threshold: 0.9, ..Default::default() };
        let got = hybrid_retrieve(&idx, &emb, &q, &params).unwrap();
        assert_eq!(got.hits.len(), 1);
        assert!(got.hits.iter().all(|h| h.score >= 0.9));
        assert_eq!(got.candidate_count, 1);
    }

    #[test]
    fn query_weights_normalize_and_validate() {
        let q = WeightedQuery::new(vec![("a".into(), 2.0), ("b".into(), 6.0)]).unwrap();
        assert_eq!(q.parts()[0].1, 0.25);
        assert!(WeightedQuery::new(vec![("a".into(), 0.0)]).is_err());
        assert!(WeightedQuery::new(vec![("a".into(), -1.0), ("b".into(), 2.0)]).is_err());
    }

    #[test]
    fn params_validation() {
        assert!(RetrievalParams { k: 0, ..Default::default() }.validate().is_err());
        assert!(RetrievalParams { diversity_lambda: 1.5, ..Default::default() }.validate().is_err());
        assert!(RetrievalParams::default().validate().is_ok());
    }

    struct FailingProvider;

    impl EmbeddingProvider for FailingProvider {
        fn dimension(&self) -> usize {
            4
        }
        fn embed(&self, text: &str) -> Result<Vec<f64>, EmbedError> {
            if text.contains("poison") {
                Err(EmbedError::Degenerate)
            } else {
                Ok(vec![1.0, 0.0, 0.0, 0.0])
            }
        }
    }

    #[test]
    fn provider_failure_names_the_skill() {
        let lib = lib_of(&["fine text", "poison text"]);
        let bad = lib.skills.values().find(|s| s.instruction.contains("poison")).unwrap().id.clone();
        match build_index(&lib, &FailingProvider) {
            Err(RetrievalError::Provider { skill_id, .. }) => assert_eq!(skill_id, bad),
            other => panic!("expected provider error, got {other:?}"),
        }
    }
}
