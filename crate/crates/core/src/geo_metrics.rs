//! Evaluation metrics: great-circle distance, threshold accuracy,
//! reasoning-faithfulness P/R/F1, and evolution-history tables.

use serde::{Deserialize, Serialize};

use crate::evolution::EvolutionReport;
use crate::retrieval::{cosine, EmbedError, EmbeddingProvider};
use crate::skill_model::GeoCoordinate;

/// Mean Earth radius used for every distance, in km.
pub const EARTH_RADIUS_KM: f64 = 6371.0;

pub const DEFAULT_THRESHOLDS_KM: [f64; 5] = [10.0, 25.0, 200.0, 750.0, 2000.0];

pub const DEFAULT_MATCH_THRESHOLD: f64 = 0.80;

/// Great-circle distance by the haversine formula.
pub fn haversine_km(a: GeoCoordinate, b: GeoCoordinate) -> f64 {
    let (phi1, phi2) = (a.lat.to_radians(), b.lat.to_radians());
    let dphi = phi2 - phi1;
    let dlambda = (b.lon - a.lon).to_radians();
    let h = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdReport {
    pub thresholds_km: Vec<f64>,
    pub accuracy: Vec<f64>,
    pub samples: usize,
    pub mean_km: f64,
    /// Set when there were no samples and every figure is a placeholder zero.
    pub empty: bool,
}

/// Fraction of distances at or under each threshold.
pub fn threshold_accuracy(distances: &[f64], thresholds: &[f64]) -> ThresholdReport {
    let n = distances.len();
    if n == 0 {
        return ThresholdReport {
            thresholds_km: thresholds.to_vec(),
            accuracy: vec![0.0; thresholds.len()],
            samples: 0,
            mean_km: 0.0,
            empty: true,
        };
    }
    let accuracy = thresholds
        .iter()
        .map(|t| distances.iter().filter(|d| **d <= *t).count() as f64 / n as f64)
        .collect();
    ThresholdReport {
        thresholds_km: thresholds.to_vec(),
        accuracy,
        samples: n,
        mean_km: distances.iter().sum::<f64>() / n as f64,
        empty: false,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MatchCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl MatchCounts {
    /// (precision, recall, f1); an empty sample with nothing predicted scores 1.
    pub fn prf(&self) -> (f64, f64, f64) {
        let p = ratio(self.tp, self.tp + self.fp);
        let r = ratio(self.tp, self.tp + self.fn_);
        (p, r, harmonic(p, r))
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaithfulnessReport {
    pub precision: f64,
    pub recall: f64,
    /// Harmonic mean of micro precision and recall.
    pub f1: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    /// Mean of per-sample F1.
    pub macro_f1: f64,
    pub per_sample_f1: Vec<f64>,
    pub totals: MatchCounts,
    pub theta_match: f64,
}

/// Item-by-item similarity; identical strings short-circuit to 1.
pub fn similarity_matrix(
    predicted: &[String],
    gold: &[String],
    provider: &dyn EmbeddingProvider,
) -> Result<Vec<Vec<f64>>, EmbedError> {
    let pe = provider.embed_batch(predicted)?;
    let ge = provider.embed_batch(gold)?;
    Ok(predicted
        .iter()
        .zip(&pe)
        .map(|(p, pv)| {
            gold.iter()
                .zip(&ge)
                .map(|(g, gv)| if p.trim() == g.trim() { 1.0 } else { cosine(pv, gv) })
                .collect()
        })
        .collect())
}

/// Greedy one-to-one matching by descending similarity; pairs under
/// `theta` never match. Ties go to the lower (predicted, gold) index.
pub fn greedy_match(sim: &[Vec<f64>], theta: f64) -> Vec<(usize, usize)> {
    let mut pairs: Vec<(f64, usize, usize)> = sim
        .iter()
        .enumerate()
        .flat_map(|(i, row)| row.iter().enumerate().map(move |(j, s)| (*s, i, j)))
        .filter(|(s, _, _)| *s >= theta)
        .collect();
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let rows = sim.len();
    let cols = sim.first().map_or(0, Vec::len);
    let (mut used_p, mut used_g) = (vec![false; rows], vec![false; cols]);
    let mut out = Vec::new();
    for (_, i, j) in pairs {
        if !used_p[i] && !used_g[j] {
            used_p[i] = true;
            used_g[j] = true;
            out.push((i, j));
        }
    }
    out
}

pub fn sample_counts(sim: &[Vec<f64>], n_pred: usize, n_gold: usize, theta: f64) -> MatchCounts {
    let tp = greedy_match(sim, theta).len();
    MatchCounts { tp, fp: n_pred - tp, fn_: n_gold - tp }
}

/// Faithfulness of predicted reasoning items against gold chains, one pair
/// of lists per sample.
pub fn faithfulness_prf(
    predicted: &[Vec<String>],
    gold: &[Vec<String>],
    provider: &dyn EmbeddingProvider,
    theta_match: f64,
) -> Result<FaithfulnessReport, EmbedError> {
    assert_eq!(predicted.len(), gold.len(), "one gold chain per predicted sample");
    let mut totals = MatchCounts::default();
    let mut per = Vec::with_capacity(predicted.len());
    for (p, g) in predicted.iter().zip(gold) {
        let sim = similarity_matrix(p, g, provider)?;
        let c = sample_counts(&sim, p.len(), g.len(), theta_match);
        totals.tp += c.tp;
        totals.fp += c.fp;
        totals.fn_ += c.fn_;
        per.push(c.prf());
    }
    let (precision, recall, f1) = totals.prf();
    let mean = |f: fn(&(f64, f64, f64)) -> f64| {
        if per.is_empty() {
            0.0
        } else {
            per.iter().map(f).sum::<f64>() / per.len() as f64
        }
    };
    Ok(FaithfulnessReport {
        precision,
        recall,
        f1,
        macro_precision: mean(|s| s.0),
        macro_recall: mean(|s| s.1),
        macro_f1: mean(|s| s.2),
        per_sample_f1: per.iter().map(|s| s.2).collect(),
        totals,
        theta_match,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvolutionRow {
    pub iteration: usize,
    pub version: u64,
    pub skills: usize,
    pub delta: i64,
    pub added: usize,
    pub merged: usize,
    pub pruned: usize,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ReportError {
    #[error("evolution history is empty")]
    Empty,
    #[error("iteration {iteration}: {before} + {added} - {merged} - {pruned} != {after}")]
    Unbalanced { iteration: usize, before: usize, added: usize, merged: usize, pruned: usize, after: usize },
    #[error("iteration {iteration} starts at {found} skills but the previous one ended at {expected}")]
    Discontinuous { iteration: usize, expected: usize, found: usize },
}

/// Per-iteration skill counts. Row 0 is the starting library.
pub fn evolution_report(history: &[EvolutionReport]) -> Result<Vec<EvolutionRow>, ReportError> {
    let first = history.first().ok_or(ReportError::Empty)?;
    let mut rows = vec![EvolutionRow {
        iteration: 0,
        version: first.version_before,
        skills: first.size_before,
        delta: 0,
        added: 0,
        merged: 0,
        pruned: 0,
    }];
    for (i, r) in history.iter().enumerate() {
        let iteration = i + 1;
        let prev = rows.last().expect("seeded above").skills;
        if r.size_before != prev {
            return Err(ReportError::Discontinuous { iteration, expected: prev, found: r.size_before });
        }
        if !r.balances() {
            return Err(ReportError::Unbalanced {
                iteration,
                before: r.size_before,
                added: r.added,
                merged: r.merged,
                pruned: r.pruned_skills,
                after: r.size_after,
            });
        }
        rows.push(EvolutionRow {
            iteration,
            version: r.version_after,
            skills: r.size_after,
            delta: r.size_after as i64 - r.size_before as i64,
            added: r.added,
            merged: r.merged,
            pruned: r.pruned_skills,
        });
    }
    Ok(rows)
}
