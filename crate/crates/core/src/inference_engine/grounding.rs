use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::scene::SceneParse;
use crate::graph_composer::{validate_trajectory, TaskSkillGraph, TrajectoryViolation};
use crate::skill_model::{is_iso2, GeoCoordinate};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GroundedClaim {
    pub claim: String,
    #[serde(default)]
    pub evidence_refs: Vec<String>,
    #[serde(default)]
    pub skill_refs: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeoPrediction {
    pub country: String,
    #[serde(default)]
    pub region: String,
    #[serde(flatten)]
    pub coordinates: GeoCoordinate,
    pub confidence: f64,
    #[serde(default)]
    pub evidence: Vec<GroundedClaim>,
    #[serde(default)]
    pub trajectory: Vec<String>,
}

impl GeoPrediction {
    /// Parses a model reply; the country code is upper-cased.
    pub fn from_reply(text: &str) -> Result<GeoPrediction, String> {
        let mut p: GeoPrediction = serde_json::from_str(text).map_err(|e| format!("prediction reply: {e}"))?;
        p.country = p.country.trim().to_ascii_uppercase();
        Ok(p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GroundingViolation {
    NoClaims,
    InvalidCountry { country: String },
    ConfidenceOutOfRange { confidence: f64 },
    NoEvidence { claim: usize },
    UnresolvedEvidence { claim: usize, reference: String },
    NoSkill { claim: usize },
    UnattributableClaim { claim: usize, skill: String },
    Trajectory { violation: TrajectoryViolation },
}

impl fmt::Display for GroundingViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GroundingViolation::NoClaims => write!(f, "the prediction has no evidence claims"),
            GroundingViolation::InvalidCountry { country } => write!(f, "country {country:?} is not an ISO-2 code"),
            GroundingViolation::ConfidenceOutOfRange { confidence } => {
                write!(f, "confidence {confidence} is outside [0, 1]")
            }
            GroundingViolation::NoEvidence { claim } => write!(f, "claim {claim} cites no scene evidence"),
            GroundingViolation::UnresolvedEvidence { claim, reference } => {
                write!(f, "claim {claim} cites {reference:?}, which is not an observed scene field")
            }
            GroundingViolation::NoSkill { claim } => write!(f, "unattributable claim {claim}: it cites no skill"),
            GroundingViolation::UnattributableClaim { claim, skill } => {
                write!(f, "unattributable claim {claim}: skill {skill} was not retrieved")
            }
            GroundingViolation::Trajectory { violation } => {
                write!(f, "trajectory step {}: {}", violation.step, violation.reason)
            }
        }
    }
}

impl GroundingViolation {
    /// Index of the offending claim, if the violation is claim-level.
    pub fn claim(&self) -> Option<usize> {
        match self {
            GroundingViolation::NoEvidence { claim }
            | GroundingViolation::UnresolvedEvidence { claim, .. }
            | GroundingViolation::NoSkill { claim }
            | GroundingViolation::UnattributableClaim { claim, .. } => Some(*claim),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GroundingPolicy {
    /// Claims must cite at least one retrieved skill. Off only when no
    /// skills are retrieved at all.
    pub require_skill_refs: bool,
}

impl Default for GroundingPolicy {
    fn default() -> Self {
        GroundingPolicy { require_skill_refs: true }
    }
}

/// Dual-grounding check: every claim cites observed scene fields and
/// retrieved skills.
pub fn validate_grounding(
    prediction: &GeoPrediction,
    scene: &SceneParse,
    retrieved: &[String],
) -> Result<(), Vec<GroundingViolation>> {
    validate_grounding_with(prediction, scene, retrieved, GroundingPolicy::default())
}

pub fn validate_grounding_with(
    prediction: &GeoPrediction,
    scene: &SceneParse,
    retrieved: &[String],
    policy: GroundingPolicy,
) -> Result<(), Vec<GroundingViolation>> {
    let retrieved: HashSet<&str> = retrieved.iter().map(String::as_str).collect();
    let mut out = Vec::new();
    if !is_iso2(&prediction.country) {
        out.push(GroundingViolation::InvalidCountry { country: prediction.country.clone() });
    }
    if !(0.0..=1.0).contains(&prediction.confidence) {
        out.push(GroundingViolation::ConfidenceOutOfRange { confidence: prediction.confidence });
    }
    if prediction.evidence.is_empty() {
        out.push(GroundingViolation::NoClaims);
    }
    for (i, c) in prediction.evidence.iter().enumerate() {
        if c.evidence_refs.is_empty() {
            out.push(GroundingViolation::NoEvidence { claim: i });
        }
        for r in &c.evidence_refs {
            if !scene.resolves(r) {
                out.push(GroundingViolation::UnresolvedEvidence { claim: i, reference: r.clone() });
            }
        }
        if c.skill_refs.is_empty() && policy.require_skill_refs {
            out.push(GroundingViolation::NoSkill { claim: i });
        }
        for s in &c.skill_refs {
            if !retrieved.contains(s.as_str()) {
                out.push(GroundingViolation::UnattributableClaim { claim: i, skill: s.clone() });
            }
        }
    }
    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}

/// Grounding plus trajectory validity against the query graph.
pub fn validate_prediction(
    prediction: &GeoPrediction,
    scene: &SceneParse,
    retrieved: &[String],
    graph: &TaskSkillGraph,
    policy: GroundingPolicy,
) -> Result<(), Vec<GroundingViolation>> {
    let mut out = validate_grounding_with(prediction, scene, retrieved, policy).err().unwrap_or_default();
    if let Err(violation) = validate_trajectory(graph, &prediction.trajectory) {
        out.push(GroundingViolation::Trajectory { violation });
    }
    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference_engine::scene::DrivingSide;

    fn scene() -> SceneParse {
        SceneParse {
            ocr_snippets: vec!["Camí".into()],
            driving_side: DrivingSide::Right,
            ..Default::default()
        }
    }

    fn claim(text: &str, ev: &[&str], sk: &[&str]) -> GroundedClaim {
        GroundedClaim {
            claim: text.into(),
            evidence_refs: ev.iter().map(|s| s.to_string()).collect(),
            skill_refs: sk.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn pred(evidence: Vec<GroundedClaim>) -> GeoPrediction {
        GeoPrediction {
            country: "AD".into(),
            region: "Andorra la Vella".into(),
            coordinates: GeoCoordinate::new(42.5, 1.52).unwrap(),
            confidence: 0.8,
            evidence,
            trajectory: vec![],
        }
    }

    #[test]
    fn grounded_claims_pass() {
        let p = pred(vec![claim("Catalan road name", &["ocr_snippets[0]"], &["s1"])]);
        assert_eq!(validate_grounding(&p, &scene(), &["s1".into()]), Ok(()));
    }

    #[test]
    fn unknown_skill_is_unattributable() {
        let p = pred(vec![claim("x", &["driving_side"], &["ghost"])]);
        let v = validate_grounding(&p, &scene(), &["s1".into()]).unwrap_err();
        assert_eq!(v.len(), 1);
        assert!(v[0].to_string().contains("unattributable claim"));
    }

    #[test]
    fn empty_evidence_is_flagged() {
        let p = pred(vec![claim("x", &[], &["s1"])]);
        let v = validate_grounding(&p, &scene(), &["s1".into()]).unwrap_err();
        assert_eq!(v, vec![GroundingViolation::NoEvidence { claim: 0 }]);
    }

    #[test]
    fn relaxed_policy_allows_skill_free_claims() {
        let p = pred(vec![claim("x", &["driving_side"], &[])]);
        assert!(validate_grounding(&p, &scene(), &[]).is_err());
        assert!(validate_grounding_with(&p, &scene(), &[], GroundingPolicy { require_skill_refs: false }).is_ok());
    }

    #[test]
    fn reply_parsing_flattens_coordinates() {
        let p = GeoPrediction::from_reply(
            r#"{"country":"ad","region":"Ordino","lat":42.55,"lon":1.53,"confidence":0.7,"evidence":[],"trajectory":[]}"#,
        )
        .unwrap();
        assert_eq!(p.country, "AD");
        assert_eq!(p.coordinates.lat, 42.55);
        let json = serde_json::to_value(&p).unwrap();
        assert_eq!(json["lon"], 1.53);
        assert!(GeoPrediction::from_reply(r#"{"country":"AD","lat":95,"lon":0,"confidence":0.5}"#).is_err());
    }
}
