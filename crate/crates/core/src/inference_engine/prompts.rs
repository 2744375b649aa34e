//! Versioned prompt templates with `{{name}}` placeholders.

use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Template {
    pub name: &'static str,
    pub text: &'static str,
}

pub const SCENE_PARSE: Template =
    Template { name: "scene_parse.v1", text: include_str!("../../prompts/scene_parse.v1.txt") };
pub const REASON: Template = Template { name: "reason.v1", text: include_str!("../../prompts/reason.v1.txt") };
pub const CORRECT: Template = Template { name: "correct.v1", text: include_str!("../../prompts/correct.v1.txt") };
pub const SYNTHESIZE: Template =
    Template { name: "synthesize.v1", text: include_str!("../../prompts/synthesize.v1.txt") };

pub const ALL: [Template; 4] = [SCENE_PARSE, REASON, CORRECT, SYNTHESIZE];

pub const DEFAULT_TASK_PRIOR: &str = "You are a geolocation analyst. Work from coarse to fine: settle the broad region first, then the country, then the local area. Weigh script and language, driving side, road markings, poles and signage, vegetation and climate, and architecture.";

/// Substitutes every `{{key}}`. Unknown keys are left as they are.
pub fn render(template: Template, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.text.len());
    let mut rest = template.text;
    while let Some(start) = rest.find("{{") {
        out.push_str(&rest[..start]);
        let after = &rest[start + 2..];
        let value = after
            .find("}}")
            .and_then(|end| vars.iter().find(|(k, _)| *k == &after[..end]).map(|(_, v)| (end, *v)));
        match value {
            Some((end, v)) => {
                out.push_str(v);
                rest = &after[end + 2..];
            }
            None => {
                out.push_str("{{");
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

/// Digest of every bundled template, logged with each inference record.
pub fn template_hash() -> String {
    let mut h = Sha256::new();
    for t in ALL {
        h.update(t.name.as_bytes());
        h.update([0]);
        h.update(t.text.as_bytes());
        h.update([0]);
    }
    hex::encode(&h.finalize()[..16])
}
