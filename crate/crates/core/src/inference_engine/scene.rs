use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DrivingSide {
    Left,
    Right,
    #[default]
    Unknown,
}

impl DrivingSide {
    pub fn as_str(self) -> &'static str {
        match self {
            DrivingSide::Left => "left",
            DrivingSide::Right => "right",
            DrivingSide::Unknown => "unknown",
        }
    }
}

/// Structured visual cues extracted from one image.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SceneParse {
    pub script_language_patterns: Vec<String>,
    pub driving_side: DrivingSide,
    pub road_marking_style: String,
    pub pole_signage: String,
    pub vegetation_climate: String,
    pub built_environment: String,
    pub ocr_snippets: Vec<String>,
}

const TEXT_FIELDS: [&str; 4] = ["road_marking_style", "pole_signage", "vegetation_climate", "built_environment"];
const LIST_FIELDS: [&str; 2] = ["script_language_patterns", "ocr_snippets"];

fn clean(s: &str) -> String {
    let t = s.trim();
    if t.eq_ignore_ascii_case("unknown") {
        String::new()
    } else {
        t.to_string()
    }
}

impl SceneParse {
    fn text_field(&self, name: &str) -> &str {
        match name {
            "road_marking_style" => &self.road_marking_style,
            "pole_signage" => &self.pole_signage,
            "vegetation_climate" => &self.vegetation_climate,
            "built_environment" => &self.built_environment,
            _ => unreachable!("not a text field: {name}"),
        }
    }

    fn text_field_mut(&mut self, name: &str) -> &mut String {
        match name {
            "road_marking_style" => &mut self.road_marking_style,
            "pole_signage" => &mut self.pole_signage,
            "vegetation_climate" => &mut self.vegetation_climate,
            "built_environment" => &mut self.built_environment,
            _ => unreachable!("not a text field: {name}"),
        }
    }

    fn list_field(&self, name: &str) -> &[String] {
        match name {
            "script_language_patterns" => &self.script_language_patterns,
            "ocr_snippets" => &self.ocr_snippets,
            _ => unreachable!("not a list field: {name}"),
        }
    }

    fn list_field_mut(&mut self, name: &str) -> &mut Vec<String> {
        match name {
            "script_language_patterns" => &mut self.script_language_patterns,
            "ocr_snippets" => &mut self.ocr_snippets,
            _ => unreachable!("not a list field: {name}"),
        }
    }

    /// Tolerant reader: missing or mistyped fields fall back to
    /// unknown/empty with a warning, unknown fields are ignored.
    pub fn from_json(text: &str) -> Result<(SceneParse, Vec<String>), String> {
        let value: Value = serde_json::from_str(text).map_err(|e| format!("scene reply is not JSON: {e}"))?;
        let Value::Object(map) = value else {
            return Err("scene reply is not a JSON object".into());
        };
        let mut scene = SceneParse::default();
        let mut warnings = Vec::new();
        for name in LIST_FIELDS {
            match map.get(name) {
                None | Some(Value::Null) => warnings.push(format!("missing field {name}")),
                Some(Value::Array(items)) => {
                    for item in items {
                        match item.as_str().map(clean) {
                            Some(s) if !s.is_empty() => scene.list_field_mut(name).push(s),
                            Some(_) => {}
                            None => warnings.push(format!("non-string item in {name} ignored")),
                        }
                    }
                }
                Some(Value::String(s)) if !clean(s).is_empty() => {
                    warnings.push(format!("{name} given as a single string"));
                    scene.list_field_mut(name).push(clean(s));
                }
                Some(_) => warnings.push(format!("field {name} has the wrong type")),
            }
        }
        for name in TEXT_FIELDS {
            match map.get(name) {
                None | Some(Value::Null) => warnings.push(format!("missing field {name}")),
                Some(Value::String(s)) => *scene.text_field_mut(name) = clean(s),
                Some(_) => warnings.push(format!("field {name} has the wrong type")),
            }
        }
        match map.get("driving_side") {
            None | Some(Value::Null) => warnings.push("missing field driving_side".into()),
            Some(Value::String(s)) => {
                scene.driving_side = match s.trim().to_ascii_lowercase().as_str() {
                    "left" => DrivingSide::Left,
                    "right" => DrivingSide::Right,
                    "unknown" | "" => DrivingSide::Unknown,
                    other => {
                        warnings.push(format!("unrecognized driving_side {other:?}"));
                        DrivingSide::Unknown
                    }
                }
            }
            Some(_) => warnings.push("field driving_side has the wrong type".into()),
        }
        Ok((scene, warnings))
    }

    /// Every citable path with its value, in a fixed order.
    pub fn evidence_paths(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        for (i, s) in self.script_language_patterns.iter().enumerate() {
            out.push((format!("script_language_patterns[{i}]"), s.clone()));
        }
        if self.driving_side != DrivingSide::Unknown {
            out.push(("driving_side".into(), self.driving_side.as_str().into()));
        }
        for name in TEXT_FIELDS {
            let v = self.text_field(name);
            if !v.is_empty() {
                out.push((name.to_string(), v.to_string()));
            }
        }
        for (i, s) in self.ocr_snippets.iter().enumerate() {
            out.push((format!("ocr_snippets[{i}]"), s.clone()));
        }
        out
    }

    /// True when `path` names an observed, non-empty cue.
    pub fn resolves(&self, path: &str) -> bool {
        let path = path.trim();
        if LIST_FIELDS.contains(&path) {
            return !self.list_field(path).is_empty();
        }
        if let Some((name, idx)) = path.strip_suffix(']').and_then(|p| p.split_once('[')) {
            return LIST_FIELDS.contains(&name) && idx.parse::<usize>().is_ok_and(|i| i < self.list_field(name).len());
        }
        if path == "driving_side" {
            return self.driving_side != DrivingSide::Unknown;
        }
        TEXT_FIELDS.contains(&path) && !self.text_field(path).is_empty()
    }

    /// One `path: value` line per observed cue.
    pub fn render_evidence(&self) -> String {
        let mut out = String::new();
        for (path, value) in self.evidence_paths() {
            let _ = writeln!(out, "{path}: {value}");
        }
        if out.is_empty() {
            out.push_str("(no usable cues)\n");
        }
        out
    }

    /// Stable text form used as the scene part of retrieval queries.
    pub fn canonical_text(&self) -> String {
        let mut parts = Vec::new();
        if !self.script_language_patterns.is_empty() {
            parts.push(format!("script: {}", self.script_language_patterns.join(", ")));
        }
        if self.driving_side != DrivingSide::Unknown {
            parts.push(format!("driving on the {}", self.driving_side.as_str()));
        }
        let labels = ["road markings", "poles and signage", "vegetation and climate", "built environment"];
        for (name, label) in TEXT_FIELDS.iter().zip(labels) {
            let v = self.text_field(name);
            if !v.is_empty() {
                parts.push(format!("{label}: {v}"));
            }
        }
        if !self.ocr_snippets.is_empty() {
            parts.push(format!("text: {}", self.ocr_snippets.join(", ")));
        }
        parts.join("; ")
    }
}
