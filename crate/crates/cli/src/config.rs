//! Run configuration: one TOML file, every key explicit, `--override` for
//! one-off changes.

use std::path::{Path, PathBuf};
use std::time::Duration;

use geoskill_core::evolution::EvolutionConfig;
use geoskill_core::geo_metrics::{DEFAULT_MATCH_THRESHOLD, DEFAULT_THRESHOLDS_KM};
use geoskill_core::inference_engine::{prompts, AblationMode, Clock, InferenceConfig};
use geoskill_core::model_gateway::HttpBackendConfig;
use geoskill_core::retrieval::RetrievalParams;
use serde::{Deserialize, Serialize};

pub const CONFIG_ENV: &str = "GEOSKILL_CONFIG";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub library_dir: PathBuf,
    pub paths: Paths,
    pub backend: BackendSection,
    pub retrieval: RetrievalParams,
    pub inference: InferenceSection,
    pub evolution: EvolutionConfig,
    pub batch: BatchSection,
    pub metrics: MetricsSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Append-only inference record log.
    pub records: PathBuf,
    /// Directory for evaluation reports.
    pub reports: PathBuf,
    /// Optional certainty lexicon for `compile`; empty means built in.
    pub lexicon: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Http,
    Mock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendSection {
    pub kind: BackendKind,
    /// Mock script (JSON) used when `kind = "mock"`.
    pub mock_script: PathBuf,
    pub online: Endpoint,
    pub offline: Endpoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Endpoint {
    pub url: String,
    pub model_name: String,
    pub timeout_s: f64,
    pub max_retries: u32,
    /// Client-side rate limit; 0 disables it.
    pub requests_per_second: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferenceSection {
    pub temperature_main: f64,
    pub vote_base: f64,
    pub vote_jitter: f64,
    pub rollouts: usize,
    pub mode: AblationMode,
    pub seed: u64,
    pub task_prior: String,
    pub task_weight: f64,
    pub scene_weight: f64,
    pub max_output_tokens: u32,
    /// Pin record timestamps so mocked runs are byte-identical.
    pub fixed_clock: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BatchSection {
    pub checkpoint_every: usize,
    pub parallelism: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsSection {
    pub thresholds_km: Vec<f64>,
    pub theta_match: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            library_dir: PathBuf::from("library"),
            paths: Paths::default(),
            backend: BackendSection::default(),
            retrieval: RetrievalParams::default(),
            inference: InferenceSection::default(),
            evolution: EvolutionConfig::default(),
            batch: BatchSection::default(),
            metrics: MetricsSection::default(),
        }
    }
}

impl Default for Paths {
    fn default() -> Self {
        Paths { records: PathBuf::from("records.jsonl"), reports: PathBuf::from("reports"), lexicon: PathBuf::new() }
    }
}

impl Default for BackendSection {
    fn default() -> Self {
        BackendSection { kind: BackendKind::Http, mock_script: PathBuf::new(), online: Endpoint::default(), offline: Endpoint::default() }
    }
}

impl Default for Endpoint {
    fn default() -> Self {
        Endpoint { url: String::new(), model_name: String::new(), timeout_s: 60.0, max_retries: 3, requests_per_second: 0.0 }
    }
}

impl Default for InferenceSection {
    fn default() -> Self {
        let base = InferenceConfig::default();
        InferenceSection {
            temperature_main: base.temperature_main,
            vote_base: base.vote_base,
            vote_jitter: base.vote_jitter,
            rollouts: 1,
            mode: base.mode,
            seed: base.seed,
            task_prior: prompts::DEFAULT_TASK_PRIOR.to_string(),
            task_weight: base.task_weight,
            scene_weight: base.scene_weight,
            max_output_tokens: base.max_output_tokens,
            fixed_clock: false,
        }
    }
}

impl Default for BatchSection {
    fn default() -> Self {
        BatchSection { checkpoint_every: 50, parallelism: 1 }
    }
}

impl Default for MetricsSection {
    fn default() -> Self {
        MetricsSection { thresholds_km: DEFAULT_THRESHOLDS_KM.to_vec(), theta_match: DEFAULT_MATCH_THRESHOLD }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Read { path: PathBuf, message: String },
    #[error("{0}")]
    Parse(String),
    #[error("--override {0}: expected key=value")]
    OverrideSyntax(String),
    #[error("--override {key}: {message}")]
    Override { key: String, message: String },
    #[error("{key}: {message}")]
    Invalid { key: String, message: String },
}

fn invalid(key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { key: key.into(), message: message.into() }
}

/// Parses an override value as TOML, falling back to a bare string.
fn override_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn apply_override(root: &mut toml::Table, spec: &str) -> Result<(), ConfigError> {
    let (key, raw) = spec.split_once('=').ok_or_else(|| ConfigError::OverrideSyntax(spec.into()))?;
    let key = key.trim();
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(ConfigError::OverrideSyntax(spec.into()));
    }
    let mut table = root;
    for p in &parts[..parts.len() - 1] {
        let entry = table.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| ConfigError::Override { key: key.into(), message: format!("{p} is not a table") })?;
    }
    table.insert(parts[parts.len() - 1].to_string(), override_value(raw.trim()));
    Ok(())
}

impl RunConfig {
    /// Loads `path`, else `$GEOSKILL_CONFIG`, else defaults; then applies
    /// overrides and validates. Relative paths resolve against the
    /// directory of the config file.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig, ConfigError> {
        let env_path = std::env::var_os(CONFIG_ENV).filter(|v| !v.is_empty()).map(PathBuf::from);
        let file = path.map(Path::to_path_buf).or(env_path);
        let mut table = match &file {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| ConfigError::Read { path: p.clone(), message: e.to_string() })?;
                text.parse::<toml::Table>().map_err(|e| ConfigError::Parse(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let mut config: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Parse(e.message().to_string()))?;
        if let Some(dir) = file.as_deref().and_then(Path::parent) {
            config.resolve_paths(dir);
        }
        config.validate()?;
        Ok(config)
    }

    fn resolve_paths(&mut self, base: &Path) {
        for p in [
            &mut self.library_dir,
            &mut self.paths.records,
            &mut self.paths.reports,
            &mut self.paths.lexicon,
            &mut self.backend.mock_script,
        ] {
            if !p.as_os_str().is_empty() && p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let r = &self.retrieval;
        if r.k == 0 {
            return Err(invalid("retrieval.k", "must be at least 1"));
        }
        for (key, v) in [
            ("retrieval.score_threshold", r.score_threshold),
            ("retrieval.diversity_lambda", r.diversity_lambda),
            ("metrics.theta_match", self.metrics.theta_match),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(invalid(key, format!("{v} outside [0, 1]")));
            }
        }
        for (key, v) in [("retrieval.w_lex", r.w_lex), ("retrieval.w_sem", r.w_sem), ("retrieval.k1", r.k1)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(invalid(key, format!("{v} must be non-negative")));
            }
        }
        if r.w_lex + r.w_sem <= 0.0 {
            return Err(invalid("retrieval.w_sem", "weights sum to zero"));
        }
        if !(0.0..=1.0).contains(&r.b) {
            return Err(invalid("retrieval.b", format!("{} outside [0, 1]", r.b)));
        }
        let i = &self.inference;
        for (key, v) in [("inference.temperature_main", i.temperature_main), ("inference.vote_base", i.vote_base)] {
            if !(0.0..=2.0).contains(&v) {
                return Err(invalid(key, format!("{v} outside [0, 2]")));
            }
        }
        if !(i.vote_jitter >= 0.0) {
            return Err(invalid("inference.vote_jitter", "must be non-negative"));
        }
        if i.rollouts == 0 {
            return Err(invalid("inference.rollouts", "must be at least 1"));
        }
        if !(i.task_weight >= 0.0 && i.scene_weight >= 0.0) || i.task_weight + i.scene_weight <= 0.0 {
            return Err(invalid("inference.task_weight", "query weights must be non-negative and not both zero"));
        }
        if let Err(message) = self.evolution.validate() {
            let key = message.split_whitespace().next().unwrap_or("");
            return Err(invalid(&format!("evolution.{key}"), message));
        }
        if self.batch.checkpoint_every == 0 {
            return Err(invalid("batch.checkpoint_every", "must be at least 1"));
        }
        if self.batch.parallelism == 0 {
            return Err(invalid("batch.parallelism", "must be at least 1"));
        }
        if self.metrics.thresholds_km.is_empty() {
            return Err(invalid("metrics.thresholds_km", "empty"));
        }
        if self.metrics.thresholds_km.windows(2).any(|w| w[0] >= w[1]) || self.metrics.thresholds_km.iter().any(|t| !(*t >= 0.0)) {
            return Err(invalid("metrics.thresholds_km", "must be non-negative and strictly ascending"));
        }
        for (key, e) in [("backend.online", &self.backend.online), ("backend.offline", &self.backend.offline)] {
            if !(e.timeout_s > 0.0 && e.timeout_s.is_finite()) {
                return Err(invalid(&format!("{key}.timeout_s"), "must be positive"));
            }
            if !(e.requests_per_second >= 0.0) {
                return Err(invalid(&format!("{key}.requests_per_second"), "must be non-negative"));
            }
        }
        if !self.paths.lexicon.as_os_str().is_empty() && !self.paths.lexicon.is_file() {
            return Err(invalid("paths.lexicon", format!("{} does not exist", self.paths.lexicon.display())));
        }
        if self.backend.kind == BackendKind::Mock && !self.backend.mock_script.is_file() {
            return Err(invalid("backend.mock_script", format!("{:?} does not exist", self.backend.mock_script)));
        }
        Ok(())
    }

    /// The effective configuration with every key spelled out.
    pub fn dump(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn inference_config(&self) -> InferenceConfig {
        let i = &self.inference;
        InferenceConfig {
            retrieval: self.retrieval.clone(),
            temperature_main: i.temperature_main,
            vote_base: i.vote_base,
            vote_jitter: i.vote_jitter,
            task_prior: i.task_prior.clone(),
            task_weight: i.task_weight,
            scene_weight: i.scene_weight,
            mode: i.mode,
            seed: i.seed,
            max_output_tokens: i.max_output_tokens,
            clock: if i.fixed_clock { Clock::fixed() } else { Clock::System },
        }
    }
}

impl Endpoint {
    pub fn http_config(&self, key: &str) -> Result<HttpBackendConfig, ConfigError> {
        if self.url.is_empty() {
            return Err(invalid(&format!("{key}.url"), "required for the http backend"));
        }
        if self.model_name.is_empty() {
            return Err(invalid(&format!("{key}.model_name"), "required for the http backend"));
        }
        Ok(HttpBackendConfig {
            url: self.url.clone(),
            model_name: self.model_name.clone(),
            timeout: Duration::from_secs_f64(self.timeout_s),
            max_retries: self.max_retries,
            requests_per_second: (self.requests_per_second > 0.0).then_some(self.requests_per_second),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn load_text(text: &str, overrides: &[&str]) -> Result<RunConfig, ConfigError> {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, text).unwrap();
        let overrides: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
        RunConfig::load(Some(&path), &overrides)
    }

    #[test]
    fn defaults_match_the_documented_constants() {
        let c = RunConfig::default();
        assert_eq!(c.retrieval.k, 7);
        assert_eq!(c.inference.temperature_main, 0.2);
        assert_eq!(c.inference.vote_base, 0.1);
        assert_eq!(c.evolution.batch_size, 20);
        assert_eq!(c.batch.checkpoint_every, 50);
        c.validate().unwrap();
    }

    #[test]
    fn dump_reloads_to_the_same_config() {
        let c = RunConfig::default();
        let text = c.dump();
        for key in ["score_threshold", "theta_merge", "checkpoint_every", "thresholds_km", "mock_script", "fixed_clock"] {
            assert!(text.contains(key), "{key} missing from dump");
        }
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.dump(), text);
    }

    #[test]
    fn overrides_are_typed_and_nested() {
        let c = load_text("", &["retrieval.k=5", "inference.mode=atomic_only", "evolution.v_min=0.4", "library_dir=libs/x"]).unwrap();
        assert_eq!(c.retrieval.k, 5);
        assert_eq!(c.inference.mode, AblationMode::AtomicOnly);
        assert_eq!(c.evolution.v_min, 0.4);
        assert!(c.library_dir.ends_with("libs/x"));
    }

    #[test]
    fn errors_name_the_key() {
        let e = load_text("[retrieval]\nscore_threshold = 1.5\n", &[]).unwrap_err();
        assert!(e.to_string().starts_with("retrieval.score_threshold"), "{e}");
        let e = load_text("", &["evolution.v_min=2"]).unwrap_err();
        assert!(e.to_string().starts_with("evolution.v_min"), "{e}");
        let e = load_text("[retrieval]\nkk = 3\n", &[]).unwrap_err();
        assert!(e.to_string().contains("kk"), "{e}");
        assert!(matches!(load_text("", &["nonsense"]), Err(ConfigError::OverrideSyntax(_))));
    }

    #[test]
    fn mock_backend_needs_a_script() {
        let e = load_text("[backend]\nkind = \"mock\"\n", &[]).unwrap_err();
        assert!(e.to_string().starts_with("backend.mock_script"), "{e}");
    }

    #[test]
    fn http_endpoint_requires_url_and_model() {
        let e = Endpoint::default().http_config("backend.online").unwrap_err();
        assert!(e.to_string().starts_with("backend.online.url"));
    }
}
