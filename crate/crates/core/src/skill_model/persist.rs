//! JSONL persistence and the versioned on-disk library store.
//!
//! A snapshot directory holds `manifest.json` plus one JSONL file each for
//! skills, relation priors and the failure subset. A store root holds one
//! snapshot directory per version (`v000000`, `v000001`, ...) and a `HEAD`
//! file naming the current one. Commits write the new snapshot under a
//! temporary name, rename it into place, then swap `HEAD` through an atomic
//! file rename, so a crash at any point leaves the previous head loadable.

use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{AtomicSkill, FailureRef, RelationPrior, SkillLibrary, SCHEMA_VERSION};
use crate::error::LibraryError;

const MANIFEST: &str = "manifest.json";
const SKILLS_FILE: &str = "skills.jsonl";
const RELATIONS_FILE: &str = "relations.jsonl";
const FAILURES_FILE: &str = "failures.jsonl";
const HEAD: &str = "HEAD";

/// Environment variable naming a commit stage at which the process aborts.
/// Used by crash-safety tests.
pub const CRASH_ENV: &str = "GEOSKILL_CRASH_AT";

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    schema_version: u32,
    version: u64,
    skills: String,
    relations: String,
    failures: String,
    skill_count: usize,
    relation_count: usize,
    failure_count: usize,
}

#[derive(Serialize)]
struct Line<'a, T> {
    schema_version: u32,
    #[serde(flatten)]
    item: &'a T,
}

#[derive(Deserialize)]
struct OwnedLine<T> {
    schema_version: u32,
    #[serde(flatten)]
    item: T,
}

fn write_jsonl<'a, T: Serialize + 'a>(
    path: &Path,
    items: impl IntoIterator<Item = &'a T>,
) -> Result<(), LibraryError> {
    let mut buf = Vec::new();
    for item in items {
        serde_json::to_writer(&mut buf, &Line { schema_version: SCHEMA_VERSION, item })
            .map_err(|e| LibraryError::Encode(e.to_string()))?;
        buf.push(b'\n');
    }
    write_file_synced(path, &buf)
}

fn write_file_synced(path: &Path, bytes: &[u8]) -> Result<(), LibraryError> {
    let mut f = File::create(path).map_err(|e| LibraryError::io(path, e))?;
    f.write_all(bytes).map_err(|e| LibraryError::io(path, e))?;
    f.sync_all().map_err(|e| LibraryError::io(path, e))
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, LibraryError> {
    let text = fs::read_to_string(path).map_err(|e| LibraryError::io(path, e))?;
    let mut out = Vec::new();
    let mut offset = 0usize;
    for (idx, raw) in text.split_inclusive('\n').enumerate() {
        let line = raw.trim_end_matches(['\n', '\r']);
        if !line.trim().is_empty() {
            let parsed: OwnedLine<T> = serde_json::from_str(line).map_err(|e| LibraryError::Parse {
                path: path.to_path_buf(),
                line: idx + 1,
                byte_offset: if e.is_eof() { offset + line.len() } else { offset + e.column().saturating_sub(1) },
                message: e.to_string(),
            })?;
            if parsed.schema_version != SCHEMA_VERSION {
                return Err(LibraryError::SchemaVersion {
                    path: path.to_path_buf(),
                    found: parsed.schema_version,
                    expected: SCHEMA_VERSION,
                });
            }
            out.push(parsed.item);
        }
        offset += raw.len();
    }
    Ok(out)
}

/// Writes a library snapshot into `dir` (created if missing).
pub fn write_snapshot(dir: &Path, lib: &SkillLibrary) -> Result<(), LibraryError> {
    let violations = lib.check_invariants();
    if !violations.is_empty() {
        return Err(LibraryError::Invariant(violations));
    }
    fs::create_dir_all(dir).map_err(|e| LibraryError::io(dir, e))?;
    let mut priors = lib.relation_priors.clone();
    priors.sort_by(|a, b| (&a.from, &a.to).cmp(&(&b.from, &b.to)));
    write_jsonl(&dir.join(SKILLS_FILE), lib.skills.values())?;
    write_jsonl(&dir.join(RELATIONS_FILE), priors.iter())?;
    write_jsonl(&dir.join(FAILURES_FILE), lib.failure_subset.iter())?;
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        version: lib.version,
        skills: SKILLS_FILE.into(),
        relations: RELATIONS_FILE.into(),
        failures: FAILURES_FILE.into(),
        skill_count: lib.skills.len(),
        relation_count: priors.len(),
        failure_count: lib.failure_subset.len(),
    };
    let mut bytes = serde_json::to_vec_pretty(&manifest).map_err(|e| LibraryError::Encode(e.to_string()))?;
    bytes.push(b'\n');
    write_file_synced(&dir.join(MANIFEST), &bytes)?;
    sync_dir(dir);
    Ok(())
}

/// Reads a snapshot directory and re-checks every invariant.
pub fn read_snapshot(dir: &Path) -> Result<SkillLibrary, LibraryError> {
    let manifest_path = dir.join(MANIFEST);
    if !manifest_path.exists() {
        return Err(LibraryError::NoLibrary(dir.to_path_buf()));
    }
    let text = fs::read_to_string(&manifest_path).map_err(|e| LibraryError::io(&manifest_path, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| LibraryError::Parse {
        path: manifest_path.clone(),
        line: e.line(),
        byte_offset: byte_offset_of(&text, e.line(), e.column()),
        message: e.to_string(),
    })?;
    if manifest.schema_version != SCHEMA_VERSION {
        return Err(LibraryError::SchemaVersion {
            path: manifest_path,
            found: manifest.schema_version,
            expected: SCHEMA_VERSION,
        });
    }
    let skills: Vec<AtomicSkill> = read_jsonl(&dir.join(&manifest.skills))?;
    let relation_priors: Vec<RelationPrior> = read_jsonl(&dir.join(&manifest.relations))?;
    let failure_subset: Vec<FailureRef> = read_jsonl(&dir.join(&manifest.failures))?;
    for (file, expected, found) in [
        (&manifest.skills, manifest.skill_count, skills.len()),
        (&manifest.relations, manifest.relation_count, relation_priors.len()),
        (&manifest.failures, manifest.failure_count, failure_subset.len()),
    ] {
        if expected != found {
            return Err(LibraryError::CountMismatch { path: dir.join(file), expected, found });
        }
    }
    let lib = SkillLibrary {
        version: manifest.version,
        skills: skills.into_iter().map(|s| (s.id.clone(), s)).collect(),
        relation_priors,
        failure_subset,
    };
    if lib.skills.len() != manifest.skill_count {
        return Err(LibraryError::CountMismatch {
            path: dir.join(&manifest.skills),
            expected: manifest.skill_count,
            found: lib.skills.len(),
        });
    }
    let violations = lib.check_invariants();
    if !violations.is_empty() {
        return Err(LibraryError::Invariant(violations));
    }
    Ok(lib)
}

fn byte_offset_of(text: &str, line: usize, column: usize) -> usize {
    let start: usize = text.split_inclusive('\n').take(line.saturating_sub(1)).map(str::len).sum();
    start + column.saturating_sub(1)
}

fn sync_dir(dir: &Path) {
    // Directory fsync is best effort; not every platform supports it.
    if let Ok(f) = File::open(dir) {
        let _ = f.sync_all();
    }
}

fn crash_point(stage: &str) {
    if std::env::var(CRASH_ENV).is_ok_and(|v| v == stage) {
        std::process::abort();
    }
}

/// Versioned library store rooted at a directory.
#[derive(Debug, Clone)]
pub struct LibraryStore {
    root: PathBuf,
}

impl LibraryStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        LibraryStore { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn version_dir(&self, version: u64) -> PathBuf {
        self.root.join(format!("v{version:06}"))
    }

    /// Version named by `HEAD`, if the store has one.
    pub fn head_version(&self) -> Result<Option<u64>, LibraryError> {
        let head = self.root.join(HEAD);
        if !head.exists() {
            return Ok(None);
        }
        let text = fs::read_to_string(&head).map_err(|e| LibraryError::io(&head, e))?;
        let name = text.trim();
        name.strip_prefix('v')
            .and_then(|n| n.parse().ok())
            .map(Some)
            .ok_or_else(|| LibraryError::Corrupt(format!("HEAD names {name:?}")))
    }

    pub fn load_head(&self) -> Result<SkillLibrary, LibraryError> {
        match self.head_version()? {
            Some(v) => self.load_version(v),
            None => Err(LibraryError::NoLibrary(self.root.clone())),
        }
    }

    pub fn load_version(&self, version: u64) -> Result<SkillLibrary, LibraryError> {
        let lib = read_snapshot(&self.version_dir(version))?;
        if lib.version != version {
            return Err(LibraryError::Corrupt(format!(
                "snapshot v{version:06} holds library version {}",
                lib.version
            )));
        }
        Ok(lib)
    }

    /// Commits `lib` as the new head.
    ///
    /// The version must be strictly greater than the current head, or equal
    /// to it with byte-identical content (a no-op).
    pub fn commit(&self, lib: &SkillLibrary) -> Result<(), LibraryError> {
        fs::create_dir_all(&self.root).map_err(|e| LibraryError::io(&self.root, e))?;
        self.clear_stale_temps();
        let head = self.head_version()?;
        let target = self.version_dir(lib.version);
        let tmp = self.root.join(format!(".v{:06}.tmp-{}", lib.version, std::process::id()));
        if tmp.exists() {
            fs::remove_dir_all(&tmp).map_err(|e| LibraryError::io(&tmp, e))?;
        }
        write_snapshot(&tmp, lib)?;
        match head {
            Some(h) if lib.version < h => {
                let _ = fs::remove_dir_all(&tmp);
                return Err(LibraryError::VersionRegression { head: h, attempted: lib.version });
            }
            Some(h) if lib.version == h => {
                let same = snapshots_identical(&tmp, &target);
                let _ = fs::remove_dir_all(&tmp);
                return if same {
                    Ok(())
                } else {
                    Err(LibraryError::VersionRegression { head: h, attempted: lib.version })
                };
            }
            _ => {}
        }
        if target.exists() {
            // Left over from an interrupted commit that never reached HEAD.
            fs::remove_dir_all(&target).map_err(|e| LibraryError::io(&target, e))?;
        }
        crash_point("before_snapshot_rename");
        fs::rename(&tmp, &target).map_err(|e| LibraryError::io(&target, e))?;
        sync_dir(&self.root);
        crash_point("before_head_swap");
        let head_tmp = self.root.join(format!(".HEAD.tmp-{}", std::process::id()));
        write_file_synced(&head_tmp, format!("v{:06}\n", lib.version).as_bytes())?;
        fs::rename(&head_tmp, self.root.join(HEAD)).map_err(|e| LibraryError::io(&self.root, e))?;
        sync_dir(&self.root);
        Ok(())
    }

    fn clear_stale_temps(&self) {
        let Ok(entries) = fs::read_dir(&self.root) else { return };
        for entry in entries.flatten() {
            let name = entry.file_name();
            let name = name.to_string_lossy();
            if name.starts_with(".v") && name.contains(".tmp-") {
                let _ = fs::remove_dir_all(entry.path());
            } else if name.starts_with(".HEAD.tmp-") {
                let _ = fs::remove_file(entry.path());
            }
        }
    }
}

fn snapshots_identical(a: &Path, b: &Path) -> bool {
    [MANIFEST, SKILLS_FILE, RELATIONS_FILE, FAILURES_FILE]
        .iter()
        .all(|f| matches!((fs::read(a.join(f)), fs::read(b.join(f))), (Ok(x), Ok(y)) if x == y))
}

/// Commits `lib` into the store at `path`.
pub fn save_library(path: &Path, lib: &SkillLibrary) -> Result<(), LibraryError> {
    LibraryStore::new(path).commit(lib)
}

/// Loads the head of the store at `path`, or a bare snapshot directory.
pub fn load_library(path: &Path) -> Result<SkillLibrary, LibraryError> {
    let store = LibraryStore::new(path);
    if store.head_version()?.is_some() {
        store.load_head()
    } else if path.join(MANIFEST).exists() {
        read_snapshot(path)
    } else {
        Err(LibraryError::NoLibrary(path.to_path_buf()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skill_model::{library_upsert, Provenance, Stage};

    fn sample() -> SkillLibrary {
        let a = AtomicSkill::new("Look for yellow plates", "rear plates are yellow", 0.7, Stage::Country, Provenance::expert("t1"))
            .with_countries(["NL"]);
        let mut b = AtomicSkill::new("Check bollards", "red reflector", 0.9, Stage::Local, Provenance::expert("t1"))
            .with_regions(["benelux"]);
        b.success = 3;
        b.failure = 1;
        let mut lib = library_upsert(&SkillLibrary::empty(), [a.clone(), b.clone()], false).unwrap();
        lib.relation_priors.push(RelationPrior { from: a.id.clone(), to: b.id.clone(), support: 2, failure: 0 });
        lib.failure_subset.push(FailureRef { reference: "t9".into(), skill_ids: vec![b.id] });
        lib
    }

    #[test]
    fn snapshot_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        for lib in [SkillLibrary::empty(), sample()] {
            write_snapshot(dir.path(), &lib).unwrap();
            assert_eq!(read_snapshot(dir.path()).unwrap(), lib);
        }
    }

    #[test]
    fn skill_line_uses_documented_field_names() {
        let dir = tempfile::tempdir().unwrap();
        write_snapshot(dir.path(), &sample()).unwrap();
        let text = fs::read_to_string(dir.path().join(SKILLS_FILE)).unwrap();
        let first = text.lines().next().unwrap();
        let v: serde_json::Value = serde_json::from_str(first).unwrap();
        let keys = [
            "schema_version", "id", "instruction", "heuristic", "confidence", "countries",
            "regions", "stage", "provenance", "success", "failure", "version_introduced",
        ];
        assert_eq!(v.as_object().unwrap().len(), keys.len());
        let positions: Vec<usize> = keys.iter().map(|k| first.find(&format!("\"{k}\":")).unwrap()).collect();
        assert!(positions.windows(2).all(|w| w[0] < w[1]), "{positions:?}");
        assert!(first.starts_with(r#"{"schema_version":1,"id":"#));
        assert!(text.contains(r#""provenance":{"kind":"expert","source":"t1"}"#));
    }

    #[test]
    fn truncated_file_reports_byte_offset() {
        let dir = tempfile::tempdir().unwrap();
        write_snapshot(dir.path(), &sample()).unwrap();
        let path = dir.path().join(SKILLS_FILE);
        let bytes = fs::read(&path).unwrap();
        let first_len = bytes.iter().position(|&b| b == b'\n').unwrap() + 1;
        fs::write(&path, &bytes[..first_len + 20]).unwrap();
        match read_snapshot(dir.path()) {
            Err(LibraryError::Parse { line, byte_offset, .. }) => {
                assert_eq!(line, 2);
                assert_eq!(byte_offset, first_len + 20);
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn truncation_at_line_boundary_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        write_snapshot(dir.path(), &sample()).unwrap();
        let path = dir.path().join(SKILLS_FILE);
        let text = fs::read_to_string(&path).unwrap();
        fs::write(&path, text.lines().next().unwrap().to_string() + "\n").unwrap();
        assert!(matches!(read_snapshot(dir.path()), Err(LibraryError::CountMismatch { .. })));
    }

    #[test]
    fn schema_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_snapshot(dir.path(), &sample()).unwrap();
        let path = dir.path().join(RELATIONS_FILE);
        let text = fs::read_to_string(&path).unwrap().replace("\"schema_version\":1", "\"schema_version\":7");
        fs::write(&path, text).unwrap();
        assert!(matches!(read_snapshot(dir.path()), Err(LibraryError::SchemaVersion { found: 7, .. })));
    }

    #[test]
    fn invariant_violation_on_load() {
        let dir = tempfile::tempdir().unwrap();
        write_snapshot(dir.path(), &sample()).unwrap();
        let path = dir.path().join(SKILLS_FILE);
        let text = fs::read_to_string(&path).unwrap().replace("\"confidence\":0.9", "\"confidence\":1.9");
        fs::write(&path, text).unwrap();
        assert!(matches!(read_snapshot(dir.path()), Err(LibraryError::Invariant(_))));
    }

    #[test]
    fn store_commits_versions_and_refuses_regression() {
        let dir = tempfile::tempdir().unwrap();
        let store = LibraryStore::new(dir.path());
        assert!(matches!(store.load_head(), Err(LibraryError::NoLibrary(_))));
        let v0 = sample();
        store.commit(&v0).unwrap();
        store.commit(&v0).unwrap();
        let mut v1 = v0.clone();
        v1.version = 1;
        v1.failure_subset.clear();
        store.commit(&v1).unwrap();
        assert_eq!(store.head_version().unwrap(), Some(1));
        assert_eq!(load_library(dir.path()).unwrap(), v1);
        assert_eq!(store.load_version(0).unwrap(), v0);
        assert!(matches!(store.commit(&v0), Err(LibraryError::VersionRegression { .. })));
    }

    #[test]
    fn bare_snapshot_directory_loads() {
        let dir = tempfile::tempdir().unwrap();
        write_snapshot(dir.path(), &sample()).unwrap();
        assert_eq!(load_library(dir.path()).unwrap(), sample());
    }
}
