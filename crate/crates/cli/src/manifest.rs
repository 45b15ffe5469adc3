//! Run manifest: per-stage input/output digests, used both as a
//! reproducibility record and to make stages restartable.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::PipelineError;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_file(path: &Path) -> Result<String, PipelineError> {
    Ok(sha256_hex(&fs::read(path)?))
}

fn now_unix() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRecord {
    pub config_hash: String,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub status: String,
    pub started_unix: u64,
    pub finished_unix: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct RunManifest {
    pub tool_version: String,
    pub config_hash: String,
    pub simulator_config_hash: String,
    pub stages: BTreeMap<String, StageRecord>,
}

impl RunManifest {
    pub fn load_or_default(dir: &Path) -> Result<Self, PipelineError> {
        let p = dir.join(MANIFEST_FILE);
        if !p.exists() {
            return Ok(Self::default());
        }
        let text = fs::read_to_string(&p)?;
        serde_json::from_str(&text).map_err(|e| PipelineError::malformed(p, e))
    }

    pub fn save(&self, dir: &Path) -> Result<(), PipelineError> {
        let tmp = dir.join(format!("{MANIFEST_FILE}.tmp"));
        fs::write(&tmp, serde_json::to_string_pretty(self)? + "\n")?;
        fs::rename(tmp, dir.join(MANIFEST_FILE))?;
        Ok(())
    }

    /// Copy with every timestamp zeroed, for comparing repeated runs.
    pub fn without_timestamps(&self) -> Self {
        let mut m = self.clone();
        for r in m.stages.values_mut() {
            r.started_unix = 0;
            r.finished_unix = 0;
        }
        m
    }
}

/// A stage in progress: collects verified input digests, then either
/// short-circuits (nothing changed) or records fresh outputs.
pub struct Stage<'a> {
    name: &'static str,
    dir: &'a Path,
    manifest: &'a mut RunManifest,
    config_hash: String,
    inputs: BTreeMap<String, String>,
    outputs: Vec<String>,
    started: u64,
}

impl<'a> Stage<'a> {
    pub fn begin(
        name: &'static str,
        dir: &'a Path,
        manifest: &'a mut RunManifest,
        config: &serde_json::Value,
    ) -> Self {
        Self {
            name,
            dir,
            manifest,
            config_hash: sha256_hex(config.to_string().as_bytes()),
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
            started: now_unix(),
        }
    }

    pub fn name(&self) -> &'static str {
        self.name
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.dir.join(rel)
    }

    /// Verify that `upstream` produced `rel` and that the file still matches
    /// the recorded digest; returns the absolute path.
    pub fn input(&mut self, upstream: &str, rel: &str) -> Result<PathBuf, PipelineError> {
        let abs = self.dir.join(rel);
        let missing = || PipelineError::MissingArtifact {
            stage: upstream.to_string(),
            path: abs.clone(),
        };
        let recorded = self
            .manifest
            .stages
            .get(upstream)
            .and_then(|r| r.outputs.get(rel))
            .ok_or_else(missing)?
            .clone();
        if !abs.exists() {
            return Err(missing());
        }
        if sha256_file(&abs)? != recorded {
            return Err(PipelineError::StaleArtifact {
                stage: upstream.to_string(),
                path: abs,
            });
        }
        self.inputs.insert(rel.to_string(), recorded);
        Ok(abs)
    }

    /// Like [`Stage::input`], but absent files (never produced) are allowed.
    pub fn optional_input(&mut self, upstream: &str, rel: &str) -> Result<Option<PathBuf>, PipelineError> {
        let produced = self
            .manifest
            .stages
            .get(upstream)
            .is_some_and(|r| r.outputs.contains_key(rel));
        if !produced && !self.dir.join(rel).exists() {
            return Ok(None);
        }
        self.input(upstream, rel).map(Some)
    }

    /// Outputs recorded by `upstream` whose path starts with `prefix`.
    pub fn upstream_outputs(&self, upstream: &str, prefix: &str) -> Result<Vec<String>, PipelineError> {
        let r = self
            .manifest
            .stages
            .get(upstream)
            .ok_or_else(|| PipelineError::MissingArtifact {
                stage: upstream.to_string(),
                path: self.dir.join(prefix),
            })?;
        Ok(r.outputs.keys().filter(|k| k.starts_with(prefix)).cloned().collect())
    }

    pub fn record(&self, stage: &str) -> Option<&StageRecord> {
        self.manifest.stages.get(stage)
    }

    /// Drop another stage's record and delete the listed files; used when a
    /// rerun invalidates state that stage accumulated.
    pub fn forget(&mut self, stage: &str, files: &[&str]) -> Result<(), PipelineError> {
        self.manifest.stages.remove(stage);
        for f in files {
            let p = self.dir.join(f);
            if p.exists() {
                fs::remove_file(p)?;
            }
        }
        Ok(())
    }

    /// The previous record, when inputs, configuration and every output
    /// are unchanged.
    pub fn up_to_date(&self) -> Result<Option<StageRecord>, PipelineError> {
        let Some(prev) = self.manifest.stages.get(self.name) else {
            return Ok(None);
        };
        if prev.config_hash != self.config_hash || prev.inputs != self.inputs {
            return Ok(None);
        }
        for (rel, digest) in &prev.outputs {
            let p = self.dir.join(rel);
            if !p.exists() || &sha256_file(&p)? != digest {
                return Ok(None);
            }
        }
        Ok(Some(prev.clone()))
    }

    /// Register an output file (relative path) and return its absolute path,
    /// creating parent directories.
    pub fn output(&mut self, rel: &str) -> Result<PathBuf, PipelineError> {
        let p = self.dir.join(rel);
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent)?;
        }
        self.outputs.push(rel.to_string());
        Ok(p)
    }

    pub fn commit(self, status: &str) -> Result<StageRecord, PipelineError> {
        let mut outputs = BTreeMap::new();
        for rel in &self.outputs {
            outputs.insert(rel.clone(), sha256_file(&self.dir.join(rel))?);
        }
        let record = StageRecord {
            config_hash: self.config_hash,
            inputs: self.inputs,
            outputs,
            status: status.to_string(),
            started_unix: self.started,
            finished_unix: now_unix(),
        };
        self.manifest.stages.insert(self.name.to_string(), record.clone());
        self.manifest.save(self.dir)?;
        Ok(record)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_of_empty_input() {
        assert_eq!(
            sha256_hex(b""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }

    #[test]
    fn stage_records_and_detects_changes() {
        let dir = tempfile::tempdir().unwrap();
        let d = dir.path();
        let mut m = RunManifest::default();
        let cfg = serde_json::json!({"k": 1});
        {
            let mut s = Stage::begin("a", d, &mut m, &cfg);
            assert!(s.up_to_date().unwrap().is_none());
            fs::write(s.output("x.txt").unwrap(), "hello").unwrap();
            s.commit("ok").unwrap();
        }
        {
            let s = Stage::begin("a", d, &mut m, &cfg);
            assert!(s.up_to_date().unwrap().is_some());
        }
        {
            let mut s = Stage::begin("b", d, &mut m, &cfg);
            assert!(s.input("a", "x.txt").is_ok());
            assert!(matches!(s.input("a", "y.txt"), Err(PipelineError::MissingArtifact { .. })));
            assert!(s.optional_input("a", "y.txt").unwrap().is_none());
        }
        fs::write(d.join("x.txt"), "changed").unwrap();
        let mut s = Stage::begin("b", d, &mut m, &cfg);
        assert!(matches!(s.input("a", "x.txt"), Err(PipelineError::StaleArtifact { .. })));
        let reloaded = RunManifest::load_or_default(d).unwrap();
        assert_eq!(reloaded.stages.len(), 1);
    }
}
