//! Run manifests: what ran, what it wrote and which checks passed.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::hex;

pub const MANIFEST_NAME: &str = "manifest.json";

/// Subdirectory written by `export-plotdata`; not part of the run itself.
pub const PLOTDATA_DIR: &str = "plotdata";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Comparison {
    AtMost,
    AtLeast,
    /// `value` is a 0/1 flag that must be 1.
    True,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub comparison: Comparison,
    pub passed: bool,
}

impl Check {
    pub fn at_most(name: &str, value: f64, threshold: f64) -> Self {
        Self::new(name, value, threshold, Comparison::AtMost)
    }

    pub fn at_least(name: &str, value: f64, threshold: f64) -> Self {
        Self::new(name, value, threshold, Comparison::AtLeast)
    }

    pub fn holds(name: &str, ok: bool) -> Self {
        Self::new(name, if ok { 1.0 } else { 0.0 }, 1.0, Comparison::True)
    }

    fn new(name: &str, value: f64, threshold: f64, comparison: Comparison) -> Self {
        let mut c = Check { name: name.to_string(), value, threshold, comparison, passed: false };
        c.passed = c.evaluate();
        c
    }

    /// Recomputes the verdict from `value` and `threshold`; NaN never passes.
    pub fn evaluate(&self) -> bool {
        match self.comparison {
            Comparison::AtMost => self.value <= self.threshold,
            Comparison::AtLeast => self.value >= self.threshold,
            Comparison::True => self.value == 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub scenario: String,
    pub schema_version: u32,
    pub config_hash: String,
    pub code_version: String,
    pub seed: Option<u64>,
    pub threads: usize,
    pub dry_run: bool,
    /// Seconds since the Unix epoch.
    pub started: f64,
    pub finished: f64,
    pub files: Vec<FileEntry>,
    pub checks: Vec<Check>,
    pub error: Option<String>,
}

impl RunManifest {
    pub fn passed(&self) -> bool {
        self.error.is_none() && self.checks.iter().all(|c| c.passed)
    }

    pub fn load(path: &Path) -> std::io::Result<Self> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }

    /// Writes to a temporary name and renames, so readers never see a
    /// partial manifest.
    pub fn write_atomic(&self, dir: &Path) -> std::io::Result<PathBuf> {
        let tmp = dir.join(format!(".{MANIFEST_NAME}.tmp"));
        let target = dir.join(MANIFEST_NAME);
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(text.as_bytes())?;
            f.write_all(b"\n")?;
            f.sync_all()?;
        }
        fs::rename(&tmp, &target)?;
        Ok(target)
    }
}

pub fn now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

pub fn file_entry(dir: &Path, name: &str) -> std::io::Result<FileEntry> {
    let bytes = fs::read(dir.join(name))?;
    Ok(FileEntry { path: name.to_string(), bytes: bytes.len() as u64, sha256: sha256_hex(&bytes) })
}

/// Problems found when re-verifying a manifest against its directory.
pub fn verify(manifest: &RunManifest, dir: &Path) -> std::io::Result<Vec<String>> {
    let mut problems = Vec::new();
    for f in &manifest.files {
        match file_entry(dir, &f.path) {
            Ok(actual) if actual.sha256 == f.sha256 && actual.bytes == f.bytes => {}
            Ok(_) => problems.push(format!("{}: checksum mismatch", f.path)),
            Err(e) => problems.push(format!("{}: {e}", f.path)),
        }
    }
    let mut present = Vec::new();
    for entry in fs::read_dir(dir)? {
        let entry = entry?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name == MANIFEST_NAME || name == PLOTDATA_DIR {
            continue;
        }
        present.push(name);
    }
    present.sort();
    for name in present {
        if !manifest.files.iter().any(|f| f.path == name) {
            problems.push(format!("{name}: present in the directory but not listed"));
        }
    }
    for c in &manifest.checks {
        if c.evaluate() != c.passed {
            problems.push(format!("check {}: recorded verdict disagrees with its value", c.name));
        }
        if !c.evaluate() {
            problems.push(format!("check {}: failed ({} vs {})", c.name, c.value, c.threshold));
        }
    }
    if let Some(e) = &manifest.error {
        problems.push(format!("run error: {e}"));
    }
    Ok(problems)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checks_evaluate() {
        assert!(Check::at_most("a", 1.0, 1.0).passed);
        assert!(!Check::at_most("a", f64::NAN, 1.0).passed);
        assert!(Check::at_least("b", 3.0, 3.0).passed);
        assert!(!Check::holds("c", false).passed);
    }

    #[test]
    fn verify_finds_tampering_and_strays() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("a.csv"), "x\n1\n").unwrap();
        let m = RunManifest {
            scenario: "free-spread".into(),
            schema_version: 1,
            config_hash: "0".into(),
            code_version: "0".into(),
            seed: None,
            threads: 1,
            dry_run: false,
            started: 0.0,
            finished: 0.0,
            files: vec![file_entry(dir.path(), "a.csv").unwrap()],
            checks: vec![Check::at_most("ok", 0.0, 1.0)],
            error: None,
        };
        m.write_atomic(dir.path()).unwrap();
        assert!(verify(&m, dir.path()).unwrap().is_empty());
        let back = RunManifest::load(&dir.path().join(MANIFEST_NAME)).unwrap();
        assert_eq!(back, m);
        fs::write(dir.path().join("a.csv"), "x\n2\n").unwrap();
        fs::write(dir.path().join("stray.txt"), "").unwrap();
        let problems = verify(&m, dir.path()).unwrap();
        assert_eq!(problems.len(), 2, "{problems:?}");
    }
}
