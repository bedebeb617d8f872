//! Run reports and atomic output files.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct RunReport {
    pub command: String,
    pub seed: u64,
    pub inputs: Vec<FileDigest>,
    pub parameters: BTreeMap<String, Value>,
    pub results: BTreeMap<String, Value>,
    pub outputs: Vec<FileDigest>,
    pub warnings: Vec<String>,
    /// Set when outputs were written but the run counts as a numerical failure.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

impl RunReport {
    pub fn new(command: &str, seed: u64) -> Self {
        Self {
            command: command.to_string(),
            seed,
            inputs: Vec::new(),
            parameters: BTreeMap::new(),
            results: BTreeMap::new(),
            outputs: Vec::new(),
            warnings: Vec::new(),
            failure: None,
        }
    }

    pub fn param(&mut self, key: &str, value: impl Into<Value>) {
        self.parameters.insert(key.to_string(), value.into());
    }

    pub fn result(&mut self, key: &str, value: impl Into<Value>) {
        self.results.insert(key.to_string(), value.into());
    }

    pub fn warn(&mut self, message: impl Into<String>) {
        self.warnings.push(message.into());
    }

    /// Reads an input file and records its digest.
    pub fn read_input(&mut self, path: &Path) -> Result<String, CliError> {
        let bytes = std::fs::read(path).map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))?;
        self.inputs.push(FileDigest {
            path: path.display().to_string(),
            sha256: sha256_hex(&bytes),
        });
        String::from_utf8(bytes).map_err(|_| CliError::Parse(format!("{}: not valid UTF-8", path.display())))
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Output directory; every write goes through a temp file and a rename.
#[derive(Debug, Clone)]
pub struct OutDir {
    root: PathBuf,
}

impl OutDir {
    pub fn create(root: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(root)
            .map_err(|e| CliError::Io(format!("cannot create output directory {}: {e}", root.display())))?;
        Ok(Self {
            root: root.to_path_buf(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn write(&self, report: &mut RunReport, name: &str, contents: &str) -> Result<PathBuf, CliError> {
        let path = self.write_untracked(name, contents)?;
        report.outputs.push(FileDigest {
            path: name.to_string(),
            sha256: sha256_hex(contents.as_bytes()),
        });
        Ok(path)
    }

    pub fn write_untracked(&self, name: &str, contents: &str) -> Result<PathBuf, CliError> {
        let target = self.root.join(name);
        let io = |e: std::io::Error| CliError::Io(format!("cannot write {}: {e}", target.display()));
        let mut tmp = tempfile::NamedTempFile::new_in(&self.root).map_err(io)?;
        tmp.write_all(contents.as_bytes()).map_err(io)?;
        tmp.as_file().sync_all().map_err(io)?;
        tmp.persist(&target).map_err(|e| io(e.error))?;
        Ok(target)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_of_known_input() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn atomic_write_and_report() {
        let dir = tempfile::tempdir().unwrap();
        let out = OutDir::create(&dir.path().join("nested")).unwrap();
        let mut rep = RunReport::new("test", 7);
        let p = out.write(&mut rep, "a.csv", "x_s\n1\n").unwrap();
        assert_eq!(std::fs::read_to_string(p).unwrap(), "x_s\n1\n");
        out.write(&mut rep, "a.csv", "x_s\n2\n").unwrap();
        assert_eq!(rep.outputs.len(), 2);
        let leftovers = std::fs::read_dir(dir.path().join("nested")).unwrap().count();
        assert_eq!(leftovers, 1);
        assert!(rep.to_json().contains("\"seed\": 7"));
    }
}
