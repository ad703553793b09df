//! Run manifests and CSV sidecars.
//!
//! Every command writes `<artifact>.manifest.json` next to its main artifact,
//! recording the argument list, the resolved configuration and SHA-256
//! digests of every file it read or wrote. The command's tabular output is
//! mirrored to `<artifact>.csv` alongside.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, Read};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const TOOL: &str = env!("CARGO_PKG_NAME");
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    pub role: String,
    pub path: PathBuf,
    pub sha256: String,
    pub bytes: u64,
}

impl Artifact {
    pub fn of(role: &str, path: &Path) -> CliResult<Self> {
        let (sha256, bytes) = sha256_file(path)?;
        Ok(Self {
            role: role.to_string(),
            path: path.to_path_buf(),
            sha256,
            bytes,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub tool_version: String,
    pub command: String,
    /// Arguments after the program name.
    pub args: Vec<String>,
    pub seed: Option<u64>,
    pub config: BTreeMap<String, String>,
    pub inputs: Vec<Artifact>,
    pub outputs: Vec<Artifact>,
}

/// An input or output whose current digest differs from the recorded one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mismatch {
    pub role: String,
    pub path: PathBuf,
    pub recorded: String,
    /// `None` when the file can no longer be read.
    pub actual: Option<String>,
}

impl RunManifest {
    pub fn new(command: &str, args: &[String]) -> Self {
        Self {
            tool: TOOL.to_string(),
            tool_version: TOOL_VERSION.to_string(),
            command: command.to_string(),
            args: args.to_vec(),
            seed: None,
            config: BTreeMap::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn input(&mut self, role: &str, path: &Path) -> CliResult<()> {
        self.inputs.push(Artifact::of(role, path)?);
        Ok(())
    }

    pub fn output(&mut self, role: &str, path: &Path) -> CliResult<()> {
        self.outputs.push(Artifact::of(role, path)?);
        Ok(())
    }

    pub fn save(&self, path: &Path) -> CliResult<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::data(path, format!("malformed manifest: {e}")))
    }

    /// Inputs whose files changed or vanished since the manifest was written.
    pub fn verify_inputs(&self) -> Vec<Mismatch> {
        verify(&self.inputs)
    }

    pub fn verify_outputs(&self) -> Vec<Mismatch> {
        verify(&self.outputs)
    }
}

fn verify(artifacts: &[Artifact]) -> Vec<Mismatch> {
    artifacts
        .iter()
        .filter_map(|a| {
            let actual = sha256_file(&a.path).ok().map(|(h, _)| h);
            (actual.as_deref() != Some(a.sha256.as_str())).then(|| Mismatch {
                role: a.role.clone(),
                path: a.path.clone(),
                recorded: a.sha256.clone(),
                actual,
            })
        })
        .collect()
}

/// Hex SHA-256 digest and length of a file.
pub fn sha256_file(path: &Path) -> CliResult<(String, u64)> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut reader = BufReader::new(file);
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    let mut total = 0u64;
    loop {
        let n = reader.read(&mut buf).map_err(|e| CliError::io(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
        total += n as u64;
    }
    Ok((hex::encode(hasher.finalize()), total))
}

/// `path` with `suffix` appended to its file name.
pub fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(suffix);
    path.with_file_name(name)
}

/// Header plus rows, comma separated.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> CliResult<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| CliError::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_of_known_content() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("abc.txt");
        std::fs::write(&p, b"abc").unwrap();
        let (h, n) = sha256_file(&p).unwrap();
        assert_eq!(h, "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
        assert_eq!(n, 3);
    }

    #[test]
    fn verification_flags_changed_and_missing_inputs() {
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a"), dir.path().join("b"));
        std::fs::write(&a, b"one").unwrap();
        std::fs::write(&b, b"two").unwrap();
        let mut m = RunManifest::new("eval", &["--data".into(), "a".into()]);
        m.input("data", &a).unwrap();
        m.input("model", &b).unwrap();
        let path = dir.path().join("m.json");
        m.save(&path).unwrap();
        let back = RunManifest::load(&path).unwrap();
        assert_eq!(back, m);
        assert!(back.verify_inputs().is_empty());
        std::fs::write(&a, b"uno").unwrap();
        std::fs::remove_file(&b).unwrap();
        let bad = back.verify_inputs();
        assert_eq!(bad.len(), 2);
        assert!(bad[0].actual.is_some());
        assert!(bad[1].actual.is_none());
    }

    #[test]
    fn sidecar_appends_to_file_name() {
        assert_eq!(sidecar(Path::new("runs/model.lora"), ".csv"), PathBuf::from("runs/model.lora.csv"));
    }

    #[test]
    fn csv_rendering() {
        let mut t = Table::new(&["a", "b"]);
        t.push(vec!["1".into(), "x".into()]);
        assert_eq!(t.to_csv(), "a,b\n1,x\n");
    }
}
