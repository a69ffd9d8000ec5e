//! Artifact writing: provenance headers and atomic write-then-rename.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::CliError;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Where an artifact came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Provenance {
    pub command: String,
    pub config_sha256: String,
    pub seed: u64,
}

impl Provenance {
    pub fn meta(&self) -> BTreeMap<String, String> {
        BTreeMap::from([
            ("command".to_string(), self.command.clone()),
            ("config_sha256".to_string(), self.config_sha256.clone()),
            ("hattn".to_string(), TOOL_VERSION.to_string()),
            ("hybrid_attn".to_string(), hybrid_attn::VERSION.to_string()),
            ("seed".to_string(), self.seed.to_string()),
        ])
    }

    /// `# key=value ...` comment line placed above CSV content.
    pub fn comment(&self) -> String {
        let fields: Vec<String> = self.meta().into_iter().map(|(k, v)| format!("{k}={v}")).collect();
        format!("# {}\n", fields.join(" "))
    }
}

/// Writes `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| CliError::runtime(dir.display(), e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| CliError::runtime(dir.display(), e))?;
    tmp.write_all(bytes).and_then(|_| tmp.flush()).map_err(|e| CliError::runtime(path.display(), e))?;
    tmp.persist(path).map_err(|e| CliError::runtime(path.display(), e.error))?;
    Ok(())
}

/// Output directory plus the provenance stamped on everything written to it.
#[derive(Debug, Clone)]
pub struct Sink {
    pub dir: PathBuf,
    pub provenance: Provenance,
    written: Vec<PathBuf>,
}

impl Sink {
    pub fn new(dir: PathBuf, provenance: Provenance) -> Self {
        Self { dir, provenance, written: Vec::new() }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }

    pub fn bytes(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf, CliError> {
        let path = self.path(name);
        write_atomic(&path, bytes)?;
        log::info!("wrote {}", path.display());
        self.written.push(path.clone());
        Ok(path)
    }

    /// CSV body from `fill`, preceded by the provenance comment.
    pub fn csv(&mut self, name: &str, fill: impl FnOnce(&mut Vec<u8>) -> hybrid_attn::Result<()>) -> Result<PathBuf, CliError> {
        let mut buf = self.provenance.comment().into_bytes();
        fill(&mut buf).map_err(|e| CliError::runtime(name, e))?;
        self.bytes(name, &buf)
    }

    /// `{"meta": {...}, "data": value}`, pretty-printed with a trailing newline.
    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf, CliError> {
        #[derive(Serialize)]
        struct Envelope<'a, T> {
            meta: BTreeMap<String, String>,
            data: &'a T,
        }
        let mut text = serde_json::to_string_pretty(&Envelope { meta: self.provenance.meta(), data: value })
            .map_err(|e| CliError::runtime(name, e))?;
        text.push('\n');
        self.bytes(name, text.as_bytes())
    }
}

/// Reads the `data` member of a JSON artifact.
pub fn read_json_data(path: &Path) -> Result<serde_json::Value, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::runtime(path.display(), e))?;
    let mut v: serde_json::Value = serde_json::from_str(&text).map_err(|e| CliError::runtime(path.display(), e))?;
    Ok(v.get_mut("data").map(serde_json::Value::take).unwrap_or(v))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prov() -> Provenance {
        Provenance { command: "cost".into(), config_sha256: "ab".into(), seed: 3 }
    }

    #[test]
    fn comment_lists_sorted_fields() {
        let c = prov().comment();
        assert!(c.starts_with("# command=cost config_sha256=ab hattn="));
        assert!(c.ends_with("seed=3\n"));
    }

    #[test]
    fn atomic_write_replaces_and_leaves_no_temporaries() {
        let dir = tempfile::tempdir().unwrap();
        let mut sink = Sink::new(dir.path().join("nested"), prov());
        sink.bytes("a.txt", b"one").unwrap();
        sink.bytes("a.txt", b"two").unwrap();
        assert_eq!(std::fs::read(sink.path("a.txt")).unwrap(), b"two");
        assert_eq!(std::fs::read_dir(&sink.dir).unwrap().count(), 1);
    }

    #[test]
    fn json_envelope_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let mut sink = Sink::new(dir.path().to_path_buf(), prov());
        let p = sink.json("x.json", &serde_json::json!({"score": 9.5})).unwrap();
        assert_eq!(read_json_data(&p).unwrap()["score"], 9.5);
        let raw: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap();
        assert_eq!(raw["meta"]["seed"], "3");
    }
}
