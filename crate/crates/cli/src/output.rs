//! Command output directories.
//!
//! Every command writes into one directory and finishes with
//! `manifest.<tag>.json` (config fingerprint plus a SHA-256 per output file)
//! and `run_config.<tag>.toml` (the effective config, defaults applied).
//! All files go through temp-file-and-rename.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use seam_core::{util, Result, SeamError};
use serde::Serialize;

use crate::config::RunConfig;

/// Version of the output tree layout.
pub const LAYOUT_VERSION: u32 = 1;

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    layout_version: u32,
    command: &'a str,
    config_fingerprint: &'a str,
    /// Path relative to the command directory → SHA-256 of its bytes.
    outputs: &'a BTreeMap<String, String>,
}

/// JSON document wrapper that carries the config fingerprint.
#[derive(Debug, Serialize)]
pub struct Envelope<'a, T: Serialize> {
    pub layout_version: u32,
    pub config_fingerprint: &'a str,
    pub kind: &'a str,
    #[serde(flatten)]
    pub body: &'a T,
}

pub struct Output {
    dir: PathBuf,
    tag: String,
    fingerprint: String,
    files: BTreeMap<String, String>,
}

impl Output {
    pub fn new(dir: impl Into<PathBuf>, tag: &str, cfg: &RunConfig) -> Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).map_err(|e| SeamError::io(&dir, e))?;
        Ok(Self {
            dir,
            tag: tag.to_string(),
            fingerprint: cfg.fingerprint()?,
            files: BTreeMap::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn bytes(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        util::write_atomic(&self.path(name), bytes)?;
        self.files.insert(name.to_string(), util::sha256_hex(bytes));
        Ok(())
    }

    /// Pretty JSON wrapped in an [`Envelope`] of the given kind.
    pub fn json<T: Serialize>(&mut self, name: &str, kind: &str, body: &T) -> Result<()> {
        let env = Envelope {
            layout_version: LAYOUT_VERSION,
            config_fingerprint: &self.fingerprint,
            kind,
            body,
        };
        let mut bytes = serde_json::to_vec_pretty(&env)?;
        bytes.push(b'\n');
        self.bytes(name, &bytes)
    }

    /// Records a file some other writer already placed in the directory.
    pub fn track(&mut self, name: &str) -> Result<()> {
        let p = self.path(name);
        let bytes = std::fs::read(&p).map_err(|e| SeamError::io(&p, e))?;
        self.files
            .insert(name.to_string(), util::sha256_hex(&bytes));
        Ok(())
    }

    pub fn finish(self, cfg: &RunConfig) -> Result<Vec<PathBuf>> {
        util::write_atomic(
            &self.path(&format!("run_config.{}.toml", self.tag)),
            cfg.to_toml()?.as_bytes(),
        )?;
        let manifest = Manifest {
            layout_version: LAYOUT_VERSION,
            command: &self.tag,
            config_fingerprint: &self.fingerprint,
            outputs: &self.files,
        };
        util::write_json_atomic(
            &self.path(&format!("manifest.{}.json", self.tag)),
            &manifest,
        )?;
        Ok(self.files.keys().map(|k| self.dir.join(k)).collect())
    }
}

/// CSV text from a header and rows.
pub fn csv_text<I, R>(header: &[&str], rows: I) -> Result<String>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator,
    R::Item: AsRef<[u8]>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| SeamError::Data(format!("csv: {e}"));
    w.write_record(header).map_err(err)?;
    for row in rows {
        w.write_record(row).map_err(err)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| SeamError::Data(format!("csv: {e}")))?;
    String::from_utf8(bytes).map_err(|e| SeamError::Data(format!("csv: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_lists_hashes_and_embeds_fingerprint() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig::default();
        let mut out = Output::new(dir.path(), "t", &cfg).unwrap();
        out.bytes("a.txt", b"hello").unwrap();
        out.json("b.json", "thing", &serde_json::json!({"x": 1}))
            .unwrap();
        out.finish(&cfg).unwrap();
        let m: serde_json::Value = serde_json::from_str(
            &std::fs::read_to_string(dir.path().join("manifest.t.json")).unwrap(),
        )
        .unwrap();
        let fp = cfg.fingerprint().unwrap();
        assert_eq!(m["config_fingerprint"], fp.as_str());
        assert_eq!(m["outputs"]["a.txt"], util::sha256_hex(b"hello").as_str());
        let b: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("b.json")).unwrap())
                .unwrap();
        assert_eq!(b["config_fingerprint"], fp.as_str());
        assert_eq!(b["kind"], "thing");
        assert_eq!(b["x"], 1);
        let back = RunConfig::load(&dir.path().join("run_config.t.toml")).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn csv_quotes_fields() {
        let s = csv_text(&["a", "b"], [["x,y", "z"]]).unwrap();
        assert_eq!(s, "a,b\n\"x,y\",z\n");
    }
}
