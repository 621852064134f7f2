//! Result bundles: the output files of one run plus a `manifest.json` with
//! their SHA-256 hashes, the resolved parameters and version info.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::scenarios::{OutputFile, ScenarioOutput};

pub const MANIFEST: &str = "manifest.json";
pub const SUMMARY: &str = "summary.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub name: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub scenario: String,
    pub params: serde_json::Value,
    pub seed: u64,
    pub versions: BTreeMap<String, String>,
    pub wall_time_s: f64,
    pub files: Vec<FileEntry>,
    pub summary: serde_json::Value,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn versions() -> BTreeMap<String, String> {
    BTreeMap::from([
        ("nsgate".to_string(), nsgate::VERSION.to_string()),
        ("nsgate-cli".to_string(), env!("CARGO_PKG_VERSION").to_string()),
    ])
}

/// The `summary.json` body: metrics first, then any extra details.
pub fn summary_value(out: &ScenarioOutput) -> serde_json::Value {
    let mut map = out.details.clone();
    map.insert("metrics".into(), serde_json::to_value(&out.metrics).expect("finite map serializes"));
    serde_json::Value::Object(map)
}

/// Writes `out` into `dir` (created if needed) and returns the manifest.
pub fn write_bundle(
    dir: &Path,
    scenario: &str,
    params: serde_json::Value,
    seed: u64,
    out: &ScenarioOutput,
    wall_time_s: f64,
) -> Result<Manifest> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let summary = summary_value(out);
    let mut files: Vec<OutputFile> = out.files.clone();
    files.push(OutputFile { name: SUMMARY.into(), bytes: serde_json::to_vec_pretty(&summary)? });

    let mut entries = Vec::with_capacity(files.len());
    for f in &files {
        if f.name == MANIFEST || f.name.contains(['/', '\\']) {
            bail!("bad output file name {}", f.name);
        }
        let path = dir.join(&f.name);
        fs::write(&path, &f.bytes).with_context(|| format!("writing {}", path.display()))?;
        entries.push(FileEntry { name: f.name.clone(), sha256: sha256_hex(&f.bytes), bytes: f.bytes.len() as u64 });
    }
    let manifest = Manifest {
        scenario: scenario.to_string(),
        params,
        seed,
        versions: versions(),
        wall_time_s,
        files: entries,
        summary,
    };
    fs::write(dir.join(MANIFEST), serde_json::to_vec_pretty(&manifest)?)?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    Ok(serde_json::from_str(&text)?)
}

/// Files whose on-disk hash or size no longer matches the manifest.
pub fn verify_bundle(dir: &Path) -> Result<Vec<PathBuf>> {
    let manifest = read_manifest(dir)?;
    let mut bad = Vec::new();
    for e in &manifest.files {
        let path = dir.join(&e.name);
        match fs::read(&path) {
            Ok(b) if b.len() as u64 == e.bytes && sha256_hex(&b) == e.sha256 => {}
            _ => bad.push(path),
        }
    }
    Ok(bad)
}
