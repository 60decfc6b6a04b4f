//! Corpus manifests: a JSON array of recording entries, or line-oriented
//! text with tab-separated `id  data  [reference]  [mask]` fields. Paths are
//! resolved relative to the manifest file.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use diarize_core::pipeline::{self, RecordingInput};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    /// WAV or feature file.
    pub data: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<PathBuf>,
}

pub fn parse_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading manifest {}", path.display()))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let entries = if text.trim_start().starts_with('[') {
        serde_json::from_str::<Vec<ManifestEntry>>(&text)
            .with_context(|| format!("parsing JSON manifest {}", path.display()))?
    } else {
        let mut entries = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() < 2 {
                bail!(
                    "{}:{}: expected 'id<TAB>data[<TAB>reference[<TAB>mask]]'",
                    path.display(),
                    lineno + 1
                );
            }
            entries.push(ManifestEntry {
                id: fields[0].to_string(),
                data: PathBuf::from(fields[1]),
                reference: fields.get(2).filter(|s| !s.is_empty()).map(PathBuf::from),
                mask: fields.get(3).filter(|s| !s.is_empty()).map(PathBuf::from),
            });
        }
        entries
    };
    if entries.is_empty() {
        bail!("manifest {} lists no recordings", path.display());
    }
    Ok(entries
        .into_iter()
        .map(|mut e| {
            e.data = resolve(base, &e.data);
            e.reference = e.reference.map(|p| resolve(base, &p));
            e.mask = e.mask.map(|p| resolve(base, &p));
            e
        })
        .collect())
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

pub fn to_input(entry: &ManifestEntry) -> Result<RecordingInput> {
    pipeline::input_from_paths(
        &entry.id,
        &entry.data,
        entry.mask.as_deref(),
        entry.reference.as_deref(),
    )
    .with_context(|| format!("loading recording '{}'", entry.id))
}
