//! Clip manifests: `clip_id,audio_path,feature_path,label_path,split`, paths
//! relative to the manifest's directory.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub clip_id: String,
    pub audio_path: String,
    pub feature_path: Option<String>,
    pub label_path: String,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub rows: Vec<ManifestRow>,
    /// Directory relative paths are resolved against.
    pub root: PathBuf,
}

impl Manifest {
    /// Rejects duplicate clip ids, which also keeps splits disjoint.
    pub fn new(rows: Vec<ManifestRow>, root: PathBuf) -> Result<Self, CliError> {
        let mut seen = HashSet::new();
        for r in &rows {
            if r.clip_id.is_empty() || !seen.insert(r.clip_id.as_str()) {
                return Err(CliError::Config(format!("duplicate or empty clip id {:?}", r.clip_id)));
            }
        }
        Ok(Self { rows, root })
    }

    pub fn resolve(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestRow> {
        self.rows.iter().filter(move |r| r.split == split)
    }

    pub fn to_csv(&self) -> Result<String, CliError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["clip_id", "audio_path", "feature_path", "label_path", "split"])
            .map_err(|e| CliError::Config(e.to_string()))?;
        for r in &self.rows {
            w.write_record([
                r.clip_id.as_str(),
                &r.audio_path,
                r.feature_path.as_deref().unwrap_or(""),
                &r.label_path,
                r.split.as_str(),
            ])
            .map_err(|e| CliError::Config(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        std::fs::write(path, self.to_csv()?).map_err(|e| CliError::io(path, e))
    }

    /// Parses a manifest and checks that every referenced file exists.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        let mut rows = Vec::new();
        for (i, rec) in reader.records().enumerate() {
            let rec = rec.map_err(|e| CliError::format(path, e.to_string()))?;
            if rec.len() != 5 {
                return Err(CliError::format(path, format!("row {}: expected 5 fields", i + 1)));
            }
            let split = rec[4].parse().map_err(|e: String| CliError::format(path, e))?;
            rows.push(ManifestRow {
                clip_id: rec[0].to_string(),
                audio_path: rec[1].to_string(),
                feature_path: Some(rec[2].to_string()).filter(|s| !s.is_empty()),
                label_path: rec[3].to_string(),
                split,
            });
        }
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let m = Self::new(rows, root)?;
        for r in &m.rows {
            for rel in [Some(&r.audio_path), r.feature_path.as_ref(), Some(&r.label_path)]
                .into_iter()
                .flatten()
            {
                let p = m.resolve(rel);
                if !p.is_file() {
                    return Err(CliError::MissingFile(p));
                }
            }
        }
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(id: &str, split: Split) -> ManifestRow {
        ManifestRow {
            clip_id: id.into(),
            audio_path: format!("{id}.wav"),
            feature_path: None,
            label_path: format!("{id}.lab"),
            split,
        }
    }

    #[test]
    fn round_trip_and_missing_files() {
        let dir = tempfile::tempdir().unwrap();
        let m = Manifest::new(vec![row("a", Split::Train), row("b", Split::Test)], dir.path().into()).unwrap();
        let path = dir.path().join("manifest.csv");
        m.write(&path).unwrap();
        let err = Manifest::load(&path).unwrap_err();
        assert!(matches!(err, CliError::MissingFile(ref p) if p.ends_with("a.wav")));
        for f in ["a.wav", "a.lab", "b.wav", "b.lab"] {
            std::fs::write(dir.path().join(f), b"").unwrap();
        }
        assert_eq!(Manifest::load(&path).unwrap(), m);
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let rows = vec![row("a", Split::Train), row("a", Split::Dev)];
        assert!(Manifest::new(rows, PathBuf::new()).is_err());
    }
}
