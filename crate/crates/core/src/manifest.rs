//! JSON-lines corpus manifest: one `{audio_path, belt_path, speaker_id, split}`
//! record per utterance. Relative paths resolve against the manifest's directory.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsio;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Parameter(format!(
                "unknown split {other:?}; expected train, val or test"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub audio_path: String,
    pub belt_path: String,
    pub speaker_id: String,
    pub split: Split,
}

impl ManifestRecord {
    /// Utterance identifier: the audio file stem.
    pub fn utterance_id(&self) -> String {
        Path::new(&self.audio_path)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| self.audio_path.clone())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub root: PathBuf,
    pub records: Vec<ManifestRecord>,
}

impl Manifest {
    pub fn resolve(&self, path: &str) -> PathBuf {
        let p = Path::new(path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }
}

pub fn parse_manifest(text: &str, root: &Path) -> Result<Manifest> {
    let records = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| Error::Format(format!("manifest line {}: {e}", i + 1)))
        })
        .collect::<Result<Vec<ManifestRecord>>>()?;
    Ok(Manifest {
        root: root.to_path_buf(),
        records,
    })
}

pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let bytes = fsio::read(path)?;
    let text = String::from_utf8(bytes)
        .map_err(|_| Error::Format(format!("{}: manifest is not UTF-8", path.display())))?;
    let root = path.parent().unwrap_or(Path::new("."));
    parse_manifest(&text, root)
}

pub fn write_manifest(path: &Path, manifest: &Manifest) -> Result<()> {
    fsio::write_atomic(path, manifest.to_jsonl()?.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_records_and_resolves_paths() {
        let text = r#"{"audio_path":"a/u1.wav","belt_path":"a/u1.csv","speaker_id":"s1","split":"train"}

{"audio_path":"/abs/u2.wav","belt_path":"u2.csv","speaker_id":"s2","split":"test"}
"#;
        let m = parse_manifest(text, Path::new("/data")).unwrap();
        assert_eq!(m.records.len(), 2);
        assert_eq!(m.resolve(&m.records[0].audio_path), PathBuf::from("/data/a/u1.wav"));
        assert_eq!(m.resolve(&m.records[1].audio_path), PathBuf::from("/abs/u2.wav"));
        assert_eq!(m.split(Split::Test).count(), 1);
        assert_eq!(m.records[0].utterance_id(), "u1");
        let again = parse_manifest(&m.to_jsonl().unwrap(), Path::new("/data")).unwrap();
        assert_eq!(again, m);
    }

    #[test]
    fn bad_lines_name_the_line() {
        let text = "{\"audio_path\":\"x\",\"belt_path\":\"y\",\"speaker_id\":\"s\",\"split\":\"dev\"}";
        let err = parse_manifest(text, Path::new(".")).unwrap_err();
        assert!(err.to_string().contains("line 1"), "{err}");
    }

    #[test]
    fn split_names() {
        for s in [Split::Train, Split::Val, Split::Test] {
            assert_eq!(s.to_string().parse::<Split>().unwrap(), s);
        }
        assert!("dev".parse::<Split>().is_err());
    }
}
