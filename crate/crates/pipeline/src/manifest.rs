//! Line-delimited run manifest.
//!
//! Each processed source contributes its tetrad lines followed by one
//! `source` line. The source line is the commit marker: anything after the
//! last source line belongs to an interrupted source and is discarded on
//! resume.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use forge_core::qc_filters::{FilterReport, FilterVerdict, QcConfig};
use forge_core::{BBox, BinaryMask, TetradRecord};
use serde::{Deserialize, Serialize};

use crate::error::{IoContext, PipelineError, Result};

pub const MANIFEST_FILE: &str = "manifest.jsonl";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timestamps {
    pub started_ms: u64,
    pub finished_ms: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TetradLine {
    #[serde(flatten)]
    pub record: TetradRecord,
    /// Cascade counts of the record's source image.
    pub report: FilterReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamps: Option<Timestamps>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceStatus {
    Ok,
    Failed,
}

/// One post-NMS candidate with everything the reviewer needs for triage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateEntry {
    /// Position after NMS; survivors use it as their mask index.
    pub index: usize,
    /// Position in the segmenter output.
    pub raw_index: usize,
    pub segment_score: f64,
    pub classifier_score: f64,
    pub bbox: BBox,
    pub mask: BinaryMask,
    pub verdicts: Vec<FilterVerdict>,
    pub survived: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crop: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateEntry {
    pub mask_index: usize,
    pub dilate_radius: u32,
    pub ssim: f64,
    pub keep: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SourceLine {
    pub source_id: String,
    pub file: String,
    pub status: SourceStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub segmented: u64,
    pub after_nms: u64,
    pub report: FilterReport,
    pub candidates: Vec<CandidateEntry>,
    pub gate: Vec<GateEntry>,
    pub records: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamps: Option<Timestamps>,
}

impl SourceLine {
    pub fn failed(source_id: &str, file: &str, error: String, qc: &QcConfig) -> Self {
        Self {
            source_id: source_id.into(),
            file: file.into(),
            status: SourceStatus::Failed,
            error: Some(error),
            segmented: 0,
            after_nms: 0,
            report: FilterReport::empty(qc),
            candidates: Vec::new(),
            gate: Vec::new(),
            records: Vec::new(),
            timestamps: None,
        }
    }

    pub fn kept_after_gate(&self) -> u64 {
        self.gate.iter().filter(|g| g.keep).count() as u64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ManifestLine {
    Tetrad(Box<TetradLine>),
    Source(Box<SourceLine>),
}

impl ManifestLine {
    pub fn to_json_line(&self) -> String {
        let mut s = serde_json::to_string(self).expect("manifest lines serialize");
        s.push('\n');
        s
    }
}

/// Committed content of a manifest on disk.
#[derive(Debug, Default)]
pub struct Manifest {
    pub lines: Vec<ManifestLine>,
    /// Byte length of the committed prefix.
    pub committed_len: u64,
    /// Bytes past the committed prefix (torn or uncommitted lines).
    pub trailing_len: u64,
}

impl Manifest {
    pub fn tetrads(&self) -> impl Iterator<Item = &TetradLine> {
        self.lines.iter().filter_map(|l| match l {
            ManifestLine::Tetrad(t) => Some(t.as_ref()),
            _ => None,
        })
    }

    pub fn sources(&self) -> impl Iterator<Item = &SourceLine> {
        self.lines.iter().filter_map(|l| match l {
            ManifestLine::Source(s) => Some(s.as_ref()),
            _ => None,
        })
    }
}

/// Parse the committed prefix. A final line without a newline is treated as
/// torn; any other unparsable line is corruption.
pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let bytes = match std::fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(PipelineError::NoManifest(path.into())),
        Err(e) => return Err(PipelineError::Io { path: path.into(), source: e }),
    };
    let mut out = Manifest::default();
    let mut pending = Vec::new();
    let mut offset = 0usize;
    for (n, chunk) in bytes.split_inclusive(|&b| b == b'\n').enumerate() {
        let end = offset + chunk.len();
        if chunk.last() != Some(&b'\n') {
            break;
        }
        let text = std::str::from_utf8(&chunk[..chunk.len() - 1]).map_err(|e| corrupt(path, n + 1, e.to_string()))?;
        let line: ManifestLine = serde_json::from_str(text).map_err(|e| corrupt(path, n + 1, e.to_string()))?;
        let commit = matches!(line, ManifestLine::Source(_));
        pending.push(line);
        if commit {
            out.lines.append(&mut pending);
            out.committed_len = end as u64;
        }
        offset = end;
    }
    out.trailing_len = bytes.len() as u64 - out.committed_len;
    Ok(out)
}

fn corrupt(path: &Path, line: usize, reason: String) -> PipelineError {
    PipelineError::CorruptManifest { path: path.into(), line, reason }
}

/// Appends committed sources; each commit is flushed and synced.
pub struct ManifestWriter {
    path: PathBuf,
    out: BufWriter<File>,
}

impl ManifestWriter {
    /// Open for appending after cutting the file back to `committed_len`.
    pub fn open(path: &Path, committed_len: u64) -> Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path).at(path)?;
        file.set_len(committed_len).at(path)?;
        Ok(Self { path: path.into(), out: BufWriter::new(file) })
    }

    pub fn commit(&mut self, tetrads: &[TetradLine], source: &SourceLine) -> Result<()> {
        for t in tetrads {
            let line = ManifestLine::Tetrad(Box::new(t.clone())).to_json_line();
            self.out.write_all(line.as_bytes()).at(&self.path)?;
        }
        let line = ManifestLine::Source(Box::new(source.clone())).to_json_line();
        self.out.write_all(line.as_bytes()).at(&self.path)?;
        self.out.flush().at(&self.path)?;
        self.out.get_ref().sync_data().at(&self.path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn source(id: &str) -> SourceLine {
        SourceLine::failed(id, &format!("{id}.png"), "unreadable".into(), &QcConfig::default())
    }

    #[test]
    fn torn_and_uncommitted_tails_are_dropped() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(MANIFEST_FILE);
        let mut w = ManifestWriter::open(&path, 0).unwrap();
        w.commit(&[], &source("a")).unwrap();
        w.commit(&[], &source("b")).unwrap();
        drop(w);
        let clean = std::fs::read(&path).unwrap();
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(ManifestLine::Source(Box::new(source("c"))).to_json_line().as_bytes().split_at(20).0).unwrap();
        drop(f);
        let m = read_manifest(&path).unwrap();
        assert_eq!(m.sources().count(), 2);
        assert_eq!(m.committed_len, clean.len() as u64);
        assert!(m.trailing_len > 0);

        ManifestWriter::open(&path, m.committed_len).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), clean);
    }

    #[test]
    fn corrupt_line_reports_its_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(MANIFEST_FILE);
        let good = ManifestLine::Source(Box::new(source("a"))).to_json_line();
        std::fs::write(&path, format!("{good}{{not json}}\n{good}")).unwrap();
        match read_manifest(&path) {
            Err(PipelineError::CorruptManifest { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn missing_manifest() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(read_manifest(&dir.path().join("nope")), Err(PipelineError::NoManifest(_))));
    }

    #[test]
    fn line_round_trip() {
        let line = ManifestLine::Source(Box::new(source("x")));
        let text = line.to_json_line();
        assert!(text.starts_with("{\"type\":\"source\""));
        assert_eq!(serde_json::from_str::<ManifestLine>(&text).unwrap(), line);
    }
}
