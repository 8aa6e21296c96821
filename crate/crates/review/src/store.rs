use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::{Catalog, Result, ReviewError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Good,
    Bad,
}

/// One audit-log entry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelEvent {
    pub id: String,
    pub label: Label,
    pub annotator: String,
    pub at_ms: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExportLine {
    pub id: String,
    pub crop: String,
    pub label: Label,
}

/// Append-only label log plus the latest label per id.
pub struct LabelStore {
    path: PathBuf,
    file: File,
    latest: BTreeMap<String, LabelEvent>,
    events: usize,
}

impl LabelStore {
    /// Open or create the log and replay it. A torn final line (no newline)
    /// is cut off; any other unreadable line is an error.
    pub fn open(path: &Path) -> Result<Self> {
        let io = |source| ReviewError::Io { path: path.into(), source };
        let bytes = match std::fs::read(path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(io(e)),
        };
        let mut latest = BTreeMap::new();
        let mut events = 0;
        let mut good_len = 0;
        for (n, chunk) in bytes.split_inclusive(|&b| b == b'\n').enumerate() {
            if chunk.last() != Some(&b'\n') {
                break;
            }
            let ev: LabelEvent = serde_json::from_slice(&chunk[..chunk.len() - 1])
                .map_err(|e| ReviewError::CorruptLog { path: path.into(), line: n + 1, reason: e.to_string() })?;
            latest.insert(ev.id.clone(), ev);
            events += 1;
            good_len += chunk.len();
        }
        let file = OpenOptions::new().create(true).append(true).open(path).map_err(io)?;
        file.set_len(good_len as u64).map_err(io)?;
        Ok(Self { path: path.into(), file, latest, events })
    }

    /// Record a label for an id present in `catalog`; persisted before return.
    pub fn submit(&mut self, catalog: &Catalog, id: &str, label: Label, annotator: &str) -> Result<LabelEvent> {
        if catalog.get(id).is_none() {
            return Err(ReviewError::UnknownId(id.into()));
        }
        let at_ms = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0);
        let ev = LabelEvent { id: id.into(), label, annotator: annotator.into(), at_ms };
        let mut line = serde_json::to_vec(&ev).expect("event serializes");
        line.push(b'\n');
        let io = |source| ReviewError::Io { path: self.path.clone(), source };
        self.file.write_all(&line).map_err(io)?;
        self.file.sync_data().map_err(io)?;
        self.latest.insert(ev.id.clone(), ev.clone());
        self.events += 1;
        Ok(ev)
    }

    pub fn get(&self, id: &str) -> Option<&LabelEvent> {
        self.latest.get(id)
    }

    pub fn len(&self) -> usize {
        self.latest.len()
    }

    pub fn is_empty(&self) -> bool {
        self.latest.is_empty()
    }

    /// Number of events in the audit log, including overwritten ones.
    pub fn event_count(&self) -> usize {
        self.events
    }

    /// Latest label per id, sorted by id.
    pub fn export(&self, catalog: &Catalog) -> Result<Vec<ExportLine>> {
        if self.latest.is_empty() {
            return Err(ReviewError::EmptyStore);
        }
        Ok(self
            .latest
            .values()
            .map(|ev| ExportLine {
                id: ev.id.clone(),
                crop: catalog.get(&ev.id).map(|i| i.crop.clone()).unwrap_or_default(),
                label: ev.label,
            })
            .collect())
    }

    pub fn export_jsonl(&self, catalog: &Catalog) -> Result<String> {
        let mut out = String::new();
        for line in self.export(catalog)? {
            out.push_str(&serde_json::to_string(&line).expect("export line serializes"));
            out.push('\n');
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ReviewItem;

    fn catalog(n: usize) -> Catalog {
        let items = (0..n)
            .map(|i| ReviewItem {
                id: format!("s_c{i:03}"),
                source_id: "s".into(),
                source_image: "s.png".into(),
                crop: format!("candidates/s_c{i:03}.png"),
                verdicts: vec![],
            })
            .collect();
        Catalog::new("/nowhere", items)
    }

    #[test]
    fn last_write_wins_and_survives_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("labels.jsonl");
        let cat = catalog(3);
        let mut s = LabelStore::open(&path).unwrap();
        s.submit(&cat, "s_c001", Label::Good, "ann").unwrap();
        s.submit(&cat, "s_c001", Label::Bad, "ann2").unwrap();
        s.submit(&cat, "s_c000", Label::Good, "ann").unwrap();
        assert_eq!(s.get("s_c001").unwrap().label, Label::Bad);
        assert_eq!(s.event_count(), 3);
        let first = s.export_jsonl(&cat).unwrap();
        drop(s);

        let s = LabelStore::open(&path).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.event_count(), 3);
        assert_eq!(s.export_jsonl(&cat).unwrap(), first);
        assert!(first.starts_with("{\"id\":\"s_c000\""));
    }

    #[test]
    fn unknown_id_and_empty_export() {
        let dir = tempfile::tempdir().unwrap();
        let cat = catalog(1);
        let mut s = LabelStore::open(&dir.path().join("l.jsonl")).unwrap();
        assert!(matches!(s.export(&cat), Err(ReviewError::EmptyStore)));
        assert!(matches!(s.submit(&cat, "zzz", Label::Good, "a"), Err(ReviewError::UnknownId(_))));
    }

    #[test]
    fn torn_tail_is_dropped() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("l.jsonl");
        let cat = catalog(2);
        let mut s = LabelStore::open(&path).unwrap();
        s.submit(&cat, "s_c000", Label::Good, "a").unwrap();
        drop(s);
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(b"{\"id\":\"s_c001\",\"lab").unwrap();
        drop(f);
        let mut s = LabelStore::open(&path).unwrap();
        assert_eq!(s.len(), 1);
        s.submit(&cat, "s_c001", Label::Bad, "a").unwrap();
        drop(s);
        assert_eq!(LabelStore::open(&path).unwrap().len(), 2);
    }

    #[test]
    fn corrupt_line_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("l.jsonl");
        std::fs::write(&path, "garbage\n").unwrap();
        assert!(matches!(LabelStore::open(&path), Err(ReviewError::CorruptLog { line: 1, .. })));
    }
}
