//! Tab-separated dataset manifests and exclusion lists.
//!
//! The header names the columns. `track_id` and `work_id` are required;
//! `audio_path`, `me`, `ha`, `rh` and `ly` are optional. Empty cells and `-`
//! mean "absent". Relative paths are resolved against the manifest directory.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::eval::CliqueLabels;
use crate::feature::FeatureKind;

use super::formats::write_atomic;

#[derive(Debug, Clone, PartialEq)]
pub struct TrackRecord {
    pub track_id: String,
    pub work_id: String,
    pub audio_path: Option<PathBuf>,
    pub feature_paths: [Option<PathBuf>; 4],
}

impl TrackRecord {
    pub fn new(track_id: impl Into<String>, work_id: impl Into<String>) -> Self {
        TrackRecord {
            track_id: track_id.into(),
            work_id: work_id.into(),
            audio_path: None,
            feature_paths: Default::default(),
        }
    }

    pub fn feature_path(&self, kind: FeatureKind) -> Option<&Path> {
        self.feature_paths[kind.index()].as_deref()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetManifest {
    pub records: Vec<TrackRecord>,
}

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn position(&self, track_id: &str) -> Option<usize> {
        self.records.iter().position(|r| r.track_id == track_id)
    }

    pub fn labels(&self) -> CliqueLabels {
        let ids: Vec<&str> = self.records.iter().map(|r| r.work_id.as_str()).collect();
        CliqueLabels::from_ids(&ids)
    }

    /// Records lacking `kind`, by track id.
    pub fn missing_feature(&self, kind: FeatureKind) -> Vec<&str> {
        self.records
            .iter()
            .filter(|r| r.feature_path(kind).is_none())
            .map(|r| r.track_id.as_str())
            .collect()
    }
}

const COLUMNS: [&str; 7] = ["track_id", "work_id", "audio_path", "me", "ha", "rh", "ly"];

fn manifest_err(path: &Path, line: usize, detail: impl Into<String>) -> Error {
    Error::Manifest {
        path: path.to_path_buf(),
        line,
        detail: detail.into(),
    }
}

fn valid_id(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || "._-+".contains(c)) && s != "." && s != ".."
}

/// Parse a manifest without touching the referenced files.
pub fn parse_manifest(text: &str, path: &Path, base: &Path) -> Result<DatasetManifest> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim_end_matches('\r')));
    let (_, header) = lines
        .by_ref()
        .find(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
        .ok_or_else(|| manifest_err(path, 1, "missing header line"))?;
    let cols: Vec<&str> = header.split('\t').map(str::trim).collect();
    let mut index = [None; 7];
    for (ci, c) in cols.iter().enumerate() {
        let k = COLUMNS
            .iter()
            .position(|n| n == c)
            .ok_or_else(|| manifest_err(path, 1, format!("unknown column {c:?}")))?;
        if index[k].replace(ci).is_some() {
            return Err(manifest_err(path, 1, format!("column {c:?} repeated")));
        }
    }
    if index[0].is_none() || index[1].is_none() {
        return Err(manifest_err(path, 1, "header must contain track_id and work_id"));
    }
    let resolve = |cell: &str| -> Option<PathBuf> {
        let cell = cell.trim();
        (!cell.is_empty() && cell != "-").then(|| base.join(cell))
    };
    let mut seen: HashMap<String, usize> = HashMap::new();
    let mut records = Vec::new();
    for (n, line) in lines {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let cells: Vec<&str> = line.split('\t').collect();
        if cells.len() != cols.len() {
            return Err(manifest_err(path, n, format!("expected {} fields, found {}", cols.len(), cells.len())));
        }
        let cell = |k: usize| index[k].map(|i| cells[i]);
        let track_id = cell(0).unwrap().trim().to_string();
        let work_id = cell(1).unwrap().trim().to_string();
        if !valid_id(&track_id) {
            return Err(manifest_err(path, n, format!("invalid track id {track_id:?}")));
        }
        if work_id.is_empty() {
            return Err(manifest_err(path, n, "empty work id"));
        }
        if let Some(&first) = seen.get(&track_id) {
            return Err(Error::DuplicateTrack {
                id: track_id,
                first,
                second: n,
            });
        }
        seen.insert(track_id.clone(), n);
        let mut rec = TrackRecord::new(track_id, work_id);
        rec.audio_path = cell(2).and_then(resolve);
        for k in FeatureKind::ALL {
            rec.feature_paths[k.index()] = cell(3 + k.index()).and_then(resolve);
        }
        records.push(rec);
    }
    Ok(DatasetManifest { records })
}

/// Load and validate a manifest. Every referenced file must exist; all
/// missing paths are reported together.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let base = fs::canonicalize(base).map_err(|e| Error::io(base, e))?;
    let m = parse_manifest(&text, path, &base)?;
    let missing: Vec<PathBuf> = m
        .records
        .iter()
        .flat_map(|r| r.audio_path.iter().chain(r.feature_paths.iter().flatten()))
        .filter(|p| !p.exists())
        .cloned()
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingFiles(missing));
    }
    Ok(m)
}

fn relative_to(p: &Path, dir: &Path) -> String {
    p.strip_prefix(dir).unwrap_or(p).to_string_lossy().into_owned()
}

/// Render with all seven columns; paths under `dir` are written relative to it.
pub fn format_manifest(m: &DatasetManifest, dir: &Path) -> String {
    let mut out = COLUMNS.join("\t");
    out.push('\n');
    let cell = |p: &Option<PathBuf>| p.as_deref().map(|p| relative_to(p, dir)).unwrap_or_else(|| "-".into());
    for r in &m.records {
        let mut fields = vec![r.track_id.clone(), r.work_id.clone(), cell(&r.audio_path)];
        fields.extend(r.feature_paths.iter().map(cell));
        out.push_str(&fields.join("\t"));
        out.push('\n');
    }
    out
}

pub fn write_manifest(path: &Path, m: &DatasetManifest) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let dir = fs::canonicalize(dir).map_err(|e| Error::io(dir, e))?;
    write_atomic(path, format_manifest(m, &dir).as_bytes())
}

/// Track ids to drop, one per line; `#` starts a comment.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExclusionList {
    pub ids: BTreeSet<String>,
}

impl ExclusionList {
    pub fn parse(text: &str) -> Self {
        let ids = text
            .lines()
            .map(|l| l.split('#').next().unwrap_or("").trim())
            .filter(|l| !l.is_empty())
            .map(String::from)
            .collect();
        ExclusionList { ids }
    }

    pub fn load(path: &Path) -> Result<Self> {
        fs::read_to_string(path).map(|t| Self::parse(&t)).map_err(|e| Error::io(path, e))
    }

    pub fn contains(&self, id: &str) -> bool {
        self.ids.contains(id)
    }
}

/// Drop excluded (and instrumental) tracks. Works left with one track stay
/// as distractors. Returns the pruned manifest and the ids that matched no
/// record.
pub fn prune(
    manifest: &DatasetManifest,
    exclusions: &ExclusionList,
    instrumental: Option<&ExclusionList>,
) -> (DatasetManifest, Vec<String>) {
    let drop = |id: &str| exclusions.contains(id) || instrumental.is_some_and(|l| l.contains(id));
    let known: BTreeSet<&str> = manifest.records.iter().map(|r| r.track_id.as_str()).collect();
    let unknown: Vec<String> = exclusions
        .ids
        .iter()
        .chain(instrumental.iter().flat_map(|l| l.ids.iter()))
        .filter(|id| !known.contains(id.as_str()))
        .cloned()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    for id in &unknown {
        log::warn!("exclusion id {id:?} is not in the manifest");
    }
    let records = manifest.records.iter().filter(|r| !drop(&r.track_id)).cloned().collect();
    (DatasetManifest { records }, unknown)
}
