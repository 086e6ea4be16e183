//! Immutable, zone-structured object store.
//!
//! Objects are write-once part files; visibility is governed by dataset
//! manifests committed with stage-then-atomic-rename. A reader always sees a
//! complete manifest version, never a partial file set.
//!
//! On-disk layout:
//! ```text
//! <lake_root>/zones/<zone>/<dataset>/[<partition>/]<filename>
//! <lake_root>/manifests/<zone>/<dataset>/v<version>.json
//! <lake_root>/manifests/<zone>/<dataset>/CURRENT      (decimal version)
//! ```

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{LakeError, Result};
use crate::schema::SchemaDescriptor;
use crate::util::{clean_staging, now_millis, write_atomic, write_atomic_new};

/// Name of the one content-hash algorithm this store records.
pub const HASH_ALGO: &str = "sha256";

const COMMIT_RETRIES: u32 = 8;

/// Refinement stage of lake storage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Zone {
    Landing,
    Raw,
    Curated,
}

impl Zone {
    pub fn as_str(&self) -> &'static str {
        match self {
            Zone::Landing => "landing",
            Zone::Raw => "raw",
            Zone::Curated => "curated",
        }
    }
}

impl fmt::Display for Zone {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Zone {
    type Err = LakeError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "landing" => Ok(Zone::Landing),
            "raw" => Ok(Zone::Raw),
            "curated" => Ok(Zone::Curated),
            other => Err(LakeError::InvalidKey(format!(
                "unknown zone {other:?} (expected landing|raw|curated)"
            ))),
        }
    }
}

/// `[a-z0-9_-]+` — dataset and other name-strings.
pub fn validate_name(name: &str) -> Result<()> {
    if !name.is_empty()
        && name
            .chars()
            .all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_' || c == '-')
    {
        Ok(())
    } else {
        Err(LakeError::InvalidKey(format!(
            "name {name:?} must match [a-z0-9_-]+"
        )))
    }
}

fn validate_segment(kind: &str, seg: &str, allow_empty: bool) -> Result<()> {
    if seg.is_empty() {
        return if allow_empty {
            Ok(())
        } else {
            Err(LakeError::InvalidKey(format!("{kind} must not be empty")))
        };
    }
    let ok = seg
        .chars()
        .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-' || c == '.');
    if !ok || seg == "." || seg == ".." {
        return Err(LakeError::InvalidKey(format!(
            "{kind} {seg:?} must be a single path segment of [A-Za-z0-9._-]+"
        )));
    }
    Ok(())
}

/// Address of one stored object.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ObjectKey {
    pub zone: Zone,
    pub dataset: String,
    /// Optional single path segment; empty means the dataset root.
    pub partition: String,
    pub filename: String,
}

impl ObjectKey {
    pub fn new(zone: Zone, dataset: &str, partition: &str, filename: &str) -> Result<Self> {
        let key = ObjectKey {
            zone,
            dataset: dataset.to_string(),
            partition: partition.to_string(),
            filename: filename.to_string(),
        };
        key.validate()?;
        Ok(key)
    }

    pub fn validate(&self) -> Result<()> {
        validate_name(&self.dataset)?;
        validate_segment("partition", &self.partition, true)?;
        validate_segment("filename", &self.filename, false)?;
        Ok(())
    }

    /// Path relative to the lake root: `zones/<zone>/<dataset>/[<partition>/]<filename>`.
    pub fn relative_path(&self) -> PathBuf {
        let mut p = PathBuf::from("zones");
        p.push(self.zone.as_str());
        p.push(&self.dataset);
        if !self.partition.is_empty() {
            p.push(&self.partition);
        }
        p.push(&self.filename);
        p
    }
}

impl fmt::Display for ObjectKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.relative_path().display())
    }
}

/// A stored file plus its integrity metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectRef {
    pub key: ObjectKey,
    pub size_bytes: u64,
    /// Lowercase hex digest of the payload under [`HASH_ALGO`].
    pub content_hash: String,
    /// Number of records in the file, when the writer knows it.
    pub record_count: Option<u64>,
}

impl ObjectRef {
    pub fn with_record_count(mut self, n: u64) -> Self {
        self.record_count = Some(n);
        self
    }
}

/// Atomically committed file-set version of one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub dataset: String,
    pub zone: Zone,
    pub version: u64,
    pub files: Vec<ObjectRef>,
    pub committed_at: u64,
    pub schema_hint: Option<SchemaDescriptor>,
    pub hash_algo: String,
}

pub fn content_hash(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Handle on a lake's object storage. Cheap to share behind an `Arc`;
/// one committing writer per dataset is serialized by an internal lock.
pub struct LakeStore {
    root: PathBuf,
    commit_locks: Mutex<HashMap<(Zone, String), Arc<Mutex<()>>>>,
}

impl LakeStore {
    /// Opens the store rooted at `root`, running crash recovery: orphaned
    /// staged temp files are deleted and each dataset's CURRENT pointer is
    /// reconciled to the latest parseable manifest.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        let store = LakeStore {
            root,
            commit_locks: Mutex::new(HashMap::new()),
        };
        clean_staging(&store.staging_dir())?;
        store.recover()?;
        Ok(store)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn staging_dir(&self) -> PathBuf {
        self.root.join(".staging")
    }

    fn manifest_dir(&self, zone: Zone, dataset: &str) -> PathBuf {
        self.root
            .join("manifests")
            .join(zone.as_str())
            .join(dataset)
    }

    fn manifest_path(&self, zone: Zone, dataset: &str, version: u64) -> PathBuf {
        self.manifest_dir(zone, dataset).join(format!("v{version}.json"))
    }

    fn current_path(&self, zone: Zone, dataset: &str) -> PathBuf {
        self.manifest_dir(zone, dataset).join("CURRENT")
    }

    pub fn object_path(&self, key: &ObjectKey) -> PathBuf {
        self.root.join(key.relative_path())
    }

    fn dataset_lock(&self, zone: Zone, dataset: &str) -> Arc<Mutex<()>> {
        let mut map = self.commit_locks.lock().unwrap();
        map.entry((zone, dataset.to_string()))
            .or_insert_with(|| Arc::new(Mutex::new(())))
            .clone()
    }

    /// Stages `payload` and atomically links it into place. The object stays
    /// invisible to readers until a manifest commit references it.
    pub fn put_object(&self, key: &ObjectKey, payload: &[u8]) -> Result<ObjectRef> {
        key.validate()?;
        let path = self.object_path(key);
        if path.exists() {
            return Err(LakeError::DuplicateObject(key.to_string()));
        }
        match write_atomic_new(&self.staging_dir(), &path, payload) {
            Ok(()) => {}
            Err(LakeError::Io(e)) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                return Err(LakeError::DuplicateObject(key.to_string()));
            }
            Err(e) => return Err(e),
        }
        Ok(ObjectRef {
            key: key.clone(),
            size_bytes: payload.len() as u64,
            content_hash: content_hash(payload),
            record_count: None,
        })
    }

    /// Commits `new_files` as the next manifest version of `(zone, dataset)`.
    /// All-or-nothing: the new version becomes visible only when its CURRENT
    /// pointer is renamed into place. Datasets are append-only, so the new
    /// file set is the old one plus `new_files`.
    pub fn commit_manifest(
        &self,
        dataset: &str,
        zone: Zone,
        new_files: Vec<ObjectRef>,
    ) -> Result<DatasetManifest> {
        self.commit_manifest_with_hint(dataset, zone, new_files, None)
    }

    /// [`commit_manifest`](Self::commit_manifest) carrying a schema hint; when
    /// `hint` is `None` the previous manifest's hint is kept.
    pub fn commit_manifest_with_hint(
        &self,
        dataset: &str,
        zone: Zone,
        new_files: Vec<ObjectRef>,
        hint: Option<SchemaDescriptor>,
    ) -> Result<DatasetManifest> {
        validate_name(dataset)?;
        let lock = self.dataset_lock(zone, dataset);
        let _guard = lock.lock().unwrap();

        let previous = self.load_current(dataset, zone)?;
        let mut seen: HashSet<ObjectKey> = previous
            .as_ref()
            .map(|m| m.files.iter().map(|f| f.key.clone()).collect())
            .unwrap_or_default();

        for file in &new_files {
            if file.key.zone != zone || file.key.dataset != dataset {
                return Err(LakeError::DanglingRef(format!(
                    "{} does not belong to {}/{}",
                    file.key, zone, dataset
                )));
            }
            if !seen.insert(file.key.clone()) {
                return Err(LakeError::DuplicateObject(format!(
                    "{} is already referenced by this dataset",
                    file.key
                )));
            }
            self.verify_file(file)?;
        }

        let mut files: Vec<ObjectRef> = previous
            .as_ref()
            .map(|m| m.files.clone())
            .unwrap_or_default();
        files.extend(new_files);
        files.sort_by(|a, b| {
            (&a.key.partition, &a.key.filename).cmp(&(&b.key.partition, &b.key.filename))
        });

        let schema_hint = hint.or_else(|| previous.as_ref().and_then(|m| m.schema_hint.clone()));
        let mut version = previous.as_ref().map(|m| m.version + 1).unwrap_or(1);
        let mut attempts = 0u32;
        loop {
            let manifest = DatasetManifest {
                dataset: dataset.to_string(),
                zone,
                version,
                files: files.clone(),
                committed_at: now_millis(),
                schema_hint: schema_hint.clone(),
                hash_algo: HASH_ALGO.to_string(),
            };
            let bytes = serde_json::to_vec_pretty(&manifest)?;
            let path = self.manifest_path(zone, dataset, version);
            match write_atomic_new(&self.staging_dir(), &path, &bytes) {
                Ok(()) => {
                    write_atomic(
                        &self.staging_dir(),
                        &self.current_path(zone, dataset),
                        version.to_string().as_bytes(),
                    )?;
                    return Ok(manifest);
                }
                Err(LakeError::Io(e)) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                    attempts += 1;
                    if attempts > COMMIT_RETRIES {
                        return Err(LakeError::CommitConflict {
                            zone: zone.to_string(),
                            dataset: dataset.to_string(),
                            attempts,
                        });
                    }
                    version += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }

    fn verify_file(&self, file: &ObjectRef) -> Result<()> {
        let path = self.object_path(&file.key);
        let bytes = fs::read(&path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                LakeError::DanglingRef(file.key.to_string())
            } else {
                LakeError::Io(e)
            }
        })?;
        if bytes.len() as u64 != file.size_bytes || content_hash(&bytes) != file.content_hash {
            return Err(LakeError::DanglingRef(format!(
                "{} does not match its recorded size/hash",
                file.key
            )));
        }
        Ok(())
    }

    /// Files of the requested manifest version (latest by default), sorted by
    /// `(partition, filename)`. A dataset with no manifests lists empty.
    pub fn list_objects(
        &self,
        dataset: &str,
        zone: Zone,
        at_version: Option<u64>,
    ) -> Result<Vec<ObjectRef>> {
        let manifest = match at_version {
            Some(v) => Some(self.manifest_at(dataset, zone, v)?),
            None => self.load_current(dataset, zone)?,
        };
        let mut files = manifest.map(|m| m.files).unwrap_or_default();
        files.sort_by(|a, b| {
            (&a.key.partition, &a.key.filename).cmp(&(&b.key.partition, &b.key.filename))
        });
        Ok(files)
    }

    /// Reads an object back and verifies its content hash.
    pub fn read_object(&self, r: &ObjectRef) -> Result<Vec<u8>> {
        let path = self.object_path(&r.key);
        let bytes = fs::read(&path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                LakeError::MissingObject {
                    path: r.key.to_string(),
                }
            } else {
                LakeError::Io(e)
            }
        })?;
        if content_hash(&bytes) != r.content_hash {
            return Err(LakeError::CorruptObject {
                path: r.key.to_string(),
            });
        }
        Ok(bytes)
    }

    pub fn current_version(&self, dataset: &str, zone: Zone) -> Result<Option<u64>> {
        let path = self.current_path(zone, dataset);
        match fs::read_to_string(&path) {
            Ok(text) => text
                .trim()
                .parse::<u64>()
                .map(Some)
                .map_err(|_| LakeError::InvalidConfig(format!("unparseable CURRENT at {path:?}"))),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(LakeError::Io(e)),
        }
    }

    /// Latest committed manifest, or `None` for a dataset with no commits.
    pub fn current_manifest(&self, dataset: &str, zone: Zone) -> Result<Option<DatasetManifest>> {
        self.load_current(dataset, zone)
    }

    pub fn manifest_at(&self, dataset: &str, zone: Zone, version: u64) -> Result<DatasetManifest> {
        let path = self.manifest_path(zone, dataset, version);
        let bytes = fs::read(&path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                LakeError::UnknownVersion {
                    zone: zone.to_string(),
                    dataset: dataset.to_string(),
                    version,
                }
            } else {
                LakeError::Io(e)
            }
        })?;
        Ok(serde_json::from_slice(&bytes)?)
    }

    fn load_current(&self, dataset: &str, zone: Zone) -> Result<Option<DatasetManifest>> {
        match self.current_version(dataset, zone)? {
            Some(v) => Ok(Some(self.manifest_at(dataset, zone, v)?)),
            None => Ok(None),
        }
    }

    /// Datasets that have at least one committed manifest in `zone`.
    pub fn committed_datasets(&self, zone: Zone) -> Result<Vec<String>> {
        let dir = self.root.join("manifests").join(zone.as_str());
        let mut out = Vec::new();
        if dir.exists() {
            for entry in fs::read_dir(dir)? {
                let entry = entry?;
                if entry.path().is_dir() && entry.path().join("CURRENT").exists() {
                    out.push(entry.file_name().to_string_lossy().into_owned());
                }
            }
        }
        out.sort();
        Ok(out)
    }

    /// The latest parseable manifest wins: rewrite CURRENT wherever it lags,
    /// points at a corrupt file, or is missing.
    fn recover(&self) -> Result<()> {
        let manifests = self.root.join("manifests");
        if !manifests.exists() {
            return Ok(());
        }
        for zone_entry in fs::read_dir(&manifests)? {
            let zone_dir = zone_entry?.path();
            if !zone_dir.is_dir() {
                continue;
            }
            for ds_entry in fs::read_dir(&zone_dir)? {
                let ds_dir = ds_entry?.path();
                if ds_dir.is_dir() {
                    self.recover_dataset_dir(&ds_dir)?;
                }
            }
        }
        Ok(())
    }

    fn recover_dataset_dir(&self, dir: &Path) -> Result<()> {
        let mut best: Option<u64> = None;
        for entry in fs::read_dir(dir)? {
            let entry = entry?;
            let name = entry.file_name().to_string_lossy().into_owned();
            let Some(v) = name
                .strip_prefix('v')
                .and_then(|s| s.strip_suffix(".json"))
                .and_then(|s| s.parse::<u64>().ok())
            else {
                continue;
            };
            let parseable = fs::read(entry.path())
                .ok()
                .and_then(|b| serde_json::from_slice::<DatasetManifest>(&b).ok())
                .is_some();
            if parseable {
                best = Some(best.map_or(v, |b| b.max(v)));
            }
        }
        let current_path = dir.join("CURRENT");
        let current: Option<u64> = fs::read_to_string(&current_path)
            .ok()
            .and_then(|s| s.trim().parse().ok());
        match best {
            Some(v) if current != Some(v) => {
                write_atomic(&self.staging_dir(), &current_path, v.to_string().as_bytes())
            }
            None if current_path.exists() => {
                fs::remove_file(&current_path)?;
                Ok(())
            }
            _ => Ok(()),
        }
    }
}
