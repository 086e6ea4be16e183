//! Metadata registry: dataset descriptors and the lineage DAG that traces
//! every curated result back to its source systems.
//!
//! Persisted as a single `catalog.json` under the lake root, rewritten
//! atomically on every mutation. Node ids follow a stable textual scheme:
//! `source:<label>`, `dataset:<zone>/<name>`, `job:<job-id>`.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::error::{LakeError, Result};
use crate::schema::SchemaDescriptor;
use crate::store::{validate_name, Zone};
use crate::util::{now_millis, write_atomic};

/// Storage format of a dataset's part files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Jsonl,
}

impl fmt::Display for Format {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Format::Csv => "csv",
            Format::Jsonl => "jsonl",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetDescriptor {
    pub name: String,
    pub zone: Zone,
    pub format: Format,
    pub created_at: u64,
    /// Free-text origin label.
    pub source: String,
    pub schema_hint: Option<SchemaDescriptor>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobKind {
    BatchImport,
    FlowRun,
    Query,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineageEdge {
    pub from_node: String,
    pub to_node: String,
    pub job_kind: JobKind,
    pub at: u64,
}

/// Formats the id of a dataset node.
pub fn dataset_node(zone: Zone, name: &str) -> String {
    format!("dataset:{zone}/{name}")
}

fn parse_dataset_node(id: &str) -> Option<(Zone, &str)> {
    let rest = id.strip_prefix("dataset:")?;
    let (zone, name) = rest.split_once('/')?;
    Some((zone.parse().ok()?, name))
}

fn validate_node_id(id: &str) -> Result<()> {
    if id.strip_prefix("source:").is_some_and(|s| !s.is_empty())
        || id.strip_prefix("job:").is_some_and(|s| !s.is_empty())
        || parse_dataset_node(id).is_some()
    {
        Ok(())
    } else {
        Err(LakeError::InvalidKey(format!(
            "node id {id:?} must be source:<label>, dataset:<zone>/<name>, or job:<job-id>"
        )))
    }
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct CatalogState {
    datasets: Vec<DatasetDescriptor>,
    lineage: Vec<LineageEdge>,
}

/// Single-writer, multi-reader registry; mutations serialize behind one lock
/// and rewrite the backing file atomically.
pub struct Catalog {
    path: PathBuf,
    staging_dir: PathBuf,
    state: Mutex<CatalogState>,
}

impl Catalog {
    /// Opens (or creates) the catalog at `<lake_root>/catalog.json`.
    pub fn open(lake_root: &Path) -> Result<Self> {
        let path = lake_root.join("catalog.json");
        let state = if path.exists() {
            serde_json::from_slice(&fs::read(&path)?)?
        } else {
            CatalogState::default()
        };
        let catalog = Catalog {
            path,
            staging_dir: lake_root.join(".staging"),
            state: Mutex::new(state),
        };
        if !catalog.path.exists() {
            catalog.persist(&catalog.state.lock().unwrap())?;
        }
        Ok(catalog)
    }

    fn persist(&self, state: &CatalogState) -> Result<()> {
        let bytes = serde_json::to_vec_pretty(state)?;
        write_atomic(&self.staging_dir, &self.path, &bytes)
    }

    pub fn register_dataset(&self, desc: DatasetDescriptor) -> Result<()> {
        validate_name(&desc.name)?;
        let mut state = self.state.lock().unwrap();
        if state
            .datasets
            .iter()
            .any(|d| d.zone == desc.zone && d.name == desc.name)
        {
            return Err(LakeError::AlreadyRegistered {
                zone: desc.zone.to_string(),
                name: desc.name,
            });
        }
        state.datasets.push(desc);
        self.persist(&state)
    }

    pub fn get_dataset(&self, zone: Zone, name: &str) -> Result<DatasetDescriptor> {
        self.state
            .lock()
            .unwrap()
            .datasets
            .iter()
            .find(|d| d.zone == zone && d.name == name)
            .cloned()
            .ok_or_else(|| LakeError::UnknownDataset(format!("{zone}/{name}")))
    }

    pub fn is_registered(&self, zone: Zone, name: &str) -> bool {
        self.get_dataset(zone, name).is_ok()
    }

    /// All descriptors, sorted by (zone, name) for deterministic listings.
    pub fn list_datasets(&self) -> Vec<DatasetDescriptor> {
        let mut out = self.state.lock().unwrap().datasets.clone();
        out.sort_by(|a, b| (a.zone, a.name.as_str()).cmp(&(b.zone, b.name.as_str())));
        out
    }

    /// Records an edge after checking node validity and acyclicity.
    pub fn record_lineage(&self, edge: LineageEdge) -> Result<()> {
        validate_node_id(&edge.from_node)?;
        validate_node_id(&edge.to_node)?;
        let mut state = self.state.lock().unwrap();
        for node in [&edge.from_node, &edge.to_node] {
            if let Some((zone, name)) = parse_dataset_node(node) {
                if !state.datasets.iter().any(|d| d.zone == zone && d.name == name) {
                    return Err(LakeError::UnknownDataset(node.clone()));
                }
            }
        }
        if edge.from_node == edge.to_node || reaches(&state.lineage, &edge.to_node, &edge.from_node)
        {
            return Err(LakeError::CycleDetected(format!(
                "{} -> {}",
                edge.from_node, edge.to_node
            )));
        }
        state.lineage.push(edge);
        self.persist(&state)
    }

    pub fn lineage_edges(&self) -> Vec<LineageEdge> {
        self.state.lock().unwrap().lineage.clone()
    }

    /// Whether an identical (from, to) edge has already been recorded.
    pub fn has_edge(&self, from_node: &str, to_node: &str) -> bool {
        self.state
            .lock()
            .unwrap()
            .lineage
            .iter()
            .any(|e| e.from_node == from_node && e.to_node == to_node)
    }

    fn node_exists(state: &CatalogState, id: &str) -> bool {
        if let Some((zone, name)) = parse_dataset_node(id) {
            return state.datasets.iter().any(|d| d.zone == zone && d.name == name);
        }
        state
            .lineage
            .iter()
            .any(|e| e.from_node == id || e.to_node == id)
    }

    /// Transitive closure of incoming edges for `node_id`, topologically
    /// ordered upstream-first with ties broken by node id.
    pub fn lineage_of(&self, node_id: &str) -> Result<Vec<LineageEdge>> {
        validate_node_id(node_id)?;
        let state = self.state.lock().unwrap();
        if !Self::node_exists(&state, node_id) {
            return Err(LakeError::UnknownDataset(node_id.to_string()));
        }

        // Reverse reachability from the target.
        let mut upstream: Vec<LineageEdge> = Vec::new();
        let mut visited: HashSet<String> = HashSet::new();
        let mut frontier = vec![node_id.to_string()];
        while let Some(node) = frontier.pop() {
            if !visited.insert(node.clone()) {
                continue;
            }
            for e in state.lineage.iter().filter(|e| e.to_node == node) {
                upstream.push(e.clone());
                frontier.push(e.from_node.clone());
            }
        }

        // Kahn over the collected sub-DAG; min-heap on node id for ties.
        let mut nodes: BTreeSet<&str> = BTreeSet::new();
        for e in &upstream {
            nodes.insert(&e.from_node);
            nodes.insert(&e.to_node);
        }
        let mut indegree: BTreeMap<&str, usize> = nodes.iter().map(|n| (*n, 0)).collect();
        for e in &upstream {
            *indegree.get_mut(e.to_node.as_str()).unwrap() += 1;
        }
        let mut ready: BTreeSet<&str> = indegree
            .iter()
            .filter(|(_, d)| **d == 0)
            .map(|(n, _)| *n)
            .collect();
        let mut position: BTreeMap<&str, usize> = BTreeMap::new();
        while let Some(&node) = ready.iter().next() {
            ready.remove(node);
            position.insert(node, position.len());
            for e in upstream.iter().filter(|e| e.from_node == node) {
                let d = indegree.get_mut(e.to_node.as_str()).unwrap();
                *d -= 1;
                if *d == 0 {
                    ready.insert(&e.to_node);
                }
            }
        }

        let mut ordered = upstream.clone();
        ordered.sort_by_key(|e| {
            (
                position[e.to_node.as_str()],
                position[e.from_node.as_str()],
                e.to_node.clone(),
                e.from_node.clone(),
            )
        });
        Ok(ordered)
    }
}

/// DFS: can `from` reach `to` along existing edges?
fn reaches(edges: &[LineageEdge], from: &str, to: &str) -> bool {
    let mut stack = vec![from];
    let mut seen: HashSet<&str> = HashSet::new();
    while let Some(node) = stack.pop() {
        if node == to {
            return true;
        }
        if !seen.insert(node) {
            continue;
        }
        for e in edges.iter().filter(|e| e.from_node == node) {
            stack.push(&e.to_node);
        }
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;

    fn temp_catalog() -> (tempfile::TempDir, Catalog) {
        let dir = tempfile::tempdir().unwrap();
        let catalog = Catalog::open(dir.path()).unwrap();
        (dir, catalog)
    }

    fn desc(zone: Zone, name: &str) -> DatasetDescriptor {
        DatasetDescriptor {
            name: name.to_string(),
            zone,
            format: Format::Csv,
            created_at: now_millis(),
            source: "test".to_string(),
            schema_hint: None,
        }
    }

    fn edge(from: &str, to: &str) -> LineageEdge {
        LineageEdge {
            from_node: from.to_string(),
            to_node: to.to_string(),
            job_kind: JobKind::BatchImport,
            at: now_millis(),
        }
    }

    #[test]
    fn register_then_get_round_trips() {
        let (_dir, catalog) = temp_catalog();
        let d = desc(Zone::Raw, "sales");
        catalog.register_dataset(d.clone()).unwrap();
        assert_eq!(catalog.get_dataset(Zone::Raw, "sales").unwrap(), d);
    }

    #[test]
    fn duplicate_registration_rejected() {
        let (_dir, catalog) = temp_catalog();
        catalog.register_dataset(desc(Zone::Raw, "sales")).unwrap();
        assert!(matches!(
            catalog.register_dataset(desc(Zone::Raw, "sales")),
            Err(LakeError::AlreadyRegistered { .. })
        ));
        // same name in another zone is fine
        catalog.register_dataset(desc(Zone::Curated, "sales")).unwrap();
    }

    #[test]
    fn invalid_name_rejected() {
        let (_dir, catalog) = temp_catalog();
        assert!(matches!(
            catalog.register_dataset(desc(Zone::Raw, "A B")),
            Err(LakeError::InvalidKey(_))
        ));
    }

    #[test]
    fn base_edge_and_unknown_dataset() {
        let (_dir, catalog) = temp_catalog();
        catalog.register_dataset(desc(Zone::Raw, "sales")).unwrap();
        catalog
            .record_lineage(edge("source:mysql", "dataset:raw/sales"))
            .unwrap();
        assert!(matches!(
            catalog.record_lineage(edge("source:mysql", "dataset:raw/ghost")),
            Err(LakeError::UnknownDataset(_))
        ));
    }

    #[test]
    fn cycle_rejected() {
        let (_dir, catalog) = temp_catalog();
        catalog.record_lineage(edge("job:a", "job:b")).unwrap();
        catalog.record_lineage(edge("job:b", "job:c")).unwrap();
        assert!(matches!(
            catalog.record_lineage(edge("job:c", "job:a")),
            Err(LakeError::CycleDetected(_))
        ));
        assert!(matches!(
            catalog.record_lineage(edge("job:a", "job:a")),
            Err(LakeError::CycleDetected(_))
        ));
    }

    #[test]
    fn lineage_of_leaf_source_is_empty() {
        let (_dir, catalog) = temp_catalog();
        catalog.register_dataset(desc(Zone::Raw, "sales")).unwrap();
        catalog
            .record_lineage(edge("source:mysql", "dataset:raw/sales"))
            .unwrap();
        assert!(catalog.lineage_of("source:mysql").unwrap().is_empty());
    }

    #[test]
    fn two_hop_chain_in_full() {
        let (_dir, catalog) = temp_catalog();
        catalog.register_dataset(desc(Zone::Raw, "sales")).unwrap();
        catalog.register_dataset(desc(Zone::Curated, "sales")).unwrap();
        catalog
            .record_lineage(edge("source:mysql", "dataset:raw/sales"))
            .unwrap();
        catalog
            .record_lineage(edge("dataset:raw/sales", "dataset:curated/sales"))
            .unwrap();
        let chain = catalog.lineage_of("dataset:curated/sales").unwrap();
        assert_eq!(chain.len(), 2);
        // upstream-first: the source edge precedes the curated edge
        assert_eq!(chain[0].from_node, "source:mysql");
        assert_eq!(chain[1].to_node, "dataset:curated/sales");
    }

    #[test]
    fn unknown_node_errors() {
        let (_dir, catalog) = temp_catalog();
        assert!(matches!(
            catalog.lineage_of("job:nope"),
            Err(LakeError::UnknownDataset(_))
        ));
        assert!(matches!(
            catalog.lineage_of("garbage"),
            Err(LakeError::InvalidKey(_))
        ));
    }

    #[test]
    fn catalog_survives_reopen() {
        let dir = tempfile::tempdir().unwrap();
        {
            let catalog = Catalog::open(dir.path()).unwrap();
            catalog.register_dataset(desc(Zone::Raw, "sales")).unwrap();
            catalog
                .record_lineage(edge("source:mysql", "dataset:raw/sales"))
                .unwrap();
        }
        let catalog = Catalog::open(dir.path()).unwrap();
        assert_eq!(catalog.list_datasets().len(), 1);
        assert_eq!(catalog.lineage_edges().len(), 1);
    }
}
