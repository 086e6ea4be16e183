//! Flow graph specification and validation.
//!
//! A spec names processors and wires them with bounded connections. `from`
//! endpoints may carry a port (`"parse:quarantine"`); the default port is
//! `out`. Validation rejects cycles, dangling ports, unknown kinds, and
//! graphs without a source or sink.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{LakeError, Result};
use crate::flow::processors::{instantiate, ProcessorInstance};
use crate::store::Zone;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProcessorSpec {
    pub name: String,
    pub kind: String,
    #[serde(default)]
    pub params: serde_json::Map<String, serde_json::Value>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConnectionSpec {
    /// `processor` or `processor:port`.
    pub from: String,
    pub to: String,
    pub capacity: usize,
    /// Defaults to `capacity`; sends at or above it count as pressure.
    #[serde(default)]
    pub high_watermark: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FlowGraphSpec {
    pub processors: Vec<ProcessorSpec>,
    pub connections: Vec<ConnectionSpec>,
}

impl FlowGraphSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

pub(crate) struct GraphNode {
    pub name: String,
    pub processor: ProcessorInstance,
    pub input_conns: Vec<usize>,
    /// port -> connection ids, in spec order (first gets the original on fan-out)
    pub output_conns: BTreeMap<String, Vec<usize>>,
}

pub(crate) struct GraphConnection {
    pub label: String,
    pub capacity: usize,
    pub high_watermark: usize,
}

/// A validated, executable graph. Consumed by `run_flow`.
pub struct FlowGraph {
    pub(crate) nodes: Vec<GraphNode>,
    pub(crate) connections: Vec<GraphConnection>,
}

impl FlowGraph {
    /// Sink targets as (zone, dataset) pairs, for pre-run checks.
    pub fn sink_targets(&self) -> Vec<(Zone, String)> {
        self.nodes
            .iter()
            .filter_map(|n| match &n.processor {
                ProcessorInstance::Sink(s) => Some(s.target()),
                _ => None,
            })
            .collect()
    }

    pub fn source_names(&self) -> Vec<String> {
        self.nodes
            .iter()
            .filter(|n| matches!(n.processor, ProcessorInstance::Source(_)))
            .map(|n| n.name.clone())
            .collect()
    }
}

/// Validates a spec into an executable graph.
pub fn build_graph(spec: &FlowGraphSpec) -> Result<FlowGraph> {
    build_graph_seeded(spec, None)
}

/// Like [`build_graph`], with a seed that overrides generator-source params.
pub fn build_graph_seeded(spec: &FlowGraphSpec, seed_override: Option<u64>) -> Result<FlowGraph> {
    let mut names = HashSet::new();
    for p in &spec.processors {
        if p.name.is_empty() {
            return Err(LakeError::InvalidFlowSpec("processor with empty name".into()));
        }
        if !names.insert(p.name.as_str()) {
            return Err(LakeError::InvalidFlowSpec(format!(
                "duplicate processor name {:?}",
                p.name
            )));
        }
    }

    let mut nodes = Vec::new();
    let mut ports: Vec<&'static [&'static str]> = Vec::new();
    for p in &spec.processors {
        let (instance, out_ports) = instantiate(&p.kind, &p.params, seed_override)?;
        ports.push(out_ports);
        nodes.push(GraphNode {
            name: p.name.clone(),
            processor: instance,
            input_conns: Vec::new(),
            output_conns: BTreeMap::new(),
        });
    }
    if !nodes
        .iter()
        .any(|n| matches!(n.processor, ProcessorInstance::Source(_)))
    {
        return Err(LakeError::InvalidFlowSpec("graph has no source".into()));
    }
    if !nodes
        .iter()
        .any(|n| matches!(n.processor, ProcessorInstance::Sink(_)))
    {
        return Err(LakeError::InvalidFlowSpec("graph has no sink".into()));
    }

    let index_of = |name: &str| -> Option<usize> { nodes.iter().position(|n| n.name == name) };

    let mut connections = Vec::new();
    let mut edges: Vec<(usize, usize)> = Vec::new();
    for c in &spec.connections {
        let (from_name, port) = match c.from.split_once(':') {
            Some((n, p)) => (n, p),
            None => (c.from.as_str(), "out"),
        };
        let from = index_of(from_name)
            .ok_or_else(|| LakeError::DanglingPort(format!("unknown processor {from_name:?}")))?;
        let to = index_of(&c.to)
            .ok_or_else(|| LakeError::DanglingPort(format!("unknown processor {:?}", c.to)))?;
        if !ports[from].contains(&port) {
            return Err(LakeError::DanglingPort(format!(
                "processor {from_name:?} has no out port {port:?}"
            )));
        }
        if matches!(nodes[to].processor, ProcessorInstance::Source(_)) {
            return Err(LakeError::DanglingPort(format!(
                "source {:?} cannot receive records",
                c.to
            )));
        }
        if c.capacity == 0 {
            return Err(LakeError::InvalidFlowSpec(format!(
                "connection {} -> {} has zero capacity",
                c.from, c.to
            )));
        }
        let high_watermark = c.high_watermark.unwrap_or(c.capacity);
        if high_watermark > c.capacity {
            return Err(LakeError::InvalidFlowSpec(format!(
                "high_watermark exceeds capacity on {} -> {}",
                c.from, c.to
            )));
        }
        let conn_id = connections.len();
        connections.push(GraphConnection {
            label: format!("{}->{}", c.from, c.to),
            capacity: c.capacity,
            high_watermark,
        });
        nodes[to].input_conns.push(conn_id);
        nodes[from]
            .output_conns
            .entry(port.to_string())
            .or_default()
            .push(conn_id);
        edges.push((from, to));
    }

    // Every record path must terminate: non-sources need an input, and the
    // default out port of sources/transforms must be connected. Quarantine
    // ports may dangle (the DROP event already accounts for the record).
    for (i, node) in nodes.iter().enumerate() {
        match node.processor {
            ProcessorInstance::Source(_) | ProcessorInstance::Transform(_) => {
                if node.output_conns.get("out").map_or(true, Vec::is_empty) {
                    return Err(LakeError::DanglingPort(format!(
                        "out port of {:?} is not connected",
                        node.name
                    )));
                }
            }
            ProcessorInstance::Sink(_) => {}
        }
        if !matches!(node.processor, ProcessorInstance::Source(_))
            && node.input_conns.is_empty()
        {
            return Err(LakeError::InvalidFlowSpec(format!(
                "processor {:?} has no input",
                node.name
            )));
        }
        let _ = i;
    }

    // Kahn cycle check.
    let mut indegree = vec![0usize; nodes.len()];
    for (_, to) in &edges {
        indegree[*to] += 1;
    }
    let mut ready: Vec<usize> = indegree
        .iter()
        .enumerate()
        .filter(|(_, d)| **d == 0)
        .map(|(i, _)| i)
        .collect();
    let mut seen = 0;
    while let Some(n) = ready.pop() {
        seen += 1;
        for (from, to) in &edges {
            if *from == n {
                indegree[*to] -= 1;
                if indegree[*to] == 0 {
                    ready.push(*to);
                }
            }
        }
    }
    if seen != nodes.len() {
        return Err(LakeError::CycleDetected("flow graph contains a cycle".into()));
    }

    Ok(FlowGraph { nodes, connections })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec_json(text: &str) -> FlowGraphSpec {
        FlowGraphSpec::from_json(text).unwrap()
    }

    #[test]
    fn two_node_source_sink_is_valid() {
        let spec = spec_json(
            r#"{
              "processors": [
                {"name": "src", "kind": "tweet_source", "params": {"seed": 1}},
                {"name": "sink", "kind": "micro_batch_sink", "params": {"dataset": "tweets"}}
              ],
              "connections": [{"from": "src", "to": "sink", "capacity": 16}]
            }"#,
        );
        let graph = build_graph(&spec).unwrap();
        assert_eq!(graph.nodes.len(), 2);
        assert_eq!(graph.sink_targets(), vec![(Zone::Raw, "tweets".to_string())]);
    }

    #[test]
    fn self_loop_is_a_cycle() {
        let spec = spec_json(
            r#"{
              "processors": [
                {"name": "src", "kind": "static_source", "params": {"lines": ["a"]}},
                {"name": "p", "kind": "passthrough"},
                {"name": "sink", "kind": "micro_batch_sink", "params": {"dataset": "d"}}
              ],
              "connections": [
                {"from": "src", "to": "p", "capacity": 4},
                {"from": "p", "to": "p", "capacity": 4},
                {"from": "p", "to": "sink", "capacity": 4}
              ]
            }"#,
        );
        assert!(matches!(build_graph(&spec), Err(LakeError::CycleDetected(_))));
    }

    #[test]
    fn connection_to_missing_node_dangles() {
        let spec = spec_json(
            r#"{
              "processors": [
                {"name": "src", "kind": "static_source", "params": {"lines": []}},
                {"name": "sink", "kind": "micro_batch_sink", "params": {"dataset": "d"}}
              ],
              "connections": [{"from": "src", "to": "ghost", "capacity": 4}]
            }"#,
        );
        assert!(matches!(build_graph(&spec), Err(LakeError::DanglingPort(_))));
    }

    #[test]
    fn unknown_kind_and_unconnected_out_rejected() {
        let spec = spec_json(
            r#"{
              "processors": [
                {"name": "src", "kind": "warp_drive"},
                {"name": "sink", "kind": "micro_batch_sink", "params": {"dataset": "d"}}
              ],
              "connections": []
            }"#,
        );
        assert!(matches!(
            build_graph(&spec),
            Err(LakeError::UnknownProcessorKind(_))
        ));

        let spec = spec_json(
            r#"{
              "processors": [
                {"name": "src", "kind": "static_source", "params": {"lines": []}},
                {"name": "sink", "kind": "micro_batch_sink", "params": {"dataset": "d"}}
              ],
              "connections": []
            }"#,
        );
        assert!(matches!(build_graph(&spec), Err(LakeError::DanglingPort(_))));
    }

    #[test]
    fn seed_override_wins_over_missing_param() {
        let spec = spec_json(
            r#"{
              "processors": [
                {"name": "src", "kind": "tweet_source"},
                {"name": "sink", "kind": "micro_batch_sink", "params": {"dataset": "tweets"}}
              ],
              "connections": [{"from": "src", "to": "sink", "capacity": 16}]
            }"#,
        );
        assert!(matches!(
            build_graph(&spec),
            Err(LakeError::InvalidFlowSpec(_))
        ));
        assert!(build_graph_seeded(&spec, Some(42)).is_ok());
    }
}
