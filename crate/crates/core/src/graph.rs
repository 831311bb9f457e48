//! Access graphs and label vocabularies.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Polygon;

pub const BACKGROUND: &str = "background";
pub const STRUCTURE: &str = "structure";

/// How two rooms are connected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConnectionType {
    Door,
    Entrance,
    Passage,
}

impl ConnectionType {
    pub const ALL: [ConnectionType; 3] = [Self::Door, Self::Entrance, Self::Passage];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn parse(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name() == name)
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Door => "door",
            Self::Entrance => "entrance",
            Self::Passage => "passage",
        }
    }
}

/// Zoning types, room types and the pixel value of every grid class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelVocabulary {
    pub zoning_types: Vec<String>,
    pub room_types: Vec<String>,
    pub grid_labels: BTreeMap<String, u8>,
}

impl LabelVocabulary {
    pub fn validate(&self) -> Result<()> {
        for (what, list) in [("zoning", &self.zoning_types), ("room", &self.room_types)] {
            let unique: BTreeSet<&String> = list.iter().collect();
            if unique.len() != list.len() {
                return Err(Error::Validation(format!("duplicate {what} type names")));
            }
            if list.is_empty() {
                return Err(Error::Validation(format!("no {what} types defined")));
            }
        }
        for required in [BACKGROUND, STRUCTURE] {
            if !self.grid_labels.contains_key(required) {
                return Err(Error::Validation(format!(
                    "grid label {required:?} missing"
                )));
            }
        }
        for room in &self.room_types {
            if !self.grid_labels.contains_key(room) {
                return Err(Error::Validation(format!(
                    "room type {room:?} has no grid label"
                )));
            }
        }
        let values: BTreeSet<u8> = self.grid_labels.values().copied().collect();
        if values.len() != self.grid_labels.len() {
            return Err(Error::Validation("grid labels share a pixel value".into()));
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let vocab: LabelVocabulary = serde_json::from_str(&text)?;
        vocab.validate()?;
        Ok(vocab)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn zoning_index(&self, name: &str) -> Option<usize> {
        self.zoning_types.iter().position(|z| z == name)
    }

    pub fn room_type_index(&self, name: &str) -> Option<usize> {
        self.room_types.iter().position(|z| z == name)
    }

    pub fn background_label(&self) -> u8 {
        self.grid_labels[BACKGROUND]
    }

    pub fn structure_label(&self) -> u8 {
        self.grid_labels[STRUCTURE]
    }

    pub fn room_label(&self, room_type: &str) -> Option<u8> {
        self.room_type_index(room_type)?;
        self.grid_labels.get(room_type).copied()
    }

    /// Pixel value to class name.
    pub fn palette(&self) -> BTreeMap<u8, String> {
        self.grid_labels
            .iter()
            .map(|(name, &v)| (v, name.clone()))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphNode {
    pub id: u32,
    pub zoning: String,
    #[serde(default)]
    pub room_type: Option<String>,
    #[serde(default)]
    pub polygon: Option<Polygon>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphEdge {
    pub a: u32,
    pub b: u32,
    #[serde(rename = "type")]
    pub kind: ConnectionType,
}

/// Undirected simple graph of rooms. Each unordered pair appears once.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccessGraph {
    pub nodes: Vec<GraphNode>,
    pub edges: Vec<GraphEdge>,
}

// Wire shape used for loading so unknown connection labels can be reported
// with their edge index instead of a generic serde message.
#[derive(Deserialize)]
struct RawGraph {
    nodes: Vec<GraphNode>,
    edges: Vec<RawEdge>,
}

#[derive(Deserialize)]
struct RawEdge {
    a: u32,
    b: u32,
    #[serde(rename = "type")]
    kind: String,
}

impl AccessGraph {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Node id to position in `nodes`.
    pub fn index_of(&self) -> BTreeMap<u32, usize> {
        self.nodes
            .iter()
            .enumerate()
            .map(|(i, n)| (n.id, i))
            .collect()
    }

    /// Edges as node positions, in edge-list order.
    pub fn edge_positions(&self) -> Vec<(usize, usize, ConnectionType)> {
        let index = self.index_of();
        self.edges
            .iter()
            .map(|e| (index[&e.a], index[&e.b], e.kind))
            .collect()
    }

    pub fn validate(&self, vocab: &LabelVocabulary) -> Result<()> {
        let mut ids = BTreeSet::new();
        for (i, node) in self.nodes.iter().enumerate() {
            if !ids.insert(node.id) {
                return Err(Error::Validation(format!(
                    "node {i}: duplicate id {}",
                    node.id
                )));
            }
            if vocab.zoning_index(&node.zoning).is_none() {
                return Err(Error::Validation(format!(
                    "node {i}: unknown zoning type {:?}",
                    node.zoning
                )));
            }
            if let Some(rt) = &node.room_type {
                if vocab.room_type_index(rt).is_none() {
                    return Err(Error::Validation(format!(
                        "node {i}: unknown room type {rt:?}"
                    )));
                }
            }
        }
        let mut pairs = BTreeSet::new();
        for (k, e) in self.edges.iter().enumerate() {
            if !ids.contains(&e.a) || !ids.contains(&e.b) {
                return Err(Error::Validation(format!(
                    "edge {k}: references a missing node ({}, {})",
                    e.a, e.b
                )));
            }
            if e.a == e.b {
                return Err(Error::Validation(format!(
                    "edge {k}: self-loop on node {}",
                    e.a
                )));
            }
            if !pairs.insert((e.a.min(e.b), e.a.max(e.b))) {
                return Err(Error::Validation(format!(
                    "edge {k}: duplicate edge between {} and {}",
                    e.a, e.b
                )));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str, vocab: &LabelVocabulary) -> Result<Self> {
        let raw: RawGraph = serde_json::from_str(text)?;
        let edges = raw
            .edges
            .into_iter()
            .enumerate()
            .map(|(k, e)| {
                let kind = ConnectionType::parse(&e.kind).ok_or_else(|| {
                    Error::Validation(format!("edge {k}: unknown connection type {:?}", e.kind))
                })?;
                Ok(GraphEdge {
                    a: e.a,
                    b: e.b,
                    kind,
                })
            })
            .collect::<Result<_>>()?;
        let graph = AccessGraph {
            nodes: raw.nodes,
            edges,
        };
        graph.validate(vocab)?;
        Ok(graph)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    /// Target room-type indices; errors if any node is unlabelled.
    pub fn room_type_targets(&self, vocab: &LabelVocabulary) -> Result<Vec<usize>> {
        self.nodes
            .iter()
            .enumerate()
            .map(|(i, n)| {
                n.room_type
                    .as_deref()
                    .and_then(|rt| vocab.room_type_index(rt))
                    .ok_or_else(|| Error::Validation(format!("node {i}: missing room type")))
            })
            .collect()
    }
}

/// Reads and validates an access graph.
pub fn load_access_graph(path: impl AsRef<Path>, vocab: &LabelVocabulary) -> Result<AccessGraph> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    AccessGraph::from_json(&text, vocab)
}

/// One-hot zoning rows (|V| x |zoning types|) and connection rows (|E| x 3).
pub fn one_hot_features(
    graph: &AccessGraph,
    vocab: &LabelVocabulary,
) -> Result<(Array2<f64>, Array2<f64>)> {
    let mut nodes = Array2::zeros((graph.nodes.len(), vocab.zoning_types.len()));
    for (i, node) in graph.nodes.iter().enumerate() {
        let z = vocab.zoning_index(&node.zoning).ok_or_else(|| {
            Error::Validation(format!("node {i}: unknown zoning type {:?}", node.zoning))
        })?;
        nodes[[i, z]] = 1.0;
    }
    let mut edges = Array2::zeros((graph.edges.len(), ConnectionType::ALL.len()));
    for (k, e) in graph.edges.iter().enumerate() {
        edges[[k, e.kind.index()]] = 1.0;
    }
    Ok((nodes, edges))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> LabelVocabulary {
        LabelVocabulary {
            zoning_types: ["Z0", "Z1", "Z2", "Z3", "Z4"].map(String::from).to_vec(),
            room_types: ["Bedroom", "Kitchen"].map(String::from).to_vec(),
            grid_labels: BTreeMap::from([
                ("background".to_string(), 0),
                ("structure".to_string(), 1),
                ("Bedroom".to_string(), 2),
                ("Kitchen".to_string(), 3),
            ]),
        }
    }

    #[test]
    fn single_node_graph() {
        let g = AccessGraph::from_json(
            r#"{"nodes":[{"id":0,"zoning":"Z2","room_type":null,"polygon":null}],"edges":[]}"#,
            &vocab(),
        )
        .unwrap();
        assert_eq!(g.len(), 1);
        let (x, e) = one_hot_features(&g, &vocab()).unwrap();
        assert_eq!(x.row(0).to_vec(), vec![0.0, 0.0, 1.0, 0.0, 0.0]);
        assert_eq!(e.dim(), (0, 3));
    }

    #[test]
    fn reversed_duplicate_edge_is_rejected() {
        let text = r#"{"nodes":[{"id":0,"zoning":"Z0"},{"id":1,"zoning":"Z1"}],
            "edges":[{"a":0,"b":1,"type":"door"},{"a":1,"b":0,"type":"door"}]}"#;
        let err = AccessGraph::from_json(text, &vocab()).unwrap_err();
        assert!(err.to_string().contains("edge 1"), "{err}");
    }

    #[test]
    fn validation_errors_name_the_offender() {
        let v = vocab();
        let cases = [
            (
                r#"{"nodes":[{"id":0,"zoning":"Nope"}],"edges":[]}"#,
                "node 0",
            ),
            (
                r#"{"nodes":[{"id":0,"zoning":"Z0"},{"id":0,"zoning":"Z0"}],"edges":[]}"#,
                "node 1",
            ),
            (
                r#"{"nodes":[{"id":0,"zoning":"Z0"}],"edges":[{"a":0,"b":0,"type":"door"}]}"#,
                "edge 0",
            ),
            (
                r#"{"nodes":[{"id":0,"zoning":"Z0"},{"id":1,"zoning":"Z0"}],"edges":[{"a":0,"b":1,"type":"window"}]}"#,
                "edge 0",
            ),
            (
                r#"{"nodes":[{"id":0,"zoning":"Z0"}],"edges":[{"a":0,"b":7,"type":"door"}]}"#,
                "edge 0",
            ),
        ];
        for (text, needle) in cases {
            let err = AccessGraph::from_json(text, &v).unwrap_err();
            assert!(matches!(err, Error::Validation(_)), "{err}");
            assert!(err.to_string().contains(needle), "{err}");
        }
    }

    #[test]
    fn passage_is_last_column() {
        let text = r#"{"nodes":[{"id":0,"zoning":"Z0"},{"id":1,"zoning":"Z1"}],
            "edges":[{"a":0,"b":1,"type":"passage"}]}"#;
        let g = AccessGraph::from_json(text, &vocab()).unwrap();
        let (_, e) = one_hot_features(&g, &vocab()).unwrap();
        assert_eq!(e.row(0).to_vec(), vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn vocabulary_requires_background_and_structure() {
        let mut v = vocab();
        v.validate().unwrap();
        v.grid_labels.remove("structure");
        assert!(v.validate().is_err());
    }
}
