//! Architecture diagrams: DOT extraction from model output, a DOT-subset
//! parser, structural lints and canonical re-emission.

mod emit;
mod extract;
mod lint;
mod parse;

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

pub use emit::to_dot;
pub use extract::{contains_dot_payload, extract_dot, mentions_digraph, ExtractError};
pub use lint::{validate, Finding, FindingCode, Severity};
pub use parse::{parse, ParseError, ParseErrorKind};

/// Raw DOT digraph source. Always starts with the `digraph` keyword and
/// has balanced braces.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct DotSource(String);

impl DotSource {
    pub fn new(text: impl Into<String>) -> Result<Self, ExtractError> {
        let text: String = text.into();
        let trimmed = text.trim();
        let start = extract::digraph_at_start(trimmed).ok_or(ExtractError::NoDigraph)?;
        let end = extract::match_body(trimmed, start)?;
        if trimmed[end..].trim().is_empty() {
            Ok(Self(String::from(&trimmed[..end])))
        } else {
            Err(ExtractError::TrailingText { offset: end })
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn into_string(self) -> String {
        self.0
    }
}

impl fmt::Display for DotSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl TryFrom<String> for DotSource {
    type Error = ExtractError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<DotSource> for String {
    fn from(value: DotSource) -> Self {
        value.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Node {
    pub id: String,
    pub label: String,
    pub multiplicity: u32,
}

impl Node {
    pub fn new(id: impl Into<String>, label: impl Into<String>, multiplicity: u32) -> Self {
        Self {
            id: id.into(),
            label: label.into(),
            multiplicity,
        }
    }

    pub fn is_array(&self) -> bool {
        self.multiplicity > 1
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub from: String,
    pub to: String,
    pub double_ended: bool,
}

impl Edge {
    pub fn new(from: impl Into<String>, to: impl Into<String>, double_ended: bool) -> Self {
        Self {
            from: from.into(),
            to: to.into(),
            double_ended,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GraphError {
    #[error("duplicate node id {0:?}")]
    DuplicateNode(String),
    #[error("edge references unknown node {0:?}")]
    UnknownNode(String),
    #[error("node {0:?} has multiplicity 0")]
    ZeroMultiplicity(String),
    #[error("array node {0:?} needs a label that starts with a visible character")]
    UnnamedArray(String),
}

/// A parsed block diagram. Nodes keep first-appearance order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawGraph")]
pub struct BlockGraph {
    nodes: Vec<Node>,
    edges: Vec<Edge>,
}

#[derive(Deserialize)]
struct RawGraph {
    nodes: Vec<Node>,
    edges: Vec<Edge>,
}

impl TryFrom<RawGraph> for BlockGraph {
    type Error = GraphError;

    fn try_from(raw: RawGraph) -> Result<Self, Self::Error> {
        Self::new(raw.nodes, raw.edges)
    }
}

impl BlockGraph {
    pub fn new(nodes: Vec<Node>, edges: Vec<Edge>) -> Result<Self, GraphError> {
        let mut ids = BTreeSet::new();
        for node in &nodes {
            if !ids.insert(node.id.as_str()) {
                return Err(GraphError::DuplicateNode(node.id.clone()));
            }
            if node.multiplicity == 0 {
                return Err(GraphError::ZeroMultiplicity(node.id.clone()));
            }
            if node.multiplicity > 1
                && !node.label.chars().next().is_some_and(|c| !c.is_whitespace())
            {
                return Err(GraphError::UnnamedArray(node.id.clone()));
            }
        }
        for edge in &edges {
            for end in [&edge.from, &edge.to] {
                if !ids.contains(end.as_str()) {
                    return Err(GraphError::UnknownNode(end.clone()));
                }
            }
        }
        Ok(Self { nodes, edges })
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: &str) -> Option<&Node> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn out_degree(&self, id: &str) -> usize {
        self.edges.iter().filter(|e| e.from == id).count()
    }

    pub fn in_degree(&self, id: &str) -> usize {
        self.edges.iter().filter(|e| e.to == id).count()
    }

    pub fn successors<'a>(&'a self, id: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.edges
            .iter()
            .filter(move |e| e.from == id)
            .map(|e| e.to.as_str())
    }

    pub fn predecessors<'a>(&'a self, id: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.edges
            .iter()
            .filter(move |e| e.to == id)
            .map(|e| e.from.as_str())
    }

    /// Sources first; ties broken by label, then id. Nodes on cycles that
    /// never become ready are appended in the same tie order.
    pub fn topological_order(&self) -> Vec<&Node> {
        let mut indegree: BTreeMap<&str, usize> =
            self.nodes.iter().map(|n| (n.id.as_str(), 0)).collect();
        for edge in &self.edges {
            *indegree.get_mut(edge.to.as_str()).expect("edge endpoints validated") += 1;
        }
        let key = |n: &'_ Node| (n.label.clone(), n.id.clone());
        let mut ready: BTreeSet<(String, String)> = self
            .nodes
            .iter()
            .filter(|n| indegree[n.id.as_str()] == 0)
            .map(key)
            .collect();
        let mut order = Vec::with_capacity(self.nodes.len());
        let mut placed = BTreeSet::new();
        loop {
            while let Some(next) = ready.pop_first() {
                let node = self.node(&next.1).expect("ready ids are graph ids");
                placed.insert(node.id.as_str());
                order.push(node);
                for succ in self.successors(&node.id) {
                    let d = indegree.get_mut(succ).expect("edge endpoints validated");
                    *d = d.saturating_sub(1);
                    if *d == 0 && !placed.contains(succ) {
                        ready.insert(key(self.node(succ).expect("validated")));
                    }
                }
            }
            // Break a cycle at its smallest remaining node.
            let stuck = self
                .nodes
                .iter()
                .filter(|n| !placed.contains(n.id.as_str()))
                .map(key)
                .min();
            match stuck {
                Some(k) => {
                    indegree.insert(self.node(&k.1).expect("validated").id.as_str(), 0);
                    ready.insert(k);
                }
                None => break,
            }
        }
        order
    }
}

/// Splits an `8x Name` / `Name (x8)` label into its name and multiplicity.
/// Labels without either form have multiplicity 1.
pub fn split_multiplicity(raw: &str) -> (String, u32) {
    if let Some((count, rest)) = prefix_multiplicity(raw) {
        return (String::from(rest), count);
    }
    if let Some((name, count)) = suffix_multiplicity(raw) {
        return (String::from(name), count);
    }
    (String::from(raw), 1)
}

/// Inverse of [`split_multiplicity`].
pub fn format_label(label: &str, multiplicity: u32) -> String {
    if multiplicity > 1 || prefix_multiplicity(label).is_some() || suffix_multiplicity(label).is_some()
    {
        alloc::format!("{multiplicity}x {label}")
    } else {
        String::from(label)
    }
}

fn prefix_multiplicity(raw: &str) -> Option<(u32, &str)> {
    let digits_end = raw.find(|c: char| !c.is_ascii_digit())?;
    if digits_end == 0 {
        return None;
    }
    let count: u32 = raw[..digits_end].parse().ok().filter(|n| *n > 0)?;
    let rest = raw[digits_end..].trim_start_matches(' ');
    let mut chars = rest.chars();
    if !matches!(chars.next(), Some('x' | 'X' | '×')) {
        return None;
    }
    let after_x = chars.as_str();
    let name = after_x.trim_start();
    if name.len() == after_x.len() || name.is_empty() {
        return None;
    }
    Some((count, name))
}

fn suffix_multiplicity(raw: &str) -> Option<(&str, u32)> {
    let body = raw.strip_suffix(')')?;
    let open = body.rfind('(')?;
    let inner = body[open + 1..].trim();
    let digits = inner
        .strip_prefix('x')
        .or_else(|| inner.strip_prefix('X'))
        .or_else(|| inner.strip_prefix('×'))?
        .trim_start();
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    let count: u32 = digits.parse().ok().filter(|n| *n > 0)?;
    let name = body[..open].trim_end();
    if name.is_empty() {
        return None;
    }
    Some((name, count))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn multiplicity_forms() {
        assert_eq!(split_multiplicity("8x Strain Gauge"), ("Strain Gauge".into(), 8));
        assert_eq!(split_multiplicity("8 x Strain Gauge"), ("Strain Gauge".into(), 8));
        assert_eq!(split_multiplicity("Strain Gauge (x8)"), ("Strain Gauge".into(), 8));
        assert_eq!(split_multiplicity("16× IR detector"), ("IR detector".into(), 16));
        assert_eq!(split_multiplicity("2 xylophones"), ("2 xylophones".into(), 1));
        assert_eq!(split_multiplicity("0x Foo"), ("0x Foo".into(), 1));
        assert_eq!(split_multiplicity("ADC"), ("ADC".into(), 1));
        assert_eq!(split_multiplicity("(x3)"), ("(x3)".into(), 1));
    }

    #[test]
    fn format_label_inverts_split() {
        for (label, m) in [("Strain Gauge", 8), ("Foo (x3)", 1), ("4x Bar", 1), ("ADC", 1)] {
            assert_eq!(split_multiplicity(&format_label(label, m)), (label.into(), m));
        }
        assert_eq!(format_label("Strain Gauge", 8), "8x Strain Gauge");
    }

    #[test]
    fn graph_invariants() {
        let dup = BlockGraph::new(vec![Node::new("a", "a", 1), Node::new("a", "b", 1)], vec![]);
        assert_eq!(dup.unwrap_err(), GraphError::DuplicateNode("a".into()));
        let dangling = BlockGraph::new(vec![Node::new("a", "a", 1)], vec![Edge::new("a", "b", false)]);
        assert_eq!(dangling.unwrap_err(), GraphError::UnknownNode("b".into()));
        let zero = BlockGraph::new(vec![Node::new("a", "a", 0)], vec![]);
        assert!(zero.is_err());
    }

    #[test]
    fn topological_order_breaks_ties_by_label() {
        let g = BlockGraph::new(
            vec![
                Node::new("z", "Zeta sensor", 1),
                Node::new("a", "Alpha sensor", 1),
                Node::new("m", "Mux", 1),
                Node::new("adc", "ADC", 1),
            ],
            vec![
                Edge::new("z", "m", false),
                Edge::new("a", "m", false),
                Edge::new("m", "adc", false),
            ],
        )
        .unwrap();
        let ids: Vec<&str> = g.topological_order().iter().map(|n| n.id.as_str()).collect();
        assert_eq!(ids, ["a", "z", "m", "adc"]);
    }

    #[test]
    fn topological_order_covers_cycles() {
        let g = BlockGraph::new(
            vec![Node::new("a", "A", 1), Node::new("b", "B", 1), Node::new("c", "C", 1)],
            vec![
                Edge::new("a", "b", false),
                Edge::new("b", "c", false),
                Edge::new("c", "b", false),
            ],
        )
        .unwrap();
        let ids: Vec<&str> = g.topological_order().iter().map(|n| n.id.as_str()).collect();
        assert_eq!(ids, ["a", "b", "c"]);
    }

    #[test]
    fn dot_source_rejects_trailing_text() {
        assert!(DotSource::new("digraph G { A -> B }").is_ok());
        assert!(DotSource::new("  digraph G { A -> B }\n").is_ok());
        assert!(DotSource::new("digraph G { A -> B } extra").is_err());
        assert!(DotSource::new("graph G { A -- B }").is_err());
    }
}
