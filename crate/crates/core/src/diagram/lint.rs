//! Structural lints for block diagrams. Findings are advisory data, never
//! failures: an empty list means the diagram is structurally sound.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::BlockGraph;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FindingCode {
    EmptyGraph,
    DisconnectedNode,
    Cycle,
    ArrayCandidate,
    NoSink,
}

impl FindingCode {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::EmptyGraph => "empty-graph",
            Self::DisconnectedNode => "disconnected-node",
            Self::Cycle => "cycle",
            Self::ArrayCandidate => "array-candidate",
            Self::NoSink => "no-sink",
        }
    }
}

impl core::fmt::Display for FindingCode {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Finding {
    pub severity: Severity,
    pub code: FindingCode,
    pub message: String,
}

impl core::fmt::Display for Finding {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        let level = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        write!(f, "{level}[{}]: {}", self.code, self.message)
    }
}

impl Finding {
    fn error(code: FindingCode, message: String) -> Self {
        Self {
            severity: Severity::Error,
            code,
            message,
        }
    }

    fn warning(code: FindingCode, message: String) -> Self {
        Self {
            severity: Severity::Warning,
            code,
            message,
        }
    }
}

pub fn validate(graph: &BlockGraph) -> Vec<Finding> {
    let mut findings = Vec::new();
    if graph.is_empty() {
        findings.push(Finding::error(FindingCode::EmptyGraph, "diagram has no blocks".into()));
        return findings;
    }
    if graph.nodes().len() >= 2 {
        for node in graph.nodes() {
            if graph.in_degree(&node.id) == 0 && graph.out_degree(&node.id) == 0 {
                findings.push(Finding::error(
                    FindingCode::DisconnectedNode,
                    format!("block {:?} is not connected to any other block", node.id),
                ));
            }
        }
    }
    if let Some(node) = first_node_on_cycle(graph) {
        findings.push(Finding::warning(
            FindingCode::Cycle,
            format!("signal path loops back through block {node:?}"),
        ));
    }
    for group in array_candidates(graph) {
        findings.push(Finding::warning(
            FindingCode::ArrayCandidate,
            format!(
                "{} identical parallel chains ({}) could be one array block with multiplicity {}",
                group.len(),
                group.join(", "),
                group.len()
            ),
        ));
    }
    if graph.nodes().iter().all(|n| graph.out_degree(&n.id) > 0) {
        findings.push(Finding::warning(
            FindingCode::NoSink,
            "no block terminates the signal path".into(),
        ));
    }
    findings
}

fn first_node_on_cycle(graph: &BlockGraph) -> Option<&str> {
    // Repeatedly strip nodes with no remaining incoming edges; whatever
    // survives lies on or behind a cycle.
    let mut indegree: BTreeMap<&str, usize> =
        graph.nodes().iter().map(|n| (n.id.as_str(), 0)).collect();
    for edge in graph.edges() {
        *indegree.get_mut(edge.to.as_str())? += 1;
    }
    let mut stack: Vec<&str> = indegree
        .iter()
        .filter(|(_, d)| **d == 0)
        .map(|(id, _)| *id)
        .collect();
    let mut removed = BTreeSet::new();
    while let Some(id) = stack.pop() {
        removed.insert(id);
        for succ in graph.successors(id) {
            let d = indegree.get_mut(succ)?;
            *d -= 1;
            if *d == 0 {
                stack.push(succ);
            }
        }
    }
    graph
        .nodes()
        .iter()
        .map(|n| n.id.as_str())
        .find(|id| !removed.contains(id))
}

/// Lowercased letters only, so "Strain Gauge 3" and "strain-gauge #7" agree.
fn normalize(label: &str) -> String {
    let mut out = String::new();
    for word in label
        .split(|c: char| !c.is_alphabetic())
        .filter(|w| !w.is_empty())
    {
        if !out.is_empty() {
            out.push(' ');
        }
        out.extend(word.chars().flat_map(char::to_lowercase));
    }
    out
}

/// Entry point, normalized labels with multiplicities, exit point.
type ChainKey = (Option<String>, Vec<(String, u32)>, Option<String>);

/// Groups of maximal one-in/one-out chains that share their entry point,
/// exit point and normalized labels.
fn array_candidates(graph: &BlockGraph) -> Vec<Vec<String>> {
    let single_link = |from: &str, to: &str| graph.out_degree(from) == 1 && graph.in_degree(to) == 1;
    let mut groups: BTreeMap<ChainKey, Vec<String>> = BTreeMap::new();
    let mut seen = BTreeSet::new();
    for node in graph.nodes() {
        let id = node.id.as_str();
        let preds: Vec<&str> = graph.predecessors(id).collect();
        let continues_chain = preds.len() == 1 && single_link(preds[0], id);
        if continues_chain || seen.contains(id) {
            continue;
        }
        let entry = (preds.len() == 1).then(|| String::from(preds[0]));
        let mut chain = Vec::new();
        let mut current = id;
        let exit = loop {
            if !seen.insert(current) {
                break None;
            }
            let n = graph.node(current).expect("ids come from the graph");
            chain.push((normalize(&n.label), n.multiplicity));
            let succs: Vec<&str> = graph.successors(current).collect();
            match succs.as_slice() {
                [next] if single_link(current, next) => current = next,
                [next] => break Some(String::from(*next)),
                _ => break None,
            }
        };
        groups
            .entry((entry, chain, exit))
            .or_default()
            .push(String::from(id));
    }
    groups
        .into_values()
        .filter(|members| members.len() >= 2)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diagram::{parse, DotSource};

    fn lint(text: &str) -> Vec<Finding> {
        validate(&parse(&DotSource::new(text).unwrap()).unwrap())
    }

    fn codes(findings: &[Finding]) -> Vec<&'static str> {
        findings.iter().map(|f| f.code.as_str()).collect()
    }

    #[test]
    fn linear_chain_is_clean() {
        assert!(lint("digraph { A -> B -> C -> D }").is_empty());
    }

    #[test]
    fn isolated_node_is_one_error() {
        let findings = lint("digraph { A -> B -> C; D }");
        assert_eq!(findings.len(), 1);
        assert_eq!(findings[0].severity, Severity::Error);
        assert_eq!(findings[0].code, FindingCode::DisconnectedNode);
    }

    #[test]
    fn empty_graph_is_an_error() {
        let findings = lint("digraph { }");
        assert_eq!(codes(&findings), ["empty-graph"]);
    }

    #[test]
    fn single_node_graph_is_clean() {
        assert!(lint("digraph { DAQ }").is_empty());
    }

    #[test]
    fn cycle_and_no_sink() {
        let findings = lint("digraph { A -> B -> A }");
        assert_eq!(codes(&findings), ["cycle", "no-sink"]);
        let with_tail = lint("digraph { A -> B -> C -> B; C -> D }");
        assert_eq!(codes(&with_tail), ["cycle"]);
    }

    #[test]
    fn eight_parallel_chains_suggest_an_array() {
        let mut text = alloc::string::String::from("digraph {\n");
        for i in 1..=8 {
            text.push_str(&format!(
                "  sg{i} [label=\"Strain Gauge {i}\"]; amp{i} [label=\"Amplifier {i}\"];\n  sg{i} -> amp{i} -> mux;\n"
            ));
        }
        text.push_str("  mux -> adc;\n}");
        let findings = lint(&text);
        assert_eq!(codes(&findings), ["array-candidate"]);
        assert_eq!(findings[0].severity, Severity::Warning);
        assert!(findings[0].message.starts_with("8 identical"));
    }

    #[test]
    fn distinct_sensors_are_not_array_candidates() {
        assert!(lint("digraph { p [label=\"Pressure\"]; t [label=\"Temperature\"]; p -> mux; t -> mux; mux -> adc }").is_empty());
    }

    #[test]
    fn array_form_architecture_is_clean() {
        let findings = lint(
            "digraph { sg [label=\"8x Strain Gauge\"]; wb [label=\"8x Wheatstone Bridge\"]; \
             ia [label=\"8x Instrumentation Amplifier\"]; ir [label=\"8x IR Detector\"]; \
             lin [label=\"8x Linearizer\"]; sg -> wb -> ia -> aa; ir -> lin -> aa; \
             aa [label=\"16x Anti-aliasing Filter\"]; aa -> mux -> adc -> pc }",
        );
        assert!(findings.is_empty(), "{findings:?}");
    }
}
