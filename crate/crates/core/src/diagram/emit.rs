use alloc::string::String;
use core::fmt::Write;

use super::{format_label, BlockGraph, DotSource};

fn quote(out: &mut String, text: &str) {
    out.push('"');
    for c in text.chars() {
        if matches!(c, '"' | '\\') {
            out.push('\\');
        }
        out.push(c);
    }
    out.push('"');
}

/// Canonical DOT: nodes in stored order with explicit labels, then edges,
/// one statement per line.
pub fn to_dot(graph: &BlockGraph) -> DotSource {
    let mut out = String::from("digraph architecture {\n");
    for node in graph.nodes() {
        out.push_str("  ");
        quote(&mut out, &node.id);
        out.push_str(" [label=");
        quote(&mut out, &format_label(&node.label, node.multiplicity));
        out.push_str("];\n");
    }
    for edge in graph.edges() {
        out.push_str("  ");
        quote(&mut out, &edge.from);
        out.push_str(" -> ");
        quote(&mut out, &edge.to);
        if edge.double_ended {
            out.push_str(" [dir=both]");
        }
        let _ = writeln!(out, ";");
    }
    out.push('}');
    DotSource::new(out).expect("canonical emission is a balanced digraph")
}
