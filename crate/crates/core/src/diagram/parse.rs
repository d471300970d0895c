//! Parser for the DOT subset models are asked to produce: a single
//! `digraph`, node statements, `->` edge chains and bracketed attribute
//! lists. Subgraphs, ports, HTML labels and undirected edges are rejected.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use super::{split_multiplicity, BlockGraph, DotSource, Edge, Node};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParseErrorKind {
    Unexpected { found: String, expected: &'static str },
    Unsupported(&'static str),
    UnterminatedString,
    ConflictingLabel { id: String },
    UnexpectedEnd,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("line {line}, column {column}: {kind}")]
pub struct ParseError {
    pub kind: ParseErrorKind,
    pub offset: usize,
    pub line: usize,
    pub column: usize,
}

impl fmt::Display for ParseErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Unexpected { found, expected } => {
                write!(f, "expected {expected}, found {found:?}")
            }
            Self::Unsupported(what) => write!(f, "{what} is outside the supported DOT subset"),
            Self::UnterminatedString => f.write_str("unterminated quoted string"),
            Self::ConflictingLabel { id } => write!(f, "node {id:?} declared with conflicting labels"),
            Self::UnexpectedEnd => f.write_str("unexpected end of input"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Id { text: String, quoted: bool },
    LBrace,
    RBrace,
    LBracket,
    RBracket,
    Eq,
    Semi,
    Comma,
    Arrow,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Id { text, .. } => text.clone(),
            Tok::LBrace => "{".into(),
            Tok::RBrace => "}".into(),
            Tok::LBracket => "[".into(),
            Tok::RBracket => "]".into(),
            Tok::Eq => "=".into(),
            Tok::Semi => ";".into(),
            Tok::Comma => ",".into(),
            Tok::Arrow => "->".into(),
        }
    }

    fn keyword(&self, kw: &str) -> bool {
        matches!(self, Tok::Id { text, quoted: false } if text.eq_ignore_ascii_case(kw))
    }
}

fn position(src: &str, offset: usize) -> (usize, usize) {
    let before = &src[..offset.min(src.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rfind('\n').map_or(before.chars().count(), |nl| {
        before[nl + 1..].chars().count()
    }) + 1;
    (line, column)
}

fn error(src: &str, offset: usize, kind: ParseErrorKind) -> ParseError {
    let (line, column) = position(src, offset);
    ParseError {
        kind,
        offset,
        line,
        column,
    }
}

fn is_id_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_' || c == '.' || (!c.is_ascii() && !c.is_whitespace())
}

fn lex(src: &str) -> Result<Vec<(Tok, usize)>, ParseError> {
    let mut toks = Vec::new();
    let mut chars = src.char_indices().peekable();
    while let Some(&(at, c)) = chars.peek() {
        let rest = &src[at..];
        if c.is_whitespace() {
            chars.next();
            continue;
        }
        if rest.starts_with("//") || (c == '#' && src[..at].trim_end_matches([' ', '\t']).ends_with('\n')) {
            while chars.peek().is_some_and(|&(_, c)| c != '\n') {
                chars.next();
            }
            continue;
        }
        if let Some(body) = rest.strip_prefix("/*") {
            let close = body
                .find("*/")
                .ok_or_else(|| error(src, at, ParseErrorKind::UnexpectedEnd))?;
            let end = at + 2 + close + 2;
            while chars.peek().is_some_and(|&(i, _)| i < end) {
                chars.next();
            }
            continue;
        }
        if rest.starts_with("->") {
            chars.next();
            chars.next();
            toks.push((Tok::Arrow, at));
            continue;
        }
        if rest.starts_with("--") {
            return Err(error(src, at, ParseErrorKind::Unsupported("undirected edge `--`")));
        }
        let single = match c {
            '{' => Some(Tok::LBrace),
            '}' => Some(Tok::RBrace),
            '[' => Some(Tok::LBracket),
            ']' => Some(Tok::RBracket),
            '=' => Some(Tok::Eq),
            ';' => Some(Tok::Semi),
            ',' => Some(Tok::Comma),
            _ => None,
        };
        if let Some(tok) = single {
            chars.next();
            toks.push((tok, at));
            continue;
        }
        match c {
            '"' => {
                chars.next();
                let mut text = String::new();
                loop {
                    match chars.next() {
                        None => return Err(error(src, at, ParseErrorKind::UnterminatedString)),
                        Some((_, '"')) => break,
                        Some((_, '\\')) => match chars.next() {
                            None => {
                                return Err(error(src, at, ParseErrorKind::UnterminatedString))
                            }
                            Some((_, '"')) => text.push('"'),
                            Some((_, '\\')) => text.push('\\'),
                            Some((_, '\n')) => {}
                            Some((_, other)) => {
                                text.push('\\');
                                text.push(other);
                            }
                        },
                        Some((_, ch)) => text.push(ch),
                    }
                }
                toks.push((Tok::Id { text, quoted: true }, at));
            }
            '<' => return Err(error(src, at, ParseErrorKind::Unsupported("HTML label"))),
            ':' => return Err(error(src, at, ParseErrorKind::Unsupported("node port"))),
            '+' => return Err(error(src, at, ParseErrorKind::Unsupported("string concatenation"))),
            c if is_id_char(c) || c == '-' => {
                let mut text = String::new();
                text.push(c);
                chars.next();
                while let Some(&(_, n)) = chars.peek() {
                    if is_id_char(n) {
                        text.push(n);
                        chars.next();
                    } else {
                        break;
                    }
                }
                if text == "-" {
                    return Err(error(
                        src,
                        at,
                        ParseErrorKind::Unexpected {
                            found: text,
                            expected: "identifier",
                        },
                    ));
                }
                toks.push((Tok::Id { text, quoted: false }, at));
            }
            other => {
                return Err(error(
                    src,
                    at,
                    ParseErrorKind::Unexpected {
                        found: other.to_string(),
                        expected: "DOT token",
                    },
                ))
            }
        }
    }
    Ok(toks)
}

struct Parser<'a> {
    src: &'a str,
    toks: Vec<(Tok, usize)>,
    pos: usize,
    nodes: Vec<Node>,
    explicit_labels: BTreeMap<String, String>,
    index: BTreeMap<String, usize>,
    edges: Vec<Edge>,
    edge_defaults: Attrs,
}

#[derive(Default, Clone)]
struct Attrs {
    label: Option<String>,
    dir: Option<String>,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(t, _)| t)
    }

    fn offset(&self) -> usize {
        self.toks
            .get(self.pos)
            .map_or(self.src.len(), |(_, at)| *at)
    }

    fn fail(&self, kind: ParseErrorKind) -> ParseError {
        error(self.src, self.offset(), kind)
    }

    fn unexpected(&self, expected: &'static str) -> ParseError {
        match self.peek() {
            Some(tok) => self.fail(ParseErrorKind::Unexpected {
                found: tok.describe(),
                expected,
            }),
            None => self.fail(ParseErrorKind::UnexpectedEnd),
        }
    }

    fn expect(&mut self, want: Tok, expected: &'static str) -> Result<(), ParseError> {
        if self.peek() == Some(&want) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.unexpected(expected))
        }
    }

    fn id(&mut self) -> Result<String, ParseError> {
        match self.peek() {
            Some(Tok::Id { text, .. }) => {
                let text = text.clone();
                self.pos += 1;
                Ok(text)
            }
            _ => Err(self.unexpected("identifier")),
        }
    }

    fn touch_node(&mut self, id: &str) {
        if !self.index.contains_key(id) {
            self.index.insert(id.into(), self.nodes.len());
            self.nodes.push(Node::new(id, id, 1));
        }
    }

    fn graph(&mut self) -> Result<(), ParseError> {
        if self.peek().is_some_and(|t| t.keyword("strict")) {
            return Err(self.fail(ParseErrorKind::Unsupported("strict graph")));
        }
        if !self.peek().is_some_and(|t| t.keyword("digraph")) {
            return Err(self.unexpected("`digraph`"));
        }
        self.pos += 1;
        if matches!(self.peek(), Some(Tok::Id { .. })) {
            self.pos += 1;
        }
        self.expect(Tok::LBrace, "`{`")?;
        loop {
            match self.peek() {
                Some(Tok::RBrace) => {
                    self.pos += 1;
                    break;
                }
                Some(Tok::Semi | Tok::Comma) => self.pos += 1,
                Some(_) => self.statement()?,
                None => return Err(self.fail(ParseErrorKind::UnexpectedEnd)),
            }
        }
        if self.peek().is_some() {
            return Err(self.unexpected("end of input"));
        }
        Ok(())
    }

    fn statement(&mut self) -> Result<(), ParseError> {
        let tok = self.peek().cloned().expect("caller checked");
        if tok == Tok::LBrace || tok.keyword("subgraph") {
            return Err(self.fail(ParseErrorKind::Unsupported("subgraph")));
        }
        if tok.keyword("graph") || tok.keyword("node") {
            self.pos += 1;
            self.attr_lists()?;
            return Ok(());
        }
        if tok.keyword("edge") {
            self.pos += 1;
            let attrs = self.attr_lists()?;
            if attrs.dir.is_some() {
                self.edge_defaults.dir = attrs.dir;
            }
            return Ok(());
        }
        let first = self.id()?;
        match self.peek() {
            Some(Tok::Eq) => {
                // graph-level `key = value`, e.g. rankdir=LR
                self.pos += 1;
                self.id()?;
                Ok(())
            }
            Some(Tok::Arrow) => {
                let mut chain = alloc::vec![first];
                while self.peek() == Some(&Tok::Arrow) {
                    self.pos += 1;
                    if matches!(self.peek(), Some(Tok::LBrace)) || self.peek().is_some_and(|t| t.keyword("subgraph")) {
                        return Err(self.fail(ParseErrorKind::Unsupported("subgraph")));
                    }
                    chain.push(self.id()?);
                }
                let mut attrs = self.attr_lists()?;
                if attrs.dir.is_none() {
                    attrs.dir = self.edge_defaults.dir.clone();
                }
                for id in &chain {
                    self.touch_node(id);
                }
                for pair in chain.windows(2) {
                    let (mut from, mut to) = (pair[0].clone(), pair[1].clone());
                    let dir = attrs.dir.as_deref().map(str::to_ascii_lowercase);
                    if dir.as_deref() == Some("back") {
                        core::mem::swap(&mut from, &mut to);
                    }
                    self.edges.push(Edge {
                        from,
                        to,
                        double_ended: dir.as_deref() == Some("both"),
                    });
                }
                Ok(())
            }
            _ => {
                let offset = self.offset();
                let attrs = self.attr_lists()?;
                self.touch_node(&first);
                if let Some(label) = attrs.label {
                    if let Some(prev) = self.explicit_labels.get(&first) {
                        if *prev != label {
                            return Err(error(
                                self.src,
                                offset,
                                ParseErrorKind::ConflictingLabel { id: first },
                            ));
                        }
                    }
                    let (name, multiplicity) = split_multiplicity(&label);
                    let node = &mut self.nodes[self.index[&first]];
                    node.label = name;
                    node.multiplicity = multiplicity;
                    self.explicit_labels.insert(first, label);
                }
                Ok(())
            }
        }
    }

    fn attr_lists(&mut self) -> Result<Attrs, ParseError> {
        let mut attrs = Attrs::default();
        while self.peek() == Some(&Tok::LBracket) {
            self.pos += 1;
            loop {
                match self.peek() {
                    Some(Tok::RBracket) => {
                        self.pos += 1;
                        break;
                    }
                    Some(Tok::Semi | Tok::Comma) => self.pos += 1,
                    Some(Tok::Id { .. }) => {
                        let key = self.id()?;
                        self.expect(Tok::Eq, "`=`")?;
                        let value = self.id()?;
                        match key.to_ascii_lowercase().as_str() {
                            "label" => attrs.label = Some(value),
                            "dir" => attrs.dir = Some(value),
                            _ => {}
                        }
                    }
                    _ => return Err(self.unexpected("attribute or `]`")),
                }
            }
        }
        Ok(attrs)
    }
}

/// Parses a DOT digraph into a [`BlockGraph`].
///
/// Labels default to the node id. An `8x Name` or `Name (x8)` label sets
/// the node's multiplicity. `dir=both` marks an edge double-ended; other
/// attributes (rankdir, style, shape, ...) are accepted and ignored.
pub fn parse(src: &DotSource) -> Result<BlockGraph, ParseError> {
    let text = src.as_str();
    let toks = lex(text)?;
    let mut parser = Parser {
        src: text,
        toks,
        pos: 0,
        nodes: Vec::new(),
        explicit_labels: BTreeMap::new(),
        index: BTreeMap::new(),
        edges: Vec::new(),
        edge_defaults: Attrs::default(),
    };
    parser.graph()?;
    BlockGraph::new(parser.nodes, parser.edges).map_err(|e| {
        error(
            text,
            0,
            ParseErrorKind::Unexpected {
                found: e.to_string(),
                expected: "well-formed graph",
            },
        )
    })
}
