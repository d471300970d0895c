use alloc::string::String;
use alloc::vec::Vec;

use super::DotSource;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ExtractError {
    #[error("no digraph found in model output")]
    NoDigraph,
    #[error("digraph at offset {offset} has no body")]
    MissingBody { offset: usize },
    #[error("unbalanced braces in digraph starting at offset {offset}")]
    Unbalanced { offset: usize },
    #[error("unexpected text after the digraph body at offset {offset}")]
    TrailingText { offset: usize },
}

/// Pulls the architecture diagram out of free-form model output.
///
/// The first fenced code block that mentions a digraph wins; without one,
/// the first bare `digraph` keyword is taken through its matching brace.
pub fn extract_dot(model_output: &str) -> Result<DotSource, ExtractError> {
    for block in fenced_blocks(model_output) {
        if let Some(start) = find_digraph(block, 0) {
            let end = match_body(block, start)?;
            return Ok(DotSource(String::from(&block[start..end])));
        }
    }
    let start = find_digraph(model_output, 0).ok_or(ExtractError::NoDigraph)?;
    let end = match_body(model_output, start)?;
    Ok(DotSource(String::from(&model_output[start..end])))
}

/// True when `text` holds an extractable, brace-balanced digraph.
pub fn contains_dot_payload(text: &str) -> bool {
    extract_dot(text).is_ok()
}

/// True when the `digraph` keyword appears anywhere as a whole word.
pub fn mentions_digraph(text: &str) -> bool {
    find_digraph(text, 0).is_some()
}

pub(super) fn digraph_at_start(text: &str) -> Option<usize> {
    (find_digraph(text, 0) == Some(0)).then_some(0)
}

fn is_word_byte(b: u8) -> bool {
    b.is_ascii_alphanumeric() || b == b'_'
}

fn find_digraph(text: &str, from: usize) -> Option<usize> {
    const KEYWORD: &[u8] = b"digraph";
    let bytes = text.as_bytes();
    let mut i = from;
    while i + KEYWORD.len() <= bytes.len() {
        if bytes[i..i + KEYWORD.len()].eq_ignore_ascii_case(KEYWORD)
            && (i == 0 || !is_word_byte(bytes[i - 1]))
            && bytes.get(i + KEYWORD.len()).is_none_or(|b| !is_word_byte(*b))
        {
            return Some(i);
        }
        i += 1;
    }
    None
}

/// Contents of ``` fenced blocks, in order. An unterminated fence runs to
/// the end of the text.
fn fenced_blocks(text: &str) -> Vec<&str> {
    let mut blocks = Vec::new();
    let mut open: Option<usize> = None;
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let is_fence = line.trim_start().starts_with("```");
        match (open, is_fence) {
            (None, true) => open = Some(offset + line.len()),
            (Some(start), true) => {
                blocks.push(&text[start..offset]);
                open = None;
            }
            _ => {}
        }
        offset += line.len();
    }
    if let Some(start) = open {
        blocks.push(&text[start.min(text.len())..]);
    }
    blocks
}

/// Returns the byte offset just past the brace closing the body of the
/// digraph starting at `start`. Quoted strings and comments are skipped.
pub(super) fn match_body(text: &str, start: usize) -> Result<usize, ExtractError> {
    let bytes = text.as_bytes();
    let mut i = start + "digraph".len();
    let mut depth = 0usize;
    let mut opened = false;
    while i < bytes.len() {
        match bytes[i] {
            b'"' => {
                i += 1;
                loop {
                    match bytes.get(i) {
                        None => return Err(ExtractError::Unbalanced { offset: start }),
                        Some(b'\\') => i += 2,
                        Some(b'"') => break,
                        Some(_) => i += 1,
                    }
                }
            }
            b'/' if bytes.get(i + 1) == Some(&b'/') => {
                while i < bytes.len() && bytes[i] != b'\n' {
                    i += 1;
                }
                continue;
            }
            b'/' if bytes.get(i + 1) == Some(&b'*') => {
                let close = text[i + 2..]
                    .find("*/")
                    .ok_or(ExtractError::Unbalanced { offset: start })?;
                i += 2 + close + 2;
                continue;
            }
            b'{' => {
                depth += 1;
                opened = true;
            }
            b'}' => {
                if !opened {
                    return Err(ExtractError::MissingBody { offset: start });
                }
                depth -= 1;
                if depth == 0 {
                    return Ok(i + 1);
                }
            }
            _ => {}
        }
        i += 1;
    }
    if opened {
        Err(ExtractError::Unbalanced { offset: start })
    } else {
        Err(ExtractError::MissingBody { offset: start })
    }
}
