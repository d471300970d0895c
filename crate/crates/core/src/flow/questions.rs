//! Pulling numbered/bulleted items out of model text: the designer's
//! questions and the emulator's answers.

use alloc::string::String;
use alloc::vec::Vec;

/// Most questions a single Q&A round may carry.
pub const MAX_QUESTIONS: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ListItem {
    /// The item's own number, for numbered items.
    pub number: Option<u32>,
    /// True for numbered and bulleted items.
    pub marked: bool,
    pub text: String,
}

/// Length of a `12.` / `12)` marker at the start of `s`, followed by
/// whitespace or end of text.
fn number_marker(s: &str) -> Option<(usize, u32)> {
    let digits = s.bytes().take_while(u8::is_ascii_digit).count();
    if digits == 0 || digits > 3 {
        return None;
    }
    let punct = s.as_bytes().get(digits)?;
    if !matches!(punct, b'.' | b')') {
        return None;
    }
    let after = &s[digits + 1..];
    if !(after.is_empty() || after.starts_with(char::is_whitespace)) {
        return None;
    }
    Some((digits + 1, s[..digits].parse().ok()?))
}

fn bullet_marker(s: &str) -> Option<usize> {
    let mut chars = s.chars();
    let c = chars.next()?;
    if matches!(c, '-' | '*' | '•') && chars.next().is_some_and(char::is_whitespace) {
        Some(c.len_utf8())
    } else {
        None
    }
}

/// Splits text into list items. Numbered markers are also recognised
/// mid-line ("1. What...? 2. Which...?"); bullets only at line start.
/// Unmarked lines continue the previous item until it holds a `?`.
pub fn list_items(text: &str) -> Vec<ListItem> {
    let mut items: Vec<ListItem> = Vec::new();
    for raw_line in text.lines() {
        let cleaned = raw_line.replace("**", "");
        let line = cleaned.trim();
        if line.is_empty() {
            continue;
        }
        let mut cuts: Vec<(usize, usize, Option<u32>)> = Vec::new();
        if let Some(len) = bullet_marker(line) {
            cuts.push((0, len, None));
        }
        let mut prev_ws = true;
        for (i, c) in line.char_indices() {
            if prev_ws {
                if let Some((len, n)) = number_marker(&line[i..]) {
                    if cuts.first().is_none_or(|(start, _, _)| *start != 0 || i != 0) {
                        cuts.push((i, len, Some(n)));
                    }
                }
            }
            prev_ws = c.is_whitespace();
        }
        if cuts.is_empty() {
            match items.last_mut() {
                Some(last) if last.marked && !last.text.contains('?') => {
                    last.text.push(' ');
                    last.text.push_str(line);
                }
                _ => items.push(ListItem {
                    number: None,
                    marked: false,
                    text: String::from(line),
                }),
            }
            continue;
        }
        if cuts[0].0 > 0 {
            items.push(ListItem {
                number: None,
                marked: false,
                text: String::from(line[..cuts[0].0].trim()),
            });
        }
        for (k, (start, len, number)) in cuts.iter().enumerate() {
            let end = cuts.get(k + 1).map_or(line.len(), |c| c.0);
            items.push(ListItem {
                number: *number,
                marked: true,
                text: String::from(line[start + len..end].trim()),
            });
        }
    }
    items
}

/// All question items, uncapped.
pub fn question_items(model_output: &str) -> Vec<String> {
    let questions: Vec<String> = list_items(model_output)
        .into_iter()
        .filter(|item| item.marked && item.text.contains('?'))
        .map(|item| item.text)
        .collect();
    if questions.is_empty() {
        let whole = model_output.trim();
        if whole.ends_with('?') {
            return alloc::vec![String::from(whole)];
        }
    }
    questions
}

/// The designer's questions, at most [`MAX_QUESTIONS`], in order.
pub fn parse_questions(model_output: &str) -> Vec<String> {
    let mut questions = question_items(model_output);
    questions.truncate(MAX_QUESTIONS);
    questions
}

/// Splits an emulator reply into exactly `expected` answers. Numbered
/// items land at their number; otherwise items are taken in order. The
/// flag reports whether padding or truncation was needed.
pub fn split_answers(reply: &str, expected: usize) -> (Vec<String>, bool) {
    if expected == 0 {
        return (Vec::new(), !reply.trim().is_empty());
    }
    let items: Vec<ListItem> = list_items(reply)
        .into_iter()
        .filter(|i| i.marked)
        .collect();
    if items.is_empty() {
        let whole = String::from(reply.trim());
        let mut answers = alloc::vec![String::new(); expected];
        answers[0] = whole;
        return (answers, expected != 1);
    }
    let numbered = items.iter().all(|i| i.number.is_some());
    let mut answers = alloc::vec![String::new(); expected];
    let mut mismatch = items.len() != expected;
    for (pos, item) in items.into_iter().enumerate() {
        let slot = if numbered {
            item.number.map_or(pos, |n| (n as usize).saturating_sub(1))
        } else {
            pos
        };
        match answers.get_mut(slot) {
            Some(a) if a.is_empty() => *a = item.text,
            _ => mismatch = true,
        }
    }
    (answers, mismatch)
}
