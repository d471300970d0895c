//! Conversation history with the two history policies of the flow: failed
//! architecture attempts are pruned once a diagram is accepted, and every
//! block is detailed on a fresh copy of the architectural conversation.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::diagram::{extract_dot, mentions_digraph, DotSource};
use crate::llm::{ChatMessage, Role};

/// Marks the surviving accepted diagram after pruning.
pub const ARCHITECTURE_ACCEPTED: &str = "architecture_accepted";
/// Marks the first diagram attempt of the architectural loop.
pub const ARCHITECTURE_LOOP_START: &str = "architecture_loop_start";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConversationError {
    #[error("accepted diagram not found in conversation")]
    AcceptedNotFound,
    #[error("marker {0:?} is not set")]
    MissingMarker(String),
    #[error("marker index {index} out of range for {len} messages")]
    MarkerOutOfRange { index: usize, len: usize },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conversation {
    messages: Vec<ChatMessage>,
    markers: BTreeMap<String, usize>,
}

impl Conversation {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_messages(messages: Vec<ChatMessage>) -> Self {
        Self {
            messages,
            markers: BTreeMap::new(),
        }
    }

    pub fn messages(&self) -> &[ChatMessage] {
        &self.messages
    }

    pub fn markers(&self) -> &BTreeMap<String, usize> {
        &self.markers
    }

    pub fn marker(&self, label: &str) -> Option<usize> {
        self.markers.get(label).copied()
    }

    pub fn len(&self) -> usize {
        self.messages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.messages.is_empty()
    }

    pub fn append(&mut self, message: ChatMessage) {
        self.messages.push(message);
    }

    pub fn set_marker(&mut self, label: impl Into<String>, index: usize) -> Result<(), ConversationError> {
        if index >= self.messages.len() {
            return Err(ConversationError::MarkerOutOfRange {
                index,
                len: self.messages.len(),
            });
        }
        self.markers.insert(label.into(), index);
        Ok(())
    }

    /// Number of messages whose content embeds a digraph.
    pub fn dot_payload_count(&self) -> usize {
        self.messages
            .iter()
            .filter(|m| mentions_digraph(&m.content))
            .count()
    }

    /// Drops every rejected diagram attempt together with the user message
    /// that answered it, keeping only the last message carrying
    /// `accepted`. Assistant messages count as attempts when they mention a
    /// digraph or sit at/after the loop-start marker. Returns how many
    /// messages were removed.
    pub fn prune_architecture_loop(&mut self, accepted: &DotSource) -> Result<usize, ConversationError> {
        let keep = self
            .messages
            .iter()
            .rposition(|m| {
                m.role == Role::Assistant
                    && extract_dot(&m.content).is_ok_and(|dot| dot == *accepted)
            })
            .ok_or(ConversationError::AcceptedNotFound)?;
        let loop_start = self.marker(ARCHITECTURE_LOOP_START);

        let mut remove = alloc::vec![false; self.messages.len()];
        for (i, message) in self.messages.iter().enumerate() {
            if i == keep || message.role != Role::Assistant {
                continue;
            }
            let in_loop = loop_start.is_some_and(|start| i >= start);
            if in_loop || mentions_digraph(&message.content) {
                remove[i] = true;
                if let Some(next) = self.messages.get(i + 1) {
                    if next.role == Role::User && i + 1 != keep {
                        remove[i + 1] = true;
                    }
                }
            }
        }

        let mut new_index = alloc::vec![None; self.messages.len()];
        let mut kept = Vec::with_capacity(self.messages.len());
        for (i, message) in core::mem::take(&mut self.messages).into_iter().enumerate() {
            if !remove[i] {
                new_index[i] = Some(kept.len());
                kept.push(message);
            }
        }
        let removed = remove.iter().filter(|r| **r).count();
        self.messages = kept;
        self.markers = core::mem::take(&mut self.markers)
            .into_iter()
            .filter_map(|(label, i)| new_index[i].map(|ni| (label, ni)))
            .collect();
        self.markers.remove(ARCHITECTURE_LOOP_START);
        let accepted_index = new_index[keep].expect("accepted message kept");
        self.markers
            .insert(String::from(ARCHITECTURE_ACCEPTED), accepted_index);
        Ok(removed)
    }

    /// Independent copy holding the messages up to and including the
    /// accepted architecture.
    pub fn fork_for_detailing(&self) -> Result<Conversation, ConversationError> {
        let end = self
            .marker(ARCHITECTURE_ACCEPTED)
            .ok_or_else(|| ConversationError::MissingMarker(String::from(ARCHITECTURE_ACCEPTED)))?;
        let messages = self.messages[..=end].to_vec();
        let markers = self
            .markers
            .iter()
            .filter(|(_, i)| **i <= end)
            .map(|(k, v)| (k.clone(), *v))
            .collect();
        Ok(Conversation { messages, markers })
    }
}
