//! Relation instances, KB triplets and partitions.
//!
//! A relation instance is a pre-tokenized sentence with two marked entity
//! mentions. Spans are inclusive on both ends and the head mention always
//! precedes the tail mention.

use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::hash::Hash;
use thiserror::Error;

/// Inclusive token range `[start, end]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "[usize; 2]", into = "[usize; 2]")]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Span { start, end }
    }

    pub fn width(&self) -> usize {
        self.end + 1 - self.start
    }

    pub fn contains(&self, idx: usize) -> bool {
        self.start <= idx && idx <= self.end
    }
}

impl From<[usize; 2]> for Span {
    fn from(v: [usize; 2]) -> Self {
        Span::new(v[0], v[1])
    }
}

impl From<Span> for [usize; 2] {
    fn from(s: Span) -> Self {
        [s.start, s.end]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum InstanceError {
    #[error("instance {id}: spans overlap or are reversed (head {head:?}, tail {tail:?})")]
    SpanOrderViolation { id: String, head: Span, tail: Span },
    #[error("instance {id}: span end {end} is out of range for {len} tokens")]
    SpanOutOfRange { id: String, end: usize, len: usize },
    #[error("instance {id}: needs at least 2 tokens, got {len}")]
    TooShort { id: String, len: usize },
}

/// A sentence with a head and a tail entity mention.
///
/// `gold_relation` is an evaluation label. Nothing on the training path reads it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationInstance {
    pub id: String,
    pub tokens: Vec<String>,
    pub head: Span,
    pub tail: Span,
    #[serde(rename = "head_id")]
    pub head_entity: String,
    #[serde(rename = "tail_id")]
    pub tail_entity: String,
    #[serde(rename = "relation", default)]
    pub gold_relation: Option<String>,
}

impl RelationInstance {
    pub fn head_tokens(&self) -> &[String] {
        &self.tokens[self.head.start..=self.head.end]
    }

    pub fn tail_tokens(&self) -> &[String] {
        &self.tokens[self.tail.start..=self.tail.end]
    }

    /// Copy with the gold label removed.
    pub fn without_gold(&self) -> Self {
        RelationInstance {
            gold_relation: None,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<(), InstanceError> {
        validate_instance(self)
    }
}

/// Checks `start <= end`, `head.end < tail.start` and `tail.end <= n - 1`.
pub fn validate_instance(inst: &RelationInstance) -> Result<(), InstanceError> {
    let n = inst.tokens.len();
    if n < 2 {
        return Err(InstanceError::TooShort {
            id: inst.id.clone(),
            len: n,
        });
    }
    let (h, t) = (inst.head, inst.tail);
    if h.start > h.end || t.start > t.end || h.end >= t.start {
        return Err(InstanceError::SpanOrderViolation {
            id: inst.id.clone(),
            head: h,
            tail: t,
        });
    }
    if t.end >= n {
        return Err(InstanceError::SpanOutOfRange {
            id: inst.id.clone(),
            end: t.end,
            len: n,
        });
    }
    Ok(())
}

/// A KB fact `(head, relation, tail)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triplet {
    #[serde(rename = "head")]
    pub head_entity: String,
    pub relation: String,
    #[serde(rename = "tail")]
    pub tail_entity: String,
}

impl Triplet {
    pub fn new(head: impl Into<String>, relation: impl Into<String>, tail: impl Into<String>) -> Self {
        Triplet {
            head_entity: head.into(),
            relation: relation.into(),
            tail_entity: tail.into(),
        }
    }

    pub fn is_valid(&self) -> bool {
        self.head_entity != self.tail_entity
    }
}

/// One cluster label per instance, aligned with `ids`.
///
/// Labels are interned to dense indices in order of first appearance, so two
/// partitions that differ only by a renaming of cluster ids compare equal
/// under every metric.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    pub ids: Vec<String>,
    pub labels: Vec<usize>,
    pub names: Vec<String>,
}

impl Partition {
    pub fn from_labels<L: Eq + Hash + ToString>(labels: impl IntoIterator<Item = L>) -> Self {
        let labels: Vec<L> = labels.into_iter().collect();
        let ids = (0..labels.len()).map(|i| i.to_string()).collect();
        Self::with_ids(ids, labels)
    }

    pub fn with_ids<L: Eq + Hash + ToString>(ids: Vec<String>, labels: Vec<L>) -> Self {
        assert_eq!(ids.len(), labels.len(), "ids and labels must be aligned");
        let mut index: HashMap<&L, usize> = HashMap::new();
        let mut names = Vec::new();
        let mut dense = Vec::with_capacity(labels.len());
        for l in &labels {
            let next = index.len();
            let k = *index.entry(l).or_insert_with(|| {
                names.push(l.to_string());
                next
            });
            dense.push(k);
        }
        Partition {
            ids,
            labels: dense,
            names,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_clusters(&self) -> usize {
        self.names.len()
    }

    pub fn label_name(&self, i: usize) -> &str {
        &self.names[self.labels[i]]
    }
}
