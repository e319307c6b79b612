//! Open relation extraction with element intervention.
//!
//! Relation instances are encoded into vectors by a small pooled-embedding
//! model trained with two margin losses built from intervened copies of each
//! instance:
//!
//! * [`intervene::hyber_sample`] keeps the context and swaps one entity for a
//!   sibling, cousin and unrelated entity from an [`hierarchy::EntityHierarchy`];
//! * [`intervene::gcc_sample`] keeps the entity pair and varies the relation
//!   context through renaming, expansion and replacement.
//!
//! Relations are then predicted by [`cluster::kmeans`] over the
//! representations and scored with [`metrics`].

pub mod cli;
pub mod cluster;
pub mod data;
pub mod encoder;
pub mod hierarchy;
pub mod instance;
pub mod intervene;
pub mod metrics;
pub mod pipeline;

pub use instance::{validate_instance, Partition, RelationInstance, Span, Triplet};
