//! Integration patterns (router, filter, splitter, aggregator, translator,
//! enricher) whose content logic is a Datalog program evaluated over
//! table-shaped messages.

pub mod datalog;
pub mod cdm;
pub mod patterns;
pub mod datagen;
pub mod pipeline;
pub mod bench;
