//! Next best action recommendation for running business process instances.
//!
//! The offline side trains a multi-task recurrent predictor ([`predictor`])
//! and a nearest-neighbour index over historical suffixes
//! ([`candidate_index`]). The online side ([`recommender`]) predicts how a
//! running case will continue, and when the projected KPI total exceeds a
//! threshold it swaps the predicted continuation for the cheapest retrieved
//! one that a DCR graph ([`dcr`]) accepts. [`evaluation`] compares both
//! behaviours on held-out cases.

pub mod eventlog;
pub mod predictor;
pub mod candidate_index;
pub mod dcr;
pub mod recommender;
pub mod evaluation;
pub mod artifacts;
