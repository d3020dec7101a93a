//! Deterministic federated-learning simulator with progressive model growth.
//!
//! The crate is organised bottom-up: [`nn`] is a small reverse-mode network
//! kernel, [`progressive`] splits a network into growable stages, [`compression`]
//! holds the message codecs, [`metrics`] the cost model and convergence
//! diagnostics, [`data`] the synthetic datasets and client partitioners, and
//! [`federation`] runs the rounds. [`config`] and [`report`] cover the
//! experiment file formats used by the command-line runner.

pub mod compression;
pub mod config;
pub mod data;
pub mod error;
pub mod federation;
pub mod metrics;
pub mod nn;
pub mod progressive;
pub mod report;
pub mod rng;

pub use error::{Error, Issue, Result};
