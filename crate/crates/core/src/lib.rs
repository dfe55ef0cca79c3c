//! Desk-scale federated learning with server-side robustification.
//!
//! Clients train on private labeled shards and the server averages their
//! weights. Three protocols are provided: plain federated averaging
//! (`cleanfl`), clients trained with AugMix consistency (`robustfl`) and
//! clean clients plus periodic server-side DART on an unlabeled proxy set
//! (`federl`). A cost model charges simulated per-client time and energy,
//! and models are scored on clean and synthetically corrupted test data.

pub mod augmix;
pub mod budget;
pub mod dart;
pub mod data;
mod error;
pub mod eval;
pub mod fed;
pub mod image;
pub mod losses;
pub mod model;
pub mod rng;

pub use error::{Error, Result};
