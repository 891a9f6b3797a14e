//! Water quality classification by total suspended solids (TSS) from images.
//!
//! The crate covers the whole pipeline: synthetic sample rendering
//! ([`synthgen`]), video ingestion ([`ingest`]), dataset handling
//! ([`datamodel`]), an AlexNet-shaped CNN with transfer-learning head
//! surgery ([`network`]), fine-tuning ([`trainer`]) and multiclass
//! evaluation ([`evalmetrics`]).

pub mod datamodel;
pub mod error;
pub mod evalmetrics;
pub mod fsutil;
pub mod ingest;
pub mod network;
pub mod scalar;
pub mod seed;
pub mod synthgen;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Real;
