//! Multimodal entity linking: cross-attention fusion of text, image and
//! expert features, contrastive training, fuzzy candidate generation and
//! ranking evaluation.

pub mod candgen;
pub mod config;
pub mod contrastive;
pub mod datastore;
pub mod enhance;
pub mod error;
pub mod fusion;
pub mod numkernel;
pub mod rankeval;
pub mod train;

pub use error::{Error, Result};
