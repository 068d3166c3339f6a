//! Personalised joke ranking from implicit feedback.

pub mod datamodel;
pub mod dl_model;
mod error;
pub mod evaluation;
pub mod experiment;
pub mod features;
pub mod labelling;
pub mod lr_model;
pub mod ranking;
pub mod simgen;

pub use error::{Error, Result};
