pub mod embedding;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod geometry;
pub mod image;
pub mod io;
pub mod matching;
pub mod par;
pub mod registration;
pub mod retrieval;
pub mod sequence;
pub mod synth;

pub use error::{Error, Result};
