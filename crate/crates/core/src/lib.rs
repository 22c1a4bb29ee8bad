pub mod autodiff;
mod binio;
pub mod checkpoint;
pub mod dataset;
pub mod embedding;
pub mod entity;
pub mod error;
pub mod eval;
pub mod fixtures;
pub mod index;
pub mod io;
pub mod model;
pub mod nn;
pub mod synthetic;
pub mod tensor;
pub mod text;
pub mod training;
pub mod trec;

pub use error::{Error, Result};
