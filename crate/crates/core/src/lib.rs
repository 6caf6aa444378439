pub mod codec;
pub mod elemflow;
pub mod error;
pub mod fixedq;
pub mod fixtures;
pub mod layers;
pub mod model;
pub mod mst;
pub mod par;
pub mod ubcs;

pub use error::{Error, Result};
