pub mod autodiff;
pub mod config;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod gat;
pub mod head;
pub mod interaction_memory;
pub mod layers;
pub mod model;
pub mod span_extract;
pub mod span_graph;
pub mod trainer;

pub use error::{Error, Result};
