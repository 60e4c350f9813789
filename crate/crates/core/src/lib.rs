pub mod autograd;
pub mod corpus;
pub mod ensemble;
pub mod error;
pub mod evaluation;
pub mod models;
pub mod pipeline;
pub mod plot;
pub mod synthetic;
pub mod text_prep;
pub mod training;

pub use error::{Error, Result};
