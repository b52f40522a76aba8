pub mod ablate;
pub mod audio;
pub mod codec;
pub mod error;
pub mod flow;
pub mod infer;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod persist;
pub mod toy;
pub mod train;

pub use error::{Error, Result};
