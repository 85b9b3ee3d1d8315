pub mod edge;
pub mod energy;
pub mod error;
pub mod event;
pub mod io;
pub mod pipeline;
pub mod pupil;
pub mod roinet;
pub mod segnet;
pub mod synth;
pub mod train;
pub mod types;

pub use error::{Error, Result};
