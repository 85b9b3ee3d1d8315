//! A minimal, deterministic neural-network engine.
//!
//! Networks are static [`LayerGraph`]s built with a [`GraphBuilder`]. Forward
//! passes run on 64-bit reals; [`LayerGraph::backward`] computes reverse-mode
//! gradients for every layer kind, and [`LayerGraph::flops`] gives analytic
//! operation counts. Weights are stored as 32-bit reals in the format
//! documented in [`io`].

pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod io;
pub mod layers;
pub mod loss;
pub mod optim;
pub mod tensor;

pub use error::{NnError, Result};
pub use graph::{Gradients, GraphBuilder, Layer, LayerGraph, NodeId, ParamId, Shape, Tape};
pub use io::{load_weights, save_weights, WeightEntry};
pub use optim::AdamState;
pub use tensor::Tensor;
