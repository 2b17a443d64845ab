//! Packet-sequence embedding pipeline: data model, synthetic generator,
//! tensor kernels, the embedding network and its training loop, exact
//! cosine k-NN retrieval, and evaluation metrics.

pub mod flow;
pub mod gradcheck;
pub mod parallel;
pub mod rng;
pub mod tensor;
