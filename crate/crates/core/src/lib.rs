//! Lightweight rerankers over cached hidden-state features: pick the best of
//! K sampled responses with a sub-million-parameter listwise or pointwise
//! model trained on CPU.

pub mod evaluation;
pub mod feature_store;
pub mod numkernel;
pub mod objectives;
pub mod rankers;
pub mod synthetic;
pub mod training;
