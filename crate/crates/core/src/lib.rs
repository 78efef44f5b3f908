//! Dialect-robust text-encoder alignment toolkit: benchmark data handling,
//! embedding stores, alignment losses with analytic gradients, a linear
//! adapter trainer and dialect-drop evaluation.

pub mod adapter;
pub mod cli;
pub mod dataset;
pub mod embedding_store;
pub mod evaluation;
pub mod gradcheck;
pub mod losses;
pub mod optim;
pub mod synthetic;
pub mod trainer;
