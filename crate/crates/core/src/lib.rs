#![allow(clippy::neg_cmp_op_on_partial_ord)]

//! Inference of sampler program text.
//!
//! Programs in a small typed s-expression language are searched for with
//! Metropolis-Hastings approximate Bayesian computation: a hierarchical
//! grammar prior over program text, trained on human-written samplers, is
//! combined with a likelihood built from summary statistics or hypothesis
//! tests on the samples a candidate program produces.

pub mod corpus;
pub mod grammar;
pub mod harness;
pub mod mcmc;
pub mod sexpr;
pub mod stats;
