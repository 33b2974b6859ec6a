//! Toolkit for measuring and mitigating content alterations in LLM
//! outputs: framing shifts between a source and its summary, primacy-skewed
//! coverage, and hallucination on news past a model's knowledge cutoff.

// NaN-rejecting guards are written as `!(x > 0.0)` on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod corpus;
pub mod decoding;
pub mod embedding;
pub mod gateway;
pub mod harness;
pub mod judge;
pub mod metrics;
pub mod rng;
pub mod strategies;
pub mod text;
