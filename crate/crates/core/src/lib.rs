//! Streaming speech-transducer toolkit.
//!
//! The pipeline: synthetic or file-backed feature sequences are cut into
//! chunks with left and right context ([`chunking`]); the right context can
//! be simulated from history by a small recurrent network ([`simunet`]);
//! each spliced chunk is encoded independently and its context rows are
//! dropped ([`model`]); training combines streaming, full-context and
//! simulation losses ([`trainer`], [`rnnt_loss`]); decoding is a monotonic
//! frame-synchronous beam search ([`decoder`]) optionally followed by
//! n-gram rescoring ([`lm`]). [`harness`] ties these together for the CLI.

pub mod chunking;
pub mod config;
pub mod data;
pub mod decoder;
pub mod error;
pub mod harness;
pub mod lm;
pub mod model;
pub mod numerics;
pub mod rnnt_loss;
pub mod simunet;
pub mod trainer;

pub use error::{Error, Result};
