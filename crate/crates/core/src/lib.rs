//! Learn a correlated subspace between webpage text and image visual
//! features, retrieve attentionally equivalent text for an image, and price
//! the bytes saved by the swap.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod binio;
pub mod cca;
pub mod costs;
pub mod error;
pub mod evaluate;
pub mod features;
pub mod ingest;
pub mod pairing;
pub mod pipeline;
pub mod retrieval;
pub mod synth;

pub use error::{Error, Result};
