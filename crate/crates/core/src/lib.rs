//! Order-flow modelling toolkit: limit order book reconstruction from an
//! event stream, order-flow and LOB-snapshot datasets, a from-scratch stacked
//! LSTM classifier of mid-price moves, and the evaluation statistics used to
//! judge it.

// `!(x > 0.0)` is how positive-and-not-NaN checks are spelled here.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod features;
pub mod feed;
pub mod lob;
pub mod net;
pub mod reference;
pub mod stats;
