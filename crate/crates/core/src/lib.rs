//! Localization and tracking of RIS-equipped users from a single-antenna
//! OFDM transmitter and a handful of single-antenna receivers.

// Guards such as `!(x > 0.0)` are meant to reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod codebook;
pub mod crlb;
pub mod estimator;
pub mod geometry;
pub mod harness;
pub mod localizer;
pub mod tracker;
