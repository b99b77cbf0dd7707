//! Link-level simulator for unsourced random access over a block-fading
//! multi-antenna uplink.
//!
//! Every device splits its B-bit message into a preamble part, sent as a
//! column of a shared Gaussian codebook, and a payload part, sent as an
//! interleaved LDPC codeword. The receiver detects the active preambles and
//! estimates the channels by belief propagation ([`dad_ce`]), resolves
//! preamble collisions with an energy test and sliding-window retransmission
//! ([`collision`]), decodes the payloads with a multi-user LDPC decoder plus
//! successive interference cancellation ([`mimo_ldpc`]) and alternates the two
//! stages using decoded codewords as extra pilots ([`pipeline`]).

pub mod channel_sim;
pub mod collision;
pub mod config;
pub mod cs_codebook;
pub mod dad_ce;
mod error;
pub mod framing;
pub mod harness;
pub mod ldpc_code;
pub mod linalg;
pub mod mimo_ldpc;
pub mod pipeline;
pub mod seeds;

pub use error::{Error, Result};
pub use num_complex::Complex64 as C64;

/// Bits are stored one per byte, each 0 or 1.
pub type Bits = Vec<u8>;
