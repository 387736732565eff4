//! Discrete-time spiking network simulation with hardware-agnostic energy
//! accounting in EMAC units (one multiply-accumulate = 1) and least-squares
//! identification of per-device energy models.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calib;
pub mod cli;
pub mod codec;
pub mod emac;
pub mod engine;
pub mod netspec;
pub mod neuron;
