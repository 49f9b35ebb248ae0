//! Stark tuning of cavity-coupled single rare-earth ions: electrode field
//! solving, the linear Stark model, cavity-modified emitters, photon-counting
//! simulation of the measurement protocols and the fits that analyze them.
//!
//! The `starksim` binary wraps [`cli`]; [`pipeline`] holds the end-to-end runs.

// Range checks are written `!(x > 0.0)` so that NaN fails them too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod cli;
pub mod config;
pub mod electrostatics;
pub mod emitter_cavity;
pub mod experiment_sim;
pub mod io;
pub mod pipeline;
pub mod stark_model;
