//! Experiment harness for cost-only economic MPC on the CSTR benchmark.
//!
//! Generates excitation signals, simulates the reactor, trains and validates
//! the cost oracle, runs the closed-loop experiments and writes CSV artifacts.

pub mod closedloop;
pub mod config;
pub mod experiments;
pub mod nominal;
pub mod output;
pub mod signals;
pub mod sim;
