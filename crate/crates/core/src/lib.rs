//! Regression Monte Carlo solver for multi-dimensional mean-field BSDEs
//! with diagonally quadratic generators, together with the explicit
//! constants and bound checks of the local and global existence theory.
//!
//! Layers, bottom up: [`model`] and [`constants`] are pure; [`mc`] holds the
//! particle machinery; [`qbsde1d`] solves one scalar equation; [`picard`]
//! iterates the decoupling map on a window; [`global`] stitches windows over
//! `[0, T]`; [`bench`] provides cases with known solutions; [`cli`] and
//! [`config`] drive runs from a TOML file.

pub mod bench;
pub mod cli;
pub mod config;
pub mod constants;
pub mod error;
pub mod global;
pub mod mc;
pub mod model;
pub mod picard;
pub mod qbsde1d;

pub use error::{Error, Result};
