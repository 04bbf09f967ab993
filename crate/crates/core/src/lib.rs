//! Behavioural simulator and analysis toolkit for a hybrid continuous-time /
//! discrete-time second-order delta-sigma modulator front-end.

pub mod cli;
pub mod config;
pub mod decim;
pub mod error;
pub mod linmodel;
pub mod loopsim;
pub mod metrics;
pub mod noisemodel;
pub mod sigproc;

pub use error::{Error, Result};
