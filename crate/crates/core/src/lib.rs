//! Direction-of-arrival estimation for two-element automotive ultrasonic
//! arrays.
//!
//! The crate covers the full experimental loop: echo simulation
//! ([`signal`]), MUSIC subspace estimation with grating-lobe enumeration
//! ([`music`]), a convolutional regressor trained from scratch ([`nn`]),
//! labelled datasets ([`dataset`]), head-to-head evaluation ([`eval`]) and
//! range-based triangulation ([`triangulation`]).

pub mod dataset;
pub mod error;
pub mod eval;
pub mod exec;
pub mod music;
pub mod nn;
pub mod signal;
pub mod triangulation;

mod binio;

pub use error::{Error, Result};
pub use exec::Execution;
