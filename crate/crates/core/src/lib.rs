//! Desk-scale sofic entropy.
//!
//! The crate builds sofic approximations of concrete groups ([`group`]),
//! lifts group-algebra elements through them ([`algebra`]), counts
//! microstates of shift systems under the metric and observable
//! formulations ([`microstates`], [`entropy`]) with covering/packing
//! machinery from [`metric`], and provides the representation-theoretic
//! tools used to certify entropy upper bounds for compact actions
//! ([`spectral`]).
//!
//! All logarithms are natural; entropies are reported in nats.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod algebra;
pub mod entropy;
pub mod error;
pub mod group;
pub mod logspace;
pub mod metric;
pub mod microstates;
pub mod spectral;

pub use error::{Error, Result};
pub use num_complex::Complex64;
