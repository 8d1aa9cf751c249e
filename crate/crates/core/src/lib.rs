//! Recurrent transformer navigation agent.
//!
//! A small from-scratch stack: a reverse-mode autodiff tape ([`tensor`]), a
//! multi-head attention encoder with navigation masks ([`transformer`]), a
//! recurrent state-token agent ([`agent`]), synthetic graph environments
//! ([`envsim`]), mixed imitation/actor-critic training ([`training`]) and
//! navigation metrics ([`metrics`]).

pub mod agent;
pub mod cli;
pub mod envsim;
pub mod error;
pub mod metrics;
pub mod tensor;
pub mod training;
pub mod transformer;

pub use error::{Error, Result};
