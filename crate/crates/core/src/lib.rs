//! Joint slice, coverage, resource-block and power allocation for a
//! NOMA-based vehicular network.
//!
//! The crate contains the highway world ([`scenario`]), the radio channel
//! ([`channel`]), NOMA reception and delivery accounting ([`phy`]), the
//! single-agent decision process ([`env`]), a dueling deep-Q learner with
//! prioritized replay ([`dqn`]), offline swap-matching schedulers
//! ([`baselines`]), an exhaustive reference for tiny instances ([`oracle`])
//! and the experiment plumbing used by the command line driver
//! ([`config`], [`experiment`]).

// `!(x > y)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod baselines;
pub mod channel;
pub mod config;
pub mod dqn;
pub mod env;
pub mod error;
pub mod experiment;
pub mod oracle;
pub mod phy;
pub mod policy;
pub mod rng;
pub mod scenario;
pub mod world;

mod par;

pub use error::{Error, Result};
