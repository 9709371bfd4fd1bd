//! Simulator and learning library for redundant packet scheduling over
//! multiple lossy paths.
//!
//! A transmitter sends `K` information packets per cycle over `m` wireless
//! paths. Each round of a cycle may replicate its packet over a subset of
//! the paths; a scheduling class fixes what fraction of rounds use 1, 2 or
//! 3 replicas and an interleaved weighted round robin rotates which paths
//! carry them. An actor-critic agent observes per-path loss reports once
//! per report interval and learns online which class and which path
//! priority ordering keep the delivered-packet loss rate under a threshold
//! without burning more bandwidth than needed.
//!
//! Module map:
//! - [`channels`]: Bernoulli loss simulation and per-path counters
//! - [`wrr`]: scheduling classes and the credit-based cycle planner
//! - [`metrics`]: loss statistics and per-interval reports
//! - [`neural`]: minimal MLP with exact backprop, ADAM and soft updates
//! - [`agent`]: action space, reward, replay buffer and the learning step
//! - [`oracle`]: exact expected-loss evaluation of every action
//! - [`harness`]: experiment configuration, driver loop and CSV traces

pub mod agent;
pub mod channels;
pub mod harness;
pub mod metrics;
pub mod neural;
pub mod oracle;
pub mod rng;
pub mod wrr;

mod error;

pub use error::{Error, Result};
