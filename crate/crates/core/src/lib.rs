//! Single-process simulator for trustworthy federated learning.
//!
//! A run couples three mechanisms on top of full-batch distributed gradient
//! descent:
//!
//! - **fairness**: clients optimise the reweighted loss `F_i^(q+1)` ([`model`]),
//! - **privacy**: client messages carry Gaussian noise, optionally after
//!   norm clipping ([`privacy`]),
//! - **robustness**: the server screens messages with two-sided norm-based
//!   screening (TNBS) or one of the benchmark rules ([`aggregate`]).
//!
//! Byzantine clients are simulated by [`attack`]; [`engine`] drives rounds
//! and records metrics; [`config`] and [`commands`] provide the flat config
//! format and the `run`/`sweep` drivers behind the CLI.
//!
//! Every random draw comes from a ChaCha stream derived from
//! `(seed, client, round)` ([`rng`]), so results do not depend on the
//! thread schedule. With the `parallel` feature (default) per-client work
//! runs on rayon; [`parallel::Execution`] switches it off at runtime.

pub mod aggregate;
pub mod attack;
pub mod commands;
pub mod config;
pub mod dataset;
pub mod engine;
pub mod linalg;
pub mod model;
pub mod parallel;
pub mod privacy;
pub mod rng;

pub use aggregate::{AggregationOutcome, AggregationRule, ClientMessage};
pub use attack::AttackSpec;
pub use config::{ConfigError, ExperimentConfig};
pub use dataset::{ClientShard, Dataset, Sample};
pub use engine::{Experiment, ExperimentReport, RoundMetrics};
pub use model::{LossReport, Model, ModelParams};
pub use privacy::DpConfig;
