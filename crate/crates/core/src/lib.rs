//! Shamir-based multiparty computation engine and a smart-metering
//! aggregation simulator built on it.
//!
//! Layers, bottom up: [`field`] and [`shamir`] give the arithmetic, [`abb`]
//! runs `n` simulated servers with metered message exchange, [`gates`]
//! builds equality tests and permutation networks, [`aggregation`] holds
//! the region and grid algorithms, [`metering`] simulates the meters, and
//! [`sim`] ties a full run together. [`costs`] is the analytic model the
//! measured counters are compared against.

pub mod abb;
pub mod aggregation;
pub mod costs;
pub mod error;
pub mod field;
pub mod gates;
pub mod metering;
pub mod seed;
#[doc(hidden)]
pub mod selftest;
pub mod shamir;
pub mod sim;

pub use error::{Error, Result};
