//! Host-side autotuning for JIT-compiled GPU kernels.
//!
//! The crate is organised around the tuning workflow:
//!
//! - [`configspace`] declares what can be tuned and enumerates valid points.
//! - [`executor`] measures one point, either through an external benchmark
//!   runner speaking JSON Lines or through a deterministic synthetic model.
//! - [`search`] explores a space under a budget and records a full trace.
//! - [`cache`] persists results keyed by environment fingerprint and shape.
//! - [`asmstats`] and [`report`] analyse what tuning produced.

pub mod asmstats;
pub mod cache;
pub mod configspace;
pub mod digest;
pub mod executor;
pub mod report;
pub mod search;
