//! Cache hit-rate and runtime prediction for fork-join parallel regions on
//! multicore machines, from one basic-block labeled sequential memory trace.
//!
//! The pipeline: [`trace`] parses or synthesizes the sequential trace,
//! [`mimic`] derives per-core private traces and an interleaved shared trace,
//! [`reuse`] turns traces into reuse profiles, [`cache`] maps profiles to hit
//! rates per cache level, and [`runtime`] turns hit rates plus kernel counts
//! into a runtime. [`pipeline`] drives all of it for several core counts.

pub mod cache;
pub mod mimic;
pub mod pipeline;
pub mod reuse;
pub mod rng;
pub mod runtime;
pub mod trace;
