//! Deterministic simulator for colored-capability temporal memory safety.

pub mod capability;
pub mod config;
pub mod machine;
pub mod unr;
pub mod heap;
pub mod schemes;
pub mod harness;
