//! Library side of the `abem` command: the benchmark harness and the random
//! policy-tree generator. The binary in `main.rs` is a thin wrapper over
//! this and the `abem` crate.

pub mod bench;
