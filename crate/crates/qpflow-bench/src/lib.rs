//! Benchmark-only crate; see `benches/qpflow.rs`.
