//! Criterion benchmarks for the slowfast pipeline stages; see `benches/`.
