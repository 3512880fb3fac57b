//! Criterion benchmarks for the training hot paths live under `benches/`.
