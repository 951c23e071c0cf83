//! Criterion benchmarks for the replay, dataset and model hot paths; see `benches/`.
