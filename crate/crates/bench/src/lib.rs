//! Criterion benchmarks for the selection pipeline; see `benches/`.
