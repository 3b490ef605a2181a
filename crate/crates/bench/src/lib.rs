//! Criterion benchmarks for the simulation and scoring hot paths; see `benches/`.
