//! Criterion benchmarks for hgt-core live under `benches/`.
