//! Criterion benchmarks for lazypi live under `benches/`.
