//! Criterion benchmarks for the `anderson-strip` kernels; see `benches/`.
