//! Criterion benchmarks for the switchrate kernels; see `benches/`.
