//! Criterion benchmarks for the depthstyle kernels live in `benches/`.
