//! Benchmark-only crate; the actual benchmarks live in `benches/`.
