//! Criterion benchmarks for `poisson-chaos`; run with `cargo bench -p poisson-chaos-bench`.
