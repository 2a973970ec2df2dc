//! Criterion benchmarks for the attack pipeline live in `benches/`.
