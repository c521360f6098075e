//! Criterion benchmarks for `bwsurge-core`; see `benches/`.
