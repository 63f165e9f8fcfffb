//! Empty by design: this crate exists to host the criterion benchmarks
//! under `benches/`.
