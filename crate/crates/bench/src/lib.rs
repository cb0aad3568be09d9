//! Criterion benchmarks for the sample CCA engine, the spiked samplers and the
//! GOE gap reference distribution; see `benches/spectrum.rs`.
