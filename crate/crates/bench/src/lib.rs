//! Benchmark-only crate; the measurements live in `benches/hotpaths.rs`.
//! Run them with `cargo bench -p emofuse-bench`.
