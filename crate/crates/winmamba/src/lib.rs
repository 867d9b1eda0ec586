//! Windowed / global four-directional selective-scan segmentation engine.
//!
//! The encoder alternates window-based and shifted-window four-directional
//! selective scans (S6) in its early stages and switches to global
//! four-directional scanning once the feature maps are small, feeding a
//! pyramid-pooling + FPN decoder for dense prediction. Everything runs on a
//! small f64 tensor engine with reverse-mode autodiff so every backward pass
//! can be checked against central finite differences.

pub mod bench;
pub mod blocks;
pub mod config;
pub mod data;
pub mod decoder;
pub mod gradcheck;
pub mod io;
pub mod metrics;
pub mod rng;
pub mod s6;
pub mod scan;
pub mod tape;
pub mod tensor;
pub mod train;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("invalid argument to {op}: {msg}")]
    InvalidArgument { op: &'static str, msg: String },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad tensor file: {0}")]
    BadFormat(String),
}

pub type Result<T> = std::result::Result<T, Error>;

/// Runs `f` inside a dedicated rayon pool with `threads` workers.
///
/// All data-parallel maps in the engine write disjoint output slices and
/// reduce in a fixed order, so results are bit-identical for any thread count.
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .expect("failed to build thread pool");
    pool.install(f)
}
