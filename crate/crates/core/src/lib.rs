//! A small CPU neural-network engine and the training pipeline for 7-class
//! dermoscopic lesion classification on 28x28 RGB inputs.

pub mod augment;
pub mod checkpoint;
pub mod dataset;
pub mod error;
pub mod io_util;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod rng;
pub mod tensor;
pub mod trainer;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use error::{Error, Result};
pub use rng::Rng;
pub use tensor::Tensor;
pub use trainer::{evaluate, predict, train, TrainConfig};

/// Caps the global worker pool at `DERMFORGE_THREADS` when that variable is a
/// positive integer. Safe to call more than once; only the first call counts.
pub fn init_thread_pool() -> Result<()> {
    let Some(n) = std::env::var("DERMFORGE_THREADS").ok() else {
        return Ok(());
    };
    let n: usize = n.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        Error::Argument(format!(
            "DERMFORGE_THREADS must be a positive integer, got {n:?}"
        ))
    })?;
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global();
    Ok(())
}
