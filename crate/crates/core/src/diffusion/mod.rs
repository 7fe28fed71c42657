//! Kernel construction, the landmark Markov operator, and the diffusion
//! embedding it induces.

mod bandwidth;
mod cache;
mod embedding;
mod kernel;
mod operator;

pub use bandwidth::{compute_bandwidths, BandwidthPool, BandwidthTable};
pub use cache::{read_embedding, write_embedding};
pub use embedding::{DiffusionEmbedding, NormalizedDistance, ScaledEmbedding};
pub use kernel::{build_landmark_kernel, KernelTimeScale, SparseKernel};
pub use operator::{build_diffusion_operator, implied_row_sums, SPECTRAL_GAP_TOLERANCE};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::landmarks::LandmarkSet;
use crate::trajectory::TrajectoryDataset;

/// Default cap on retained eigenpairs.
pub const DEFAULT_MAX_MODES: usize = 300;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiffusionParams {
    pub n_neighbors: usize,
    pub alpha: f64,
    pub threshold: f64,
    /// Retained eigenpairs; `None` means `min(n_l, 300)`.
    pub modes: Option<usize>,
    pub renormalize: bool,
    pub pool: BandwidthPool,
    pub time_scale: KernelTimeScale,
}

impl Default for DiffusionParams {
    fn default() -> Self {
        DiffusionParams {
            n_neighbors: 6,
            alpha: 1.0,
            threshold: 1e-6,
            modes: None,
            renormalize: true,
            pool: BandwidthPool::Landmarks,
            time_scale: KernelTimeScale::Steps,
        }
    }
}

impl DiffusionParams {
    pub fn modes_for(&self, n_l: usize) -> usize {
        self.modes.unwrap_or(DEFAULT_MAX_MODES).min(n_l).max(1)
    }
}

/// Bandwidths and sparse kernel for `lm`.
pub fn build_kernel(
    ds: &TrajectoryDataset,
    lm: &LandmarkSet,
    params: &DiffusionParams,
) -> Result<(BandwidthTable, SparseKernel)> {
    if !(params.alpha > 0.75 && params.alpha < 1.75) {
        log::warn!("alpha = {} is outside the recommended range (0.75, 1.75)", params.alpha);
    }
    let mut bw = compute_bandwidths(ds, lm, params.n_neighbors, params.pool)?;
    bw.alpha = params.alpha;
    let kernel = build_landmark_kernel(ds, lm, &bw, params.threshold, params.time_scale)?;
    Ok((bw, kernel))
}

/// Bandwidths → kernel → operator → embedding.
pub fn build_embedding(ds: &TrajectoryDataset, lm: &LandmarkSet, params: &DiffusionParams) -> Result<DiffusionEmbedding> {
    let (_, kernel) = build_kernel(ds, lm, params)?;
    log::debug!("kernel: {} particles × {} landmarks, {} entries", kernel.rows(), kernel.cols(), kernel.nnz());
    build_diffusion_operator(&kernel, params.modes_for(lm.len()), params.renormalize)
}
