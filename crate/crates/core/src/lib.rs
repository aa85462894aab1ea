//! Estimation of low-CP-rank multiview probability tensors from multinomial
//! count data.
//!
//! The pipeline: scale the histogram tensor by a rank-one variance-stabilizing
//! tensor, estimate mode-wise subspaces with (Deflated-)HeteroPCA on hollowed
//! Gram matrices, refine them by projected truncated SVDs, project, and
//! unscale. Scaling rules range from none (Frobenius loss) to oracle
//! factor-based and slice normalization (entrywise l1 loss), with a fully
//! empirical plug-in variant.

pub mod error;
pub mod estimator;
pub mod evaluation;
pub mod heteropca;
pub mod io;
pub mod linalg;
pub mod model;
pub mod scaling;
pub mod tensor;

pub use error::{Error, Result};
pub use estimator::{
    estimate_density, estimate_from_split, estimate_no_thinning, estimate_with_thinning,
    DensityEstimateInputs, EstimateReport, EstimatorOptions,
};
pub use evaluation::{
    frobenius_error, l1_error, normalized_frobenius_error, normalized_l1_error,
    simplex_projection, ErrorRecord,
};
pub use heteropca::{
    deflated_hetero_pca, hetero_pca, select_block_rank, DeflationSchedule, SubspaceEstimate,
};
pub use model::{
    heteroskedastic_profile, model_to_tensor, sample_histogram, sample_model, thinning_split, xi,
    HistogramTensor, MultiviewModel, RngSeed,
};
pub use scaling::{RankOneScaling, ScalingRule};
pub use tensor::{DenseTensor, Matrix, Shape};
