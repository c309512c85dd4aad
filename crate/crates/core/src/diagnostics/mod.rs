//! Clustering metrics, gradient-alignment diagnostics and numerical oracles.

mod gradients;
mod metrics;
mod theorem1;

pub use gradients::{
    aligned_targets, delta_fd, delta_fr, finite_diff_check, gradient_cosine, kl_encoder_grad,
    SelfSupervised, FD_MIN_COORDS, MIN_GRAD_NORM,
};
pub use metrics::{accuracy, align_clusters, confusion, hungarian, nmi};
pub use theorem1::{check_theorem1, random_semi_orthogonal, DecompositionInstance, Theorem1Report};
