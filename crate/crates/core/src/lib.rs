//! Sinkhorn divergence barycenters of discrete measures.
//!
//! The barycenter of `beta_1..beta_m` with weights `w_j` minimizes
//! `B(alpha) = sum_j w_j S_eps(alpha, beta_j)` over probability measures,
//! where `S_eps` is the debiased entropic OT cost. [`frank_wolfe::barycenter`]
//! solves it with a conditional gradient method that adds one Dirac per
//! iteration, so no support has to be fixed in advance.
//!
//! Module map:
//!
//! | module | contents |
//! |---|---|
//! | [`measure`] | discrete measures, consolidation, total variation, sampling, images |
//! | [`cost`] | ground costs and cost matrices |
//! | [`sinkhorn`] | log-domain Sinkhorn-Knopp, potentials, `OT_eps`, `S_eps` |
//! | [`frank_wolfe`] | barycenter solver |
//! | [`analysis`] | empirical checks of contraction, Lipschitz and sample-complexity bounds |
//! | [`tasks`] | compression, k-means of measures, propagation on graphs |
//! | [`io`] | JSON/CSV measure files, PGM/PNG images, graph files |

// `!(x > 0.0)` style checks are there to reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod cost;
pub mod error;
pub mod frank_wolfe;
pub mod io;
pub mod measure;
pub mod rng;
pub mod sinkhorn;
pub mod tasks;

pub use cost::{CostKind, CostSpec, Matrix, UserCost};
pub use error::{Error, Result};
pub use frank_wolfe::{
    barycenter, fw_step, grid_argmin, minimize_phi, objective, BarycenterProblem, DeltaSchedule, FwConfig,
    FwState, MinimizeMode, Phi,
};
pub use measure::{
    dirac, image_to_measure, rasterize, sample_empirical, total_variation, DiscreteMeasure,
    Domain, GaussianSpec, Points, Sampler,
};
pub use sinkhorn::{
    contraction_lambda, grad_divergence, hilbert_distance, ot_eps, ot_self, potential_extend,
    potential_gradient, sinkhorn_divergence, sinkhorn_knopp, sinkhorn_knopp_warm,
    sinkhorn_symmetric, PotentialFn, SinkhornConfig, SinkhornResult, SinkhornSolver,
};
pub use analysis::{mmd, KernelSpec, RateFit, Report};
pub use tasks::{
    compress, kmeans, propagate, ClusterModel, EdgeWeighting, PropagationGraph, PropagationResult,
};
