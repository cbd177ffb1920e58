//! Probabilistic point-cloud registration with automatic termination.
//!
//! Aligns a source cloud to a target cloud by alternating two steps:
//! associate every source point with several nearby target points under
//! soft probabilistic weights, then solve for the rigid motion that best
//! explains those weighted matches with an iteratively reweighted
//! Levenberg-Marquardt pass. The outer loop repeats until a termination
//! criterion decides that further iterations no longer improve the
//! alignment, and every iteration is recorded in a diagnostic trace.
//!
//! ```
//! use ppcr::{register, RegistrationConfig, RigidTransform, Point3, PointCloud};
//!
//! let target: PointCloud = (0..100)
//!     .map(|i| Point3::new((i % 10) as f64 * 0.1, (i / 10) as f64 * 0.1, 0.0))
//!     .collect();
//! let source = target.clone();
//! let config = RegistrationConfig::for_target(&target).unwrap();
//! let result = register(&source, &target, &RigidTransform::identity(), &config).unwrap();
//! println!("{} after {} iterations", result.reason, result.trace.len());
//! ```

pub mod association;
pub mod error;
pub mod geometry;
pub mod io_formats;
pub mod metrics;
pub mod neighbor_search;
pub mod optimizer;
pub mod registration;

pub use association::{gaussian_weights, t_weights, AssociationSet, WeightModel};
pub use error::{Error, Result};
pub use geometry::{
    params_to_transform, transform_to_params, Point3, PointCloud, RigidTransform, TransformParams,
};
pub use metrics::{aggregate, mse_to_ground_truth, resolution, EvaluationSummary};
pub use neighbor_search::SpatialIndex;
pub use optimizer::{InnerSolveReport, LmConfig, WeightedProblem};
pub use registration::{
    annotate_ground_truth, evaluate_criterion, mse_between_iterations, register, IterationRecord,
    RegistrationConfig, RegistrationResult, TerminationCriterion, TerminationReason,
};
