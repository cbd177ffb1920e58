//! Cloud statistics and ground-truth evaluation.

use crate::error::{Error, Result};
use crate::geometry::{PointCloud, RigidTransform};
use crate::neighbor_search::SpatialIndex;
use crate::registration::mse_between_iterations;

/// Aggregated outcome of a batch of registration problems.
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationSummary {
    /// One ground-truth MSE per problem, in input order.
    pub per_problem_mse: Vec<f64>,
    pub median_mse: f64,
    pub q75_mse: f64,
    pub q95_mse: f64,
    pub mean_iterations: f64,
}

/// Mean squared distance between the cloud under the estimated pose and
/// under the true pose. Correspondences are exact by construction: it is
/// the same cloud in two poses.
pub fn mse_to_ground_truth(
    source: &PointCloud,
    estimated: &RigidTransform,
    truth: &RigidTransform,
) -> f64 {
    mse_between_iterations(&estimated.apply_cloud(source), &truth.apply_cloud(source))
        .expect("same cloud under two poses")
}

/// Cloud resolution: the median over all points of the distance to each
/// point's nearest neighbor with a different index. Duplicated
/// coordinates therefore count as zero-distance neighbors.
pub fn resolution(cloud: &PointCloud) -> Result<f64> {
    if cloud.len() < 2 {
        return Err(Error::DegenerateCloud(
            "resolution needs at least two points".into(),
        ));
    }
    let index = SpatialIndex::build(&cloud.points)?;
    let mut distances: Vec<f64> = cloud
        .iter()
        .enumerate()
        .map(|(i, p)| {
            index
                .k_nearest_within(p, 2, f64::INFINITY)
                .into_iter()
                .find(|&(j, _)| j != i)
                .map(|(_, d2)| d2.sqrt())
                .expect("two best hits always include a distinct index")
        })
        .collect();
    distances.sort_by(f64::total_cmp);
    Ok(quantile_sorted(&distances, 0.5))
}

/// Quantile by linear interpolation between order statistics of an
/// already-sorted slice: rank `p * (n - 1)`, fractional part
/// interpolated.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of an empty list");
    assert!((0.0..=1.0).contains(&p), "quantile fraction out of range");
    let rank = p * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let frac = rank - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Summarize per-problem ground-truth MSEs and iteration counts.
/// Both slices must be non-empty and of equal length.
pub fn aggregate(mse_values: &[f64], iterations: &[usize]) -> EvaluationSummary {
    assert!(!mse_values.is_empty(), "nothing to aggregate");
    assert_eq!(
        mse_values.len(),
        iterations.len(),
        "one iteration count per problem"
    );
    let mut sorted = mse_values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mean_iterations = iterations.iter().sum::<usize>() as f64 / iterations.len() as f64;
    EvaluationSummary {
        per_problem_mse: mse_values.to_vec(),
        median_mse: quantile_sorted(&sorted, 0.5),
        q75_mse: quantile_sorted(&sorted, 0.75),
        q95_mse: quantile_sorted(&sorted, 0.95),
        mean_iterations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{params_to_transform, Point3, TransformParams};
    use approx::assert_relative_eq;

    #[test]
    fn identical_transforms_have_zero_error() {
        let cloud: PointCloud = (0..25)
            .map(|i| Point3::new((i % 5) as f64, (i / 5) as f64, 0.0))
            .collect();
        let t = params_to_transform(&TransformParams::from_column_slice(&[
            0.1, 0.2, -0.1, 1.0, 2.0, 3.0,
        ]));
        assert_eq!(mse_to_ground_truth(&cloud, &t, &t), 0.0);
    }

    #[test]
    fn pure_translation_offset_gives_its_square() {
        let cloud: PointCloud = (0..25)
            .map(|i| Point3::new((i % 5) as f64, (i / 5) as f64, 1.0))
            .collect();
        let truth = RigidTransform::identity();
        let off = params_to_transform(&TransformParams::from_column_slice(&[
            0.0, 0.0, 0.0, 0.0, 0.0, 0.1,
        ]));
        assert_relative_eq!(
            mse_to_ground_truth(&cloud, &off, &truth),
            0.01,
            epsilon = 1e-12
        );
    }

    #[test]
    fn grid_resolution_is_the_spacing() {
        let cloud: PointCloud = (0..27)
            .map(|i| Point3::new((i % 3) as f64, ((i / 3) % 3) as f64, (i / 9) as f64))
            .collect();
        assert_relative_eq!(resolution(&cloud).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn two_point_resolution_is_their_distance() {
        let cloud: PointCloud =
            vec![Point3::new(0.0, 0.0, 0.0), Point3::new(0.5, 0.0, 0.0)].into();
        assert_relative_eq!(resolution(&cloud).unwrap(), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn one_point_cloud_has_no_resolution() {
        let cloud: PointCloud = vec![Point3::new(0.0, 0.0, 0.0)].into();
        assert!(matches!(
            resolution(&cloud),
            Err(Error::DegenerateCloud(_))
        ));
    }

    #[test]
    fn resolution_is_rigid_invariant() {
        let cloud: PointCloud = (0..50)
            .map(|i| {
                Point3::new(
                    (i as f64 * 0.77).sin(),
                    (i as f64 * 1.31).cos(),
                    (i as f64 * 0.23).sin(),
                )
            })
            .collect();
        let t = params_to_transform(&TransformParams::from_column_slice(&[
            0.5, -0.3, 0.8, 10.0, -5.0, 2.0,
        ]));
        let moved = t.apply_cloud(&cloud);
        assert_relative_eq!(
            resolution(&cloud).unwrap(),
            resolution(&moved).unwrap(),
            max_relative = 1e-9
        );
    }

    #[test]
    fn singleton_aggregate_is_flat() {
        let s = aggregate(&[5.0], &[7]);
        assert_eq!(s.median_mse, 5.0);
        assert_eq!(s.q75_mse, 5.0);
        assert_eq!(s.q95_mse, 5.0);
        assert_eq!(s.mean_iterations, 7.0);
    }

    #[test]
    fn even_length_median_interpolates() {
        let s = aggregate(&[4.0, 2.0, 3.0, 1.0], &[1, 2, 3, 4]);
        assert_relative_eq!(s.median_mse, 2.5, epsilon = 1e-15);
        assert_relative_eq!(s.mean_iterations, 2.5, epsilon = 1e-15);
    }

    #[test]
    fn quantiles_are_monotone_and_permutation_invariant() {
        let values = [0.9, 0.1, 0.5, 0.7, 0.3, 0.2, 0.8];
        let iters = [1usize; 7];
        let s1 = aggregate(&values, &iters);
        let mut reversed = values;
        reversed.reverse();
        let s2 = aggregate(&reversed, &iters);
        assert_eq!(s1.median_mse, s2.median_mse);
        assert_eq!(s1.q75_mse, s2.q75_mse);
        assert_eq!(s1.q95_mse, s2.q95_mse);
        assert!(s1.median_mse <= s1.q75_mse && s1.q75_mse <= s1.q95_mse);
    }
}
