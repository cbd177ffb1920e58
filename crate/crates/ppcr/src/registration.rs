//! The outer loop: re-associate, solve, move the cloud, decide when to stop.
//!
//! Each outer iteration freezes the associations found under the current
//! pose, runs one inner solve, folds the resulting increment into the
//! cumulative transform and records a diagnostic row. Termination is
//! criterion-driven: by default the loop stops once the per-iteration
//! cost drop has stayed below a fraction of the very first iteration's
//! initial cost for several iterations in a row — the point where extra
//! iterations stop buying alignment.

use crate::association::{associate_moved, WeightModel};
use crate::error::{Error, Result};
use crate::geometry::{dist2, PointCloud, RigidTransform};
use crate::metrics;
use crate::neighbor_search::SpatialIndex;
use crate::optimizer::{solve, LmConfig, WeightedProblem};

pub const DEFAULT_MAX_NEIGHBORS: usize = 10;
/// Default association radius as a multiple of the target cloud's resolution.
pub const DEFAULT_RADIUS_RESOLUTION_FACTOR: f64 = 10.0;
pub const DEFAULT_NU: f64 = 5.0;
pub const DEFAULT_DROP_THRESHOLD: f64 = 0.01;
pub const DEFAULT_CONSECUTIVE: usize = 10;
pub const DEFAULT_ITERATION_CAP: usize = 100;

/// When to stop iterating.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TerminationCriterion {
    /// Stop after exactly this many outer iterations.
    FixedIterations(usize),
    /// Stop once the inner solve's cost drop has been below
    /// `relative_threshold` times the first iteration's initial cost for
    /// `consecutive` iterations in a row. Cheap: both costs fall out of
    /// the solve anyway.
    CostDrop {
        relative_threshold: f64,
        consecutive: usize,
    },
    /// Stop once the cloud's inter-iteration mean squared displacement
    /// has been below `ratio_threshold` times its previous value for
    /// `consecutive` iterations in a row.
    RelativeMse {
        ratio_threshold: f64,
        consecutive: usize,
    },
}

impl Default for TerminationCriterion {
    fn default() -> Self {
        TerminationCriterion::CostDrop {
            relative_threshold: DEFAULT_DROP_THRESHOLD,
            consecutive: DEFAULT_CONSECUTIVE,
        }
    }
}

impl TerminationCriterion {
    pub fn validate(&self) -> Result<()> {
        let check_threshold = |name: &str, v: f64| {
            if !(v.is_finite() && v > 0.0 && v < 1.0) {
                return Err(Error::InvalidConfig(format!(
                    "{name} must lie strictly between 0 and 1, got {v}"
                )));
            }
            Ok(())
        };
        match self {
            TerminationCriterion::FixedIterations(n) => {
                if *n == 0 {
                    return Err(Error::InvalidConfig(
                        "fixed iteration count must be at least 1".into(),
                    ));
                }
            }
            TerminationCriterion::CostDrop {
                relative_threshold,
                consecutive,
            } => {
                check_threshold("cost-drop threshold", *relative_threshold)?;
                if *consecutive == 0 {
                    return Err(Error::InvalidConfig(
                        "consecutive iteration count must be at least 1".into(),
                    ));
                }
            }
            TerminationCriterion::RelativeMse {
                ratio_threshold,
                consecutive,
            } => {
                check_threshold("mse ratio threshold", *ratio_threshold)?;
                if *consecutive == 0 {
                    return Err(Error::InvalidConfig(
                        "consecutive iteration count must be at least 1".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Everything that controls one registration run.
#[derive(Debug, Clone, PartialEq)]
pub struct RegistrationConfig {
    /// Candidate neighbors per source point.
    pub max_neighbors: usize,
    /// Association radius in meters.
    pub max_neighbor_distance: f64,
    pub weight_model: WeightModel,
    pub criterion: TerminationCriterion,
    /// Hard stop regardless of the criterion.
    pub iteration_cap: usize,
    pub lm: LmConfig,
}

impl RegistrationConfig {
    /// Defaults with an explicitly chosen association radius.
    pub fn with_max_distance(max_neighbor_distance: f64) -> Self {
        RegistrationConfig {
            max_neighbors: DEFAULT_MAX_NEIGHBORS,
            max_neighbor_distance,
            weight_model: WeightModel::default(),
            criterion: TerminationCriterion::default(),
            iteration_cap: DEFAULT_ITERATION_CAP,
            lm: LmConfig::default(),
        }
    }

    /// Defaults for a given target cloud: the radius is ten times the
    /// cloud's resolution (median nearest-neighbor spacing).
    pub fn for_target(target: &PointCloud) -> Result<Self> {
        let resolution = metrics::resolution(target)?;
        Ok(Self::with_max_distance(
            DEFAULT_RADIUS_RESOLUTION_FACTOR * resolution,
        ))
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_neighbors == 0 {
            return Err(Error::InvalidConfig(
                "max_neighbors must be at least 1".into(),
            ));
        }
        if !(self.max_neighbor_distance.is_finite() && self.max_neighbor_distance > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "max_neighbor_distance must be positive and finite, got {}",
                self.max_neighbor_distance
            )));
        }
        if self.iteration_cap == 0 {
            return Err(Error::InvalidConfig(
                "iteration_cap must be at least 1".into(),
            ));
        }
        self.weight_model.validate()?;
        self.criterion.validate()?;
        self.lm.validate()
    }
}

/// One row of the diagnostic trace.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    /// Outer iteration index, starting at 0.
    pub iteration: usize,
    /// Inner solve cost before any step.
    pub initial_cost: f64,
    /// Inner solve cost after the last accepted step.
    pub final_cost: f64,
    /// `initial_cost - final_cost`; never negative.
    pub cost_drop: f64,
    /// Strictly-improving LM steps in the inner solve. Recorded as a
    /// diagnostic only; it oscillates too much to terminate on.
    pub successful_steps: usize,
    /// Mean squared displacement of the source cloud relative to the
    /// previous iteration's pose; `None` on the first record.
    pub mse_prev: Option<f64>,
    /// Cumulative source-to-target transform after this iteration.
    pub transform: RigidTransform,
    /// Mean squared error against a known ground-truth pose, when one
    /// was supplied.
    pub mse_ground_truth: Option<f64>,
}

/// Why a run ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TerminationReason {
    /// The configured criterion fired.
    Converged,
    /// The hard iteration cap was hit first.
    IterationCapReached,
    /// No source point had any neighbor within the association radius.
    NoOverlap,
}

impl std::fmt::Display for TerminationReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            TerminationReason::Converged => "converged",
            TerminationReason::IterationCapReached => "iteration cap reached",
            TerminationReason::NoOverlap => "no overlap",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegistrationResult {
    /// Final source-frame-to-target-frame transform.
    pub transform: RigidTransform,
    pub trace: Vec<IterationRecord>,
    pub reason: TerminationReason,
}

/// Align `source` to `target` starting from `initial_guess`.
///
/// The source cloud itself is never mutated; the cumulative transform is
/// applied afresh each iteration. On a no-overlap start the result
/// carries the initial guess unchanged and an empty trace.
pub fn register(
    source: &PointCloud,
    target: &PointCloud,
    initial_guess: &RigidTransform,
    config: &RegistrationConfig,
) -> Result<RegistrationResult> {
    config.validate()?;
    if source.is_empty() || target.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let index = SpatialIndex::build(&target.points)?;

    let mut cumulative = *initial_guess;
    let mut moved = cumulative.apply_cloud(source);
    let mut trace: Vec<IterationRecord> = Vec::new();

    loop {
        let iteration = trace.len();
        let raw = match associate_moved(
            &moved,
            &index,
            config.max_neighbors,
            config.max_neighbor_distance,
        ) {
            Ok(raw) => raw,
            Err(Error::NoOverlap) => {
                let transform = if iteration == 0 { *initial_guess } else { cumulative };
                return Ok(RegistrationResult {
                    transform,
                    trace,
                    reason: TerminationReason::NoOverlap,
                });
            }
            Err(e) => return Err(e),
        };

        let mut problem = WeightedProblem::new(&moved, target, &raw, config.weight_model)?;
        let report = solve(&mut problem, &config.lm);

        let new_cumulative = report.solution.compose(&cumulative);
        let new_moved = new_cumulative.apply_cloud(source);
        let mse_prev = if iteration == 0 {
            None
        } else {
            Some(mse_between_iterations(&new_moved, &moved)?)
        };

        trace.push(IterationRecord {
            iteration,
            initial_cost: report.initial_cost,
            final_cost: report.final_cost,
            cost_drop: report.initial_cost - report.final_cost,
            successful_steps: report.successful_steps,
            mse_prev,
            transform: new_cumulative,
            mse_ground_truth: None,
        });
        cumulative = new_cumulative;
        moved = new_moved;

        if evaluate_criterion(&config.criterion, &trace) {
            return Ok(RegistrationResult {
                transform: cumulative,
                trace,
                reason: TerminationReason::Converged,
            });
        }
        if trace.len() >= config.iteration_cap {
            return Ok(RegistrationResult {
                transform: cumulative,
                trace,
                reason: TerminationReason::IterationCapReached,
            });
        }
    }
}

/// Mean squared displacement between two poses of the same cloud; the
/// correspondence is positional (point i against point i).
pub fn mse_between_iterations(current: &PointCloud, previous: &PointCloud) -> Result<f64> {
    if current.len() != previous.len() {
        return Err(Error::SizeMismatch(format!(
            "{} points against {}",
            current.len(),
            previous.len()
        )));
    }
    if current.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let sum: f64 = current
        .iter()
        .zip(previous.iter())
        .map(|(a, b)| dist2(a, b))
        .sum();
    Ok(sum / current.len() as f64)
}

/// Does the criterion fire on this trace?
///
/// The cost-drop denominator is always the first record's initial cost —
/// it is never reset, so a late re-association burst is still judged
/// against the original problem scale. A zero first cost (clouds already
/// coincide) counts as a zero relative drop.
pub fn evaluate_criterion(criterion: &TerminationCriterion, trace: &[IterationRecord]) -> bool {
    match criterion {
        TerminationCriterion::FixedIterations(n) => trace.len() >= *n,
        TerminationCriterion::CostDrop {
            relative_threshold,
            consecutive,
        } => {
            if trace.len() < *consecutive {
                return false;
            }
            let denominator = trace[0].initial_cost;
            trace[trace.len() - consecutive..].iter().all(|rec| {
                let relative = if denominator > 0.0 {
                    rec.cost_drop / denominator
                } else {
                    0.0
                };
                relative < *relative_threshold
            })
        }
        TerminationCriterion::RelativeMse {
            ratio_threshold,
            consecutive,
        } => {
            if trace.len() < consecutive + 1 {
                return false;
            }
            (trace.len() - consecutive..trace.len()).all(|i| {
                match (trace[i].mse_prev, trace[i - 1].mse_prev) {
                    (Some(current), Some(previous)) => current < ratio_threshold * previous,
                    _ => false,
                }
            })
        }
    }
}

/// Fill the ground-truth error column of a finished trace.
pub fn annotate_ground_truth(
    trace: &mut [IterationRecord],
    source: &PointCloud,
    truth: &RigidTransform,
) {
    for record in trace {
        record.mse_ground_truth =
            Some(metrics::mse_to_ground_truth(source, &record.transform, truth));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Point3;
    use approx::assert_relative_eq;

    fn record(iteration: usize, initial: f64, fin: f64, mse_prev: Option<f64>) -> IterationRecord {
        IterationRecord {
            iteration,
            initial_cost: initial,
            final_cost: fin,
            cost_drop: initial - fin,
            successful_steps: 1,
            mse_prev,
            transform: RigidTransform::identity(),
            mse_ground_truth: None,
        }
    }

    #[test]
    fn mse_identical_clouds_is_zero() {
        let cloud: PointCloud = (0..10)
            .map(|i| Point3::new(i as f64, 0.0, 0.0))
            .collect();
        assert_eq!(mse_between_iterations(&cloud, &cloud).unwrap(), 0.0);
    }

    #[test]
    fn mse_unit_translation_is_one() {
        let cloud: PointCloud = (0..10)
            .map(|i| Point3::new(i as f64, 2.0, -1.0))
            .collect();
        let shifted: PointCloud = cloud
            .iter()
            .map(|p| Point3::new(p.x + 1.0, p.y, p.z))
            .collect();
        assert_relative_eq!(
            mse_between_iterations(&cloud, &shifted).unwrap(),
            1.0,
            epsilon = 1e-15
        );
    }

    #[test]
    fn mse_size_mismatch_is_an_error() {
        let a: PointCloud = vec![Point3::new(0.0, 0.0, 0.0)].into();
        let b: PointCloud = vec![Point3::new(0.0, 0.0, 0.0); 2].into();
        assert!(matches!(
            mse_between_iterations(&a, &b),
            Err(Error::SizeMismatch(_))
        ));
    }

    #[test]
    fn cost_drop_fires_on_two_small_drops() {
        let trace = vec![
            record(0, 100.0, 60.0, None),
            record(1, 60.0, 59.5, Some(1.0)),
            record(2, 59.5, 59.1, Some(0.5)),
        ];
        let criterion = TerminationCriterion::CostDrop {
            relative_threshold: 0.01,
            consecutive: 2,
        };
        // drops 0.5 and 0.4 against denominator 100: both below 1.0
        assert!(evaluate_criterion(&criterion, &trace));
    }

    #[test]
    fn cost_drop_needs_enough_history() {
        let trace: Vec<_> = (0..5).map(|i| record(i, 10.0, 9.99, None)).collect();
        let criterion = TerminationCriterion::CostDrop {
            relative_threshold: 0.01,
            consecutive: 10,
        };
        assert!(!evaluate_criterion(&criterion, &trace));
    }

    #[test]
    fn cost_drop_ignores_old_large_drops_only(
    ) {
        // most recent window still contains one large drop: no fire
        let trace = vec![
            record(0, 100.0, 50.0, None),
            record(1, 50.0, 49.9, Some(1.0)),
            record(2, 49.9, 45.0, Some(1.0)),
        ];
        let criterion = TerminationCriterion::CostDrop {
            relative_threshold: 0.01,
            consecutive: 2,
        };
        assert!(!evaluate_criterion(&criterion, &trace));
    }

    #[test]
    fn cost_drop_firing_is_scale_invariant() {
        let base = vec![
            record(0, 100.0, 60.0, None),
            record(1, 60.0, 59.5, Some(1.0)),
            record(2, 59.5, 59.1, Some(0.5)),
        ];
        for scale in [1e-6, 1.0, 1e6] {
            let scaled: Vec<_> = base
                .iter()
                .map(|r| record(r.iteration, r.initial_cost * scale, r.final_cost * scale, r.mse_prev))
                .collect();
            for consecutive in [1, 2, 3] {
                let criterion = TerminationCriterion::CostDrop {
                    relative_threshold: 0.01,
                    consecutive,
                };
                assert_eq!(
                    evaluate_criterion(&criterion, &base),
                    evaluate_criterion(&criterion, &scaled),
                    "scale {scale}, consecutive {consecutive}"
                );
            }
        }
    }

    #[test]
    fn zero_initial_cost_counts_as_zero_drop() {
        let trace: Vec<_> = (0..10).map(|i| record(i, 0.0, 0.0, None)).collect();
        let criterion = TerminationCriterion::default();
        assert!(evaluate_criterion(&criterion, &trace));
    }

    #[test]
    fn fixed_iterations_fires_exactly_at_n() {
        let criterion = TerminationCriterion::FixedIterations(100);
        let trace: Vec<_> = (0..99).map(|i| record(i, 10.0, 9.0, None)).collect();
        assert!(!evaluate_criterion(&criterion, &trace));
        let trace: Vec<_> = (0..100).map(|i| record(i, 10.0, 9.0, None)).collect();
        assert!(evaluate_criterion(&criterion, &trace));
    }

    #[test]
    fn relative_mse_fires_when_motion_dies_down() {
        let criterion = TerminationCriterion::RelativeMse {
            ratio_threshold: 0.5,
            consecutive: 2,
        };
        let trace = vec![
            record(0, 10.0, 9.0, None),
            record(1, 9.0, 8.0, Some(1.0)),
            record(2, 8.0, 7.0, Some(0.4)),
            record(3, 7.0, 6.0, Some(0.1)),
        ];
        assert!(evaluate_criterion(&criterion, &trace));
        // ratios 0.4 and 0.25: both below 0.5 -> fire. Flip the last
        // ratio above threshold and it must not.
        let trace_slow = vec![
            record(0, 10.0, 9.0, None),
            record(1, 9.0, 8.0, Some(1.0)),
            record(2, 8.0, 7.0, Some(0.4)),
            record(3, 7.0, 6.0, Some(0.3)),
        ];
        assert!(!evaluate_criterion(&criterion, &trace_slow));
    }

    #[test]
    fn relative_mse_ignores_the_undefined_first_ratio() {
        // record 1's predecessor has no mse: the window may not reach it
        let criterion = TerminationCriterion::RelativeMse {
            ratio_threshold: 0.5,
            consecutive: 2,
        };
        let trace = vec![
            record(0, 10.0, 9.0, None),
            record(1, 9.0, 8.0, Some(0.1)),
            record(2, 8.0, 7.0, Some(0.01)),
        ];
        assert!(!evaluate_criterion(&criterion, &trace));
    }

    #[test]
    fn config_validation_rejects_nonsense() {
        let mut config = RegistrationConfig::with_max_distance(1.0);
        assert!(config.validate().is_ok());
        config.max_neighbors = 0;
        assert!(config.validate().is_err());
        config.max_neighbors = 5;
        config.max_neighbor_distance = -1.0;
        assert!(config.validate().is_err());
        config.max_neighbor_distance = 1.0;
        config.criterion = TerminationCriterion::CostDrop {
            relative_threshold: 1.5,
            consecutive: 10,
        };
        assert!(config.validate().is_err());
    }
}
