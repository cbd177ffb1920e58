//! The inner loop: iteratively reweighted Levenberg-Marquardt.
//!
//! Given a frozen association set, finds the rigid increment minimizing
//! the weighted sum of squared residuals. The weights themselves depend
//! on the residuals, so before every LM step they are refreshed from the
//! residuals at the current increment (the membership update); the damped
//! Gauss-Newton step then treats them as constants. A step counts as
//! successful only if it strictly decreases the refreshed cost.

use nalgebra::{Cholesky, Matrix3x6};

use crate::association::WeightModel;
use crate::error::{Error, Result};
use crate::geometry::{
    dist2, params_to_transform, right_jacobian, skew, Mat3, Point3, PointCloud, RigidTransform,
    TransformParams, Vec3,
};

/// Damping beyond this is treated as "the normal equations are singular
/// no matter what": the solve gives up and returns what it has.
const LAMBDA_MAX: f64 = 1e12;

/// Levenberg-Marquardt knobs. The defaults are deliberately plain; every
/// one of them is surfaced in the CLI.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmConfig {
    /// Iteration budget for one inner solve.
    pub max_iterations: usize,
    /// Starting damping factor.
    pub initial_lambda: f64,
    /// Damping multiplier after a rejected step.
    pub lambda_up: f64,
    /// Damping multiplier after an accepted step.
    pub lambda_down: f64,
    /// Stop when the proposed step's parameter norm falls below this.
    pub step_tolerance: f64,
    /// Stop when an accepted step improves the cost by less than this
    /// relative amount.
    pub cost_tolerance: f64,
}

impl Default for LmConfig {
    fn default() -> Self {
        LmConfig {
            max_iterations: 50,
            initial_lambda: 1e-4,
            lambda_up: 10.0,
            lambda_down: 0.1,
            step_tolerance: 1e-9,
            cost_tolerance: 1e-9,
        }
    }
}

impl LmConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.max_iterations == 0 {
            return bad("lm max_iterations must be at least 1".into());
        }
        for (name, v) in [
            ("initial_lambda", self.initial_lambda),
            ("lambda_up", self.lambda_up),
            ("lambda_down", self.lambda_down),
            ("step_tolerance", self.step_tolerance),
            ("cost_tolerance", self.cost_tolerance),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("lm {name} must be positive and finite, got {v}"));
            }
        }
        if self.lambda_up <= 1.0 {
            return bad(format!(
                "lm lambda_up must exceed 1, got {}",
                self.lambda_up
            ));
        }
        if self.lambda_down >= 1.0 {
            return bad(format!(
                "lm lambda_down must be below 1, got {}",
                self.lambda_down
            ));
        }
        Ok(())
    }
}

/// All candidate pairs of one source point. The jacobian of every
/// residual in the block is identical (it only depends on the source
/// point), which is what makes the normal-equation assembly cheap.
#[derive(Debug, Clone)]
struct SourceBlock {
    source: Point3,
    targets: Vec<Point3>,
    /// Weight slots, rewritten by each membership refresh.
    weights: Vec<f64>,
}

/// Weighted least-squares problem over one association set.
#[derive(Debug, Clone)]
pub struct WeightedProblem {
    blocks: Vec<SourceBlock>,
    model: WeightModel,
}

impl WeightedProblem {
    /// Build from the moved source cloud, the target cloud and raw
    /// association lists (one per source point, empty lists skipped).
    pub fn new(
        moved_source: &PointCloud,
        target: &PointCloud,
        associations: &[Vec<(usize, f64)>],
        model: WeightModel,
    ) -> Result<Self> {
        if moved_source.len() != associations.len() {
            return Err(Error::SizeMismatch(format!(
                "{} source points but {} association lists",
                moved_source.len(),
                associations.len()
            )));
        }
        model.validate()?;
        let mut blocks = Vec::new();
        for (p, list) in moved_source.iter().zip(associations) {
            if list.is_empty() {
                continue;
            }
            let targets: Vec<Point3> = list.iter().map(|&(ti, _)| target.points[ti]).collect();
            blocks.push(SourceBlock {
                weights: vec![0.0; targets.len()],
                targets,
                source: *p,
            });
        }
        if blocks.is_empty() {
            return Err(Error::EmptyProblem);
        }
        Ok(WeightedProblem { blocks, model })
    }

    pub fn block_count(&self) -> usize {
        self.blocks.len()
    }

    pub fn residual_count(&self) -> usize {
        self.blocks.iter().map(|b| b.targets.len()).sum()
    }
}

/// What one inner solve did.
#[derive(Debug, Clone, PartialEq)]
pub struct InnerSolveReport {
    pub initial_cost: f64,
    pub final_cost: f64,
    /// Steps that strictly decreased the cost.
    pub successful_steps: usize,
    /// LM iterations consumed, rejected ones included.
    pub lm_iterations: usize,
    /// The rigid increment to left-compose onto the pose the problem was
    /// built at. Identity when nothing improved.
    pub solution: RigidTransform,
    /// Cost after each accepted step, in order; strictly decreasing.
    pub accepted_costs: Vec<f64>,
}

/// Weighted cost at `increment`, with the weights recomputed from the
/// residuals at that same increment. The problem's weight slots are not
/// touched.
pub fn cost(problem: &WeightedProblem, increment: &RigidTransform) -> f64 {
    let mut r2 = Vec::new();
    let mut w = Vec::new();
    let mut total = 0.0;
    for block in &problem.blocks {
        total += block_cost(block, &problem.model, increment, &mut r2, &mut w);
    }
    total
}

fn block_cost(
    block: &SourceBlock,
    model: &WeightModel,
    increment: &RigidTransform,
    r2: &mut Vec<f64>,
    w: &mut Vec<f64>,
) -> f64 {
    let moved = increment.apply(&block.source);
    r2.clear();
    r2.extend(block.targets.iter().map(|y| dist2(&moved, y)));
    model.weights_into(r2, w);
    w.iter().zip(r2.iter()).map(|(wk, rk)| wk * rk).sum()
}

/// Membership refresh: overwrite every weight slot from the residuals at
/// `increment` and return the weighted cost there. Running it twice at
/// the same increment is a no-op by construction.
fn reweight(problem: &mut WeightedProblem, increment: &RigidTransform, r2: &mut Vec<f64>) -> f64 {
    let mut total = 0.0;
    for block in &mut problem.blocks {
        let moved = increment.apply(&block.source);
        r2.clear();
        r2.extend(block.targets.iter().map(|y| dist2(&moved, y)));
        problem.model.weights_into(r2, &mut block.weights);
        total += block
            .weights
            .iter()
            .zip(r2.iter())
            .map(|(wk, rk)| wk * rk)
            .sum::<f64>();
    }
    total
}

/// Derivative of the residual `y - (R(w)x + t)` with respect to the chart
/// coordinates, evaluated at `params`. It does not depend on the target
/// point: columns 0-2 are `R·skew(x)·right_jacobian(w)`, columns 3-5 are
/// `-I`.
pub fn jacobian(source: &Point3, params: &TransformParams) -> Matrix3x6<f64> {
    let w = Vec3::new(params[0], params[1], params[2]);
    let t = params_to_transform(params);
    jacobian_with(t.rotation(), &right_jacobian(&w), source)
}

fn jacobian_with(rotation: &Mat3, jr: &Mat3, source: &Point3) -> Matrix3x6<f64> {
    let jrot = rotation * skew(&source.to_vec()) * jr;
    let mut j = Matrix3x6::zeros();
    j.fixed_view_mut::<3, 3>(0, 0).copy_from(&jrot);
    j.fixed_view_mut::<3, 3>(0, 3)
        .copy_from(&(-Mat3::identity()));
    j
}

/// Run the damped, iteratively reweighted least-squares loop.
///
/// The chart is centered on the pose the problem was built at, so the
/// parameter vector starts at zero and the returned solution is a small
/// increment. The problem's weight slots are left consistent with the
/// returned increment.
pub fn solve(problem: &mut WeightedProblem, config: &LmConfig) -> InnerSolveReport {
    config.validate().expect("invalid LM configuration");

    let mut params = TransformParams::zeros();
    let mut current = RigidTransform::identity();
    let mut lambda = config.initial_lambda;
    let mut scratch = Vec::new();
    let (mut r2_buf, mut w_buf) = (Vec::new(), Vec::new());

    let initial_cost = reweight(problem, &current, &mut scratch);
    let mut current_cost = initial_cost;
    let mut weights_stale = false;

    let mut successful_steps = 0;
    let mut lm_iterations = 0;
    let mut accepted_costs = Vec::new();

    for _ in 0..config.max_iterations {
        lm_iterations += 1;
        if weights_stale {
            current_cost = reweight(problem, &current, &mut scratch);
            weights_stale = false;
        }

        // assemble the normal equations with the weights frozen
        let rotation = *current.rotation();
        let w_vec = Vec3::new(params[0], params[1], params[2]);
        let jr = right_jacobian(&w_vec);
        let mut h = nalgebra::Matrix6::<f64>::zeros();
        let mut g = nalgebra::Vector6::<f64>::zeros();
        for block in &problem.blocks {
            let weight_sum: f64 = block.weights.iter().sum();
            if weight_sum <= 0.0 {
                // weights fully underflowed; the block carries no information
                continue;
            }
            let moved = current.apply(&block.source);
            let mut weighted_residual = Vec3::zeros();
            for (y, wk) in block.targets.iter().zip(&block.weights) {
                weighted_residual += *wk * (y.to_vec() - moved.to_vec());
            }
            let j = jacobian_with(&rotation, &jr, &block.source);
            h += weight_sum * j.transpose() * j;
            g += j.transpose() * weighted_residual;
        }

        // damped system (h + lambda * diag(h)) * delta = -g
        let delta = loop {
            let mut damped = h;
            for i in 0..6 {
                damped[(i, i)] = h[(i, i)] * (1.0 + lambda);
            }
            match Cholesky::new(damped) {
                Some(ch) => break Some(ch.solve(&-g)),
                None => {
                    lambda *= config.lambda_up;
                    if lambda > LAMBDA_MAX {
                        break None;
                    }
                }
            }
        };
        let Some(delta) = delta else {
            // singular even at maximum damping: degenerate geometry
            break;
        };

        if delta.norm() < config.step_tolerance {
            break;
        }

        let candidate_params = params + delta;
        let candidate = params_to_transform(&candidate_params);
        let mut candidate_cost = 0.0;
        for block in &problem.blocks {
            candidate_cost +=
                block_cost(block, &problem.model, &candidate, &mut r2_buf, &mut w_buf);
        }

        if candidate_cost < current_cost {
            let previous = current_cost;
            params = candidate_params;
            current = candidate;
            current_cost = candidate_cost;
            successful_steps += 1;
            accepted_costs.push(candidate_cost);
            weights_stale = true;
            lambda *= config.lambda_down;
            if previous - candidate_cost <= config.cost_tolerance * previous.max(f64::MIN_POSITIVE)
            {
                break;
            }
        } else {
            lambda *= config.lambda_up;
            if lambda > LAMBDA_MAX {
                break;
            }
        }
    }

    if weights_stale {
        current_cost = reweight(problem, &current, &mut scratch);
    }

    InnerSolveReport {
        initial_cost,
        final_cost: current_cost,
        successful_steps,
        lm_iterations,
        solution: current,
        accepted_costs,
    }
}
