//! Huber-robustified Levenberg-Marquardt over 2D reprojection residuals.

use nalgebra::{Matrix2, SMatrix, SVector, Vector2};

use crate::error::{Error, Result};

/// Huber kernel on a residual norm. Quadratic up to `delta`, linear beyond.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Huber {
    pub delta: f64,
}

impl Huber {
    pub fn new(delta: f64) -> Self {
        Huber { delta }
    }

    /// `ρ(‖r‖²)`: `‖r‖²` inside the threshold, `2δ‖r‖ − δ²` outside.
    pub fn cost(&self, norm: f64) -> f64 {
        if norm <= self.delta {
            norm * norm
        } else {
            2.0 * self.delta * norm - self.delta * self.delta
        }
    }

    /// IRLS weight `ρ′`: 1 inside the threshold, `δ/‖r‖` outside.
    pub fn weight(&self, norm: f64) -> f64 {
        if norm <= self.delta {
            1.0
        } else {
            self.delta / norm
        }
    }

    /// Second-order weight of `ρ(‖r‖²)` in pixel space. Equal to the IRLS
    /// weight inside the threshold; outside it drops the curvature along
    /// `r`, where the cost is linear.
    pub fn curvature(&self, r: &Vector2<f64>) -> Matrix2<f64> {
        let norm = r.norm();
        if norm <= self.delta {
            Matrix2::identity()
        } else {
            let u = r / norm;
            (Matrix2::identity() - u * u.transpose()) * (self.delta / norm)
        }
    }
}

/// A robust least-squares problem over an `N`-dimensional tangent space.
pub(crate) trait ReprojectionProblem<const N: usize> {
    type State: Clone;

    /// Residuals at `state`, or `None` when the state is infeasible (a point
    /// at non-positive depth).
    fn residuals(&self, state: &Self::State) -> Option<Vec<Vector2<f64>>>;

    fn jacobians(&self, state: &Self::State) -> Vec<SMatrix<f64, 2, N>>;

    fn retract(&self, state: &Self::State, delta: &SVector<f64, N>) -> Self::State;
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct LmSettings {
    pub huber: Huber,
    pub max_iterations: usize,
    pub step_tolerance: f64,
}

pub(crate) const INITIAL_DAMPING: f64 = 1e-4;
const MAX_DAMPING: f64 = 1e32;

#[derive(Debug, Clone)]
pub(crate) struct LmOutcome<S> {
    pub state: S,
    pub residuals: Vec<Vector2<f64>>,
    pub iterations: usize,
    /// Robust cost after each accepted step, starting with the initial cost.
    pub cost_history: Vec<f64>,
}

pub(crate) fn robust_cost(huber: &Huber, residuals: &[Vector2<f64>]) -> f64 {
    residuals.iter().map(|r| huber.cost(r.norm())).sum()
}

/// Robust Levenberg-Marquardt with Marquardt diagonal scaling. The gradient
/// uses the IRLS weights and the Hessian the full Huber curvature, which
/// keeps convergence fast when residuals sit in the linear zone. Damping starts
/// at 1e-4 and moves by ×10 / ÷10 on rejection / acceptance. Converges once
/// a proposed step is shorter than the tolerance.
pub(crate) fn solve<P, const N: usize>(
    problem: &P,
    init: P::State,
    settings: &LmSettings,
) -> Result<LmOutcome<P::State>>
where
    P: ReprojectionProblem<N>,
{
    let huber = settings.huber;
    let mut state = init;
    let mut residuals = problem
        .residuals(&state)
        .ok_or_else(|| Error::DegenerateGeometry("initial estimate puts a point behind a camera".into()))?;
    let mut cost = robust_cost(&huber, &residuals);
    let mut history = vec![cost];
    let mut lambda = INITIAL_DAMPING;

    for iteration in 1..=settings.max_iterations {
        let jacobians = problem.jacobians(&state);
        let mut h = SMatrix::<f64, N, N>::zeros();
        let mut g = SVector::<f64, N>::zeros();
        for (j, r) in jacobians.iter().zip(&residuals) {
            h += j.transpose() * huber.curvature(r) * j;
            g += j.transpose() * r * huber.weight(r.norm());
        }

        loop {
            let mut a = h;
            for i in 0..N {
                a[(i, i)] += lambda * h[(i, i)].max(1e-12);
            }
            let step = match a.cholesky() {
                Some(c) => -c.solve(&g),
                None => {
                    lambda *= 10.0;
                    if lambda > MAX_DAMPING {
                        return Err(Error::DegenerateGeometry("normal equations are singular".into()));
                    }
                    continue;
                }
            };
            if step.norm() < settings.step_tolerance {
                return Ok(LmOutcome {
                    state,
                    residuals,
                    iterations: iteration,
                    cost_history: history,
                });
            }
            let candidate = problem.retract(&state, &step);
            let accepted = problem
                .residuals(&candidate)
                .map(|r| (robust_cost(&huber, &r), r))
                .filter(|(c, _)| *c < cost);
            match accepted {
                Some((new_cost, new_residuals)) => {
                    state = candidate;
                    residuals = new_residuals;
                    cost = new_cost;
                    history.push(cost);
                    lambda = (lambda / 10.0).max(1e-12);
                    break;
                }
                None => {
                    lambda *= 10.0;
                    if lambda > MAX_DAMPING {
                        // No descent direction left at this precision.
                        return Ok(LmOutcome {
                            state,
                            residuals,
                            iterations: iteration,
                            cost_history: history,
                        });
                    }
                }
            }
        }
    }
    Err(Error::NoConvergence {
        iterations: settings.max_iterations,
    })
}
