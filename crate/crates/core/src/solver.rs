//! Batch Gauss-Newton over a knot chain with prior and point-measurement factors.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Matrix3x6, Vector3};
use rayon::prelude::*;

use crate::blocktri::BlockTridiagonal;
use crate::error::{Error, Result};
use crate::factors::{measurement_error, measurement_jacobian, whitened_norm, Loss, Measurement};
use crate::interp::{eval_interior, extrapolate, InterpWeights, Segment, Trajectory};
use crate::liegroup::Pose;
use crate::prior::{
    local_parts, perturb_knot, prior_error, prior_error_jacobians, InvJacobian, Knot, LocalParts,
    PriorConfig,
};
use crate::scalar::{lit, to_f64, Real};

/// Weight applied to the prior error terms.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum PriorWeighting {
    /// `Q_i^-1` from the process noise over each interval.
    #[default]
    ProcessNoise,
    /// Unit weight on every prior error component.
    Identity,
}

/// Gauss-Newton loop settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverOptions<T: Real> {
    pub max_iterations: usize,
    /// Stop once the relative cost decrease of an accepted step falls below this.
    pub tolerance: T,
    /// Also stop once the largest increment component falls below this; costs
    /// at round-off level cannot resolve a relative decrease.
    pub step_tolerance: T,
    /// Times a cost-increasing step is halved before giving up.
    pub max_halvings: usize,
    /// Linearize knot intervals on the rayon pool.
    pub parallel: bool,
}

impl<T: Real> Default for SolverOptions<T> {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            tolerance: lit(1e-6),
            step_tolerance: lit(1e-12),
            max_halvings: 8,
            parallel: true,
        }
    }
}

/// How the loop ended.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Termination {
    Converged,
    MaxIterations,
    /// No step along the Gauss-Newton direction lowered the cost.
    NonImproving,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveReport<T: Real> {
    pub iterations: usize,
    pub initial_cost: T,
    pub final_cost: T,
    pub converged: bool,
    pub termination: Termination,
    /// Cost before the first step followed by the cost after each step.
    pub cost_trace: Vec<T>,
}

/// Outcome of one Gauss-Newton iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct StepReport<T: Real> {
    /// Full Gauss-Newton increment per knot, before step control.
    pub delta: Vec<DVector<T>>,
    /// Fraction of `delta` that was applied (zero when rejected).
    pub scale: T,
    pub cost_before: T,
    pub cost_after: T,
    pub accepted: bool,
    /// Cost decrease predicted by the linearized model for the full step.
    pub predicted_decrease: T,
}

#[derive(Clone, Debug)]
enum Binding<T: Real> {
    AtKnot(usize),
    Between(usize, InterpWeights<T>),
    After(usize, T),
}

impl<T: Real> Binding<T> {
    fn anchor(&self) -> usize {
        match self {
            Binding::AtKnot(k) | Binding::Between(k, _) | Binding::After(k, _) => *k,
        }
    }
}

/// Trajectory, prior, measurements, and gauge for a batch solve.
#[derive(Clone, Debug)]
pub struct Problem<T: Real> {
    trajectory: Trajectory<T>,
    prior: PriorConfig<T>,
    measurements: Arc<Vec<Measurement<T>>>,
    bindings: Arc<Vec<Binding<T>>>,
    /// Measurement indices grouped by the knot that starts their interval.
    by_anchor: Arc<Vec<Vec<usize>>>,
    fixed: Vec<bool>,
    loss: Loss,
    weighting: PriorWeighting,
}

struct Contribution<T: Real> {
    cost: T,
    /// Hessian over `[knot k; knot k+1]`.
    h: DMatrix<T>,
    g: DVector<T>,
}

impl<T: Real> Problem<T> {
    /// Builds a problem with the first knot fixed. Measurements may extend at
    /// most `extrapolation_window` seconds past the last knot.
    pub fn new(
        trajectory: Trajectory<T>,
        prior: PriorConfig<T>,
        measurements: Vec<Measurement<T>>,
        extrapolation_window: T,
    ) -> Result<Self> {
        if trajectory.order() != prior.order() {
            return Err(Error::InvalidProblem(format!(
                "trajectory order {} does not match prior order {}",
                trajectory.order(),
                prior.order()
            )));
        }
        let knots = trajectory.knots();
        let mut bindings = Vec::with_capacity(measurements.len());
        let mut by_anchor = vec![Vec::new(); knots.len()];
        for (idx, m) in measurements.iter().enumerate() {
            let b = match trajectory.locate(m.tau)? {
                Segment::AtKnot(k) => Binding::AtKnot(k),
                Segment::Between(i) => Binding::Between(
                    i,
                    InterpWeights::new(prior.order(), knots[i].t, m.tau, knots[i + 1].t)?,
                ),
                Segment::After(k) => {
                    let s = m.tau - knots[k].t;
                    if s > extrapolation_window {
                        return Err(Error::QueryOutOfRange {
                            tau: to_f64(m.tau),
                            start: to_f64(trajectory.start()),
                            end: to_f64(trajectory.end() + extrapolation_window),
                        });
                    }
                    Binding::After(k, s)
                }
            };
            by_anchor[b.anchor()].push(idx);
            bindings.push(b);
        }
        let mut fixed = vec![false; knots.len()];
        fixed[0] = true;
        Ok(Self {
            trajectory,
            prior,
            measurements: Arc::new(measurements),
            bindings: Arc::new(bindings),
            by_anchor: Arc::new(by_anchor),
            fixed,
            loss: Loss::default(),
            weighting: PriorWeighting::default(),
        })
    }

    /// Replaces the set of knots held constant.
    pub fn with_fixed(mut self, indices: &[usize]) -> Result<Self> {
        let mut fixed = vec![false; self.trajectory.len()];
        for &k in indices {
            if k >= fixed.len() {
                return Err(Error::InvalidProblem(format!(
                    "fixed knot index {k} out of range ({} knots)",
                    fixed.len()
                )));
            }
            fixed[k] = true;
        }
        if indices.is_empty() && self.measurements.is_empty() {
            return Err(Error::InvalidProblem(
                "no fixed knot and no measurement: gauge is unconstrained".into(),
            ));
        }
        self.fixed = fixed;
        Ok(self)
    }

    pub fn with_loss(mut self, loss: Loss) -> Self {
        self.loss = loss;
        self
    }

    pub fn with_prior_weighting(mut self, weighting: PriorWeighting) -> Self {
        self.weighting = weighting;
        self
    }

    pub fn trajectory(&self) -> &Trajectory<T> {
        &self.trajectory
    }

    pub fn into_trajectory(self) -> Trajectory<T> {
        self.trajectory
    }

    pub fn prior(&self) -> &PriorConfig<T> {
        &self.prior
    }

    pub fn measurements(&self) -> &[Measurement<T>] {
        &self.measurements
    }

    pub fn loss(&self) -> Loss {
        self.loss
    }

    pub fn is_fixed(&self, k: usize) -> bool {
        self.fixed[k]
    }

    /// Sets the knot states, keeping times; used to warm-start a solve.
    pub fn set_trajectory(&mut self, trajectory: Trajectory<T>) -> Result<()> {
        let same_times = trajectory.len() == self.trajectory.len()
            && trajectory
                .knots()
                .iter()
                .zip(self.trajectory.knots())
                .all(|(a, b)| a.t == b.t);
        if !same_times || trajectory.order() != self.trajectory.order() {
            return Err(Error::InvalidProblem(
                "replacement trajectory must keep knot times and order".into(),
            ));
        }
        self.trajectory = trajectory;
        Ok(())
    }

    /// Pose of the trajectory at a measurement's time.
    pub fn measurement_pose(&self, idx: usize) -> Result<Pose<T>> {
        self.trajectory.pose_at(self.measurements[idx].tau)
    }

    fn knot_dim(&self) -> usize {
        self.prior.order().dim()
    }

    fn prior_weight(&self, q_inv: DMatrix<T>) -> DMatrix<T> {
        match self.weighting {
            PriorWeighting::ProcessNoise => q_inv,
            PriorWeighting::Identity => DMatrix::identity(q_inv.nrows(), q_inv.ncols()),
        }
    }

    /// Cost and (optionally) linearization of every factor anchored at knot `k`.
    fn contribution(&self, knots: &[Knot<T>], k: usize, with_jac: bool) -> Result<Contribution<T>> {
        let n = self.knot_dim();
        let half = lit::<T>(0.5);
        let size = if with_jac { 2 * n } else { 0 };
        let mut h = DMatrix::zeros(size, size);
        let mut g = DVector::zeros(size);
        let mut cost = T::zero();

        let next = knots.get(k + 1);
        let parts: Option<LocalParts<T>> = match next {
            Some(kj) if self.by_anchor[k].iter().any(|&i| matches!(self.bindings[i], Binding::Between(..))) => {
                Some(local_parts(&knots[k], kj, InvJacobian::FirstOrder)?)
            }
            _ => None,
        };

        if let Some(kj) = next {
            let pe = prior_error(&knots[k], kj, &self.prior)?;
            let w = self.prior_weight(pe.q_inv);
            let we = &w * &pe.e;
            cost += pe.e.dot(&we) * half;
            if with_jac {
                let jac = prior_error_jacobians(&knots[k], kj, &self.prior)?;
                let mut jfull = DMatrix::zeros(n, 2 * n);
                jfull.view_mut((0, 0), (n, n)).copy_from(&jac.wrt_i);
                jfull.view_mut((0, n), (n, n)).copy_from(&jac.wrt_j);
                let wj = &w * &jfull;
                h.gemm_tr(T::one(), &jfull, &wj, T::one());
                g.gemv_tr(T::one(), &jfull, &we, T::one());
            }
        }

        let mut qt = DMatrix::zeros(size, 3);
        for &idx in &self.by_anchor[k] {
            let m = &self.measurements[idx];
            let (pose, jac_blocks) = match &self.bindings[idx] {
                Binding::AtKnot(kk) => (knots[*kk].pose, None),
                Binding::Between(i, w) => {
                    let p = parts.as_ref().expect("interval parts computed");
                    let ev = eval_interior(&knots[*i], &knots[*i + 1], w, p, with_jac)?;
                    (ev.pose, ev.jac.map(|j| (j.wrt_i, Some(j.wrt_j))))
                }
                Binding::After(kk, s) => {
                    let (pose, jac) = extrapolate(&knots[*kk], self.prior.order(), *s);
                    (pose, Some((jac, None)))
                }
            };
            let e = measurement_error(m, &pose);
            let u = whitened_norm(m, &e);
            let (c, weight) = self.loss.evaluate(u);
            cost += c;
            if !with_jac {
                continue;
            }
            let sw = m.sqrt_information() * weight.sqrt();
            let sg: Matrix3x6<T> = sw * measurement_jacobian(m, &pose);
            let se: Vector3<T> = sw * e;
            match jac_blocks {
                None => {
                    // bound to knot k alone, pose block only
                    let mut hv = h.fixed_view_mut::<6, 6>(0, 0);
                    hv.gemm_tr(T::one(), &sg, &sg, T::one());
                    let mut gv = g.fixed_rows_mut::<6>(0);
                    gv.gemv_tr(T::one(), &sg, &se, T::one());
                }
                Some((ji, jj)) => {
                    // whitened rows of the chained Jacobian, stored as columns
                    qt.fill(T::zero());
                    qt.view_mut((0, 0), (n, 3)).gemm_tr(T::one(), &ji, &sg.transpose(), T::zero());
                    if let Some(jj) = jj {
                        qt.view_mut((n, 0), (n, 3)).gemm_tr(T::one(), &jj, &sg.transpose(), T::zero());
                    }
                    for r in 0..3 {
                        let col = qt.column(r);
                        h.syger(T::one(), &col, &col, T::one());
                    }
                    g.gemv(T::one(), &qt, &se, T::one());
                }
            }
        }
        if with_jac {
            h.fill_upper_triangle_with_lower_triangle();
        }
        Ok(Contribution { cost, h, g })
    }

    fn contributions(&self, knots: &[Knot<T>], with_jac: bool, parallel: bool) -> Result<Vec<Contribution<T>>> {
        let run = |k: usize| self.contribution(knots, k, with_jac);
        if parallel {
            (0..knots.len()).into_par_iter().map(run).collect()
        } else {
            (0..knots.len()).map(run).collect()
        }
    }

    fn cost_of(&self, knots: &[Knot<T>], parallel: bool) -> Result<T> {
        // summed in knot order so the result does not depend on scheduling
        Ok(self
            .contributions(knots, false, parallel)?
            .iter()
            .fold(T::zero(), |acc, c| acc + c.cost))
    }

    /// Total negative log-likelihood: prior terms plus robust measurement terms.
    pub fn total_cost(&self) -> Result<T> {
        self.cost_of(self.trajectory.knots(), false)
    }

    /// Normal equations `H delta = -g` at the current trajectory with fixed
    /// knots eliminated, plus the current cost.
    pub fn linearize(&self, parallel: bool) -> Result<(BlockTridiagonal<T>, T)> {
        let knots = self.trajectory.knots();
        let n = self.knot_dim();
        let contribs = self.contributions(knots, true, parallel)?;
        let mut sys = BlockTridiagonal::zeros(knots.len(), n);
        let mut cost = T::zero();
        for (k, c) in contribs.iter().enumerate() {
            cost += c.cost;
            sys.diag[k] += c.h.view((0, 0), (n, n));
            sys.rhs[k] -= c.g.rows(0, n);
            if k + 1 < knots.len() {
                sys.upper[k] += c.h.view((0, n), (n, n));
                sys.diag[k + 1] += c.h.view((n, n), (n, n));
                sys.rhs[k + 1] -= c.g.rows(n, n);
            }
        }
        for (k, f) in self.fixed.iter().enumerate() {
            if *f {
                sys.fix(k);
            }
        }
        Ok((sys, cost))
    }

    fn apply(&self, delta: &[DVector<T>], scale: T) -> Vec<Knot<T>> {
        let order = self.prior.order();
        self.trajectory
            .knots()
            .iter()
            .zip(delta)
            .enumerate()
            .map(|(k, (knot, d))| {
                if self.fixed[k] {
                    *knot
                } else {
                    let scaled: Vec<T> = d.iter().map(|x| *x * scale).collect();
                    perturb_knot(knot, order, &scaled)
                }
            })
            .collect()
    }

    fn step_in_place(&mut self, opts: &SolverOptions<T>) -> Result<StepReport<T>> {
        let (sys, cost) = self.linearize(opts.parallel)?;
        let delta = sys.solve()?;
        let predicted = delta
            .iter()
            .zip(&sys.rhs)
            .fold(T::zero(), |acc, (d, r)| acc + d.dot(r))
            * lit(0.5);
        let mut scale = T::one();
        for _ in 0..=opts.max_halvings {
            let knots = self.apply(&delta, scale);
            let c = self.cost_of(&knots, opts.parallel)?;
            if c <= cost {
                let order = self.trajectory.order();
                self.trajectory = Trajectory::new(order, knots)?;
                return Ok(StepReport {
                    delta,
                    scale,
                    cost_before: cost,
                    cost_after: c,
                    accepted: true,
                    predicted_decrease: predicted,
                });
            }
            scale *= lit(0.5);
        }
        Ok(StepReport {
            delta,
            scale: T::zero(),
            cost_before: cost,
            cost_after: cost,
            accepted: false,
            predicted_decrease: predicted,
        })
    }

    /// One Gauss-Newton iteration with step halving; returns the updated problem.
    pub fn gauss_newton_step(&self, opts: &SolverOptions<T>) -> Result<(Problem<T>, StepReport<T>)> {
        let mut next = self.clone();
        let report = next.step_in_place(opts)?;
        Ok((next, report))
    }
}

/// Runs Gauss-Newton to convergence and returns the optimized trajectory.
pub fn solve<T: Real>(
    problem: &Problem<T>,
    opts: &SolverOptions<T>,
) -> Result<(Trajectory<T>, SolveReport<T>)> {
    let mut p = problem.clone();
    let initial = p.cost_of(p.trajectory.knots(), opts.parallel)?;
    let mut trace = vec![initial];
    let mut report = SolveReport {
        iterations: 0,
        initial_cost: initial,
        final_cost: initial,
        converged: false,
        termination: Termination::MaxIterations,
        cost_trace: Vec::new(),
    };
    if p.fixed.iter().all(|f| *f) {
        report.converged = true;
        report.termination = Termination::Converged;
        report.cost_trace = trace;
        return Ok((p.trajectory, report));
    }
    let tiny = lit::<T>(1e-300).max(T::default_epsilon() * T::default_epsilon() * T::default_epsilon());
    for _ in 0..opts.max_iterations {
        let step = p.step_in_place(opts)?;
        report.iterations += 1;
        let largest = step
            .delta
            .iter()
            .flat_map(|d| d.iter())
            .fold(T::zero(), |m, x| m.max(x.abs()));
        if largest <= opts.step_tolerance {
            if step.accepted {
                trace.push(step.cost_after);
            }
            report.termination = Termination::Converged;
            break;
        }
        if !step.accepted {
            // A rejected step with a negligible predicted gain means the
            // current point is already a minimum to working precision.
            let floor = opts.tolerance * step.cost_before.max(tiny);
            report.termination = if step.predicted_decrease <= floor {
                Termination::Converged
            } else {
                Termination::NonImproving
            };
            break;
        }
        trace.push(step.cost_after);
        let drop = step.cost_before - step.cost_after;
        if step.cost_after <= tiny || drop <= opts.tolerance * step.cost_before.max(tiny) {
            report.termination = Termination::Converged;
            break;
        }
    }
    report.converged = report.termination == Termination::Converged;
    report.final_cost = *trace.last().expect("trace holds the initial cost");
    report.cost_trace = trace;
    Ok((p.trajectory, report))
}
