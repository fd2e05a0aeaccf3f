//! Fixed-step RK4 integration of the state ensemble, the discrete adjoint
//! (costate) ensemble, and the exact gradient of the sample-average cost with
//! respect to a piecewise-constant control.
//!
//! The costate is the adjoint of the RK4 map itself: with λ_N = ∇g(x_N) and
//! λ_j = (∂x_{j+1}/∂x_j)ᵀ λ_{j+1}, the stored costate is p_j = −λ_j. It is a
//! fourth-order approximation of the solution of −ṗ = (∂f/∂x)ᵀ p, and the
//! gradient assembled from its stage values is the exact derivative of the
//! discretized cost.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::ControlAffineSystem;
use crate::error::{check_dim, Error, Result};
use crate::params::{initial_condition_map, InitialConditionSpec, SampleSet};

/// Uniform grid t_j = t0 + j Δt, j = 0..=steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub t0: f64,
    pub t_final: f64,
    pub steps: usize,
}

impl TimeGrid {
    pub fn new(t0: f64, t_final: f64, steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidArgument("grid needs at least one interval".into()));
        }
        if !(t0 < t_final) || !t0.is_finite() || !t_final.is_finite() {
            return Err(Error::InvalidArgument(format!("invalid horizon [{t0}, {t_final}]")));
        }
        Ok(Self { t0, t_final, steps })
    }

    pub fn for_system(sys: &ControlAffineSystem, steps: usize) -> Result<Self> {
        Self::new(sys.t0(), sys.t_final(), steps)
    }

    pub fn dt(&self) -> f64 {
        (self.t_final - self.t0) / self.steps as f64
    }

    pub fn node(&self, j: usize) -> f64 {
        if j == self.steps {
            self.t_final
        } else {
            self.t0 + j as f64 * self.dt()
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..=self.steps).map(|j| self.node(j)).collect()
    }
}

/// Piecewise-constant control: `value(j, i)` holds on [t_j, t_{j+1}).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlGrid {
    steps: usize,
    m: usize,
    values: Vec<f64>,
}

impl ControlGrid {
    pub fn constant(steps: usize, value: &[f64]) -> Self {
        Self {
            steps,
            m: value.len(),
            values: value.iter().copied().cycle().take(steps * value.len()).collect(),
        }
    }

    /// From row-major values (`steps × m`).
    pub fn from_values(steps: usize, m: usize, values: Vec<f64>) -> Result<Self> {
        check_dim("control grid values", steps * m, values.len())?;
        Ok(Self { steps, m, values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let m = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != m) || m == 0 {
            return Err(Error::InvalidArgument("control rows must share a positive width".into()));
        }
        Ok(Self {
            steps: rows.len(),
            m,
            values: rows.concat(),
        })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn control_dim(&self) -> usize {
        self.m
    }

    pub fn value(&self, j: usize, i: usize) -> f64 {
        self.values[j * self.m + i]
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.values[j * self.m..(j + 1) * self.m]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.values.chunks(self.m).map(<[f64]>::to_vec).collect()
    }

    /// The trajectory of component `i`.
    pub fn component(&self, i: usize) -> Vec<f64> {
        (0..self.steps).map(|j| self.value(j, i)).collect()
    }

    pub fn within(&self, bounds: &crate::dynamics::ControlBounds) -> bool {
        self.values
            .iter()
            .enumerate()
            .all(|(idx, v)| (bounds.lower[idx % self.m]..=bounds.upper[idx % self.m]).contains(v))
    }

    /// Componentwise clamping onto the box.
    pub fn project(&mut self, bounds: &crate::dynamics::ControlBounds) {
        let m = self.m;
        for (idx, v) in self.values.iter_mut().enumerate() {
            *v = bounds.clamp(idx % m, *v);
        }
    }
}

/// x(t_j, ω_i) for all nodes and samples, stored as `[(j*k + i)*n + c]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryBundle {
    pub grid: TimeGrid,
    pub samples: SampleSet,
    pub control: ControlGrid,
    n: usize,
    states: Vec<f64>,
}

impl TrajectoryBundle {
    /// Wraps externally computed states laid out as `[(j*k + i)*n + c]`.
    pub fn from_states(grid: TimeGrid, samples: SampleSet, control: ControlGrid, n: usize, states: Vec<f64>) -> Result<Self> {
        check_dim("trajectory states", (grid.steps + 1) * samples.len() * n, states.len())?;
        if control.steps() != grid.steps {
            return Err(Error::GridMismatch(format!("control has {} intervals, grid has {}", control.steps(), grid.steps)));
        }
        Ok(Self { grid, samples, control, n, states })
    }

    pub fn state_dim(&self) -> usize {
        self.n
    }

    pub fn sample_count(&self) -> usize {
        self.samples.len()
    }

    pub fn state(&self, j: usize, i: usize) -> &[f64] {
        let k = self.sample_count();
        let off = (j * k + i) * self.n;
        &self.states[off..off + self.n]
    }

    pub fn terminal(&self, i: usize) -> &[f64] {
        self.state(self.grid.steps, i)
    }

    pub fn raw(&self) -> &[f64] {
        &self.states
    }

    pub fn write_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        write_bundle_csv(out, &self.grid, self.sample_count(), self.n, "x", |j, i| self.state(j, i))
    }
}

/// p(t_j, ω_i) with the same layout as [`TrajectoryBundle`].
#[derive(Debug, Clone, PartialEq)]
pub struct CostateBundle {
    pub grid: TimeGrid,
    n: usize,
    k: usize,
    costates: Vec<f64>,
}

impl CostateBundle {
    /// Wraps externally computed costates with the trajectory layout.
    pub fn from_costates(grid: TimeGrid, n: usize, k: usize, costates: Vec<f64>) -> Result<Self> {
        check_dim("costates", (grid.steps + 1) * k * n, costates.len())?;
        Ok(Self { grid, n, k, costates })
    }

    pub fn costate(&self, j: usize, i: usize) -> &[f64] {
        let off = (j * self.k + i) * self.n;
        &self.costates[off..off + self.n]
    }

    pub fn state_dim(&self) -> usize {
        self.n
    }

    pub fn sample_count(&self) -> usize {
        self.k
    }

    pub fn raw(&self) -> &[f64] {
        &self.costates
    }

    pub fn write_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        write_bundle_csv(out, &self.grid, self.k, self.n, "p", |j, i| self.costate(j, i))
    }
}

fn write_bundle_csv<'a, W: Write, F>(mut out: W, grid: &TimeGrid, k: usize, n: usize, prefix: &str, get: F) -> std::io::Result<()>
where
    F: Fn(usize, usize) -> &'a [f64],
{
    let mut header = String::from("t,sample_index");
    for c in 0..n {
        header.push_str(&format!(",{prefix}_{c}"));
    }
    writeln!(out, "{header}")?;
    for j in 0..=grid.steps {
        let t = grid.node(j);
        for i in 0..k {
            let mut line = format!("{t},{i}");
            for v in get(j, i) {
                line.push_str(&format!(",{v}"));
            }
            writeln!(out, "{line}")?;
        }
    }
    Ok(())
}

/// Scratch buffers for one sample's RK4 step and its adjoint.
struct Workspace {
    stages: [Vec<f64>; 4],
    points: [Vec<f64>; 4],
    scratch: Vec<f64>,
    jac: Vec<f64>,
    jac_scratch: Vec<f64>,
    kappa: [Vec<f64>; 4],
    mu: Vec<f64>,
    field: Vec<f64>,
}

impl Workspace {
    fn new(n: usize) -> Self {
        let v = || vec![0.0; n];
        Self {
            stages: [v(), v(), v(), v()],
            points: [v(), v(), v(), v()],
            scratch: v(),
            jac: vec![0.0; n * n],
            jac_scratch: vec![0.0; n * n],
            kappa: [v(), v(), v(), v()],
            mu: v(),
            field: v(),
        }
    }

    /// Fills stage points X_s and slopes k_s for one step from `x`.
    fn stages(&mut self, sys: &ControlAffineSystem, x: &[f64], u: &[f64], omega: &[f64], h: f64) {
        const OFFSET: [f64; 4] = [0.0, 0.5, 0.5, 1.0];
        for s in 0..4 {
            if s == 0 {
                self.points[0].copy_from_slice(x);
            } else {
                let (prev, point) = (&self.stages[s - 1], &mut self.points[s]);
                for c in 0..x.len() {
                    point[c] = x[c] + OFFSET[s] * h * prev[c];
                }
            }
            sys.eval_into(&self.points[s], u, omega, &mut self.stages[s], &mut self.scratch);
        }
    }
}

fn rk4_step(sys: &ControlAffineSystem, x: &mut [f64], u: &[f64], omega: &[f64], h: f64, ws: &mut Workspace) {
    ws.stages(sys, x, u, omega, h);
    let [k1, k2, k3, k4] = &ws.stages;
    for c in 0..x.len() {
        x[c] += h / 6.0 * (k1[c] + 2.0 * k2[c] + 2.0 * k3[c] + k4[c]);
    }
}

/// One backward step of the RK4 discrete adjoint.
///
/// Turns λ_{j+1} (in `lambda`) into λ_j in place and, when `grad` is given,
/// writes ∂J/∂u_j = Σ_s κ_s · f_i(X_s) for this sample.
fn adjoint_step(
    sys: &ControlAffineSystem,
    x: &[f64],
    u: &[f64],
    omega: &[f64],
    h: f64,
    lambda: &mut [f64],
    grad: Option<&mut [f64]>,
    ws: &mut Workspace,
) {
    let n = x.len();
    ws.stages(sys, x, u, omega, h);
    // κ_s: adjoint of slope k_s; weights from x_{j+1} = x_j + h/6 (k1 + 2k2 + 2k3 + k4)
    // and the chaining X_{s+1} = x_j + c_{s+1} h k_s.
    const WEIGHT: [f64; 4] = [1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0];
    const CHAIN: [f64; 4] = [0.5, 0.5, 1.0, 0.0];
    let mut total = lambda.to_vec();
    for s in (0..4).rev() {
        for c in 0..n {
            ws.kappa[s][c] = h * WEIGHT[s] * lambda[c];
            if s < 3 {
                ws.kappa[s][c] += h * CHAIN[s] * ws.mu[c];
            }
        }
        sys.jacobian_into(&ws.points[s], u, omega, &mut ws.jac, &mut ws.jac_scratch);
        for c in 0..n {
            ws.mu[c] = (0..n).map(|r| ws.jac[r * n + c] * ws.kappa[s][r]).sum();
            total[c] += ws.mu[c];
        }
    }
    lambda.copy_from_slice(&total);
    if let Some(grad) = grad {
        for (i, g) in grad.iter_mut().enumerate() {
            let field = sys.field(i + 1);
            let mut acc = 0.0;
            for s in 0..4 {
                field.eval(&ws.points[s], omega, &mut ws.field);
                acc += ws.kappa[s].iter().zip(&ws.field).map(|(a, b)| a * b).sum::<f64>();
            }
            *g = acc;
        }
    }
}

fn check_control(sys: &ControlAffineSystem, control: &ControlGrid, grid: &TimeGrid) -> Result<()> {
    check_dim("control dimension", sys.control_dim(), control.control_dim())?;
    if control.steps() != grid.steps {
        return Err(Error::GridMismatch(format!(
            "control has {} intervals, grid has {}",
            control.steps(),
            grid.steps
        )));
    }
    Ok(())
}

fn first_error<T>(results: Vec<Result<T>>) -> Result<Vec<T>> {
    results.into_iter().collect()
}

/// Integrates x(·, ω_i) for every sample with classical RK4, holding the
/// control constant on each interval.
pub fn integrate_forward(
    sys: &ControlAffineSystem,
    init: &InitialConditionSpec,
    samples: &SampleSet,
    control: &ControlGrid,
    grid: &TimeGrid,
) -> Result<TrajectoryBundle> {
    check_control(sys, control, grid)?;
    if !control.within(sys.bounds()) {
        return Err(Error::InvalidArgument("control outside its bounds".into()));
    }
    let n = sys.state_dim();
    let h = grid.dt();
    let per_sample: Vec<Result<Vec<f64>>> = samples
        .samples
        .par_iter()
        .enumerate()
        .map(|(i, omega)| {
            let mut x = initial_condition_map(init, omega, n)?;
            let mut hist = Vec::with_capacity((grid.steps + 1) * n);
            hist.extend_from_slice(&x);
            let mut ws = Workspace::new(n);
            for j in 0..grid.steps {
                rk4_step(sys, &mut x, control.row(j), omega, h, &mut ws);
                let time = grid.node(j + 1);
                if x.iter().any(|v| !v.is_finite()) {
                    return Err(Error::BlowUp { sample: i, time });
                }
                if !sys.in_domain(&x) {
                    return Err(Error::DomainViolation { sample: i, time });
                }
                hist.extend_from_slice(&x);
            }
            Ok(hist)
        })
        .collect();
    let per_sample = first_error(per_sample)?;
    let k = samples.len();
    let mut states = vec![0.0; (grid.steps + 1) * k * n];
    for (i, hist) in per_sample.iter().enumerate() {
        for j in 0..=grid.steps {
            let dst = (j * k + i) * n;
            states[dst..dst + n].copy_from_slice(&hist[j * n..(j + 1) * n]);
        }
    }
    Ok(TrajectoryBundle {
        grid: *grid,
        samples: samples.clone(),
        control: control.clone(),
        n,
        states,
    })
}

fn check_traj_control(sys: &ControlAffineSystem, traj: &TrajectoryBundle, control: &ControlGrid) -> Result<()> {
    check_control(sys, control, &traj.grid)?;
    if control != &traj.control {
        return Err(Error::GridMismatch("control differs from the one the trajectory was integrated with".into()));
    }
    check_dim("trajectory state", sys.state_dim(), traj.state_dim())
}

/// Runs the backward sweep for one sample; returns λ at every node
/// (node-major) and, optionally, the per-interval gradient rows.
fn backward_sample(
    sys: &ControlAffineSystem,
    traj: &TrajectoryBundle,
    i: usize,
    with_grad: bool,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = traj.n;
    let m = sys.control_dim();
    let steps = traj.grid.steps;
    let h = traj.grid.dt();
    let omega = traj.samples.get(i);
    let mut lambda = vec![0.0; n];
    sys.cost().gradient(traj.terminal(i), omega, &mut lambda);
    let mut lambdas = vec![0.0; (steps + 1) * n];
    lambdas[steps * n..].copy_from_slice(&lambda);
    let mut grad = if with_grad { vec![0.0; steps * m] } else { Vec::new() };
    let mut ws = Workspace::new(n);
    for j in (0..steps).rev() {
        let g = with_grad.then(|| &mut grad[j * m..(j + 1) * m]);
        adjoint_step(sys, traj.state(j, i), traj.control.row(j), omega, h, &mut lambda, g, &mut ws);
        if lambda.iter().any(|v| !v.is_finite()) {
            return Err(Error::BlowUp {
                sample: i,
                time: traj.grid.node(j),
            });
        }
        lambdas[j * n..(j + 1) * n].copy_from_slice(&lambda);
    }
    Ok((lambdas, grad))
}

fn assemble_costate(traj: &TrajectoryBundle, lambdas: &[(Vec<f64>, Vec<f64>)]) -> CostateBundle {
    let (n, k, steps) = (traj.n, traj.sample_count(), traj.grid.steps);
    let mut costates = vec![0.0; (steps + 1) * k * n];
    for (i, (lam, _)) in lambdas.iter().enumerate() {
        for j in 0..=steps {
            let dst = (j * k + i) * n;
            for c in 0..n {
                costates[dst + c] = -lam[j * n + c];
            }
        }
    }
    CostateBundle {
        grid: traj.grid,
        n,
        k,
        costates,
    }
}

/// Sums per-sample gradient rows in sample order and divides by k.
fn average_gradients(per_sample: &[(Vec<f64>, Vec<f64>)], len: usize) -> Vec<f64> {
    let mut grad = vec![0.0; len];
    for (_, g) in per_sample {
        for (a, b) in grad.iter_mut().zip(g) {
            *a += b;
        }
    }
    let k = per_sample.len() as f64;
    grad.iter_mut().for_each(|g| *g /= k);
    grad
}

/// Integrates the costate ensemble backward from −p(T, ω) = ∇g(x(T, ω), ω).
pub fn integrate_adjoint(sys: &ControlAffineSystem, traj: &TrajectoryBundle, control: &ControlGrid) -> Result<CostateBundle> {
    check_traj_control(sys, traj, control)?;
    let per_sample = first_error(
        (0..traj.sample_count())
            .into_par_iter()
            .map(|i| backward_sample(sys, traj, i, false))
            .collect(),
    )?;
    Ok(assemble_costate(traj, &per_sample))
}

/// Costate and gradient in one backward pass; what the optimizer uses.
pub fn adjoint_with_gradient(sys: &ControlAffineSystem, traj: &TrajectoryBundle) -> Result<(CostateBundle, Vec<f64>)> {
    check_dim("trajectory state", sys.state_dim(), traj.state_dim())?;
    let per_sample = first_error(
        (0..traj.sample_count())
            .into_par_iter()
            .map(|i| backward_sample(sys, traj, i, true))
            .collect(),
    )?;
    let grad = average_gradients(&per_sample, traj.grid.steps * sys.control_dim());
    Ok((assemble_costate(traj, &per_sample), grad))
}

/// J_k = (1/k) Σ g(x(T, ω_i), ω_i), summed in sample order.
pub fn ensemble_cost(sys: &ControlAffineSystem, traj: &TrajectoryBundle) -> Result<f64> {
    let mut total = 0.0;
    for i in 0..traj.sample_count() {
        total += sys.cost().value(traj.terminal(i), traj.samples.get(i));
    }
    let cost = total / traj.sample_count() as f64;
    if !cost.is_finite() {
        return Err(Error::BlowUp {
            sample: 0,
            time: traj.grid.t_final,
        });
    }
    Ok(cost)
}

/// ∂J_k/∂u[j][i] as a row-major `steps × m` array.
///
/// Each interval replays the adjoint step from the stored p_{j+1}, so the
/// result is the exact derivative of the discretized cost. To leading order
/// it equals −Δt (1/k) Σ p(t_j, ω)·f_i(x(t_j, ω), ω).
pub fn cost_gradient(sys: &ControlAffineSystem, traj: &TrajectoryBundle, costate: &CostateBundle) -> Result<Vec<f64>> {
    check_dim("costate state", traj.state_dim(), costate.state_dim())?;
    check_dim("costate samples", traj.sample_count(), costate.sample_count())?;
    if costate.grid != traj.grid {
        return Err(Error::GridMismatch("costate and trajectory grids differ".into()));
    }
    let n = traj.n;
    let m = sys.control_dim();
    let steps = traj.grid.steps;
    let h = traj.grid.dt();
    let per_sample: Vec<(Vec<f64>, Vec<f64>)> = (0..traj.sample_count())
        .into_par_iter()
        .map(|i| {
            let omega = traj.samples.get(i);
            let mut ws = Workspace::new(n);
            let mut grad = vec![0.0; steps * m];
            let mut lambda = vec![0.0; n];
            for j in 0..steps {
                for (l, p) in lambda.iter_mut().zip(costate.costate(j + 1, i)) {
                    *l = -p;
                }
                adjoint_step(sys, traj.state(j, i), traj.control.row(j), omega, h, &mut lambda, Some(&mut grad[j * m..(j + 1) * m]), &mut ws);
            }
            (Vec::new(), grad)
        })
        .collect();
    Ok(average_gradients(&per_sample, steps * m))
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::dynamics::{ControlBounds, FnCost, FnField, VectorField};
    use crate::params::ParameterDistribution;

    fn single() -> SampleSet {
        crate::params::sample_parameters(&ParameterDistribution::point(vec![0.0]), 1, 0).unwrap()
    }

    /// ẋ = u, g(x) = x, u ∈ [−1, 1] on [0, T].
    fn integrator(t: f64) -> ControlAffineSystem {
        let f0: Arc<dyn VectorField> = Arc::new(FnField::constant("f0", vec![0.0]));
        let f1: Arc<dyn VectorField> = Arc::new(FnField::constant("f1", vec![1.0]));
        ControlAffineSystem::new(
            vec![f0, f1],
            Arc::new(FnCost::coordinate(0, 1.0)),
            ControlBounds::new(vec![-1.0], vec![1.0]).unwrap(),
            0.0,
            t,
        )
        .unwrap()
    }

    #[test]
    fn zero_field_keeps_initial_state() {
        let sys = integrator(1.0);
        let grid = TimeGrid::for_system(&sys, 10).unwrap();
        let u = ControlGrid::constant(10, &[0.0]);
        let init = InitialConditionSpec::constant(vec![3.5]);
        let traj = integrate_forward(&sys, &init, &single(), &u, &grid).unwrap();
        assert!((0..=10).all(|j| traj.state(j, 0) == [3.5]));
    }

    #[test]
    fn constant_derivative_is_exact() {
        let sys = integrator(2.0);
        let grid = TimeGrid::for_system(&sys, 7).unwrap();
        let u = ControlGrid::constant(7, &[-1.0]);
        let init = InitialConditionSpec::constant(vec![0.0]);
        let traj = integrate_forward(&sys, &init, &single(), &u, &grid).unwrap();
        assert!((traj.terminal(0)[0] + 2.0).abs() < 1e-14);
        assert_eq!(ensemble_cost(&sys, &traj).unwrap(), traj.terminal(0)[0]);
    }

    #[test]
    fn integrator_costate_and_gradient() {
        let sys = integrator(2.0);
        let grid = TimeGrid::for_system(&sys, 8).unwrap();
        let u = ControlGrid::constant(8, &[0.3]);
        let init = InitialConditionSpec::constant(vec![0.0]);
        let traj = integrate_forward(&sys, &init, &single(), &u, &grid).unwrap();
        let p = integrate_adjoint(&sys, &traj, &u).unwrap();
        assert!((0..=8).all(|j| p.costate(j, 0) == [-1.0]));
        let g = cost_gradient(&sys, &traj, &p).unwrap();
        // ∂J/∂u[j] = −Δt · p · f_1 = Δt
        assert!(g.iter().all(|v| (v - grid.dt()).abs() < 1e-15));
    }

    #[test]
    fn grid_mismatch_rejected() {
        let sys = integrator(1.0);
        let grid = TimeGrid::for_system(&sys, 4).unwrap();
        let init = InitialConditionSpec::constant(vec![0.0]);
        let u = ControlGrid::constant(4, &[0.0]);
        let traj = integrate_forward(&sys, &init, &single(), &u, &grid).unwrap();
        assert!(matches!(
            integrate_adjoint(&sys, &traj, &ControlGrid::constant(5, &[0.0])),
            Err(Error::GridMismatch(_))
        ));
        assert!(matches!(
            integrate_forward(&sys, &init, &single(), &ControlGrid::constant(3, &[0.0]), &grid),
            Err(Error::GridMismatch(_))
        ));
    }

    #[test]
    fn blow_up_names_sample() {
        // ẋ = x² from x0 = 1 explodes at t = 1
        let f0: Arc<dyn VectorField> = Arc::new(FnField::new("sq", 1, |x, _, o| o[0] = x[0] * x[0], |x, _, o| o[0] = 2.0 * x[0]));
        let f1: Arc<dyn VectorField> = Arc::new(FnField::constant("f1", vec![1.0]));
        let sys = ControlAffineSystem::new(
            vec![f0, f1],
            Arc::new(FnCost::coordinate(0, 1.0)),
            ControlBounds::new(vec![0.0], vec![1.0]).unwrap(),
            0.0,
            3.0,
        )
        .unwrap();
        let grid = TimeGrid::for_system(&sys, 60).unwrap();
        let samples = crate::params::sample_parameters(&ParameterDistribution::point(vec![0.0]), 2, 0).unwrap();
        let err = integrate_forward(&sys, &InitialConditionSpec::constant(vec![1.0]), &samples, &ControlGrid::constant(60, &[0.0]), &grid).unwrap_err();
        assert!(matches!(err, Error::BlowUp { sample: 0, .. }), "{err}");
    }

    #[test]
    fn csv_header() {
        let sys = integrator(1.0);
        let grid = TimeGrid::for_system(&sys, 2).unwrap();
        let u = ControlGrid::constant(2, &[1.0]);
        let traj = integrate_forward(&sys, &InitialConditionSpec::constant(vec![0.0]), &single(), &u, &grid).unwrap();
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next(), Some("t,sample_index,x_0"));
        assert_eq!(text.lines().count(), 4);
        assert_eq!(text.lines().last(), Some("1,0,1"));
    }
}
