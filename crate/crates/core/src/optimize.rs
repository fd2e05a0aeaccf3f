//! Projected gradient descent with Armijo backtracking for the sample-average
//! problem, and the k-sweep convergence study built on it.

use serde::{Deserialize, Serialize};

use crate::dynamics::ControlAffineSystem;
use crate::error::{Error, Result};
use crate::integrate::{
    adjoint_with_gradient, ensemble_cost, integrate_forward, ControlGrid, CostateBundle, TimeGrid,
    TrajectoryBundle,
};
use crate::params::{sample_for_sweep, InitialConditionSpec, ParameterDistribution, SampleSet, SamplingMode};

/// Smallest trial step before the line search gives up.
const MIN_STEP: f64 = 1e-14;
/// Controls this close to a bound are moved onto it by the snap pass.
const SNAP_DISTANCE: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveOptions {
    pub max_iters: usize,
    pub armijo_c: f64,
    pub backtrack_factor: f64,
    pub initial_step: f64,
    /// Threshold on ‖u − P(u − ∇J)‖ / √(N m).
    pub tol_pg: f64,
    /// Number of grid intervals N.
    pub steps: usize,
    pub seed: u64,
    /// Start each line search from the Barzilai–Borwein step instead of
    /// `initial_step` once two iterates are available.
    pub bb_step: bool,
    /// Move controls within 1e-3 of a bound onto the bound after solving.
    pub snap: bool,
    pub sampling: SamplingMode,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            max_iters: 2000,
            armijo_c: 1e-4,
            backtrack_factor: 0.5,
            initial_step: 1.0,
            tol_pg: 1e-6,
            steps: 200,
            seed: 0,
            bb_step: true,
            snap: false,
            sampling: SamplingMode::Nested,
        }
    }
}

impl SolveOptions {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidArgument(msg.to_string()));
        if self.max_iters == 0 {
            return bad("max_iters must be ≥ 1");
        }
        if !(self.armijo_c > 0.0 && self.armijo_c < 1.0) {
            return bad("armijo_c must lie in (0, 1)");
        }
        if !(self.backtrack_factor > 0.0 && self.backtrack_factor < 1.0) {
            return bad("backtrack_factor must lie in (0, 1)");
        }
        if !(self.initial_step > 0.0 && self.initial_step.is_finite()) {
            return bad("initial_step must be > 0");
        }
        if !(self.tol_pg > 0.0) {
            return bad("tol_pg must be > 0");
        }
        if self.steps == 0 {
            return bad("steps must be ≥ 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    pub control: ControlGrid,
    /// The minimized sample-average cost J_k.
    pub cost: f64,
    pub iterations: usize,
    pub projected_gradient_norm: f64,
    pub converged: bool,
    pub trajectory: TrajectoryBundle,
    pub costate: CostateBundle,
    /// ∇J_k at the returned control, row-major `N × m`.
    pub gradient: Vec<f64>,
    /// Largest cost increase over accepted steps (≤ 0 for monotone descent).
    pub max_cost_increase: f64,
}

impl SolveResult {
    pub fn samples(&self) -> &SampleSet {
        &self.trajectory.samples
    }
}

struct Iterate {
    control: ControlGrid,
    traj: TrajectoryBundle,
    cost: f64,
}

fn evaluate(sys: &ControlAffineSystem, init: &InitialConditionSpec, samples: &SampleSet, control: ControlGrid, grid: &TimeGrid) -> Result<Iterate> {
    let traj = integrate_forward(sys, init, samples, &control, grid)?;
    let cost = ensemble_cost(sys, &traj)?;
    Ok(Iterate { control, traj, cost })
}

/// ‖u − P(u − g)‖ / √(len).
pub fn projected_gradient_norm(control: &ControlGrid, gradient: &[f64], sys: &ControlAffineSystem) -> f64 {
    let m = control.control_dim();
    let bounds = sys.bounds();
    let sum: f64 = control
        .values()
        .iter()
        .zip(gradient)
        .enumerate()
        .map(|(idx, (u, g))| {
            let d = u - bounds.clamp(idx % m, u - g);
            d * d
        })
        .sum();
    (sum / gradient.len() as f64).sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solves the sample-average problem on a fixed sample set.
pub fn solve_with_samples(
    sys: &ControlAffineSystem,
    init: &InitialConditionSpec,
    samples: &SampleSet,
    options: &SolveOptions,
    warm_start: Option<&ControlGrid>,
) -> Result<SolveResult> {
    options.validate()?;
    let grid = TimeGrid::for_system(sys, options.steps)?;
    let mut control = match warm_start {
        Some(u) => {
            if u.steps() != options.steps || u.control_dim() != sys.control_dim() {
                return Err(Error::GridMismatch(format!(
                    "warm start is {}×{}, expected {}×{}",
                    u.steps(),
                    u.control_dim(),
                    options.steps,
                    sys.control_dim()
                )));
            }
            u.clone()
        }
        None => ControlGrid::constant(options.steps, &sys.bounds().midpoint()),
    };
    control.project(sys.bounds());
    let m = sys.control_dim();

    // a warm start tuned for fewer samples may drive a new sample out of the
    // state domain; the midpoint start is the fallback
    let mut current = match evaluate(sys, init, samples, control, &grid) {
        Err(Error::BlowUp { .. } | Error::DomainViolation { .. }) if warm_start.is_some() => {
            let mut mid = ControlGrid::constant(options.steps, &sys.bounds().midpoint());
            mid.project(sys.bounds());
            evaluate(sys, init, samples, mid, &grid)?
        }
        other => other?,
    };
    let (mut costate, mut gradient) = adjoint_with_gradient(sys, &current.traj)?;
    let mut pg = projected_gradient_norm(&current.control, &gradient, sys);
    let mut iterations = 0;
    let mut converged = pg <= options.tol_pg;
    let mut max_increase = f64::NEG_INFINITY;
    let mut bb: Option<f64> = None;

    while !converged && iterations < options.max_iters {
        let mut step = match bb {
            Some(s) if options.bb_step => s,
            _ => options.initial_step,
        };
        let accepted = loop {
            if step < MIN_STEP {
                return Err(Error::LineSearchFailure { iteration: iterations, step });
            }
            let mut trial = current.control.clone();
            for (idx, (v, g)) in trial.values_mut().iter_mut().zip(&gradient).enumerate() {
                *v = sys.bounds().clamp(idx % m, *v - step * g);
            }
            let decrease: f64 = trial
                .values()
                .iter()
                .zip(current.control.values())
                .zip(&gradient)
                .map(|((t, u), g)| g * (t - u))
                .sum();
            match evaluate(sys, init, samples, trial, &grid) {
                Ok(next) if next.cost <= current.cost + options.armijo_c * decrease => break next,
                Ok(_) | Err(Error::BlowUp { .. } | Error::DomainViolation { .. }) => {
                    step *= options.backtrack_factor;
                }
                Err(e) => return Err(e),
            }
        };
        let (next_costate, next_gradient) = adjoint_with_gradient(sys, &accepted.traj)?;
        let s: Vec<f64> = accepted.control.values().iter().zip(current.control.values()).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = next_gradient.iter().zip(&gradient).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        bb = (sy > 0.0).then(|| (dot(&s, &s) / sy).clamp(1e-10, 1e10));
        max_increase = max_increase.max(accepted.cost - current.cost);
        current = accepted;
        costate = next_costate;
        gradient = next_gradient;
        iterations += 1;
        pg = projected_gradient_norm(&current.control, &gradient, sys);
        converged = pg <= options.tol_pg;
    }

    if options.snap {
        let mut snapped = current.control.clone();
        let b = sys.bounds();
        for (idx, v) in snapped.values_mut().iter_mut().enumerate() {
            let i = idx % m;
            if (*v - b.lower[i]).abs() <= SNAP_DISTANCE {
                *v = b.lower[i];
            } else if (b.upper[i] - *v).abs() <= SNAP_DISTANCE {
                *v = b.upper[i];
            }
        }
        if snapped != current.control {
            current = evaluate(sys, init, samples, snapped, &grid)?;
            let (c, g) = adjoint_with_gradient(sys, &current.traj)?;
            costate = c;
            gradient = g;
            pg = projected_gradient_norm(&current.control, &gradient, sys);
        }
    }

    Ok(SolveResult {
        control: current.control,
        cost: current.cost,
        iterations,
        projected_gradient_norm: pg,
        converged,
        trajectory: current.traj,
        costate,
        gradient,
        max_cost_increase: max_increase,
    })
}

/// Draws k samples from `dist` with `options.seed` and solves (P_k).
pub fn solve(
    sys: &ControlAffineSystem,
    dist: &ParameterDistribution,
    init: &InitialConditionSpec,
    k: usize,
    options: &SolveOptions,
) -> Result<SolveResult> {
    let samples = sample_for_sweep(dist, k, options.seed, SamplingMode::Nested)?;
    solve_with_samples(sys, init, &samples, options, None)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub k: usize,
    pub cost: f64,
    pub control: ControlGrid,
    pub iterations: usize,
    pub converged: bool,
    /// |J^{k−1} − J^k| / |J^{k−1}|; absent for the first k.
    pub rel_cost: Option<f64>,
    /// ‖u^{k−1} − u^k‖ / ‖u^{k−1}‖ over all components.
    pub rel_control: Option<f64>,
    /// The same ratio per control component.
    pub rel_control_components: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub records: Vec<SweepRecord>,
}

/// A sweep that stopped early keeps the records computed so far.
#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub result: SweepResult,
    pub failure: Option<(usize, Error)>,
}

fn relative_distance(prev: &[f64], next: &[f64]) -> f64 {
    let diff: f64 = prev.iter().zip(next).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    let scale: f64 = prev.iter().map(|a| a * a).sum::<f64>().sqrt();
    if diff == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

fn record(k: usize, result: &SolveResult, prev: Option<&SweepRecord>) -> SweepRecord {
    let m = result.control.control_dim();
    let (rel_cost, rel_control, rel_components) = match prev {
        None => (None, None, None),
        Some(p) => {
            let rc = if p.cost == result.cost { 0.0 } else { (p.cost - result.cost).abs() / p.cost.abs() };
            let ru = relative_distance(p.control.values(), result.control.values());
            let comps = (0..m)
                .map(|i| relative_distance(&p.control.component(i), &result.control.component(i)))
                .collect();
            (Some(rc), Some(ru), Some(comps))
        }
    };
    SweepRecord {
        k,
        cost: result.cost,
        control: result.control.clone(),
        iterations: result.iterations,
        converged: result.converged,
        rel_cost,
        rel_control,
        rel_control_components: rel_components,
    }
}

/// Solves (P_k) for k = 1..=k_max, warm-starting each k from the previous
/// solution, and records successive relative distances.
pub fn sweep(
    sys: &ControlAffineSystem,
    dist: &ParameterDistribution,
    init: &InitialConditionSpec,
    k_max: usize,
    options: &SolveOptions,
) -> Result<SweepOutcome> {
    if k_max < 2 {
        return Err(Error::InvalidArgument("k_max must be ≥ 2".into()));
    }
    options.validate()?;
    dist.validate()?;
    let mut result = SweepResult::default();
    let mut warm: Option<ControlGrid> = None;
    for k in 1..=k_max {
        let solved = sample_for_sweep(dist, k, options.seed, options.sampling)
            .and_then(|samples| solve_with_samples(sys, init, &samples, options, warm.as_ref()));
        match solved {
            Ok(sol) => {
                let rec = record(k, &sol, result.records.last());
                warm = Some(sol.control);
                result.records.push(rec);
            }
            Err(e) => {
                return Ok(SweepOutcome {
                    result,
                    failure: Some((k, e)),
                })
            }
        }
    }
    Ok(SweepOutcome { result, failure: None })
}

impl SweepResult {
    /// CSV with columns k, cost, rel_cost, rel_control, rel_control_1..m.
    /// `cost` is reported through `objective` (the user-facing sign).
    pub fn write_csv<W: std::io::Write>(&self, mut out: W, objective: impl Fn(f64) -> f64) -> std::io::Result<()> {
        let m = self.records.first().map_or(0, |r| r.control.control_dim());
        let mut header = String::from("k,cost,rel_cost,rel_control");
        for i in 1..=m {
            header.push_str(&format!(",rel_control_{i}"));
        }
        writeln!(out, "{header}")?;
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
        for r in &self.records {
            let mut line = format!("{},{},{},{}", r.k, objective(r.cost), opt(r.rel_cost), opt(r.rel_control));
            for i in 0..m {
                line.push(',');
                line.push_str(&opt(r.rel_control_components.as_ref().map(|c| c[i])));
            }
            writeln!(out, "{line}")?;
        }
        Ok(())
    }

    pub fn last(&self) -> Option<&SweepRecord> {
        self.records.last()
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::dynamics::{ControlBounds, FnCost, FnField, VectorField};

    fn integrator() -> ControlAffineSystem {
        let f0: Arc<dyn VectorField> = Arc::new(FnField::constant("f0", vec![0.0]));
        let f1: Arc<dyn VectorField> = Arc::new(FnField::constant("f1", vec![1.0]));
        ControlAffineSystem::new(
            vec![f0, f1],
            Arc::new(FnCost::coordinate(0, 1.0)),
            ControlBounds::new(vec![-1.0], vec![1.0]).unwrap(),
            0.0,
            2.0,
        )
        .unwrap()
    }

    #[test]
    fn monotone_cost_saturates_lower_bound() {
        let sys = integrator();
        let opts = SolveOptions {
            steps: 20,
            ..Default::default()
        };
        let res = solve(&sys, &ParameterDistribution::point(vec![0.0]), &InitialConditionSpec::constant(vec![0.0]), 1, &opts).unwrap();
        assert!(res.converged);
        assert!((res.cost + 2.0).abs() < 1e-6, "{res:?}");
        assert!(res.control.values().iter().all(|&u| (u + 1.0).abs() < 1e-6));
    }

    #[test]
    fn invalid_options() {
        for bad in [
            SolveOptions { armijo_c: 1.0, ..Default::default() },
            SolveOptions { backtrack_factor: 0.0, ..Default::default() },
            SolveOptions { steps: 0, ..Default::default() },
            SolveOptions { max_iters: 0, ..Default::default() },
        ] {
            assert!(bad.validate().is_err());
        }
        assert!(SolveOptions::default().validate().is_ok());
    }

    #[test]
    fn warm_start_shape_checked() {
        let sys = integrator();
        let s = crate::params::sample_parameters(&ParameterDistribution::point(vec![0.0]), 1, 0).unwrap();
        let opts = SolveOptions { steps: 10, ..Default::default() };
        let warm = ControlGrid::constant(11, &[0.0]);
        assert!(matches!(
            solve_with_samples(&sys, &InitialConditionSpec::constant(vec![0.0]), &s, &opts, Some(&warm)),
            Err(Error::GridMismatch(_))
        ));
    }

    #[test]
    fn sweep_needs_two() {
        let sys = integrator();
        let d = ParameterDistribution::point(vec![0.0]);
        assert!(sweep(&sys, &d, &InitialConditionSpec::constant(vec![0.0]), 1, &SolveOptions::default()).is_err());
    }

    #[test]
    fn relative_distance_zero_for_identical() {
        assert_eq!(relative_distance(&[0.0, 0.0], &[0.0, 0.0]), 0.0);
        assert_eq!(relative_distance(&[3.0, 4.0], &[3.0, 4.0]), 0.0);
        assert!((relative_distance(&[3.0, 4.0], &[3.0, 5.0]) - 0.2).abs() < 1e-15);
    }
}
