//! Independent oracles shared by the integration tests and the acceptance suite.
#![allow(dead_code)]

use std::sync::Arc;

use eoc::analysis::{singular_control_scalar, singular_control_vector, AnalysisOptions, ArcInterval};
use eoc::dynamics::{ControlAffineSystem, ControlBounds, FnCost, FnField, VectorField};
use eoc::integrate::{adjoint_with_gradient, ensemble_cost, integrate_forward, ControlGrid, CostateBundle, TimeGrid, TrajectoryBundle};
use eoc::params::{sample_parameters, InitialConditionSpec, SampleSet};
use eoc::problems::ProblemSpec;
use eoc::Error;
use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64
}

pub fn samples(points: Vec<Vec<f64>>) -> SampleSet {
    let k = points.len();
    SampleSet { samples: points, seed: 0, k }
}

pub fn scalar_system(f0: FnField, f1: FnField, cost: FnCost, t_final: f64) -> ControlAffineSystem {
    let fields: Vec<Arc<dyn VectorField>> = vec![Arc::new(f0), Arc::new(f1)];
    ControlAffineSystem::new(fields, Arc::new(cost), ControlBounds::new(vec![-1.0], vec![1.0]).unwrap(), 0.0, t_final).unwrap()
}

/// ẋ = r x (1 − x/K) with an inert control.
pub fn logistic(r: f64, k: f64, t_final: f64) -> ControlAffineSystem {
    let f0 = FnField::new("logistic", 1, move |x, _, o| o[0] = r * x[0] * (1.0 - x[0] / k), move |x, _, o| {
        o[0] = r * (1.0 - 2.0 * x[0] / k)
    });
    scalar_system(f0, FnField::constant("zero", vec![0.0]), FnCost::coordinate(0, 1.0), t_final)
}

pub fn logistic_closed_form(r: f64, k: f64, x0: f64, t: f64) -> f64 {
    let e = (r * t).exp();
    k * x0 * e / (k + x0 * (e - 1.0))
}

pub fn logistic_terminal(sys: &ControlAffineSystem, x0: f64, steps: usize) -> f64 {
    let grid = TimeGrid::for_system(sys, steps).unwrap();
    let u = ControlGrid::constant(steps, &[0.0]);
    integrate_forward(sys, &InitialConditionSpec::constant(vec![x0]), &samples(vec![vec![]]), &u, &grid).unwrap().terminal(0)[0]
}

/// Terminal errors at N = 25, 50, 100, 200 and the observed order.
pub fn rk4_errors() -> (Vec<f64>, f64) {
    let (r, k, x0, t) = (1.0, 1.0, 0.1, 5.0);
    let sys = logistic(r, k, t);
    let exact = logistic_closed_form(r, k, x0, t);
    let errors: Vec<f64> = [25, 50, 100, 200].iter().map(|&n| (logistic_terminal(&sys, x0, n) - exact).abs()).collect();
    let order = (errors[0] / errors[3]).ln() / 8f64.ln();
    (errors, order)
}

/// A deterministic, non-trivial control inside the box.
pub fn wiggle(sys: &ControlAffineSystem, steps: usize, phase: f64) -> ControlGrid {
    let b = sys.bounds();
    let m = sys.control_dim();
    let mut values = Vec::with_capacity(steps * m);
    for j in 0..steps {
        for i in 0..m {
            let s = (0.37 * j as f64 + 1.3 * i as f64 + phase).sin();
            values.push(b.lower[i] + (b.upper[i] - b.lower[i]) * (0.5 + 0.35 * s));
        }
    }
    ControlGrid::from_values(steps, m, values).unwrap()
}

/// ‖adjoint − central differences‖_∞ / ‖central differences‖_∞ at k = 3, N = 20.
pub fn gradient_deviation(spec: &ProblemSpec) -> f64 {
    let s = sample_parameters(&spec.distribution, 3, 21).unwrap();
    let u = wiggle(&spec.system, 20, 0.4);
    let grid = TimeGrid::for_system(&spec.system, 20).unwrap();
    let traj = integrate_forward(&spec.system, &spec.init, &s, &u, &grid).unwrap();
    let (_, grad) = adjoint_with_gradient(&spec.system, &traj).unwrap();
    let cost = |v: &ControlGrid| ensemble_cost(&spec.system, &integrate_forward(&spec.system, &spec.init, &s, v, &grid).unwrap()).unwrap();
    let mut probe = u.clone();
    let fd: Vec<f64> = (0..u.values().len())
        .map(|idx| {
            let (base, h) = (u.values()[idx], 1e-6);
            probe.values_mut()[idx] = base + h;
            let plus = cost(&probe);
            probe.values_mut()[idx] = base - h;
            let minus = cost(&probe);
            probe.values_mut()[idx] = base;
            (plus - minus) / (2.0 * h)
        })
        .collect();
    let scale = fd.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    grad.iter().zip(&fd).fold(0.0f64, |a, (g, f)| a.max((g - f).abs())) / scale
}

/// Smooth 2-D fields with analytic Jacobians and Hessians.
pub fn nonlinear_a() -> Arc<dyn VectorField> {
    Arc::new(
        FnField::new(
            "a",
            2,
            |x, w, o| {
                o[0] = x[1].sin() * w[0];
                o[1] = x[0] * x[1];
            },
            |x, w, o| o.copy_from_slice(&[0.0, w[0] * x[1].cos(), x[1], x[0]]),
        )
        .with_hessian(|x, w, o| {
            o.fill(0.0);
            o[3] = -w[0] * x[1].sin();
            o[5] = 1.0;
            o[6] = 1.0;
        }),
    )
}

pub fn nonlinear_b() -> Arc<dyn VectorField> {
    Arc::new(
        FnField::new(
            "b",
            2,
            |x, _, o| {
                o[0] = x[0] * x[0];
                o[1] = x[0].exp() - x[1];
            },
            |x, _, o| o.copy_from_slice(&[2.0 * x[0], 0.0, x[0].exp(), -1.0]),
        )
        .with_hessian(|x, _, o| {
            o.fill(0.0);
            o[0] = 2.0;
            o[4] = x[0].exp();
        }),
    )
}

pub fn linear(a: [f64; 4]) -> Arc<dyn VectorField> {
    Arc::new(FnField::linear("lin", a.to_vec()))
}

/// One-interval bundles holding arbitrary states and costates at both nodes.
pub fn bundles(spec: &ProblemSpec, s: SampleSet, states: Vec<f64>, costates: Vec<f64>) -> (TrajectoryBundle, CostateBundle) {
    let grid = TimeGrid::for_system(&spec.system, 1).unwrap();
    let n = spec.system.state_dim();
    let k = s.len();
    let control = ControlGrid::constant(1, &spec.system.bounds().midpoint());
    (
        TrajectoryBundle::from_states(grid, s, control, n, states).unwrap(),
        CostateBundle::from_costates(grid, n, k, costates).unwrap(),
    )
}

/// Fishing singular control written out by hand from the brackets of
/// f0 = (r x (1 − x/K), 0) and f1 = (−U, (E − c/x) U).
pub fn fishing_closed_form(states: &[[f64; 2]], costates: &[[f64; 2]], omegas: &[Vec<f64>], c: f64, u_max: f64) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for ((x, p), w) in states.iter().zip(costates).zip(omegas) {
        let (r, k, xs) = (w[1], w[2], x[0]);
        num += r * r * (c * p[1] * (1.0 / xs - 1.0 / k) + p[0] * (1.0 - 2.0 * xs / k + 2.0 * xs * xs / (k * k)));
        den += 2.0 * u_max * (r / k) * (p[0] + c * p[1] / xs);
    }
    num / den
}

/// Largest relative deviation of the general scalar formula from the hand
/// expression over `trials` random (x, p, ω) draws, and the number of
/// non-degenerate trials.
pub fn fishing_specialization(spec: &ProblemSpec, trials: u64) -> (f64, usize) {
    let mut rng = rng(17);
    let k = 4;
    let (mut worst, mut checked) = (0.0f64, 0);
    for trial in 0..trials {
        let s = sample_parameters(&spec.distribution, k, trial).unwrap();
        let (mut states, mut costates) = (Vec::new(), Vec::new());
        let (mut xs, mut ps) = (vec![Vec::new(), Vec::new()], vec![Vec::new(), Vec::new()]);
        for node in 0..2 {
            for _ in 0..k {
                let x = [uniform(&mut rng, 10.0, 95.0), uniform(&mut rng, 0.0, 150.0)];
                let p = [uniform(&mut rng, -2.0, 2.0), uniform(&mut rng, -2.0, 2.0)];
                states.extend(x);
                costates.extend(p);
                xs[node].push(x);
                ps[node].push(p);
            }
        }
        let (traj, p) = bundles(spec, s.clone(), states, costates);
        let got = match singular_control_scalar(&traj, &p, &spec.system, 0..1, &AnalysisOptions::default()) {
            Ok(v) => v,
            // a random costate can make the denominator vanish
            Err(Error::DegenerateSingularFormula { .. }) => continue,
            Err(e) => panic!("{e}"),
        };
        for node in 0..2 {
            let oracle = fishing_closed_form(&xs[node], &ps[node], &s.samples, 17.5, 20.0);
            worst = worst.max(((got[node] - oracle) / oracle).abs());
        }
        checked += 1;
    }
    (worst, checked)
}

/// Same for the two-control system: u1 = −∫p_z y² / ∫p_z, u2 = −∫x y p_z / ∫p_x.
pub fn bryson_ho_specialization(spec: &ProblemSpec, trials: u64) -> f64 {
    let mut rng = rng(29);
    let k = 4;
    let arc = ArcInterval { start: 0, end: 1, singular: vec![0, 1], bang_min: vec![], bang_max: vec![] };
    let mut worst = 0.0f64;
    for trial in 0..trials {
        let s = sample_parameters(&spec.distribution, k, trial).unwrap();
        let (mut states, mut costates, mut expected) = (Vec::new(), Vec::new(), Vec::new());
        for _ in 0..2 {
            let (mut pz, mut pzy2, mut px, mut xypz) = (0.0, 0.0, 0.0, 0.0);
            for _ in 0..k {
                let x = [uniform(&mut rng, -2.0, 3.0), uniform(&mut rng, -2.0, 2.0), uniform(&mut rng, 0.0, 5.0)];
                // averaged p_x and p_z stay away from zero so W is invertible
                let p = [uniform(&mut rng, 0.2, 2.0), uniform(&mut rng, -2.0, 2.0), uniform(&mut rng, 0.2, 2.0)];
                px += p[0];
                pz += p[2];
                pzy2 += p[2] * x[1] * x[1];
                xypz += x[0] * x[1] * p[2];
                states.extend(x);
                costates.extend(p);
            }
            expected.push([-pzy2 / pz, -xypz / px]);
        }
        let (traj, p) = bundles(spec, s, states, costates);
        let sol = singular_control_vector(&traj, &p, &spec.system, &arc, &AnalysisOptions::default()).unwrap();
        for node in 0..2 {
            for c in 0..2 {
                let (got, want) = (sol.values[node][c], expected[node][c]);
                worst = worst.max((got - want).abs() / want.abs().max(1e-300));
            }
        }
    }
    worst
}
