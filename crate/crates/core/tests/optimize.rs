use std::sync::Arc;

use eoc::analysis::switching_function;
use eoc::checks::toy_linear_problem;
use eoc::dynamics::{ControlAffineSystem, ControlBounds, FnCost, FnField, VectorField};
use eoc::integrate::{ensemble_cost, ControlGrid};
use eoc::optimize::{projected_gradient_norm, solve, solve_with_samples, sweep, SolveOptions};
use eoc::params::{sample_parameters, InitialConditionSpec, ParameterDistribution, SamplingMode};
use eoc::problems::{problem, ProblemOverrides};
use eoc::Error;

fn integrator(t_final: f64) -> ControlAffineSystem {
    let fields: Vec<Arc<dyn VectorField>> =
        vec![Arc::new(FnField::constant("f0", vec![0.0])), Arc::new(FnField::constant("f1", vec![1.0]))];
    ControlAffineSystem::new(fields, Arc::new(FnCost::coordinate(0, 1.0)), ControlBounds::new(vec![-1.0], vec![1.0]).unwrap(), 0.0, t_final)
        .unwrap()
}

fn small(steps: usize) -> SolveOptions {
    SolveOptions { steps, ..Default::default() }
}

#[test]
fn integrator_saturates_at_lower_bound() {
    let sys = integrator(2.0);
    let res = solve(&sys, &ParameterDistribution::point(vec![0.0]), &InitialConditionSpec::constant(vec![0.0]), 1, &small(16)).unwrap();
    assert!(res.converged);
    assert!((res.cost + 2.0).abs() <= 1e-6);
    assert!(res.control.values().iter().all(|&u| (u + 1.0).abs() <= 1e-6));
}

#[test]
fn result_is_feasible_and_consistent() {
    for spec in [toy_linear_problem(), problem("bryson_ho", &ProblemOverrides::default()).unwrap()] {
        let res = solve(&spec.system, &spec.distribution, &spec.init, 4, &small(40)).unwrap();
        assert!(res.converged, "{}", spec.name);
        assert!(res.control.within(spec.system.bounds()));
        assert_eq!(res.cost, ensemble_cost(&spec.system, &res.trajectory).unwrap());
        assert!(res.max_cost_increase <= 1e-12, "{}: {}", spec.name, res.max_cost_increase);
        assert_eq!(res.projected_gradient_norm, projected_gradient_norm(&res.control, &res.gradient, &spec.system));
        assert!(res.projected_gradient_norm <= 1e-6);
    }
}

#[test]
fn descent_is_monotone_for_every_budget() {
    // truncating after ℓ iterations exposes every intermediate iterate
    let spec = problem("fishing", &ProblemOverrides::default()).unwrap();
    let mut last = f64::INFINITY;
    for iters in [1, 2, 5, 10, 20, 40] {
        let opts = SolveOptions { steps: 40, max_iters: iters, ..Default::default() };
        let res = solve(&spec.system, &spec.distribution, &spec.init, 3, &opts).unwrap();
        assert!(res.control.within(spec.system.bounds()));
        assert!(res.max_cost_increase <= 1e-12);
        assert!(res.cost <= last + 1e-12, "{iters}: {} after {last}", res.cost);
        last = res.cost;
    }
}

#[test]
fn strong_switching_means_saturated_control() {
    let spec = problem("bryson_ho", &ProblemOverrides::default()).unwrap();
    let opts = SolveOptions { steps: 60, tol_pg: 1e-9, max_iters: 20000, ..Default::default() };
    let res = solve(&spec.system, &spec.distribution, &spec.init, 5, &opts).unwrap();
    assert!(res.converged);
    let sw = switching_function(&res.trajectory, &res.costate, &spec.system).unwrap();
    let b = spec.system.bounds();
    for i in 0..2 {
        let threshold = 0.02 * sw.max_abs(i);
        for j in 0..60 {
            let psi = sw.interval(j, i);
            let u = res.control.value(j, i);
            if psi > threshold {
                assert!((b.upper[i] - u).abs() <= 1e-6, "({j},{i}) Ψ̄ = {psi}, u = {u}");
            } else if psi < -threshold {
                assert!((u - b.lower[i]).abs() <= 1e-6, "({j},{i}) Ψ̄ = {psi}, u = {u}");
            }
        }
    }
}

#[test]
fn solves_are_bitwise_reproducible() {
    let spec = problem("fishing", &ProblemOverrides::default()).unwrap();
    let opts = SolveOptions { steps: 40, seed: 5, ..Default::default() };
    let a = solve(&spec.system, &spec.distribution, &spec.init, 4, &opts).unwrap();
    let b = solve(&spec.system, &spec.distribution, &spec.init, 4, &opts).unwrap();
    assert_eq!(a.cost.to_bits(), b.cost.to_bits());
    assert_eq!(a.iterations, b.iterations);
    assert_eq!(a.control, b.control);
    assert_eq!(a.samples(), b.samples());
}

#[test]
fn single_atom_sweep_has_zero_distances() {
    let spec = problem("bryson_ho", &ProblemOverrides::default().with_distribution(ParameterDistribution::point(vec![1.0]))).unwrap();
    for sampling in [SamplingMode::Nested, SamplingMode::Independent] {
        let opts = SolveOptions { steps: 30, sampling, ..Default::default() };
        let out = sweep(&spec.system, &spec.distribution, &spec.init, 5, &opts).unwrap();
        assert!(out.failure.is_none());
        assert_eq!(out.result.records.len(), 5);
        for r in &out.result.records[1..] {
            assert_eq!(r.rel_cost, Some(0.0));
            assert_eq!(r.rel_control, Some(0.0));
            assert_eq!(r.rel_control_components, Some(vec![0.0, 0.0]));
        }
        assert!(out.result.records[0].rel_cost.is_none());
    }
}

#[test]
fn sweep_needs_two_values_of_k() {
    let spec = toy_linear_problem();
    let err = sweep(&spec.system, &spec.distribution, &spec.init, 1, &small(10)).unwrap_err();
    assert!(err.to_string().contains("k_max must be ≥ 2"));
}

#[test]
fn failed_sweep_keeps_earlier_records() {
    // ẋ = x² + u from x(0) = ω blows up before T = 1.5 once ω is large
    let f0 = FnField::new("square", 1, |x, _, o| o[0] = x[0] * x[0], |x, _, o| o[0] = 2.0 * x[0]);
    let fields: Vec<Arc<dyn VectorField>> = vec![Arc::new(f0), Arc::new(FnField::constant("f1", vec![1.0]))];
    let sys = ControlAffineSystem::new(fields, Arc::new(FnCost::coordinate(0, 1.0)), ControlBounds::new(vec![-0.1], vec![0.1]).unwrap(), 0.0, 1.5)
        .unwrap();
    let dist = ParameterDistribution::uniform(0.0, 2.0);
    let init = InitialConditionSpec::projection("id", vec![eoc::params::InitialEntry::Parameter(0)]);
    let opts = SolveOptions { steps: 30, seed: 3, ..Default::default() };
    let draws = sample_parameters(&dist, 10, 3).unwrap();
    let first_bad = draws.iter().position(|w| w[0] > 1.0).expect("some draw exceeds 1") + 1;
    let out = sweep(&sys, &dist, &init, 10, &opts).unwrap();
    let (k, err) = out.failure.expect("sweep must stop");
    assert!(k <= first_bad);
    assert_eq!(out.result.records.len(), k - 1);
    assert!(matches!(err, Error::BlowUp { .. } | Error::LineSearchFailure { .. }), "{err:?}");
}

#[test]
fn warm_start_is_used() {
    let spec = toy_linear_problem();
    let samples = sample_parameters(&spec.distribution, 3, 0).unwrap();
    let cold = solve_with_samples(&spec.system, &spec.init, &samples, &small(30), None).unwrap();
    let warm = solve_with_samples(&spec.system, &spec.init, &samples, &small(30), Some(&cold.control)).unwrap();
    assert_eq!(warm.iterations, 0);
    assert_eq!(warm.control, cold.control);
    let wrong = ControlGrid::constant(31, &[0.0]);
    assert!(matches!(
        solve_with_samples(&spec.system, &spec.init, &samples, &small(30), Some(&wrong)),
        Err(Error::GridMismatch(_))
    ));
}

#[test]
fn invalid_options_are_rejected() {
    let spec = toy_linear_problem();
    let bad = SolveOptions { tol_pg: 0.0, ..small(10) };
    assert!(solve(&spec.system, &spec.distribution, &spec.init, 2, &bad).is_err());
    assert!(solve(&spec.system, &spec.distribution, &spec.init, 0, &small(10)).is_err());
}
