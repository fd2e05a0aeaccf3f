//! Invariant suite behind `eoc check`: analytic derivatives against central
//! differences, the adjoint gradient against finite differences of J_k,
//! Lie-bracket identities and the RK4 convergence order.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::Serialize;

use crate::dynamics::{
    gradient_fd_error, hessian_fd_error, jacobian_fd_error, lie_bracket, norm, relative_error, ControlAffineSystem,
    ControlBounds, FnCost, FnField, VectorField,
};
use crate::error::{Error, Result};
use crate::integrate::{adjoint_with_gradient, ensemble_cost, integrate_forward, ControlGrid, TimeGrid};
use crate::params::{sample_parameters, InitialConditionSpec, ParameterDistribution, SampleSet};
use crate::problems::{ProblemSpec, Sense};

pub const JACOBIAN_RTOL: f64 = 1e-6;
pub const HESSIAN_RTOL: f64 = 1e-5;
pub const GRADIENT_RTOL: f64 = 1e-4;
pub const BRACKET_RTOL: f64 = 1e-12;
pub const RK4_MIN_ORDER: f64 = 3.8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckKind {
    Jacobians,
    Gradient,
    Brackets,
    Rk4,
}

impl CheckKind {
    pub const ALL: [CheckKind; 4] = [CheckKind::Jacobians, CheckKind::Gradient, CheckKind::Brackets, CheckKind::Rk4];

    pub fn as_str(self) -> &'static str {
        match self {
            CheckKind::Jacobians => "jacobians",
            CheckKind::Gradient => "gradient",
            CheckKind::Brackets => "brackets",
            CheckKind::Rk4 => "rk4",
        }
    }
}

impl fmt::Display for CheckKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CheckKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CheckKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown check '{s}' (expected jacobians, gradient, brackets or rk4)")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub kind: CheckKind,
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckOutcome {
    fn new(kind: CheckKind, name: String, passed: bool, detail: String) -> Self {
        Self { kind, name, passed, detail }
    }
}

impl fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verdict = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{verdict} [{}] {}: {}", self.kind, self.name, self.detail)
    }
}

/// A deterministic interior control: midpoint plus a bounded oscillation.
pub fn probe_control(sys: &ControlAffineSystem, steps: usize) -> ControlGrid {
    let b = sys.bounds();
    let m = b.dim();
    let mut values = Vec::with_capacity(steps * m);
    for j in 0..steps {
        for i in 0..m {
            let half = 0.5 * (b.upper[i] - b.lower[i]);
            let mid = b.lower[i] + half;
            values.push(mid + 0.4 * half * ((j as f64) * 0.7 + i as f64).sin());
        }
    }
    ControlGrid::from_values(steps, m, values).expect("shape is consistent by construction")
}

/// (x, ω) pairs visited by the probe control, so points respect the state domain.
pub fn probe_points(spec: &ProblemSpec, k: usize, steps: usize, seed: u64) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
    let samples = sample_parameters(&spec.distribution, k, seed)?;
    let grid = TimeGrid::for_system(&spec.system, steps)?;
    let control = probe_control(&spec.system, steps);
    let traj = integrate_forward(&spec.system, &spec.init, &samples, &control, &grid)?;
    let mut points = Vec::new();
    for j in 0..=steps {
        for i in 0..k {
            points.push((traj.state(j, i).to_vec(), samples.get(i).to_vec()));
        }
    }
    Ok(points)
}

pub fn check_jacobians(spec: &ProblemSpec) -> Result<Vec<CheckOutcome>> {
    let points = probe_points(spec, 3, 10, 7)?;
    let mut out = Vec::new();
    for (idx, field) in spec.system.fields().iter().enumerate() {
        let err = jacobian_fd_error(field.as_ref(), &points);
        out.push(CheckOutcome::new(
            CheckKind::Jacobians,
            format!("{}: Jacobian of field {idx} ({})", spec.name, field.label()),
            err <= JACOBIAN_RTOL,
            format!("max relative deviation from central differences {err:.3e} (tolerance {JACOBIAN_RTOL:e})"),
        ));
        if let Some(err) = hessian_fd_error(field.as_ref(), &points) {
            out.push(CheckOutcome::new(
                CheckKind::Jacobians,
                format!("{}: Hessian of field {idx} ({})", spec.name, field.label()),
                err <= HESSIAN_RTOL,
                format!("max relative deviation from central differences {err:.3e} (tolerance {HESSIAN_RTOL:e})"),
            ));
        }
    }
    let err = gradient_fd_error(spec.system.cost(), &points);
    out.push(CheckOutcome::new(
        CheckKind::Jacobians,
        format!("{}: terminal cost gradient", spec.name),
        err <= JACOBIAN_RTOL,
        format!("max relative deviation from central differences {err:.3e} (tolerance {JACOBIAN_RTOL:e})"),
    ));
    Ok(out)
}

/// Adjoint gradient of J_k and its central-difference estimate, entry by entry.
pub fn gradient_pair(
    sys: &ControlAffineSystem,
    init: &InitialConditionSpec,
    samples: &SampleSet,
    control: &ControlGrid,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let grid = TimeGrid::for_system(sys, control.steps())?;
    let traj = integrate_forward(sys, init, samples, control, &grid)?;
    let (_, grad) = adjoint_with_gradient(sys, &traj)?;
    let cost_at = |u: &ControlGrid| -> Result<f64> { ensemble_cost(sys, &integrate_forward(sys, init, samples, u, &grid)?) };
    let mut fd = Vec::with_capacity(grad.len());
    let mut probe = control.clone();
    for idx in 0..grad.len() {
        let u0 = control.values()[idx];
        let h = 1e-6 * u0.abs().max(1.0);
        probe.values_mut()[idx] = u0 + h;
        let plus = cost_at(&probe)?;
        probe.values_mut()[idx] = u0 - h;
        let minus = cost_at(&probe)?;
        probe.values_mut()[idx] = u0;
        fd.push((plus - minus) / (2.0 * h));
    }
    Ok((grad, fd))
}

/// ‖g − g_fd‖_∞ / ‖g_fd‖_∞ at k = 3, N = 20 on the probe control.
pub fn check_gradient(spec: &ProblemSpec) -> Result<CheckOutcome> {
    let samples = sample_parameters(&spec.distribution, 3, 11)?;
    let control = probe_control(&spec.system, 20);
    let (grad, fd) = gradient_pair(&spec.system, &spec.init, &samples, &control)?;
    let err = relative_error(&grad, &fd, 1e-12);
    Ok(CheckOutcome::new(
        CheckKind::Gradient,
        format!("{}: adjoint gradient vs finite differences (k=3, N=20)", spec.name),
        err <= GRADIENT_RTOL,
        format!("relative deviation {err:.3e} (tolerance {GRADIENT_RTOL:e})"),
    ))
}

/// a·f + b·g as a field.
pub struct Combination {
    pub a: f64,
    pub f: Arc<dyn VectorField>,
    pub b: f64,
    pub g: Arc<dyn VectorField>,
}

impl VectorField for Combination {
    fn dim(&self) -> usize {
        self.f.dim()
    }

    fn eval(&self, x: &[f64], omega: &[f64], out: &mut [f64]) {
        let mut tmp = vec![0.0; out.len()];
        self.f.eval(x, omega, out);
        self.g.eval(x, omega, &mut tmp);
        out.iter_mut().zip(&tmp).for_each(|(o, t)| *o = self.a * *o + self.b * t);
    }

    fn jacobian(&self, x: &[f64], omega: &[f64], out: &mut [f64]) {
        let mut tmp = vec![0.0; out.len()];
        self.f.jacobian(x, omega, out);
        self.g.jacobian(x, omega, &mut tmp);
        out.iter_mut().zip(&tmp).for_each(|(o, t)| *o = self.a * *o + self.b * t);
    }

    fn label(&self) -> String {
        format!("{}·{} + {}·{}", self.a, self.f.label(), self.b, self.g.label())
    }
}

fn bracket_identities(spec: &ProblemSpec) -> Result<Vec<CheckOutcome>> {
    let points = probe_points(spec, 3, 10, 13)?;
    let fields = spec.system.fields();
    let mut antisym = 0.0f64;
    let mut selfb = 0.0f64;
    let mut bilin = 0.0f64;
    let (a, b) = (0.7, -1.3);
    for (x, w) in &points {
        for (i, f) in fields.iter().enumerate() {
            let ff = lie_bracket(f.as_ref(), f.as_ref(), x, w)?;
            selfb = selfb.max(norm(&ff));
            for (j, g) in fields.iter().enumerate() {
                if i == j {
                    continue;
                }
                let fg = lie_bracket(f.as_ref(), g.as_ref(), x, w)?;
                let gf = lie_bracket(g.as_ref(), f.as_ref(), x, w)?;
                let sum: Vec<f64> = fg.iter().zip(&gf).map(|(p, q)| p + q).collect();
                antisym = antisym.max(norm(&sum) / norm(&fg).max(1.0));
                for h in fields.iter() {
                    let combo = Combination { a, f: f.clone(), b, g: g.clone() };
                    let lhs = lie_bracket(&combo, h.as_ref(), x, w)?;
                    let fh = lie_bracket(f.as_ref(), h.as_ref(), x, w)?;
                    let gh = lie_bracket(g.as_ref(), h.as_ref(), x, w)?;
                    let rhs: Vec<f64> = fh.iter().zip(&gh).map(|(p, q)| a * p + b * q).collect();
                    bilin = bilin.max(relative_error(&lhs, &rhs, 1.0));
                }
            }
        }
    }
    let mut out = vec![
        CheckOutcome::new(
            CheckKind::Brackets,
            format!("{}: antisymmetry [f,g] = −[g,f]", spec.name),
            antisym <= BRACKET_RTOL,
            format!("max relative residual {antisym:.3e}"),
        ),
        CheckOutcome::new(
            CheckKind::Brackets,
            format!("{}: [f,f] = 0", spec.name),
            selfb == 0.0,
            format!("max norm {selfb:.3e}"),
        ),
        CheckOutcome::new(
            CheckKind::Brackets,
            format!("{}: bilinearity", spec.name),
            bilin <= BRACKET_RTOL,
            format!("max relative residual {bilin:.3e} (tolerance {BRACKET_RTOL:e})"),
        ),
    ];
    let m = spec.system.control_dim();
    if m >= 2 {
        let mut worst = 0.0f64;
        for (x, w) in &points {
            for i in 1..=m {
                for j in i + 1..=m {
                    worst = worst.max(norm(&lie_bracket(fields[i].as_ref(), fields[j].as_ref(), x, w)?));
                }
            }
        }
        out.push(CheckOutcome::new(
            CheckKind::Brackets,
            format!("{}: control fields commute", spec.name),
            worst == 0.0,
            format!("max |[f_i,f_j]| {worst:.3e}"),
        ));
    }
    Ok(out)
}

/// Logistic growth ẋ = a x (1 − x) with an inert control field.
pub fn logistic_system(a: f64, t_final: f64) -> ControlAffineSystem {
    let f0 = FnField::new(
        "logistic",
        1,
        move |x, _, o| o[0] = a * x[0] * (1.0 - x[0]),
        move |x, _, o| o[0] = a * (1.0 - 2.0 * x[0]),
    )
    .with_hessian(move |_, _, o| o[0] = -2.0 * a);
    let f1 = FnField::constant("zero", vec![0.0]);
    ControlAffineSystem::new(
        vec![Arc::new(f0), Arc::new(f1)],
        Arc::new(FnCost::coordinate(0, 1.0)),
        ControlBounds::new(vec![0.0], vec![1.0]).expect("valid bounds"),
        0.0,
        t_final,
    )
    .expect("logistic system is well formed")
}

/// x(t) = x0 e^{at} / (1 − x0 + x0 e^{at}).
pub fn logistic_exact(a: f64, x0: f64, t: f64) -> f64 {
    let e = (a * t).exp();
    x0 * e / (1.0 - x0 + x0 * e)
}

/// Terminal errors of RK4 on the logistic equation and the least-squares
/// slope of log(error) against log(N).
pub fn rk4_order(steps: &[usize]) -> Result<(Vec<f64>, f64)> {
    let (a, x0, t_final) = (1.0, 0.1, 5.0);
    let sys = logistic_system(a, t_final);
    let samples = SampleSet {
        samples: vec![vec![]],
        seed: 0,
        k: 1,
    };
    let init = InitialConditionSpec::constant(vec![x0]);
    let exact = logistic_exact(a, x0, t_final);
    let mut errors = Vec::new();
    for &n in steps {
        let grid = TimeGrid::new(0.0, t_final, n)?;
        let traj = integrate_forward(&sys, &init, &samples, &ControlGrid::constant(n, &[0.0]), &grid)?;
        errors.push((traj.terminal(0)[0] - exact).abs());
    }
    let xs: Vec<f64> = steps.iter().map(|&n| (n as f64).ln()).collect();
    let ys: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let mx = xs.iter().sum::<f64>() / xs.len() as f64;
    let my = ys.iter().sum::<f64>() / ys.len() as f64;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    Ok((errors, -sxy / sxx))
}

pub fn check_rk4() -> Result<CheckOutcome> {
    let steps = [25, 50, 100, 200];
    let (errors, order) = rk4_order(&steps)?;
    Ok(CheckOutcome::new(
        CheckKind::Rk4,
        "RK4 convergence order on logistic growth".into(),
        order >= RK4_MIN_ORDER,
        format!(
            "order {order:.3} from terminal errors {} at N = 25, 50, 100, 200 (minimum {RK4_MIN_ORDER})",
            errors.iter().map(|e| format!("{e:.2e}")).collect::<Vec<_>>().join(", ")
        ),
    ))
}

/// A 2-D linear oscillator ẋ = ω A x + B u with cost ½|x(T)|², used as an
/// extra gradient-check target.
pub fn toy_linear_problem() -> ProblemSpec {
    let f0 = FnField::new(
        "rotation",
        2,
        |x, w, o| {
            o[0] = w[0] * x[1];
            o[1] = -w[0] * x[0];
        },
        |_, w, o| {
            o.copy_from_slice(&[0.0, w[0], -w[0], 0.0]);
        },
    )
    .with_hessian(|_, _, o| o.fill(0.0));
    let f1 = FnField::constant("push", vec![0.0, 1.0]).with_hessian(|_, _, o| o.fill(0.0));
    let cost = FnCost::new(
        |x, _| 0.5 * (x[0] * x[0] + x[1] * x[1]),
        |x, _, g| g.copy_from_slice(&x[..2]),
    );
    let system = ControlAffineSystem::new(
        vec![Arc::new(f0), Arc::new(f1)],
        Arc::new(cost),
        ControlBounds::new(vec![-1.0], vec![1.0]).expect("valid bounds"),
        0.0,
        3.0,
    )
    .expect("toy system is well formed");
    ProblemSpec {
        name: "toy_linear".into(),
        system,
        distribution: ParameterDistribution::uniform(0.5, 1.5),
        init: InitialConditionSpec::constant(vec![1.0, 0.0]),
        sense: Sense::Minimize,
        description: "linear oscillator with additive control".into(),
        parameters: BTreeMap::new(),
    }
}

/// Runs the selected checks (all when `only` is `None`) on every problem.
pub fn run_checks(specs: &[ProblemSpec], only: Option<CheckKind>) -> Result<Vec<CheckOutcome>> {
    let wanted = |k: CheckKind| only.is_none_or(|o| o == k);
    let mut out = Vec::new();
    for spec in specs {
        if wanted(CheckKind::Jacobians) {
            out.extend(check_jacobians(spec)?);
        }
        if wanted(CheckKind::Gradient) {
            out.push(check_gradient(spec)?);
        }
        if wanted(CheckKind::Brackets) {
            out.extend(bracket_identities(spec)?);
        }
    }
    if wanted(CheckKind::Rk4) {
        out.push(check_rk4()?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{problem, ProblemOverrides};

    #[test]
    fn parses_kinds() {
        assert_eq!("brackets".parse::<CheckKind>().unwrap(), CheckKind::Brackets);
        assert!("nope".parse::<CheckKind>().is_err());
    }

    #[test]
    fn builtins_pass_everything() {
        let mut specs: Vec<_> = ["fishing", "bryson_ho"]
            .iter()
            .map(|n| problem(n, &ProblemOverrides::default()).unwrap())
            .collect();
        specs.push(toy_linear_problem());
        for outcome in run_checks(&specs, None).unwrap() {
            assert!(outcome.passed, "{outcome}");
        }
    }

    #[test]
    fn corrupted_jacobian_is_named() {
        let spec = problem("fishing", &ProblemOverrides::default()).unwrap();
        let bad = FnField::new(
            "harvest",
            2,
            |x, _, o| {
                o[0] = -20.0;
                o[1] = (1.0 - 17.5 / x[0]) * 20.0;
            },
            |_, _, o| o.fill(0.0),
        );
        let system = spec.system.clone().with_field(1, Arc::new(bad)).unwrap();
        let spec = ProblemSpec { system, ..spec };
        let failed: Vec<_> = check_jacobians(&spec).unwrap().into_iter().filter(|o| !o.passed).collect();
        assert_eq!(failed.len(), 1);
        assert!(failed[0].name.contains("field 1"), "{}", failed[0]);
    }

    #[test]
    fn only_filter() {
        let spec = problem("bryson_ho", &ProblemOverrides::default()).unwrap();
        let out = run_checks(&[spec], Some(CheckKind::Brackets)).unwrap();
        assert!(!out.is_empty());
        assert!(out.iter().all(|o| o.kind == CheckKind::Brackets));
    }
}
