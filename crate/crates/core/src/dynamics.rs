//! Control-affine systems `f(x,u,ω) = f_0(x,ω) + Σ f_i(x,ω) u_i` and the Lie
//! bracket algebra used for singular-arc synthesis.
//!
//! Matrices are dense row-major slices: a Jacobian stores `∂f_r/∂x_c` at
//! `r*n + c` and a Hessian stores `∂²f_r/∂x_a∂x_b` at `(r*n + a)*n + b`.

use std::fmt;
use std::sync::Arc;

use crate::error::{check_dim, Error, Result};

/// A smooth vector field on R^n, parameterized by a sample ω.
pub trait VectorField: Send + Sync {
    fn dim(&self) -> usize;

    fn eval(&self, x: &[f64], omega: &[f64], out: &mut [f64]);

    fn jacobian(&self, x: &[f64], omega: &[f64], out: &mut [f64]);

    fn has_hessian(&self) -> bool {
        false
    }

    /// Writes the second derivatives into `out`; only called when
    /// [`has_hessian`](Self::has_hessian) is true.
    fn hessian(&self, _x: &[f64], _omega: &[f64], _out: &mut [f64]) {
        unimplemented!("{} has no analytic Hessian", self.label())
    }

    fn label(&self) -> String;
}

type EvalFn = dyn Fn(&[f64], &[f64], &mut [f64]) + Send + Sync;

/// A vector field backed by closures.
pub struct FnField {
    dim: usize,
    label: String,
    eval: Box<EvalFn>,
    jacobian: Box<EvalFn>,
    hessian: Option<Box<EvalFn>>,
}

impl FnField {
    pub fn new<F, J>(label: &str, dim: usize, eval: F, jacobian: J) -> Self
    where
        F: Fn(&[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
        J: Fn(&[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
    {
        Self {
            dim,
            label: label.to_string(),
            eval: Box::new(eval),
            jacobian: Box::new(jacobian),
            hessian: None,
        }
    }

    pub fn with_hessian<H>(mut self, hessian: H) -> Self
    where
        H: Fn(&[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
    {
        self.hessian = Some(Box::new(hessian));
        self
    }

    /// A field that does not depend on x.
    pub fn constant(label: &str, value: Vec<f64>) -> Self {
        let dim = value.len();
        Self::new(
            label,
            dim,
            move |_, _, out| out.copy_from_slice(&value),
            |_, _, out| out.fill(0.0),
        )
        .with_hessian(|_, _, out| out.fill(0.0))
    }

    /// The linear field x ↦ A x with `a` row-major.
    pub fn linear(label: &str, a: Vec<f64>) -> Self {
        let dim = (a.len() as f64).sqrt().round() as usize;
        assert_eq!(dim * dim, a.len(), "linear field needs a square matrix");
        let a2 = a.clone();
        Self::new(
            label,
            dim,
            move |x, _, out| {
                for r in 0..dim {
                    out[r] = (0..dim).map(|c| a[r * dim + c] * x[c]).sum();
                }
            },
            move |_, _, out| out.copy_from_slice(&a2),
        )
        .with_hessian(|_, _, out| out.fill(0.0))
    }
}

impl VectorField for FnField {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, x: &[f64], omega: &[f64], out: &mut [f64]) {
        (self.eval)(x, omega, out)
    }

    fn jacobian(&self, x: &[f64], omega: &[f64], out: &mut [f64]) {
        (self.jacobian)(x, omega, out)
    }

    fn has_hessian(&self) -> bool {
        self.hessian.is_some()
    }

    fn hessian(&self, x: &[f64], omega: &[f64], out: &mut [f64]) {
        match &self.hessian {
            Some(h) => h(x, omega, out),
            None => unimplemented!("{} has no analytic Hessian", self.label),
        }
    }

    fn label(&self) -> String {
        self.label.clone()
    }
}

impl fmt::Debug for FnField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FnField")
            .field("label", &self.label)
            .field("dim", &self.dim)
            .field("hessian", &self.hessian.is_some())
            .finish()
    }
}

/// Terminal cost g(x, ω) with its gradient.
pub trait TerminalCost: Send + Sync {
    fn value(&self, x: &[f64], omega: &[f64]) -> f64;
    fn gradient(&self, x: &[f64], omega: &[f64], out: &mut [f64]);
}

type CostFn = dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync;

pub struct FnCost {
    value: Box<CostFn>,
    gradient: Box<EvalFn>,
}

impl FnCost {
    pub fn new<V, G>(value: V, gradient: G) -> Self
    where
        V: Fn(&[f64], &[f64]) -> f64 + Send + Sync + 'static,
        G: Fn(&[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
    {
        Self {
            value: Box::new(value),
            gradient: Box::new(gradient),
        }
    }

    /// g(x) = sign · x_i.
    pub fn coordinate(i: usize, sign: f64) -> Self {
        Self::new(
            move |x, _| sign * x[i],
            move |_, _, out| {
                out.fill(0.0);
                out[i] = sign;
            },
        )
    }
}

impl TerminalCost for FnCost {
    fn value(&self, x: &[f64], omega: &[f64]) -> f64 {
        (self.value)(x, omega)
    }

    fn gradient(&self, x: &[f64], omega: &[f64], out: &mut [f64]) {
        (self.gradient)(x, omega, out)
    }
}

/// Time-invariant box U = Π [lower_i, upper_i].
#[derive(Debug, Clone, PartialEq)]
pub struct ControlBounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl ControlBounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        check_dim("control bounds", lower.len(), upper.len())?;
        if let Some(i) = (0..lower.len()).find(|&i| !(lower[i] < upper[i])) {
            return Err(Error::InvalidArgument(format!(
                "control bound {i}: lower {} must be < upper {}",
                lower[i], upper[i]
            )));
        }
        Ok(Self { lower, upper })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn midpoint(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(a, b)| 0.5 * (a + b)).collect()
    }

    pub fn clamp(&self, i: usize, v: f64) -> f64 {
        v.clamp(self.lower[i], self.upper[i])
    }
}

type DomainFn = dyn Fn(&[f64]) -> bool + Send + Sync;

/// A control-affine system with terminal cost on a fixed horizon.
#[derive(Clone)]
pub struct ControlAffineSystem {
    fields: Vec<Arc<dyn VectorField>>,
    cost: Arc<dyn TerminalCost>,
    bounds: ControlBounds,
    t0: f64,
    t_final: f64,
    domain: Option<Arc<DomainFn>>,
}

impl fmt::Debug for ControlAffineSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ControlAffineSystem")
            .field("n", &self.state_dim())
            .field("m", &self.control_dim())
            .field("fields", &self.fields.iter().map(|v| v.label()).collect::<Vec<_>>())
            .field("bounds", &self.bounds)
            .field("horizon", &(self.t0, self.t_final))
            .finish()
    }
}

impl ControlAffineSystem {
    /// `fields[0]` is the drift f_0; `fields[1..]` multiply the controls.
    pub fn new(
        fields: Vec<Arc<dyn VectorField>>,
        cost: Arc<dyn TerminalCost>,
        bounds: ControlBounds,
        t0: f64,
        t_final: f64,
    ) -> Result<Self> {
        if fields.len() < 2 {
            return Err(Error::InvalidArgument(
                "need a drift and at least one control field".into(),
            ));
        }
        let n = fields[0].dim();
        for f in &fields {
            check_dim(&format!("field {}", f.label()), n, f.dim())?;
        }
        check_dim("control bounds", fields.len() - 1, bounds.dim())?;
        if !(t0 < t_final) {
            return Err(Error::InvalidArgument(format!(
                "horizon requires t0 < T, got [{t0}, {t_final}]"
            )));
        }
        Ok(Self {
            fields,
            cost,
            bounds,
            t0,
            t_final,
            domain: None,
        })
    }

    /// Restricts the admissible state domain; integration aborts outside it.
    pub fn with_domain<D>(mut self, domain: D) -> Self
    where
        D: Fn(&[f64]) -> bool + Send + Sync + 'static,
    {
        self.domain = Some(Arc::new(domain));
        self
    }

    pub fn state_dim(&self) -> usize {
        self.fields[0].dim()
    }

    pub fn control_dim(&self) -> usize {
        self.fields.len() - 1
    }

    /// Field `i`, with 0 the drift.
    pub fn field(&self, i: usize) -> &Arc<dyn VectorField> {
        &self.fields[i]
    }

    pub fn fields(&self) -> &[Arc<dyn VectorField>] {
        &self.fields
    }

    pub fn cost(&self) -> &dyn TerminalCost {
        self.cost.as_ref()
    }

    pub fn bounds(&self) -> &ControlBounds {
        &self.bounds
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn t_final(&self) -> f64 {
        self.t_final
    }

    pub fn in_domain(&self, x: &[f64]) -> bool {
        self.domain.as_ref().is_none_or(|d| d(x))
    }

    /// Replaces one field, keeping everything else. Used to build fixtures.
    pub fn with_field(mut self, i: usize, field: Arc<dyn VectorField>) -> Result<Self> {
        check_dim("replacement field", self.state_dim(), field.dim())?;
        self.fields[i] = field;
        Ok(self)
    }

    /// f(x,u,ω) into `out`, using `scratch` (length n).
    pub(crate) fn eval_into(&self, x: &[f64], u: &[f64], omega: &[f64], out: &mut [f64], scratch: &mut [f64]) {
        self.fields[0].eval(x, omega, out);
        for (field, &ui) in self.fields[1..].iter().zip(u) {
            if ui != 0.0 {
                field.eval(x, omega, scratch);
                for (o, s) in out.iter_mut().zip(scratch.iter()) {
                    *o += ui * s;
                }
            }
        }
    }

    /// ∂f/∂x (x,u,ω) into `out`, using `scratch` (length n²).
    pub(crate) fn jacobian_into(&self, x: &[f64], u: &[f64], omega: &[f64], out: &mut [f64], scratch: &mut [f64]) {
        self.fields[0].jacobian(x, omega, out);
        for (field, &ui) in self.fields[1..].iter().zip(u) {
            if ui != 0.0 {
                field.jacobian(x, omega, scratch);
                for (o, s) in out.iter_mut().zip(scratch.iter()) {
                    *o += ui * s;
                }
            }
        }
    }
}

/// f_0(x,ω) + Σ f_i(x,ω) u_i.
pub fn dynamics_eval(sys: &ControlAffineSystem, x: &[f64], u: &[f64], omega: &[f64]) -> Result<Vec<f64>> {
    let n = sys.state_dim();
    check_dim("state", n, x.len())?;
    check_dim("control", sys.control_dim(), u.len())?;
    let mut out = vec![0.0; n];
    let mut scratch = vec![0.0; n];
    sys.eval_into(x, u, omega, &mut out, &mut scratch);
    Ok(out)
}

fn mat_vec(a: &[f64], v: &[f64], n: usize, out: &mut [f64]) {
    for r in 0..n {
        out[r] = (0..n).map(|c| a[r * n + c] * v[c]).sum();
    }
}

/// [f, g](x) = g′(x) f(x) − f′(x) g(x).
pub fn lie_bracket(f: &dyn VectorField, g: &dyn VectorField, x: &[f64], omega: &[f64]) -> Result<Vec<f64>> {
    let n = f.dim();
    check_dim("lie bracket operand", n, g.dim())?;
    check_dim("lie bracket state", n, x.len())?;
    let (mut fv, mut gv) = (vec![0.0; n], vec![0.0; n]);
    let (mut fj, mut gj) = (vec![0.0; n * n], vec![0.0; n * n]);
    f.eval(x, omega, &mut fv);
    g.eval(x, omega, &mut gv);
    f.jacobian(x, omega, &mut fj);
    g.jacobian(x, omega, &mut gj);
    let (mut a, mut b) = (vec![0.0; n], vec![0.0; n]);
    mat_vec(&gj, &fv, n, &mut a);
    mat_vec(&fj, &gv, n, &mut b);
    Ok(a.iter().zip(&b).map(|(p, q)| p - q).collect())
}

/// Central-difference step for coordinate value `xc`.
pub fn fd_step(xc: f64) -> f64 {
    xc.abs().max(1.0) * f64::EPSILON.cbrt()
}

/// Central-difference Jacobian of an arbitrary map R^n → R^n.
pub fn fd_jacobian_of<F>(x: &[f64], n_out: usize, mut eval: F) -> Vec<f64>
where
    F: FnMut(&[f64], &mut [f64]),
{
    let n = x.len();
    let mut jac = vec![0.0; n_out * n];
    let mut xp = x.to_vec();
    let (mut fp, mut fm) = (vec![0.0; n_out], vec![0.0; n_out]);
    for c in 0..n {
        let h = fd_step(x[c]);
        xp[c] = x[c] + h;
        eval(&xp, &mut fp);
        xp[c] = x[c] - h;
        eval(&xp, &mut fm);
        xp[c] = x[c];
        for r in 0..n_out {
            jac[r * n + c] = (fp[r] - fm[r]) / (2.0 * h);
        }
    }
    jac
}

/// Provenance of a bracket field, e.g. `[f1,[f0,f1]]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BracketTag {
    Field(usize),
    Bracket(Box<BracketTag>, Box<BracketTag>),
}

impl fmt::Display for BracketTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Field(i) => write!(f, "f{i}"),
            Self::Bracket(a, b) => write!(f, "[{a},{b}]"),
        }
    }
}

/// The field [f, g] as an evaluable vector field with its own Jacobian.
///
/// The Jacobian is ∂[f,g]/∂x = g″f + g′f′ − f″g − f′g′ when both operands
/// carry Hessians, otherwise central differences of the bracket itself.
pub struct BracketField {
    f: Arc<dyn VectorField>,
    g: Arc<dyn VectorField>,
    tag: BracketTag,
    analytic: bool,
}

impl BracketField {
    pub fn new(
        f: Arc<dyn VectorField>,
        g: Arc<dyn VectorField>,
        tag: BracketTag,
        allow_fd: bool,
    ) -> Result<Self> {
        check_dim("bracket operands", f.dim(), g.dim())?;
        let analytic = f.has_hessian() && g.has_hessian();
        if !analytic && !allow_fd {
            let missing = if f.has_hessian() { g.label() } else { f.label() };
            return Err(Error::HessianUnavailable { field: missing });
        }
        Ok(Self { f, g, tag, analytic })
    }

    /// Forces the finite-difference Jacobian even when Hessians exist.
    pub fn finite_difference(f: Arc<dyn VectorField>, g: Arc<dyn VectorField>, tag: BracketTag) -> Result<Self> {
        check_dim("bracket operands", f.dim(), g.dim())?;
        Ok(Self {
            f,
            g,
            tag,
            analytic: false,
        })
    }

    pub fn tag(&self) -> &BracketTag {
        &self.tag
    }

    pub fn is_analytic(&self) -> bool {
        self.analytic
    }

    fn analytic_jacobian(&self, x: &[f64], omega: &[f64], out: &mut [f64]) {
        let n = self.f.dim();
        let (mut fv, mut gv) = (vec![0.0; n], vec![0.0; n]);
        let (mut fj, mut gj) = (vec![0.0; n * n], vec![0.0; n * n]);
        let (mut fh, mut gh) = (vec![0.0; n * n * n], vec![0.0; n * n * n]);
        self.f.eval(x, omega, &mut fv);
        self.g.eval(x, omega, &mut gv);
        self.f.jacobian(x, omega, &mut fj);
        self.g.jacobian(x, omega, &mut gj);
        self.f.hessian(x, omega, &mut fh);
        self.g.hessian(x, omega, &mut gh);
        for r in 0..n {
            for a in 0..n {
                let mut s = 0.0;
                for b in 0..n {
                    s += gh[(r * n + a) * n + b] * fv[b] + gj[r * n + b] * fj[b * n + a]
                        - fh[(r * n + a) * n + b] * gv[b]
                        - fj[r * n + b] * gj[b * n + a];
                }
                out[r * n + a] = s;
            }
        }
    }
}

impl VectorField for BracketField {
    fn dim(&self) -> usize {
        self.f.dim()
    }

    fn eval(&self, x: &[f64], omega: &[f64], out: &mut [f64]) {
        let v = lie_bracket(self.f.as_ref(), self.g.as_ref(), x, omega).expect("dims checked at construction");
        out.copy_from_slice(&v);
    }

    fn jacobian(&self, x: &[f64], omega: &[f64], out: &mut [f64]) {
        if self.analytic {
            self.analytic_jacobian(x, omega, out);
        } else {
            let jac = fd_jacobian_of(x, self.dim(), |xp, o| self.eval(xp, omega, o));
            out.copy_from_slice(&jac);
        }
    }

    fn label(&self) -> String {
        self.tag.to_string()
    }
}

/// [f_outer, [f_0, f_inner]](x, ω) for a system.
pub fn nested_bracket(
    sys: &ControlAffineSystem,
    outer: usize,
    inner: usize,
    x: &[f64],
    omega: &[f64],
    allow_fd: bool,
) -> Result<Vec<f64>> {
    let inner_bracket = inner_bracket_field(sys, inner, allow_fd)?;
    lie_bracket(sys.field(outer).as_ref(), &inner_bracket, x, omega)
}

/// The field [f_0, f_j].
pub fn inner_bracket_field(sys: &ControlAffineSystem, j: usize, allow_fd: bool) -> Result<BracketField> {
    if j > sys.control_dim() {
        return Err(Error::InvalidArgument(format!("no field f{j}")));
    }
    BracketField::new(
        sys.field(0).clone(),
        sys.field(j).clone(),
        BracketTag::Bracket(Box::new(BracketTag::Field(0)), Box::new(BracketTag::Field(j))),
        allow_fd,
    )
}

/// ‖a − b‖_∞ / max(‖b‖_∞, floor).
pub fn relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let diff = a.iter().zip(b).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
    let scale = b.iter().map(|q| q.abs()).fold(0.0, f64::max).max(floor);
    diff / scale
}

/// Largest relative deviation of a field's Jacobian from central differences
/// over the given `(x, ω)` points.
pub fn jacobian_fd_error(field: &dyn VectorField, points: &[(Vec<f64>, Vec<f64>)]) -> f64 {
    let n = field.dim();
    let mut jac = vec![0.0; n * n];
    points
        .iter()
        .map(|(x, w)| {
            field.jacobian(x, w, &mut jac);
            let fd = fd_jacobian_of(x, n, |xp, o| field.eval(xp, w, o));
            relative_error(&jac, &fd, 1e-8)
        })
        .fold(0.0, f64::max)
}

/// Largest relative deviation of a field's Hessian from central differences of its Jacobian.
pub fn hessian_fd_error(field: &dyn VectorField, points: &[(Vec<f64>, Vec<f64>)]) -> Option<f64> {
    if !field.has_hessian() {
        return None;
    }
    let n = field.dim();
    let mut hess = vec![0.0; n * n * n];
    let err = points
        .iter()
        .map(|(x, w)| {
            field.hessian(x, w, &mut hess);
            // fd[(r*n + a)*n + c] = ∂/∂x_c of jac[r*n + a]
            let fd = fd_jacobian_of(x, n * n, |xp, o| field.jacobian(xp, w, o));
            relative_error(&hess, &fd, 1e-8)
        })
        .fold(0.0, f64::max);
    Some(err)
}

/// Largest relative deviation of ∇g from central differences of g.
pub fn gradient_fd_error(cost: &dyn TerminalCost, points: &[(Vec<f64>, Vec<f64>)]) -> f64 {
    points
        .iter()
        .map(|(x, w)| {
            let mut grad = vec![0.0; x.len()];
            cost.gradient(x, w, &mut grad);
            let fd = fd_jacobian_of(x, 1, |xp, o| o[0] = cost.value(xp, w));
            relative_error(&grad, &fd, 1e-8)
        })
        .fold(0.0, f64::max)
}

/// Empirical c in |f(x,ω)| ≤ c (1 + |x|) over the given points.
pub fn growth_constant(field: &dyn VectorField, points: &[(Vec<f64>, Vec<f64>)]) -> f64 {
    let mut v = vec![0.0; field.dim()];
    points
        .iter()
        .map(|(x, w)| {
            field.eval(x, w, &mut v);
            norm(&v) / (1.0 + norm(x))
        })
        .fold(0.0, f64::max)
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}
