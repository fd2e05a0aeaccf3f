//! Post-solve analysis of an extremal: switching functions, bang/singular
//! arc classification, singular controls from nested Lie brackets, and a
//! maximum-principle consistency certificate.
//!
//! Two switching functions are kept. The nodal one is the ensemble average
//! Ψ_i(t_j) = (1/k) Σ_ω p(t_j,ω)·f_i(x(t_j,ω),ω). The interval one is
//! Ψ̄_i[j] = −(∂J_k/∂u_i[j]) / Δt, the exact discrete counterpart on the
//! control interval [t_j, t_{j+1}); the two agree to O(Δt). Classification
//! uses Ψ̄ because it is what the optimizer's first-order conditions see.

use std::io::Write;
use std::ops::Range;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{inner_bracket_field, lie_bracket, ControlAffineSystem, ControlBounds, VectorField};
use crate::error::{check_dim, Error, Result};
use crate::integrate::{cost_gradient, ControlGrid, CostateBundle, TimeGrid, TrajectoryBundle};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisOptions {
    /// |Ψ̄_i| ≤ tol_psi · max_j |Ψ̄_i| marks a node singular.
    pub tol_psi: f64,
    /// Singular runs shorter than this are zero crossings ("switch").
    pub min_arc_nodes: usize,
    /// Degeneracy threshold for the scalar formula's denominator, relative
    /// to the magnitude of its terms.
    pub eps_den: f64,
    /// Largest admissible condition estimate of W_S.
    pub max_condition: f64,
    /// Absolute tolerance on |[f_i, f_j]| for the commutativity precondition.
    pub commutativity_tol: f64,
    /// Allow central differences when a field lacks analytic Hessians.
    pub allow_fd: bool,
    /// A near-zero Ψ̄ whose control lies within this distance of the bound
    /// selected by sign(Ψ̄) is a bang node approaching a junction.
    pub bound_tol: f64,
    /// Control intervals at each end of a singular arc left out when the
    /// synthesized control is compared with the optimizer's: the discrete
    /// optimum overshoots in a thin layer at bang-singular junctions.
    pub junction_margin: usize,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        Self {
            tol_psi: 0.02,
            min_arc_nodes: 3,
            eps_den: 1e-10,
            max_condition: 1e12,
            commutativity_tol: 1e-9,
            allow_fd: true,
            bound_tol: 1e-3,
            junction_margin: 2,
        }
    }
}

impl AnalysisOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol_psi > 0.0 && self.tol_psi < 1.0) {
            return Err(Error::InvalidArgument(format!("tol_psi must lie in (0, 1), got {}", self.tol_psi)));
        }
        if self.min_arc_nodes == 0 {
            return Err(Error::InvalidArgument("min_arc_nodes must be ≥ 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SwitchingData {
    pub grid: TimeGrid,
    m: usize,
    nodal: Vec<f64>,
    interval: Vec<f64>,
}

impl SwitchingData {
    /// Builds switching data from raw arrays (`(N+1) × m` nodal, `N × m`
    /// interval, row-major).
    pub fn from_values(grid: TimeGrid, m: usize, nodal: Vec<f64>, interval: Vec<f64>) -> Result<Self> {
        check_dim("nodal switching values", (grid.steps + 1) * m, nodal.len())?;
        check_dim("interval switching values", grid.steps * m, interval.len())?;
        Ok(Self { grid, m, nodal, interval })
    }

    pub fn control_dim(&self) -> usize {
        self.m
    }

    /// Ψ_i(t_j).
    pub fn nodal(&self, j: usize, i: usize) -> f64 {
        self.nodal[j * self.m + i]
    }

    /// Ψ̄_i on [t_j, t_{j+1}).
    pub fn interval(&self, j: usize, i: usize) -> f64 {
        self.interval[j * self.m + i]
    }

    pub fn interval_values(&self) -> &[f64] {
        &self.interval
    }

    pub fn nodal_values(&self) -> &[f64] {
        &self.nodal
    }

    pub fn max_abs(&self, i: usize) -> f64 {
        (0..self.grid.steps).map(|j| self.interval(j, i).abs()).fold(0.0, f64::max)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_bundles(sys: &ControlAffineSystem, traj: &TrajectoryBundle, costate: &CostateBundle) -> Result<()> {
    check_dim("trajectory state", sys.state_dim(), traj.state_dim())?;
    check_dim("costate state", sys.state_dim(), costate.state_dim())?;
    check_dim("costate samples", traj.sample_count(), costate.sample_count())?;
    if traj.grid != costate.grid {
        return Err(Error::GridMismatch("trajectory and costate grids differ".into()));
    }
    Ok(())
}

/// Ensemble average of p(t_j,ω)·v(x(t_j,ω),ω) over samples, in sample order.
fn pairing(traj: &TrajectoryBundle, costate: &CostateBundle, j: usize, mut v: impl FnMut(&[f64], &[f64]) -> Result<Vec<f64>>) -> Result<f64> {
    let k = traj.sample_count();
    let mut total = 0.0;
    for i in 0..k {
        let value = v(traj.state(j, i), traj.samples.get(i))?;
        total += dot(costate.costate(j, i), &value);
    }
    Ok(total / k as f64)
}

/// Nodal and interval switching functions of an extremal.
pub fn switching_function(traj: &TrajectoryBundle, costate: &CostateBundle, sys: &ControlAffineSystem) -> Result<SwitchingData> {
    check_bundles(sys, traj, costate)?;
    let m = sys.control_dim();
    let n = sys.state_dim();
    let steps = traj.grid.steps;
    let mut nodal = Vec::with_capacity((steps + 1) * m);
    let mut buf = vec![0.0; n];
    for j in 0..=steps {
        for i in 1..=m {
            let field = sys.field(i);
            nodal.push(pairing(traj, costate, j, |x, w| {
                field.eval(x, w, &mut buf);
                Ok(buf.clone())
            })?);
        }
    }
    let dt = traj.grid.dt();
    let interval = cost_gradient(sys, traj, costate)?.iter().map(|g| -g / dt).collect();
    SwitchingData::from_values(traj.grid, m, nodal, interval)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArcClass {
    Min,
    Max,
    Singular,
    /// A short run of near-zero Ψ: a zero crossing, not a singular arc.
    Switch,
}

impl ArcClass {
    pub fn as_str(self) -> &'static str {
        match self {
            ArcClass::Min => "min",
            ArcClass::Max => "max",
            ArcClass::Singular => "singular",
            ArcClass::Switch => "switch",
        }
    }
}

/// Maximal run of control intervals with constant (S, B_min, B_max).
/// Indices are 0-based control components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArcInterval {
    pub start: usize,
    pub end: usize,
    pub singular: Vec<usize>,
    pub bang_min: Vec<usize>,
    pub bang_max: Vec<usize>,
}

impl ArcInterval {
    pub fn range(&self) -> Range<usize> {
        self.start..self.end
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArcReport {
    steps: usize,
    m: usize,
    classes: Vec<ArcClass>,
    signs: Vec<bool>,
    pub intervals: Vec<ArcInterval>,
}

impl ArcReport {
    pub fn class(&self, j: usize, i: usize) -> ArcClass {
        self.classes[j * self.m + i]
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn control_dim(&self) -> usize {
        self.m
    }

    /// (S, B_min, B_max) on control interval j. Switch nodes fall into the
    /// bang set given by the sign of Ψ̄.
    pub fn sets(&self, j: usize) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
        let (mut s, mut lo, mut hi) = (Vec::new(), Vec::new(), Vec::new());
        for i in 0..self.m {
            match self.class(j, i) {
                ArcClass::Singular => s.push(i),
                ArcClass::Max => hi.push(i),
                ArcClass::Min => lo.push(i),
                ArcClass::Switch => {
                    if self.signs[j * self.m + i] {
                        hi.push(i)
                    } else {
                        lo.push(i)
                    }
                }
            }
        }
        (s, lo, hi)
    }

    pub fn singular_intervals(&self) -> impl Iterator<Item = &ArcInterval> {
        self.intervals.iter().filter(|a| !a.singular.is_empty())
    }
}

/// Tags every (interval, component) as min/max/singular/switch and merges
/// runs with identical index sets.
///
/// With `bounds`, a near-zero node whose control sits at the bound that the
/// sign of Ψ̄ selects is tagged bang rather than singular: Ψ̄ vanishes
/// smoothly on the approach to a bang-singular junction.
pub fn classify_arcs(sw: &SwitchingData, control: &ControlGrid, bounds: Option<&ControlBounds>, options: &AnalysisOptions) -> Result<ArcReport> {
    options.validate()?;
    let m = sw.control_dim();
    let steps = sw.grid.steps;
    check_dim("control dimension", m, control.control_dim())?;
    if control.steps() != steps {
        return Err(Error::GridMismatch(format!("control has {} intervals, switching data {}", control.steps(), steps)));
    }
    let mut classes = vec![ArcClass::Min; steps * m];
    let mut signs = vec![false; steps * m];
    for i in 0..m {
        let threshold = options.tol_psi * sw.max_abs(i);
        for j in 0..steps {
            let psi = sw.interval(j, i);
            signs[j * m + i] = psi >= 0.0;
            let at_bound = bounds.is_some_and(|b| {
                let u = control.value(j, i);
                if psi >= 0.0 {
                    b.upper[i] - u <= options.bound_tol
                } else {
                    u - b.lower[i] <= options.bound_tol
                }
            });
            classes[j * m + i] = if psi.abs() <= threshold && !at_bound {
                ArcClass::Singular
            } else if psi > 0.0 {
                ArcClass::Max
            } else {
                ArcClass::Min
            };
        }
        let mut j = 0;
        while j < steps {
            if classes[j * m + i] != ArcClass::Singular {
                j += 1;
                continue;
            }
            let start = j;
            while j < steps && classes[j * m + i] == ArcClass::Singular {
                j += 1;
            }
            if j - start < options.min_arc_nodes {
                for jj in start..j {
                    classes[jj * m + i] = ArcClass::Switch;
                }
            }
        }
    }
    let mut report = ArcReport {
        steps,
        m,
        classes,
        signs,
        intervals: Vec::new(),
    };
    let mut start = 0;
    let mut current = report.sets(0);
    for j in 1..=steps {
        let next = (j < steps).then(|| report.sets(j));
        if next.as_ref() != Some(&current) {
            let (singular, bang_min, bang_max) = current.clone();
            report.intervals.push(ArcInterval {
                start,
                end: j,
                singular,
                bang_min,
                bang_max,
            });
            if let Some(nx) = next {
                current = nx;
                start = j;
            }
        }
    }
    Ok(report)
}

/// Fraction of non-singular (interval, component) pairs whose bang class
/// disagrees with the control's position: max must sit within `tol` of the
/// upper bound, min within `tol` of the lower one. Switch pairs are excluded.
pub fn bang_contradictions(report: &ArcReport, control: &ControlGrid, bounds: &ControlBounds, tol: f64) -> (usize, usize) {
    let mut bad = 0;
    let mut total = 0;
    for j in 0..report.steps {
        for i in 0..report.m {
            let u = control.value(j, i);
            let ok = match report.class(j, i) {
                ArcClass::Max => (bounds.upper[i] - u).abs() <= tol,
                ArcClass::Min => (u - bounds.lower[i]).abs() <= tol,
                _ => continue,
            };
            total += 1;
            if !ok {
                bad += 1;
            }
        }
    }
    (bad, total)
}

/// Inner brackets [f_0, f_j] for j = 1..=m.
fn inner_brackets(sys: &ControlAffineSystem, allow_fd: bool) -> Result<Vec<Arc<dyn VectorField>>> {
    (1..=sys.control_dim())
        .map(|j| inner_bracket_field(sys, j, allow_fd).map(|b| Arc::new(b) as Arc<dyn VectorField>))
        .collect()
}

/// W_{ij} = (1/k) Σ_ω p·[f_i,[f_0,f_j]] at node `node`, for outer i = 0..=m
/// and inner j = 1..=m; stored as `w[i][j-1]`. Also returns the mean of the
/// absolute summands, used as a scale for degeneracy tests.
fn bracket_matrix(
    sys: &ControlAffineSystem,
    inner: &[Arc<dyn VectorField>],
    traj: &TrajectoryBundle,
    costate: &CostateBundle,
    node: usize,
) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let m = sys.control_dim();
    let k = traj.sample_count();
    let mut w = vec![vec![0.0; m]; m + 1];
    let mut scale = vec![vec![0.0; m]; m + 1];
    for (outer, (w_row, s_row)) in w.iter_mut().zip(scale.iter_mut()).enumerate() {
        for (col, inner_field) in inner.iter().enumerate() {
            let mut total = 0.0;
            let mut mag = 0.0;
            for s in 0..k {
                let b = lie_bracket(sys.field(outer).as_ref(), inner_field.as_ref(), traj.state(node, s), traj.samples.get(s))?;
                let term = dot(costate.costate(node, s), &b);
                total += term;
                mag += term.abs();
            }
            w_row[col] = total / k as f64;
            s_row[col] = mag / k as f64;
        }
    }
    Ok((w, scale))
}

fn node_range(interval: &Range<usize>, steps: usize) -> Result<Range<usize>> {
    if interval.start >= interval.end || interval.end > steps {
        return Err(Error::InvalidArgument(format!(
            "interval {}..{} outside the {steps}-interval grid",
            interval.start, interval.end
        )));
    }
    // control intervals start..end span nodes start..=end
    Ok(interval.start..interval.end + 1)
}

fn scalar_at(
    sys: &ControlAffineSystem,
    inner: &[Arc<dyn VectorField>],
    traj: &TrajectoryBundle,
    costate: &CostateBundle,
    node: usize,
    options: &AnalysisOptions,
) -> Result<f64> {
    let (w, scale) = bracket_matrix(sys, inner, traj, costate, node)?;
    let (num, den) = (w[0][0], w[1][0]);
    if den == 0.0 || den.abs() < options.eps_den * scale[1][0].max(num.abs()) {
        return Err(Error::DegenerateSingularFormula { node, denominator: den });
    }
    Ok(-num / den)
}

fn check_scalar(sys: &ControlAffineSystem) -> Result<()> {
    if sys.control_dim() != 1 {
        return Err(Error::InvalidArgument(format!(
            "scalar singular formula needs m = 1, system has m = {}",
            sys.control_dim()
        )));
    }
    Ok(())
}

/// u = −(Σ p·[f_0,[f_0,f_1]]) / (Σ p·[f_1,[f_0,f_1]]) at every node of the
/// control-interval range (nodes `start..=end`), for single-input systems.
pub fn singular_control_scalar(
    traj: &TrajectoryBundle,
    costate: &CostateBundle,
    sys: &ControlAffineSystem,
    interval: Range<usize>,
    options: &AnalysisOptions,
) -> Result<Vec<f64>> {
    check_bundles(sys, traj, costate)?;
    check_scalar(sys)?;
    let nodes = node_range(&interval, traj.grid.steps)?;
    let inner = inner_brackets(sys, options.allow_fd)?;
    nodes
        .into_par_iter()
        .map(|node| scalar_at(sys, &inner, traj, costate, node, options))
        .collect()
}

/// Largest |[f_i, f_j]| over control pairs, samples and the given nodes.
pub fn commutator_norm(sys: &ControlAffineSystem, traj: &TrajectoryBundle, nodes: Range<usize>) -> Result<(f64, usize, usize, usize)> {
    let m = sys.control_dim();
    let mut worst = (0.0, 1, 1, nodes.start);
    for node in nodes {
        for s in 0..traj.sample_count() {
            for a in 1..=m {
                for b in a + 1..=m {
                    let v = lie_bracket(sys.field(a).as_ref(), sys.field(b).as_ref(), traj.state(node, s), traj.samples.get(s))?;
                    let norm = crate::dynamics::norm(&v);
                    if norm > worst.0 {
                        worst = (norm, a, b, node);
                    }
                }
            }
        }
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VectorSingular {
    /// Singular component indices (0-based), in the order of `values` rows.
    pub components: Vec<usize>,
    /// Per node, the solution u_S of W_S u_S = −b_S.
    pub values: Vec<Vec<f64>>,
    /// Per node, the 2-norm condition estimate of W_S.
    pub condition: Vec<f64>,
}

fn vector_at(
    sys: &ControlAffineSystem,
    inner: &[Arc<dyn VectorField>],
    traj: &TrajectoryBundle,
    costate: &CostateBundle,
    node: usize,
    arc: &ArcInterval,
    options: &AnalysisOptions,
) -> Result<(Vec<f64>, f64)> {
    let bounds = sys.bounds();
    let s_idx = &arc.singular;
    let (w, _) = bracket_matrix(sys, inner, traj, costate, node)?;
    // W_{ij} with outer i = 0..=m and inner j = 1..=m lives at w[i][j-1]
    let entry = |i: usize, j: usize| w[i][j - 1];
    let ns = s_idx.len();
    let ws = DMatrix::from_fn(ns, ns, |r, c| entry(s_idx[r] + 1, s_idx[c] + 1));
    let bs = DVector::from_fn(ns, |r, _| {
        let i = s_idx[r] + 1;
        let mut v = entry(0, i);
        for &j in &arc.bang_min {
            v += entry(i, j + 1) * bounds.lower[j];
        }
        for &j in &arc.bang_max {
            v += entry(i, j + 1) * bounds.upper[j];
        }
        v
    });
    let sv = ws.clone().singular_values();
    let (smax, smin) = (sv.max(), sv.min());
    let condition = if smin == 0.0 { f64::INFINITY } else { smax / smin };
    if !(condition <= options.max_condition) {
        return Err(Error::DegenerateSingularSystem { node, condition });
    }
    let u = ws
        .lu()
        .solve(&(-bs))
        .ok_or(Error::DegenerateSingularSystem { node, condition })?;
    Ok((u.iter().copied().collect(), condition))
}

fn check_vector(sys: &ControlAffineSystem, traj: &TrajectoryBundle, arc: &ArcInterval, options: &AnalysisOptions) -> Result<Range<usize>> {
    if arc.singular.is_empty() {
        return Err(Error::InvalidArgument("arc has no singular components".into()));
    }
    let nodes = node_range(&arc.range(), traj.grid.steps)?;
    let (norm, a, b, node) = commutator_norm(sys, traj, nodes.clone())?;
    if norm > options.commutativity_tol {
        return Err(Error::CommutativityViolation { i: a, j: b, node, norm });
    }
    Ok(nodes)
}

/// Solves W_S u_S + b_S = 0 at every node of an arc with commuting control
/// fields, where b_i = W_{0i} + Σ_{B_min} W_{ij} u_min,j + Σ_{B_max} W_{ij} u_max,j.
pub fn singular_control_vector(
    traj: &TrajectoryBundle,
    costate: &CostateBundle,
    sys: &ControlAffineSystem,
    arc: &ArcInterval,
    options: &AnalysisOptions,
) -> Result<VectorSingular> {
    check_bundles(sys, traj, costate)?;
    let nodes = check_vector(sys, traj, arc, options)?;
    let inner = inner_brackets(sys, options.allow_fd)?;
    let per_node = nodes
        .into_par_iter()
        .map(|node| vector_at(sys, &inner, traj, costate, node, arc, options))
        .collect::<Result<Vec<_>>>()?;
    let (values, condition) = per_node.into_iter().unzip();
    Ok(VectorSingular {
        components: arc.singular.clone(),
        values,
        condition,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    /// Hamiltonian gap from the nodal switching function, per node.
    pub max_gap: f64,
    pub mean_gap: f64,
    /// The same gap computed from the interval switching function.
    pub max_discrete_gap: f64,
    pub mean_discrete_gap: f64,
    /// max_j |Ψ_i| · (u_max,i − u_min,i), summed over components.
    pub gap_scale: f64,
    /// ‖p(t_{j+1}) − p(t_j) + Δt (∂f/∂x)ᵀ p(t_j)‖ statistics.
    pub max_adjoint_residual: f64,
    pub mean_adjoint_residual: f64,
    /// max_ω ‖p(T,ω) + ∇g(x(T,ω),ω)‖.
    pub terminal_residual: f64,
}

fn box_gap(psi: f64, u: f64, lo: f64, hi: f64) -> f64 {
    (psi * lo).max(psi * hi) - psi * u
}

/// Maximum-principle diagnostics of a (control, trajectory, costate) triple.
///
/// The Hamiltonian (1/k) Σ p·f(x,u,ω) is affine in u, so its maximum over the
/// box picks each bound by the sign of the switching function and the gap is
/// Σ_i [max(Ψ_i u_min,i, Ψ_i u_max,i) − Ψ_i u_i].
pub fn pmp_certificate(
    traj: &TrajectoryBundle,
    costate: &CostateBundle,
    control: &ControlGrid,
    sys: &ControlAffineSystem,
) -> Result<Certificate> {
    let sw = switching_function(traj, costate, sys)?;
    let steps = traj.grid.steps;
    let m = sys.control_dim();
    let n = sys.state_dim();
    let b = sys.bounds();
    if control.steps() != steps {
        return Err(Error::GridMismatch("control and trajectory grids differ".into()));
    }

    let mut gaps = Vec::with_capacity(steps + 1);
    for j in 0..=steps {
        let row = control.row(j.min(steps - 1));
        gaps.push((0..m).map(|i| box_gap(sw.nodal(j, i), row[i], b.lower[i], b.upper[i])).sum::<f64>());
    }
    let discrete: Vec<f64> = (0..steps)
        .map(|j| (0..m).map(|i| box_gap(sw.interval(j, i), control.value(j, i), b.lower[i], b.upper[i])).sum())
        .collect();
    let gap_scale: f64 = (0..m)
        .map(|i| {
            let psi = (0..=steps).map(|j| sw.nodal(j, i).abs()).fold(0.0, f64::max);
            psi * (b.upper[i] - b.lower[i])
        })
        .sum();

    let dt = traj.grid.dt();
    let mut residuals = Vec::with_capacity(steps * traj.sample_count());
    let mut jac = vec![0.0; n * n];
    let mut scratch = vec![0.0; n * n];
    for j in 0..steps {
        for s in 0..traj.sample_count() {
            sys.jacobian_into(traj.state(j, s), control.row(j), traj.samples.get(s), &mut jac, &mut scratch);
            let (p0, p1) = (costate.costate(j, s), costate.costate(j + 1, s));
            let r: Vec<f64> = (0..n)
                .map(|c| p1[c] - p0[c] + dt * (0..n).map(|r| jac[r * n + c] * p0[r]).sum::<f64>())
                .collect();
            residuals.push(crate::dynamics::norm(&r));
        }
    }

    let mut terminal = 0.0f64;
    let mut grad = vec![0.0; n];
    for s in 0..traj.sample_count() {
        sys.cost().gradient(traj.terminal(s), traj.samples.get(s), &mut grad);
        let r: Vec<f64> = costate.costate(steps, s).iter().zip(&grad).map(|(p, g)| p + g).collect();
        terminal = terminal.max(crate::dynamics::norm(&r));
    }

    let stats = |v: &[f64]| (v.iter().copied().fold(0.0, f64::max), v.iter().sum::<f64>() / v.len() as f64);
    let (max_gap, mean_gap) = stats(&gaps);
    let (max_discrete_gap, mean_discrete_gap) = stats(&discrete);
    let (max_adjoint_residual, mean_adjoint_residual) = stats(&residuals);
    Ok(Certificate {
        max_gap,
        mean_gap,
        max_discrete_gap,
        mean_discrete_gap,
        gap_scale,
        max_adjoint_residual,
        mean_adjoint_residual,
        terminal_residual: terminal,
    })
}

/// Singular values synthesized on one arc, averaged onto control intervals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingularArc {
    pub arc: ArcInterval,
    pub components: Vec<usize>,
    /// Per control interval of the arc, the mean of the formula at its two
    /// end nodes (or the one usable end node), one entry per singular
    /// component. `None` where both end nodes are degenerate.
    pub values: Vec<Option<Vec<f64>>>,
    /// First degenerate-node message, if any node was skipped.
    pub degenerate: Option<String>,
    /// Failure message when the arc as a whole was rejected.
    pub error: Option<String>,
}

impl SingularArc {
    /// Per singular component, the largest |u_singular − u| over the arc's
    /// control intervals, leaving out `margin` intervals at each end. `None`
    /// if nothing was compared.
    pub fn interior_mismatch_by_component(&self, control: &ControlGrid, margin: usize) -> Vec<Option<f64>> {
        let len = self.values.len();
        let mut worst: Vec<Option<f64>> = vec![None; self.components.len()];
        for (offset, vals) in self.values.iter().enumerate() {
            if offset < margin || offset + margin >= len {
                continue;
            }
            if let Some(vals) = vals {
                let j = self.arc.start + offset;
                for ((w, c), v) in worst.iter_mut().zip(&self.components).zip(vals) {
                    let d = (v - control.value(j, *c)).abs();
                    *w = Some(w.map_or(d, |x| x.max(d)));
                }
            }
        }
        worst
    }

    /// The largest of [`Self::interior_mismatch_by_component`].
    pub fn interior_mismatch(&self, control: &ControlGrid, margin: usize) -> Option<f64> {
        self.interior_mismatch_by_component(control, margin).into_iter().flatten().reduce(f64::max)
    }

    /// Whether every synthesized value lies in the control box, within `tol`.
    pub fn within_bounds(&self, bounds: &ControlBounds, tol: f64) -> bool {
        self.values.iter().flatten().all(|vals| {
            self.components
                .iter()
                .zip(vals)
                .all(|(c, v)| *v >= bounds.lower[*c] - tol && *v <= bounds.upper[*c] + tol)
        })
    }
}

#[derive(Debug, Clone)]
pub struct Analysis {
    pub switching: SwitchingData,
    pub report: ArcReport,
    pub singular: Vec<SingularArc>,
    pub certificate: Certificate,
}

fn synthesize(
    sys: &ControlAffineSystem,
    traj: &TrajectoryBundle,
    costate: &CostateBundle,
    arc: &ArcInterval,
    options: &AnalysisOptions,
) -> Result<SingularArc> {
    let inner = inner_brackets(sys, options.allow_fd)?;
    let nodes = if sys.control_dim() == 1 {
        node_range(&arc.range(), traj.grid.steps)?
    } else {
        check_vector(sys, traj, arc, options)?
    };
    let nodal: Vec<Result<Vec<f64>>> = nodes
        .into_par_iter()
        .map(|node| {
            if sys.control_dim() == 1 {
                scalar_at(sys, &inner, traj, costate, node, options).map(|u| vec![u])
            } else {
                vector_at(sys, &inner, traj, costate, node, arc, options).map(|(u, _)| u)
            }
        })
        .collect();
    let degenerate = nodal.iter().find_map(|r| r.as_ref().err().map(|e| e.to_string()));
    let values = nodal
        .windows(2)
        .map(|w| match (&w[0], &w[1]) {
            (Ok(a), Ok(b)) => Some(a.iter().zip(b).map(|(x, y)| 0.5 * (x + y)).collect()),
            (Ok(a), Err(_)) | (Err(_), Ok(a)) => Some(a.clone()),
            (Err(_), Err(_)) => None,
        })
        .collect();
    Ok(SingularArc {
        arc: arc.clone(),
        components: arc.singular.clone(),
        values,
        degenerate,
        error: None,
    })
}

/// Runs the whole post-solve pipeline. Degenerate nodes inside a singular
/// arc are skipped rather than failing the analysis; arcs rejected outright
/// (for instance non-commuting control fields) carry their error message.
pub fn analyze(
    sys: &ControlAffineSystem,
    traj: &TrajectoryBundle,
    costate: &CostateBundle,
    control: &ControlGrid,
    options: &AnalysisOptions,
) -> Result<Analysis> {
    let switching = switching_function(traj, costate, sys)?;
    let report = classify_arcs(&switching, control, Some(sys.bounds()), options)?;
    let singular = report
        .singular_intervals()
        .map(|arc| {
            synthesize(sys, traj, costate, arc, options).unwrap_or_else(|e| SingularArc {
                arc: arc.clone(),
                components: arc.singular.clone(),
                values: Vec::new(),
                degenerate: None,
                error: Some(e.to_string()),
            })
        })
        .collect();
    let certificate = pmp_certificate(traj, costate, control, sys)?;
    Ok(Analysis {
        switching,
        report,
        singular,
        certificate,
    })
}

impl Analysis {
    /// switching.csv: one row per control interval with t = t_j, the interval
    /// switching function and the class of each component.
    pub fn write_switching_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let m = self.switching.control_dim();
        let mut header = String::from("t");
        (1..=m).for_each(|i| header.push_str(&format!(",Psi_{i}")));
        (1..=m).for_each(|i| header.push_str(&format!(",class_{i}")));
        writeln!(out, "{header}")?;
        for j in 0..self.switching.grid.steps {
            let mut line = format!("{}", self.switching.grid.node(j));
            (0..m).for_each(|i| line.push_str(&format!(",{}", self.switching.interval(j, i))));
            (0..m).for_each(|i| line.push_str(&format!(",{}", self.report.class(j, i).as_str())));
            writeln!(out, "{line}")?;
        }
        Ok(())
    }

    /// singular.csv: t, u_singular_1..m, u_1..m for every control interval
    /// inside a synthesized singular arc; non-singular components are empty.
    pub fn write_singular_csv<W: Write>(&self, mut out: W, control: &ControlGrid) -> std::io::Result<()> {
        let m = self.switching.control_dim();
        let mut header = String::from("t");
        (1..=m).for_each(|i| header.push_str(&format!(",u_singular_{i}")));
        (1..=m).for_each(|i| header.push_str(&format!(",u_{i}")));
        writeln!(out, "{header}")?;
        for arc in self.singular.iter().filter(|a| a.error.is_none()) {
            for (offset, vals) in arc.values.iter().enumerate() {
                let j = arc.arc.start + offset;
                let mut cells = vec![String::new(); m];
                for (c, v) in arc.components.iter().zip(vals.iter().flatten()) {
                    cells[*c] = v.to_string();
                }
                let mut line = format!("{},{}", self.switching.grid.node(j), cells.join(","));
                (0..m).for_each(|i| line.push_str(&format!(",{}", control.value(j, i))));
                writeln!(out, "{line}")?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic(values: &[f64]) -> SwitchingData {
        let grid = TimeGrid::new(0.0, 1.0, values.len()).unwrap();
        let mut nodal = values.to_vec();
        nodal.push(*values.last().unwrap());
        SwitchingData::from_values(grid, 1, nodal, values.to_vec()).unwrap()
    }

    #[test]
    fn positive_psi_is_all_max() {
        let sw = synthetic(&[1.0, 2.0, 0.5, 3.0]);
        let u = ControlGrid::constant(4, &[1.0]);
        let rep = classify_arcs(&sw, &u, None, &AnalysisOptions::default()).unwrap();
        assert!((0..4).all(|j| rep.class(j, 0) == ArcClass::Max));
        assert_eq!(rep.intervals.len(), 1);
        assert!(rep.intervals[0].singular.is_empty());
        assert_eq!(rep.intervals[0].bang_max, vec![0]);
    }

    #[test]
    fn transversal_crossing_is_a_switch() {
        // Ψ(t) = cos(π t) sampled at 101 points crosses zero once at t = 1/2
        let psi: Vec<f64> = (0..100).map(|j| (std::f64::consts::PI * j as f64 / 99.0).cos()).collect();
        let sw = synthetic(&psi);
        let u = ControlGrid::from_values(100, 1, psi.iter().map(|p| if *p > 0.0 { 1.0 } else { 0.0 }).collect()).unwrap();
        let rep = classify_arcs(&sw, &u, None, &AnalysisOptions::default()).unwrap();
        let near_zero = (0..100).filter(|&j| rep.class(j, 0) == ArcClass::Switch).count();
        assert!(near_zero <= 2 && near_zero >= 1);
        assert_eq!(rep.singular_intervals().count(), 0);
        let bang: Vec<_> = rep.intervals.iter().map(|a| (a.bang_min.clone(), a.bang_max.clone())).collect();
        assert_eq!(bang, vec![(vec![], vec![0]), (vec![0], vec![])]);
    }

    #[test]
    fn long_plateau_is_singular() {
        let mut psi = vec![1.0; 10];
        psi.extend(vec![0.001; 6]);
        psi.extend(vec![-1.0; 10]);
        let sw = synthetic(&psi);
        let u = ControlGrid::constant(26, &[0.5]);
        let rep = classify_arcs(&sw, &u, None, &AnalysisOptions::default()).unwrap();
        let s: Vec<_> = rep.singular_intervals().map(|a| a.range()).collect();
        assert_eq!(s, vec![10..16]);
        for j in 0..26 {
            let (a, b, c) = rep.sets(j);
            assert_eq!(a.len() + b.len() + c.len(), 1);
        }
    }

    #[test]
    fn tol_psi_validated() {
        let sw = synthetic(&[1.0]);
        let u = ControlGrid::constant(1, &[1.0]);
        let bad = AnalysisOptions { tol_psi: 1.5, ..Default::default() };
        assert!(classify_arcs(&sw, &u, None, &bad).is_err());
    }

    #[test]
    fn box_gap_zero_at_bang() {
        assert_eq!(box_gap(2.0, 1.0, 0.0, 1.0), 0.0);
        assert_eq!(box_gap(-2.0, 0.0, 0.0, 1.0), 0.0);
        assert_eq!(box_gap(2.0, 0.25, 0.0, 1.0), 1.5);
    }
}
