//! Built-in benchmark problems.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dynamics::{ControlAffineSystem, ControlBounds, FnCost, FnField, VectorField};
use crate::error::{Error, Result};
use crate::params::{InitialConditionSpec, InitialEntry, ParameterDistribution};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sense {
    Minimize,
    Maximize,
}

impl Sense {
    /// Converts an internal (minimized) cost into the user-facing objective.
    pub fn objective(self, cost: f64) -> f64 {
        match self {
            Sense::Minimize => cost,
            Sense::Maximize => -cost,
        }
    }
}

/// Parameter overrides accepted by the registry.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemOverrides {
    #[serde(default)]
    pub values: BTreeMap<String, f64>,
    #[serde(default)]
    pub distribution: Option<ParameterDistribution>,
}

impl ProblemOverrides {
    pub fn set(mut self, name: &str, value: f64) -> Self {
        self.values.insert(name.to_string(), value);
        self
    }

    pub fn with_distribution(mut self, dist: ParameterDistribution) -> Self {
        self.distribution = Some(dist);
        self
    }
}

#[derive(Clone)]
pub struct ProblemSpec {
    pub name: String,
    pub system: ControlAffineSystem,
    pub distribution: ParameterDistribution,
    pub init: InitialConditionSpec,
    pub sense: Sense,
    pub description: String,
    /// Effective scalar parameters after overrides.
    pub parameters: BTreeMap<String, f64>,
}

impl std::fmt::Debug for ProblemSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ProblemSpec")
            .field("name", &self.name)
            .field("system", &self.system)
            .field("distribution", &self.distribution)
            .field("sense", &self.sense)
            .field("parameters", &self.parameters)
            .finish()
    }
}

pub const PROBLEM_NAMES: [&str; 2] = ["fishing", "bryson_ho"];

/// Looks up a registry problem by name.
pub fn problem(name: &str, overrides: &ProblemOverrides) -> Result<ProblemSpec> {
    match name {
        "fishing" => fishing_problem(overrides),
        "bryson_ho" => bryson_ho_problem(overrides),
        other => Err(Error::UnknownProblem(other.to_string())),
    }
}

fn resolve(
    overrides: &ProblemOverrides,
    defaults: &[(&str, f64)],
    check: impl Fn(&str, f64) -> std::result::Result<(), String>,
) -> Result<BTreeMap<String, f64>> {
    let mut params: BTreeMap<String, f64> = defaults.iter().map(|(k, v)| (k.to_string(), *v)).collect();
    for (name, &value) in &overrides.values {
        if !params.contains_key(name) {
            return Err(Error::InvalidOverride {
                name: name.clone(),
                value,
                reason: format!(
                    "not an overridable parameter (expected one of {})",
                    defaults.iter().map(|(k, _)| *k).collect::<Vec<_>>().join(", ")
                ),
            });
        }
        if !value.is_finite() {
            return Err(Error::InvalidOverride {
                name: name.clone(),
                value,
                reason: "must be finite".into(),
            });
        }
        check(name, value).map_err(|reason| Error::InvalidOverride {
            name: name.clone(),
            value,
            reason,
        })?;
        params.insert(name.clone(), value);
    }
    Ok(params)
}

fn distribution(overrides: &ProblemOverrides, default: ParameterDistribution) -> Result<ParameterDistribution> {
    let dist = overrides.distribution.clone().unwrap_or(default.clone());
    dist.validate()?;
    if dist.dim() != default.dim() {
        return Err(Error::DimensionMismatch {
            context: "parameter distribution".into(),
            expected: default.dim(),
            actual: dist.dim(),
        });
    }
    Ok(dist)
}

/// Harvesting of a logistic fish stock under uncertain initial size, growth
/// rate and carrying capacity, in Mayer form with revenue state z.
///
/// State (x, z), one control u ∈ [0, 1], parameters ω = (x0, r, K):
///
/// ```text
/// ẋ = r x (1 − x/K) − U_max u
/// ż = (E − c/x) U_max u
/// maximize E_ω[z(T)]     (minimized internally as g = −z)
/// ```
pub fn fishing_problem(overrides: &ProblemOverrides) -> Result<ProblemSpec> {
    let params = resolve(
        overrides,
        &[("E", 1.0), ("c", 17.5), ("U_max", 20.0), ("T", 10.0)],
        |name, v| match name {
            "U_max" | "T" if v <= 0.0 => Err("must be > 0".into()),
            "c" if v < 0.0 => Err("must be ≥ 0".into()),
            _ => Ok(()),
        },
    )?;
    let (e, c, umax, t) = (params["E"], params["c"], params["U_max"], params["T"]);
    let dist = distribution(
        overrides,
        ParameterDistribution::Product {
            components: vec![
                ParameterDistribution::truncated_normal(70.0, 5.0, 40.0, 90.0),
                ParameterDistribution::truncated_normal(0.71, 0.05, 0.1, 1.0),
                ParameterDistribution::truncated_normal(80.5, 10.0, 65.0, 95.0),
            ],
        },
    )?;

    let drift = FnField::new(
        "f0",
        2,
        |x, w, o| {
            let (r, k) = (w[1], w[2]);
            o[0] = r * x[0] * (1.0 - x[0] / k);
            o[1] = 0.0;
        },
        |x, w, o| {
            let (r, k) = (w[1], w[2]);
            o.copy_from_slice(&[r * (1.0 - 2.0 * x[0] / k), 0.0, 0.0, 0.0]);
        },
    )
    .with_hessian(|_, w, o| {
        o.fill(0.0);
        o[0] = -2.0 * w[1] / w[2];
    });
    let harvest = FnField::new(
        "f1",
        2,
        move |x, _, o| {
            o[0] = -umax;
            o[1] = (e - c / x[0]) * umax;
        },
        move |x, _, o| {
            o.copy_from_slice(&[0.0, 0.0, c * umax / (x[0] * x[0]), 0.0]);
        },
    )
    .with_hessian(move |x, _, o| {
        o.fill(0.0);
        o[4] = -2.0 * c * umax / (x[0] * x[0] * x[0]);
    });
    let fields: Vec<Arc<dyn VectorField>> = vec![Arc::new(drift), Arc::new(harvest)];
    let system = ControlAffineSystem::new(
        fields,
        Arc::new(FnCost::coordinate(1, -1.0)),
        ControlBounds::new(vec![0.0], vec![1.0])?,
        0.0,
        t,
    )?
    // c/x is singular at 0; the stock never comes close under bounded harvesting
    .with_domain(|x| x[0] > 1.0);

    Ok(ProblemSpec {
        name: "fishing".into(),
        system,
        distribution: dist,
        init: InitialConditionSpec::projection("fishing", vec![InitialEntry::Parameter(0), InitialEntry::Value(0.0)]),
        sense: Sense::Maximize,
        description: "Optimal harvesting of a logistic halibut population with uncertain initial stock, \
                      growth rate and carrying capacity; revenue (E - c/x) U_max u accumulated in z."
            .into(),
        parameters: params,
    })
}

/// A two-control variant of a classic Bryson–Ho example with commuting
/// control fields and an uncertain initial condition x(0) = y(0) = ω.
///
/// ```text
/// ẋ = y² + u_1,  ẏ = −u_2,  ż = x²/2,   u ∈ [−1, 1]²
/// minimize E_ω[z(T)]
/// ```
pub fn bryson_ho_problem(overrides: &ProblemOverrides) -> Result<ProblemSpec> {
    let params = resolve(overrides, &[("T", 2.0)], |_, v| {
        if v <= 0.0 {
            Err("must be > 0".into())
        } else {
            Ok(())
        }
    })?;
    let dist = distribution(overrides, ParameterDistribution::uniform(0.95, 1.05))?;

    let drift = FnField::new(
        "f0",
        3,
        |x, _, o| {
            o[0] = x[1] * x[1];
            o[1] = 0.0;
            o[2] = 0.5 * x[0] * x[0];
        },
        |x, _, o| {
            o.copy_from_slice(&[0.0, 2.0 * x[1], 0.0, 0.0, 0.0, 0.0, x[0], 0.0, 0.0]);
        },
    )
    .with_hessian(|_, _, o| {
        o.fill(0.0);
        o[4] = 2.0; // ∂²(y²)/∂y²
        o[18] = 1.0; // ∂²(x²/2)/∂x²
    });
    let fields: Vec<Arc<dyn VectorField>> = vec![
        Arc::new(drift),
        Arc::new(FnField::constant("f1", vec![1.0, 0.0, 0.0])),
        Arc::new(FnField::constant("f2", vec![0.0, -1.0, 0.0])),
    ];
    let system = ControlAffineSystem::new(
        fields,
        Arc::new(FnCost::coordinate(2, 1.0)),
        ControlBounds::new(vec![-1.0, -1.0], vec![1.0, 1.0])?,
        0.0,
        params["T"],
    )?;
    Ok(ProblemSpec {
        name: "bryson_ho".into(),
        system,
        distribution: dist,
        init: InitialConditionSpec::projection(
            "bryson_ho",
            vec![InitialEntry::Parameter(0), InitialEntry::Parameter(0), InitialEntry::Value(0.0)],
        ),
        sense: Sense::Minimize,
        description: "Two-control variant of a Bryson-Ho example with commuting control fields \
                      f1 = (1,0,0), f2 = (0,-1,0) and x(0) = y(0) ~ U(0.95, 1.05); cost z(T) = int x^2/2."
            .into(),
        parameters: params,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{dynamics_eval, lie_bracket};
    use crate::params::initial_condition_map;

    #[test]
    fn fishing_defaults() {
        let p = fishing_problem(&ProblemOverrides::default()).unwrap();
        assert_eq!(p.parameters["T"], 10.0);
        assert_eq!(p.parameters["E"], 1.0);
        assert_eq!(p.parameters["c"], 17.5);
        assert_eq!(p.parameters["U_max"], 20.0);
        assert_eq!(p.system.t_final(), 10.0);
        assert_eq!((p.system.state_dim(), p.system.control_dim()), (2, 1));
        assert_eq!(p.sense, Sense::Maximize);
    }

    #[test]
    fn fishing_dynamics_value() {
        let p = fishing_problem(&ProblemOverrides::default()).unwrap();
        let w = [70.0, 0.71, 80.5];
        let v = dynamics_eval(&p.system, &[70.0, 0.0], &[1.0], &w).unwrap();
        let expect_x = 0.71 * 70.0 * (1.0 - 70.0 / 80.5) - 20.0;
        assert!((v[0] - expect_x).abs() < 1e-12);
        assert!((v[0] + 13.48).abs() < 0.05);
        assert!((v[1] - 15.0).abs() < 1e-12);
    }

    #[test]
    fn initial_maps() {
        let f = fishing_problem(&ProblemOverrides::default()).unwrap();
        assert_eq!(initial_condition_map(&f.init, &[70.0, 0.7, 80.0], 2).unwrap(), vec![70.0, 0.0]);
        let b = bryson_ho_problem(&ProblemOverrides::default()).unwrap();
        assert_eq!(initial_condition_map(&b.init, &[0.97], 3).unwrap(), vec![0.97, 0.97, 0.0]);
    }

    #[test]
    fn bryson_ho_fields_commute() {
        let b = bryson_ho_problem(&ProblemOverrides::default()).unwrap();
        let v = lie_bracket(b.system.field(1).as_ref(), b.system.field(2).as_ref(), &[0.3, -2.0, 5.0], &[1.0]).unwrap();
        assert_eq!(v, vec![0.0; 3]);
    }

    #[test]
    fn override_validation() {
        let bad = ProblemOverrides::default().set("U_max", -1.0);
        assert!(matches!(fishing_problem(&bad), Err(Error::InvalidOverride { .. })));
        let unknown = ProblemOverrides::default().set("E", 2.0);
        assert!(matches!(bryson_ho_problem(&unknown), Err(Error::InvalidOverride { .. })));
        let ok = fishing_problem(&ProblemOverrides::default().set("T", 5.0)).unwrap();
        assert_eq!(ok.system.t_final(), 5.0);
        let wrong_dim = ProblemOverrides::default().with_distribution(ParameterDistribution::uniform(0.0, 1.0));
        assert!(matches!(fishing_problem(&wrong_dim), Err(Error::DimensionMismatch { .. })));
        assert!(matches!(problem("nosuch", &ProblemOverrides::default()), Err(Error::UnknownProblem(_))));
    }
}
