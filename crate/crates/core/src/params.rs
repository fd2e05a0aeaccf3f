//! Parameter space, its probability measure and reproducible i.i.d. sampling.
//!
//! Samples are drawn from ChaCha20 (`rand_chacha` 0.9, `seed_from_u64`), one
//! uniform variate per scalar parameter coordinate, taken in coordinate order.
//! Every sample consumes the same number of variates, so the first `k` samples
//! of a stream never depend on how many samples are drawn afterwards.

use rand_chacha::ChaCha20Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};
use statrs::function::erf::{erfc, erfc_inv};

use crate::error::{check_dim, Error, Result};

/// The probability measure on the parameter space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ParameterDistribution {
    TruncatedNormal {
        mean: f64,
        std: f64,
        lower: f64,
        upper: f64,
    },
    Uniform {
        lower: f64,
        upper: f64,
    },
    FiniteSet {
        points: Vec<Vec<f64>>,
        weights: Vec<f64>,
    },
    Product {
        components: Vec<ParameterDistribution>,
    },
}

fn invalid(field: &str, reason: impl Into<String>) -> Error {
    Error::InvalidDistribution {
        field: field.to_string(),
        reason: reason.into(),
    }
}

pub(crate) fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

fn std_normal_quantile(p: f64) -> f64 {
    -std::f64::consts::SQRT_2 * erfc_inv(2.0 * p)
}

fn std_normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

impl ParameterDistribution {
    pub fn truncated_normal(mean: f64, std: f64, lower: f64, upper: f64) -> Self {
        Self::TruncatedNormal {
            mean,
            std,
            lower,
            upper,
        }
    }

    pub fn uniform(lower: f64, upper: f64) -> Self {
        Self::Uniform { lower, upper }
    }

    /// A single atom with unit weight; the deterministic special case.
    pub fn point(point: Vec<f64>) -> Self {
        Self::FiniteSet {
            points: vec![point],
            weights: vec![1.0],
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::TruncatedNormal {
                mean,
                std,
                lower,
                upper,
            } => {
                if !mean.is_finite() {
                    return Err(invalid("mean", "must be finite"));
                }
                if !(std.is_finite() && *std > 0.0) {
                    return Err(invalid("std", format!("must be > 0, got {std}")));
                }
                if !(lower < upper) {
                    return Err(invalid(
                        "lower",
                        format!("lower ({lower}) must be < upper ({upper})"),
                    ));
                }
                let a = std_normal_cdf((lower - mean) / std);
                let b = std_normal_cdf((upper - mean) / std);
                if !(b - a > 0.0) {
                    return Err(invalid("lower", "truncation interval carries no mass"));
                }
                Ok(())
            }
            Self::Uniform { lower, upper } => {
                if !(lower.is_finite() && upper.is_finite() && lower < upper) {
                    return Err(invalid(
                        "lower",
                        format!("lower ({lower}) must be < upper ({upper})"),
                    ));
                }
                Ok(())
            }
            Self::FiniteSet { points, weights } => {
                if points.is_empty() {
                    return Err(invalid("points", "at least one point required"));
                }
                if points.len() != weights.len() {
                    return Err(invalid(
                        "weights",
                        format!("{} weights for {} points", weights.len(), points.len()),
                    ));
                }
                let d = points[0].len();
                if d == 0 || points.iter().any(|p| p.len() != d) {
                    return Err(invalid("points", "all points must share a positive dimension"));
                }
                if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
                    return Err(invalid("weights", "weights must be nonnegative"));
                }
                let total: f64 = weights.iter().sum();
                if (total - 1.0).abs() > 1e-12 {
                    return Err(invalid("weights", format!("weights sum to {total}, not 1")));
                }
                Ok(())
            }
            Self::Product { components } => {
                if components.is_empty() {
                    return Err(invalid("components", "at least one component required"));
                }
                components.iter().try_for_each(|c| c.validate())
            }
        }
    }

    /// Dimension of a draw.
    pub fn dim(&self) -> usize {
        match self {
            Self::TruncatedNormal { .. } | Self::Uniform { .. } => 1,
            Self::FiniteSet { points, .. } => points.first().map_or(0, Vec::len),
            Self::Product { components } => components.iter().map(|c| c.dim()).sum(),
        }
    }

    /// Number of uniform variates consumed per draw.
    fn variates(&self) -> usize {
        match self {
            Self::Product { components } => components.iter().map(|c| c.variates()).sum(),
            _ => 1,
        }
    }

    /// Expected value of a draw.
    pub fn mean(&self) -> Vec<f64> {
        match self {
            Self::TruncatedNormal {
                mean,
                std,
                lower,
                upper,
            } => {
                let a = (lower - mean) / std;
                let b = (upper - mean) / std;
                let z = std_normal_cdf(b) - std_normal_cdf(a);
                vec![mean + std * (std_normal_pdf(a) - std_normal_pdf(b)) / z]
            }
            Self::Uniform { lower, upper } => vec![0.5 * (lower + upper)],
            Self::FiniteSet { points, weights } => {
                let mut m = vec![0.0; points[0].len()];
                for (p, w) in points.iter().zip(weights) {
                    for (mi, pi) in m.iter_mut().zip(p) {
                        *mi += w * pi;
                    }
                }
                m
            }
            Self::Product { components } => components.iter().flat_map(|c| c.mean()).collect(),
        }
    }

    /// Maps uniform variates in (0,1) onto one draw, appending to `out`.
    fn transform(&self, uniforms: &mut impl Iterator<Item = f64>, out: &mut Vec<f64>) {
        match self {
            Self::TruncatedNormal {
                mean,
                std,
                lower,
                upper,
            } => {
                let u = uniforms.next().expect("variate count");
                let fa = std_normal_cdf((lower - mean) / std);
                let fb = std_normal_cdf((upper - mean) / std);
                let x = mean + std * std_normal_quantile(fa + u * (fb - fa));
                out.push(x.clamp(*lower, *upper));
            }
            Self::Uniform { lower, upper } => {
                let u = uniforms.next().expect("variate count");
                out.push((lower + u * (upper - lower)).clamp(*lower, *upper));
            }
            Self::FiniteSet { points, weights } => {
                let u = uniforms.next().expect("variate count");
                let mut acc = 0.0;
                let mut chosen = points.len() - 1;
                for (idx, w) in weights.iter().enumerate() {
                    acc += w;
                    if u < acc {
                        chosen = idx;
                        break;
                    }
                }
                // zero-weight atoms are never selected, even as the fallthrough
                while weights[chosen] == 0.0 && chosen > 0 {
                    chosen -= 1;
                }
                out.extend_from_slice(&points[chosen]);
            }
            Self::Product { components } => {
                for c in components {
                    c.transform(uniforms, out);
                }
            }
        }
    }

    /// Whether a point lies in the support of the distribution.
    pub fn contains(&self, point: &[f64]) -> bool {
        if point.len() != self.dim() {
            return false;
        }
        match self {
            Self::TruncatedNormal { lower, upper, .. } | Self::Uniform { lower, upper } => {
                (*lower..=*upper).contains(&point[0])
            }
            Self::FiniteSet { points, weights } => points
                .iter()
                .zip(weights)
                .any(|(p, w)| *w > 0.0 && p.as_slice() == point),
            Self::Product { components } => {
                let mut offset = 0;
                components.iter().all(|c| {
                    let d = c.dim();
                    let ok = c.contains(&point[offset..offset + d]);
                    offset += d;
                    ok
                })
            }
        }
    }
}

/// How a sweep over k draws its sample sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    /// Ω_k is the first k draws of one stream, so Ω_k ⊂ Ω_{k+1}.
    #[default]
    Nested,
    /// Each k gets its own stream.
    Independent,
}

/// An immutable draw Ω_k = {ω_1, …, ω_k}.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSet {
    pub samples: Vec<Vec<f64>>,
    pub seed: u64,
    pub k: usize,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Vec<f64>> {
        self.samples.iter()
    }

    pub fn get(&self, i: usize) -> &[f64] {
        &self.samples[i]
    }
}

/// Uniform on the open interval (0, 1) with 53 bits of resolution.
fn open_unit(rng: &mut ChaCha20Rng) -> f64 {
    ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

fn draw(dist: &ParameterDistribution, k: usize, mut rng: ChaCha20Rng, seed: u64) -> SampleSet {
    let per_draw = dist.variates();
    let mut samples = Vec::with_capacity(k);
    let mut buf = Vec::with_capacity(per_draw);
    for _ in 0..k {
        buf.clear();
        buf.extend((0..per_draw).map(|_| open_unit(&mut rng)));
        let mut out = Vec::with_capacity(dist.dim());
        dist.transform(&mut buf.iter().copied(), &mut out);
        samples.push(out);
    }
    SampleSet { samples, seed, k }
}

/// Draws `k` i.i.d. samples; a pure function of `(dist, k, seed)`.
pub fn sample_parameters(dist: &ParameterDistribution, k: usize, seed: u64) -> Result<SampleSet> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be ≥ 1".into()));
    }
    dist.validate()?;
    Ok(draw(dist, k, ChaCha20Rng::seed_from_u64(seed), seed))
}

/// Sample set for step `k` of a sweep.
///
/// Nested mode is [`sample_parameters`]. Independent mode reads ChaCha20
/// stream `k` of the same seed, so distinct k share no draws.
pub fn sample_for_sweep(
    dist: &ParameterDistribution,
    k: usize,
    seed: u64,
    mode: SamplingMode,
) -> Result<SampleSet> {
    match mode {
        SamplingMode::Nested => sample_parameters(dist, k, seed),
        SamplingMode::Independent => {
            if k == 0 {
                return Err(Error::InvalidArgument("k must be ≥ 1".into()));
            }
            dist.validate()?;
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            rng.set_stream(k as u64);
            Ok(draw(dist, k, rng, seed))
        }
    }
}

/// One coordinate of an initial-condition map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialEntry {
    /// Copy coordinate `i` of ω.
    Parameter(usize),
    Value(f64),
}

/// The map ω ↦ x(t0, ω).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum InitialConditionSpec {
    Constant { state: Vec<f64> },
    Projection { name: String, entries: Vec<InitialEntry> },
}

impl InitialConditionSpec {
    pub fn constant(state: Vec<f64>) -> Self {
        Self::Constant { state }
    }

    pub fn projection(name: &str, entries: Vec<InitialEntry>) -> Self {
        Self::Projection {
            name: name.to_string(),
            entries,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Constant { state } => state.len(),
            Self::Projection { entries, .. } => entries.len(),
        }
    }
}

/// Evaluates φ(ω) for a system of state dimension `n`.
pub fn initial_condition_map(spec: &InitialConditionSpec, omega: &[f64], n: usize) -> Result<Vec<f64>> {
    let x0 = match spec {
        InitialConditionSpec::Constant { state } => state.clone(),
        InitialConditionSpec::Projection { name, entries } => entries
            .iter()
            .map(|e| match e {
                InitialEntry::Value(v) => Ok(*v),
                InitialEntry::Parameter(i) => omega.get(*i).copied().ok_or_else(|| {
                    Error::DimensionMismatch {
                        context: format!("initial map '{name}' reads parameter {i}"),
                        expected: i + 1,
                        actual: omega.len(),
                    }
                }),
            })
            .collect::<Result<Vec<_>>>()?,
    };
    check_dim("initial condition", n, x0.len())?;
    Ok(x0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tn() -> ParameterDistribution {
        ParameterDistribution::truncated_normal(70.0, 5.0, 40.0, 90.0)
    }

    #[test]
    fn single_atom_repeats() {
        let d = ParameterDistribution::point(vec![1.0]);
        for seed in [0, 7, u64::MAX] {
            let s = sample_parameters(&d, 3, seed).unwrap();
            assert_eq!(s.samples, vec![vec![1.0]; 3]);
        }
    }

    #[test]
    fn truncated_normal_in_bounds() {
        let s = sample_parameters(&tn(), 5, 42).unwrap();
        assert_eq!(s.len(), 5);
        assert!(s.iter().all(|w| (40.0..=90.0).contains(&w[0])));
    }

    #[test]
    fn invalid_parameters_name_field() {
        let bad = [
            (ParameterDistribution::truncated_normal(0.0, 0.0, -1.0, 1.0), "std"),
            (ParameterDistribution::truncated_normal(0.0, 1.0, 1.0, 1.0), "lower"),
            (ParameterDistribution::uniform(2.0, 1.0), "lower"),
            (
                ParameterDistribution::FiniteSet {
                    points: vec![vec![0.0], vec![1.0]],
                    weights: vec![0.5, 0.4],
                },
                "weights",
            ),
        ];
        for (d, field) in bad {
            match sample_parameters(&d, 1, 0) {
                Err(Error::InvalidDistribution { field: f, .. }) => assert_eq!(f, field),
                other => panic!("expected error on {field}, got {other:?}"),
            }
        }
    }

    #[test]
    fn k_zero_rejected() {
        assert!(matches!(
            sample_parameters(&tn(), 0, 1),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn independent_mode_differs_from_nested() {
        let a = sample_for_sweep(&tn(), 4, 9, SamplingMode::Nested).unwrap();
        let b = sample_for_sweep(&tn(), 4, 9, SamplingMode::Independent).unwrap();
        let c = sample_for_sweep(&tn(), 5, 9, SamplingMode::Independent).unwrap();
        assert_ne!(a.samples, b.samples);
        assert_ne!(b.samples[..], c.samples[..4]);
    }

    #[test]
    fn finite_set_skips_zero_weights() {
        let d = ParameterDistribution::FiniteSet {
            points: vec![vec![1.0], vec![2.0], vec![3.0]],
            weights: vec![0.5, 0.5, 0.0],
        };
        let s = sample_parameters(&d, 2000, 3).unwrap();
        assert!(s.iter().all(|w| w[0] != 3.0));
        let ones = s.iter().filter(|w| w[0] == 1.0).count();
        assert!((800..1200).contains(&ones));
    }

    #[test]
    fn initial_maps() {
        let c = InitialConditionSpec::constant(vec![1.0, 0.0]);
        assert_eq!(initial_condition_map(&c, &[5.0, 6.0], 2).unwrap(), vec![1.0, 0.0]);
        assert_eq!(initial_condition_map(&c, &[], 2).unwrap(), vec![1.0, 0.0]);
        assert!(matches!(
            initial_condition_map(&c, &[], 3),
            Err(Error::DimensionMismatch { .. })
        ));
        let p = InitialConditionSpec::projection(
            "xy",
            vec![InitialEntry::Parameter(0), InitialEntry::Parameter(0), InitialEntry::Value(0.0)],
        );
        assert_eq!(initial_condition_map(&p, &[0.97], 3).unwrap(), vec![0.97, 0.97, 0.0]);
        assert!(initial_condition_map(&p, &[], 3).is_err());
    }

    #[test]
    fn serde_tagged_form() {
        let d: ParameterDistribution = serde_json::from_str(
            r#"{"type":"truncated_normal","mean":70,"std":5,"lower":40,"upper":90}"#,
        )
        .unwrap();
        assert_eq!(d, tn());
    }
}
