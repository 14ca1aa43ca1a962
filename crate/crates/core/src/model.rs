//! The Gaussian linear alignment model: prompts are vectors, responses are scalars,
//! a policy is `N(wᵀx, σ²)` and the oracle reward is `-(w*ᵀx - y)²`.

use crate::error::{contract, Result};
use crate::rng::Stream;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::ops::{Index, IndexMut};

/// A finite real vector (prompt or weight vector).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Vector(Vec<f64>);

impl Vector {
    pub fn new(entries: Vec<f64>) -> Result<Self> {
        if entries.is_empty() {
            return Err(contract("vector must have positive dimension"));
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(contract("vector entries must be finite"));
        }
        Ok(Self(entries))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim.max(1)])
    }

    pub fn basis(dim: usize, i: usize) -> Self {
        let mut v = vec![0.0; dim];
        v[i] = 1.0;
        Self(v)
    }

    /// Standard normal entries.
    pub fn gaussian(dim: usize, stream: &mut Stream) -> Self {
        Self((0..dim).map(|_| stream.normal()).collect())
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn dot(&self, other: &Vector) -> f64 {
        debug_assert_eq!(self.dim(), other.dim());
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.dot(self)
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn dist_sq(&self, other: &Vector) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| (a - b) * (a - b)).sum()
    }

    pub fn scaled(&self, s: f64) -> Vector {
        Vector(self.0.iter().map(|v| v * s).collect())
    }

    pub fn add(&self, other: &Vector) -> Vector {
        Vector(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    pub fn sub(&self, other: &Vector) -> Vector {
        Vector(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect())
    }

    /// `self + s * other`
    pub fn axpy(&self, s: f64, other: &Vector) -> Vector {
        Vector(self.0.iter().zip(&other.0).map(|(a, b)| a + s * b).collect())
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl Index<usize> for Vector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl IndexMut<usize> for Vector {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.0[i]
    }
}

fn check_dims(a: &Vector, b: &Vector, what: &str) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(contract(format!(
            "{what}: dimension mismatch ({} vs {})",
            a.dim(),
            b.dim()
        )));
    }
    Ok(())
}

/// `π_θ(y|x) = N(wᵀx, σ²)`, with σ stored as a standard deviation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianLinearPolicy {
    w: Vector,
    sigma: f64,
}

impl GaussianLinearPolicy {
    pub fn new(w: Vector, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(contract(format!("policy sigma must be positive and finite, got {sigma}")));
        }
        if !w.is_finite() {
            return Err(contract("policy weights must be finite"));
        }
        Ok(Self { w, sigma })
    }

    pub fn w(&self) -> &Vector {
        &self.w
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn dim(&self) -> usize {
        self.w.dim()
    }

    pub fn mean(&self, x: &Vector) -> f64 {
        self.w.dot(x)
    }

    pub fn with_w(&self, w: Vector) -> Result<Self> {
        Self::new(w, self.sigma)
    }

    /// log π_θ(y|x) = -½log(2πσ²) - (y - wᵀx)²/(2σ²)
    pub fn log_density(&self, x: &Vector, y: f64) -> Result<f64> {
        check_dims(&self.w, x, "log_density")?;
        Ok(self.log_density_unchecked(x, y))
    }

    pub(crate) fn log_density_unchecked(&self, x: &Vector, y: f64) -> f64 {
        let r = y - self.w.dot(x);
        let var = self.sigma * self.sigma;
        -0.5 * (2.0 * PI * var).ln() - r * r / (2.0 * var)
    }

    /// `wᵀx + σz` with one standard normal draw from the stream.
    pub fn sample_response(&self, x: &Vector, stream: &mut Stream) -> Result<f64> {
        check_dims(&self.w, x, "sample_response")?;
        Ok(self.w.dot(x) + self.sigma * stream.normal())
    }
}

/// Ground-truth reward `r*(x, y) = -(w*ᵀx - y)²`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardOracle {
    w_star: Vector,
}

impl RewardOracle {
    pub fn new(w_star: Vector) -> Self {
        Self { w_star }
    }

    pub fn w_star(&self) -> &Vector {
        &self.w_star
    }

    pub fn dim(&self) -> usize {
        self.w_star.dim()
    }

    pub fn target(&self, x: &Vector) -> f64 {
        self.w_star.dot(x)
    }

    pub fn reward(&self, x: &Vector, y: f64) -> Result<f64> {
        check_dims(&self.w_star, x, "reward")?;
        Ok(self.reward_unchecked(x, y))
    }

    pub(crate) fn reward_unchecked(&self, x: &Vector, y: f64) -> f64 {
        let d = self.w_star.dot(x) - y;
        -d * d
    }
}

/// `f_θ(x,y) = β log(π_θ(y|x) / π_ref(y|x))`, written out in closed form.
pub fn relative_logit(
    policy: &GaussianLinearPolicy,
    reference: &GaussianLinearPolicy,
    beta: f64,
    x: &Vector,
    y: f64,
) -> Result<f64> {
    check_dims(policy.w(), x, "relative_logit")?;
    check_dims(reference.w(), x, "relative_logit")?;
    if !(beta > 0.0) {
        return Err(contract(format!("beta must be positive, got {beta}")));
    }
    Ok(relative_logit_unchecked(policy, reference, beta, x, y))
}

pub(crate) fn relative_logit_unchecked(
    policy: &GaussianLinearPolicy,
    reference: &GaussianLinearPolicy,
    beta: f64,
    x: &Vector,
    y: f64,
) -> f64 {
    let r = y - policy.mean(x);
    let r_ref = y - reference.mean(x);
    let s = policy.sigma();
    let s_ref = reference.sigma();
    beta * ((s_ref / s).ln() - r * r / (2.0 * s * s) + r_ref * r_ref / (2.0 * s_ref * s_ref))
}

/// One preference tuple `(x, y_w, y_l)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreferenceTuple {
    pub x: Vector,
    pub y_w: f64,
    pub y_l: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreferenceDataset {
    pub tuples: Vec<PreferenceTuple>,
    /// Key of the stream the dataset was drawn from.
    pub seed_record: u64,
}

impl PreferenceDataset {
    pub fn new(tuples: Vec<PreferenceTuple>, seed_record: u64) -> Result<Self> {
        if let Some(first) = tuples.first() {
            let d = first.x.dim();
            if tuples.iter().any(|t| t.x.dim() != d) {
                return Err(contract("all tuples in a dataset must share the prompt dimension"));
            }
            if tuples.iter().any(|t| !t.y_w.is_finite() || !t.y_l.is_finite()) {
                return Err(contract("responses must be finite"));
            }
        }
        Ok(Self { tuples, seed_record })
    }

    pub fn len(&self) -> usize {
        self.tuples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tuples.is_empty()
    }

    pub fn dim(&self) -> Option<usize> {
        self.tuples.first().map(|t| t.x.dim())
    }

    pub(crate) fn require_non_empty(&self) -> Result<()> {
        if self.is_empty() {
            Err(contract("dataset must be non-empty"))
        } else {
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::Quadrature;

    fn v(xs: &[f64]) -> Vector {
        Vector::new(xs.to_vec()).unwrap()
    }

    #[test]
    fn reward_examples() {
        let o = RewardOracle::new(v(&[1.0, 0.0]));
        assert_eq!(o.reward(&v(&[2.0, 3.0]), 2.0).unwrap(), 0.0);
        assert_eq!(o.reward(&v(&[2.0, 3.0]), 3.0).unwrap(), -1.0);
        let o = RewardOracle::new(v(&[0.5, -1.0]));
        // (0.5*2 - 1*1 - 1)^2 = 1
        assert_eq!(o.reward(&v(&[2.0, 1.0]), 1.0).unwrap(), -1.0);
        assert!(o.reward(&v(&[1.0]), 0.0).is_err());
    }

    #[test]
    fn reward_argmax_on_grid() {
        let o = RewardOracle::new(v(&[0.7, -0.2]));
        let x = v(&[1.5, 2.0]);
        let target = o.target(&x);
        let best = (-4000..=4000)
            .map(|i| target + i as f64 * 1e-3)
            .map(|y| (y, o.reward(&x, y).unwrap()))
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        assert_eq!(best.0, target);
        assert_eq!(best.1, 0.0);
    }

    #[test]
    fn log_density_examples() {
        let ln2pi = (2.0 * PI).ln();
        let p = GaussianLinearPolicy::new(v(&[0.0, 0.0]), 1.0).unwrap();
        let x = v(&[3.0, -1.0]);
        assert!((p.log_density(&x, 0.0).unwrap() + 0.5 * ln2pi).abs() < 1e-15);
        assert!((p.log_density(&x, 1.0).unwrap() + 0.5 * ln2pi + 0.5).abs() < 1e-15);
        let p = GaussianLinearPolicy::new(v(&[2.0]), 2.0).unwrap();
        let expected = -0.5 * (8.0 * PI).ln() - 0.5;
        assert!((p.log_density(&v(&[1.0]), 4.0).unwrap() - expected).abs() < 1e-15);
        assert!(p.log_density(&x, 0.0).is_err());
    }

    #[test]
    fn density_integrates_to_one() {
        let p = GaussianLinearPolicy::new(v(&[0.4, -1.1]), 0.35).unwrap();
        let x = v(&[1.0, 2.0]);
        let m = p.mean(&x);
        let s = p.sigma();
        let q = Quadrature::with_abs_tol(1e-12);
        let mass = q
            .integrate(|y| p.log_density(&x, y).unwrap().exp(), m - 10.0 * s, m + 10.0 * s)
            .unwrap();
        assert!((mass.value - 1.0).abs() < 1e-8, "{}", mass.value);
    }

    #[test]
    fn policy_rejects_bad_sigma() {
        assert!(GaussianLinearPolicy::new(v(&[1.0]), 0.0).is_err());
        assert!(GaussianLinearPolicy::new(v(&[1.0]), -1.0).is_err());
        assert!(GaussianLinearPolicy::new(v(&[1.0]), f64::NAN).is_err());
        assert!(Vector::new(vec![f64::INFINITY]).is_err());
        assert!(Vector::new(vec![]).is_err());
    }

    #[test]
    fn relative_logit_examples() {
        let p = GaussianLinearPolicy::new(v(&[1.0]), 1.0).unwrap();
        let r = GaussianLinearPolicy::new(v(&[0.0]), 1.0).unwrap();
        let x = v(&[1.0]);
        assert!((relative_logit(&p, &r, 1.0, &x, 1.0).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(relative_logit(&p, &p, 1.0, &x, 0.3).unwrap(), 0.0);
        let a = relative_logit(&p, &r, 0.7, &x, -0.4).unwrap();
        let b = relative_logit(&p, &r, 1.4, &x, -0.4).unwrap();
        assert!((b - 2.0 * a).abs() < 1e-15);
        assert!(relative_logit(&p, &r, 0.0, &x, 1.0).is_err());
    }

    #[test]
    fn sample_response_determinism_and_degenerate_sigma() {
        let p = GaussianLinearPolicy::new(v(&[1.0, 2.0]), 0.5).unwrap();
        let x = v(&[0.3, -0.1]);
        let a = p.sample_response(&x, &mut Stream::new(99)).unwrap();
        let b = p.sample_response(&x, &mut Stream::new(99)).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
        let tiny = GaussianLinearPolicy::new(v(&[1.0, 2.0]), 1e-200).unwrap();
        assert_eq!(tiny.sample_response(&x, &mut Stream::new(1)).unwrap(), tiny.mean(&x));
    }

    #[test]
    fn sample_response_moments() {
        // 10^6 draws: mean 3 ± 0.01 and variance σ² within 1% relative.
        let p = GaussianLinearPolicy::new(v(&[1.0]), 2.0).unwrap();
        let x = v(&[3.0]);
        let mut s = Stream::new(2024);
        let n = 1_000_000;
        let (mut sum, mut sum_sq) = (0.0, 0.0);
        for _ in 0..n {
            let y = p.sample_response(&x, &mut s).unwrap();
            sum += y;
            sum_sq += y * y;
        }
        let mean = sum / n as f64;
        let var = sum_sq / n as f64 - mean * mean;
        assert!((mean - 3.0).abs() < 0.01, "mean {mean}");
        assert!(((var - 4.0) / 4.0).abs() < 0.01, "var {var}");
    }

    #[test]
    fn dataset_rejects_mixed_dims() {
        let t1 = PreferenceTuple { x: v(&[1.0]), y_w: 0.0, y_l: 1.0 };
        let t2 = PreferenceTuple { x: v(&[1.0, 2.0]), y_w: 0.0, y_l: 1.0 };
        assert!(PreferenceDataset::new(vec![t1, t2], 0).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn relative_logit_matches_log_density_difference(
                w in prop::collection::vec(-3.0f64..3.0, 3),
                w_ref in prop::collection::vec(-3.0f64..3.0, 3),
                x in prop::collection::vec(-2.0f64..2.0, 3),
                s in 0.2f64..3.0,
                s_ref in 0.2f64..3.0,
                beta in 0.05f64..5.0,
                y in -5.0f64..5.0,
            ) {
                let p = GaussianLinearPolicy::new(Vector::new(w).unwrap(), s).unwrap();
                let r = GaussianLinearPolicy::new(Vector::new(w_ref).unwrap(), s_ref).unwrap();
                let x = Vector::new(x).unwrap();
                let direct = relative_logit(&p, &r, beta, &x, y).unwrap();
                let via_density = beta * (p.log_density(&x, y).unwrap() - r.log_density(&x, y).unwrap());
                let scale = 1.0f64.max(direct.abs());
                prop_assert!((direct - via_density).abs() <= 1e-12 * scale);
            }
        }
    }
}
