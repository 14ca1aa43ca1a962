//! Closed-form oracles for the Gaussian linear model: the KL-regularized optimum, the online
//! recursion, the best-of-K amplification factors η and γ, the Fisher matrix at the
//! reference point and the matching gradient-norm bound.

use crate::error::{contract, Result};
use crate::model::{GaussianLinearPolicy, RewardOracle, Vector};
use crate::quadrature::Quadrature;
use crate::rng::Stream;
use crate::sampling::{best_of_k_noise_pdf, LabeledPairDensityQuery};
use crate::special::{mean_abs_deviation, two_over_sqrt_pi};
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

fn check_beta(beta: f64) -> Result<()> {
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(contract(format!("beta must be positive and finite, got {beta}")));
    }
    Ok(())
}

/// Mixing weight `β / (β + 2σ_ref²)` kept on the reference weights.
pub fn mixing_weight(beta: f64, sigma_ref: f64) -> f64 {
    beta / (beta + 2.0 * sigma_ref * sigma_ref)
}

/// Maximizer of `E[r*] - β KL(π || π_ref)`: mean `(γ w_ref + (1-γ) w*)ᵀx`,
/// variance `σ_ref² β / (β + 2σ_ref²)`.
pub fn rlhf_closed_form(reference: &GaussianLinearPolicy, oracle: &RewardOracle, beta: f64) -> Result<GaussianLinearPolicy> {
    check_beta(beta)?;
    if reference.dim() != oracle.dim() {
        return Err(contract("rlhf_closed_form: dimension mismatch"));
    }
    let s2 = reference.sigma() * reference.sigma();
    let g = mixing_weight(beta, reference.sigma());
    let w = reference.w().scaled(g).axpy(1.0 - g, oracle.w_star());
    GaussianLinearPolicy::new(w, (s2 * beta / (beta + 2.0 * s2)).sqrt())
}

/// KL-regularized objective in closed form for prompts `x ~ N(0, I)`.
pub fn rlhf_objective(policy: &GaussianLinearPolicy, reference: &GaussianLinearPolicy, oracle: &RewardOracle, beta: f64) -> f64 {
    let (s, sr) = (policy.sigma(), reference.sigma());
    let reward = -(policy.w().dist_sq(oracle.w_star()) + s * s);
    let kl = (sr / s).ln() + (s * s + policy.w().dist_sq(reference.w())) / (2.0 * sr * sr) - 0.5;
    reward - beta * kl
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub samples: usize,
}

impl McEstimate {
    fn from_sums(sum: f64, sum_sq: f64, n: usize) -> Self {
        let nf = n as f64;
        let mean = sum / nf;
        let var = ((sum_sq - nf * mean * mean) / (nf - 1.0)).max(0.0);
        Self { mean, stderr: (var / nf).sqrt(), samples: n }
    }
}

/// Monte-Carlo estimate of the KL-regularized objective with `x ~ N(0, I)`, `y ~ π`, using
/// the single-sample log-ratio as the KL estimate. Draw `i` uses `stream.split(i)`, so two
/// policies evaluated with the same stream share their underlying normals.
pub fn rlhf_objective_monte_carlo(
    policy: &GaussianLinearPolicy,
    reference: &GaussianLinearPolicy,
    oracle: &RewardOracle,
    beta: f64,
    samples: usize,
    stream: &Stream,
) -> Result<McEstimate> {
    check_beta(beta)?;
    if samples < 2 {
        return Err(contract("need at least two samples"));
    }
    let d = oracle.dim();
    if policy.dim() != d || reference.dim() != d {
        return Err(contract("rlhf_objective_monte_carlo: dimension mismatch"));
    }
    let (sum, sum_sq) = chunked_sums(samples, stream, |s| {
        let x = Vector::gaussian(d, s);
        let y = policy.mean(&x) + policy.sigma() * s.normal();
        oracle.reward_unchecked(&x, y)
            - beta * (policy.log_density_unchecked(&x, y) - reference.log_density_unchecked(&x, y))
    });
    Ok(McEstimate::from_sums(sum, sum_sq, samples))
}

const MC_CHUNK: usize = 1 << 14;

/// Sums of `draw` and its square over `samples` draws, chunked with one split stream per
/// chunk and combined in chunk order.
fn chunked_sums<F>(samples: usize, stream: &Stream, draw: F) -> (f64, f64)
where
    F: Fn(&mut Stream) -> f64 + Sync,
{
    let chunks = samples.div_ceil(MC_CHUNK);
    let parts: Vec<(f64, f64)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut s = stream.split(c as u64);
            let n = MC_CHUNK.min(samples - c * MC_CHUNK);
            (0..n).fold((0.0, 0.0), |(a, b), _| {
                let v = draw(&mut s);
                (a + v, b + v * v)
            })
        })
        .collect();
    parts.iter().fold((0.0, 0.0), |(a, b), (u, v)| (a + u, b + v))
}

/// Closed-form iterate after `t` rounds of exact online optimization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OnlineRecursionState {
    pub w_t: Vector,
    pub sigma_t: f64,
    pub t: usize,
    pub beta: f64,
    pub w0: Vector,
    pub sigma0: f64,
    pub w_star: Vector,
}

impl OnlineRecursionState {
    pub fn policy(&self) -> Result<GaussianLinearPolicy> {
        GaussianLinearPolicy::new(self.w_t.clone(), self.sigma_t)
    }

    pub fn dist_to_star(&self) -> f64 {
        self.w_t.dist_sq(&self.w_star)
    }

    /// `(w_t - w*)ᵀx / σ_t`.
    pub fn delta(&self, x: &Vector) -> f64 {
        (self.w_t.dot(x) - self.w_star.dot(x)) / self.sigma_t
    }
}

/// `w_t = w* + β/(β + 2tσ₀²) (w₀ - w*)`, `σ_t² = βσ₀²/(β + 2tσ₀²)`.
pub fn online_recursion(w0: &Vector, sigma0: f64, beta: f64, t: usize, oracle: &RewardOracle) -> Result<OnlineRecursionState> {
    check_beta(beta)?;
    if !(sigma0 > 0.0) || !sigma0.is_finite() {
        return Err(contract("sigma0 must be positive"));
    }
    if w0.dim() != oracle.dim() {
        return Err(contract("online_recursion: dimension mismatch"));
    }
    let w_star = oracle.w_star().clone();
    let (w_t, sigma_t) = if t == 0 {
        (w0.clone(), sigma0)
    } else {
        let s2 = sigma0 * sigma0;
        let denom = beta + 2.0 * t as f64 * s2;
        (w_star.axpy(beta / denom, &w0.sub(&w_star)), (beta * s2 / denom).sqrt())
    };
    Ok(OnlineRecursionState { w_t, sigma_t, t, beta, w0: w0.clone(), sigma0, w_star })
}

/// `η = E[ε₁²]` and `γ = E|ε₁ - ε₂|` for the best-of-K selected noise `ε₁` and an independent
/// standard normal `ε₂`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AmplificationFactors {
    pub eta: f64,
    pub gamma: f64,
    pub k: usize,
    pub delta: f64,
    /// Sum of the two quadrature error estimates.
    pub quad_error_estimate: f64,
}

fn amplification_breaks(delta: f64) -> Vec<f64> {
    let half = 12.0 + delta.abs();
    let mut b = vec![-half, -delta, 0.0, half];
    b.sort_by(f64::total_cmp);
    b.dedup();
    b
}

pub fn amplification(k: usize, delta: f64) -> Result<AmplificationFactors> {
    let q = LabeledPairDensityQuery::new(delta, k)?;
    let quad = Quadrature::default();
    let breaks = amplification_breaks(delta);
    let eta = quad.integrate_with_breaks(|u| u * u * best_of_k_noise_pdf(&q, u), &breaks)?;
    let gamma = quad.integrate_with_breaks(|u| mean_abs_deviation(u) * best_of_k_noise_pdf(&q, u), &breaks)?;
    Ok(AmplificationFactors {
        eta: eta.value,
        gamma: gamma.value,
        k,
        delta,
        quad_error_estimate: eta.error_estimate + gamma.error_estimate,
    })
}

pub fn eta(k: usize, delta: f64) -> Result<f64> {
    Ok(amplification(k, delta)?.eta)
}

pub fn gamma(k: usize, delta: f64) -> Result<f64> {
    Ok(amplification(k, delta)?.gamma)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AmplificationMc {
    pub eta: McEstimate,
    pub gamma: McEstimate,
}

/// Direct simulation of η and γ: draw `k` standard normals, keep the one minimizing
/// `|δ + ε|` (lowest index on ties), pair it with a fresh normal.
pub fn amplification_monte_carlo(k: usize, delta: f64, samples: usize, stream: &Stream) -> Result<AmplificationMc> {
    LabeledPairDensityQuery::new(delta, k)?;
    if samples < 2 {
        return Err(contract("need at least two samples"));
    }
    let chunks = samples.div_ceil(MC_CHUNK);
    let parts: Vec<[f64; 4]> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut s = stream.split(c as u64);
            let n = MC_CHUNK.min(samples - c * MC_CHUNK);
            let mut acc = [0.0; 4];
            for _ in 0..n {
                let mut e1 = s.normal();
                let mut best = (delta + e1).abs();
                for _ in 1..k {
                    let e = s.normal();
                    let d = (delta + e).abs();
                    if d < best {
                        best = d;
                        e1 = e;
                    }
                }
                let e2 = s.normal();
                let sq = e1 * e1;
                let ab = (e1 - e2).abs();
                acc[0] += sq;
                acc[1] += sq * sq;
                acc[2] += ab;
                acc[3] += ab * ab;
            }
            acc
        })
        .collect();
    let tot = parts.iter().fold([0.0; 4], |mut a, p| {
        for i in 0..4 {
            a[i] += p[i];
        }
        a
    });
    Ok(AmplificationMc {
        eta: McEstimate::from_sums(tot[0], tot[1], samples),
        gamma: McEstimate::from_sums(tot[2], tot[3], samples),
    })
}

fn check_prompts(prompts: &[Vector], state: &OnlineRecursionState) -> Result<()> {
    if prompts.is_empty() {
        return Err(contract("prompts must be non-empty"));
    }
    if prompts.iter().any(|x| x.dim() != state.w_t.dim()) {
        return Err(contract("prompt dimension differs from the state"));
    }
    Ok(())
}

/// `β²/(4Nσ²) Σ (η_n + 1) x_n x_nᵀ` for supplied per-prompt η values.
pub fn fisher_matrix_from_etas(prompts: &[Vector], sigma: f64, beta: f64, etas: &[f64]) -> Result<DMatrix<f64>> {
    if prompts.is_empty() || etas.len() != prompts.len() {
        return Err(contract("need one eta per prompt"));
    }
    let d = prompts[0].dim();
    let mut m = DMatrix::zeros(d, d);
    for (x, eta) in prompts.iter().zip(etas) {
        let xv = nalgebra::DVector::from_column_slice(x.as_slice());
        m += (eta + 1.0) * &xv * xv.transpose();
    }
    Ok(m * (beta * beta / (4.0 * prompts.len() as f64 * sigma * sigma)))
}

/// Expected DPO Hessian at the reference point for data drawn with the given `k`.
pub fn fisher_matrix(prompts: &[Vector], state: &OnlineRecursionState, k: usize) -> Result<DMatrix<f64>> {
    check_prompts(prompts, state)?;
    if k == 0 {
        return Err(contract("k must be at least 1"));
    }
    let (beta, sigma) = (state.beta, state.sigma_t);
    if k == 1 {
        let d = state.w_t.dim();
        let mut m = DMatrix::zeros(d, d);
        for x in prompts {
            let xv = nalgebra::DVector::from_column_slice(x.as_slice());
            m += &xv * xv.transpose();
        }
        return Ok(m * (beta * beta / (2.0 * prompts.len() as f64 * sigma * sigma)));
    }
    let etas = prompts
        .par_iter()
        .map(|x| eta(k, state.delta(x)))
        .collect::<Result<Vec<_>>>()?;
    fisher_matrix_from_etas(prompts, sigma, beta, &etas)
}

/// `β/(2Nσ) Σ γ(K, δ(x_n)) ‖x_n‖`. For `k = 1`, γ is the constant `E|ε₁ - ε₂| = 2/√π`,
/// taken from quadrature.
pub fn grad_norm_bound(prompts: &[Vector], state: &OnlineRecursionState, k: usize) -> Result<f64> {
    check_prompts(prompts, state)?;
    let gammas: Vec<f64> = if k == 1 {
        let c1 = gamma(1, 0.0)?;
        vec![c1; prompts.len()]
    } else {
        prompts
            .par_iter()
            .map(|x| gamma(k, state.delta(x)))
            .collect::<Result<Vec<_>>>()?
    };
    Ok(bound_from_gammas(prompts, state, &gammas))
}

/// The `k = 1` bound written with the constant `1/√π` instead of `2/√π`. Half the valid bound;
/// kept for comparison only.
pub fn grad_norm_bound_inv_sqrt_pi(prompts: &[Vector], state: &OnlineRecursionState) -> Result<f64> {
    check_prompts(prompts, state)?;
    Ok(bound_from_gammas(prompts, state, &vec![1.0 / PI.sqrt(); prompts.len()]))
}

fn bound_from_gammas(prompts: &[Vector], state: &OnlineRecursionState, gammas: &[f64]) -> f64 {
    let s: f64 = prompts.iter().zip(gammas).map(|(x, g)| g * x.norm()).sum();
    state.beta / (2.0 * prompts.len() as f64 * state.sigma_t) * s
}

/// Small-bias behaviour of η and γ for one `k ≥ 2`. Outcomes are recorded, not enforced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmallDeltaReport {
    pub k: usize,
    pub delta: f64,
    pub eta: f64,
    pub gamma: f64,
    pub eta_at_zero: f64,
    pub gamma_at_zero: f64,
    /// `√(2/π) - 1e-3`
    pub gamma_threshold: f64,
    /// `½ + 1e-3`
    pub eta_threshold: f64,
    pub gamma_pass: bool,
    pub eta_pass: bool,
    pub continuity_pass: bool,
}

pub fn small_delta_checks(k: usize) -> Result<SmallDeltaReport> {
    if k < 2 {
        return Err(contract("small-delta checks apply to k >= 2 only"));
    }
    let delta = 1e-4;
    let at = amplification(k, delta)?;
    let zero = amplification(k, 0.0)?;
    let gamma_threshold = (2.0 / PI).sqrt() - 1e-3;
    let eta_threshold = 0.5 + 1e-3;
    Ok(SmallDeltaReport {
        k,
        delta,
        eta: at.eta,
        gamma: at.gamma,
        eta_at_zero: zero.eta,
        gamma_at_zero: zero.gamma,
        gamma_threshold,
        eta_threshold,
        gamma_pass: at.gamma >= gamma_threshold,
        eta_pass: at.eta <= eta_threshold,
        continuity_pass: (at.eta - zero.eta).abs() < 1e-3 && (at.gamma - zero.gamma).abs() < 1e-3,
    })
}

/// The `k = 1` gradient constant `γ(1, ·)`.
pub fn standard_gradient_constant() -> f64 {
    two_over_sqrt_pi()
}
