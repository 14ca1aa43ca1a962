//! DPO in the Gaussian linear model: loss, per-sample derivatives in closed form, batch
//! gradient descent on `w` and the online loop that regenerates data from the latest policy.

use crate::analytic::{grad_norm_bound, online_recursion, rlhf_closed_form, OnlineRecursionState};
use crate::error::{contract, LabError, Result};
use crate::model::{relative_logit_unchecked, GaussianLinearPolicy, PreferenceDataset, PreferenceTuple, RewardOracle, Vector};
use crate::rng::Stream;
use crate::sampling::{generate_dataset, SamplerSpec};
use crate::special::{log_sigmoid, sigmoid};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Weight norm beyond which training is declared divergent.
pub const DIVERGENCE_LIMIT: f64 = 1e8;

/// Fixed reduction block; sums are formed per block and then combined in block order, so the
/// result does not depend on the number of worker threads.
const REDUCE_BLOCK: usize = 256;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub beta: f64,
    pub alpha: f64,
    pub steps_per_round: usize,
    pub rounds: usize,
    pub n_tuples: usize,
    pub sampler: SamplerSpec,
    pub seed: u64,
    /// Replace gradient steps by the closed-form round minimizer.
    pub exact_minimization: bool,
    /// Train σ by gradient descent as well, instead of setting it in closed form.
    pub joint_sigma: bool,
    /// Cycle through contiguous minibatches of this size instead of full-batch steps.
    pub batch_size: Option<usize>,
    /// Evaluate the gradient-norm bound at each round's reference (one quadrature per prompt).
    pub record_bound: bool,
}

impl TrainConfig {
    pub fn new(beta: f64, alpha: f64, steps_per_round: usize, rounds: usize, n_tuples: usize, sampler: SamplerSpec, seed: u64) -> Self {
        Self {
            beta,
            alpha,
            steps_per_round,
            rounds,
            n_tuples,
            sampler,
            seed,
            exact_minimization: false,
            joint_sigma: false,
            batch_size: None,
            record_bound: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0) || !self.beta.is_finite() {
            return Err(contract(format!("beta must be positive, got {}", self.beta)));
        }
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return Err(contract(format!("alpha must be non-negative, got {}", self.alpha)));
        }
        if self.n_tuples == 0 {
            return Err(contract("n_tuples must be positive"));
        }
        if self.batch_size == Some(0) {
            return Err(contract("batch_size must be positive"));
        }
        Ok(())
    }
}

fn check_pair(policy: &GaussianLinearPolicy, reference: &GaussianLinearPolicy, beta: f64) -> Result<()> {
    if policy.dim() != reference.dim() {
        return Err(contract("policy and reference dimensions differ"));
    }
    if !(beta > 0.0) {
        return Err(contract(format!("beta must be positive, got {beta}")));
    }
    Ok(())
}

fn check_tuple(policy: &GaussianLinearPolicy, t: &PreferenceTuple) -> Result<()> {
    if t.x.dim() != policy.dim() {
        return Err(contract("tuple prompt dimension differs from the policy"));
    }
    Ok(())
}

/// `f(x, y_w) - f(x, y_l)`
pub fn logit_gap(policy: &GaussianLinearPolicy, reference: &GaussianLinearPolicy, beta: f64, t: &PreferenceTuple) -> f64 {
    relative_logit_unchecked(policy, reference, beta, &t.x, t.y_w) - relative_logit_unchecked(policy, reference, beta, &t.x, t.y_l)
}

pub fn dpo_loss(policy: &GaussianLinearPolicy, reference: &GaussianLinearPolicy, beta: f64, dataset: &PreferenceDataset) -> Result<f64> {
    check_pair(policy, reference, beta)?;
    dataset.require_non_empty()?;
    check_tuple(policy, &dataset.tuples[0])?;
    let terms: Vec<f64> = dataset
        .tuples
        .iter()
        .map(|t| -log_sigmoid(logit_gap(policy, reference, beta, t)))
        .collect();
    Ok(block_sum(&terms) / dataset.len() as f64)
}

fn block_sum(values: &[f64]) -> f64 {
    values.chunks(REDUCE_BLOCK).map(|c| c.iter().sum::<f64>()).sum()
}

/// Scalar `c` with `∇_w ℓ = c x`: `c = -(1 - σ(Δf)) β (y_w - y_l) / σ²`.
pub fn grad_coefficient(policy: &GaussianLinearPolicy, reference: &GaussianLinearPolicy, beta: f64, t: &PreferenceTuple) -> f64 {
    let s2 = policy.sigma() * policy.sigma();
    -sigmoid(-logit_gap(policy, reference, beta, t)) * beta * (t.y_w - t.y_l) / s2
}

pub fn per_sample_grad(policy: &GaussianLinearPolicy, reference: &GaussianLinearPolicy, beta: f64, t: &PreferenceTuple) -> Result<Vector> {
    check_pair(policy, reference, beta)?;
    check_tuple(policy, t)?;
    Ok(t.x.scaled(grad_coefficient(policy, reference, beta, t)))
}

/// `σ(Δf)(1 - σ(Δf)) β² (y_w - y_l)² / σ⁴ · x xᵀ`
pub fn per_sample_hessian(
    policy: &GaussianLinearPolicy,
    reference: &GaussianLinearPolicy,
    beta: f64,
    t: &PreferenceTuple,
) -> Result<DMatrix<f64>> {
    check_pair(policy, reference, beta)?;
    check_tuple(policy, t)?;
    let s = sigmoid(logit_gap(policy, reference, beta, t));
    let s4 = policy.sigma().powi(4);
    let dy = t.y_w - t.y_l;
    let c = s * (1.0 - s) * beta * beta * dy * dy / s4;
    let x = DVector::from_column_slice(t.x.as_slice());
    Ok(c * &x * x.transpose())
}

/// Derivative of the per-sample loss with respect to σ.
pub fn per_sample_sigma_grad(policy: &GaussianLinearPolicy, reference: &GaussianLinearPolicy, beta: f64, t: &PreferenceTuple) -> f64 {
    let rw = t.y_w - policy.mean(&t.x);
    let rl = t.y_l - policy.mean(&t.x);
    -sigmoid(-logit_gap(policy, reference, beta, t)) * beta * (rw * rw - rl * rl) / policy.sigma().powi(3)
}

/// Mean per-sample gradient over `tuples`, reduced in a fixed order.
pub fn mean_grad(policy: &GaussianLinearPolicy, reference: &GaussianLinearPolicy, beta: f64, tuples: &[PreferenceTuple]) -> Vector {
    let d = policy.dim();
    let blocks: Vec<Vec<f64>> = tuples
        .par_chunks(REDUCE_BLOCK)
        .map(|chunk| {
            let mut acc = vec![0.0; d];
            for t in chunk {
                let c = grad_coefficient(policy, reference, beta, t);
                for (a, xi) in acc.iter_mut().zip(t.x.as_slice()) {
                    *a += c * xi;
                }
            }
            acc
        })
        .collect();
    let mut total = vec![0.0; d];
    for b in &blocks {
        for (t, v) in total.iter_mut().zip(b) {
            *t += v;
        }
    }
    let n = tuples.len() as f64;
    Vector::new(total.into_iter().map(|v| v / n).collect()).unwrap_or_else(|_| Vector::zeros(d))
}

fn mean_sigma_grad(policy: &GaussianLinearPolicy, reference: &GaussianLinearPolicy, beta: f64, tuples: &[PreferenceTuple]) -> f64 {
    let terms: Vec<f64> = tuples
        .iter()
        .map(|t| per_sample_sigma_grad(policy, reference, beta, t))
        .collect();
    block_sum(&terms) / tuples.len() as f64
}

/// Per-round training summary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub empirical_loss: f64,
    /// Norm of the mean gradient at the reference point.
    pub grad_norm_at_reference: f64,
    pub steps: usize,
}

fn batch(tuples: &[PreferenceTuple], step: usize, size: Option<usize>) -> std::borrow::Cow<'_, [PreferenceTuple]> {
    match size {
        None => std::borrow::Cow::Borrowed(tuples),
        Some(b) if b >= tuples.len() => std::borrow::Cow::Borrowed(tuples),
        Some(b) => {
            let n = tuples.len();
            let start = (step * b) % n;
            if start + b <= n {
                std::borrow::Cow::Borrowed(&tuples[start..start + b])
            } else {
                let mut v = tuples[start..].to_vec();
                v.extend_from_slice(&tuples[..start + b - n]);
                std::borrow::Cow::Owned(v)
            }
        }
    }
}

/// Trains one round against `reference`, starting from `policy_in`. Unless joint σ training
/// is on, σ is set to `σ_ref² β / (β + 2σ_ref²)` and only `w` is learned.
pub fn train_round(
    policy_in: &GaussianLinearPolicy,
    reference: &GaussianLinearPolicy,
    oracle: &RewardOracle,
    config: &TrainConfig,
    dataset: &PreferenceDataset,
    round: usize,
) -> Result<(GaussianLinearPolicy, TrainOutcome)> {
    config.validate()?;
    check_pair(policy_in, reference, config.beta)?;
    dataset.require_non_empty()?;
    check_tuple(policy_in, &dataset.tuples[0])?;
    let beta = config.beta;
    let grad_norm_at_reference = mean_grad(reference, reference, beta, &dataset.tuples).norm();

    if config.exact_minimization {
        let out = rlhf_closed_form(reference, oracle, beta)?;
        let loss = dpo_loss(&out, reference, beta, dataset)?;
        return Ok((out, TrainOutcome { empirical_loss: loss, grad_norm_at_reference, steps: 0 }));
    }

    let mut policy = if config.joint_sigma {
        policy_in.clone()
    } else {
        let s2 = reference.sigma() * reference.sigma();
        GaussianLinearPolicy::new(policy_in.w().clone(), (s2 * beta / (beta + 2.0 * s2)).sqrt())?
    };
    for step in 0..config.steps_per_round {
        let tuples = batch(&dataset.tuples, step, config.batch_size);
        let g = mean_grad(&policy, reference, beta, &tuples);
        let w = policy.w().axpy(-config.alpha, &g);
        let norm = w.norm();
        if !w.is_finite() || !norm.is_finite() || norm > DIVERGENCE_LIMIT {
            return Err(LabError::Divergence { round, step, weight_norm: norm, limit: DIVERGENCE_LIMIT });
        }
        let sigma = if config.joint_sigma {
            let s = policy.sigma() - config.alpha * mean_sigma_grad(&policy, reference, beta, &tuples);
            if !(s > 0.0) || !s.is_finite() {
                return Err(LabError::Divergence { round, step, weight_norm: norm, limit: DIVERGENCE_LIMIT });
            }
            s
        } else {
            policy.sigma()
        };
        policy = GaussianLinearPolicy::new(w, sigma)?;
    }
    let loss = dpo_loss(&policy, reference, beta, dataset)?;
    Ok((policy, TrainOutcome { empirical_loss: loss, grad_norm_at_reference, steps: config.steps_per_round }))
}

/// Where each round's prompts come from.
#[derive(Clone, Debug, PartialEq)]
pub enum PromptSource {
    /// The same prompt set every round.
    Fixed(Vec<Vector>),
    /// `n_tuples` fresh standard-normal prompts per round.
    FreshGaussian { dim: usize },
}

impl PromptSource {
    /// `n` standard-normal prompts drawn once from `seed`.
    pub fn fixed_gaussian(n: usize, dim: usize, seed: u64) -> Self {
        let mut s = Stream::new(seed);
        Self::Fixed((0..n).map(|_| Vector::gaussian(dim, &mut s)).collect())
    }

    fn prompts(&self, n: usize, stream: &Stream) -> Vec<Vector> {
        match self {
            Self::Fixed(p) => p.clone(),
            Self::FreshGaussian { dim } => {
                let mut s = stream.clone();
                (0..n).map(|_| Vector::gaussian(*dim, &mut s)).collect()
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub t: usize,
    pub k: usize,
    pub steps: usize,
    pub w_t: Vector,
    pub sigma_t: f64,
    pub empirical_loss: f64,
    pub grad_norm: f64,
    pub grad_norm_bound: Option<f64>,
    /// `‖w_t - w*‖²`
    pub dist_to_star: f64,
    /// `‖w_t - w*‖²` predicted by the closed-form recursion.
    pub closed_form_dist: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OnlineRun {
    pub records: Vec<RoundRecord>,
    pub final_policy: GaussianLinearPolicy,
}

/// Online DPO: each round regenerates data from the current policy, uses that policy as the
/// reference, and trains a new one.
pub fn online_dpo(
    config: &TrainConfig,
    oracle: &RewardOracle,
    prompts: &PromptSource,
    w0: &Vector,
    sigma0: f64,
) -> Result<OnlineRun> {
    config.validate()?;
    let mut policy = GaussianLinearPolicy::new(w0.clone(), sigma0)?;
    if policy.dim() != oracle.dim() {
        return Err(contract("initial weights and oracle dimensions differ"));
    }
    if let PromptSource::Fixed(p) = prompts {
        if p.is_empty() || p.iter().any(|x| x.dim() != oracle.dim()) {
            return Err(contract("fixed prompt set must be non-empty with matching dimension"));
        }
    }
    let root = Stream::new(config.seed);
    let mut records = Vec::with_capacity(config.rounds);
    for t in 0..config.rounds {
        let reference = policy.clone();
        let xs = prompts.prompts(config.n_tuples, &root.split_path(&[1, t as u64]));
        let data = generate_dataset(&reference, oracle, &xs, config.sampler, &root.split_path(&[2, t as u64]))?;
        let bound = if config.record_bound {
            let st = OnlineRecursionState {
                w_t: reference.w().clone(),
                sigma_t: reference.sigma(),
                t,
                beta: config.beta,
                w0: w0.clone(),
                sigma0,
                w_star: oracle.w_star().clone(),
            };
            Some(grad_norm_bound(&xs, &st, config.sampler.k())?)
        } else {
            None
        };
        let (next, outcome) = train_round(&reference, &reference, oracle, config, &data, t + 1)?;
        let predicted = online_recursion(w0, sigma0, config.beta, t + 1, oracle)?;
        records.push(RoundRecord {
            t: t + 1,
            k: config.sampler.k(),
            steps: outcome.steps,
            w_t: next.w().clone(),
            sigma_t: next.sigma(),
            empirical_loss: outcome.empirical_loss,
            grad_norm: outcome.grad_norm_at_reference,
            grad_norm_bound: bound,
            dist_to_star: next.w().dist_sq(oracle.w_star()),
            closed_form_dist: predicted.dist_to_star(),
        });
        policy = next;
    }
    Ok(OnlineRun { records, final_policy: policy })
}

/// Mean change of the relative logit on preferred and dispreferred responses after one
/// full-batch step on `w` from the reference (σ held at `σ_ref`).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogitChange {
    pub mean_df_w: f64,
    pub mean_df_l: f64,
}

pub fn batch_step_logit_change(
    reference: &GaussianLinearPolicy,
    beta: f64,
    alpha: f64,
    dataset: &PreferenceDataset,
) -> Result<LogitChange> {
    dataset.require_non_empty()?;
    check_tuple(reference, &dataset.tuples[0])?;
    let g = mean_grad(reference, reference, beta, &dataset.tuples);
    let stepped = reference.with_w(reference.w().axpy(-alpha, &g))?;
    let n = dataset.len() as f64;
    let (mut w, mut l) = (0.0, 0.0);
    for t in &dataset.tuples {
        w += relative_logit_unchecked(&stepped, reference, beta, &t.x, t.y_w);
        l += relative_logit_unchecked(&stepped, reference, beta, &t.x, t.y_l);
    }
    Ok(LogitChange { mean_df_w: w / n, mean_df_l: l / n })
}
