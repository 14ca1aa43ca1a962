//! Logit policies on a finite instance and their population / empirical DPO gradients.
//!
//! Tables are indexed `[x][y]`. With the direct parameterization the trainable values are the
//! relative logits `f(x, y)` themselves, so a gradient step moves each `f` by exactly
//! `-α ∂L/∂f`.

use super::instance::DiscreteInstance;
use crate::error::{contract, Result};
use crate::model::Vector;
use crate::rng::Stream;
use crate::sampling::labeled_pair_table;
use crate::special::{log_sigmoid, sigmoid};
use serde::{Deserialize, Serialize};

pub type Table = Vec<Vec<f64>>;

fn check_shape(instance: &DiscreteInstance, table: &Table, what: &str) -> Result<()> {
    if table.len() != instance.n_prompts()
        || table.iter().enumerate().any(|(x, row)| row.len() != instance.n_responses(x))
    {
        return Err(contract(format!("{what}: table shape does not match the instance")));
    }
    Ok(())
}

fn check_beta(beta: f64) -> Result<()> {
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(contract(format!("beta must be positive and finite, got {beta}")));
    }
    Ok(())
}

/// Induced `π(y|x) ∝ π_ref(y|x) exp(f(x,y)/β)`, zero off the reference support.
pub fn induced_probabilities(instance: &DiscreteInstance, f: &Table, beta: f64) -> Table {
    (0..instance.n_prompts())
        .map(|x| {
            let n = instance.n_responses(x);
            let logits: Vec<Option<f64>> = (0..n)
                .map(|y| {
                    let r = instance.ref_prob(x, y);
                    (r > 0.0).then(|| r.ln() + f[x][y] / beta)
                })
                .collect();
            let max = logits.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
            let weights: Vec<f64> = logits.iter().map(|l| l.map_or(0.0, |l| (l - max).exp())).collect();
            let z: f64 = weights.iter().sum();
            weights.into_iter().map(|w| w / z).collect()
        })
        .collect()
}

/// Tabular policy whose parameters are the relative logits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectLogitPolicy {
    f: Table,
    beta: f64,
}

impl DirectLogitPolicy {
    pub fn new(instance: &DiscreteInstance, f: Table, beta: f64) -> Result<Self> {
        check_beta(beta)?;
        check_shape(instance, &f, "direct logit policy")?;
        if f.iter().flatten().any(|v| !v.is_finite()) {
            return Err(contract("logits must be finite"));
        }
        Ok(Self { f, beta })
    }

    /// `f ≡ 0`, i.e. the policy equals the reference.
    pub fn reference(instance: &DiscreteInstance, beta: f64) -> Result<Self> {
        Self::new(instance, instance.table(0.0), beta)
    }

    /// `f = r* + c(x)`.
    pub fn from_rewards(instance: &DiscreteInstance, shifts: &[f64], beta: f64) -> Result<Self> {
        if shifts.len() != instance.n_prompts() {
            return Err(contract("one shift per prompt expected"));
        }
        let f = instance
            .reward_table()
            .into_iter()
            .zip(shifts)
            .map(|(row, c)| row.into_iter().map(|r| r + c).collect())
            .collect();
        Self::new(instance, f, beta)
    }

    pub fn f(&self) -> &Table {
        &self.f
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn logit(&self, x: usize, y: usize) -> f64 {
        self.f[x][y]
    }

    pub fn probabilities(&self, instance: &DiscreteInstance) -> Table {
        induced_probabilities(instance, &self.f, self.beta)
    }

    /// Adds `delta` to every logit.
    pub fn shifted(&self, delta: &Table) -> Self {
        let f = self
            .f
            .iter()
            .zip(delta)
            .map(|(row, d)| row.iter().zip(d).map(|(a, b)| a + b).collect())
            .collect();
        Self { f, beta: self.beta }
    }
}

/// Linear logits `f(x,y) = θᵀφ(x,y)` over shared features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeaturizedLogitPolicy {
    pub theta: Vector,
    pub features: Vec<Vec<Vector>>,
    pub beta: f64,
}

impl FeaturizedLogitPolicy {
    pub fn new(instance: &DiscreteInstance, theta: Vector, features: Vec<Vec<Vector>>, beta: f64) -> Result<Self> {
        check_beta(beta)?;
        if features.len() != instance.n_prompts()
            || features.iter().enumerate().any(|(x, row)| row.len() != instance.n_responses(x))
        {
            return Err(contract("feature table shape does not match the instance"));
        }
        if features.iter().flatten().any(|phi| phi.dim() != theta.dim()) {
            return Err(contract("feature and parameter dimensions differ"));
        }
        Ok(Self { theta, features, beta })
    }

    pub fn logits(&self) -> Table {
        self.features
            .iter()
            .map(|row| row.iter().map(|phi| self.theta.dot(phi)).collect())
            .collect()
    }

    pub fn probabilities(&self, instance: &DiscreteInstance) -> Table {
        induced_probabilities(instance, &self.logits(), self.beta)
    }

    /// Gradient of the empirical DPO loss with respect to θ.
    pub fn empirical_gradient(&self, dataset: &[DiscreteTuple]) -> Result<Vector> {
        if dataset.is_empty() {
            return Err(contract("dataset must be non-empty"));
        }
        let f = self.logits();
        let n = dataset.len() as f64;
        let mut g = vec![0.0; self.theta.dim()];
        for t in dataset {
            let c = -sigmoid(f[t.x][t.y_l] - f[t.x][t.y_w]) / n;
            let (pw, pl) = (&self.features[t.x][t.y_w], &self.features[t.x][t.y_l]);
            for (i, gi) in g.iter_mut().enumerate() {
                *gi += c * (pw[i] - pl[i]);
            }
        }
        Vector::new(g)
    }

    pub fn step(&self, dataset: &[DiscreteTuple], alpha: f64) -> Result<Self> {
        let g = self.empirical_gradient(dataset)?;
        Ok(Self {
            theta: self.theta.axpy(-alpha, &g),
            features: self.features.clone(),
            beta: self.beta,
        })
    }
}

/// Winning probabilities of `y` at prompt `x` against `Y2 ~ q(y, ·) / Σ q(y, ·)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum WinningProbabilities {
    InSupport { p_true: f64, p_model: f64, marginal: f64 },
    OffSupport,
}

impl WinningProbabilities {
    pub fn gap(&self) -> Option<f64> {
        match self {
            Self::InSupport { p_true, p_model, .. } => Some(p_true - p_model),
            Self::OffSupport => None,
        }
    }
}

pub fn winning_probabilities(
    instance: &DiscreteInstance,
    policy: &DirectLogitPolicy,
    x: usize,
    y: usize,
) -> Result<WinningProbabilities> {
    if x >= instance.n_prompts() || y >= instance.n_responses(x) {
        return Err(contract(format!("response ({x}, {y}) is not in the instance")));
    }
    let marginal = instance.marginal(x, y);
    if marginal == 0.0 {
        return Ok(WinningProbabilities::OffSupport);
    }
    let (mut p_true, mut p_model) = (0.0, 0.0);
    for b in 0..instance.n_responses(x) {
        let w = instance.q(x, y, b) / marginal;
        p_true += w * sigmoid(instance.reward(x, y) - instance.reward(x, b));
        p_model += w * sigmoid(policy.logit(x, y) - policy.logit(x, b));
    }
    Ok(WinningProbabilities::InSupport { p_true, p_model, marginal })
}

/// Expected DPO loss over labeled pairs drawn from the instance.
pub fn population_loss(instance: &DiscreteInstance, f: &Table) -> f64 {
    let mut total = 0.0;
    for x in 0..instance.n_prompts() {
        let labeled = labeled_pair_table(instance, x);
        let mut inner = 0.0;
        for (w, row) in labeled.iter().enumerate() {
            for (l, &mass) in row.iter().enumerate() {
                if mass > 0.0 {
                    inner -= mass * log_sigmoid(f[x][w] - f[x][l]);
                }
            }
        }
        total += instance.prompt_mass(x) * inner;
    }
    total
}

/// `∂L/∂f` as an expectation over labeled tuples `(x, y_w, y_l)`.
pub fn ordered_population_gradient(instance: &DiscreteInstance, f: &Table) -> Table {
    let mut g = instance.table(0.0);
    for x in 0..instance.n_prompts() {
        let px = instance.prompt_mass(x);
        let labeled = labeled_pair_table(instance, x);
        for (w, row) in labeled.iter().enumerate() {
            for (l, &mass) in row.iter().enumerate() {
                if mass == 0.0 || w == l {
                    continue;
                }
                let c = px * mass * sigmoid(f[x][l] - f[x][w]);
                g[x][w] -= c;
                g[x][l] += c;
            }
        }
    }
    g
}

/// `∂L/∂f = -E_{(x,y,y')~q}[(σ(Δr) - σ(Δf)) (e_y - e_y')]`.
pub fn unordered_population_gradient(instance: &DiscreteInstance, f: &Table) -> Table {
    let mut g = instance.table(0.0);
    for x in 0..instance.n_prompts() {
        let px = instance.prompt_mass(x);
        let n = instance.n_responses(x);
        for y in 0..n {
            for yp in 0..n {
                let q = instance.q(x, y, yp);
                if q == 0.0 || y == yp {
                    continue;
                }
                let bracket = sigmoid(instance.reward(x, y) - instance.reward(x, yp)) - sigmoid(f[x][y] - f[x][yp]);
                g[x][y] -= px * q * bracket;
                g[x][yp] += px * q * bracket;
            }
        }
    }
    g
}

/// Max absolute difference between the ordered and unordered gradient forms.
pub fn symmetric_gradient_check(instance: &DiscreteInstance, policy: &DirectLogitPolicy) -> Result<f64> {
    check_shape(instance, policy.f(), "symmetric_gradient_check")?;
    let a = ordered_population_gradient(instance, policy.f());
    let b = unordered_population_gradient(instance, policy.f());
    Ok(max_abs_diff(&a, &b))
}

pub fn max_abs_diff(a: &Table, b: &Table) -> f64 {
    a.iter()
        .flatten()
        .zip(b.iter().flatten())
        .map(|(u, v)| (u - v).abs())
        .fold(0.0, f64::max)
}

/// One exact gradient step on the population loss. Returns the new policy and the change
/// in each logit.
pub fn population_one_step(
    instance: &DiscreteInstance,
    policy: &DirectLogitPolicy,
    alpha: f64,
) -> Result<(DirectLogitPolicy, Table)> {
    check_shape(instance, policy.f(), "population_one_step")?;
    if !(alpha > 0.0) {
        return Err(contract("alpha must be positive"));
    }
    let g = ordered_population_gradient(instance, policy.f());
    let delta: Table = g.iter().map(|row| row.iter().map(|v| -alpha * v).collect()).collect();
    Ok((policy.shifted(&delta), delta))
}

/// `2α (P_w - P_{w,θ}) p_{X,Y1}(x,y)` for every response, zero off the pair support.
pub fn predicted_population_step(
    instance: &DiscreteInstance,
    policy: &DirectLogitPolicy,
    alpha: f64,
) -> Result<Table> {
    let mut out = instance.table(0.0);
    for (x, row) in out.iter_mut().enumerate() {
        for (y, cell) in row.iter_mut().enumerate() {
            if let WinningProbabilities::InSupport { p_true, p_model, .. } = winning_probabilities(instance, policy, x, y)? {
                *cell = 2.0 * alpha * (p_true - p_model) * instance.joint_marginal(x, y);
            }
        }
    }
    Ok(out)
}

/// A labeled tuple over a finite instance, by index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscreteTuple {
    pub x: usize,
    pub y_w: usize,
    pub y_l: usize,
}

/// Draws `n` labeled tuples: prompt from `p_X`, ordered pair from `pair_pmf`, BT label.
pub fn sample_discrete_dataset(instance: &DiscreteInstance, n: usize, stream: &mut Stream) -> Vec<DiscreteTuple> {
    let px: Vec<f64> = (0..instance.n_prompts()).map(|x| instance.prompt_mass(x)).collect();
    (0..n)
        .map(|_| {
            let x = stream.categorical(&px);
            let m = instance.n_responses(x);
            let flat: Vec<f64> = (0..m * m).map(|i| instance.pair(x, i / m, i % m)).collect();
            let cell = stream.categorical(&flat);
            let (a, b) = (cell / m, cell % m);
            let win = sigmoid(instance.reward(x, a) - instance.reward(x, b));
            if stream.uniform() < win {
                DiscreteTuple { x, y_w: a, y_l: b }
            } else {
                DiscreteTuple { x, y_w: b, y_l: a }
            }
        })
        .collect()
}

fn check_dataset(instance: &DiscreteInstance, dataset: &[DiscreteTuple]) -> Result<()> {
    if dataset.is_empty() {
        return Err(contract("dataset must be non-empty"));
    }
    for t in dataset {
        if t.x >= instance.n_prompts() || t.y_w >= instance.n_responses(t.x) || t.y_l >= instance.n_responses(t.x) {
            return Err(contract(format!("tuple {t:?} is outside the instance")));
        }
    }
    Ok(())
}

pub fn empirical_loss(dataset: &[DiscreteTuple], f: &Table) -> f64 {
    let n = dataset.len() as f64;
    dataset.iter().map(|t| -log_sigmoid(f[t.x][t.y_w] - f[t.x][t.y_l])).sum::<f64>() / n
}

pub fn empirical_gradient(instance: &DiscreteInstance, dataset: &[DiscreteTuple], f: &Table) -> Result<Table> {
    check_dataset(instance, dataset)?;
    check_shape(instance, f, "empirical_gradient")?;
    let n = dataset.len() as f64;
    let mut g = instance.table(0.0);
    for t in dataset {
        let c = sigmoid(f[t.x][t.y_l] - f[t.x][t.y_w]) / n;
        g[t.x][t.y_w] -= c;
        g[t.x][t.y_l] += c;
    }
    Ok(g)
}

/// Change in each logit after one gradient step on the empirical loss.
pub fn empirical_one_step(
    instance: &DiscreteInstance,
    dataset: &[DiscreteTuple],
    policy: &DirectLogitPolicy,
    alpha: f64,
) -> Result<Table> {
    let g = empirical_gradient(instance, dataset, policy.f())?;
    Ok(g.iter().map(|row| row.iter().map(|v| -alpha * v).collect()).collect())
}

/// The same step written through win counts: `(α/n)(Ŵ - Σ_{ỹ∈C} P_θ(y ≻ ỹ))`, where `C` is
/// the multiset of opponents `y` met in the dataset and `Ŵ` the number of those it beat.
pub fn empirical_counts_step(
    instance: &DiscreteInstance,
    dataset: &[DiscreteTuple],
    policy: &DirectLogitPolicy,
    alpha: f64,
) -> Result<Table> {
    check_dataset(instance, dataset)?;
    let n = dataset.len() as f64;
    let mut out = instance.table(0.0);
    for (x, row) in out.iter_mut().enumerate() {
        for (y, cell) in row.iter_mut().enumerate() {
            let mut wins = 0.0;
            let mut expected = 0.0;
            for t in dataset.iter().filter(|t| t.x == x) {
                if t.y_w == y {
                    wins += 1.0;
                    expected += sigmoid(policy.logit(x, y) - policy.logit(x, t.y_l));
                }
                if t.y_l == y {
                    expected += sigmoid(policy.logit(x, y) - policy.logit(x, t.y_w));
                }
            }
            *cell = alpha / n * (wins - expected);
        }
    }
    Ok(out)
}

/// Outcome of checking the optimal tabular policy and its rescaled relatives.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinimizerFamilyReport {
    pub beta: f64,
    /// `π*(y|x) ∝ π_ref(y|x) exp(r*(x,y)/β)`.
    pub pi_star: Table,
    /// Max |∂L/∂f| at π*.
    pub gradient_at_optimum: f64,
    /// Per-prompt mass factor applied on the pair support.
    pub phi: Vec<f64>,
    pub rescaled: Table,
    /// |L(rescaled) - L(π*)|.
    pub rescale_loss_delta: f64,
    /// π*(y|x) > 0 exactly when π_ref(y|x) > 0, and likewise for the rescaled policy.
    pub support_preserved: bool,
}

/// Logits `β log(π/π_ref)` of a policy, with `0` wherever the reference vanishes.
pub fn logits_of(instance: &DiscreteInstance, pi: &Table, beta: f64) -> Table {
    pi.iter()
        .enumerate()
        .map(|(x, row)| {
            row.iter()
                .enumerate()
                .map(|(y, &p)| {
                    let r = instance.ref_prob(x, y);
                    if r > 0.0 {
                        beta * (p / r).ln()
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect()
}

pub fn minimizer_family_check(instance: &DiscreteInstance, beta: f64) -> Result<MinimizerFamilyReport> {
    check_beta(beta)?;
    instance.validate()?;
    let pi_star = induced_probabilities(instance, &instance.reward_table(), beta);
    let f_star = logits_of(instance, &pi_star, beta);
    let gradient_at_optimum = ordered_population_gradient(instance, &f_star)
        .iter()
        .flatten()
        .fold(0.0f64, |m, v| m.max(v.abs()));

    let mut phi = Vec::with_capacity(instance.n_prompts());
    let mut rescaled = Vec::with_capacity(instance.n_prompts());
    for (x, row) in pi_star.iter().enumerate() {
        let n = row.len();
        let on: Vec<bool> = (0..n).map(|y| instance.in_pair_support(x, y)).collect();
        let spare: f64 = (0..n).filter(|&y| !on[y]).map(|y| row[y]).sum();
        // Rescaling needs somewhere to put the freed mass.
        let factor = if spare > 0.0 { 0.5 } else { 1.0 };
        let on_mass: f64 = (0..n).filter(|&y| on[y]).map(|y| row[y]).sum();
        let freed = (1.0 - factor) * on_mass;
        let new_row: Vec<f64> = (0..n)
            .map(|y| {
                if on[y] {
                    factor * row[y]
                } else if spare > 0.0 {
                    row[y] * (1.0 + freed / spare)
                } else {
                    row[y]
                }
            })
            .collect();
        phi.push(factor);
        rescaled.push(new_row);
    }
    let f_rescaled = logits_of(instance, &rescaled, beta);
    let rescale_loss_delta = (population_loss(instance, &f_rescaled) - population_loss(instance, &f_star)).abs();
    let support_preserved = (0..instance.n_prompts()).all(|x| {
        (0..instance.n_responses(x)).all(|y| {
            let ref_pos = instance.ref_prob(x, y) > 0.0;
            (pi_star[x][y] > 0.0) == ref_pos && (rescaled[x][y] > 0.0) == ref_pos
        })
    });
    Ok(MinimizerFamilyReport {
        beta,
        pi_star,
        gradient_at_optimum,
        phi,
        rescaled,
        rescale_loss_delta,
        support_preserved,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discrete::instance::{DiscretePrompt, RandomInstanceOptions};

    fn three_response_instance() -> DiscreteInstance {
        three_response_with_rewards(vec![1.0, 0.0, 0.0])
    }

    fn three_response_with_rewards(rewards: Vec<f64>) -> DiscreteInstance {
        let off = 1.0 / 6.0;
        DiscreteInstance::new(vec![DiscretePrompt {
            p: 1.0,
            responses: vec!["a".into(), "b".into(), "c".into()],
            rewards,
            pair_pmf: vec![vec![0.0, off, off], vec![off, 0.0, off], vec![off, off, 0.0]],
            ref_pmf: vec![1.0 / 3.0; 3],
        }])
        .unwrap()
    }

    #[test]
    fn winning_probability_hand_example() {
        let inst = three_response_instance();
        let pol = DirectLogitPolicy::reference(&inst, 1.0).unwrap();
        match winning_probabilities(&inst, &pol, 0, 0).unwrap() {
            WinningProbabilities::InSupport { p_true, p_model, .. } => {
                assert!((p_true - sigmoid(1.0)).abs() < 1e-15);
                assert_eq!(p_model, 0.5);
            }
            WinningProbabilities::OffSupport => panic!("response 0 is sampled"),
        }
    }

    #[test]
    fn winning_probabilities_agree_at_reward_logits() {
        let opts = RandomInstanceOptions::default();
        for seed in 0..30 {
            let inst = DiscreteInstance::random(&mut Stream::new(seed), &opts).unwrap();
            let shifts: Vec<f64> = (0..inst.n_prompts()).map(|x| x as f64 * 3.0 - 1.0).collect();
            let pol = DirectLogitPolicy::from_rewards(&inst, &shifts, 0.7).unwrap();
            for x in 0..inst.n_prompts() {
                for y in 0..inst.n_responses(x) {
                    if let Some(gap) = winning_probabilities(&inst, &pol, x, y).unwrap().gap() {
                        assert!(gap.abs() < 1e-15);
                    }
                }
            }
        }
    }

    #[test]
    fn equal_rewards_give_even_odds() {
        let inst = three_response_with_rewards(vec![0.3; 3]);
        let pol = DirectLogitPolicy::reference(&inst, 1.0).unwrap();
        for y in 0..3 {
            if let WinningProbabilities::InSupport { p_true, .. } = winning_probabilities(&inst, &pol, 0, y).unwrap() {
                assert_eq!(p_true, 0.5);
            }
        }
    }

    #[test]
    fn off_support_is_flagged() {
        let inst = DiscreteInstance::new(vec![DiscretePrompt {
            p: 1.0,
            responses: vec!["a".into(), "b".into(), "c".into()],
            rewards: vec![1.0, 0.0, 2.0],
            pair_pmf: vec![vec![0.0, 0.5, 0.0], vec![0.5, 0.0, 0.0], vec![0.0, 0.0, 0.0]],
            ref_pmf: vec![0.2, 0.3, 0.5],
        }])
        .unwrap();
        let pol = DirectLogitPolicy::reference(&inst, 1.0).unwrap();
        assert_eq!(winning_probabilities(&inst, &pol, 0, 2).unwrap(), WinningProbabilities::OffSupport);
        let (_, delta) = population_one_step(&inst, &pol, 0.01).unwrap();
        assert_eq!(delta[0][2], 0.0);
    }

    #[test]
    fn step_is_linear_in_alpha() {
        let inst = DiscreteInstance::random(&mut Stream::new(77), &RandomInstanceOptions::default()).unwrap();
        let pol = DirectLogitPolicy::reference(&inst, 1.0).unwrap();
        let (_, a) = population_one_step(&inst, &pol, 0.01).unwrap();
        let (_, b) = population_one_step(&inst, &pol, 0.005).unwrap();
        for (u, v) in a.iter().flatten().zip(b.iter().flatten()) {
            if *v != 0.0 {
                assert!((u / v - 2.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn empirical_single_tuple_hand_example() {
        let inst = three_response_instance();
        let pol = DirectLogitPolicy::reference(&inst, 1.0).unwrap();
        let data = [DiscreteTuple { x: 0, y_w: 0, y_l: 1 }];
        let d = empirical_one_step(&inst, &data, &pol, 0.2).unwrap();
        assert!((d[0][0] - 0.1).abs() < 1e-15);
        assert!((d[0][1] + 0.1).abs() < 1e-15);
        assert_eq!(d[0][2], 0.0);
    }

    #[test]
    fn shift_invariance_of_policy_and_loss() {
        let opts = RandomInstanceOptions::default();
        for seed in 0..20 {
            let mut s = Stream::new(seed);
            let inst = DiscreteInstance::random(&mut s, &opts).unwrap();
            let f: Table = (0..inst.n_prompts())
                .map(|x| (0..inst.n_responses(x)).map(|_| s.range(-2.0, 2.0)).collect())
                .collect();
            let shift: Table = (0..inst.n_prompts())
                .map(|x| vec![x as f64 * 1.7 + 0.4; inst.n_responses(x)])
                .collect();
            let a = DirectLogitPolicy::new(&inst, f, 0.8).unwrap();
            let b = a.shifted(&shift);
            assert!(max_abs_diff(&a.probabilities(&inst), &b.probabilities(&inst)) < 1e-12);
            assert!((population_loss(&inst, a.f()) - population_loss(&inst, b.f())).abs() < 1e-12);
        }
    }

    #[test]
    fn raising_one_logit_raises_its_probability() {
        let inst = DiscreteInstance::random(&mut Stream::new(5), &RandomInstanceOptions::default()).unwrap();
        let base = DirectLogitPolicy::reference(&inst, 1.0).unwrap();
        for x in 0..inst.n_prompts() {
            for y in 0..inst.n_responses(x) {
                if inst.ref_prob(x, y) == 0.0 {
                    continue;
                }
                let mut prev = base.probabilities(&inst)[x][y];
                for step in 1..=20 {
                    let mut f = base.f().clone();
                    f[x][y] = step as f64 * 0.25;
                    let p = DirectLogitPolicy::new(&inst, f, 1.0).unwrap().probabilities(&inst)[x][y];
                    assert!(p > prev);
                    prev = p;
                }
            }
        }
    }

    #[test]
    fn optimal_policy_two_responses() {
        let inst = DiscreteInstance::new(vec![DiscretePrompt {
            p: 1.0,
            responses: vec!["a".into(), "b".into()],
            rewards: vec![1.0, 0.0],
            pair_pmf: vec![vec![0.25, 0.25], vec![0.25, 0.25]],
            ref_pmf: vec![0.5, 0.5],
        }])
        .unwrap();
        let rep = minimizer_family_check(&inst, 1.0).unwrap();
        let e = std::f64::consts::E;
        assert!((rep.pi_star[0][0] - e / (e + 1.0)).abs() < 1e-15);
        assert!(rep.gradient_at_optimum < 1e-15);
        let big = minimizer_family_check(&inst, 1e12).unwrap();
        assert!((big.pi_star[0][0] - 0.5).abs() < 1e-9);
    }

    #[test]
    fn gradient_additivity_over_tuples() {
        let mut s = Stream::new(8);
        let inst = DiscreteInstance::random(&mut s, &RandomInstanceOptions::default()).unwrap();
        let pol = DirectLogitPolicy::reference(&inst, 1.0).unwrap();
        let data = sample_discrete_dataset(&inst, 12, &mut s);
        let n = data.len() as f64;
        let whole = empirical_one_step(&inst, &data, &pol, 0.3).unwrap();
        let mut summed = inst.table(0.0);
        for t in &data {
            let single = empirical_one_step(&inst, std::slice::from_ref(t), &pol, 0.3).unwrap();
            for (row, srow) in summed.iter_mut().zip(&single) {
                for (a, b) in row.iter_mut().zip(srow) {
                    *a += b / n;
                }
            }
        }
        assert!(max_abs_diff(&whole, &summed) < 1e-12);
    }
}
