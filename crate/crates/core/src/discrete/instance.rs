use crate::error::{contract, Result};
use crate::rng::Stream;
use serde::{Deserialize, Serialize};
use std::path::Path;

const PMF_TOL: f64 = 1e-12;

/// One prompt of a finite instance. `pair_pmf[a][b]` is the probability of drawing the
/// ordered pair `(Y1, Y2) = (a, b)` before labeling.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscretePrompt {
    pub p: f64,
    pub responses: Vec<String>,
    pub rewards: Vec<f64>,
    pub pair_pmf: Vec<Vec<f64>>,
    pub ref_pmf: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscreteInstance {
    prompts: Vec<DiscretePrompt>,
}

fn check_pmf(values: &[f64], what: &str) -> Result<()> {
    if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(contract(format!("{what}: entries must be finite and non-negative")));
    }
    let total: f64 = values.iter().sum();
    if (total - 1.0).abs() > PMF_TOL {
        return Err(contract(format!("{what}: sums to {total}, not 1")));
    }
    Ok(())
}

impl DiscreteInstance {
    pub fn new(prompts: Vec<DiscretePrompt>) -> Result<Self> {
        let inst = Self { prompts };
        inst.validate()?;
        Ok(inst)
    }

    pub fn validate(&self) -> Result<()> {
        if self.prompts.is_empty() {
            return Err(contract("instance needs at least one prompt"));
        }
        let px: Vec<f64> = self.prompts.iter().map(|p| p.p).collect();
        check_pmf(&px, "prompt pmf")?;
        for (x, pr) in self.prompts.iter().enumerate() {
            let n = pr.responses.len();
            if n == 0 {
                return Err(contract(format!("prompt {x}: no responses")));
            }
            if pr.rewards.len() != n || pr.ref_pmf.len() != n || pr.pair_pmf.len() != n {
                return Err(contract(format!("prompt {x}: table sizes disagree with {n} responses")));
            }
            if pr.pair_pmf.iter().any(|row| row.len() != n) {
                return Err(contract(format!("prompt {x}: pair pmf must be {n}x{n}")));
            }
            if pr.rewards.iter().any(|r| !r.is_finite()) {
                return Err(contract(format!("prompt {x}: rewards must be finite")));
            }
            let flat: Vec<f64> = pr.pair_pmf.iter().flatten().copied().collect();
            check_pmf(&flat, &format!("prompt {x} pair pmf"))?;
            check_pmf(&pr.ref_pmf, &format!("prompt {x} reference pmf"))?;
            for y in 0..n {
                if pr.ref_pmf[y] == 0.0 && (0..n).any(|b| pr.pair_pmf[y][b] > 0.0 || pr.pair_pmf[b][y] > 0.0) {
                    return Err(contract(format!(
                        "prompt {x}: response {y} is sampled but has zero reference probability"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn prompts(&self) -> &[DiscretePrompt] {
        &self.prompts
    }

    pub fn n_prompts(&self) -> usize {
        self.prompts.len()
    }

    pub fn n_responses(&self, x: usize) -> usize {
        self.prompts[x].responses.len()
    }

    pub fn prompt_mass(&self, x: usize) -> f64 {
        self.prompts[x].p
    }

    pub fn reward(&self, x: usize, y: usize) -> f64 {
        self.prompts[x].rewards[y]
    }

    pub fn pair(&self, x: usize, a: usize, b: usize) -> f64 {
        self.prompts[x].pair_pmf[a][b]
    }

    pub fn ref_prob(&self, x: usize, y: usize) -> f64 {
        self.prompts[x].ref_pmf[y]
    }

    /// Symmetrized pair mass `q(a,b) = (p(a,b) + p(b,a)) / 2`.
    pub fn q(&self, x: usize, a: usize, b: usize) -> f64 {
        0.5 * (self.pair(x, a, b) + self.pair(x, b, a))
    }

    /// `Σ_b q(y, b)`: how often `y` shows up in a pair at prompt `x`.
    pub fn marginal(&self, x: usize, y: usize) -> f64 {
        (0..self.n_responses(x)).map(|b| self.q(x, y, b)).sum()
    }

    /// `p_X(x) Σ_b q(y, b)`.
    pub fn joint_marginal(&self, x: usize, y: usize) -> f64 {
        self.prompt_mass(x) * self.marginal(x, y)
    }

    /// True when `y` has positive probability of appearing in a sampled pair.
    pub fn in_pair_support(&self, x: usize, y: usize) -> bool {
        (0..self.n_responses(x)).any(|b| self.pair(x, y, b) > 0.0 || self.pair(x, b, y) > 0.0)
    }

    /// Table shaped like the instance, filled with `value`.
    pub fn table(&self, value: f64) -> Vec<Vec<f64>> {
        (0..self.n_prompts()).map(|x| vec![value; self.n_responses(x)]).collect()
    }

    pub fn reward_table(&self) -> Vec<Vec<f64>> {
        self.prompts.iter().map(|p| p.rewards.clone()).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let inst: Self = serde_json::from_str(text)?;
        inst.validate()?;
        Ok(inst)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn random(stream: &mut Stream, opts: &RandomInstanceOptions) -> Result<Self> {
        if opts.max_prompts == 0 || opts.min_responses == 0 || opts.min_responses > opts.max_responses {
            return Err(contract("random instance: bad size bounds"));
        }
        let n_prompts = 1 + stream.below(opts.max_prompts);
        let masses = normalized((0..n_prompts).map(|_| 0.2 + stream.uniform()).collect());
        let mut prompts = Vec::with_capacity(n_prompts);
        for (x, p) in masses.into_iter().enumerate() {
            let n = opts.min_responses + stream.below(opts.max_responses - opts.min_responses + 1);
            let rewards: Vec<f64> = (0..n).map(|_| stream.range(-opts.reward_scale, opts.reward_scale)).collect();
            let mut ref_w: Vec<f64> = (0..n).map(|_| 0.1 + stream.uniform()).collect();
            // Keep at least two positive-reference responses so pairs can be drawn.
            if opts.ref_zeros && n >= 3 && stream.uniform() < 0.7 {
                let y = 2 + stream.below(n - 2);
                ref_w[y] = 0.0;
            }
            let mut sampled: Vec<bool> = ref_w.iter().map(|w| *w > 0.0).collect();
            if opts.off_support && stream.uniform() < 0.7 {
                let candidates: Vec<usize> = (0..n).filter(|&y| sampled[y]).collect();
                if candidates.len() > 2 {
                    let drop = candidates[2 + stream.below(candidates.len() - 2)];
                    sampled[drop] = false;
                }
            }
            let mut pair = vec![vec![0.0; n]; n];
            for a in 0..n {
                for b in 0..n {
                    if sampled[a] && sampled[b] {
                        pair[a][b] = if opts.asymmetric {
                            0.05 + stream.uniform()
                        } else {
                            1.0
                        };
                    }
                }
            }
            let total: f64 = pair.iter().flatten().sum();
            for row in &mut pair {
                for v in row.iter_mut() {
                    *v /= total;
                }
            }
            prompts.push(DiscretePrompt {
                p,
                responses: (0..n).map(|y| format!("x{x}y{y}")).collect(),
                rewards,
                pair_pmf: pair,
                ref_pmf: normalized(ref_w),
            });
        }
        Self::new(prompts)
    }
}

fn normalized(mut v: Vec<f64>) -> Vec<f64> {
    let total: f64 = v.iter().sum();
    for x in &mut v {
        *x /= total;
    }
    v
}

/// Knobs for [`DiscreteInstance::random`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomInstanceOptions {
    pub max_prompts: usize,
    pub min_responses: usize,
    pub max_responses: usize,
    pub reward_scale: f64,
    /// Allow zeros in the reference pmf.
    pub ref_zeros: bool,
    /// Allow responses that are never drawn into a pair.
    pub off_support: bool,
    /// Draw `pair_pmf` with `p(a,b) != p(b,a)`.
    pub asymmetric: bool,
}

impl Default for RandomInstanceOptions {
    fn default() -> Self {
        Self {
            max_prompts: 2,
            min_responses: 2,
            max_responses: 5,
            reward_scale: 2.0,
            ref_zeros: true,
            off_support: true,
            asymmetric: true,
        }
    }
}
