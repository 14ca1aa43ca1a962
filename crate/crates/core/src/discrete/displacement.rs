//! A constructed batch in which shared features make one gradient step lower the
//! likelihood of preferred responses, next to the same batch under tabular logits.
//!
//! Layout with `m` victim tuples, three responses per prompt (winner, loser, bystander):
//!
//! * tuple 0 (prompt 0): `φ(w) = e0`, `φ(l) = e1`
//! * tuple i (prompt i): `φ(w) = e1`, `φ(l) = e_{1+i}`
//! * bystanders get private directions.
//!
//! Starting from `θ1 = a`, tuple 0 is badly mis-ranked and pushes `θ1` down hard, while the
//! victims are already well ranked and push it up only a little. Every victim winner shares
//! `e1`, so their logits fall.

use super::dynamics::{empirical_one_step, max_abs_diff, DirectLogitPolicy, DiscreteTuple, FeaturizedLogitPolicy, Table};
use super::instance::{DiscreteInstance, DiscretePrompt};
use crate::error::{LabError, Result};
use crate::model::Vector;
use crate::rng::Stream;
use serde::{Deserialize, Serialize};

const MAX_ATTEMPTS: u64 = 100;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DisplacementRow {
    pub tuple: usize,
    pub prompt: usize,
    pub dlogp_w: f64,
    pub dlogp_l: f64,
    pub df_w: f64,
    pub df_l: f64,
    pub tabular_df_w: f64,
    pub tabular_df_l: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DisplacementReport {
    pub seed: u64,
    pub seed_used: u64,
    pub attempts: u64,
    pub victims: usize,
    pub alpha: f64,
    pub beta: f64,
    pub rows: Vec<DisplacementRow>,
    pub mean_dlogp_w: f64,
    pub mean_dlogp_l: f64,
    pub tabular_mean_df_w: f64,
    pub tabular_mean_df_l: f64,
    /// With one private direction per response, the featurized step equals the tabular one.
    pub orthogonal_max_abs_diff: f64,
    /// Every Δ log π(y_w) in the orthogonal variant has the sign of the tabular Δf(y_w).
    pub orthogonal_signs_agree: bool,
}

impl DisplacementReport {
    pub fn displaced(&self) -> bool {
        self.mean_dlogp_w < 0.0
    }

    pub fn tabular_immune(&self) -> bool {
        self.tabular_mean_df_w > 0.0
    }
}

struct Construction {
    instance: DiscreteInstance,
    policy: FeaturizedLogitPolicy,
    orthogonal: FeaturizedLogitPolicy,
    data: Vec<DiscreteTuple>,
    victims: usize,
}

fn construct(stream: &mut Stream, beta: f64) -> Result<Construction> {
    let m = 3 + stream.below(3);
    let a = stream.range(2.0, 4.0);
    let bs: Vec<f64> = (0..m).map(|_| stream.range(1.0, 3.0)).collect();
    let dim = 2 + m + (m + 1);
    let bystander = |x: usize| 2 + m + x;

    let mut theta = vec![0.0; dim];
    theta[1] = a;
    for (i, b) in bs.iter().enumerate() {
        theta[2 + i] = -b;
    }
    let theta = Vector::new(theta)?;

    let mut features = Vec::with_capacity(m + 1);
    features.push(vec![Vector::basis(dim, 0), Vector::basis(dim, 1), Vector::basis(dim, bystander(0))]);
    for i in 1..=m {
        features.push(vec![Vector::basis(dim, 1), Vector::basis(dim, 1 + i), Vector::basis(dim, bystander(i))]);
    }

    // Reference chosen so the starting policy is uniform over the three responses.
    let uniform_pair = vec![vec![1.0 / 9.0; 3]; 3];
    let prompts = features
        .iter()
        .enumerate()
        .map(|(x, row)| {
            let w: Vec<f64> = row.iter().map(|phi| (-theta.dot(phi) / beta).exp()).collect();
            let z: f64 = w.iter().sum();
            DiscretePrompt {
                p: 1.0 / (m + 1) as f64,
                responses: vec![format!("w{x}"), format!("l{x}"), format!("o{x}")],
                rewards: vec![1.0, 0.0, 0.5],
                pair_pmf: uniform_pair.clone(),
                ref_pmf: w.into_iter().map(|v| v / z).collect(),
            }
        })
        .collect();
    let instance = DiscreteInstance::new(prompts)?;
    let policy = FeaturizedLogitPolicy::new(&instance, theta, features, beta)?;

    let logits = policy.logits();
    let odim = 3 * (m + 1);
    let ofeatures: Vec<Vec<Vector>> = (0..=m)
        .map(|x| (0..3).map(|y| Vector::basis(odim, 3 * x + y)).collect())
        .collect();
    let otheta = Vector::new(logits.iter().flatten().copied().collect())?;
    let orthogonal = FeaturizedLogitPolicy::new(&instance, otheta, ofeatures, beta)?;

    let data = (0..=m).map(|x| DiscreteTuple { x, y_w: 0, y_l: 1 }).collect();
    Ok(Construction { instance, policy, orthogonal, data, victims: m })
}

fn log_change(before: &Table, after: &Table, x: usize, y: usize) -> f64 {
    after[x][y].ln() - before[x][y].ln()
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    sum / n as f64
}

fn evaluate(c: &Construction, seed: u64, seed_used: u64, attempts: u64, alpha: f64) -> Result<DisplacementReport> {
    let inst = &c.instance;
    let before = c.policy.probabilities(inst);
    let stepped = c.policy.step(&c.data, alpha)?;
    let after = stepped.probabilities(inst);
    let (f0, f1) = (c.policy.logits(), stepped.logits());

    let tabular = DirectLogitPolicy::new(inst, f0.clone(), c.policy.beta)?;
    let tab_delta = empirical_one_step(inst, &c.data, &tabular, alpha)?;

    let o_before = c.orthogonal.probabilities(inst);
    let o_stepped = c.orthogonal.step(&c.data, alpha)?;
    let o_after = o_stepped.probabilities(inst);
    let o_delta: Table = o_stepped
        .logits()
        .iter()
        .zip(c.orthogonal.logits().iter())
        .map(|(a, b)| a.iter().zip(b).map(|(u, v)| u - v).collect())
        .collect();

    let rows: Vec<DisplacementRow> = c
        .data
        .iter()
        .enumerate()
        .map(|(i, t)| DisplacementRow {
            tuple: i,
            prompt: t.x,
            dlogp_w: log_change(&before, &after, t.x, t.y_w),
            dlogp_l: log_change(&before, &after, t.x, t.y_l),
            df_w: f1[t.x][t.y_w] - f0[t.x][t.y_w],
            df_l: f1[t.x][t.y_l] - f0[t.x][t.y_l],
            tabular_df_w: tab_delta[t.x][t.y_w],
            tabular_df_l: tab_delta[t.x][t.y_l],
        })
        .collect();
    let orthogonal_signs_agree = c.data.iter().all(|t| {
        let dlp = log_change(&o_before, &o_after, t.x, t.y_w);
        dlp.signum() == tab_delta[t.x][t.y_w].signum() && dlp != 0.0
    });
    Ok(DisplacementReport {
        seed,
        seed_used,
        attempts,
        victims: c.victims,
        alpha,
        beta: c.policy.beta,
        mean_dlogp_w: mean(rows.iter().map(|r| r.dlogp_w)),
        mean_dlogp_l: mean(rows.iter().map(|r| r.dlogp_l)),
        tabular_mean_df_w: mean(rows.iter().map(|r| r.tabular_df_w)),
        tabular_mean_df_l: mean(rows.iter().map(|r| r.tabular_df_l)),
        orthogonal_max_abs_diff: max_abs_diff(&o_delta, &tab_delta),
        orthogonal_signs_agree,
        rows,
    })
}

/// Builds the interference batch from `seed`, retrying with successor seeds until the
/// featurized step displaces the preferred responses on average.
pub fn displacement_demo(seed: u64) -> Result<DisplacementReport> {
    let (alpha, beta) = (0.1, 1.0);
    for attempt in 0..MAX_ATTEMPTS {
        let seed_used = seed.wrapping_add(attempt);
        let c = construct(&mut Stream::new(seed_used), beta)?;
        let report = evaluate(&c, seed, seed_used, attempt + 1, alpha)?;
        if report.displaced() && report.tabular_immune() && report.orthogonal_signs_agree {
            return Ok(report);
        }
    }
    Err(LabError::Construction(format!(
        "no displacing batch found in {MAX_ATTEMPTS} seeds starting at {seed}"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn demo_displaces_and_tabular_does_not() {
        for seed in [0u64, 1, 42, 1234] {
            let r = displacement_demo(seed).unwrap();
            assert!(r.mean_dlogp_w < 0.0);
            assert!(r.tabular_mean_df_w > 0.0);
            assert!(r.tabular_mean_df_l < 0.0);
            assert!(r.orthogonal_max_abs_diff < 1e-14);
            // The victims' winners all lose likelihood.
            assert!(r.rows.iter().skip(1).all(|row| row.dlogp_w < 0.0));
        }
    }

    #[test]
    fn two_tuple_interference() {
        // φ(w of tuple 1) = φ(l of tuple 2) = e0, with tuple 2 badly mis-ranked.
        let prompt = |x: usize| DiscretePrompt {
            p: 0.5,
            responses: vec![format!("w{x}"), format!("l{x}")],
            rewards: vec![1.0, 0.0],
            pair_pmf: vec![vec![0.25; 2]; 2],
            ref_pmf: vec![0.5, 0.5],
        };
        let inst = DiscreteInstance::new(vec![prompt(0), prompt(1)]).unwrap();
        let feats = vec![
            vec![Vector::basis(3, 0), Vector::basis(3, 1)],
            vec![Vector::basis(3, 2), Vector::basis(3, 0)],
        ];
        let theta = Vector::new(vec![3.0, -3.0, 0.0]).unwrap();
        let pol = FeaturizedLogitPolicy::new(&inst, theta, feats, 1.0).unwrap();
        let data = [DiscreteTuple { x: 0, y_w: 0, y_l: 1 }, DiscreteTuple { x: 1, y_w: 0, y_l: 1 }];
        let before = pol.probabilities(&inst);
        let after = pol.step(&data, 0.1).unwrap().probabilities(&inst);
        assert!(after[0][0] < before[0][0]);
    }
}
