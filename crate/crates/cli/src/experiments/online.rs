use crate::config::ExperimentConfig;
use crate::error::Result;
use crate::output::{num, opt_num, Artifacts};
use crate::report::{Check, ExperimentReport};
use dpolab_core::dpo::{online_dpo, OnlineRun, PromptSource, RoundRecord, TrainConfig};
use dpolab_core::{RewardOracle, SamplerSpec, Stream, Vector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub const CURVE_HEADER: [&str; 9] =
    ["t", "step", "loss", "grad_norm", "grad_bound", "dist_to_star", "closed_form_dist", "sigma_t", "k"];

/// Shared ingredients of one seed: ground truth, a unit perturbation for the initial weights,
/// the prompt set, and the training stream key. All K values and reference scales reuse them.
pub(crate) struct SeedProblem {
    pub oracle: RewardOracle,
    pub perturbation: Vector,
    pub prompts: PromptSource,
    pub train_seed: u64,
}

impl SeedProblem {
    pub fn new(root: &Stream, seed: u64, d: usize, n: usize, fresh_prompts: bool) -> Self {
        let s = root.split(seed);
        let oracle = RewardOracle::new(Vector::gaussian(d, &mut s.split(0)));
        let perturbation = Vector::gaussian(d, &mut s.split(1));
        let prompts = if fresh_prompts {
            PromptSource::FreshGaussian { dim: d }
        } else {
            PromptSource::fixed_gaussian(n, d, s.split(2).key())
        };
        Self { oracle, perturbation, prompts, train_seed: s.split(3).key() }
    }

    pub fn w0(&self, scale: f64) -> Vector {
        self.oracle.w_star().axpy(scale, &self.perturbation)
    }
}

pub(crate) fn train_config(cfg: &ExperimentConfig, k: usize, seed: u64) -> Result<TrainConfig> {
    let mut tc = TrainConfig::new(
        cfg.f64("beta")?,
        cfg.f64("alpha")?,
        cfg.usize("steps")?,
        cfg.usize("rounds")?,
        cfg.usize("n")?,
        SamplerSpec::from_k(k)?,
        seed,
    );
    for (key, flag) in [("exact", &mut tc.exact_minimization), ("joint_sigma", &mut tc.joint_sigma), ("record_bound", &mut tc.record_bound)] {
        if cfg.values().contains_key(key) {
            *flag = cfg.bool(key)?;
        }
    }
    if cfg.values().contains_key("batch_size") {
        tc.batch_size = Some(cfg.usize("batch_size")?).filter(|b| *b > 0);
    }
    Ok(tc)
}

fn curve_row(r: &RoundRecord) -> Vec<String> {
    vec![
        r.t.to_string(),
        (r.t * r.steps).to_string(),
        num(r.empirical_loss),
        num(r.grad_norm),
        opt_num(r.grad_norm_bound),
        num(r.dist_to_star),
        num(r.closed_form_dist),
        num(r.sigma_t),
        r.k.to_string(),
    ]
}

/// Seed-averaged curve for one K.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanCurve {
    pub k: usize,
    pub dist_to_star: Vec<f64>,
    pub closed_form_dist: Vec<f64>,
    pub loss: Vec<f64>,
    pub grad_norm: Vec<f64>,
    pub grad_bound: Vec<Option<f64>>,
    pub sigma_t: Vec<f64>,
    pub steps: Vec<usize>,
}

impl MeanCurve {
    fn from_runs(k: usize, runs: &[&OnlineRun]) -> Self {
        let m = runs.len() as f64;
        let rounds = runs.first().map_or(0, |r| r.records.len());
        let mean = |f: &dyn Fn(&RoundRecord) -> f64| -> Vec<f64> {
            (0..rounds).map(|t| runs.iter().map(|r| f(&r.records[t])).sum::<f64>() / m).collect()
        };
        let grad_bound = (0..rounds)
            .map(|t| {
                let b: Option<Vec<f64>> = runs.iter().map(|r| r.records[t].grad_norm_bound).collect();
                b.map(|b| b.iter().sum::<f64>() / m)
            })
            .collect();
        Self {
            k,
            dist_to_star: mean(&|r| r.dist_to_star),
            closed_form_dist: mean(&|r| r.closed_form_dist),
            loss: mean(&|r| r.empirical_loss),
            grad_norm: mean(&|r| r.grad_norm),
            grad_bound,
            sigma_t: mean(&|r| r.sigma_t),
            steps: runs.first().map_or(vec![], |r| r.records.iter().map(|x| x.t * x.steps).collect()),
        }
    }

    pub fn final_dist(&self) -> Option<f64> {
        self.dist_to_star.last().copied()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OnlineRecords {
    pub curves: Vec<MeanCurve>,
    /// Largest `|dist_to_star - closed_form_dist|` over every cell and round.
    pub max_closed_form_gap: f64,
}

pub fn run_online(cfg: &ExperimentConfig, out: &mut Artifacts) -> Result<ExperimentReport> {
    let ks: Vec<usize> = cfg.list("k")?;
    let seeds: Vec<u64> = cfg.list("seeds")?;
    let (d, n) = (cfg.usize("d")?, cfg.usize("n")?);
    let (sigma0, w0_scale) = (cfg.f64("sigma0")?, cfg.f64("w0_scale")?);
    let root = Stream::new(cfg.u64("seed")?);
    let problems: Vec<SeedProblem> =
        seeds.iter().map(|&s| SeedProblem::new(&root, s, d, n, cfg.bool("fresh_prompts").unwrap_or(false))).collect();

    let cells: Vec<(usize, usize)> = ks.iter().flat_map(|&k| (0..seeds.len()).map(move |i| (k, i))).collect();
    let runs = cells
        .par_iter()
        .map(|&(k, i)| {
            let p = &problems[i];
            let tc = train_config(cfg, k, p.train_seed)?;
            Ok(online_dpo(&tc, &p.oracle, &p.prompts, &p.w0(w0_scale), sigma0)?)
        })
        .collect::<Result<Vec<OnlineRun>>>()?;

    let mut aggregate = Vec::new();
    let mut curves = Vec::new();
    let mut max_gap: f64 = 0.0;
    for (ki, &k) in ks.iter().enumerate() {
        let group: Vec<&OnlineRun> = (0..seeds.len()).map(|i| &runs[ki * seeds.len() + i]).collect();
        for (run, seed) in group.iter().zip(&seeds) {
            let rows: Vec<Vec<String>> = run.records.iter().map(curve_row).collect();
            out.write_csv(&format!("online_k{k}_seed{seed}.csv"), &CURVE_HEADER, &rows)?;
            for r in &run.records {
                max_gap = max_gap.max((r.dist_to_star - r.closed_form_dist).abs());
            }
        }
        let curve = MeanCurve::from_runs(k, &group);
        for t in 0..curve.dist_to_star.len() {
            aggregate.push(vec![
                (t + 1).to_string(),
                curve.steps[t].to_string(),
                num(curve.loss[t]),
                num(curve.grad_norm[t]),
                opt_num(curve.grad_bound[t]),
                num(curve.dist_to_star[t]),
                num(curve.closed_form_dist[t]),
                num(curve.sigma_t[t]),
                k.to_string(),
            ]);
        }
        curves.push(curve);
    }
    out.write_csv("online_mean.csv", &CURVE_HEADER, &aggregate)?;

    let mut checks = Vec::new();
    if cfg.bool("exact")? {
        checks.push(Check::within(
            "exact_matches_closed_form",
            max_gap,
            1e-12,
            "exact minimization reproduces the closed-form recursion",
        ));
    } else if cfg.usize("rounds")? > 0 && ks.len() > 1 {
        let mut by_k: Vec<(usize, f64)> = curves.iter().filter_map(|c| c.final_dist().map(|f| (c.k, f))).collect();
        by_k.sort_by_key(|(k, _)| *k);
        let ordered = by_k.windows(2).all(|w| w[1].0 == w[0].0 || w[1].1 < w[0].1);
        let detail = by_k.iter().map(|(k, f)| format!("K={k}: {f:.6}")).collect::<Vec<_>>().join(", ");
        checks.push(Check::flag("final_distance_decreases_with_k", ordered, detail));
    }
    let records = serde_json::to_value(OnlineRecords { curves, max_closed_form_gap: max_gap })?;
    Ok(ExperimentReport::new(cfg, checks, records))
}
