use super::online::{train_config, SeedProblem};
use crate::config::ExperimentConfig;
use crate::error::{usage, Result};
use crate::output::{num, Artifacts};
use crate::report::{Check, ExperimentReport};
use dpolab_core::dpo::{online_dpo, PromptSource};
use dpolab_core::{GaussianLinearPolicy, Stream, Vector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Mean log-density of the reward-maximizing response `w*ᵀx` under `policy`.
fn ground_truth_log_density(policy: &GaussianLinearPolicy, w_star: &Vector, prompts: &[Vector]) -> Result<f64> {
    let mut s = 0.0;
    for x in prompts {
        s += policy.log_density(x, w_star.dot(x))?;
    }
    Ok(s / prompts.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub scale: f64,
    /// Seed-averaged values for t = 0..=T.
    pub dist_to_star: Vec<f64>,
    pub log_density: Vec<f64>,
}

impl Trajectory {
    pub fn final_dist(&self) -> f64 {
        *self.dist_to_star.last().expect("trajectory includes t = 0")
    }
}

pub fn run_reference_impact(cfg: &ExperimentConfig, out: &mut Artifacts) -> Result<ExperimentReport> {
    let scales: Vec<f64> = cfg.list("scales")?;
    if scales.len() != 2 || scales.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
        return Err(usage("scales", "need exactly two non-negative perturbation scales"));
    }
    let seeds: Vec<u64> = cfg.list("seeds")?;
    let (d, n, k) = (cfg.usize("d")?, cfg.usize("n")?, cfg.usize("k")?);
    let sigma0 = cfg.f64("sigma0")?;
    let root = Stream::new(cfg.u64("seed")?);
    let problems: Vec<SeedProblem> = seeds.iter().map(|&s| SeedProblem::new(&root, s, d, n, false)).collect();

    let cells: Vec<(usize, usize)> = (0..2).flat_map(|si| (0..seeds.len()).map(move |i| (si, i))).collect();
    let per_cell = cells
        .par_iter()
        .map(|&(si, i)| {
            let p = &problems[i];
            let PromptSource::Fixed(xs) = &p.prompts else { unreachable!("reference study uses a fixed prompt set") };
            let w0 = p.w0(scales[si]);
            let run = online_dpo(&train_config(cfg, k, p.train_seed)?, &p.oracle, &p.prompts, &w0, sigma0)?;
            let mut rows = vec![(w0.dist_sq(p.oracle.w_star()), {
                let start = GaussianLinearPolicy::new(w0.clone(), sigma0)?;
                ground_truth_log_density(&start, p.oracle.w_star(), xs)?
            })];
            for r in &run.records {
                let pol = GaussianLinearPolicy::new(r.w_t.clone(), r.sigma_t)?;
                rows.push((r.dist_to_star, ground_truth_log_density(&pol, p.oracle.w_star(), xs)?));
            }
            Ok(rows)
        })
        .collect::<Result<Vec<Vec<(f64, f64)>>>>()?;

    let mut detail_rows = Vec::new();
    let mut trajectories = Vec::new();
    for (si, &scale) in scales.iter().enumerate() {
        let group = &per_cell[si * seeds.len()..(si + 1) * seeds.len()];
        for (rows, seed) in group.iter().zip(&seeds) {
            for (t, (dist, logd)) in rows.iter().enumerate() {
                detail_rows.push(vec![num(scale), seed.to_string(), t.to_string(), num(*dist), num(*logd)]);
            }
        }
        let m = seeds.len() as f64;
        let len = group[0].len();
        trajectories.push(Trajectory {
            scale,
            dist_to_star: (0..len).map(|t| group.iter().map(|g| g[t].0).sum::<f64>() / m).collect(),
            log_density: (0..len).map(|t| group.iter().map(|g| g[t].1).sum::<f64>() / m).collect(),
        });
    }
    out.write_csv("reference_impact.csv", &["scale", "seed", "t", "dist_to_star", "log_density"], &detail_rows)?;
    let mean_rows: Vec<Vec<String>> = trajectories
        .iter()
        .flat_map(|tr| {
            (0..tr.dist_to_star.len())
                .map(|t| vec![num(tr.scale), t.to_string(), num(tr.dist_to_star[t]), num(tr.log_density[t])])
                .collect::<Vec<_>>()
        })
        .collect();
    out.write_csv("reference_impact_mean.csv", &["scale", "t", "dist_to_star", "log_density"], &mean_rows)?;

    let mut checks = vec![Check::flag(
        "trajectories_same_length",
        trajectories[0].dist_to_star.len() == trajectories[1].dist_to_star.len(),
        "",
    )];
    let (small, large) = if scales[0] <= scales[1] { (0, 1) } else { (1, 0) };
    if scales[small] < scales[large] {
        let (a, b) = (trajectories[small].final_dist(), trajectories[large].final_dist());
        checks.push(Check::flag(
            "misaligned_reference_ends_farther",
            b > a,
            format!("scale {}: {a:.6}, scale {}: {b:.6}", scales[small], scales[large]),
        ));
    }
    Ok(ExperimentReport::new(cfg, checks, serde_json::to_value(&trajectories)?))
}
