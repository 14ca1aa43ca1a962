use crate::config::ExperimentConfig;
use crate::error::Result;
use crate::output::{num, Artifacts};
use crate::report::{Check, ExperimentReport};
use dpolab_core::analytic::{online_recursion, rlhf_closed_form, rlhf_objective, rlhf_objective_monte_carlo, McEstimate};
use dpolab_core::{GaussianLinearPolicy, RewardOracle, Stream, Vector};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimalityRecord {
    pub optimum: McEstimate,
    pub perturbed: Vec<McEstimate>,
    /// Smallest `optimum - perturbed + 2 SE(perturbed)`; non-negative when the check passes.
    pub worst_margin: f64,
}

/// Random perturbation of a policy: `w + N(0, I)·0.5/√d`, `σ·exp(U[-0.5, 0.5])`.
pub fn perturb(policy: &GaussianLinearPolicy, stream: &mut Stream) -> dpolab_core::Result<GaussianLinearPolicy> {
    let d = policy.dim();
    let dw = Vector::gaussian(d, stream).scaled(0.5 / (d as f64).sqrt());
    let sigma = policy.sigma() * stream.range(-0.5, 0.5).exp();
    GaussianLinearPolicy::new(policy.w().add(&dw), sigma)
}

/// Monte-Carlo objective of the closed-form policy against `perturbations` random alternatives,
/// all evaluated on the same underlying draws.
pub fn optimality_study(
    reference: &GaussianLinearPolicy,
    oracle: &RewardOracle,
    beta: f64,
    perturbations: usize,
    samples: usize,
    stream: &Stream,
) -> dpolab_core::Result<OptimalityRecord> {
    let best = rlhf_closed_form(reference, oracle, beta)?;
    let draws = stream.split(0);
    let optimum = rlhf_objective_monte_carlo(&best, reference, oracle, beta, samples, &draws)?;
    let mut ps = stream.split(1);
    let mut perturbed = Vec::with_capacity(perturbations);
    let mut worst_margin = f64::INFINITY;
    for _ in 0..perturbations {
        let p = perturb(&best, &mut ps)?;
        let est = rlhf_objective_monte_carlo(&p, reference, oracle, beta, samples, &draws)?;
        worst_margin = worst_margin.min(optimum.mean - est.mean + 2.0 * est.stderr);
        perturbed.push(est);
    }
    Ok(OptimalityRecord { optimum, perturbed, worst_margin })
}

pub fn run_closed_form(cfg: &ExperimentConfig, out: &mut Artifacts) -> Result<ExperimentReport> {
    let root = Stream::new(cfg.u64("seed")?);
    let d = cfg.usize("d")?;
    let (beta, sigma0, rounds) = (cfg.f64("beta")?, cfg.f64("sigma0")?, cfg.usize("rounds")?);
    let oracle = RewardOracle::new(Vector::gaussian(d, &mut root.split(0)));
    let w0 = Vector::gaussian(d, &mut root.split(1));

    let mut rows = Vec::new();
    let mut worst: f64 = 0.0;
    let mut policy = GaussianLinearPolicy::new(w0.clone(), sigma0)?;
    for t in 0..=rounds {
        if t > 0 {
            policy = rlhf_closed_form(&policy, &oracle, beta)?;
        }
        let st = online_recursion(&w0, sigma0, beta, t, &oracle)?;
        let diff = policy.w().dist_sq(&st.w_t).sqrt().max((policy.sigma() - st.sigma_t).abs());
        worst = worst.max(diff);
        rows.push(vec![
            t.to_string(),
            num(st.sigma_t),
            num(st.dist_to_star()),
            num(policy.sigma()),
            num(policy.w().dist_sq(oracle.w_star())),
            num(diff),
        ]);
    }
    out.write_csv(
        "closed_form.csv",
        &["t", "sigma_t", "dist_to_star", "iterated_sigma_t", "iterated_dist_to_star", "max_abs_diff"],
        &rows,
    )?;

    let reference = GaussianLinearPolicy::new(w0, sigma0)?;
    let opt =
        optimality_study(&reference, &oracle, beta, cfg.usize("perturbations")?, cfg.usize("mc_samples")?.max(2), &root.split(2))?;
    let best = rlhf_closed_form(&reference, &oracle, beta)?;
    let mut opt_rows = vec![vec![
        "optimum".to_string(),
        num(opt.optimum.mean),
        num(opt.optimum.stderr),
        num(rlhf_objective(&best, &reference, &oracle, beta)),
    ]];
    let mut ps = root.split(2).split(1);
    for (i, est) in opt.perturbed.iter().enumerate() {
        let p = perturb(&best, &mut ps)?;
        opt_rows.push(vec![i.to_string(), num(est.mean), num(est.stderr), num(rlhf_objective(&p, &reference, &oracle, beta))]);
    }
    out.write_csv("optimality.csv", &["case", "objective_mc", "stderr", "objective_analytic"], &opt_rows)?;

    let checks = vec![
        Check::within("iterated_minimizer_matches_recursion", worst, 1e-12, format!("t <= {rounds}")),
        Check::flag(
            "closed_form_beats_perturbations",
            opt.worst_margin >= 0.0,
            format!("worst margin {:.6e} over {} perturbations", opt.worst_margin, opt.perturbed.len()),
        ),
    ];
    Ok(ExperimentReport::new(cfg, checks, serde_json::to_value(&opt)?))
}
