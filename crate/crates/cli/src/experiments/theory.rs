use crate::config::ExperimentConfig;
use crate::error::{usage, Result};
use crate::output::{num, Artifacts};
use crate::report::{Check, ExperimentReport};
use dpolab_core::discrete::*;
use dpolab_core::sampling::{labeled_pair_density_check, labeled_pair_table, simulate_labeled_pairs};
use dpolab_core::special::normal_cdf;
use dpolab_core::Stream;
use rayon::prelude::*;

/// Checks whose computation the `corrupt` test hook can sign-flip.
pub const CORRUPTIBLE: [&str; 3] = ["one_step_sign", "symmetric_gradient", "empirical_counts"];

fn sign(v: f64) -> i8 {
    if v > 0.0 {
        1
    } else if v < 0.0 {
        -1
    } else {
        0
    }
}

fn random_logits(inst: &DiscreteInstance, s: &mut Stream) -> Table {
    (0..inst.n_prompts()).map(|x| (0..inst.n_responses(x)).map(|_| s.range(-3.0, 3.0)).collect()).collect()
}

fn negate(t: &mut Table) {
    t.iter_mut().flatten().for_each(|v| *v = -*v);
}

/// Worst-case measures accumulated over one instance.
#[derive(Default, Clone, Copy)]
struct Worst {
    sign_mismatches: usize,
    ratio: f64,
    off_support: f64,
    symmetric: f64,
    density: f64,
    stationary: f64,
    minimizer_grad: f64,
    rescale: f64,
    support_violations: usize,
}

impl Worst {
    fn merge(self, o: Worst) -> Worst {
        Worst {
            sign_mismatches: self.sign_mismatches + o.sign_mismatches,
            ratio: self.ratio.max(o.ratio),
            off_support: self.off_support.max(o.off_support),
            symmetric: self.symmetric.max(o.symmetric),
            density: self.density.max(o.density),
            stationary: self.stationary.max(o.stationary),
            minimizer_grad: self.minimizer_grad.max(o.minimizer_grad),
            rescale: self.rescale.max(o.rescale),
            support_violations: self.support_violations + o.support_violations,
        }
    }
}

fn population_checks(inst: &DiscreteInstance, s: &mut Stream, alpha: f64, beta: f64, corrupt: &str) -> Result<Worst> {
    let mut w = Worst::default();
    let pol = DirectLogitPolicy::new(inst, random_logits(inst, s), beta)?;
    let (_, mut delta) = population_one_step(inst, &pol, alpha)?;
    if corrupt == "one_step_sign" {
        negate(&mut delta);
    }
    for x in 0..inst.n_prompts() {
        for y in 0..inst.n_responses(x) {
            match winning_probabilities(inst, &pol, x, y)? {
                WinningProbabilities::OffSupport => w.off_support = w.off_support.max(delta[x][y].abs()),
                WinningProbabilities::InSupport { p_true, p_model, .. } => {
                    let gap = p_true - p_model;
                    if sign(delta[x][y]) != sign(gap) {
                        w.sign_mismatches += 1;
                    }
                    if gap != 0.0 {
                        let ratio = delta[x][y] / (2.0 * alpha * gap * inst.joint_marginal(x, y));
                        w.ratio = w.ratio.max((ratio - 1.0).abs());
                    }
                }
            }
        }
    }

    let ordered = ordered_population_gradient(inst, pol.f());
    let mut unordered = unordered_population_gradient(inst, pol.f());
    if corrupt == "symmetric_gradient" {
        negate(&mut unordered);
    }
    w.symmetric = max_abs_diff(&ordered, &unordered);
    w.density = labeled_pair_density_check(inst)?;

    let shifts: Vec<f64> = (0..inst.n_prompts()).map(|_| s.range(-2.0, 2.0)).collect();
    let at_rewards = DirectLogitPolicy::from_rewards(inst, &shifts, beta)?;
    w.stationary = ordered_population_gradient(inst, at_rewards.f()).iter().flatten().fold(0.0, |m, v| m.max(v.abs()));

    let fam = minimizer_family_check(inst, beta)?;
    w.minimizer_grad = fam.gradient_at_optimum;
    w.rescale = fam.rescale_loss_delta;
    w.support_violations = usize::from(!fam.support_preserved);
    Ok(w)
}

struct EmpiricalWorst {
    diff: f64,
    fd: f64,
    empty_cells: usize,
    empty_max: f64,
}

fn empirical_trial(inst: &DiscreteInstance, s: &mut Stream, max_n: usize, alpha: f64, beta: f64, corrupt: &str) -> Result<EmpiricalWorst> {
    let pol = DirectLogitPolicy::new(inst, random_logits(inst, s), beta)?;
    let n = 1 + s.below(max_n);
    let data = sample_discrete_dataset(inst, n, s);
    let step = empirical_one_step(inst, &data, &pol, alpha)?;
    let mut counts = empirical_counts_step(inst, &data, &pol, alpha)?;
    if corrupt == "empirical_counts" {
        negate(&mut counts);
    }
    let mut out = EmpiricalWorst { diff: max_abs_diff(&step, &counts), fd: 0.0, empty_cells: 0, empty_max: 0.0 };
    let h = 1e-6;
    for x in 0..inst.n_prompts() {
        for y in 0..inst.n_responses(x) {
            if !data.iter().any(|t| t.x == x && (t.y_w == y || t.y_l == y)) {
                out.empty_cells += 1;
                out.empty_max = out.empty_max.max(step[x][y].abs());
            }
            let mut up = pol.f().clone();
            up[x][y] += h;
            let mut dn = pol.f().clone();
            dn[x][y] -= h;
            let fd = (empirical_loss(&data, &up) - empirical_loss(&data, &dn)) / (2.0 * h);
            out.fd = out.fd.max((step[x][y] + alpha * fd).abs());
        }
    }
    Ok(out)
}

/// Two-sided 3σ false-alarm probability.
pub const THREE_SIGMA_LEVEL: f64 = 0.002_699_796_063_260_207;

/// |z| threshold that gives `cells` simultaneous two-sided tests the same family-wise
/// false-alarm probability as one 3σ test (Šidák).
pub fn family_threshold(cells: usize) -> f64 {
    let per_cell = 1.0 - (1.0 - THREE_SIGMA_LEVEL).powf(1.0 / cells.max(1) as f64);
    let target = 1.0 - per_cell / 2.0;
    let (mut lo, mut hi) = (0.0, 40.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if normal_cdf(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Largest |z| of simulated labeled-pair frequencies against their enumerated masses, and the
/// number of cells with positive mass. A zero-mass cell with a nonzero count gives infinity.
pub fn label_frequency_z(inst: &DiscreteInstance, draws: usize, stream: &Stream) -> (f64, usize) {
    let mut worst: f64 = 0.0;
    let mut cells = 0;
    for x in 0..inst.n_prompts() {
        let table = labeled_pair_table(inst, x);
        let counts = simulate_labeled_pairs(inst, x, draws, &mut stream.split(x as u64));
        for (trow, crow) in table.iter().zip(&counts) {
            for (p, c) in trow.iter().zip(crow) {
                let freq = *c as f64 / draws as f64;
                let z = if *p == 0.0 {
                    if *c == 0 {
                        0.0
                    } else {
                        f64::INFINITY
                    }
                } else {
                    cells += 1;
                    (freq - p).abs() / (p * (1.0 - p) / draws as f64).sqrt()
                };
                worst = worst.max(z);
            }
        }
    }
    (worst, cells)
}

pub fn run_theory_suite(cfg: &ExperimentConfig, out: &mut Artifacts) -> Result<ExperimentReport> {
    let corrupt = cfg.raw("corrupt")?.to_string();
    if corrupt != "none" && !CORRUPTIBLE.contains(&corrupt.as_str()) {
        return Err(usage("corrupt", format!("expected `none` or one of {CORRUPTIBLE:?}")));
    }
    let root = Stream::new(cfg.u64("seed")?);
    let (alpha, beta) = (cfg.f64("alpha")?, cfg.f64("beta")?);
    let opts = RandomInstanceOptions::default();
    let n_inst = cfg.usize("instances")?;
    let mut instances = (0..n_inst)
        .map(|i| Ok(DiscreteInstance::random(&mut root.split_path(&[0, i as u64]), &opts)?))
        .collect::<Result<Vec<_>>>()?;
    if let Some(path) = cfg.path("instance_file") {
        instances.push(DiscreteInstance::load(&path).map_err(|e| usage("instance_file", e.to_string()))?);
    }

    let worst = instances
        .par_iter()
        .enumerate()
        .map(|(i, inst)| population_checks(inst, &mut root.split_path(&[1, i as u64]), alpha, beta, &corrupt))
        .collect::<Result<Vec<Worst>>>()?
        .into_iter()
        .fold(Worst::default(), Worst::merge);

    let trials = cfg.usize("trials")?;
    let max_n = cfg.usize("max_n")?.max(1);
    let emp = (0..trials)
        .into_par_iter()
        .map(|i| {
            let mut s = root.split_path(&[2, i as u64]);
            let inst = DiscreteInstance::random(&mut s, &opts)?;
            empirical_trial(&inst, &mut s, max_n, alpha, beta, &corrupt)
        })
        .collect::<Result<Vec<EmpiricalWorst>>>()?;
    let emp_diff = emp.iter().map(|e| e.diff).fold(0.0, f64::max);
    let emp_fd = emp.iter().map(|e| e.fd).fold(0.0, f64::max);
    let empty_cells: usize = emp.iter().map(|e| e.empty_cells).sum();
    let empty_max = emp.iter().map(|e| e.empty_max).fold(0.0, f64::max);

    let draws = cfg.usize("label_draws")?;
    let (label_z, label_cells) = (0..cfg.usize("label_instances")?.min(instances.len()))
        .into_par_iter()
        .map(|i| label_frequency_z(&instances[i], draws, &root.split_path(&[3, i as u64])))
        .collect::<Vec<(f64, usize)>>()
        .into_iter()
        .fold((0.0_f64, 0), |(z, c), (zi, ci)| (z.max(zi), c + ci));
    let label_threshold = family_threshold(label_cells);

    let m = instances.len();
    let checks = vec![
        Check::within("one_step_sign", worst.sign_mismatches as f64, 0.0, format!("sign mismatches over {m} instances")),
        Check::within("one_step_ratio", worst.ratio, 1e-10, "max |ratio - 1|"),
        Check::within("off_support_unchanged", worst.off_support, 0.0, "max |Δf| off the pair support"),
        Check::within("empirical_counts", emp_diff, 1e-9, format!("{trials} datasets")),
        Check::within("empirical_finite_difference", emp_fd, 1e-9, "step vs -α times the numerical gradient"),
        Check::flag(
            "empty_competitor_zero",
            empty_cells > 0 && empty_max == 0.0,
            format!("{empty_cells} unseen cells, max |Δf| {}", num(empty_max)),
        ),
        Check::within("symmetric_gradient", worst.symmetric, 1e-12, "ordered vs unordered population gradient"),
        Check::within("labeled_pair_density", worst.density, 1e-12, ""),
        Check::within(
            "label_frequencies",
            label_z,
            label_threshold,
            format!("max |z| over {label_cells} cells at {draws} draws per prompt; 3σ family-wise threshold"),
        ),
        Check::within("reward_logits_stationary", worst.stationary, 1e-12, ""),
        Check::within("minimizer_gradient", worst.minimizer_grad, 1e-10, ""),
        Check::within("rescaled_minimizer_loss", worst.rescale, 1e-12, ""),
        Check::within("reference_zeros_propagate", worst.support_violations as f64, 0.0, "instances violating support"),
    ];
    let rows: Vec<Vec<String>> = checks
        .iter()
        .map(|c| vec![c.name.clone(), c.pass.to_string(), c.worst_error.map(num).unwrap_or_default(), c.tolerance.map(num).unwrap_or_default()])
        .collect();
    out.write_csv("theory_suite.csv", &["check", "pass", "worst_error", "tolerance"], &rows)?;
    let records = serde_json::json!({ "instances": m, "empirical_trials": trials });
    Ok(ExperimentReport::new(cfg, checks, records))
}
