use crate::config::ExperimentConfig;
use crate::error::Result;
use crate::output::{num, Artifacts};
use crate::report::{Check, ExperimentReport};
use dpolab_core::analytic::{amplification, amplification_monte_carlo, gamma, small_delta_checks};
use dpolab_core::Stream;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

pub const HEADER: [&str; 8] = ["k", "delta", "eta", "gamma", "eta_mc", "gamma_mc", "mc_stderr_eta", "mc_stderr_gamma"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub k: usize,
    pub delta: f64,
    /// `None` when quadrature failed for this cell.
    pub eta: Option<f64>,
    pub gamma: Option<f64>,
    pub quadrature_error: Option<String>,
    pub eta_mc: f64,
    pub gamma_mc: f64,
    pub mc_stderr_eta: f64,
    pub mc_stderr_gamma: f64,
}

impl Cell {
    /// Largest quadrature-vs-simulation discrepancy in standard errors.
    pub fn z_score(&self) -> Option<f64> {
        let (e, g) = (self.eta?, self.gamma?);
        Some(((e - self.eta_mc) / self.mc_stderr_eta).abs().max(((g - self.gamma_mc) / self.mc_stderr_gamma).abs()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Records {
    cells: Vec<Cell>,
    /// The k = 1 gradient constant from quadrature and the `1/√π` alternative.
    gradient_constant: f64,
    gradient_constant_inv_sqrt_pi: f64,
}

pub fn run_eta_gamma(cfg: &ExperimentConfig, out: &mut Artifacts) -> Result<ExperimentReport> {
    let ks: Vec<usize> = cfg.list("k")?;
    let deltas: Vec<f64> = cfg.list("delta")?;
    let samples = cfg.usize("mc_samples")?.max(2);
    let root = Stream::new(cfg.u64("seed")?);
    let grid: Vec<(usize, usize)> = ks.iter().flat_map(|&k| (0..deltas.len()).map(move |j| (k, j))).collect();
    let cells = grid
        .par_iter()
        .map(|&(k, j)| {
            let delta = deltas[j];
            let mc = amplification_monte_carlo(k, delta, samples, &root.split_path(&[k as u64, j as u64]))?;
            let (eta, gamma, quadrature_error) = match amplification(k, delta) {
                Ok(a) => (Some(a.eta), Some(a.gamma), None),
                Err(e) => (None, None, Some(e.to_string())),
            };
            Ok(Cell {
                k,
                delta,
                eta,
                gamma,
                quadrature_error,
                eta_mc: mc.eta.mean,
                gamma_mc: mc.gamma.mean,
                mc_stderr_eta: mc.eta.stderr,
                mc_stderr_gamma: mc.gamma.stderr,
            })
        })
        .collect::<Result<Vec<Cell>>>()?;

    let rows: Vec<Vec<String>> = cells
        .iter()
        .map(|c| {
            vec![
                c.k.to_string(),
                num(c.delta),
                c.eta.map(num).unwrap_or_else(|| "NaN".into()),
                c.gamma.map(num).unwrap_or_else(|| "NaN".into()),
                num(c.eta_mc),
                num(c.gamma_mc),
                num(c.mc_stderr_eta),
                num(c.mc_stderr_gamma),
            ]
        })
        .collect();
    out.write_csv("eta_gamma.csv", &HEADER, &rows)?;

    let mut checks = Vec::new();
    for c in cells.iter().filter(|c| c.quadrature_error.is_some()) {
        checks.push(Check::flag(
            &format!("quadrature_k{}_delta{}", c.k, c.delta),
            false,
            c.quadrature_error.clone().unwrap_or_default(),
        ));
    }
    let unit: Vec<f64> = cells.iter().filter(|c| c.k == 1).filter_map(|c| c.eta).map(|e| (e - 1.0).abs()).collect();
    if !unit.is_empty() {
        checks.push(Check::within("eta_is_one_without_selection", unit.iter().copied().fold(0.0, f64::max), 1e-8, ""));
    }
    let worst_z = cells.iter().filter_map(Cell::z_score).fold(0.0, f64::max);
    checks.push(Check::within(
        "quadrature_matches_simulation",
        worst_z,
        cfg.f64("mc_tolerance_se")?,
        format!("worst discrepancy in standard errors over {} cells", cells.len()),
    ));
    let mut small: Vec<usize> = ks.iter().copied().filter(|&k| k >= 2).collect();
    small.sort_unstable();
    small.dedup();
    for k in small {
        let r = small_delta_checks(k)?;
        checks.push(Check::flag(
            &format!("small_bias_k{k}"),
            r.eta_pass && r.gamma_pass && r.continuity_pass,
            format!("eta {:.6} (<= {:.4}), gamma {:.6} (>= {:.4})", r.eta, r.eta_threshold, r.gamma, r.gamma_threshold),
        ));
    }
    let records = Records {
        cells,
        gradient_constant: gamma(1, 0.0)?,
        gradient_constant_inv_sqrt_pi: 1.0 / PI.sqrt(),
    };
    Ok(ExperimentReport::new(cfg, checks, serde_json::to_value(records)?))
}
