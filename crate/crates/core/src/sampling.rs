//! Preference-pair generation: Bradley–Terry labeling on top of standard or best-of-K
//! response sampling, plus the density of the noise that best-of-K selects.
//!
//! Stream consumption per tuple is fixed: `k` normals for the candidates (one for the
//! standard sampler, which is the `k = 1` case), one normal for the second response, then
//! one uniform for the label.

use crate::discrete::DiscreteInstance;
use crate::error::{contract, Result};
use crate::model::{GaussianLinearPolicy, PreferenceDataset, PreferenceTuple, RewardOracle, Vector};
use crate::rng::Stream;
use crate::special::{normal_cdf, normal_pdf, sigmoid};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SamplerMode {
    Standard,
    BestOfK,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplerSpec {
    mode: SamplerMode,
    k: usize,
}

impl SamplerSpec {
    pub fn standard() -> Self {
        Self { mode: SamplerMode::Standard, k: 1 }
    }

    /// `k = 1` is the standard sampler; larger `k` is best-of-K.
    pub fn from_k(k: usize) -> Result<Self> {
        match k {
            0 => Err(contract("sampler k must be at least 1")),
            1 => Ok(Self::standard()),
            _ => Ok(Self { mode: SamplerMode::BestOfK, k }),
        }
    }

    pub fn mode(&self) -> SamplerMode {
        self.mode
    }

    pub fn k(&self) -> usize {
        self.k
    }
}

/// Returns `(y1, y2)` with probability `σ(r*(x,y1) - r*(x,y2))`, else `(y2, y1)`.
/// Consumes one uniform.
pub fn bt_label(x: &Vector, y1: f64, y2: f64, oracle: &RewardOracle, stream: &mut Stream) -> Result<(f64, f64)> {
    let gap = oracle.reward(x, y1)? - oracle.reward(x, y2)?;
    let u = stream.uniform();
    Ok(if u < sigmoid(gap) { (y1, y2) } else { (y2, y1) })
}

/// A labeled tuple together with the unlabeled draws it came from.
#[derive(Clone, Debug, PartialEq)]
pub struct SampledPair {
    pub y1: f64,
    pub y2: f64,
    pub tuple: PreferenceTuple,
}

impl SampledPair {
    pub fn first_won(&self) -> bool {
        self.tuple.y_w == self.y1
    }
}

pub fn sample_pair(
    policy: &GaussianLinearPolicy,
    oracle: &RewardOracle,
    x: &Vector,
    spec: SamplerSpec,
    stream: &mut Stream,
) -> Result<PreferenceTuple> {
    Ok(sample_pair_traced(policy, oracle, x, spec, stream)?.tuple)
}

pub fn sample_pair_traced(
    policy: &GaussianLinearPolicy,
    oracle: &RewardOracle,
    x: &Vector,
    spec: SamplerSpec,
    stream: &mut Stream,
) -> Result<SampledPair> {
    if policy.dim() != x.dim() || oracle.dim() != x.dim() {
        return Err(contract("sample_pair: dimension mismatch"));
    }
    let mean = policy.mean(x);
    let target = oracle.target(x);
    let sigma = policy.sigma();
    let mut y1 = mean + sigma * stream.normal();
    let mut best = (y1 - target).abs();
    for _ in 1..spec.k() {
        let y = mean + sigma * stream.normal();
        let dist = (y - target).abs();
        if dist < best {
            best = dist;
            y1 = y;
        }
    }
    let y2 = mean + sigma * stream.normal();
    let (y_w, y_l) = bt_label(x, y1, y2, oracle, stream)?;
    Ok(SampledPair {
        y1,
        y2,
        tuple: PreferenceTuple { x: x.clone(), y_w, y_l },
    })
}

/// Parameters of the best-of-K selected-noise density.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledPairDensityQuery {
    pub delta: f64,
    pub k: usize,
}

impl LabeledPairDensityQuery {
    pub fn new(delta: f64, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(contract("k must be at least 1"));
        }
        if !delta.is_finite() {
            return Err(contract("delta must be finite"));
        }
        Ok(Self { delta, k })
    }
}

/// `P(|δ + Z| > v)` for `v ≥ 0`, computed as `Φ(δ - v) + Φ(-v - δ)` so that both tails keep
/// their relative precision, clamped to `[0, 1]`.
pub fn abs_shifted_normal_sf(delta: f64, v: f64) -> f64 {
    (normal_cdf(delta - v) + normal_cdf(-v - delta)).clamp(0.0, 1.0)
}

/// Density of the standardized noise of the response that best-of-K keeps:
/// `K φ(u) (1 - F_{|δ+Z|}(|δ+u|))^{K-1}`.
pub fn best_of_k_noise_pdf(query: &LabeledPairDensityQuery, u: f64) -> f64 {
    let phi = normal_pdf(u);
    if query.k == 1 {
        return phi;
    }
    let tail = abs_shifted_normal_sf(query.delta, (query.delta + u).abs());
    query.k as f64 * phi * tail.powi(query.k as i32 - 1)
}

/// One tuple per prompt. Prompt `i` uses `stream.split(i)`, so the result does not depend on
/// how the work is scheduled across threads.
pub fn generate_dataset(
    policy: &GaussianLinearPolicy,
    oracle: &RewardOracle,
    prompts: &[Vector],
    spec: SamplerSpec,
    stream: &Stream,
) -> Result<PreferenceDataset> {
    if prompts.is_empty() {
        return Err(contract("generate_dataset: prompts must be non-empty"));
    }
    let tuples = prompts
        .par_iter()
        .enumerate()
        .map(|(i, x)| sample_pair(policy, oracle, x, spec, &mut stream.split(i as u64)))
        .collect::<Result<Vec<_>>>()?;
    PreferenceDataset::new(tuples, stream.key())
}

/// Maximum over prompts and ordered `(y, y')` of the gap between the labeled-pair mass
/// obtained by enumerating every (draw, label) outcome and the closed form
/// `(p(y,y') + p(y',y)) σ(r(y) - r(y'))`.
pub fn labeled_pair_density_check(instance: &DiscreteInstance) -> Result<f64> {
    instance.validate()?;
    let mut worst = 0.0f64;
    for x in 0..instance.n_prompts() {
        let enumerated = labeled_pair_table(instance, x);
        let n = instance.n_responses(x);
        for y in 0..n {
            for yp in 0..n {
                let closed = (instance.pair(x, y, yp) + instance.pair(x, yp, y))
                    * sigmoid(instance.reward(x, y) - instance.reward(x, yp));
                worst = worst.max((enumerated[y][yp] - closed).abs());
            }
        }
    }
    Ok(worst)
}

/// Mass of each labeled outcome `(y_w, y_l)` at prompt `x`, accumulated over ordered draws
/// `(y1, y2) ~ pair_pmf` and both labels.
pub fn labeled_pair_table(instance: &DiscreteInstance, x: usize) -> Vec<Vec<f64>> {
    let n = instance.n_responses(x);
    let mut table = vec![vec![0.0; n]; n];
    for a in 0..n {
        for b in 0..n {
            let p = instance.pair(x, a, b);
            if p == 0.0 {
                continue;
            }
            let win = sigmoid(instance.reward(x, a) - instance.reward(x, b));
            table[a][b] += p * win;
            table[b][a] += p * (1.0 - win);
        }
    }
    table
}

/// Simulates `draws` labeled pairs at prompt `x` and returns the count of each `(y_w, y_l)`.
pub fn simulate_labeled_pairs(instance: &DiscreteInstance, x: usize, draws: usize, stream: &mut Stream) -> Vec<Vec<u64>> {
    let n = instance.n_responses(x);
    let flat: Vec<f64> = (0..n * n).map(|i| instance.pair(x, i / n, i % n)).collect();
    let mut counts = vec![vec![0u64; n]; n];
    for _ in 0..draws {
        let cell = stream.categorical(&flat);
        let (a, b) = (cell / n, cell % n);
        let win = sigmoid(instance.reward(x, a) - instance.reward(x, b));
        if stream.uniform() < win {
            counts[a][b] += 1;
        } else {
            counts[b][a] += 1;
        }
    }
    counts
}

/// Writes `x_0,...,x_{d-1},y_w,y_l` rows with 17 significant digits.
pub fn write_dataset_csv<W: Write>(dataset: &PreferenceDataset, writer: W) -> Result<()> {
    let d = dataset.dim().ok_or_else(|| contract("cannot write an empty dataset"))?;
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = (0..d).map(|i| format!("x_{i}")).collect();
    header.push("y_w".into());
    header.push("y_l".into());
    w.write_record(&header)?;
    for t in &dataset.tuples {
        let row: Vec<String> = t
            .x
            .as_slice()
            .iter()
            .chain([&t.y_w, &t.y_l])
            .map(|v| format!("{v:.16e}"))
            .collect();
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset_csv<R: Read>(reader: R, seed_record: u64) -> Result<PreferenceDataset> {
    let mut r = csv::Reader::from_reader(reader);
    let headers = r.headers()?.clone();
    let cols = headers.len();
    if cols < 3 || &headers[cols - 2] != "y_w" || &headers[cols - 1] != "y_l" {
        return Err(contract("dataset csv must end with y_w,y_l columns"));
    }
    for (i, h) in headers.iter().take(cols - 2).enumerate() {
        if h != format!("x_{i}") {
            return Err(contract(format!("unexpected dataset column {h:?} at position {i}")));
        }
    }
    let mut tuples = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let vals = rec
            .iter()
            .map(|s| s.trim().parse::<f64>().map_err(|e| contract(format!("bad number {s:?}: {e}"))))
            .collect::<Result<Vec<f64>>>()?;
        let (xs, ys) = vals.split_at(cols - 2);
        tuples.push(PreferenceTuple {
            x: Vector::new(xs.to_vec())?,
            y_w: ys[0],
            y_l: ys[1],
        });
    }
    PreferenceDataset::new(tuples, seed_record)
}

pub fn save_dataset_csv(dataset: &PreferenceDataset, path: &Path) -> Result<()> {
    write_dataset_csv(dataset, std::fs::File::create(path)?)
}

pub fn load_dataset_csv(path: &Path, seed_record: u64) -> Result<PreferenceDataset> {
    read_dataset_csv(std::fs::File::open(path)?, seed_record)
}
