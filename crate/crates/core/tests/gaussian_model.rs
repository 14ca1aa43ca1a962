use dpolab_core::analytic::{online_recursion, rlhf_closed_form};
use dpolab_core::dpo::{
    batch_step_logit_change, dpo_loss, mean_grad, online_dpo, per_sample_grad, per_sample_hessian, train_round,
    PromptSource, TrainConfig,
};
use dpolab_core::sampling::{generate_dataset, read_dataset_csv, write_dataset_csv};
use dpolab_core::{GaussianLinearPolicy, PreferenceDataset, PreferenceTuple, RewardOracle, SamplerSpec, Stream, Vector};
use proptest::prelude::*;

fn random_policy(d: usize, s: &mut Stream) -> GaussianLinearPolicy {
    GaussianLinearPolicy::new(Vector::gaussian(d, s), s.range(0.4, 1.6)).unwrap()
}

fn prompts(n: usize, d: usize, s: &mut Stream) -> Vec<Vector> {
    (0..n).map(|_| Vector::gaussian(d, s)).collect()
}

#[test]
fn mean_gradient_matches_finite_differences() {
    let mut s = Stream::new(2025);
    for _ in 0..10 {
        let d = 1 + s.below(4);
        let policy = random_policy(d, &mut s);
        let reference = random_policy(d, &mut s);
        let oracle = RewardOracle::new(Vector::gaussian(d, &mut s));
        let beta = s.range(0.2, 3.0);
        let xs = prompts(20, d, &mut s);
        let data = generate_dataset(&reference, &oracle, &xs, SamplerSpec::from_k(2).unwrap(), &s.split(7)).unwrap();
        let g = mean_grad(&policy, &reference, beta, &data.tuples);
        let h = 1e-6;
        let fd: Vec<f64> = (0..d)
            .map(|i| {
                let mut up = policy.w().clone();
                up[i] += h;
                let mut dn = policy.w().clone();
                dn[i] -= h;
                let lu = dpo_loss(&policy.with_w(up).unwrap(), &reference, beta, &data).unwrap();
                let ld = dpo_loss(&policy.with_w(dn).unwrap(), &reference, beta, &data).unwrap();
                (lu - ld) / (2.0 * h)
            })
            .collect();
        let fd = Vector::new(fd).unwrap();
        let rel = g.dist_sq(&fd).sqrt() / g.norm().max(1e-12);
        assert!(rel < 1e-6, "relative error {rel}");
    }
}

#[test]
fn hessian_matches_finite_differences_of_gradient() {
    let mut s = Stream::new(99);
    for _ in 0..10 {
        let d = 1 + s.below(4);
        let policy = random_policy(d, &mut s);
        let reference = random_policy(d, &mut s);
        let t = PreferenceTuple { x: Vector::gaussian(d, &mut s), y_w: s.range(-2.0, 2.0), y_l: s.range(-2.0, 2.0) };
        let beta = s.range(0.2, 2.0);
        let hess = per_sample_hessian(&policy, &reference, beta, &t).unwrap();
        let h = 1e-5;
        let mut fd = nalgebra::DMatrix::zeros(d, d);
        for j in 0..d {
            let mut up = policy.w().clone();
            up[j] += h;
            let mut dn = policy.w().clone();
            dn[j] -= h;
            let gu = per_sample_grad(&policy.with_w(up).unwrap(), &reference, beta, &t).unwrap();
            let gd = per_sample_grad(&policy.with_w(dn).unwrap(), &reference, beta, &t).unwrap();
            for i in 0..d {
                fd[(i, j)] = (gu[i] - gd[i]) / (2.0 * h);
            }
        }
        // Absolute floor covers saturated tuples where the curvature sits near roundoff.
        let err = (&hess - &fd).norm();
        assert!(err < 1e-4 * hess.norm() + 1e-9, "Frobenius error {err}, |H| {}", hess.norm());
        let eig = hess.clone().symmetric_eigenvalues();
        assert!(eig.iter().all(|e| *e >= -1e-12));
    }
}

#[test]
fn iterated_closed_form_equals_recursion() {
    let mut s = Stream::new(5);
    for _ in 0..10 {
        let d = 1 + s.below(5);
        let oracle = RewardOracle::new(Vector::gaussian(d, &mut s));
        let w0 = Vector::gaussian(d, &mut s);
        let sigma0 = s.range(0.2, 2.0);
        let beta = s.range(0.1, 5.0);
        let mut p = GaussianLinearPolicy::new(w0.clone(), sigma0).unwrap();
        for t in 1..=100 {
            p = rlhf_closed_form(&p, &oracle, beta).unwrap();
            let st = online_recursion(&w0, sigma0, beta, t, &oracle).unwrap();
            assert!(p.w().dist_sq(&st.w_t).sqrt() < 1e-12);
            assert!((p.sigma() * p.sigma() - st.sigma_t * st.sigma_t).abs() < 1e-12);
        }
    }
}

#[test]
fn exact_mode_online_run_tracks_recursion() {
    let mut s = Stream::new(6);
    let oracle = RewardOracle::new(Vector::gaussian(4, &mut s));
    let w0 = Vector::gaussian(4, &mut s);
    let mut cfg = TrainConfig::new(0.7, 0.0, 0, 25, 16, SamplerSpec::standard(), 1);
    cfg.exact_minimization = true;
    let run = online_dpo(&cfg, &oracle, &PromptSource::FreshGaussian { dim: 4 }, &w0, 1.3).unwrap();
    for r in &run.records {
        let st = online_recursion(&w0, 1.3, 0.7, r.t, &oracle).unwrap();
        assert!(r.w_t.dist_sq(&st.w_t).sqrt() < 1e-12);
        assert!((r.sigma_t - st.sigma_t).abs() < 1e-12);
        assert!((r.dist_to_star - r.closed_form_dist).abs() < 1e-12);
    }
}

#[test]
fn gradient_descent_round_reaches_closed_form_mixture() {
    let (d, n) = (8, 4096);
    let mut s = Stream::new(314);
    let oracle = RewardOracle::new(Vector::gaussian(d, &mut s));
    let w_ref = oracle.w_star().add(&Vector::gaussian(d, &mut s));
    let reference = GaussianLinearPolicy::new(w_ref, 1.0).unwrap();
    let xs = prompts(n, d, &mut s);
    let data = generate_dataset(&reference, &oracle, &xs, SamplerSpec::standard(), &s.split(1)).unwrap();
    let cfg = TrainConfig::new(1.0, 0.05, 10_000, 1, n, SamplerSpec::standard(), 0);
    let (out, _) = train_round(&reference, &reference, &oracle, &cfg, &data, 1).unwrap();
    let target = rlhf_closed_form(&reference, &oracle, 1.0).unwrap();
    let rel = out.w().dist_sq(target.w()).sqrt() / target.w().norm();
    assert!(rel < 0.10, "relative distance {rel}");
    assert_eq!(out.sigma(), target.sigma());
}

#[test]
fn gaussian_batch_step_is_displacement_free() {
    let d = 8;
    let mut s = Stream::new(77);
    let oracle = RewardOracle::new(Vector::gaussian(d, &mut s));
    let reference = GaussianLinearPolicy::new(oracle.w_star().add(&Vector::gaussian(d, &mut s)), 1.0).unwrap();
    let xs = prompts(512, d, &mut s);
    let data = generate_dataset(&reference, &oracle, &xs, SamplerSpec::standard(), &s.split(3)).unwrap();
    let change = batch_step_logit_change(&reference, 1.0, 0.1, &data).unwrap();
    assert!(change.mean_df_w > 0.0, "{change:?}");
    assert!(change.mean_df_l < 0.0, "{change:?}");
}

#[test]
fn dataset_generation_is_thread_count_independent() {
    let mut s = Stream::new(12);
    let oracle = RewardOracle::new(Vector::gaussian(3, &mut s));
    let policy = random_policy(3, &mut s);
    let xs = prompts(3000, 3, &mut s);
    let spec = SamplerSpec::from_k(4).unwrap();
    let root = Stream::new(8);
    let serial = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let wide = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
    let a = serial.install(|| generate_dataset(&policy, &oracle, &xs, spec, &root).unwrap());
    let b = wide.install(|| generate_dataset(&policy, &oracle, &xs, spec, &root).unwrap());
    assert_eq!(a, b);
    let ga = serial.install(|| mean_grad(&policy, &policy, 1.0, &a.tuples));
    let gb = wide.install(|| mean_grad(&policy, &policy, 1.0, &a.tuples));
    assert_eq!(ga, gb);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn csv_round_trip(rows in prop::collection::vec((prop::collection::vec(-1e6f64..1e6, 3), -1e3f64..1e3, -1e3f64..1e3), 1..30)) {
        let tuples = rows.into_iter()
            .map(|(x, y_w, y_l)| PreferenceTuple { x: Vector::new(x).unwrap(), y_w, y_l })
            .collect();
        let data = PreferenceDataset::new(tuples, 17).unwrap();
        let mut buf = Vec::new();
        write_dataset_csv(&data, &mut buf).unwrap();
        prop_assert_eq!(read_dataset_csv(buf.as_slice(), 17).unwrap(), data);
    }
}
