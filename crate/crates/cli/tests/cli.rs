use dpolab::output::{Manifest, MANIFEST, TIMING};
use dpolab::ExperimentReport;
use dpolab_core::analytic::online_recursion;
use dpolab_core::discrete::{DiscreteInstance, RandomInstanceOptions};
use dpolab_core::{RewardOracle, Stream, Vector};
use sha2::{Digest, Sha256};
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn dpolab(args: &[&str], threads: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_dpolab"));
    cmd.args(args);
    match threads {
        Some(t) => cmd.env("DPOLAB_THREADS", t),
        None => cmd.env_remove("DPOLAB_THREADS"),
    };
    cmd.output().unwrap()
}

fn run_ok(args: &[&str]) -> Output {
    let o = dpolab(args, None);
    assert_eq!(o.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    o
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path).unwrap().lines().map(|l| l.split(',').map(String::from).collect()).collect()
}

fn report(dir: &Path) -> ExperimentReport {
    ExperimentReport::from_json(&fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

fn dir_str(d: &tempfile::TempDir, name: &str) -> String {
    d.path().join(name).to_string_lossy().into_owned()
}

#[test]
fn zero_rounds_gives_empty_curves() {
    let tmp = tempfile::tempdir().unwrap();
    let out = dir_str(&tmp, "o");
    run_ok(&["online", "--out", &out, "--rounds=0", "--n=16", "--d=2"]);
    let rows = csv_rows(&Path::new(&out).join("online_mean.csv"));
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].join(","), "t,step,loss,grad_norm,grad_bound,dist_to_star,closed_form_dist,sigma_t,k");
    assert!(report(Path::new(&out)).checks.is_empty());
}

#[test]
fn default_online_sweep_structure() {
    let tmp = tempfile::tempdir().unwrap();
    let out = dir_str(&tmp, "o");
    run_ok(&["online", "--out", &out]);
    let rows = csv_rows(&Path::new(&out).join("online_mean.csv"));
    for k in ["1", "2", "8"] {
        assert_eq!(rows.iter().skip(1).filter(|r| r[8] == k).count(), 10);
        for seed in 0..5 {
            assert!(Path::new(&out).join(format!("online_k{k}_seed{seed}.csv")).is_file());
        }
    }
    // 17 significant digits on every float column
    for r in rows.iter().skip(1) {
        let mantissa = r[5].split('e').next().unwrap().trim_start_matches('-');
        assert_eq!(mantissa.len(), 18, "{}", r[5]);
    }
}

#[test]
fn exact_mode_curve_equals_recursion() {
    let tmp = tempfile::tempdir().unwrap();
    let out = dir_str(&tmp, "o");
    run_ok(&["online", "--out", &out, "--exact=true", "--seeds=3", "--k=1", "--d=3", "--n=32", "--rounds=12", "--beta=0.6", "--sigma0=1.4"]);
    let rows = csv_rows(&Path::new(&out).join("online_k1_seed3.csv"));
    assert_eq!(rows.len(), 13);
    for r in rows.iter().skip(1) {
        let (a, b): (f64, f64) = (r[5].parse().unwrap(), r[6].parse().unwrap());
        assert!((a - b).abs() < 1e-12, "dist_to_star {a} vs closed_form_dist {b}");
    }
    // Independent reconstruction of the seed's problem.
    let s = Stream::new(0).split(3);
    let oracle = RewardOracle::new(Vector::gaussian(3, &mut s.split(0)));
    let w0 = oracle.w_star().axpy(1.0, &Vector::gaussian(3, &mut s.split(1)));
    for r in rows.iter().skip(1) {
        let t: usize = r[0].parse().unwrap();
        let st = online_recursion(&w0, 1.4, 0.6, t, &oracle).unwrap();
        assert!((r[5].parse::<f64>().unwrap() - st.dist_to_star()).abs() < 1e-12);
        assert!((r[7].parse::<f64>().unwrap() - st.sigma_t).abs() < 1e-12);
    }
    assert!(report(Path::new(&out)).check("exact_matches_closed_form").unwrap().pass);
}

#[test]
fn theory_suite_passes_and_report_round_trips() {
    let tmp = tempfile::tempdir().unwrap();
    let out = dir_str(&tmp, "o");
    run_ok(&["theory-suite", "--out", &out]);
    let text = fs::read_to_string(Path::new(&out).join("report.json")).unwrap();
    let parsed = ExperimentReport::from_json(&text).unwrap();
    assert!(parsed.passed());
    assert_eq!(parsed.to_json().unwrap(), text);
    assert_eq!(parsed.checks.len(), 13);
}

#[test]
fn corrupted_identity_fails_with_its_name() {
    for name in dpolab::experiments::theory::CORRUPTIBLE {
        let tmp = tempfile::tempdir().unwrap();
        let out = dir_str(&tmp, "o");
        let flag = format!("--corrupt={name}");
        let o = dpolab(&["theory-suite", "--out", &out, "--instances=5", "--trials=10", "--label_instances=1", &flag], None);
        assert_eq!(o.status.code(), Some(1));
        let stderr = String::from_utf8_lossy(&o.stderr);
        assert!(stderr.contains(&format!("check failed: {name}")), "{stderr}");
        let rep = report(Path::new(&out));
        assert!(!rep.check(name).unwrap().pass);
    }
}

#[test]
fn theory_suite_reads_instance_file_without_touching_it() {
    let tmp = tempfile::tempdir().unwrap();
    let inst = DiscreteInstance::random(&mut Stream::new(5), &RandomInstanceOptions::default()).unwrap();
    let path = tmp.path().join("inst.json");
    inst.save(&path).unwrap();
    let cfg = tmp.path().join("lab.ini");
    fs::write(&cfg, format!("[theory-suite]\ninstances = 3\ntrials = 5\ninstance_file = {}\n", path.display())).unwrap();
    let before = (fs::read(&path).unwrap(), fs::read(&cfg).unwrap());
    let out = dir_str(&tmp, "o");
    run_ok(&["theory-suite", "--config", cfg.to_str().unwrap(), "--out", &out]);
    assert_eq!(report(Path::new(&out)).records["instances"], 4);
    assert_eq!((fs::read(&path).unwrap(), fs::read(&cfg).unwrap()), before);
}

#[test]
fn reference_impact_structure_and_symmetry() {
    let tmp = tempfile::tempdir().unwrap();
    let out = dir_str(&tmp, "o");
    run_ok(&["reference-impact", "--out", &out, "--scales=0.5,0.5", "--d=3", "--n=256", "--rounds=4", "--seeds=0,1"]);
    let rows = csv_rows(&Path::new(&out).join("reference_impact_mean.csv"));
    // Header plus t = 0..=4 for each of the two scales.
    assert_eq!(rows.len(), 11);
    // Equal scales share every seed, so both trajectories coincide.
    for (x, y) in rows[1..6].iter().zip(&rows[6..11]) {
        assert_eq!(x, y);
    }
}

#[test]
fn eta_gamma_unit_cell_and_grid() {
    let tmp = tempfile::tempdir().unwrap();
    let out = dir_str(&tmp, "o");
    run_ok(&["eta-gamma", "--out", &out, "--k=1", "--delta=0"]);
    let rows = csv_rows(&Path::new(&out).join("eta_gamma.csv"));
    assert_eq!(rows[0].join(","), "k,delta,eta,gamma,eta_mc,gamma_mc,mc_stderr_eta,mc_stderr_gamma");
    assert!((rows[1][2].parse::<f64>().unwrap() - 1.0).abs() < 1e-8);

    let grid = dir_str(&tmp, "g");
    run_ok(&["eta-gamma", "--out", &grid, "--k=1,2,4,8", "--delta=0,0.5,1,3,10", "--mc_samples=20000"]);
    let first = fs::read(Path::new(&grid).join("eta_gamma.csv")).unwrap();
    assert_eq!(csv_rows(&Path::new(&grid).join("eta_gamma.csv")).len(), 21);
    run_ok(&["eta-gamma", "--out", &grid, "--k=1,2,4,8", "--delta=0,0.5,1,3,10", "--mc_samples=20000"]);
    assert_eq!(fs::read(Path::new(&grid).join("eta_gamma.csv")).unwrap(), first);
}

#[test]
fn displacement_and_closed_form_pass() {
    let tmp = tempfile::tempdir().unwrap();
    let out = dir_str(&tmp, "d");
    run_ok(&["displacement-demo", "--out", &out, "--seed", "4"]);
    assert!(csv_rows(&Path::new(&out).join("displacement.csv")).len() > 3);
    let out = dir_str(&tmp, "c");
    run_ok(&["closed-form", "--out", &out, "--mc_samples=20000", "--perturbations=20"]);
    assert_eq!(csv_rows(&Path::new(&out).join("closed_form.csv")).len(), 102);
}

fn manifest_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let m = Manifest::load(dir).unwrap();
    m.files.iter().map(|e| (e.path.clone(), fs::read(dir.join(&e.path)).unwrap())).collect()
}

#[test]
fn outputs_identical_across_worker_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let args = ["--k=1,4", "--seeds=0,1,2", "--d=4", "--n=512", "--rounds=3", "--steps=20"];
    let mut dirs = Vec::new();
    for threads in ["1", "4"] {
        let out = dir_str(&tmp, threads);
        let mut a = vec!["online", "--out", out.as_str()];
        a.extend(args);
        let o = dpolab(&a, Some(threads));
        assert_eq!(o.status.code(), Some(0));
        dirs.push(out);
    }
    assert_eq!(manifest_bytes(Path::new(&dirs[0])), manifest_bytes(Path::new(&dirs[1])));
    assert_eq!(fs::read(Path::new(&dirs[0]).join(MANIFEST)).unwrap(), fs::read(Path::new(&dirs[1]).join(MANIFEST)).unwrap());
}

#[test]
fn manifest_lists_hashes_and_skips_timing() {
    let tmp = tempfile::tempdir().unwrap();
    let out = dir_str(&tmp, "o");
    run_ok(&["displacement-demo", "--out", &out]);
    let dir = Path::new(&out);
    let m = Manifest::load(dir).unwrap();
    assert!(dir.join(TIMING).is_file());
    assert!(m.files.iter().all(|e| e.path != TIMING && e.path != MANIFEST));
    assert!(m.files.iter().any(|e| e.path == "report.json"));
    for e in &m.files {
        let bytes = fs::read(dir.join(&e.path)).unwrap();
        assert_eq!(hex::encode(Sha256::digest(&bytes)), e.sha256);
        assert_eq!(bytes.len() as u64, e.bytes);
    }
}

#[test]
fn usage_errors_name_the_key() {
    let tmp = tempfile::tempdir().unwrap();
    let out = dir_str(&tmp, "o");
    for (flag, key) in [("--alpah=1", "alpah"), ("--n=lots", "n"), ("--seeds=", "seeds"), ("--corrupt=bogus", "corrupt")] {
        let sub = if key == "corrupt" { "theory-suite" } else { "online" };
        let o = dpolab(&[sub, "--out", &out, flag], None);
        assert_eq!(o.status.code(), Some(2), "{flag}");
        assert!(String::from_utf8_lossy(&o.stderr).contains(&format!("`{key}`")));
    }
    let o = dpolab(&["online", "--config", "/nonexistent/lab.ini"], None);
    assert_eq!(o.status.code(), Some(2));
    let o = dpolab(&["no-such-command"], None);
    assert_eq!(o.status.code(), Some(2));
}
