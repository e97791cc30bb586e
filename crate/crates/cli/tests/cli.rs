use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn lab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hopfield-lab")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stdout_json(out: &Output) -> Value {
    assert_eq!(code(out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("json on stdout")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn fixed_point_below_critical_temperature_is_zero() {
    let v = stdout_json(&lab(&["fixed-point", "--beta", "0.5", "--h", "0"]));
    assert_eq!(v["x_star"].as_f64(), Some(0.0));
}

#[test]
fn fixed_point_beta_two() {
    let v = stdout_json(&lab(&["fixed-point", "--beta", "2", "--h", "0"]));
    let x = v["x_star"].as_f64().unwrap();
    // independent bisection on 2x = arctanh(x)
    let (mut lo, mut hi) = (0.5_f64, 1.0 - 1e-15);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if 2.0 * mid > mid.atanh() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    assert!((x - lo).abs() < 1e-12);
    assert!((x - 0.9575).abs() < 1e-4);
}

#[test]
fn exit_codes() {
    assert_eq!(code(&lab(&["fixed-point", "--beta", "1", "--h", "0"])), 3);
    assert_eq!(code(&lab(&["fixed-point", "--beta", "oops"])), 2);
    assert_eq!(code(&lab(&["no-such-command"])), 2);
    assert_eq!(code(&lab(&["sample", "--config", "/nonexistent/config.json"])), 2);
    assert_eq!(code(&lab(&["center", "--n", "3", "--p", "5"])), 2);
    assert_eq!(code(&lab(&["--help"])), 0);
}

#[test]
fn config_for_another_command_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("fp");
    assert_eq!(code(&lab(&["fixed-point", "--beta", "2", "--out", path(&out)])), 0);
    let manifest = out.join("manifest.json");
    assert_eq!(code(&lab(&["sample", "--config", path(&manifest)])), 2);
}

#[test]
fn sample_twice_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let args = ["sample", "--n", "40", "--p", "2", "--beta", "1.2", "--samples", "400", "--seed", "7"];
    for d in [&a, &b] {
        let mut full = args.to_vec();
        full.extend(["--out", path(d)]);
        assert_eq!(code(&lab(&full)), 0);
    }
    assert_eq!(fs::read(a.join("samples.csv")).unwrap(), fs::read(b.join("samples.csv")).unwrap());
    assert_eq!(fs::read(a.join("manifest.json")).unwrap(), fs::read(b.join("manifest.json")).unwrap());
    let csv = fs::read_to_string(a.join("samples.csv")).unwrap();
    assert!(csv.starts_with("chain,draw,w_1,w_2\n"));
    assert_eq!(csv.lines().count(), 401);

    let manifest: Value = serde_json::from_slice(&fs::read(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["schema_version"], 1);
    assert_eq!(manifest["provenance"]["chain_seeds"].as_array().unwrap().len(), 4);
    assert!(manifest["provenance"]["centering"]["lambda"].is_array());
}

#[test]
fn different_seeds_differ() {
    let run = |seed: &str| lab(&["sample", "--n", "30", "--samples", "100", "--seed", seed]).stdout;
    assert_ne!(run("1"), run("2"));
}

#[test]
fn exact_sample_of_two_free_spins() {
    let out = lab(&["sample", "--n", "2", "--p", "1", "--beta", "0", "--h", "0", "--exact"]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("chain,draw,w_1,prob"));
    let mut atoms: Vec<(f64, f64)> = lines
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[2].parse().unwrap(), f[3].parse().unwrap())
        })
        .collect();
    atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
    // W = sqrt(2) * (sigma_1 xi_1 + sigma_2 xi_2) / 2 for fair coins
    let s = 2f64.sqrt();
    let expected = [(-s, 0.25), (0.0, 0.5), (s, 0.25)];
    assert_eq!(atoms.len(), 3);
    for ((w, p), (we, pe)) in atoms.iter().zip(expected) {
        assert!((w - we).abs() < 1e-15 && (p - pe).abs() < 1e-15, "{w} {p}");
    }
}

#[test]
fn conditioning_starvation_exits_four() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(
        &cfg,
        r#"{"schema_version":1,"command":{"sample":{
            "model":{"n":10,"p":1,"beta":0.5,"h":0.0,"pattern_seed":6},
            "chain":{"burnin_sweeps":5,"n_samples":100,"thin_sweeps":1,"n_chains":2,"seed":0,
                     "conditioning":{"center":[0.95],"radius":0.01}}}}}"#,
    )
    .unwrap();
    assert_eq!(code(&lab(&["sample", "--config", path(&cfg)])), 4);
}

#[test]
fn conditioned_draws_stay_in_the_ball() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    let x_plus = 0.858_559_636_640_110_4; // from beta x = arctanh x at beta = 1.5
    fs::write(
        &cfg,
        format!(
            r#"{{"schema_version":1,"command":{{"sample":{{
            "model":{{"n":10,"p":1,"beta":1.5,"h":0.0,"pattern_seed":3}},
            "chain":{{"burnin_sweeps":20,"n_samples":400,"thin_sweeps":1,"n_chains":2,"seed":5,
                     "conditioning":{{"center":[{x_plus}],"radius":0.5}}}}}}}}}}"#
        ),
    )
    .unwrap();
    let out = lab(&["sample", "--config", path(&cfg)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let dir_out = dir.path().join("o");
    assert_eq!(code(&lab(&["sample", "--config", path(&cfg), "--out", path(&dir_out)])), 0);
    let manifest: Value = serde_json::from_slice(&fs::read(dir_out.join("manifest.json")).unwrap()).unwrap();
    let x_center = manifest["provenance"]["centering"]["x_center"][0].as_f64().unwrap();
    for line in text.lines().skip(1) {
        let w: f64 = line.split(',').nth(2).unwrap().parse().unwrap();
        let overlap = w / 10f64.sqrt() + x_center;
        assert!((overlap - x_plus).abs() < 0.5, "overlap {overlap}");
    }
}

#[test]
fn pairs_are_recorded_with_the_increment_bound() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(
        &cfg,
        r#"{"schema_version":1,"command":{"sample":{
            "model":{"n":25,"p":2,"beta":0.8,"h":0.1,"pattern_seed":2},
            "chain":{"burnin_sweeps":10,"n_samples":200,"thin_sweeps":1,"n_chains":2,"seed":1,"record_pairs":true}}}}"#,
    )
    .unwrap();
    let out = dir.path().join("o");
    assert_eq!(code(&lab(&["sample", "--config", path(&cfg), "--out", path(&out)])), 0);
    let pairs = fs::read_to_string(out.join("pairs.csv")).unwrap();
    assert!(pairs.starts_with("index,site,new_spin,w_1,w_2,w_prime_1,w_prime_2,delta_bound_ok\n"));
    assert_eq!(pairs.lines().count(), 201);
    let bound = 2.0 / 25f64.sqrt() + 1e-12;
    for line in pairs.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        assert_eq!(f[7], "true");
        for i in 0..2 {
            let d = f[3 + i].parse::<f64>().unwrap() - f[5 + i].parse::<f64>().unwrap();
            assert!(d.abs() <= bound);
        }
    }
}

#[test]
fn stein_report_exact_mode() {
    let v = stdout_json(&lab(&["stein-report", "--n", "8", "--p", "1", "--mode", "exact"]));
    let r = &v["result"];
    assert_eq!(r["mode"], "exact");
    for key in ["term_a", "term_b", "term_c", "term_a1", "term_a2", "term_a3", "bound_smooth"] {
        assert!(r[key].as_f64().unwrap() >= 0.0, "{key}");
    }
    assert!(r["regression_residual"].as_f64().unwrap() <= 1e-12);
}

#[test]
fn stein_report_monte_carlo_carries_seeds() {
    let v = stdout_json(&lab(&["stein-report", "--n", "30", "--mode", "mc", "--samples", "400", "--seed", "3"]));
    assert_eq!(v["result"]["mode"], "monte_carlo");
    assert_eq!(v["provenance"]["chain_seed"], 3);
    assert!(v["result"]["standard_errors"].is_object());
}

#[test]
fn singular_lambda_exits_five() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("dup.csv");
    // two identical patterns: beta M has eigenvalue 1 at beta = 1/2
    fs::write(&csv, "mu_1,mu_2\n1,1\n-1,-1\n").unwrap();
    let out = lab(&["stein-report", "--patterns", path(&csv), "--n", "2", "--p", "2", "--beta", "0.5", "--h", "0"]);
    assert_eq!(code(&out), 5, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn generated_patterns_feed_later_commands() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("pat");
    assert_eq!(code(&lab(&["gen-patterns", "--n", "6", "--p", "2", "--seed", "11", "--out", path(&out)])), 0);
    let csv = out.join("patterns.csv");
    let text = fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("mu_1,mu_2\n"));
    assert_eq!(text.lines().count(), 7);
    let manifest: Value = serde_json::from_slice(&fs::read(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["provenance"]["pattern_seed"], 11);

    let from_file = stdout_json(&lab(&["center", "--patterns", path(&csv), "--n", "6", "--p", "2", "--beta", "1.5"]));
    let from_seed = stdout_json(&lab(&["center", "--n", "6", "--p", "2", "--beta", "1.5", "--seed", "11"]));
    assert_eq!(from_file["result"], from_seed["result"]);
    assert_eq!(code(&lab(&["center", "--patterns", path(&csv), "--n", "7", "--p", "2"])), 2);
}

#[test]
fn centering_at_high_temperature_is_zero() {
    let v = stdout_json(&lab(&["center", "--n", "50", "--p", "3", "--beta", "0.5", "--h", "0"]));
    for l in v["result"]["lambda"].as_array().unwrap() {
        assert_eq!(l.as_f64(), Some(0.0));
    }
}

#[test]
fn synthetic_rate_study_recovers_the_exponent() {
    let v = stdout_json(&lab(&[
        "rate-study",
        "--n-values",
        "64,128,256,512",
        "--synthetic-c",
        "3",
        "--synthetic-exponent",
        "-0.5",
    ]));
    for fit in v["result"].as_array().unwrap() {
        assert!((fit["fit"]["slope"].as_f64().unwrap() + 0.5).abs() < 1e-12);
    }
}

#[test]
fn short_n_grid_is_rejected() {
    assert_eq!(code(&lab(&["rate-study", "--n-values", "8,16,32", "--synthetic-c", "1", "--synthetic-exponent", "-0.5"])), 2);
}

#[test]
fn small_rate_study_writes_csv_with_a_constants() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("rate");
    let o = lab(&[
        "rate-study",
        "--n-values",
        "16,32,64,128",
        "--samples",
        "2000",
        "--families",
        "smooth,gclass",
        "--out",
        path(&out),
    ]);
    assert!(matches!(code(&o), 0 | 6), "{}", String::from_utf8_lossy(&o.stderr));
    if code(&o) == 6 {
        return;
    }
    let csv = fs::read_to_string(out.join("rate_study.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("n,p,beta,h,family,g_id,distance,se,bound,a_constant"));
    let a = (2.0 / std::f64::consts::PI).sqrt();
    let mut seen = [false; 2];
    for line in lines {
        let f: Vec<&str> = line.split(',').collect();
        assert_eq!(f.len(), 10);
        if f[4] == "gclass" {
            let a_const: f64 = f[9].parse().unwrap();
            assert!((a_const - a).abs() < 1e-15 || (a_const - 2.0 * a).abs() < 1e-15);
            seen[usize::from((a_const - a).abs() > 1e-15)] = true;
        } else {
            assert_eq!(f[9], "");
            assert!(f[8].parse::<f64>().unwrap() >= 0.0);
        }
    }
    assert_eq!(seen, [true, true]);
    assert!(out.join("rate_fit.json").exists());
    assert!(out.join("rate_points.json").exists());
}

#[test]
fn verify_exact_grid_is_exact() {
    let v = stdout_json(&lab(&["verify-exact", "--n-values", "2,4,6", "--seed", "3"]));
    let r = &v["result"];
    assert!(r["max_conditional_law_error"].as_f64().unwrap() <= 1e-13);
    assert!(r["max_regression_residual"].as_f64().unwrap() <= 1e-12);
    assert!(r["max_exchangeability_error"].as_f64().unwrap() <= 1e-13);
    assert!(r["max_stationarity_error"].as_f64().unwrap() <= 1e-12);
    // 3 sizes x 2 p x 2 beta x 2 h
    assert_eq!(r["instances"].as_array().unwrap().len(), 24);
}

#[test]
fn hs_check_small_run() {
    let v = stdout_json(&lab(&["hs-check", "--n", "60", "--samples", "4000", "--seed", "2"]));
    let d = v["result"]["max_cdf_distance"].as_f64().unwrap();
    assert!(d < 0.1, "{d}");
    assert_eq!(v["provenance"]["v_seed"], 1);
}

#[test]
fn every_command_reruns_byte_identically_from_its_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let runs: Vec<Vec<&str>> = vec![
        vec!["gen-patterns", "--n", "12", "--p", "3", "--seed", "4"],
        vec!["fixed-point", "--beta", "1.7", "--h", "0.05"],
        vec!["center", "--n", "40", "--p", "2", "--beta", "1.3", "--h", "0.1"],
        vec!["sample", "--n", "20", "--samples", "300", "--seed", "8"],
        vec!["sample", "--n", "6", "--p", "2", "--exact"],
        vec!["stein-report", "--n", "7", "--p", "2"],
        vec!["stein-report", "--n", "30", "--mode", "mc", "--samples", "300"],
        vec!["rate-study", "--n-values", "16,32,64,128", "--samples", "1000", "--families", "smooth"],
        vec!["hs-check", "--n", "40", "--samples", "2000"],
        vec!["verify-exact", "--n-values", "3,5"],
    ];
    for (i, args) in runs.iter().enumerate() {
        let first = dir.path().join(format!("{i}-first"));
        let second = dir.path().join(format!("{i}-second"));
        let mut a = args.clone();
        a.extend(["--out", path(&first)]);
        let o = lab(&a);
        let c = code(&o);
        assert!(c == 0 || c == 6, "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
        if c == 6 {
            continue;
        }
        let manifest = first.join("manifest.json");
        assert_eq!(code(&lab(&[args[0], "--config", path(&manifest), "--out", path(&second)])), 0, "{args:?}");
        let mut names: Vec<_> = fs::read_dir(&first).unwrap().map(|e| e.unwrap().file_name()).collect();
        names.sort();
        assert!(names.len() >= 2);
        for name in names {
            assert_eq!(fs::read(first.join(&name)).unwrap(), fs::read(second.join(&name)).unwrap(), "{args:?} {name:?}");
        }
    }
}
