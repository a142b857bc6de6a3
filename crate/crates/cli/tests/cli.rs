use std::path::PathBuf;
use std::process::{Command, Output};

use serde_json::Value;

fn ergodic(args: &[&str]) -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_ergodic"));
    cmd.args(args).env_remove("ES_DIGIT_BUDGET");
    cmd
}

fn run(cmd: &mut Command) -> (i32, Value, Output) {
    let out = cmd.output().expect("binary runs");
    let code = out.status.code().expect("exit code");
    let json = serde_json::from_slice(&out.stdout).unwrap_or(Value::Null);
    (code, json, out)
}

fn temp_file(name: &str, contents: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("ergodic-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join(name);
    std::fs::write(&path, contents).unwrap();
    path
}

fn ratio(v: &Value) -> f64 {
    v["num"].as_f64().unwrap() / v["den"].as_f64().unwrap()
}

#[test]
fn mean_bound_for_unit_norm_and_eps() {
    let (code, json, _) = run(&mut ergodic(&["mean-bound", "--norm-f", "1", "--eps", "1", "--K", "identity", "--verify"]));
    assert_eq!(code, 0);
    assert_eq!(json["rho"], 1);
    assert_eq!(json["e"], 512);
    assert_eq!(json["formulas"]["e"], "e = 2^9 rho^2");
    assert_eq!(json["verification"]["passed"], true);
}

#[test]
fn mean_bound_reads_the_norm_from_a_system() {
    let (code, json, _) = run(&mut ergodic(&[
        "mean-bound",
        "--system",
        r#"{"kind":"identity","dim":4}"#,
        "--f",
        "[1,1,1,1]",
        "--eps",
        "1/2",
        "--K",
        "identity",
    ]));
    assert_eq!(code, 0);
    // |f| = 1 on the uniform probability space, so rho = 2.
    assert_eq!(json["rho"], 2);
    assert_eq!(json["e"], 2048);
}

/// Orbit average of the left-half indicator under a cyclic shift, squared
/// and integrated over a block of the given length.
fn block_limit_norm_sq(length: f64, atoms: usize, shift: usize) -> f64 {
    let f: Vec<f64> = (0..atoms).map(|x| if x < atoms / 2 { 1.0 } else { 0.0 }).collect();
    let mut total = 0.0;
    for x in 0..atoms {
        let mut y = x;
        let mut sum = 0.0;
        let mut len = 0;
        loop {
            sum += f[y];
            len += 1;
            y = (y + shift) % atoms;
            if y == x {
                break;
            }
        }
        let avg = sum / len as f64;
        total += avg * avg * length / atoms as f64;
    }
    total
}

#[test]
fn specker_reports_exact_norm_and_bits() {
    let (code, json, _) = run(&mut ergodic(&["specker", "--table", r#"{"1":2}"#, "--N", "3", "--verify"]));
    assert_eq!(code, 0);
    assert_eq!(json["bits"], serde_json::json!([0, 1, 0]));
    assert_eq!(json["verification"]["passed"], true);
    // Blocks of length 1/2, 1/4, 1/8 and a fixed tail of 1/8. Machine 1 halts
    // at step 2: its block is rotated by a quarter of its length.
    let expected = block_limit_norm_sq(0.5, 2, 2)
        + block_limit_norm_sq(0.25, 8, 2)
        + block_limit_norm_sq(0.125, 2, 2)
        + block_limit_norm_sq(0.125, 2, 2);
    assert_eq!(ratio(&json["norm_sq"]), expected);
    assert_eq!(ratio(&json["r"]), 0.5 - expected);
}

#[test]
fn identity_system_is_stable_at_once() {
    let (code, json, _) = run(&mut ergodic(&[
        "stability-search",
        "--system",
        r#"{"kind":"identity","dim":3}"#,
        "--f",
        "[1,2,3]",
        "--eps",
        "0.1",
        "--K",
        "n^2",
        "--verify",
    ]));
    assert_eq!(code, 0);
    assert_eq!(json["found"], true);
    assert_eq!(json["witness_n"], 1);
    assert_eq!(json["max_deviation"], 0.0);
}

#[test]
fn swap_needs_two_steps_at_eps_point_six() {
    // A_1 f = (1, -1), A_n f = 0 for even n and (1, -1)/n for odd n, so the
    // largest deviation on [1, 2] is 1 and on [2, 4] it is 1/3.
    let (code, json, _) = run(&mut ergodic(&[
        "stability-search",
        "--system",
        r#"{"kind":"cyclic_permutation","period":2}"#,
        "--f",
        "[1,-1]",
        "--eps",
        "0.6",
        "--K",
        "2n",
    ]));
    assert_eq!(code, 0);
    assert_eq!(json["witness_n"], 2);
    assert!((json["max_deviation"].as_f64().unwrap() - 1.0 / 3.0).abs() < 1e-12);
}

#[test]
fn search_past_the_horizon_exits_three_with_the_best_candidate() {
    let (code, json, _) = run(&mut ergodic(&[
        "stability-search",
        "--system",
        r#"{"kind":"cyclic_permutation","period":2}"#,
        "--f",
        "[1,-1]",
        "--eps",
        "0.01",
        "--K",
        "2n",
        "--horizon",
        "3",
    ]));
    assert_eq!(code, 3);
    assert_eq!(json["found"], false);
    assert!(json["witness_n"].as_u64().unwrap() <= 3);
}

#[test]
fn unknown_config_keys_are_rejected() {
    let path = temp_file("unknown.json", r#"{"eps": 1, "epsilon": 1}"#);
    let (code, json, _) = run(&mut ergodic(&["mean-bound", "--config", path.to_str().unwrap()]));
    assert_eq!(code, 2);
    assert!(json["error"].as_str().unwrap().contains("epsilon"));
}

#[test]
fn invalid_values_exit_two() {
    let (code, _, _) = run(&mut ergodic(&["mean-bound", "--norm-f", "1", "--eps", "-1", "--K", "identity"]));
    assert_eq!(code, 2);
    let (code, _, _) = run(&mut ergodic(&["mean-bound", "--no-such-flag"]));
    assert_eq!(code, 2);
}

#[test]
fn digit_budget_comes_from_the_environment() {
    let args = ["mean-bound", "--norm-f", "1", "--eps", "1", "--K", "identity"];
    let (code, json, _) = run(ergodic(&args).env("ES_DIGIT_BUDGET", "50"));
    assert_eq!(code, 3);
    assert_eq!(json["bound"]["status"], "digit budget of 50 exceeded");
    assert_eq!(json["e"], 512);
    // An explicit budget wins over the environment.
    let mut with_flag: Vec<&str> = args.to_vec();
    with_flag.extend(["--digit-budget", "5000"]);
    let (code, json, _) = run(ergodic(&with_flag).env("ES_DIGIT_BUDGET", "50"));
    assert_eq!(code, 0);
    assert_eq!(json["bound"]["status"], "complete");
    assert!(json["bound"]["value"]["leading"].as_str().unwrap().len() == 20);
}

#[test]
fn full_prints_every_digit() {
    let (code, json, _) = run(&mut ergodic(&["mean-bound", "--norm-f", "1", "--eps", "1", "--K", "identity", "--full"]));
    assert_eq!(code, 0);
    let digits = json["bound"]["value"]["digits"].as_u64().unwrap();
    assert_eq!(json["bound"]["value"]["value"].as_str().unwrap().len() as u64, digits);
}

#[test]
fn unit_comparison_reports_both_iteration_counts() {
    let (code, _, out) = run(ergodic(&[
        "compare-bounds",
        "--norm-f",
        "1",
        "--norm-inf",
        "1",
        "--lambda1",
        "1",
        "--lambda2",
        "1",
        "--K",
        "identity",
        "--format",
        "csv",
    ])
    .env("ES_DIGIT_BUDGET", "1000"));
    // The projection row runs past the budget; the upcrossing row completes.
    assert_eq!(code, 3);
    let text = String::from_utf8(out.stdout).unwrap();
    let rows: Vec<Vec<&str>> = text.lines().map(|l| l.split(',').collect()).collect();
    assert_eq!(rows[0], ["method", "iterations", "step", "bound_digits", "bound"]);
    let find = |m: &str| rows.iter().find(|r| r[0] == m).unwrap().clone();
    assert_eq!(find("pointwise_projection")[1], "128");
    let up = find("pointwise_upcrossing");
    assert_eq!(up[1], "16");
    assert_eq!(up.last().unwrap(), &"1");
}

#[test]
fn repeated_runs_are_byte_identical() {
    let a = temp_file(
        "a.json",
        r#"{"system": {"kind": "random_permutation", "atoms": 12, "seed": 5},
            "f": {"pattern": "half_indicator"}, "alpha": "1/4", "beta": "3/4", "horizon": 64}"#,
    );
    let b = temp_file(
        "b.json",
        r#"{"system": {"kind": "doubling_map", "atoms": 16},
            "f": [0, 1, 0, 1, 0, 1, 0, 1, 1, 1, 0, 0, 1, 0, 0, 1], "alpha": 0.25, "beta": 0.5}"#,
    );
    let args = |jobs: &str| {
        vec![
            "upcrossings".to_string(),
            "--config".into(),
            a.display().to_string(),
            "--config".into(),
            b.display().to_string(),
            "--jobs".into(),
            jobs.into(),
        ]
    };
    let once = |jobs: &str| {
        let argv = args(jobs);
        let argv: Vec<&str> = argv.iter().map(String::as_str).collect();
        run(&mut ergodic(&argv))
    };
    let (c1, j1, o1) = once("1");
    let (c2, _, o2) = once("1");
    let (c3, _, o3) = once("2");
    assert_eq!((c1, c2, c3), (0, 0, 0));
    assert_eq!(o1.stdout, o2.stdout);
    assert_eq!(o1.stdout, o3.stdout);
    assert_eq!(j1.as_array().unwrap().len(), 2);
    assert_eq!(j1[0]["bishop"]["holds"], true);
}

#[test]
fn flags_override_config_values_and_output_goes_to_the_named_file() {
    let out = std::env::temp_dir().join(format!("ergodic-cli-{}-out.csv", std::process::id()));
    let cfg = temp_file(
        "specker.json",
        &format!(r#"{{"table": {{"0": 1}}, "N": 2, "output": {{"path": "{}", "format": "csv"}}}}"#, out.display()),
    );
    let (code, _, stdout) = run(&mut ergodic(&["specker", "--config", cfg.to_str().unwrap(), "--N", "4"]));
    assert_eq!(code, 0);
    assert!(stdout.stdout.is_empty());
    let text = std::fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "machine,halts_at,bit");
    assert_eq!(lines.len(), 5);
    assert_eq!(lines[1], "0,1,1");
}

#[test]
fn pointwise_reports_use_exact_rationals() {
    let (code, json, _) = run(&mut ergodic(&[
        "maximal-check",
        "--system",
        r#"{"kind":"discretized_rotation","numerator":1,"denominator":4,"atoms":8}"#,
        "--f",
        r#"[1, -1, 2, -3, 0, 1, 1, -1]"#,
        "--n",
        "6",
        "--lambda",
        "1/2",
        "--verify",
    ]));
    assert_eq!(code, 0);
    assert_eq!(json["holds"], true);
    // Chebyshev bound |f|_2^2 / lambda^2 with |f|_2^2 = 18/8.
    assert_eq!(json["chebyshev"]["bound"], serde_json::json!({"num": 9, "den": 1}));
    assert!(json["maximal_theorem"]["integral"]["den"].is_u64());
}

#[test]
fn rate_certificate_round_trips_through_verify() {
    let (code, json, _) = run(&mut ergodic(&[
        "rate-from-norm",
        "--system",
        r#"{"kind":"cyclic_permutation","period":4}"#,
        "--f",
        "[1, 0, 0, 0]",
        "--norm-fstar",
        "0.25",
        "--eps",
        "0.1",
        "--verify",
    ]));
    assert_eq!(code, 0);
    assert_eq!(json["verified"], true);
    assert_eq!(json["verification"]["passed"], true);
    assert!(json["max_deviation"].as_f64().unwrap() <= 0.1);
}
