use std::process::{Command, Output};

fn holofol(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_holofol"))
        .args(args)
        .env_remove("HOLOFOL_SEED")
        .output()
        .expect("spawn holofol")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn first_line(o: &Output) -> String {
    stdout(o).lines().next().unwrap_or_default().to_string()
}

#[test]
fn model_constraints_example() {
    let o = holofol(&["model", "lambda=1,i", "x=0.36787944117144233,0.36787944117144233"]);
    assert!(o.status.success());
    let text = stdout(&o);
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows[0], "coord,s,t,bound,constraint");
    assert_eq!(rows[1], "1,1,0,1,u < 1");
    assert_eq!(rows[2], "2,0,1,1,-v < 1");
    assert!(rows[3].starts_with("# boundary_distance_at_0=1"));
}

#[test]
fn model_errors() {
    let o = holofol(&["model", "lambda=1,0"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("lambda must be nonzero"));
    let o = holofol(&["model", "x=0,0"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("chart undefined at singularity"));
}

#[test]
fn verify_metric_exit_codes() {
    assert_eq!(holofol(&["verify-metric", "delta=0.25"]).status.code(), Some(0));
    let o = holofol(&["verify-metric", "delta=0.5"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("first integrability integral diverges"));
    let o = holofol(&["verify-metric", "delta=-0.1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("usage error"));
}

#[test]
fn golden_headers() {
    let sample = holofol(&["sample", "n_paths=1", "step=1e-2", "horizon=0.05"]);
    assert_eq!(first_line(&sample), "path_index,node_index,euclid_time,g_time,re_zeta,im_zeta,status");
    let cocycle = holofol(&["cocycle", "step=1e-2", "times=0,0.05", "boundary_policy=reject_resample"]);
    assert_eq!(first_line(&cocycle), "t,log_norm,log_norm_inverse,smallest_sv,largest_sv");
    let lyap = holofol(&["lyapunov", "lambda=1,1", "x=0.001,0.001", "n_paths=16", "horizon=10", "step=1e-2"]);
    assert!(lyap.status.success(), "{}", stderr(&lyap));
    assert_eq!(first_line(&lyap), "index,exponent,multiplicity,stderr,n_paths,total_g_time,absorbed_fraction");
    assert_eq!(stdout(&lyap).lines().count(), 2);
}

#[test]
fn cocycle_identity_row_at_zero() {
    let o = holofol(&["cocycle", "step=1e-2", "times=0", "--seed", "3"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o), "t,log_norm,log_norm_inverse,smallest_sv,largest_sv\n0,0,0,1,1\n");
}

#[test]
fn integrability_shape_and_header() {
    let o = holofol(&[
        "integrability",
        "lambda=1,1",
        "n_paths=1000",
        "step=1e-2",
        "epsilons=0.01831563888873418,0.00033546262790251185,0.0000008315287191035679",
        "--seed",
        "1",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows[0], "profile,delta,epsilon,mean_F,stderr,absorbed_fraction,verdict");
    // default profiles: accelerating:0.25 and poincare, one row per (profile, eps)
    assert_eq!(rows.len(), 1 + 2 * 3);
    assert!(rows[1].starts_with("accelerating,0.25,"));
    assert!(rows[4].starts_with("poincare,0,"));
    let short = holofol(&["integrability", "n_paths=1000", "epsilons=0.1,0.01"]);
    assert_eq!(short.status.code(), Some(1));
    assert!(stderr(&short).contains("insufficient grid"));
}

#[test]
fn seed_sources_and_config_round_trip() {
    let dir = std::env::temp_dir().join(format!("holofol-cli-test-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let file = dir.join("run.cfg");
    let dumped = holofol(&["config", "dump", "delta=0.3", "seed=11"]);
    std::fs::write(&file, &dumped.stdout).unwrap();
    let again = holofol(&["config", "dump", "--config", file.to_str().unwrap()]);
    assert_eq!(again.stdout, dumped.stdout);
    assert!(stdout(&again).contains("seed=11\n"));

    let flag = holofol(&["config", "dump", "--config", file.to_str().unwrap(), "--seed", "5"]);
    assert!(stdout(&flag).contains("seed=5\n"));
    let env = Command::new(env!("CARGO_BIN_EXE_holofol"))
        .args(["config", "dump"])
        .env("HOLOFOL_SEED", "42")
        .output()
        .unwrap();
    assert!(stdout(&env).contains("seed=42\n"));

    let bad = holofol(&["config", "dump", "colour=red"]);
    assert_eq!(bad.status.code(), Some(2));
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn seed_changes_sample_output() {
    let a = holofol(&["sample", "n_paths=2", "step=1e-2", "horizon=0.05", "--seed", "1"]);
    let b = holofol(&["sample", "n_paths=2", "step=1e-2", "horizon=0.05", "--seed", "1"]);
    let c = holofol(&["sample", "n_paths=2", "step=1e-2", "horizon=0.05", "--seed", "2"]);
    assert_eq!(a.stdout, b.stdout);
    assert_ne!(a.stdout, c.stdout);
}
