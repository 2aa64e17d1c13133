mod common;

use std::process::Command;

use mrdino_core::forward_model::JacobianRoute;
use mrdino_harness::commands::{cmd_build_basis, cmd_evaluate, cmd_solve_ouu, Backend};
use mrdino_harness::report::{compare, OuuRecord};
use mrdino_harness::{Experiment, ExperimentConfig, Split};
use nalgebra::DVector;

#[test]
fn zero_control_scores_the_target_energy() {
    let exp = Experiment::new(common::tiny()).unwrap();
    let tracking = exp.tracking();
    let energy = tracking.q(&DVector::zeros(exp.target.len()));
    let e = exp.evaluate(&DVector::zeros(exp.num_controls()), 5, 16, 0.95).unwrap();
    assert_eq!(e.cvar, energy);
    assert_eq!(e.var, energy);
    assert!((e.mean - energy).abs() <= 1e-15 * energy);
    assert_eq!(
        e,
        exp.evaluate(&DVector::zeros(exp.num_controls()), 5, 16, 0.95).unwrap()
    );
}

#[test]
fn pde_solve_accounting_and_comparison() {
    let dir = tempfile::tempdir().unwrap();
    let c = common::tiny();
    let pde = dir.path().join("pde.json");
    let r = cmd_solve_ouu(&c, Backend::Pde, 0, Some(4), None, None, &pde).unwrap();
    assert_eq!(r.state_solves, 4 * r.evaluations);
    assert_eq!(r.adjoint_solves, r.state_solves);
    assert_eq!(r.solve_cost, r.state_solves);
    assert!(r.z.iter().all(|v| (-4.0..=4.0).contains(v)));
    let scored = cmd_evaluate(&c, &pde, None, None, &pde).unwrap();
    assert!(scored.evaluation.is_some());

    let cmp = compare(&scored, std::slice::from_ref(&scored)).unwrap();
    assert_eq!(cmp.rows[0].rel_error, 0.0);

    let other_set = cmd_evaluate(&c, &pde, Some(99), None, &dir.path().join("other.json")).unwrap();
    assert!(compare(&scored, &[other_set]).is_err());
    let unscored = OuuRecord {
        evaluation: None,
        ..scored.clone()
    };
    assert!(compare(&scored, &[unscored]).is_err());
}

#[test]
fn jacobian_data_costs_at_most_sixty_percent_more() {
    let mut c = ExperimentConfig::desk();
    c.sizes.pod = 120;
    c.sizes.train = vec![48];
    let exp = Experiment::new(c).unwrap();
    let pod = exp.build_pod(0, 120).unwrap();
    // warm up, then take the faster of two timings of each variant
    exp.generate(&pod, 1, Split::Train, 8, true).unwrap();
    let time = |jac: bool| {
        (0..2)
            .map(|_| {
                let t = std::time::Instant::now();
                exp.generate(&pod, 1, Split::Train, 48, jac).unwrap();
                t.elapsed().as_secs_f64()
            })
            .fold(f64::INFINITY, f64::min)
    };
    let plain = time(false);
    let with_jac = time(true);
    eprintln!("generation time ratio {:.3}", with_jac / plain);
    assert!(with_jac <= 1.6 * plain, "{with_jac:.3}s vs {plain:.3}s");
    assert!(matches!(JacobianRoute::default(), JacobianRoute::Auto));
}

#[test]
fn cli_runs_the_tiny_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.json");
    std::fs::write(&cfg, serde_json::to_string_pretty(&common::tiny()).unwrap()).unwrap();
    let bin = env!("CARGO_BIN_EXE_mrdino");
    let run = |args: &[&str]| {
        let out = Command::new(bin)
            .args(args)
            .args(["--config", cfg.to_str().unwrap(), "--threads", "2"])
            .current_dir(dir.path())
            .output()
            .unwrap();
        assert!(
            out.status.success(),
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        String::from_utf8(out.stdout).unwrap()
    };
    run(&["build-basis", "--out", "basis"]);
    run(&[
        "gen-data",
        "--basis",
        "basis",
        "--n",
        "10",
        "--jacobian",
        "--out",
        "train.bin",
    ]);
    let t = run(&["train", "--basis", "basis", "--data", "train.bin", "--out", "dino.bin"]);
    assert!(t.contains("MR-DINO"));
    run(&[
        "solve-ouu",
        "--model",
        "dino.bin",
        "--basis",
        "basis",
        "--out",
        "dino.json",
    ]);
    run(&[
        "solve-ouu",
        "--pde",
        "--n",
        "4",
        "--beta",
        "0.9",
        "--eps",
        "1e-3",
        "--out",
        "pde.json",
    ]);
    run(&["evaluate", "--result", "dino.json", "--out", "dino.json"]);
    run(&["evaluate", "--result", "pde.json", "--out", "pde.json"]);
    // beta differs, so the evaluation sets differ and compare must refuse
    let out = Command::new(bin)
        .args(["compare", "--reference", "pde.json", "--out", "cmp.csv", "dino.json"])
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert!(!out.status.success());
    let out = Command::new(bin)
        .args(["compare", "--reference", "pde.json", "--out", "cmp.csv", "pde.json"])
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(dir.path().join("cmp.summary.csv").exists());

    let bad = dir.path().join("bad.json");
    let mut v: serde_json::Value = serde_json::to_value(common::tiny()).unwrap();
    v["extra"] = true.into();
    std::fs::write(&bad, v.to_string()).unwrap();
    let out = Command::new(bin)
        .args(["build-basis", "--config", bad.to_str().unwrap(), "--out", "b2"])
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert!(!out.status.success());
}

#[test]
fn basis_command_reports_truncation_energy() {
    let dir = tempfile::tempdir().unwrap();
    let s = cmd_build_basis(&common::tiny(), 2, Some(10), dir.path()).unwrap();
    assert_eq!(s.snapshots, 10);
    assert_eq!(s.pod_rank, 6);
    assert!(s.trailing_energy >= 0.0);
}
