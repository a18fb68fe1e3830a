//! End-to-end tests of the command-line contract: exit codes, artifact
//! files, and determinism.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_uccd")
}

fn repo_doc(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs/problems").join(name)
}

fn write_doc(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

fn run(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(bin());
    cmd.args(args);
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

#[test]
fn validate_good_document() {
    let out = run(&["validate", repo_doc("double_integrator.json").to_str().unwrap()], &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn validate_missing_grid_names_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let doc = write_doc(
        dir.path(),
        "missing_grid.json",
        r#"{"schema": 1,
            "dynamics": {"kind": "registry", "id": "double_integrator"},
            "cost": {"registry": "min_energy"}}"#,
    );
    let out = run(&["validate", doc.to_str().unwrap()], &[]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("grid"), "finding must name the key: {stderr}");
}

#[test]
fn validate_negative_sigma_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let doc = write_doc(
        dir.path(),
        "neg_sigma.json",
        r#"{"schema": 1,
            "grid": {"t0": 0.0, "tf": 1.0, "n_nodes": 5},
            "dynamics": {"kind": "registry", "id": "double_integrator"},
            "cost": {"registry": "min_energy"},
            "data": {"constants": {"w": 1.0}},
            "uncertainty": [
                {"target": {"type": "data", "name": "w"},
                 "stochastic": {"kind": "gaussian", "mu": 0.0, "sigma": -0.5}}
            ]}"#,
    );
    let out = run(&["validate", doc.to_str().unwrap()], &[]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn solve_det_writes_artifacts_and_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("artifacts");
    let out = run(
        &[
            "solve",
            repo_doc("di_uncertain.json").to_str().unwrap(),
            "--formulation",
            "det",
            "--out",
            out_dir.to_str().unwrap(),
        ],
        &[],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for file in ["manifest.json", "solution.json", "trajectories.csv", "report.json"] {
        assert!(out_dir.join(file).exists(), "missing {file}");
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["formulation"], "det");
    assert_eq!(manifest["content_hash"].as_str().unwrap().len(), 64);
    let solution: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("solution.json")).unwrap())
            .unwrap();
    assert_eq!(solution["status"], "optimal");
    // wall time never enters solution.json (byte determinism)
    assert!(solution.get("wall_time_s").is_none());
}

#[test]
fn fuzzy_only_document_with_scc_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let doc = write_doc(
        dir.path(),
        "fuzzy_only.json",
        r#"{"schema": 1,
            "grid": {"t0": 0.0, "tf": 1.0, "n_nodes": 5},
            "dynamics": {"kind": "registry", "id": "double_integrator"},
            "cost": {"registry": "min_energy"},
            "data": {"constants": {"w": 1.0}},
            "boundary": {"initial": [0.0, 0.0], "terminal": [1.0, 0.0]},
            "uncertainty": [
                {"target": {"type": "data", "name": "w"},
                 "fuzzy": {"kind": "triangular", "a": -0.1, "b": 0.0, "c": 0.1}}
            ]}"#,
    );
    for formulation in ["scc", "wcr", "se"] {
        let out = run(
            &["solve", doc.to_str().unwrap(), "--formulation", formulation, "--out",
              dir.path().join(formulation).to_str().unwrap()],
            &[],
        );
        assert_eq!(out.status.code(), Some(3), "{formulation} must be incompatible");
    }
    // fe works on the same document
    let out = run(
        &["solve", doc.to_str().unwrap(), "--formulation", "fe", "--out",
          dir.path().join("fe").to_str().unwrap()],
        &[],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn infeasible_solve_exits_four() {
    let dir = tempfile::tempdir().unwrap();
    // dispersion cap of zero on a genuinely uncertain constraint
    let out = run(
        &[
            "solve",
            repo_doc("di_uncertain.json").to_str().unwrap(),
            "--formulation",
            "pr-c",
            "--sigma-a",
            "0.0",
            "--samples",
            "16",
            "--out",
            dir.path().join("x").to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn se_single_sample_equals_det_on_degenerate_binding() {
    let dir = tempfile::tempdir().unwrap();
    let doc = write_doc(
        dir.path(),
        "degenerate.json",
        r#"{"schema": 1,
            "grid": {"t0": 0.0, "tf": 1.0, "n_nodes": 11},
            "dynamics": {"kind": "registry", "id": "double_integrator"},
            "cost": {"registry": "min_energy"},
            "data": {"constants": {"w": 1.0}},
            "boundary": {"initial": [0.0, 0.0], "terminal": [1.0, 0.0]},
            "uncertainty": [
                {"target": {"type": "data", "name": "w"},
                 "stochastic": {"kind": "discrete", "values": [0.0], "probabilities": [1.0]}}
            ]}"#,
    );
    let obj = |dir_name: &str, formulation: &str, extra: &[&str]| -> f64 {
        let out_dir = dir.path().join(dir_name);
        let mut args = vec![
            "solve",
            doc.to_str().unwrap(),
            "--formulation",
            formulation,
            "--out",
            out_dir.to_str().unwrap(),
        ];
        args.extend_from_slice(extra);
        let out = run(&args, &[]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let solution: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(out_dir.join("solution.json")).unwrap())
                .unwrap();
        solution["objective"].as_f64().unwrap()
    };
    let det = obj("det", "det", &[]);
    let se = obj("se", "se", &["--samples", "1", "--seed", "5"]);
    assert!((det - se).abs() < 1e-6, "det {det} vs se {se}");
}

#[test]
fn repeated_solves_are_byte_identical_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let mut bytes = Vec::new();
    for (i, threads) in ["1", "2", "8"].iter().enumerate() {
        let out_dir = dir.path().join(format!("run{i}"));
        let out = run(
            &[
                "solve",
                repo_doc("di_uncertain.json").to_str().unwrap(),
                "--out",
                out_dir.to_str().unwrap(),
            ],
            &[("UCCD_THREADS", threads)],
        );
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        bytes.push(std::fs::read(out_dir.join("solution.json")).unwrap());
    }
    assert_eq!(bytes[0], bytes[1], "1 vs 2 threads");
    assert_eq!(bytes[0], bytes[2], "1 vs 8 threads");
}

#[test]
fn lqr_demo_prints_gain_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "lqr-demo", "--paths", "50", "--noise", "0.2", "--seed", "9",
        "--nodes", "101",
    ];
    let out1_dir = dir.path().join("a");
    let mut full = args.to_vec();
    full.extend_from_slice(&["--out", out1_dir.to_str().unwrap()]);
    let out1 = run(&full, &[]);
    assert!(out1.status.success());
    let stdout = String::from_utf8_lossy(&out1.stdout);
    assert!(stdout.contains("2.414213562"), "gain line: {stdout}");
    assert!(stdout.contains("care_residual"));

    let out2_dir = dir.path().join("b");
    let mut full = args.to_vec();
    full.extend_from_slice(&["--out", out2_dir.to_str().unwrap()]);
    let out2 = run(&full, &[]);
    assert!(out2.status.success());
    assert_eq!(
        std::fs::read(out1_dir.join("lqr_ensemble.csv")).unwrap(),
        std::fs::read(out2_dir.join("lqr_ensemble.csv")).unwrap(),
        "seed-fixed ensembles must be byte-identical"
    );
}

#[test]
fn lqr_demo_single_path_zero_noise_is_deterministic_column() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("x");
    let out = run(
        &["lqr-demo", "--paths", "1", "--noise", "0", "--x0-std", "0",
          "--nodes", "51", "--out", out_dir.to_str().unwrap()],
        &[],
    );
    assert!(out.status.success());
    let csv = std::fs::read_to_string(out_dir.join("lqr_ensemble.csv")).unwrap();
    for line in csv.lines().skip(1) {
        let cells: Vec<&str> = line.split(',').collect();
        // mean equals the single sample, std is zero
        assert_eq!(cells[1], cells[3]);
        assert_eq!(cells[2], "0");
    }
}

#[test]
fn oracle_agrees_on_two_node_problem() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("x");
    let out = run(
        &[
            "oracle",
            repo_doc("di_two_node.json").to_str().unwrap(),
            "--resolution",
            "41",
            "--bound",
            "4.0",
            "--out",
            out_dir.to_str().unwrap(),
        ],
        &[],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("oracle.json")).unwrap())
            .unwrap();
    assert_eq!(report["agree"], true, "{report}");
}

#[test]
fn oracle_dimension_guard_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    // 241 nodes -> 241 control dims in the reduced problem
    let out = run(
        &[
            "oracle",
            repo_doc("double_integrator.json").to_str().unwrap(),
            "--out",
            dir.path().join("x").to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(out.status.code(), Some(2));
}
