use std::fs;
use std::process::{Command, Output};

use extremalkit::system::{catalog, ProblemDef};
use extremalkit::variation::NeedleSpec;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_extremalkit"));
    c.env_remove("EXTREMALKIT_SEED");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

const LQR_ONE: &str = r#"{"pieces":[[1]]}"#;
const LINE: &str = r#"{"pieces":[[1,0]]}"#;

#[test]
fn catalog_listing() {
    let o = run(&["catalog"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).lines().count(), 4);

    let o = run(&["catalog", "--json"]);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v.as_array().unwrap().len(), 4);
    assert_eq!(v[0]["name"], "lqr1d");

    let o = run(&["catalog", "bogus"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("bogus"));
}

#[test]
fn catalog_entry_round_trips_as_problem_json() {
    let o = run(&["catalog", "martinet"]);
    let def: ProblemDef = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(&def, catalog("martinet").unwrap().def());
}

#[test]
fn simulate_lqr() {
    let o = run(&[
        "simulate",
        "--problem",
        "lqr1d",
        "--control",
        LQR_ONE,
        "--steps",
        "50",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("t,x1,u1,J"));
    let last: Vec<f64> = text
        .lines()
        .last()
        .unwrap()
        .split(',')
        .map(|c| c.parse().unwrap())
        .collect();
    assert_eq!(last, vec![1.0, 1.0, 1.0, 0.5]);
    assert_eq!(text.lines().count(), 52);
}

#[test]
fn simulate_to_file_prints_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("traj.csv");
    let o = run(&[
        "simulate",
        "--problem",
        "heisenberg",
        "--control",
        r#"{"breakpoints":[0,0.5,1],"pieces":[[1,0],["0","cos(t)"]]}"#,
        "--out",
        out.to_str().unwrap(),
        "--json",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["steps"], 1000);
    let csv = fs::read_to_string(out).unwrap();
    assert_eq!(csv.lines().next(), Some("t,x1,x2,x3,u1,u2,J"));
}

#[test]
fn problem_file_schema() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.json");
    fs::write(
        &path,
        r#"{"state_dim": 2, "control_dim": 1, "horizon": [0, 2],
            "dynamics": ["x2", "u1"], "cost": "0.5*u1^2",
            "fiber": {"type": "box", "lo": [-1], "hi": [1]},
            "x_a": [1, 0], "x_b": [0, 0]}"#,
    )
    .unwrap();
    let o = run(&[
        "simulate",
        "--problem",
        path.to_str().unwrap(),
        "--control",
        r#"{"pieces":[[-0.5]]}"#,
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let last = stdout(&o).lines().last().unwrap().to_string();
    let cells: Vec<f64> = last.split(',').map(|c| c.parse().unwrap()).collect();
    // x_a is the default initial state: x1(2) = 1 − 0.25·4.
    assert!((cells[1] - 0.0).abs() < 1e-12 && (cells[2] + 1.0).abs() < 1e-12);

    // A control that leaves the box is a validation error.
    let o = run(&[
        "simulate",
        "--problem",
        path.to_str().unwrap(),
        "--control",
        r#"{"pieces":[[3]]}"#,
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn malformed_inputs_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{\"pieces\": [[1]").unwrap();
    let o = run(&[
        "simulate",
        "--problem",
        "lqr1d",
        "--control",
        bad.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("offset"), "{}", stderr(&o));

    let o = run(&[
        "simulate",
        "--problem",
        "lqr1d",
        "--control",
        r#"{"breakpoints":[0,1.5],"pieces":[[1]]}"#,
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("breakpoint"), "{}", stderr(&o));

    let p = dir.path().join("p.json");
    fs::write(
        &p,
        r#"{"state_dim":1,"control_dim":1,"horizon":[0,1],"dynamics":["x1 +"],"cost":"y","fiber":{"type":"unconstrained"}}"#,
    )
    .unwrap();
    let o = run(&[
        "simulate",
        "--problem",
        p.to_str().unwrap(),
        "--control",
        LQR_ONE,
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(
        stderr(&o).contains("unknown variable `y`"),
        "{}",
        stderr(&o)
    );

    for args in [
        &[
            "simulate",
            "--problem",
            "lqr1d",
            "--control",
            LQR_ONE,
            "--steps",
            "5",
        ][..],
        &[
            "simulate",
            "--problem",
            "lqr1d",
            "--control",
            LQR_ONE,
            "--x0",
            "1,2",
        ],
        &[
            "simulate",
            "--problem",
            "lqr1d",
            "--control",
            LQR_ONE,
            "--x0",
            "abc",
        ],
        &[
            "classify",
            "--problem",
            "lqr1d",
            "--control",
            LQR_ONE,
            "--sampler",
            "nope",
        ],
        &[
            "classify",
            "--problem",
            "lqr1d",
            "--control",
            LQR_ONE,
            "--tol-cone",
            "-1",
        ],
        &[
            "extremal",
            "--problem",
            "lqr1d",
            "--p0",
            "1",
            "--lambda",
            "0.5",
        ],
        &[
            "transport",
            "--problem",
            "lqr1d",
            "--control",
            LQR_ONE,
            "--from",
            "0.12345",
        ],
        &[
            "check-multiplier",
            "--problem",
            "lqr1d",
            "--control",
            LQR_ONE,
            "--eta-b",
            "0",
            "--lambda",
            "0",
        ],
        &["frobnicate"],
    ] {
        let o = run(args);
        assert_eq!(o.status.code(), Some(2), "{args:?}: {}", stderr(&o));
    }
}

#[test]
fn numerical_failure_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("p.json");
    fs::write(
        &p,
        r#"{"state_dim":1,"control_dim":1,"horizon":[0,1],"dynamics":["x1^2 + u1"],"cost":"0","fiber":{"type":"unconstrained"}}"#,
    )
    .unwrap();
    let o = run(&[
        "simulate",
        "--problem",
        p.to_str().unwrap(),
        "--control",
        r#"{"pieces":[[0]]}"#,
        "--x0",
        "10",
    ]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn classify_summaries() {
    let o = run(&[
        "classify",
        "--problem",
        "martinet",
        "--control",
        LINE,
        "--steps",
        "200",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(
        stdout(&o).contains("abnormal: true, strictly_abnormal: false"),
        "{}",
        stdout(&o)
    );

    let o = run(&[
        "classify",
        "--problem",
        "lqr1d",
        "--control",
        LQR_ONE,
        "--steps",
        "200",
    ]);
    assert!(stdout(&o).contains("normal: true"));

    // A non-extremal control still exits 0: the classification is data.
    let o = run(&[
        "classify",
        "--problem",
        "lqr1d",
        "--control",
        r#"{"pieces":[["2*t"]]}"#,
        "--steps",
        "200",
    ]);
    assert!(o.status.success());
    assert!(stdout(&o).starts_with("extremal: false"));
}

#[test]
fn report_json_shape() {
    let o = run(&[
        "classify",
        "--problem",
        "lqr1d",
        "--control",
        LQR_ONE,
        "--steps",
        "100",
        "--json",
    ]);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    for key in ["flags", "witnesses", "diagnostics", "sampling"] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
    let w = &v["witnesses"][0];
    for key in ["eta_b", "lambda", "residuals"] {
        assert!(w.get(key).is_some(), "missing witness.{key}");
    }
    assert_eq!(v["sampling"]["seed"], 0);
    assert_eq!(v["sampling"]["steps"], 100);
}

#[test]
fn seed_flag_env_fallback_and_determinism() {
    let args = [
        "classify",
        "--problem",
        "heisenberg",
        "--control",
        LINE,
        "--steps",
        "100",
        "--json",
    ];
    let a = run(&args);
    let b = run(&args);
    assert_eq!(a.stdout, b.stdout);

    let with_flag = run(&[&args[..], &["--seed", "7"]].concat());
    let with_env = bin()
        .args(args)
        .env("EXTREMALKIT_SEED", "7")
        .output()
        .unwrap();
    assert_eq!(with_flag.stdout, with_env.stdout);
    assert_ne!(with_flag.stdout, a.stdout);

    let bad_env = bin()
        .args(args)
        .env("EXTREMALKIT_SEED", "seven")
        .output()
        .unwrap();
    assert_eq!(bad_env.status.code(), Some(2));
}

#[test]
fn extremal_and_check_multiplier() {
    let o = run(&[
        "extremal",
        "--problem",
        "lqr1d",
        "--p0",
        "1",
        "--json",
        "--out",
        "/dev/null",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!((v["final_state"][0].as_f64().unwrap() - 1.0).abs() < 1e-12);
    assert!((v["final_cost"].as_f64().unwrap() - 0.5).abs() < 1e-12);
    assert_eq!(v["residuals"]["passed"], true);

    let o = run(&[
        "check-multiplier",
        "--problem",
        "lqr1d",
        "--control",
        LQR_ONE,
        "--eta-b",
        "2",
        "--lambda",
        "-1",
        "--json",
    ]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["residuals"]["passed"], false);
    assert_eq!(v["residuals"]["stationarity"], 1.0);
}

#[test]
fn transport_json() {
    let o = run(&[
        "transport",
        "--problem",
        "heisenberg",
        "--control",
        r#"{"pieces":[["cos(t)","sin(t)"]]}"#,
        "--json",
        "--extended",
    ]);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let m = v["matrix"].as_array().unwrap();
    assert_eq!(m.len(), 4);
    assert_eq!(m[3][3], 1.0);
    assert!((m[2][0].as_f64().unwrap() - 0.5 * (1.0 - 1f64.cos())).abs() < 1e-9);
}

#[test]
fn cone_from_generators() {
    let dir = tempfile::tempdir().unwrap();
    let g = dir.path().join("g.json");
    fs::write(&g, "[[1,0],[0,1]]").unwrap();
    let o = run(&["cone", "--generators", g.to_str().unwrap(), "--json"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["dimension"], 2);
    assert_eq!(v["dual_rays"].as_array().unwrap().len(), 2);
    assert_eq!(v["flags"]["is_normal"], true);

    fs::write(&g, "[[1,0],[0]]").unwrap();
    assert_eq!(
        run(&["cone", "--generators", g.to_str().unwrap()])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn reach_reports() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("cloud.csv");
    let out = out.to_str().unwrap();

    // eps = 0 reproduces the reference endpoint in every sample.
    let o = run(&[
        "reach",
        "--problem",
        "lqr1d",
        "--control",
        LQR_ONE,
        "--samples",
        "10",
        "--eps",
        "0",
        "--out",
        out,
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    for line in fs::read_to_string(out).unwrap().lines().skip(1) {
        let x: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
        assert_eq!(x, 1.0);
    }

    // The lqr1d cone is the whole line: endpoints fall on both sides of 1.
    let o = run(&[
        "reach",
        "--problem",
        "lqr1d",
        "--control",
        LQR_ONE,
        "--samples",
        "40",
        "--out",
        out,
    ]);
    assert!(o.status.success());
    let xs: Vec<f64> = fs::read_to_string(out)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert!(xs.iter().any(|&x| x > 1.0) && xs.iter().any(|&x| x < 1.0));

    // Martinet line: the pairing with (0, 0, ±1) is second order in eps.
    let o = run(&[
        "reach",
        "--problem",
        "martinet",
        "--control",
        LINE,
        "--samples",
        "30",
        "--json",
        "--out",
        out,
    ]);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["first_order_consistent"], true);
    let p = |i: usize| v["runs"][i]["max_pairing_over_eps"].as_f64().unwrap();
    let ratio = p(0) / p(1);
    assert!((1.6..=2.4).contains(&ratio), "ratio {ratio}");
}

#[test]
fn needle_spec_json() {
    let alt = serde_json::to_value(NeedleSpec::alt(0.5, &[1.0, 2.0], 0.25)).unwrap();
    assert_eq!(
        alt,
        serde_json::json!({"tau": 0.5, "kind": "alt_control", "u": [1.0, 2.0], "weight": 0.25})
    );
    let rev: NeedleSpec =
        serde_json::from_str(r#"{"tau": 1.0, "kind": "reverse_leg", "weight": 1.0}"#).unwrap();
    assert_eq!(rev, NeedleSpec::reverse(1.0, 1.0));
}
