use randgrid::cli::run;

fn call(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("randgrid").chain(args.iter().copied());
    let code = run(argv, &mut out, &mut err);
    (
        code,
        String::from_utf8(out).unwrap(),
        String::from_utf8(err).unwrap(),
    )
}

#[test]
fn help_and_usage_exit_codes() {
    assert_eq!(call(&["--help"]).0, 0);
    assert_eq!(call(&["bogus"]).0, 1);
    assert_eq!(call(&["trees", "--nu", "0"]).0, 1);
    assert_eq!(call(&["trees", "--nu", "4", "--alpha", "-1"]).0, 1);
    let (code, _, err) = call(&[
        "estimate",
        "--model",
        "nope",
        "--nu",
        "2",
        "--n",
        "4",
        "--samples",
        "10",
    ]);
    assert_eq!(code, 1, "{err}");
    // order 4 needs three marks per node, n = 2 cannot supply them
    assert_eq!(
        call(&[
            "estimate",
            "--model",
            "sde-quadratic",
            "--nu",
            "4",
            "--n",
            "2",
            "--samples",
            "10"
        ])
        .0,
        1
    );
    assert_eq!(
        call(&[
            "convergence",
            "--model",
            "ode-logistic",
            "--nu",
            "2",
            "--n",
            "4",
            "--exhaustive"
        ])
        .0,
        1
    );
}

#[test]
fn runtime_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("missing").join("r.json");
    let args = [
        "estimate",
        "--model",
        "ode-logistic",
        "--nu",
        "2",
        "--n",
        "4",
        "--exhaustive",
        "--out",
    ];
    let mut argv: Vec<&str> = args.to_vec();
    argv.push(out.to_str().unwrap());
    assert_eq!(call(&argv).0, 2);
}

#[test]
fn trees_lists_forests() {
    let (code, out, _) = call(&["trees", "--nu", "4", "--format", "json"]);
    assert_eq!(code, 0);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    let forest = v["forest"].as_array().unwrap();
    assert_eq!(forest.len(), 9);
    assert_eq!(forest[0]["tree"], "{∅}");
    assert_eq!(v["scheme_tree"], "{∅,1,11,111,2,21,3}");
    let (_, out, _) = call(&["trees", "--nu", "1", "--format", "json"]);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["forest"].as_array().unwrap().len(), 1);
    let (_, out, _) = call(&["trees", "--nu", "6", "--format", "text"]);
    assert!(out.contains("67 trees"));
}

#[test]
fn estimate_reports_are_byte_identical_and_echo_config() {
    let args = [
        "estimate",
        "--model",
        "sde-quadratic",
        "--nu",
        "2",
        "--n",
        "4",
        "--eps",
        "1e-2",
        "--seed",
        "9",
    ];
    let (code, a, _) = call(&args);
    assert_eq!(code, 0);
    assert_eq!(a, call(&args).1);
    let v: serde_json::Value = serde_json::from_str(&a).unwrap();
    assert_eq!(v["seed"], 9);
    assert_eq!(v["nu"], 2);
    assert_eq!(v["model"], "sde-quadratic");
    assert_eq!(v["terms"].as_array().unwrap().len(), 2);
}

#[test]
fn ode_estimate_is_accurate_and_written_to_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.json");
    let args = [
        "estimate",
        "--model",
        "ode-logistic",
        "--nu",
        "3",
        "--n",
        "8",
        "--exhaustive",
        "--out",
    ];
    let mut argv: Vec<&str> = args.to_vec();
    argv.push(path.to_str().unwrap());
    let (code, out, _) = call(&argv);
    assert_eq!(code, 0);
    assert!(out.is_empty());
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    let exact = (0.4f64.atanh() + 0.1).tanh();
    assert!((v["value"].as_f64().unwrap() - exact).abs() < 1e-4);
}

#[test]
fn convergence_csv_has_fixed_header() {
    let (code, out, _) = call(&[
        "convergence",
        "--model",
        "ode-logistic",
        "--nu",
        "2,3",
        "--n",
        "3,4,6",
        "--exhaustive",
        "--format",
        "csv",
    ]);
    assert_eq!(code, 0);
    let mut lines = out.lines();
    assert_eq!(
        lines.next(),
        Some("nu,n,estimate,ci_half_width,abs_error,reference")
    );
    assert_eq!(lines.count(), 6);
}

#[test]
fn variance_table_rows_follow_forest_order() {
    let (code, out, _) = call(&[
        "variance-table",
        "--model",
        "sde-quadratic",
        "--nu",
        "3",
        "--n",
        "5",
        "--pilot",
        "2000",
        "--format",
        "csv",
    ]);
    assert_eq!(code, 0);
    let trees: Vec<&str> = out
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap())
        .collect();
    assert_eq!(trees.len(), 4);
    assert!(trees[0].contains('∅') && !trees[0].contains('1'));
    let (_, out, _) = call(&[
        "variance-table",
        "--model",
        "ode-logistic",
        "--nu",
        "2",
        "--n",
        "5",
        "--pilot",
        "100",
        "--format",
        "csv",
    ]);
    let std: f64 = out
        .lines()
        .nth(1)
        .unwrap()
        .split(',')
        .nth(1)
        .unwrap()
        .parse()
        .unwrap();
    assert!(std < 1e-12);
}
