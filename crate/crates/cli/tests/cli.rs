use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn afbart(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_afbart"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const SMALL_CONFIG: &str = r#"{"T": 5, "J": 2, "K": 10, "n_mcmc": 30, "burn_in": 20, "seed": 4}"#;

fn simulate_small(dir: &Path, seed: &str) {
    let out = afbart(&[
        "simulate", "--case", "1", "--n-train", "20", "--n-test", "6", "--grid", "5", "--sigma", "0.1", "--seed", seed,
        "--noise-covariates", "1", "--out", p(dir),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
}

fn read_tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = walk(dir)
        .into_iter()
        .map(|f| (f.strip_prefix(dir).unwrap().display().to_string(), fs::read(&f).unwrap()))
        .collect();
    files.sort();
    files
}

fn walk(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).unwrap() {
        let path = e.unwrap().path();
        if path.is_dir() {
            out.extend(walk(&path));
        } else {
            out.push(path);
        }
    }
    out
}

#[test]
fn help_exits_zero_for_every_subcommand() {
    assert_eq!(code(&afbart(&["--help"])), 0);
    for sub in ["simulate", "fit", "predict", "evaluate", "benchmark", "importance", "heatmap"] {
        assert_eq!(code(&afbart(&[sub, "--help"])), 0, "{sub}");
    }
}

#[test]
fn bad_case_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&afbart(&["simulate", "--case", "4", "--out", p(dir.path())])), 1);
}

#[test]
fn simulate_is_deterministic_and_guards_output() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    simulate_small(a.path(), "7");
    simulate_small(b.path(), "7");
    assert_eq!(read_tree(a.path()), read_tree(b.path()));
    let meta: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(a.path().join("test/meta.json")).unwrap()).unwrap();
    assert_eq!(meta["n"], 6);
    assert_eq!(meta["xi"], "xi.csv");

    let again = afbart(&["simulate", "--case", "1", "--grid", "5", "--out", p(a.path())]);
    assert_eq!(code(&again), 1);
    let forced = afbart(&["simulate", "--case", "1", "--n-train", "20", "--n-test", "6", "--grid", "5", "--out", p(a.path()), "--force"]);
    assert_eq!(code(&forced), 0);
}

#[test]
fn default_test_set_has_two_hundred_surfaces() {
    let dir = tempfile::tempdir().unwrap();
    let out = afbart(&["simulate", "--case", "2", "--n-train", "5", "--grid", "4", "--out", p(dir.path())]);
    assert_eq!(code(&out), 0);
    let z = fs::read_to_string(dir.path().join("test/z.csv")).unwrap();
    assert_eq!(z.lines().count(), 200);
}

#[test]
fn fit_errors_are_validation_failures() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope");
    let out = afbart(&["fit", "--data", p(&missing), "--out", p(&dir.path().join("fit"))]);
    assert_eq!(code(&out), 1);

    simulate_small(&dir.path().join("sim"), "3");
    let config = dir.path().join("fpc.json");
    fs::write(&config, r#"{"J": 25, "K": 25, "mode": "fbart-fpc"}"#).unwrap();
    let out = afbart(&[
        "fit", "--data", p(&dir.path().join("sim/train")), "--config", p(&config), "--out", p(&dir.path().join("fit")),
    ]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("principal components"));
}

#[test]
fn full_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    simulate_small(&root.join("sim"), "11");
    let config = root.join("config.json");
    fs::write(&config, SMALL_CONFIG).unwrap();

    let fit_dir = root.join("fit");
    let out = afbart(&[
        "fit", "--data", p(&root.join("sim/train")), "--config", p(&config), "--out", p(&fit_dir), "--export-basis",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["config.json", "basis.csv", "penalty.csv", "encoding.json", "draws.jsonl", "points.csv"] {
        assert!(fit_dir.join(f).exists(), "{f}");
    }
    assert_eq!(fs::read_to_string(fit_dir.join("draws.jsonl")).unwrap().lines().count(), 10);

    let eval_dir = root.join("eval");
    let out = afbart(&["evaluate", "--fit", p(&fit_dir), "--test", p(&root.join("sim/test")), "--out", p(&eval_dir)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let results: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(eval_dir.join("results.json")).unwrap()).unwrap();
    for key in ["rmspe", "mis", "mcrps"] {
        assert!(results[key].as_f64().unwrap() > 0.0, "{key}");
    }
    assert_eq!(results["n_star"], 6);
    assert_eq!(results["m"], 25);
    assert_eq!(results["draws"], 10);

    let out = afbart(&["evaluate", "--fit", p(&fit_dir), "--test", p(&root.join("sim/train")), "--out", p(&eval_dir)]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("true mean surfaces"));

    let imp_dir = root.join("imp");
    assert_eq!(code(&afbart(&["importance", "--fit", p(&fit_dir), "--out", p(&imp_dir)])), 0);
    let imp: Vec<serde_json::Value> =
        serde_json::from_str(&fs::read_to_string(imp_dir.join("importance.json")).unwrap()).unwrap();
    assert_eq!(imp.len(), 4);
    let props: Vec<f64> = imp.iter().map(|e| e["proportion"].as_f64().unwrap()).collect();
    assert!(props.windows(2).all(|w| w[0] >= w[1]));
    assert!(props.iter().sum::<f64>() <= 1.0 + 1e-12);

    let x = root.join("new_x.csv");
    fs::write(&x, "x1,x2,x3,noise1\n0.2,0.2,0.2,0.5\n0.8,0.8,0.8,0.5\n").unwrap();
    let pred_dir = root.join("pred");
    let out = afbart(&["predict", "--fit", p(&fit_dir), "--x", p(&x), "--out", p(&pred_dir)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let mean = fs::read_to_string(pred_dir.join("mean.csv")).unwrap();
    assert_eq!(mean.lines().count(), 2);
    assert_eq!(mean.lines().next().unwrap().split(',').count(), 25);

    let row = root.join("row.csv");
    fs::write(&row, mean.lines().next().unwrap()).unwrap();
    let heat = root.join("heat");
    let out = afbart(&["heatmap", "--grid-values", p(&row), "--rows", "5", "--cols", "5", "--exp", "--out", p(&heat)]);
    assert_eq!(code(&out), 0);
    assert_eq!(fs::read(heat.join("surface.pgm")).unwrap().len(), 11 + 25);
}

#[test]
fn heatmap_bytes_and_size_check() {
    let dir = tempfile::tempdir().unwrap();
    let values = dir.path().join("v.csv");
    fs::write(&values, "0,1\n2,3\n").unwrap();
    let out_dir = dir.path().join("h");
    assert_eq!(code(&afbart(&["heatmap", "--grid-values", p(&values), "--rows", "2", "--cols", "2", "--out", p(&out_dir)])), 0);
    let bytes = fs::read(out_dir.join("surface.pgm")).unwrap();
    assert_eq!(bytes, b"P5\n2 2\n255\n\x00\x55\xaa\xff");
    assert_eq!(code(&afbart(&["heatmap", "--grid-values", p(&values), "--rows", "3", "--cols", "2", "--out", p(&out_dir)])), 1);
}

#[test]
fn predict_average_by_category() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let data = root.join("data");
    fs::create_dir_all(&data).unwrap();
    let n = 12;
    let mut points = String::from("s1,s2\n");
    for g in 0..9 {
        points += &format!("{},{}\n", g % 3, g / 3);
    }
    fs::write(data.join("points.csv"), points).unwrap();
    let mut z = String::new();
    let mut x = String::from("pos,age\n");
    for i in 0..n {
        let pos = ["C", "F", "G"][i % 3];
        let level = (i % 3) as f64;
        let row: Vec<String> = (0..9).map(|g| format!("{}", level * (g as f64 - 4.0) + i as f64 * 0.01)).collect();
        z += &(row.join(",") + "\n");
        x += &format!("{pos},{}\n", 20 + i);
    }
    fs::write(data.join("z.csv"), z).unwrap();
    fs::write(data.join("x.csv"), &x).unwrap();
    fs::write(data.join("meta.json"), r#"{"names": ["pos", "age"], "kinds": ["categorical", "continuous"], "levels": [["C", "F", "G"], []]}"#).unwrap();
    let config = root.join("c.json");
    fs::write(&config, r#"{"T": 3, "J": 2, "K": 5, "n_mcmc": 20, "burn_in": 10}"#).unwrap();
    let fit_dir = root.join("fit");
    let out = afbart(&["fit", "--data", p(&data), "--config", p(&config), "--out", p(&fit_dir)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    fs::write(root.join("x.csv"), &x).unwrap();
    let pred = root.join("pred");
    let out = afbart(&["predict", "--fit", p(&fit_dir), "--x", p(&root.join("x.csv")), "--average-by", "pos", "--out", p(&pred)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let rows = fs::read_to_string(pred.join("rows.csv")).unwrap();
    let lines: Vec<&str> = rows.lines().collect();
    assert_eq!(lines[0], "row,pos,age");
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with("C,C,"));
    // C rows are i = 0, 3, 6, 9 with ages 20, 23, 26, 29
    assert_eq!(lines[1].split(',').nth(2).unwrap().parse::<f64>().unwrap(), 24.5);

    let out = afbart(&["predict", "--fit", p(&fit_dir), "--x", p(&root.join("x.csv")), "--average-by", "age", "--out", p(&pred)]);
    assert_eq!(code(&out), 1);
}

#[test]
fn benchmark_writes_long_and_aggregate_tables() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("c.json");
    fs::write(&config, SMALL_CONFIG).unwrap();
    let out_dir = dir.path().join("bench");
    let out = Command::new(env!("CARGO_BIN_EXE_afbart"))
        .args([
            "benchmark", "--cases", "1", "--replicates", "2", "--methods", "afbart,fbart-tps", "--config", p(&config),
            "--n-train", "15", "--n-test", "4", "--grid", "5", "--out", p(&out_dir),
        ])
        .env("AFBART_THREADS", "2")
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let long = fs::read_to_string(out_dir.join("long.csv")).unwrap();
    assert_eq!(long.lines().count(), 1 + 4);
    assert!(long.starts_with("setting,method,replicate,data_seed,chain_seed,rmspe,mis,mcrps"));
    let agg = fs::read_to_string(out_dir.join("aggregate.csv")).unwrap();
    assert_eq!(agg.lines().count(), 1 + 2);

    let cv_dir = dir.path().join("cv");
    simulate_small(&dir.path().join("sim"), "5");
    let out = afbart(&[
        "benchmark", "--cv", "4", "--data", p(&dir.path().join("sim/train")), "--methods", "fbart-tps", "--config",
        p(&config), "--out", p(&cv_dir),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(fs::read_to_string(cv_dir.join("long.csv")).unwrap().lines().count(), 1 + 4);
}
