use std::path::{Path, PathBuf};
use std::process::Command;

use gmwb_cli::run_args;

fn data(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../data")
        .join(name)
        .to_string_lossy()
        .into_owned()
}

fn run(args: &[&str]) -> gmwb_cli::Report {
    let mut full = vec!["gmwb"];
    full.extend_from_slice(args);
    run_args(full).unwrap()
}

fn value(report: &str, key: &str) -> f64 {
    report
        .lines()
        .find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix(' ')))
        .unwrap_or_else(|| panic!("{key} missing in\n{report}"))
        .split_whitespace()
        .next()
        .unwrap()
        .parse()
        .unwrap()
}

fn path(dir: &tempfile::TempDir, name: &str) -> PathBuf {
    dir.path().join(name)
}

#[test]
fn static_price_below_optimal() {
    let opt = run(&["price", "--steps", "30", "--b-steps", "10"]);
    let stat = run(&["price", "--steps", "30", "--b-steps", "10", "--mode", "static"]);
    assert!(value(&stat.text, "price") <= value(&opt.text, "price"));
}

#[test]
fn bundled_reference_files_match_defaults() {
    let grid = ["--steps", "20", "--b-steps", "4"];
    let plain = run(&[&["price"][..], &grid].concat());
    let files = run(&[
        &["price", "--model", &data("reference_model.json"), "--contract", &data("reference_contract.json")][..],
        &["--mortality", &data("mortality_zero.csv")],
        &grid,
    ]
    .concat());
    assert_eq!(value(&plain.text, "price"), value(&files.text, "price"));
    let dir = tempfile::tempdir().unwrap();
    let a = path(&dir, "a.csv");
    let b = path(&dir, "b.csv");
    run(&[&["gen-data", "--n", "2", "--out", a.to_str().unwrap()][..], &grid].concat());
    run(&[&["gen-data", "--n", "2", "--box", &data("reference_box.json"), "--out", b.to_str().unwrap()][..], &grid].concat());
    assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
}

#[test]
fn malformed_config_leaves_no_output() {
    let dir = tempfile::tempdir().unwrap();
    let bad = path(&dir, "bad.json");
    std::fs::write(&bad, "{\"v0\": 0.05").unwrap();
    let out = path(&dir, "out.csv");
    let status = Command::new(env!("CARGO_BIN_EXE_gmwb"))
        .args(["gen-data", "--n", "2", "--steps", "20", "--b-steps", "4"])
        .arg("--model")
        .arg(&bad)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&status.stderr).contains("bad.json"));
    assert!(!out.exists());
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
}

#[test]
fn degenerate_box_gives_identical_rows() {
    let dir = tempfile::tempdir().unwrap();
    let pbox = path(&dir, "box.json");
    let iv = |x: f64| serde_json::json!({ "lo": x, "hi": x });
    let b = serde_json::json!({
        "v0": iv(0.05), "kv": iv(2.0), "thetav": iv(0.05), "omegav": iv(0.5), "rhov": iv(-0.55),
        "r0": iv(0.02), "kr": iv(0.15), "omegar": iv(0.015), "rhor": iv(0.2),
        "alpha": iv(0.035), "kappa": iv(0.1),
    });
    std::fs::write(&pbox, b.to_string()).unwrap();
    let out = path(&dir, "d.csv");
    run(&["gen-data", "--n", "3", "--steps", "20", "--b-steps", "4", "--box", pbox.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    let text = std::fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 4);
    assert_eq!(lines[1], lines[2]);
    assert_eq!(lines[2], lines[3]);
}

#[test]
fn gen_data_is_identical_for_any_worker_count() {
    let dir = tempfile::tempdir().unwrap();
    let mut bytes = Vec::new();
    for (i, w) in ["1", "3", "1"].iter().enumerate() {
        let out = path(&dir, &format!("d{i}.csv"));
        run(&["--workers", w, "gen-data", "--n", "6", "--steps", "20", "--b-steps", "4", "--out", out.to_str().unwrap()]);
        bytes.push(std::fs::read(out).unwrap());
    }
    assert_eq!(bytes[0], bytes[1]);
    assert_eq!(bytes[0], bytes[2]);
}

#[test]
fn random_sampler_follows_seed() {
    let dir = tempfile::tempdir().unwrap();
    let gen = |name: &str, seed: &str| {
        let out = path(&dir, name);
        run(&["gen-data", "--n", "2", "--steps", "20", "--b-steps", "4", "--sampler", "random", "--seed", seed, "--out", out.to_str().unwrap()]);
        std::fs::read(out).unwrap()
    };
    assert_eq!(gen("a", "5"), gen("b", "5"));
    assert_ne!(gen("a", "5"), gen("c", "6"));
}

#[test]
fn mc_check_report_is_reproducible() {
    let args = |w: &'static str| {
        vec!["--workers", w, "mc-check", "--paths", "3000", "--steps-per-year", "20", "--steps", "20", "--b-steps", "4", "--seed", "11"]
    };
    let a = run(&args("1"));
    let b = run(&args("4"));
    assert_eq!(a.text, b.text);
    assert!(a.text.contains("bond T=10"));
    assert!(a.text.lines().last().unwrap().starts_with("overall"));
}

/// Writes a CSV whose value is an affine function of the predictors.
fn linear_csv(path: &Path, n: usize, skip: usize) {
    let pts = gmwb_cli::commands::sample_points(
        &gmwb_core::model::ParameterBox::REFERENCE,
        n,
        gmwb_cli::Sampler::Faure,
        skip as u64,
        0,
    );
    let rows: Vec<_> = pts
        .iter()
        .map(|p| {
            let x = p.to_array();
            let y = 1.0 + x.iter().enumerate().map(|(k, v)| (k as f64 + 1.0) * 0.1 * v).sum::<f64>();
            (p, y)
        })
        .collect();
    std::fs::write(path, gmwb_cli::files::render_rows("value", rows.into_iter())).unwrap();
}

#[test]
fn linear_data_train_predict_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let train = path(&dir, "train.csv");
    let test = path(&dir, "test.csv");
    let model = path(&dir, "m.json");
    let pred = path(&dir, "p.csv");
    linear_csv(&train, 40, 0);
    linear_csv(&test, 15, 40);
    run(&["train", "--data", train.to_str().unwrap(), "--restarts", "2", "--out", model.to_str().unwrap()]);
    let rep = run(&["evaluate", "--gpr", model.to_str().unwrap(), "--data", test.to_str().unwrap(), "--time-samples", "0"]);
    assert!(value(&rep.text, "rmse") < 1e-6, "{}", rep.text);
    run(&["predict", "--gpr", model.to_str().unwrap(), "--data", test.to_str().unwrap(), "--out", pred.to_str().unwrap()]);
    let rows = gmwb_cli::files::read_rows(&test, true).unwrap();
    let text = std::fs::read_to_string(&pred).unwrap();
    assert!(text.starts_with("v0,kv,thetav,omegav,rhov,r0,kr,omegar,rhor,alpha,kappa,prediction\n"));
    for (line, row) in text.lines().skip(1).zip(&rows) {
        let p: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
        assert!((p - row.value.unwrap()).abs() < 1e-6);
    }
}

#[test]
fn evaluate_reports_metrics_speed_up_and_scatter() {
    let dir = tempfile::tempdir().unwrap();
    let train = path(&dir, "train.csv");
    let model = path(&dir, "m.json");
    let scatter = path(&dir, "s.csv");
    run(&["gen-data", "--n", "20", "--steps", "20", "--b-steps", "4", "--out", train.to_str().unwrap()]);
    run(&["train", "--data", train.to_str().unwrap(), "--restarts", "1", "--out", model.to_str().unwrap()]);
    let rep = run(&[
        "evaluate", "--gpr", model.to_str().unwrap(), "--data", train.to_str().unwrap(), "--steps", "20", "--b-steps", "4",
        "--time-samples", "2", "--scatter", scatter.to_str().unwrap(),
    ]);
    // the fitted noise term smooths, so training points are not reproduced exactly
    assert!(value(&rep.text, "rmsre") < 1e-2, "{}", rep.text);
    assert!(value(&rep.text, "speed_up") > 0.0);
    assert_eq!(std::fs::read_to_string(&scatter).unwrap().lines().count(), 21);
}

#[test]
fn schema_mismatch_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let bad = path(&dir, "bad.csv");
    std::fs::write(&bad, "v0,kv,value\n1,2,3\n").unwrap();
    let out = path(&dir, "m.json");
    let err = run_args(["gmwb", "train", "--data", bad.to_str().unwrap(), "--out", out.to_str().unwrap()]).unwrap_err();
    assert!(err.to_string().contains("header"), "{err}");
    assert!(!out.exists());
}

#[test]
fn fee_engine_rejects_non_price_surrogate() {
    let dir = tempfile::tempdir().unwrap();
    let train = path(&dir, "t.csv");
    let model = path(&dir, "m.json");
    linear_csv(&train, 20, 0);
    run(&["train", "--data", train.to_str().unwrap(), "--target", "delta", "--restarts", "1", "--out", model.to_str().unwrap()]);
    let err = run_args(["gmwb", "fee", "--engine", model.to_str().unwrap()]).unwrap_err();
    assert!(err.to_string().contains("price surrogate"), "{err}");
}

#[test]
fn hpde_fee_makes_contract_fair() {
    let rep = run(&["fee", "--steps", "30", "--b-steps", "10"]);
    let v = value(&rep.text, "value");
    assert!((v - 100.0).abs() <= 0.1, "{}", rep.text);
    let bps = value(&rep.text, "fee_bps");
    let check = run(&["price", "--steps", "30", "--b-steps", "10"]);
    // reference fee 350 bps is below the fair fee iff the contract is worth more than P
    assert_eq!(bps > 350.0, value(&check.text, "price") > 100.0);
}
