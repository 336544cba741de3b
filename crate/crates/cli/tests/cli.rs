use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_spde-cpt"))
}

fn run(cmd: &mut Command) -> String {
    let out = cmd.env("RUST_LOG", "off").output().expect("binary runs");
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn kolmogorov_table() {
    let text = run(bin().args(["table-kolmogorov", "--quantiles", "0.95"]));
    let line = text.lines().nth(1).unwrap();
    let q: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
    assert!((q - 1.3581).abs() < 1e-4);
    let text = run(bin().args(["table-kolmogorov", "--from", "0.5", "--to", "1", "--step", "0.25"]));
    assert_eq!(text.lines().count(), 4);
}

#[test]
fn simulate_estimate_test() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("field.spde");
    run(bin().args(["simulate", "--set", "n_time=200", "--set", "modes.counts=[100]", "--m-space", "100", "--seed", "4"])
        .arg("--out")
        .arg(&data));

    let est: serde_json::Value = serde_json::from_str(&run(bin()
        .args(["estimate", "--method", "b", "--b", "0.1", "--m", "16", "--data"])
        .arg(&data)))
    .unwrap();
    assert!(est["kappa_hat"].as_f64().unwrap().is_finite());

    let coords = dir.path().join("x1.csv");
    let res: serde_json::Value = serde_json::from_str(&run(bin()
        .args(["test", "--kappa", "1", "--b", "0.1", "--m", "16", "--n-test", "100", "--data"])
        .arg(&data)
        .arg("--write-coords")
        .arg(&coords)))
    .unwrap();
    let again: serde_json::Value =
        serde_json::from_str(&run(bin().args(["test", "--coords"]).arg(&coords))).unwrap();
    let (a, b) = (res["t_n"].as_f64().unwrap(), again["t_n"].as_f64().unwrap());
    assert!((a - b).abs() < 1e-9 * a.max(1.0), "{a} vs {b}");
}

#[test]
fn mc_requires_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("mc.json");
    std::fs::write(
        &cfg,
        r#"{"params":{"theta0":0,"theta1":[0.2],"theta2":0.2},"noise":{"alpha":0,"gamma":{"rule":"cylindrical"}},
            "profile":{"change_points":[],"levels":[1.0]},"mode":"fast","n_time":100,"n_values":[100],
            "estimator":"oracle","beta":"total_qv","replications":20,"seed":0}"#,
    )
    .unwrap();
    let out = dir.path().join("out");
    let status = bin().args(["mc", "--config"]).arg(&cfg).arg("--out").arg(&out).output().unwrap();
    assert!(!status.status.success());
    run(bin().args(["mc", "--seed", "1", "--config"]).arg(&cfg).arg("--out").arg(&out));
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 1);
}
