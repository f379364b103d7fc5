use std::path::Path;
use std::process::{Command, Output};

use manigrad::io::ntf_write;
use manigrad::models::file::save_vae;
use manigrad::models::{Activation, Dense, Mlp, Vae};
use manigrad::Tensor;
use serde_json::Value;

fn manigrad(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_manigrad"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) {
    let out = manigrad(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn json(path: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

/// Dataset, VAE, classifier and two reconstructed test images in `dir`.
fn tiny_pipeline(dir: &Path) {
    ok(dir, &["gen-data", "--n", "96", "--seed", "4", "--out", "data"]);
    ok(
        dir,
        &["train-vae", "--data", "data", "--latent", "4", "--hidden", "32", "--epochs", "3", "--seed", "2", "--out", "vae.mgm"],
    );
    ok(
        dir,
        &["train-classifier", "--vae", "vae.mgm", "--data", "data", "--hidden", "16", "--epochs", "3", "--out", "clf.mgm"],
    );
    ok(dir, &["sample", "--data", "data", "--index", "0", "--vae", "vae.mgm", "--out", "a.ntf"]);
    ok(dir, &["sample", "--data", "data", "--index", "1", "--vae", "vae.mgm", "--out", "b.ntf"]);
}

fn identity_layer(n: usize) -> Dense {
    let mut w = vec![0.0; n * n];
    for i in 0..n {
        w[i * n + i] = 1.0;
    }
    Dense::new(Tensor::new(vec![n, n], w).unwrap(), Tensor::zeros(&[1, n]), Activation::Identity).unwrap()
}

fn identity_vae(n: usize) -> Vae {
    let net = || Mlp::new(vec![identity_layer(n)]).unwrap();
    Vae::from_parts(net(), net(), net(), net(), true).unwrap()
}

#[test]
fn geodesic_under_identity_decoder_is_the_straight_line() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    save_vae(d.join("id.mgm"), &identity_vae(4)).unwrap();
    let a = Tensor::new(vec![2, 2], vec![0.3, -0.2, 0.9, 0.1]).unwrap();
    let b = Tensor::new(vec![2, 2], vec![-0.7, 0.4, 0.0, 0.5]).unwrap();
    ntf_write(d.join("a.ntf"), &a).unwrap();
    ntf_write(d.join("b.ntf"), &b).unwrap();
    ok(
        d,
        &["geodesic", "--vae", "id.mgm", "--from", "a.ntf", "--to", "b.ntf", "--steps", "8", "--out", "c.ntf", "--report", "r.json"],
    );
    let report = json(&d.join("r.json"));
    assert_eq!(report["converged"], Value::Bool(true), "{report}");
    assert!(report["odeResidual"].as_f64().unwrap() <= 1e-8);
    let curve = manigrad::io::ntf_read(d.join("c.ntf")).unwrap();
    assert_eq!(curve.shape(), &[9, 4]);
    for i in 0..=8 {
        let t = i as f64 / 8.0;
        for k in 0..4 {
            let expected = (1.0 - t) * a.data()[k] + t * b.data()[k];
            assert!((curve.row(i)[k] - expected).abs() <= 1e-10, "{i} {k} {} {expected}", curve.row(i)[k]);
        }
    }
    let run = json(&d.join("c.ntf.run.json"));
    assert_eq!(run["command"], "geodesic");
    assert_eq!(run["formatVersions"]["mgm"], 1);
}

#[test]
fn attribution_completeness_survives_into_the_report() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    tiny_pipeline(d);
    for method in ["ig", "eig", "mig", "blurig"] {
        let out = format!("{method}.ntf");
        ok(
            d,
            &[
                "attribute", "--method", method, "--clf", "clf.mgm", "--vae", "vae.mgm", "--input", "a.ntf", "--steps", "256",
                "--out", &out, "--heatmap", "map.pgm", "--results", "res.csv",
            ],
        );
        let run = json(&d.join(format!("{out}.run.json")));
        assert!(run["result"]["completeness"]["residual"].as_f64().unwrap() <= 0.02, "{method}: {run}");
    }
    ok(d, &["report", "--in", "res.csv", "--out", "summary.json"]);
    let summary = json(&d.join("summary.json"));
    let rows = summary["summaries"].as_array().unwrap();
    assert_eq!(rows.len(), 4);
    for row in rows {
        assert_eq!(row["metric"], "completeness");
        assert!(row["max"].as_f64().unwrap() <= 0.02, "{row}");
    }
    assert!(d.join("summary.json.run.json").exists());
}

#[test]
fn attacks_and_evaluation_write_their_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    tiny_pipeline(d);
    ok(
        d,
        &[
            "attack", "--kind", "targeted", "--clf", "clf.mgm", "--input", "a.ntf", "--target", "b.ntf", "--steps", "10",
            "--out", "adv.ntf", "--report", "attack.json",
        ],
    );
    let adv = manigrad::io::ntf_read(d.join("adv.ntf")).unwrap();
    let x = manigrad::io::ntf_read(d.join("a.ntf")).unwrap();
    let linf = adv.data().iter().zip(x.data()).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
    assert!(linf <= 0.1 + 1e-12);
    assert!(json(&d.join("attack.json"))["halved"].is_boolean());
    ok(
        d,
        &["attack", "--kind", "topk", "--clf", "clf.mgm", "--input", "a.ntf", "--k", "10", "--steps", "5", "--out", "adv2.ntf"],
    );

    std::fs::write(
        d.join("cfg.json"),
        r#"{"classifier": "clf.mgm", "vae": "vae.mgm", "inputs": {"files": ["a.ntf", "b.ntf"]},
            "methods": ["ig", "saliency"], "metrics": {"samples": 8, "sensitivitySamples": 3}}"#,
    )
    .unwrap();
    ok(d, &["evaluate", "--metric", "infd", "--config", "cfg.json", "--out", "infd.csv"]);
    let (header, rows) = manigrad::io::csv_read(d.join("infd.csv")).unwrap();
    assert_eq!(header, manigrad::experiment::METRIC_HEADER);
    assert_eq!(rows.len(), 4);
    ok(d, &["report", "--in", "infd.csv", "--out", "infd.json"]);
    let order = &json(&d.join("infd.json"))["orderingsAscending"]["infd"];
    assert_eq!(order.as_array().unwrap().len(), 2);
}

#[test]
fn identical_command_lines_give_identical_bytes() {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for dir in &dirs {
        tiny_pipeline(dir.path());
        ok(
            dir.path(),
            &["attribute", "--method", "smoothig", "--clf", "clf.mgm", "--input", "a.ntf", "--out", "s.ntf", "--seed", "9"],
        );
    }
    let mut names: Vec<_> = std::fs::read_dir(dirs[0].path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert!(names.len() >= 10);
    for name in names {
        let (p, q) = (dirs[0].path().join(&name), dirs[1].path().join(&name));
        if p.is_dir() {
            for f in ["dataset.json", "inputs.ntf", "labels.ntf", "run.json"] {
                assert_eq!(std::fs::read(p.join(f)).unwrap(), std::fs::read(q.join(f)).unwrap(), "{name:?}/{f}");
            }
        } else {
            assert_eq!(std::fs::read(&p).unwrap(), std::fs::read(&q).unwrap(), "{name:?}");
        }
    }
}

fn error_line(out: &Output) -> Value {
    let stderr = String::from_utf8(out.stderr.clone()).unwrap();
    assert_eq!(stderr.trim_end().lines().count(), 1, "{stderr}");
    serde_json::from_str(stderr.trim_end()).unwrap()
}

#[test]
fn failures_have_distinct_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    save_vae(d.join("id.mgm"), &identity_vae(4)).unwrap();
    ntf_write(d.join("a.ntf"), &Tensor::zeros(&[2, 2])).unwrap();

    let unknown = manigrad(d, &["geodesic", "--frobnicate"]);
    assert_eq!(unknown.status.code(), Some(2));
    assert_eq!(error_line(&unknown)["error"], "usage");

    let missing = manigrad(d, &["geodesic", "--vae", "nope.mgm", "--from", "a.ntf", "--to", "a.ntf", "--out", "c.ntf"]);
    assert_eq!(missing.status.code(), Some(3));
    assert_eq!(error_line(&missing)["error"], "missing-file");

    let bytes = std::fs::read(d.join("id.mgm")).unwrap();
    let text = String::from_utf8_lossy(&bytes[..bytes.iter().position(|&b| b == b'\n').unwrap()]).replace(
        "\"formatVersion\":1",
        "\"formatVersion\":7",
    );
    let mut future = text.into_bytes();
    future.extend_from_slice(&bytes[bytes.iter().position(|&b| b == b'\n').unwrap()..]);
    std::fs::write(d.join("future.mgm"), future).unwrap();
    let version = manigrad(d, &["geodesic", "--vae", "future.mgm", "--from", "a.ntf", "--to", "a.ntf", "--out", "c.ntf"]);
    assert_eq!(version.status.code(), Some(4));
    assert_eq!(error_line(&version)["error"], "format-version");

    std::fs::write(d.join("bad.ntf"), b"NTF1\n{\"dtype\":\"f64\",\"shape\":[2,2]}\n1234").unwrap();
    let corrupt = manigrad(d, &["geodesic", "--vae", "id.mgm", "--from", "bad.ntf", "--to", "a.ntf", "--out", "c.ntf"]);
    assert_eq!(corrupt.status.code(), Some(5));

    let help = manigrad(d, &["--help"]);
    assert!(help.status.success());
    assert!(!d.join("c.ntf").exists());
}

#[test]
fn thread_cap_is_validated() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_manigrad"))
        .current_dir(dir.path())
        .env("MANIGRAD_THREADS", "zero")
        .args(["report", "--in", "x.csv", "--out", "y.json"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}
