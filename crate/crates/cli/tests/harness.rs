use std::fs;
use std::path::Path;
use std::process::Command;

use mdlc_cli::config::RunConfig;
use mdlc_cli::matrix::{CellStatus, MANIFEST};
use mdlc_cli::{run_matrix, summarize, verify_manifest, Manifest};
use mdlc_core::agents::MethodKind;
use serde_json::json;

fn mdlc(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_mdlc")).args(args).output().expect("binary runs")
}

fn tiny(extra: serde_json::Value) -> RunConfig {
    let mut v = json!({"methods": "PO,RPO", "seeds": "0..1", "episodes": [12, 12]});
    v.as_object_mut().unwrap().extend(extra.as_object().unwrap().clone());
    RunConfig::from_value(&v).unwrap()
}

#[test]
fn diverging_cell_is_recorded_and_others_finish() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(json!({"episodes": [30, 30], "method_overrides": {"RPO": {"lr": 10.0}}}));
    let m = run_matrix(&cfg, dir.path()).unwrap();
    for c in &m.cells {
        let expected = if c.method == "RPO" { CellStatus::Failed } else { CellStatus::Ok };
        assert_eq!(c.status, expected, "{c:?}");
    }
    assert!(m.cells.iter().filter(|c| c.status == CellStatus::Failed).all(|c| c.error.as_deref().unwrap().contains("diverged")));
    assert!(dir.path().join("PO_seed1_episodes.csv").exists());
    assert!(!dir.path().join("RPO_seed0_episodes.csv").exists());
    let table = summarize(dir.path()).unwrap();
    assert!(table.row(MethodKind::Po).is_some() && table.row(MethodKind::Rpo).is_none());
}

#[test]
fn manifest_hashes_detect_tampering() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(json!({"methods": "MDLC", "seeds": "3"}));
    run_matrix(&cfg, dir.path()).unwrap();
    let m = verify_manifest(dir.path()).unwrap();
    assert_eq!(m, Manifest::load(dir.path()).unwrap());
    assert!(m.files.iter().any(|f| f.path.ends_with("default.ckpt")));

    let csv = dir.path().join("MDLC_seed3_episodes.csv");
    let mut text = fs::read_to_string(&csv).unwrap();
    text.push('\n');
    fs::write(&csv, text).unwrap();
    assert!(verify_manifest(dir.path()).is_err());
}

#[test]
fn parallel_and_serial_runs_write_identical_files() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let serial = tiny(json!({"methods": "PO,VDO-PO,DISTRAL"}));
    let parallel = tiny(json!({"methods": "PO,VDO-PO,DISTRAL", "parallelism": 3}));
    let ma = run_matrix(&serial, a.path()).unwrap();
    let mb = run_matrix(&parallel, b.path()).unwrap();
    let hashes = |m: &Manifest| {
        m.files
            .iter()
            .filter(|f| f.path.ends_with(".csv") || f.path.ends_with(".ckpt"))
            .map(|f| (f.path.clone(), f.sha256.clone()))
            .collect::<Vec<_>>()
    };
    assert_eq!(hashes(&ma), hashes(&mb));
}

fn write_config(dir: &Path, v: serde_json::Value) -> String {
    let p = dir.join("config.json");
    fs::write(&p, v.to_string()).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn train_then_summarize_from_the_command_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), json!({"methods": "RPO", "seeds": "0..1", "episodes": [10, 10]}));
    let out = dir.path().join("run");
    let out_s = out.to_string_lossy().into_owned();
    let o = mdlc(&["train", "--config", &cfg, "--methods", "RPO,MDLC", "--set", "alpha=0.2", "--out", &out_s]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let resolved: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("resolved-config.json")).unwrap()).unwrap();
    assert_eq!(resolved["methods"], json!(["RPO", "MDLC"]));
    assert_eq!(resolved["alpha"], json!(0.2));
    assert!(out.join(MANIFEST).exists());

    let o = mdlc(&["summarize", &out_s]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("RPO") && text.contains("MDL-C"), "{text}");

    let csv_path = dir.path().join("summary.csv");
    let o = mdlc(&["summarize", &out_s, "--csv", &csv_path.to_string_lossy()]);
    assert!(o.status.success());
    let csv = fs::read_to_string(csv_path).unwrap();
    assert_eq!(csv.lines().count(), 3, "{csv}");
}

#[test]
fn unknown_keys_fail_before_training() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = mdlc(&["train", "--set", "learnng_rate=0.1", "--out", &out.to_string_lossy()]);
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("learnng_rate"), "{err}");
    assert!(!out.join(MANIFEST).exists());
}

#[test]
fn verification_commands_emit_csv() {
    let o = mdlc(&["kl-oracle", "--grid", "-1:1:1", "--samples", "200000"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(String::from_utf8(o.stdout).unwrap().lines().count(), 4);

    let o = mdlc(&["shrinkage-verify", "--prior", "jeffreys", "--d", "6", "--n", "100000", "--norms", "0,3"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.starts_with("estimator,prior,d,mean-norm,n,mse,ci,verdict"), "{text}");
}
