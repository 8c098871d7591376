use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn tvnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tvnet"))
        .args(args)
        .output()
        .unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(out: &Path, seed: &str) -> Output {
    tvnet(&[
        "synth",
        "--out_dir",
        path(out),
        "--n",
        "8",
        "--size",
        "64",
        "--cases",
        "2",
        "--seed",
        seed,
    ])
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                files.insert(
                    p.strip_prefix(root).unwrap().to_path_buf(),
                    std::fs::read(&p).unwrap(),
                );
            }
        }
    }
    files
}

#[test]
fn synth_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(synth(&a, "3").status.success());
    assert!(synth(&b, "3").status.success());
    for sub in ["train", "test"] {
        assert_eq!(tree(&a.join(sub)), tree(&b.join(sub)), "{sub}");
    }
    assert_eq!(
        std::fs::read(a.join("ledger.json")).unwrap(),
        std::fs::read(b.join("ledger.json")).unwrap()
    );
    let config = std::fs::read_to_string(a.join("effective_config.txt")).unwrap();
    assert!(config.contains("seed"), "{config}");
}

#[test]
fn eval_of_ground_truth_against_itself_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    assert!(synth(&data, "4").status.success());
    let gt = data.join("test/GT_Object");
    let out = dir.path().join("eval");
    let run = tvnet(&[
        "eval",
        "--pred_dir",
        path(&gt),
        "--gt_dir",
        path(&gt),
        "--out_dir",
        path(&out),
    ]);
    assert!(
        run.status.success(),
        "{}",
        String::from_utf8_lossy(&run.stderr)
    );
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("metrics.json")).unwrap()).unwrap();
    let mean = &json["mean"];
    for key in [
        "S_alpha",
        "E_phi_max",
        "F_beta_w",
        "F_beta_mean",
        "mDice",
        "mIoU",
    ] {
        assert_eq!(mean[key].as_f64(), Some(1.0), "{key}: {json}");
    }
    assert_eq!(mean["MAE"].as_f64(), Some(0.0));
    assert!(out.join("metrics.csv").is_file());
    assert!(out.join("eval.log").is_file());
}

#[test]
fn stats_cross_checks_the_ledger() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    assert!(synth(&data, "5").status.success());
    let out = dir.path().join("stats");
    let run = tvnet(&[
        "stats",
        "--data_root",
        path(&data),
        "--split",
        "train",
        "--out_dir",
        path(&out),
    ]);
    assert!(
        run.status.success(),
        "{}",
        String::from_utf8_lossy(&run.stderr)
    );
    assert!(out.join("stats_train.json").is_file());
    let log = std::fs::read_to_string(out.join("stats.log")).unwrap();
    assert!(log.contains("object counts match"), "{log}");
}

#[test]
fn failures_map_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = |name: &str| dir.path().join(name).to_str().unwrap().to_string();

    assert_eq!(tvnet(&["frobnicate"]).status.code(), Some(2));
    let unknown = tvnet(&["synth", "--out_dir", &out("u"), "--no_such_key", "1"]);
    assert_eq!(unknown.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&unknown.stderr).contains("no_such_key"));
    assert_eq!(
        tvnet(&["eval", "--out_dir", &out("m"), "--gt_dir", "x"])
            .status
            .code(),
        Some(2)
    );

    let missing = dir.path().join("missing");
    let run = tvnet(&[
        "stats",
        "--data_root",
        path(&missing),
        "--out_dir",
        &out("s"),
    ]);
    assert_eq!(run.status.code(), Some(3));

    let bogus = dir.path().join("bogus.ckpt");
    std::fs::write(&bogus, b"garbage").unwrap();
    let run = tvnet(&[
        "predict",
        "--checkpoint",
        path(&bogus),
        "--image_dir",
        path(dir.path()),
        "--out_dir",
        &out("p"),
    ]);
    assert_eq!(run.status.code(), Some(4));
}
