use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use pcim_core::cli::{RunManifest, SplitIds};
use pcim_core::eval::EvalReport;

fn pcim(cwd: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pcim"))
        .args(args)
        .current_dir(cwd)
        .env("PCIM_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn ok(cwd: &Path, args: &[&str]) -> String {
    let out = pcim(cwd, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(cwd: &Path, args: &[&str]) -> i32 {
    pcim(cwd, args).status.code().unwrap()
}

fn files(dir: &Path, suffix: &str) -> Vec<String> {
    let mut v: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(suffix))
        .collect();
    v.sort();
    v
}

const ATTR_FAST: &[&str] = &[
    "--ig-steps",
    "8",
    "--rise-masks",
    "40",
    "--pcim-steps",
    "5",
];

/// Dataset, checkpoint and a full set of holdout maps in `root`.
fn pipeline(root: &Path) {
    ok(root, &["gen-data", "--size", "16", "--per-class", "50", "--seed", "7", "--out", "d"]);
    ok(root, &["train", "--data", "d", "--epochs", "2", "--seed", "1", "--out", "ck"]);
    let mut args = vec!["attribute", "--checkpoint", "ck", "--data", "d", "--method", "all", "--out", "maps"];
    args.extend_from_slice(ATTR_FAST);
    ok(root, &args);
}

#[test]
fn gen_data_writes_counted_reproducible_dataset() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    ok(root, &["gen-data", "--size", "16", "--per-class", "12", "--classes", "3", "--seed", "4", "--out", "a"]);
    ok(root, &["gen-data", "--size", "16", "--per-class", "12", "--classes", "3", "--seed", "4", "--out", "b"]);
    let images: Vec<String> = files(&root.join("a"), ".pgm").into_iter().filter(|f| !f.contains("_mask")).collect();
    assert_eq!(images.len(), 36);
    assert_eq!(files(&root.join("a"), "_mask.pgm").len(), 36);
    let read = |d: &str| -> RunManifest {
        serde_json::from_str(&fs::read_to_string(root.join(d).join("run_manifest.json")).unwrap()).unwrap()
    };
    let (ma, mb) = (read("a"), read("b"));
    assert!(ma.dataset_fingerprint.is_some());
    assert_eq!(ma.dataset_fingerprint, mb.dataset_fingerprint);
    for f in files(&root.join("a"), ".pgm") {
        assert_eq!(fs::read(root.join("a").join(&f)).unwrap(), fs::read(root.join("b").join(&f)).unwrap());
    }
}

#[test]
fn usage_errors_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    assert_eq!(code(root, &["gen-data", "--classes", "4", "--out", "x"]), 2);
    assert_eq!(code(root, &["train", "--data", "d", "--frozen", "--out", "x"]), 2);
    assert_eq!(
        code(root, &["attribute", "--checkpoint", "c", "--data", "d", "--method", "pcim", "--pcim-steps", "0", "--out", "m"]),
        2
    );
    assert_eq!(
        code(root, &["attribute", "--checkpoint", "c", "--data", "d", "--method", "lime", "--out", "m"]),
        2
    );
    let out = Command::new(env!("CARGO_BIN_EXE_pcim"))
        .args(["gen-data", "--out", "x"])
        .current_dir(root)
        .env("PCIM_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn data_errors_exit_three() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    assert_eq!(code(root, &["train", "--data", "missing", "--out", "ck"]), 3);
    fs::create_dir(root.join("empty")).unwrap();
    assert_eq!(code(root, &["compare", "--maps", "empty", "--out", "c"]), 3);
}

#[test]
fn full_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    pipeline(root);

    // Checkpoint directory.
    let splits: SplitIds = serde_json::from_str(&fs::read_to_string(root.join("ck/splits.json")).unwrap()).unwrap();
    assert_eq!(splits.holdout.len(), 20);
    assert_eq!(splits.validation.len(), 16);
    assert_eq!(splits.train.len(), 64);
    assert!(root.join("ck/metrics.json").exists());
    assert!(root.join("ck/run_manifest.json").exists());

    // 20 holdout images x 7 methods.
    let maps = root.join("maps");
    assert_eq!(files(&maps, ".csv").len(), 140);
    assert_eq!(files(&maps, ".pgm").len(), 140);
    assert!(maps.join(format!("{}_pcim.csv", splits.holdout[0])).exists());

    // Attribution is reproducible.
    let mut args = vec!["attribute", "--checkpoint", "ck", "--data", "d", "--method", "all", "--out", "maps2"];
    args.extend_from_slice(ATTR_FAST);
    ok(root, &args);
    for f in files(&maps, ".csv") {
        assert_eq!(fs::read(maps.join(&f)).unwrap(), fs::read(root.join("maps2").join(&f)).unwrap(), "{f}");
    }

    // Evaluation.
    let table = ok(root, &["evaluate", "--checkpoint", "ck", "--data", "d", "--maps", "maps", "--localization", "--out", "ev"]);
    assert!(table.starts_with("Method"));
    let header = table.lines().next().unwrap();
    assert!(header.find("Deletion").unwrap() < header.find("Insertion").unwrap());
    let report = EvalReport::from_json(&fs::read_to_string(root.join("ev/report.json")).unwrap()).unwrap();
    assert_eq!(report.methods.len(), 7);
    for m in &report.methods {
        assert_eq!(m.images.len(), 20);
        assert!(m.median_rank_accuracy.is_some());
        assert!((0.0..=1.0).contains(&m.median_deletion_auc));
    }
    assert_eq!(files(&root.join("ev/curves"), ".csv").len(), 280);
    assert!(root.join("ev/table.txt").exists());

    // Comparison, twice.
    ok(root, &["compare", "--maps", "maps", "--out", "c1"]);
    ok(root, &["compare", "--maps", "maps", "--out", "c2"]);
    let csv = fs::read_to_string(root.join("c1/similarity.csv")).unwrap();
    assert_eq!(csv, fs::read_to_string(root.join("c2/similarity.csv")).unwrap());
    assert_eq!(
        fs::read_to_string(root.join("c1/linkage.csv")).unwrap(),
        fs::read_to_string(root.join("c2/linkage.csv")).unwrap()
    );
    let rows: Vec<Vec<String>> = csv.lines().skip(1).map(|l| l.split(',').skip(1).map(String::from).collect()).collect();
    assert_eq!(rows.len(), 7);
    for i in 0..7 {
        assert_eq!(rows[i].len(), 7);
        assert_eq!(rows[i][i], "1.000000");
        for j in 0..7 {
            assert_eq!(rows[i][j], rows[j][i]);
        }
    }
    assert_eq!(fs::read_to_string(root.join("c1/linkage.csv")).unwrap().lines().count(), 7);

    // One method is not a comparison.
    fs::create_dir(root.join("one")).unwrap();
    for f in files(&maps, "_pcim.csv") {
        fs::copy(maps.join(&f), root.join("one").join(&f)).unwrap();
    }
    assert_eq!(code(root, &["compare", "--maps", "one", "--out", "c3"]), 3);

    // Localization without masks.
    let manifest = root.join("d/manifest.csv");
    let stripped: String = fs::read_to_string(&manifest)
        .unwrap()
        .lines()
        .map(|l| {
            let mut cols: Vec<&str> = l.split(',').collect();
            if cols[2] != "mask" {
                cols[2] = "";
            }
            cols.join(",") + "\n"
        })
        .collect();
    fs::write(&manifest, stripped).unwrap();
    let out = pcim(root, &["evaluate", "--checkpoint", "ck", "--data", "d", "--maps", "maps", "--localization", "--out", "e2"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("masks required"));
    // Fidelity alone still works without masks.
    ok(root, &["evaluate", "--checkpoint", "ck", "--data", "d", "--maps", "maps", "--out", "e3"]);
}

#[test]
fn dimension_mismatch_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    ok(root, &["gen-data", "--size", "16", "--per-class", "10", "--seed", "1", "--out", "d16"]);
    ok(root, &["gen-data", "--size", "20", "--per-class", "10", "--seed", "1", "--out", "d20"]);
    ok(root, &["train", "--data", "d16", "--epochs", "1", "--out", "ck"]);
    let out = pcim(root, &["attribute", "--checkpoint", "ck", "--data", "d20", "--method", "random", "--out", "m"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("expects"));
}
