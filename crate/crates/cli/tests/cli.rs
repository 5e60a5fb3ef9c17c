use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use tempfile::TempDir;

const TINY: &str = "conv_channels=8,8,16,16,16,16\nresidual_depth=1\nfc_width=16\nbatch_size=8\nlearning_rate=0.01\n";

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_altdetect"));
    c.env("RUST_LOG", "warn");
    c
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn ok(o: Output) -> String {
    assert!(o.status.success(), "status {:?}\nstdout:\n{}\nstderr:\n{}", o.status, stdout(&o), stderr(&o));
    stdout(&o)
}

fn fingerprint(out: &str) -> String {
    out.lines().find_map(|l| l.strip_prefix("config ")).expect("fingerprint echoed").to_string()
}

/// A small corpus plus a detector trained on it, shared by the tests below.
struct Trained {
    dir: TempDir,
}

impl Trained {
    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }
}

fn trained() -> &'static Trained {
    static CELL: OnceLock<Trained> = OnceLock::new();
    CELL.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let d = dir.path();
        std::fs::write(d.join("tiny.cfg"), format!("{TINY}epochs=15\n")).unwrap();
        ok(run(
            d,
            &["--seed", "5", "synth", "--out", "corpus", "--count", "60", "--no-probes", "--region-fraction", "1"],
        ));
        ok(run(
            d,
            &[
                "--config",
                "tiny.cfg",
                "--seed",
                "5",
                "train",
                "--manifest",
                "corpus/manifest.tsv",
                "--out",
                "model.ckpt",
            ],
        ));
        ok(run(d, &["calibrate", "--checkpoint", "model.ckpt", "--manifest", "model.split.tsv", "--out", "cal.json"]));
        Trained { dir }
    })
}

#[test]
fn synth_writes_paired_records_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let a = ok(run(d, &["--seed", "9", "synth", "--out", "a", "--count", "10", "--height", "64", "--width", "64"]));
    ok(run(d, &["--seed", "9", "synth", "--out", "b", "--count", "10", "--height", "64", "--width", "64"]));
    let m = altdetect::data::Manifest::read(&d.join("a/manifest.tsv")).unwrap();
    assert_eq!(m.records.len(), 20);
    for label in altdetect::Label::ALL {
        assert_eq!(m.records.iter().filter(|r| r.label == label).count(), 10);
    }
    for r in &m.records {
        let (x, y) = (d.join("a").join(&r.path), d.join("b").join(&r.path));
        assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap());
    }
    assert_eq!(std::fs::read(d.join("a/manifest.tsv")).unwrap(), std::fs::read(d.join("b/manifest.tsv")).unwrap());
    assert_eq!(fingerprint(&a).len(), 64);
}

#[test]
fn synth_into_unwritable_path_fails() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("file"), b"x").unwrap();
    let o = run(dir.path(), &["synth", "--out", "file/sub", "--count", "1"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error:"), "{}", stderr(&o));
}

#[test]
fn patch_size_restricted_to_two_values() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["--patch-size", "96", "synth", "--out", "x", "--count", "1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("64 or 128"), "{}", stderr(&o));
    let o = run(dir.path(), &["--set", "patch_size=32", "synth", "--out", "x", "--count", "1"]);
    assert_eq!(o.status.code(), Some(2));
    ok(run(
        dir.path(),
        &["--patch-size", "128", "synth", "--out", "x", "--count", "1", "--height", "64", "--width", "64"],
    ));
}

#[test]
fn unknown_config_keys_rejected() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.cfg"), "epochs=3\nwarp_speed=9\n").unwrap();
    let o = run(dir.path(), &["--config", "bad.cfg", "synth", "--out", "x", "--count", "1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("warp_speed"), "{}", stderr(&o));
    let o = run(dir.path(), &["--set", "bogus=1", "synth", "--out", "x", "--count", "1"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(run(d, &["synth", "--out", "c", "--count", "6", "--no-probes", "--height", "64", "--width", "64"]));
    std::fs::write(d.join("f.cfg"), format!("{TINY}epochs=1\n")).unwrap();
    let via_file = ok(run(d, &["--config", "f.cfg", "train", "--manifest", "c/manifest.tsv", "--out", "a.ckpt"]));
    let mut cfg = altdetect::eval::ExperimentConfig::default();
    cfg.apply_text(&format!("{TINY}epochs=1\n")).unwrap();
    assert_eq!(fingerprint(&via_file), cfg.fingerprint());
    let overridden =
        ok(run(d, &["--config", "f.cfg", "--epochs", "2", "train", "--manifest", "c/manifest.tsv", "--out", "b.ckpt"]));
    cfg.set("epochs", "2").unwrap();
    assert_eq!(fingerprint(&overridden), cfg.fingerprint());
    assert_eq!(overridden.lines().filter(|l| l.starts_with("{\"epoch\"")).count(), 2);
}

#[test]
fn manifest_schema_errors_name_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(
        d.join("m.tsv"),
        "path\tformat\tlabel\tprobe\tmask\tsplit\na.png\tpng\tauthentic\t-\t-\ttrain\nb.png\tbmp\ttampered\t-\t-\ttest\n",
    )
    .unwrap();
    let o = run(d, &["train", "--manifest", "m.tsv", "--out", "x.ckpt"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));
}

#[test]
fn missing_train_split_is_explicit() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(run(d, &["synth", "--out", "c", "--count", "2", "--no-probes", "--height", "64", "--width", "64"]));
    let text = std::fs::read_to_string(d.join("c/manifest.tsv")).unwrap();
    let all_test: String = text
        .lines()
        .enumerate()
        .map(|(i, l)| {
            if i == 0 {
                format!("{l}\n")
            } else {
                let mut f: Vec<&str> = l.split('\t').collect();
                f[5] = "test";
                format!("{}\n", f.join("\t"))
            }
        })
        .collect();
    std::fs::write(d.join("c/test_only.tsv"), all_test).unwrap();
    let o = run(d, &["train", "--manifest", "c/test_only.tsv", "--out", "x.ckpt"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("no training images"), "{}", stderr(&o));
}

#[test]
fn full_pipeline_eval_report() {
    let t = trained();
    let o = ok(run(
        t.dir.path(),
        &[
            "eval",
            "--checkpoint",
            "model.ckpt",
            "--manifest",
            "model.split.tsv",
            "--calibration",
            "cal.json",
            "--decisions",
            "d.jsonl",
        ],
    ));
    assert!(o.lines().any(|l| l.starts_with("Thresholding")), "{o}");
    assert!(o.lines().any(|l| l.starts_with("SVM")), "{o}");
    assert!(o.contains("patch confusion"));
    let fp = fingerprint(&o);
    let decisions = std::fs::read_to_string(t.path("d.jsonl")).unwrap();
    assert!(decisions.lines().count() > 0);
    for line in decisions.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        for key in ["image_id", "total", "tampered", "output", "label_threshold", "label_svm", "margin"] {
            assert!(v.get(key).is_some(), "{key} missing in {line}");
        }
    }
    let again = ok(run(
        t.dir.path(),
        &["eval", "--checkpoint", "model.ckpt", "--manifest", "model.split.tsv", "--calibration", "cal.json"],
    ));
    assert_eq!(again, o);
    assert_eq!(fingerprint(&again), fp);
}

#[test]
fn eval_without_deciders_fails() {
    let t = trained();
    let o = run(t.dir.path(), &["eval", "--checkpoint", "model.ckpt", "--manifest", "model.split.tsv"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("not fitted"), "{}", stderr(&o));
    // a fixed threshold alone is enough for threshold-only evaluation
    ok(run(
        t.dir.path(),
        &[
            "--aggregation",
            "threshold",
            "eval",
            "--checkpoint",
            "model.ckpt",
            "--manifest",
            "model.split.tsv",
            "--threshold",
            "4",
        ],
    ));
}

#[test]
fn predict_authentic_image() {
    let t = trained();
    let split = altdetect::data::Manifest::read(&t.path("model.split.tsv")).unwrap();
    let test_authentic: Vec<_> = split
        .records
        .iter()
        .filter(|r| r.split == Some(altdetect::data::Split::Test) && r.label == altdetect::Label::Authentic)
        .collect();
    let mut authentic_votes = 0;
    for r in &test_authentic {
        let img = r.path.to_str().unwrap();
        let o = ok(run(
            t.dir.path(),
            &["predict", "--checkpoint", "model.ckpt", "--image", img, "--calibration", "cal.json", "--json"],
        ));
        let v: serde_json::Value = serde_json::from_str(o.trim()).unwrap();
        if v["label"] == "authentic" && v["output"].as_f64().unwrap() <= 25.0 {
            authentic_votes += 1;
        }
    }
    assert!(authentic_votes * 10 >= test_authentic.len() * 9, "{authentic_votes} of {}", test_authentic.len());
    let text = ok(run(
        t.dir.path(),
        &[
            "predict",
            "--checkpoint",
            "model.ckpt",
            "--image",
            test_authentic[0].path.to_str().unwrap(),
            "--calibration",
            "cal.json",
        ],
    ));
    for prefix in ["config ", "patches ", "threshold ", "svm ", "label "] {
        assert!(text.lines().any(|l| l.starts_with(prefix)), "{prefix}: {text}");
    }
}

#[test]
fn checkpoint_architecture_mismatch_rejected() {
    let t = trained();
    let o = run(
        t.dir.path(),
        &[
            "--patch-size",
            "128",
            "eval",
            "--checkpoint",
            "model.ckpt",
            "--manifest",
            "model.split.tsv",
            "--calibration",
            "cal.json",
        ],
    );
    assert_ne!(o.status.code(), Some(0));
    assert!(stderr(&o).contains("does not match"), "{}", stderr(&o));
}

#[test]
fn gridsearch_prints_whole_grid() {
    let t = trained();
    let o = ok(run(
        t.dir.path(),
        &[
            "gridsearch",
            "--checkpoint",
            "model.ckpt",
            "--manifest",
            "model.split.tsv",
            "--split",
            "test",
            "--out",
            "g.json",
        ],
    ));
    assert_eq!(o.lines().filter(|l| l.starts_with("tau ")).count(), 10);
    assert!(o.contains("best tau"));
    let g: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(t.path("g.json")).unwrap()).unwrap();
    assert_eq!(g["table"].as_array().unwrap().len(), 10);
}

#[test]
fn ablate_and_compress_emit_paired_tables() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(run(d, &["synth", "--out", "c", "--count", "8", "--no-probes", "--region-fraction", "1"]));
    std::fs::write(d.join("t.cfg"), format!("{TINY}epochs=2\n")).unwrap();
    let o = ok(run(d, &["--config", "t.cfg", "ablate", "--manifest", "c/manifest.tsv", "--report", "ablate.txt"]));
    for needle in ["== residual ==", "== no-residual ==", "ablation summary", "delta"] {
        assert!(o.contains(needle), "{needle}: {o}");
    }
    let delta_line = o.lines().find(|l| l.starts_with("delta")).unwrap();
    let params: i64 = delta_line.split_whitespace().nth(1).unwrap().parse().unwrap();
    assert!(params < 0, "{delta_line}");
    assert_eq!(std::fs::read_to_string(d.join("ablate.txt")).unwrap(), o.split_once('\n').unwrap().1);

    let o = ok(run(d, &["--config", "t.cfg", "compress", "--manifest", "c/manifest.tsv", "--png-copy", "png"]));
    for needle in ["== png ==", "== jpeg-q50 ==", "compression summary", "format"] {
        assert!(o.contains(needle), "{needle}: {o}");
    }
    assert!(d.join("png/manifest.tsv").exists());
}

#[test]
fn no_residual_flag_changes_architecture() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(run(d, &["synth", "--out", "c", "--count", "4", "--no-probes", "--height", "64", "--width", "64"]));
    std::fs::write(d.join("t.cfg"), format!("{TINY}epochs=1\n")).unwrap();
    ok(run(d, &["--config", "t.cfg", "train", "--manifest", "c/manifest.tsv", "--out", "full.ckpt"]));
    ok(run(d, &["--config", "t.cfg", "--no-residual", "train", "--manifest", "c/manifest.tsv", "--out", "abl.ckpt"]));
    let full = altdetect::net::load_checkpoint(&d.join("full.ckpt")).unwrap();
    let abl = altdetect::net::load_checkpoint(&d.join("abl.ckpt")).unwrap();
    assert!(full.arch.enable_residual && !abl.arch.enable_residual);
    assert!(full.param_count() > abl.param_count());
}
