use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"{
  "dataset": {"train_scenes": 6, "val_scenes": 3, "height": 16, "width": 32},
  "net": {"base_channels": 4},
  "train": {"learning_rate": 1e-3, "batch_size": 3, "epochs": 2},
  "variants": ["esosd"],
  "seeds": [0]
}"#;

fn sosd(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sosd"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("spec.json"), TINY).unwrap();
    dir
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

#[test]
fn gen_data_is_deterministic() {
    let dir = setup();
    let p = dir.path();
    for out in ["a", "b"] {
        let o = sosd(&["gen-data", "--spec", "spec.json", "--seed", "5", "--out", out, "--deterministic"], p);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    let a = fs::read(p.join("a/manifest.json")).unwrap();
    assert_eq!(a, fs::read(p.join("b/manifest.json")).unwrap());
    assert_eq!(fs::read_dir(p.join("a/scenes")).unwrap().count(), 9);
    let o = sosd(&["gen-data", "--spec", "spec.json", "--seed", "6", "--out", "c"], p);
    assert_eq!(code(&o), 0);
    assert_ne!(a, fs::read(p.join("c/manifest.json")).unwrap());
}

#[test]
fn train_then_eval_is_reproducible() {
    let dir = setup();
    let p = dir.path();
    let o = sosd(&["train", "--spec", "spec.json", "--seed", "1", "--out", "run", "--deterministic"], p);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(p.join("run/final/manifest.json").exists());
    assert!(p.join("run/checkpoints/step-00000000/manifest.json").exists());
    let log = fs::read_to_string(p.join("run/train_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 4);
    assert!(log.lines().all(|l| l.contains("\"wall_ms\":0.0")));

    for out in ["e1", "e2"] {
        let o =
            sosd(&["eval", "--spec", "spec.json", "--checkpoint", "run/final", "--out", out, "--dump-predictions"], p);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    let r1 = fs::read(p.join("e1/report.json")).unwrap();
    assert_eq!(r1, fs::read(p.join("e2/report.json")).unwrap());
    assert!(p.join("e1/predictions/000000/depth.pgm").exists());
    assert!(p.join("e1/predictions/000000/semantic.ppm").exists());
}

#[test]
fn oracle_eval_is_perfect() {
    let dir = setup();
    let o = sosd(&["eval", "--spec", "spec.json", "--oracle", "--out", "ev"], dir.path());
    assert_eq!(code(&o), 0);
    let report: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("ev/report.json")).unwrap()).unwrap();
    assert_eq!(report["segmentation"]["miou"], 1.0);
    assert_eq!(report["depth"]["rel"], 0.0);
    assert_eq!(report["depth"]["delta1"], 1.0);
}

#[test]
fn ablate_writes_a_one_row_table() {
    let dir = setup();
    let o = sosd(&["ablate", "--spec", "spec.json", "--out", "ab", "--deterministic"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let table = fs::read_to_string(dir.path().join("ab/ablation.txt")).unwrap();
    assert!(table.lines().nth(1).unwrap().starts_with("esosd"));
    assert!(table.lines().nth(2).unwrap().is_empty());
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("esosd"));
}

#[test]
fn dump_writes_viewable_images() {
    let dir = setup();
    let o = sosd(&["dump", "--spec", "spec.json", "--out", "d", "--count", "2", "--split", "val"], dir.path());
    assert_eq!(code(&o), 0);
    let mut names: Vec<String> =
        fs::read_dir(dir.path().join("d")).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    names.sort();
    assert_eq!(names.len(), 2);
    let head = fs::read(dir.path().join("d").join(&names[0]).join("image.ppm")).unwrap();
    assert!(head.starts_with(b"P6"));
}

#[test]
fn exit_codes_follow_the_error_class() {
    let dir = setup();
    let p = dir.path();
    fs::write(p.join("bad.json"), r#"{"seeds": []}"#).unwrap();
    fs::write(p.join("broken.json"), "{").unwrap();
    assert_eq!(code(&sosd(&["train", "--spec", "bad.json", "--out", "x"], p)), 2);
    assert_eq!(code(&sosd(&["train", "--spec", "broken.json", "--out", "x"], p)), 2);
    assert_eq!(code(&sosd(&["train", "--spec", "missing.json", "--out", "x"], p)), 4);
    assert_eq!(code(&sosd(&["eval", "--spec", "spec.json", "--checkpoint", "nowhere", "--out", "x"], p)), 4);
    assert_eq!(code(&sosd(&["train", "--spec", "spec.json", "--variant", "resnet", "--out", "x"], p)), 2);
    let o = Command::new(env!("CARGO_BIN_EXE_sosd"))
        .args(["ablate", "--spec", "spec.json", "--out", "x"])
        .current_dir(p)
        .env("SOSD_THREADS", "0")
        .output()
        .unwrap();
    assert_eq!(code(&o), 2);
}

#[test]
fn corrupt_checkpoint_is_an_io_class_error() {
    let dir = setup();
    let p = dir.path();
    assert_eq!(code(&sosd(&["train", "--spec", "spec.json", "--out", "run", "--deterministic"], p)), 0);
    fs::write(p.join("run/final/manifest.json"), "{\"format\":").unwrap();
    let o = sosd(&["eval", "--spec", "spec.json", "--checkpoint", "run/final", "--out", "x"], p);
    assert_eq!(code(&o), 4, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn resume_continues_to_the_same_checkpoint() {
    let dir = setup();
    let p = dir.path();
    let run = |args: &[&str]| {
        let o = sosd(args, p);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    };
    run(&["train", "--spec", "spec.json", "--seed", "2", "--out", "full", "--deterministic"]);
    run(&["train", "--spec", "spec.json", "--seed", "2", "--out", "part", "--deterministic", "--stop-at", "1"]);
    run(&[
        "train",
        "--spec",
        "spec.json",
        "--seed",
        "2",
        "--out",
        "part",
        "--deterministic",
        "--resume",
        "part/checkpoints/step-00000001",
    ]);
    let tree = |root: &Path| {
        let mut files = Vec::new();
        let mut stack = vec![root.to_path_buf()];
        while let Some(d) = stack.pop() {
            for e in fs::read_dir(&d).unwrap() {
                let path = e.unwrap().path();
                if path.is_dir() {
                    stack.push(path);
                } else {
                    files.push((path.strip_prefix(root).unwrap().to_path_buf(), fs::read(&path).unwrap()));
                }
            }
        }
        files.sort();
        files
    };
    assert_eq!(tree(&p.join("full/final")), tree(&p.join("part/final")));
    assert_eq!(fs::read(p.join("full/train_log.jsonl")).unwrap(), fs::read(p.join("part/train_log.jsonl")).unwrap());
}
