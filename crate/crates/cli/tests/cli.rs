use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = "count = 4
test_count = 2
dims = 8x48x48
base_width = 2
batch_size = 4
sgd_epochs = 1
sgd_lr = 0.005
adam_epochs = 1
adam_lr = 0.001
primary_epochs = 1
primary_lr = 0.001
";

fn pbrunet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pbrunet"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn pipeline(run: &Path, config: &Path, extra: &[&str]) {
    let run = run.to_str().unwrap();
    let config = config.to_str().unwrap();
    for cmd in ["phantom", "train-init", "train-primary", "infer", "eval", "report"] {
        let mut args = vec![cmd, "--run", run, "--config", config];
        args.extend_from_slice(extra);
        let out = pbrunet(&args);
        assert_eq!(code(&out), 0, "{cmd}: {}", String::from_utf8_lossy(&out.stderr));
    }
}

fn tiny_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("tiny.conf");
    std::fs::write(&path, TINY).unwrap();
    path
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&pbrunet(&["infer", "--run", "x", "--no-such-flag"])), 1);
    assert_eq!(code(&pbrunet(&["transmogrify"])), 1);
    assert_eq!(code(&pbrunet(&["phantom", "--run", "x", "--threshold", "1.5"])), 1);
    assert_eq!(code(&pbrunet(&["phantom", "--run", "x", "--depth", "0"])), 1);
    assert_eq!(code(&pbrunet(&["eval", "--pred", "only-one.pvol"])), 1);
    assert_eq!(code(&pbrunet(&["--version"])), 0);
}

#[test]
fn data_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.pvol");
    std::fs::write(&bad, b"NOTAPVOL").unwrap();
    let bad = bad.to_str().unwrap();
    assert_eq!(code(&pbrunet(&["eval", "--pred", bad, "--gt", bad])), 2);
    assert_eq!(code(&pbrunet(&["train-init", "--run", dir.path().to_str().unwrap()])), 2);
}

#[test]
fn eval_of_identical_masks_scores_one() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let out = pbrunet(&["phantom", "--run", run.to_str().unwrap(), "--count", "1", "--test-count", "0"]);
    assert_eq!(code(&out), 0);
    let mask = run.join("volumes/case000_mask.pvol");
    let mask = mask.to_str().unwrap();
    let out = pbrunet(&["eval", "--pred", mask, "--gt", mask]);
    assert_eq!(code(&out), 0);
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["dsc"], 1.0);
    assert_eq!(report["iou"], 1.0);
    assert_eq!(report["hd_symmetric"], 0.0);
}

fn tree(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for sub in ["checkpoints", "volumes", "reports"] {
        let mut entries: Vec<_> = std::fs::read_dir(root.join(sub)).unwrap().map(|e| e.unwrap().path()).collect();
        entries.sort();
        for p in entries {
            if p.file_name().unwrap() != "timing.jsonl" {
                out.push((format!("{sub}/{}", p.file_name().unwrap().to_string_lossy()), std::fs::read(&p).unwrap()));
            }
        }
    }
    out
}

#[test]
fn worker_count_does_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny_config(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    pipeline(&a, &config, &[]);
    pipeline(&b, &config, &["--workers", "3"]);
    let (ta, tb) = (tree(&a), tree(&b));
    assert_eq!(ta.len(), tb.len());
    for ((na, da), (nb, db)) in ta.iter().zip(&tb) {
        assert_eq!(na, nb);
        assert!(da == db, "{na} differs");
    }
}

#[test]
fn forward_only_ablation_skips_backward_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny_config(dir.path());
    let run = dir.path().join("run");
    pipeline(&run, &config, &["--view-mode", "axial-only"]);
    let r = run.to_str().unwrap();
    let c = config.to_str().unwrap();
    let out = pbrunet(&["infer", "--run", r, "--config", c, "--view-mode", "axial-only", "--sweeps", "forward"]);
    assert_eq!(code(&out), 0);
    let timing = std::fs::read_to_string(run.join("reports/timing.jsonl")).unwrap();
    assert_eq!(timing.lines().count(), 2);
    assert!(timing.contains("forward_sweep") && !timing.contains("backward_sweep"));

    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["commands"]["infer"]["settings"]["sweeps"], "forward");
    assert!(manifest["commands"]["infer"]["inputs"]["checkpoints/primary.pbrw"].is_string());

    // the primary checkpoint was trained for depth 1
    let out = pbrunet(&["infer", "--run", r, "--config", c, "--view-mode", "axial-only", "--depth", "2"]);
    assert_eq!(code(&out), 1);
    // coronal and sagittal networks were never trained
    let out = pbrunet(&["infer", "--run", r, "--config", c]);
    assert_eq!(code(&out), 2);
}
