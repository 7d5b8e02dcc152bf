//! The `pwe` binary: pipeline runtime, exit codes, file formats.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use pwe_fusion::checkpoint::{Checkpoint, CheckpointKind};
use pwe_fusion::export::{front_header, read_front, read_sweep, routing_header, select_lambda};

const QUADRATIC: &str = "[suite]\nkind = quadratic\nT = 2\n";

struct Run {
    _dir: tempfile::TempDir,
    config: PathBuf,
    workdir: PathBuf,
}

impl Run {
    fn new(config: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("experiment.ini");
        std::fs::write(&path, config).unwrap();
        let workdir = dir.path().join("work");
        Self {
            config: path,
            workdir,
            _dir: dir,
        }
    }

    fn pwe(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_pwe"))
            .arg("--config")
            .arg(&self.config)
            .arg("--workdir")
            .arg(&self.workdir)
            .arg("--quiet")
            .args(args)
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) {
        let out = self.pwe(args);
        assert!(
            out.status.success(),
            "pwe {args:?} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }

    fn file(&self, name: &str) -> PathBuf {
        self.workdir.join(name)
    }
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn two_task_quadratic_pipeline_within_two_minutes() {
    let run = Run::new(QUADRATIC);
    let start = Instant::now();
    run.ok(&["gen-tasks"]);
    run.ok(&["finetune", "--task", "0"]);
    run.ok(&["finetune", "--task", "1"]);
    run.ok(&["upscale"]);
    run.ok(&["train-routers"]);
    run.ok(&["eval-front"]);
    assert!(start.elapsed() <= Duration::from_secs(120), "{:?}", start.elapsed());

    let front = read_front(std::fs::File::open(run.file("front.csv")).unwrap()).unwrap();
    assert_eq!(front.len(), 11);
    let text = std::fs::read_to_string(run.file("front.csv")).unwrap();
    assert_eq!(text.lines().next().unwrap(), front_header(2, 0).join(","));
    assert!(text.ends_with('\n'));
    let log = std::fs::read_to_string(run.file("trainlog.csv")).unwrap();
    assert_eq!(log.lines().count(), 2001);
    assert!(log.starts_with("step,r_0,r_1,loss_0,loss_1,aggregate,non_uniformity\n"));
}

#[test]
fn unknown_key_exits_two_and_names_it() {
    let run = Run::new(&format!("{QUADRATIC}[trian]\nlr = 0.1\n"));
    let out = run.pwe(&["gen-tasks"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("trian.lr"), "{}", stderr(&out));

    let run = Run::new(QUADRATIC);
    let out = run.pwe(&["--set", "trian.lr=0.1", "gen-tasks"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("trian.lr"));
}

#[test]
fn every_config_problem_is_listed() {
    let run = Run::new("[suite]\nkind = quadratic\n[train]\nlr = -1\nsteps = 0\nbogus = 1\n");
    let out = run.pwe(&["gen-tasks"]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    assert!(err.contains("train.bogus"), "{err}");
    let run = Run::new("[suite]\nkind = quadratic\n[train]\nlr = -1\nsteps = 0\n");
    let err = stderr(&run.pwe(&["gen-tasks"]));
    for key in ["suite.T", "train.lr", "train.steps"] {
        assert!(err.contains(key), "missing {key} in {err}");
    }
}

#[test]
fn usage_errors_exit_two() {
    let out = Command::new(env!("CARGO_BIN_EXE_pwe")).arg("no-such-command").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = Command::new(env!("CARGO_BIN_EXE_pwe")).arg("gen-tasks").output().unwrap();
    assert_eq!(out.status.code(), Some(2), "missing --config");
}

#[test]
fn missing_checkpoint_is_a_file_error() {
    let run = Run::new(QUADRATIC);
    run.ok(&["gen-tasks"]);
    let out = run.pwe(&["train-routers"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("upscaled.ckpt"), "{}", stderr(&out));
    let out = run.pwe(&["finetune"]);
    assert!(out.status.success());
    let out = run.pwe(&["eval-front", "--checkpoint", "nope.ckpt"]);
    assert_eq!(out.status.code(), Some(1));
}

fn assert_byte_identical(path: &Path, kind: CheckpointKind) {
    let bytes = std::fs::read(path).unwrap();
    let ckpt = Checkpoint::load(path).unwrap();
    assert_eq!(ckpt.kind(), kind);
    assert_eq!(ckpt.to_bytes().unwrap(), bytes, "{}", path.display());
    let again = Checkpoint::from_bytes(&bytes).unwrap();
    let payload: Vec<u64> = ckpt.payload().iter().map(|v| v.to_bits()).collect();
    let reloaded: Vec<u64> = again.payload().iter().map(|v| v.to_bits()).collect();
    assert_eq!(payload, reloaded);
}

#[test]
fn written_checkpoints_roundtrip_byte_for_byte() {
    let run = Run::new("[suite]\nkind = cluster-classification\nT = 2\n[train]\nsteps = 50\n");
    for stage in ["gen-tasks", "finetune", "upscale", "train-routers", "merge"] {
        run.ok(&[stage]);
    }
    assert_byte_identical(&run.file("pretrained.ckpt"), CheckpointKind::Plain);
    assert_byte_identical(&run.file("finetuned_1.ckpt"), CheckpointKind::Plain);
    assert_byte_identical(&run.file("merged_task-arithmetic.ckpt"), CheckpointKind::Plain);
    assert_byte_identical(&run.file("upscaled.ckpt"), CheckpointKind::Upscaled);
    assert_byte_identical(&run.file("trained.ckpt"), CheckpointKind::Upscaled);
}

#[test]
fn sweep_selects_lambda_near_one_half_on_the_quadratic_suite() {
    let run = Run::new(QUADRATIC);
    for stage in ["gen-tasks", "finetune", "sweep-lambda"] {
        run.ok(&[stage]);
    }
    let rows = read_sweep(std::fs::File::open(run.file("sweep.csv")).unwrap()).unwrap();
    assert_eq!(rows.len(), 22);
    let lambda = select_lambda(std::fs::File::open(run.file("sweep.csv")).unwrap(), Some("task-arithmetic")).unwrap();
    assert!((0.4..=0.8).contains(&lambda), "{lambda}");
}

#[test]
fn routing_and_front_files_follow_their_schemas() {
    let run = Run::new("[suite]\nkind = cluster-classification\nT = 2\n[train]\nsteps = 50\n[eval]\ngrid_resolution = 5\n");
    for stage in ["gen-tasks", "finetune", "upscale", "train-routers", "eval-front", "dump-routing"] {
        run.ok(&[stage]);
    }
    let routing = std::fs::read_to_string(run.file("routing.csv")).unwrap();
    let mut lines = routing.lines();
    assert_eq!(lines.next().unwrap(), routing_header(2).join(","));
    // 2 layers × 2 experts × (2 unit + 5 grid) preferences
    assert_eq!(lines.count(), 2 * 2 * 7);
    let front = read_front(std::fs::File::open(run.file("front.csv")).unwrap()).unwrap();
    assert_eq!(front.len(), 5);
    assert!(front.iter().all(|p| p.metrics.as_ref().is_some_and(|m| m.len() == 2)));

    run.ok(&["eval-front", "--checkpoint", "finetuned_0.ckpt", "--out", "single.csv"]);
    let single = read_front(std::fs::File::open(run.file("single.csv")).unwrap()).unwrap();
    assert_eq!(single.len(), 1);
    assert!(single[0].preference.is_none());
}

#[test]
fn baselines_and_merges_run_for_every_mode_and_method() {
    let run = Run::new("[suite]\nkind = cluster-classification\nT = 2\n[train]\nsteps = 20\n");
    run.ok(&["gen-tasks"]);
    run.ok(&["finetune"]);
    for method in ["average", "task-arithmetic", "ties", "fisher", "regmean"] {
        run.ok(&["--set", &format!("merge.method={method}"), "merge"]);
        assert!(run.file(&format!("merged_{method}.ckpt")).exists());
    }
    for mode in ["ls", "epo", "mgda"] {
        run.ok(&["--set", &format!("train.mode={mode}"), "baseline"]);
        assert!(run.file(&format!("baseline_{mode}.ckpt")).exists());
        assert!(run.file(&format!("baseline_{mode}_trainlog.csv")).exists());
    }
    let d = std::fs::read_to_string(run.file("distances.csv")).unwrap();
    assert!(d.starts_with("task,finetuned_0,finetuned_1\n"));
}

#[test]
fn seed_flag_changes_the_suite() {
    let config = "[suite]\nkind = cluster-classification\nT = 2\n";
    let (a, b, c) = (Run::new(config), Run::new(config), Run::new(config));
    a.ok(&["gen-tasks"]);
    b.ok(&["--seed", "9", "gen-tasks"]);
    c.ok(&["--set", "suite.seed=9", "gen-tasks"]);
    let read = |r: &Run| std::fs::read(r.file("suite.json")).unwrap();
    assert_ne!(read(&a), read(&b));
    assert_eq!(read(&b), read(&c));
}
