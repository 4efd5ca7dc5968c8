use std::path::Path;
use std::process::{Command, Output};

fn rtmdnet(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rtmdnet"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], cwd: &Path) -> String {
    let out = rtmdnet(args, cwd);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn pretrain_track_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(
        &[
            "synth",
            "--domains",
            "2",
            "--length",
            "8",
            "--seed",
            "3",
            "--out",
            "domains",
        ],
        d,
    );
    let spec = "length = 12\nvelocity = 0.6,0.4\ntexture_seed = 9\n";
    std::fs::write(d.join("seq.txt"), spec).unwrap();
    ok(
        &["synth", "--spec", "seq.txt", "--seed", "4", "--out", "seq"],
        d,
    );
    assert!(d.join("seq/groundtruth.txt").is_file());

    let settings = ["--set", "preset=toy", "--set", "pretrain.epochs=3"];
    let train = |name: &str| {
        let mut args = vec![
            "pretrain", "--data", "domains", "--out", name, "--seed", "1",
        ];
        args.extend(settings);
        ok(&args, d)
    };
    let log = train("a.ckpt");
    assert!(log.contains("iterations = 6"), "{log}");
    train("b.ckpt");
    assert_eq!(
        std::fs::read(d.join("a.ckpt")).unwrap(),
        std::fs::read(d.join("b.ckpt")).unwrap()
    );

    let track = |out: &str| {
        ok(
            &[
                "track",
                "--checkpoint",
                "a.ckpt",
                "--sequence",
                "seq",
                "--out",
                out,
                "--seed",
                "2",
                "--set",
                "preset=toy",
                "--set",
                "tracker.init_iters=5",
                "--session-out",
                "session.ckpt",
            ],
            d,
        )
    };
    let log = track("r1.txt");
    assert!(log.contains("forward_passes = 12"), "{log}");
    track("r2.txt");
    let r1 = std::fs::read_to_string(d.join("r1.txt")).unwrap();
    assert_eq!(r1, std::fs::read_to_string(d.join("r2.txt")).unwrap());
    assert_eq!(r1.lines().count(), 12);
    assert!(d.join("session.ckpt").is_file());

    let report = ok(
        &[
            "eval",
            "--results",
            "r1.txt",
            "--groundtruth",
            "seq/groundtruth.txt",
        ],
        d,
    );
    assert!(report.starts_with("frames = 12\nauc = "), "{report}");
    assert_eq!(
        report.lines().filter(|l| l.starts_with("success ")).count(),
        101
    );
    assert_eq!(
        report
            .lines()
            .filter(|l| l.starts_with("precision "))
            .count(),
        51
    );
}

#[test]
fn print_config_shows_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(
        &[
            "pretrain",
            "--data",
            "x",
            "--out",
            "y",
            "--set",
            "preset=toy",
            "--set",
            "pretrain.alpha=0",
            "--print-config",
        ],
        dir.path(),
    );
    assert!(out.contains("preset = toy"));
    assert!(out.contains("pretrain.alpha = 0"));
}

#[test]
fn bad_inputs_fail_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = rtmdnet(
        &[
            "pretrain",
            "--data",
            "x",
            "--out",
            "y",
            "--set",
            "pretrain.nonsense=1",
        ],
        d,
    );
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));

    std::fs::write(
        d.join("m.txt"),
        "preset = toy\n[cell]\nuse = pooling\ncheckpoint = missing.ckpt\n",
    )
    .unwrap();
    let out = rtmdnet(&["ablate", "--matrix", "m.txt"], d);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("does not exist"));

    std::fs::write(d.join("r.txt"), "0,1,1,5,5,0.9\n2,1,1,5,5,0.9\n").unwrap();
    std::fs::write(d.join("g.txt"), "1,1,5,5\n1,1,5,5\n").unwrap();
    let out = rtmdnet(&["eval", "--results", "r.txt", "--groundtruth", "g.txt"], d);
    assert!(!out.status.success());
}

#[test]
fn gradcheck_and_bench_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(
        &["gradcheck", "--instances", "2", "--seed", "5"],
        dir.path(),
    );
    assert_eq!(out.lines().count(), rtmdnet::gradcheck::CHECK_NAMES.len());
    assert!(out.lines().all(|l| l.ends_with("PASS")), "{out}");
    let out = ok(
        &[
            "bench",
            "--set",
            "preset=toy",
            "--set",
            "bench.n_rois=8",
            "--set",
            "bench.reps=2",
        ],
        dir.path(),
    );
    assert!(out.contains("n_rois = 8"));
    assert!(out.contains("speedup = "));
}
