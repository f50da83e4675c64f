use std::fs;
use std::path::Path;
use std::process::Command;

use hgt_cli::{parse_args, parse_config_file, RunConfig};
use hgt_core::HgtError;

fn hgt(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_hgt"))
        .args(args)
        .env_remove("HGT_THREADS")
        .output()
        .expect("spawn hgt")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn small_synth(dir: &Path, dim: usize) {
    let dim = dim.to_string();
    let out = hgt(&[
        "synth",
        "--out",
        s(dir),
        "--branching",
        "3,2",
        "--dim",
        &dim,
        "--train-per-leaf",
        "8",
        "--test-per-leaf",
        "4",
        "--patches",
        "4",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn train_opts(args: &[&str]) -> (hgt_cli::IoOpts, hgt_cli::TrainOpts) {
    let mut full = vec!["hgt", "train"];
    full.extend_from_slice(args);
    match parse_args(full).unwrap() {
        RunConfig::Train { io, train } => (io, train),
        other => panic!("expected train, got {other:?}"),
    }
}

#[test]
fn help_lists_defaults() {
    let out = hgt(&["train", "--help"]);
    assert!(out.status.success());
    let help = String::from_utf8(out.stdout).unwrap();
    for needle in [
        "[default: 3e-4]",
        "[default: 50]",
        "[default: 64]",
        "[default: gat]",
        "[default: multi_label]",
        "[default: 0.2]",
        "HGT_THREADS",
    ] {
        assert!(help.contains(needle), "missing {needle} in\n{help}");
    }
    let top = String::from_utf8(hgt(&["--help"]).stdout).unwrap();
    for sub in ["synth", "train", "eval", "sweep", "gradcheck"] {
        assert!(top.contains(sub));
    }
}

#[test]
fn parsed_defaults_match_training_defaults() {
    let (io, t) = train_opts(&[]);
    let cfg = t.to_config(16, 2, io.seed).unwrap();
    let reference = hgt_core::TrainConfig::defaults(16, 2);
    assert_eq!(cfg.lr0, reference.lr0);
    assert_eq!(cfg.epochs, reference.epochs);
    assert_eq!(cfg.batch_size, reference.batch_size);
    assert_eq!(cfg.fusion.lambda1, reference.fusion.lambda1);
    assert_eq!(cfg.fusion.lambda2, reference.fusion.lambda2);
    assert_eq!(cfg.fusion.alpha, reference.fusion.alpha);
    assert_eq!(cfg.loss.level_weights, reference.loss.level_weights);
    assert_eq!(cfg.loss.logit_scale, reference.loss.logit_scale);
    assert_eq!(cfg.text_encoder, reference.text_encoder);
    assert_eq!(cfg.toggles, reference.toggles);
}

#[test]
fn synth_train_eval_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let run = tmp.path().join("run");
    small_synth(&data, 8);
    for f in ["taxonomy.txt", "text.hgeb", "train.hgeb", "test.hgeb"] {
        assert!(data.join(f).exists(), "{f}");
    }

    let out = hgt(&[
        "train",
        "--embeddings",
        s(&data),
        "--out",
        s(&run),
        "--epochs",
        "3",
        "--batch",
        "16",
        "--threads",
        "2",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    for f in ["model.hgck", "train_log.csv", "metrics.csv", "summary.txt"] {
        assert!(run.join(f).exists(), "{f}");
    }
    let log = fs::read_to_string(run.join("train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 1 + 3);

    let out = hgt(&["eval", "--embeddings", s(&data), "--out", s(&run)]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let metrics = fs::read_to_string(run.join("metrics.csv")).unwrap();
    let eval = fs::read_to_string(run.join("eval.csv")).unwrap();
    // identical apart from the trailing wall-time column
    let strip = |t: &str| -> Vec<String> {
        t.lines()
            .map(|l| l.rsplit_once(',').unwrap().0.to_string())
            .collect()
    };
    assert_eq!(strip(&metrics), strip(&eval));
    assert_eq!(eval.lines().count(), 1 + 2);
}

#[test]
fn eval_rejects_mismatched_width() {
    let tmp = tempfile::tempdir().unwrap();
    let (d8, d6) = (tmp.path().join("d8"), tmp.path().join("d6"));
    small_synth(&d8, 8);
    small_synth(&d6, 6);
    let run = tmp.path().join("run");
    let out = hgt(&[
        "train",
        "--embeddings",
        s(&d8),
        "--out",
        s(&run),
        "--epochs",
        "1",
    ]);
    assert!(out.status.success());

    let ckpt = run.join("model.hgck");
    let out = hgt(&[
        "eval",
        "--embeddings",
        s(&d6),
        "--checkpoint",
        s(&ckpt),
        "--out",
        s(&run),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("shape mismatch"));

    let (io, t) = train_opts(&[
        "--embeddings",
        s(&d6),
        "--checkpoint",
        s(&ckpt),
        "--out",
        s(&run),
    ]);
    let err = hgt_cli::cmd_eval(&io, &t).unwrap_err();
    assert!(
        matches!(err.downcast_ref::<HgtError>(), Some(HgtError::Shape(_))),
        "{err:#}"
    );
}

#[test]
fn depth_sweep_writes_five_settings() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    small_synth(&data, 6);
    let out = tmp.path().join("sweep");
    let res = hgt(&[
        "sweep",
        "--axis",
        "depth",
        "--embeddings",
        s(&data),
        "--out",
        s(&out),
        "--epochs",
        "1",
    ]);
    assert!(
        res.status.success(),
        "{}",
        String::from_utf8_lossy(&res.stderr)
    );
    let csv = fs::read_to_string(out.join("sweep_depth.csv")).unwrap();
    let mut settings: Vec<&str> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap())
        .collect();
    settings.dedup();
    assert_eq!(
        settings,
        ["depth=1", "depth=2", "depth=3", "depth=4", "depth=5"]
    );
    assert_eq!(csv.lines().count(), 1 + 5 * 2);
}

#[test]
fn config_file_sits_between_flags_and_defaults() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.cfg");
    fs::write(
        &cfg,
        "# comment\nepochs = 7\nlr = 1e-2\nvariant = sage\nlevel-weights = 1, 3\nseed = 5\n",
    )
    .unwrap();
    let (io, t) = train_opts(&["--config", s(&cfg), "--epochs", "2"]);
    assert_eq!(t.epochs, 2, "flag beats file");
    assert_eq!(t.lr, 1e-2, "file beats default");
    assert_eq!(t.variant, hgt_core::Variant::Sage);
    assert_eq!(t.level_weights, Some(vec![1.0, 3.0]));
    assert_eq!(io.seed, 5);
    assert_eq!(t.batch, 64, "untouched default");

    fs::write(&cfg, "epochs = 7\nbogus = 1\n").unwrap();
    assert!(parse_args(["hgt", "train", "--config", s(&cfg)]).is_err());
    fs::write(&cfg, "branching = 2,2\n").unwrap();
    assert!(
        parse_args(["hgt", "train", "--config", s(&cfg)]).is_err(),
        "synth key rejected for train"
    );
    assert!(parse_args(["hgt", "synth", "--config", s(&cfg)]).is_ok());
}

#[test]
fn config_lines_parse() {
    let kv =
        parse_config_file("a = 1\n\n  b=two # trailing\n# only comment\nlevel-weights = 1,2\n")
            .unwrap();
    assert_eq!(
        kv,
        [
            ("a".to_string(), "1".to_string()),
            ("b".to_string(), "two".to_string()),
            ("level_weights".to_string(), "1,2".to_string()),
        ]
    );
    assert!(parse_config_file("no equals sign").is_err());
    assert!(parse_config_file(" = 3").is_err());
}

#[test]
fn gradcheck_passes_on_fresh_model() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    small_synth(&data, 6);
    let out = hgt(&[
        "gradcheck",
        "--embeddings",
        s(&data),
        "--out",
        s(&tmp.path().join("gc")),
        "--samples",
        "2",
        "--logit-scale",
        "1",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(String::from_utf8_lossy(&out.stdout).contains("text_offsets"));
}

#[test]
fn bad_arguments_exit_nonzero() {
    assert!(!hgt(&["train", "--variant", "mlp"]).status.success());
    assert!(!hgt(&["train"]).status.success(), "missing --embeddings");
    assert!(!hgt(&[
        "synth",
        "--levels",
        "3",
        "--branching",
        "2,2",
        "--out",
        "/tmp/never"
    ])
    .status
    .success());
}
