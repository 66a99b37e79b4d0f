use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn racs(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_racs"))
        .args(args)
        .output()
        .expect("spawn racs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// A small autoencoder checkpoint on 8x8 blocks with prefixes 10..=64.
fn train_tiny(dir: &Path) -> std::path::PathBuf {
    let out = racs(&[
        "train",
        "--head",
        "autoencoder",
        "--block",
        "8",
        "--k-min",
        "10",
        "--m-max",
        "64",
        "--max-iters-1",
        "40",
        "--max-iters-2",
        "10",
        "--iters-per-row",
        "1",
        "--synth",
        "dct-lowpass",
        "--count",
        "200",
        "--out",
        p(dir),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.join("train_log.csv").exists());
    dir.join("model.racs")
}

fn csv_rows(path: &Path) -> Vec<String> {
    fs::read_to_string(path).unwrap().lines().skip(1).map(String::from).collect()
}

fn write_pgm(path: &Path, w: usize, h: usize, value: u8) {
    let mut bytes = format!("P5\n{w} {h}\n255\n").into_bytes();
    bytes.extend(std::iter::repeat_n(value, w * h));
    fs::write(path, bytes).unwrap();
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(code(&racs(&[])), 1);
    assert_eq!(code(&racs(&["frobnicate"])), 1);
    assert_eq!(code(&racs(&["train", "--lr", "fast"])), 1);
    assert_eq!(code(&racs(&["sweep", "--synth", "shapes"])), 1);
    assert_eq!(code(&racs(&["train", "--synth", "shapes", "--data", "."])), 1);
    assert_eq!(code(&racs(&["--help"])), 0);
}

#[test]
fn config_errors_exit_2() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("bad.ini");
    fs::write(&cfg, "[train]\nlearning_rate = 0.1\n").unwrap();
    assert_eq!(code(&racs(&["train", "--config", p(&cfg)])), 2);
    assert_eq!(code(&racs(&["train", "--synth", "noise", "--out", p(dir.path())])), 2);
    assert_eq!(code(&racs(&["train", "--head", "mlp", "--synth", "shapes"])), 2);
}

#[test]
fn data_errors_exit_3() {
    let dir = TempDir::new().unwrap();
    let missing = dir.path().join("missing");
    let out = racs(&["train", "--data", p(&missing), "--out", p(dir.path())]);
    assert_eq!(code(&out), 3);
    let empty = dir.path().join("empty");
    fs::create_dir(&empty).unwrap();
    assert_eq!(code(&racs(&["train", "--data", p(&empty), "--out", p(dir.path())])), 3);
    let junk = dir.path().join("junk.racs");
    fs::write(&junk, b"not a checkpoint").unwrap();
    assert_eq!(code(&racs(&["export-phi", "--checkpoint", p(&junk), "--out", p(dir.path())])), 3);
}

#[test]
fn sweep_writes_one_row_per_prefix() {
    let dir = TempDir::new().unwrap();
    let model = train_tiny(dir.path());
    let out = racs(&[
        "sweep",
        "--checkpoint",
        p(&model),
        "--synth",
        "dct-lowpass",
        "--count",
        "20",
        "--out",
        p(dir.path()),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let rows = csv_rows(&dir.path().join("sweep.csv"));
    assert_eq!(rows.len(), 55);
    assert!(rows[0].starts_with("10,"));
    assert!(rows[54].starts_with("64,1,"));

    // Flags beat the config file, which beats the defaults.
    let cfg = dir.path().join("sweep.ini");
    let csv = dir.path().join("from_config.csv");
    fs::write(
        &cfg,
        format!(
            "[sweep]\ncheckpoint = {}\nr_max = 20\ncsv = {}\n[data]\nsynth = dct-lowpass\ncount = 10\n",
            p(&model),
            p(&csv)
        ),
    )
    .unwrap();
    assert_eq!(code(&racs(&["sweep", "--config", p(&cfg)])), 0);
    assert_eq!(csv_rows(&csv).len(), 11);
    assert_eq!(code(&racs(&["sweep", "--config", p(&cfg), "--r-max", "30"])), 0);
    assert_eq!(csv_rows(&csv).len(), 21);
    assert_eq!(code(&racs(&["sweep", "--config", p(&cfg), "--r-max", "65"])), 1);

    let phi = dir.path().join("phi");
    assert_eq!(code(&racs(&["export-phi", "--checkpoint", p(&model), "--out", p(&phi)])), 0);
    assert!(phi.join("phi_row_0064.pgm").exists());
}

#[test]
fn adapt_sim_policies() {
    let dir = TempDir::new().unwrap();
    let model = train_tiny(dir.path());
    let frames = dir.path().join("frames");
    fs::create_dir(&frames).unwrap();
    for (i, v) in [0u8, 0, 120, 120, 120, 200].iter().enumerate() {
        write_pgm(&frames.join(format!("f{i:02}.pgm")), 16, 16, *v);
    }
    let scores = dir.path().join("scores.txt");
    fs::write(&scores, "0.9\n0.9\n0.1\n0.1\n0.5\n0.5\n").unwrap();

    for policy in ["linear", "framediff", "confidence"] {
        let csv = dir.path().join(format!("{policy}.csv"));
        let out = racs(&[
            "adapt-sim",
            "--checkpoint",
            p(&model),
            "--frames",
            p(&frames),
            "--policy",
            policy,
            "--confidence",
            p(&scores),
            "--diff-source",
            "ground-truth",
            "--csv",
            p(&csv),
        ]);
        assert_eq!(code(&out), 0, "{policy}: {}", String::from_utf8_lossy(&out.stderr));
        let rates: Vec<usize> = csv_rows(&csv)
            .iter()
            .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
            .collect();
        let expected = match policy {
            "linear" => vec![64, 53, 42, 32, 21, 10],
            // Repeated frames lower the rate; the jump out of black raises it.
            "framediff" => vec![64, 64, 61, 64, 61, 58],
            _ => vec![64, 61, 58, 61, 64, 61],
        };
        assert_eq!(rates, expected, "{policy}");
    }
    let out = racs(&[
        "adapt-sim",
        "--checkpoint",
        p(&model),
        "--frames",
        p(&frames),
        "--policy",
        "confidence",
    ]);
    assert_eq!(code(&out), 1);
}

#[test]
fn classify_and_single_rate_modes() {
    let dir = TempDir::new().unwrap();
    let common = [
        "--block",
        "8",
        "--m-max",
        "16",
        "--max-iters-1",
        "30",
        "--max-iters-2",
        "5",
        "--iters-per-row",
        "1",
        "--synth",
        "shapes",
        "--count",
        "100",
    ];
    for mode in ["rate-adaptive", "vanilla", "gaussian-fixed"] {
        let out_dir = dir.path().join(mode);
        let mut args = vec!["train", "--head", "classifier", "--mode", mode, "--out", p(&out_dir)];
        args.extend(common);
        let out = racs(&args);
        assert_eq!(code(&out), 0, "{mode}: {}", String::from_utf8_lossy(&out.stderr));

        let out = racs(&[
            "classify",
            "--checkpoint",
            p(&out_dir.join("model.racs")),
            "--synth",
            "shapes",
            "--count",
            "12",
            "--r",
            "16",
            "--out",
            p(&out_dir),
        ]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        assert!(String::from_utf8_lossy(&out.stdout).contains("accuracy at r=16"));
        let rows = csv_rows(&out_dir.join("predictions.csv"));
        assert_eq!(rows.len(), 12);
        for (i, row) in rows.iter().enumerate() {
            let fields: Vec<usize> = row.split(',').map(|f| f.parse().unwrap()).collect();
            assert_eq!(fields[0], i);
            assert!(fields[1] < 4 && fields[2] < 4);
        }
    }
    let recon = dir.path().join("recon");
    train_tiny(&recon);
    let out = racs(&[
        "classify",
        "--checkpoint",
        p(&recon.join("model.racs")),
        "--synth",
        "shapes",
    ]);
    assert_eq!(code(&out), 1);
}

#[test]
fn class_directories_become_labels() {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("data");
    for (class, value) in [("a_dark", 20u8), ("b_light", 230)] {
        fs::create_dir_all(data.join(class)).unwrap();
        write_pgm(&data.join(class).join("img.pgm"), 16, 8, value);
    }
    let out_dir = dir.path().join("out");
    let out = racs(&[
        "train",
        "--head",
        "classifier",
        "--block",
        "8",
        "--m-max",
        "8",
        "--k-min",
        "2",
        "--max-iters-1",
        "200",
        "--max-iters-2",
        "5",
        "--iters-per-row",
        "1",
        "--batch-size",
        "4",
        "--val-fraction",
        "0.5",
        "--data",
        p(&data),
        "--out",
        p(&out_dir),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let out = racs(&[
        "classify",
        "--checkpoint",
        p(&out_dir.join("model.racs")),
        "--data",
        p(&data),
        "--out",
        p(&out_dir),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let labels: Vec<String> = csv_rows(&out_dir.join("predictions.csv"))
        .iter()
        .map(|r| r.split(',').nth(1).unwrap().to_string())
        .collect();
    assert_eq!(labels, ["0", "0", "1", "1"]);
}
