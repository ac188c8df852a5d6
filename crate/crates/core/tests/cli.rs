mod common;

use std::path::{Path, PathBuf};

use c2pi::cli::run_command;

const TOY: &str = "seed = 5\nmodel = \"simple_cnn\"\nwidth = 4\ntrain_per_class = 40\ntest_per_class = 10\nepochs = 2\n\
attack_epochs = 1\nattack_iterations = 20\nattacker_images = 30\nvictim_images = 2\n";

fn run(args: &[&str]) -> i32 {
    run_command(std::iter::once("c2pi").chain(args.iter().copied()))
}

fn setup() -> (tempfile::TempDir, String, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("toy.toml");
    std::fs::write(&config, TOY).unwrap();
    let model = dir.path().join("m.c2m");
    let cfg = config.to_str().unwrap().to_string();
    assert_eq!(
        run(&["--config", &cfg, "train", "--out", model.to_str().unwrap()]),
        0
    );
    (dir, cfg, model)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn sweep_noise_writes_one_row_per_lambda() {
    let (dir, cfg, model) = setup();
    let out = dir.path().join("sweep.csv");
    assert_eq!(
        run(&[
            "--config",
            &cfg,
            "sweep-noise",
            "--model",
            s(&model),
            "--out",
            s(&out)
        ]),
        0
    );
    let text = std::fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("lambda,avg_ssim,accuracy"));
    assert_eq!(lines.count(), 11);
}

#[test]
fn run_pi_over_tcp_matches_plaintext() {
    let (dir, cfg, model) = setup();
    let out = dir.path().join("pi.json");
    let code = run(&[
        "--config",
        &cfg,
        "run-pi",
        "--model",
        s(&model),
        "--boundary",
        "2",
        "--lambda",
        "0",
        "--transport",
        "tcp",
        "--n",
        "3",
        "--out",
        s(&out),
    ]);
    assert_eq!(code, 0);
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(&out).unwrap()).unwrap();
    assert_eq!(v["predictions"].as_array().unwrap().len(), 3);
    assert!(v["max_abs_diff"].as_f64().unwrap() < 1e-3);
    assert!(v["transcript"]["total_bytes"].as_u64().unwrap() > 0);
}

#[test]
fn attack_all_layers_and_search() {
    let (dir, cfg, model) = setup();
    let attacks = dir.path().join("attacks.json");
    let dumps = dir.path().join("dumps");
    assert_eq!(
        run(&[
            "--config",
            &cfg,
            "attack",
            "--model",
            s(&model),
            "--all-layers",
            "--attack",
            "mla",
            "--out",
            s(&attacks),
            "--dump-dir",
            s(&dumps)
        ]),
        0
    );
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(&attacks).unwrap()).unwrap();
    let n = v["reports"].as_array().unwrap().len();
    assert!(n >= 2);
    // one .f64 + .json pair per recovery, plus the originals
    assert_eq!(std::fs::read_dir(&dumps).unwrap().count(), 2 * (n + 1));
    assert!(dumps.join("originals.json").exists());

    let search = dir.path().join("search.json");
    assert_eq!(
        run(&[
            "--config",
            &cfg,
            "search",
            "--model",
            s(&model),
            "--delta-drop",
            "0.5",
            "--out",
            s(&search)
        ]),
        0
    );
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(&search).unwrap()).unwrap();
    assert!(v["result"]["boundary"].is_string());
    assert!(!v["result"]["ssim_trace"].as_array().unwrap().is_empty());
}

#[test]
fn bad_arguments_fail_without_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x.json");
    assert_ne!(run(&["train", "--bogus", "--out", s(&out)]), 0);
    assert_ne!(
        run(&[
            "run-pi",
            "--model",
            s(&dir.path().join("missing.c2m")),
            "--boundary",
            "2",
            "--out",
            s(&out)
        ]),
        0
    );
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "sigma = 2.0\n").unwrap();
    assert_ne!(run(&["--config", s(&bad), "train", "--out", s(&out)]), 0);
    std::fs::write(&bad, "no_such_key = 1\n").unwrap();
    assert_ne!(run(&["--config", s(&bad), "train", "--out", s(&out)]), 0);
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
}

#[test]
fn seed_precedence() {
    use c2pi::cli::{resolve_config, Cli};
    use clap::Parser;
    let dir = tempfile::tempdir().unwrap();
    let with_seed = dir.path().join("a.toml");
    let without = dir.path().join("b.toml");
    std::fs::write(&with_seed, "seed = 11\n").unwrap();
    std::fs::write(&without, "epochs = 3\n").unwrap();
    let seed = |args: &[&str]| {
        let cli = Cli::try_parse_from(
            std::iter::once("c2pi")
                .chain(args.iter().copied())
                .chain(["train", "--out", "x"]),
        )
        .unwrap();
        resolve_config(&cli).unwrap().seed
    };
    std::env::set_var("C2PI_SEED", "42");
    assert_eq!(seed(&["--seed", "7", "--config", s(&with_seed)]), 7);
    assert_eq!(seed(&["--config", s(&with_seed)]), 11);
    assert_eq!(seed(&["--config", s(&without)]), 42);
    assert_eq!(seed(&[]), 42);
    std::env::remove_var("C2PI_SEED");
    assert_eq!(seed(&[]), 1);
}
