use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn engage(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_engage"))
        .args(args)
        .current_dir(dir)
        .env_remove("ENGAGE_SEED")
        .env_remove("ENGAGE_LOG")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

const SMALL_COHORT: &str = "n_students = 5\nn_teachers = 1\ndays = 2\nresponse_rate = 1.0\n";

const FAST_MODEL: &str = "\
[model]
top_k_features = 5

[model.grid]
num_leaves = [3]
learning_rate = [0.1]
n_rounds = [10, 20]

[eval]
outer_folds = 5
inner_folds = 2
";

#[test]
fn synth_to_report() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    fs::write(root.join("synth.toml"), SMALL_COHORT).unwrap();
    fs::write(root.join("cfg.toml"), FAST_MODEL).unwrap();

    ok(&engage(&["synth", "--config", "synth.toml", "--out", "data"], root));
    for name in ["schedule.csv", "surveys.csv", "env.csv", "latents.csv"] {
        assert!(root.join("data").join(name).is_file(), "{name} missing");
    }

    ok(&engage(
        &[
            "clean",
            "--config",
            "cfg.toml",
            "--data",
            "data",
            "--out",
            "quality.csv",
        ],
        root,
    ));
    let quality = fs::read_to_string(root.join("quality.csv")).unwrap();
    assert!(quality.starts_with("participant_id,class_id,accepted"));

    ok(&engage(
        &[
            "features",
            "--config",
            "cfg.toml",
            "--data",
            "data",
            "--out",
            "features.csv",
        ],
        root,
    ));
    let features = fs::read_to_string(root.join("features.csv")).unwrap();
    assert!(features.lines().count() > 20);

    ok(&engage(
        &[
            "train",
            "--config",
            "cfg.toml",
            "--features",
            "features.csv",
            "--out",
            "model.json",
        ],
        root,
    ));
    let model = fs::read_to_string(root.join("model.json")).unwrap();
    assert!(model.contains("\"feature_names\""));

    let regimes = "[[regime]]\nfamilies = [\"eda\"]\ntarget = \"overall\"\n";
    fs::write(root.join("regimes.toml"), regimes).unwrap();
    ok(&engage(
        &[
            "eval",
            "--config",
            "cfg.toml",
            "--features",
            "features.csv",
            "--target",
            "overall",
            "--regimes",
            "regimes.toml",
            "--out",
            "out/report.json",
        ],
        root,
    ));
    for name in ["report.json", "table6.csv", "table7.csv", "regime_table.csv"] {
        assert!(root.join("out").join(name).is_file(), "{name} missing");
    }
    let table6 = fs::read_to_string(root.join("out/table6.csv")).unwrap();
    for predictor in ["model", "linear", "average", "random"] {
        assert!(table6.contains(&format!("overall,{predictor},")), "{table6}");
    }

    ok(&engage(
        &["report", "--report", "out/report.json", "--out", "again"],
        root,
    ));
    assert_eq!(
        fs::read_to_string(root.join("again/table6.csv")).unwrap(),
        table6,
        "report rewrites the same table"
    );
}

#[test]
fn missing_schedule_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = engage(&["segment", "--data", "nowhere"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("nowhere/schedule.csv"), "{stderr}");
}

#[test]
fn unknown_target_lists_the_valid_ones() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("features.csv"), "participant_id,class_id,subject\n").unwrap();
    let out = engage(&["train", "--features", "features.csv", "--target", "foo"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(
        stderr.contains("foo") && stderr.contains("behavioural") && stderr.contains("overall"),
        "{stderr}"
    );
}

#[test]
fn seed_flag_overrides_environment() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    fs::write(root.join("synth.toml"), "n_students = 2\nn_teachers = 1\ndays = 1\n").unwrap();
    let latents = |args: &[&str], env_seed: Option<&str>, out: &str| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_engage"));
        cmd.args(["synth", "--config", "synth.toml", "--out", out])
            .args(args)
            .current_dir(root);
        cmd.env_remove("ENGAGE_SEED");
        if let Some(seed) = env_seed {
            cmd.env("ENGAGE_SEED", seed);
        }
        ok(&cmd.output().unwrap());
        fs::read_to_string(root.join(out).join("latents.csv")).unwrap()
    };
    let from_env = latents(&[], Some("7"), "a");
    let flag_wins = latents(&["--seed", "7"], Some("8"), "b");
    let other = latents(&[], Some("8"), "c");
    assert_eq!(from_env, flag_wins);
    assert_ne!(from_env, other);
}
