use std::path::Path;
use std::process::{Command, Output};

const SMALL_CORPUS: &str = r#"
seed = 3

[synth]
seen_services = 2
unseen_services = 1
dialogues_per_service = 5
unseen_dialogues_per_service = 3
"#;

fn cli(args: &[&str], config: &Path, data: &Path, out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_schema-dst"))
        .arg("--config")
        .arg(config)
        .arg("--data-dir")
        .arg(data)
        .arg("--output-dir")
        .arg(out)
        .arg("--log")
        .arg("warn")
        .args(args)
        .env_remove("SCHEMA_DST_DATA")
        .output()
        .unwrap()
}

fn ok(o: &Output) -> String {
    assert!(
        o.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        o.status.code(),
        String::from_utf8_lossy(&o.stdout),
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn oracle_pipeline_scores_perfectly() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.toml");
    std::fs::write(&config, SMALL_CORPUS).unwrap();
    let data = dir.path().join("data");
    let out = dir.path().join("run");

    ok(&cli(&["synth"], &config, &data, &out));
    assert!(data.join("train/schema.json").exists());
    assert!(data.join("dev/dialogues_001.json").exists());

    let text = ok(&cli(
        &["preprocess", "--split", "train"],
        &config,
        &data,
        &out,
    ));
    assert!(text.contains("task ratios"), "{text}");
    assert!(out.join("train_examples.jsonl").exists());
    assert!(out.join("train_stats.json").exists());

    ok(&cli(
        &["predict", "--split", "dev", "--oracle"],
        &config,
        &data,
        &out,
    ));
    ok(&cli(&["track", "--split", "dev"], &config, &data, &out));
    let table = ok(&cli(&["evaluate", "--split", "dev"], &config, &data, &out));
    assert!(table.contains("joint GA"), "{table}");

    let metrics: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("dev_metrics.json")).unwrap())
            .unwrap();
    for metric in [
        "joint_ga",
        "average_ga",
        "intent_accuracy",
        "requested_slot_f1",
    ] {
        for bucket in ["all", "seen", "unseen"] {
            assert_eq!(metrics["strict"][metric][bucket], 1.0, "{metric} {bucket}");
        }
    }
    for command in ["synth", "preprocess", "predict", "track", "evaluate"] {
        assert!(
            out.join(format!("{command}.config.toml")).exists(),
            "{command}"
        );
    }
}

#[test]
fn config_command_applies_flags() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.toml");
    std::fs::write(&config, SMALL_CORPUS).unwrap();
    let text = ok(&cli(
        &["--seed", "11", "--no-balance", "--fuzzy-match", "config"],
        &config,
        dir.path(),
        dir.path(),
    ));
    let resolved: toml::Value = toml::from_str(&text).unwrap();
    assert_eq!(resolved["seed"].as_integer(), Some(11));
    assert_eq!(resolved["train"]["seed"].as_integer(), Some(11));
    assert_eq!(resolved["examples"]["balance"].as_bool(), Some(false));
    assert_eq!(resolved["match_mode"].as_str(), Some("fuzzy"));
    assert_eq!(resolved["synth"]["seen_services"].as_integer(), Some(2));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.toml");
    std::fs::write(&config, SMALL_CORPUS).unwrap();
    let missing = dir.path().join("nowhere");
    let out = dir.path().join("run");

    // Missing inputs are usage errors.
    let o = cli(&["preprocess"], &config, &missing, &out);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("does not exist"));
    let o = cli(&["track"], &config, &missing, &out);
    assert_eq!(o.status.code(), Some(2));

    // Bad flags are usage errors too.
    let o = cli(&["--no-such-flag", "config"], &config, &missing, &out);
    assert_eq!(o.status.code(), Some(2));

    // Invalid configuration values and malformed data are validation errors.
    let o = cli(&["--workers", "0", "config"], &config, &missing, &out);
    assert_eq!(o.status.code(), Some(3));

    let bad = dir.path().join("bad");
    std::fs::create_dir_all(bad.join("train")).unwrap();
    std::fs::write(bad.join("train/schema.json"), "[{\"service_name\": ").unwrap();
    let o = cli(&["preprocess"], &config, &bad, &out);
    assert_eq!(
        o.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
}
