//! End-to-end tests of the `neptune` binary: exit codes, produced files,
//! determinism, and the output formats.

mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn neptune() -> Command {
    Command::new(env!("CARGO_BIN_EXE_neptune"))
}

fn run(args: &[&str]) -> Output {
    neptune().args(args).output().expect("failed to spawn neptune")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

/// Synthetic dataset on disk: valid and test are memorized subsets of
/// train, so an overfit model evaluates at MRR 1.0.
fn write_dataset(dir: &Path) {
    let triples = common::synthetic_triples(64, 8, 512, 7);
    common::write_split(&dir.join("train.txt"), &triples);
    common::write_split(&dir.join("valid.txt"), &triples[..64]);
    common::write_split(&dir.join("test.txt"), &triples[64..128]);
}

fn dir_snapshot(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut entries: Vec<(PathBuf, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let path = e.unwrap().path();
            let bytes = fs::read(&path).unwrap();
            (path, bytes)
        })
        .collect();
    entries.sort();
    entries
}

#[test]
fn train_eval_score_round_trip() {
    let _serial = common::timing_lock();
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    fs::create_dir(&data).unwrap();
    write_dataset(&data);
    let before = dir_snapshot(&data);

    let out = tmp.path().join("run");
    let result = run(&[
        "train",
        "--data",
        data.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--d",
        "32",
        "--k",
        "32",
        "--lr",
        "0.005",
        "--epochs",
        "200",
        "--dropout-input",
        "0",
        "--dropout-hidden",
        "0",
        "--dropout-output",
        "0",
        "--seed",
        "7",
    ]);
    assert!(
        result.status.success(),
        "train failed: {}",
        stderr(&result)
    );
    let checkpoint = out.join("checkpoint.nptn");
    assert!(checkpoint.is_file());
    assert!(out.join("manifest.txt").is_file());
    let log = fs::read_to_string(out.join("train.log")).unwrap();
    assert_eq!(log.lines().count(), 200);
    for line in log.lines() {
        let fields: Vec<&str> = line.split('\t').collect();
        assert_eq!(fields.len(), 2);
        fields[0].parse::<usize>().unwrap();
        assert!(fields[1].parse::<f64>().unwrap().is_finite());
    }

    // Dataset files were not touched.
    assert_eq!(before, dir_snapshot(&data));

    // The overfit model memorizes the train subsets used as valid/test.
    for split in ["valid", "test"] {
        let result = run(&[
            "eval",
            "--data",
            data.to_str().unwrap(),
            "--checkpoint",
            checkpoint.to_str().unwrap(),
            "--split",
            split,
        ]);
        assert!(result.status.success(), "eval failed: {}", stderr(&result));
        let line = stdout(&result);
        assert!(
            line.starts_with(&format!("split={} mrr=1.000000", split)),
            "unexpected eval line: {}",
            line
        );
        for field in ["hits1=", "hits3=", "hits10=", "n="] {
            assert!(line.contains(field), "missing {}: {}", field, line);
        }
        let mrr: f64 = line
            .split_whitespace()
            .find_map(|f| f.strip_prefix("mrr="))
            .unwrap()
            .parse()
            .unwrap();
        assert!((0.0..=1.0).contains(&mrr));
    }

    // Rank dump: one line per augmented test triple.
    let dump = tmp.path().join("ranks.tsv");
    let result = run(&[
        "eval",
        "--data",
        data.to_str().unwrap(),
        "--checkpoint",
        checkpoint.to_str().unwrap(),
        "--split",
        "test",
        "--dump-ranks",
        dump.to_str().unwrap(),
    ]);
    assert!(result.status.success());
    let dumped = fs::read_to_string(&dump).unwrap();
    assert_eq!(dumped.lines().count(), 128);
    assert!(dumped.lines().all(|l| l.split('\t').count() == 4));

    // Scoring: top-k lines in non-increasing score order.
    let result = run(&[
        "score",
        "--data",
        data.to_str().unwrap(),
        "--checkpoint",
        checkpoint.to_str().unwrap(),
        "--head",
        "e000",
        "--relation",
        "r000",
        "--top-k",
        "64",
        "--mark-filtered",
    ]);
    assert!(result.status.success(), "score failed: {}", stderr(&result));
    let lines: Vec<String> = stdout(&result).lines().map(String::from).collect();
    assert_eq!(lines.len(), 64, "top-k = |E| must list every entity");
    let mut labels = std::collections::HashSet::new();
    let mut prev = f64::INFINITY;
    for line in &lines {
        let fields: Vec<&str> = line.split('\t').collect();
        labels.insert(fields[0].to_string());
        let score: f64 = fields[1].parse().unwrap();
        assert!(score <= prev, "scores not sorted: {} after {}", score, prev);
        prev = score;
    }
    assert_eq!(labels.len(), 64, "entities must be a permutation");
    assert!(
        lines.iter().any(|l| l.ends_with("[known]")),
        "expected at least one known-tail annotation"
    );

    // Unknown labels fail with suggestions and the data exit code.
    let result = run(&[
        "score",
        "--data",
        data.to_str().unwrap(),
        "--checkpoint",
        checkpoint.to_str().unwrap(),
        "--head",
        "e00",
        "--relation",
        "r000",
    ]);
    assert_eq!(result.status.code(), Some(2));
    let err = stderr(&result);
    assert!(err.contains("unknown entity"), "{}", err);
    assert!(err.contains("e000"), "no suggestion in: {}", err);

    // Export both vocabularies.
    let vocab = tmp.path().join("entities.tsv");
    let result = run(&[
        "export-vocab",
        "--data",
        data.to_str().unwrap(),
        "--out",
        vocab.to_str().unwrap(),
    ]);
    assert!(result.status.success());
    let text = fs::read_to_string(&vocab).unwrap();
    assert_eq!(text.lines().count(), 64);
    assert!(text.starts_with("0\te0"));

    let vocab = tmp.path().join("relations.tsv");
    let result = run(&[
        "export-vocab",
        "--data",
        data.to_str().unwrap(),
        "--out",
        vocab.to_str().unwrap(),
        "--kind",
        "relation",
    ]);
    assert!(result.status.success());
    let text = fs::read_to_string(&vocab).unwrap();
    assert_eq!(text.lines().count(), 16);
    assert!(text.contains("_reciprocal"));
}

#[test]
fn identical_configs_produce_identical_checkpoints() {
    let _serial = common::timing_lock();
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    fs::create_dir(&data).unwrap();
    write_dataset(&data);

    let mut checkpoints = Vec::new();
    for name in ["run1", "run2"] {
        let out = tmp.path().join(name);
        let result = run(&[
            "train",
            "--data",
            data.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--d",
            "8",
            "--k",
            "8",
            "--epochs",
            "5",
            "--seed",
            "3",
        ]);
        assert!(result.status.success(), "{}", stderr(&result));
        checkpoints.push(fs::read(out.join("checkpoint.nptn")).unwrap());
    }
    assert_eq!(checkpoints[0], checkpoints[1]);
}

#[test]
fn manifest_relaunches_the_same_run() {
    let _serial = common::timing_lock();
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    fs::create_dir(&data).unwrap();
    write_dataset(&data);

    let out1 = tmp.path().join("run1");
    let result = run(&[
        "train",
        "--data",
        data.to_str().unwrap(),
        "--out",
        out1.to_str().unwrap(),
        "--d",
        "8",
        "--k",
        "8",
        "--epochs",
        "4",
        "--lr",
        "0.002",
        "--seed",
        "21",
    ]);
    assert!(result.status.success(), "{}", stderr(&result));

    // The manifest doubles as a config file reproducing the run.
    let out2 = tmp.path().join("run2");
    let manifest = out1.join("manifest.txt");
    let result = run(&[
        "train",
        "--data",
        data.to_str().unwrap(),
        "--out",
        out2.to_str().unwrap(),
        "--config",
        manifest.to_str().unwrap(),
    ]);
    assert!(result.status.success(), "{}", stderr(&result));
    assert_eq!(
        fs::read(out1.join("checkpoint.nptn")).unwrap(),
        fs::read(out2.join("checkpoint.nptn")).unwrap()
    );

    // Flags still override config-file entries; the manifest records the
    // merged values.
    let out3 = tmp.path().join("run3");
    let result = run(&[
        "train",
        "--data",
        data.to_str().unwrap(),
        "--out",
        out3.to_str().unwrap(),
        "--config",
        manifest.to_str().unwrap(),
        "--epochs",
        "2",
    ]);
    assert!(result.status.success(), "{}", stderr(&result));
    let manifest3 = fs::read_to_string(out3.join("manifest.txt")).unwrap();
    assert!(manifest3.contains("epochs = 2"), "{}", manifest3);
    assert!(manifest3.contains("lr = 0.002"), "{}", manifest3);
    assert!(manifest3.contains("crc32"), "{}", manifest3);
}

#[test]
fn periodic_validation_logs_mrr_and_keeps_best_checkpoint() {
    let _serial = common::timing_lock();
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    fs::create_dir(&data).unwrap();
    write_dataset(&data);

    let out = tmp.path().join("run");
    let result = run(&[
        "train",
        "--data",
        data.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--d",
        "8",
        "--k",
        "8",
        "--epochs",
        "6",
        "--valid-every",
        "2",
        "--keep-best",
        "true",
        "--seed",
        "4",
    ]);
    assert!(result.status.success(), "{}", stderr(&result));
    assert!(out.join("checkpoint-best.nptn").is_file());

    // Validation epochs carry a third column with the MRR.
    let log = fs::read_to_string(out.join("train.log")).unwrap();
    for (i, line) in log.lines().enumerate() {
        let fields: Vec<&str> = line.split('\t').collect();
        let expected = if (i + 1) % 2 == 0 { 3 } else { 2 };
        assert_eq!(fields.len(), expected, "epoch {}: {}", i + 1, line);
        if fields.len() == 3 {
            let mrr: f64 = fields[2].parse().unwrap();
            assert!((0.0..=1.0).contains(&mrr));
        }
    }
}

#[test]
fn missing_split_file_names_it_and_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    fs::create_dir(&data).unwrap();
    write_dataset(&data);
    fs::remove_file(data.join("test.txt")).unwrap();

    let result = run(&[
        "train",
        "--data",
        data.to_str().unwrap(),
        "--out",
        tmp.path().join("out").to_str().unwrap(),
        "--epochs",
        "1",
    ]);
    assert_eq!(result.status.code(), Some(2));
    assert!(stderr(&result).contains("test.txt"), "{}", stderr(&result));
}

#[test]
fn bad_config_exits_1() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    fs::create_dir(&data).unwrap();
    write_dataset(&data);

    let result = run(&[
        "train",
        "--data",
        data.to_str().unwrap(),
        "--out",
        tmp.path().join("out").to_str().unwrap(),
        "--lr=-0.5",
    ]);
    assert_eq!(result.status.code(), Some(1));
    assert!(stderr(&result).contains("lr"), "{}", stderr(&result));

    // Unknown flags are a usage error too.
    let result = run(&["train", "--no-such-flag"]);
    assert_eq!(result.status.code(), Some(1));
}

#[test]
fn diverging_run_exits_3() {
    let _serial = common::timing_lock();
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    fs::create_dir(&data).unwrap();
    write_dataset(&data);

    let result = run(&[
        "train",
        "--data",
        data.to_str().unwrap(),
        "--out",
        tmp.path().join("out").to_str().unwrap(),
        "--d",
        "8",
        "--k",
        "8",
        "--epochs",
        "3",
        "--lr",
        "1e155",
        "--activation",
        "identity",
        "--batch-norm",
        "false",
    ]);
    assert_eq!(result.status.code(), Some(3), "{}", stderr(&result));
    assert!(
        stderr(&result).contains("non-finite"),
        "{}",
        stderr(&result)
    );
}

#[test]
fn checkpoint_dataset_mismatch_exits_2() {
    let _serial = common::timing_lock();
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    fs::create_dir(&data).unwrap();
    write_dataset(&data);

    let out = tmp.path().join("run");
    let result = run(&[
        "train",
        "--data",
        data.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--d",
        "8",
        "--k",
        "8",
        "--epochs",
        "1",
    ]);
    assert!(result.status.success(), "{}", stderr(&result));

    // A different dataset (other vocabulary size) must be rejected.
    let other = tmp.path().join("other");
    fs::create_dir(&other).unwrap();
    let triples = common::synthetic_triples(10, 2, 30, 1);
    common::write_split(&other.join("train.txt"), &triples);
    common::write_split(&other.join("valid.txt"), &triples[..5]);
    common::write_split(&other.join("test.txt"), &triples[5..10]);

    let result = run(&[
        "eval",
        "--data",
        other.to_str().unwrap(),
        "--checkpoint",
        out.join("checkpoint.nptn").to_str().unwrap(),
    ]);
    assert_eq!(result.status.code(), Some(2));
    assert!(
        stderr(&result).contains("does not match"),
        "{}",
        stderr(&result)
    );
}
