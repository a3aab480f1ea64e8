//! End-to-end tests driving the `scene2obj` binary.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn scene2obj(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_scene2obj"))
        .args(args)
        .env("SCENE2OBJ_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn data_lines(path: &Path) -> Vec<String> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .map(str::to_string)
        .collect()
}

#[test]
fn extract_reference_sentences() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus.tsv");
    fs::write(
        &corpus,
        "A\tdet\ncar\tnoun\ndrove\tverb\ndown\tprep\nthe\tdet\nstreet\tnoun\n\n\
         Many\tadj\npersons\tnoun\nwere\tverb\non\tprep\nthe\tdet\nstreets\tnoun\n",
    )
    .unwrap();
    let lemma_map = dir.path().join("lemma.tsv");
    fs::write(&lemma_map, "persons\tperson\nstreets\tstreet\n").unwrap();
    let out = dir.path().join("triples.tsv");
    let result = scene2obj(&[
        "extract",
        "--corpus",
        corpus.to_str().unwrap(),
        "--lemma-map",
        lemma_map.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(result.status.success());
    assert_eq!(
        data_lines(&out),
        vec![
            "car\tdrove down\tstreet".to_string(),
            "person\twere on\tstreet".to_string(),
        ]
    );
}

#[test]
fn extract_with_ptb_tags_and_relation_dict() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus.tsv");
    fs::write(
        &corpus,
        "A\tDT\ncar\tNN\ndrove\tVBD\ndown\tIN\nthe\tDT\nstreet\tNN\n\n\
         A\tDT\ndog\tNN\nslept\tVBD\nnear\tIN\nthe\tDT\nhouse\tNN\n",
    )
    .unwrap();
    let dict = dir.path().join("dict.tsv");
    fs::write(&dict, "drove down\n").unwrap();
    let out = dir.path().join("triples.tsv");
    let result = scene2obj(&[
        "extract",
        "--corpus",
        corpus.to_str().unwrap(),
        "--relation-dict",
        dict.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(result.status.success());
    // the second sentence's relation is filtered by the dictionary
    assert_eq!(data_lines(&out), vec!["car\tdrove down\tstreet".to_string()]);
}

#[test]
fn missing_required_flag_exits_2() {
    let result = scene2obj(&["extract", "--corpus", "x.tsv"]);
    assert_eq!(result.status.code(), Some(2));
}

#[test]
fn unknown_subcommand_exits_2() {
    let result = scene2obj(&["frobnicate"]);
    assert_eq!(result.status.code(), Some(2));
}

#[test]
fn bad_input_exits_1_with_line_number() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus.tsv");
    fs::write(&corpus, "car\tnoun\nstreet\n").unwrap();
    let out = dir.path().join("t.tsv");
    let result = scene2obj(&[
        "extract",
        "--corpus",
        corpus.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(result.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&result.stderr);
    assert!(stderr.contains(":2:"), "stderr was: {stderr}");
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut files = BTreeMap::new();
    for entry in fs::read_dir(dir).unwrap() {
        let entry = entry.unwrap();
        files.insert(
            entry.file_name().to_string_lossy().into_owned(),
            fs::read(entry.path()).unwrap(),
        );
    }
    files
}

#[test]
fn e2e_synthetic_is_deterministic_across_runs_and_threads() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("world");
    let args = |threads: &str| {
        vec![
            "e2e-synthetic".to_string(),
            "--seed".into(),
            "7".into(),
            "--scenes".into(),
            "6".into(),
            "--objects".into(),
            "18".into(),
            "--images".into(),
            "60".into(),
            "--out".into(),
            out.to_str().unwrap().to_string(),
            "--threads".into(),
            threads.to_string(),
        ]
    };
    let run = |threads: &str| {
        let argv = args(threads);
        let argv: Vec<&str> = argv.iter().map(String::as_str).collect();
        let result = scene2obj(&argv);
        assert!(
            result.status.success(),
            "stderr: {}",
            String::from_utf8_lossy(&result.stderr)
        );
        (result.stdout, snapshot(&out))
    };
    let (stdout_a, files_a) = run("1");
    let (stdout_b, files_b) = run("1");
    assert_eq!(stdout_a, stdout_b);
    assert_eq!(files_a, files_b);
    let (stdout_c, files_c) = run("4");
    assert_eq!(stdout_a, stdout_c);
    assert_eq!(files_a, files_c);
}

#[test]
fn pipeline_files_compose() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    let world = out.join("world");
    let result = scene2obj(&[
        "e2e-synthetic",
        "--seed",
        "3",
        "--scenes",
        "5",
        "--objects",
        "15",
        "--images",
        "50",
        "--out",
        world.to_str().unwrap(),
    ]);
    assert!(result.status.success());

    // evaluate the emitted predictions explicitly
    let report = out.join("report.tsv");
    let plot = out.join("curve.svg");
    let result = scene2obj(&[
        "evaluate",
        "--predictions",
        world.join("predictions_text_perfect.tsv").to_str().unwrap(),
        "--annotations",
        world.join("annotations.tsv").to_str().unwrap(),
        "--lemma-map",
        world.join("lemma_map.tsv").to_str().unwrap(),
        "--classes",
        "top5,top15",
        "--k-list",
        "1,2",
        "--out",
        report.to_str().unwrap(),
        "--plot",
        plot.to_str().unwrap(),
    ]);
    assert!(
        result.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&result.stderr)
    );
    let stdout = String::from_utf8_lossy(&result.stdout);
    assert!(stdout.contains("mean AP over most frequent objects"));
    assert!(stdout.contains("top5"));
    let tsv = fs::read_to_string(&report).unwrap();
    assert!(tsv.lines().any(|l| l.starts_with("map\ttop5\t")));
    assert!(tsv.lines().any(|l| l.starts_with("topk\t1\t")));
    assert!(fs::read_to_string(&plot).unwrap().starts_with("<svg"));

    // scene-eval over the synthetic classifier scores
    let result = scene2obj(&[
        "scene-eval",
        "--scene-scores",
        world.join("scene_scores.tsv").to_str().unwrap(),
        "--annotations",
        world.join("annotations.tsv").to_str().unwrap(),
        "--scenes",
        world.join("scenes.tsv").to_str().unwrap(),
        "--k",
        "1,3",
    ]);
    assert!(result.status.success());
    let stdout = String::from_utf8_lossy(&result.stdout);
    assert!(stdout.contains("k-best scene recognition"));

    // rescoring artifacts exist and reload
    let result = scene2obj(&[
        "rescore",
        "--detections",
        world.join("detections.tsv").to_str().unwrap(),
        "--model",
        world.join("rescore_models.tsv").to_str().unwrap(),
        "--predictions",
        world.join("predictions_text_classifier.tsv").to_str().unwrap(),
        "--out",
        out.join("rescored_again.tsv").to_str().unwrap(),
    ]);
    assert!(
        result.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&result.stderr)
    );
    assert_eq!(
        data_lines(&out.join("rescored_again.tsv")),
        data_lines(&world.join("detections_rescored.tsv"))
    );
}
