use std::fs;
use std::path::Path;

use eventcube::cli::run;
use eventcube::manifest::Manifest;

fn eventcube(out: &Path, args: &[&str]) -> i32 {
    let mut argv = vec!["eventcube".to_string(), "--out".into(), out.display().to_string(), "--seed".into(), "7".into()];
    argv.extend(args.iter().map(|s| s.to_string()));
    run(argv)
}

fn pipeline(out: &Path) {
    let catalog = out.join("catalog.jsonl");
    let catalog = catalog.to_str().unwrap();
    let steps: &[&[&str]] = &[
        &["gen", "--per-class", "10"],
        &["tensorize", "--catalog", catalog, "--dims", "6,4,4"],
        &["train", "--bottleneck", "4", "--epochs", "3", "--batch-size", "8"],
        &["encode", "--catalog", catalog],
        &["project", "--perplexity", "5", "--iterations", "300"],
        &["cluster", "--min-pts", "3"],
        &["knn", "--all", "--k", "3"],
        &["score", "--k", "3"],
        &["fit-head", "--target", "variability", "--n-estimators", "10"],
        &["fit-head", "--target", "hardness", "--n-estimators", "10"],
        &["report", "--color-by", "class_tag"],
    ];
    for step in steps {
        assert_eq!(eventcube(out, step), 0, "step {step:?} failed");
    }
}

#[test]
fn full_pipeline_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    pipeline(out);
    for file in [
        "catalog.jsonl",
        "checkpoint.saec",
        "history.csv",
        "latents.csv",
        "embedding.csv",
        "clusters.csv",
        "neighbors.csv",
        "scores.csv",
        "head_variability.json",
        "metrics_hardness.json",
        "report.svg",
    ] {
        assert!(out.join(file).is_file(), "missing {file}");
    }
    assert_eq!(fs::read_dir(out.join("tensors")).unwrap().count(), 40);
    let svg = fs::read_to_string(out.join("report.svg")).unwrap();
    roxmltree::Document::parse(&svg).unwrap();

    let first = Manifest::load_or_default(out).unwrap();
    assert_eq!(first.commands.len(), 10);
    pipeline(out);
    let second = Manifest::load_or_default(out).unwrap();
    for (name, rec) in &first.commands {
        assert_eq!(rec.outputs, second.commands[name].outputs, "{name} outputs changed on rerun");
        assert_eq!(rec.config_sha256, second.commands[name].config_sha256);
    }
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    assert_eq!(run(["eventcube", "--help"]), 0);
    assert_eq!(run(["eventcube", "frobnicate"]), 1);
    assert_eq!(eventcube(out, &["cluster", "--eps=-1"]), 1);
    assert_eq!(eventcube(out, &["knn"]), 1);

    let empty = out.join("empty");
    fs::create_dir(&empty).unwrap();
    assert_eq!(eventcube(out, &["train", "--tensors", empty.to_str().unwrap()]), 2);
    assert_eq!(eventcube(out, &["tensorize", "--catalog", out.join("missing.jsonl").to_str().unwrap()]), 2);

    fs::write(out.join("bad.json"), r#"{"train": {"lambda": 0.1, "bogus": 1}}"#).unwrap();
    assert_eq!(run(["eventcube", "--config", out.join("bad.json").to_str().unwrap(), "gen"]), 1);
}

#[test]
fn unknown_color_column_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    fs::write(out.join("embedding.csv"), "series_id,x,y\na,0.0,0.0\nb,1.0,1.0\n").unwrap();
    assert_eq!(eventcube(out, &["report", "--color-by", "nonsense"]), 1);
    assert_eq!(eventcube(out, &["report", "--color-by", "none"]), 0);
}
