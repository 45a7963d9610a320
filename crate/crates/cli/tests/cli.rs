use std::path::Path;
use std::process::{Command, Output};

fn dcrnn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dcrnn"))
        .args(args)
        .output()
        .expect("run dcrnn")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn rf_prints_theoretical_and_empirical() {
    for (schedule, rf) in [("1", 3), ("1-2-4", 15), ("2-4-8", 29)] {
        let o = dcrnn(&["rf", "--dilation", schedule]);
        assert!(o.status.success());
        let text = stdout(&o);
        assert!(text.contains(&format!("theoretical {rf}\n")), "{text}");
        assert!(text.contains(&format!("empirical {rf}\n")), "{text}");
    }
}

#[test]
fn bad_arguments_exit_2() {
    assert_eq!(dcrnn(&["rf", "--dilation", "0"]).status.code(), Some(2));
    assert_eq!(dcrnn(&["rf"]).status.code(), Some(2));
    assert_eq!(dcrnn(&["train", "--data", ".", "--out", "x"]).status.code(), Some(2));
    assert_eq!(dcrnn(&["eval"]).status.code(), Some(2));
}

#[test]
fn missing_data_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let o = dcrnn(&["features", "--in", p(dir.path()), "--out", p(&dir.path().join("f"))]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn identical_annotations_score_perfectly() {
    let dir = tempfile::tempdir().unwrap();
    let ann = dir.path().join("a.ann");
    std::fs::write(&ann, "0.5\t1.5\tdog\n1.0\t3.25\tcar\n").unwrap();
    let o = dcrnn(&["eval", "--reference", p(&ann), "--estimate", p(&ann)]);
    assert!(o.status.success());
    let text = stdout(&o);
    let row = text.lines().nth(1).unwrap();
    assert!(row.ends_with(",100.0,0.0"), "{text}");
}

#[test]
fn empty_estimate_deletes_everything() {
    let dir = tempfile::tempdir().unwrap();
    let r = dir.path().join("r.ann");
    let e = dir.path().join("e.ann");
    std::fs::write(&r, "0.0\t1.0\tdog\n").unwrap();
    std::fs::write(&e, "").unwrap();
    let o = dcrnn(&["eval", "--reference", p(&r), "--estimate", p(&e)]);
    assert!(o.status.success());
    let row = stdout(&o).lines().nth(1).unwrap().to_string();
    assert!(row.ends_with(",0.0,100.0"), "{row}");
}

#[test]
fn synth_features_train_eval_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    let feats = dir.path().join("feats");
    let model = dir.path().join("model");
    let o = dcrnn(&["synth", "--scenes", "6", "--duration", "3", "--seed", "3", "--out", p(&corpus)]);
    assert!(o.status.success());
    assert!(corpus.join("classes.txt").exists());
    assert!(corpus.join("scene_000.wav").exists());

    let o = dcrnn(&["features", "--in", p(&corpus), "--out", p(&feats), "--sample-rate", "16000"]);
    assert!(o.status.success());
    assert!(feats.join("scene_005.feat").exists());
    assert_eq!(
        dcrnn(&["features", "--in", p(&corpus), "--out", p(&feats), "--sample-rate", "44100"]).status.code(),
        Some(3)
    );

    let o = dcrnn(&[
        "train", "--dilation", "1-2", "--filters", "4", "--hidden", "8", "--epochs", "2", "--data", p(&feats),
        "--out", p(&model),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["model.cfg", "best.dcrn", "last.dcrn", "curves.csv", "test_report.csv"] {
        assert!(model.join(f).exists(), "{f}");
    }
    let curves = std::fs::read_to_string(model.join("curves.csv")).unwrap();
    assert_eq!(curves.lines().count(), 3);

    let est = dir.path().join("est");
    let o = dcrnn(&[
        "eval", "--checkpoint", p(&model.join("best.dcrn")), "--config", p(&model.join("model.cfg")), "--data",
        p(&feats), "--write-estimates", p(&est),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).starts_with("tp,fp,fn,"));
    assert!(est.join("scene_000.ann").exists());
}
