use std::path::Path;
use std::process::{Command, Output};

fn fkge(args: &[&str], envs: &[(&str, &Path)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_fkge"));
    cmd.args(args)
        .env_remove("FKGE_OUT_DIR")
        .env_remove("FKGE_DATA_DIR")
        .env_remove("FKGE_THREADS");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("spawn fkge")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn train_small(dir: &Path) -> Output {
    train_small_with(dir, &[])
}

fn train_small_with(dir: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "--out",
        dir.to_str().unwrap(),
        "train",
        "--dataset",
        "federal-states",
        "--model",
        "rgcn-transe",
        "--dim",
        "8",
        "--epochs",
        "3",
        "--eval-every",
        "1",
        "--seed",
        "5",
    ];
    args.extend_from_slice(extra);
    fkge(&args, &[])
}

#[test]
fn gen_dataset_writes_split_files() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("fs");
    let o = fkge(
        &["gen-dataset", "federal-states", dir.to_str().unwrap()],
        &[],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in [
        "train.tsv",
        "valid.tsv",
        "test.tsv",
        "entities.dict",
        "relations.dict",
    ] {
        assert!(dir.join(f).exists(), "{f}");
    }
    assert!(stdout(&o).contains("27 entities, 2 relations, 95/10/10"));
}

#[test]
fn seeded_generator_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for d in [&a, &b] {
        let o = fkge(
            &[
                "gen-dataset",
                "synthetic-broodwar-like",
                d.to_str().unwrap(),
                "--seed",
                "3",
            ],
            &[],
        );
        assert_eq!(code(&o), 0);
    }
    let read = |d: &Path| std::fs::read_to_string(d.join("train.tsv")).unwrap();
    assert_eq!(read(&a), read(&b));
}

#[test]
fn train_then_eval_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("run");
    let o = train_small(&run);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in [
        "config.txt",
        "train_log.csv",
        "model.ckpt",
        "ranks_valid.tsv",
        "ranks_test.tsv",
    ] {
        assert!(run.join(f).exists(), "{f}");
    }
    let log = std::fs::read_to_string(run.join("train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 1 + 4, "{log}");

    let ckpt = run.join("model.ckpt");
    let eval = |out: &Path| {
        let o = fkge(
            &[
                "--out",
                out.to_str().unwrap(),
                "eval",
                "--dataset",
                "federal-states",
                "--checkpoint",
                ckpt.to_str().unwrap(),
                "--splits",
                "valid,test",
            ],
            &[],
        );
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        std::fs::read_to_string(out.join("report.txt")).unwrap()
    };
    let a = eval(&tmp.path().join("e1"));
    let b = eval(&tmp.path().join("e2"));
    assert_eq!(a, b);
    assert!(a.contains("valid") && a.contains("test"));
}

#[test]
fn output_dir_comes_from_the_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("env-out");
    let o = fkge(
        &[
            "bench",
            "--dataset",
            "federal-states",
            "--dims",
            "4,8",
            "--reps",
            "2",
            "--batch-size",
            "16",
        ],
        &[("FKGE_OUT_DIR", &out)],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("bench.csv").exists());
    let speedup = std::fs::read_to_string(out.join("speedup.csv")).unwrap();
    assert_eq!(speedup.lines().count(), 3);
}

#[test]
fn data_dir_comes_from_the_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let o = fkge(
        &[
            "gen-dataset",
            "federal-states",
            data.join("umls").to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(code(&o), 0);
    let out = tmp.path().join("out");
    let o = fkge(
        &[
            "--out",
            out.to_str().unwrap(),
            "train",
            "--dataset",
            "umls",
            "--model",
            "transe",
            "--dim",
            "4",
            "--epochs",
            "1",
        ],
        &[("FKGE_DATA_DIR", &data)],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("27 entities"));
}

#[test]
fn inductive_writes_projection_and_suggestions() {
    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("run");
    assert_eq!(code(&train_small_with(&run, &["--self-loop", "false"])), 0);
    let out = tmp.path().join("ind");
    let inductive_with = |ckpt: &Path, neighbors: &str| {
        fkge(
            &[
                "--out",
                out.to_str().unwrap(),
                "inductive",
                "--dataset",
                "federal-states",
                "--checkpoint",
                ckpt.to_str().unwrap(),
                "--neighbors",
                neighbors,
                "--top",
                "3",
            ],
            &[],
        )
    };
    let inductive = |ckpt: &Path| inductive_with(ckpt, "hesse:neighborOf,thuringia:neighborOf");
    let o = inductive(&run.join("model.ckpt"));
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let pca = std::fs::read_to_string(out.join("pca.csv")).unwrap();
    assert_eq!(pca.lines().count(), 1 + 27 + 1);
    assert!(pca.contains("<new>"));
    let sugg = std::fs::read_to_string(out.join("suggestions.tsv")).unwrap();
    assert_eq!(sugg.lines().count(), 1 + 3);

    let o = inductive_with(&run.join("model.ckpt"), "hesse:neighborOf^-1");
    assert_eq!(code(&o), 2, "inverse edge without inverse relations");

    let inv = tmp.path().join("inv");
    assert_eq!(
        code(&train_small_with(
            &inv,
            &["--self-loop", "false", "--inverse"]
        )),
        0
    );
    let o = inductive_with(
        &inv.join("model.ckpt"),
        "hesse:neighborOf^-1,hesse:neighborOf",
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));

    // A self-loop would read the new node's untrained embedding.
    let looped = tmp.path().join("looped");
    assert_eq!(code(&train_small(&looped)), 0);
    let o = inductive(&looped.join("model.ckpt"));
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("self-loop"));
}

#[test]
fn usage_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let o = out.to_str().unwrap();
    let cases: Vec<Vec<&str>> = vec![
        vec!["--out", o, "train", "--dataset", "fb15k-237-missing-dir"],
        vec![
            "--out",
            o,
            "train",
            "--dataset",
            "federal-states",
            "--set",
            "no_such_key=1",
        ],
        vec![
            "--out",
            o,
            "train",
            "--dataset",
            "federal-states",
            "--set",
            "dim=abc",
        ],
        vec![
            "--out",
            o,
            "train",
            "--dataset",
            "federal-states",
            "--model",
            "srgcn",
            "--frozen",
            "false",
        ],
        vec!["--out", o, "train"],
        vec!["gen-dataset", "nope", o],
        vec!["no-such-command"],
    ];
    for args in cases {
        let res = fkge(&args, &[]);
        assert_eq!(
            code(&res),
            2,
            "{args:?}: {}",
            String::from_utf8_lossy(&res.stderr)
        );
    }
}

#[test]
fn registered_dataset_without_files_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = fkge(
        &[
            "--out",
            tmp.path().join("o").to_str().unwrap(),
            "--data-dir",
            tmp.path().to_str().unwrap(),
            "train",
            "--dataset",
            "fb15k-237",
        ],
        &[],
    );
    if Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../data/fb15k-237/train.txt")
        .exists()
    {
        return;
    }
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("fb15k-237"));
}

#[test]
fn eval_rejects_unknown_split_and_missing_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("run");
    assert_eq!(code(&train_small(&run)), 0);
    let ckpt = run.join("model.ckpt");
    let o = fkge(
        &[
            "eval",
            "--dataset",
            "federal-states",
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--splits",
            "dev",
        ],
        &[],
    );
    assert_eq!(code(&o), 2);
    let o = fkge(
        &[
            "eval",
            "--dataset",
            "federal-states",
            "--checkpoint",
            tmp.path().join("none.ckpt").to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(code(&o), 2);
}

#[test]
fn corrupt_checkpoint_is_a_runtime_error() {
    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("run");
    assert_eq!(code(&train_small(&run)), 0);
    let ckpt = run.join("model.ckpt");
    let bytes = std::fs::read(&ckpt).unwrap();
    std::fs::write(&ckpt, &bytes[..bytes.len() / 2]).unwrap();
    let o = fkge(
        &[
            "--out",
            tmp.path().join("e").to_str().unwrap(),
            "eval",
            "--dataset",
            "federal-states",
            "--checkpoint",
            ckpt.to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(code(&o), 1, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn checkpoint_for_another_dataset_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("run");
    assert_eq!(code(&train_small(&run)), 0);
    let o = fkge(
        &[
            "--out",
            tmp.path().join("e").to_str().unwrap(),
            "eval",
            "--dataset",
            "synthetic-broodwar-like",
            "--checkpoint",
            run.join("model.ckpt").to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
}
