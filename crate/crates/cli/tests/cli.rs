use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use transkb::dataset::Dataset;
use transkb::synthetic::{
    nameable_kb, random_word_vectors, ring_kb, write_dataset, write_word_vectors, NameableOptions,
};
use transkb::trainer::Checkpoint;

fn transkb(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_transkb")).args(args).env_remove("TRANSKB_DATA_DIR").output().unwrap()
}

fn stdout(o: &Output) -> String {
    assert!(o.status.success(), "command failed: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    assert!(!o.status.success(), "command unexpectedly succeeded");
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write(dir: &Path, dataset: &Dataset) -> PathBuf {
    let data = dir.join("data");
    std::fs::create_dir_all(&data).unwrap();
    write_dataset(dataset, &data).unwrap();
    data
}

#[test]
fn ingest_counts_a_hand_checked_fixture() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("train.txt"), "a\tr\tb\nb\tr\tc\na\tq\tc\n").unwrap();
    std::fs::write(dir.path().join("test.txt"), "d\tr\ta\n").unwrap();
    std::fs::write(dir.path().join("descriptions.txt"), "a\tthe first one\nd\tfour\n").unwrap();
    let out = stdout(&transkb(&["ingest", "--data", s(dir.path()), "--tsv"]));
    for line in [
        "entities\t4",
        "relations\t2",
        "train\t3",
        "valid\t0",
        "test\t1",
        "max_description_length\t3",
        "description_vocabulary\t4",
        "test_one_unseen\t1",
    ] {
        assert!(out.lines().any(|l| l == line), "missing `{line}` in\n{out}");
    }
}

#[test]
fn missing_file_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nowhere.txt");
    let err = stderr(&transkb(&["ingest", "--train", s(&missing)]));
    assert!(err.contains("nowhere.txt"), "{err}");
}

#[test]
fn data_dir_variable_resolves_relative_paths() {
    let dir = tempfile::tempdir().unwrap();
    let data = write(dir.path(), &ring_kb(10));
    let out = Command::new(env!("CARGO_BIN_EXE_transkb"))
        .args(["ingest", "--data", "data", "--tsv"])
        .env("TRANSKB_DATA_DIR", dir.path())
        .current_dir(data.parent().unwrap().parent().unwrap())
        .output()
        .unwrap();
    assert!(stdout(&out).contains("entities\t10"));
}

#[test]
fn config_file_with_unknown_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "# typo below\nmode = baseline\nepoch = 3\n").unwrap();
    let err = stderr(&transkb(&["train", "--config", s(&cfg), "--out", s(dir.path())]));
    assert!(err.contains("unknown configuration key `epoch`"), "{err}");
}

#[test]
fn baseline_training_is_reproducible_and_learns_the_ring() {
    let dir = tempfile::tempdir().unwrap();
    let data = write(dir.path(), &ring_kb(100));
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, format!("data_dir = {}\ndim = 16\neval_every = 50\n", data.display())).unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = transkb(&[
            "train",
            "--config",
            s(&cfg),
            "--out",
            s(&out),
            "--mode",
            "baseline",
            "--seed",
            "7",
            "--epochs",
            "200",
        ]);
        stdout(&o);
        out
    };
    let a = run("a");
    let b = run("b");
    let log_a = std::fs::read_to_string(a.join("metrics.log")).unwrap();
    assert_eq!(log_a, std::fs::read_to_string(b.join("metrics.log")).unwrap());
    assert_eq!(log_a.lines().count(), 200);
    assert_eq!(std::fs::read(a.join("final.tkb")).unwrap(), std::fs::read(b.join("final.tkb")).unwrap());
    for epoch in [50, 100, 150, 200] {
        assert!(a.join(format!("epoch-{epoch:05}.tkb")).exists());
    }
    assert!(!a.join("epoch-00049.tkb").exists());

    let last: Vec<&str> = log_a.lines().last().unwrap().split(' ').collect();
    assert_eq!(last[0], "200");
    let mean_rank: f64 = last[2].parse().unwrap();
    assert!(mean_rank < 5.0, "final validation mean rank {mean_rank}");
    assert_eq!(log_a.lines().next().unwrap().split(' ').nth(2), Some("NA"));

    // Evaluation on the same split agrees with the log and is repeatable.
    let eval = |extra: &[&str]| {
        let ck = a.join("final.tkb");
        let mut args = vec!["eval", s(&ck), "--data", s(&data), "--split", "valid", "--tsv"];
        args.extend_from_slice(extra);
        stdout(&transkb(&args))
    };
    let full = eval(&[]);
    assert!(full.lines().any(|l| l == format!("mean_rank\t{}", last[2])), "{full}");
    let sampled = eval(&["--sample-size", "30"]);
    assert_eq!(sampled, eval(&["--sample-size", "30"]));
    assert!(sampled.lines().any(|l| l == "sample_size\t30"));
    assert!(stdout(&transkb(&["eval", s(&a.join("final.tkb")), "--data", s(&data), "--split", "valid"]))
        .contains("sample size used: 100"));
}

#[test]
fn resume_continues_where_training_stopped() {
    let dir = tempfile::tempdir().unwrap();
    let data = write(dir.path(), &ring_kb(30));
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "eval_every = 3\n").unwrap();
    let common = ["--config", s(&cfg), "--data", s(&data), "--dim", "8", "--batch", "10", "--seed", "3"];
    let full = dir.path().join("full");
    let mut args = vec!["train", "--out", s(&full), "--epochs", "6"];
    args.extend_from_slice(&common);
    stdout(&transkb(&args));

    let part = dir.path().join("part");
    let mut args = vec!["train", "--out", s(&part), "--epochs", "3"];
    args.extend_from_slice(&common);
    stdout(&transkb(&args));
    let ck = part.join("final.tkb");
    stdout(&transkb(&["train", "--data", s(&data), "--out", s(&part), "--resume", s(&ck), "--epochs", "6"]));
    assert_eq!(std::fs::read(full.join("final.tkb")).unwrap(), std::fs::read(part.join("final.tkb")).unwrap());
    assert_eq!(
        std::fs::read_to_string(full.join("metrics.log")).unwrap(),
        std::fs::read_to_string(part.join("metrics.log")).unwrap()
    );
}

#[test]
fn joint_cnn_without_word_vectors_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = write(dir.path(), &ring_kb(10));
    let err = stderr(&transkb(&["train", "--data", s(&data), "--out", s(dir.path()), "--mode", "joint_cnn"]));
    assert!(err.contains("word vectors"), "{err}");
    assert!(!dir.path().join("final.tkb").exists());
}

fn train_joint_mlp(dir: &Path, data: &Path) -> PathBuf {
    let out = dir.join("mlp");
    stdout(&transkb(&[
        "train",
        "--data",
        s(data),
        "--out",
        s(&out),
        "--mode",
        "joint_mlp",
        "--epochs",
        "10",
        "--seed",
        "1",
    ]));
    out.join("final.tkb")
}

#[test]
fn joint_checkpoint_embeds_queries_and_evaluates_unseen_entities() {
    let dir = tempfile::tempdir().unwrap();
    let kb = nameable_kb(&NameableOptions::default()).unwrap();
    let data = write(dir.path(), &kb);
    let ck_path = train_joint_mlp(dir.path(), &data);

    // Embeddings are unit norm, printed with 17 significant digits, repeatable.
    let text = "obj999 is a red star thing";
    let out = stdout(&transkb(&["embed", s(&ck_path), "--text", text]));
    assert_eq!(out, stdout(&transkb(&["embed", s(&ck_path), "--text", text])));
    let v: Vec<f64> = out.split_whitespace().map(|x| x.parse().unwrap()).collect();
    assert_eq!(v.len(), 50);
    assert!(out.split_whitespace().all(|x| x.split('e').next().unwrap().trim_start_matches('-').len() == 18));
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    assert!((norm - 1.0).abs() < 1e-12, "norm {norm}");

    // An unseen object's description lands near its colour hub.
    let ck = Checkpoint::load(&ck_path).unwrap();
    let unseen = kb.test[0];
    let name = kb.vocab.entity_name(unseen.head);
    assert!(!ck.training_entities.contains(&unseen.head));
    let want = kb.vocab.entity_name(unseen.tail);
    let relation = kb.vocab.relation_name(unseen.relation);
    let out = stdout(&transkb(&[
        "query",
        s(&ck_path),
        "--entity",
        name,
        "--relation",
        relation,
        "--data",
        s(&data),
        "--tsv",
    ]));
    assert_eq!(out.lines().count(), 10);
    assert!(out.lines().any(|l| l.split('\t').nth(1) == Some(want)), "{want} not in\n{out}");

    // Query with k = |E| puts the tail at the rank eval reports for it.
    let right_rank = |triple_line: &str| triple_line.split(' ').nth(4).unwrap().to_owned();
    let ranks = dir.path().join("ranks.txt");
    let report =
        stdout(&transkb(&["eval", s(&ck_path), "--data", s(&data), "--split", "test", "--ranks", s(&ranks), "--tsv"]));
    let hits: f64 = report.lines().find_map(|l| l.strip_prefix("hits10\t")).unwrap().parse().unwrap();
    assert!(hits >= 25.0, "{report}");
    assert!(report.contains(&format!("skipped_sides\t{}", kb.test.len())));
    let dump = std::fs::read_to_string(&ranks).unwrap();
    let line = dump.lines().next().unwrap();
    let all = ck.training_entities.len().to_string();
    let out = stdout(&transkb(&[
        "query",
        s(&ck_path),
        "--entity",
        name,
        "--relation",
        relation,
        "-k",
        &all,
        "--data",
        s(&data),
        "--tsv",
    ]));
    assert_eq!(out.lines().count(), ck.training_entities.len());
    let position = out.lines().position(|l| l.split('\t').nth(1) == Some(want)).unwrap() + 1;
    assert_eq!(position.to_string(), right_rank(line));

    // Unknown relations suggest the closest names.
    let err = stderr(&transkb(&["query", s(&ck_path), "--entity", "obj000", "--relation", "has_colour"]));
    assert!(err.contains("has_color"), "{err}");
}

#[test]
fn baseline_checkpoint_cannot_embed() {
    let dir = tempfile::tempdir().unwrap();
    let data = write(dir.path(), &ring_kb(10));
    stdout(&transkb(&["train", "--data", s(&data), "--out", s(dir.path()), "--epochs", "1", "--dim", "4"]));
    let err = stderr(&transkb(&["embed", s(&dir.path().join("final.tkb")), "--text", "node"]));
    assert!(err.contains("joint-mode"), "{err}");
    let out = stdout(&transkb(&[
        "query",
        s(&dir.path().join("final.tkb")),
        "--entity",
        "e1",
        "--relation",
        "next",
        "-k",
        "3",
    ]));
    assert_eq!(out.lines().count(), 3);
}

#[test]
fn cnn_embeddings_follow_word_changes() {
    let dir = tempfile::tempdir().unwrap();
    let kb = nameable_kb(&NameableOptions::default()).unwrap();
    let data = write(dir.path(), &kb);
    let words = random_word_vectors(&kb, 6, 2).unwrap();
    let wv = dir.path().join("words.txt");
    write_word_vectors(&words, &wv).unwrap();
    let cfg = dir.path().join("cnn.cfg");
    std::fs::write(
        &cfg,
        format!(
            "mode = joint_cnn\ndata_dir = {}\nword_vectors = {}\nword_dim = 6\ndim = 8\nhidden = 16\ninput_len = 8\ncnn_layers = conv 8 1, conv 8 3, pool 2 2\nepochs = 1\n",
            data.display(),
            wv.display()
        ),
    )
    .unwrap();
    let out = dir.path().join("cnn");
    stdout(&transkb(&["train", "--config", s(&cfg), "--out", s(&out)]));
    let ck = out.join("final.tkb");
    let a = stdout(&transkb(&["embed", s(&ck), "--text", "obj001 is a red circle thing"]));
    let b = stdout(&transkb(&["embed", s(&ck), "--text", "obj001 is a blue circle thing"]));
    assert_ne!(a, b);
    assert_eq!(a, stdout(&transkb(&["embed", s(&ck), "--text", "obj001 is a red circle thing"])));
}
