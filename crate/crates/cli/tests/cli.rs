use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn repo() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn sentipipe(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sentipipe"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("exp.toml");
    fs::write(&path, body).unwrap();
    path
}

fn toy(name: &str) -> String {
    repo().join("data/toy").join(name).display().to_string()
}

fn linear_config(dir: &Path, train: &str) -> PathBuf {
    write_config(
        dir,
        &format!(
            "[data]\ntrain = {train:?}\ntest = {:?}\nembeddings = {:?}\n\
             [train]\nepochs = 3\nruns = 2\nlearning_rate = 0.05\n",
            toy("test.tsv"),
            toy("embeddings.vec")
        ),
    )
}

#[test]
fn missing_train_file_exits_2_without_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = linear_config(tmp.path(), "/nonexistent/train.tsv");
    let out = tmp.path().join("out");
    let r = sentipipe(&["train", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(2), "{}", String::from_utf8_lossy(&r.stderr));
    assert!(String::from_utf8_lossy(&r.stderr).contains("data.train"));
    assert!(!out.exists());
    let leftovers: Vec<_> = fs::read_dir(tmp.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(leftovers.len(), 1, "{leftovers:?}");
}

#[test]
fn bad_config_and_usage_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "[train]\nepochz = 3\n");
    let r = sentipipe(&["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(2));
    let r = sentipipe(&["train"]);
    assert_eq!(r.status.code(), Some(2));
    let r = sentipipe(&["stats", "--config", "/nonexistent.toml"]);
    assert_eq!(r.status.code(), Some(2));
}

#[test]
fn runtime_failure_exits_1_and_removes_partial_output() {
    let tmp = tempfile::tempdir().unwrap();
    // Huge learning rate with SGD drives the hinge loss to infinity.
    let cfg = write_config(
        tmp.path(),
        &format!(
            "[data]\ntrain = {:?}\ntest = {:?}\nembeddings = {:?}\n\
             [train]\noptimizer = \"sgd\"\nlearning_rate = 1e300\nl2 = 1e300\nepochs = 3\nruns = 1\n",
            toy("train.tsv"),
            toy("test.tsv"),
            toy("embeddings.vec")
        ),
    );
    let out = tmp.path().join("out");
    let r = sentipipe(&["train", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(1), "{}", String::from_utf8_lossy(&r.stderr));
    assert!(String::from_utf8_lossy(&r.stderr).contains("non-finite"));
    assert!(!out.exists());
    assert_eq!(fs::read_dir(tmp.path()).unwrap().count(), 1);
}

#[test]
fn train_writes_reports_and_seed_flag_applies() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = linear_config(tmp.path(), &toy("train.tsv"));
    let out = tmp.path().join("run");
    let r = sentipipe(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--seed",
        "40",
    ]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    for f in [
        "run_1/metrics.tsv",
        "run_2/predictions.tsv",
        "run_2/loss_history.tsv",
        "mean_metrics.tsv",
        "checkpoint.json",
        "report.txt",
        "run.log",
        "config.resolved.toml",
    ] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    assert!(!out.join("run_3").exists());
    let log = fs::read_to_string(out.join("run.log")).unwrap();
    assert!(log.contains("seed 40") && log.contains("seed 41"), "{log}");
    let snapshot = fs::read_to_string(out.join("config.resolved.toml")).unwrap();
    assert!(snapshot.contains("seed = 40"));

    // Scoring the saved predictions reproduces the run's metrics.
    let eval_cfg = write_config(
        tmp.path(),
        &format!(
            "[data]\ntest = {:?}\n[evaluate]\npredictions = {:?}\n",
            toy("test.tsv"),
            out.join("run_1/predictions.tsv")
        ),
    );
    let eval_out = tmp.path().join("eval");
    let r = sentipipe(&["evaluate", "--config", eval_cfg.to_str().unwrap(), "--out", eval_out.to_str().unwrap()]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    assert_eq!(
        fs::read(eval_out.join("metrics.tsv")).unwrap(),
        fs::read(out.join("run_1/metrics.tsv")).unwrap()
    );

    // So does the checkpoint, for the first run.
    let ckpt_cfg = write_config(
        tmp.path(),
        &format!(
            "[data]\ntest = {:?}\nembeddings = {:?}\n[evaluate]\ncheckpoint = {:?}\n",
            toy("test.tsv"),
            toy("embeddings.vec"),
            out.join("checkpoint.json")
        ),
    );
    let r = sentipipe(&["evaluate", "--config", ckpt_cfg.to_str().unwrap(), "--out", eval_out.to_str().unwrap()]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    assert_eq!(
        fs::read(eval_out.join("predictions.tsv")).unwrap(),
        fs::read(out.join("run_1/predictions.tsv")).unwrap()
    );
}

#[test]
fn refuses_to_clobber_unrelated_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = linear_config(tmp.path(), &toy("train.tsv"));
    let out = tmp.path().join("precious");
    fs::create_dir(&out).unwrap();
    fs::write(out.join("notes.txt"), "keep me").unwrap();
    let r = sentipipe(&["normalize", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(2));
    assert_eq!(fs::read_to_string(out.join("notes.txt")).unwrap(), "keep me");
}

#[test]
fn stats_prints_table() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = linear_config(tmp.path(), &toy("train.tsv"));
    let r = sentipipe(&["stats", "--config", cfg.to_str().unwrap()]);
    assert!(r.status.success());
    let text = String::from_utf8(r.stdout).unwrap();
    assert!(text.contains("test\t160\t60\n"), "{text}");
    assert!(text.contains("test\t25\t30\t45\t25\t30\t45\n"), "{text}");
}

#[test]
fn normalize_and_reformulate_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        &format!(
            "[data]\ntrain = {:?}\ntest = {:?}\ntask = \"targeted\"\n[reformulate]\nscheme = \"pair_qa\"\n",
            toy("targeted_train.tsv"),
            toy("targeted_test.tsv")
        ),
    );
    let out = tmp.path().join("norm");
    let r = sentipipe(&["normalize", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let norm = fs::read_to_string(out.join("targeted_train.tsv")).unwrap();
    assert!(norm.starts_with("id\ttext\tentity\tlabel\n"));
    assert!(!norm.contains("http") && !norm.contains('@'));

    let out = tmp.path().join("ref");
    let r = sentipipe(&["reformulate", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let text = fs::read_to_string(out.join("targeted_test.tsv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("id\tsentence_a\tsentence_b\tlabel"));
    for line in lines {
        let f: Vec<&str> = line.split('\t').collect();
        assert!(f[1].contains("MASK"), "{line}");
        assert_eq!(f[2], "What do you think about MASK?");
    }
}

#[test]
fn difficult_and_compare_on_shipped_fixtures() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = repo().join("configs/difficult_published.toml");
    let out = tmp.path().join("difficult");
    let r = sentipipe(&["difficult", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let table = String::from_utf8(r.stdout).unwrap();
    assert!(table.lines().any(|l| l.starts_with("Ex.2") && l.matches("-1*").count() == 10), "{table}");
    assert!(out.join("difficult.tsv").is_file());

    let report = tmp.path().join("metrics.tsv");
    fs::write(
        &report,
        "metric\tvalue\naccuracy\t0.7\nf1_macro\t0.6\nf1pm_macro\t0.5\nf1pm_micro\t0.55\n\
         precision_positive\t0\nrecall_positive\t0\nf1_positive\t0\nprecision_negative\t0\n\
         recall_negative\t0\nf1_negative\t0\nprecision_neutral\t0\nrecall_neutral\t0\nf1_neutral\t0\n",
    )
    .unwrap();
    let cfg = write_config(
        tmp.path(),
        &format!(
            "[compare]\nreference = {:?}\ndataset = \"sentirueval2016_banks\"\nreport = {:?}\n",
            repo().join("data/reference/shared_task.tsv"),
            report
        ),
    );
    let r = sentipipe(&["compare", "--config", cfg.to_str().unwrap(), "--out", tmp.path().join("cmp").to_str().unwrap()]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let text = String::from_utf8(r.stdout).unwrap();
    assert!(text.contains("55.17") && text.contains("-5.17"), "{text}");
}
