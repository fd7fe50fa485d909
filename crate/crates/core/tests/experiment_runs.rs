use std::fs;
use std::path::{Path, PathBuf};

use sentipipe::experiment::{run_train, ExperimentConfig, SNAPSHOT};
use sentipipe::metrics::load_report;

fn toy(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/toy").join(name)
}

fn config(body: &str, out: &Path) -> ExperimentConfig {
    let text = format!(
        "[data]\ntrain = {:?}\ntest = {:?}\nembeddings = {:?}\n{body}\n[output]\ndir = {:?}\n",
        toy("train.tsv"),
        toy("test.tsv"),
        toy("embeddings.vec"),
        out
    );
    ExperimentConfig::from_toml_str(&text, Path::new("/"), Path::new("test.toml")).unwrap()
}

fn machine_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|x| x == "tsv" || x == "json") {
                let rel = p.strip_prefix(dir).unwrap().display().to_string();
                out.push((rel, fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn five_runs_give_five_reports_and_a_mean() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("r");
    let cfg = config("[train]\nruns = 5\nepochs = 4\nlearning_rate = 0.05\n", &out);
    run_train(&cfg).unwrap();
    let reports: Vec<_> = (1..=5)
        .map(|i| load_report(&out.join(format!("run_{i}/metrics.tsv"))).unwrap())
        .collect();
    let mean = load_report(&out.join("mean_metrics.tsv")).unwrap();
    assert!(!out.join("run_6").exists());
    let lo = reports.iter().map(|r| r.f1pm_macro).fold(f64::INFINITY, f64::min);
    let hi = reports.iter().map(|r| r.f1pm_macro).fold(f64::NEG_INFINITY, f64::max);
    assert!(lo <= mean.f1pm_macro && mean.f1pm_macro <= hi);
    let avg = reports.iter().map(|r| r.accuracy).sum::<f64>() / 5.0;
    assert!((avg - mean.accuracy).abs() < 1e-12);
    let history = fs::read_to_string(out.join("run_3/loss_history.tsv")).unwrap();
    assert_eq!(history.lines().count(), 5);
}

#[test]
fn snapshot_reruns_identically() {
    let tmp = tempfile::tempdir().unwrap();
    let first = tmp.path().join("a");
    let cfg = config(
        "[model]\nfamily = \"cnn\"\nseq_len = 8\nfilters = 3\nwindows = [2, 3]\n\
         [train]\nruns = 2\nepochs = 2\n[grid.params]\nfilters = [2, 4]\nlearning_rate = [0.01, 0.001]\n",
        &first,
    );
    run_train(&cfg).unwrap();
    let grid = fs::read_to_string(first.join("grid.tsv")).unwrap();
    assert_eq!(grid.lines().count(), 6, "{grid}");

    let snap = first.join(SNAPSHOT);
    let mut again = ExperimentConfig::load(&snap).unwrap();
    let second = tmp.path().join("b");
    again.set_output_dir(&second).unwrap();
    run_train(&again).unwrap();
    assert_eq!(machine_files(&first), machine_files(&second));
    // The snapshot of the rerun only differs in the output directory.
    let a = fs::read_to_string(&snap).unwrap();
    let b = fs::read_to_string(second.join(SNAPSHOT)).unwrap();
    assert_eq!(a.replace("/a\"", "/b\""), b);
}

#[test]
fn transformer_trains_from_its_own_vocabulary() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("m");
    let text = format!(
        "[data]\ntrain = {:?}\ntest = {:?}\ntask = \"targeted\"\n[reformulate]\nscheme = \"pair_qa\"\n\
         [model]\nfamily = \"minibert\"\nlayers = 1\nhidden = 8\nheads = 2\nmax_len = 20\n\
         [train]\nruns = 1\nepochs = 1\n[output]\ndir = {:?}\n",
        toy("targeted_train.tsv"),
        toy("targeted_test.tsv"),
        out
    );
    let cfg = ExperimentConfig::from_toml_str(&text, Path::new("/"), Path::new("t.toml")).unwrap();
    run_train(&cfg).unwrap();
    let snapshot = fs::read_to_string(out.join(SNAPSHOT)).unwrap();
    assert!(snapshot.contains("learning_rate = 0.00002") && snapshot.contains("batch_size = 12"), "{snapshot}");
    let ckpt = fs::read_to_string(out.join("checkpoint.json")).unwrap();
    assert!(ckpt.contains("\"MASK\""));
}

#[test]
fn invalid_inputs_leave_no_output() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("x");
    for body in [
        "[model]\nfamily = \"cnn\"\nwindows = [2, 99]\n",
        "[grid.params]\nwarmup = [1]\n",
        "[model]\nfamily = \"lstm\"\nfc = \"wide\"\n",
        "[train]\nbatch_size = 0\n",
    ] {
        let err = run_train(&config(body, &out)).unwrap_err();
        assert!(err.is_input_error(), "{body}: {err}");
        assert!(!out.exists());
    }
}
