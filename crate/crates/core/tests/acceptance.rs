//! Acceptance suite: one PASS/FAIL line per criterion. Runs without the
//! libtest harness so the lines always reach the terminal.

mod common;

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sentipipe::corpus::{Sample, TaskKind};
use sentipipe::experiment::{dataset_stats, load_difficult_report, run_train, ExperimentConfig};
use sentipipe::metrics::{evaluate, Metric};
use sentipipe::models::encode::SEP_ID;
use sentipipe::models::{
    encode_pair, Classifier, CnnConfig, Encoded, LstmConfig, MiniBertConfig, ModelConfig, ModelKind, Vocab,
};
use sentipipe::numerics::{grad_check, GradCheckOptions, Tensor};
use sentipipe::reformulate::{ReformulatedInput, Reformulator, Scheme};
use sentipipe::textnorm::{normalize, NormConfig, EMAIL, HASHTAG, MENTION, PHONE, URL};
use sentipipe::train::{evaluate_on, train};
use sentipipe::Label;

const METRIC_TOL: f64 = 1e-12;
const METRIC_BUDGET: Duration = Duration::from_secs(5);
const GRAD_TOL: f64 = 1e-4;
const GRAD_BUDGET: Duration = Duration::from_secs(60);
const OVERFIT_ACCURACY: f64 = 0.95;
const OVERFIT_EPOCHS: usize = 200;
const OVERFIT_BUDGET: Duration = Duration::from_secs(120);
const FUZZ_CASES: usize = 10_000;
const STATS_PERCENT_TOL: f64 = 1.0;
const ATTENTION_TOL: f64 = 1e-6;
const DATA_ENV: &str = "SENTIPIPE_SHARED_TASK_DIR";

enum Verdict {
    Pass(String),
    Fail(String),
    Skipped(String),
}

type Check = std::result::Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn repo() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

// 1

fn metric_oracle() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    for case in 0..1000 {
        let n = rng.random_range(1..=12);
        let gold: Vec<Label> = (0..n).map(|_| Label::ALL[rng.random_range(0..3)]).collect();
        let pred: Vec<Label> = (0..n).map(|_| Label::ALL[rng.random_range(0..3)]).collect();
        let r = evaluate(&gold, &pred).map_err(|e| e.to_string())?;
        let o = common::oracle(&gold, &pred);
        for (name, a, b) in [
            ("accuracy", r.accuracy, o.accuracy),
            ("f1_macro", r.f1_macro, o.f1_macro),
            ("f1pm_macro", r.f1pm_macro, o.f1pm_macro),
            ("f1pm_micro", r.f1pm_micro, o.f1pm_micro),
        ] {
            let d = (a - b).abs();
            worst = worst.max(d);
            ensure(d <= METRIC_TOL, || format!("case {case}: {name} {a} vs oracle {b}"))?;
        }
    }
    let took = start.elapsed();
    ensure(took < METRIC_BUDGET, || format!("took {took:.2?}"))?;
    Ok(format!("1000 cases, max diff {worst:e}, {took:.2?}"))
}

// 2

fn hand_case() -> Check {
    use Label::{Negative as N, Neutral as O, Positive as P};
    let r = evaluate(&[P, P, N, O], &[P, N, N, O]).map_err(|e| e.to_string())?;
    // P: tp 1, fp 0, fn 1 -> f1 2/3; N: tp 1, fp 1, fn 0 -> f1 2/3.
    // Pooled polar: tp 2, fp 1, fn 1 -> f1 2/3.
    let two_thirds = 2.0 / 3.0;
    ensure(r.accuracy == 0.75, || format!("accuracy {}", r.accuracy))?;
    ensure((r.f1pm_macro - two_thirds).abs() <= METRIC_TOL, || format!("f1pm_macro {}", r.f1pm_macro))?;
    ensure((r.f1pm_micro - two_thirds).abs() <= METRIC_TOL, || format!("f1pm_micro {}", r.f1pm_micro))?;
    Ok(format!("accuracy {}, f1pm_macro {:.6}, f1pm_micro {:.6}", r.accuracy, r.f1pm_macro, r.f1pm_micro))
}

// 3

fn random_sequence(rng: &mut ChaCha8Rng, s: usize, d: usize, len: usize) -> Encoded {
    let mut m = Tensor::from_fn(s, d, |_, _| rng.random_range(-1.0..1.0));
    m.data_mut()[len * d..].fill(0.0);
    Encoded::Sequence { matrix: m, len }
}

fn toy_bert(max_len: usize) -> MiniBertConfig {
    MiniBertConfig {
        layers: 1,
        hidden: 8,
        heads: 2,
        ffn_mult: 4,
        max_len,
        dropout: 0.1,
    }
}

fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}

fn toy_vocab() -> Vocab {
    Vocab::build(
        [words("MASK is a safe place where you can keep your savings"), words("The sentiment polarity of MASK is")],
        "MASK",
        1,
    )
    .unwrap()
}

fn pair(a: &str, b: Option<&str>) -> ReformulatedInput {
    ReformulatedInput {
        sentence_a: a.into(),
        sentence_b: b.map(String::from),
        mask_token: "MASK".into(),
    }
}

fn grad_family(
    label: &str,
    config: ModelConfig,
    vocab: Option<Vocab>,
    input: impl Fn(&mut ChaCha8Rng) -> Encoded,
) -> std::result::Result<f64, String> {
    let mut worst = 0.0f64;
    for seed in 0..5 {
        let clf = Classifier::new(config.clone(), vocab.clone(), seed).map_err(|e| e.to_string())?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1000);
        let x = input(&mut rng);
        let gold = rng.random_range(0..3);
        let mut params = clf.params().clone();
        let report = grad_check(
            &mut params,
            |g, p| clf.loss_with(g, p, &x, gold),
            GradCheckOptions {
                threshold: GRAD_TOL,
                seed,
                ..Default::default()
            },
        )
        .map_err(|e| format!("{label} seed {seed}: {e}"))?;
        worst = worst.max(report.max_rel_error);
        ensure(report.pass, || format!("{label} seed {seed}: max rel error {:e}", report.max_rel_error))?;
    }
    Ok(worst)
}

fn gradient_checks() -> Check {
    let start = Instant::now();
    let cnn = ModelConfig::Cnn(CnnConfig {
        seq_len: 6,
        dim: 4,
        windows: vec![2, 3],
        filters: 2,
        dropout: 0.5,
        hidden: 0,
    });
    let lstm = || {
        let mut c = LstmConfig::new(4);
        c.seq_len = 6;
        c
    };
    let bert = toy_bert(16);
    let vocab = toy_vocab();
    let enc = encode_pair(
        &bert,
        &pair("MASK is a safe place", Some("The sentiment polarity of MASK is")),
        &vocab,
    )
    .map_err(|e| e.to_string())?;
    let parts = [
        ("cnn", grad_family("cnn", cnn, None, |r| random_sequence(r, 6, 4, 5))?),
        ("lstm", grad_family("lstm", ModelConfig::Lstm(lstm()), None, |r| random_sequence(r, 6, 4, 4))?),
        ("bilstm", grad_family("bilstm", ModelConfig::BiLstm(lstm()), None, |r| random_sequence(r, 6, 4, 4))?),
        (
            "transformer",
            grad_family("transformer", ModelConfig::MiniBert(bert), Some(vocab), |_| Encoded::Pair(enc.clone()))?,
        ),
    ];
    let took = start.elapsed();
    ensure(took < GRAD_BUDGET, || format!("took {took:.2?}"))?;
    let detail: Vec<String> = parts.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect();
    Ok(format!("5 seeds each, max rel error {}; {took:.2?}", detail.join(", ")))
}

// 4

fn golden_reformulation() -> Check {
    let safe = "Sberbank is a safe place where you can keep your savings";
    let sample = Sample::targeted("1", safe, "Sberbank", Label::Positive);
    let expect_a = "MASK is a safe place where you can keep your savings";
    let cases = [
        (Scheme::Single, None),
        (Scheme::PairNli, Some("The sentiment polarity of MASK is")),
        (Scheme::PairQa, Some("What do you think about MASK?")),
    ];
    for (scheme, b) in cases {
        let out = Reformulator::new(scheme).targeted(&sample).map_err(|e| e.to_string())?;
        ensure(out.sentence_a == expect_a, || format!("{scheme}: {:?}", out.sentence_a))?;
        ensure(out.sentence_b.as_deref() == b, || format!("{scheme}: {:?}", out.sentence_b))?;
    }
    let rambler = Sample::general("2", "56% of Rambler Group was sold to Sberbank", Label::Neutral);
    let out = Reformulator::new(Scheme::Single).general(&rambler).map_err(|e| e.to_string())?;
    ensure(out.sentence_a == "MASK = 56% of Rambler Group was sold to Sberbank", || {
        format!("{:?}", out.sentence_a)
    })?;
    ensure(out.sentence_b.is_none(), || format!("{:?}", out.sentence_b))?;
    Ok("4 strings byte-exact".into())
}

// 5

fn overfit() -> Check {
    let mut detail = Vec::new();
    for kind in ModelKind::ALL {
        let start = Instant::now();
        let (mut clf, data, mut cfg) = common::separable_problem(kind, 7);
        ensure(data.len() == 64, || format!("{kind}: corpus of {}", data.len()))?;
        cfg.epochs = OVERFIT_EPOCHS;
        train(&mut clf, &data, None, &cfg, Metric::Accuracy).map_err(|e| format!("{kind}: {e}"))?;
        let acc = evaluate_on(&clf, &data).map_err(|e| e.to_string())?.accuracy;
        let took = start.elapsed();
        ensure(acc >= OVERFIT_ACCURACY, || format!("{kind}: train accuracy {acc:.3}"))?;
        ensure(took < OVERFIT_BUDGET, || format!("{kind}: took {took:.2?}"))?;
        detail.push(format!("{kind} {:.0}% {:.1}s", acc * 100.0, took.as_secs_f64()));
    }
    Ok(detail.join(", "))
}

// 6

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

fn determinism() -> Check {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let toy = repo().join("data/toy");
    let body = |out: &Path| {
        format!(
            "[data]\ntrain = {:?}\ntest = {:?}\nembeddings = {:?}\n\
             [model]\nfamily = \"cnn\"\nseq_len = 12\nfilters = 4\n\
             [train]\nruns = 2\nepochs = 3\nseed = 11\n[output]\ndir = {out:?}\n",
            toy.join("train.tsv"),
            toy.join("test.tsv"),
            toy.join("embeddings.vec"),
        )
    };
    let mut trees = Vec::new();
    for name in ["a", "b"] {
        let out = tmp.path().join(name);
        let cfg = ExperimentConfig::from_toml_str(&body(&out), Path::new("/"), Path::new("acceptance.toml"))
            .map_err(|e| e.to_string())?;
        run_train(&cfg).map_err(|e| e.to_string())?;
        trees.push(machine_files(&out));
    }
    ensure(!trees[0].is_empty(), || "no machine reports written".into())?;
    ensure(trees[0] == trees[1], || {
        let differing: Vec<&str> = trees[0]
            .iter()
            .zip(&trees[1])
            .filter(|(a, b)| a != b)
            .map(|(a, _)| a.0.as_str())
            .collect();
        format!("differing files: {differing:?}")
    })?;
    Ok(format!("{} files identical across two runs", trees[0].len()))
}

// 7

const FRAGMENTS: &[&str] = &[
    "http://", "https://", "www.", ".ru", ".com/", "t.co/x", "@", "@ivan", "#", "#банк", "mail@bank.ru", "+7",
    "8 (800) 555-35-35", "123-45-67", ":)", ":-(", ":D", ":|", ")))", "((", "!!!", "...", "—", "ооооо", "ААА",
    "Сбер", "ВТБ", "x", "Z", "ё", "ß", "İ", "😀", "\u{301}", "\u{200d}", "٣", "7", " ", " ", "\t", "\n", "/",
    "_", "-", ".", ":", "(", ")", "%", "&", "$",
];

fn fuzz_string(rng: &mut ChaCha8Rng) -> String {
    let n = rng.random_range(0..24);
    (0..n).map(|_| FRAGMENTS[rng.random_range(0..FRAGMENTS.len())]).collect()
}

fn normalization() -> Check {
    let config = NormConfig::standard();
    let worked = [
        ("Привет @ivan смотри http://t.co/x", "привет user смотри url"),
        ("Скуучнооооо :(", "скуучноо sad"),
    ];
    for (input, expect) in worked {
        let got = normalize(input, &config);
        ensure(got == expect, || format!("{input:?} -> {got:?}"))?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..FUZZ_CASES {
        let text = fuzz_string(&mut rng);
        let once = normalize(&text, &config);
        let twice = normalize(&once, &config);
        ensure(once == twice, || format!("not idempotent on {text:?}: {once:?} -> {twice:?}"))?;
        for re in [&*URL, &*MENTION, &*HASHTAG, &*EMAIL, &*PHONE] {
            ensure(!re.is_match(&once), || format!("{} matches {once:?} (from {text:?})", re.as_str()))?;
        }
    }
    Ok(format!("{FUZZ_CASES} fuzzed strings, 2 worked examples"))
}

// 8

/// Printed prediction matrix for the seven published examples, models in
/// the order SVM CNN LSTM BiLSTM BS BPQ BPN BS-C BPQ-C BPN-C.
const GOLD: [i8; 7] = [-1, -1, 1, 1, -1, 1, -1];
const MATRIX: [[i8; 10]; 7] = [
    [0, 0, 0, 0, 0, 0, 0, 0, 0, 0],
    [-1, -1, -1, -1, -1, -1, -1, -1, -1, -1],
    [-1, -1, -1, -1, -1, -1, -1, -1, -1, -1],
    [-1, -1, 0, -1, 1, -1, 1, 1, -1, 1],
    [-1, -1, -1, -1, 0, 0, 0, 0, -1, -1],
    [0, 0, 0, 0, -1, -1, -1, -1, -1, -1],
    [0, 0, -1, -1, -1, -1, -1, -1, -1, -1],
];
const PRINTED_SHARES: [f64; 10] = [0.33, 0.24, 0.48, 0.52, 0.48, 0.53, 0.62, 0.62, 0.57, 0.71];

fn difficult() -> Check {
    let published = ExperimentConfig::load(&repo().join("configs/difficult_published.toml")).map_err(|e| e.to_string())?;
    let section = published.difficult.as_ref().ok_or("no [difficult] section")?;
    let report = load_difficult_report(&section.set, &section.models).map_err(|e| e.to_string())?;
    ensure(report.ids.len() == 7 && report.models.len() == 10, || "unexpected fixture shape".into())?;
    for (i, row) in MATRIX.iter().enumerate() {
        ensure(report.gold[i].polarity() == GOLD[i], || format!("Ex.{} gold", i + 1))?;
        for (m, &p) in row.iter().enumerate() {
            let expected = p == GOLD[i];
            ensure(report.is_correct(m, i) == expected, || {
                format!("Ex.{} {}: correct = {}", i + 1, report.models[m], report.is_correct(m, i))
            })?;
        }
    }

    let full =
        ExperimentConfig::load(&repo().join("configs/difficult_reconstructed.toml")).map_err(|e| e.to_string())?;
    let section = full.difficult.as_ref().ok_or("no [difficult] section")?;
    let report = load_difficult_report(&section.set, &section.models).map_err(|e| e.to_string())?;
    ensure(report.ids.len() == 21, || format!("{} rows", report.ids.len()))?;
    let mut notes = Vec::new();
    for (m, &printed) in PRINTED_SHARES.iter().enumerate() {
        // Correct counts implied by the printed row.
        let count = (printed * 21.0).round() as usize;
        let share = report.share(m);
        let indicator_mean =
            (0..21).map(|i| if report.is_correct(m, i) { 1.0 } else { 0.0 }).sum::<f64>() / 21.0;
        ensure(report.correct_count(m) == count, || {
            format!("{}: {} correct, expected {count}", report.models[m], report.correct_count(m))
        })?;
        ensure(share == count as f64 / 21.0 && share == indicator_mean, || {
            format!("{}: share {share}", report.models[m])
        })?;
        let shown = format!("{share:.2}");
        if shown != format!("{printed:.2}") {
            notes.push(format!("{} prints {printed:.2} but {count}/21 = {shown}", report.models[m]));
        }
    }
    let bpn_c = format!("{:.2}", report.share(9));
    ensure(bpn_c == "0.71", || format!("BPN-C share {bpn_c}"))?;
    let mut msg = "7x10 correctness pattern, 21-row shares = count/21 (BPN-C 0.71)".to_string();
    if !notes.is_empty() {
        msg.push_str(&format!("; source row inconsistent: {}", notes.join("; ")));
    }
    Ok(msg)
}

// 9

/// Train and test volumes, then train and test (pos, neg, neu) percentages.
type SharedTask = (&'static str, TaskKind, [usize; 2], [[f64; 3]; 2]);

const SHARED_TASKS: [SharedTask; 5] = [
    ("romip2013_news", TaskKind::General, [4260, 5500], [[16.0, 36.0, 48.0], [11.0, 33.0, 56.0]]),
    ("sentirueval2015_telecom", TaskKind::Targeted, [5000, 5322], [[19.0, 32.0, 49.0], [10.0, 23.0, 67.0]]),
    ("sentirueval2015_banks", TaskKind::Targeted, [5000, 5296], [[7.0, 34.0, 59.0], [8.0, 15.0, 79.0]]),
    ("sentirueval2016_telecom", TaskKind::Targeted, [8643, 2247], [[15.0, 29.0, 56.0], [10.0, 46.0, 44.0]]),
    ("sentirueval2016_banks", TaskKind::Targeted, [9392, 3313], [[8.0, 18.0, 74.0], [10.0, 22.0, 68.0]]),
];

fn shared_task_stats() -> Verdict {
    let Some(root) = std::env::var_os(DATA_ENV).map(PathBuf::from) else {
        return Verdict::Skipped(format!("set {DATA_ENV} to <dir>/<dataset>/{{train,test}}.tsv"));
    };
    let run = || -> Check {
        let mut checked = Vec::new();
        for (key, kind, volumes, shares) in SHARED_TASKS {
            for (part, (volume, share)) in ["train", "test"].iter().zip(volumes.iter().zip(shares)) {
                let path = root.join(key).join(format!("{part}.tsv"));
                if !path.is_file() {
                    continue;
                }
                let st = dataset_stats(&path, kind).map_err(|e| e.to_string())?;
                ensure(st.size == *volume, || format!("{key}/{part}: {} samples, expected {volume}", st.size))?;
                let got = st.distribution.percent;
                for (c, (&g, &e)) in got.iter().zip(share.iter()).enumerate() {
                    ensure((g - e).abs() <= STATS_PERCENT_TOL, || {
                        format!("{key}/{part}: {} share {g:.2}% vs {e}%", Label::ALL[c])
                    })?;
                }
                checked.push(format!("{key}/{part}"));
            }
        }
        ensure(!checked.is_empty(), || format!("no dataset files under {}", root.display()))?;
        Ok(format!("{} parts checked", checked.len()))
    };
    match run() {
        Ok(m) => Verdict::Pass(m),
        Err(m) => Verdict::Fail(m),
    }
}

// 10

fn pair_semantics() -> Check {
    let vocab = toy_vocab();
    let mut checked = 0;
    for (seed, max_len) in [(0u64, 16usize), (1, 20), (2, 24)] {
        let cfg = toy_bert(max_len);
        let clf = Classifier::new(ModelConfig::MiniBert(cfg.clone()), Some(vocab.clone()), seed)
            .map_err(|e| e.to_string())?;
        for input in [
            pair("MASK is a safe place", Some("The sentiment polarity of MASK is")),
            pair("MASK = keep savings", Some("What do you think about MASK?")),
            pair("MASK is", None),
        ] {
            let enc = encode_pair(&cfg, &input, &vocab).map_err(|e| e.to_string())?;
            let used = enc.used();
            ensure(used < max_len, || "expected padding".into())?;
            ensure(enc.mask[..used].iter().all(|&m| m), || "mask is not a prefix".into())?;
            let first_sep = enc.ids.iter().position(|&t| t == SEP_ID).ok_or("no [SEP]")?;
            let expected_b = if input.sentence_b.is_some() { 1 } else { 0 };
            for (i, &s) in enc.segments[..used].iter().enumerate() {
                let want = if i <= first_sep { 0 } else { expected_b };
                ensure(s == want, || format!("segment {s} at position {i}, first [SEP] at {first_sep}"))?;
            }
            let maps = clf.attention(&Encoded::Pair(enc.clone())).map_err(|e| e.to_string())?;
            for head in maps.iter().flatten() {
                for r in 0..max_len {
                    let row = head.row_slice(r);
                    let sum: f64 = row.iter().sum();
                    ensure((sum - 1.0).abs() <= ATTENTION_TOL, || format!("row {r} sums to {sum}"))?;
                    ensure(row[used..].iter().all(|&w| w == 0.0), || format!("row {r} attends to padding"))?;
                }
                checked += 1;
            }
        }
    }
    Ok(format!("{checked} attention maps"))
}

fn guarded(f: fn() -> Check) -> Verdict {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(m)) => Verdict::Pass(m),
        Ok(Err(m)) => Verdict::Fail(m),
        Err(p) => Verdict::Fail(
            p.downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()),
        ),
    }
}

fn main() {
    // Keep `cargo test -- <filter>` and `--list` from running the slow suite.
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.iter().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    if let Some(filter) = args.iter().find(|a| !a.starts_with('-')) {
        if !"acceptance".contains(filter.as_str()) {
            return;
        }
    }

    type Criterion = (&'static str, Box<dyn Fn() -> Verdict>);
    let criteria: [Criterion; 10] = [
        ("metric oracle equivalence", Box::new(|| guarded(metric_oracle))),
        ("hand-worked metric case", Box::new(|| guarded(hand_case))),
        ("gradient checks", Box::new(|| guarded(gradient_checks))),
        ("golden reformulation", Box::new(|| guarded(golden_reformulation))),
        ("overfit sanity", Box::new(|| guarded(overfit))),
        ("end-to-end determinism", Box::new(|| guarded(determinism))),
        ("normalization invariants", Box::new(|| guarded(normalization))),
        ("difficult-examples harness", Box::new(|| guarded(difficult))),
        ("shared-task volumes and class split", Box::new(shared_task_stats)),
        ("pair input and attention", Box::new(|| guarded(pair_semantics))),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let line = match run() {
            Verdict::Pass(m) => format!("PASS {:>2} {name}: {m}", i + 1),
            Verdict::Fail(m) => {
                failed += 1;
                format!("FAIL {:>2} {name}: {m}", i + 1)
            }
            Verdict::Skipped(m) => format!("SKIPPED {:>2} {name}: {m}", i + 1),
        };
        println!("{line}");
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
