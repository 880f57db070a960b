use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_simctx"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    run(args).status.code().expect("exit code")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const SMALL: &[&str] = &[
    "--set", "num_train=24", "--set", "num_dev=4", "--set", "num_test=6", "--set", "max_len=4",
    "--set", "total_steps=6", "--set", "warmup=2", "--set", "eval_every=3", "--set", "average=2",
    "--set", "batch_size=2", "--set", "beam=4", "--set", "nbest=4",
];

/// One corpus and one briefly trained model shared by every test.
struct Fixture {
    _dir: tempfile::TempDir,
    data: PathBuf,
    model: PathBuf,
    root: PathBuf,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let data = root.join("data");
        let model = root.join("model");
        let mut args = vec!["gen-synth", "--out", p(&data)];
        args.extend_from_slice(SMALL);
        ok(&args);
        let mut args = vec!["train", "--data", p(&data), "--out", p(&model)];
        args.extend_from_slice(SMALL);
        let metrics = ok(&args);
        assert_eq!(metrics.lines().count(), 6);
        Fixture { _dir: dir, data, model, root }
    })
}

#[test]
fn corpus_layout() {
    let f = fixture();
    assert!(f.data.join("vocab.txt").exists());
    for split in ["train", "dev", "test"] {
        assert!(f.data.join(split).join("labels.txt").exists());
    }
    assert_eq!(fs::read_dir(f.data.join("test/feats")).unwrap().count(), 6);
}

#[test]
fn training_outputs() {
    let f = fixture();
    for file in ["model.ckpt", "last.ckpt", "model.conf", "metrics.txt"] {
        assert!(f.model.join(file).exists(), "{file}");
    }
    let metrics = fs::read_to_string(f.model.join("metrics.txt")).unwrap();
    for (i, line) in metrics.lines().enumerate() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        assert_eq!(fields.len(), 5, "{line}");
        assert_eq!(fields[0].parse::<usize>().unwrap(), i + 1);
        assert!(fields[1..].iter().all(|v| v.parse::<f64>().unwrap().is_finite()));
    }
}

#[test]
fn every_decode_mode_with_and_without_rescoring() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let lm = dir.path().join("lm.txt");
    ok(&["lm-train", "--text", p(&f.data.join("train/labels.txt")), "--order", "2", "--out", p(&lm)]);
    for mode in ["offline", "none", "real", "simulated"] {
        let plain = dir.path().join(format!("{mode}.hyp"));
        let out = ok(&["decode", "--data", p(&f.data), "--model", p(&f.model), "--mode", mode, "--out", p(&plain)]);
        assert!(out.starts_with("cer\t"), "{out}");
        let flat = dir.path().join(format!("{mode}.l0.hyp"));
        ok(&["decode", "--data", p(&f.data), "--model", p(&f.model), "--mode", mode, "--out", p(&flat), "--lm", p(&lm), "--set", "lambda2=0"]);
        assert_eq!(fs::read(&plain).unwrap(), fs::read(&flat).unwrap(), "{mode}");
        let fused = dir.path().join(format!("{mode}.fused.hyp"));
        ok(&["decode", "--data", p(&f.data), "--model", p(&f.model), "--mode", mode, "--out", p(&fused), "--lm", p(&lm), "--set", "rescore=shallow"]);
    }
}

#[test]
fn same_inputs_give_identical_hypothesis_files() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        ok(&["decode", "--data", p(&f.data), "--model", p(&f.model), "--mode", "simulated", "--out", p(out)]);
    }
    assert_eq!(fs::read(a).unwrap(), fs::read(b).unwrap());
}

#[test]
fn nbest_rescoring_is_a_permutation() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let (hyp, nbest, lm, out) = (dir.path().join("h"), dir.path().join("n"), dir.path().join("lm"), dir.path().join("r"));
    ok(&["lm-train", "--text", p(&f.data.join("train/labels.txt")), "--out", p(&lm)]);
    ok(&["decode", "--data", p(&f.data), "--model", p(&f.model), "--mode", "offline", "--out", p(&hyp), "--nbest-out", p(&nbest)]);
    ok(&["rescore", "--nbest", p(&nbest), "--lm", p(&lm), "--lambda1", "1.0", "--lambda2", "0.5", "--out", p(&out)]);
    let key = |text: String| {
        let mut v: Vec<(String, String)> = text
            .lines()
            .map(|l| {
                let c: Vec<&str> = l.split('\t').collect();
                (c[0].to_string(), c[3].to_string())
            })
            .collect();
        v.sort();
        v
    };
    assert_eq!(key(fs::read_to_string(&nbest).unwrap()), key(fs::read_to_string(&out).unwrap()));
    ok(&["rescore", "--nbest", p(&nbest), "--lm", p(&lm), "--lambda2", "0", "--out", p(&out)]);
    let first = |t: String| t.lines().map(|l| l.split('\t').map(str::to_string).collect::<Vec<_>>()).filter(|c| c[1] == "1").map(|c| c[3].clone()).collect::<Vec<_>>();
    assert_eq!(first(fs::read_to_string(&nbest).unwrap()), first(fs::read_to_string(&out).unwrap()));
}

#[test]
fn stream_bench_reports_the_ledger() {
    let f = fixture();
    let out = ok(&["stream-bench", "--data", p(&f.data), "--model", p(&f.model)]);
    assert!(out.lines().next().unwrap().starts_with('#'), "{out}");
    assert!(out.contains("160 + "), "{out}");
    let off = ok(&["stream-bench", "--data", p(&f.data), "--model", p(&f.model), "--set", "right_mode=none"]);
    assert!(off.contains("160 + 0.000 + 0.000 = 160.000 ms"), "{off}");
}

#[test]
fn score_cer_counts_edits() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let (r, h) = (dir.path().join("r"), dir.path().join("h"));
    fs::write(&r, "u1\ta b c\nu2\ta b\n").unwrap();
    fs::write(&h, "u2\t\nu1\ta x c\n").unwrap();
    assert_eq!(ok(&["score-cer", "--ref", p(&r), "--hyp", p(&h)]).trim(), "cer\t0.600000\t3/5");
    let _ = f;
}

#[test]
fn grad_check_passes_and_fails_by_tolerance() {
    let out = ok(&["grad-check", "--samples", "5"]);
    assert!(out.starts_with("max_rel_error"));
    assert_eq!(code(&["grad-check", "--samples", "5", "--tolerance", "1e-30"]), 3);
}

#[test]
fn exit_codes() {
    let f = fixture();
    let missing = f.root.join("nope");
    assert_eq!(code(&["no-such-command"]), 1);
    assert_eq!(code(&["gen-synth"]), 1);
    assert_eq!(code(&["gen-synth", "--out", p(&missing), "--set", "bogus_key=1"]), 1);
    assert_eq!(code(&["gen-synth", "--out", p(&missing), "--set", "noise=-1"]), 1);
    assert_eq!(code(&["decode", "--data", p(&missing), "--model", p(&f.model), "--out", p(&missing.join("h"))]), 2);

    let dir = tempfile::tempdir().unwrap();
    let bad_conf = dir.path().join("bad.conf");
    fs::write(&bad_conf, "this line has no equals sign\n").unwrap();
    assert_eq!(code(&["gen-synth", "--out", p(&missing), "--config", p(&bad_conf)]), 2);

    let broken = dir.path().join("broken");
    fs::create_dir_all(&broken).unwrap();
    fs::write(broken.join("model.ckpt"), b"not a checkpoint").unwrap();
    assert_eq!(code(&["decode", "--data", p(&f.data), "--model", p(&broken), "--out", p(&dir.path().join("h"))]), 2);

    let hyp = dir.path().join("h");
    assert_eq!(code(&["decode", "--data", p(&f.data), "--model", p(&f.model), "--mode", "sideways", "--out", p(&hyp)]), 1);
}

#[test]
fn later_settings_win() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("c.conf");
    fs::write(&conf, "# decode settings\nbeam = 2\nnbest = 2\n").unwrap();
    let nbest = dir.path().join("n");
    let hyp = dir.path().join("h");
    let base = ["decode", "--data", p(&f.data), "--model", p(&f.model), "--mode", "offline", "--out", p(&hyp), "--nbest-out", p(&nbest)];
    let count = |extra: &[&str]| {
        let mut a = base.to_vec();
        a.extend_from_slice(extra);
        ok(&a);
        let text = fs::read_to_string(&nbest).unwrap();
        let first = text.lines().next().unwrap().split('\t').next().unwrap().to_string();
        text.lines().filter(|l| l.starts_with(&format!("{first}\t"))).count()
    };
    assert!(count(&["--config", p(&conf)]) <= 2);
    assert_eq!(count(&["--config", p(&conf), "--set", "beam=1", "--set", "nbest=1"]), 1);
}
