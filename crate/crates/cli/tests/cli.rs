use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL: &str = "\
frame_size = 24
max_steps = 40
episodes = 4
batch_size = 24
fragment_len = 12
minibatch = 12
workers = 2
corpus_videos = 2
corpus_frames = 12
pretrain_steps = 3
pretrain_batch = 2
eval_episodes = 3
smoothing_window = 2
";

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_decoupled"))
}

fn run(dir: &Path, args: &[&str]) -> Output {
    let cfg = dir.join("small.cfg");
    if !cfg.exists() {
        std::fs::write(&cfg, SMALL).unwrap();
    }
    bin().arg("--config").arg(&cfg).args(args).output().unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let o = run(dir, args);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).to_str().unwrap().to_string()
}

fn csv_rows(path: PathBuf) -> Vec<String> {
    let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    text.lines().skip(1).map(str::to_string).collect()
}

fn digest(out: &str) -> String {
    out.split("digest ").nth(1).unwrap().trim().to_string()
}

#[test]
fn gen_corpus_is_reproducible_and_reports_bad_paths() {
    let d = tempfile::tempdir().unwrap();
    let a = ok(d.path(), &["gen-corpus", "--out", &p(d.path(), "a"), "--seed", "3"]);
    let b = ok(d.path(), &["gen-corpus", "--out", &p(d.path(), "b"), "--seed", "3"]);
    assert!(a.contains("2 videos"));
    assert_eq!(digest(&a), digest(&b));
    std::fs::write(d.path().join("file"), "x").unwrap();
    let o = run(d.path(), &["gen-corpus", "--out", &p(d.path(), "file/sub")]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("error"));
}

#[test]
fn pretrain_writes_checkpoint_and_metrics() {
    let d = tempfile::tempdir().unwrap();
    ok(d.path(), &["gen-corpus", "--out", &p(d.path(), "corpus")]);
    ok(d.path(), &["pretrain", "--corpus", &p(d.path(), "corpus"), "--out", &p(d.path(), "byol"), "--scheme", "byol"]);
    assert!(d.path().join("byol/encoder.ckpt").exists());
    assert_eq!(csv_rows(d.path().join("byol/pretrain_metrics.csv")).len(), 3);
    ok(d.path(), &["pretrain", "--corpus", &p(d.path(), "corpus"), "--out", &p(d.path(), "vae"), "--scheme", "vae"]);
    let header = std::fs::read_to_string(d.path().join("vae/pretrain_metrics.csv")).unwrap();
    assert!(header.lines().next().unwrap().ends_with("reconstruction,kl"));
    let o = run(d.path(), &["pretrain", "--corpus", &p(d.path(), "corpus"), "--out", &p(d.path(), "x"), "--scheme", "simclr"]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(d.path(), &["pretrain", "--corpus", &p(d.path(), "nowhere"), "--out", &p(d.path(), "x")]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn train_agent_seeds_aggregate_and_evaluate() {
    let d = tempfile::tempdir().unwrap();
    ok(d.path(), &["gen-corpus", "--out", &p(d.path(), "corpus")]);
    ok(d.path(), &["pretrain", "--corpus", &p(d.path(), "corpus"), "--out", &p(d.path(), "enc")]);
    let enc = p(d.path(), "enc/encoder.ckpt");
    let out = ok(
        d.path(),
        &["train-agent", "--encoder", &enc, "--out", &p(d.path(), "agent"), "--seeds", "0,1,2", "--head-variant", "avg1D", "--serial"],
    );
    assert_eq!(out.lines().filter(|l| l.starts_with("seed ")).count(), 3);
    for s in 0..3 {
        assert_eq!(csv_rows(d.path().join(format!("agent/seed_{s}/episodes.csv"))).len(), 4);
        assert!(d.path().join(format!("agent/seed_{s}/policy.ckpt")).exists());
    }
    assert_eq!(csv_rows(d.path().join("agent/aggregate.csv")).len(), 4);

    let policy = p(d.path(), "agent/seed_0/policy.ckpt");
    ok(d.path(), &["evaluate", &policy, "--out", &p(d.path(), "ev1")]);
    ok(d.path(), &["evaluate", &policy, "--out", &p(d.path(), "ev2")]);
    let a = csv_rows(d.path().join("ev1/evaluation.csv"));
    assert_eq!(a.len(), 3);
    assert_eq!(a, csv_rows(d.path().join("ev2/evaluation.csv")));

    let o = run(d.path(), &["train-agent", "--out", &p(d.path(), "x"), "--seed", "0"]);
    assert_eq!(o.status.code(), Some(1));
    let o = run(d.path(), &["evaluate", &enc, "--out", &p(d.path(), "x")]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn end_to_end_flag_trains_the_encoder() {
    use decoupled_core::encoder::load_checkpoint;
    use decoupled_core::heads::PolicyCheckpoint;
    let d = tempfile::tempdir().unwrap();
    ok(d.path(), &["gen-corpus", "--out", &p(d.path(), "corpus")]);
    ok(d.path(), &["pretrain", "--corpus", &p(d.path(), "corpus"), "--out", &p(d.path(), "enc")]);
    let enc = p(d.path(), "enc/encoder.ckpt");
    let start = load_checkpoint(Path::new(&enc)).unwrap();
    for (flag, dir) in [(None, "frozen"), (Some("--end-to-end"), "e2e")] {
        let mut args = vec!["train-agent", "--encoder", &enc, "--seed", "1", "--head-variant", "Pro1D", "--serial"];
        let out = p(d.path(), dir);
        args.extend(["--out", &out]);
        args.extend(flag);
        ok(d.path(), &args);
        let ck = PolicyCheckpoint::load(&d.path().join(dir).join("seed_1/policy.ckpt")).unwrap();
        assert_eq!(ck.end_to_end, flag.is_some());
        assert_eq!(ck.encoder.params.data() == start.params.data(), flag.is_none(), "{dir}");
    }
}

#[test]
fn ablation_grid_is_normalized_and_resumable() {
    let d = tempfile::tempdir().unwrap();
    ok(d.path(), &["gen-corpus", "--out", &p(d.path(), "corpus")]);
    for s in ["byol", "vae"] {
        ok(d.path(), &["pretrain", "--corpus", &p(d.path(), "corpus"), "--out", &p(d.path(), s), "--scheme", s]);
    }
    let encs = [format!("byol={}", p(d.path(), "byol/encoder.ckpt")), format!("vae={}", p(d.path(), "vae/encoder.ckpt"))];
    let args = ["ablate", "--out", &p(d.path(), "grid"), "--serial", &encs[0], &encs[1]];
    let first = ok(d.path(), &args);
    assert!(first.contains("trained 12 cells"));
    let rows = csv_rows(d.path().join("grid/grid.csv"));
    assert_eq!(rows.len(), 12);
    let norm: Vec<f64> = rows.iter().map(|r| r.split(',').nth(3).unwrap().parse().unwrap()).collect();
    assert!(norm.iter().all(|n| (0.0..=1.0).contains(n)));
    assert_eq!(norm.iter().copied().fold(f64::NEG_INFINITY, f64::max), 1.0);
    assert_eq!(norm.iter().copied().fold(f64::INFINITY, f64::min), 0.0);
    assert!(d.path().join("grid/grid.png").exists());
    assert!(std::fs::read_to_string(d.path().join("grid/grid_meta.txt")).unwrap().contains("min-max"));
    let second = ok(d.path(), &args);
    assert!(second.contains("trained 0 cells"));
    assert_eq!(csv_rows(d.path().join("grid/grid.csv")), rows);
}

#[test]
fn print_config_lists_every_key_and_parses_back() {
    let d = tempfile::tempdir().unwrap();
    let text = ok(d.path(), &["print-config"]);
    for (k, _, _) in decoupled_core::experiments::KEYS {
        assert!(text.contains(&format!("\n{k} = ")), "{k}");
    }
    let cfg = decoupled_core::experiments::ExperimentConfig::parse(&text).unwrap();
    assert_eq!(cfg.episodes, 4);
}
