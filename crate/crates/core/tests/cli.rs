use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL: &str = r#"
name = "small"
[data]
seed = 3
[data.synthetic]
height = 8
width = 8
channels = 1
classes_per_domain = [2, 2, 1]
train_per_class = 6
test_per_class = 3
[schedule]
base_domains = [0, 1]
incremental_domains = [2]
[model]
arch = "affine"
embed_dim = 8
[train]
epochs = 2
batch_size = 8
[augment]
pseudo_per_batch = 2
[run]
seeds = [0]
out = "from-config"
"#;

fn cli(args: &[&str]) -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_cdfscil"));
    cmd.args(args).env_remove("CDFSCIL_OUT");
    cmd
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn files(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            let bytes = fs::read(&p).unwrap();
            (PathBuf::from(p.file_name().unwrap()), bytes)
        })
        .collect();
    out.sort();
    out
}

fn gen(dir: &Path, seed: &str) -> Output {
    let out = dir.to_str().unwrap();
    cli(&["gen-synth", "--classes", "2,3", "--train-per-class", "4", "--test-per-class", "2", "--height", "6", "--width", "6", "--seed", seed, "-o", out])
        .output()
        .unwrap()
}

#[test]
fn gen_synth_is_deterministic() {
    let (a, b, c) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    assert_eq!(code(&gen(a.path(), "5")), 0);
    assert_eq!(code(&gen(b.path(), "5")), 0);
    assert_eq!(code(&gen(c.path(), "6")), 0);
    let fa = files(a.path());
    assert!(fa.iter().any(|(p, _)| p == Path::new("synthetic-train.json")));
    assert!(fa.iter().any(|(p, _)| p == Path::new("synthetic-test.json")));
    assert_eq!(fa, files(b.path()));
    assert_ne!(fa, files(c.path()));
}

#[test]
fn gen_synth_honours_env_out() {
    let dir = tempfile::tempdir().unwrap();
    let out = cli(&["gen-synth", "--classes", "1", "--train-per-class", "2", "--test-per-class", "1"])
        .env("CDFSCIL_OUT", dir.path())
        .output()
        .unwrap();
    assert_eq!(code(&out), 0);
    assert!(dir.path().join("data/synthetic-train.json").exists());
}

#[test]
fn validation_errors_exit_one() {
    for args in [
        &["gen-synth", "--domains", "0"][..],
        &["gen-synth", "--domains", "2", "--classes", "1,2,3"],
        &["gen-synth", "--classes", "0"],
        &["gradcheck", "--component", "bogus"],
        &["run", "--config", "/nonexistent/config.toml"],
        &["no-such-command"],
        &["gradcheck", "--trials", "many"],
    ] {
        let out = cli(args).output().unwrap();
        assert_eq!(code(&out), 1, "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
    assert_eq!(code(&cli(&["--help"]).output().unwrap()), 0);
}

#[test]
fn gradcheck_reports_and_fails_on_breach() {
    let out = cli(&["gradcheck", "--trials", "5", "--component", "ce,network"]).output().unwrap();
    assert_eq!(code(&out), 0);
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 2);
    assert!(text.contains("ce") && text.contains("network"));

    let out = cli(&["gradcheck", "--trials", "5", "--component", "total", "--tolerance", "1e-30"])
        .output()
        .unwrap();
    assert_eq!(code(&out), 2);
}

#[test]
fn run_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("small.toml");
    fs::write(&config, SMALL).unwrap();
    let env_root = dir.path().join("env");
    let out = cli(&["run", "--config", config.to_str().unwrap(), "--ablate", "baseline", "--seeds", "2"])
        .env("CDFSCIL_OUT", &env_root)
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let seed_dir = env_root.join("small/full/seed-2");
    for f in ["report.json", "report.csv", "config.lock"] {
        assert!(seed_dir.join(f).exists(), "{f}");
    }
    assert!(env_root.join("small/baseline/seed-2/report.json").exists());
    assert!(!dir.path().join("from-config").exists());

    let flag_root = dir.path().join("flag");
    let out = cli(&["run", "--config", config.to_str().unwrap(), "-o", flag_root.to_str().unwrap()])
        .env("CDFSCIL_OUT", &env_root)
        .output()
        .unwrap();
    assert_eq!(code(&out), 0);
    assert!(flag_root.join("small/full/seed-0/report.json").exists());

    let out = cli(&["run", "--config", config.to_str().unwrap()]).output().unwrap();
    assert_eq!(code(&out), 0);
    assert!(dir.path().join("from-config/small/summary.json").exists());

    let csv = dir.path().join("again.csv");
    let out = cli(&["report", seed_dir.to_str().unwrap(), "--csv", csv.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(code(&out), 0);
    assert_eq!(fs::read(&csv).unwrap(), fs::read(seed_dir.join("report.csv")).unwrap());
    let table = String::from_utf8(out.stdout).unwrap();
    assert!(table.starts_with("Session") && table.contains("full"));

    let out = cli(&["report", env_root.join("small").to_str().unwrap()]).output().unwrap();
    assert_eq!(code(&out), 0);
    let table = String::from_utf8(out.stdout).unwrap();
    assert!(table.contains("full") && table.contains("baseline"));

    let broken = dir.path().join("broken.json");
    fs::write(&broken, "{").unwrap();
    assert_eq!(code(&cli(&["report", broken.to_str().unwrap()]).output().unwrap()), 1);
}

#[test]
fn run_rejects_bad_config() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.toml");
    fs::write(&config, SMALL.replace("embed_dim = 8", "embed_dim = 0")).unwrap();
    let out = cli(&["run", "--config", config.to_str().unwrap()]).output().unwrap();
    assert_eq!(code(&out), 1);
    let out = cli(&["run", "--config", config.to_str().unwrap(), "--ablate", "nothing"]).output().unwrap();
    assert_eq!(code(&out), 1);
}
