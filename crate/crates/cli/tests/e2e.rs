use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

fn tiny_config(root: &Path) -> String {
    format!(
        r#"seed = 7
output = "{}"

[dataset]
resolution = 32
scenes = 4
warmup_steps = 6
steps = 12

[ae]
depth = 3
base_features = 8
max_features = 16
pretrain_epochs = 2
epochs = 1
batch = 8

[predictor]
history = 2
context = 8
decoder = 12
epochs = 1
batch = 8

[hybrid]
steps = 16

[eval]
start = 10
scenes = 1
surface_step = 14
intervals = [2, "inf"]
bench_resolutions = [32, 64]
bench_intervals = [0, 4, "inf"]
bench_steps = 3
"#,
        root.join("run").display()
    )
}

fn lsp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lsp")).args(args).env_remove("LSP_THREADS").env("RUST_LOG", "warn").output().unwrap()
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8_lossy(&out.stdout).into_owned()
}

/// Workspace with a dataset, a trained autoencoder and an o=1 predictor.
struct Trained {
    _dir: tempfile::TempDir,
    config: PathBuf,
    run: PathBuf,
}

fn trained() -> &'static Trained {
    static CELL: OnceLock<Trained> = OnceLock::new();
    CELL.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let config = dir.path().join("tiny.toml");
        std::fs::write(&config, tiny_config(dir.path())).unwrap();
        let c = config.to_str().unwrap();
        ok(&lsp(&["--config", c, "gen-data"]));
        ok(&lsp(&["--config", c, "train-ae", "--pretrain-only"]));
        ok(&lsp(&["--config", c, "train-ae"]));
        ok(&lsp(&["--config", c, "train-pred", "--variant", "hybrid", "--o", "1"]));
        let run = dir.path().join("run");
        Trained { _dir: dir, config, run }
    })
}

#[test]
fn pipeline_writes_every_stage() {
    let t = trained();
    assert!(t.run.join("dataset/meta.txt").exists());
    assert!(t.run.join("ae.lspw").exists());
    assert!(t.run.join("predictor_hybrid_o1.lspw").exists());
}

#[test]
fn hybrid_ip0_matches_reference_bitwise() {
    let t = trained();
    let c = t.config.to_str().unwrap();
    ok(&lsp(&["--config", c, "simulate", "--mode", "reference", "--steps", "14"]));
    ok(&lsp(&["--config", c, "simulate", "--mode", "hybrid", "--ip", "0", "--steps", "14"]));
    let a = std::fs::read(t.run.join("sim/reference_scene0.lspf")).unwrap();
    let b = std::fs::read(t.run.join("sim/hybrid_ip0_scene0.lspf")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn hybrid_infinite_interval_runs() {
    let t = trained();
    let c = t.config.to_str().unwrap();
    let out = ok(&lsp(&["--config", c, "--threads", "1", "simulate", "--mode", "hybrid", "--ip", "inf", "--quantity", "total", "--steps", "14"]));
    assert!(out.contains("hybrid_ipinf_scene0"), "{out}");
    assert!(t.run.join("sim/hybrid_ipinf_scene0.lspf").exists());
}

#[test]
fn quantity_mismatch_is_a_config_error() {
    let t = trained();
    let c = t.config.to_str().unwrap();
    let out = lsp(&["--config", c, "simulate", "--mode", "hybrid", "--ip", "2", "--quantity", "velocity"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error[config]"));
}

#[test]
fn velocity_and_split_reference_runs() {
    let t = trained();
    let c = t.config.to_str().unwrap();
    ok(&lsp(&["--config", c, "simulate", "--quantity", "velocity", "--steps", "3"]));
    ok(&lsp(&["--config", c, "simulate", "--quantity", "split", "--steps", "3"]));
}

#[test]
fn eval_writes_reports() {
    let t = trained();
    let c = t.config.to_str().unwrap();
    let out = ok(&lsp(&["--config", c, "eval"]));
    assert!(out.contains("ip=0 bitwise equal to reference: true"), "{out}");
    for f in ["metrics_ae_only.csv", "metrics_ip_2.csv", "metrics_ip_inf.csv", "metric_psnr.svg"] {
        assert!(t.run.join("eval").join(f).exists(), "{f}");
    }
}

#[test]
fn multi_output_and_other_variants_train() {
    let t = trained();
    let c = t.config.to_str().unwrap();
    ok(&lsp(&["--config", c, "train-pred", "--variant", "fr", "--o", "3"]));
    ok(&lsp(&["--config", c, "train-pred", "--variant", "hybrid-v2"]));
    assert!(t.run.join("predictor_fr_o3.lspw").exists());
    assert!(t.run.join("predictor_hybrid-v2_o1.lspw").exists());
}

#[test]
fn hparam_search_ranks_trials() {
    let t = trained();
    let c = t.config.to_str().unwrap();
    let out = ok(&lsp(&["--config", c, "hparam-search", "--trials", "2"]));
    let csv = std::fs::read_to_string(t.run.join("hparam_search.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3, "{out}");
}

#[test]
fn train_ae_refuses_without_pretraining() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("tiny.toml");
    std::fs::write(&config, tiny_config(dir.path())).unwrap();
    let c = config.to_str().unwrap();
    ok(&lsp(&["--config", c, "gen-data"]));
    let out = lsp(&["--config", c, "train-ae"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error[usage]"));
    ok(&lsp(&["--config", c, "train-ae", "--skip-pretrain", "--variational"]));
    let sidecar = std::fs::read_to_string(dir.path().join("run/ae.txt")).unwrap();
    assert!(sidecar.contains("variational"), "{sidecar}");
}

#[test]
fn missing_stage_inputs_are_data_errors() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("tiny.toml");
    std::fs::write(&config, tiny_config(dir.path())).unwrap();
    let out = lsp(&["--config", config.to_str().unwrap(), "train-pred"]);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error[data]"));
}

#[test]
fn seeds_change_datasets_and_reruns_do_not() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("tiny.toml");
    std::fs::write(&config, tiny_config(dir.path())).unwrap();
    let c = config.to_str().unwrap();
    let frames = || std::fs::read(dir.path().join("run/dataset/scene_0000/frames.lspf")).unwrap();
    ok(&lsp(&["--config", c, "--seed", "1", "gen-data"]));
    let a = frames();
    ok(&lsp(&["--config", c, "--seed", "1", "gen-data"]));
    assert_eq!(a, frames());
    ok(&lsp(&["--config", c, "--seed", "2", "gen-data"]));
    assert_ne!(a, frames());
}

#[test]
fn bench_reports_speedups() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("tiny.toml");
    std::fs::write(&config, tiny_config(dir.path())).unwrap();
    let out = ok(&lsp(&["--config", config.to_str().unwrap(), "bench"]));
    assert!(out.starts_with("resolution,cells,solve_ms"), "{out}");
    assert!(dir.path().join("run/bench/bench.csv").exists());
}

#[test]
fn missing_config_file_is_a_config_error() {
    let out = lsp(&["--config", "/nonexistent/lsp.toml", "gen-data"]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.starts_with("error[config]"), "{err}");
    assert_eq!(err.lines().count(), 1);
}

#[test]
fn unknown_config_key_reports_its_line() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.toml");
    std::fs::write(&config, "seed = 1\n\n[solver]\nbogus = 3\n").unwrap();
    let out = lsp(&["--config", config.to_str().unwrap(), "config"]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bogus") && err.contains("line 4"), "{err}");
}

#[test]
fn unknown_subcommand_and_flag_are_usage_errors() {
    for args in [&["frobnicate"][..], &["gen-data", "--frobnicate"][..], &["simulate", "--ip", "soon"][..]] {
        let out = lsp(args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        let err = String::from_utf8_lossy(&out.stderr);
        assert!(err.starts_with("error[usage]"), "{err}");
        assert!(err.contains("Usage:"), "{err}");
    }
}

#[test]
fn help_lists_every_subcommand() {
    let out = ok(&lsp(&["--help"]));
    for sub in ["gen-data", "train-ae", "train-pred", "simulate", "eval", "bench", "hparam-search", "config"] {
        assert!(out.contains(sub), "{sub}");
    }
    let sim = ok(&lsp(&["simulate", "--help"]));
    for flag in ["--mode", "--quantity", "--ip", "--steps", "--config", "--seed", "--threads"] {
        assert!(sim.contains(flag), "{flag}");
    }
}

#[test]
fn thread_env_overrides_flag() {
    let out = Command::new(env!("CARGO_BIN_EXE_lsp")).args(["--threads", "3", "config"]).env("LSP_THREADS", "2").output().unwrap();
    assert!(ok(&out).contains("threads = 2"));
    let out = Command::new(env!("CARGO_BIN_EXE_lsp")).args(["config"]).env("LSP_THREADS", "zero").output().unwrap();
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn reference_listing_is_committed_and_current() {
    let out = ok(&lsp(&["config", "--reference"]));
    let committed = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../config.reference.txt")).unwrap();
    assert_eq!(out, committed, "regenerate with `lsp config --reference > config.reference.txt`");
}
