use std::path::Path;
use std::process::{Command, Output};

use taa_core::deeponet::{self, DeepOnet, NetConfig};
use taa_core::store::{self, Dataset};

fn taalab(data: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_taalab"))
        .arg("--data")
        .arg(data)
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn small_dataset(dir: &Path) {
    ok(&taalab(dir, &["generate", "--profiles", "2", "--combos", "5", "--seed", "11"]));
}

#[test]
fn generate_writes_a_reproducible_dataset() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    small_dataset(a.path());
    small_dataset(b.path());
    let ds = Dataset::open(a.path()).unwrap();
    assert_eq!(ds.manifest.sample_count, 10);
    assert_eq!(ds.manifest.train_ids.len() + ds.manifest.test_ids.len(), 10);
    assert_eq!(ds.manifest.master_seed, 11);
    for id in &ds.manifest.sample_ids {
        let pa = std::fs::read(Dataset::sample_path(a.path(), *id)).unwrap();
        let pb = std::fs::read(Dataset::sample_path(b.path(), *id)).unwrap();
        assert_eq!(pa, pb, "sample {id} differs between runs");
    }
    assert_eq!(std::fs::read(a.path().join("manifest.json")).unwrap(), std::fs::read(b.path().join("manifest.json")).unwrap());
    let snap: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(a.path().join("effective_config.json")).unwrap()).unwrap();
    assert_eq!(snap["config"]["generate"]["profiles"], 2);
    assert!(snap["generator_hash"].as_str().unwrap().len() == 64);
}

#[test]
fn zero_budget_checkpoint_is_the_initialization_and_echo_scores_zero() {
    let dir = tempfile::tempdir().unwrap();
    small_dataset(dir.path());
    let stdout = ok(&taalab(dir.path(), &["train", "--variant", "d-dist-heat", "--updates", "0", "--model-id", "init"]));
    assert!(stdout.contains("init"));
    let (model, desc) = deeponet::load_checkpoint::<f64>(&dir.path().join("models"), "init").unwrap();
    // default training runs in f32, so the stored initialization is the rounded one
    let fresh = DeepOnet::<f64>::new(2 * 41 * 41, &NetConfig::default()).unwrap();
    assert_eq!(model, fresh.cast::<f32>().cast::<f64>());
    assert_ne!(model, DeepOnet::<f64>::new(2 * 41 * 41, &NetConfig { seed: 2, ..Default::default() }).unwrap());
    assert!(desc.history.is_empty());
    assert!(dir.path().join("models/init.config.json").exists());
    assert!(dir.path().join("predictions/init.bin").exists());

    let table = ok(&taalab(dir.path(), &["eval", "--echo", "--model-id", "init"]));
    let echo: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("reports/echo.json")).unwrap()).unwrap();
    assert_eq!(echo["scores"]["theta_ce"]["full"]["mean"], 0.0);
    assert_eq!(echo["scores"]["theta_ce"]["full"]["stacked"], 0.0);
    // a zero delta field cannot be normalized and is excluded rather than scored
    let dl = &echo["scores"]["theta_delta"]["full"];
    assert!(dl["mean"] == 0.0 || dl["samples"] == 0);
    assert!(table.lines().any(|l| l.starts_with("echo")) && table.lines().any(|l| l.starts_with("init")));
    let first = std::fs::read(dir.path().join("reports/init.json")).unwrap();
    ok(&taalab(dir.path(), &["eval", "--model-id", "init"]));
    assert_eq!(first, std::fs::read(dir.path().join("reports/init.json")).unwrap());
}

#[test]
fn short_training_and_plots() {
    let dir = tempfile::tempdir().unwrap();
    small_dataset(dir.path());
    ok(&taalab(
        dir.path(),
        &["train", "--variant", "d-gray", "--set", "train.updates=5", "--set", "net.branch_hidden=[8]", "--set", "net.trunk_hidden=[8]", "--set", "net.latent=4"],
    ));
    let set = store::read_predictions(&dir.path().join("predictions/fnn-d-gray.bin")).unwrap();
    assert_eq!(set.model_id, "fnn-d-gray");
    let out = ok(&taalab(dir.path(), &["plot", "--model-id", "fnn-d-gray"]));
    assert!(out.contains("PNGs"));
    let pngs = std::fs::read_dir(dir.path().join("exports"))
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "png"))
        .count();
    assert_eq!(pngs, 8 + 4);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nothing");
    assert_eq!(taalab(&missing, &["eval", "--echo"]).status.code(), Some(4));
    assert_eq!(taalab(&missing, &["generate", "--set", "generate.bogus=1"]).status.code(), Some(2));
    assert_eq!(taalab(&missing, &["generate", "--combos", "9"]).status.code(), Some(2));
    assert_eq!(taalab(&missing, &["generate", "--set", "generate.wall.not_a_parameter=3", "--profiles", "1"]).status.code(), Some(2));
    assert_eq!(taalab(&missing, &["train", "--variant", "rgb"]).status.code(), Some(2));
}

#[test]
fn dataset_root_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_taalab"))
        .args(["generate", "--profiles", "1", "--combos", "2"])
        .env("TAALAB_DATA", dir.path())
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    ok(&out);
    assert_eq!(Dataset::open(dir.path()).unwrap().manifest.sample_count, 2);
}
