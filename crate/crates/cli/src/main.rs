use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use taa_core::deeponet::{self, NetConfig, NetError, TrainConfig, Variant};
use taa_core::eval::{self, EvalError, EvalReport, Insult};
use taa_core::maps::{self, MapKind};
use taa_core::pipeline::{self, GenerateConfig, PipelineError};
use taa_core::store::{self, Dataset, StoreError};

#[derive(Parser, Debug)]
#[command(name = "taalab", version, about = "Synthetic aneurysm datasets and DeepONet insult inversion")]
struct Cli {
    /// JSON config file with optional `generate`, `net` and `train` sections.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed (dataset seed for generate; network and batch seed for train).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,
    /// Dotted-key override, e.g. `--set train.updates=500`; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Dataset directory.
    #[arg(long, global = true, env = "TAALAB_DATA", default_value = "taa-data")]
    data: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample insult profiles, solve and calibrate every vessel, write a dataset.
    Generate {
        /// Output directory; defaults to --data.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        profiles: Option<usize>,
        #[arg(long)]
        combos: Option<usize>,
    },
    /// Train the DeepONet on one input variant (or `all`) and predict the test split.
    Train {
        /// d-gray, d-dist-gray, d-heat, d-dist-heat or all.
        #[arg(long, default_value = "d-dist-gray")]
        variant: String,
        #[arg(long)]
        updates: Option<usize>,
        /// Defaults to `fnn-<variant>`.
        #[arg(long)]
        model_id: Option<String>,
        /// Override the artifact directory (defaults to the dataset).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score prediction files against the test split.
    Eval {
        /// Models whose predictions live under `<data>/predictions/`.
        #[arg(long = "model-id")]
        model_ids: Vec<String>,
        /// Explicit prediction files.
        #[arg(long = "predictions")]
        files: Vec<PathBuf>,
        /// Also score a prediction file that copies the ground truth.
        #[arg(long)]
        echo: bool,
    },
    /// Export PNG heat maps of one sample, and of a model's predictions and errors.
    Plot {
        /// Defaults to the first test sample.
        #[arg(long)]
        sample: Option<u64>,
        #[arg(long)]
        model_id: Option<String>,
        /// Defaults to `<data>/exports`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RunConfig {
    generate: GenerateConfig,
    net: NetConfig,
    train: TrainConfig,
}

#[derive(Debug)]
enum Failure {
    Config(String),
    Numerical(String),
    Io(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Numerical(_) => 3,
            Failure::Io(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Config(m) | Failure::Numerical(m) | Failure::Io(m) => m,
        }
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        match e {
            e if e.is_numerical() => Failure::Numerical(e.to_string()),
            PipelineError::Store(s) => s.into(),
            PipelineError::Map(m) => Failure::Io(m.to_string()),
            e => Failure::Config(e.to_string()),
        }
    }
}

impl From<StoreError> for Failure {
    fn from(e: StoreError) -> Self {
        Failure::Io(e.to_string())
    }
}

impl From<NetError> for Failure {
    fn from(e: NetError) -> Self {
        match e {
            NetError::Diverged { .. } => Failure::Numerical(e.to_string()),
            NetError::Config(_) => Failure::Config(e.to_string()),
            e => Failure::Io(e.to_string()),
        }
    }
}

impl From<EvalError> for Failure {
    fn from(e: EvalError) -> Self {
        Failure::Io(e.to_string())
    }
}

impl From<maps::MapError> for Failure {
    fn from(e: maps::MapError) -> Self {
        Failure::Io(e.to_string())
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::Io(format!("{}: {e}", path.display()))
}

/// Recursively overlay `top` onto `base`.
fn merge(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn apply_set(cfg: &mut Value, assignment: &str) -> Result<(), Failure> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Failure::Config(format!("--set expects KEY=VALUE, got {assignment:?}")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut slot = cfg;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = slot
            .as_object_mut()
            .ok_or_else(|| Failure::Config(format!("--set {key}: {} is not a section", parts[..i].join("."))))?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        slot = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    Err(Failure::Config(format!("--set {key}: empty key")))
}

/// Defaults, then the config file, then `--set` overrides.
fn layered_config(file: Option<&Path>, sets: &[String]) -> Result<RunConfig, Failure> {
    let mut v = serde_json::to_value(RunConfig::default()).expect("defaults serialize");
    if let Some(path) = file {
        let text = std::fs::read_to_string(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
        let top: Value = serde_json::from_str(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
        merge(&mut v, top);
    }
    for s in sets {
        apply_set(&mut v, s)?;
    }
    serde_json::from_value(v).map_err(|e| Failure::Config(format!("config: {e}")))
}

#[derive(Serialize)]
struct Snapshot<'a> {
    command: &'a str,
    version: &'a str,
    generator_hash: String,
    config: &'a RunConfig,
}

fn write_snapshot(dir: &Path, name: &str, command: &str, cfg: &RunConfig) -> Result<PathBuf, Failure> {
    std::fs::create_dir_all(dir).map_err(|e| io_failure(dir, e))?;
    let config_json = serde_json::to_string(cfg).expect("config serializes");
    let snap = Snapshot {
        command,
        version: env!("CARGO_PKG_VERSION"),
        generator_hash: store::generator_hash(&config_json),
        config: cfg,
    };
    let path = dir.join(name);
    let text = serde_json::to_string_pretty(&snap).expect("snapshot serializes") + "\n";
    std::fs::write(&path, text).map_err(|e| io_failure(&path, e))?;
    Ok(path)
}

fn open_dataset(root: &Path) -> Result<Dataset, Failure> {
    Dataset::open(root).map_err(|e| Failure::Io(format!("cannot open dataset {}: {e}", root.display())))
}

fn dataset_hash(root: &Path) -> Result<String, Failure> {
    let path = root.join("manifest.json");
    let bytes = std::fs::read(&path).map_err(|e| io_failure(&path, e))?;
    Ok(store::sha256_hex(&bytes))
}

fn cmd_generate(cli: &Cli, mut cfg: RunConfig, out: &Option<PathBuf>, profiles: Option<usize>, combos: Option<usize>) -> Result<(), Failure> {
    if let Some(s) = cli.seed {
        cfg.generate.seed = s;
    }
    if let Some(p) = profiles {
        cfg.generate.profiles = p;
    }
    if let Some(c) = combos {
        cfg.generate.combos = c;
    }
    cfg.generate.validate()?;
    let root = out.clone().unwrap_or_else(|| cli.data.clone());
    let (manifest, report) = pipeline::generate(&cfg.generate, &root)?;
    write_snapshot(&root, "effective_config.json", "generate", &cfg)?;
    println!(
        "wrote {} samples ({} train / {} test) to {}",
        manifest.sample_count,
        manifest.train_ids.len(),
        manifest.test_ids.len(),
        root.display()
    );
    println!(
        "d_max {:.4} +/- {:.4}, baseline distensibility {:.5}, apex distensibility {:.4} +/- {:.4}, {:.1} s",
        report.mean_max_dilatation,
        report.std_max_dilatation,
        report.baseline_distensibility,
        report.mean_apex_distensibility,
        report.std_apex_distensibility,
        report.elapsed_seconds
    );
    Ok(())
}

fn cmd_train(
    cli: &Cli,
    mut cfg: RunConfig,
    variant: &str,
    updates: Option<usize>,
    model_id: &Option<String>,
    out: &Option<PathBuf>,
) -> Result<(), Failure> {
    if let Some(s) = cli.seed {
        cfg.net.seed = s;
        cfg.train.seed = s;
    }
    if let Some(u) = updates {
        cfg.train.updates = u;
    }
    cfg.net.validate()?;
    let variants: Vec<Variant> = if variant == "all" {
        Variant::ALL.to_vec()
    } else {
        variant
            .split(',')
            .map(|v| Variant::parse(v.trim()).ok_or_else(|| Failure::Config(format!("unknown variant {v:?}"))))
            .collect::<Result<_, _>>()?
    };
    let ds = open_dataset(&cli.data)?;
    let root = out.clone().unwrap_or_else(|| cli.data.clone());
    let grid = (ds.manifest.n_z, ds.manifest.padded_cols);
    let hash = dataset_hash(&cli.data)?;
    let train_set = ds.read_samples(&ds.manifest.train_ids)?;
    let test_set = ds.read_samples(&ds.manifest.test_ids)?;
    for v in variants {
        let id = match (model_id, v.name()) {
            (Some(m), _) if !variant.contains(',') && variant != "all" => m.clone(),
            (Some(m), n) => format!("{m}-{n}"),
            (None, n) => format!("fnn-{n}"),
        };
        log::info!("training {id} on {} samples for {} updates", train_set.len(), cfg.train.updates);
        let trained = deeponet::fit_variant(&train_set, v, &cfg.net, &cfg.train, grid)?;
        let desc = deeponet::ModelDescriptor {
            model_id: id.clone(),
            net: cfg.net.clone(),
            branch_widths: trained.model.branch.widths(),
            trunk_widths: trained.model.trunk.widths(),
            parameter_count: trained.model.parameter_count(),
            encoding: trained.encoding.clone(),
            train: cfg.train.clone(),
            grid,
            dataset_hash: hash.clone(),
            history: trained.history.clone(),
        };
        let models = root.join("models");
        deeponet::save_checkpoint(&models, &trained.model, &desc)?;
        write_snapshot(&models, &format!("{id}.config.json"), "train", &cfg)?;
        let preds = trained.predict(&test_set, grid, &id)?;
        let path = root.join("predictions").join(format!("{id}.bin"));
        store::check_prediction_ids(&preds, &ds.manifest.test_ids)?;
        store::write_predictions_file(&path, &preds)?;
        let last = trained.history.last().map_or(f64::NAN, |p| p.loss);
        println!("{id}: {} parameters, final loss {last:.4e}, {:.1} s, predictions {}", desc.parameter_count, trained.seconds, path.display());
    }
    Ok(())
}

fn cmd_eval(cli: &Cli, cfg: RunConfig, model_ids: &[String], files: &[PathBuf], echo: bool) -> Result<(), Failure> {
    let ds = open_dataset(&cli.data)?;
    let hash = dataset_hash(&cli.data)?;
    let test_set = ds.read_samples(&ds.manifest.test_ids)?;
    let mut sets = Vec::new();
    if echo {
        let set = eval::echo_predictions(&test_set, "echo")?;
        ds.write_predictions(&set)?;
        sets.push(set);
    }
    for id in model_ids {
        sets.push(store::read_predictions(&ds.prediction_path(id))?);
    }
    for f in files {
        sets.push(store::read_predictions(f)?);
    }
    if sets.is_empty() {
        return Err(Failure::Config("nothing to evaluate: pass --model-id, --predictions or --echo".into()));
    }
    let dir = cli.data.join("reports");
    std::fs::create_dir_all(&dir).map_err(|e| io_failure(&dir, e))?;
    let mut reports = Vec::new();
    for set in &sets {
        store::check_prediction_ids(set, &ds.manifest.test_ids)?;
        let report = eval::evaluate(set, &test_set, &hash)?;
        let path = dir.join(format!("{}.json", report.model_id));
        std::fs::write(&path, report.to_json()).map_err(|e| io_failure(&path, e))?;
        write_snapshot(&dir, &format!("{}.config.json", report.model_id), "eval", &cfg)?;
        reports.push(report);
    }
    let table = EvalReport::table(&reports);
    let path = dir.join("summary.txt");
    std::fs::write(&path, &table).map_err(|e| io_failure(&path, e))?;
    print!("{table}");
    Ok(())
}

fn cmd_plot(cli: &Cli, cfg: RunConfig, sample: Option<u64>, model_id: &Option<String>, out: &Option<PathBuf>) -> Result<(), Failure> {
    let ds = open_dataset(&cli.data)?;
    let id = match sample {
        Some(id) => id,
        None => *ds.manifest.test_ids.first().or(ds.manifest.sample_ids.first()).ok_or_else(|| Failure::Io("dataset has no samples".into()))?,
    };
    let rec = ds.read_sample(id)?;
    let dir = out.clone().unwrap_or_else(|| cli.data.join("exports"));
    std::fs::create_dir_all(&dir).map_err(|e| io_failure(&dir, e))?;
    let mut written = 0;
    for kind in MapKind::ALL {
        let Some(values) = rec.physical(kind) else { continue };
        let range = match kind {
            MapKind::Dilatation => Some(ds.manifest.dilatation_range()),
            MapKind::Distensibility => Some(ds.manifest.distensibility_range()),
            MapKind::ThetaStar | MapKind::InsultCe | MapKind::InsultDelta => Some((0.0, 1.0)),
            _ => None,
        };
        maps::write_heat_png(&dir.join(format!("sample_{id:05}_{}.png", kind.name())), &values.mapv(|v| v as f64), range)?;
        written += 1;
    }
    if let Some(m) = model_id {
        let set = store::read_predictions(&ds.prediction_path(m))?;
        let pred = set
            .predictions
            .iter()
            .find(|p| p.sample_id == id)
            .ok_or_else(|| Failure::Io(format!("model {m} has no prediction for sample {id}")))?;
        let errors = eval::abs_error_maps(pred, &rec)?;
        for (insult, (field, err)) in Insult::BOTH.into_iter().zip([&pred.theta_ce, &pred.theta_delta].into_iter().zip(&errors)) {
            let stem = format!("{m}_{id:05}_{}", insult.name());
            maps::write_heat_png(&dir.join(format!("{stem}_pred.png")), &field.mapv(|v| v as f64), Some((0.0, 1.0)))?;
            maps::write_heat_png(&dir.join(format!("{stem}_error.png")), err, None)?;
            written += 2;
        }
    }
    write_snapshot(&dir, "effective_config.json", "plot", &cfg)?;
    println!("wrote {written} PNGs to {}", dir.display());
    Ok(())
}

fn run(cli: &Cli) -> Result<(), Failure> {
    let cfg = layered_config(cli.config.as_deref(), &cli.sets)?;
    match &cli.command {
        Command::Generate { out, profiles, combos } => cmd_generate(cli, cfg, out, *profiles, *combos),
        Command::Train { variant, updates, model_id, out } => cmd_train(cli, cfg, variant, *updates, model_id, out),
        Command::Eval { model_ids, files, echo } => cmd_eval(cli, cfg, model_ids, files, *echo),
        Command::Plot { sample, model_id, out } => cmd_plot(cli, cfg, *sample, model_id, out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match taa_core::par::with_workers(cli.workers, || run(&cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn set_overrides_nested_keys() {
        let cfg = layered_config(None, &["train.updates=7".into(), "generate.grf.surface_fraction=0.3".into()]).unwrap();
        assert_eq!(cfg.train.updates, 7);
        assert_eq!(cfg.generate.grf.surface_fraction, 0.3);
    }

    #[test]
    fn cli_beats_file_beats_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"train": {"updates": 11, "batch_size": 4}}"#).unwrap();
        let cfg = layered_config(Some(&path), &["train.updates=12".into()]).unwrap();
        assert_eq!(cfg.train.updates, 12);
        assert_eq!(cfg.train.batch_size, 4);
        assert_eq!(cfg.train.learning_rate, TrainConfig::default().learning_rate);
    }

    #[test]
    fn unknown_keys_are_config_errors() {
        assert!(matches!(layered_config(None, &["train.bogus=1".into()]), Err(Failure::Config(_))));
        assert!(matches!(layered_config(None, &["nokey".into()]), Err(Failure::Config(_))));
        assert!(matches!(layered_config(None, &["train.updates.x=1".into()]), Err(Failure::Config(_))));
    }

    #[test]
    fn wall_overrides_go_into_the_map() {
        let cfg = layered_config(None, &["generate.wall.c_e=80".into()]).unwrap();
        assert_eq!(cfg.generate.wall.get("c_e"), Some(&80.0));
    }
}
