//! `rbtk`: simulate scenes, build datasets, train and evaluate beam
//! predictors.
//!
//! Exit codes: 0 success, 1 configuration or usage error (including a
//! missing input or checkpoint), 2 I/O or malformed data, 3 numeric failure
//! (for example diverged training).
//!
//! Human-readable progress goes to stderr; stdout carries one JSON object
//! per command naming the output directory and its artifacts.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use rbtk::dataset::{simulate_scene, Dataset, SceneRecord, SequenceConfig, SimulationConfig, SCENE_CUBES_FILE};
use rbtk::eval::EvalReport;
use rbtk::io::write_cube;
use rbtk::models::{write_loss_csv, E2eConfig, E2eModel, ModelKind, TxIdConfig, TxIdModel};
use rbtk::nn::{load_checkpoint, read_manifest, save_checkpoint, TrainConfig};
use rbtk::pipeline::{
    e2e_config_for, e2e_features, init_threads, predict_e2e, predict_hold, predict_txid, prepared_maps, train_e2e,
    train_txid, txid_config_for,
};
use rbtk::scenario::ScenarioConfig;
use rbtk::tracker::TrackerConfig;
use rbtk::{Error, Result};

const RUN_MANIFEST: &str = "run.json";
const LOCK_FILE: &str = ".rbtk.lock";
const CHECKPOINT_STEM: &str = "model";

#[derive(Parser)]
#[command(name = "rbtk", version, about = "Radar-aided beam tracking workbench")]
struct Cli {
    /// Worker threads; 0 uses one per core.
    #[arg(long, global = true, env = "RBTK_THREADS", default_value_t = 0)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render and label one scene.
    Simulate(SimulateArgs),
    /// Window and split simulated scenes into a dataset.
    MakeDataset(MakeDatasetArgs),
    /// Train a beam predictor on a dataset.
    Train(TrainArgs),
    /// Top-k accuracy and confusion matrices on the test split.
    Eval(EvalArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Simulation (or bare scenario) configuration, JSON.
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Do not store the raw radar cubes.
    #[arg(long)]
    no_cubes: bool,
}

#[derive(Args)]
struct MakeDatasetArgs {
    /// Scene directories written by `simulate`.
    #[arg(long = "in", num_args = 1.., required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Keep only windows whose optimal beam changes.
    #[arg(long)]
    filter_changing: bool,
    #[arg(long, default_value_t = 0.7)]
    train_ratio: f64,
    #[arg(long, default_value_t = 10)]
    length: usize,
    #[arg(long, default_value_t = 1)]
    stride: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum LearnedModel {
    Txid,
    E2e,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, value_enum)]
    model: LearnedModel,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    decay_gamma: Option<f64>,
    #[arg(long)]
    decay_every: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Consecutive samples shuffled as one unit (end-to-end model).
    #[arg(long, default_value_t = 8)]
    block: usize,
    /// JSON object overriding fields of the model architecture.
    #[arg(long)]
    model_config: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Baseline {
    Hold,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Training output directories (or checkpoint stems).
    #[arg(long, num_args = 0..)]
    models: Vec<PathBuf>,
    #[arg(long, value_enum)]
    baseline: Option<Baseline>,
    /// Observation lengths: `a..b` (inclusive), a comma list or one value.
    #[arg(long, default_value = "1..10")]
    t_obs: String,
    /// Observation length for the confusion matrices; defaults to 5 when
    /// evaluated, else the largest.
    #[arg(long)]
    confusion_t_obs: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Serialize)]
struct RunManifest {
    command: &'static str,
    version: &'static str,
    config: Value,
    seeds: Vec<u64>,
    /// sha256 of every file the command wrote, by name.
    artifacts: BTreeMap<String, String>,
    /// sha256 over the sorted (name, sha256) list of the inputs.
    input_sha256: String,
    wall_clock_s: f64,
}

/// Exclusive claim on an output directory for the life of a command.
struct OutputLock(PathBuf);

impl OutputLock {
    fn acquire(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(Self(path))
            }
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => Err(Error::io(
                &path,
                io::Error::new(e.kind(), "output directory is in use by another command"),
            )),
            Err(e) => Err(Error::io(&path, e)),
        }
    }
}

impl Drop for OutputLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.0);
    }
}

/// Writer that hashes everything passing through.
struct HashWriter<W> {
    inner: W,
    hash: Sha256,
}

impl<W: Write> Write for HashWriter<W> {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        let n = self.inner.write(buf)?;
        self.hash.update(&buf[..n]);
        Ok(n)
    }

    fn flush(&mut self) -> io::Result<()> {
        self.inner.flush()
    }
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

fn input_hash(inputs: &[(String, String)]) -> String {
    let mut sorted = inputs.to_vec();
    sorted.sort();
    let mut h = Sha256::new();
    for (name, sha) in sorted {
        h.update(name.as_bytes());
        h.update([0]);
        h.update(sha.as_bytes());
        h.update(b"\n");
    }
    hex::encode(h.finalize())
}

/// Reads a required input file; a missing file is a configuration error.
fn read_input(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| match e.kind() {
        io::ErrorKind::NotFound => Error::config(format!("{}: file not found", path.display())),
        _ => Error::io(path, e),
    })
}

fn require_dir_file(dir: &Path, name: &str) -> Result<PathBuf> {
    let p = dir.join(name);
    if !p.is_file() {
        return Err(Error::config(format!("{}: file not found", p.display())));
    }
    Ok(p)
}

fn write_run(dir: &Path, run: &RunManifest) -> Result<PathBuf> {
    let mut json = serde_json::to_vec_pretty(run)?;
    json.push(b'\n');
    let path = dir.join(RUN_MANIFEST);
    std::fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

fn finish(command: &'static str, dir: &Path, run: RunManifest) -> Result<Value> {
    let manifest = write_run(dir, &run)?;
    Ok(json!({
        "command": command,
        "out": dir,
        "manifest": manifest,
        "artifacts": run.artifacts.keys().map(|k| dir.join(k)).collect::<Vec<_>>(),
    }))
}

fn parse_sim_config(bytes: &[u8], path: &Path) -> Result<SimulationConfig> {
    match serde_json::from_slice::<SimulationConfig>(bytes) {
        Ok(c) => Ok(c),
        Err(full) => serde_json::from_slice::<ScenarioConfig>(bytes)
            .map(SimulationConfig::new)
            .map_err(|_| Error::config(format!("{}: {full}", path.display()))),
    }
}

fn cmd_simulate(a: &SimulateArgs) -> Result<Value> {
    let t0 = Instant::now();
    let bytes = read_input(&a.scenario)?;
    let mut cfg = parse_sim_config(&bytes, &a.scenario)?;
    if let Some(seed) = a.seed {
        cfg.scenario.seed = seed;
    }
    cfg.validate()?;
    let _lock = OutputLock::acquire(&a.out)?;

    let mut extra = BTreeMap::new();
    let record = if a.no_cubes {
        simulate_scene(&cfg, |_| Ok(()))?
    } else {
        let path = a.out.join(SCENE_CUBES_FILE);
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = HashWriter {
            inner: BufWriter::new(file),
            hash: Sha256::new(),
        };
        let record = simulate_scene(&cfg, |cube| write_cube(&mut w, cube).map_err(|e| Error::io(&path, e)))?;
        w.flush().map_err(|e| Error::io(&path, e))?;
        extra.insert(SCENE_CUBES_FILE.to_string(), hex::encode(w.hash.finalize()));
        record
    };
    let manifest = record.write(&a.out, extra)?;
    eprintln!(
        "simulated {} frames of a {} scene into {}",
        manifest.n_frames,
        cfg.scenario.preset.name(),
        a.out.display()
    );

    let mut artifacts = manifest.files;
    artifacts.insert("scene.json".to_string(), sha256_file(&a.out.join("scene.json"))?);
    let run = RunManifest {
        command: "simulate",
        version: env!("CARGO_PKG_VERSION"),
        config: json!({ "simulation": cfg, "cubes": !a.no_cubes }),
        seeds: vec![cfg.scenario.seed],
        artifacts,
        input_sha256: input_hash(&[("scenario".into(), hex::encode(Sha256::digest(&bytes)))]),
        wall_clock_s: t0.elapsed().as_secs_f64(),
    };
    finish("simulate", &a.out, run)
}

fn cmd_make_dataset(a: &MakeDatasetArgs) -> Result<Value> {
    let t0 = Instant::now();
    if !(a.train_ratio > 0.0 && a.train_ratio < 1.0) {
        return Err(Error::config(format!("train ratio must lie in (0, 1), got {}", a.train_ratio)));
    }
    let seq = SequenceConfig {
        length: a.length,
        stride: a.stride,
        keep_changing_only: a.filter_changing,
    };
    let mut inputs = Vec::new();
    let mut scenes = Vec::new();
    for dir in &a.inputs {
        let p = require_dir_file(dir, "scene.json")?;
        inputs.push((dir.display().to_string(), sha256_file(&p)?));
        scenes.push(SceneRecord::read(dir)?);
    }
    let seeds = scenes.iter().map(|s| s.config.scenario.seed).collect();
    let _lock = OutputLock::acquire(&a.out)?;
    let mut ds = Dataset::from_scenes(scenes, &seq, a.train_ratio)?;
    let manifest = ds.write(&a.out)?.clone();
    let c = manifest.counts;
    if c.sequences == 0 {
        eprintln!("warning: no sequences kept; the dataset is empty");
    }
    eprintln!(
        "{} frames, {} sequences: {} train, {} test, {} dropped at the boundary",
        c.frames, c.sequences, c.train, c.test, c.dropped
    );

    let mut artifacts = manifest.files.clone();
    artifacts.insert("manifest.json".to_string(), sha256_file(&a.out.join("manifest.json"))?);
    let run = RunManifest {
        command: "make-dataset",
        version: env!("CARGO_PKG_VERSION"),
        config: json!({ "inputs": a.inputs, "sequence": seq, "train_ratio": a.train_ratio, "counts": c }),
        seeds,
        artifacts,
        input_sha256: input_hash(&inputs),
        wall_clock_s: t0.elapsed().as_secs_f64(),
    };
    finish("make-dataset", &a.out, run)
}

/// Overlays the keys of a JSON object file onto `base`.
fn with_overrides<T: Serialize + serde::de::DeserializeOwned>(base: T, path: Option<&Path>) -> Result<T> {
    let Some(path) = path else { return Ok(base) };
    let patch: Value = serde_json::from_slice(&read_input(path)?)
        .map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
    let Value::Object(patch) = patch else {
        return Err(Error::config(format!("{}: expected a JSON object", path.display())));
    };
    let mut v = serde_json::to_value(base)?;
    let obj = v.as_object_mut().ok_or_else(|| Error::config("model configuration is not an object"))?;
    for (k, val) in patch {
        if !obj.contains_key(&k) {
            return Err(Error::config(format!("{}: unknown field {k:?}", path.display())));
        }
        obj.insert(k, val);
    }
    serde_json::from_value(v).map_err(|e| Error::config(format!("{}: {e}", path.display())))
}

fn read_dataset(dir: &Path) -> Result<(Dataset, String)> {
    let manifest = require_dir_file(dir, "manifest.json")?;
    let hash = sha256_file(&manifest)?;
    Ok((Dataset::read(dir)?, hash))
}

fn cmd_train(a: &TrainArgs) -> Result<Value> {
    let t0 = Instant::now();
    let (ds, ds_hash) = read_dataset(&a.dataset)?;
    let mut tc = match a.model {
        LearnedModel::Txid => TrainConfig::txid_default(),
        LearnedModel::E2e => TrainConfig::e2e_default(),
    };
    tc.epochs = a.epochs.unwrap_or(tc.epochs);
    tc.lr = a.lr.unwrap_or(tc.lr);
    tc.batch_size = a.batch_size.unwrap_or(tc.batch_size);
    tc.decay_gamma = a.decay_gamma.unwrap_or(tc.decay_gamma);
    tc.decay_every_epochs = a.decay_every.unwrap_or(tc.decay_every_epochs);
    tc.seed = a.seed.unwrap_or(tc.seed);
    tc.validate()?;
    let tracker = TrackerConfig::for_radar(&ds.manifest.radar);
    let _lock = OutputLock::acquire(&a.out)?;
    let stem = a.out.join(CHECKPOINT_STEM);
    let overrides = a.model_config.as_deref();

    let (kind, model_cfg, history) = match a.model {
        LearnedModel::Txid => {
            let cfg: TxIdConfig = with_overrides(txid_config_for(&ds), overrides)?;
            let (m, h) = train_txid(&ds, cfg.clone(), &tc, &tracker)?;
            let cfg = serde_json::to_value(cfg)?;
            save_checkpoint(&stem, &m, ModelKind::Txid.name(), cfg.clone(), Some(&tc))?;
            (ModelKind::Txid, cfg, h)
        }
        LearnedModel::E2e => {
            let cfg: E2eConfig = with_overrides(e2e_config_for(&ds), overrides)?;
            let maps = prepared_maps(&ds);
            let (m, h) = train_e2e(&ds, &maps, cfg.clone(), &tc, a.block)?;
            let cfg = serde_json::to_value(cfg)?;
            save_checkpoint(&stem, &m, ModelKind::E2e.name(), cfg.clone(), Some(&tc))?;
            (ModelKind::E2e, cfg, h)
        }
    };
    let loss_path = a.out.join("loss.csv");
    let mut buf = Vec::new();
    write_loss_csv(&mut buf, &history).map_err(|e| Error::io(&loss_path, e))?;
    std::fs::write(&loss_path, buf).map_err(|e| Error::io(&loss_path, e))?;
    if let Some(last) = history.last() {
        eprintln!(
            "trained {} for {} epochs, final mean loss {:.4}",
            kind.name(),
            history.len(),
            last.mean_loss
        );
    }

    let mut artifacts = BTreeMap::new();
    for name in ["model.bin", "model.json", "loss.csv"] {
        artifacts.insert(name.to_string(), sha256_file(&a.out.join(name))?);
    }
    let run = RunManifest {
        command: "train",
        version: env!("CARGO_PKG_VERSION"),
        config: json!({
            "dataset": a.dataset,
            "model": kind,
            "model_config": model_cfg,
            "train": tc,
            "tracker": tracker,
            "block": a.block,
        }),
        seeds: vec![tc.seed],
        artifacts,
        input_sha256: input_hash(&[("dataset".into(), ds_hash)]),
        wall_clock_s: t0.elapsed().as_secs_f64(),
    };
    finish("train", &a.out, run)
}

fn parse_t_obs(spec: &str) -> Result<Vec<usize>> {
    let bad = || Error::config(format!("invalid observation lengths {spec:?}"));
    let num = |s: &str| s.trim().parse::<usize>().map_err(|_| bad());
    let mut v: Vec<usize> = if let Some((lo, hi)) = spec.split_once("..") {
        let hi = hi.strip_prefix('=').unwrap_or(hi);
        (num(lo)?..=num(hi)?).collect()
    } else {
        spec.split(',').map(num).collect::<Result<_>>()?
    };
    v.sort_unstable();
    v.dedup();
    if v.is_empty() || v[0] == 0 {
        return Err(bad());
    }
    Ok(v)
}

/// Checkpoint stem for a training directory or an explicit stem.
fn checkpoint_stem(p: &Path) -> Result<PathBuf> {
    let stem = if p.is_dir() {
        p.join(CHECKPOINT_STEM)
    } else {
        p.with_extension("")
    };
    if !stem.with_extension("json").is_file() || !stem.with_extension("bin").is_file() {
        return Err(Error::config(format!("checkpoint not found: {}", p.display())));
    }
    Ok(stem)
}

fn cmd_eval(a: &EvalArgs) -> Result<Value> {
    let t0 = Instant::now();
    let t_obs = parse_t_obs(&a.t_obs)?;
    if a.models.is_empty() && a.baseline.is_none() {
        return Err(Error::config("nothing to evaluate: give --models and/or --baseline"));
    }
    let confusion_t = a
        .confusion_t_obs
        .unwrap_or(if t_obs.contains(&5) { 5 } else { *t_obs.last().expect("non-empty") });
    if !t_obs.contains(&confusion_t) {
        return Err(Error::config(format!("confusion T_o {confusion_t} is not among the evaluated lengths")));
    }
    let stems = a.models.iter().map(|p| checkpoint_stem(p)).collect::<Result<Vec<_>>>()?;
    let (ds, ds_hash) = read_dataset(&a.dataset)?;
    let test = &ds.split.test;
    if test.is_empty() {
        return Err(Error::Degenerate("the dataset has no test sequences".into()));
    }
    let n_beams = ds.manifest.n_beams;
    let tracker = TrackerConfig::for_radar(&ds.manifest.radar);
    let mut inputs = vec![("dataset".to_string(), ds_hash)];
    let _lock = OutputLock::acquire(&a.out)?;

    let mut report = EvalReport::new(n_beams, test.len(), &t_obs);
    if a.baseline.is_some() {
        report.add_model("hold", test, Some(confusion_t), |t| predict_hold(test, t, n_beams))?;
    }
    let mut names: Vec<String> = Vec::new();
    let mut seeds = Vec::new();
    for stem in &stems {
        let m = read_manifest(stem)?;
        if m.dtype != "f32" {
            return Err(Error::config(format!("{}: only f32 checkpoints can be evaluated", stem.display())));
        }
        let kind: ModelKind = m.kind.parse()?;
        let name = match names.iter().filter(|n| n.starts_with(kind.name())).count() {
            0 => kind.name().to_string(),
            k => format!("{}_{}", kind.name(), k + 1),
        };
        inputs.push((name.clone(), m.weights_sha256.clone()));
        seeds.extend(m.train_config.as_ref().map(|t| t.seed));
        let bad_cfg = |e: serde_json::Error| Error::config(format!("{}: {e}", stem.display()));
        match kind {
            ModelKind::Txid => {
                let cfg: TxIdConfig = serde_json::from_value(m.model_config.clone()).map_err(bad_cfg)?;
                let mut model = TxIdModel::<f32>::zeros(cfg);
                load_checkpoint(stem, &mut model)?;
                report.add_model(&name, test, Some(confusion_t), |t| predict_txid(&model, &ds, test, t, &tracker))?;
            }
            ModelKind::E2e => {
                let cfg: E2eConfig = serde_json::from_value(m.model_config.clone()).map_err(bad_cfg)?;
                let mut model = E2eModel::<f32>::zeros(cfg)?;
                load_checkpoint(stem, &mut model)?;
                let maps = prepared_maps(&ds);
                let features = e2e_features(&model, &maps, test)?;
                report.add_model(&name, test, Some(confusion_t), |t| predict_e2e(&model, &features, test, t))?;
            }
            ModelKind::Hold => return Err(Error::config(format!("{}: hold has no checkpoint", stem.display()))),
        }
        eprintln!("evaluated {name} from {}", stem.display());
        names.push(name);
    }
    let artifacts: BTreeMap<String, String> = report.write_all(&a.out)?.into_iter().collect();
    eprintln!(
        "{} test sequences, T_o {:?}, confusion at T_o = {confusion_t}",
        test.len(),
        t_obs
    );

    let run = RunManifest {
        command: "eval",
        version: env!("CARGO_PKG_VERSION"),
        config: json!({
            "dataset": a.dataset,
            "models": a.models,
            "baseline": a.baseline.map(|_| "hold"),
            "t_obs": t_obs,
            "confusion_t_obs": confusion_t,
        }),
        seeds,
        artifacts,
        input_sha256: input_hash(&inputs),
        wall_clock_s: t0.elapsed().as_secs_f64(),
    };
    finish("eval", &a.out, run)
}

fn run(cli: &Cli) -> Result<Value> {
    init_threads(cli.threads)?;
    match &cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::MakeDataset(a) => cmd_make_dataset(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(&cli) {
        Ok(v) => {
            println!("{v}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
