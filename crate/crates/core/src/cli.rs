//! The `pcim` command-line driver.
//!
//! Subcommands run the pipeline stage by stage: `gen-data`, `train`,
//! `attribute`, `evaluate` and `compare`. Every output directory receives a
//! `run_manifest.json` describing how it was produced.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::attribution::{attribute, AttributionConfig};
use crate::baselines::{IgConfig, RiseConfig};
use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::classifier::{evaluate_classifier, train, TrainConfig};
use crate::data::{
    fingerprint, generate_synthetic, load_image_dir, split, undersample_balance, write_dataset, LabeledImage,
    SynthConfig, MANIFEST_FILE,
};
use crate::error::{Error, Result};
use crate::eval::{cluster_methods, evaluate_image, similarity_matrix, EvalReport, MethodSummary};
use crate::image::{AttributionMap, Method};
use crate::model::{Model, ScoreKind};
use crate::network::{build_minivgg, Network};
use crate::optim::SgdConfig;
use crate::pcim::FitConfig;

pub const RUN_MANIFEST: &str = "run_manifest.json";
pub const SPLITS_FILE: &str = "splits.json";
pub const METRICS_FILE: &str = "metrics.json";
pub const REPORT_FILE: &str = "report.json";
pub const TABLE_FILE: &str = "table.txt";
pub const SIMILARITY_FILE: &str = "similarity.csv";
pub const LINKAGE_FILE: &str = "linkage.csv";
pub const THREADS_ENV: &str = "PCIM_THREADS";

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "pcim", version, about = "Pixel attribution maps for grayscale image classifiers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(untagged)]
pub enum Command {
    /// Write a synthetic labeled dataset with masks.
    GenData(GenDataArgs),
    /// Train MiniVGG on a dataset directory.
    Train(TrainArgs),
    /// Compute attribution maps for one split.
    Attribute(AttributeArgs),
    /// Score attribution maps for fidelity and localization.
    Evaluate(EvaluateArgs),
    /// Pairwise SSIM between methods and their average-linkage clustering.
    Compare(CompareArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::GenData(_) => "gen-data",
            Command::Train(_) => "train",
            Command::Attribute(_) => "attribute",
            Command::Evaluate(_) => "evaluate",
            Command::Compare(_) => "compare",
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct GenDataArgs {
    #[arg(long, default_value_t = 32)]
    pub size: usize,
    #[arg(long, default_value_t = 400)]
    pub per_class: usize,
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u8).range(2..=3))]
    pub classes: u8,
    /// Half-width of the uniform pixel noise.
    #[arg(long, default_value_t = 0.05)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 60, value_parser = clap::value_parser!(u64).range(1..))]
    pub epochs: u64,
    /// Seeds weight initialization and batch shuffling.
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Seeds class balancing and the train/validation/holdout split.
    #[arg(long, default_value_t = 7)]
    pub split_seed: u64,
    /// Capped at the training split size.
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodChoice {
    Pcim,
    Saliency,
    Rise,
    Gradcam,
    Gradcampp,
    Intgrads,
    Random,
    All,
}

impl MethodChoice {
    fn methods(self) -> Vec<Method> {
        match self {
            MethodChoice::Pcim => vec![Method::Pcim],
            MethodChoice::Saliency => vec![Method::Saliency],
            MethodChoice::Rise => vec![Method::Rise],
            MethodChoice::Gradcam => vec![Method::GradCam],
            MethodChoice::Gradcampp => vec![Method::GradCamPp],
            MethodChoice::Intgrads => vec![Method::IntGrads],
            MethodChoice::Random => vec![Method::Random],
            MethodChoice::All => Method::ALL.to_vec(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitChoice {
    Train,
    Validation,
    Holdout,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreChoice {
    Probability,
    Logit,
}

impl From<ScoreChoice> for ScoreKind {
    fn from(s: ScoreChoice) -> Self {
        match s {
            ScoreChoice::Probability => ScoreKind::Probability,
            ScoreChoice::Logit => ScoreKind::Logit,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct AttributeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value_t = MethodChoice::All)]
    pub method: MethodChoice,
    #[arg(long, value_enum, default_value_t = SplitChoice::Holdout)]
    pub split: SplitChoice,
    /// Only the first N images of the split.
    #[arg(long)]
    pub limit: Option<usize>,
    #[arg(long, default_value_t = 200, value_parser = clap::value_parser!(u64).range(1..))]
    pub pcim_steps: u64,
    #[arg(long, default_value_t = 0.5)]
    pub pcim_lr: f64,
    #[arg(long, default_value_t = 0.9)]
    pub pcim_momentum: f64,
    #[arg(long, value_enum, default_value_t = ScoreChoice::Probability)]
    pub pcim_loss: ScoreChoice,
    #[arg(long, default_value_t = 128, value_parser = clap::value_parser!(u64).range(1..))]
    pub ig_steps: u64,
    #[arg(long, default_value_t = 4000, value_parser = clap::value_parser!(u64).range(1..))]
    pub rise_masks: u64,
    #[arg(long, default_value_t = 7, value_parser = clap::value_parser!(u64).range(1..))]
    pub rise_grid: u64,
    #[arg(long, default_value_t = 0.5)]
    pub rise_keep: f64,
    #[arg(long, default_value_t = 0)]
    pub rise_seed: u64,
    #[arg(long, default_value_t = 0)]
    pub random_seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub maps: PathBuf,
    /// Also compute mass and rank accuracy; every image needs a mask.
    #[arg(long)]
    pub localization: bool,
    /// Fraction of pixels perturbed per curve step.
    #[arg(long, default_value_t = 0.01)]
    pub step: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct CompareArgs {
    #[arg(long)]
    pub maps: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

/// Written next to every output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub flags: serde_json::Value,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: BTreeMap<String, PathBuf>,
    pub outputs: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint_sha256: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset_fingerprint: Option<String>,
    pub tool_version: String,
}

impl RunManifest {
    fn new(command: &Command, out: &Path) -> Self {
        Self {
            subcommand: command.name().into(),
            flags: serde_json::to_value(command).expect("flags serialize"),
            seeds: BTreeMap::new(),
            inputs: BTreeMap::new(),
            outputs: out.to_path_buf(),
            checkpoint_sha256: None,
            dataset_fingerprint: None,
            tool_version: env!("CARGO_PKG_VERSION").into(),
        }
    }

    fn write(&self) -> Result<()> {
        let path = self.outputs.join(RUN_MANIFEST);
        write_text(&path, &(serde_json::to_string_pretty(self).expect("manifest serializes") + "\n"))
    }
}

/// Image ids of each split, stored with the checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitIds {
    pub split_seed: u64,
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub holdout: Vec<String>,
}

impl SplitIds {
    fn get(&self, s: SplitChoice) -> &[String] {
        match s {
            SplitChoice::Train => &self.train,
            SplitChoice::Validation => &self.validation,
            SplitChoice::Holdout => &self.holdout,
        }
    }
}

/// Maps a library error to a process exit code.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => EXIT_USAGE,
        Error::Numeric { .. } => EXIT_NUMERIC,
        _ => EXIT_DATA,
    }
}

/// Reads `PCIM_THREADS` and sizes the global pool; 0 or unset means automatic.
pub fn configure_threads() -> Result<()> {
    let n = match std::env::var(THREADS_ENV) {
        Err(_) => 0,
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map_err(|_| Error::config(format!("{THREADS_ENV} must be a non-negative integer, got '{v}'")))?,
    };
    // A second call in the same process keeps the first pool.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::GenData(a) => gen_data(&cli.command, a),
        Command::Train(a) => train_cmd(&cli.command, a),
        Command::Attribute(a) => attribute_cmd(&cli.command, a),
        Command::Evaluate(a) => evaluate_cmd(&cli.command, a),
        Command::Compare(a) => compare_cmd(&cli.command, a),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serializable") + "\n"
}

fn gen_data(cmd: &Command, a: &GenDataArgs) -> Result<()> {
    let cfg = SynthConfig {
        image_size: a.size,
        samples_per_class: a.per_class,
        classes: a.classes as usize,
        noise: a.noise as f32,
        seed: a.seed,
        ..SynthConfig::default()
    };
    let images = generate_synthetic(&cfg)?;
    write_dataset(&a.out, &images)?;
    let mut rm = RunManifest::new(cmd, &a.out);
    rm.seeds.insert("data".into(), a.seed);
    rm.dataset_fingerprint = Some(fingerprint(&images));
    rm.write()?;
    println!("wrote {} images to {}", images.len(), a.out.display());
    Ok(())
}

fn load_dataset(dir: &Path) -> Result<Vec<LabeledImage>> {
    if !dir.is_dir() {
        return Err(Error::data(format!("data directory {} does not exist", dir.display())));
    }
    let manifest = dir.join(MANIFEST_FILE);
    // Labels are bounded by the class count; any count that covers them will do here.
    let images = load_image_dir(dir, &manifest, usize::MAX)?;
    let classes = images.iter().map(|s| s.label + 1).max().unwrap_or(0);
    if classes < 2 {
        return Err(Error::data(format!("{} holds a single class", manifest.display())));
    }
    Ok(images)
}

fn train_cmd(cmd: &Command, a: &TrainArgs) -> Result<()> {
    let images = load_dataset(&a.data)?;
    let classes = images.iter().map(|s| s.label + 1).max().unwrap();
    let (h, w) = images[0].image.dims();
    let balanced = undersample_balance(images, a.split_seed)?;
    let splits = split(balanced, a.split_seed)?;
    let config = TrainConfig {
        epochs: a.epochs as usize,
        batch_size: a.batch_size.min(splits.train.len()),
        sgd: SgdConfig {
            learning_rate: a.lr as f32,
            momentum: a.momentum as f32,
            ..SgdConfig::default()
        },
        seed: a.seed,
    };
    let net = build_minivgg(h, w, classes, a.seed)?;
    let ck = train(net, &splits, &config)?;
    let metrics = evaluate_classifier(&ck.network, &splits.holdout)?;
    save_checkpoint(&ck, &a.out)?;
    let ids = |set: &[LabeledImage]| set.iter().map(|s| s.id.clone()).collect();
    let split_ids = SplitIds {
        split_seed: a.split_seed,
        train: ids(&splits.train),
        validation: ids(&splits.validation),
        holdout: ids(&splits.holdout),
    };
    write_text(&a.out.join(SPLITS_FILE), &to_json(&split_ids))?;
    write_text(&a.out.join(METRICS_FILE), &to_json(&metrics))?;
    let mut rm = RunManifest::new(cmd, &a.out);
    rm.seeds.insert("train".into(), a.seed);
    rm.seeds.insert("split".into(), a.split_seed);
    rm.inputs.insert("data".into(), a.data.clone());
    rm.checkpoint_sha256 = Some(ck.network.checksum());
    rm.dataset_fingerprint = Some(ck.manifest.dataset_fingerprint.clone());
    rm.write()?;
    println!(
        "best epoch {} (validation loss {:.5}), holdout accuracy {:.4}",
        ck.epoch + 1,
        ck.validation_loss,
        metrics.accuracy
    );
    Ok(())
}

/// A frozen network, its split ids and the dataset, checked against each other.
struct Loaded {
    network: Network,
    splits: SplitIds,
    images: BTreeMap<String, LabeledImage>,
    fingerprint: String,
}

fn load_for_inference(checkpoint: &Path, data: &Path) -> Result<Loaded> {
    let ck = load_checkpoint(checkpoint)?;
    let mut network = ck.network;
    network.freeze();
    let path = checkpoint.join(SPLITS_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let splits: SplitIds =
        serde_json::from_str(&text).map_err(|e| Error::data(format!("bad {}: {e}", path.display())))?;
    let images: BTreeMap<String, LabeledImage> = load_dataset(data)?.into_iter().map(|s| (s.id.clone(), s)).collect();
    let dims = network.input_dims();
    if let Some(s) = images.values().find(|s| s.image.dims() != dims) {
        return Err(Error::dim(format!(
            "image {} is {:?} but the checkpoint expects {:?}",
            s.id,
            s.image.dims(),
            dims
        )));
    }
    let used: Vec<LabeledImage> = splits
        .train
        .iter()
        .chain(&splits.validation)
        .chain(&splits.holdout)
        .map(|id| {
            images
                .get(id)
                .cloned()
                .ok_or_else(|| Error::data(format!("image {id} from the checkpoint splits is not in {}", data.display())))
        })
        .collect::<Result<_>>()?;
    let fp = fingerprint(&used);
    if fp != ck.manifest.dataset_fingerprint {
        log::warn!(
            "dataset fingerprint {fp} differs from the one the checkpoint was trained on ({})",
            ck.manifest.dataset_fingerprint
        );
    }
    Ok(Loaded {
        network,
        splits,
        images,
        fingerprint: fp,
    })
}

fn map_stem(id: &str, method: Method) -> String {
    format!("{id}_{}", method.name())
}

fn attribute_cmd(cmd: &Command, a: &AttributeArgs) -> Result<()> {
    use rayon::prelude::*;

    let loaded = load_for_inference(&a.checkpoint, &a.data)?;
    let mut ids = loaded.splits.get(a.split).to_vec();
    if let Some(n) = a.limit {
        ids.truncate(n);
    }
    if ids.is_empty() {
        return Err(Error::data("the selected split has no images"));
    }
    let config = AttributionConfig {
        pcim: FitConfig {
            steps: a.pcim_steps as usize,
            learning_rate: a.pcim_lr as f32,
            momentum: a.pcim_momentum as f32,
            loss: a.pcim_loss.into(),
            ..FitConfig::default()
        },
        ig: IgConfig {
            steps: a.ig_steps as usize,
            ..IgConfig::default()
        },
        rise: RiseConfig {
            masks: a.rise_masks as usize,
            grid: a.rise_grid as usize,
            keep_probability: a.rise_keep,
            seed: a.rise_seed,
            ..RiseConfig::default()
        },
        random_seed: a.random_seed,
        ..AttributionConfig::default()
    };
    let methods = a.method.methods();
    create_dir(&a.out)?;
    let before = loaded.network.checksum();
    ids.par_iter().try_for_each(|id| -> Result<()> {
        let s = &loaded.images[id];
        for &m in &methods {
            let map = attribute(&loaded.network, m, id, &s.image, s.label, &config)?;
            let stem = map_stem(id, m);
            map.write_csv(&a.out.join(format!("{stem}.csv")))?;
            map.write_pgm(&a.out.join(format!("{stem}.pgm")))?;
        }
        Ok(())
    })?;
    if loaded.network.checksum() != before {
        return Err(Error::State("network weights changed during attribution".into()));
    }
    let mut rm = RunManifest::new(cmd, &a.out);
    rm.seeds.insert("rise".into(), a.rise_seed);
    rm.seeds.insert("random".into(), a.random_seed);
    rm.seeds.insert("split".into(), loaded.splits.split_seed);
    rm.inputs.insert("checkpoint".into(), a.checkpoint.clone());
    rm.inputs.insert("data".into(), a.data.clone());
    rm.checkpoint_sha256 = Some(before);
    rm.dataset_fingerprint = Some(loaded.fingerprint);
    rm.write()?;
    println!("wrote {} maps to {}", ids.len() * methods.len(), a.out.display());
    Ok(())
}

/// Map CSVs in `dir` keyed by method then image id.
fn read_maps(dir: &Path) -> Result<BTreeMap<Method, BTreeMap<String, AttributionMap>>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out: BTreeMap<Method, BTreeMap<String, AttributionMap>> = BTreeMap::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("csv") {
            continue;
        }
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
        let Some((id, method)) = stem.rsplit_once('_') else { continue };
        let Ok(method) = method.parse::<Method>() else { continue };
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let map = AttributionMap::from_csv(&text, method)
            .map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
        out.entry(method).or_default().insert(id.to_string(), map);
    }
    if out.is_empty() {
        return Err(Error::data(format!("no attribution maps (<id>_<method>.csv) in {}", dir.display())));
    }
    Ok(out)
}

fn evaluate_cmd(cmd: &Command, a: &EvaluateArgs) -> Result<()> {
    use rayon::prelude::*;

    if !(a.step > 0.0 && a.step <= 1.0) {
        return Err(Error::config(format!("--step must be in (0, 1], got {}", a.step)));
    }
    let maps = read_maps(&a.maps)?;
    let loaded = load_for_inference(&a.checkpoint, &a.data)?;
    let curves = a.out.join("curves");
    create_dir(&curves)?;
    let mut methods = Vec::new();
    for (&method, by_id) in &maps {
        let items: Vec<(&String, &AttributionMap)> = by_id.iter().collect();
        for (id, _) in &items {
            let s = loaded
                .images
                .get(*id)
                .ok_or_else(|| Error::data(format!("map for unknown image {id}")))?;
            if a.localization && s.mask.is_none() {
                return Err(Error::data(format!("masks required for --localization; image {id} has none")));
            }
        }
        let evals = items
            .par_iter()
            .map(|(id, map)| {
                let s = &loaded.images[*id];
                let mask = if a.localization { s.mask.as_ref() } else { None };
                evaluate_image(&loaded.network, id, &s.image, s.label, map, mask, a.step)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut scores = Vec::with_capacity(evals.len());
        for ev in evals {
            let stem = map_stem(&ev.scores.image_id, method);
            write_text(&curves.join(format!("{stem}_deletion.csv")), &ev.deletion.to_csv())?;
            write_text(&curves.join(format!("{stem}_insertion.csv")), &ev.insertion.to_csv())?;
            scores.push(ev.scores);
        }
        methods.push(MethodSummary::from_scores(method, scores)?);
    }
    let mut provenance = BTreeMap::new();
    provenance.insert("checkpoint_sha256".to_string(), loaded.network.checksum());
    provenance.insert("dataset_fingerprint".to_string(), loaded.fingerprint.clone());
    provenance.insert("maps".to_string(), a.maps.display().to_string());
    let report = EvalReport {
        manifest: provenance,
        step_fraction: a.step,
        methods,
        similarity: None,
        linkage: None,
    };
    write_text(&a.out.join(REPORT_FILE), &(report.to_json() + "\n"))?;
    let table = report.table();
    write_text(&a.out.join(TABLE_FILE), &table)?;
    let mut rm = RunManifest::new(cmd, &a.out);
    rm.inputs.insert("checkpoint".into(), a.checkpoint.clone());
    rm.inputs.insert("data".into(), a.data.clone());
    rm.inputs.insert("maps".into(), a.maps.clone());
    rm.checkpoint_sha256 = Some(loaded.network.checksum());
    rm.dataset_fingerprint = Some(loaded.fingerprint);
    rm.write()?;
    print!("{table}");
    Ok(())
}

fn compare_cmd(cmd: &Command, a: &CompareArgs) -> Result<()> {
    let maps = read_maps(&a.maps)?;
    if maps.len() < 2 {
        return Err(Error::data(format!(
            "comparison needs at least two methods, {} holds only {}",
            a.maps.display(),
            maps.keys().next().unwrap()
        )));
    }
    let by_method: BTreeMap<String, BTreeMap<String, AttributionMap>> =
        maps.iter().map(|(m, by_id)| (m.name().to_string(), by_id.clone())).collect();
    let images = maps.values().next().unwrap().len();
    let matrix = similarity_matrix(&by_method)?;
    let linkage = cluster_methods(&matrix)?;
    create_dir(&a.out)?;
    write_text(&a.out.join(SIMILARITY_FILE), &matrix.to_csv())?;
    write_text(&a.out.join(LINKAGE_FILE), &linkage.to_csv())?;
    let mut rm = RunManifest::new(cmd, &a.out);
    rm.inputs.insert("maps".into(), a.maps.clone());
    rm.write()?;
    println!("compared {} methods over {images} images", maps.len());
    Ok(())
}
