//! The `hsg` command line. [`run`] parses arguments, dispatches, writes a
//! run manifest, and maps failures to exit codes.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use hsg_core::baselines::{fit_tfidf_with_classes, score_predictor, NeighborVote, NeighborVoteConfig, TfidfModel};
use hsg_core::graph::{assemble_graph, ground_truth_graph, validate_graph, Hsg};
use hsg_core::metrics::{macro_accuracy, Averaging, MetricsReport};
use hsg_core::model::{Architecture, ExternalEmbeddings, Model};
use hsg_core::prompt::{export_graph_prompt, export_scene_prompt, PromptOptions};
use hsg_core::scene::{self, filter_structural, split_dataset, SceneRecord};
use hsg_core::synth::{generate_scene, SynthConfig};
use hsg_core::train::{decode, evaluate_scenes, prepare, train_model, Checkpoint, TrainHistory};
use serde::Serialize;

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::config::{load_json, load_run_config, RunConfig};
use crate::embeddings::load_embeddings;
use crate::error::{self, Error, Result};
use crate::graph_io::{load_graph, write_graph};
use crate::manifest::{ManifestBuilder, MANIFEST_FILE};
use crate::scene_io::{load_scene, load_scenes, write_scene};

pub const CHECKPOINT_FILE: &str = "model.ckpt";

#[derive(Debug, Parser)]
#[command(name = "hsg", version, about = "Hierarchical scene graphs: synthesis, training, evaluation, and export")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic scene files.
    Synth(SynthArgs),
    /// Train a model and write a checkpoint, history, and metrics.
    Train(TrainArgs),
    /// Score a checkpoint on labeled scenes.
    Eval(EvalArgs),
    /// Predict room type and region affordances for one scene.
    Infer(InferArgs),
    /// Predict and assemble a scene graph for one scene.
    BuildGraph(BuildGraphArgs),
    /// Render the language-model prompt for a scene or graph.
    ExportPrompt(PromptArgs),
    /// Check a graph file against the structural invariants.
    Validate(ValidateArgs),
    /// Fit and score a baseline.
    Baseline(BaselineArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON config file; omitted fields take defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Where to write the run manifest (defaults to the output location).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub common: Common,
    /// Number of scenes.
    #[arg(long, short)]
    pub n: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// Use the built-in ambiguity config instead of the default catalog.
    #[arg(long, conflicts_with = "config")]
    pub ambiguous: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    /// Scene file or directory of scene files.
    #[arg(long)]
    pub data: PathBuf,
    /// Held-out scenes; when absent the data is split by `train_fraction`.
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Report file; printed to stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// A single scene file.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BuildGraphArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, required_unless_present = "from_labels")]
    pub checkpoint: Option<PathBuf>,
    /// Build from the scene's own annotations instead of predictions.
    #[arg(long, conflicts_with = "checkpoint")]
    pub from_labels: bool,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PromptArgs {
    #[command(flatten)]
    pub common: Common,
    /// Scene file.
    #[arg(long, required_unless_present = "graph", conflicts_with = "graph")]
    pub data: Option<PathBuf>,
    /// Graph file; adds a scene-graph context block.
    #[arg(long)]
    pub graph: Option<PathBuf>,
    /// Print coordinates at full precision.
    #[arg(long)]
    pub no_round: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[command(flatten)]
    pub common: Common,
    pub graph: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BaselineKind {
    Tfidf,
    NeighborVote,
    Mlp,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(value_enum)]
    pub kind: BaselineKind,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Neighbor-Vote blend weight on an object's own scores.
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
}

/// Room and region reports; `region_macro_accuracy` is set when the config
/// asks for per-scene averaging.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub room: Option<MetricsReport>,
    pub region: MetricsReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub region_macro_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ObjectPrediction {
    pub id: u64,
    pub label: String,
    pub region_affordance: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InferOutput {
    pub scan_id: String,
    pub room_type: String,
    pub room_logits: Vec<f64>,
    pub objects: Vec<ObjectPrediction>,
    /// One row per object, in object order.
    pub region_logits: Vec<Vec<f64>>,
}

/// Runs the CLI on `args` (including the program name) and returns the
/// exit code. Normal output goes to `stdout`; diagnostics to stderr.
pub fn run<I, T>(args: I, stdout: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command, stdout) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(command: Command, stdout: &mut dyn Write) -> Result<i32> {
    match command {
        Command::Synth(a) => cmd_synth(&a).map(|_| 0),
        Command::Train(a) => cmd_train(&a).map(|_| 0),
        Command::Eval(a) => cmd_eval(&a, stdout).map(|_| 0),
        Command::Infer(a) => cmd_infer(&a, stdout).map(|_| 0),
        Command::BuildGraph(a) => cmd_build_graph(&a).map(|_| 0),
        Command::ExportPrompt(a) => cmd_export_prompt(&a, stdout).map(|_| 0),
        Command::Validate(a) => cmd_validate(&a, stdout),
        Command::Baseline(a) => cmd_baseline(&a).map(|_| 0),
    }
}

fn emit(stdout: &mut dyn Write, out: Option<&Path>, text: &str, manifest: &mut ManifestBuilder) -> Result<()> {
    match out {
        Some(path) => {
            error::write(path, text)?;
            manifest.output(path);
            Ok(())
        }
        None => stdout.write_all(text.as_bytes()).map_err(|e| Error::io("<stdout>", e)),
    }
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("output serializes");
    s.push('\n');
    s
}

/// Manifest destination: `--manifest`, else inside an output directory or
/// next to an output file. Runs with neither print it to stderr.
fn finish_manifest(m: &ManifestBuilder, common: &Common, out_dir: Option<&Path>, out_file: Option<&Path>) -> Result<()> {
    let path = common
        .manifest
        .clone()
        .or_else(|| out_dir.map(|d| d.join(MANIFEST_FILE)))
        .or_else(|| out_file.map(|f| f.with_file_name(MANIFEST_FILE)));
    match path {
        Some(p) => m.write(&p).map(|_| ()),
        None => {
            eprintln!("{}", serde_json::to_string(&m.finish()).expect("manifest serializes"));
            Ok(())
        }
    }
}

fn run_config(common: &Common, manifest: &mut ManifestBuilder) -> Result<RunConfig> {
    let mut cfg = load_run_config(common.config.as_deref())?;
    if let Some(p) = &common.config {
        manifest.input(p);
    }
    if let Some(seed) = common.seed {
        cfg.train.seed = seed;
        cfg.model.init_seed = seed;
        cfg.split_seed = seed;
    }
    Ok(cfg)
}

/// A scene file or every scene file in a directory, with excluded labels
/// removed.
pub fn load_data(path: &Path, cfg: &RunConfig) -> Result<Vec<SceneRecord>> {
    let scenes = if path.is_dir() { load_scenes(path)? } else { vec![load_scene(path)?] };
    let excluded: Vec<&str> = cfg.exclude_labels.iter().map(String::as_str).collect();
    Ok(scenes.iter().map(|s| filter_structural(s, &excluded)).collect())
}

fn train_test(
    data: &Path,
    test: Option<&Path>,
    cfg: &RunConfig,
    manifest: &mut ManifestBuilder,
) -> Result<(Vec<SceneRecord>, Vec<SceneRecord>)> {
    let scenes = load_data(data, cfg)?;
    manifest.input(data);
    match test {
        Some(t) => {
            manifest.input(t);
            Ok((scenes, load_data(t, cfg)?))
        }
        None => Ok(split_dataset(&scenes, cfg.train_fraction, cfg.split_seed)?),
    }
}

pub fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let mut m = ManifestBuilder::new("synth");
    let mut cfg: SynthConfig = match (&a.common.config, a.ambiguous) {
        (Some(p), _) => {
            m.input(p);
            load_json(p)?
        }
        (None, true) => SynthConfig::ambiguous(),
        (None, false) => SynthConfig::default(),
    };
    if let Some(seed) = a.common.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    m.config("synth", &cfg).seed(cfg.seed);
    for i in 0..a.n {
        let scene = generate_scene(&cfg, i as u64)?;
        let path = a.out.join(format!("scene_{i:05}.json"));
        write_scene(&path, &scene)?;
        m.output(&path);
    }
    finish_manifest(&m, &a.common, Some(&a.out), None)
}

struct Trained {
    checkpoint: Checkpoint,
    history: TrainHistory,
    report: EvalReport,
}

fn train_on(train: &[SceneRecord], test: &[SceneRecord], cfg: &RunConfig) -> Result<Trained> {
    let prepared = prepare(train, test, &cfg.model)?;
    let model = match &cfg.external_embeddings {
        Some(p) => {
            let table = ExternalEmbeddings::from_map(&load_embeddings(Path::new(p))?, &prepared.vocab)?;
            Model::with_external(prepared.model_config.clone(), table)?
        }
        None => Model::new(prepared.model_config.clone())?,
    };
    let (model, history) = train_model(model, &prepared.train, &prepared.test, &cfg.train, |r| {
        let test = r.test.as_ref().map_or(String::new(), |t| {
            format!(" test room {:.3} region {:.3}", t.room_accuracy, t.region_accuracy)
        });
        eprintln!("epoch {:>4} loss {:.4} lambda {:.3}{test}", r.epoch, r.train_loss.total, r.train_loss.lambda);
    })?;
    let checkpoint = Checkpoint {
        model,
        vocab: prepared.vocab,
        room_classes: prepared.room_classes,
        region_classes: prepared.region_classes,
    };
    let scored = if test.is_empty() { train } else { test };
    let report = eval_report(&checkpoint, scored, cfg.region_averaging)?;
    Ok(Trained { checkpoint, history, report })
}

fn eval_report(ckpt: &Checkpoint, scenes: &[SceneRecord], averaging: Averaging) -> Result<EvalReport> {
    let ev = evaluate_scenes(ckpt, scenes)?;
    let (room, region) = ev.reports(&ckpt.room_classes, &ckpt.region_classes)?;
    let region_macro_accuracy = match averaging {
        Averaging::Micro => None,
        Averaging::Macro => Some(macro_accuracy(&ev.region_per_scene)?),
    };
    Ok(EvalReport { room: Some(room), region, region_macro_accuracy })
}

fn write_training(out: &Path, t: &Trained, m: &mut ManifestBuilder) -> Result<()> {
    let ckpt = out.join(CHECKPOINT_FILE);
    save_checkpoint(&ckpt, &t.checkpoint)?;
    let history = out.join("history.json");
    error::write(&history, to_json(&t.history))?;
    let metrics = out.join("metrics.json");
    error::write(&metrics, to_json(&t.report))?;
    m.output(&ckpt).output(&crate::checkpoint::sidecar_path(&ckpt)).output(&history).output(&metrics);
    Ok(())
}

fn apply_train_overrides(cfg: &mut RunConfig, epochs: Option<usize>, lr: Option<f64>) {
    if let Some(e) = epochs {
        cfg.train.epochs = e;
    }
    if let Some(lr) = lr {
        cfg.train.base_lr = lr;
    }
}

pub fn cmd_train(a: &TrainArgs) -> Result<()> {
    let mut m = ManifestBuilder::new("train");
    let mut cfg = run_config(&a.common, &mut m)?;
    apply_train_overrides(&mut cfg, a.epochs, a.lr);
    m.config("run", &cfg).seed(cfg.train.seed);
    let (train, test) = train_test(&a.data, a.test.as_deref(), &cfg, &mut m)?;
    let trained = train_on(&train, &test, &cfg)?;
    write_training(&a.out, &trained, &mut m)?;
    finish_manifest(&m, &a.common, Some(&a.out), None)
}

pub fn cmd_eval(a: &EvalArgs, stdout: &mut dyn Write) -> Result<()> {
    let mut m = ManifestBuilder::new("eval");
    let cfg = run_config(&a.common, &mut m)?;
    m.config("run", &cfg).input(&a.checkpoint).input(&a.data);
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let scenes = load_data(&a.data, &cfg)?;
    let report = eval_report(&ckpt, &scenes, cfg.region_averaging)?;
    emit(stdout, a.out.as_deref(), &to_json(&report), &mut m)?;
    finish_manifest(&m, &a.common, None, a.out.as_deref())
}

fn infer_scene(ckpt: &Checkpoint, scene: &SceneRecord) -> Result<InferOutput> {
    let tokens = ckpt.tokenize_unlabeled(scene)?;
    let pred = ckpt.model.forward(&tokens)?;
    let (room_type, regions) = decode(ckpt, &pred);
    let objects = scene
        .objects
        .iter()
        .zip(regions)
        .map(|(o, r)| ObjectPrediction { id: o.id, label: o.label.clone(), region_affordance: r.unwrap_or_default() })
        .collect();
    let region_logits = (0..scene.objects.len()).map(|i| pred.region_logits.row(i).to_vec()).collect();
    Ok(InferOutput { scan_id: scene.scan_id.clone(), room_type, room_logits: pred.room_logits, objects, region_logits })
}

pub fn cmd_infer(a: &InferArgs, stdout: &mut dyn Write) -> Result<()> {
    let mut m = ManifestBuilder::new("infer");
    let cfg = run_config(&a.common, &mut m)?;
    m.config("run", &cfg).input(&a.checkpoint).input(&a.data);
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let scene = load_data(&a.data, &cfg)?.remove(0);
    let out = infer_scene(&ckpt, &scene)?;
    emit(stdout, a.out.as_deref(), &to_json(&out), &mut m)?;
    finish_manifest(&m, &a.common, None, a.out.as_deref())
}

/// The graph for `scene`: from a checkpoint's predictions, or from the
/// scene's own labels when no checkpoint is given.
pub fn build_graph(ckpt: Option<&Checkpoint>, scene: &SceneRecord) -> Result<Hsg> {
    let g = match ckpt {
        None => ground_truth_graph(scene)?,
        Some(ckpt) => {
            let out = infer_scene(ckpt, scene)?;
            let affs: Vec<String> = out.objects.into_iter().map(|o| o.region_affordance).collect();
            assemble_graph(scene, &out.room_type, &affs)?
        }
    };
    Ok(g)
}

pub fn cmd_build_graph(a: &BuildGraphArgs) -> Result<()> {
    let mut m = ManifestBuilder::new("build-graph");
    let cfg = run_config(&a.common, &mut m)?;
    m.config("run", &cfg).input(&a.data);
    let ckpt = match &a.checkpoint {
        Some(p) => {
            m.input(p);
            Some(load_checkpoint(p)?)
        }
        None => None,
    };
    let scene = load_data(&a.data, &cfg)?.remove(0);
    let g = build_graph(ckpt.as_ref(), &scene)?;
    write_graph(&a.out, &g)?;
    m.output(&a.out);
    finish_manifest(&m, &a.common, None, Some(&a.out))
}

pub fn cmd_export_prompt(a: &PromptArgs, stdout: &mut dyn Write) -> Result<()> {
    let mut m = ManifestBuilder::new("export-prompt");
    let opts = PromptOptions { round: !a.no_round, ..PromptOptions::default() };
    let text = match (&a.graph, &a.data) {
        (Some(g), _) => {
            m.input(g);
            export_graph_prompt(&load_graph(g)?, &opts)?
        }
        (None, Some(s)) => {
            m.input(s);
            export_scene_prompt(&load_scene(s)?, &opts)?
        }
        (None, None) => return Err(Error::Usage("either --data or --graph is required".into())),
    };
    emit(stdout, a.out.as_deref(), &text, &mut m)?;
    finish_manifest(&m, &a.common, None, a.out.as_deref())
}

/// Exit 0 when the graph is valid, 1 with the violation report otherwise.
pub fn cmd_validate(a: &ValidateArgs, stdout: &mut dyn Write) -> Result<i32> {
    let mut m = ManifestBuilder::new("validate");
    m.input(&a.graph);
    let report = validate_graph(&load_graph(&a.graph)?);
    emit(stdout, a.out.as_deref(), &to_json(&report), &mut m)?;
    finish_manifest(&m, &a.common, None, a.out.as_deref())?;
    Ok(if report.is_valid() { 0 } else { 1 })
}

fn score_tfidf(
    predictor: &dyn hsg_core::baselines::ScenePredictor,
    train: &[SceneRecord],
    test: &[SceneRecord],
) -> Result<EvalReport> {
    let all: Vec<SceneRecord> = train.iter().chain(test).cloned().collect();
    let scored = if test.is_empty() { train } else { test };
    let (room, region) = score_predictor(predictor, scored, &scene::room_classes(&all), &scene::region_classes(&all))?;
    Ok(EvalReport { room, region, region_macro_accuracy: None })
}

fn fit_tfidf_model(train: &[SceneRecord], test: &[SceneRecord], cfg: &RunConfig) -> Result<TfidfModel> {
    let all: Vec<SceneRecord> = train.iter().chain(test).cloned().collect();
    Ok(fit_tfidf_with_classes(train, &scene::region_classes(&all))?.with_unknown_policy(cfg.unknown_labels))
}

pub fn cmd_baseline(a: &BaselineArgs) -> Result<()> {
    let name = match a.kind {
        BaselineKind::Tfidf => "baseline tfidf",
        BaselineKind::NeighborVote => "baseline neighbor-vote",
        BaselineKind::Mlp => "baseline mlp",
    };
    let mut m = ManifestBuilder::new(name);
    let mut cfg = run_config(&a.common, &mut m)?;
    if let Some(alpha) = a.alpha {
        cfg.alpha = alpha;
    }
    apply_train_overrides(&mut cfg, a.epochs, a.lr);
    if a.kind == BaselineKind::Mlp {
        cfg.model.architecture = Architecture::Mlp;
    }
    m.config("run", &cfg).seed(cfg.train.seed);
    let (train, test) = train_test(&a.data, a.test.as_deref(), &cfg, &mut m)?;
    match a.kind {
        BaselineKind::Tfidf | BaselineKind::NeighborVote => {
            let model = fit_tfidf_model(&train, &test, &cfg)?;
            let report = if a.kind == BaselineKind::Tfidf {
                score_tfidf(&model, &train, &test)?
            } else {
                let nv = NeighborVote { model: &model, config: NeighborVoteConfig { alpha: cfg.alpha } };
                score_tfidf(&nv, &train, &test)?
            };
            let model_path = a.out.join("tfidf.json");
            error::write(&model_path, to_json(&model))?;
            let metrics = a.out.join("metrics.json");
            error::write(&metrics, to_json(&report))?;
            m.output(&model_path).output(&metrics);
        }
        BaselineKind::Mlp => {
            let trained = train_on(&train, &test, &cfg)?;
            write_training(&a.out, &trained, &mut m)?;
        }
    }
    finish_manifest(&m, &a.common, Some(&a.out), None)
}
