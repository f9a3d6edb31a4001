//! Subcommands of the `psgformer` binary as library functions.
//!
//! Every command reads a [`RunConfig`]; scenes live in `data.dir` as
//! `<id>.ply` with a `<id>.labels` summary next to them, and everything a run
//! produces goes to `run.dir`.

pub mod config;

use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use psgformer::aggregation::AggregationError;
use psgformer::inference::{evaluate, predict, read_dump, write_dump, EvalReport, PointInstance, PredictionDump};
use psgformer::numerics::derive_seed;
use psgformer::scenegen::{generate_scene, read_ply, write_ply, Scene, SceneSpec};
use psgformer::training::{fit, write_loss_csv, LossReport, TrainError};
use psgformer::{Graph, Matrix, Model, NumericsError, ParamStore, PreparedScene};

pub use config::{ConfigError, GenConfig, RunConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<AggregationError> for CliError {
    fn from(e: AggregationError) -> Self {
        match e {
            AggregationError::Numerics(NumericsError::Checkpoint(m)) => CliError::Config(format!("checkpoint: {m}")),
            AggregationError::Numerics(NumericsError::Io(e)) => CliError::Data(e.to_string()),
            AggregationError::Contract(m) => CliError::Config(m),
            other => CliError::Numeric(other.to_string()),
        }
    }
}

impl From<NumericsError> for CliError {
    fn from(e: NumericsError) -> Self {
        AggregationError::from(e).into()
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Model(e) => e.into(),
            TrainError::NonFinite { .. } => CliError::Numeric(e.to_string()),
            TrainError::Contract(m) => CliError::Config(m),
        }
    }
}

fn data_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|e| data_err(path, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| data_err(path, e))
}

pub const CHECKPOINT_FILE: &str = "checkpoint.psgw";
pub const CONFIG_ECHO_FILE: &str = "config.txt";
pub const LOSS_FILE: &str = "loss.csv";
pub const PREDICTION_DIR: &str = "predictions";

/// Writes every config key to `run.dir/config.txt`.
fn echo_config(cfg: &RunConfig) -> Result<(), CliError> {
    create_dir(&cfg.run_dir)?;
    write_file(&cfg.run_dir.join(CONFIG_ECHO_FILE), cfg.to_text().as_bytes())
}

/// Per-instance summary written next to each generated scene.
pub fn label_summary(scene: &Scene) -> String {
    let gt_classes = (0..scene.n_instances()).map(|k| {
        let i = scene
            .instance
            .iter()
            .position(|&v| v == k as i32)
            .expect("instances are contiguous");
        (
            scene.semantic[i],
            scene.instance.iter().filter(|&&v| v == k as i32).count(),
        )
    });
    let mut s = format!("n_class {}\ninstances {}\n", scene.n_class, scene.n_instances());
    for (k, (class, count)) in gt_classes.enumerate() {
        s += &format!("{k} {class} {count}\n");
    }
    s
}

/// Generates `gen.scenes` scenes into `data.dir`; returns the PLY paths.
pub fn cmd_gen(cfg: &RunConfig) -> Result<Vec<PathBuf>, CliError> {
    cfg.check()?;
    create_dir(&cfg.data_dir)?;
    let g = &cfg.gen;
    let span = g.objects_max - g.objects_min + 1;
    let mut out = Vec::with_capacity(g.scenes);
    for i in 0..g.scenes {
        let spec = SceneSpec {
            n_objects: g.objects_min + i % span,
            n_points: g.points,
            n_class: cfg.n_class,
            room_extent: g.room_extent,
        };
        let scene = generate_scene(derive_seed(cfg.seed, &format!("scene{i}")), &spec)
            .map_err(|e| CliError::Config(e.to_string()))?;
        let id = format!("scene_{i:03}");
        let ply = cfg.data_dir.join(format!("{id}.ply"));
        write_ply(&ply, &scene, None).map_err(|e| data_err(&ply, e))?;
        let labels = cfg.data_dir.join(format!("{id}.labels"));
        write_file(&labels, label_summary(&scene).as_bytes())?;
        out.push(ply);
    }
    Ok(out)
}

/// Every `*.ply` in `dir`, sorted by file name, with its id (the file stem).
pub fn load_scenes(dir: &Path) -> Result<Vec<(String, Scene)>, CliError> {
    let entries = fs::read_dir(dir).map_err(|e| CliError::Config(format!("data directory {}: {e}", dir.display())))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "ply"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(CliError::Config(format!("no .ply scenes in {}", dir.display())));
    }
    paths.iter().map(|p| load_scene(p)).collect()
}

fn load_scene(path: &Path) -> Result<(String, Scene), CliError> {
    let scene = read_ply(path).map_err(|e| data_err(path, e))?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok((id, scene))
}

fn prepare(cfg: &RunConfig, scene: Scene) -> Result<PreparedScene, CliError> {
    if scene.n_class != cfg.n_class {
        return Err(CliError::Config(format!(
            "scene has {} classes but n_class = {}",
            scene.n_class, cfg.n_class
        )));
    }
    Ok(PreparedScene::new(scene, &cfg.model_config())?)
}

/// Fresh model for `cfg`, optionally loaded from a checkpoint.
pub fn load_model(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<(Model, ParamStore), CliError> {
    let (model, mut store) = Model::init(&cfg.model_config())?;
    if let Some(path) = checkpoint {
        let saved = ParamStore::load(path).map_err(|e| match e {
            NumericsError::Io(io) => data_err(path, io),
            other => CliError::Config(format!("{}: {other}", path.display())),
        })?;
        store.assign_from(&saved)?;
    }
    Ok((model, store))
}

fn checkpoint_path(cfg: &RunConfig, explicit: Option<&Path>) -> PathBuf {
    explicit.map_or_else(|| cfg.run_dir.join(CHECKPOINT_FILE), Path::to_path_buf)
}

/// Trains on every scene in `data.dir`; writes the checkpoint, the loss trace
/// and the config echo to `run.dir`.
pub fn cmd_train(cfg: &RunConfig, mut progress: impl FnMut(usize, &LossReport)) -> Result<Vec<LossReport>, CliError> {
    cfg.check()?;
    let scenes = load_scenes(&cfg.data_dir)?
        .into_iter()
        .map(|(_, s)| prepare(cfg, s))
        .collect::<Result<Vec<_>, _>>()?;
    echo_config(cfg)?;
    let (model, mut store) = load_model(cfg, None)?;
    let trace = fit(&model, &mut store, &scenes, &cfg.train, |s, r| progress(s, r))?;
    let ckpt = cfg.run_dir.join(CHECKPOINT_FILE);
    store.save(&ckpt).map_err(|e| data_err(&ckpt, e))?;
    let mut csv = Vec::new();
    write_loss_csv(&mut csv, &trace).expect("writing to memory");
    write_file(&cfg.run_dir.join(LOSS_FILE), &csv)?;
    Ok(trace)
}

/// Point labels for the instance-coloured PLY: rank of the best instance
/// covering each point, `-1` if none.
fn instance_labels(n: usize, instances: &[PointInstance]) -> Vec<i32> {
    let mut labels = vec![-1; n];
    for (rank, inst) in instances.iter().enumerate().rev() {
        for (l, &m) in labels.iter_mut().zip(&inst.mask) {
            if m {
                *l = rank as i32;
            }
        }
    }
    labels
}

/// Predicts `scene` (or every scene in `data.dir`) and writes
/// `run.dir/predictions/<id>.pred` and `<id>.instances.ply`.
pub fn cmd_predict(cfg: &RunConfig, scene: Option<&Path>, checkpoint: Option<&Path>) -> Result<Vec<PathBuf>, CliError> {
    cfg.check()?;
    let scenes = match scene {
        Some(p) => vec![load_scene(p)?],
        None => load_scenes(&cfg.data_dir)?,
    };
    let (model, store) = load_model(cfg, Some(&checkpoint_path(cfg, checkpoint)))?;
    let dir = cfg.run_dir.join(PREDICTION_DIR);
    create_dir(&dir)?;
    let mut written = Vec::new();
    for (id, scene) in scenes {
        let prepared = prepare(cfg, scene)?;
        let ranked = predict(&model, &store, &prepared, &cfg.infer)?;
        let dump = PredictionDump {
            scene: id.clone(),
            points: prepared.scene.len(),
            superpoints: prepared.superpoints(),
            instances: ranked.iter().map(|r| r.to_point_instance()).collect(),
        };
        let path = dir.join(format!("{id}.pred"));
        let mut buf = Vec::new();
        write_dump(&mut buf, &dump).expect("writing to memory");
        write_file(&path, &buf)?;
        let ply = dir.join(format!("{id}.instances.ply"));
        let labels = instance_labels(dump.points, &dump.instances);
        write_ply(&ply, &prepared.scene, Some(&labels)).map_err(|e| data_err(&ply, e))?;
        written.push(path);
    }
    Ok(written)
}

fn gt_instances(scene: &Scene) -> Vec<PointInstance> {
    (0..scene.n_instances() as i32)
        .map(|k| {
            let mask: Vec<bool> = scene.instance.iter().map(|&v| v == k).collect();
            let first = mask.iter().position(|&m| m).expect("instances are contiguous");
            PointInstance {
                class: scene.semantic[first] as usize,
                score: 1.0,
                mask,
            }
        })
        .collect()
}

/// Scores every dump in `pred_dir` against the same-id scene in `gt_dir` and
/// writes `eval.csv` and `eval.txt` to `run.dir`.
pub fn cmd_eval(cfg: &RunConfig, pred_dir: Option<&Path>, gt_dir: Option<&Path>) -> Result<EvalReport, CliError> {
    let pred_dir = pred_dir.map_or_else(|| cfg.run_dir.join(PREDICTION_DIR), Path::to_path_buf);
    let gt = load_scenes(gt_dir.unwrap_or(&cfg.data_dir))?;
    let entries = fs::read_dir(&pred_dir).map_err(|e| data_err(&pred_dir, e))?;
    let mut dumps = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| data_err(&pred_dir, e))?.path();
        if path.extension().is_some_and(|x| x == "pred") {
            let file = fs::File::open(&path).map_err(|e| data_err(&path, e))?;
            dumps.push(read_dump(BufReader::new(file)).map_err(|e| data_err(&path, e))?);
        }
    }
    let mut missing: Vec<String> = gt
        .iter()
        .filter(|(id, _)| !dumps.iter().any(|d| &d.scene == id))
        .map(|(id, _)| format!("{id} (no prediction)"))
        .collect();
    missing.extend(
        dumps
            .iter()
            .filter(|d| !gt.iter().any(|(id, _)| id == &d.scene))
            .map(|d| format!("{} (no ground truth)", d.scene)),
    );
    if !missing.is_empty() {
        missing.sort();
        return Err(CliError::Data(format!(
            "scene ids do not match: {}",
            missing.join(", ")
        )));
    }
    let mut preds = Vec::with_capacity(gt.len());
    let mut gts = Vec::with_capacity(gt.len());
    for (id, scene) in &gt {
        let dump = dumps.iter().find(|d| &d.scene == id).expect("checked above");
        if dump.points != scene.len() {
            return Err(CliError::Data(format!(
                "{id}: prediction covers {} points, scene has {}",
                dump.points,
                scene.len()
            )));
        }
        preds.push(dump.instances.clone());
        gts.push(gt_instances(scene));
    }
    let report = evaluate(&preds, &gts, cfg.n_class);
    create_dir(&cfg.run_dir)?;
    write_file(&cfg.run_dir.join("eval.csv"), report.to_csv().as_bytes())?;
    write_file(&cfg.run_dir.join("eval.txt"), format!("{report}\n").as_bytes())?;
    Ok(report)
}

/// `K x M` weights of the superpoint cross-attention of decoder layer `layer`,
/// head `head`, written as CSV to `out`.
pub fn cmd_inspect_attn(
    cfg: &RunConfig,
    scene: &Path,
    layer: usize,
    head: usize,
    checkpoint: Option<&Path>,
    out: &Path,
) -> Result<Matrix, CliError> {
    cfg.check()?;
    let m = &cfg.model.decoder;
    if layer >= m.layers {
        return Err(CliError::Config(format!(
            "layer {layer} out of range (decoder has {})",
            m.layers
        )));
    }
    if head >= m.heads {
        return Err(CliError::Config(format!(
            "head {head} out of range ({} heads)",
            m.heads
        )));
    }
    if !cfg.model.use_global {
        return Err(CliError::Config("the superpoint branch is disabled".into()));
    }
    let (_, scene) = load_scene(scene)?;
    let prepared = prepare(cfg, scene)?;
    let (model, store) = load_model(cfg, Some(&checkpoint_path(cfg, checkpoint)))?;
    let mut g = Graph::new();
    let run = model.forward(&mut g, &store, &prepared, None)?;
    let weights = run.decoder.attention[layer][head].clone();
    let file = fs::File::create(out).map_err(|e| data_err(out, e))?;
    let mut w = BufWriter::new(file);
    write_matrix_csv(&mut w, &weights).map_err(|e| data_err(out, e))?;
    w.flush().map_err(|e| data_err(out, e))?;
    Ok(weights)
}

/// Header `query,sp0,sp1,...`, then one row per query.
pub fn write_matrix_csv<W: Write>(mut w: W, m: &Matrix) -> std::io::Result<()> {
    write!(w, "query")?;
    for c in 0..m.cols() {
        write!(w, ",sp{c}")?;
    }
    writeln!(w)?;
    for (r, row) in m.iter_rows().enumerate() {
        write!(w, "{r}")?;
        for v in row {
            write!(w, ",{v}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}
