//! Pipeline driver: scene generation, bootstrap segmentation, field training,
//! segmentation with optional EM refinement, rendering, rigid editing, and
//! evaluation. One subcommand per stage; every stage writes its resolved
//! configuration next to its outputs and is byte-reproducible from its inputs
//! and seed.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use voxelseg::config::RunConfig;
use voxelseg::dataset::{load_dataset, save_dataset, SceneDataset, View};
use voxelseg::edit::{apply_edits, render_edited, EditScript};
use voxelseg::em::refine_views;
use voxelseg::error::{Error, Result};
use voxelseg::features::{extract_features, load_external_features};
use voxelseg::initseg::{bootstrap_from_features, bootstrap_labels};
use voxelseg::io::{
    load_checkpoint, load_label_png, load_rgb_png, save_checkpoint, save_features, save_float_image,
    save_label_png, save_rgb_png, FeatureMap,
};
use voxelseg::metrics::{psnr_ssim, seg_metrics, SegMetrics};
use voxelseg::model::SceneModel;
use voxelseg::render::{render_depth, render_image, render_label_map, render_semantics};
use voxelseg::scene::{generate_scene, SceneSpec};
use voxelseg::train::{train, write_trace_csv, TrainView};
use voxelseg::types::LabelMap;

const FEAT_EXT: &str = "rfpfeat";

#[derive(Parser)]
#[command(name = "voxelseg", version, about = "Unsupervised multi-view 3D segmentation pipeline")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Split {
    Train,
    Test,
    All,
}

#[derive(Args)]
struct Common {
    /// Run configuration JSON; every field is optional and defaults apply.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Override the config's master seed.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Cap the global worker-thread pool.
    #[arg(long, value_name = "N")]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Ray-trace a procedural scene spec into a posed multi-view dataset.
    GenScene {
        /// Scene description JSON.
        #[arg(long, value_name = "PATH")]
        spec: PathBuf,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Cluster per-pixel features of the training views into K foreground
    /// labels plus background.
    InitSeg {
        /// Dataset directory (from gen-scene or compatible).
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Fit the layered voxel fields to the posed training images.
    Train {
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
        /// Directory of initial label maps, one <view>.png per training view.
        #[arg(long, value_name = "DIR")]
        labels: Option<PathBuf>,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Disable the propagation regularizer.
        #[arg(long)]
        no_prop: bool,
        /// Disable the initial-estimation loss.
        #[arg(long)]
        no_init_loss: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Write per-view label maps from a checkpoint, EM-refined by default.
    /// Test-split features come from the rendered images, never the inputs.
    Segment {
        #[arg(long, value_name = "PATH")]
        ckpt: PathBuf,
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Split::Train)]
        split: Split,
        /// Write the rendered argmax labels without EM refinement.
        #[arg(long)]
        no_em: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Render color images and depth maps from a checkpoint.
    Render {
        #[arg(long, value_name = "PATH")]
        ckpt: PathBuf,
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Split::Test)]
        split: Split,
        #[command(flatten)]
        common: Common,
    },
    /// Apply a rigid edit script and render the edited scene.
    Edit {
        #[arg(long, value_name = "PATH")]
        ckpt: PathBuf,
        #[arg(long, value_name = "PATH")]
        edit_script: PathBuf,
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Split::Test)]
        split: Split,
        #[command(flatten)]
        common: Common,
    },
    /// Score predicted masks and renders against dataset ground truth.
    Eval {
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
        /// Predicted label maps for the training split.
        #[arg(long, value_name = "DIR")]
        masks_train: Option<PathBuf>,
        /// Predicted label maps for the test split (novel-view metrics).
        #[arg(long, value_name = "DIR")]
        masks_test: Option<PathBuf>,
        /// Rendered test-split images for PSNR/SSIM.
        #[arg(long, value_name = "DIR")]
        renders_test: Option<PathBuf>,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
}

fn main() {
    env_logger::Builder::new()
        .filter_level(log::LevelFilter::Warn)
        .parse_default_env()
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                std::process::exit(0);
            }
            let text = e.to_string();
            eprintln!("{}", text.lines().next().unwrap_or("error: bad arguments"));
            std::process::exit(2);
        }
    };
    if let Err(e) = run(cli.cmd) {
        eprintln!("error: {}", e.to_string().replace('\n', " "));
        std::process::exit(1);
    }
}

fn run(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::GenScene { spec, out } => gen_scene(&spec, &out),
        Cmd::InitSeg { data, out, common } => init_seg(&data, &out, common),
        Cmd::Train { data, labels, out, no_prop, no_init_loss, common } => {
            cmd_train(&data, labels.as_deref(), &out, no_prop, no_init_loss, common)
        }
        Cmd::Segment { ckpt, data, out, split, no_em, common } => {
            segment(&ckpt, &data, &out, split, no_em, common)
        }
        Cmd::Render { ckpt, data, out, split, common } => render(&ckpt, &data, &out, split, common),
        Cmd::Edit { ckpt, edit_script, data, out, split, common } => {
            edit(&ckpt, &edit_script, &data, &out, split, common)
        }
        Cmd::Eval { data, masks_train, masks_test, renders_test, out } => eval(
            &data,
            masks_train.as_deref(),
            masks_test.as_deref(),
            renders_test.as_deref(),
            &out,
        ),
    }
}

/// Loads + resolves the run configuration and pins the global thread pool.
/// Must run before any parallel work; later calls in the same process would
/// fail to re-pin, so each subcommand resolves exactly one config.
fn setup(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(t) = common.threads {
        cfg.threads = Some(t);
    }
    let cfg = cfg.resolve()?;
    if let Some(n) = cfg.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    Ok(cfg)
}

fn mkdir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn echo_config(cfg: &RunConfig, out: &Path) -> Result<()> {
    cfg.save(out.join("run_config.json"))
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn gen_scene(spec_path: &Path, out: &Path) -> Result<()> {
    let text = fs::read_to_string(spec_path).map_err(|e| Error::io(spec_path, e))?;
    let spec: SceneSpec = serde_json::from_str(&text)?;
    let ds = generate_scene(&spec)?;
    mkdir(out)?;
    save_dataset(&ds, out)?;
    write_json(&spec, &out.join("scene_spec.json"))?;
    println!(
        "gen-scene: {} train + {} test views at {}x{} -> {}",
        ds.train.len(),
        ds.test.len(),
        ds.width(),
        ds.height(),
        out.display()
    );
    Ok(())
}

/// External features are loaded as `<dir>/<view>.rfpfeat`; every requested
/// view must be present.
fn view_features(cfg: &RunConfig, name: &str, image: &voxelseg::io::FloatImage) -> Result<FeatureMap> {
    match &cfg.external_features {
        Some(dir) => {
            let path = Path::new(dir).join(format!("{name}.{FEAT_EXT}"));
            load_external_features(&path, image.width, image.height)
        }
        None => extract_features(image, cfg.features),
    }
}

fn init_seg(data: &Path, out: &Path, common: Common) -> Result<()> {
    let cfg = setup(&common)?;
    let ds = load_dataset(data)?;
    let boot = match &cfg.external_features {
        Some(dir) => {
            let feats = ds
                .train
                .iter()
                .map(|v| {
                    let path = Path::new(dir).join(format!("{}.{FEAT_EXT}", v.name));
                    load_external_features(&path, v.image.width, v.image.height)
                })
                .collect::<Result<Vec<_>>>()?;
            bootstrap_from_features(feats, cfg.model.k, cfg.seed)?
        }
        None => {
            let images: Vec<_> = ds.train.iter().map(|v| v.image.clone()).collect();
            bootstrap_labels(&images, cfg.model.k, cfg.features, cfg.seed)?
        }
    };
    let labels_dir = out.join("labels");
    let feats_dir = out.join("features");
    mkdir(&labels_dir)?;
    mkdir(&feats_dir)?;
    for (v, lm) in ds.train.iter().zip(&boot.labels) {
        save_label_png(lm, &labels_dir.join(format!("{}.png", v.name)))?;
    }
    for (v, f) in ds.train.iter().zip(&boot.features) {
        save_features(f, &feats_dir.join(format!("{}.{FEAT_EXT}", v.name)))?;
    }
    #[derive(Serialize)]
    struct BootSummary {
        effective_k: usize,
        degenerate: bool,
    }
    write_json(
        &BootSummary { effective_k: boot.effective_k, degenerate: boot.degenerate },
        &out.join("bootstrap.json"),
    )?;
    echo_config(&cfg, out)?;
    println!(
        "init-seg: {} views, effective K = {}{}",
        boot.labels.len(),
        boot.effective_k,
        if boot.degenerate { " (degenerate: all background)" } else { "" }
    );
    Ok(())
}

fn cmd_train(
    data: &Path,
    labels: Option<&Path>,
    out: &Path,
    no_prop: bool,
    no_init_loss: bool,
    common: Common,
) -> Result<()> {
    let mut cfg = setup(&common)?;
    if no_prop {
        cfg.train.lambda_prop = 0.0;
    }
    if no_init_loss {
        cfg.train.lambda_init_start = 0.0;
        cfg.train.lambda_init_floor = 0.0;
    }
    let ds = load_dataset(data)?;
    let views = ds
        .train
        .iter()
        .map(|v| {
            let init_labels = match labels {
                Some(dir) => {
                    let path = dir.join(format!("{}.png", v.name));
                    if !path.is_file() {
                        return Err(Error::Dataset(format!(
                            "no initial labels for view {} at {}",
                            v.name,
                            path.display()
                        )));
                    }
                    Some(load_label_png(&path)?)
                }
                None => None,
            };
            Ok(TrainView { camera: v.camera.cast::<f32>(), image: v.image.clone(), init_labels })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut model = SceneModel::<f32>::new(&cfg.model, cfg.seed)?;
    let trace = train(&mut model, &views, &cfg.train)?;
    mkdir(out)?;
    save_checkpoint(&model, &out.join("checkpoint.rfp"))?;
    write_trace_csv(&trace, &out.join("loss.csv"))?;
    echo_config(&cfg, out)?;
    match trace.last() {
        Some(r) => println!("train: {} iterations, final loss {:.6}", trace.len(), r.total),
        None => println!("train: 0 iterations, checkpoint equals initialization"),
    }
    Ok(())
}

/// (name, views) pairs for the requested split; explicit empty splits are an
/// error, `all` silently skips an absent test split.
fn select_splits<'a>(ds: &'a SceneDataset, split: Split) -> Result<Vec<(&'static str, &'a [View])>> {
    let picked: Vec<(&'static str, &'a [View])> = match split {
        Split::Train => vec![("train", &ds.train)],
        Split::Test => vec![("test", &ds.test)],
        Split::All => vec![("train", &ds.train), ("test", &ds.test)],
    };
    if split != Split::All {
        if let Some((name, _)) = picked.iter().find(|(_, v)| v.is_empty()) {
            return Err(Error::Dataset(format!("dataset has no {name} views")));
        }
    }
    Ok(picked.into_iter().filter(|(_, v)| !v.is_empty()).collect())
}

fn segment(ckpt: &Path, data: &Path, out: &Path, split: Split, no_em: bool, common: Common) -> Result<()> {
    let cfg = setup(&common)?;
    let model: SceneModel<f32> = load_checkpoint(ckpt)?;
    let ds = load_dataset(data)?;
    let p = cfg.train.n_samples;
    for (split_name, views) in select_splits(&ds, split)? {
        let dir = out.join(split_name).join("masks");
        mkdir(&dir)?;
        let novel = split_name == "test";
        let mut masks: Vec<LabelMap> = Vec::with_capacity(views.len());
        let mut feats: Vec<FeatureMap> = Vec::with_capacity(views.len());
        let mut sems = Vec::with_capacity(views.len());
        for v in views {
            let cam = v.camera.cast::<f32>();
            masks.push(render_label_map(&model, &cam, p));
            if !no_em {
                if novel {
                    let rendered = render_image(&model, &cam, p);
                    feats.push(view_features(&cfg, &v.name, &rendered)?);
                } else {
                    feats.push(view_features(&cfg, &v.name, &v.image)?);
                }
                sems.push(render_semantics(&model, &cam, p));
            }
        }
        let finals: Vec<LabelMap> = if no_em {
            masks
        } else {
            let triples: Vec<_> = feats
                .iter()
                .zip(&masks)
                .zip(&sems)
                .map(|((f, m), s)| (f, m, s))
                .collect();
            refine_views(&triples, cfg.em)?.into_iter().map(|(lm, _)| lm).collect()
        };
        for (v, lm) in views.iter().zip(&finals) {
            save_label_png(lm, &dir.join(format!("{}.png", v.name)))?;
        }
        println!("segment: {} {} masks -> {}", finals.len(), split_name, dir.display());
    }
    echo_config(&cfg, out)?;
    Ok(())
}

fn render(ckpt: &Path, data: &Path, out: &Path, split: Split, common: Common) -> Result<()> {
    let cfg = setup(&common)?;
    let model: SceneModel<f32> = load_checkpoint(ckpt)?;
    let ds = load_dataset(data)?;
    let p = cfg.train.n_samples;
    for (split_name, views) in select_splits(&ds, split)? {
        let rgb_dir = out.join(split_name).join("renders");
        let depth_dir = out.join(split_name).join("depths");
        mkdir(&rgb_dir)?;
        mkdir(&depth_dir)?;
        for v in views {
            let cam = v.camera.cast::<f32>();
            save_rgb_png(&render_image(&model, &cam, p), &rgb_dir.join(format!("{}.png", v.name)))?;
            save_float_image(
                &render_depth(&model, &cam, p),
                &depth_dir.join(format!("{}.{}", v.name, "rfpimg")),
            )?;
        }
        println!("render: {} {} views -> {}", views.len(), split_name, rgb_dir.display());
    }
    echo_config(&cfg, out)?;
    Ok(())
}

fn edit(
    ckpt: &Path,
    script_path: &Path,
    data: &Path,
    out: &Path,
    split: Split,
    common: Common,
) -> Result<()> {
    let cfg = setup(&common)?;
    let model: SceneModel<f32> = load_checkpoint(ckpt)?;
    let script = EditScript::load(script_path)?;
    let scene = apply_edits(&model, &script)?;
    for w in &scene.warnings {
        log::warn!("{w}");
    }
    let ds = load_dataset(data)?;
    let p = cfg.train.n_samples;
    for (split_name, views) in select_splits(&ds, split)? {
        let rgb_dir = out.join(split_name).join("renders");
        let label_dir = out.join(split_name).join("labels");
        mkdir(&rgb_dir)?;
        mkdir(&label_dir)?;
        for v in views {
            let er = render_edited(&scene, &v.camera.cast::<f32>(), p);
            save_rgb_png(&er.rgb, &rgb_dir.join(format!("{}.png", v.name)))?;
            save_label_png(&er.labels, &label_dir.join(format!("{}.png", v.name)))?;
        }
        println!("edit: {} {} views -> {}", views.len(), split_name, rgb_dir.display());
    }
    write_json(&script, &out.join("edit_script.json"))?;
    echo_config(&cfg, out)?;
    Ok(())
}

#[derive(Serialize)]
struct EvalReport {
    acc: Option<f64>,
    miou: Option<f64>,
    n_acc: Option<f64>,
    n_miou: Option<f64>,
    #[serde(serialize_with = "ser_opt_inf")]
    psnr: Option<f64>,
    ssim: Option<f64>,
    per_class_iou: Option<Vec<(u8, f64)>>,
}

/// PSNR of an exact match is infinite; JSON has no literal for it, so it is
/// written as the string "inf".
fn ser_opt_inf<S: serde::Serializer>(v: &Option<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    match v {
        None => s.serialize_none(),
        Some(x) if x.is_infinite() && *x > 0.0 => s.serialize_str("inf"),
        Some(x) => s.serialize_f64(*x),
    }
}

/// Pools every view carrying a ground-truth mask; predictions are looked up
/// by view name and must exist.
fn eval_masks(views: &[View], dir: &Path, split: &str) -> Result<SegMetrics> {
    let mut pred = Vec::new();
    let mut gt = Vec::new();
    for v in views {
        let Some(mask) = &v.mask else { continue };
        let path = dir.join(format!("{}.png", v.name));
        if !path.is_file() {
            return Err(Error::Dataset(format!(
                "no predicted mask for {split} view {} at {}",
                v.name,
                path.display()
            )));
        }
        pred.push(load_label_png(&path)?);
        gt.push(mask.clone());
    }
    if gt.is_empty() {
        return Err(Error::Dataset(format!("{split} split carries no ground-truth masks")));
    }
    seg_metrics(&pred, &gt)
}

/// Mean PSNR/SSIM over the split; any exact match pushes the mean PSNR to
/// infinity, which serializes as "inf".
fn eval_renders(views: &[View], dir: &Path) -> Result<(f64, f64)> {
    if views.is_empty() {
        return Err(Error::Dataset("test split is empty".into()));
    }
    let (mut psnr_sum, mut ssim_sum) = (0.0f64, 0.0f64);
    for v in views {
        let path = dir.join(format!("{}.png", v.name));
        let rendered = load_rgb_png(&path)?;
        let (p, s) = psnr_ssim(&rendered, &v.image)?;
        psnr_sum += p;
        ssim_sum += s;
    }
    let n = views.len() as f64;
    Ok((psnr_sum / n, ssim_sum / n))
}

fn eval(
    data: &Path,
    masks_train: Option<&Path>,
    masks_test: Option<&Path>,
    renders_test: Option<&Path>,
    out: &Path,
) -> Result<()> {
    if masks_train.is_none() && masks_test.is_none() && renders_test.is_none() {
        return Err(Error::Config(
            "nothing to evaluate: pass --masks-train, --masks-test, or --renders-test".into(),
        ));
    }
    let ds = load_dataset(data)?;
    let train_seg = masks_train.map(|d| eval_masks(&ds.train, d, "train")).transpose()?;
    let test_seg = masks_test.map(|d| eval_masks(&ds.test, d, "test")).transpose()?;
    let nvs = renders_test.map(|d| eval_renders(&ds.test, d)).transpose()?;
    let per_class_iou = train_seg
        .as_ref()
        .or(test_seg.as_ref())
        .map(|m| m.per_class_iou.clone());
    let report = EvalReport {
        acc: train_seg.as_ref().map(|m| m.acc),
        miou: train_seg.as_ref().map(|m| m.miou),
        n_acc: test_seg.as_ref().map(|m| m.acc),
        n_miou: test_seg.as_ref().map(|m| m.miou),
        psnr: nvs.map(|x| x.0),
        ssim: nvs.map(|x| x.1),
        per_class_iou,
    };
    mkdir(out)?;
    write_json(&report, &out.join("metrics.json"))?;
    #[derive(Serialize)]
    struct EvalInputs {
        data: String,
        masks_train: Option<String>,
        masks_test: Option<String>,
        renders_test: Option<String>,
    }
    write_json(
        &EvalInputs {
            data: data.display().to_string(),
            masks_train: masks_train.map(|p| p.display().to_string()),
            masks_test: masks_test.map(|p| p.display().to_string()),
            renders_test: renders_test.map(|p| p.display().to_string()),
        },
        &out.join("eval_config.json"),
    )?;
    let fmt = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{v:.4}"));
    println!(
        "eval: acc {} miou {} n_acc {} n_miou {} psnr {} ssim {}",
        fmt(report.acc),
        fmt(report.miou),
        fmt(report.n_acc),
        fmt(report.n_miou),
        fmt(report.psnr),
        fmt(report.ssim)
    );
    Ok(())
}
