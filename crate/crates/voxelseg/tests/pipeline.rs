//! End-to-end library pipeline on a deliberately tiny scene: generate views,
//! bootstrap labels, train briefly, then exercise rendering, segmentation,
//! refinement and editing on the result. Budgets are sized for signal, not
//! quality — quality bars live in the acceptance suite.

use voxelseg::dataset::SceneDataset;
use voxelseg::em::{refine_views, EmOptions};
use voxelseg::features::{extract_features, FeatureOpts};
use voxelseg::initseg::bootstrap_labels;
use voxelseg::io::save_checkpoint;
use voxelseg::metrics::seg_metrics;
use voxelseg::model::{ModelConfig, SceneModel};
use voxelseg::render::{render_image, render_label_map};
use voxelseg::scene::{
    generate_scene, CameraRing, GroundSpec, LightSpec, ObjectSpec, Primitive, SceneSpec, Texture,
    WallSpec,
};
use voxelseg::train::{train, TrainConfig, TrainView};
use voxelseg::types::LabelMap;

fn tiny_spec() -> SceneSpec {
    SceneSpec {
        width: 24,
        height: 24,
        camera_angle_x: 0.8,
        bounds_min: [-1.4, -1.4, -0.6],
        bounds_max: [1.4, 1.4, 1.3],
        objects: vec![ObjectSpec {
            primitive: Primitive::Sphere { center: [0.0, 0.0, 0.05], radius: 0.45 },
            texture: Texture::Solid { rgb: [0.85, 0.22, 0.18] },
        }],
        ground: Some(GroundSpec {
            top_z: -0.4,
            thickness: 0.15,
            half_extent: 1.3,
            texture: Texture::Noise {
                a: [0.30, 0.31, 0.34],
                b: [0.36, 0.37, 0.40],
                scale: 0.7,
            },
        }),
        walls: Some(WallSpec {
            top_z: 1.2,
            thickness: 0.12,
            texture: Texture::Noise {
                a: [0.33, 0.34, 0.37],
                b: [0.39, 0.40, 0.43],
                scale: 0.7,
            },
        }),
        light: LightSpec { direction: [-0.35, 0.3, -1.0], ambient: 0.55 },
        cameras: CameraRing { n_train: 6, n_test: 2, radius: 1.7, elevation_deg: 44.0 },
        seed: 11,
    }
}

fn tiny_model_cfg(spec: &SceneSpec) -> ModelConfig {
    ModelConfig {
        k: 1,
        sh_degree: 0,
        resolution: [20, 20, 20],
        bounds_min: spec.bounds_min,
        bounds_max: spec.bounds_max,
        ..ModelConfig::default()
    }
}

fn tiny_train_cfg() -> TrainConfig {
    TrainConfig {
        iterations: 800,
        batch_size: 128,
        n_samples: 48,
        seed: 7,
        ..TrainConfig::default()
    }
}

fn trained(ds: &SceneDataset) -> (SceneModel<f32>, Vec<voxelseg::train::TraceRow>) {
    let spec = tiny_spec();
    let boot = bootstrap_labels(
        &ds.train.iter().map(|v| v.image.clone()).collect::<Vec<_>>(),
        1,
        FeatureOpts::default(),
        0,
    )
    .unwrap();
    let views: Vec<TrainView<f32>> = ds
        .train
        .iter()
        .zip(&boot.labels)
        .map(|(v, l)| TrainView {
            camera: v.camera.cast(),
            image: v.image.clone(),
            init_labels: Some(l.clone()),
        })
        .collect();
    let mut model = SceneModel::<f32>::new(&tiny_model_cfg(&spec), 0).unwrap();
    let trace = train(&mut model, &views, &tiny_train_cfg()).unwrap();
    (model, trace)
}

#[test]
fn generate_bootstrap_train_segment() {
    let ds = generate_scene(&tiny_spec()).unwrap();
    assert_eq!(ds.train.len(), 6);
    assert_eq!(ds.test.len(), 2);

    let (model, trace) = trained(&ds);
    assert_eq!(trace.len(), 800);

    // Photometric fit improves substantially over the run.
    let head: f64 = trace[..20].iter().map(|r| r.photo_pos).sum::<f64>() / 20.0;
    let tail: f64 = trace[780..].iter().map(|r| r.photo_pos).sum::<f64>() / 20.0;
    assert!(
        tail < head * 0.5,
        "photometric loss should at least halve: head {head:.4} tail {tail:.4}"
    );
    assert!(trace.iter().all(|r| r.total.is_finite()));

    // The rendered label maps segment the sphere: some foreground on every
    // train view, and the pooled metric beats the all-background baseline.
    let cams: Vec<_> = ds.train.iter().map(|v| v.camera.cast::<f32>()).collect();
    let pred: Vec<LabelMap> = cams.iter().map(|c| render_label_map(&model, c, 48)).collect();
    let gt: Vec<LabelMap> = ds.train.iter().map(|v| v.mask.clone().unwrap()).collect();
    for p in &pred {
        assert!(p.area(1) > 0, "every view sees the sphere");
    }
    let m = seg_metrics(&pred, &gt).unwrap();
    let baseline = {
        let empty: Vec<LabelMap> = gt.iter().map(|g| LabelMap::new(g.width, g.height, 0)).collect();
        seg_metrics(&empty, &gt).unwrap()
    };
    assert!(m.acc > baseline.acc, "acc {:.3} <= baseline {:.3}", m.acc, baseline.acc);
    assert!(m.miou > baseline.miou, "miou {:.3} <= baseline {:.3}", m.miou, baseline.miou);

    // EM refinement keeps shapes and stays on the simplex (probe one view).
    let feats = extract_features(&ds.train[0].image, FeatureOpts::default()).unwrap();
    let sem = voxelseg::render::render_semantics(&model, &cams[0], 48);
    let refined =
        refine_views(&[(&feats, &pred[0], &sem)], EmOptions::default()).unwrap();
    assert_eq!(refined[0].0.width, 24);

    // Rendered color image stays in range.
    let img = render_image(&model, &cams[0], 48);
    assert!(img.data.iter().all(|&v| (0.0..=1.0).contains(&v) && v.is_finite()));
}

#[test]
fn training_is_deterministic() {
    let ds = generate_scene(&tiny_spec()).unwrap();
    let (m1, t1) = trained(&ds);
    let (m2, t2) = trained(&ds);
    for (a, b) in t1.iter().zip(&t2) {
        assert_eq!(a.total.to_bits(), b.total.to_bits(), "trace diverged at iter {}", a.iteration);
    }
    let dir = tempfile::tempdir().unwrap();
    let p1 = dir.path().join("a.rfp");
    let p2 = dir.path().join("b.rfp");
    save_checkpoint(&m1, &p1).unwrap();
    save_checkpoint(&m2, &p2).unwrap();
    assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
}

#[test]
fn editing_a_trained_model_moves_and_removes() {
    let ds = generate_scene(&tiny_spec()).unwrap();
    let (model, _) = trained(&ds);
    let cam = ds.train[0].camera.cast::<f32>();
    let before = render_label_map(&model, &cam, 48);
    let area_before = before.area(1);
    assert!(area_before > 0);

    // Remove: the object's pixels disappear.
    let script = voxelseg::edit::EditScript {
        edits: vec![voxelseg::edit::Edit {
            label: 1,
            kind: voxelseg::edit::EditKind::Remove,
            rotation: [0.0; 3],
            translation: [0.0; 3],
            new_label: None,
        }],
    };
    let scene = voxelseg::edit::apply_edits(&model, &script).unwrap();
    let out = voxelseg::edit::render_edited(&scene, &cam, 48);
    assert!(
        out.labels.area(1) < area_before / 8,
        "removal left {} of {} px",
        out.labels.area(1),
        area_before
    );

    // Empty script: byte-identical to the plain render.
    let noop = voxelseg::edit::apply_edits(&model, &voxelseg::edit::EditScript::default()).unwrap();
    let plain = render_image(&model, &cam, 48);
    let rendered = voxelseg::edit::render_edited(&noop, &cam, 48);
    assert_eq!(plain.data.len(), rendered.rgb.data.len());
    for (a, b) in plain.data.iter().zip(&rendered.rgb.data) {
        assert_eq!(a.to_bits(), b.to_bits());
    }
}
