use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use tpmvcc_core::dataset::Dataset;
use tpmvcc_core::error::Error;
use tpmvcc_core::geometry::{apply_homography, invert_homography, plane_homography, PlaneKind};
use tpmvcc_core::simulator::{
    emit_dataset, frame_rng, render_view, sample_layout, CameraSpec, Chicken, SceneConfig, Simulator,
};

fn quiet() -> SceneConfig {
    SceneConfig { noise_std: 0.0, ..SceneConfig::default() }
}

fn files(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().display().to_string(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn empty_pen_renders_background_only() {
    let cfg = SceneConfig { count_range: [0, 0], ..quiet() };
    let frame = Simulator::new(cfg.clone()).unwrap().frame(0).unwrap();
    assert_eq!(frame.count(), 0);
    assert_eq!(frame.scene_density.count(), 0.0);
    for v in &frame.views {
        assert!(v.points.is_empty());
        assert!(v.image.data().iter().all(|&p| p == cfg.background as f32 as f64));
        assert_eq!(v.density.as_ref().unwrap().count(), 0.0);
    }
}

#[test]
fn layouts_respect_separation_walls_and_count() {
    let cfg = SceneConfig::default();
    let [w, h] = cfg.extent();
    for seed in 0..200 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts = sample_layout(&cfg, &mut rng).unwrap();
        assert!((cfg.count_range[0]..=cfg.count_range[1]).contains(&pts.len()));
        for (i, p) in pts.iter().enumerate() {
            let r = cfg.chicken_radius;
            assert!(p[0] >= r && p[0] <= w - r && p[1] >= r && p[1] <= h - r, "{p:?}");
            for q in &pts[i + 1..] {
                assert!(((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt() >= cfg.min_separation);
            }
        }
    }
}

#[test]
fn impossible_layout_is_a_layout_error() {
    let cfg = SceneConfig { count_range: [400, 400], min_separation: 0.5, max_attempts: 50, ..SceneConfig::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert!(matches!(sample_layout(&cfg, &mut rng), Err(Error::Layout(_))));
}

#[test]
fn frames_depend_only_on_seed_and_id() {
    let sim = Simulator::new(SceneConfig::default()).unwrap();
    let small = sim.generate(4).unwrap();
    let large = sim.generate(10).unwrap();
    assert_eq!(small.frames(), &large.frames()[..4]);
    assert_eq!(sim.frame(3).unwrap(), small.frames()[3]);
    let other = Simulator::new(SceneConfig { seed: 43, ..SceneConfig::default() }).unwrap();
    assert_ne!(other.frame(3).unwrap().ground_points, small.frames()[3].ground_points);
}

#[test]
fn single_blob_peaks_at_its_annotation() {
    let cfg = quiet();
    let cams = cfg.camera_models().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for (x, y) in [(1.0, 1.0), (2.0, 2.5), (3.1, 1.7)] {
        let chick = Chicken { position: [x, y], heading: 0.7, albedo: 0.9 };
        for (id, cam) in &cams {
            let view = render_view(&[chick], cam, &cfg, &mut rng).unwrap();
            let Some(&[u, v]) = view.points.first() else { continue };
            let (w, data) = (cam.width, view.image.data());
            let peak = (0..data.len()).max_by(|&a, &b| data[a].total_cmp(&data[b])).unwrap();
            let (pu, pv) = ((peak % w) as f64, (peak / w) as f64);
            assert!((pu - u).abs() <= 1.0 && (pv - v).abs() <= 1.0, "view {id}: peak ({pu},{pv}) vs ({u},{v})");
        }
    }
}

#[test]
fn nearer_blob_occludes_farther_one() {
    let cfg = quiet();
    let cam = &cfg.camera_models().unwrap()[0].1;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    // Camera 1 sits south of the pen looking north, so the smaller y is nearer.
    let near = Chicken { position: [1.8, 1.2], heading: 0.0, albedo: 0.95 };
    let far = Chicken { position: [1.8, 1.45], heading: 0.0, albedo: 0.65 };
    let alone = render_view(&[near], cam, &cfg, &mut rng).unwrap();
    let [u, v] = alone.points[0];
    let idx = v.round() as usize * cam.width + u.round() as usize;
    let far_alone = render_view(&[far], cam, &cfg, &mut rng).unwrap();
    assert!(far_alone.image.data()[idx] > cfg.background, "the far blob must overlap the near one");
    for pair in [[near, far], [far, near]] {
        let both = render_view(&pair, cam, &cfg, &mut rng).unwrap();
        assert_eq!(both.image.data()[idx], alone.image.data()[idx]);
        assert_eq!(both.points.len(), 2);
    }
}

#[test]
fn annotations_agree_across_views_and_maps() {
    let cfg = SceneConfig::default();
    let sim = Simulator::new(cfg.clone()).unwrap();
    let layout = cfg.plane_layout();
    let mut ground = layout.plane(PlaneKind::Ground).clone();
    ground.offset = cfg.center_height;
    for id in 0..5 {
        let f = sim.frame(id).unwrap();
        assert!((f.scene_density.count() - f.count() as f64).abs() < 1e-9);
        for v in &f.views {
            let den = v.density.as_ref().unwrap();
            assert!((den.count() - v.points.len() as f64).abs() < 1e-9);
            let cam = &sim.cameras().iter().find(|c| c.0 == v.id).unwrap().1;
            let inv = invert_homography(&plane_homography(cam, &ground).unwrap()).unwrap();
            for &[u, px_v] in &v.points {
                let (x, y, _) = apply_homography(&inv, [u, px_v]);
                let nearest = f
                    .ground_points
                    .iter()
                    .map(|g| ((g[0] - x).powi(2) + (g[1] - y).powi(2)).sqrt())
                    .fold(f64::INFINITY, f64::min);
                assert!(nearest < cfg.cell_size, "frame {id} view {}: {nearest}", v.id);
            }
        }
    }
}

#[test]
fn every_camera_sees_part_and_the_rig_sees_all() {
    let cfg = SceneConfig::default();
    let masks = cfg.coverage_masks().unwrap();
    let cells = cfg.grid[0] * cfg.grid[1];
    for (id, m) in &masks {
        let seen = m.iter().filter(|&&b| b).count();
        assert!(seen > 0 && seen < cells, "view {id} sees {seen} of {cells}");
    }
    assert!((0..cells).all(|c| masks.iter().any(|(_, m)| m[c])));
}

#[test]
fn narrow_rig_fails_coverage() {
    let cfg = SceneConfig {
        cameras: vec![CameraSpec { id: 1, position: [1.5, -1.2, 2.2], target: [1.8, 2.0, 0.0], focal: 76.0 }],
        ..SceneConfig::default()
    };
    assert!(matches!(cfg.validate(), Err(Error::Coverage(_))));
}

#[test]
fn emitted_dataset_loads_back_and_reruns_identically() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = SceneConfig::default();
    let ds = emit_dataset(&cfg, 1, a.path()).unwrap();
    emit_dataset(&cfg, 1, b.path()).unwrap();
    for name in ["manifest.txt", "cameras/view1.cam", "frames/0/view1.img.tpt", "frames/0/scene.den.tpt", "frames/0/scene.pts.csv"] {
        assert!(a.path().join(name).is_file(), "{name}");
    }
    assert_eq!(files(a.path()), files(b.path()));
    assert_eq!(Dataset::load(a.path()).unwrap(), ds);
}

#[test]
fn frame_rng_streams_differ() {
    use rand::Rng;
    let a: u64 = frame_rng(1, 0).random();
    let b: u64 = frame_rng(1, 1).random();
    assert_ne!(a, b);
    assert_eq!(a, frame_rng(1, 0).random::<u64>());
}
