//! Synthetic multi-view flock scenes: calibrated cameras around a pen,
//! clustered chicken proxies rendered as occluding blobs, and complete
//! point and density annotations.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, DatasetManifest, SceneFrame, ViewFrame};
use crate::density::{render_density, render_view_density};
use crate::error::{Error, Result};
use crate::geometry::{build_sampling_grid, CameraModel, PlaneKind};
use crate::model::PlaneLayout;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraSpec {
    pub id: usize,
    pub position: [f64; 3],
    /// World point on the optical axis.
    pub target: [f64; 3],
    /// Focal length in pixels.
    pub focal: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub seed: u64,
    /// Ground grid `[rows, cols]`; the pen spans `cols * cell_size` along x
    /// and `rows * cell_size` along y from the origin.
    pub grid: [usize; 2],
    pub cell_size: f64,
    /// Height of the chicken body centers, meters.
    pub center_height: f64,
    /// `[height, width]` in pixels.
    pub image_size: [usize; 2],
    pub cameras: Vec<CameraSpec>,
    /// Inclusive `[min, max]` chickens per frame.
    pub count_range: [usize; 2],
    pub min_separation: f64,
    pub clusters: usize,
    pub cluster_spread: f64,
    /// Share of chickens drawn around cluster centers.
    pub cluster_fraction: f64,
    /// Body half-width, meters; the body is 1.4x longer along its heading.
    pub chicken_radius: f64,
    pub albedo: [f64; 2],
    pub background: f64,
    pub noise_std: f64,
    /// Stride between image pixels and view density cells.
    pub view_downsample: usize,
    /// Gaussian sigma in view density cells.
    pub view_sigma: f64,
    /// Gaussian sigma in ground cells.
    pub scene_sigma: f64,
    pub train_fraction: f64,
    /// Rejection-sampling attempts per chicken.
    pub max_attempts: usize,
}

impl Default for SceneConfig {
    fn default() -> Self {
        let focal = 76.0;
        let z = 2.2;
        SceneConfig {
            seed: 42,
            grid: [64, 64],
            cell_size: 0.0625,
            center_height: 0.15,
            image_size: [64, 80],
            cameras: vec![
                CameraSpec { id: 1, position: [1.5, -1.2, z], target: [1.8, 2.0, 0.0], focal },
                CameraSpec { id: 2, position: [-1.2, 2.5, z], target: [2.0, 2.2, 0.0], focal },
                CameraSpec { id: 3, position: [2.6, 5.2, z], target: [2.2, 2.0, 0.0], focal },
            ],
            count_range: [20, 50],
            min_separation: 0.22,
            clusters: 3,
            cluster_spread: 0.35,
            cluster_fraction: 0.5,
            chicken_radius: 0.1,
            albedo: [0.65, 1.0],
            background: 0.15,
            noise_std: 0.02,
            view_downsample: 4,
            view_sigma: 1.0,
            scene_sigma: 2.0,
            train_fraction: 0.5,
            max_attempts: 1000,
        }
    }
}

impl SceneConfig {
    /// The seeded evaluation benchmark: 300 frames split 200 / 100.
    pub const BENCHMARK_FRAMES: usize = 300;

    /// Default scene with the benchmark's two-thirds training split.
    pub fn benchmark() -> Self {
        SceneConfig {
            train_fraction: 2.0 / 3.0,
            ..SceneConfig::default()
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: SceneConfig =
            toml::from_str(text).map_err(|e| Error::InvalidArgument(format!("scene config: {e}")))?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scene config serializes")
    }

    /// Pen size `[x, y]` in meters.
    pub fn extent(&self) -> [f64; 2] {
        [self.grid[1] as f64 * self.cell_size, self.grid[0] as f64 * self.cell_size]
    }

    pub fn plane_layout(&self) -> PlaneLayout {
        PlaneLayout::new([0.0, 0.0], self.cell_size, self.grid[0], self.grid[1], self.center_height)
    }

    /// Cameras sorted by id.
    pub fn camera_models(&self) -> Result<Vec<(usize, CameraModel)>> {
        let [h, w] = self.image_size;
        let mut cams = self
            .cameras
            .iter()
            .map(|c| Ok((c.id, CameraModel::look_at(c.position, c.target, c.focal, c.focal, w, h)?)))
            .collect::<Result<Vec<_>>>()?;
        cams.sort_by_key(|c| c.0);
        Ok(cams)
    }

    /// Per-camera ground coverage masks at density-map resolution.
    pub fn coverage_masks(&self) -> Result<Vec<(usize, Vec<bool>)>> {
        let layout = self.plane_layout();
        let scale = 1.0 / self.view_downsample as f64;
        self.camera_models()?
            .into_iter()
            .map(|(id, cam)| Ok((id, build_sampling_grid(&cam, &layout.ground, scale)?.mask)))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.grid.contains(&0) || !(self.cell_size > 0.0) {
            return bad("ground grid needs positive size".into());
        }
        if !(self.center_height > 0.0) {
            return bad("center height must be positive".into());
        }
        if self.count_range[1] < self.count_range[0] {
            return bad(format!("count range {:?} is inverted", self.count_range));
        }
        if self.cameras.is_empty() {
            return bad("at least one camera is required".into());
        }
        let mut ids: Vec<usize> = self.cameras.iter().map(|c| c.id).collect();
        ids.sort_unstable();
        if ids[0] == 0 || ids.windows(2).any(|w| w[0] == w[1]) {
            return bad(format!("camera ids must be distinct and 1-based, got {ids:?}"));
        }
        let d = self.view_downsample;
        if d == 0 || self.image_size.iter().any(|&n| n == 0 || n % d != 0) {
            return bad(format!("image size {:?} must be a positive multiple of {d}", self.image_size));
        }
        if !(self.view_sigma > 0.0 && self.scene_sigma > 0.0) {
            return bad("density sigmas must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.cluster_fraction) || !(0.0..=1.0).contains(&self.train_fraction) {
            return bad("fractions must lie in [0, 1]".into());
        }
        if !(self.albedo[0] <= self.albedo[1]) || self.noise_std < 0.0 || self.chicken_radius <= 0.0 {
            return bad("albedo range, noise and radius must be sane".into());
        }
        let extent = self.extent();
        if 2.0 * self.chicken_radius >= extent[0].min(extent[1]) {
            return bad("pen is smaller than a chicken".into());
        }
        let masks = self.coverage_masks()?;
        let uncovered = (0..self.grid[0] * self.grid[1])
            .filter(|&c| !masks.iter().any(|(_, m)| m[c]))
            .count();
        if uncovered > 0 {
            return Err(Error::Coverage(format!(
                "{uncovered} ground cells are seen by no camera; widen the rig"
            )));
        }
        // Front and side planes must not pass through a camera center.
        let layout = self.plane_layout();
        for (_, cam) in self.camera_models()? {
            for kind in [PlaneKind::Front, PlaneKind::Side] {
                crate::geometry::plane_homography(&cam, layout.plane(kind))?;
            }
        }
        Ok(())
    }
}

/// Per-frame generator seeded from `(seed, frame_id)`.
pub fn frame_rng(seed: u64, frame_id: u32) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(frame_id as u64);
    rng
}

/// Ground positions `(x, y)` in meters, at least `min_separation` apart
/// and `chicken_radius` inside the pen walls.
pub fn sample_layout(config: &SceneConfig, rng: &mut impl Rng) -> Result<Vec<[f64; 2]>> {
    let [lo, hi] = config.count_range;
    let n = rng.random_range(lo..=hi);
    if n == 0 {
        return Ok(Vec::new());
    }
    let extent = config.extent();
    let m = config.chicken_radius;
    let uniform = |rng: &mut dyn rand::RngCore| -> [f64; 2] {
        [rng.random_range(m..extent[0] - m), rng.random_range(m..extent[1] - m)]
    };
    let centers: Vec<[f64; 2]> = (0..config.clusters).map(|_| uniform(rng)).collect();
    let spread = Normal::new(0.0, config.cluster_spread.max(0.0)).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let n_clustered = if centers.is_empty() {
        0
    } else {
        (n as f64 * config.cluster_fraction).round() as usize
    };
    let min_d2 = config.min_separation * config.min_separation;
    let mut out: Vec<[f64; 2]> = Vec::with_capacity(n);
    for k in 0..n {
        let mut placed = false;
        for _ in 0..config.max_attempts {
            let p = if k < n_clustered {
                let c = centers[k % centers.len()];
                [c[0] + spread.sample(rng), c[1] + spread.sample(rng)]
            } else {
                uniform(rng)
            };
            let inside = p[0] >= m && p[0] <= extent[0] - m && p[1] >= m && p[1] <= extent[1] - m;
            if inside && out.iter().all(|q| (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) >= min_d2) {
                out.push(p);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::Layout(format!(
                "could not place chicken {} of {n} at separation {} after {} attempts; lower the count or the separation",
                k + 1,
                config.min_separation,
                config.max_attempts
            )));
        }
    }
    Ok(out)
}

/// One chicken as seen by the renderer.
#[derive(Clone, Copy, Debug)]
pub struct Chicken {
    pub position: [f64; 2],
    pub heading: f64,
    pub albedo: f64,
}

pub struct RenderedView {
    /// `[1, H, W]`, values in `[0, 1]` rounded to single precision.
    pub image: Tensor,
    /// Pixel coordinates of chicken centers in front of the camera and
    /// inside the image.
    pub points: Vec<[f64; 2]>,
}

/// Draws blobs far-to-near, nearer blobs overwriting farther ones, then
/// adds noise and clamps.
pub fn render_view(
    chickens: &[Chicken],
    cam: &CameraModel,
    config: &SceneConfig,
    rng: &mut impl Rng,
) -> Result<RenderedView> {
    let (w, h) = (cam.width, cam.height);
    let mut img = vec![config.background; w * h];
    let r = config.chicken_radius;
    let hc = config.center_height;
    let mut points = Vec::new();
    let mut blobs = Vec::with_capacity(chickens.len());
    for ch in chickens {
        let world = [ch.position[0], ch.position[1], hc];
        let cam_pt = cam.rotation * Vector3::from(world) + cam.translation;
        if cam_pt.z <= 0.0 {
            continue;
        }
        let (u, v, depth) = cam.project(world)?;
        if cam.in_image(u, v) {
            points.push([u, v]);
        }
        // Body ellipsoid, semi-axes treated as 2 sigma.
        let (s, c) = ch.heading.sin_cos();
        let rot = Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0);
        let semi = Vector3::new(1.4 * r, r, 0.8 * hc) / 2.0;
        let cov_world = rot * Matrix3::from_diagonal(&semi.component_mul(&semi)) * rot.transpose();
        let z = cam_pt.z;
        let j_cam = Matrix2x3::new(
            cam.fx / z,
            0.0,
            -cam.fx * cam_pt.x / (z * z),
            0.0,
            cam.fy / z,
            -cam.fy * cam_pt.y / (z * z),
        );
        let j = j_cam * cam.rotation;
        let cov: Matrix2<f64> = j * cov_world * j.transpose() + Matrix2::identity() * 0.05;
        let inv = cov.try_inverse().ok_or(Error::Singular)?;
        blobs.push((depth, u, v, cov, inv, ch.albedo));
    }
    blobs.sort_by(|a, b| b.0.total_cmp(&a.0));
    for (_, u, v, cov, inv, albedo) in blobs {
        let (ru, rv) = (2.0 * cov[(0, 0)].sqrt(), 2.0 * cov[(1, 1)].sqrt());
        let i0 = (v - rv).floor().max(0.0) as usize;
        let i1 = (v + rv).ceil().min((h - 1) as f64);
        let j0 = (u - ru).floor().max(0.0) as usize;
        let j1 = (u + ru).ceil().min((w - 1) as f64);
        if i1 < 0.0 || j1 < 0.0 {
            continue;
        }
        for i in i0..=i1 as usize {
            for jj in j0..=j1 as usize {
                let d = Vector2::new(jj as f64 - u, i as f64 - v);
                let m2 = (d.transpose() * inv * d)[(0, 0)];
                if m2 <= 4.0 {
                    img[i * w + jj] = albedo * (0.5 + 0.5 * (-0.5 * m2).exp());
                }
            }
        }
    }
    if config.noise_std > 0.0 {
        let noise = Normal::new(0.0, config.noise_std).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        for p in img.iter_mut() {
            *p += noise.sample(rng);
        }
    }
    for p in img.iter_mut() {
        *p = (p.clamp(0.0, 1.0) as f32) as f64;
    }
    Ok(RenderedView {
        image: Tensor::new(vec![1, h, w], img)?,
        points,
    })
}

pub struct Simulator {
    config: SceneConfig,
    cameras: Vec<(usize, CameraModel)>,
}

impl Simulator {
    pub fn new(config: SceneConfig) -> Result<Self> {
        config.validate()?;
        let cameras = config.camera_models()?;
        Ok(Simulator { config, cameras })
    }

    pub fn config(&self) -> &SceneConfig {
        &self.config
    }

    pub fn cameras(&self) -> &[(usize, CameraModel)] {
        &self.cameras
    }

    pub fn frame(&self, frame_id: u32) -> Result<SceneFrame> {
        let cfg = &self.config;
        let mut rng = frame_rng(cfg.seed, frame_id);
        let positions = sample_layout(cfg, &mut rng)?;
        let chickens: Vec<Chicken> = positions
            .iter()
            .map(|&position| Chicken {
                position,
                heading: rng.random_range(0.0..2.0 * PI),
                albedo: rng.random_range(cfg.albedo[0]..=cfg.albedo[1]),
            })
            .collect();
        let d = cfg.view_downsample;
        let mut views = Vec::with_capacity(self.cameras.len());
        for (id, cam) in &self.cameras {
            let rendered = render_view(&chickens, cam, cfg, &mut rng)?;
            let density = render_view_density(&rendered.points, cam.height / d, cam.width / d, d as f64, cfg.view_sigma)?;
            views.push(ViewFrame {
                id: *id,
                image: rendered.image,
                points: rendered.points,
                density: Some(density),
            });
        }
        let scene_density = render_density(&positions, cfg.grid[0], cfg.grid[1], cfg.cell_size, cfg.scene_sigma)?;
        Ok(SceneFrame {
            id: frame_id,
            views,
            ground_points: positions,
            scene_density,
        })
    }

    /// Frames `0..n_frames`, generated in parallel; the first
    /// `round(n * train_fraction)` form the training split.
    pub fn generate(&self, n_frames: usize) -> Result<Dataset> {
        let frames = (0..n_frames as u32)
            .into_par_iter()
            .map(|id| self.frame(id))
            .collect::<Result<Vec<_>>>()?;
        let n_train = (n_frames as f64 * self.config.train_fraction).round() as usize;
        let ids: Vec<u32> = (0..n_frames as u32).collect();
        let manifest = DatasetManifest {
            format: DatasetManifest::FORMAT.into(),
            frames: n_frames,
            views: self.cameras.iter().map(|c| c.0).collect(),
            train: ids[..n_train].to_vec(),
            test: ids[n_train..].to_vec(),
            scene: self.config.clone(),
        };
        Ok(Dataset::new(manifest, self.cameras.clone(), frames))
    }
}

pub fn emit_dataset(config: &SceneConfig, n_frames: usize, output_dir: &Path) -> Result<Dataset> {
    let ds = Simulator::new(config.clone())?.generate(n_frames)?;
    ds.save(output_dir)?;
    Ok(ds)
}
