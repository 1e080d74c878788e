//! The tri-plane multi-view counting network.
//!
//! ```text
//! image_v ─ FCN-7 (shared) ─ warp → {ground, front, side}_v
//!   per plane: mask-weighted mean over views
//!   front/side: collapse vertical axis, repeat along ground y / x
//!   per plane 1x1 fusion conv ─ concat (3C) ─ decoder ─ density
//! ```

mod config;
mod params;

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub use config::{Fcn7Config, ModelConfig, PlaneLayout, FCN7_LAYERS};
pub use params::{ParamGroup, ParamSet};

use crate::autodiff::{AlignAxis, Tape, Var};
use crate::error::{Error, Result};
use crate::geometry::{self, CameraModel, PlaneKind, SamplingGrid};
use crate::tensor::Tensor;

/// Sampling grids of one calibrated view, ordered ground, front, side.
#[derive(Clone, Debug)]
pub struct ViewGeometry {
    pub id: usize,
    pub camera: CameraModel,
    pub grids: [Arc<SamplingGrid>; 3],
}

/// Cameras with their cached plane grids, sorted by view id.
#[derive(Clone, Debug)]
pub struct Rig {
    views: Vec<ViewGeometry>,
}

impl Rig {
    pub fn new(cameras: &[(usize, CameraModel)], planes: &PlaneLayout, feature_scale: f64) -> Result<Self> {
        let mut views = cameras
            .iter()
            .map(|(id, cam)| {
                let grid = |kind| geometry::build_sampling_grid(cam, planes.plane(kind), feature_scale).map(Arc::new);
                Ok(ViewGeometry {
                    id: *id,
                    camera: cam.clone(),
                    grids: [grid(PlaneKind::Ground)?, grid(PlaneKind::Front)?, grid(PlaneKind::Side)?],
                })
            })
            .collect::<Result<Vec<_>>>()?;
        views.sort_by_key(|v| v.id);
        if views.windows(2).any(|w| w[0].id == w[1].id) {
            return Err(Error::InvalidArgument("duplicate view id in rig".into()));
        }
        Ok(Rig { views })
    }

    pub fn ids(&self) -> Vec<usize> {
        self.views.iter().map(|v| v.id).collect()
    }

    pub fn view(&self, id: usize) -> Result<&ViewGeometry> {
        self.views.iter().find(|v| v.id == id).ok_or(Error::UnknownView(id))
    }

    pub fn views(&self) -> &[ViewGeometry] {
        &self.views
    }

    /// Ground cells seen by at least one of `ids`.
    pub fn covered_cells(&self, ids: &[usize]) -> Result<Vec<bool>> {
        let mut covered: Option<Vec<bool>> = None;
        for &id in ids {
            let mask = &self.view(id)?.grids[0].mask;
            match covered.as_mut() {
                None => covered = Some(mask.clone()),
                Some(c) => c.iter_mut().zip(mask).for_each(|(a, &b)| *a |= b),
            }
        }
        covered.ok_or_else(|| Error::InvalidArgument("empty view subset".into()))
    }
}

#[derive(Clone, Copy, Debug)]
struct ConvLayer {
    weight: usize,
    bias: usize,
    stride: usize,
    dilation: usize,
    padding: usize,
    relu: bool,
}

/// Parameters bound as leaves on one tape, indexed like the [`ParamSet`].
#[derive(Clone, Debug)]
pub struct Bound {
    pub vars: Vec<Var>,
    pub trainable: Vec<bool>,
}

#[derive(Clone, Copy, Debug)]
pub struct SceneOutput {
    pub density: Var,
    pub fused: Var,
}

#[derive(Clone, Debug)]
pub struct TpMvcc {
    config: ModelConfig,
    params: ParamSet,
    backbone: Vec<ConvLayer>,
    view_head: ConvLayer,
    fusion: [ConvLayer; 3],
    decoder: Vec<ConvLayer>,
}

fn he_normal(rng: &mut ChaCha8Rng, shape: &[usize], gain: f64) -> Tensor {
    let fan_in: usize = shape[1..].iter().product();
    let normal = Normal::new(0.0, gain * (2.0 / fan_in as f64).sqrt()).expect("finite std");
    Tensor::from_fn(shape, |_| normal.sample(rng))
}

const PLANE_NAMES: [&str; 3] = ["ground", "front", "side"];

impl TpMvcc {
    /// Fresh model with seeded He-normal weights. Fusion convs start at
    /// the identity; density outputs start with a small positive bias.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::default();
        let bb = &config.backbone;
        let k = bb.kernel;

        let add_conv = |params: &mut ParamSet,
                            name: &str,
                            c_out: usize,
                            c_in: usize,
                            k: usize,
                            gain: f64,
                            bias: f64,
                            rng: &mut ChaCha8Rng| {
            let w = params.push(format!("{name}.weight"), he_normal(rng, &[c_out, c_in, k, k], gain));
            let b = params.push(format!("{name}.bias"), Tensor::full(&[c_out], bias));
            (w, b)
        };

        let mut backbone = Vec::with_capacity(FCN7_LAYERS);
        let mut c_in = bb.in_channels;
        for layer in 0..FCN7_LAYERS {
            let (weight, bias) = add_conv(&mut params, &format!("backbone.{layer}"), bb.channels[layer], c_in, k, 1.0, 0.0, &mut rng);
            let dilation = bb.dilations[layer];
            backbone.push(ConvLayer {
                weight,
                bias,
                stride: bb.strides[layer],
                dilation,
                padding: dilation * (k - 1) / 2,
                relu: true,
            });
            c_in = bb.channels[layer];
        }
        let c = bb.out_channels();

        let (weight, bias) = add_conv(&mut params, "view_head", 1, c, 1, 0.1, 0.01, &mut rng);
        let view_head = ConvLayer {
            weight,
            bias,
            stride: 1,
            dilation: 1,
            padding: 0,
            relu: true,
        };

        let fusion = PLANE_NAMES.map(|plane| {
            let mut eye = Tensor::zeros(&[c, c, 1, 1]);
            for i in 0..c {
                eye.data_mut()[i * c + i] = 1.0;
            }
            let weight = params.push(format!("fusion.{plane}.weight"), eye);
            let bias = params.push(format!("fusion.{plane}.bias"), Tensor::zeros(&[c]));
            ConvLayer {
                weight,
                bias,
                stride: 1,
                dilation: 1,
                padding: 0,
                relu: false,
            }
        });

        let mut decoder = Vec::new();
        let mut c_in = 3 * c;
        let n_dec = config.decoder_channels.len();
        for (layer, &c_out) in config.decoder_channels.iter().enumerate() {
            let last = layer + 1 == n_dec;
            let (gain, bias) = if last { (0.1, 0.01) } else { (1.0, 0.0) };
            let (weight, bias) = add_conv(&mut params, &format!("decoder.{layer}"), c_out, c_in, 3, gain, bias, &mut rng);
            let dilation = config.decoder_dilation;
            decoder.push(ConvLayer {
                weight,
                bias,
                stride: 1,
                dilation,
                padding: dilation,
                relu: true,
            });
            c_in = c_out;
        }

        Ok(TpMvcc {
            config,
            params,
            backbone,
            view_head,
            fusion,
            decoder,
        })
    }

    /// Rebuilds a model around stored parameters, checking names and shapes.
    pub fn from_params(config: ModelConfig, params: ParamSet) -> Result<Self> {
        let mut model = Self::new(config, 0)?;
        if params.len() != model.params.len() {
            return Err(Error::Checkpoint(format!(
                "architecture expects {} parameters, checkpoint has {}",
                model.params.len(),
                params.len()
            )));
        }
        for (name, t) in model.params.iter() {
            let stored = params.get(name).ok_or_else(|| {
                Error::Checkpoint(format!("checkpoint is missing parameter {name}"))
            })?;
            if stored.shape() != t.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter {name} has shape {:?}, architecture expects {:?}",
                    stored.shape(),
                    t.shape()
                )));
            }
        }
        let ordered = model
            .params
            .iter()
            .map(|(name, _)| (name.to_string(), params.get(name).unwrap().clone()))
            .collect();
        model.params = ParamSet::from_pairs(ordered);
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn feature_scale(&self) -> f64 {
        self.config.backbone.feature_scale()
    }

    pub fn rig(&self, cameras: &[(usize, CameraModel)]) -> Result<Rig> {
        Rig::new(cameras, &self.config.planes, self.feature_scale())
    }

    /// Binds every parameter as a leaf; groups where `trainable` is false
    /// are recorded without gradient tracking.
    pub fn bind(&self, tape: &mut Tape, trainable: impl Fn(ParamGroup) -> bool) -> Bound {
        let mut vars = Vec::with_capacity(self.params.len());
        let mut flags = Vec::with_capacity(self.params.len());
        for (name, t) in self.params.iter() {
            let train = trainable(ParamGroup::of(name));
            vars.push(tape.leaf(t.clone(), train));
            flags.push(train);
        }
        Bound { vars, trainable: flags }
    }

    fn conv(&self, tape: &mut Tape, b: &Bound, layer: &ConvLayer, x: Var) -> Result<Var> {
        let y = tape.conv2d(x, b.vars[layer.weight], b.vars[layer.bias], layer.stride, layer.dilation, layer.padding)?;
        if layer.relu {
            tape.relu(y)
        } else {
            Ok(y)
        }
    }

    pub fn backbone_forward(&self, tape: &mut Tape, b: &Bound, image: Var) -> Result<Var> {
        let (c, h, w) = tape.value(image).chw()?;
        if c != self.config.backbone.in_channels {
            return Err(Error::dim("image channels", self.config.backbone.in_channels, c));
        }
        let down = self.config.backbone.downsample();
        if h % down != 0 || w % down != 0 {
            return Err(Error::Shape(format!(
                "image {h}x{w} is not divisible by the backbone downsampling {down}"
            )));
        }
        let mut x = image;
        for layer in &self.backbone {
            x = self.conv(tape, b, layer, x)?;
        }
        Ok(x)
    }

    pub fn view_density_head(&self, tape: &mut Tape, b: &Bound, features: Var) -> Result<Var> {
        self.conv(tape, b, &self.view_head, features)
    }

    /// Warps one view's features onto ground, front and side planes.
    pub fn project_view_to_planes(&self, tape: &mut Tape, features: Var, view: &ViewGeometry) -> Result<[Var; 3]> {
        Ok([
            tape.warp(features, view.grids[0].clone())?,
            tape.warp(features, view.grids[1].clone())?,
            tape.warp(features, view.grids[2].clone())?,
        ])
    }

    /// Fuses per-view plane features (in view-id order) onto the ground grid.
    pub fn fuse_tri_plane(
        &self,
        tape: &mut Tape,
        b: &Bound,
        views: &[&ViewGeometry],
        projected: &[[Var; 3]],
    ) -> Result<Var> {
        if views.is_empty() || views.len() != projected.len() {
            return Err(Error::InvalidArgument(format!(
                "fusion needs one projection per view, got {} views and {} projections",
                views.len(),
                projected.len()
            )));
        }
        let planes = &self.config.planes;
        let (gh, gw) = (planes.ground.grid_h, planes.ground.grid_w);
        let mut aligned = Vec::with_capacity(3);
        for (p, kind) in PlaneKind::ALL.into_iter().enumerate() {
            let spec = planes.plane(kind);
            let cells = spec.grid_h * spec.grid_w;
            let mut coverage = vec![0u32; cells];
            for v in views {
                let grid = &v.grids[p];
                if grid.grid_h != spec.grid_h || grid.grid_w != spec.grid_w {
                    return Err(Error::Shape(format!(
                        "view {} {kind:?} grid is {}x{}, expected {}x{}",
                        v.id, grid.grid_h, grid.grid_w, spec.grid_h, spec.grid_w
                    )));
                }
                coverage.iter_mut().zip(&grid.mask).for_each(|(n, &m)| *n += m as u32);
            }
            let inv: Vec<f64> = coverage.iter().map(|&n| if n > 0 { 1.0 / n as f64 } else { 0.0 }).collect();
            let terms: Vec<Var> = projected.iter().map(|pv| pv[p]).collect();
            let summed = tape.add_n(&terms)?;
            let mean = tape.scale_cells(summed, Arc::new(inv))?;
            let on_ground = match kind {
                PlaneKind::Ground => mean,
                PlaneKind::Front => tape.align_plane(mean, AlignAxis::Columns, gh, gw, self.config.plane_reduction)?,
                PlaneKind::Side => tape.align_plane(mean, AlignAxis::Rows, gh, gw, self.config.plane_reduction)?,
            };
            aligned.push(self.conv(tape, b, &self.fusion[p], on_ground)?);
        }
        tape.concat_channels(&aligned)
    }

    pub fn decode(&self, tape: &mut Tape, b: &Bound, fused: Var) -> Result<Var> {
        let mut x = fused;
        for layer in &self.decoder {
            x = self.conv(tape, b, layer, x)?;
        }
        Ok(x)
    }

    /// Full scene forward. Views are processed in ascending id order so the
    /// result does not depend on the order they are passed in. The density
    /// output is in network units (see [`ModelConfig::density_scale`]).
    pub fn scene_forward(
        &self,
        tape: &mut Tape,
        b: &Bound,
        rig: &Rig,
        images: &[(usize, &Tensor)],
    ) -> Result<SceneOutput> {
        let mut sorted: Vec<(usize, &Tensor)> = images.to_vec();
        sorted.sort_by_key(|(id, _)| *id);
        if sorted.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::InvalidArgument("duplicate view id".into()));
        }
        let mut views = Vec::with_capacity(sorted.len());
        let mut projected = Vec::with_capacity(sorted.len());
        for (id, image) in sorted {
            let view = rig.view(id)?;
            let x = tape.constant(image.clone());
            let f = self.backbone_forward(tape, b, x)?;
            projected.push(self.project_view_to_planes(tape, f, view)?);
            views.push(view);
        }
        let fused = self.fuse_tri_plane(tape, b, &views, &projected)?;
        let density = self.decode(tape, b, fused)?;
        Ok(SceneOutput { density, fused })
    }

    /// Inference: `[1, Hg, Wg]` scene density.
    pub fn predict_scene(&self, rig: &Rig, images: &[(usize, &Tensor)]) -> Result<Tensor> {
        let mut tape = Tape::new();
        let b = self.bind(&mut tape, |_| false);
        let out = self.scene_forward(&mut tape, &b, rig, images)?;
        Ok(tape.value(out.density).scale(1.0 / self.config.density_scale))
    }

    /// Inference through the view head: `[1, H/4, W/4]`.
    pub fn predict_view(&self, image: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let b = self.bind(&mut tape, |_| false);
        let x = tape.constant(image.clone());
        let f = self.backbone_forward(&mut tape, &b, x)?;
        let d = self.view_density_head(&mut tape, &b, f)?;
        Ok(tape.value(d).scale(1.0 / self.config.density_scale))
    }
}
