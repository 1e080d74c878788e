use serde::{Deserialize, Serialize};

use crate::autodiff::Reduction;
use crate::error::{Error, Result};
use crate::geometry::{PlaneKind, PlaneSpec};

pub const FCN7_LAYERS: usize = 7;

/// Per-view backbone: seven 3x3 conv layers, each followed by ReLU.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fcn7Config {
    pub in_channels: usize,
    pub channels: Vec<usize>,
    pub strides: Vec<usize>,
    pub dilations: Vec<usize>,
    pub kernel: usize,
}

impl Default for Fcn7Config {
    fn default() -> Self {
        Fcn7Config {
            in_channels: 1,
            channels: vec![16, 16, 32, 32, 64, 64, 64],
            strides: vec![1, 2, 1, 2, 1, 1, 1],
            dilations: Self::dilation_pattern(2),
            kernel: 3,
        }
    }
}

impl Fcn7Config {
    /// Dilation `d` on layers 4-6, 1 elsewhere.
    pub fn dilation_pattern(d: usize) -> Vec<usize> {
        vec![1, 1, 1, d, d, d, 1]
    }

    pub fn with_dilation(mut self, d: usize) -> Self {
        self.dilations = Self::dilation_pattern(d);
        self
    }

    /// The dilation knob: the largest per-layer dilation.
    pub fn dilation(&self) -> usize {
        self.dilations.iter().copied().max().unwrap_or(1)
    }

    pub fn downsample(&self) -> usize {
        self.strides.iter().product()
    }

    pub fn feature_scale(&self) -> f64 {
        1.0 / self.downsample() as f64
    }

    pub fn out_channels(&self) -> usize {
        *self.channels.last().expect("validated")
    }

    pub fn validate(&self) -> Result<()> {
        for (name, len) in [
            ("channels", self.channels.len()),
            ("strides", self.strides.len()),
            ("dilations", self.dilations.len()),
        ] {
            if len != FCN7_LAYERS {
                return Err(Error::InvalidArgument(format!(
                    "backbone {name} must list {FCN7_LAYERS} layers, got {len}"
                )));
            }
        }
        if self.in_channels == 0 || self.channels.contains(&0) {
            return Err(Error::InvalidArgument("channel counts must be positive".into()));
        }
        if self.strides.contains(&0) || self.dilations.contains(&0) {
            return Err(Error::InvalidArgument("strides and dilations must be >= 1".into()));
        }
        if self.kernel.is_multiple_of(2) {
            return Err(Error::InvalidArgument("kernel size must be odd".into()));
        }
        Ok(())
    }
}

/// Ground, front and side plane grids. Front columns follow ground
/// columns (x); side columns follow ground rows (y); both span
/// `[0, 2 * center_height]` vertically.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlaneLayout {
    pub ground: PlaneSpec,
    pub front: PlaneSpec,
    pub side: PlaneSpec,
}

impl PlaneLayout {
    pub fn new(
        origin: [f64; 2],
        cell_size: f64,
        grid_h: usize,
        grid_w: usize,
        center_height: f64,
    ) -> Self {
        let vertical = ((2.0 * center_height / cell_size).ceil() as usize).max(1);
        let center_x = origin[0] + grid_w as f64 * cell_size / 2.0;
        let center_y = origin[1] + grid_h as f64 * cell_size / 2.0;
        PlaneLayout {
            ground: PlaneSpec {
                kind: PlaneKind::Ground,
                offset: center_height,
                grid_origin: origin,
                cell_size,
                grid_h,
                grid_w,
            },
            front: PlaneSpec {
                kind: PlaneKind::Front,
                offset: center_y,
                grid_origin: [origin[0], 0.0],
                cell_size,
                grid_h: vertical,
                grid_w,
            },
            side: PlaneSpec {
                kind: PlaneKind::Side,
                offset: center_x,
                grid_origin: [origin[1], 0.0],
                cell_size,
                grid_h: vertical,
                grid_w: grid_h,
            },
        }
    }

    pub fn plane(&self, kind: PlaneKind) -> &PlaneSpec {
        match kind {
            PlaneKind::Ground => &self.ground,
            PlaneKind::Front => &self.front,
            PlaneKind::Side => &self.side,
        }
    }

    pub fn center_height(&self) -> f64 {
        self.ground.offset
    }

    pub fn validate(&self) -> Result<()> {
        for p in [&self.ground, &self.front, &self.side] {
            p.validate()?;
        }
        if self.front.grid_w != self.ground.grid_w
            || self.side.grid_w != self.ground.grid_h
            || self.front.cell_size != self.ground.cell_size
            || self.side.cell_size != self.ground.cell_size
        {
            return Err(Error::InvalidArgument(
                "front/side plane grids must line up with the ground grid".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub backbone: Fcn7Config,
    pub decoder_channels: Vec<usize>,
    pub decoder_dilation: usize,
    pub plane_reduction: Reduction,
    /// Network outputs are density times this factor; predictions divide
    /// it back out so they stay in count units.
    pub density_scale: f64,
    pub planes: PlaneLayout,
}

impl ModelConfig {
    pub fn new(planes: PlaneLayout) -> Self {
        ModelConfig {
            backbone: Fcn7Config::default(),
            decoder_channels: vec![64, 32, 1],
            decoder_dilation: 2,
            plane_reduction: Reduction::Mean,
            density_scale: 100.0,
            planes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        self.planes.validate()?;
        if self.decoder_channels.is_empty() || self.decoder_channels.contains(&0) {
            return Err(Error::InvalidArgument("decoder channels must be positive".into()));
        }
        if *self.decoder_channels.last().unwrap() != 1 {
            return Err(Error::InvalidArgument(
                "decoder must end in a single density channel".into(),
            ));
        }
        if !(self.density_scale > 0.0) {
            return Err(Error::InvalidArgument("density scale must be positive".into()));
        }
        if self.decoder_dilation == 0 {
            return Err(Error::InvalidArgument("decoder dilation must be >= 1".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("model config serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ModelConfig =
            toml::from_str(text).map_err(|e| Error::InvalidArgument(format!("model config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }
}
