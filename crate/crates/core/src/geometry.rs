//! Pinhole cameras, world-plane homographies and sampling grids.
//!
//! World frame is z-up with the floor at `z = 0`. Pixel coordinates put
//! integer values at pixel centers, so a feature map downsampled by `s`
//! has cell `j` at pixel `j / s`.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const ORTHONORMAL_TOL: f64 = 1e-9;
const MIN_DEPTH: f64 = 1e-12;
const MAX_CONDITION: f64 = 1e12;

#[derive(Clone, Debug, PartialEq)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// World-to-camera rotation.
    pub rotation: Matrix3<f64>,
    /// World-to-camera translation, meters.
    pub translation: Vector3<f64>,
    pub width: usize,
    pub height: usize,
}

impl CameraModel {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let cam = CameraModel {
            fx,
            fy,
            cx,
            cy,
            rotation,
            translation,
            width,
            height,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Camera at `position` looking along `yaw` (radians from +x toward +y)
    /// and tilted down by `pitch` radians below the horizon.
    #[allow(clippy::too_many_arguments)]
    pub fn looking(
        position: [f64; 3],
        yaw: f64,
        pitch: f64,
        fx: f64,
        fy: f64,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let forward = Vector3::new(pitch.cos() * yaw.cos(), pitch.cos() * yaw.sin(), -pitch.sin());
        let right = forward.cross(&Vector3::z()).normalize();
        let down = forward.cross(&right);
        let rotation = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let center = Vector3::from(position);
        let translation = -(rotation * center);
        Self::new(
            fx,
            fy,
            (width as f64 - 1.0) / 2.0,
            (height as f64 - 1.0) / 2.0,
            rotation,
            translation,
            width,
            height,
        )
    }

    /// Camera at `position` aimed at world point `target`.
    pub fn look_at(
        position: [f64; 3],
        target: [f64; 3],
        fx: f64,
        fy: f64,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let d = [target[0] - position[0], target[1] - position[1], target[2] - position[2]];
        let horizontal = d[0].hypot(d[1]);
        if horizontal < 1e-12 {
            return Err(Error::Camera("look_at needs a non-vertical viewing direction".into()));
        }
        Self::looking(position, d[1].atan2(d[0]), (-d[2]).atan2(horizontal), fx, fy, width, height)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::Camera(format!(
                "focal lengths must be positive, got fx={} fy={}",
                self.fx, self.fy
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::Camera("image dimensions must be positive".into()));
        }
        let r = &self.rotation;
        let gram_err = (r.transpose() * r - Matrix3::identity()).abs().max();
        if gram_err > ORTHONORMAL_TOL || (r.determinant() - 1.0).abs() > ORTHONORMAL_TOL {
            return Err(Error::Camera(format!(
                "rotation is not a proper orthonormal matrix (|RᵀR - I| = {gram_err:e}, det = {})",
                r.determinant()
            )));
        }
        if !(self.translation.iter().all(|v| v.is_finite())
            && [self.cx, self.cy].iter().all(|v| v.is_finite()))
        {
            return Err(Error::Camera("non-finite parameters".into()));
        }
        Ok(())
    }

    pub fn intrinsics(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    /// World point to `(u, v, depth)`.
    pub fn project(&self, point: [f64; 3]) -> Result<(f64, f64, f64)> {
        let x = self.rotation * Vector3::from(point) + self.translation;
        let depth = x.z;
        if depth.abs() < MIN_DEPTH {
            return Err(Error::DegenerateProjection { depth });
        }
        Ok((
            self.fx * x.x / depth + self.cx,
            self.fy * x.y / depth + self.cy,
            depth,
        ))
    }

    pub fn in_image(&self, u: f64, v: f64) -> bool {
        u >= 0.0 && v >= 0.0 && u <= (self.width - 1) as f64 && v <= (self.height - 1) as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlaneKind {
    /// `z = offset`, plane coordinates `(x, y)`.
    Ground,
    /// `y = offset`, plane coordinates `(x, z)`.
    Front,
    /// `x = offset`, plane coordinates `(y, z)`.
    Side,
}

impl PlaneKind {
    pub const ALL: [PlaneKind; 3] = [PlaneKind::Ground, PlaneKind::Front, PlaneKind::Side];
}

/// A rectangular grid of cells on an axis-aligned world plane. Row `i`
/// runs along the second plane coordinate, column `j` along the first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlaneSpec {
    pub kind: PlaneKind,
    pub offset: f64,
    pub grid_origin: [f64; 2],
    pub cell_size: f64,
    pub grid_h: usize,
    pub grid_w: usize,
}

impl PlaneSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.cell_size > 0.0) || self.grid_h == 0 || self.grid_w == 0 {
            return Err(Error::InvalidArgument(format!(
                "plane grid needs positive cell size and dimensions, got {}x{} @ {}",
                self.grid_h, self.grid_w, self.cell_size
            )));
        }
        Ok(())
    }

    /// Plane coordinates of the center of cell `(i, j)`.
    pub fn cell_center(&self, i: usize, j: usize) -> [f64; 2] {
        [
            self.grid_origin[0] + (j as f64 + 0.5) * self.cell_size,
            self.grid_origin[1] + (i as f64 + 0.5) * self.cell_size,
        ]
    }

    /// Continuous cell index `(col, row)` of a plane point; cell centers sit at `k + 0.5`.
    pub fn to_cell_space(&self, p: [f64; 2]) -> [f64; 2] {
        [
            (p[0] - self.grid_origin[0]) / self.cell_size,
            (p[1] - self.grid_origin[1]) / self.cell_size,
        ]
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        let [a, b] = self.to_cell_space(p);
        a >= 0.0 && b >= 0.0 && a < self.grid_w as f64 && b < self.grid_h as f64
    }

    /// 3-D world point for plane coordinates `p`.
    pub fn lift(&self, p: [f64; 2]) -> [f64; 3] {
        match self.kind {
            PlaneKind::Ground => [p[0], p[1], self.offset],
            PlaneKind::Front => [p[0], self.offset, p[1]],
            PlaneKind::Side => [self.offset, p[0], p[1]],
        }
    }
}

/// Homography mapping homogeneous plane coordinates to homogeneous pixels.
pub fn plane_homography(cam: &CameraModel, plane: &PlaneSpec) -> Result<Matrix3<f64>> {
    let r = &cam.rotation;
    let (a, b, n) = match plane.kind {
        PlaneKind::Ground => (0, 1, 2),
        PlaneKind::Front => (0, 2, 1),
        PlaneKind::Side => (1, 2, 0),
    };
    let third = r.column(n) * plane.offset + cam.translation;
    let m = Matrix3::from_columns(&[r.column(a).into_owned(), r.column(b).into_owned(), third]);
    let h = cam.intrinsics() * m;
    let sv = h.singular_values();
    let (smax, smin) = (sv.max(), sv.min());
    if !(smin > 0.0) || smax / smin >= MAX_CONDITION {
        return Err(Error::DegenerateGeometry(format!(
            "{:?} plane at offset {} is (nearly) edge-on to the camera (condition {:e})",
            plane.kind,
            plane.offset,
            smax / smin
        )));
    }
    Ok(h)
}

pub fn invert_homography(h: &Matrix3<f64>) -> Result<Matrix3<f64>> {
    let scale = h.abs().max();
    if !(scale > 0.0) {
        return Err(Error::Singular);
    }
    let hn = h / scale;
    if hn.determinant().abs() < 1e-15 {
        return Err(Error::Singular);
    }
    hn.try_inverse().map(|inv| inv / scale).ok_or(Error::Singular)
}

/// Applies `h` to a 2-D point. Returns `(x, y, w)` where `w` is the
/// homogeneous scale before division (the depth, for plane homographies).
pub fn apply_homography(h: &Matrix3<f64>, p: [f64; 2]) -> (f64, f64, f64) {
    let v = h * Vector3::new(p[0], p[1], 1.0);
    (v.x / v.z, v.y / v.z, v.z)
}

/// Meters of plane per pixel at plane point `p`: the square root of the
/// area a unit pixel covers on the plane.
pub fn ground_sampling_distance(h: &Matrix3<f64>, p: [f64; 2]) -> f64 {
    let v = h * Vector3::new(p[0], p[1], 1.0);
    let w = v.z;
    let (x, y) = (v.x / w, v.y / w);
    // d(pixel)/d(plane) of the perspective division.
    let j00 = (h[(0, 0)] - x * h[(2, 0)]) / w;
    let j01 = (h[(0, 1)] - x * h[(2, 1)]) / w;
    let j10 = (h[(1, 0)] - y * h[(2, 0)]) / w;
    let j11 = (h[(1, 1)] - y * h[(2, 1)]) / w;
    let det = (j00 * j11 - j01 * j10).abs();
    1.0 / det.sqrt()
}

/// Source-feature coordinates for each cell of a plane grid, with a
/// validity mask. Row-major over `grid_h x grid_w`.
#[derive(Clone, Debug)]
pub struct SamplingGrid {
    pub grid_h: usize,
    pub grid_w: usize,
    pub source_h: usize,
    pub source_w: usize,
    /// `(u, v)` = (column, row) in source-feature space.
    pub coords: Vec<[f64; 2]>,
    pub mask: Vec<bool>,
}

impl SamplingGrid {
    pub fn valid_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn bit_eq(&self, other: &SamplingGrid) -> bool {
        self.grid_h == other.grid_h
            && self.grid_w == other.grid_w
            && self.source_h == other.source_h
            && self.source_w == other.source_w
            && self.mask == other.mask
            && self
                .coords
                .iter()
                .zip(&other.coords)
                .all(|(a, b)| a[0].to_bits() == b[0].to_bits() && a[1].to_bits() == b[1].to_bits())
    }
}

/// Feature-map size for an image dimension at `feature_scale`.
pub fn scaled_len(len: usize, feature_scale: f64) -> usize {
    ((len as f64) * feature_scale).round().max(1.0) as usize
}

pub fn build_sampling_grid(
    cam: &CameraModel,
    plane: &PlaneSpec,
    feature_scale: f64,
) -> Result<SamplingGrid> {
    plane.validate()?;
    if !(feature_scale > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "feature_scale must be positive, got {feature_scale}"
        )));
    }
    let h = plane_homography(cam, plane)?;
    let source_h = scaled_len(cam.height, feature_scale);
    let source_w = scaled_len(cam.width, feature_scale);
    let (umax, vmax) = ((source_w - 1) as f64, (source_h - 1) as f64);

    let n = plane.grid_h * plane.grid_w;
    let mut coords = Vec::with_capacity(n);
    let mut mask = Vec::with_capacity(n);
    for i in 0..plane.grid_h {
        for j in 0..plane.grid_w {
            let (x, y, depth) = apply_homography(&h, plane.cell_center(i, j));
            if depth > MIN_DEPTH {
                let (u, v) = (x * feature_scale, y * feature_scale);
                coords.push([u, v]);
                mask.push(u.is_finite() && v.is_finite() && (0.0..=umax).contains(&u) && (0.0..=vmax).contains(&v));
            } else {
                coords.push([f64::NAN, f64::NAN]);
                mask.push(false);
            }
        }
    }
    Ok(SamplingGrid {
        grid_h: plane.grid_h,
        grid_w: plane.grid_w,
        source_h,
        source_w,
        coords,
        mask,
    })
}
