//! Ground-truth density maps and count recovery.
//!
//! Maps store per-cell count mass: the sum of a map is the object count.
//! Each point contributes a Gaussian truncated at 4 sigma and renormalized
//! over the in-grid cells it touches, so it always adds exactly 1.

use crate::error::{Error, Result};
use crate::geometry::{self, CameraModel, PlaneSpec};
use crate::sampler;
use crate::tensor::Tensor;

const TRUNCATE_SIGMAS: f64 = 4.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PointAnnotation {
    pub frame_id: u32,
    /// `None` for scene-level (ground-plane) points.
    pub view_id: Option<usize>,
    /// Pixels for view points, meters for scene points.
    pub coords: [f64; 2],
}

#[derive(Clone, Debug, PartialEq)]
pub struct DensityMap {
    /// `[H, W]` per-cell mass.
    pub grid: Tensor,
    /// Meters per cell for scene maps, pixels per cell for view maps.
    pub cell_size: f64,
}

impl DensityMap {
    pub fn zeros(h: usize, w: usize, cell_size: f64) -> Self {
        DensityMap {
            grid: Tensor::zeros(&[h, w]),
            cell_size,
        }
    }

    pub fn height(&self) -> usize {
        self.grid.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.grid.shape()[1]
    }

    pub fn count(&self) -> f64 {
        count_from_density(self)
    }
}

/// Renders points given in physical units relative to the grid origin.
/// Cell `(i, j)` spans `[j, j+1) x [i, i+1)` in cell units.
pub fn render_density(
    points: &[[f64; 2]],
    grid_h: usize,
    grid_w: usize,
    cell_size: f64,
    sigma: f64,
) -> Result<DensityMap> {
    if !(sigma > 0.0) {
        return Err(Error::InvalidArgument(format!("sigma must be positive, got {sigma}")));
    }
    if !(cell_size > 0.0) || grid_h == 0 || grid_w == 0 {
        return Err(Error::InvalidArgument("density grid needs positive size".into()));
    }
    let mut grid = vec![0.0; grid_h * grid_w];
    let radius = TRUNCATE_SIGMAS * sigma;
    let inv_two_var = 1.0 / (2.0 * sigma * sigma);
    let mut stamp: Vec<(usize, f64)> = Vec::new();
    for p in points {
        let (cx, cy) = (p[0] / cell_size, p[1] / cell_size);
        if !(cx >= 0.0 && cy >= 0.0 && cx < grid_w as f64 && cy < grid_h as f64) {
            continue;
        }
        let j0 = ((cx - 0.5 - radius).ceil().max(0.0)) as usize;
        let j1 = ((cx - 0.5 + radius).floor().min((grid_w - 1) as f64)) as usize;
        let i0 = ((cy - 0.5 - radius).ceil().max(0.0)) as usize;
        let i1 = ((cy - 0.5 + radius).floor().min((grid_h - 1) as f64)) as usize;
        stamp.clear();
        let mut total = 0.0;
        for i in i0..=i1 {
            let dy = i as f64 + 0.5 - cy;
            for j in j0..=j1 {
                let dx = j as f64 + 0.5 - cx;
                let d2 = dx * dx + dy * dy;
                if d2 <= radius * radius {
                    let wgt = (-d2 * inv_two_var).exp();
                    if wgt > 0.0 {
                        stamp.push((i * grid_w + j, wgt));
                        total += wgt;
                    }
                }
            }
        }
        if total > 0.0 {
            for &(idx, wgt) in &stamp {
                grid[idx] += wgt / total;
            }
        } else {
            // Kernel narrower than a cell: all mass in the containing cell.
            grid[cy as usize * grid_w + cx as usize] += 1.0;
        }
    }
    Ok(DensityMap {
        grid: Tensor::new(vec![grid_h, grid_w], grid)?,
        cell_size,
    })
}

/// Renders pixel-space points onto a map whose cell `j` is centered on
/// pixel `j * cell_size`, matching a strided feature map. Points in the
/// last half cell of the image are pulled onto the border cells so every
/// in-image point keeps its unit mass.
pub fn render_view_density(
    pixels: &[[f64; 2]],
    grid_h: usize,
    grid_w: usize,
    cell_size: f64,
    sigma: f64,
) -> Result<DensityMap> {
    let half = cell_size / 2.0;
    let inside = |v: f64, n: usize| {
        let limit = n as f64 * cell_size;
        v.min(limit - limit * 1e-12)
    };
    let shifted: Vec<[f64; 2]> = pixels
        .iter()
        .map(|p| [inside(p[0] + half, grid_w), inside(p[1] + half, grid_h)])
        .collect();
    render_density(&shifted, grid_h, grid_w, cell_size, sigma)
}

pub fn count_from_density(map: &DensityMap) -> f64 {
    map.grid.sum()
}

#[derive(Clone, Debug)]
pub struct ProjectedDensity {
    pub map: DensityMap,
    /// View mass whose cells land inside the plane grid.
    pub covered_mass: f64,
    /// Set when the view had mass but none of it reached the plane grid.
    pub coverage_warning: bool,
}

/// Reprojects a view density map (cell `j` at pixel `j * cell_size`) onto
/// a plane grid, preserving the mass of view cells that land on the grid.
pub fn project_density_to_ground(
    view_map: &DensityMap,
    cam: &CameraModel,
    plane: &PlaneSpec,
) -> Result<ProjectedDensity> {
    let feature_scale = 1.0 / view_map.cell_size;
    let grid = geometry::build_sampling_grid(cam, plane, feature_scale)?;
    let (vh, vw) = (view_map.height(), view_map.width());
    if (grid.source_h, grid.source_w) != (vh, vw) {
        return Err(Error::Shape(format!(
            "view map is {vh}x{vw} but the camera at scale {feature_scale} gives {}x{}",
            grid.source_h, grid.source_w
        )));
    }
    let h = geometry::plane_homography(cam, plane)?;
    let h_inv = geometry::invert_homography(&h)?;

    let mut covered_mass = 0.0;
    for (idx, &m) in view_map.grid.data().iter().enumerate() {
        if m == 0.0 {
            continue;
        }
        let (i, j) = (idx / vw, idx % vw);
        let pixel = [j as f64 * view_map.cell_size, i as f64 * view_map.cell_size];
        let (x, y, _) = geometry::apply_homography(&h_inv, pixel);
        let (_, _, depth) = geometry::apply_homography(&h, [x, y]);
        if x.is_finite() && y.is_finite() && depth > 0.0 && plane.contains([x, y]) {
            covered_mass += m;
        }
    }

    let source = view_map.grid.clone().reshape(vec![1, vh, vw])?;
    let mut warped = sampler::warp(&source, &grid)?;
    // Per-cell area change from view cells to plane cells.
    let pixel_area = view_map.cell_size * view_map.cell_size;
    let cell_area = plane.cell_size * plane.cell_size;
    for (cell, v) in warped.data_mut().iter_mut().enumerate() {
        if *v != 0.0 {
            let p = plane.cell_center(cell / plane.grid_w, cell % plane.grid_w);
            let gsd = geometry::ground_sampling_distance(&h, p);
            *v *= cell_area / (pixel_area * gsd * gsd);
        }
    }
    let warped_sum = warped.sum();
    let input_mass = view_map.grid.sum();
    let (scale, coverage_warning) = if covered_mass > 0.0 && warped_sum > 0.0 {
        (covered_mass / warped_sum, false)
    } else {
        (0.0, input_mass > 0.0)
    };
    let data = warped.data().iter().map(|v| (v * scale).max(0.0)).collect();
    Ok(ProjectedDensity {
        map: DensityMap {
            grid: Tensor::new(vec![plane.grid_h, plane.grid_w], data)?,
            cell_size: plane.cell_size,
        },
        covered_mass: if coverage_warning { 0.0 } else { covered_mass },
        coverage_warning,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::PlaneKind;

    #[test]
    fn empty_points_zero_map() {
        let m = render_density(&[], 8, 8, 1.0, 2.0).unwrap();
        assert_eq!(m.count(), 0.0);
    }

    #[test]
    fn non_positive_sigma_rejected() {
        assert!(render_density(&[[1.0, 1.0]], 4, 4, 1.0, 0.0).is_err());
        assert!(render_density(&[[1.0, 1.0]], 4, 4, 1.0, -1.0).is_err());
    }

    #[test]
    fn one_point_unit_mass() {
        let m = render_density(&[[16.0, 16.0]], 32, 32, 1.0, 2.0).unwrap();
        assert!((m.count() - 1.0).abs() < 1e-9);
        assert!(m.grid.data().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn additive_over_points() {
        let pts = [[10.2, 11.0], [20.5, 5.5], [30.0, 30.0], [8.0, 25.0], [16.6, 16.1]];
        let all = render_density(&pts, 40, 40, 1.0, 2.0).unwrap();
        assert!((all.count() - 5.0).abs() < 1e-9);
        let fewer = render_density(&pts[..4], 40, 40, 1.0, 2.0).unwrap();
        assert!((all.count() - fewer.count() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn edge_points_keep_unit_mass_and_outside_points_drop() {
        let m = render_density(&[[0.1, 0.1], [9.9, 4.0]], 10, 10, 1.0, 2.0).unwrap();
        assert!((m.count() - 2.0).abs() < 1e-12);
        let out = render_density(&[[-0.1, 3.0], [3.0, 10.0]], 10, 10, 1.0, 2.0).unwrap();
        assert_eq!(out.count(), 0.0);
    }

    #[test]
    fn tiny_sigma_uses_containing_cell() {
        let m = render_density(&[[2.3, 1.7]], 4, 4, 1.0, 1e-4).unwrap();
        assert_eq!(m.grid.data()[4 + 2], 1.0);
    }

    #[test]
    fn count_is_linear() {
        let m = render_density(&[[3.0, 3.0], [5.0, 1.0]], 8, 8, 0.5, 1.0).unwrap();
        let doubled = DensityMap {
            grid: m.grid.scale(2.0),
            cell_size: m.cell_size,
        };
        assert!((doubled.count() - 2.0 * m.count()).abs() < 1e-12);
    }

    #[test]
    fn view_density_centers_on_feature_cells() {
        let m = render_view_density(&[[8.0, 4.0]], 4, 4, 4.0, 0.5).unwrap();
        let peak = m
            .grid
            .data()
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        assert_eq!(peak, 4 + 2);
    }

    fn overhead_rig() -> (CameraModel, PlaneSpec) {
        let cam = CameraModel::looking([1.0, -1.5, 2.5], std::f64::consts::FRAC_PI_2, 0.9, 40.0, 40.0, 64, 48).unwrap();
        let plane = PlaneSpec {
            kind: PlaneKind::Ground,
            offset: 0.0,
            grid_origin: [-1.0, -1.0],
            cell_size: 0.05,
            grid_h: 80,
            grid_w: 80,
        };
        (cam, plane)
    }

    #[test]
    fn projection_of_zero_map_is_zero() {
        let (cam, plane) = overhead_rig();
        let out = project_density_to_ground(&DensityMap::zeros(12, 16, 4.0), &cam, &plane).unwrap();
        assert_eq!(out.map.count(), 0.0);
        assert!(!out.coverage_warning);
    }

    #[test]
    fn projection_preserves_single_point_count() {
        let (cam, plane) = overhead_rig();
        let (u, v, _) = cam.project([1.0, 0.5, 0.0]).unwrap();
        assert!(cam.in_image(u, v));
        let view = render_view_density(&[[u, v]], 12, 16, 4.0, 1.0).unwrap();
        let out = project_density_to_ground(&view, &cam, &plane).unwrap();
        assert!(!out.coverage_warning);
        assert!((out.map.count() - view.count()).abs() < 1e-3);
        assert!(out.map.grid.data().iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn mass_outside_plane_warns() {
        let (cam, _) = overhead_rig();
        let far_plane = PlaneSpec {
            kind: PlaneKind::Ground,
            offset: 0.0,
            grid_origin: [50.0, 50.0],
            cell_size: 0.05,
            grid_h: 10,
            grid_w: 10,
        };
        let view = render_view_density(&[[30.0, 20.0]], 12, 16, 4.0, 1.0).unwrap();
        let out = project_density_to_ground(&view, &cam, &far_plane).unwrap();
        assert!(out.coverage_warning);
        assert_eq!(out.map.count(), 0.0);
    }
}
