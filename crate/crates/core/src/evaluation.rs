//! Counting metrics, late-fusion baselines and model evaluation over view
//! subsets.

use rayon::prelude::*;

use crate::dataset::{Dataset, SceneFrame, Split};
use crate::density::{project_density_to_ground, DensityMap};
use crate::error::{Error, Result};
use crate::geometry::{build_sampling_grid, ground_sampling_distance, plane_homography, CameraModel, PlaneSpec};
use crate::io::ResultRow;
use crate::model::TpMvcc;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Metrics {
    pub mae: f64,
    pub mse: f64,
    pub rmse: f64,
    /// Mean of `max(0, 1 - |error| / true)` over frames with a positive
    /// true count; 0 when there are none.
    pub rate: f64,
    /// Frames left out of `rate` because their true count is zero.
    pub rate_excluded: usize,
}

/// Metrics over `(true, predicted)` count pairs.
pub fn compute_metrics(pairs: &[(f64, f64)]) -> Result<Metrics> {
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("no frames to score".into()));
    }
    let n = pairs.len() as f64;
    let mae = pairs.iter().map(|(t, p)| (p - t).abs()).sum::<f64>() / n;
    let mse = pairs.iter().map(|(t, p)| (p - t).powi(2)).sum::<f64>() / n;
    let mut rate_sum = 0.0;
    let mut rated = 0usize;
    for &(t, p) in pairs {
        if t > 0.0 {
            rate_sum += (1.0 - (p - t).abs() / t).max(0.0);
            rated += 1;
        }
    }
    let excluded = pairs.len() - rated;
    if excluded > 0 {
        log::warn!("{excluded} frame(s) with zero true count left out of Rate");
    }
    Ok(Metrics {
        mae,
        mse,
        rmse: mse.sqrt(),
        rate: if rated > 0 { rate_sum / rated as f64 } else { 0.0 },
        rate_excluded: excluded,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    TpMvcc,
    Dwf,
    MaskFusion,
}

impl Method {
    pub fn label(self) -> &'static str {
        match self {
            Method::TpMvcc => "tpmvcc",
            Method::Dwf => "dwf",
            Method::MaskFusion => "mf",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrameCount {
    pub frame_id: u32,
    pub true_count: f64,
    pub predicted: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalResult {
    pub method: Method,
    pub views: Vec<usize>,
    pub frames: Vec<FrameCount>,
    pub metrics: Metrics,
}

impl EvalResult {
    fn new(method: Method, views: Vec<usize>, frames: Vec<FrameCount>) -> Result<Self> {
        let pairs: Vec<(f64, f64)> = frames.iter().map(|f| (f.true_count, f.predicted)).collect();
        let metrics = compute_metrics(&pairs)?;
        Ok(EvalResult {
            method,
            views,
            frames,
            metrics,
        })
    }

    pub fn row(&self) -> ResultRow {
        ResultRow {
            method: self.method.label().into(),
            views: self.views.clone(),
            mae: self.metrics.mae,
            mse: self.metrics.mse,
            rmse: self.metrics.rmse,
            rate: self.metrics.rate,
        }
    }
}

#[derive(Clone, Debug)]
pub struct FusedCount {
    pub count: f64,
    pub map: DensityMap,
}

/// Ground-sampling distance of every plane cell the camera sees at
/// `feature_scale`, `None` elsewhere.
fn covered_gsd(cam: &CameraModel, plane: &PlaneSpec, feature_scale: f64) -> Result<Vec<Option<f64>>> {
    let grid = build_sampling_grid(cam, plane, feature_scale)?;
    let h = plane_homography(cam, plane)?;
    Ok((0..plane.grid_h * plane.grid_w)
        .map(|c| grid.mask[c].then(|| ground_sampling_distance(&h, plane.cell_center(c / plane.grid_w, c % plane.grid_w))))
        .collect())
}

struct ProjectedViews {
    maps: Vec<Vec<f64>>,
    /// Per view, per ground cell: ground-sampling distance where the view
    /// sees the cell.
    gsd: Vec<Vec<Option<f64>>>,
}

fn project_views(
    preds: &[(usize, DensityMap)],
    cams: &[(usize, CameraModel)],
    plane: &PlaneSpec,
) -> Result<ProjectedViews> {
    let mut sorted: Vec<&(usize, DensityMap)> = preds.iter().collect();
    sorted.sort_by_key(|p| p.0);
    let mut maps = Vec::with_capacity(sorted.len());
    let mut gsd = Vec::with_capacity(sorted.len());
    for (id, map) in sorted {
        let cam = &cams.iter().find(|c| c.0 == *id).ok_or(Error::UnknownView(*id))?.1;
        let projected = project_density_to_ground(map, cam, plane)?;
        maps.push(projected.map.grid.into_data());
        gsd.push(covered_gsd(cam, plane, 1.0 / map.cell_size)?);
    }
    if gsd.iter().all(|g| g.iter().all(Option::is_none)) {
        return Err(Error::Coverage("no view covers any ground cell".into()));
    }
    Ok(ProjectedViews { maps, gsd })
}

fn fused(plane: &PlaneSpec, data: Vec<f64>) -> Result<FusedCount> {
    let map = DensityMap {
        grid: crate::Tensor::new(vec![plane.grid_h, plane.grid_w], data)?,
        cell_size: plane.cell_size,
    };
    Ok(FusedCount {
        count: map.count(),
        map,
    })
}

/// Density-map weighted fusion: per ground cell, the average of the
/// projected view maps weighted by inverse ground-sampling distance.
pub fn dwf_baseline(
    preds: &[(usize, DensityMap)],
    cams: &[(usize, CameraModel)],
    plane: &PlaneSpec,
) -> Result<FusedCount> {
    let p = project_views(preds, cams, plane)?;
    let cells = plane.grid_h * plane.grid_w;
    let mut out = vec![0.0; cells];
    for (c, o) in out.iter_mut().enumerate() {
        let (mut num, mut den) = (0.0, 0.0);
        for (map, gsd) in p.maps.iter().zip(&p.gsd) {
            if let Some(g) = gsd[c] {
                num += map[c] / g;
                den += 1.0 / g;
            }
        }
        if den > 0.0 {
            *o = num / den;
        }
    }
    fused(plane, out)
}

/// Near-field owner of every ground cell: the covering view with the
/// smallest ground-sampling distance, ties to the lowest id. Indices refer
/// to `views` sorted by id.
pub fn ownership(cams: &[(usize, CameraModel)], views: &[usize], plane: &PlaneSpec, feature_scale: f64) -> Result<Vec<Option<usize>>> {
    let mut ids = views.to_vec();
    ids.sort_unstable();
    let mut gsd = Vec::with_capacity(ids.len());
    for id in &ids {
        let cam = &cams.iter().find(|c| c.0 == *id).ok_or(Error::UnknownView(*id))?.1;
        gsd.push(covered_gsd(cam, plane, feature_scale)?);
    }
    Ok(owners(&gsd, plane.grid_h * plane.grid_w))
}

fn owners(gsd: &[Vec<Option<f64>>], cells: usize) -> Vec<Option<usize>> {
    (0..cells)
        .map(|c| {
            let mut best: Option<(usize, f64)> = None;
            for (v, g) in gsd.iter().enumerate() {
                if let Some(g) = g[c] {
                    if best.is_none_or(|(_, b)| g < b) {
                        best = Some((v, g));
                    }
                }
            }
            best.map(|b| b.0)
        })
        .collect()
}

/// Mask fusion: each view counts only on the ground cells it owns.
pub fn mask_fusion_baseline(
    preds: &[(usize, DensityMap)],
    cams: &[(usize, CameraModel)],
    plane: &PlaneSpec,
) -> Result<FusedCount> {
    let p = project_views(preds, cams, plane)?;
    let cells = plane.grid_h * plane.grid_w;
    let own = owners(&p.gsd, cells);
    let out = own.iter().enumerate().map(|(c, o)| o.map_or(0.0, |v| p.maps[v][c])).collect();
    fused(plane, out)
}

/// Worker pool sized by `TPMVCC_THREADS`, defaulting to all cores.
pub fn thread_pool() -> Result<rayon::ThreadPool> {
    let threads = match std::env::var("TPMVCC_THREADS") {
        Ok(s) => s
            .trim()
            .parse::<usize>()
            .map_err(|_| Error::InvalidArgument(format!("TPMVCC_THREADS must be a positive integer, got {s:?}")))?,
        Err(_) => 0,
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidArgument(e.to_string()))
}

fn sorted_subset(dataset: &Dataset, views: &[usize]) -> Result<Vec<usize>> {
    let mut v = views.to_vec();
    v.sort_unstable();
    v.dedup();
    if v.is_empty() {
        return Err(Error::InvalidArgument("empty view subset".into()));
    }
    for id in &v {
        if !dataset.cameras().iter().any(|c| c.0 == *id) {
            return Err(Error::UnknownView(*id));
        }
    }
    Ok(v)
}

fn per_frame<F>(frames: &[&SceneFrame], f: F) -> Result<Vec<FrameCount>>
where
    F: Fn(&SceneFrame) -> Result<f64> + Sync,
{
    let pool = thread_pool()?;
    pool.install(|| {
        frames
            .par_iter()
            .map(|fr| {
                Ok(FrameCount {
                    frame_id: fr.id,
                    true_count: fr.count() as f64,
                    predicted: f(fr)?,
                })
            })
            .collect()
    })
}

/// TP-MVCC counts on `split` using only the views in `views`.
pub fn evaluate_model(model: &TpMvcc, dataset: &Dataset, views: &[usize], split: Split) -> Result<EvalResult> {
    let views = sorted_subset(dataset, views)?;
    let rig = model.rig(dataset.cameras())?;
    let frames = dataset.split(split)?;
    let counts = per_frame(&frames, |fr| {
        let images = views.iter().map(|&id| Ok((id, &fr.view(id)?.image))).collect::<Result<Vec<_>>>()?;
        Ok(model.predict_scene(&rig, &images)?.sum())
    })?;
    EvalResult::new(Method::TpMvcc, views, counts)
}

/// A late-fusion baseline fed by the view head of `view_model`.
pub fn evaluate_baseline(
    view_model: &TpMvcc,
    dataset: &Dataset,
    views: &[usize],
    split: Split,
    method: Method,
) -> Result<EvalResult> {
    let fuse = match method {
        Method::Dwf => dwf_baseline,
        Method::MaskFusion => mask_fusion_baseline,
        Method::TpMvcc => return Err(Error::InvalidArgument("not a baseline".into())),
    };
    let views = sorted_subset(dataset, views)?;
    let plane = view_model.config().planes.ground.clone();
    let cell = view_model.config().backbone.downsample() as f64;
    let frames = dataset.split(split)?;
    let counts = per_frame(&frames, |fr| {
        let preds = views
            .iter()
            .map(|&id| {
                let d = view_model.predict_view(&fr.view(id)?.image)?;
                let (_, h, w) = d.chw()?;
                Ok((id, DensityMap { grid: d.reshape(vec![h, w])?, cell_size: cell }))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(fuse(&preds, dataset.cameras(), &plane)?.count)
    })?;
    EvalResult::new(method, views, counts)
}
