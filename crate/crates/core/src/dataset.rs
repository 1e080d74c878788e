//! Multi-view scene datasets in memory and on disk.
//!
//! ```text
//! manifest.txt                  TOML: frame count, views, split, scene config
//! cameras/view{k}.cam
//! frames/{id}/view{k}.img.tpt   [1, H, W] f32 image
//! frames/{id}/view{k}.pts.csv   pixel annotations
//! frames/{id}/view{k}.den.tpt   [H/4, W/4] view density
//! frames/{id}/scene.pts.csv     ground annotations in meters
//! frames/{id}/scene.den.tpt     [Hg, Wg] scene density
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::density::{DensityMap, PointAnnotation};
use crate::error::{Error, Result};
use crate::geometry::CameraModel;
use crate::io::{self, DType};
use crate::simulator::SceneConfig;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format: String,
    pub frames: usize,
    pub views: Vec<usize>,
    pub train: Vec<u32>,
    pub test: Vec<u32>,
    pub scene: SceneConfig,
}

impl DatasetManifest {
    pub const FORMAT: &'static str = "tpmvcc-dataset-1";
}

#[derive(Clone, Debug, PartialEq)]
pub struct ViewFrame {
    pub id: usize,
    pub image: Tensor,
    pub points: Vec<[f64; 2]>,
    pub density: Option<DensityMap>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneFrame {
    pub id: u32,
    /// Sorted by view id.
    pub views: Vec<ViewFrame>,
    pub ground_points: Vec<[f64; 2]>,
    pub scene_density: DensityMap,
}

impl SceneFrame {
    pub fn count(&self) -> usize {
        self.ground_points.len()
    }

    pub fn view(&self, id: usize) -> Result<&ViewFrame> {
        self.views.iter().find(|v| v.id == id).ok_or(Error::UnknownView(id))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
    All,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    manifest: DatasetManifest,
    cameras: Vec<(usize, CameraModel)>,
    frames: Vec<SceneFrame>,
}

fn frame_dir(root: &Path, id: u32) -> std::path::PathBuf {
    root.join("frames").join(id.to_string())
}

impl Dataset {
    pub fn new(manifest: DatasetManifest, cameras: Vec<(usize, CameraModel)>, frames: Vec<SceneFrame>) -> Self {
        Dataset {
            manifest,
            cameras,
            frames,
        }
    }

    pub fn manifest(&self) -> &DatasetManifest {
        &self.manifest
    }

    pub fn scene_config(&self) -> &SceneConfig {
        &self.manifest.scene
    }

    pub fn cameras(&self) -> &[(usize, CameraModel)] {
        &self.cameras
    }

    pub fn frames(&self) -> &[SceneFrame] {
        &self.frames
    }

    pub fn frame(&self, id: u32) -> Result<&SceneFrame> {
        self.frames
            .iter()
            .find(|f| f.id == id)
            .ok_or_else(|| Error::Dataset(format!("frame {id} is not in the dataset")))
    }

    pub fn split(&self, split: Split) -> Result<Vec<&SceneFrame>> {
        let ids = match split {
            Split::Train => &self.manifest.train,
            Split::Test => &self.manifest.test,
            Split::All => return Ok(self.frames.iter().collect()),
        };
        ids.iter().map(|&id| self.frame(id)).collect()
    }

    /// Keeps only the listed frames, in the given order, as the training
    /// split.
    pub fn subset(&self, ids: &[u32]) -> Result<Dataset> {
        let frames = ids.iter().map(|&id| self.frame(id).cloned()).collect::<Result<Vec<_>>>()?;
        let mut manifest = self.manifest.clone();
        manifest.frames = frames.len();
        manifest.train = ids.to_vec();
        manifest.test = Vec::new();
        Ok(Dataset::new(manifest, self.cameras.clone(), frames))
    }

    pub fn save(&self, root: &Path) -> Result<()> {
        let manifest = toml::to_string(&self.manifest).expect("manifest serializes");
        io::write_bytes(&root.join("manifest.txt"), manifest.as_bytes())?;
        for (id, cam) in &self.cameras {
            io::write_camera(&root.join("cameras").join(format!("view{id}.cam")), cam)?;
        }
        for f in &self.frames {
            let dir = frame_dir(root, f.id);
            for v in &f.views {
                io::write_tensor(&dir.join(format!("view{}.img.tpt", v.id)), &v.image, DType::F32)?;
                let pts: Vec<PointAnnotation> = v
                    .points
                    .iter()
                    .map(|&coords| PointAnnotation {
                        frame_id: f.id,
                        view_id: Some(v.id),
                        coords,
                    })
                    .collect();
                io::write_annotations(&dir.join(format!("view{}.pts.csv", v.id)), &pts)?;
                if let Some(d) = &v.density {
                    io::write_tensor(&dir.join(format!("view{}.den.tpt", v.id)), &d.grid, DType::F64)?;
                }
            }
            let pts: Vec<PointAnnotation> = f
                .ground_points
                .iter()
                .map(|&coords| PointAnnotation {
                    frame_id: f.id,
                    view_id: None,
                    coords,
                })
                .collect();
            io::write_annotations(&dir.join("scene.pts.csv"), &pts)?;
            io::write_tensor(&dir.join("scene.den.tpt"), &f.scene_density.grid, DType::F64)?;
        }
        Ok(())
    }

    pub fn load(root: &Path) -> Result<Dataset> {
        let manifest_path = root.join("manifest.txt");
        let manifest: DatasetManifest = toml::from_str(&io::read_text(&manifest_path)?)
            .map_err(|e| Error::format(&manifest_path, e.to_string()))?;
        if manifest.format != DatasetManifest::FORMAT {
            return Err(Error::format(&manifest_path, format!("unsupported format {}", manifest.format)));
        }
        let scene = &manifest.scene;
        let mut views = manifest.views.clone();
        views.sort_unstable();
        let cameras = views
            .iter()
            .map(|&id| Ok((id, io::read_camera(&root.join("cameras").join(format!("view{id}.cam")))?)))
            .collect::<Result<Vec<_>>>()?;
        let mut frame_ids: Vec<u32> = manifest.train.iter().chain(&manifest.test).copied().collect();
        frame_ids.sort_unstable();
        if frame_ids.len() != manifest.frames || frame_ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::format(&manifest_path, "train and test ids must partition the frames"));
        }
        let mut frames = Vec::with_capacity(frame_ids.len());
        for id in frame_ids {
            let dir = frame_dir(root, id);
            let mut fviews = Vec::with_capacity(views.len());
            for &v in &views {
                let image = io::read_tensor(&dir.join(format!("view{v}.img.tpt")))?;
                let pts_path = dir.join(format!("view{v}.pts.csv"));
                let points = annotation_coords(&pts_path, id, Some(v))?;
                let den_path = dir.join(format!("view{v}.den.tpt"));
                let density = if den_path.is_file() {
                    Some(DensityMap {
                        grid: io::read_tensor(&den_path)?,
                        cell_size: scene.view_downsample as f64,
                    })
                } else {
                    None
                };
                fviews.push(ViewFrame {
                    id: v,
                    image,
                    points,
                    density,
                });
            }
            let ground_points = annotation_coords(&dir.join("scene.pts.csv"), id, None)?;
            let scene_density = DensityMap {
                grid: io::read_tensor(&dir.join("scene.den.tpt"))?,
                cell_size: scene.cell_size,
            };
            frames.push(SceneFrame {
                id,
                views: fviews,
                ground_points,
                scene_density,
            });
        }
        Ok(Dataset::new(manifest, cameras, frames))
    }
}

fn annotation_coords(path: &Path, frame: u32, view: Option<usize>) -> Result<Vec<[f64; 2]>> {
    io::read_annotations(path)?
        .into_iter()
        .map(|p| {
            if p.frame_id != frame || p.view_id != view {
                Err(Error::format(path, format!("row for frame {} view {:?} in the wrong file", p.frame_id, p.view_id)))
            } else {
                Ok(p.coords)
            }
        })
        .collect()
}
