//! Camera files: `key = value` text with `#` comments (a TOML subset).

use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::geometry::CameraModel;

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CameraRecord {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    #[serde(rename = "R")]
    r: Vec<f64>,
    t: Vec<f64>,
    width: usize,
    height: usize,
}

fn list(values: &[f64]) -> String {
    let items: Vec<String> = values.iter().map(|v| format!("{v:?}")).collect();
    format!("[{}]", items.join(", "))
}

pub fn encode_camera(cam: &CameraModel) -> String {
    let r: Vec<f64> = (0..3).flat_map(|i| (0..3).map(move |j| (i, j))).map(|(i, j)| cam.rotation[(i, j)]).collect();
    format!(
        "# pinhole camera: world-to-camera R (row-major) and t, pixel intrinsics\n\
         fx = {:?}\nfy = {:?}\ncx = {:?}\ncy = {:?}\nR = {}\nt = {}\nwidth = {}\nheight = {}\n",
        cam.fx,
        cam.fy,
        cam.cx,
        cam.cy,
        list(&r),
        list(cam.translation.as_slice()),
        cam.width,
        cam.height
    )
}

pub fn parse_camera(text: &str, path: &Path) -> Result<CameraModel> {
    let rec: CameraRecord = toml::from_str(text).map_err(|e| Error::format(path, e.to_string()))?;
    if rec.r.len() != 9 || rec.t.len() != 3 {
        return Err(Error::format(path, "R needs 9 values and t needs 3"));
    }
    CameraModel::new(
        rec.fx,
        rec.fy,
        rec.cx,
        rec.cy,
        Matrix3::from_row_slice(&rec.r),
        Vector3::from_column_slice(&rec.t),
        rec.width,
        rec.height,
    )
    .map_err(|e| Error::format(path, e.to_string()))
}

pub fn write_camera(path: &Path, cam: &CameraModel) -> Result<()> {
    super::write_bytes(path, encode_camera(cam).as_bytes())
}

pub fn read_camera(path: &Path) -> Result<CameraModel> {
    parse_camera(&super::read_text(path)?, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let cam = CameraModel::look_at([1.3, -2.0, 2.1], [2.0, 2.0, 0.0], 71.3, 70.9, 80, 64).unwrap();
        let text = encode_camera(&cam);
        let back = parse_camera(&text, Path::new("c")).unwrap();
        assert_eq!(back, cam);
        assert_eq!(encode_camera(&back), text);
    }

    #[test]
    fn comments_and_bad_rotation() {
        let ok = "# c\nfx = 1.0\nfy = 1.0 # f\ncx = 0.0\ncy = 0.0\nR = [1,0,0, 0,1,0, 0,0,1]\nt = [0,0,1]\nwidth = 4\nheight = 4\n";
        assert!(parse_camera(ok, Path::new("c")).is_ok());
        let bad = ok.replace("R = [1,0,0", "R = [2,0,0");
        assert!(matches!(parse_camera(&bad, Path::new("c")), Err(Error::Format { .. })));
        let short = ok.replace("t = [0,0,1]", "t = [0,0]");
        assert!(parse_camera(&short, Path::new("c")).is_err());
    }
}
