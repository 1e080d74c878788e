//! Point annotation CSV: `frame_id,view_id,x,y`, empty `view_id` on
//! scene rows.

use std::path::Path;

use crate::density::PointAnnotation;
use crate::error::{Error, Result};

const HEADER: [&str; 4] = ["frame_id", "view_id", "x", "y"];

pub fn encode_annotations(points: &[PointAnnotation]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(HEADER).expect("in-memory write");
    for p in points {
        let view = p.view_id.map(|v| v.to_string()).unwrap_or_default();
        w.write_record([
            p.frame_id.to_string(),
            view,
            format!("{:?}", p.coords[0]),
            format!("{:?}", p.coords[1]),
        ])
        .expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

pub fn parse_annotations(bytes: &[u8], path: &Path) -> Result<Vec<PointAnnotation>> {
    let bad = |line: u64, msg: String| Error::format(path, format!("line {line}: {msg}"));
    let mut r = csv::Reader::from_reader(bytes);
    let header = r.headers().map_err(|e| Error::format(path, e.to_string()))?;
    if header.iter().ne(HEADER) {
        return Err(Error::format(path, format!("expected header {}", HEADER.join(","))));
    }
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| Error::format(path, e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        let field = |i: usize| rec.get(i).unwrap_or("");
        let frame_id = field(0).parse().map_err(|e| bad(line, format!("frame_id: {e}")))?;
        let view_id = match field(1) {
            "" => None,
            s => Some(s.parse().map_err(|e| bad(line, format!("view_id: {e}")))?),
        };
        let x: f64 = field(2).parse().map_err(|e| bad(line, format!("x: {e}")))?;
        let y: f64 = field(3).parse().map_err(|e| bad(line, format!("y: {e}")))?;
        out.push(PointAnnotation {
            frame_id,
            view_id,
            coords: [x, y],
        });
    }
    Ok(out)
}

pub fn write_annotations(path: &Path, points: &[PointAnnotation]) -> Result<()> {
    super::write_bytes(path, &encode_annotations(points))
}

pub fn read_annotations(path: &Path) -> Result<Vec<PointAnnotation>> {
    parse_annotations(&super::read_bytes(path)?, path)
}
