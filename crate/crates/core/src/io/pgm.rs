use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PgmScale {
    /// Maximum value maps to 255.
    Auto,
    Fixed(f64),
}

/// Binary 8-bit PGM of a 2-D map; values are scaled, clamped to
/// `[0, 255]` and rounded.
pub fn encode_pgm(map: &Tensor, scale: PgmScale) -> Result<Vec<u8>> {
    if map.ndim() != 2 {
        return Err(Error::Shape(format!("PGM needs a 2-D map, got shape {:?}", map.shape())));
    }
    let (h, w) = (map.shape()[0], map.shape()[1]);
    let k = match scale {
        PgmScale::Fixed(k) => k,
        PgmScale::Auto => {
            let max = map.max();
            if max > 0.0 {
                255.0 / max
            } else {
                0.0
            }
        }
    };
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(map.data().iter().map(|v| {
        let x = v * k;
        if x.is_nan() { 0 } else { x.clamp(0.0, 255.0).round() as u8 }
    }));
    Ok(out)
}
