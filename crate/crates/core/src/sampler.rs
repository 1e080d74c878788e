//! Differentiable bilinear warping of feature maps onto plane grids.
//!
//! Each target cell reads the four integer neighbours of its projected
//! location with tent weights `max(0, 1-|dx|) * max(0, 1-|dy|)`.
//! Neighbours outside the source contribute zero and masked cells are zero.
//! Grids are constants: no gradient flows to the sampling coordinates.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::geometry::SamplingGrid;
use crate::tensor::Tensor;

/// Tent-kernel interpolation weight between continuous point `p` and
/// integer lattice point `q`, both given as `(x, y)`.
pub fn bilinear_weight(p: [f64; 2], q: [i64; 2]) -> f64 {
    let wx = (1.0 - (q[0] as f64 - p[0]).abs()).max(0.0);
    let wy = (1.0 - (q[1] as f64 - p[1]).abs()).max(0.0);
    wx * wy
}

/// The in-bounds neighbours of `p` as `(flat index, weight)`.
fn taps(p: [f64; 2], h: usize, w: usize) -> impl Iterator<Item = (usize, f64)> {
    let x0 = p[0].floor() as i64;
    let y0 = p[1].floor() as i64;
    [(x0, y0), (x0 + 1, y0), (x0, y0 + 1), (x0 + 1, y0 + 1)]
        .into_iter()
        .filter(move |&(x, y)| x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h)
        .map(move |(x, y)| (y as usize * w + x as usize, bilinear_weight(p, [x, y])))
}

fn check_source(shape: &[usize], grid: &SamplingGrid) -> Result<(usize, usize, usize)> {
    let (c, h, w) = match shape {
        &[c, h, w] => (c, h, w),
        s => return Err(Error::Shape(format!("warp source must be [C,H,W], got {s:?}"))),
    };
    if h != grid.source_h {
        return Err(Error::dim("source height", grid.source_h, h));
    }
    if w != grid.source_w {
        return Err(Error::dim("source width", grid.source_w, w));
    }
    Ok((c, h, w))
}

pub fn warp(source: &Tensor, grid: &SamplingGrid) -> Result<Tensor> {
    let (c, h, w) = check_source(source.shape(), grid)?;
    let cells = grid.grid_h * grid.grid_w;
    let src = source.data();
    let mut out = vec![0.0; c * cells];
    for (cell, (&p, &valid)) in grid.coords.iter().zip(&grid.mask).enumerate() {
        if !valid {
            continue;
        }
        for (idx, wgt) in taps(p, h, w) {
            for ch in 0..c {
                out[ch * cells + cell] += src[ch * h * w + idx] * wgt;
            }
        }
    }
    Tensor::new(vec![c, grid.grid_h, grid.grid_w], out)
}

/// Transpose of [`warp`]: scatter-adds `upstream` back onto the source lattice.
pub fn warp_backward(upstream: &Tensor, grid: &SamplingGrid, channels: usize) -> Result<Tensor> {
    let expected = [channels, grid.grid_h, grid.grid_w];
    if upstream.shape() != expected {
        return Err(Error::Shape(format!(
            "warp upstream gradient must be {expected:?}, got {:?}",
            upstream.shape()
        )));
    }
    let (h, w) = (grid.source_h, grid.source_w);
    let cells = grid.grid_h * grid.grid_w;
    let up = upstream.data();
    let mut grad = vec![0.0; channels * h * w];
    for (cell, (&p, &valid)) in grid.coords.iter().zip(&grid.mask).enumerate() {
        if !valid {
            continue;
        }
        for (idx, wgt) in taps(p, h, w) {
            for ch in 0..channels {
                grad[ch * h * w + idx] += up[ch * cells + cell] * wgt;
            }
        }
    }
    Tensor::new(vec![channels, h, w], grad)
}

/// Output of a standalone warp together with what its backward pass needs.
#[derive(Clone, Debug)]
pub struct WarpResult {
    pub output: Tensor,
    pub grid: Arc<SamplingGrid>,
    pub source_channels: usize,
}

impl WarpResult {
    pub fn compute(source: &Tensor, grid: Arc<SamplingGrid>) -> Result<Self> {
        let output = warp(source, &grid)?;
        Ok(WarpResult {
            source_channels: source.shape()[0],
            output,
            grid,
        })
    }

    pub fn backward(&self, upstream: &Tensor) -> Result<Tensor> {
        warp_backward(upstream, &self.grid, self.source_channels)
    }
}
