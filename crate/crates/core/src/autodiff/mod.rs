//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Tape`] records one forward pass. Ops append nodes; [`Tape::backward`]
//! walks them in exact reverse order and leaves gradients on every leaf
//! created with `requires_grad = true`. A tape can be differentiated once;
//! call [`Tape::zero_grad`] before differentiating again.

pub mod conv;

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::geometry::SamplingGrid;
use crate::sampler;
use crate::tensor::Tensor;
use conv::ConvGeom;

static NEXT_TAPE: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a particular tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var {
    tape: u64,
    index: usize,
}

/// How a tall plane is collapsed over its vertical axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduction {
    #[default]
    Mean,
    Max,
}

/// Which output axis the collapsed plane lines up with.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AlignAxis {
    /// Plane columns follow output columns; result is repeated down the rows.
    Columns,
    /// Plane columns follow output rows; result is repeated across the columns.
    Rows,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d {
        input: usize,
        weight: usize,
        bias: usize,
        geom: ConvGeom,
    },
    Relu {
        input: usize,
    },
    Concat {
        inputs: Vec<usize>,
    },
    Mse {
        pred: usize,
        target: usize,
    },
    Sum {
        input: usize,
    },
    AddN {
        inputs: Vec<usize>,
    },
    ScaleCells {
        input: usize,
        factors: Arc<Vec<f64>>,
    },
    Warp {
        input: usize,
        grid: Arc<SamplingGrid>,
    },
    AlignPlane {
        input: usize,
        axis: AlignAxis,
        /// For max reduction: winning vertical row per (channel, column).
        argmax: Option<Vec<usize>>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug)]
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
    differentiated: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            grads: Vec::new(),
            differentiated: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn check(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.index >= self.nodes.len() {
            return Err(Error::Autodiff("variable is not attached to this tape".into()));
        }
        Ok(v.index)
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[usize]) -> Var {
        debug_assert!(
            !inputs.iter().all(|&i| self.nodes[i].value.is_finite()) || value.is_finite(),
            "non-finite output from finite inputs in {op:?}"
        );
        let requires_grad = inputs.iter().any(|&i| self.nodes[i].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        }
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        }
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        let i = self.check(v).expect("foreign variable");
        &self.nodes[i].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.check(v).map(|i| self.nodes[i].requires_grad).unwrap_or(false)
    }

    /// Gradient of the last `backward` with respect to a leaf.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        let i = self.check(v).ok()?;
        self.grads.get(i)?.as_ref()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Tensor> {
        let i = self.check(v).ok()?;
        self.grads.get_mut(i)?.take()
    }

    pub fn zero_grad(&mut self) {
        self.grads.clear();
        self.differentiated = false;
    }

    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Var,
        stride: usize,
        dilation: usize,
        padding: usize,
    ) -> Result<Var> {
        let (xi, wi, bi) = (self.check(input)?, self.check(weight)?, self.check(bias)?);
        let (c_in, h, w) = match self.nodes[xi].value.shape() {
            &[c, h, w] => (c, h, w),
            s => return Err(Error::Shape(format!("conv2d input must be [C,H,W], got {s:?}"))),
        };
        let (c_out, wc_in, k) = match self.nodes[wi].value.shape() {
            &[o, i, kh, kw] => {
                if kh != kw {
                    return Err(Error::dim("kernel width", kh, kw));
                }
                (o, i, kh)
            }
            s => {
                return Err(Error::Shape(format!(
                    "conv2d weight must be [C_out,C_in,k,k], got {s:?}"
                )))
            }
        };
        if wc_in != c_in {
            return Err(Error::dim("input channels", wc_in, c_in));
        }
        if k % 2 == 0 {
            return Err(Error::InvalidArgument(format!("kernel size must be odd, got {k}")));
        }
        if self.nodes[bi].value.numel() != c_out {
            return Err(Error::dim("bias length", c_out, self.nodes[bi].value.numel()));
        }
        if stride == 0 || dilation == 0 {
            return Err(Error::InvalidArgument("stride and dilation must be >= 1".into()));
        }
        let geom = ConvGeom {
            c_in,
            h,
            w,
            c_out,
            k,
            stride,
            dilation,
            padding,
        };
        let (oh, ow) = (geom.out_h(), geom.out_w());
        if oh == 0 || ow == 0 {
            return Err(Error::Shape(format!(
                "conv2d output would be empty for input {h}x{w}, kernel {k}, dilation {dilation}"
            )));
        }
        let out = conv::conv2d_forward(
            &geom,
            self.nodes[xi].value.data(),
            self.nodes[wi].value.data(),
            self.nodes[bi].value.data(),
        );
        let value = Tensor::new(vec![c_out, oh, ow], out)?;
        Ok(self.push(
            value,
            Op::Conv2d {
                input: xi,
                weight: wi,
                bias: bi,
                geom,
            },
            &[xi, wi, bi],
        ))
    }

    pub fn relu(&mut self, input: Var) -> Result<Var> {
        let xi = self.check(input)?;
        let value = self.nodes[xi].value.map(|v| v.max(0.0));
        Ok(self.push(value, Op::Relu { input: xi }, &[xi]))
    }

    pub fn concat_channels(&mut self, inputs: &[Var]) -> Result<Var> {
        if inputs.is_empty() {
            return Err(Error::InvalidArgument("concat of an empty list".into()));
        }
        let ids = inputs.iter().map(|&v| self.check(v)).collect::<Result<Vec<_>>>()?;
        let (_, h, w) = self.nodes[ids[0]].value.chw()?;
        let mut channels = 0;
        for &i in &ids {
            let t = &self.nodes[i].value;
            if t.ndim() != 3 {
                return Err(Error::Shape(format!("concat expects [C,H,W], got {:?}", t.shape())));
            }
            let (c, hi, wi) = t.chw()?;
            if hi != h {
                return Err(Error::dim("height", h, hi));
            }
            if wi != w {
                return Err(Error::dim("width", w, wi));
            }
            channels += c;
        }
        let mut data = Vec::with_capacity(channels * h * w);
        for &i in &ids {
            data.extend_from_slice(self.nodes[i].value.data());
        }
        let value = Tensor::new(vec![channels, h, w], data)?;
        Ok(self.push(value, Op::Concat { inputs: ids.clone() }, &ids))
    }

    /// Mean over every element of the squared difference.
    pub fn mse_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        let (pi, ti) = (self.check(pred)?, self.check(target)?);
        let (p, t) = (&self.nodes[pi].value, &self.nodes[ti].value);
        if p.shape() != t.shape() {
            return Err(Error::Shape(format!(
                "mse shapes differ: {:?} vs {:?}",
                p.shape(),
                t.shape()
            )));
        }
        if self.nodes[ti].requires_grad {
            return Err(Error::Autodiff("mse target must not require grad".into()));
        }
        let n = p.numel() as f64;
        let loss = p
            .data()
            .iter()
            .zip(t.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / n;
        Ok(self.push(Tensor::scalar(loss), Op::Mse { pred: pi, target: ti }, &[pi, ti]))
    }

    pub fn sum(&mut self, input: Var) -> Result<Var> {
        let xi = self.check(input)?;
        let s = self.nodes[xi].value.sum();
        Ok(self.push(Tensor::scalar(s), Op::Sum { input: xi }, &[xi]))
    }

    pub fn add_n(&mut self, inputs: &[Var]) -> Result<Var> {
        if inputs.is_empty() {
            return Err(Error::InvalidArgument("add_n of an empty list".into()));
        }
        let ids = inputs.iter().map(|&v| self.check(v)).collect::<Result<Vec<_>>>()?;
        let mut acc = self.nodes[ids[0]].value.clone();
        for &i in &ids[1..] {
            let t = &self.nodes[i].value;
            if t.shape() != acc.shape() {
                return Err(Error::Shape(format!(
                    "add_n shapes differ: {:?} vs {:?}",
                    acc.shape(),
                    t.shape()
                )));
            }
            acc.add_assign(t);
        }
        Ok(self.push(acc, Op::AddN { inputs: ids.clone() }, &ids))
    }

    /// Multiplies every channel of a `[C,H,W]` tensor by a fixed per-cell factor.
    pub fn scale_cells(&mut self, input: Var, factors: Arc<Vec<f64>>) -> Result<Var> {
        let xi = self.check(input)?;
        let (c, h, w) = self.nodes[xi].value.chw()?;
        if factors.len() != h * w {
            return Err(Error::dim("cell factors", h * w, factors.len()));
        }
        let mut value = self.nodes[xi].value.clone();
        for plane in value.data_mut().chunks_exact_mut(h * w) {
            for (v, f) in plane.iter_mut().zip(factors.iter()) {
                *v *= f;
            }
        }
        let value = value.reshape(vec![c, h, w])?;
        Ok(self.push(value, Op::ScaleCells { input: xi, factors }, &[xi]))
    }

    /// Bilinear warp of a `[C,H,W]` source onto the grid's plane.
    pub fn warp(&mut self, source: Var, grid: Arc<SamplingGrid>) -> Result<Var> {
        let xi = self.check(source)?;
        let value = sampler::warp(&self.nodes[xi].value, &grid)?;
        Ok(self.push(value, Op::Warp { input: xi, grid }, &[xi]))
    }

    /// Collapses a `[C, V, L]` plane over `V` and repeats it to `[C, out_h, out_w]`.
    pub fn align_plane(
        &mut self,
        input: Var,
        axis: AlignAxis,
        out_h: usize,
        out_w: usize,
        reduction: Reduction,
    ) -> Result<Var> {
        let xi = self.check(input)?;
        let x = &self.nodes[xi].value;
        let (c, v, l) = match x.shape() {
            &[c, v, l] => (c, v, l),
            s => return Err(Error::Shape(format!("align_plane expects [C,V,L], got {s:?}"))),
        };
        let want = match axis {
            AlignAxis::Columns => out_w,
            AlignAxis::Rows => out_h,
        };
        if l != want {
            return Err(Error::dim("plane length", want, l));
        }
        let xd = x.data();
        let mut line = vec![0.0; c * l];
        let mut argmax = (reduction == Reduction::Max).then(|| vec![0usize; c * l]);
        for ch in 0..c {
            for k in 0..l {
                let col = (0..v).map(|r| xd[(ch * v + r) * l + k]);
                line[ch * l + k] = match (reduction, argmax.as_mut()) {
                    (Reduction::Mean, _) => col.sum::<f64>() / v as f64,
                    (Reduction::Max, Some(am)) => {
                        let (best_r, best) = col.enumerate().fold((0, f64::NEG_INFINITY), |acc, (r, val)| {
                            if val > acc.1 {
                                (r, val)
                            } else {
                                acc
                            }
                        });
                        am[ch * l + k] = best_r;
                        best
                    }
                    (Reduction::Max, None) => unreachable!(),
                };
            }
        }
        let mut out = vec![0.0; c * out_h * out_w];
        for ch in 0..c {
            for i in 0..out_h {
                for j in 0..out_w {
                    let k = match axis {
                        AlignAxis::Columns => j,
                        AlignAxis::Rows => i,
                    };
                    out[(ch * out_h + i) * out_w + j] = line[ch * l + k];
                }
            }
        }
        let value = Tensor::new(vec![c, out_h, out_w], out)?;
        Ok(self.push(value, Op::AlignPlane { input: xi, axis, argmax }, &[xi]))
    }

    /// Differentiates a scalar `loss`, populating gradients on leaves.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let li = self.check(loss)?;
        if !self.nodes[li].value.is_scalar() {
            return Err(Error::Autodiff(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[li].value.shape()
            )));
        }
        if self.differentiated {
            return Err(Error::Autodiff(
                "backward called twice without zero_grad".into(),
            ));
        }
        self.differentiated = true;

        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[li] = Some(Tensor::new(self.nodes[li].value.shape().to_vec(), vec![1.0])?);

        for i in (0..=li).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            if let Op::Leaf = self.nodes[i].op {
                grads[i] = Some(g);
                continue;
            }
            for (target, contrib) in self.vjp(i, &g)? {
                if !self.nodes[target].requires_grad {
                    continue;
                }
                match &mut grads[target] {
                    Some(acc) => acc.add_assign(&contrib),
                    slot @ None => *slot = Some(contrib),
                }
            }
        }
        // Only leaves keep gradients.
        for (node, g) in self.nodes.iter().zip(grads.iter_mut()) {
            if !matches!(node.op, Op::Leaf) {
                *g = None;
            }
        }
        self.grads = grads;
        Ok(())
    }

    /// Vector-Jacobian products of node `i` for each input needing a gradient.
    fn vjp(&self, i: usize, g: &Tensor) -> Result<Vec<(usize, Tensor)>> {
        let wants = |j: usize| self.nodes[j].requires_grad;
        let mut out = Vec::new();
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            } => {
                let grads = conv::conv2d_backward(
                    geom,
                    self.nodes[*input].value.data(),
                    self.nodes[*weight].value.data(),
                    g.data(),
                    [wants(*input), wants(*weight), wants(*bias)],
                );
                if let Some(gx) = grads.input {
                    out.push((*input, Tensor::new(self.nodes[*input].value.shape().to_vec(), gx)?));
                }
                if let Some(gw) = grads.weight {
                    out.push((*weight, Tensor::new(self.nodes[*weight].value.shape().to_vec(), gw)?));
                }
                if let Some(gb) = grads.bias {
                    out.push((*bias, Tensor::new(self.nodes[*bias].value.shape().to_vec(), gb)?));
                }
            }
            Op::Relu { input } => {
                let x = &self.nodes[*input].value;
                let mut gx = g.clone();
                for (gv, &xv) in gx.data_mut().iter_mut().zip(x.data()) {
                    if xv <= 0.0 {
                        *gv = 0.0;
                    }
                }
                out.push((*input, gx));
            }
            Op::Concat { inputs } => {
                let mut offset = 0;
                for &j in inputs {
                    let shape = self.nodes[j].value.shape().to_vec();
                    let n = self.nodes[j].value.numel();
                    if wants(j) {
                        out.push((j, Tensor::new(shape, g.data()[offset..offset + n].to_vec())?));
                    }
                    offset += n;
                }
            }
            Op::Mse { pred, target } => {
                if wants(*pred) {
                    let p = &self.nodes[*pred].value;
                    let t = &self.nodes[*target].value;
                    let k = 2.0 * g.data()[0] / p.numel() as f64;
                    let gp = p
                        .data()
                        .iter()
                        .zip(t.data())
                        .map(|(a, b)| k * (a - b))
                        .collect();
                    out.push((*pred, Tensor::new(p.shape().to_vec(), gp)?));
                }
            }
            Op::Sum { input } => {
                let shape = self.nodes[*input].value.shape();
                out.push((*input, Tensor::full(shape, g.data()[0])));
            }
            Op::AddN { inputs } => {
                for &j in inputs {
                    if wants(j) {
                        out.push((j, g.clone()));
                    }
                }
            }
            Op::ScaleCells { input, factors } => {
                let mut gx = g.clone();
                let cells = factors.len();
                for plane in gx.data_mut().chunks_exact_mut(cells) {
                    for (v, f) in plane.iter_mut().zip(factors.iter()) {
                        *v *= f;
                    }
                }
                out.push((*input, gx));
            }
            Op::Warp { input, grid } => {
                let c = self.nodes[*input].value.shape()[0];
                out.push((*input, sampler::warp_backward(g, grid, c)?));
            }
            Op::AlignPlane { input, axis, argmax } => {
                let x = &self.nodes[*input].value;
                let (c, v, l) = (x.shape()[0], x.shape()[1], x.shape()[2]);
                let (_, oh, ow) = g.chw()?;
                let gd = g.data();
                // Sum the repeated copies back onto the collapsed line.
                let mut line = vec![0.0; c * l];
                for ch in 0..c {
                    for i in 0..oh {
                        for j in 0..ow {
                            let k = match axis {
                                AlignAxis::Columns => j,
                                AlignAxis::Rows => i,
                            };
                            line[ch * l + k] += gd[(ch * oh + i) * ow + j];
                        }
                    }
                }
                let mut gx = vec![0.0; c * v * l];
                for ch in 0..c {
                    for k in 0..l {
                        let gl = line[ch * l + k];
                        match argmax {
                            None => {
                                for r in 0..v {
                                    gx[(ch * v + r) * l + k] = gl / v as f64;
                                }
                            }
                            Some(am) => gx[(ch * v + am[ch * l + k]) * l + k] = gl,
                        }
                    }
                }
                out.push((*input, Tensor::new(vec![c, v, l], gx)?));
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gradient_is_ones() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![3], vec![1.0, -2.0, 5.0]).unwrap(), true);
        let s = tape.sum(x).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn backward_twice_is_an_error() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::ones(&[2]), true);
        let s = tape.sum(x).unwrap();
        tape.backward(s).unwrap();
        assert!(tape.backward(s).is_err());
        tape.zero_grad();
        assert!(tape.grad(x).is_none());
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[1.0, 1.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_and_foreign_vars() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::ones(&[2]), true);
        assert!(tape.backward(x).is_err());
        let mut other = Tape::new();
        let y = other.leaf(Tensor::ones(&[1]), true);
        assert!(tape.backward(y).is_err());
        assert!(tape.sum(y).is_err());
    }

    #[test]
    fn relu_examples() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![3], vec![-1.0, 0.0, 2.0]).unwrap(), true);
        let y = tape.relu(x).unwrap();
        assert_eq!(tape.value(y).data(), &[0.0, 0.0, 2.0]);
        let s = tape.sum(y).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[0.0, 0.0, 1.0]);

        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::full(&[2, 2], -0.5), true);
        let y = tape.relu(x).unwrap();
        assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
        let s = tape.sum(y).unwrap();
        tape.backward(s).unwrap();
        assert!(tape.grad(x).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mse_examples() {
        let mut tape = Tape::new();
        let p = tape.leaf(Tensor::new(vec![2], vec![1.0, 2.0]).unwrap(), true);
        let t = tape.constant(Tensor::zeros(&[2]));
        let l = tape.mse_loss(p, t).unwrap();
        assert_eq!(tape.value(l).data(), &[2.5]);
        let same = tape.mse_loss(p, p);
        assert!(same.is_err(), "target requiring grad must be rejected");
        let q = tape.constant(Tensor::new(vec![2], vec![1.0, 2.0]).unwrap());
        let z = tape.mse_loss(q, q).unwrap();
        assert_eq!(tape.value(z).data(), &[0.0]);
        let bad = tape.constant(Tensor::zeros(&[3]));
        assert!(tape.mse_loss(p, bad).is_err());
    }

    #[test]
    fn conv_sum_of_ones() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::ones(&[1, 3, 3]));
        let w = tape.constant(Tensor::ones(&[1, 1, 3, 3]));
        let b = tape.constant(Tensor::zeros(&[1]));
        let y = tape.conv2d(x, w, b, 1, 1, 1).unwrap();
        let out = tape.value(y);
        assert_eq!(out.shape(), &[1, 3, 3]);
        assert_eq!(out.at3(0, 1, 1), 9.0);
        assert_eq!(out.at3(0, 0, 0), 4.0);
    }

    #[test]
    fn conv_identity_kernel() {
        let mut tape = Tape::new();
        let input = Tensor::from_fn(&[2, 4, 5], |i| (i as f64 * 0.731).cos());
        let x = tape.constant(input.clone());
        let mut kernel = Tensor::zeros(&[2, 2, 3, 3]);
        kernel.data_mut()[4] = 1.0; // out 0 <- in 0 center
        kernel.data_mut()[(2 + 1) * 9 + 4] = 1.0; // out 1 <- in 1 center
        let w = tape.constant(kernel);
        let b = tape.constant(Tensor::zeros(&[2]));
        let y = tape.conv2d(x, w, b, 1, 1, 1).unwrap();
        assert_eq!(tape.value(y), &input);
    }

    #[test]
    fn conv_shape_errors_name_axis() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::ones(&[2, 5, 5]));
        let w = tape.constant(Tensor::ones(&[1, 3, 3, 3]));
        let b = tape.constant(Tensor::zeros(&[1]));
        match tape.conv2d(x, w, b, 1, 1, 1) {
            Err(Error::Dimension { axis, .. }) => assert_eq!(axis, "input channels"),
            other => panic!("unexpected {other:?}"),
        }
        let w2 = tape.constant(Tensor::ones(&[1, 2, 2, 2]));
        assert!(tape.conv2d(x, w2, b, 1, 1, 1).is_err());
        let w3 = tape.constant(Tensor::ones(&[1, 2, 3, 3]));
        let b3 = tape.constant(Tensor::zeros(&[2]));
        assert!(matches!(
            tape.conv2d(x, w3, b3, 1, 1, 1),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn concat_examples() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::from_fn(&[2, 4, 4], |i| i as f64), true);
        let single = tape.concat_channels(&[a]).unwrap();
        assert_eq!(tape.value(single), tape.value(a));
        let b = tape.leaf(Tensor::full(&[2, 4, 4], 7.0), true);
        let c = tape.leaf(Tensor::full(&[1, 4, 4], -1.0), true);
        let y = tape.concat_channels(&[a, b, c]).unwrap();
        assert_eq!(tape.value(y).shape(), &[5, 4, 4]);
        assert_eq!(&tape.value(y).data()[..32], tape.value(a).data());
        let s = tape.sum(y).unwrap();
        tape.backward(s).unwrap();
        for v in [a, b, c] {
            let g = tape.grad(v).unwrap();
            assert_eq!(g.shape(), tape.value(v).shape());
            assert!(g.data().iter().all(|&x| x == 1.0));
        }
        let bad = tape.leaf(Tensor::ones(&[1, 3, 4]), false);
        assert!(matches!(
            tape.concat_channels(&[a, bad]),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn align_plane_mean_and_max() {
        let mut tape = Tape::new();
        // [C=1, V=2, L=3]
        let x = tape.leaf(Tensor::new(vec![1, 2, 3], vec![1.0, 5.0, 3.0, 3.0, 1.0, 3.0]).unwrap(), true);
        let cols = tape.align_plane(x, AlignAxis::Columns, 2, 3, Reduction::Mean).unwrap();
        assert_eq!(tape.value(cols).data(), &[2.0, 3.0, 3.0, 2.0, 3.0, 3.0]);
        let rows = tape.align_plane(x, AlignAxis::Rows, 3, 2, Reduction::Max).unwrap();
        assert_eq!(tape.value(rows).data(), &[3.0, 3.0, 5.0, 5.0, 3.0, 3.0]);
        assert!(tape.align_plane(x, AlignAxis::Rows, 2, 3, Reduction::Mean).is_err());
    }
}
