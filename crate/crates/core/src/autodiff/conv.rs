//! im2col convolution kernels backed by `matrixmultiply::dgemm`.

/// Geometry of one 2-D cross-correlation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
    pub dilation: usize,
    pub padding: usize,
}

impl ConvGeom {
    pub fn out_h(&self) -> usize {
        out_len(self.h, self.k, self.stride, self.dilation, self.padding)
    }

    pub fn out_w(&self) -> usize {
        out_len(self.w, self.k, self.stride, self.dilation, self.padding)
    }

    fn col_rows(&self) -> usize {
        self.c_in * self.k * self.k
    }

    /// A 1x1, stride-1, unpadded conv reads its input directly as the column matrix.
    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.padding == 0
    }
}

/// `floor((len + 2p - d(k-1) - 1) / s) + 1`, or 0 when the kernel does not fit.
pub fn out_len(len: usize, k: usize, stride: usize, dilation: usize, padding: usize) -> usize {
    let span = dilation * (k - 1) + 1;
    let padded = len + 2 * padding;
    if padded < span {
        0
    } else {
        (padded - span) / stride + 1
    }
}

fn im2col(g: &ConvGeom, input: &[f64]) -> Vec<f64> {
    let (oh, ow) = (g.out_h(), g.out_w());
    let n = oh * ow;
    let mut col = vec![0.0; g.col_rows() * n];
    for c in 0..g.c_in {
        let plane = &input[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (c * g.k + ki) * g.k + kj;
                let dst = &mut col[row * n..(row + 1) * n];
                for oi in 0..oh {
                    let ii = (oi * g.stride + ki * g.dilation) as isize - g.padding as isize;
                    if ii < 0 || ii >= g.h as isize {
                        continue;
                    }
                    let src_row = &plane[ii as usize * g.w..(ii as usize + 1) * g.w];
                    for oj in 0..ow {
                        let jj = (oj * g.stride + kj * g.dilation) as isize - g.padding as isize;
                        if jj >= 0 && jj < g.w as isize {
                            dst[oi * ow + oj] = src_row[jj as usize];
                        }
                    }
                }
            }
        }
    }
    col
}

fn col2im(g: &ConvGeom, col: &[f64], grad_input: &mut [f64]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let n = oh * ow;
    for c in 0..g.c_in {
        let plane = &mut grad_input[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (c * g.k + ki) * g.k + kj;
                let src = &col[row * n..(row + 1) * n];
                for oi in 0..oh {
                    let ii = (oi * g.stride + ki * g.dilation) as isize - g.padding as isize;
                    if ii < 0 || ii >= g.h as isize {
                        continue;
                    }
                    let dst_row = &mut plane[ii as usize * g.w..(ii as usize + 1) * g.w];
                    for oj in 0..ow {
                        let jj = (oj * g.stride + kj * g.dilation) as isize - g.padding as isize;
                        if jj >= 0 && jj < g.w as isize {
                            dst_row[jj as usize] += src[oi * ow + oj];
                        }
                    }
                }
            }
        }
    }
}

/// `c (m x n) = alpha * op(a) * op(b) + beta * c` with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    beta: f64,
    c: &mut [f64],
) {
    debug_assert!(c.len() >= m * n);
    // SAFETY: callers pass buffers sized for the given dimensions and strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub fn conv2d_forward(g: &ConvGeom, input: &[f64], weight: &[f64], bias: &[f64]) -> Vec<f64> {
    let n = g.out_h() * g.out_w();
    let kk = g.col_rows();
    let mut out = vec![0.0; g.c_out * n];
    for (co, row) in out.chunks_exact_mut(n).enumerate() {
        row.fill(bias[co]);
    }
    if g.is_pointwise() {
        gemm(g.c_out, kk, n, weight, (kk as isize, 1), input, (n as isize, 1), 1.0, &mut out);
    } else {
        let col = im2col(g, input);
        gemm(g.c_out, kk, n, weight, (kk as isize, 1), &col, (n as isize, 1), 1.0, &mut out);
    }
    out
}

pub struct ConvGrads {
    pub input: Option<Vec<f64>>,
    pub weight: Option<Vec<f64>>,
    pub bias: Option<Vec<f64>>,
}

pub fn conv2d_backward(
    g: &ConvGeom,
    input: &[f64],
    weight: &[f64],
    grad_out: &[f64],
    need: [bool; 3],
) -> ConvGrads {
    let n = g.out_h() * g.out_w();
    let kk = g.col_rows();
    let [need_x, need_w, need_b] = need;

    let bias = need_b.then(|| grad_out.chunks_exact(n).map(|r| r.iter().sum()).collect());

    let weight_grad = need_w.then(|| {
        let mut gw = vec![0.0; g.c_out * kk];
        // gw (c_out x kk) = grad_out (c_out x n) * col^T (n x kk)
        if g.is_pointwise() {
            gemm(g.c_out, n, kk, grad_out, (n as isize, 1), input, (1, n as isize), 0.0, &mut gw);
        } else {
            let col = im2col(g, input);
            gemm(g.c_out, n, kk, grad_out, (n as isize, 1), &col, (1, n as isize), 0.0, &mut gw);
        }
        gw
    });

    let input_grad = need_x.then(|| {
        // gcol (kk x n) = weight^T (kk x c_out) * grad_out (c_out x n)
        let mut gcol = vec![0.0; kk * n];
        gemm(kk, g.c_out, n, weight, (1, kk as isize), grad_out, (n as isize, 1), 0.0, &mut gcol);
        if g.is_pointwise() {
            gcol
        } else {
            let mut gx = vec![0.0; g.c_in * g.h * g.w];
            col2im(g, &gcol, &mut gx);
            gx
        }
    });

    ConvGrads {
        input: input_grad,
        weight: weight_grad,
        bias,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn out_len_formula() {
        assert_eq!(out_len(5, 3, 1, 1, 1), 5);
        assert_eq!(out_len(8, 3, 2, 1, 1), 4);
        assert_eq!(out_len(5, 3, 1, 2, 2), 5);
        assert_eq!(out_len(2, 3, 1, 3, 0), 0);
    }

    #[test]
    fn pointwise_matches_general_path() {
        let g = ConvGeom {
            c_in: 3,
            h: 4,
            w: 5,
            c_out: 2,
            k: 1,
            stride: 1,
            dilation: 1,
            padding: 0,
        };
        let x: Vec<f64> = (0..60).map(|i| (i as f64 * 0.37).sin()).collect();
        let w: Vec<f64> = (0..6).map(|i| i as f64 - 2.5).collect();
        let b = [0.5, -1.0];
        let fast = conv2d_forward(&g, &x, &w, &b);
        let col = im2col(&g, &x);
        assert_eq!(col, x);
        assert_eq!(fast.len(), 40);
    }
}
