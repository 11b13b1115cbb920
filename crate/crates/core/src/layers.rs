//! Dense kernels behind the network: strided convolution, transposed
//! convolution and fully connected layers, each with its backward pass.
//!
//! Activations are single-sample, channel-major (`[C, H, W]`) `f64` buffers.
//! Convolutions go through im2col and a GEMM; a transposed convolution is
//! the adjoint of a convolution, so it reuses the same im2col/col2im pair
//! with the roles swapped.

/// `c = a·b (+ c if accumulate)`; `a` is `m×k`, `b` is `k×n`, both row-major
/// unless flagged as transposed (then stored as `k×m` / `n×k`).
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    c: &mut [f64],
    accumulate: bool,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: bounds checked above; strides describe the stated layouts.
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

/// Geometry of a square, zero-padded, strided convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub channels: usize,
    pub side_in: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub side_out: usize,
}

impl ConvGeom {
    pub fn new(channels: usize, side_in: usize, kernel: usize, stride: usize, pad: usize) -> Self {
        let side_out = (side_in + 2 * pad - kernel) / stride + 1;
        Self {
            channels,
            side_in,
            kernel,
            stride,
            pad,
            side_out,
        }
    }

    pub fn col_rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    pub fn col_cols(&self) -> usize {
        self.side_out * self.side_out
    }

    /// Calls `f(col_index, input_index)` for every in-bounds tap of row `row`.
    #[inline]
    fn for_taps(&self, row: usize, mut f: impl FnMut(usize, usize)) {
        let k = self.kernel;
        let c = row / (k * k);
        let ki = (row / k) % k;
        let kj = row % k;
        let n_in = self.side_in as isize;
        let base = c * self.side_in * self.side_in;
        for oy in 0..self.side_out {
            let iy = (oy * self.stride + ki) as isize - self.pad as isize;
            if !(0..n_in).contains(&iy) {
                continue;
            }
            for ox in 0..self.side_out {
                let ix = (ox * self.stride + kj) as isize - self.pad as isize;
                if (0..n_in).contains(&ix) {
                    f(oy * self.side_out + ox, base + (iy * n_in + ix) as usize);
                }
            }
        }
    }
}

pub(crate) fn im2col(input: &[f64], g: &ConvGeom) -> Vec<f64> {
    debug_assert_eq!(input.len(), g.channels * g.side_in * g.side_in);
    let cols_n = g.col_cols();
    let mut cols = vec![0.0; g.col_rows() * cols_n];
    for row in 0..g.col_rows() {
        let dst = &mut cols[row * cols_n..(row + 1) * cols_n];
        g.for_taps(row, |j, i| dst[j] = input[i]);
    }
    cols
}

pub(crate) fn col2im(cols: &[f64], g: &ConvGeom) -> Vec<f64> {
    let cols_n = g.col_cols();
    let mut out = vec![0.0; g.channels * g.side_in * g.side_in];
    for row in 0..g.col_rows() {
        let src = &cols[row * cols_n..(row + 1) * cols_n];
        g.for_taps(row, |j, i| out[i] += src[j]);
    }
    out
}

fn add_channel_bias(out: &mut [f64], bias: &[f64], plane: usize) {
    for (chunk, &b) in out.chunks_exact_mut(plane).zip(bias) {
        chunk.iter_mut().for_each(|v| *v += b);
    }
}

fn accumulate_channel_sums(d_out: &[f64], d_bias: &mut [f64], plane: usize) {
    for (chunk, db) in d_out.chunks_exact(plane).zip(d_bias.iter_mut()) {
        *db += chunk.iter().sum::<f64>();
    }
}

/// Strided convolution; weight is `[c_out, c_in, k, k]`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Conv2d {
    pub geom: ConvGeom,
    pub c_out: usize,
}

impl Conv2d {
    #[cfg(test)]
    pub fn weight_len(&self) -> usize {
        self.c_out * self.geom.col_rows()
    }

    /// Returns (output, im2col buffer kept for the backward pass).
    pub fn forward(&self, input: &[f64], weight: &[f64], bias: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let g = &self.geom;
        let cols = im2col(input, g);
        let mut out = vec![0.0; self.c_out * g.col_cols()];
        gemm(self.c_out, g.col_rows(), g.col_cols(), weight, false, &cols, false, &mut out, false);
        add_channel_bias(&mut out, bias, g.col_cols());
        (out, cols)
    }

    /// Accumulates weight/bias gradients; returns the input gradient when asked.
    pub fn backward(
        &self,
        d_out: &[f64],
        cols: &[f64],
        weight: &[f64],
        d_weight: &mut [f64],
        d_bias: &mut [f64],
        need_input_grad: bool,
    ) -> Option<Vec<f64>> {
        let g = &self.geom;
        gemm(self.c_out, g.col_cols(), g.col_rows(), d_out, false, cols, true, d_weight, true);
        accumulate_channel_sums(d_out, d_bias, g.col_cols());
        if !need_input_grad {
            return None;
        }
        let mut d_cols = vec![0.0; g.col_rows() * g.col_cols()];
        gemm(g.col_rows(), self.c_out, g.col_cols(), weight, true, d_out, false, &mut d_cols, false);
        Some(col2im(&d_cols, g))
    }
}

/// Transposed convolution; weight is `[c_in, c_out, k, k]`. `adj` is the
/// geometry of the forward convolution it is the adjoint of: it maps the
/// large `c_out` image down to the small `c_in` one.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvTranspose2d {
    pub adj: ConvGeom,
    pub c_in: usize,
}

impl ConvTranspose2d {
    pub fn new(c_in: usize, c_out: usize, side_in: usize, kernel: usize, stride: usize, pad: usize) -> Self {
        let side_out = (side_in - 1) * stride + kernel - 2 * pad;
        let adj = ConvGeom::new(c_out, side_out, kernel, stride, pad);
        debug_assert_eq!(adj.side_out, side_in);
        Self { adj, c_in }
    }

    pub fn c_out(&self) -> usize {
        self.adj.channels
    }

    pub fn side_out(&self) -> usize {
        self.adj.side_in
    }

    #[cfg(test)]
    pub fn weight_len(&self) -> usize {
        self.c_in * self.adj.col_rows()
    }

    pub fn forward(&self, input: &[f64], weight: &[f64], bias: &[f64]) -> Vec<f64> {
        let g = &self.adj;
        let mut cols = vec![0.0; g.col_rows() * g.col_cols()];
        gemm(g.col_rows(), self.c_in, g.col_cols(), weight, true, input, false, &mut cols, false);
        let mut out = col2im(&cols, g);
        add_channel_bias(&mut out, bias, g.side_in * g.side_in);
        out
    }

    pub fn backward(
        &self,
        d_out: &[f64],
        input: &[f64],
        weight: &[f64],
        d_weight: &mut [f64],
        d_bias: &mut [f64],
        need_input_grad: bool,
    ) -> Option<Vec<f64>> {
        let g = &self.adj;
        let d_cols = im2col(d_out, g);
        gemm(self.c_in, g.col_cols(), g.col_rows(), input, false, &d_cols, true, d_weight, true);
        accumulate_channel_sums(d_out, d_bias, g.side_in * g.side_in);
        if !need_input_grad {
            return None;
        }
        let mut d_in = vec![0.0; self.c_in * g.col_cols()];
        gemm(self.c_in, g.col_rows(), g.col_cols(), weight, false, &d_cols, false, &mut d_in, false);
        Some(d_in)
    }
}

/// `y = W x + b`, weight `[out, in]`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Linear {
    pub n_in: usize,
    pub n_out: usize,
}

impl Linear {
    pub fn forward(&self, x: &[f64], weight: &[f64], bias: &[f64]) -> Vec<f64> {
        let mut y = bias.to_vec();
        gemm(self.n_out, self.n_in, 1, weight, false, x, false, &mut y, true);
        y
    }

    pub fn backward(
        &self,
        d_y: &[f64],
        x: &[f64],
        weight: &[f64],
        d_weight: &mut [f64],
        d_bias: &mut [f64],
        need_input_grad: bool,
    ) -> Option<Vec<f64>> {
        for (row, &dy) in d_weight.chunks_exact_mut(self.n_in).zip(d_y) {
            if dy != 0.0 {
                row.iter_mut().zip(x).for_each(|(w, &xi)| *w += dy * xi);
            }
        }
        d_bias.iter_mut().zip(d_y).for_each(|(b, &dy)| *b += dy);
        if !need_input_grad {
            return None;
        }
        let mut d_x = vec![0.0; self.n_in];
        gemm(self.n_in, self.n_out, 1, weight, true, d_y, false, &mut d_x, false);
        Some(d_x)
    }
}

pub(crate) fn relu_in_place(v: &mut [f64]) {
    v.iter_mut().for_each(|x| {
        if *x < 0.0 {
            *x = 0.0
        }
    });
}

/// Masks `grad` by the post-activation values of a ReLU.
pub(crate) fn relu_backward_in_place(grad: &mut [f64], activated: &[f64]) {
    grad.iter_mut().zip(activated).for_each(|(g, &a)| {
        if a <= 0.0 {
            *g = 0.0
        }
    });
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
