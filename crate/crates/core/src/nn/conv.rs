use rand::Rng;

use crate::nn::direct::{self, Padded};
use crate::nn::gemm::{sgemm, Layout};
use crate::nn::param::{join, Module, Param};
use crate::nn::tensor::Tensor;

/// Upper bound on the im2col scratch buffer, in elements.
const COL_BUDGET: usize = 1 << 22;

/// Stride-1 spatial convolutions with at most this many output channels
/// use the direct kernels instead of im2col + gemm.
const DIRECT_MAX_OUT: usize = 16;

/// 2-D convolution with square kernel, symmetric zero padding `k / 2`.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub weight: Param,
    pub bias: Option<Param>,
    /// Use the direct kernels (see [`DIRECT_MAX_OUT`]).
    pub(crate) direct: bool,
    cached_input: Option<Tensor>,
}

impl Conv2d {
    /// Weights are drawn from N(0, 2 / (out * k * k)); bias starts at zero.
    pub fn new<R: Rng>(
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        assert!(kernel % 2 == 1, "kernel must be odd");
        assert!(stride >= 1);
        let fan_out = (out_channels * kernel * kernel) as f64;
        let weight = Param::normal(
            join(name, "weight"),
            &[out_channels, in_channels, kernel, kernel],
            (2.0 / fan_out).sqrt(),
            rng,
        );
        Self {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding: kernel / 2,
            weight,
            bias: bias.then(|| Param::zeros(join(name, "bias"), &[out_channels])),
            direct: stride == 1 && kernel > 1 && out_channels <= DIRECT_MAX_OUT,
            cached_input: None,
        }
    }

    pub fn output_size(&self, h: usize, w: usize) -> (usize, usize) {
        let oh = (h + 2 * self.padding - self.kernel) / self.stride + 1;
        let ow = (w + 2 * self.padding - self.kernel) / self.stride + 1;
        (oh, ow)
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1
    }

    fn rows_per_chunk(&self, oh: usize, ow: usize) -> usize {
        let ckk = self.in_channels * self.kernel * self.kernel;
        (COL_BUDGET / (ckk * ow).max(1)).clamp(1, oh)
    }

    pub fn forward(&mut self, x: &Tensor, train: bool) -> Tensor {
        assert_eq!(x.channels(), self.in_channels, "{}: channel mismatch", self.weight.name);
        let [n, _, h, w] = x.shape();
        let (oh, ow) = self.output_size(h, w);
        let ohw = oh * ow;
        let ckk = self.in_channels * self.kernel * self.kernel;
        let mut out = Tensor::zeros([n, self.out_channels, oh, ow]);
        let rows = self.rows_per_chunk(oh, ow);
        let mut col = if self.is_pointwise() || self.direct {
            Vec::new()
        } else {
            vec![0.0f32; ckk * rows * ow]
        };
        let packed = self
            .direct
            .then(|| direct::pack_weights(&self.weight.value, self.out_channels, self.in_channels, self.kernel));
        for b in 0..n {
            let xs = x.sample_slice(b);
            let ys = out.sample_slice_mut(b);
            if let Some(packed) = &packed {
                let xp = Padded::new(xs, self.in_channels, h, w, self.kernel);
                direct::conv_forward(&xp, packed, self.out_channels, self.kernel, oh, ow, ys);
            } else if self.is_pointwise() {
                sgemm(
                    self.out_channels,
                    ckk,
                    ohw,
                    &self.weight.value,
                    Layout::rows(ckk),
                    xs,
                    Layout::rows(ohw),
                    0.0,
                    ys,
                    Layout::rows(ohw),
                );
            } else {
                let mut r0 = 0;
                while r0 < oh {
                    let r1 = (r0 + rows).min(oh);
                    let len = (r1 - r0) * ow;
                    im2col(xs, self.in_channels, h, w, self.kernel, self.stride, self.padding, ow, r0, r1, &mut col);
                    sgemm(
                        self.out_channels,
                        ckk,
                        len,
                        &self.weight.value,
                        Layout::rows(ckk),
                        &col,
                        Layout::rows(len),
                        0.0,
                        &mut ys[r0 * ow..],
                        Layout::rows(ohw),
                    );
                    r0 = r1;
                }
            }
            if let Some(bias) = &self.bias {
                for (co, plane) in ys.chunks_mut(ohw).enumerate() {
                    let v = bias.value[co];
                    plane.iter_mut().for_each(|y| *y += v);
                }
            }
        }
        self.cached_input = train.then(|| x.clone());
        out
    }

    /// Accumulates weight/bias gradients and returns the input gradient
    /// when `need_input_grad` is set.
    pub fn backward(&mut self, gy: &Tensor, need_input_grad: bool) -> Option<Tensor> {
        let x = self
            .cached_input
            .take()
            .expect("Conv2d::backward called without a training forward");
        let [n, _, h, w] = x.shape();
        let (oh, ow) = self.output_size(h, w);
        assert_eq!(gy.shape(), [n, self.out_channels, oh, ow], "gradient shape mismatch");
        let ohw = oh * ow;
        let ckk = self.in_channels * self.kernel * self.kernel;
        let mut gx = need_input_grad.then(|| Tensor::zeros(x.shape()));
        if self.direct {
            self.backward_direct(&x, gy, gx.as_mut());
            return gx;
        }
        let rows = self.rows_per_chunk(oh, ow);
        let mut col = vec![0.0f32; if self.is_pointwise() { 0 } else { ckk * rows * ow }];
        let mut gcol = vec![0.0f32; if self.is_pointwise() || !need_input_grad { 0 } else { ckk * rows * ow }];

        for b in 0..n {
            let xs = x.sample_slice(b);
            let gys = gy.sample_slice(b);
            if let Some(bias) = &mut self.bias {
                for (co, plane) in gys.chunks(ohw).enumerate() {
                    bias.grad[co] += plane.iter().sum::<f32>();
                }
            }
            if self.is_pointwise() {
                // dW += gy * x^T
                sgemm(
                    self.out_channels,
                    ohw,
                    ckk,
                    gys,
                    Layout::rows(ohw),
                    xs,
                    Layout::transposed(ohw),
                    1.0,
                    &mut self.weight.grad,
                    Layout::rows(ckk),
                );
                if let Some(gx) = &mut gx {
                    sgemm(
                        ckk,
                        self.out_channels,
                        ohw,
                        &self.weight.value,
                        Layout::transposed(ckk),
                        gys,
                        Layout::rows(ohw),
                        0.0,
                        gx.sample_slice_mut(b),
                        Layout::rows(ohw),
                    );
                }
                continue;
            }
            let mut r0 = 0;
            while r0 < oh {
                let r1 = (r0 + rows).min(oh);
                let len = (r1 - r0) * ow;
                im2col(xs, self.in_channels, h, w, self.kernel, self.stride, self.padding, ow, r0, r1, &mut col);
                sgemm(
                    self.out_channels,
                    len,
                    ckk,
                    &gys[r0 * ow..],
                    Layout::rows(ohw),
                    &col,
                    Layout::transposed(len),
                    1.0,
                    &mut self.weight.grad,
                    Layout::rows(ckk),
                );
                if let Some(gx) = &mut gx {
                    sgemm(
                        ckk,
                        self.out_channels,
                        len,
                        &self.weight.value,
                        Layout::transposed(ckk),
                        &gys[r0 * ow..],
                        Layout::rows(ohw),
                        0.0,
                        &mut gcol,
                        Layout::rows(len),
                    );
                    col2im(
                        &gcol,
                        self.in_channels,
                        h,
                        w,
                        self.kernel,
                        self.stride,
                        self.padding,
                        ow,
                        r0,
                        r1,
                        gx.sample_slice_mut(b),
                    );
                }
                r0 = r1;
            }
        }
        gx
    }

    fn backward_direct(&mut self, x: &Tensor, gy: &Tensor, mut gx: Option<&mut Tensor>) {
        let [n, _, h, w] = x.shape();
        let k = self.kernel;
        let (cin, cout) = (self.in_channels, self.out_channels);
        let flipped = gx
            .is_some()
            .then(|| direct::pack_transposed_flipped(&self.weight.value, cout, cin, k));
        for b in 0..n {
            let gys = gy.sample_slice(b);
            if let Some(bias) = &mut self.bias {
                for (co, plane) in gys.chunks(h * w).enumerate() {
                    bias.grad[co] += plane.iter().sum::<f32>();
                }
            }
            let xp = Padded::new(x.sample_slice(b), cin, h, w, k);
            direct::conv_weight_grad(&xp, gys, cout, k, h, w, &mut self.weight.grad);
            if let (Some(gx), Some(flipped)) = (gx.as_deref_mut(), &flipped) {
                let gp = Padded::new(gys, cout, h, w, k);
                direct::conv_forward(&gp, flipped, cin, k, h, w, gx.sample_slice_mut(b));
            }
        }
    }

    pub fn clear_cache(&mut self) {
        self.cached_input = None;
    }
}

impl Module for Conv2d {
    fn visit(&self, f: &mut dyn FnMut(&Param)) {
        f(&self.weight);
        if let Some(b) = &self.bias {
            f(b);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.weight);
        if let Some(b) = &mut self.bias {
            f(b);
        }
    }
}

/// Unfolds output rows `r0..r1` into `col`, laid out
/// `(c, ky, kx) x (out_row, out_col)`.
#[allow(clippy::too_many_arguments)]
fn im2col(
    x: &[f32],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ow: usize,
    r0: usize,
    r1: usize,
    col: &mut [f32],
) {
    let len = (r1 - r0) * ow;
    let mut row = 0;
    for ci in 0..c {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let dst = &mut col[row * len..(row + 1) * len];
                for (oy_i, oy) in (r0..r1).enumerate() {
                    let seg = &mut dst[oy_i * ow..(oy_i + 1) * ow];
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        seg.iter_mut().for_each(|v| *v = 0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    if stride == 1 {
                        // ix = ox + kx - pad
                        let lo = pad.saturating_sub(kx).min(ow);
                        let hi = (w + pad).saturating_sub(kx).min(ow).max(lo);
                        seg[..lo].iter_mut().for_each(|v| *v = 0.0);
                        seg[hi..].iter_mut().for_each(|v| *v = 0.0);
                        let s0 = lo + kx - pad;
                        seg[lo..hi].copy_from_slice(&src[s0..s0 + (hi - lo)]);
                    } else {
                        for (ox, v) in seg.iter_mut().enumerate() {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            *v = if ix < 0 || ix >= w as isize { 0.0 } else { src[ix as usize] };
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters `col` back into `gx` (accumulating).
#[allow(clippy::too_many_arguments)]
fn col2im(
    col: &[f32],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ow: usize,
    r0: usize,
    r1: usize,
    gx: &mut [f32],
) {
    let len = (r1 - r0) * ow;
    let mut row = 0;
    for ci in 0..c {
        let plane = &mut gx[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let src = &col[row * len..(row + 1) * len];
                for (oy_i, oy) in (r0..r1).enumerate() {
                    let seg = &src[oy_i * ow..(oy_i + 1) * ow];
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    if stride == 1 {
                        let lo = pad.saturating_sub(kx).min(ow);
                        let hi = (w + pad).saturating_sub(kx).min(ow).max(lo);
                        let s0 = lo + kx - pad;
                        for (d, v) in dst[s0..s0 + (hi - lo)].iter_mut().zip(&seg[lo..hi]) {
                            *d += *v;
                        }
                    } else {
                        for (ox, v) in seg.iter().enumerate() {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if ix >= 0 && ix < w as isize {
                                dst[ix as usize] += *v;
                            }
                        }
                    }
                }
                row += 1;
            }
        }
    }
}
