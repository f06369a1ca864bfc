use crate::nn::param::{join, Module, Param};
use crate::nn::tensor::Tensor;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Per-channel batch normalization with affine scale and shift.
///
/// Training mode normalizes with batch statistics and updates the running
/// estimates (unbiased variance); evaluation mode uses the running estimates.
#[derive(Clone, Debug)]
pub struct BatchNorm2d {
    pub channels: usize,
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Param,
    pub running_var: Param,
    cache: Option<(Tensor, Vec<f32>)>,
}

impl BatchNorm2d {
    pub fn new(name: &str, channels: usize) -> Self {
        Self {
            channels,
            gamma: Param::filled(join(name, "weight"), &[channels], 1.0),
            beta: Param::zeros(join(name, "bias"), &[channels]),
            running_mean: Param::buffer(join(name, "running_mean"), &[channels], 0.0),
            running_var: Param::buffer(join(name, "running_var"), &[channels], 1.0),
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &Tensor, train: bool) -> Tensor {
        let [n, c, _, _] = x.shape();
        assert_eq!(c, self.channels, "{}: channel mismatch", self.gamma.name);
        let plane = x.plane();
        let mut y = Tensor::zeros(x.shape());
        if !train {
            for ch in 0..c {
                let inv = 1.0 / (self.running_var.value[ch] as f64 + BN_EPS).sqrt();
                let scale = (self.gamma.value[ch] as f64 * inv) as f32;
                let shift = (self.beta.value[ch] as f64 - self.running_mean.value[ch] as f64 * self.gamma.value[ch] as f64 * inv) as f32;
                for b in 0..n {
                    let off = (b * c + ch) * plane;
                    for (o, v) in y.data_mut()[off..off + plane].iter_mut().zip(&x.data()[off..off + plane]) {
                        *o = *v * scale + shift;
                    }
                }
            }
            self.cache = None;
            return y;
        }

        let m = (n * plane) as f64;
        let mut xhat = Tensor::zeros(x.shape());
        let mut inv_std = vec![0.0f32; c];
        for ch in 0..c {
            let (mut s, mut s2) = (0.0f64, 0.0f64);
            for b in 0..n {
                let off = (b * c + ch) * plane;
                for v in &x.data()[off..off + plane] {
                    s += *v as f64;
                }
            }
            let mean = s / m;
            for b in 0..n {
                let off = (b * c + ch) * plane;
                for v in &x.data()[off..off + plane] {
                    let d = *v as f64 - mean;
                    s2 += d * d;
                }
            }
            let var = s2 / m;
            let inv = 1.0 / (var + BN_EPS).sqrt();
            inv_std[ch] = inv as f32;
            let (g, bt) = (self.gamma.value[ch], self.beta.value[ch]);
            for b in 0..n {
                let off = (b * c + ch) * plane;
                let xs = &x.data()[off..off + plane];
                let hs = &mut xhat.data_mut()[off..off + plane];
                for (h, v) in hs.iter_mut().zip(xs) {
                    *h = ((*v as f64 - mean) * inv) as f32;
                }
                for (o, h) in y.data_mut()[off..off + plane].iter_mut().zip(&xhat.data()[off..off + plane]) {
                    *o = g * *h + bt;
                }
            }
            let unbiased = if m > 1.0 { var * m / (m - 1.0) } else { var };
            let rm = &mut self.running_mean.value[ch];
            *rm = ((1.0 - BN_MOMENTUM) * *rm as f64 + BN_MOMENTUM * mean) as f32;
            let rv = &mut self.running_var.value[ch];
            *rv = ((1.0 - BN_MOMENTUM) * *rv as f64 + BN_MOMENTUM * unbiased) as f32;
        }
        self.cache = Some((xhat, inv_std));
        y
    }

    pub fn backward(&mut self, gy: &Tensor) -> Tensor {
        let (xhat, inv_std) = self
            .cache
            .take()
            .expect("BatchNorm2d::backward called without a training forward");
        let [n, c, _, _] = gy.shape();
        assert_eq!(gy.shape(), xhat.shape());
        let plane = gy.plane();
        let m = (n * plane) as f64;
        let mut gx = Tensor::zeros(gy.shape());
        for ch in 0..c {
            let (mut sg, mut sgx) = (0.0f64, 0.0f64);
            for b in 0..n {
                let off = (b * c + ch) * plane;
                for (g, h) in gy.data()[off..off + plane].iter().zip(&xhat.data()[off..off + plane]) {
                    sg += *g as f64;
                    sgx += *g as f64 * *h as f64;
                }
            }
            self.gamma.grad[ch] += sgx as f32;
            self.beta.grad[ch] += sg as f32;
            let k = self.gamma.value[ch] as f64 * inv_std[ch] as f64;
            let (mg, mgx) = (sg / m, sgx / m);
            for b in 0..n {
                let off = (b * c + ch) * plane;
                let gs = &gy.data()[off..off + plane];
                let hs = &xhat.data()[off..off + plane];
                for ((o, g), h) in gx.data_mut()[off..off + plane].iter_mut().zip(gs).zip(hs) {
                    *o = (k * (*g as f64 - mg - *h as f64 * mgx)) as f32;
                }
            }
        }
        gx
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }
}

impl Module for BatchNorm2d {
    fn visit(&self, f: &mut dyn FnMut(&Param)) {
        f(&self.gamma);
        f(&self.beta);
        f(&self.running_mean);
        f(&self.running_var);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.gamma);
        f(&mut self.beta);
        f(&mut self.running_mean);
        f(&mut self.running_var);
    }
}
