use ndarray::{Array3, Array4};

/// Dense NCHW `f32` feature map.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: [usize; 4],
    data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(shape: [usize; 4]) -> Self {
        Self {
            shape,
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: [usize; 4], data: Vec<f32>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len(), "shape/data mismatch");
        Self { shape, data }
    }

    /// Stacks per-sample `(C, H, W)` arrays into a batch.
    pub fn stack(samples: &[Array3<f32>]) -> Self {
        assert!(!samples.is_empty(), "cannot stack an empty batch");
        let (c, h, w) = samples[0].dim();
        let mut data = Vec::with_capacity(samples.len() * c * h * w);
        for s in samples {
            assert_eq!(s.dim(), (c, h, w), "batch members differ in shape");
            data.extend(s.iter().copied());
        }
        Self::from_vec([samples.len(), c, h, w], data)
    }

    pub fn from_array(a: Array4<f32>) -> Self {
        let shape = [a.dim().0, a.dim().1, a.dim().2, a.dim().3];
        let data = a.iter().copied().collect();
        Self { shape, data }
    }

    pub fn to_array(&self) -> Array4<f32> {
        let [n, c, h, w] = self.shape;
        Array4::from_shape_vec((n, c, h, w), self.data.clone()).unwrap()
    }

    /// Copy of sample `n` as `(C, H, W)`.
    pub fn sample(&self, n: usize) -> Array3<f32> {
        let [_, c, h, w] = self.shape;
        let len = c * h * w;
        Array3::from_shape_vec((c, h, w), self.data[n * len..(n + 1) * len].to_vec()).unwrap()
    }

    pub fn set_sample(&mut self, n: usize, src: &Array3<f32>) {
        let [_, c, h, w] = self.shape;
        assert_eq!(src.dim(), (c, h, w));
        let len = c * h * w;
        for (dst, v) in self.data[n * len..(n + 1) * len].iter_mut().zip(src.iter()) {
            *dst = *v;
        }
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    pub fn channels(&self) -> usize {
        self.shape[1]
    }

    pub fn height(&self) -> usize {
        self.shape[2]
    }

    pub fn width(&self) -> usize {
        self.shape[3]
    }

    pub fn plane(&self) -> usize {
        self.shape[2] * self.shape[3]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    /// Slice of sample `n`, all channels.
    pub fn sample_slice(&self, n: usize) -> &[f32] {
        let len = self.shape[1] * self.plane();
        &self.data[n * len..(n + 1) * len]
    }

    pub fn sample_slice_mut(&mut self, n: usize) -> &mut [f32] {
        let len = self.shape[1] * self.plane();
        &mut self.data[n * len..(n + 1) * len]
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        assert_eq!(self.shape, other.shape, "add_assign shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
    }

    pub fn scale(&mut self, s: f32) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    /// Concatenates along channels. All inputs share N, H, W.
    pub fn concat_channels(parts: &[&Tensor]) -> Tensor {
        let [n, _, h, w] = parts[0].shape;
        let c_total: usize = parts.iter().map(|p| p.channels()).sum();
        let mut out = Vec::with_capacity(n * c_total * h * w);
        for b in 0..n {
            for p in parts {
                assert_eq!(
                    (p.batch(), p.height(), p.width()),
                    (n, h, w),
                    "concat inputs differ in batch or spatial size"
                );
                out.extend_from_slice(p.sample_slice(b));
            }
        }
        Tensor::from_vec([n, c_total, h, w], out)
    }

    /// Inverse of [`Tensor::concat_channels`].
    pub fn split_channels(&self, sizes: &[usize]) -> Vec<Tensor> {
        let [n, c, h, w] = self.shape;
        assert_eq!(sizes.iter().sum::<usize>(), c, "split sizes do not cover channels");
        let plane = h * w;
        let mut outs: Vec<Vec<f32>> = sizes.iter().map(|s| Vec::with_capacity(n * s * plane)).collect();
        for b in 0..n {
            let src = self.sample_slice(b);
            let mut off = 0;
            for (k, &s) in sizes.iter().enumerate() {
                outs[k].extend_from_slice(&src[off * plane..(off + s) * plane]);
                off += s;
            }
        }
        outs.into_iter()
            .zip(sizes)
            .map(|(d, &s)| Tensor::from_vec([n, s, h, w], d))
            .collect()
    }
}
