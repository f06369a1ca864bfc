use rand::Rng;
use rand_distr::{Distribution, Normal};

/// A named tensor owned by a layer. Trainable parameters carry a gradient;
/// buffers (normalization running statistics) do not.
#[derive(Clone, Debug)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<f32>,
    pub grad: Vec<f32>,
    pub trainable: bool,
}

impl Param {
    pub fn zeros(name: impl Into<String>, shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            name: name.into(),
            shape: shape.to_vec(),
            value: vec![0.0; n],
            grad: vec![0.0; n],
            trainable: true,
        }
    }

    pub fn filled(name: impl Into<String>, shape: &[usize], v: f32) -> Self {
        let mut p = Self::zeros(name, shape);
        p.value.iter_mut().for_each(|x| *x = v);
        p
    }

    pub fn buffer(name: impl Into<String>, shape: &[usize], v: f32) -> Self {
        let mut p = Self::filled(name, shape, v);
        p.trainable = false;
        p.grad = Vec::new();
        p
    }

    /// Normal init with zero mean.
    pub fn normal<R: Rng>(name: impl Into<String>, shape: &[usize], std: f64, rng: &mut R) -> Self {
        let mut p = Self::zeros(name, shape);
        let dist = Normal::new(0.0, std).expect("finite std");
        for v in &mut p.value {
            *v = dist.sample(rng) as f32;
        }
        p
    }

    pub fn numel(&self) -> usize {
        self.value.len()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }
}

/// Uniform access to the parameters and buffers of a layer tree, in a
/// fixed order.
pub trait Module {
    fn visit(&self, f: &mut dyn FnMut(&Param));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param));

    fn num_trainable(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |p| {
            if p.trainable {
                n += p.numel()
            }
        });
        n
    }

    fn zero_grad(&mut self) {
        self.visit_mut(&mut |p| p.zero_grad());
    }
}

/// Prefixes a child name: `join("stem.0", "conv")` is `"stem.0.conv"`.
pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}
