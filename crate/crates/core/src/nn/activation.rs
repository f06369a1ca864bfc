use serde::{Deserialize, Serialize};

use crate::nn::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Silu,
    Hardswish,
}

impl Activation {
    pub fn apply(self, x: f32) -> f32 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Silu => x / (1.0 + (-x).exp()),
            Activation::Hardswish => x * (x + 3.0).clamp(0.0, 6.0) / 6.0,
        }
    }

    /// Derivative at `x`. At the kinks the left derivative is used (the
    /// derivative at 0 for relu is 0).
    pub fn derivative(self, x: f32) -> f32 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Silu => {
                let s = 1.0 / (1.0 + (-x).exp());
                s * (1.0 + x * (1.0 - s))
            }
            Activation::Hardswish => {
                if x <= -3.0 {
                    0.0
                } else if x >= 3.0 {
                    1.0
                } else {
                    (2.0 * x + 3.0) / 6.0
                }
            }
        }
    }
}

impl std::fmt::Display for Activation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Activation::Relu => "relu",
            Activation::Silu => "silu",
            Activation::Hardswish => "hardswish",
        })
    }
}

impl std::str::FromStr for Activation {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "relu" => Ok(Activation::Relu),
            "silu" => Ok(Activation::Silu),
            "hardswish" => Ok(Activation::Hardswish),
            _ => Err(crate::Error::Config(format!("unknown activation '{s}'"))),
        }
    }
}

/// Elementwise activation layer caching its input for backward.
#[derive(Clone, Debug)]
pub struct ActLayer {
    pub kind: Activation,
    cached_input: Option<Tensor>,
}

impl ActLayer {
    pub fn new(kind: Activation) -> Self {
        Self {
            kind,
            cached_input: None,
        }
    }

    pub fn forward(&mut self, x: Tensor, train: bool) -> Tensor {
        let mut y = x.clone();
        let k = self.kind;
        y.data_mut().iter_mut().for_each(|v| *v = k.apply(*v));
        self.cached_input = train.then_some(x);
        y
    }

    pub fn backward(&mut self, mut gy: Tensor) -> Tensor {
        let x = self
            .cached_input
            .take()
            .expect("ActLayer::backward called without a training forward");
        let k = self.kind;
        for (g, v) in gy.data_mut().iter_mut().zip(x.data()) {
            *g *= k.derivative(*v);
        }
        gy
    }

    pub fn clear_cache(&mut self) {
        self.cached_input = None;
    }
}
