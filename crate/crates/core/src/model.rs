//! Range-image segmentation network: convolutional stem, four residual
//! stages, a parameter-free decoder that upsamples and concatenates every
//! stage, and a convolutional classification head. Optional auxiliary heads
//! attach 1x1 classifiers to later stages during training.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::param::join;
use crate::nn::{bilinear_upsample, bilinear_upsample_backward, ActLayer, Activation, BatchNorm2d, Conv2d, Module, Param, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuxMode {
    /// No auxiliary heads.
    None,
    /// Heads classify each stage at its native resolution.
    PlanA,
    /// Heads classify each stage after upsampling to the input resolution.
    PlanB,
}

impl std::fmt::Display for AuxMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            AuxMode::None => "none",
            AuxMode::PlanA => "plan_a",
            AuxMode::PlanB => "plan_b",
        })
    }
}

impl std::str::FromStr for AuxMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(AuxMode::None),
            "plan_a" => Ok(AuxMode::PlanA),
            "plan_b" => Ok(AuxMode::PlanB),
            _ => Err(Error::Config(format!("unknown aux_mode '{s}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamScope {
    /// Everything optimized during training, auxiliary heads included.
    Train,
    /// What remains once the auxiliary heads are dropped.
    Inference,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub in_channels: usize,
    pub num_classes: usize,
    pub activation: Activation,
    /// Kernel of the stem and head conv blocks, 1 or 3.
    pub input_kernel: usize,
    /// Widths of the three stem conv blocks.
    pub stem_channels: Vec<usize>,
    /// Width of each of the four residual stages.
    pub stage_channels: Vec<usize>,
    /// Residual blocks per stage.
    pub stage_blocks: Vec<usize>,
    /// Cumulative output stride of each stage relative to the input.
    pub stage_strides: Vec<usize>,
    /// Widths of the two head conv blocks.
    pub head_channels: Vec<usize>,
    pub aux_mode: AuxMode,
    /// 1-based stage indices carrying auxiliary heads.
    pub aux_stages: Vec<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            in_channels: 5,
            num_classes: 20,
            activation: Activation::Hardswish,
            input_kernel: 3,
            stem_channels: vec![64, 128, 128],
            stage_channels: vec![128, 128, 128, 128],
            stage_blocks: vec![3, 4, 6, 3],
            stage_strides: vec![1, 2, 4, 8],
            head_channels: vec![256, 128],
            aux_mode: AuxMode::PlanB,
            aux_stages: vec![2, 3, 4],
        }
    }
}

impl ModelConfig {
    /// Narrow network for synthetic data and tests.
    pub fn toy(num_classes: usize) -> Self {
        Self {
            num_classes,
            stem_channels: vec![8, 8, 8],
            stage_channels: vec![8, 16, 32, 64],
            stage_blocks: vec![1, 1, 1, 1],
            head_channels: vec![8, 8],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.in_channels == 0 {
            return bad("in_channels must be >= 1".into());
        }
        if self.num_classes < 2 {
            return bad(format!("num_classes must be >= 2, got {}", self.num_classes));
        }
        if !matches!(self.input_kernel, 1 | 3) {
            return bad(format!("input_kernel must be 1 or 3, got {}", self.input_kernel));
        }
        if self.stem_channels.len() != 3 || self.stem_channels.contains(&0) {
            return bad("stem_channels must list 3 positive widths".into());
        }
        for (name, v) in [
            ("stage_channels", &self.stage_channels),
            ("stage_blocks", &self.stage_blocks),
            ("stage_strides", &self.stage_strides),
        ] {
            if v.len() != 4 || v.contains(&0) {
                return bad(format!("{name} must list 4 positive values"));
            }
        }
        if self.head_channels.len() != 2 || self.head_channels.contains(&0) {
            return bad("head_channels must list 2 positive widths".into());
        }
        let mut prev = 1;
        for &s in &self.stage_strides {
            if s < prev || s % prev != 0 || !matches!(s / prev, 1 | 2) {
                return bad(format!(
                    "stage_strides {:?} must be nondecreasing, each step x1 or x2",
                    self.stage_strides
                ));
            }
            prev = s;
        }
        let mut seen = [false; 5];
        for &s in &self.aux_stages {
            if !(2..=4).contains(&s) {
                return bad(format!("aux_stages entries must be in {{2, 3, 4}}, got {s}"));
            }
            if seen[s] {
                return bad(format!("aux stage {s} listed twice"));
            }
            seen[s] = true;
        }
        Ok(())
    }

    pub fn max_stride(&self) -> usize {
        self.stage_strides.iter().copied().max().unwrap_or(1)
    }

    fn decoder_channels(&self) -> usize {
        self.stem_channels[2] + self.stage_channels.iter().sum::<usize>()
    }
}

/// Logits of one auxiliary head.
#[derive(Clone, Debug)]
pub struct AuxOutput {
    /// 1-based encoder stage the head is attached to.
    pub stage: usize,
    /// Downsampling factor of `logits` relative to the input.
    pub stride: usize,
    pub logits: Tensor,
}

#[derive(Clone, Debug)]
pub struct SegmentationOutput {
    pub main: Tensor,
    pub aux: Vec<AuxOutput>,
}

/// Conv (no bias), batch norm, activation.
#[derive(Clone, Debug)]
pub struct ConvBlock {
    pub conv: Conv2d,
    pub bn: BatchNorm2d,
    pub act: ActLayer,
}

impl ConvBlock {
    fn new(name: &str, cin: usize, cout: usize, k: usize, stride: usize, act: Activation, rng: &mut ChaCha8Rng) -> Self {
        Self {
            conv: Conv2d::new(&join(name, "conv"), cin, cout, k, stride, false, rng),
            bn: BatchNorm2d::new(&join(name, "bn"), cout),
            act: ActLayer::new(act),
        }
    }

    fn forward(&mut self, x: &Tensor, train: bool) -> Tensor {
        let y = self.conv.forward(x, train);
        let y = self.bn.forward(&y, train);
        self.act.forward(y, train)
    }

    fn backward(&mut self, gy: Tensor, need_input_grad: bool) -> Option<Tensor> {
        let g = self.act.backward(gy);
        let g = self.bn.backward(&g);
        self.conv.backward(&g, need_input_grad)
    }
}

impl Module for ConvBlock {
    fn visit(&self, f: &mut dyn FnMut(&Param)) {
        self.conv.visit(f);
        self.bn.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.conv.visit_mut(f);
        self.bn.visit_mut(f);
    }
}

/// Two 3x3 conv/norm layers with an identity or 1x1 projection shortcut.
#[derive(Clone, Debug)]
pub struct BasicBlock {
    conv1: Conv2d,
    bn1: BatchNorm2d,
    act1: ActLayer,
    conv2: Conv2d,
    bn2: BatchNorm2d,
    shortcut: Option<(Conv2d, BatchNorm2d)>,
    act_out: ActLayer,
}

impl BasicBlock {
    fn new(name: &str, cin: usize, cout: usize, stride: usize, act: Activation, rng: &mut ChaCha8Rng) -> Self {
        let conv1 = Conv2d::new(&join(name, "conv1"), cin, cout, 3, stride, false, rng);
        let bn1 = BatchNorm2d::new(&join(name, "bn1"), cout);
        let conv2 = Conv2d::new(&join(name, "conv2"), cout, cout, 3, 1, false, rng);
        let bn2 = BatchNorm2d::new(&join(name, "bn2"), cout);
        let shortcut = (stride != 1 || cin != cout).then(|| {
            (
                Conv2d::new(&join(name, "downsample.conv"), cin, cout, 1, stride, false, rng),
                BatchNorm2d::new(&join(name, "downsample.bn"), cout),
            )
        });
        Self {
            conv1,
            bn1,
            act1: ActLayer::new(act),
            conv2,
            bn2,
            shortcut,
            act_out: ActLayer::new(act),
        }
    }

    fn forward(&mut self, x: &Tensor, train: bool) -> Tensor {
        let y = self.conv1.forward(x, train);
        let y = self.bn1.forward(&y, train);
        let y = self.act1.forward(y, train);
        let y = self.conv2.forward(&y, train);
        let mut y = self.bn2.forward(&y, train);
        match &mut self.shortcut {
            Some((conv, bn)) => {
                let s = conv.forward(x, train);
                y.add_assign(&bn.forward(&s, train));
            }
            None => y.add_assign(x),
        }
        self.act_out.forward(y, train)
    }

    fn backward(&mut self, gy: Tensor) -> Tensor {
        let g = self.act_out.backward(gy);
        let mut gx = match &mut self.shortcut {
            Some((conv, bn)) => {
                let gs = bn.backward(&g);
                conv.backward(&gs, true).unwrap()
            }
            None => g.clone(),
        };
        let gm = self.bn2.backward(&g);
        let gm = self.conv2.backward(&gm, true).unwrap();
        let gm = self.act1.backward(gm);
        let gm = self.bn1.backward(&gm);
        gx.add_assign(&self.conv1.backward(&gm, true).unwrap());
        gx
    }
}

impl Module for BasicBlock {
    fn visit(&self, f: &mut dyn FnMut(&Param)) {
        self.conv1.visit(f);
        self.bn1.visit(f);
        self.conv2.visit(f);
        self.bn2.visit(f);
        if let Some((c, b)) = &self.shortcut {
            c.visit(f);
            b.visit(f);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.conv1.visit_mut(f);
        self.bn1.visit_mut(f);
        self.conv2.visit_mut(f);
        self.bn2.visit_mut(f);
        if let Some((c, b)) = &mut self.shortcut {
            c.visit_mut(f);
            b.visit_mut(f);
        }
    }
}

#[derive(Clone, Debug)]
struct AuxHead {
    stage: usize,
    conv: Conv2d,
}

/// Shapes remembered between a training forward and its backward.
#[derive(Clone, Debug)]
struct Trace {
    stage_hw: Vec<(usize, usize)>,
}

/// Per-output gradients handed to [`CENet::backward`]; `aux` follows the
/// order of [`SegmentationOutput::aux`].
#[derive(Clone, Debug)]
pub struct OutputGrads {
    pub main: Tensor,
    pub aux: Vec<Tensor>,
}

#[derive(Clone, Debug)]
pub struct CENet {
    cfg: ModelConfig,
    stem: Vec<ConvBlock>,
    stages: Vec<Vec<BasicBlock>>,
    head: Vec<ConvBlock>,
    classifier: Conv2d,
    aux_heads: Vec<AuxHead>,
    trace: Option<Trace>,
}

impl CENet {
    /// Builds the network with weights drawn from `seed`. Auxiliary heads
    /// draw from a separate stream so the rest of the network is identical
    /// for every `aux_mode`.
    pub fn new(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let act = cfg.activation;
        let k = cfg.input_kernel;

        let mut stem = Vec::new();
        let mut cin = cfg.in_channels;
        for (i, &c) in cfg.stem_channels.iter().enumerate() {
            stem.push(ConvBlock::new(&format!("stem.{i}"), cin, c, k, 1, act, &mut rng));
            cin = c;
        }

        let mut stages = Vec::new();
        let mut prev_stride = 1;
        for s in 0..4 {
            let cout = cfg.stage_channels[s];
            let step = cfg.stage_strides[s] / prev_stride;
            prev_stride = cfg.stage_strides[s];
            let blocks = (0..cfg.stage_blocks[s])
                .map(|b| {
                    let name = format!("stage{}.{b}", s + 1);
                    let block = BasicBlock::new(&name, cin, cout, if b == 0 { step } else { 1 }, act, &mut rng);
                    cin = cout;
                    block
                })
                .collect();
            stages.push(blocks);
        }

        let mut head = Vec::new();
        let mut cin = cfg.decoder_channels();
        for (i, &c) in cfg.head_channels.iter().enumerate() {
            head.push(ConvBlock::new(&format!("head.{i}"), cin, c, k, 1, act, &mut rng));
            cin = c;
        }
        let classifier = Conv2d::new("classifier", cin, cfg.num_classes, 1, 1, true, &mut rng);

        let mut aux_rng = ChaCha8Rng::seed_from_u64(seed);
        aux_rng.set_stream(1);
        let mut aux_heads = Vec::new();
        if cfg.aux_mode != AuxMode::None {
            let mut order = cfg.aux_stages.clone();
            order.sort_unstable();
            for s in order {
                aux_heads.push(AuxHead {
                    stage: s,
                    conv: Conv2d::new(
                        &format!("aux{s}"),
                        cfg.stage_channels[s - 1],
                        cfg.num_classes,
                        1,
                        1,
                        true,
                        &mut aux_rng,
                    ),
                });
            }
        }

        Ok(Self {
            cfg: cfg.clone(),
            stem,
            stages,
            head,
            classifier,
            aux_heads,
            trace: None,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn count_parameters(&self, scope: ParamScope) -> usize {
        let mut n = 0;
        self.visit_scoped(scope, &mut |p| {
            if p.trainable {
                n += p.numel()
            }
        });
        n
    }

    fn visit_scoped(&self, scope: ParamScope, f: &mut dyn FnMut(&Param)) {
        self.stem.iter().for_each(|b| b.visit(f));
        self.stages.iter().flatten().for_each(|b| b.visit(f));
        self.head.iter().for_each(|b| b.visit(f));
        self.classifier.visit(f);
        if scope == ParamScope::Train {
            self.aux_heads.iter().for_each(|a| a.conv.visit(f));
        }
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<SegmentationOutput> {
        let train = mode == Mode::Train;
        let [_, c, h, w] = x.shape();
        if c != self.cfg.in_channels {
            return Err(Error::Shape(format!(
                "model expects {} input channels, got {c}",
                self.cfg.in_channels
            )));
        }
        let ms = self.cfg.max_stride();
        if h % ms != 0 || w % ms != 0 || h == 0 || w == 0 {
            return Err(Error::Shape(format!(
                "input {h}x{w} is not divisible by the maximum stride {ms}"
            )));
        }

        let mut feat = x.clone();
        for block in &mut self.stem {
            feat = block.forward(&feat, train);
        }
        let stem_out = feat.clone();
        let mut stage_out = Vec::with_capacity(4);
        for stage in &mut self.stages {
            for block in stage.iter_mut() {
                feat = block.forward(&feat, train);
            }
            stage_out.push(feat.clone());
        }
        let stage_hw: Vec<(usize, usize)> = stage_out.iter().map(|t| (t.height(), t.width())).collect();
        let upsampled: Vec<Tensor> = stage_out.iter().map(|t| bilinear_upsample(t, h, w)).collect();

        let mut parts: Vec<&Tensor> = vec![&stem_out];
        parts.extend(upsampled.iter());
        let mut y = Tensor::concat_channels(&parts);
        for block in &mut self.head {
            y = block.forward(&y, train);
        }
        let main = self.classifier.forward(&y, train);

        let mut aux = Vec::new();
        if train {
            for head in &mut self.aux_heads {
                let i = head.stage - 1;
                let (src, stride) = match self.cfg.aux_mode {
                    AuxMode::PlanA => (&stage_out[i], self.cfg.stage_strides[i]),
                    _ => (&upsampled[i], 1),
                };
                aux.push(AuxOutput {
                    stage: head.stage,
                    stride,
                    logits: head.conv.forward(src, true),
                });
            }
            self.trace = Some(Trace {
                stage_hw,
            });
        } else {
            self.trace = None;
        }
        Ok(SegmentationOutput { main, aux })
    }

    /// Accumulates parameter gradients for the last training forward.
    pub fn backward(&mut self, grads: &OutputGrads) -> Result<()> {
        let trace = self
            .trace
            .take()
            .ok_or_else(|| Error::Shape("backward called without a training forward".into()))?;
        if grads.aux.len() != self.aux_heads.len() {
            return Err(Error::Consistency(format!(
                "{} auxiliary gradients for {} auxiliary heads",
                grads.aux.len(),
                self.aux_heads.len()
            )));
        }
        let mut g = self.classifier.backward(&grads.main, true).unwrap();
        for block in self.head.iter_mut().rev() {
            g = block.backward(g, true).unwrap();
        }
        let mut sizes = vec![self.cfg.stem_channels[2]];
        sizes.extend(self.cfg.stage_channels.iter().copied());
        let mut parts = g.split_channels(&sizes).into_iter();
        let g_stem = parts.next().unwrap();
        let mut g_up: Vec<Tensor> = parts.collect();

        let mut g_native: Vec<Option<Tensor>> = vec![None; 4];
        for (head, ga) in self.aux_heads.iter_mut().zip(&grads.aux) {
            let i = head.stage - 1;
            let gi = head.conv.backward(ga, true).unwrap();
            match self.cfg.aux_mode {
                AuxMode::PlanA => g_native[i] = Some(gi),
                _ => g_up[i].add_assign(&gi),
            }
        }

        let mut carry: Option<Tensor> = None;
        for s in (0..4).rev() {
            let (sh, sw) = trace.stage_hw[s];
            let mut gs = bilinear_upsample_backward(&g_up[s], sh, sw);
            if let Some(extra) = &g_native[s] {
                gs.add_assign(extra);
            }
            if let Some(c) = carry.take() {
                gs.add_assign(&c);
            }
            for block in self.stages[s].iter_mut().rev() {
                gs = block.backward(gs);
            }
            carry = Some(gs);
        }
        let mut g = carry.unwrap();
        g.add_assign(&g_stem);
        let mut g = Some(g);
        for (i, block) in self.stem.iter_mut().enumerate().rev() {
            g = block.backward(g.take().unwrap(), i > 0);
        }
        Ok(())
    }
}

impl Module for CENet {
    fn visit(&self, f: &mut dyn FnMut(&Param)) {
        self.visit_scoped(ParamScope::Train, f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.stem.iter_mut().for_each(|b| b.visit_mut(f));
        self.stages.iter_mut().flatten().for_each(|b| b.visit_mut(f));
        self.head.iter_mut().for_each(|b| b.visit_mut(f));
        self.classifier.visit_mut(f);
        self.aux_heads.iter_mut().for_each(|a| a.conv.visit_mut(f));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_parameter_counts() {
        let mut cfg = ModelConfig {
            aux_mode: AuxMode::None,
            ..ModelConfig::default()
        };
        let net = CENet::new(&cfg, 0).unwrap();
        assert_eq!(net.count_parameters(ParamScope::Train), 6_774_228);
        cfg.aux_mode = AuxMode::PlanB;
        let net = CENet::new(&cfg, 0).unwrap();
        assert_eq!(net.count_parameters(ParamScope::Inference), 6_774_228);
        assert_eq!(net.count_parameters(ParamScope::Train), 6_781_968);
    }
}
