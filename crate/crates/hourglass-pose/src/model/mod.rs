//! The stacked hourglass network: stem, recursive hourglass modules, stacked
//! stages with intermediate supervision, and the shape algebra for the
//! learnable upsampler.
//!
//! A network with S stacks emits S heatmap batches per forward pass; during
//! training every one of them is supervised against the same target, and each
//! non-final stage feeds its features and its heatmap back into the next
//! stage's input through 1x1 remaps.

pub(crate) mod params;

pub use params::ParameterStore;

use crate::nn::layers::{BatchNorm2d, Conv2d, ConvTranspose2d, MaxPool2d, NearestUpsample, Relu};
use crate::nn::{Param, ParamVisit};
use crate::{Error, Result};
use ndarray::{Array4, ArrayD};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// How each hourglass level restores resolution on the way up.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpsampleMode {
    /// Parameter-free 2x replication (the original design).
    Nearest,
    /// Learnable transposed convolution, stride 2 kernel 4 padding 1 (the
    /// improved design; doubles resolution exactly).
    Deconv,
}

/// Architecture hyperparameters. `variant_name` follows the sh[stacks][order]
/// naming: sh21 is 2 stacks of order-1 hourglasses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub num_stacks: usize,
    pub hourglass_order: usize,
    pub channels: usize,
    pub num_joints: usize,
    pub input_side: usize,
    pub heatmap_side: usize,
    pub upsample: UpsampleMode,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            num_stacks: 8,
            hourglass_order: 1,
            channels: 256,
            num_joints: 7,
            input_side: 256,
            heatmap_side: 64,
            upsample: UpsampleMode::Deconv,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_stacks < 1 || self.hourglass_order < 1 || self.num_joints < 1 {
            return Err(Error::contract("stacks, order, joints must all be >= 1"));
        }
        if self.heatmap_side * 4 != self.input_side {
            return Err(Error::contract(format!(
                "heatmap_side {} x 4 must equal input_side {} (stem downsamples by 4)",
                self.heatmap_side, self.input_side
            )));
        }
        let levels = 1usize << self.hourglass_order;
        if self.heatmap_side % levels != 0 || self.heatmap_side / levels < 1 {
            return Err(Error::contract(format!(
                "heatmap_side {} must be divisible by 2^order = {}",
                self.heatmap_side, levels
            )));
        }
        if self.channels % 4 != 0 {
            return Err(Error::contract(format!(
                "channels {} must be divisible by 4 (stem schedule and bottlenecks)",
                self.channels
            )));
        }
        Ok(())
    }

    pub fn variant_name(&self) -> String {
        format!("sh{}{}", self.num_stacks, self.hourglass_order)
    }
}

/// Geometry of a transposed convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DeconvSpec {
    pub stride: usize,
    pub kernel_size: usize,
    pub padding: usize,
}

impl DeconvSpec {
    pub fn new(stride: usize, kernel_size: usize, padding: usize) -> Result<Self> {
        if stride < 1 || kernel_size < 1 {
            return Err(Error::contract("stride and kernel_size must be >= 1"));
        }
        Ok(DeconvSpec { stride, kernel_size, padding })
    }
}

/// Output side of a transposed convolution:
/// stride*(input - 1) + kernel - 2*padding. Errors when nonpositive.
pub fn deconv_output_size(input_size: usize, spec: &DeconvSpec) -> Result<usize> {
    if input_size < 1 {
        return Err(Error::contract("input_size must be >= 1"));
    }
    let out = spec.stride as isize * (input_size as isize - 1) + spec.kernel_size as isize
        - 2 * spec.padding as isize;
    if out < 1 {
        return Err(Error::contract(format!(
            "deconv output size {out} is nonpositive"
        )));
    }
    Ok(out as usize)
}

/// Bottleneck residual unit. Main path 1x1 -> 3x3 -> 1x1 narrows to half the
/// output width; skip is identity when channel counts match, 1x1 otherwise;
/// activation applies after the addition.
#[derive(Debug, Clone)]
pub struct ResidualBlock {
    conv1: Conv2d,
    bn1: BatchNorm2d,
    relu1: Relu,
    conv2: Conv2d,
    bn2: BatchNorm2d,
    relu2: Relu,
    conv3: Conv2d,
    bn3: BatchNorm2d,
    skip: Option<Conv2d>,
    relu_out: Relu,
}

impl ResidualBlock {
    pub fn new(name: &str, in_ch: usize, out_ch: usize, rng: &mut impl Rng) -> Result<Self> {
        if out_ch % 2 != 0 {
            return Err(Error::contract(format!(
                "residual output channels {out_ch} must be even"
            )));
        }
        let mid = out_ch / 2;
        Ok(ResidualBlock {
            conv1: Conv2d::new(&format!("{name}.conv1"), in_ch, mid, 1, 1, 0, false, rng),
            bn1: BatchNorm2d::new(&format!("{name}.bn1"), mid),
            relu1: Relu::new(),
            conv2: Conv2d::new(&format!("{name}.conv2"), mid, mid, 3, 1, 1, false, rng),
            bn2: BatchNorm2d::new(&format!("{name}.bn2"), mid),
            relu2: Relu::new(),
            conv3: Conv2d::new(&format!("{name}.conv3"), mid, out_ch, 1, 1, 0, false, rng),
            bn3: BatchNorm2d::new(&format!("{name}.bn3"), out_ch),
            skip: (in_ch != out_ch)
                .then(|| Conv2d::new(&format!("{name}.skip"), in_ch, out_ch, 1, 1, 0, false, rng)),
            relu_out: Relu::new(),
        })
    }

    pub fn forward_train(&mut self, x: &Array4<f64>) -> Result<Array4<f64>> {
        let mut m = self.conv1.forward_train(x)?;
        m = self.bn1.forward_train(&m)?;
        m = self.relu1.forward_train(&m);
        m = self.conv2.forward_train(&m)?;
        m = self.bn2.forward_train(&m)?;
        m = self.relu2.forward_train(&m);
        m = self.conv3.forward_train(&m)?;
        m = self.bn3.forward_train(&m)?;
        let s = match self.skip.as_mut() {
            Some(conv) => conv.forward_train(x)?,
            None => x.clone(),
        };
        Ok(self.relu_out.forward_train(&(m + s)))
    }

    pub fn forward_eval(&self, x: &Array4<f64>) -> Result<Array4<f64>> {
        let mut m = self.conv1.forward_eval(x)?;
        m = self.bn1.forward_eval(&m)?;
        m = self.relu1.forward_eval(&m);
        m = self.conv2.forward_eval(&m)?;
        m = self.bn2.forward_eval(&m)?;
        m = self.relu2.forward_eval(&m);
        m = self.conv3.forward_eval(&m)?;
        m = self.bn3.forward_eval(&m)?;
        let s = match self.skip.as_ref() {
            Some(conv) => conv.forward_eval(x)?,
            None => x.clone(),
        };
        Ok(self.relu_out.forward_eval(&(m + s)))
    }

    pub fn backward(&mut self, gy: &Array4<f64>) -> Result<Array4<f64>> {
        let g = self.relu_out.backward(gy);
        let mut gm = self.bn3.backward(&g)?;
        gm = self.conv3.backward(&gm)?;
        gm = self.relu2.backward(&gm);
        gm = self.bn2.backward(&gm)?;
        gm = self.conv2.backward(&gm)?;
        gm = self.relu1.backward(&gm);
        gm = self.bn1.backward(&gm)?;
        let gx_main = self.conv1.backward(&gm)?;
        let gx_skip = match self.skip.as_mut() {
            Some(conv) => conv.backward(&g)?,
            None => g,
        };
        Ok(gx_main + gx_skip)
    }
}

impl ParamVisit for ResidualBlock {
    fn for_each_param(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.conv1.for_each_param(f);
        self.bn1.for_each_param(f);
        self.conv2.for_each_param(f);
        self.bn2.for_each_param(f);
        self.conv3.for_each_param(f);
        self.bn3.for_each_param(f);
        if let Some(s) = self.skip.as_mut() {
            s.for_each_param(f);
        }
    }

    fn for_each_buffer(&mut self, f: &mut dyn FnMut(&str, &mut ArrayD<f64>)) {
        self.bn1.for_each_buffer(f);
        self.bn2.for_each_buffer(f);
        self.bn3.for_each_buffer(f);
    }
}

#[derive(Debug, Clone)]
enum Upsampler {
    Nearest,
    Deconv(ConvTranspose2d),
}

#[derive(Debug, Clone)]
enum Inner {
    Deeper(Box<Hourglass>),
    Bottom(ResidualBlock),
}

/// Recursive encoder-decoder. Each level: a full-resolution residual skip, a
/// pooled main path (residual, recurse-or-residual, residual), a 2x upsample,
/// and an additive merge. Order is the recursion depth; spatial shape is
/// preserved end to end.
#[derive(Debug, Clone)]
pub struct Hourglass {
    skip: ResidualBlock,
    pool: MaxPool2d,
    down: ResidualBlock,
    inner: Inner,
    post: ResidualBlock,
    up: Upsampler,
}

impl Hourglass {
    pub fn new(
        name: &str,
        order: usize,
        channels: usize,
        mode: UpsampleMode,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if order < 1 {
            return Err(Error::contract("hourglass order must be >= 1"));
        }
        let skip = ResidualBlock::new(&format!("{name}.skip"), channels, channels, rng)?;
        let down = ResidualBlock::new(&format!("{name}.down"), channels, channels, rng)?;
        let inner = if order > 1 {
            Inner::Deeper(Box::new(Hourglass::new(
                &format!("{name}.inner"),
                order - 1,
                channels,
                mode,
                rng,
            )?))
        } else {
            Inner::Bottom(ResidualBlock::new(&format!("{name}.bottom"), channels, channels, rng)?)
        };
        let post = ResidualBlock::new(&format!("{name}.post"), channels, channels, rng)?;
        let up = match mode {
            UpsampleMode::Nearest => Upsampler::Nearest,
            UpsampleMode::Deconv => {
                Upsampler::Deconv(ConvTranspose2d::new(&format!("{name}.up"), channels, channels, 4, 2, 1, rng))
            }
        };
        Ok(Hourglass { skip, pool: MaxPool2d::new(), down, inner, post, up })
    }

    pub fn forward_train(&mut self, x: &Array4<f64>) -> Result<Array4<f64>> {
        let s = self.skip.forward_train(x)?;
        let mut m = self.pool.forward_train(x)?;
        m = self.down.forward_train(&m)?;
        m = match &mut self.inner {
            Inner::Deeper(hg) => hg.forward_train(&m)?,
            Inner::Bottom(res) => res.forward_train(&m)?,
        };
        m = self.post.forward_train(&m)?;
        m = match &mut self.up {
            Upsampler::Nearest => NearestUpsample::forward(&m),
            Upsampler::Deconv(t) => t.forward_train(&m)?,
        };
        Ok(s + m)
    }

    pub fn forward_eval(&self, x: &Array4<f64>) -> Result<Array4<f64>> {
        let s = self.skip.forward_eval(x)?;
        let mut m = self.pool.forward_eval(x)?;
        m = self.down.forward_eval(&m)?;
        m = match &self.inner {
            Inner::Deeper(hg) => hg.forward_eval(&m)?,
            Inner::Bottom(res) => res.forward_eval(&m)?,
        };
        m = self.post.forward_eval(&m)?;
        m = match &self.up {
            Upsampler::Nearest => NearestUpsample::forward(&m),
            Upsampler::Deconv(t) => t.forward_eval(&m)?,
        };
        Ok(s + m)
    }

    pub fn backward(&mut self, gy: &Array4<f64>) -> Result<Array4<f64>> {
        // addition fans the gradient out unchanged to both branches
        let mut gm = match &mut self.up {
            Upsampler::Nearest => NearestUpsample::backward(gy),
            Upsampler::Deconv(t) => t.backward(gy)?,
        };
        gm = self.post.backward(&gm)?;
        gm = match &mut self.inner {
            Inner::Deeper(hg) => hg.backward(&gm)?,
            Inner::Bottom(res) => res.backward(&gm)?,
        };
        gm = self.down.backward(&gm)?;
        let gx_main = self.pool.backward(&gm);
        let gx_skip = self.skip.backward(gy)?;
        Ok(gx_main + gx_skip)
    }
}

impl ParamVisit for Hourglass {
    fn for_each_param(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.skip.for_each_param(f);
        self.down.for_each_param(f);
        match &mut self.inner {
            Inner::Deeper(hg) => hg.for_each_param(f),
            Inner::Bottom(res) => res.for_each_param(f),
        }
        self.post.for_each_param(f);
        if let Upsampler::Deconv(t) = &mut self.up {
            t.for_each_param(f);
        }
    }

    fn for_each_buffer(&mut self, f: &mut dyn FnMut(&str, &mut ArrayD<f64>)) {
        self.skip.for_each_buffer(f);
        self.down.for_each_buffer(f);
        match &mut self.inner {
            Inner::Deeper(hg) => hg.for_each_buffer(f),
            Inner::Bottom(res) => res.for_each_buffer(f),
        }
        self.post.for_each_buffer(f);
    }
}

/// Resolution-reducing front end: 7x7 stride-2 convolution, then residual
/// blocks and a pool. 4x total downsampling, 3 -> channels widening on the
/// schedule channels/4 -> channels/2 -> channels.
#[derive(Debug, Clone)]
pub struct Stem {
    conv: Conv2d,
    bn: BatchNorm2d,
    relu: Relu,
    res1: ResidualBlock,
    pool: MaxPool2d,
    res2: ResidualBlock,
    res3: ResidualBlock,
}

impl Stem {
    pub fn new(channels: usize, rng: &mut impl Rng) -> Result<Self> {
        let c4 = channels / 4;
        let c2 = channels / 2;
        Ok(Stem {
            conv: Conv2d::new("stem.conv1", 3, c4, 7, 2, 3, false, rng),
            bn: BatchNorm2d::new("stem.bn1", c4),
            relu: Relu::new(),
            res1: ResidualBlock::new("stem.res1", c4, c2, rng)?,
            pool: MaxPool2d::new(),
            res2: ResidualBlock::new("stem.res2", c2, c2, rng)?,
            res3: ResidualBlock::new("stem.res3", c2, channels, rng)?,
        })
    }

    pub fn forward_train(&mut self, x: &Array4<f64>) -> Result<Array4<f64>> {
        let mut m = self.conv.forward_train(x)?;
        m = self.bn.forward_train(&m)?;
        m = self.relu.forward_train(&m);
        m = self.res1.forward_train(&m)?;
        m = self.pool.forward_train(&m)?;
        m = self.res2.forward_train(&m)?;
        self.res3.forward_train(&m)
    }

    pub fn forward_eval(&self, x: &Array4<f64>) -> Result<Array4<f64>> {
        let mut m = self.conv.forward_eval(x)?;
        m = self.bn.forward_eval(&m)?;
        m = self.relu.forward_eval(&m);
        m = self.res1.forward_eval(&m)?;
        m = self.pool.forward_eval(&m)?;
        m = self.res2.forward_eval(&m)?;
        self.res3.forward_eval(&m)
    }

    pub fn backward(&mut self, gy: &Array4<f64>) -> Result<Array4<f64>> {
        let mut g = self.res3.backward(gy)?;
        g = self.res2.backward(&g)?;
        g = self.pool.backward(&g);
        g = self.res1.backward(&g)?;
        g = self.relu.backward(&g);
        g = self.bn.backward(&g)?;
        self.conv.backward(&g)
    }
}

impl ParamVisit for Stem {
    fn for_each_param(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.conv.for_each_param(f);
        self.bn.for_each_param(f);
        self.res1.for_each_param(f);
        self.res2.for_each_param(f);
        self.res3.for_each_param(f);
    }

    fn for_each_buffer(&mut self, f: &mut dyn FnMut(&str, &mut ArrayD<f64>)) {
        self.bn.for_each_buffer(f);
        self.res1.for_each_buffer(f);
        self.res2.for_each_buffer(f);
        self.res3.for_each_buffer(f);
    }
}

/// One stacked stage: hourglass, residual, 1x1 conv + batch-norm + relu
/// feature head, and a 1x1 heatmap head. Non-final stages remap features and
/// heatmap back onto the stage input to form the next stage's input.
#[derive(Debug, Clone)]
pub struct StackStage {
    hourglass: Hourglass,
    res: ResidualBlock,
    fc_conv: Conv2d,
    fc_bn: BatchNorm2d,
    fc_relu: Relu,
    head: Conv2d,
    remap_feat: Option<Conv2d>,
    remap_heat: Option<Conv2d>,
}

impl StackStage {
    pub fn new(
        name: &str,
        config: &ModelConfig,
        is_last: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let ch = config.channels;
        let k = config.num_joints;
        Ok(StackStage {
            hourglass: Hourglass::new(
                &format!("{name}.hourglass"),
                config.hourglass_order,
                ch,
                config.upsample,
                rng,
            )?,
            res: ResidualBlock::new(&format!("{name}.res"), ch, ch, rng)?,
            fc_conv: Conv2d::new(&format!("{name}.fc"), ch, ch, 1, 1, 0, false, rng),
            fc_bn: BatchNorm2d::new(&format!("{name}.fc_bn"), ch),
            fc_relu: Relu::new(),
            head: Conv2d::new(&format!("{name}.head"), ch, k, 1, 1, 0, true, rng),
            remap_feat: (!is_last)
                .then(|| Conv2d::new(&format!("{name}.remap_feat"), ch, ch, 1, 1, 0, true, rng)),
            remap_heat: (!is_last)
                .then(|| Conv2d::new(&format!("{name}.remap_heat"), k, ch, 1, 1, 0, true, rng)),
        })
    }

    /// Returns (heatmap, next stage input). `next` is None on the last stage.
    pub fn forward_train(&mut self, x: &Array4<f64>) -> Result<(Array4<f64>, Option<Array4<f64>>)> {
        let mut m = self.hourglass.forward_train(x)?;
        m = self.res.forward_train(&m)?;
        m = self.fc_conv.forward_train(&m)?;
        m = self.fc_bn.forward_train(&m)?;
        let feat = self.fc_relu.forward_train(&m);
        let hm = self.head.forward_train(&feat)?;
        let next = match (self.remap_feat.as_mut(), self.remap_heat.as_mut()) {
            (Some(rf), Some(rh)) => {
                Some(x + &rf.forward_train(&feat)? + &rh.forward_train(&hm)?)
            }
            _ => None,
        };
        Ok((hm, next))
    }

    pub fn forward_eval(&self, x: &Array4<f64>) -> Result<(Array4<f64>, Option<Array4<f64>>)> {
        let mut m = self.hourglass.forward_eval(x)?;
        m = self.res.forward_eval(&m)?;
        m = self.fc_conv.forward_eval(&m)?;
        m = self.fc_bn.forward_eval(&m)?;
        let feat = self.fc_relu.forward_eval(&m);
        let hm = self.head.forward_eval(&feat)?;
        let next = match (self.remap_feat.as_ref(), self.remap_heat.as_ref()) {
            (Some(rf), Some(rh)) => Some(x + &rf.forward_eval(&feat)? + &rh.forward_eval(&hm)?),
            _ => None,
        };
        Ok((hm, next))
    }

    /// `g_hm` comes from this stage's supervision; `g_next` from the next
    /// stage's input (None on the last stage). Returns the gradient w.r.t.
    /// this stage's input.
    pub fn backward(
        &mut self,
        g_hm: &Array4<f64>,
        g_next: Option<&Array4<f64>>,
    ) -> Result<Array4<f64>> {
        let mut g_hm_total = g_hm.clone();
        let mut g_feat: Option<Array4<f64>> = None;
        if let Some(gn) = g_next {
            let rf = self.remap_feat.as_mut().expect("non-last stage");
            let rh = self.remap_heat.as_mut().expect("non-last stage");
            g_feat = Some(rf.backward(gn)?);
            g_hm_total += &rh.backward(gn)?;
        }
        let g_from_head = self.head.backward(&g_hm_total)?;
        let g_feat = match g_feat {
            Some(g) => g + g_from_head,
            None => g_from_head,
        };
        let mut g = self.fc_relu.backward(&g_feat);
        g = self.fc_bn.backward(&g)?;
        g = self.fc_conv.backward(&g)?;
        g = self.res.backward(&g)?;
        let g_main = self.hourglass.backward(&g)?;
        Ok(match g_next {
            Some(gn) => g_main + gn, // the stage input feeds the sum directly
            None => g_main,
        })
    }
}

impl ParamVisit for StackStage {
    fn for_each_param(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.hourglass.for_each_param(f);
        self.res.for_each_param(f);
        self.fc_conv.for_each_param(f);
        self.fc_bn.for_each_param(f);
        self.head.for_each_param(f);
        if let Some(r) = self.remap_feat.as_mut() {
            r.for_each_param(f);
        }
        if let Some(r) = self.remap_heat.as_mut() {
            r.for_each_param(f);
        }
    }

    fn for_each_buffer(&mut self, f: &mut dyn FnMut(&str, &mut ArrayD<f64>)) {
        self.hourglass.for_each_buffer(f);
        self.res.for_each_buffer(f);
        self.fc_bn.for_each_buffer(f);
    }
}

/// Per-stack heatmap batches, each `B x num_joints x side x side`, in stack
/// order. The decoders consume only the last entry; the loss consumes all.
#[derive(Debug, Clone)]
pub struct StackOutputs {
    pub heatmaps: Vec<Array4<f64>>,
}

/// The full network.
#[derive(Debug, Clone)]
pub struct Network {
    config: ModelConfig,
    stem: Stem,
    stages: Vec<StackStage>,
}

impl Network {
    pub fn new(config: ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let stem = Stem::new(config.channels, rng)?;
        let mut stages = Vec::with_capacity(config.num_stacks);
        for i in 0..config.num_stacks {
            let is_last = i + 1 == config.num_stacks;
            stages.push(StackStage::new(&format!("stages.{i}"), &config, is_last, rng)?);
        }
        Ok(Network { config, stem, stages })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    fn check_input(&self, x: &Array4<f64>) -> Result<()> {
        let (_, c, h, w) = x.dim();
        if c != 3 || h != self.config.input_side || w != self.config.input_side {
            return Err(Error::Incompatible(format!(
                "input {c}x{h}x{w} does not match config 3x{0}x{0}",
                self.config.input_side
            )));
        }
        Ok(())
    }

    /// Training-mode forward: batch statistics, caches armed for `backward`.
    pub fn forward_train(&mut self, x: &Array4<f64>) -> Result<StackOutputs> {
        self.check_input(x)?;
        let mut inter = self.stem.forward_train(x)?;
        let mut heatmaps = Vec::with_capacity(self.stages.len());
        for stage in self.stages.iter_mut() {
            let (hm, next) = stage.forward_train(&inter)?;
            heatmaps.push(hm);
            if let Some(n) = next {
                inter = n;
            }
        }
        Ok(StackOutputs { heatmaps })
    }

    /// Evaluation-mode forward: running statistics, pure, thread-safe.
    pub fn forward_eval(&self, x: &Array4<f64>) -> StackOutputs {
        self.try_forward_eval(x).expect("shape checked")
    }

    pub fn try_forward_eval(&self, x: &Array4<f64>) -> Result<StackOutputs> {
        self.check_input(x)?;
        let mut inter = self.stem.forward_eval(x)?;
        let mut heatmaps = Vec::with_capacity(self.stages.len());
        for stage in &self.stages {
            let (hm, next) = stage.forward_eval(&inter)?;
            heatmaps.push(hm);
            if let Some(n) = next {
                inter = n;
            }
        }
        Ok(StackOutputs { heatmaps })
    }

    /// Backpropagates one gradient per stack heatmap, accumulating parameter
    /// gradients. Must follow a `forward_train` on the same input.
    pub fn backward(&mut self, grads: &[Array4<f64>]) -> Result<()> {
        if grads.len() != self.stages.len() {
            return Err(Error::contract(format!(
                "expected {} stack gradients, got {}",
                self.stages.len(),
                grads.len()
            )));
        }
        let mut g_next: Option<Array4<f64>> = None;
        for (stage, g_hm) in self.stages.iter_mut().zip(grads.iter()).rev() {
            let gx = stage.backward(g_hm, g_next.as_ref())?;
            g_next = Some(gx);
        }
        self.stem.backward(&g_next.expect("at least one stage"))?;
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        self.for_each_param(&mut |p| p.zero_grad());
    }

    /// Total trainable scalar count.
    pub fn num_parameters(&mut self) -> usize {
        let mut n = 0;
        self.for_each_param(&mut |p| n += p.len());
        n
    }
}

impl ParamVisit for Network {
    fn for_each_param(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.stem.for_each_param(f);
        for s in self.stages.iter_mut() {
            s.for_each_param(f);
        }
    }

    fn for_each_buffer(&mut self, f: &mut dyn FnMut(&str, &mut ArrayD<f64>)) {
        self.stem.for_each_buffer(f);
        for s in self.stages.iter_mut() {
            s.for_each_buffer(f);
        }
    }
}

/// Total scalar parameter count held by a store (trainable entries only).
pub fn count_parameters(store: &ParameterStore) -> usize {
    store.params.iter().map(|(_, a)| a.len()).sum()
}
