use rccm_autograd::{Real, Tensor, Var};

use super::layers::{Conv, Linear, Mode, ResidualBlock, Session};
use super::params::{ParamBuilder, ParamStore};
use super::{EncoderFeatures, ForwardOutputs, ModelConfig, SEG_OUTPUTS};
use crate::error::{Error, Result};
use crate::rcm::{self, RcmConfig};

/// How the classification head is fed.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FusionOptions {
    /// Weight `M` by the region probability maps before pooling; when off
    /// the head reads `M` directly.
    pub use_rcm: bool,
    pub rcm: RcmConfig,
}

impl FusionOptions {
    pub fn with_rcm(rcm: RcmConfig) -> Self {
        Self { use_rcm: true, rcm }
    }
}

/// Graph handles produced by [`Network::multitask_forward`].
#[derive(Debug, Clone, Copy)]
pub struct ForwardVars {
    pub seg: [Var; SEG_OUTPUTS],
    pub cls: Var,
    /// Deepest encoder map.
    pub m: Var,
    /// Input of the classification head: the fused map, or `m`.
    pub head_input: Var,
    pub probs: Option<[Var; SEG_OUTPUTS]>,
}

#[derive(Debug, Clone)]
struct DecoderNode {
    up: Conv,
    block: ResidualBlock,
}

/// Residual encoder with a nested, densely connected decoder.
///
/// Node `(i, j)` sits at resolution level `i` and nesting depth `j`. Column
/// 0 is the encoder. Every other node concatenates all earlier nodes of its
/// row with the upsampled node `(i + 1, j − 1)` and runs a residual block.
/// The top-row nodes `(0, 1..depth)` each feed a 1×1 segmentation head.
#[derive(Debug, Clone)]
pub struct Network {
    config: ModelConfig,
    encoder: Vec<ResidualBlock>,
    /// `nodes[i][j - 1]` is node `(i, j)`.
    nodes: Vec<Vec<DecoderNode>>,
    heads: Vec<Conv>,
    classifier: Linear,
}

impl Network {
    /// Builds the layer graph and its seeded initial parameters.
    pub fn new<T: Real>(config: &ModelConfig) -> Result<(Self, ParamStore<T>)> {
        config.validate()?;
        let mut b = ParamBuilder::<T>::new(config.rng_seed);
        let depth = config.depth;
        let ch = |i: usize| config.channels(i);

        let mut encoder = Vec::with_capacity(depth);
        for i in 0..depth {
            let cin = if i == 0 { config.input_shape.0 } else { ch(i - 1) };
            encoder.push(ResidualBlock::new(&mut b, &format!("enc{i}"), cin, ch(i)));
        }
        let mut nodes = Vec::with_capacity(depth - 1);
        for i in 0..depth - 1 {
            let mut row = Vec::new();
            for j in 1..depth - i {
                let name = format!("dec{i}_{j}");
                let up = Conv::new(&mut b, &format!("{name}.up"), ch(i + 1), ch(i), 1, true);
                let block = ResidualBlock::new(&mut b, &name, (j + 1) * ch(i), ch(i));
                row.push(DecoderNode { up, block });
            }
            nodes.push(row);
        }
        let heads = (1..depth)
            .map(|j| Conv::new(&mut b, &format!("head{j}"), ch(0), config.seg_channels, 1, true))
            .collect();
        let classifier = Linear::new(&mut b, "classifier", ch(depth - 1), config.num_classes);
        let net = Self {
            config: config.clone(),
            encoder,
            nodes,
            heads,
            classifier,
        };
        Ok((net, b.finish()))
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn encoder_blocks(&self) -> &[ResidualBlock] {
        &self.encoder
    }

    fn check_input<T: Real>(&self, s: &Session<'_, T>, image: Var) -> Result<()> {
        let shape = s.graph.value(image).shape();
        let (c, h, w) = self.config.input_shape;
        if shape.len() != 4 || shape[1..] != [c, h, w] || shape[0] == 0 {
            return Err(Error::Invalid(format!(
                "input batch {shape:?} does not match N×{c}×{h}×{w}"
            )));
        }
        Ok(())
    }

    /// One feature map per level; the last is `M`.
    pub fn encoder_forward<T: Real>(&self, s: &mut Session<'_, T>, image: Var) -> Result<Vec<Var>> {
        self.check_input(s, image)?;
        let mut feats = Vec::with_capacity(self.encoder.len());
        let mut x = image;
        for (i, block) in self.encoder.iter().enumerate() {
            if i > 0 {
                x = s.graph.max_pool2(x)?;
            }
            x = block.forward(s, x)?;
            feats.push(x);
        }
        Ok(feats)
    }

    /// The four segmentation logit maps `s₁..s₄` at input resolution. With
    /// fewer than four top-row nodes the deepest output is repeated; with
    /// more, the deepest four are kept.
    pub fn decoder_forward<T: Real>(&self, s: &mut Session<'_, T>, feats: &[Var]) -> Result<[Var; SEG_OUTPUTS]> {
        let depth = self.config.depth;
        if feats.len() != depth {
            return Err(Error::Invalid(format!("expected {depth} encoder levels, got {}", feats.len())));
        }
        let mut grid: Vec<Vec<Var>> = feats.iter().map(|&f| vec![f]).collect();
        for j in 1..depth {
            for i in 0..depth - j {
                let node = &self.nodes[i][j - 1];
                let (_, _, h, w) = s.graph.value(grid[i][0]).dims4()?;
                let up = s.graph.resize_bilinear(grid[i + 1][j - 1], h, w)?;
                let up = node.up.forward(s, up)?;
                let mut parts = grid[i].clone();
                parts.push(up);
                let cat = s.graph.concat_channels(&parts)?;
                let out = node.block.forward(s, cat)?;
                grid[i].push(out);
            }
        }
        let mut outs = Vec::with_capacity(self.heads.len());
        for (j, head) in self.heads.iter().enumerate() {
            outs.push(head.forward(s, grid[0][j + 1])?);
        }
        let deepest = *outs.last().expect("depth >= 2 gives a head");
        while outs.len() < SEG_OUTPUTS {
            outs.push(deepest);
        }
        let tail = &outs[outs.len() - SEG_OUTPUTS..];
        Ok([tail[0], tail[1], tail[2], tail[3]])
    }

    /// Global average pooling followed by a fully connected layer.
    pub fn classification_head_forward<T: Real>(&self, s: &mut Session<'_, T>, features: Var) -> Result<Var> {
        let pooled = s.graph.global_avg_pool(features)?;
        self.classifier.forward(s, pooled)
    }

    pub fn multitask_forward<T: Real>(
        &self,
        s: &mut Session<'_, T>,
        image: Var,
        fusion: &FusionOptions,
    ) -> Result<ForwardVars> {
        let feats = self.encoder_forward(s, image)?;
        let m = *feats.last().expect("at least two levels");
        let seg = self.decoder_forward(s, &feats)?;
        let (_, _, h, w) = s.graph.value(m).dims4()?;
        let (head_input, probs) = if fusion.use_rcm {
            let probs = rcm::record_region_probability_maps(&mut s.graph, &seg, (h, w), fusion.rcm.softmax_axis)?;
            let fused = rcm::record_fuse_features(&mut s.graph, &probs, m, &fusion.rcm.alpha)?;
            (fused, Some(probs))
        } else {
            (m, None)
        };
        let cls = self.classification_head_forward(s, head_input)?;
        Ok(ForwardVars {
            seg,
            cls,
            m,
            head_input,
            probs,
        })
    }

    /// Encoder features for a batch, without gradient tracking.
    pub fn encode<T: Real>(&self, store: &ParamStore<T>, images: &Tensor<T>, mode: Mode) -> Result<EncoderFeatures<T>> {
        let mut s = Session::new(store, mode, false);
        let x = s.graph.constant(images.clone());
        let feats = self.encoder_forward(&mut s, x)?;
        Ok(EncoderFeatures {
            levels: feats.iter().map(|&v| s.graph.value(v).clone()).collect(),
        })
    }

    /// Both heads' outputs for a batch, without gradient tracking.
    pub fn infer<T: Real>(
        &self,
        store: &ParamStore<T>,
        images: &Tensor<T>,
        fusion: &FusionOptions,
        mode: Mode,
    ) -> Result<ForwardOutputs<T>> {
        let mut s = Session::new(store, mode, false);
        let x = s.graph.constant(images.clone());
        let v = self.multitask_forward(&mut s, x, fusion)?;
        let out = ForwardOutputs {
            seg_logits: v.seg.map(|t| s.graph.value(t).clone()),
            cls_logits: s.graph.value(v.cls).clone(),
        };
        out.check_finite()?;
        Ok(out)
    }
}
