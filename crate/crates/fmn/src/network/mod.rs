//! The two-branch recognition network.
//!
//! A global branch (stem, four residual stages, pooled embedding, linear
//! classifier) runs on the whole image. A tiny mask head turns the global
//! embedding into a spatial attention map at a chosen depth of the backbone,
//! and a local branch with its own copies of the remaining stages re-processes
//! the masked features into a second embedding and classifier. The mask is
//! `exp(relu(W^T g))` laid out column by column over the tapped feature plane,
//! so untrained weights give an all-ones mask and the local branch starts out
//! seeing exactly what the global branch saw.

mod checkpoint;
mod forward;
mod heatmap;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use heatmap::{export_heatmap, mask_snapshot, MaskSnapshot};
pub use forward::{
    batch_of, fmn_forward, grn_forward, lan_forward, mask_forward, Bindings, FmnNodes,
    ForwardSetup, GrnNodes, LanNodes, MaskNodes,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{BnStats, Element, Tensor};

/// Depth at which the mask taps the global backbone. Stage numbering follows
/// the usual residual-network convention, so `Res2` is the first residual
/// stage and `Res4` the third.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskTap {
    /// Right after the stem's max pool, before any residual stage.
    Pool1,
    /// After the first residual stage.
    Res2,
    /// After the second residual stage.
    Res3,
    /// After the third residual stage.
    Res4,
}

impl MaskTap {
    pub const ALL: [MaskTap; 4] = [MaskTap::Pool1, MaskTap::Res2, MaskTap::Res3, MaskTap::Res4];

    /// Index of the first residual stage the local branch replicates.
    pub fn lan_start(self) -> usize {
        match self {
            MaskTap::Pool1 => 0,
            MaskTap::Res2 => 1,
            MaskTap::Res3 => 2,
            MaskTap::Res4 => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MaskTap::Pool1 => "pool1",
            MaskTap::Res2 => "res2",
            MaskTap::Res3 => "res3",
            MaskTap::Res4 => "res4",
        }
    }
}

impl std::fmt::Display for MaskTap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for MaskTap {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pool1" => Ok(MaskTap::Pool1),
            "res2" => Ok(MaskTap::Res2),
            "res3" => Ok(MaskTap::Res3),
            "res4" => Ok(MaskTap::Res4),
            other => Err(Error::config(format!(
                "unknown mask tap {:?}; expected pool1, res2, res3 or res4",
                other
            ))),
        }
    }
}

/// Static shape of the network. Everything downstream (parameter shapes,
/// mask size, checkpoint layout) is derived from this.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub input_channels: usize,
    pub input_height: usize,
    pub input_width: usize,
    /// Stride of the stem's 3x3 convolution. 1 suits small inputs; large
    /// photographic inputs typically use 2.
    pub stem_stride: usize,
    /// Output channels of the stem and of each residual stage.
    pub channels: [usize; 4],
    pub blocks_per_stage: usize,
    /// Width of both branch embeddings.
    pub feature_dim: usize,
    pub num_classes: usize,
    pub mask_tap: MaskTap,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            input_channels: 3,
            input_height: 64,
            input_width: 32,
            stem_stride: 1,
            channels: [16, 32, 64, 128],
            blocks_per_stage: 2,
            feature_dim: 128,
            num_classes: 8,
            mask_tap: MaskTap::Pool1,
        }
    }
}

fn conv_out(extent: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    (extent + 2 * pad - kernel) / stride + 1
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_channels == 0 || self.input_height == 0 || self.input_width == 0 {
            return Err(Error::config("input dimensions must all be positive"));
        }
        if self.stem_stride == 0 {
            return Err(Error::config("stem stride must be at least 1"));
        }
        if self.channels.iter().any(|&c| c == 0) {
            return Err(Error::config("stage channel counts must all be positive"));
        }
        if self.blocks_per_stage == 0 {
            return Err(Error::config("each stage needs at least one block"));
        }
        if self.feature_dim == 0 {
            return Err(Error::config("feature dimension must be positive"));
        }
        if self.num_classes < 2 {
            return Err(Error::config("need at least two identity classes"));
        }
        let (h, w) = (
            conv_out(self.input_height, 3, self.stem_stride, 1),
            conv_out(self.input_width, 3, self.stem_stride, 1),
        );
        if h < 2 || w < 2 {
            return Err(Error::config(format!(
                "input {}x{} is too small for the stem pool",
                self.input_height, self.input_width
            )));
        }
        let (th, tw) = self.tap_plane();
        if th == 0 || tw == 0 {
            return Err(Error::config("mask tap plane collapsed to zero extent"));
        }
        let (fh, fw) = self.stage_plane(3);
        if fh == 0 || fw == 0 {
            return Err(Error::config("final feature plane collapsed to zero extent"));
        }
        Ok(())
    }

    /// Spatial extent right after the stem conv and pool.
    pub fn stem_plane(&self) -> (usize, usize) {
        let h = conv_out(self.input_height, 3, self.stem_stride, 1);
        let w = conv_out(self.input_width, 3, self.stem_stride, 1);
        (conv_out(h, 2, 2, 0), conv_out(w, 2, 2, 0))
    }

    /// Stride of the first block of a residual stage.
    pub fn stage_stride(stage: usize) -> usize {
        if stage == 0 {
            1
        } else {
            2
        }
    }

    /// Spatial extent after residual stage `stage` (0-based).
    pub fn stage_plane(&self, stage: usize) -> (usize, usize) {
        let (mut h, mut w) = self.stem_plane();
        for s in 0..=stage {
            let stride = Self::stage_stride(s);
            h = conv_out(h, 3, stride, 1);
            w = conv_out(w, 3, stride, 1);
        }
        (h, w)
    }

    /// Spatial extent of the feature plane the mask multiplies.
    pub fn tap_plane(&self) -> (usize, usize) {
        match self.mask_tap.lan_start() {
            0 => self.stem_plane(),
            s => self.stage_plane(s - 1),
        }
    }

    /// Channel count of the feature plane the mask multiplies.
    pub fn tap_channels(&self) -> usize {
        match self.mask_tap.lan_start() {
            0 | 1 => self.channels[0],
            s => self.channels[s - 1],
        }
    }

    /// Full `(channels, height, width)` shape at the mask tap.
    pub fn tap_shape(&self) -> (usize, usize, usize) {
        let (h, w) = self.tap_plane();
        (self.tap_channels(), h, w)
    }
}

// ---- parameter tree ----

#[derive(Debug, Clone)]
pub struct ConvParams<E: Element> {
    pub weight: Tensor<E>,
    pub bias: Tensor<E>,
}

#[derive(Debug, Clone)]
pub struct BnParams<E: Element> {
    pub gamma: Tensor<E>,
    pub beta: Tensor<E>,
    pub stats: BnStats<E>,
}

#[derive(Debug, Clone)]
pub struct LinearParams<E: Element> {
    pub weight: Tensor<E>,
    pub bias: Tensor<E>,
}

/// One residual block: two 3x3 conv+norm pairs plus an optional projection
/// on the skip path when the shape changes.
#[derive(Debug, Clone)]
pub struct BlockParams<E: Element> {
    pub conv1: ConvParams<E>,
    pub bn1: BnParams<E>,
    pub conv2: ConvParams<E>,
    pub bn2: BnParams<E>,
    pub down: Option<(ConvParams<E>, BnParams<E>)>,
    pub stride: usize,
}

#[derive(Debug, Clone)]
pub struct StageParams<E: Element> {
    pub blocks: Vec<BlockParams<E>>,
}

#[derive(Debug, Clone)]
pub struct HeadParams<E: Element> {
    pub embed: LinearParams<E>,
    pub classifier: LinearParams<E>,
}

/// Global branch: stem, all four stages, head.
#[derive(Debug, Clone)]
pub struct GrnParams<E: Element> {
    pub stem_conv: ConvParams<E>,
    pub stem_bn: BnParams<E>,
    pub stages: Vec<StageParams<E>>,
    pub head: HeadParams<E>,
}

/// Mask head: a single zero-bias projection from the global embedding to one
/// value per tapped spatial position.
#[derive(Debug, Clone)]
pub struct MaskParams<E: Element> {
    pub weight: Tensor<E>,
}

/// Local branch: independent copies of the residual stages from the tap
/// point onward, plus its own head.
#[derive(Debug, Clone)]
pub struct LanParams<E: Element> {
    pub stages: Vec<StageParams<E>>,
    pub head: HeadParams<E>,
}

#[derive(Debug, Clone)]
pub struct NetworkParams<E: Element> {
    pub config: NetworkConfig,
    pub grn: GrnParams<E>,
    pub mask: MaskParams<E>,
    pub lan: LanParams<E>,
}

fn conv_init<E: Element>(rng: &mut Rng, oc: usize, ic: usize, k: usize) -> ConvParams<E> {
    let fan_in = (ic * k * k) as f64;
    let std = (2.0 / fan_in).sqrt();
    let weight: Vec<f64> = (0..oc * ic * k * k).map(|_| rng.normal() * std).collect();
    ConvParams {
        weight: Tensor::from_f64(&[oc, ic, k, k], &weight).expect("init shape"),
        bias: Tensor::zeros(&[oc]),
    }
}

fn bn_init<E: Element>(channels: usize) -> BnParams<E> {
    BnParams {
        gamma: Tensor::full(&[channels], 1.0),
        beta: Tensor::zeros(&[channels]),
        stats: BnStats::new(channels),
    }
}

fn linear_init<E: Element>(rng: &mut Rng, rows: usize, cols: usize) -> LinearParams<E> {
    let std = (2.0 / rows as f64).sqrt();
    let weight: Vec<f64> = (0..rows * cols).map(|_| rng.normal() * std).collect();
    LinearParams {
        weight: Tensor::from_f64(&[rows, cols], &weight).expect("init shape"),
        bias: Tensor::zeros(&[cols]),
    }
}

fn block_init<E: Element>(rng: &mut Rng, ic: usize, oc: usize, stride: usize) -> BlockParams<E> {
    let down = if stride != 1 || ic != oc {
        Some((conv_init(rng, oc, ic, 1), bn_init(oc)))
    } else {
        None
    };
    BlockParams {
        conv1: conv_init(rng, oc, ic, 3),
        bn1: bn_init(oc),
        conv2: conv_init(rng, oc, oc, 3),
        bn2: bn_init(oc),
        down,
        stride,
    }
}

fn stage_init<E: Element>(
    rng: &mut Rng,
    config: &NetworkConfig,
    stage: usize,
    input_channels: usize,
) -> StageParams<E> {
    let oc = config.channels[stage];
    let mut blocks = Vec::with_capacity(config.blocks_per_stage);
    blocks.push(block_init(
        rng,
        input_channels,
        oc,
        NetworkConfig::stage_stride(stage),
    ));
    for _ in 1..config.blocks_per_stage {
        blocks.push(block_init(rng, oc, oc, 1));
    }
    StageParams { blocks }
}

fn head_init<E: Element>(rng: &mut Rng, in_dim: usize, config: &NetworkConfig) -> HeadParams<E> {
    HeadParams {
        embed: linear_init(rng, in_dim, config.feature_dim),
        classifier: linear_init(rng, config.feature_dim, config.num_classes),
    }
}

impl<E: Element> NetworkParams<E> {
    /// Fresh parameters for `config`, drawn from `rng` in a fixed order so
    /// the same seed always produces the same network.
    ///
    /// Convolutions and linear layers use scaled normal draws sized to their
    /// fan-in, norms start as the identity, and the mask projection starts
    /// near zero so the initial mask is almost exactly all ones.
    pub fn init(config: &NetworkConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let mut stages = Vec::with_capacity(4);
        let mut ic = config.channels[0];
        let stem_conv = conv_init(rng, config.channels[0], config.input_channels, 3);
        let stem_bn = bn_init(config.channels[0]);
        for stage in 0..4 {
            stages.push(stage_init(rng, config, stage, ic));
            ic = config.channels[stage];
        }
        let head = head_init(rng, config.channels[3], config);
        let grn = GrnParams {
            stem_conv,
            stem_bn,
            stages,
            head,
        };

        let (th, tw) = config.tap_plane();
        let mask_w: Vec<f64> = (0..config.feature_dim * th * tw)
            .map(|_| rng.normal() * 0.01)
            .collect();
        let mask = MaskParams {
            weight: Tensor::from_f64(&[config.feature_dim, th * tw], &mask_w).expect("init shape"),
        };

        let start = config.mask_tap.lan_start();
        let mut lan_stages = Vec::new();
        let mut ic = config.tap_channels();
        for stage in start..4 {
            lan_stages.push(stage_init(rng, config, stage, ic));
            ic = config.channels[stage];
        }
        let lan = LanParams {
            stages: lan_stages,
            head: head_init(rng, config.channels[3], config),
        };

        Ok(NetworkParams {
            config: config.clone(),
            grn,
            mask,
            lan,
        })
    }

    /// Visit every learnable tensor as `(name, tensor)`, in a fixed order.
    pub fn visit(&self, f: &mut impl FnMut(&str, &Tensor<E>)) {
        visit_grn(&self.grn, &mut |name, t| f(name, t));
        f("mask.weight", &self.mask.weight);
        let start = self.config.mask_tap.lan_start();
        for (i, stage) in self.lan.stages.iter().enumerate() {
            visit_stage(stage, &format!("lan.stage{}", start + i), &mut |n, t| {
                f(n, t)
            });
        }
        visit_head(&self.lan.head, "lan.head", &mut |n, t| f(n, t));
    }

    /// Mutable variant of [`NetworkParams::visit`], same order.
    pub fn visit_mut(&mut self, f: &mut impl FnMut(&str, &mut Tensor<E>)) {
        visit_grn_mut(&mut self.grn, &mut |name, t| f(name, t));
        f("mask.weight", &mut self.mask.weight);
        let start = self.config.mask_tap.lan_start();
        for (i, stage) in self.lan.stages.iter_mut().enumerate() {
            visit_stage_mut(stage, &format!("lan.stage{}", start + i), &mut |n, t| {
                f(n, t)
            });
        }
        visit_head_mut(&mut self.lan.head, "lan.head", &mut |n, t| f(n, t));
    }

    /// Visit every norm layer's running statistics as `(name, stats)`.
    pub fn visit_stats(&self, f: &mut impl FnMut(&str, &BnStats<E>)) {
        stats_grn(&self.grn, &mut |n, s| f(n, s));
        let start = self.config.mask_tap.lan_start();
        for (i, stage) in self.lan.stages.iter().enumerate() {
            stats_stage(stage, &format!("lan.stage{}", start + i), &mut |n, s| {
                f(n, s)
            });
        }
    }

    /// Mutable variant of [`NetworkParams::visit_stats`], same order.
    pub fn visit_stats_mut(&mut self, f: &mut impl FnMut(&str, &mut BnStats<E>)) {
        stats_grn_mut(&mut self.grn, &mut |n, s| f(n, s));
        let start = self.config.mask_tap.lan_start();
        for (i, stage) in self.lan.stages.iter_mut().enumerate() {
            stats_stage_mut(stage, &format!("lan.stage{}", start + i), &mut |n, s| {
                f(n, s)
            });
        }
    }

    pub fn num_parameters(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, t| n += t.numel());
        n
    }

    /// FNV-1a hash of every parameter and running statistic, in visit order,
    /// over their little-endian `f32` bytes. Two parameter sets with the same
    /// digest are byte-identical at `f32` precision.
    pub fn digest(&self) -> u64 {
        struct Fnv(u64);
        impl Fnv {
            fn eat(&mut self, bytes: &[u8]) {
                for &b in bytes {
                    self.0 ^= b as u64;
                    self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
                }
            }
        }
        let mut fnv = Fnv(0xcbf2_9ce4_8422_2325);
        self.visit(&mut |name, t| {
            fnv.eat(name.as_bytes());
            for &v in t.data() {
                fnv.eat(&(v.f64() as f32).to_le_bytes());
            }
        });
        self.visit_stats(&mut |name, s| {
            fnv.eat(name.as_bytes());
            for &v in s.mean.iter().chain(&s.var) {
                fnv.eat(&(v.f64() as f32).to_le_bytes());
            }
        });
        fnv.0
    }

    /// Cast to another storage type (running statistics included).
    pub fn cast<T: Element>(&self) -> NetworkParams<T> {
        let mut tensors: Vec<Tensor<T>> = Vec::new();
        self.visit(&mut |_, t| tensors.push(t.cast()));
        let mut stats: Vec<BnStats<T>> = Vec::new();
        self.visit_stats(&mut |_, s| {
            stats.push(BnStats {
                mean: s.mean.iter().map(|&v| T::of(v.f64())).collect(),
                var: s.var.iter().map(|&v| T::of(v.f64())).collect(),
            })
        });
        let mut rng = Rng::seeded(0);
        let mut out = NetworkParams::<T>::init(&self.config, &mut rng)
            .expect("config already validated");
        let mut it = tensors.into_iter();
        out.visit_mut(&mut |_, t| *t = it.next().expect("same tensor count"));
        let mut it = stats.into_iter();
        out.visit_stats_mut(&mut |_, s| *s = it.next().expect("same stats count"));
        out
    }
}

fn visit_conv<E: Element>(
    p: &ConvParams<E>,
    prefix: &str,
    f: &mut impl FnMut(&str, &Tensor<E>),
) {
    f(&format!("{}.weight", prefix), &p.weight);
    f(&format!("{}.bias", prefix), &p.bias);
}

fn visit_conv_mut<E: Element>(
    p: &mut ConvParams<E>,
    prefix: &str,
    f: &mut impl FnMut(&str, &mut Tensor<E>),
) {
    f(&format!("{}.weight", prefix), &mut p.weight);
    f(&format!("{}.bias", prefix), &mut p.bias);
}

fn visit_bn<E: Element>(p: &BnParams<E>, prefix: &str, f: &mut impl FnMut(&str, &Tensor<E>)) {
    f(&format!("{}.gamma", prefix), &p.gamma);
    f(&format!("{}.beta", prefix), &p.beta);
}

fn visit_bn_mut<E: Element>(
    p: &mut BnParams<E>,
    prefix: &str,
    f: &mut impl FnMut(&str, &mut Tensor<E>),
) {
    f(&format!("{}.gamma", prefix), &mut p.gamma);
    f(&format!("{}.beta", prefix), &mut p.beta);
}

fn visit_linear<E: Element>(
    p: &LinearParams<E>,
    prefix: &str,
    f: &mut impl FnMut(&str, &Tensor<E>),
) {
    f(&format!("{}.weight", prefix), &p.weight);
    f(&format!("{}.bias", prefix), &p.bias);
}

fn visit_linear_mut<E: Element>(
    p: &mut LinearParams<E>,
    prefix: &str,
    f: &mut impl FnMut(&str, &mut Tensor<E>),
) {
    f(&format!("{}.weight", prefix), &mut p.weight);
    f(&format!("{}.bias", prefix), &mut p.bias);
}

fn visit_block<E: Element>(
    b: &BlockParams<E>,
    prefix: &str,
    f: &mut impl FnMut(&str, &Tensor<E>),
) {
    visit_conv(&b.conv1, &format!("{}.conv1", prefix), f);
    visit_bn(&b.bn1, &format!("{}.bn1", prefix), f);
    visit_conv(&b.conv2, &format!("{}.conv2", prefix), f);
    visit_bn(&b.bn2, &format!("{}.bn2", prefix), f);
    if let Some((conv, bn)) = &b.down {
        visit_conv(conv, &format!("{}.down.conv", prefix), f);
        visit_bn(bn, &format!("{}.down.bn", prefix), f);
    }
}

fn visit_block_mut<E: Element>(
    b: &mut BlockParams<E>,
    prefix: &str,
    f: &mut impl FnMut(&str, &mut Tensor<E>),
) {
    visit_conv_mut(&mut b.conv1, &format!("{}.conv1", prefix), f);
    visit_bn_mut(&mut b.bn1, &format!("{}.bn1", prefix), f);
    visit_conv_mut(&mut b.conv2, &format!("{}.conv2", prefix), f);
    visit_bn_mut(&mut b.bn2, &format!("{}.bn2", prefix), f);
    if let Some((conv, bn)) = &mut b.down {
        visit_conv_mut(conv, &format!("{}.down.conv", prefix), f);
        visit_bn_mut(bn, &format!("{}.down.bn", prefix), f);
    }
}

fn visit_stage<E: Element>(
    s: &StageParams<E>,
    prefix: &str,
    f: &mut impl FnMut(&str, &Tensor<E>),
) {
    for (j, block) in s.blocks.iter().enumerate() {
        visit_block(block, &format!("{}.block{}", prefix, j), f);
    }
}

fn visit_stage_mut<E: Element>(
    s: &mut StageParams<E>,
    prefix: &str,
    f: &mut impl FnMut(&str, &mut Tensor<E>),
) {
    for (j, block) in s.blocks.iter_mut().enumerate() {
        visit_block_mut(block, &format!("{}.block{}", prefix, j), f);
    }
}

fn visit_head<E: Element>(
    h: &HeadParams<E>,
    prefix: &str,
    f: &mut impl FnMut(&str, &Tensor<E>),
) {
    visit_linear(&h.embed, &format!("{}.embed", prefix), f);
    visit_linear(&h.classifier, &format!("{}.classifier", prefix), f);
}

fn visit_head_mut<E: Element>(
    h: &mut HeadParams<E>,
    prefix: &str,
    f: &mut impl FnMut(&str, &mut Tensor<E>),
) {
    visit_linear_mut(&mut h.embed, &format!("{}.embed", prefix), f);
    visit_linear_mut(&mut h.classifier, &format!("{}.classifier", prefix), f);
}

fn visit_grn<E: Element>(g: &GrnParams<E>, f: &mut impl FnMut(&str, &Tensor<E>)) {
    visit_conv(&g.stem_conv, "grn.stem.conv", f);
    visit_bn(&g.stem_bn, "grn.stem.bn", f);
    for (i, stage) in g.stages.iter().enumerate() {
        visit_stage(stage, &format!("grn.stage{}", i), f);
    }
    visit_head(&g.head, "grn.head", f);
}

fn visit_grn_mut<E: Element>(g: &mut GrnParams<E>, f: &mut impl FnMut(&str, &mut Tensor<E>)) {
    visit_conv_mut(&mut g.stem_conv, "grn.stem.conv", f);
    visit_bn_mut(&mut g.stem_bn, "grn.stem.bn", f);
    for (i, stage) in g.stages.iter_mut().enumerate() {
        visit_stage_mut(stage, &format!("grn.stage{}", i), f);
    }
    visit_head_mut(&mut g.head, "grn.head", f);
}

fn stats_block<E: Element>(
    b: &BlockParams<E>,
    prefix: &str,
    f: &mut impl FnMut(&str, &BnStats<E>),
) {
    f(&format!("{}.bn1", prefix), &b.bn1.stats);
    f(&format!("{}.bn2", prefix), &b.bn2.stats);
    if let Some((_, bn)) = &b.down {
        f(&format!("{}.down.bn", prefix), &bn.stats);
    }
}

fn stats_block_mut<E: Element>(
    b: &mut BlockParams<E>,
    prefix: &str,
    f: &mut impl FnMut(&str, &mut BnStats<E>),
) {
    f(&format!("{}.bn1", prefix), &mut b.bn1.stats);
    f(&format!("{}.bn2", prefix), &mut b.bn2.stats);
    if let Some((_, bn)) = &mut b.down {
        f(&format!("{}.down.bn", prefix), &mut bn.stats);
    }
}

fn stats_stage<E: Element>(
    s: &StageParams<E>,
    prefix: &str,
    f: &mut impl FnMut(&str, &BnStats<E>),
) {
    for (j, block) in s.blocks.iter().enumerate() {
        stats_block(block, &format!("{}.block{}", prefix, j), f);
    }
}

fn stats_stage_mut<E: Element>(
    s: &mut StageParams<E>,
    prefix: &str,
    f: &mut impl FnMut(&str, &mut BnStats<E>),
) {
    for (j, block) in s.blocks.iter_mut().enumerate() {
        stats_block_mut(block, &format!("{}.block{}", prefix, j), f);
    }
}

fn stats_grn<E: Element>(g: &GrnParams<E>, f: &mut impl FnMut(&str, &BnStats<E>)) {
    f("grn.stem.bn", &g.stem_bn.stats);
    for (i, stage) in g.stages.iter().enumerate() {
        stats_stage(stage, &format!("grn.stage{}", i), f);
    }
}

fn stats_grn_mut<E: Element>(g: &mut GrnParams<E>, f: &mut impl FnMut(&str, &mut BnStats<E>)) {
    f("grn.stem.bn", &mut g.stem_bn.stats);
    for (i, stage) in g.stages.iter_mut().enumerate() {
        stats_stage_mut(stage, &format!("grn.stage{}", i), f);
    }
}
