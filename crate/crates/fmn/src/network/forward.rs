//! Graph construction for the two branches and the mask head.
//!
//! Every builder takes the parameter tree by reference, clones the tensors it
//! needs into the graph as leaves, and records `(name, node)` pairs for the
//! trainable ones in a [`Bindings`] list. After `backward`, an optimizer can
//! walk the bindings, read each node's gradient and apply it to the named
//! parameter. Frozen parameters enter the graph with `requires_grad` unset,
//! which stops gradient flow into them (and everything only they reach)
//! without any extra bookkeeping.

use super::{
    BlockParams, BnParams, ConvParams, GrnParams, HeadParams, LanParams, MaskParams,
    NetworkConfig, StageParams,
};
use crate::error::{Error, Result};
use crate::tensor::{Element, Graph, Mode, NodeId, Tensor};

/// Names and graph nodes of the trainable parameters in a forward pass.
pub type Bindings = Vec<(String, NodeId)>;

#[derive(Debug, Clone, Copy)]
pub struct GrnNodes {
    /// Feature plane at the mask tap.
    pub tap: NodeId,
    /// Global embedding, `[batch, feature_dim]`.
    pub embedding: NodeId,
    /// Identity logits from the global classifier.
    pub logits: NodeId,
}

#[derive(Debug, Clone, Copy)]
pub struct MaskNodes {
    /// `relu(g W)` before the spatial reshape, `[batch, plane]`.
    pub pre_activation: NodeId,
    /// The positive spatial mask, `[batch, h, w]`.
    pub mask: NodeId,
    /// Tap features scaled channel-wise by the mask.
    pub masked: NodeId,
}

#[derive(Debug, Clone, Copy)]
pub struct LanNodes {
    /// Local embedding, `[batch, feature_dim]`.
    pub embedding: NodeId,
    /// Identity logits from the local classifier.
    pub logits: NodeId,
}

#[derive(Debug, Clone, Copy)]
pub struct FmnNodes {
    pub grn: GrnNodes,
    pub mask: MaskNodes,
    pub lan: LanNodes,
}

fn bind<E: Element>(
    graph: &mut Graph<E>,
    bindings: &mut Bindings,
    name: String,
    tensor: &Tensor<E>,
    trainable: bool,
) -> NodeId {
    let mut t = tensor.clone();
    t.requires_grad = trainable;
    t.grad = None;
    let id = graph.leaf(t);
    if trainable {
        bindings.push((name, id));
    }
    id
}

#[allow(clippy::too_many_arguments)]
fn conv_forward<E: Element>(
    graph: &mut Graph<E>,
    bindings: &mut Bindings,
    x: NodeId,
    conv: &ConvParams<E>,
    stride: usize,
    pad: usize,
    trainable: bool,
    prefix: &str,
) -> Result<NodeId> {
    let w = bind(
        graph,
        bindings,
        format!("{}.weight", prefix),
        &conv.weight,
        trainable,
    );
    let b = bind(
        graph,
        bindings,
        format!("{}.bias", prefix),
        &conv.bias,
        trainable,
    );
    graph.conv2d(x, w, b, stride, pad)
}

fn bn_forward<E: Element>(
    graph: &mut Graph<E>,
    bindings: &mut Bindings,
    x: NodeId,
    bn: &mut BnParams<E>,
    mode: Mode,
    trainable: bool,
    prefix: &str,
) -> Result<NodeId> {
    let gamma = bind(
        graph,
        bindings,
        format!("{}.gamma", prefix),
        &bn.gamma,
        trainable,
    );
    let beta = bind(
        graph,
        bindings,
        format!("{}.beta", prefix),
        &bn.beta,
        trainable,
    );
    graph.batchnorm2d(x, gamma, beta, &mut bn.stats, mode)
}

#[allow(clippy::too_many_arguments)]
fn block_forward<E: Element>(
    graph: &mut Graph<E>,
    bindings: &mut Bindings,
    x: NodeId,
    block: &mut BlockParams<E>,
    mode: Mode,
    trainable: bool,
    prefix: &str,
) -> Result<NodeId> {
    let c1 = conv_forward(
        graph,
        bindings,
        x,
        &block.conv1,
        block.stride,
        1,
        trainable,
        &format!("{}.conv1", prefix),
    )?;
    let b1 = bn_forward(
        graph,
        bindings,
        c1,
        &mut block.bn1,
        mode,
        trainable,
        &format!("{}.bn1", prefix),
    )?;
    let r1 = graph.relu(b1);
    let c2 = conv_forward(
        graph,
        bindings,
        r1,
        &block.conv2,
        1,
        1,
        trainable,
        &format!("{}.conv2", prefix),
    )?;
    let b2 = bn_forward(
        graph,
        bindings,
        c2,
        &mut block.bn2,
        mode,
        trainable,
        &format!("{}.bn2", prefix),
    )?;
    let skip = match &mut block.down {
        None => x,
        Some((conv, bn)) => {
            let d = conv_forward(
                graph,
                bindings,
                x,
                conv,
                block.stride,
                0,
                trainable,
                &format!("{}.down.conv", prefix),
            )?;
            bn_forward(
                graph,
                bindings,
                d,
                bn,
                mode,
                trainable,
                &format!("{}.down.bn", prefix),
            )?
        }
    };
    let sum = graph.add(b2, skip)?;
    Ok(graph.relu(sum))
}

#[allow(clippy::too_many_arguments)]
fn stage_forward<E: Element>(
    graph: &mut Graph<E>,
    bindings: &mut Bindings,
    mut x: NodeId,
    stage: &mut StageParams<E>,
    mode: Mode,
    trainable: bool,
    prefix: &str,
) -> Result<NodeId> {
    for (j, block) in stage.blocks.iter_mut().enumerate() {
        x = block_forward(
            graph,
            bindings,
            x,
            block,
            mode,
            trainable,
            &format!("{}.block{}", prefix, j),
        )?;
    }
    Ok(x)
}

fn head_forward<E: Element>(
    graph: &mut Graph<E>,
    bindings: &mut Bindings,
    features: NodeId,
    head: &HeadParams<E>,
    trainable: bool,
    prefix: &str,
) -> Result<(NodeId, NodeId)> {
    let pooled = graph.global_avg_pool(features)?;
    let ew = bind(
        graph,
        bindings,
        format!("{}.embed.weight", prefix),
        &head.embed.weight,
        trainable,
    );
    let eb = bind(
        graph,
        bindings,
        format!("{}.embed.bias", prefix),
        &head.embed.bias,
        trainable,
    );
    let embedding = graph.linear(pooled, ew, eb)?;
    let cw = bind(
        graph,
        bindings,
        format!("{}.classifier.weight", prefix),
        &head.classifier.weight,
        trainable,
    );
    let cb = bind(
        graph,
        bindings,
        format!("{}.classifier.bias", prefix),
        &head.classifier.bias,
        trainable,
    );
    let logits = graph.linear(embedding, cw, cb)?;
    Ok((embedding, logits))
}

fn check_input<E: Element>(
    graph: &Graph<E>,
    config: &NetworkConfig,
    input: NodeId,
) -> Result<()> {
    let shape = graph.shape(input);
    let want = [
        config.input_channels,
        config.input_height,
        config.input_width,
    ];
    if shape.len() != 4 || shape[1..] != want || shape[0] == 0 {
        return Err(Error::dimension(format!(
            "network input must be [batch, {}, {}, {}] with batch >= 1, got {:?}",
            want[0], want[1], want[2], shape
        )));
    }
    Ok(())
}

/// Build the global branch: stem, four stages, head. Returns the tap plane
/// along with the embedding and logits.
pub fn grn_forward<E: Element>(
    graph: &mut Graph<E>,
    config: &NetworkConfig,
    grn: &mut GrnParams<E>,
    input: NodeId,
    mode: Mode,
    trainable: bool,
    bindings: &mut Bindings,
) -> Result<GrnNodes> {
    check_input(graph, config, input)?;
    let c = conv_forward(
        graph,
        bindings,
        input,
        &grn.stem_conv,
        config.stem_stride,
        1,
        trainable,
        "grn.stem.conv",
    )?;
    let b = bn_forward(
        graph,
        bindings,
        c,
        &mut grn.stem_bn,
        mode,
        trainable,
        "grn.stem.bn",
    )?;
    let r = graph.relu(b);
    let mut x = graph.maxpool2d(r, 2, 2)?;

    let start = config.mask_tap.lan_start();
    let mut tap = x;
    for (i, stage) in grn.stages.iter_mut().enumerate() {
        x = stage_forward(
            graph,
            bindings,
            x,
            stage,
            mode,
            trainable,
            &format!("grn.stage{}", i),
        )?;
        if i + 1 == start {
            tap = x;
        }
    }
    let (embedding, logits) =
        head_forward(graph, bindings, x, &grn.head, trainable, "grn.head")?;
    Ok(GrnNodes {
        tap,
        embedding,
        logits,
    })
}

/// Build the mask head and apply it to the tapped features.
///
/// The flat projection output fills the tap plane column by column (entry
/// `k` lands at row `k mod h`, column `k / h`), then `exp` makes every
/// weight positive with an all-ones baseline at zero.
pub fn mask_forward<E: Element>(
    graph: &mut Graph<E>,
    config: &NetworkConfig,
    mask: &MaskParams<E>,
    embedding: NodeId,
    tap: NodeId,
    trainable: bool,
    bindings: &mut Bindings,
) -> Result<MaskNodes> {
    let (th, tw) = config.tap_plane();
    let batch = graph.shape(embedding)[0];
    let w = bind(
        graph,
        bindings,
        "mask.weight".to_string(),
        &mask.weight,
        trainable,
    );
    let zero_bias = graph.constant(Tensor::zeros(&[th * tw]));
    let pre = graph.linear(embedding, w, zero_bias)?;
    let act = graph.relu(pre);
    let cols = graph.reshape(act, &[batch, tw, th])?;
    let grid = graph.transpose_last2(cols)?;
    let mask_node = graph.exp(grid);
    let masked = graph.apply_mask(tap, mask_node)?;
    Ok(MaskNodes {
        pre_activation: act,
        mask: mask_node,
        masked,
    })
}

/// Build the local branch on the masked features: the replicated tail stages
/// and the local head.
pub fn lan_forward<E: Element>(
    graph: &mut Graph<E>,
    config: &NetworkConfig,
    lan: &mut LanParams<E>,
    masked: NodeId,
    mode: Mode,
    trainable: bool,
    bindings: &mut Bindings,
) -> Result<LanNodes> {
    let start = config.mask_tap.lan_start();
    let mut x = masked;
    for (i, stage) in lan.stages.iter_mut().enumerate() {
        x = stage_forward(
            graph,
            bindings,
            x,
            stage,
            mode,
            trainable,
            &format!("lan.stage{}", start + i),
        )?;
    }
    let (embedding, logits) = head_forward(graph, bindings, x, &lan.head, trainable, "lan.head")?;
    Ok(LanNodes { embedding, logits })
}

/// How each part of the network runs in a full forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ForwardSetup {
    pub grn_mode: Mode,
    pub lan_mode: Mode,
    pub train_grn: bool,
    pub train_mask_lan: bool,
}

impl ForwardSetup {
    /// Everything in eval mode, nothing trainable.
    pub fn inference() -> Self {
        ForwardSetup {
            grn_mode: Mode::Eval,
            lan_mode: Mode::Eval,
            train_grn: false,
            train_mask_lan: false,
        }
    }

    /// Second training phase: the global branch frozen in eval mode, the
    /// mask and local branch training.
    pub fn stage_two() -> Self {
        ForwardSetup {
            grn_mode: Mode::Eval,
            lan_mode: Mode::Train,
            train_grn: false,
            train_mask_lan: true,
        }
    }
}

/// Build the full two-branch network.
pub fn fmn_forward<E: Element>(
    graph: &mut Graph<E>,
    params: &mut super::NetworkParams<E>,
    input: NodeId,
    setup: ForwardSetup,
    bindings: &mut Bindings,
) -> Result<FmnNodes> {
    let config = params.config.clone();
    let grn = grn_forward(
        graph,
        &config,
        &mut params.grn,
        input,
        setup.grn_mode,
        setup.train_grn,
        bindings,
    )?;
    let mask = mask_forward(
        graph,
        &config,
        &params.mask,
        grn.embedding,
        grn.tap,
        setup.train_mask_lan,
        bindings,
    )?;
    let lan = lan_forward(
        graph,
        &config,
        &mut params.lan,
        mask.masked,
        setup.lan_mode,
        setup.train_mask_lan,
        bindings,
    )?;
    Ok(FmnNodes { grn, mask, lan })
}

/// Stack same-shape `[c, h, w]` images into one `[n, c, h, w]` batch.
pub fn batch_of<E: Element>(images: &[Tensor<E>]) -> Result<Tensor<E>> {
    let first = images
        .first()
        .ok_or_else(|| Error::InvalidBatch("cannot batch zero images".to_string()))?;
    if first.rank() != 3 {
        return Err(Error::dimension(format!(
            "batch members must be [channels, height, width], got {:?}",
            first.shape()
        )));
    }
    let mut data = Vec::with_capacity(images.len() * first.numel());
    for img in images {
        if img.shape() != first.shape() {
            return Err(Error::dimension(format!(
                "batch members disagree on shape: {:?} vs {:?}",
                first.shape(),
                img.shape()
            )));
        }
        data.extend_from_slice(img.data());
    }
    let mut shape = vec![images.len()];
    shape.extend_from_slice(first.shape());
    Tensor::new(&shape, data)
}
