//! End-to-end gradient verification through the full network.
//!
//! The op-level checker exercises single operations; this one builds the
//! same training graphs the optimizer uses (phase-one cross-entropy for
//! global-branch parameters, the phase-two composite loss for the mask and
//! local branch) and compares each parameter's reverse-mode gradient against
//! central differences obtained by perturbing that parameter and re-running
//! the forward pass.

use super::stage2_losses;
use crate::error::{Error, Result};
use crate::network::{
    fmn_forward, grn_forward, Bindings, ForwardSetup, NetworkParams,
};
use crate::tensor::{Element, Graph, Mode, NodeId, Tensor};

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub name: String,
    pub checked_elements: usize,
    pub max_relative_error: f64,
}

fn build_loss<E: Element>(
    params: &mut NetworkParams<E>,
    images: &Tensor<E>,
    labels: &[usize],
    margin: f64,
    global_phase: bool,
    trainable: bool,
) -> Result<(Graph<E>, Bindings, NodeId)> {
    let mut graph = Graph::new();
    let input = graph.constant(images.clone());
    let mut bindings = Bindings::new();
    let loss = if global_phase {
        let config = params.config.clone();
        let nodes = grn_forward(
            &mut graph,
            &config,
            &mut params.grn,
            input,
            Mode::Train,
            trainable,
            &mut bindings,
        )?;
        graph.cross_entropy(nodes.logits, labels)?
    } else {
        let mut setup = ForwardSetup::stage_two();
        setup.train_mask_lan = trainable;
        let nodes = fmn_forward(&mut graph, params, input, setup, &mut bindings)?;
        let (ce, rank, _) = stage2_losses(&mut graph, &nodes, labels, margin)?;
        graph.add(ce, rank)?
    };
    Ok((graph, bindings, loss))
}

fn perturbed_loss<E: Element>(
    params: &NetworkParams<E>,
    name: &str,
    index: usize,
    value: E,
    images: &Tensor<E>,
    labels: &[usize],
    margin: f64,
    global_phase: bool,
) -> Result<f64> {
    let mut probe = params.clone();
    probe.visit_mut(&mut |n, t| {
        if n == name {
            t.data_mut()[index] = value;
        }
    });
    let (graph, _, loss) = build_loss(&mut probe, images, labels, margin, global_phase, false)?;
    graph.scalar(loss)
}

/// Verify one named parameter's gradient through its training loss.
///
/// `max_elements` caps how many entries are probed (the largest analytic
/// gradients plus an evenly strided sample); 0 probes them all. Returns the
/// worst relative error `|analytic - numeric| / max(1, |numeric|)` over the
/// probed entries.
pub fn check_parameter_gradient<E: Element>(
    params: &NetworkParams<E>,
    name: &str,
    images: &Tensor<E>,
    labels: &[usize],
    margin: f64,
    eps: f64,
    max_elements: usize,
) -> Result<GradCheckReport> {
    if !(eps.is_finite() && eps > 0.0) {
        return Err(Error::contract(format!(
            "perturbation step must be finite and positive, got {}",
            eps
        )));
    }
    let global_phase = name.starts_with("grn.");

    let mut work = params.clone();
    let (mut graph, bindings, loss) =
        build_loss(&mut work, images, labels, margin, global_phase, true)?;
    graph.backward(loss)?;
    let node = bindings
        .iter()
        .find(|(n, _)| n == name)
        .map(|(_, id)| *id)
        .ok_or_else(|| {
            Error::contract(format!(
                "no trainable parameter named {:?} in this phase's graph",
                name
            ))
        })?;
    let analytic: Vec<f64> = graph
        .grad(node)
        .expect("bound trainable parameter has a gradient after backward")
        .iter()
        .map(|&v| v.f64())
        .collect();

    let mut baseline: Option<Tensor<E>> = None;
    params.visit(&mut |n, t| {
        if n == name {
            baseline = Some(t.clone());
        }
    });
    let baseline = baseline.expect("binding name came from the same parameter tree");

    compare_against_numeric(params, name, &analytic, &baseline, images, labels, margin, eps, max_elements, global_phase)
}

/// Probe the elements with the largest analytic gradients plus an evenly
/// strided sample. Pure striding can land exclusively on structural zeros
/// (a 3x3 kernel over a degenerate plane has dead taps), which would make
/// the comparison vacuous.
fn probe_indices(analytic: &[f64], max_elements: usize) -> Vec<usize> {
    let numel = analytic.len();
    if max_elements == 0 || max_elements >= numel {
        return (0..numel).collect();
    }
    let mut picked = std::collections::BTreeSet::new();
    let top = max_elements.div_ceil(2);
    let mut by_magnitude: Vec<usize> = (0..numel).collect();
    by_magnitude.sort_by(|&a, &b| {
        analytic[b]
            .abs()
            .total_cmp(&analytic[a].abs())
            .then(a.cmp(&b))
    });
    picked.extend(&by_magnitude[..top]);
    let stride = (numel / (max_elements - top).max(1)).max(1);
    picked.extend((0..numel).step_by(stride).take(max_elements - top));
    picked.into_iter().collect()
}

#[allow(clippy::too_many_arguments)]
fn compare_against_numeric<E: Element>(
    params: &NetworkParams<E>,
    name: &str,
    analytic: &[f64],
    baseline: &Tensor<E>,
    images: &Tensor<E>,
    labels: &[usize],
    margin: f64,
    eps: f64,
    max_elements: usize,
    global_phase: bool,
) -> Result<GradCheckReport> {
    let mut worst = 0.0f64;
    let mut checked = 0usize;
    for index in probe_indices(analytic, max_elements) {
        let center = baseline.data()[index].f64();
        let hi = E::of(center + eps);
        let lo = E::of(center - eps);
        let realized = hi.f64() - lo.f64();
        if realized <= 0.0 {
            return Err(Error::Numeric(format!(
                "perturbation step {} vanishes at element {} of {}",
                eps, index, name
            )));
        }
        let loss_hi =
            perturbed_loss(params, name, index, hi, images, labels, margin, global_phase)?;
        let loss_lo =
            perturbed_loss(params, name, index, lo, images, labels, margin, global_phase)?;
        let numeric = (loss_hi - loss_lo) / realized;
        let err = (analytic[index] - numeric).abs() / numeric.abs().max(1.0);
        if err > worst {
            worst = err;
        }
        checked += 1;
    }

    Ok(GradCheckReport {
        name: name.to_string(),
        checked_elements: checked,
        max_relative_error: worst,
    })
}

/// Verify a single-precision parameter gradient against a double-precision
/// numeric reference.
///
/// Central differences computed in `f32` cannot resolve deep-network
/// gradients to three digits at any step size — the loss itself carries about
/// 1e-7 relative rounding, which the division by the step amplifies past the
/// gradients being measured. So the analytic gradient comes from the `f32`
/// graph while the two perturbed losses per element are evaluated on an exact
/// `f64` copy of the same (f32-quantized) parameters and images.
pub fn check_single_precision_gradient(
    params: &NetworkParams<f32>,
    name: &str,
    images: &Tensor<f32>,
    labels: &[usize],
    margin: f64,
    eps: f64,
    max_elements: usize,
) -> Result<GradCheckReport> {
    if !(eps.is_finite() && eps > 0.0) {
        return Err(Error::contract(format!(
            "perturbation step must be finite and positive, got {}",
            eps
        )));
    }
    let global_phase = name.starts_with("grn.");

    let mut work = params.clone();
    let (mut graph, bindings, loss) =
        build_loss(&mut work, images, labels, margin, global_phase, true)?;
    graph.backward(loss)?;
    let node = bindings
        .iter()
        .find(|(n, _)| n == name)
        .map(|(_, id)| *id)
        .ok_or_else(|| {
            Error::contract(format!(
                "no trainable parameter named {:?} in this phase's graph",
                name
            ))
        })?;
    let analytic: Vec<f64> = graph
        .grad(node)
        .expect("bound trainable parameter has a gradient after backward")
        .iter()
        .map(|&v| v.f64())
        .collect();

    let params64 = params.cast::<f64>();
    let images64 = images.cast::<f64>();
    let mut baseline: Option<Tensor<f64>> = None;
    params64.visit(&mut |n, t| {
        if n == name {
            baseline = Some(t.clone());
        }
    });
    let baseline = baseline.expect("binding name came from the same parameter tree");

    compare_against_numeric(
        &params64,
        name,
        &analytic,
        &baseline,
        &images64,
        labels,
        margin,
        eps,
        max_elements,
        global_phase,
    )
}

/// A representative parameter from every part of the network: the stem, a
/// deep global block, both global head layers, the mask projection, the
/// first local block and the local head.
pub fn default_check_targets<E: Element>(params: &NetworkParams<E>) -> Vec<String> {
    let start = params.config.mask_tap.lan_start();
    vec![
        "grn.stem.conv.weight".to_string(),
        "grn.stage3.block0.conv1.weight".to_string(),
        "grn.stage0.block0.bn1.gamma".to_string(),
        "grn.head.embed.weight".to_string(),
        "grn.head.classifier.bias".to_string(),
        "mask.weight".to_string(),
        format!("lan.stage{}.block0.conv1.weight", start),
        "lan.head.classifier.weight".to_string(),
    ]
}
