use super::{Element, Graph, NodeId, Tensor};
use crate::error::{Error, Result};

/// Compare reverse-mode gradients against central differences.
///
/// `build` must construct the same scalar-valued computation each time it is
/// called; it runs once for the analytic pass and twice per input element for
/// the numeric passes. Returns the worst relative error
/// `|analytic - numeric| / max(1, |numeric|)` over all elements of `input`.
///
/// The numeric derivative divides by the realized step `x_hi - x_lo` after
/// rounding to the storage type, which keeps the estimate honest for `f32`
/// where `eps` itself may not be representable around `x`.
pub fn grad_check<E, F>(input: &Tensor<E>, eps: f64, mut build: F) -> Result<f64>
where
    E: Element,
    F: FnMut(&mut Graph<E>, NodeId) -> Result<NodeId>,
{
    if !(eps.is_finite() && eps > 0.0) {
        return Err(Error::contract(format!(
            "grad_check: step must be finite and positive, got {}",
            eps
        )));
    }

    let analytic: Vec<f64> = {
        let mut graph = Graph::new();
        let mut probe = input.clone();
        probe.requires_grad = true;
        let x = graph.leaf(probe);
        let loss = build(&mut graph, x)?;
        graph.scalar(loss)?;
        graph.backward(loss)?;
        graph
            .grad(x)
            .expect("backward materializes gradients for leaves that require them")
            .iter()
            .map(|&v| v.f64())
            .collect()
    };

    let eval = |build: &mut F, point: &Tensor<E>| -> Result<f64> {
        let mut graph = Graph::new();
        let x = graph.constant(point.clone());
        let loss = build(&mut graph, x)?;
        graph.scalar(loss)
    };

    let mut worst = 0.0f64;
    for i in 0..input.numel() {
        let center = input.data()[i].f64();
        let hi = E::of(center + eps);
        let lo = E::of(center - eps);
        let step = hi.f64() - lo.f64();
        if step <= 0.0 {
            return Err(Error::Numeric(format!(
                "grad_check: step {} vanishes at element {} (value {})",
                eps, i, center
            )));
        }

        let mut point = input.clone();
        point.requires_grad = false;
        point.data_mut()[i] = hi;
        let loss_hi = eval(&mut build, &point)?;
        point.data_mut()[i] = lo;
        let loss_lo = eval(&mut build, &point)?;

        let numeric = (loss_hi - loss_lo) / step;
        let err = (analytic[i] - numeric).abs() / numeric.abs().max(1.0);
        if err > worst {
            worst = err;
        }
    }
    Ok(worst)
}
