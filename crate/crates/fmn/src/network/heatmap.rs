//! Grayscale renderings of feature planes and attention masks.

use crate::error::Result;
use crate::network::{batch_of, fmn_forward, Bindings, ForwardSetup, NetworkParams};
use crate::tensor::{Element, Graph, Tensor};

/// Collapses a `[c, h, w]` feature map to a grayscale `[out_h, out_w]` image:
/// channel-wise mean, min-max scaled to `0..=255`, nearest-neighbor upsampled.
/// A constant map scales to all zeros.
pub fn export_heatmap<E: Element>(features: &Tensor<E>, out_h: usize, out_w: usize) -> Vec<u8> {
    assert_eq!(features.rank(), 3, "expected a [channels, h, w] feature map");
    assert!(out_h > 0 && out_w > 0);
    let (c, h, w) = (
        features.shape()[0],
        features.shape()[1],
        features.shape()[2],
    );
    let data = features.to_f64_vec();
    let mut mean = vec![0.0f64; h * w];
    for channel in 0..c {
        for (acc, &v) in mean.iter_mut().zip(&data[channel * h * w..(channel + 1) * h * w]) {
            *acc += v;
        }
    }
    for v in &mut mean {
        *v /= c as f64;
    }

    let lo = mean.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = mean.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let mut out = vec![0u8; out_h * out_w];
    for y in 0..out_h {
        let sy = y * h / out_h;
        for x in 0..out_w {
            let sx = x * w / out_w;
            if span > 0.0 {
                let level = (mean[sy * w + sx] - lo) / span * 255.0;
                out[y * out_w + x] = level.round() as u8;
            }
        }
    }
    out
}

/// The three planes worth rendering for one image: what the backbone saw at
/// the tap, the attention the mask head produced, and their product.
#[derive(Debug, Clone)]
pub struct MaskSnapshot<E: Element> {
    /// Tap features, `[c, h, w]`.
    pub features: Tensor<E>,
    /// The mask as a single-channel plane, `[1, h, w]`.
    pub mask: Tensor<E>,
    /// Masked tap features, `[c, h, w]`.
    pub masked: Tensor<E>,
}

fn first_of_batch<E: Element>(batched: &Tensor<E>) -> Result<Tensor<E>> {
    let per_image: usize = batched.shape()[1..].iter().product();
    Tensor::new(&batched.shape()[1..], batched.data()[..per_image].to_vec())
}

/// Runs one image through the network in eval mode and captures the planes
/// around the mask.
pub fn mask_snapshot<E: Element>(
    params: &NetworkParams<E>,
    image: &Tensor<E>,
) -> Result<MaskSnapshot<E>> {
    // Cloned for the same reason extraction clones: the forward entry point
    // is mutable only for training-time statistics updates.
    let mut params = params.clone();
    let mut graph = Graph::new();
    let input = graph.constant(batch_of(std::slice::from_ref(image))?);
    let mut bindings = Bindings::new();
    let nodes = fmn_forward(
        &mut graph,
        &mut params,
        input,
        ForwardSetup::inference(),
        &mut bindings,
    )?;

    let features = first_of_batch(graph.value(nodes.grn.tap))?;
    let masked = first_of_batch(graph.value(nodes.mask.masked))?;
    let plane = graph.value(nodes.mask.mask);
    let mask = Tensor::new(
        &[1, plane.shape()[1], plane.shape()[2]],
        plane.data()[..plane.shape()[1] * plane.shape()[2]].to_vec(),
    )?;
    Ok(MaskSnapshot {
        features,
        mask,
        masked,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::NetworkParams;
    use crate::rng::Rng;
    use crate::testutil::tiny_config;

    #[test]
    fn constant_maps_render_as_black() {
        let features = Tensor::new(&[2, 3, 3], vec![0.7f64; 18]).unwrap();
        assert_eq!(export_heatmap(&features, 6, 6), vec![0u8; 36]);
    }

    #[test]
    fn a_hot_pixel_saturates_its_upsampled_block() {
        let mut data = vec![0.0f64; 16];
        data[5] = 2.0; // row 1, col 1 of a 4x4 plane
        let features = Tensor::new(&[1, 4, 4], data).unwrap();
        let image = export_heatmap(&features, 8, 8);
        for y in 0..8 {
            for x in 0..8 {
                let expected = if (y / 2, x / 2) == (1, 1) { 255 } else { 0 };
                assert_eq!(image[y * 8 + x], expected, "pixel ({y}, {x})");
            }
        }
    }

    #[test]
    fn levels_scale_linearly_between_the_extremes() {
        // Two channels whose means are (1, 2, 3, 4) over a 2x2 plane.
        let features = Tensor::new(
            &[2, 2, 2],
            vec![0.5, 1.0, 1.5, 2.0, 1.5, 3.0, 4.5, 6.0],
        )
        .unwrap();
        assert_eq!(export_heatmap(&features, 2, 2), vec![0, 85, 170, 255]);
    }

    #[test]
    fn upsampling_is_exact_on_integer_ratios() {
        let features = Tensor::new(&[1, 2, 1], vec![0.0f32, 1.0]).unwrap();
        let image = export_heatmap(&features, 4, 2);
        assert_eq!(image, vec![0, 0, 0, 0, 255, 255, 255, 255]);
    }

    #[test]
    fn snapshots_expose_the_mask_identity() {
        let config = tiny_config();
        let mut rng = Rng::seeded(11);
        let params = NetworkParams::<f64>::init(&config, &mut rng).unwrap();
        let image_data: Vec<f64> = (0..3 * 16 * 8).map(|_| rng.uniform(0.0, 1.0)).collect();
        let image = Tensor::new(&[3, 16, 8], image_data).unwrap();

        let snap = mask_snapshot(&params, &image).unwrap();
        let (c, h, w) = config.tap_shape();
        assert_eq!(snap.features.shape(), &[c, h, w]);
        assert_eq!(snap.masked.shape(), &[c, h, w]);
        assert_eq!(snap.mask.shape(), &[1, h, w]);

        // masked == features * mask, channel by channel.
        for channel in 0..c {
            for px in 0..h * w {
                let expected = snap.features.data()[channel * h * w + px] * snap.mask.data()[px];
                let got = snap.masked.data()[channel * h * w + px];
                assert!((expected - got).abs() < 1e-12);
            }
        }
        // Mask entries are exp-positive, at least one.
        assert!(snap.mask.data().iter().all(|&m| m >= 1.0));
    }
}
