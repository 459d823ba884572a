//! Small fixtures shared by the unit tests.

use crate::network::NetworkConfig;
use crate::rng::Rng;
use crate::tensor::{Element, Tensor};

/// The smallest network that still exercises every code path: one block per
/// stage, a mask plane of 2x1 at the default tap, four classes.
pub fn tiny_config() -> NetworkConfig {
    NetworkConfig {
        input_channels: 3,
        input_height: 16,
        input_width: 8,
        stem_stride: 1,
        channels: [4, 8, 8, 8],
        blocks_per_stage: 1,
        feature_dim: 8,
        num_classes: 4,
        mask_tap: crate::network::MaskTap::Res4,
    }
}

/// A `[batch, c, h, w]` tensor of uniform noise in `[0, 1)`.
pub fn random_batch<E: Element>(config: &NetworkConfig, batch: usize, seed: u64) -> Tensor<E> {
    let mut rng = Rng::seeded(seed);
    let numel = batch * config.input_channels * config.input_height * config.input_width;
    let values: Vec<f64> = (0..numel).map(|_| rng.uniform(0.0, 1.0)).collect();
    Tensor::from_f64(
        &[
            batch,
            config.input_channels,
            config.input_height,
            config.input_width,
        ],
        &values,
    )
    .unwrap()
}

/// A trivially separable labeled image set: class `k` lights up the `k`-th
/// horizontal band of the image, plus a little noise.
pub fn banded_dataset<E: Element>(
    config: &NetworkConfig,
    per_class: usize,
    classes: usize,
    seed: u64,
) -> (Vec<Tensor<E>>, Vec<usize>) {
    assert!(classes >= 2 && classes <= config.num_classes);
    let (c, h, w) = (
        config.input_channels,
        config.input_height,
        config.input_width,
    );
    let mut rng = Rng::seeded(seed);
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for class in 0..classes {
        let band = h * class / classes..h * (class + 1) / classes;
        for _ in 0..per_class {
            let mut values = vec![0.0f64; c * h * w];
            for ch in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        let base = if band.contains(&y) { 0.9 } else { 0.1 };
                        values[(ch * h + y) * w + x] = base + rng.uniform(-0.05, 0.05);
                    }
                }
            }
            images.push(Tensor::from_f64(&[c, h, w], &values).unwrap());
            labels.push(class);
        }
    }
    (images, labels)
}
