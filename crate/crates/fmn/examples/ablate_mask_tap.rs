//! Compare the four mask tap points. The mask can read the shared trunk
//! right after the stem pool or after any of the next three residual stages;
//! earlier taps give the local branch more layers of its own.
//!
//! Phase one is shared across all four variants (the global branch never sees
//! the mask), so it is trained once and copied.
//!
//! ```sh
//! cargo run --example ablate_mask_tap
//! ```

use fmn::dataset::{generate_synthetic, load_dataset, LoadedDataset, SyntheticConfig};
use fmn::descriptor::{extract_descriptors, DescriptorBranch};
use fmn::eval::{evaluate, EvalProtocol};
use fmn::network::{MaskTap, NetworkConfig, NetworkParams};
use fmn::rng::Rng;
use fmn::train::{train_stage1, train_stage2, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let base = std::env::temp_dir().join("fmn-examples").join("ablate");
    std::fs::create_dir_all(&base)?;

    let dataset_config = SyntheticConfig {
        num_identities: 8,
        images_per_identity: 12,
        num_cameras: 2,
        image_shape: [3, 32, 16],
        confusable_pairs: 4,
        occlusion_prob: 0.15,
        noise_sigma: 0.02,
        seed: 11,
    };
    generate_synthetic(&dataset_config, &base)?;
    let data: LoadedDataset<f32> = load_dataset(base.join("manifest.json"))?;

    let base_config = NetworkConfig {
        input_channels: 3,
        input_height: 32,
        input_width: 16,
        stem_stride: 1,
        channels: [8, 16, 16, 16],
        blocks_per_stage: 1,
        feature_dim: 16,
        num_classes: data.num_train_classes(),
        ..NetworkConfig::default()
    };
    let train_config = TrainConfig {
        seed: 11,
        batch_size: 8,
        stage1_epochs: 30,
        stage2_epochs: 12,
        learning_rate: 0.02,
        lr_drop_epoch: 24,
        ..TrainConfig::default()
    };

    println!("training the shared global branch once...");
    let mut shared = NetworkParams::<f32>::init(&base_config, &mut Rng::stream(11, 3))?;
    train_stage1(&mut shared, &data.train.images, &data.train.labels, &train_config)?;

    let protocol = EvalProtocol::default();
    println!("\ntap     rank-1      mAP   (local branch depth varies with the tap)");
    for tap in MaskTap::ALL {
        let config = NetworkConfig {
            mask_tap: tap,
            ..base_config.clone()
        };
        // Fresh mask and local branch for this tap; the trained global branch
        // is copied in unchanged.
        let mut params = NetworkParams::<f32>::init(&config, &mut Rng::stream(11, 3))?;
        params.grn = shared.grn.clone();
        train_stage2(&mut params, &data.train.images, &data.train.labels, &train_config)?;

        let extract = |side: &fmn::dataset::SplitData<f32>| {
            extract_descriptors(
                &params,
                &side.images,
                &side.keys,
                &side.identities,
                &side.cameras,
                DescriptorBranch::Fused,
                0.5,
                16,
            )
        };
        let queries = extract(&data.query)?;
        let gallery = extract(&data.gallery)?;
        let (report, _) = evaluate(&queries, &gallery, &protocol, None)?;
        println!(
            "{:6} {:7.3}  {:7.3}",
            tap.name(),
            report.cmc[&1],
            report.map_score
        );
    }
    Ok(())
}
