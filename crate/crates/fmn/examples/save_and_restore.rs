//! Persist a trained network to a checkpoint directory and restore it, the
//! way a long run pauses between the two training phases.
//!
//! A checkpoint is a directory: one binary tensor file per parameter, the
//! norm layers' running statistics alongside them, and a JSON manifest
//! recording the architecture and the expected tensor names.
//!
//! ```sh
//! cargo run --example save_and_restore
//! ```

use fmn::dataset::{generate_synthetic, load_dataset, LoadedDataset, SyntheticConfig};
use fmn::network::{load_checkpoint, save_checkpoint, NetworkConfig, NetworkParams};
use fmn::rng::Rng;
use fmn::train::{train_stage1, train_stage2, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let base = std::env::temp_dir().join("fmn-examples").join("checkpoint");
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
    generate_synthetic(&dataset_config, &base.join("data"))?;
    let data: LoadedDataset<f32> = load_dataset(base.join("data/manifest.json"))?;

    let net_config = NetworkConfig {
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

    // Phase one, then persist.
    let mut params = NetworkParams::<f32>::init(&net_config, &mut Rng::stream(11, 3))?;
    train_stage1(&mut params, &data.train.images, &data.train.labels, &train_config)?;
    let ckpt_dir = base.join("stage1");
    save_checkpoint(&ckpt_dir, &params)?;
    println!("saved phase-one checkpoint to {}", ckpt_dir.display());

    // Restore into a fresh parameter set — as a later process would — and
    // confirm it is byte-identical at f32 precision.
    let restored: NetworkParams<f32> = load_checkpoint(&ckpt_dir)?;
    assert_eq!(restored.digest(), params.digest());
    println!(
        "restored checkpoint matches the in-memory network (digest {:016x})",
        restored.digest()
    );

    // Continue with phase two from the restored weights.
    let mut resumed = restored;
    let log = train_stage2(&mut resumed, &data.train.images, &data.train.labels, &train_config)?;
    let last = log.last().unwrap();
    println!(
        "resumed phase two for {} epochs, final training accuracy {:.1}%",
        log.len(),
        100.0 * last.train_accuracy
    );

    let final_dir = base.join("stage2");
    save_checkpoint(&final_dir, &resumed)?;
    println!("saved final checkpoint to {}", final_dir.display());
    Ok(())
}
