//! Visualize what the learned mask attends to: export grayscale heatmaps of
//! the global features, the mask plane, and the masked features for one
//! image, and print the mask as ASCII shading.
//!
//! ```sh
//! cargo run --example mask_heatmaps
//! ```

use fmn::dataset::pnm::write_pgm;
use fmn::dataset::{generate_synthetic, load_dataset, LoadedDataset, SyntheticConfig};
use fmn::network::{export_heatmap, mask_snapshot, NetworkConfig, NetworkParams};
use fmn::rng::Rng;
use fmn::train::{train_two_stage, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let base = std::env::temp_dir().join("fmn-examples").join("heatmaps");
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
    let mut params = NetworkParams::<f32>::init(&net_config, &mut Rng::stream(11, 3))?;
    let train_config = TrainConfig {
        seed: 11,
        batch_size: 8,
        stage1_epochs: 30,
        stage2_epochs: 12,
        learning_rate: 0.02,
        lr_drop_epoch: 24,
        ..TrainConfig::default()
    };
    println!("training both phases...");
    train_two_stage(&mut params, &data.train.images, &data.train.labels, &train_config)?;

    // Snapshot the tap plane for one query image: features entering the mask,
    // the mask itself (values >= 1), and the re-weighted features.
    let key = &data.query.keys[0];
    let image = &data.query.images[0];
    let snap = mask_snapshot(&params, image)?;
    let (out_h, out_w) = (net_config.input_height, net_config.input_width);

    for (tag, plane) in [
        ("features", &snap.features),
        ("mask", &snap.mask),
        ("masked", &snap.masked),
    ] {
        let pixels = export_heatmap(plane, out_h, out_w);
        let path = base.join(format!("{key}_{tag}.pgm"));
        write_pgm(&path, out_w, out_h, &pixels)?;
        println!("wrote {}", path.display());
    }

    // The mask plane as ASCII: darker = suppressed, brighter = emphasized.
    let pixels = export_heatmap(&snap.mask, out_h, out_w);
    let ramp: &[u8] = b" .:-=+*#%@";
    println!("\nmask attention for {key} (input resolution):");
    for y in 0..out_h {
        let mut line = String::new();
        for x in 0..out_w {
            let level = pixels[y * out_w + x] as usize * (ramp.len() - 1) / 255;
            let ch = ramp[level] as char;
            line.push(ch);
            line.push(ch);
        }
        println!("  {line}");
    }
    println!("\nmask plane shape {:?}, every value >= 1", snap.mask.shape());
    Ok(())
}
