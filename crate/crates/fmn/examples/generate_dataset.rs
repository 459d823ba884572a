//! Render the synthetic re-identification benchmark to disk, load it back,
//! and print what the splits contain.
//!
//! ```sh
//! cargo run --example generate_dataset
//! ```

use fmn::dataset::{generate_synthetic, load_dataset, LoadedDataset, SyntheticConfig};
use fmn::tensor::Element;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out_dir = std::env::temp_dir().join("fmn-examples").join("dataset");
    std::fs::create_dir_all(&out_dir)?;

    // The default configuration is the 16-identity benchmark: 8 confusable
    // pairs that share a body template and differ only in a small patch,
    // 12 images per identity across 3 cameras with distinct brightness.
    let config = SyntheticConfig::default();
    let manifest = generate_synthetic(&config, &out_dir)?;
    println!(
        "rendered {} images ({} identities x {} per identity) into {}",
        manifest.entries.len(),
        config.num_identities,
        config.images_per_identity,
        out_dir.display()
    );

    let data: LoadedDataset<f32> = load_dataset(out_dir.join("manifest.json"))?;
    println!(
        "splits: {} train / {} query / {} gallery, {} training classes",
        data.train.images.len(),
        data.query.images.len(),
        data.gallery.images.len(),
        data.num_train_classes()
    );
    println!(
        "image tensors are {:?}, values in [0, 1]",
        data.train.images[0].shape()
    );

    // Confusable pairs are the hard part of the benchmark: identities 8 and 9
    // (the first evaluation pair) share everything except the identity patch.
    let twin_a = &manifest.entries[8 * config.images_per_identity];
    let twin_b = &manifest.entries[9 * config.images_per_identity];
    println!(
        "confusable twins: {} vs {} (same body template, different patch)",
        twin_a.path, twin_b.path
    );

    // A quick look at one rendered image: luminance as ASCII art.
    let img = &data.query.images[0];
    let (h, w) = (img.shape()[1], img.shape()[2]);
    println!(
        "\n{} (identity {}, camera {}):",
        data.query.keys[0], data.query.identities[0], data.query.cameras[0]
    );
    let ramp: &[u8] = b" .:-=+*#%@";
    for y in 0..h {
        let mut line = String::new();
        for x in 0..w {
            let mut luma = 0.0f64;
            for c in 0..3 {
                luma += img.data()[(c * h + y) * w + x].f64();
            }
            let level = ((luma / 3.0) * (ramp.len() - 1) as f64).round() as usize;
            let ch = ramp[level.min(ramp.len() - 1)] as char;
            line.push(ch);
            line.push(ch);
        }
        println!("  {line}");
    }
    Ok(())
}
