//! Seeded synthetic identity dataset plus its on-disk format.
//!
//! Each identity is a little pedestrian cartoon: a body template (head, torso
//! with optional stripes, legs, shoes) that acts as the global appearance
//! cue, plus a small identity patch at a body location that acts as the local
//! cue. Confusable identity pairs share a template and differ only in the
//! patch, so global appearance alone cannot separate them. Images vary by
//! camera brightness, translation, an optional occluding block, and pixel
//! noise, and everything is driven by one seed.

pub mod pnm;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Element, Tensor};

/// Knobs for the synthetic generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    pub num_identities: usize,
    pub images_per_identity: usize,
    pub num_cameras: usize,
    /// Channels, height, width; channels must be 3.
    pub image_shape: [usize; 3],
    /// Leading identity pairs (0,1), (2,3), ... share a body template.
    pub confusable_pairs: usize,
    pub occlusion_prob: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    /// The benchmark preset: 16 identities in 8 confusable pairs, 12 images
    /// each over 3 cameras, with occlusion and mild noise.
    fn default() -> Self {
        SyntheticConfig {
            num_identities: 16,
            images_per_identity: 12,
            num_cameras: 3,
            image_shape: [3, 64, 32],
            confusable_pairs: 8,
            occlusion_prob: 0.2,
            noise_sigma: 0.02,
            seed: 42,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_identities < 2 || self.num_identities % 2 != 0 {
            return Err(Error::config(format!(
                "num_identities = {} must be an even number of at least 2 \
                 so the train and test halves stay balanced",
                self.num_identities
            )));
        }
        if self.images_per_identity < 2 {
            return Err(Error::config(format!(
                "images_per_identity = {} must be at least 2",
                self.images_per_identity
            )));
        }
        if self.num_cameras < 2 {
            return Err(Error::config(format!(
                "num_cameras = {} must be at least 2",
                self.num_cameras
            )));
        }
        if self.confusable_pairs > self.num_identities / 2 {
            return Err(Error::config(format!(
                "confusable_pairs = {} exceeds num_identities / 2 = {}",
                self.confusable_pairs,
                self.num_identities / 2
            )));
        }
        let [c, h, w] = self.image_shape;
        if c != 3 {
            return Err(Error::config(format!(
                "image_shape channels = {c} must be 3 (RGB files)"
            )));
        }
        if h < 16 || w < 8 {
            return Err(Error::config(format!(
                "image_shape {h}x{w} is too small; need at least 16x8"
            )));
        }
        if !(0.0..=1.0).contains(&self.occlusion_prob) {
            return Err(Error::config(format!(
                "occlusion_prob = {} is outside [0, 1]",
                self.occlusion_prob
            )));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::config(format!(
                "noise_sigma = {} must be nonnegative",
                self.noise_sigma
            )));
        }
        Ok(())
    }
}

/// Which retrieval role an image plays.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Query,
    Gallery,
}

/// One image in the manifest; `path` is relative to the manifest file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub identity: u32,
    pub camera: u32,
    pub split: Split,
}

/// The dataset's table of contents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format: String,
    pub num_identities: usize,
    pub image_shape: [usize; 3],
    pub entries: Vec<ManifestEntry>,
}

pub const MANIFEST_FORMAT: &str = "fmn-dataset";
pub const MANIFEST_NAME: &str = "manifest.json";

struct Template {
    head: [f64; 3],
    torso: [f64; 3],
    stripe: Option<[f64; 3]>,
    stripe_period: usize,
    legs: [f64; 3],
    shoes: [f64; 3],
}

struct Patch {
    anchor: usize,
    color: [f64; 3],
    checkered: bool,
}

fn draw_color(rng: &mut Rng) -> [f64; 3] {
    [
        rng.uniform(0.1, 0.9),
        rng.uniform(0.1, 0.9),
        rng.uniform(0.1, 0.9),
    ]
}

fn draw_template(rng: &mut Rng) -> Template {
    let tone = rng.uniform(0.5, 0.85);
    Template {
        head: [tone, tone * 0.9, tone * 0.8],
        torso: draw_color(rng),
        stripe: if rng.chance(0.5) {
            Some(draw_color(rng))
        } else {
            None
        },
        stripe_period: 2 + rng.below(3),
        legs: draw_color(rng),
        shoes: draw_color(rng),
    }
}

fn draw_patch(rng: &mut Rng) -> Patch {
    Patch {
        anchor: rng.below(4),
        color: draw_color(rng),
        checkered: rng.chance(0.5),
    }
}

const BACKGROUND: f64 = 0.1;

/// Renders the clean base image for one identity as `[3][h*w]` planes.
fn render_identity(template: &Template, patch: &Patch, h: usize, w: usize) -> Vec<f64> {
    let mut image = vec![BACKGROUND; 3 * h * w];
    let margin = w / 8;
    let head_end = h / 6;
    let torso_end = h / 2;
    let leg_end = h * 7 / 8;

    for y in 0..h {
        for x in margin..w - margin {
            let color = if y < head_end {
                template.head
            } else if y < torso_end {
                match template.stripe {
                    Some(stripe) if (y - head_end) / template.stripe_period % 2 == 1 => stripe,
                    _ => template.torso,
                }
            } else if y < leg_end {
                template.legs
            } else {
                template.shoes
            };
            for c in 0..3 {
                image[c * h * w + y * w + x] = color[c];
            }
        }
    }

    let ph = h / 8;
    let pw = w / 4;
    let (top, left) = match patch.anchor {
        0 => (h / 4, w / 2 - pw / 2),          // chest
        1 => (torso_end - ph, w / 4),          // waist
        2 => (h * 2 / 3, w / 2 - pw / 2),      // knee
        _ => (head_end, w - margin - pw),      // shoulder
    };
    for y in top..(top + ph).min(h) {
        for x in left..(left + pw).min(w) {
            let flip = patch.checkered && ((y - top) / 2 + (x - left) / 2) % 2 == 1;
            for c in 0..3 {
                let v = if flip { 1.0 - patch.color[c] } else { patch.color[c] };
                image[c * h * w + y * w + x] = v;
            }
        }
    }
    image
}

fn camera_brightness(camera: usize, num_cameras: usize) -> f64 {
    0.8 + 0.3 * camera as f64 / (num_cameras - 1) as f64
}

/// Applies per-image variation and quantizes to interleaved RGB bytes.
fn render_image(
    base: &[f64],
    h: usize,
    w: usize,
    brightness: f64,
    rng: &mut Rng,
    occlusion_prob: f64,
    noise_sigma: f64,
) -> Vec<u8> {
    let dy = rng.range_inclusive(-2, 2);
    let dx = rng.range_inclusive(-2, 2);
    let occlude = rng.chance(occlusion_prob);
    let block = if occlude {
        let top = rng.below(h / 2) + h / 4;
        let left = rng.below(w / 2);
        let bh = h / 6 + rng.below(h / 6);
        let bw = w / 3 + rng.below(w / 3);
        Some((top, left, bh, bw))
    } else {
        None
    };

    let mut out = vec![0u8; 3 * h * w];
    for y in 0..h {
        for x in 0..w {
            let sy = y as i64 + dy;
            let sx = x as i64 + dx;
            for c in 0..3 {
                let mut v = if sy >= 0 && sy < h as i64 && sx >= 0 && sx < w as i64 {
                    base[c * h * w + sy as usize * w + sx as usize]
                } else {
                    BACKGROUND
                };
                v *= brightness;
                if let Some((top, left, bh, bw)) = block {
                    if y >= top && y < top + bh && x >= left && x < left + bw {
                        v = 0.5;
                    }
                }
                if noise_sigma > 0.0 {
                    v += noise_sigma * rng.normal();
                }
                out[(y * w + x) * 3 + c] = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
            }
        }
    }
    out
}

/// Generates the dataset under `out_dir` and writes its manifest.
///
/// The first half of the identities is the training split. For each test
/// identity, the first image seen per camera becomes a query and the rest go
/// to the gallery, which guarantees every query a cross-camera match.
pub fn generate_synthetic(config: &SyntheticConfig, out_dir: impl AsRef<Path>) -> Result<DatasetManifest> {
    config.validate()?;
    let out_dir = out_dir.as_ref();
    let image_dir = out_dir.join("images");
    fs::create_dir_all(&image_dir).map_err(|err| Error::io(&image_dir, err))?;

    let [_, h, w] = config.image_shape;
    let shared = config.confusable_pairs;
    let num_templates = shared + (config.num_identities - 2 * shared);

    let mut style_rng = Rng::stream(config.seed, 0);
    let templates: Vec<Template> = (0..num_templates).map(|_| draw_template(&mut style_rng)).collect();
    let patches: Vec<Patch> = (0..config.num_identities)
        .map(|_| draw_patch(&mut style_rng))
        .collect();
    let template_of = |identity: usize| -> usize {
        if identity < 2 * shared {
            identity / 2
        } else {
            shared + (identity - 2 * shared)
        }
    };

    let mut image_rng = Rng::stream(config.seed, 1);
    let mut entries = Vec::new();
    let train_cut = config.num_identities / 2;

    for identity in 0..config.num_identities {
        let base = render_identity(&templates[template_of(identity)], &patches[identity], h, w);
        let mut seen_cameras = Vec::new();
        for index in 0..config.images_per_identity {
            let camera = index % config.num_cameras;
            let pixels = render_image(
                &base,
                h,
                w,
                camera_brightness(camera, config.num_cameras),
                &mut image_rng,
                config.occlusion_prob,
                config.noise_sigma,
            );
            let name = format!("id{identity:03}_c{camera}_i{index:02}.ppm");
            let path = image_dir.join(&name);
            pnm::write_ppm(&path, w, h, &pixels)?;

            let split = if identity < train_cut {
                Split::Train
            } else if seen_cameras.contains(&camera) {
                Split::Gallery
            } else {
                seen_cameras.push(camera);
                Split::Query
            };
            entries.push(ManifestEntry {
                path: format!("images/{name}"),
                identity: identity as u32,
                camera: camera as u32,
                split,
            });
        }
    }

    let manifest = DatasetManifest {
        format: MANIFEST_FORMAT.to_string(),
        num_identities: config.num_identities,
        image_shape: config.image_shape,
        entries,
    };
    let manifest_path = out_dir.join(MANIFEST_NAME);
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serialization");
    text.push('\n');
    fs::write(&manifest_path, text).map_err(|err| Error::io(&manifest_path, err))?;
    Ok(manifest)
}

/// Images and labels for one split.
#[derive(Debug, Clone)]
pub struct SplitData<E: Element> {
    pub images: Vec<Tensor<E>>,
    /// Dense labels in `[0, num classes)`, remapped per split family.
    pub labels: Vec<usize>,
    pub identities: Vec<u32>,
    pub cameras: Vec<u32>,
    pub keys: Vec<String>,
}

impl<E: Element> SplitData<E> {
    fn empty() -> Self {
        SplitData {
            images: Vec::new(),
            labels: Vec::new(),
            identities: Vec::new(),
            cameras: Vec::new(),
            keys: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

/// A dataset loaded back into tensors scaled to `[0, 1]`.
#[derive(Debug, Clone)]
pub struct LoadedDataset<E: Element> {
    pub manifest: DatasetManifest,
    pub train: SplitData<E>,
    pub query: SplitData<E>,
    pub gallery: SplitData<E>,
    /// Dense training label to original identity, ascending.
    pub train_label_map: Vec<u32>,
}

impl<E: Element> LoadedDataset<E> {
    pub fn num_train_classes(&self) -> usize {
        self.train_label_map.len()
    }
}

fn dense_map(identities: impl Iterator<Item = u32>) -> BTreeMap<u32, usize> {
    let unique: std::collections::BTreeSet<u32> = identities.collect();
    unique.into_iter().enumerate().map(|(i, id)| (id, i)).collect()
}

/// Reads a manifest and every image it references.
pub fn load_dataset<E: Element>(manifest_path: impl AsRef<Path>) -> Result<LoadedDataset<E>> {
    let manifest_path = manifest_path.as_ref();
    let text = fs::read_to_string(manifest_path).map_err(|err| Error::io(manifest_path, err))?;
    let manifest: DatasetManifest = serde_json::from_str(&text).map_err(|err| {
        Error::Parse(format!("{}: {err}", manifest_path.display()))
    })?;
    if manifest.format != MANIFEST_FORMAT {
        return Err(Error::Parse(format!(
            "{}: format {:?}, expected {MANIFEST_FORMAT:?}",
            manifest_path.display(),
            manifest.format
        )));
    }
    let root: PathBuf = manifest_path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let [channels, height, width] = manifest.image_shape;

    let train_map = dense_map(
        manifest
            .entries
            .iter()
            .filter(|e| e.split == Split::Train)
            .map(|e| e.identity),
    );
    let test_map = dense_map(
        manifest
            .entries
            .iter()
            .filter(|e| e.split != Split::Train)
            .map(|e| e.identity),
    );

    let mut train = SplitData::empty();
    let mut query = SplitData::empty();
    let mut gallery = SplitData::empty();
    for entry in &manifest.entries {
        let path = root.join(&entry.path);
        let (w, h, pixels) = pnm::read_ppm(&path)?;
        if w != width || h != height || channels != 3 {
            return Err(Error::dimension(format!(
                "{}: image is {w}x{h}, manifest declares {width}x{height}",
                path.display()
            )));
        }
        // Interleaved bytes to planar [3, h, w] in [0, 1].
        let mut data = vec![E::of(0.0); 3 * h * w];
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    data[c * h * w + y * w + x] =
                        E::of(pixels[(y * w + x) * 3 + c] as f64 / 255.0);
                }
            }
        }
        let image = Tensor::new(&[3, h, w], data)?;
        let key = Path::new(&entry.path)
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| {
                Error::Parse(format!("manifest entry {:?} has no file name", entry.path))
            })?
            .to_string();

        let (split, map) = match entry.split {
            Split::Train => (&mut train, &train_map),
            Split::Query => (&mut query, &test_map),
            Split::Gallery => (&mut gallery, &test_map),
        };
        split.images.push(image);
        split.labels.push(map[&entry.identity]);
        split.identities.push(entry.identity);
        split.cameras.push(entry.camera);
        split.keys.push(key);
    }

    Ok(LoadedDataset {
        manifest,
        train,
        query,
        gallery,
        train_label_map: train_map.keys().copied().collect(),
    })
}
