//! Retrieval descriptors: branch fusion, gallery ranking, and the FMND
//! descriptor file format.
//!
//! A descriptor is the unit-normalized global embedding, the unit-normalized
//! local embedding, or their weighted concatenation `[a*g ; (1-a)*l]`. The
//! concatenated form keeps the two halves orthogonal, so Euclidean ranking
//! decomposes into a weighted sum of per-branch distances.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::network::{batch_of, fmn_forward, Bindings, ForwardSetup, NetworkParams};
use crate::tensor::{Element, Graph, Tensor};

/// Fusion weight used when no explicit value is configured.
pub const DEFAULT_ALPHA: f64 = 0.5;

/// Norms at or below this threshold are treated as degenerate.
pub const MIN_NORM: f64 = 1e-12;

const DESCRIPTOR_MAGIC: &[u8; 4] = b"FMND";

/// One stored descriptor with the metadata retrieval needs.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorRecord {
    pub key: String,
    pub identity: u32,
    pub camera: u32,
    pub values: Vec<f32>,
}

/// A set of equally sized descriptors, used for both query and gallery sides.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorSet {
    pub dim: usize,
    pub records: Vec<DescriptorRecord>,
}

impl DescriptorSet {
    pub fn new(dim: usize) -> Self {
        DescriptorSet {
            dim,
            records: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    fn check_record(&self, record: &DescriptorRecord) -> Result<()> {
        if record.values.len() != self.dim {
            return Err(Error::dimension(format!(
                "descriptor {} has {} values, expected {}",
                record.key,
                record.values.len(),
                self.dim
            )));
        }
        if record.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "descriptor {} contains a non-finite value",
                record.key
            )));
        }
        Ok(())
    }

    pub fn push(&mut self, record: DescriptorRecord) -> Result<()> {
        self.check_record(&record)?;
        self.records.push(record);
        Ok(())
    }
}

/// Which embedding a descriptor is built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DescriptorBranch {
    /// Weighted concatenation of both normalized embeddings.
    Fused,
    /// Normalized global embedding only.
    Grn,
    /// Normalized local embedding only.
    Lan,
}

impl DescriptorBranch {
    pub const ALL: [DescriptorBranch; 3] = [
        DescriptorBranch::Fused,
        DescriptorBranch::Grn,
        DescriptorBranch::Lan,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DescriptorBranch::Fused => "fused",
            DescriptorBranch::Grn => "grn",
            DescriptorBranch::Lan => "lan",
        }
    }
}

impl std::fmt::Display for DescriptorBranch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for DescriptorBranch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fused" => Ok(DescriptorBranch::Fused),
            "grn" => Ok(DescriptorBranch::Grn),
            "lan" => Ok(DescriptorBranch::Lan),
            other => Err(Error::config(format!(
                "unknown descriptor branch {other:?}; expected fused, grn, or lan"
            ))),
        }
    }
}

/// Scales `v` to unit Euclidean length.
///
/// Near-zero vectors are refused instead of quietly turning into NaN; a model
/// that emits them is broken and should fail loudly.
pub fn l2_normalize(v: &[f64]) -> Result<Vec<f64>> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !norm.is_finite() || norm <= MIN_NORM {
        return Err(Error::Numeric(format!(
            "cannot normalize a vector with norm {norm:e}"
        )));
    }
    Ok(v.iter().map(|x| x / norm).collect())
}

/// Concatenates the normalized embeddings as `[alpha*g ; (1-alpha)*l]`.
///
/// The result has squared norm `alpha^2 + (1-alpha)^2` whenever both inputs
/// are valid, which every consumer may rely on.
pub fn build_descriptor(g: &[f64], l: &[f64], alpha: f64) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::contract(format!(
            "fusion weight {alpha} is outside [0, 1]"
        )));
    }
    let g_hat = l2_normalize(g)?;
    let l_hat = l2_normalize(l)?;
    let mut out = Vec::with_capacity(g_hat.len() + l_hat.len());
    out.extend(g_hat.iter().map(|x| alpha * x));
    out.extend(l_hat.iter().map(|x| (1.0 - alpha) * x));
    Ok(out)
}

/// Euclidean distance with double-precision accumulation.
pub fn euclidean(a: &[f32], b: &[f32]) -> f64 {
    assert_eq!(a.len(), b.len(), "distance requires equal dimensions");
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// Orders gallery indices by ascending distance to `query`.
///
/// Ties are broken by ascending key so identical descriptor files always rank
/// identically. Returns `(gallery index, distance)` pairs.
pub fn rank_gallery(query: &[f32], gallery: &DescriptorSet) -> Result<Vec<(usize, f64)>> {
    if gallery.is_empty() {
        return Err(Error::contract("cannot rank an empty gallery"));
    }
    if query.len() != gallery.dim {
        return Err(Error::dimension(format!(
            "query has {} values but the gallery stores {}-dimensional descriptors",
            query.len(),
            gallery.dim
        )));
    }
    let mut order: Vec<(usize, f64)> = gallery
        .records
        .iter()
        .enumerate()
        .map(|(i, record)| (i, euclidean(query, &record.values)))
        .collect();
    order.sort_by(|(i, di), (j, dj)| {
        di.total_cmp(dj)
            .then_with(|| gallery.records[*i].key.cmp(&gallery.records[*j].key))
    });
    Ok(order)
}

/// Runs the network in inference mode and builds one descriptor per image.
///
/// `keys`, `identities`, and `cameras` run parallel to `images`. Images are
/// processed in chunks of `batch_size`; every sample is independent in
/// inference mode, so the chunking never changes the output.
pub fn extract_descriptors<E: Element>(
    params: &NetworkParams<E>,
    images: &[Tensor<E>],
    keys: &[String],
    identities: &[u32],
    cameras: &[u32],
    branch: DescriptorBranch,
    alpha: f64,
    batch_size: usize,
) -> Result<DescriptorSet> {
    if keys.len() != images.len()
        || identities.len() != images.len()
        || cameras.len() != images.len()
    {
        return Err(Error::contract(format!(
            "{} images with {} keys, {} identities, {} cameras",
            images.len(),
            keys.len(),
            identities.len(),
            cameras.len()
        )));
    }
    if batch_size == 0 {
        return Err(Error::contract("extraction batch size must be at least 1"));
    }
    let feature_dim = params.config.feature_dim;
    let dim = match branch {
        DescriptorBranch::Fused => 2 * feature_dim,
        DescriptorBranch::Grn | DescriptorBranch::Lan => feature_dim,
    };
    let mut set = DescriptorSet::new(dim);
    // The forward entry point takes the parameters mutably because training
    // updates normalization statistics through it; inference never writes, so
    // a working copy keeps this function read-only for callers.
    let mut params = params.clone();

    for start in (0..images.len()).step_by(batch_size) {
        let end = (start + batch_size).min(images.len());
        let chunk = &images[start..end];
        let mut graph = Graph::new();
        let input = graph.constant(batch_of(chunk)?);
        let mut bindings = Bindings::new();
        let nodes = fmn_forward(
            &mut graph,
            &mut params,
            input,
            ForwardSetup::inference(),
            &mut bindings,
        )?;
        let global = graph.value(nodes.grn.embedding).to_f64_vec();
        let local = graph.value(nodes.lan.embedding).to_f64_vec();

        for row in 0..chunk.len() {
            let key = &keys[start + row];
            let g = &global[row * feature_dim..(row + 1) * feature_dim];
            let l = &local[row * feature_dim..(row + 1) * feature_dim];
            let values = match branch {
                DescriptorBranch::Fused => build_descriptor(g, l, alpha),
                DescriptorBranch::Grn => l2_normalize(g),
                DescriptorBranch::Lan => l2_normalize(l),
            }
            .map_err(|err| Error::Numeric(format!("descriptor for {key}: {err}")))?;
            set.push(DescriptorRecord {
                key: key.clone(),
                identity: identities[start + row],
                camera: cameras[start + row],
                values: values.iter().map(|&v| v as f32).collect(),
            })?;
        }
    }
    Ok(set)
}

fn u32_of(value: usize, what: &str) -> Result<u32> {
    u32::try_from(value)
        .map_err(|_| Error::contract(format!("{what} {value} does not fit the file format")))
}

/// Writes a descriptor set to the FMND binary format.
///
/// Layout: magic `FMND`, little-endian u32 count and dimension, then per
/// record a u32 key length, the UTF-8 key, u32 identity, u32 camera, and the
/// values as little-endian 32-bit floats.
pub fn save_descriptors(path: impl AsRef<Path>, set: &DescriptorSet) -> Result<()> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    bytes.extend_from_slice(DESCRIPTOR_MAGIC);
    bytes.extend_from_slice(&u32_of(set.len(), "record count")?.to_le_bytes());
    bytes.extend_from_slice(&u32_of(set.dim, "dimension")?.to_le_bytes());
    for record in &set.records {
        set.check_record(record)?;
        bytes.extend_from_slice(&u32_of(record.key.len(), "key length")?.to_le_bytes());
        bytes.extend_from_slice(record.key.as_bytes());
        bytes.extend_from_slice(&record.identity.to_le_bytes());
        bytes.extend_from_slice(&record.camera.to_le_bytes());
        for &v in &record.values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, bytes).map_err(|err| Error::io(path, err))
}

fn take<'a>(bytes: &'a [u8], off: &mut usize, n: usize) -> Option<&'a [u8]> {
    let end = off.checked_add(n)?;
    if end > bytes.len() {
        return None;
    }
    let slice = &bytes[*off..end];
    *off = end;
    Some(slice)
}

fn read_u32(bytes: &[u8], off: &mut usize, path: &Path, what: &str) -> Result<u32> {
    let slice = take(bytes, off, 4).ok_or_else(|| {
        Error::Parse(format!("{}: truncated while reading {what}", path.display()))
    })?;
    Ok(u32::from_le_bytes(slice.try_into().unwrap()))
}

/// Reads a descriptor set written by [`save_descriptors`].
pub fn load_descriptors(path: impl AsRef<Path>) -> Result<DescriptorSet> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|err| Error::io(path, err))?;
    let mut off = 0usize;

    let magic = take(&bytes, &mut off, 4)
        .ok_or_else(|| Error::Parse(format!("{}: file too short for a header", path.display())))?;
    if magic != DESCRIPTOR_MAGIC {
        return Err(Error::Parse(format!(
            "{}: bad magic {:?}, expected {:?}",
            path.display(),
            magic,
            DESCRIPTOR_MAGIC
        )));
    }
    let count = read_u32(&bytes, &mut off, path, "record count")? as usize;
    let dim = read_u32(&bytes, &mut off, path, "dimension")? as usize;
    let mut set = DescriptorSet::new(dim);

    for index in 0..count {
        let key_len = read_u32(&bytes, &mut off, path, "key length")? as usize;
        let key_bytes = take(&bytes, &mut off, key_len).ok_or_else(|| {
            Error::Parse(format!(
                "{}: truncated key in record {index}",
                path.display()
            ))
        })?;
        let key = std::str::from_utf8(key_bytes)
            .map_err(|_| {
                Error::Parse(format!(
                    "{}: record {index} key is not valid UTF-8",
                    path.display()
                ))
            })?
            .to_string();
        let identity = read_u32(&bytes, &mut off, path, "identity")?;
        let camera = read_u32(&bytes, &mut off, path, "camera")?;
        let value_bytes = take(&bytes, &mut off, dim * 4).ok_or_else(|| {
            Error::Parse(format!(
                "{}: truncated values in record {index}",
                path.display()
            ))
        })?;
        let values: Vec<f32> = value_bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        set.push(DescriptorRecord {
            key,
            identity,
            camera,
            values,
        })
        .map_err(|err| Error::Parse(format!("{}: {err}", path.display())))?;
    }
    if off != bytes.len() {
        return Err(Error::Parse(format!(
            "{}: {} trailing bytes after the last record",
            path.display(),
            bytes.len() - off
        )));
    }
    Ok(set)
}
