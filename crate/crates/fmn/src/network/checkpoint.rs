//! Checkpoints: a directory holding one tensor file per parameter plus a
//! JSON manifest.
//!
//! The manifest records the network shape and the expected tensor names, so
//! a checkpoint can be reopened without any out-of-band knowledge and
//! mismatches surface as errors instead of silently misloaded weights.
//! Norm-layer running statistics are stored alongside the parameters as
//! `<layer>.mean` / `<layer>.var`.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{NetworkConfig, NetworkParams};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{io as tensor_io, Element, Tensor};

const FORMAT: &str = "fmn-checkpoint";

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    config: NetworkConfig,
    tensors: Vec<String>,
    buffers: Vec<String>,
}

pub fn save_checkpoint<E: Element>(dir: &Path, params: &NetworkParams<E>) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let mut tensors = Vec::new();
    let mut failure: Option<Error> = None;
    params.visit(&mut |name, tensor| {
        if failure.is_some() {
            return;
        }
        tensors.push(name.to_string());
        let path = dir.join(format!("{}.fmnt", name));
        if let Err(e) = tensor_io::save_tensor(&path, tensor) {
            failure = Some(e);
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }

    let mut buffers = Vec::new();
    let mut failure: Option<Error> = None;
    params.visit_stats(&mut |name, stats| {
        if failure.is_some() {
            return;
        }
        buffers.push(name.to_string());
        let channels = stats.mean.len();
        let mean = Tensor::new(&[channels], stats.mean.clone()).expect("stats vector shape");
        let var = Tensor::new(&[channels], stats.var.clone()).expect("stats vector shape");
        for (suffix, t) in [("mean", &mean), ("var", &var)] {
            let path = dir.join(format!("{}.{}.fmnt", name, suffix));
            if let Err(e) = tensor_io::save_tensor(&path, t) {
                failure = Some(e);
                return;
            }
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }

    let manifest = Manifest {
        format: FORMAT.to_string(),
        config: params.config.clone(),
        tensors,
        buffers,
    };
    let path = dir.join("manifest.json");
    let body = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Parse(format!("checkpoint manifest: {}", e)))?;
    std::fs::write(&path, body + "\n").map_err(|e| Error::io(&path, e))
}

pub fn load_checkpoint<E: Element>(dir: &Path) -> Result<NetworkParams<E>> {
    let manifest_path = dir.join("manifest.json");
    let body = std::fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: Manifest = serde_json::from_str(&body).map_err(|e| {
        Error::Parse(format!(
            "checkpoint manifest {}: {}",
            manifest_path.display(),
            e
        ))
    })?;
    if manifest.format != FORMAT {
        return Err(Error::Parse(format!(
            "checkpoint manifest {}: unknown format {:?}",
            manifest_path.display(),
            manifest.format
        )));
    }
    manifest.config.validate()?;

    // Allocate the right-shaped tree, then overwrite every tensor from disk.
    let mut rng = Rng::seeded(0);
    let mut params = NetworkParams::<E>::init(&manifest.config, &mut rng)?;

    let mut expected_tensors = Vec::new();
    params.visit(&mut |name, _| expected_tensors.push(name.to_string()));
    let manifest_set: BTreeSet<&str> = manifest.tensors.iter().map(|s| s.as_str()).collect();
    let expected_set: BTreeSet<&str> = expected_tensors.iter().map(|s| s.as_str()).collect();
    if manifest_set != expected_set {
        return Err(Error::Parse(format!(
            "checkpoint {}: manifest lists {} tensors, the configured network has {}; \
             the parameter sets do not match",
            dir.display(),
            manifest_set.len(),
            expected_set.len()
        )));
    }

    let mut failure: Option<Error> = None;
    params.visit_mut(&mut |name, tensor| {
        if failure.is_some() {
            return;
        }
        let path = dir.join(format!("{}.fmnt", name));
        match tensor_io::load_tensor::<E>(&path) {
            Ok(loaded) => {
                if loaded.shape() != tensor.shape() {
                    failure = Some(Error::dimension(format!(
                        "checkpoint tensor {}: expected shape {:?}, file has {:?}",
                        name,
                        tensor.shape(),
                        loaded.shape()
                    )));
                } else {
                    *tensor = loaded;
                }
            }
            Err(e) => failure = Some(e),
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }

    let mut failure: Option<Error> = None;
    params.visit_stats_mut(&mut |name, stats| {
        if failure.is_some() {
            return;
        }
        for (suffix, target) in [("mean", &mut stats.mean), ("var", &mut stats.var)] {
            let path = dir.join(format!("{}.{}.fmnt", name, suffix));
            match tensor_io::load_tensor::<E>(&path) {
                Ok(loaded) => {
                    if loaded.shape() != [target.len()] {
                        failure = Some(Error::dimension(format!(
                            "checkpoint buffer {}.{}: expected {} channels, file has {:?}",
                            name,
                            suffix,
                            target.len(),
                            loaded.shape()
                        )));
                        return;
                    }
                    *target = loaded.into_data();
                }
                Err(e) => {
                    failure = Some(e);
                    return;
                }
            }
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }

    Ok(params)
}
