//! On-disk subspaces: `basis.slmx` plus a `subspace.toml` manifest.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Provenance, Role, Subspace};
use crate::error::{Error, Result};
use crate::linalg::{read_matrix, write_matrix};
use crate::synth::{LatentSpace, LatentSpaceSpec};

pub const BASIS_FILE: &str = "basis.slmx";
pub const MANIFEST_FILE: &str = "subspace.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub criterion: String,
    pub role: String,
    pub eps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub formulation: String,
    pub space: LatentSpace,
    pub dim: usize,
    pub components: usize,
    pub seed: u64,
    pub codes: usize,
    pub activations: Vec<f64>,
    pub stages: Vec<StageRecord>,
}

pub fn save(dir: impl AsRef<Path>, s: &Subspace, seed: u64, codes: usize) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_matrix(dir.join(BASIS_FILE), &s.basis)?;
    let m = Manifest {
        formulation: s.formulation.clone(),
        space: s.space.space,
        dim: s.space.dim,
        components: s.dim(),
        seed,
        codes,
        activations: s.activations.clone(),
        stages: s
            .provenance
            .iter()
            .map(|p| StageRecord {
                criterion: p.criterion.clone(),
                role: p.role.name().into(),
                eps: p.eps,
            })
            .collect(),
    };
    let text = toml::to_string(&m).map_err(|e| Error::Config(e.to_string()))?;
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, text).map_err(|e| Error::io(path, e))
}

pub fn load(dir: impl AsRef<Path>) -> Result<(Subspace, Manifest)> {
    let dir = dir.as_ref();
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let m: Manifest = toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
    let basis = read_matrix(dir.join(BASIS_FILE))?;
    if basis.rows() != m.dim || basis.cols() != m.components || m.activations.len() != m.components {
        return Err(Error::Config(format!(
            "manifest says {}x{} with {} activations, basis is {}x{}",
            m.dim,
            m.components,
            m.activations.len(),
            basis.rows(),
            basis.cols()
        )));
    }
    let provenance = m
        .stages
        .iter()
        .map(|r| {
            let role = match r.role.as_str() {
                "activate" => Role::Activate,
                "suppress" => Role::Suppress,
                other => return Err(Error::Config(format!("unknown stage role `{other}`"))),
            };
            Ok(Provenance {
                criterion: r.criterion.clone(),
                role,
                eps: r.eps,
            })
        })
        .collect::<Result<_>>()?;
    let s = Subspace {
        basis,
        activations: m.activations.clone(),
        formulation: m.formulation.clone(),
        space: LatentSpaceSpec {
            space: m.space,
            dim: m.dim,
        },
        provenance,
    };
    Ok((s, m))
}
