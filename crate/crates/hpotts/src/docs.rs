//! JSON documents: fitted smoothness, posterior hyperparameters and labeled
//! voxel lists.

use std::fs;
use std::path::Path;

use hpotts_core::init::{LabeledVoxel, LabeledVoxelSet};
use hpotts_core::{BetaFit, PosteriorHyperparams, SmoothnessParams};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `{"beta": [...], "beta_max": r, "iterations": n, "objective": r}`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BetaDocument {
    pub beta: Vec<f64>,
    pub beta_max: f64,
    pub iterations: usize,
    pub objective: f64,
}

impl BetaDocument {
    pub fn from_fit(fit: &BetaFit) -> Self {
        Self {
            beta: fit.params.beta().to_vec(),
            beta_max: fit.params.beta_max(),
            iterations: fit.iterations,
            objective: fit.objective,
        }
    }

    pub fn params(&self) -> Result<SmoothnessParams> {
        Ok(SmoothnessParams::new(self.beta.clone(), self.beta_max)?)
    }
}

pub(crate) fn parse<T: DeserializeOwned>(text: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        if path == "." {
            Error::Json(e.into_inner().to_string())
        } else {
            Error::Json(format!("at {path}: {}", e.into_inner()))
        }
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Json(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse(&text).map_err(|e| match e {
        Error::Json(msg) => Error::Json(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn write_beta(path: impl AsRef<Path>, doc: &BetaDocument) -> Result<()> {
    write_json(path.as_ref(), doc)
}

pub fn read_beta(path: impl AsRef<Path>) -> Result<BetaDocument> {
    let doc: BetaDocument = read_json(path.as_ref())?;
    doc.params()?;
    Ok(doc)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassPosterior {
    pub concentration: f64,
    pub mean: Vec<f64>,
    pub precision_scale: f64,
    pub dof: f64,
    /// Rows of the Wishart scale matrix.
    pub scale: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorDocument {
    pub classes: Vec<ClassPosterior>,
}

impl PosteriorDocument {
    pub fn from_posterior(post: &PosteriorHyperparams) -> Self {
        let classes = post
            .classes()
            .iter()
            .map(|c| ClassPosterior {
                concentration: c.concentration,
                mean: c.mean.clone(),
                precision_scale: c.precision_scale,
                dof: c.dof,
                scale: c.scale.as_slice().chunks(c.scale.dim()).map(<[f64]>::to_vec).collect(),
            })
            .collect();
        Self { classes }
    }
}

pub fn write_posterior(path: impl AsRef<Path>, post: &PosteriorHyperparams) -> Result<()> {
    write_json(path.as_ref(), &PosteriorDocument::from_posterior(post))
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LabeledEntry {
    index: usize,
    class: usize,
}

/// A JSON list of `{"index": i, "class": k}` records.
pub fn write_labeled(path: impl AsRef<Path>, set: &LabeledVoxelSet) -> Result<()> {
    let entries: Vec<LabeledEntry> =
        set.entries().iter().map(|e| LabeledEntry { index: e.index, class: e.class }).collect();
    write_json(path.as_ref(), &entries)
}

pub fn read_labeled(path: impl AsRef<Path>) -> Result<LabeledVoxelSet> {
    let entries: Vec<LabeledEntry> = read_json(path.as_ref())?;
    Ok(LabeledVoxelSet::new(
        entries.into_iter().map(|e| LabeledVoxel { index: e.index, class: e.class }).collect(),
    ))
}
