//! Scoring: masked classification error, cluster-to-class matching, boundary
//! length, the 1NN baseline and mean ± standard error aggregation.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Result};
use crate::grid::{ImageGrid, LabelField, Mask, Shape};
use crate::init::{class_distances, LabeledVoxelSet};

/// Exhaustive matching enumerates K! permutations; beyond this it refuses.
pub const MAX_MATCH_CLASSES: usize = 8;

/// Maps predicted cluster `k` to class `map[k]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Permutation {
    map: Vec<usize>,
}

impl Permutation {
    pub fn identity(classes: usize) -> Self {
        Self { map: (0..classes).collect() }
    }

    pub fn new(map: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; map.len()];
        for &m in &map {
            if m >= map.len() || seen[m] {
                return Err(invalid!("{map:?} is not a permutation of 0..{}", map.len()));
            }
            seen[m] = true;
        }
        Ok(Self { map })
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.map
    }

    pub fn apply(&self, labels: &LabelField) -> Result<LabelField> {
        if labels.classes() != self.map.len() {
            return Err(invalid!(
                "permutation over {} classes applied to a field with K = {}",
                self.map.len(),
                labels.classes()
            ));
        }
        let relabeled = labels.labels().iter().map(|&l| self.map[l]).collect();
        LabelField::new(labels.height(), labels.width(), labels.classes(), relabeled)
    }
}

fn check_shapes(pred: &LabelField, truth: &LabelField, mask: &Mask) -> Result<()> {
    if pred.shape() != truth.shape() || pred.shape() != mask.shape() {
        return Err(invalid!(
            "shape mismatch: prediction {}x{}, truth {}x{}, mask {}x{}",
            pred.height(),
            pred.width(),
            truth.height(),
            truth.width(),
            mask.height(),
            mask.width()
        ));
    }
    if mask.count() == 0 {
        return Err(invalid!("mask selects no voxels"));
    }
    Ok(())
}

/// Fraction of masked voxels where `pred` and `truth` differ.
pub fn classification_error(pred: &LabelField, truth: &LabelField, mask: &Mask) -> Result<f64> {
    check_shapes(pred, truth, mask)?;
    let wrong = pred
        .labels()
        .iter()
        .zip(truth.labels())
        .zip(mask.values())
        .filter(|((p, t), &m)| m && p != t)
        .count();
    Ok(wrong as f64 / mask.count() as f64)
}

/// The relabeling of predicted clusters that minimizes masked error, by
/// exhaustive search. Among equally good permutations the lexicographically
/// first wins.
pub fn match_clusters(pred: &LabelField, truth: &LabelField, mask: &Mask) -> Result<Permutation> {
    check_shapes(pred, truth, mask)?;
    let k = pred.classes();
    if truth.classes() != k {
        return Err(invalid!("prediction has K = {k} but truth has K = {}", truth.classes()));
    }
    if k > MAX_MATCH_CLASSES {
        return Err(invalid!(
            "exhaustive cluster matching refuses K = {k} (limit {MAX_MATCH_CLASSES})"
        ));
    }
    // agree[p][t] = masked voxels predicted p with truth t
    let mut agree = vec![vec![0usize; k]; k];
    for ((&p, &t), &m) in pred.labels().iter().zip(truth.labels()).zip(mask.values()) {
        if m {
            agree[p][t] += 1;
        }
    }
    let mut current: Vec<usize> = (0..k).collect();
    let mut best = current.clone();
    let mut best_score = score(&agree, &current);
    while next_permutation(&mut current) {
        let s = score(&agree, &current);
        if s > best_score {
            best_score = s;
            best.clone_from(&current);
        }
    }
    Ok(Permutation { map: best })
}

fn score(agree: &[Vec<usize>], map: &[usize]) -> usize {
    map.iter().enumerate().map(|(p, &t)| agree[p][t]).sum()
}

/// Advances to the next lexicographic permutation; false after the last.
fn next_permutation(v: &mut [usize]) -> bool {
    if v.len() < 2 {
        return false;
    }
    let Some(i) = (0..v.len() - 1).rev().find(|&i| v[i] < v[i + 1]) else {
        return false;
    };
    let j = (i + 1..v.len()).rev().find(|&j| v[j] > v[i]).expect("suffix has a larger entry");
    v.swap(i, j);
    v[i + 1..].reverse();
    true
}

/// Unordered 4-neighbour pairs carrying different labels.
pub fn boundary_length(labels: &LabelField) -> usize {
    let Shape { height, width } = labels.shape();
    let l = labels.labels();
    let mut count = 0;
    for r in 0..height {
        for c in 0..width {
            let i = r * width + c;
            if c + 1 < width && l[i] != l[i + 1] {
                count += 1;
            }
            if r + 1 < height && l[i] != l[i + width] {
                count += 1;
            }
        }
    }
    count
}

/// Each voxel takes the class of its nearest labeled voxel in intensity
/// space; ties go to the lower class.
pub fn onenn_baseline(image: &ImageGrid, labeled: &LabeledVoxelSet, classes: usize) -> Result<LabelField> {
    let dist = class_distances(image, labeled, classes)?;
    let labels = dist
        .chunks_exact(classes)
        .map(|row| {
            let mut best = 0;
            for (k, &d) in row.iter().enumerate() {
                if d < row[best] {
                    best = k;
                }
            }
            best
        })
        .collect();
    LabelField::new(image.height(), image.width(), classes, labels)
}

/// Mean and standard error of the mean of repeated measurements.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanSem {
    pub mean: f64,
    /// Sample standard deviation over √R; zero when R = 1.
    pub sem: f64,
    pub repetitions: usize,
    /// Set when a single repetition leaves the spread undefined.
    pub degenerate: bool,
}

pub fn mean_and_sem(values: &[f64]) -> Result<MeanSem> {
    let r = values.len();
    if r == 0 {
        return Err(invalid!("cannot aggregate zero repetitions"));
    }
    let mean = values.iter().sum::<f64>() / r as f64;
    if r == 1 {
        return Ok(MeanSem { mean, sem: 0.0, repetitions: 1, degenerate: true });
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (r - 1) as f64;
    let sem = crate::math::sqrt(var) / crate::math::sqrt(r as f64);
    Ok(MeanSem { mean, sem, repetitions: r, degenerate: false })
}
