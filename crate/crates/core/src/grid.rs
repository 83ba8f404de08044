//! Grid geometry, the 4-neighbourhood, and the containers shared by every
//! other module: images, hard label fields, responsibilities, masks and
//! neighbour class counts.
//!
//! All containers are row-major. Voxel `i` sits at row `i / width`, column
//! `i % width`; per-voxel vectors (channels or classes) are contiguous.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Result};

/// Tolerance on per-voxel responsibility row sums.
pub const ROW_SUM_TOLERANCE: f64 = 1e-12;

/// Height and width of a 2D grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub fn new(height: usize, width: usize) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(invalid!("grid must be at least 1x1, got {height}x{width}"));
        }
        Ok(Self { height, width })
    }

    /// Number of voxels `H·W`.
    #[inline]
    pub fn len(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// 4-connected in-grid neighbours of voxel `i`, ordered up, down, left, right.
    pub fn neighbors(&self, i: usize) -> Result<Neighbors> {
        if i >= self.len() {
            return Err(invalid!(
                "voxel index {i} out of range for {}x{} grid",
                self.height,
                self.width
            ));
        }
        Ok(self.neighbors_unchecked(i))
    }

    #[inline]
    pub(crate) fn neighbors_unchecked(&self, i: usize) -> Neighbors {
        let (row, col) = (i / self.width, i % self.width);
        let mut out = Neighbors { idx: [0; 4], len: 0 };
        if row > 0 {
            out.push(i - self.width);
        }
        if row + 1 < self.height {
            out.push(i + self.width);
        }
        if col > 0 {
            out.push(i - 1);
        }
        if col + 1 < self.width {
            out.push(i + 1);
        }
        out
    }
}

/// At most four neighbour indices, stored inline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Neighbors {
    idx: [usize; 4],
    len: usize,
}

impl Neighbors {
    #[inline]
    fn push(&mut self, i: usize) {
        self.idx[self.len] = i;
        self.len += 1;
    }

    #[inline]
    pub fn as_slice(&self) -> &[usize] {
        &self.idx[..self.len]
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.len
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

impl<'a> IntoIterator for &'a Neighbors {
    type Item = &'a usize;
    type IntoIter = core::slice::Iter<'a, usize>;

    fn into_iter(self) -> Self::IntoIter {
        self.as_slice().iter()
    }
}

/// Free-function form of [`Shape::neighbors`].
pub fn neighbors(i: usize, height: usize, width: usize) -> Result<Neighbors> {
    Shape::new(height, width)?.neighbors(i)
}

/// An `H×W` image with `D` real channels per voxel.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageGrid {
    shape: Shape,
    channels: usize,
    data: Vec<f64>,
}

impl ImageGrid {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        let shape = Shape::new(height, width)?;
        if channels == 0 {
            return Err(invalid!("image needs at least one channel"));
        }
        if data.len() != shape.len() * channels {
            return Err(invalid!(
                "image data has {} values, expected {}x{}x{} = {}",
                data.len(),
                height,
                width,
                channels,
                shape.len() * channels
            ));
        }
        Ok(Self { shape, channels, data })
    }

    /// Single-channel image from one intensity per voxel.
    pub fn from_scalar(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(height, width, 1, data)
    }

    #[inline]
    pub fn shape(&self) -> Shape {
        self.shape
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.shape.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.shape.width
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Number of voxels.
    #[inline]
    pub fn len(&self) -> usize {
        self.shape.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.shape.is_empty()
    }

    /// Intensity vector of voxel `i`.
    #[inline]
    pub fn voxel(&self, i: usize) -> &[f64] {
        &self.data[i * self.channels..(i + 1) * self.channels]
    }

    pub fn voxels(&self) -> core::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.channels)
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

/// Hard segmentation: one class index in `0..K` per voxel.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LabelField {
    shape: Shape,
    classes: usize,
    labels: Vec<usize>,
}

impl LabelField {
    pub fn new(height: usize, width: usize, classes: usize, labels: Vec<usize>) -> Result<Self> {
        let shape = Shape::new(height, width)?;
        if classes == 0 {
            return Err(invalid!("label field needs at least one class"));
        }
        if labels.len() != shape.len() {
            return Err(invalid!(
                "label field has {} entries, expected {}",
                labels.len(),
                shape.len()
            ));
        }
        if let Some((i, &k)) = labels.iter().enumerate().find(|(_, &k)| k >= classes) {
            return Err(invalid!("label {k} at voxel {i} is not below K = {classes}"));
        }
        Ok(Self { shape, classes, labels })
    }

    /// Every voxel set to `class`.
    pub fn uniform(height: usize, width: usize, classes: usize, class: usize) -> Result<Self> {
        let n = Shape::new(height, width)?.len();
        Self::new(height, width, classes, vec![class; n])
    }

    #[inline]
    pub fn shape(&self) -> Shape {
        self.shape
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.shape.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.shape.width
    }

    #[inline]
    pub fn classes(&self) -> usize {
        self.classes
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    #[inline]
    pub fn get(&self, i: usize) -> usize {
        self.labels[i]
    }

    #[inline]
    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Number of voxels carrying each class.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for &k in &self.labels {
            counts[k] += 1;
        }
        counts
    }
}

/// Per-voxel class probabilities; each row lies in the simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponsibilityField {
    shape: Shape,
    classes: usize,
    values: Vec<f64>,
}

impl ResponsibilityField {
    /// Validates entries in `[0, 1]` and row sums within [`ROW_SUM_TOLERANCE`].
    pub fn new(height: usize, width: usize, classes: usize, values: Vec<f64>) -> Result<Self> {
        let field = Self::from_raw(height, width, classes, values)?;
        for (i, row) in field.rows().enumerate() {
            if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(invalid!("responsibility row {i} has an entry outside [0, 1]"));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(invalid!("responsibility row {i} sums to {s}"));
            }
        }
        Ok(field)
    }

    /// Shape checks only; callers guarantee normalization.
    pub(crate) fn from_raw(
        height: usize,
        width: usize,
        classes: usize,
        values: Vec<f64>,
    ) -> Result<Self> {
        let shape = Shape::new(height, width)?;
        if classes == 0 {
            return Err(invalid!("responsibility field needs at least one class"));
        }
        if values.len() != shape.len() * classes {
            return Err(invalid!(
                "responsibility data has {} values, expected {}",
                values.len(),
                shape.len() * classes
            ));
        }
        Ok(Self { shape, classes, values })
    }

    /// Every row equal to `1/K`.
    pub fn uniform(height: usize, width: usize, classes: usize) -> Result<Self> {
        let n = Shape::new(height, width)?.len();
        Self::from_raw(height, width, classes, vec![1.0 / classes as f64; n * classes])
    }

    /// One-hot rows from a hard segmentation.
    pub fn from_labels(labels: &LabelField) -> Self {
        let k = labels.classes();
        let mut values = vec![0.0; labels.len() * k];
        for (i, &c) in labels.labels().iter().enumerate() {
            values[i * k + c] = 1.0;
        }
        Self { shape: labels.shape(), classes: k, values }
    }

    #[inline]
    pub fn shape(&self) -> Shape {
        self.shape
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.shape.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.shape.width
    }

    #[inline]
    pub fn classes(&self) -> usize {
        self.classes
    }

    /// Number of voxels.
    #[inline]
    pub fn len(&self) -> usize {
        self.shape.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.shape.is_empty()
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.classes..(i + 1) * self.classes]
    }

    #[inline]
    pub(crate) fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.values[i * self.classes..(i + 1) * self.classes]
    }

    pub fn rows(&self) -> core::slice::ChunksExact<'_, f64> {
        self.values.chunks_exact(self.classes)
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Replaces row `i` by the one-hot vector for `class`.
    pub(crate) fn set_one_hot(&mut self, i: usize, class: usize) {
        let row = self.row_mut(i);
        row.fill(0.0);
        row[class] = 1.0;
    }

    /// Mean absolute elementwise difference to `other`.
    pub fn mean_abs_change(&self, other: &Self) -> f64 {
        let total: f64 = self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).sum();
        total / self.values.len() as f64
    }
}

/// Evaluation region; `true` marks voxels that count.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Mask {
    shape: Shape,
    inside: Vec<bool>,
}

impl Mask {
    pub fn new(height: usize, width: usize, inside: Vec<bool>) -> Result<Self> {
        let shape = Shape::new(height, width)?;
        if inside.len() != shape.len() {
            return Err(invalid!("mask has {} entries, expected {}", inside.len(), shape.len()));
        }
        Ok(Self { shape, inside })
    }

    pub fn full(height: usize, width: usize) -> Result<Self> {
        let n = Shape::new(height, width)?.len();
        Self::new(height, width, vec![true; n])
    }

    #[inline]
    pub fn shape(&self) -> Shape {
        self.shape
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.shape.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.shape.width
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.inside.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.inside.is_empty()
    }

    #[inline]
    pub fn contains(&self, i: usize) -> bool {
        self.inside[i]
    }

    #[inline]
    pub fn values(&self) -> &[bool] {
        &self.inside
    }

    pub fn count(&self) -> usize {
        self.inside.iter().filter(|&&m| m).count()
    }
}

/// Per-voxel sum of the class weights of the 4-neighbours, `ȳ_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborCountField {
    shape: Shape,
    classes: usize,
    counts: Vec<f64>,
}

impl NeighborCountField {
    #[inline]
    pub fn shape(&self) -> Shape {
        self.shape
    }

    #[inline]
    pub fn classes(&self) -> usize {
        self.classes
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.counts[i * self.classes..(i + 1) * self.classes]
    }

    pub fn rows(&self) -> core::slice::ChunksExact<'_, f64> {
        self.counts.chunks_exact(self.classes)
    }
}

/// Anything that assigns per-voxel class weights on a grid.
pub trait ClassWeights {
    fn shape(&self) -> Shape;
    fn classes(&self) -> usize;
    /// Adds the class weights of voxel `i` into `acc`.
    fn accumulate(&self, i: usize, acc: &mut [f64]);
}

impl ClassWeights for LabelField {
    fn shape(&self) -> Shape {
        self.shape
    }

    fn classes(&self) -> usize {
        self.classes
    }

    #[inline]
    fn accumulate(&self, i: usize, acc: &mut [f64]) {
        acc[self.labels[i]] += 1.0;
    }
}

impl ClassWeights for ResponsibilityField {
    fn shape(&self) -> Shape {
        self.shape
    }

    fn classes(&self) -> usize {
        self.classes
    }

    #[inline]
    fn accumulate(&self, i: usize, acc: &mut [f64]) {
        for (a, p) in acc.iter_mut().zip(self.row(i)) {
            *a += p;
        }
    }
}

/// `ȳ_ik = Σ_{j ∈ δ_i} w_jk` over in-grid 4-neighbours.
pub fn neighbor_class_counts<W: ClassWeights + ?Sized>(weights: &W) -> NeighborCountField {
    let shape = weights.shape();
    let k = weights.classes();
    let mut counts = vec![0.0; shape.len() * k];
    for (i, acc) in counts.chunks_exact_mut(k).enumerate() {
        for &j in &shape.neighbors_unchecked(i) {
            weights.accumulate(j, acc);
        }
    }
    NeighborCountField { shape, classes: k, counts }
}

/// Dense `N×K` one-hot matrix, row-major.
pub fn one_hot(labels: &LabelField) -> Vec<u8> {
    let k = labels.classes();
    let mut out = vec![0u8; labels.len() * k];
    for (i, &c) in labels.labels().iter().enumerate() {
        out[i * k + c] = 1;
    }
    out
}

/// Index of the largest entry; ties go to the lowest index.
#[inline]
pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = k;
        }
    }
    best
}

/// Hard decode of a responsibility field.
pub fn argmax_labels(resp: &ResponsibilityField) -> LabelField {
    LabelField {
        shape: resp.shape(),
        classes: resp.classes(),
        labels: resp.rows().map(argmax).collect(),
    }
}
