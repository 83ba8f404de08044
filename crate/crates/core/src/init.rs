//! Responsibility initializers: k-means for the unsupervised model, nearest
//! labeled voxel for the semi-supervised one, plus seeded label sampling.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Result};
use crate::grid::{ImageGrid, LabelField, ResponsibilityField};
use crate::math;
use crate::vb::ClampSet;

const KMEANS_MAX_ITER: usize = 100;
const KMEANS_TOL: f64 = 1e-8;

/// A voxel with an observed class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LabeledVoxel {
    pub index: usize,
    pub class: usize,
}

/// Observed voxel labels. Intensities are read from the image they are
/// applied to.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LabeledVoxelSet {
    entries: Vec<LabeledVoxel>,
}

impl LabeledVoxelSet {
    pub fn new(entries: Vec<LabeledVoxel>) -> Self {
        Self { entries }
    }

    pub fn entries(&self) -> &[LabeledVoxel] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Checks indices against an `voxels`-sized grid and that each of the
    /// `classes` classes has at least one voxel.
    pub fn validate(&self, voxels: usize, classes: usize) -> Result<()> {
        let mut seen = vec![false; classes];
        for e in &self.entries {
            if e.index >= voxels {
                return Err(invalid!("labeled voxel {} outside grid of {voxels} voxels", e.index));
            }
            if e.class >= classes {
                return Err(invalid!("labeled class {} at voxel {} is not below K = {classes}", e.class, e.index));
            }
            seen[e.class] = true;
        }
        match seen.iter().position(|&s| !s) {
            Some(k) => Err(invalid!("class {k} has no labeled voxel")),
            None => Ok(()),
        }
    }

    pub fn clamps(&self, classes: usize, voxels: usize) -> Result<ClampSet> {
        ClampSet::new(self.entries.iter().map(|e| (e.index, e.class)), classes, voxels)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansInit {
    /// Cluster centers, sorted lexicographically by intensity.
    pub centers: Vec<Vec<f64>>,
    pub responsibilities: ResponsibilityField,
    pub iterations: usize,
    /// Within-cluster sum of squares after each Lloyd update.
    pub wcss_trace: Vec<f64>,
}

/// Lloyd's k-means with k-means++ seeding, then `ρ_ik ∝ exp(−‖x_i − c_k‖)`.
pub fn kmeans_init(image: &ImageGrid, classes: usize, seed: u64) -> Result<KMeansInit> {
    let n = image.len();
    if classes == 0 {
        return Err(invalid!("k-means needs K >= 1"));
    }
    if classes > n {
        return Err(invalid!("k-means needs K <= N, got K = {classes} for {n} voxels"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = plus_plus_seeds(image, classes, &mut rng);
    let d = image.channels();
    let mut assignment = vec![0usize; n];
    let mut wcss_trace = Vec::new();
    let mut iterations = 0;
    while iterations < KMEANS_MAX_ITER {
        iterations += 1;
        for (a, x) in assignment.iter_mut().zip(image.voxels()) {
            *a = nearest(&centers, x).0;
        }
        let mut sums = vec![vec![0.0; d]; classes];
        let mut counts = vec![0usize; classes];
        for (&a, x) in assignment.iter().zip(image.voxels()) {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(x) {
                *s += v;
            }
        }
        let mut shift: f64 = 0.0;
        for ((c, s), &m) in centers.iter_mut().zip(&sums).zip(&counts) {
            // an emptied cluster keeps its center
            if m == 0 {
                continue;
            }
            let next: Vec<f64> = s.iter().map(|v| v / m as f64).collect();
            shift = shift.max(math::euclidean(c, &next));
            *c = next;
        }
        let wcss = assignment
            .iter()
            .zip(image.voxels())
            .map(|(&a, x)| math::squared_euclidean(x, &centers[a]))
            .sum();
        wcss_trace.push(wcss);
        if shift < KMEANS_TOL {
            break;
        }
    }
    centers.sort_by(|a, b| {
        a.iter().zip(b).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(core::cmp::Ordering::Equal)
    });

    let mut values = Vec::with_capacity(n * classes);
    let mut row = vec![0.0; classes];
    for x in image.voxels() {
        for (r, c) in row.iter_mut().zip(&centers) {
            *r = -math::euclidean(x, c);
        }
        math::softmax_in_place(&mut row);
        values.extend_from_slice(&row);
    }
    let responsibilities = ResponsibilityField::from_raw(image.height(), image.width(), classes, values)?;
    Ok(KMeansInit { centers, responsibilities, iterations, wcss_trace })
}

fn plus_plus_seeds(image: &ImageGrid, classes: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = image.len();
    let mut centers = Vec::with_capacity(classes);
    centers.push(image.voxel(rng.random_range(0..n)).to_vec());
    let mut dist2: Vec<f64> = image.voxels().map(|x| math::squared_euclidean(x, &centers[0])).collect();
    while centers.len() < classes {
        let total: f64 = dist2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (i, &w) in dist2.iter().enumerate() {
                acc += w;
                if acc > target && w > 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        let c = image.voxel(pick).to_vec();
        for (d, x) in dist2.iter_mut().zip(image.voxels()) {
            *d = d.min(math::squared_euclidean(x, &c));
        }
        centers.push(c);
    }
    centers
}

/// Nearest center and its distance; ties go to the lowest index.
fn nearest(centers: &[Vec<f64>], x: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (k, c) in centers.iter().enumerate() {
        let d = math::squared_euclidean(x, c);
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

/// Distance from every voxel to the closest labeled voxel of each class.
pub(crate) fn class_distances(
    image: &ImageGrid,
    labeled: &LabeledVoxelSet,
    classes: usize,
) -> Result<Vec<f64>> {
    labeled.validate(image.len(), classes)?;
    let mut out = vec![f64::INFINITY; image.len() * classes];
    for (x, row) in image.voxels().zip(out.chunks_exact_mut(classes)) {
        for e in labeled.entries() {
            let d = math::euclidean(x, image.voxel(e.index));
            if d < row[e.class] {
                row[e.class] = d;
            }
        }
    }
    Ok(out)
}

/// `ρ_ik ∝ exp(−d_k)` with `d_k` the intensity distance to the nearest
/// labeled voxel of class `k`; labeled voxels get one-hot rows.
pub fn knn_init(image: &ImageGrid, labeled: &LabeledVoxelSet, classes: usize) -> Result<ResponsibilityField> {
    let mut values = class_distances(image, labeled, classes)?;
    for row in values.chunks_exact_mut(classes) {
        for v in row.iter_mut() {
            *v = -*v;
        }
        math::softmax_in_place(row);
    }
    let mut resp = ResponsibilityField::from_raw(image.height(), image.width(), classes, values)?;
    labeled.clamps(classes, image.len())?.apply(&mut resp);
    Ok(resp)
}

/// Draws `per_class` voxels of every class uniformly without replacement.
/// Entries are ordered by class, then by draw order.
pub fn sample_labels(truth: &LabelField, per_class: usize, seed: u64) -> Result<LabeledVoxelSet> {
    let k = truth.classes();
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &c) in truth.labels().iter().enumerate() {
        members[c].push(i);
    }
    if per_class == 0 {
        return Ok(LabeledVoxelSet::default());
    }
    if let Some((c, m)) = members.iter().enumerate().find(|(_, m)| m.len() < per_class) {
        return Err(invalid!("class {c} has {} voxels, cannot sample {per_class}", m.len()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = Vec::with_capacity(per_class * k);
    for (class, m) in members.iter().enumerate() {
        for pos in index::sample(&mut rng, m.len(), per_class) {
            entries.push(LabeledVoxel { index: m[pos], class });
        }
    }
    Ok(LabeledVoxelSet::new(entries))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::ROW_SUM_TOLERANCE;
    use proptest::prelude::*;

    fn row_sums_ok(r: &ResponsibilityField) -> bool {
        r.rows().all(|row| (row.iter().sum::<f64>() - 1.0).abs() < ROW_SUM_TOLERANCE)
    }

    #[test]
    fn single_cluster_is_global_mean() {
        let image = ImageGrid::from_scalar(2, 2, vec![0.1, 0.2, 0.3, 0.6]).unwrap();
        let k = kmeans_init(&image, 1, 3).unwrap();
        assert!((k.centers[0][0] - 0.3).abs() < 1e-15);
        assert!(k.responsibilities.values().iter().all(|&p| p == 1.0));
    }

    #[test]
    fn two_point_masses() {
        let data: Vec<f64> = (0..40).map(|i| if i % 3 == 0 { 1.0 } else { 0.0 }).collect();
        let image = ImageGrid::from_scalar(5, 8, data.clone()).unwrap();
        for seed in 0..5 {
            let k = kmeans_init(&image, 2, seed).unwrap();
            assert_eq!(k.centers, vec![vec![0.0], vec![1.0]]);
            for (row, &x) in k.responsibilities.rows().zip(&data) {
                let own = x as usize;
                assert!(row[own] > row[1 - own]);
            }
        }
    }

    #[test]
    fn kmeans_is_deterministic_per_seed() {
        let data: Vec<f64> = (0..64).map(|i| ((i * 37) % 64) as f64 / 64.0).collect();
        let image = ImageGrid::from_scalar(8, 8, data).unwrap();
        assert_eq!(kmeans_init(&image, 3, 9).unwrap(), kmeans_init(&image, 3, 9).unwrap());
    }

    #[test]
    fn kmeans_rejects_too_many_clusters() {
        let image = ImageGrid::from_scalar(1, 2, vec![0.0, 1.0]).unwrap();
        assert!(kmeans_init(&image, 3, 0).is_err());
    }

    #[test]
    fn knn_examples() {
        let image = ImageGrid::from_scalar(1, 5, vec![0.0, 1.0, 0.5, 0.02, 0.9]).unwrap();
        let labeled = LabeledVoxelSet::new(vec![
            LabeledVoxel { index: 0, class: 0 },
            LabeledVoxel { index: 1, class: 1 },
        ]);
        let r = knn_init(&image, &labeled, 2).unwrap();
        assert_eq!(r.row(0), &[1.0, 0.0]);
        assert_eq!(r.row(1), &[0.0, 1.0]);
        assert!((r.row(2)[0] - 0.5).abs() < 1e-15);
        assert!(r.row(3)[0] > r.row(3)[1]);
        assert!(r.row(4)[1] > r.row(4)[0]);
        assert!(row_sums_ok(&r));
    }

    #[test]
    fn knn_needs_every_class() {
        let image = ImageGrid::from_scalar(1, 3, vec![0.0, 0.5, 1.0]).unwrap();
        let labeled = LabeledVoxelSet::new(vec![LabeledVoxel { index: 0, class: 0 }]);
        let err = knn_init(&image, &labeled, 2).unwrap_err();
        assert!(alloc::format!("{err}").contains("class 1"));
    }

    #[test]
    fn knn_ignores_duplicate_labels() {
        let image = ImageGrid::from_scalar(1, 4, vec![0.0, 0.0, 0.7, 0.4]).unwrap();
        let a = LabeledVoxelSet::new(vec![
            LabeledVoxel { index: 0, class: 0 },
            LabeledVoxel { index: 2, class: 1 },
        ]);
        let b = LabeledVoxelSet::new(vec![
            LabeledVoxel { index: 0, class: 0 },
            LabeledVoxel { index: 2, class: 1 },
            LabeledVoxel { index: 0, class: 0 },
        ]);
        assert_eq!(knn_init(&image, &a, 2).unwrap(), knn_init(&image, &b, 2).unwrap());
    }

    #[test]
    fn sample_label_examples() {
        let labels: Vec<usize> = (0..36).map(|i| i % 4).collect();
        let truth = LabelField::new(6, 6, 4, labels).unwrap();
        let s = sample_labels(&truth, 1, 5).unwrap();
        assert_eq!(s.len(), 4);
        for (c, e) in s.entries().iter().enumerate() {
            assert_eq!(e.class, c);
            assert_eq!(truth.get(e.index), c);
        }
        assert!(sample_labels(&truth, 0, 5).unwrap().is_empty());
        assert_eq!(sample_labels(&truth, 3, 11).unwrap(), sample_labels(&truth, 3, 11).unwrap());
        let err = sample_labels(&truth, 10, 0).unwrap_err();
        assert!(alloc::format!("{err}").contains("class 0"));
    }

    proptest! {
        #[test]
        fn kmeans_wcss_never_increases(seed in any::<u64>(), k in 1usize..5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let data: Vec<f64> = (0..200).map(|_| rand::Rng::random(&mut rng)).collect();
            let image = ImageGrid::new(10, 10, 2, data).unwrap();
            let init = kmeans_init(&image, k, seed).unwrap();
            for w in init.wcss_trace.windows(2) {
                prop_assert!(w[1] <= w[0] + 1e-12);
            }
            prop_assert!(row_sums_ok(&init.responsibilities));
        }
    }
}
