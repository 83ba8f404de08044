//! Synthetic head phantoms: nested irregular elliptical bands with Gaussian
//! intensity noise per class.
//!
//! Class 0 is the background outside the head ellipse; classes `1..K` fill
//! the head as concentric bands from the outside in, each band boundary
//! displaced by a few seeded low-frequency sinusoids of the polar angle.

use std::f64::consts::PI;

use hpotts_core::{ImageGrid, LabelField, Mask};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_SIZE: usize = 64;
pub const DEFAULT_CLASSES: usize = 4;
pub const DEFAULT_MEANS: [f64; 4] = [0.05, 0.35, 0.65, 0.9];
pub const DEFAULT_STDDEV: f64 = 0.05;

/// Fraction of all voxels each class must cover.
const MIN_CLASS_FRACTION: f64 = 0.01;
const MAX_ATTEMPTS: usize = 10;
/// Head semi-axes as fractions of width and height.
const HEAD_AXES: (f64, f64) = (0.38, 0.44);
const HARMONICS: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomSpec {
    pub height: usize,
    pub width: usize,
    /// One mean intensity per class, in [0, 1].
    pub means: Vec<f64>,
    /// One noise standard deviation per class.
    pub stddevs: Vec<f64>,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self::with_classes(DEFAULT_CLASSES)
    }
}

impl PhantomSpec {
    /// Default geometry and noise with `classes` classes. Four classes use the
    /// background/fluid/gray/white means; other counts spread means evenly
    /// over [0.05, 0.9].
    pub fn with_classes(classes: usize) -> Self {
        let means = if classes == DEFAULT_CLASSES {
            DEFAULT_MEANS.to_vec()
        } else if classes == 1 {
            vec![DEFAULT_MEANS[0]]
        } else {
            let (lo, hi) = (DEFAULT_MEANS[0], DEFAULT_MEANS[3]);
            (0..classes).map(|k| lo + (hi - lo) * k as f64 / (classes - 1) as f64).collect()
        };
        Self { height: DEFAULT_SIZE, width: DEFAULT_SIZE, means, stddevs: vec![DEFAULT_STDDEV; classes] }
    }

    pub fn with_noise(mut self, stddev: f64) -> Self {
        self.stddevs.iter_mut().for_each(|s| *s = stddev);
        self
    }

    pub fn with_size(mut self, height: usize, width: usize) -> Self {
        self.height = height;
        self.width = width;
        self
    }

    pub fn classes(&self) -> usize {
        self.means.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::Phantom(format!("grid must be at least 1x1, got {}x{}", self.height, self.width)));
        }
        let k = self.means.len();
        if k == 0 || k > 256 {
            return Err(Error::Phantom(format!("need between 1 and 256 classes, got {k}")));
        }
        if self.stddevs.len() != k {
            return Err(Error::Phantom(format!("{k} means but {} stddevs", self.stddevs.len())));
        }
        if let Some(m) = self.means.iter().find(|m| !(0.0..=1.0).contains(*m)) {
            return Err(Error::Phantom(format!("class mean {m} outside [0, 1]")));
        }
        if let Some(s) = self.stddevs.iter().find(|s| !(**s > 0.0) || !s.is_finite()) {
            return Err(Error::Phantom(format!("noise stddev {s} must be finite and > 0")));
        }
        Ok(())
    }
}

/// Optional-field form of [`PhantomSpec`] as written in config files.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub height: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classes: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub means: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stddevs: Option<Vec<f64>>,
    /// Shorthand for the same stddev on every class.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<f64>,
}

impl PhantomConfig {
    pub fn resolve(&self) -> Result<PhantomSpec> {
        let classes = self
            .classes
            .or(self.means.as_ref().map(Vec::len))
            .unwrap_or(DEFAULT_CLASSES);
        let mut spec = PhantomSpec::with_classes(classes);
        spec.height = self.height.unwrap_or(DEFAULT_SIZE);
        spec.width = self.width.unwrap_or(DEFAULT_SIZE);
        if let Some(m) = &self.means {
            spec.means = m.clone();
        }
        if self.noise.is_some() && self.stddevs.is_some() {
            return Err(Error::Phantom("give either noise or stddevs, not both".into()));
        }
        if let Some(s) = self.noise {
            spec = spec.with_noise(s);
        }
        if let Some(s) = &self.stddevs {
            spec.stddevs = s.clone();
        }
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Phantom {
    pub image: ImageGrid,
    pub truth: LabelField,
    pub mask: Mask,
}

struct Boundary {
    radius: f64,
    terms: [(f64, f64, f64); HARMONICS],
}

impl Boundary {
    fn random(radius: f64, rng: &mut ChaCha8Rng) -> Self {
        let terms = std::array::from_fn(|_| {
            let freq = rng.random_range(2..=5) as f64;
            let amp = rng.random_range(0.01..0.035);
            let phase = rng.random_range(0.0..2.0 * PI);
            (freq, amp, phase)
        });
        Self { radius, terms }
    }

    fn contains(&self, rho: f64, theta: f64) -> bool {
        let wobble: f64 = self.terms.iter().map(|&(f, a, p)| a * (f * theta + p).sin()).sum();
        rho * (1.0 + wobble) < self.radius
    }
}

/// Truth labels, head mask and noisy image, all determined by `seed`.
pub fn generate_phantom(spec: &PhantomSpec, seed: u64) -> Result<Phantom> {
    spec.validate()?;
    let k = spec.classes();
    let (h, w) = (spec.height, spec.width);
    let n = h * w;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let (ax, ay) = (HEAD_AXES.0 * w as f64, HEAD_AXES.1 * h as f64);
    let polar: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let dy = ((i / w) as f64 - cy) / ay;
            let dx = ((i % w) as f64 - cx) / ax;
            (dx.hypot(dy), dy.atan2(dx))
        })
        .collect();
    let inside: Vec<bool> = polar.iter().map(|&(rho, _)| rho <= 1.0).collect();

    let mut labels = Vec::new();
    let mut accepted = false;
    for _ in 0..MAX_ATTEMPTS {
        // equal-area bands: boundary j at radius sqrt(1 - j/(K-1))
        let boundaries: Vec<Boundary> = (1..k.saturating_sub(1))
            .map(|j| Boundary::random((1.0 - j as f64 / (k - 1) as f64).sqrt(), &mut rng))
            .collect();
        labels = polar
            .iter()
            .zip(&inside)
            .map(|(&(rho, theta), &head)| {
                if !head || k == 1 {
                    return 0;
                }
                let depth = boundaries.iter().rposition(|b| b.contains(rho, theta)).map_or(0, |j| j + 1);
                1 + depth
            })
            .collect();
        let mut counts = vec![0usize; k];
        for &l in &labels {
            counts[l] += 1;
        }
        if counts.iter().all(|&c| c as f64 >= MIN_CLASS_FRACTION * n as f64) {
            accepted = true;
            break;
        }
    }
    if !accepted {
        return Err(Error::Phantom(format!(
            "some class covers under {}% of a {h}x{w} grid after {MAX_ATTEMPTS} attempts",
            MIN_CLASS_FRACTION * 100.0
        )));
    }

    let data = labels
        .iter()
        .map(|&l| {
            let z: f64 = StandardNormal.sample(&mut rng);
            (spec.means[l] + spec.stddevs[l] * z).clamp(0.0, 1.0)
        })
        .collect();
    Ok(Phantom {
        image: ImageGrid::from_scalar(h, w, data)?,
        truth: LabelField::new(h, w, k, labels)?,
        mask: Mask::new(h, w, inside)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_seed() {
        let spec = PhantomSpec::default();
        assert_eq!(generate_phantom(&spec, 7).unwrap(), generate_phantom(&spec, 7).unwrap());
        assert_ne!(generate_phantom(&spec, 7).unwrap().image, generate_phantom(&spec, 8).unwrap().image);
    }

    #[test]
    fn noiseless_limit_equals_means() {
        let spec = PhantomSpec::default().with_noise(1e-9);
        let p = generate_phantom(&spec, 3).unwrap();
        for (&x, &l) in p.image.data().iter().zip(p.truth.labels()) {
            assert!((x - spec.means[l]).abs() < 1e-7);
        }
    }

    #[test]
    fn class_means_match_spec() {
        let spec = PhantomSpec::default();
        let p = generate_phantom(&spec, 11).unwrap();
        let mut sums = [0.0; 4];
        let mut counts = [0usize; 4];
        for (&x, &l) in p.image.data().iter().zip(p.truth.labels()) {
            if x > 0.0 && x < 1.0 {
                sums[l] += x;
                counts[l] += 1;
            }
        }
        for k in 0..4 {
            let mean = sums[k] / counts[k] as f64;
            assert!((mean - spec.means[k]).abs() < 0.02, "class {k}: {mean}");
        }
    }

    #[test]
    fn truth_agrees_with_mask() {
        for k in [2, 3, 4, 6] {
            let p = generate_phantom(&PhantomSpec::with_classes(k), k as u64).unwrap();
            for (&l, &m) in p.truth.labels().iter().zip(p.mask.values()) {
                assert_eq!(l == 0, !m);
            }
            for c in p.truth.class_counts() {
                assert!(c as f64 >= 0.01 * 64.0 * 64.0);
            }
        }
    }

    #[test]
    fn bands_are_ordered_outside_in() {
        let p = generate_phantom(&PhantomSpec::default(), 1).unwrap();
        let centre = 32 * 64 + 32;
        assert_eq!(p.truth.get(centre), 3);
        assert_eq!(p.truth.get(0), 0);
    }

    #[test]
    fn single_class_phantom() {
        let p = generate_phantom(&PhantomSpec::with_classes(1), 0).unwrap();
        assert!(p.truth.labels().iter().all(|&l| l == 0));
        assert_eq!(p.truth.classes(), 1);
    }

    #[test]
    fn tiny_grid_cannot_fit_many_classes() {
        let spec = PhantomSpec::with_classes(8).with_size(4, 4);
        let err = generate_phantom(&spec, 0).unwrap_err();
        assert!(err.to_string().contains("attempts"), "{err}");
    }

    #[test]
    fn config_resolution() {
        let spec = PhantomConfig { noise: Some(0.15), ..Default::default() }.resolve().unwrap();
        assert_eq!(spec.stddevs, vec![0.15; 4]);
        assert_eq!(spec.means, DEFAULT_MEANS.to_vec());
        let spec = PhantomConfig { classes: Some(3), ..Default::default() }.resolve().unwrap();
        assert_eq!(spec.means, vec![0.05, 0.475, 0.9]);
        let bad = PhantomConfig { means: Some(vec![0.1, 1.5]), ..Default::default() };
        assert!(bad.resolve().is_err());
        let both = PhantomConfig { noise: Some(0.1), stddevs: Some(vec![0.1; 4]), ..Default::default() };
        assert!(both.resolve().is_err());
    }
}
