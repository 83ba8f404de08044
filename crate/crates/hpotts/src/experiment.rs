//! The repeated cross-center experiment: fit β on source segmentations, then
//! segment fresh target images with every requested method and score them
//! inside the mask.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use hpotts_core::eval::{self, MeanSem};
use hpotts_core::init::{self, LabeledVoxelSet};
use hpotts_core::potts::{self, DEFAULT_BETA_MAX};
use hpotts_core::vb::{self, ClampSet};
use hpotts_core::{BetaFit, BetaFitConfig, ImageGrid, LabelField, Mask, PriorHyperparams, SmoothnessParams, VbConfig};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::docs::{self, BetaDocument};
use crate::error::{Error, Result};
use crate::phantom::{generate_phantom, PhantomConfig};
use crate::pgm;
use crate::tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    /// Gaussian mixture, k-means start.
    #[serde(rename = "UGM")]
    Ugm,
    /// Gaussian mixture with clamped labeled voxels.
    #[serde(rename = "SGM")]
    Sgm,
    /// Hidden Potts mixture, k-means start.
    #[serde(rename = "UHP")]
    Uhp,
    /// Hidden Potts mixture with clamped labeled voxels.
    #[serde(rename = "SHP")]
    Shp,
    /// Nearest labeled voxel in intensity.
    #[serde(rename = "1NN")]
    OneNn,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Ugm, Method::Sgm, Method::Uhp, Method::Shp, Method::OneNn];

    pub fn name(self) -> &'static str {
        match self {
            Method::Ugm => "UGM",
            Method::Sgm => "SGM",
            Method::Uhp => "UHP",
            Method::Shp => "SHP",
            Method::OneNn => "1NN",
        }
    }

    pub fn needs_labels(self) -> bool {
        matches!(self, Method::Sgm | Method::Shp | Method::OneNn)
    }

    pub fn is_unsupervised(self) -> bool {
        matches!(self, Method::Ugm | Method::Uhp)
    }

    pub fn uses_potts(self) -> bool {
        matches!(self, Method::Uhp | Method::Shp)
    }

    fn file_stem(self) -> &'static str {
        match self {
            Method::Ugm => "ugm",
            Method::Sgm => "sgm",
            Method::Uhp => "uhp",
            Method::Shp => "shp",
            Method::OneNn => "1nn",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Where the Potts methods get β from.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BetaSource {
    /// Maximum likelihood on the source segmentations.
    #[default]
    Fitted,
    /// The same β for every class.
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceConfig {
    /// Generate `count` source phantoms with seeds `seed, seed + 1, ...`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phantom: Option<PhantomConfig>,
    /// Or read existing label files.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<PathBuf>>,
    #[serde(default = "default_source_count")]
    pub count: usize,
    #[serde(default = "default_source_seed")]
    pub seed: u64,
}

fn default_source_count() -> usize {
    5
}

fn default_source_seed() -> u64 {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetConfig {
    /// A fresh phantom per repetition.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phantom: Option<PhantomConfig>,
    /// Or one fixed image with its truth and mask.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VbSettings {
    #[serde(default = "default_vb_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_vb_tol")]
    pub tol: f64,
}

fn default_vb_max_iter() -> usize {
    VbConfig::default().max_iter
}

fn default_vb_tol() -> f64 {
    VbConfig::default().tol
}

impl Default for VbSettings {
    fn default() -> Self {
        Self { max_iter: default_vb_max_iter(), tol: default_vb_tol() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<SourceConfig>,
    pub target: TargetConfig,
    pub methods: Vec<Method>,
    #[serde(default)]
    pub beta: BetaSource,
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    #[serde(default = "default_labels_per_class")]
    pub labels_per_class: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub vb: VbSettings,
    /// Record wall-clock runtimes; off keeps the CSVs reproducible.
    #[serde(default)]
    pub timing: bool,
}

fn default_repetitions() -> usize {
    10
}

fn default_labels_per_class() -> usize {
    1
}

impl ExperimentConfig {
    /// Phantom-only config with the given methods and defaults elsewhere.
    pub fn phantom(target: PhantomConfig, methods: Vec<Method>) -> Self {
        Self {
            source: Some(SourceConfig {
                phantom: Some(target.clone()),
                labels: None,
                count: default_source_count(),
                seed: default_source_seed(),
            }),
            target: TargetConfig { phantom: Some(target), image: None, truth: None, mask: None },
            methods,
            beta: BetaSource::Fitted,
            repetitions: default_repetitions(),
            labels_per_class: default_labels_per_class(),
            seed: 0,
            vb: VbSettings::default(),
            timing: false,
        }
    }

    /// Parses and validates a config document. Relative paths are resolved
    /// against `base`.
    pub fn from_json(text: &str, base: &Path) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let mut config: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let pointer = json_pointer(e.path());
            Error::config(pointer, e.into_inner().to_string())
        })?;
        config.resolve_paths(base);
        config.validate()?;
        Ok(config)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(files) = self.source.as_mut().and_then(|s| s.labels.as_mut()) {
            files.iter_mut().for_each(fix);
        }
        for p in [&mut self.target.image, &mut self.target.truth, &mut self.target.mask].into_iter().flatten() {
            fix(p);
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::config("/methods", "at least one method is required"));
        }
        for (i, m) in self.methods.iter().enumerate() {
            if self.methods[..i].contains(m) {
                return Err(Error::config(format!("/methods/{i}"), format!("{m} is listed twice")));
            }
        }
        if self.repetitions == 0 {
            return Err(Error::config("/repetitions", "must be at least 1"));
        }
        if self.needs_labels() && self.labels_per_class == 0 {
            return Err(Error::config("/labels_per_class", "semi-supervised methods need at least 1"));
        }
        if self.vb.max_iter == 0 {
            return Err(Error::config("/vb/max_iter", "must be at least 1"));
        }
        if !(self.vb.tol > 0.0) {
            return Err(Error::config("/vb/tol", "must be > 0"));
        }
        if let BetaSource::Fixed(b) = self.beta {
            if !(0.0..=DEFAULT_BETA_MAX).contains(&b) {
                return Err(Error::config("/beta/fixed", format!("must lie in [0, {DEFAULT_BETA_MAX}]")));
            }
        }

        let t = &self.target;
        let files = [&t.image, &t.truth, &t.mask];
        match (&t.phantom, files.iter().filter(|f| f.is_some()).count()) {
            (Some(p), 0) => {
                let spec = p.resolve().map_err(|e| Error::config("/target/phantom", e.to_string()))?;
                if self.methods.iter().any(|m| m.is_unsupervised()) && spec.classes() > eval::MAX_MATCH_CLASSES {
                    return Err(Error::config(
                        "/target/phantom/classes",
                        format!("cluster matching supports at most {} classes", eval::MAX_MATCH_CLASSES),
                    ));
                }
            }
            (None, 3) => {}
            (Some(_), _) => return Err(Error::config("/target", "give either phantom or image/truth/mask files")),
            (None, _) => return Err(Error::config("/target", "needs a phantom or all of image, truth and mask")),
        }

        let fitted = self.beta == BetaSource::Fitted && self.methods.iter().any(|m| m.uses_potts());
        match &self.source {
            None if fitted => {
                return Err(Error::config("/source", "fitted beta needs source segmentations"));
            }
            None => {}
            Some(s) => match (&s.phantom, &s.labels) {
                (Some(p), None) => {
                    p.resolve().map_err(|e| Error::config("/source/phantom", e.to_string()))?;
                    if s.count == 0 {
                        return Err(Error::config("/source/count", "must be at least 1"));
                    }
                }
                (None, Some(files)) if !files.is_empty() => {}
                (None, Some(_)) => return Err(Error::config("/source/labels", "needs at least one file")),
                _ => return Err(Error::config("/source", "give exactly one of phantom or labels")),
            },
        }
        Ok(())
    }

    fn needs_labels(&self) -> bool {
        self.methods.iter().any(|m| m.needs_labels())
    }
}

fn json_pointer(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let mut out = String::new();
    for seg in path.iter() {
        out.push('/');
        match seg {
            Segment::Seq { index } => out.push_str(&index.to_string()),
            Segment::Map { key } | Segment::Enum { variant: key } => {
                out.push_str(&key.replace('~', "~0").replace('/', "~1"))
            }
            Segment::Unknown => out.push('?'),
        }
    }
    if out.is_empty() {
        out.push('/');
    }
    out
}

/// Per-method outcomes over all repetitions.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodResults {
    pub method: Method,
    pub errors: Vec<f64>,
    /// Zero unless the config enables timing.
    pub runtimes_ms: Vec<f64>,
    pub boundary_lengths: Vec<usize>,
    /// VB iterations used; zero for 1NN.
    pub iterations: Vec<usize>,
    pub summary: MeanSem,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultsTable {
    pub rows: Vec<MethodResults>,
}

impl ResultsTable {
    pub fn row(&self, method: Method) -> Option<&MethodResults> {
        self.rows.iter().find(|r| r.method == method)
    }

    /// `method,repetition,error,runtime_ms`
    pub fn write_results_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["method", "repetition", "error", "runtime_ms"]).map_err(csv_error)?;
        for row in &self.rows {
            for (r, (&e, &t)) in row.errors.iter().zip(&row.runtimes_ms).enumerate() {
                w.write_record([row.method.name(), &r.to_string(), &sig6(e), &sig6(t)]).map_err(csv_error)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// `method,mean_error,sem,repetitions`
    pub fn write_summary_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["method", "mean_error", "sem", "repetitions"]).map_err(csv_error)?;
        for row in &self.rows {
            let s = &row.summary;
            w.write_record([row.method.name(), &sig6(s.mean), &sig6(s.sem), &s.repetitions.to_string()])
                .map_err(csv_error)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Stream(io),
        other => Error::Stream(std::io::Error::other(format!("{other:?}"))),
    }
}

/// Decimal rendering with six significant digits.
pub fn sig6(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let sci = format!("{x:.5e}");
    let exp: i32 = sci.rsplit('e').next().and_then(|e| e.parse().ok()).unwrap_or(0);
    let decimals = (5 - exp).max(0) as usize;
    format!("{x:.decimals$}")
}

/// Inputs and outputs of one repetition, kept for the raster exports.
#[derive(Debug, Clone, PartialEq)]
pub struct Repetition {
    pub index: usize,
    pub seed: u64,
    pub image: ImageGrid,
    pub truth: LabelField,
    pub mask: Mask,
    pub labeled: Option<LabeledVoxelSet>,
    /// Segmentations in config method order; unsupervised ones are relabeled
    /// onto the truth classes.
    pub segmentations: Vec<(Method, LabelField)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub table: ResultsTable,
    pub beta: Option<BetaFit>,
    pub smoothness: SmoothnessParams,
    pub repetitions: Vec<Repetition>,
}

struct MethodOutcome {
    method: Method,
    error: f64,
    runtime_ms: f64,
    iterations: usize,
    segmentation: LabelField,
}

/// Seed for one of the independent random streams of a repetition.
fn stream_seed(repetition_seed: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(repetition_seed);
    rng.set_stream(stream);
    rng.next_u64()
}

const STREAM_TARGET: u64 = 0;
const STREAM_LABELS: u64 = 1;
const STREAM_KMEANS: u64 = 2;

fn annotate(method: &str, repetition: usize) -> impl Fn(Error) -> Error + '_ {
    move |e| Error::Experiment { method: method.to_string(), repetition, source: Box::new(e) }
}

fn source_segmentations(source: &SourceConfig) -> Result<Vec<LabelField>> {
    if let Some(files) = &source.labels {
        return files.iter().map(tensor::read_labels).collect();
    }
    let spec = source.phantom.as_ref().expect("validated source").resolve()?;
    (0..source.count as u64)
        .map(|i| Ok(generate_phantom(&spec, source.seed.wrapping_add(i))?.truth))
        .collect()
}

struct Target {
    fixed: Option<(ImageGrid, LabelField, Mask)>,
    phantom: Option<crate::phantom::PhantomSpec>,
}

impl Target {
    fn load(config: &TargetConfig) -> Result<Self> {
        if let Some(p) = &config.phantom {
            return Ok(Self { fixed: None, phantom: Some(p.resolve()?) });
        }
        let image = tensor::read_image(config.image.as_ref().expect("validated target"))?;
        let truth = tensor::read_labels(config.truth.as_ref().expect("validated target"))?;
        let mask = tensor::read_mask(config.mask.as_ref().expect("validated target"))?;
        if image.shape() != truth.shape() || image.shape() != mask.shape() {
            return Err(Error::config("/target", "image, truth and mask shapes differ"));
        }
        Ok(Self { fixed: Some((image, truth, mask)), phantom: None })
    }

    fn classes(&self) -> usize {
        match (&self.fixed, &self.phantom) {
            (Some((_, truth, _)), _) => truth.classes(),
            (None, Some(spec)) => spec.classes(),
            (None, None) => unreachable!("target is either fixed or generated"),
        }
    }

    fn draw(&self, seed: u64) -> Result<(ImageGrid, LabelField, Mask)> {
        match (&self.fixed, &self.phantom) {
            (Some(t), _) => Ok(t.clone()),
            (None, Some(spec)) => {
                let p = generate_phantom(spec, seed)?;
                Ok((p.image, p.truth, p.mask))
            }
            (None, None) => unreachable!("target is either fixed or generated"),
        }
    }
}

/// Runs every repetition, at most `jobs` at a time (all cores when `None`).
pub fn run_experiment(config: &ExperimentConfig, jobs: Option<usize>) -> Result<ExperimentOutput> {
    config.validate()?;
    let target = Target::load(&config.target)?;
    let classes = target.classes();

    let potts_requested = config.methods.iter().any(|m| m.uses_potts());
    let (beta, smoothness) = match config.beta {
        BetaSource::Fixed(b) => (None, SmoothnessParams::uniform(classes, b)?),
        BetaSource::Fitted if potts_requested => {
            let sources = source_segmentations(config.source.as_ref().expect("validated source"))?;
            if let Some(s) = sources.iter().find(|s| s.classes() != classes) {
                return Err(Error::config(
                    "/source",
                    format!("source segmentations have K = {} but the target has K = {classes}", s.classes()),
                ));
            }
            let fit = potts::fit_beta(&sources, &BetaFitConfig::default())?;
            let params = fit.params.clone();
            (Some(fit), params)
        }
        BetaSource::Fitted => (None, SmoothnessParams::zeros(classes)),
    };

    let vb_config = VbConfig { max_iter: config.vb.max_iter, tol: config.vb.tol };
    let run = |r: usize| run_repetition(config, &target, classes, &smoothness, &vb_config, r);
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(j) = jobs {
        builder = builder.num_threads(j.max(1));
    }
    let pool = builder.build().map_err(|e| Error::Stream(std::io::Error::other(e.to_string())))?;
    let results: Vec<(Repetition, Vec<MethodOutcome>)> =
        pool.install(|| (0..config.repetitions).into_par_iter().map(run).collect::<Result<_>>())?;

    let mut rows = Vec::with_capacity(config.methods.len());
    for (m_index, &method) in config.methods.iter().enumerate() {
        let outcomes: Vec<&MethodOutcome> = results.iter().map(|(_, o)| &o[m_index]).collect();
        debug_assert!(outcomes.iter().all(|o| o.method == method));
        let errors: Vec<f64> = outcomes.iter().map(|o| o.error).collect();
        rows.push(MethodResults {
            method,
            summary: eval::mean_and_sem(&errors)?,
            errors,
            runtimes_ms: outcomes.iter().map(|o| o.runtime_ms).collect(),
            boundary_lengths: outcomes.iter().map(|o| eval::boundary_length(&o.segmentation)).collect(),
            iterations: outcomes.iter().map(|o| o.iterations).collect(),
        });
    }
    let repetitions = results
        .into_iter()
        .map(|(mut rep, outcomes)| {
            rep.segmentations = outcomes.into_iter().map(|o| (o.method, o.segmentation)).collect();
            rep
        })
        .collect();
    Ok(ExperimentOutput { table: ResultsTable { rows }, beta, smoothness, repetitions })
}

fn run_repetition(
    config: &ExperimentConfig,
    target: &Target,
    classes: usize,
    smoothness: &SmoothnessParams,
    vb_config: &VbConfig,
    r: usize,
) -> Result<(Repetition, Vec<MethodOutcome>)> {
    let seed = config.seed.wrapping_add(r as u64);
    let setup = annotate("setup", r);
    let (image, truth, mask) = target.draw(stream_seed(seed, STREAM_TARGET)).map_err(&setup)?;
    let priors = PriorHyperparams::weak_default(&image, classes).map_err(|e| setup(e.into()))?;
    let labeled = if config.needs_labels() {
        Some(
            init::sample_labels(&truth, config.labels_per_class, stream_seed(seed, STREAM_LABELS))
                .map_err(|e| setup(e.into()))?,
        )
    } else {
        None
    };
    let zero = SmoothnessParams::zeros(classes);

    // k-means is shared by the unsupervised methods; its time is charged to each
    let kmeans_start = || -> Result<(hpotts_core::ResponsibilityField, f64)> {
        let start = Instant::now();
        let init = init::kmeans_init(&image, classes, stream_seed(seed, STREAM_KMEANS))?;
        Ok((init.responsibilities, start.elapsed().as_secs_f64() * 1e3))
    };
    let mut kmeans_cache: Option<(hpotts_core::ResponsibilityField, f64)> = None;

    let mut outcomes = Vec::with_capacity(config.methods.len());
    for &method in &config.methods {
        let tag = annotate(method.name(), r);
        let start = Instant::now();
        let mut extra_ms = 0.0;
        let (labels, iterations) = match method {
            Method::Ugm | Method::Uhp => {
                if kmeans_cache.is_none() {
                    kmeans_cache = Some(kmeans_start().map_err(&tag)?);
                }
                let (init_resp, init_ms) = kmeans_cache.as_ref().expect("just filled");
                extra_ms = *init_ms;
                let beta = if method == Method::Uhp { smoothness } else { &zero };
                let fit = vb::fit(&image, &priors, beta, init_resp, &ClampSet::empty(), vb_config)
                    .map_err(|e| tag(e.into()))?;
                let seg = fit.segmentation();
                let perm = eval::match_clusters(&seg, &truth, &mask).map_err(|e| tag(e.into()))?;
                let iterations = fit.iterations();
                (perm.apply(&seg).map_err(|e| tag(e.into()))?, iterations)
            }
            Method::Sgm | Method::Shp => {
                let labeled = labeled.as_ref().expect("sampled for semi-supervised methods");
                let init_resp = init::knn_init(&image, labeled, classes).map_err(|e| tag(e.into()))?;
                let clamps = labeled.clamps(classes, image.len()).map_err(|e| tag(e.into()))?;
                let beta = if method == Method::Shp { smoothness } else { &zero };
                let fit = vb::fit(&image, &priors, beta, &init_resp, &clamps, vb_config).map_err(|e| tag(e.into()))?;
                (fit.segmentation(), fit.iterations())
            }
            Method::OneNn => {
                let labeled = labeled.as_ref().expect("sampled for 1NN");
                (eval::onenn_baseline(&image, labeled, classes).map_err(|e| tag(e.into()))?, 0)
            }
        };
        let runtime_ms = if config.timing { start.elapsed().as_secs_f64() * 1e3 + extra_ms } else { 0.0 };
        let error = eval::classification_error(&labels, &truth, &mask).map_err(|e| tag(e.into()))?;
        outcomes.push(MethodOutcome { method, error, runtime_ms, iterations, segmentation: labels });
    }

    let rep = Repetition { index: r, seed, image, truth, mask, labeled, segmentations: Vec::new() };
    Ok((rep, outcomes))
}

/// Writes `results.csv`, `summary.csv`, the fitted β if any, and one
/// directory of rasters per repetition.
pub fn write_outputs(dir: &Path, output: &ExperimentOutput) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let results = dir.join("results.csv");
    let summary = dir.join("summary.csv");
    let mut buf = Vec::new();
    output.table.write_results_csv(&mut buf)?;
    fs::write(&results, &buf).map_err(|e| Error::io(&results, e))?;
    buf.clear();
    output.table.write_summary_csv(&mut buf)?;
    fs::write(&summary, &buf).map_err(|e| Error::io(&summary, e))?;
    if let Some(fit) = &output.beta {
        docs::write_beta(dir.join("beta.json"), &BetaDocument::from_fit(fit))?;
    }
    for rep in &output.repetitions {
        let rep_dir = dir.join(format!("rep_{:02}", rep.index));
        fs::create_dir_all(&rep_dir).map_err(|e| Error::io(&rep_dir, e))?;
        pgm::export_image_pgm(&rep.image, rep_dir.join("image.pgm"))?;
        pgm::export_labels_pgm(&rep.truth, rep_dir.join("truth.pgm"))?;
        for (method, seg) in &rep.segmentations {
            pgm::export_labels_pgm(seg, rep_dir.join(format!("{}.pgm", method.file_stem())))?;
        }
        if let Some(labeled) = &rep.labeled {
            docs::write_labeled(rep_dir.join("labeled.json"), labeled)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(methods: Vec<Method>) -> ExperimentConfig {
        let target = PhantomConfig { height: Some(24), width: Some(24), noise: Some(0.1), ..Default::default() };
        let mut c = ExperimentConfig::phantom(target, methods);
        c.repetitions = 3;
        c.source.as_mut().unwrap().count = 2;
        c
    }

    #[test]
    fn sig6_formatting() {
        assert_eq!(sig6(0.0), "0");
        assert_eq!(sig6(0.25), "0.250000");
        assert_eq!(sig6(0.123_456_78), "0.123457");
        assert_eq!(sig6(0.099_999_99), "0.100000");
        assert_eq!(sig6(12.5), "12.5000");
        assert_eq!(sig6(1_234_567.0), "1234567");
        assert_eq!(sig6(0.000_123_456_7), "0.000123457");
    }

    #[test]
    fn config_parsing_and_pointers() {
        let base = Path::new("/tmp");
        let ok = r#"{"target": {"phantom": {}}, "methods": ["UGM", "1NN"], "beta": {"fixed": 0.1}}"#;
        let c = ExperimentConfig::from_json(ok, base).unwrap();
        assert_eq!(c.repetitions, 10);
        assert_eq!(c.beta, BetaSource::Fixed(0.1));

        let cases = [
            (r#"{"target": {"phantom": {}}, "methods": ["XYZ"]}"#, "/methods/0"),
            (r#"{"target": {"phantom": {"noise": "loud"}}, "methods": ["UGM"]}"#, "/target/phantom/noise"),
            (r#"{"target": {"phantom": {}}, "methods": []}"#, "/methods"),
            (r#"{"target": {"phantom": {}}, "methods": ["UGM"], "repetitions": 0}"#, "/repetitions"),
            (r#"{"target": {"phantom": {}}, "methods": ["UHP"]}"#, "/source"),
            (r#"{"target": {"phantom": {}}, "methods": ["UGM"], "extra": 1}"#, "/extra"),
            (r#"{"target": {}, "methods": ["UGM"]}"#, "/target"),
            (r#"{"target": {"phantom": {"classes": 9}}, "methods": ["UGM"]}"#, "/target/phantom/classes"),
            (r#"{"target": {"phantom": {}}, "methods": ["UGM", "UGM"]}"#, "/methods/1"),
        ];
        for (text, pointer) in cases {
            match ExperimentConfig::from_json(text, base) {
                Err(Error::Config { pointer: p, .. }) => assert_eq!(p, pointer, "{text}"),
                other => panic!("{text}: {other:?}"),
            }
        }
    }

    #[test]
    fn deterministic_and_ordered() {
        let c = small(Method::ALL.to_vec());
        let a = run_experiment(&c, Some(1)).unwrap();
        let b = run_experiment(&c, Some(3)).unwrap();
        assert_eq!(a.table, b.table);
        let names: Vec<_> = a.table.rows.iter().map(|r| r.method).collect();
        assert_eq!(names, Method::ALL.to_vec());
        for row in &a.table.rows {
            assert_eq!(row.errors.len(), 3);
            assert_eq!(eval::mean_and_sem(&row.errors).unwrap(), row.summary);
            assert!(row.iterations.iter().all(|&i| i <= 30));
        }
    }

    #[test]
    fn zero_beta_uhp_equals_ugm() {
        let mut c = small(vec![Method::Ugm, Method::Uhp]);
        c.beta = BetaSource::Fixed(0.0);
        let out = run_experiment(&c, None).unwrap();
        assert_eq!(out.table.rows[0].errors, out.table.rows[1].errors);
    }

    #[test]
    fn unsupervised_only_samples_no_labels() {
        let c = small(vec![Method::Ugm]);
        let out = run_experiment(&c, None).unwrap();
        assert!(out.beta.is_none());
        assert!(out.repetitions.iter().all(|r| r.labeled.is_none()));
        let dir = tempfile::tempdir().unwrap();
        write_outputs(dir.path(), &out).unwrap();
        let rep = dir.path().join("rep_00");
        assert!(rep.join("ugm.pgm").exists());
        assert!(!rep.join("labeled.json").exists());
        assert!(!dir.path().join("beta.json").exists());
    }

    #[test]
    fn single_repetition_is_degenerate() {
        let mut c = small(vec![Method::OneNn]);
        c.repetitions = 1;
        let out = run_experiment(&c, None).unwrap();
        let s = out.table.rows[0].summary;
        assert!(s.degenerate);
        assert_eq!(s.sem, 0.0);
    }

    #[test]
    fn csv_layout() {
        let c = small(vec![Method::Ugm, Method::OneNn]);
        let out = run_experiment(&c, None).unwrap();
        let mut buf = Vec::new();
        out.table.write_results_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "method,repetition,error,runtime_ms");
        assert_eq!(lines.len(), 1 + 2 * 3);
        assert!(lines[1].starts_with("UGM,0,") && lines[1].ends_with(",0"));
        let mut buf = Vec::new();
        out.table.write_summary_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("method,mean_error,sem,repetitions\nUGM,"));
        assert!(text.lines().nth(2).unwrap().starts_with("1NN,"));
    }
}
