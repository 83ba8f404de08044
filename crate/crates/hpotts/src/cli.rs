//! `hpotts` subcommands. Exit status: 0 success, 1 runtime failure, 2 usage
//! or config error.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use hpotts_core::eval;
use hpotts_core::init;
use hpotts_core::potts::{self, DEFAULT_BETA_MAX, DEFAULT_FIXED_BETA};
use hpotts_core::vb::{self, ClampSet};
use hpotts_core::{BetaFitConfig, PriorHyperparams, SmoothnessParams, VbConfig};

use crate::docs::{self, BetaDocument};
use crate::error::{Error, Result};
use crate::experiment::{self, sig6, ExperimentConfig};
use crate::phantom::{generate_phantom, PhantomSpec};
use crate::pgm;
use crate::tensor::{self, write_grid_file};

#[derive(Debug, Parser)]
#[command(name = "hpotts", version, about = "Variational hidden Potts segmentation of 2D images")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic head phantom: image.gt, labels.gt, mask.gt
    Phantom(PhantomArgs),
    /// Fit Potts smoothness by maximum likelihood on label files
    FitBeta(FitBetaArgs),
    /// Segment an image with variational Bayes
    Segment(SegmentArgs),
    /// Masked classification error of a segmentation
    Eval(EvalArgs),
    /// Run a repeated cross-center experiment from a JSON config
    Experiment(ExperimentArgs),
}

#[derive(Debug, Args)]
struct PhantomArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 64)]
    height: usize,
    #[arg(long, default_value_t = 64)]
    width: usize,
    #[arg(long, default_value_t = 4)]
    classes: usize,
    /// Noise stddev for every class
    #[arg(long)]
    noise: Option<f64>,
}

#[derive(Debug, Args)]
struct FitBetaArgs {
    #[arg(long, required = true, num_args = 1..)]
    labels: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_BETA_MAX)]
    beta_max: f64,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
}

#[derive(Debug, Args)]
struct SegmentArgs {
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// β document written by fit-beta
    #[arg(long, conflicts_with = "beta_fixed")]
    beta: Option<PathBuf>,
    /// Same β for every class [default: 0.1]
    #[arg(long)]
    beta_fixed: Option<f64>,
    /// JSON list of {"index", "class"} records
    #[arg(long, requires = "semi")]
    labels_given: Option<PathBuf>,
    /// Clamp the given labels and start from their nearest neighbours
    #[arg(long, requires = "labels_given")]
    semi: bool,
    #[arg(long, default_value_t = 4)]
    classes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 30)]
    max_iter: usize,
    #[arg(long, default_value_t = 1e-5)]
    tol: f64,
    /// Log every iteration to stderr
    #[arg(long, short)]
    verbose: bool,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    truth: PathBuf,
    #[arg(long)]
    mask: PathBuf,
    /// Relabel predicted clusters onto truth classes first
    #[arg(long = "match")]
    match_clusters: bool,
}

#[derive(Debug, Args)]
struct ExperimentArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Concurrent repetitions [default: available parallelism]
    #[arg(long)]
    jobs: Option<usize>,
}

/// Parses `args` (program name first) and runs the subcommand.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().ansi().to_string();
            let _ = if code == 0 { out.write_all(text.as_bytes()) } else { err.write_all(text.as_bytes()) };
            return code;
        }
    };
    let result = match cli.command {
        Command::Phantom(a) => cmd_phantom(&a, out),
        Command::FitBeta(a) => cmd_fit_beta(&a, out),
        Command::Segment(a) => cmd_segment(&a, out, err),
        Command::Eval(a) => cmd_eval(&a, out),
        Command::Experiment(a) => cmd_experiment(&a, out, err),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            match e {
                Error::Config { .. } => 2,
                _ => 1,
            }
        }
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn cmd_phantom(a: &PhantomArgs, out: &mut dyn Write) -> Result<()> {
    let mut spec = PhantomSpec::with_classes(a.classes).with_size(a.height, a.width);
    if let Some(noise) = a.noise {
        spec = spec.with_noise(noise);
    }
    let p = generate_phantom(&spec, a.seed)?;
    create_dir(&a.out)?;
    write_grid_file(a.out.join("image.gt"), &p.image.clone().into())?;
    write_grid_file(a.out.join("labels.gt"), &p.truth.clone().into())?;
    write_grid_file(a.out.join("mask.gt"), &p.mask.clone().into())?;
    writeln!(
        out,
        "phantom {}x{} with {} classes, {} voxels in mask, seed {} -> {}",
        a.height,
        a.width,
        a.classes,
        p.mask.count(),
        a.seed,
        a.out.display()
    )?;
    Ok(())
}

fn cmd_fit_beta(a: &FitBetaArgs, out: &mut dyn Write) -> Result<()> {
    let labels = a.labels.iter().map(tensor::read_labels).collect::<Result<Vec<_>>>()?;
    let config = BetaFitConfig { beta_max: a.beta_max, tol: a.tol, ..BetaFitConfig::default() };
    let fit = potts::fit_beta(&labels, &config)?;
    docs::write_beta(&a.out, &BetaDocument::from_fit(&fit))?;
    let shown: Vec<String> = fit.params.beta().iter().map(|b| format!("{b:.6}")).collect();
    writeln!(
        out,
        "beta = [{}] after {} iterations, objective {:.6}{}",
        shown.join(", "),
        fit.iterations,
        fit.objective,
        if fit.converged { "" } else { " (not converged)" }
    )?;
    Ok(())
}

fn stage(name: &'static str) -> impl Fn(hpotts_core::Error) -> Error {
    move |source| Error::Stage { stage: name, source }
}

fn cmd_segment(a: &SegmentArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let image = tensor::read_image(&a.image)?;
    let k = a.classes;
    let beta = match (&a.beta, a.beta_fixed) {
        (Some(path), _) => {
            let params = docs::read_beta(path)?.params()?;
            if params.classes() != k {
                return Err(Error::Core(hpotts_core::Error::InvalidArgument(format!(
                    "{} holds {} classes but --classes is {k}",
                    path.display(),
                    params.classes()
                ))));
            }
            params
        }
        (None, fixed) => SmoothnessParams::uniform(k, fixed.unwrap_or(DEFAULT_FIXED_BETA))?,
    };
    let priors = PriorHyperparams::weak_default(&image, k).map_err(stage("priors"))?;
    let (start, clamps) = if a.semi {
        let path = a.labels_given.as_ref().expect("clap enforces --labels-given with --semi");
        let labeled = docs::read_labeled(path)?;
        let start = init::knn_init(&image, &labeled, k).map_err(stage("knn init"))?;
        (start, labeled.clamps(k, image.len())?)
    } else {
        (init::kmeans_init(&image, k, a.seed).map_err(stage("k-means init"))?.responsibilities, ClampSet::empty())
    };
    let config = VbConfig { max_iter: a.max_iter, tol: a.tol };
    let verbose = a.verbose;
    let fit = vb::fit_observed(&image, &priors, &beta, &start, &clamps, &config, |s| {
        if verbose {
            let _ = writeln!(err, "iteration {} change {:e}", s.iteration + 1, s.change);
        }
    })
    .map_err(stage("variational fit"))?;

    create_dir(&a.out)?;
    let seg = fit.segmentation();
    write_grid_file(a.out.join("labels.gt"), &seg.clone().into())?;
    write_grid_file(a.out.join("resp.gt"), &fit.responsibilities.clone().into())?;
    docs::write_posterior(a.out.join("posterior.json"), &fit.posterior)?;
    pgm::export_labels_pgm(&seg, a.out.join("seg.pgm"))?;
    writeln!(
        out,
        "iterations {} change {:e}{}",
        fit.iterations(),
        fit.trace.last().copied().unwrap_or(0.0),
        if fit.converged { "" } else { " (iteration cap reached)" }
    )?;
    Ok(())
}

fn cmd_eval(a: &EvalArgs, out: &mut dyn Write) -> Result<()> {
    let mut pred = tensor::read_labels(&a.pred)?;
    let truth = tensor::read_labels(&a.truth)?;
    let mask = tensor::read_mask(&a.mask)?;
    if a.match_clusters {
        let perm = eval::match_clusters(&pred, &truth, &mask)?;
        pred = perm.apply(&pred)?;
        let shown: Vec<String> = perm.as_slice().iter().map(usize::to_string).collect();
        writeln!(out, "{:.6}", eval::classification_error(&pred, &truth, &mask)?)?;
        writeln!(out, "permutation {}", shown.join(" "))?;
    } else {
        writeln!(out, "{:.6}", eval::classification_error(&pred, &truth, &mask)?)?;
    }
    Ok(())
}

fn cmd_experiment(a: &ExperimentArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let text = fs::read_to_string(&a.config).map_err(|e| Error::io(&a.config, e))?;
    let base = a.config.parent().unwrap_or(Path::new("."));
    let config = ExperimentConfig::from_json(&text, base)?;
    let output = experiment::run_experiment(&config, a.jobs)?;
    experiment::write_outputs(&a.out, &output)?;
    if let Some(fit) = &output.beta {
        let shown: Vec<String> = fit.params.beta().iter().map(|b| sig6(*b)).collect();
        writeln!(out, "fitted beta [{}]", shown.join(", "))?;
    }
    for row in &output.table.rows {
        let s = &row.summary;
        writeln!(out, "{:<4} error {} +- {} over {}", row.method.name(), sig6(s.mean), sig6(s.sem), s.repetitions)?;
        if s.degenerate {
            writeln!(err, "warning: {} has a single repetition, its standard error is reported as 0", row.method)?;
        }
    }
    writeln!(out, "wrote {}", a.out.display())?;
    Ok(())
}
