//! The four pipeline stages behind the command-line tool. Each stage reads its
//! inputs from disk, validates shapes against the dataset manifest, and
//! writes its outputs together with the resolved configuration.
//!
//! Default layout under `output_dir`:
//!
//! ```text
//! dataset/   manifest.json, *.cspc arrays, config.json
//! embed/     phi.cspc, eigenvalues.cspc, scatter.csv, config.json
//! fit/       coefficients_a.cspc, coefficients_b.cspc, history.csv,
//!            predictions.cspc, config.json
//! evaluate/  report.json, per_particle.csv, curves.csv, overlay.csv, config.json
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::array_io::{read_array, write_array, Array};
use crate::datasets::{sample_backbone, sample_box_arms, Backbone3DConfig, Box2DConfig, Dataset, Split};
use crate::error::{Error, Result};
use crate::frenet::{synthesize_curve, DiscreteCurve, FrenetSpace, Space};
use crate::metrics::{error_report, ErrorReport};
use crate::recon::{sgd_fit, CoefficientMatrices, FitConfig, FitHistory, HistoryRow, Model};
use crate::spectral::{embed, GraphConfig, SpectralBasis};
use crate::store::{load_dataset, load_json, load_manifest, read_curves, save_dataset, save_json, write_curves, Manifest};
use crate::trajectory::{load_trajectory, synthetic_trajectory, SpacingStats};

pub const CONFIG_FILE: &str = "config.json";
/// Test particles drawn in the overlay table.
const OVERLAY_PARTICLES: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetSpec {
    BoxArms(Box2DConfig),
    Backbone(Backbone3DConfig),
}

impl DatasetSpec {
    fn set_seed(&mut self, seed: u64) {
        match self {
            DatasetSpec::BoxArms(c) => c.seed = seed,
            DatasetSpec::Backbone(c) => c.seed = seed,
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            DatasetSpec::BoxArms(c) => c.validate(),
            DatasetSpec::Backbone(c) => c.validate(),
        }
    }

    fn default_graph(&self) -> GraphConfig {
        match self {
            DatasetSpec::BoxArms(_) => GraphConfig::gaussian(96.0),
            DatasetSpec::Backbone(_) => GraphConfig::gaussian(80.0),
        }
    }

    fn default_k(&self) -> usize {
        match self {
            DatasetSpec::BoxArms(_) => 20,
            DatasetSpec::Backbone(_) => 10,
        }
    }

    fn default_fit(&self) -> FitConfig {
        let (epochs, batch_size, learning_rate) = match self {
            DatasetSpec::BoxArms(_) => (100, 500, 0.01),
            DatasetSpec::Backbone(_) => (15, 300, 0.5),
        };
        FitConfig {
            epochs,
            batch_size,
            learning_rate,
            seed: 0,
            shuffle: true,
            max_steps: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbedSection {
    #[serde(default)]
    pub graph: Option<GraphConfig>,
    /// Number of eigenvectors `K`.
    #[serde(default)]
    pub k: Option<usize>,
}

/// Configuration shared by every command. Relative paths are taken relative
/// to the working directory; unset paths default to the layout under
/// `output_dir`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetSpec,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub dataset_dir: Option<PathBuf>,
    /// Directory holding `phi.cspc` and `eigenvalues.cspc`.
    #[serde(default)]
    pub basis_dir: Option<PathBuf>,
    #[serde(default)]
    pub fit_dir: Option<PathBuf>,
    /// Predicted test curves, `n_test × m × D` in test-split order.
    #[serde(default)]
    pub predictions_path: Option<PathBuf>,
    #[serde(default)]
    pub evaluate_dir: Option<PathBuf>,
    #[serde(default)]
    pub embed: EmbedSection,
    #[serde(default)]
    pub fit: Option<FitConfig>,
    /// 1-based angle indices allowed to vary; absent frees every angle.
    #[serde(default)]
    pub mask: Option<Vec<usize>>,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("run")
}

impl RunConfig {
    /// A configuration with every optional field at its default.
    pub fn new(dataset: DatasetSpec) -> Self {
        Self {
            dataset,
            output_dir: default_output_dir(),
            dataset_dir: None,
            basis_dir: None,
            fit_dir: None,
            predictions_path: None,
            evaluate_dir: None,
            embed: EmbedSection::default(),
            fit: None,
            mask: None,
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let cfg: Self = load_json(path)?;
        cfg.dataset.validate()?;
        Ok(cfg)
    }

    /// Applies command-line overrides. A new output directory only moves the
    /// paths that were not set explicitly; a seed replaces both the dataset
    /// and the fit seed.
    pub fn with_overrides(mut self, output_dir: Option<PathBuf>, seed: Option<u64>) -> Self {
        if let Some(dir) = output_dir {
            self.output_dir = dir;
        }
        if let Some(seed) = seed {
            self.dataset.set_seed(seed);
            let mut fit = self.fit.take().unwrap_or_else(|| self.dataset.default_fit());
            fit.seed = seed;
            self.fit = Some(fit);
        }
        self
    }

    /// Fills every unset field with its default.
    pub fn resolved(&self) -> Self {
        let out = &self.output_dir;
        let fit_dir = self.fit_dir.clone().unwrap_or_else(|| out.join("fit"));
        Self {
            dataset: self.dataset.clone(),
            output_dir: out.clone(),
            dataset_dir: Some(self.dataset_dir.clone().unwrap_or_else(|| out.join("dataset"))),
            basis_dir: Some(self.basis_dir.clone().unwrap_or_else(|| out.join("embed"))),
            predictions_path: Some(
                self.predictions_path
                    .clone()
                    .unwrap_or_else(|| fit_dir.join("predictions.cspc")),
            ),
            fit_dir: Some(fit_dir),
            evaluate_dir: Some(self.evaluate_dir.clone().unwrap_or_else(|| out.join("evaluate"))),
            embed: EmbedSection {
                graph: Some(self.embed.graph.unwrap_or_else(|| self.dataset.default_graph())),
                k: Some(self.embed.k.unwrap_or_else(|| self.dataset.default_k())),
            },
            fit: Some(self.fit.clone().unwrap_or_else(|| self.dataset.default_fit())),
            mask: self.mask.clone(),
        }
    }

    fn path(&self, p: &Option<PathBuf>) -> PathBuf {
        p.clone().expect("resolved configuration")
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_config(dir: &Path, cfg: &RunConfig) -> Result<()> {
    save_json(dir.join(CONFIG_FILE), cfg)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerateSummary {
    pub dir: PathBuf,
    pub manifest: Manifest,
    pub snr: f64,
    /// Bond lengths of the source conformations (trajectory frames for the
    /// backbone, generated chains for the box).
    pub spacing: SpacingStats,
}

pub fn cmd_generate(cfg: &RunConfig) -> Result<GenerateSummary> {
    let cfg = cfg.resolved();
    let dir = cfg.path(&cfg.dataset_dir);
    let generator = serde_json::to_value(&cfg.dataset).expect("serializable");
    let (manifest, snr, spacing) = match &cfg.dataset {
        DatasetSpec::BoxArms(c) => {
            let ds = sample_box_arms(c)?;
            let spacing = SpacingStats::of(ds.particles.iter().filter_map(|p| p.ground_truth.as_ref()));
            (save_dataset(&dir, &ds, Some(generator))?, ds.snr()?, spacing)
        }
        DatasetSpec::Backbone(c) => {
            let frames = match &c.trajectory_path {
                Some(path) => load_trajectory(path)?.frames,
                None => synthetic_trajectory(&c.synthetic_trajectory)?,
            };
            let spacing = SpacingStats::of(&frames);
            let ds = sample_backbone(&frames, c)?;
            (save_dataset(&dir, &ds, Some(generator))?, ds.snr()?, spacing)
        }
    };
    write_config(&dir, &cfg)?;
    Ok(GenerateSummary {
        dir,
        manifest,
        snr,
        spacing,
    })
}

/// Writes `phi.cspc` and `eigenvalues.cspc` into `dir`.
pub fn save_basis(dir: impl AsRef<Path>, basis: &SpectralBasis) -> Result<()> {
    let dir = dir.as_ref();
    create_dir(dir)?;
    write_array(dir.join("phi.cspc"), &Array::from_matrix(&basis.phi))?;
    write_array(
        dir.join("eigenvalues.cspc"),
        &Array::new(vec![basis.eigenvalues.len()], basis.eigenvalues.clone())?,
    )
}

pub fn load_basis(dir: impl AsRef<Path>) -> Result<SpectralBasis> {
    let dir = dir.as_ref();
    let phi = read_array(dir.join("phi.cspc"))?;
    let eigenvalues = read_array(dir.join("eigenvalues.cspc"))?;
    if eigenvalues.shape.len() != 1 {
        return Err(Error::invalid("eigenvalues", format!("shape {:?} is not a vector", eigenvalues.shape)));
    }
    SpectralBasis::new(eigenvalues.data, phi.to_matrix()?)
}

fn any_betas(dir: &Path, man: &Manifest) -> Result<Vec<Vec<f64>>> {
    let betas = read_array(dir.join(&man.files.betas))?;
    betas.expect_shape("betas", &[man.particles, man.beta_len])?;
    Ok(betas.data.chunks_exact(man.beta_len.max(1)).map(<[f64]>::to_vec).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbedSummary {
    pub dir: PathBuf,
    pub eigenvalues: Vec<f64>,
}

/// Builds the similarity graph over all particles, writes the basis and a
/// scatter table of the first non-constant eigenvectors with each particle's
/// generator parameters.
pub fn cmd_embed(cfg: &RunConfig) -> Result<EmbedSummary> {
    let cfg = cfg.resolved();
    let data_dir = cfg.path(&cfg.dataset_dir);
    let man = load_manifest(&data_dir)?;
    let betas = any_betas(&data_dir, &man)?;
    let k = cfg.embed.k.expect("resolved");
    if k == 0 || k > man.particles {
        return Err(Error::invalid("K", format!("{k} outside [1, {}]", man.particles)));
    }
    let basis = embed(&betas, &cfg.embed.graph.expect("resolved"), k)?;
    let dir = cfg.path(&cfg.basis_dir);
    save_basis(&dir, &basis)?;

    let latent = read_array(data_dir.join(&man.files.latent))?;
    latent.expect_shape("latent", &[man.particles, man.latent_width])?;
    let shown: Vec<usize> = (1..k.min(4)).collect();
    let mut text = String::from("particle,split");
    for c in &shown {
        write!(text, ",phi_{c}").unwrap();
    }
    for c in 0..man.latent_width {
        write!(text, ",latent_{c}").unwrap();
    }
    text.push('\n');
    for i in 0..man.particles {
        let split = match man.splits[i] {
            Split::Train => "train",
            Split::Test => "test",
        };
        write!(text, "{i},{split}").unwrap();
        for &c in &shown {
            write!(text, ",{}", basis.phi[(i, c)]).unwrap();
        }
        for v in &latent.data[i * man.latent_width..(i + 1) * man.latent_width] {
            write!(text, ",{v}").unwrap();
        }
        text.push('\n');
    }
    write_text(&dir.join("scatter.csv"), &text)?;
    write_config(&dir, &cfg)?;
    Ok(EmbedSummary {
        dir,
        eigenvalues: basis.eigenvalues,
    })
}

pub fn format_history(history: &FitHistory) -> String {
    let mut text = String::from("epoch,steps,train_loss,test_loss,max_error,avg_error\n");
    for r in &history.rows {
        writeln!(
            text,
            "{},{},{},{},{},{}",
            r.epoch,
            r.steps,
            r.train_loss,
            opt(r.test_loss),
            opt(r.max_error),
            opt(r.avg_error)
        )
        .unwrap();
    }
    text
}

/// Parses the table written by [`format_history`].
pub fn parse_history(text: &str, path: &Path) -> Result<FitHistory> {
    let fail = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        location: format!("line {line}"),
        message,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == "epoch,steps,train_loss,test_loss,max_error,avg_error" => {}
        _ => return Err(fail(1, "missing history header".into())),
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(fail(i + 1, format!("expected 6 fields, found {}", fields.len())));
        }
        let real = |s: &str| -> Result<Option<f64>> {
            if s.is_empty() {
                return Ok(None);
            }
            s.parse().map(Some).map_err(|_| fail(i + 1, format!("bad number {s:?}")))
        };
        let int = |s: &str| -> Result<usize> { s.parse().map_err(|_| fail(i + 1, format!("bad integer {s:?}"))) };
        rows.push(HistoryRow {
            epoch: int(fields[0])?,
            steps: int(fields[1])?,
            train_loss: real(fields[2])?.ok_or_else(|| fail(i + 1, "missing training loss".into()))?,
            test_loss: real(fields[3])?,
            max_error: real(fields[4])?,
            avg_error: real(fields[5])?,
        });
    }
    Ok(FitHistory { rows })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitSummary {
    pub dir: PathBuf,
    pub history: FitHistory,
}

fn fit_dataset<const D: usize>(cfg: &RunConfig, ds: &Dataset<D>, basis: &SpectralBasis) -> Result<FitSummary>
where
    Space<D>: FrenetSpace<D>,
{
    if basis.len() != ds.len() {
        return Err(Error::Shape {
            what: "basis rows (particles)",
            expected: ds.len(),
            found: basis.len(),
        });
    }
    let model = Model::new(basis, &ds.reference, &ds.forward, ds.delta)?;
    let fit = cfg.fit.clone().expect("resolved");
    let (coeffs, history) = sgd_fit(&ds.particles, &model, &fit, cfg.mask.clone())?;
    let dir = cfg.path(&cfg.fit_dir);
    create_dir(&dir)?;
    write_array(dir.join("coefficients_a.cspc"), &Array::from_matrix(&coeffs.a))?;
    if let Some(b) = &coeffs.b {
        write_array(dir.join("coefficients_b.cspc"), &Array::from_matrix(b))?;
    }
    write_text(&dir.join("history.csv"), &format_history(&history))?;
    let predictions = ds
        .indices(Split::Test)
        .into_iter()
        .map(|i| model.predict_curve(&ds.particles[i], &coeffs))
        .collect::<Result<Vec<_>>>()?;
    write_curves(cfg.path(&cfg.predictions_path), &predictions)?;
    write_config(&dir, cfg)?;
    Ok(FitSummary { dir, history })
}

pub fn cmd_fit(cfg: &RunConfig) -> Result<FitSummary> {
    let cfg = cfg.resolved();
    let data_dir = cfg.path(&cfg.dataset_dir);
    let man = load_manifest(&data_dir)?;
    let basis = load_basis(cfg.path(&cfg.basis_dir))?;
    if basis.len() != man.particles {
        return Err(Error::Shape {
            what: "basis rows (particles)",
            expected: man.particles,
            found: basis.len(),
        });
    }
    match man.dimension {
        2 => fit_dataset(&cfg, &load_dataset::<2>(&data_dir)?.0, &basis),
        _ => fit_dataset(&cfg, &load_dataset::<3>(&data_dir)?.0, &basis),
    }
}

/// Reads fitted coefficients back from a fit directory.
pub fn load_coefficients(dir: impl AsRef<Path>, mask: Option<Vec<usize>>) -> Result<CoefficientMatrices> {
    let dir = dir.as_ref();
    let a = read_array(dir.join("coefficients_a.cspc"))?.to_matrix()?;
    let b_path = dir.join("coefficients_b.cspc");
    let b: Option<DMatrix<f64>> = if b_path.exists() {
        Some(read_array(&b_path)?.to_matrix()?)
    } else {
        None
    };
    CoefficientMatrices::from_parts(a, b, mask)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub particles: usize,
    pub prediction: ErrorReport,
    /// Errors of the known conformation placed at every particle's pose.
    pub baseline: ErrorReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluateSummary {
    pub dir: PathBuf,
    pub report: EvaluationReport,
}

fn evaluate_dataset<const D: usize>(cfg: &RunConfig, ds: &Dataset<D>) -> Result<EvaluateSummary>
where
    Space<D>: FrenetSpace<D>,
{
    let test = ds.indices(Split::Test);
    let truth: Vec<DiscreteCurve<D>> = test
        .iter()
        .map(|&i| {
            ds.particles[i].ground_truth.clone().ok_or_else(|| {
                Error::invalid("dataset", "no ground truth; evaluation needs the test-set conformations")
            })
        })
        .collect::<Result<_>>()?;
    let predictions = read_curves::<D>(cfg.path(&cfg.predictions_path), ds.delta)?;
    if predictions.len() != truth.len() {
        return Err(Error::Shape {
            what: "predicted curves (test particles)",
            expected: truth.len(),
            found: predictions.len(),
        });
    }
    let baseline_curves = test
        .iter()
        .map(|&i| synthesize_curve(&ds.reference, &ds.particles[i].pose, ds.delta))
        .collect::<Result<Vec<_>>>()?;
    let report = EvaluationReport {
        particles: truth.len(),
        prediction: error_report(&truth, &predictions)?,
        baseline: error_report(&truth, &baseline_curves)?,
    };

    let dir = cfg.path(&cfg.evaluate_dir);
    create_dir(&dir)?;
    save_json(dir.join("report.json"), &report)?;
    let mut table = String::from("particle,max_error,baseline_max_error\n");
    for (k, &i) in test.iter().enumerate() {
        writeln!(
            table,
            "{i},{},{}",
            report.prediction.per_particle_max[k], report.baseline.per_particle_max[k]
        )
        .unwrap();
    }
    write_text(&dir.join("per_particle.csv"), &table)?;

    let axes = ["x", "y", "z"];
    let mut overlay = String::from("particle,atom,curve");
    for a in &axes[..D] {
        write!(overlay, ",{a}").unwrap();
    }
    overlay.push('\n');
    for (k, &i) in test.iter().enumerate().take(OVERLAY_PARTICLES) {
        for (name, curve) in [("truth", &truth[k]), ("predicted", &predictions[k]), ("baseline", &baseline_curves[k])] {
            for (j, z) in curve.points.iter().enumerate() {
                write!(overlay, "{i},{},{name}", j + 1).unwrap();
                for c in z.iter() {
                    write!(overlay, ",{c}").unwrap();
                }
                overlay.push('\n');
            }
        }
    }
    write_text(&dir.join("overlay.csv"), &overlay)?;

    let history_path = cfg.path(&cfg.fit_dir).join("history.csv");
    if history_path.exists() {
        let text = fs::read_to_string(&history_path).map_err(|e| Error::io(&history_path, e))?;
        let history = parse_history(&text, &history_path)?;
        write_text(&dir.join("curves.csv"), &format_history(&history))?;
    }
    write_config(&dir, cfg)?;
    Ok(EvaluateSummary { dir, report })
}

/// Scores predicted test curves against the ground truth, next to the
/// known-conformation baseline.
pub fn cmd_evaluate(cfg: &RunConfig) -> Result<EvaluateSummary> {
    let cfg = cfg.resolved();
    let data_dir = cfg.path(&cfg.dataset_dir);
    let man = load_manifest(&data_dir)?;
    if !man.has_ground_truth() {
        return Err(Error::invalid(
            "dataset",
            "no ground truth; evaluation needs the test-set conformations",
        ));
    }
    match man.dimension {
        2 => evaluate_dataset(&cfg, &load_dataset::<2>(&data_dir)?.0),
        _ => evaluate_dataset(&cfg, &load_dataset::<3>(&data_dir)?.0),
    }
}
