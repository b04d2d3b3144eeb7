//! Spectral expansion of chain angles and its fit to projection data.
//!
//! Particle `i` is modelled with angles `Θ_0 + A·Φ_i` (and `Ψ_0 + B·Φ_i` in
//! 3D), synthesized at its known pose and projected. The fit minimizes the
//! batch-mean squared projection residual by plain SGD, starting from
//! `A = B = 0`, i.e. from the known conformation.
//!
//! Gradients are exact and computed in reverse mode: residual → atom
//! positions (closed-form Gaussian derivative) → segment tangents → frames →
//! step rotations → angles → coefficients. Frames above the reference atom are
//! swept downwards and frames below it upwards.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datasets::{ParticleRecord, Split};
use crate::error::{Error, Result};
use crate::forward::{project_points, project_points_adjoint, ForwardModelConfig, ProjectionImage};
use crate::frenet::{
    propagate, synthesize_curve, ChainAngles, DiscreteCurve, Frame, FrenetSpace, Point,
    Space,
};
use crate::metrics::error_report;
use crate::spectral::SpectralBasis;

/// Coefficients `A` (torsion) and `B` (bond, 3D only), `(m-2) × K`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientMatrices {
    pub a: DMatrix<f64>,
    pub b: Option<DMatrix<f64>>,
    /// 1-based angle indices allowed to vary; `None` frees every row.
    mask: Option<Vec<usize>>,
}

impl CoefficientMatrices {
    pub fn zeros(angle_count: usize, k: usize, spatial: bool, mask: Option<Vec<usize>>) -> Result<Self> {
        let mask = normalize_mask(mask, angle_count)?;
        Ok(Self {
            a: DMatrix::zeros(angle_count, k),
            b: spatial.then(|| DMatrix::zeros(angle_count, k)),
            mask,
        })
    }

    /// Wraps existing matrices; rows outside the mask are zeroed.
    pub fn from_parts(a: DMatrix<f64>, b: Option<DMatrix<f64>>, mask: Option<Vec<usize>>) -> Result<Self> {
        if let Some(b) = &b {
            if b.shape() != a.shape() {
                return Err(Error::Shape {
                    what: "rows of B",
                    expected: a.nrows(),
                    found: b.nrows(),
                });
            }
        }
        let mask = normalize_mask(mask, a.nrows())?;
        let mut out = Self { a, b, mask };
        out.apply_mask();
        Ok(out)
    }

    pub fn mask(&self) -> Option<&[usize]> {
        self.mask.as_deref()
    }

    pub fn angle_count(&self) -> usize {
        self.a.nrows()
    }

    pub fn rank(&self) -> usize {
        self.a.ncols()
    }

    /// Whether 0-based angle row `row` may vary.
    pub fn is_free(&self, row: usize) -> bool {
        self.mask
            .as_ref()
            .is_none_or(|m| m.binary_search(&(row + 1)).is_ok())
    }

    fn apply_mask(&mut self) {
        for row in 0..self.angle_count() {
            if !self.is_free(row) {
                self.a.row_mut(row).fill(0.0);
                if let Some(b) = &mut self.b {
                    b.row_mut(row).fill(0.0);
                }
            }
        }
    }

    /// `self ← self - lr·grad`, keeping masked rows at zero.
    pub fn step(&mut self, grad: &Gradient, lr: f64) {
        self.a -= &grad.a * lr;
        if let (Some(b), Some(gb)) = (&mut self.b, &grad.b) {
            *b -= gb * lr;
        }
        self.apply_mask();
    }
}

fn normalize_mask(mask: Option<Vec<usize>>, angle_count: usize) -> Result<Option<Vec<usize>>> {
    let Some(mut mask) = mask else {
        return Ok(None);
    };
    mask.sort_unstable();
    mask.dedup();
    if let Some(&bad) = mask.iter().find(|&&j| j == 0 || j > angle_count) {
        return Err(Error::invalid(
            "mask",
            format!("angle index {bad} outside [1, {angle_count}]"),
        ));
    }
    Ok(Some(mask))
}

/// Gradient of the loss with respect to `A` and `B`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub a: DMatrix<f64>,
    pub b: Option<DMatrix<f64>>,
}

impl Gradient {
    pub fn norm(&self) -> f64 {
        let b = self.b.as_ref().map_or(0.0, |b| b.norm_squared());
        (self.a.norm_squared() + b).sqrt()
    }
}

/// `Θ_0 + A·φ_i` (and `Ψ_0 + B·φ_i`), not wrapped.
pub fn angles_for_particle(
    coeffs: &CoefficientMatrices,
    reference: &ChainAngles,
    phi_i: &[f64],
) -> Result<ChainAngles> {
    let rows = reference.theta().len();
    if coeffs.angle_count() != rows {
        return Err(Error::Shape {
            what: "coefficient rows",
            expected: rows,
            found: coeffs.angle_count(),
        });
    }
    if coeffs.rank() != phi_i.len() {
        return Err(Error::Shape {
            what: "spectral coordinates",
            expected: coeffs.rank(),
            found: phi_i.len(),
        });
    }
    let expand = |base: &[f64], m: &DMatrix<f64>| -> Vec<f64> {
        base.iter()
            .enumerate()
            .map(|(l, b0)| b0 + (0..phi_i.len()).map(|k| m[(l, k)] * phi_i[k]).sum::<f64>())
            .collect()
    };
    let theta = expand(reference.theta(), &coeffs.a);
    match (reference.psi(), &coeffs.b) {
        (None, None) => Ok(ChainAngles::planar(theta)),
        (Some(psi0), Some(b)) => ChainAngles::spatial(theta, expand(psi0, b)),
        (Some(_), None) => Err(Error::invalid("coefficients", "spatial chain needs B")),
        (None, Some(_)) => Err(Error::invalid("coefficients", "planar chain takes no B")),
    }
}

/// Everything shared by all particles of a reconstruction.
#[derive(Debug, Clone, Copy)]
pub struct Model<'a> {
    pub basis: &'a SpectralBasis,
    /// Known conformation `(Θ_0, Ψ_0)`.
    pub reference: &'a ChainAngles,
    pub forward: &'a ForwardModelConfig,
    pub delta: f64,
}

/// Which image of a record a loss compares against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    Noisy,
    Clean,
}

fn target_image<const D: usize>(p: &ParticleRecord<D>, target: Target) -> &ProjectionImage {
    match target {
        Target::Noisy => &p.image,
        Target::Clean => &p.clean_image,
    }
}

impl<'a> Model<'a> {
    pub fn new(
        basis: &'a SpectralBasis,
        reference: &'a ChainAngles,
        forward: &'a ForwardModelConfig,
        delta: f64,
    ) -> Result<Self> {
        forward.validate()?;
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::invalid("spacing", format!("{delta} is not positive")));
        }
        Ok(Self {
            basis,
            reference,
            forward,
            delta,
        })
    }

    fn phi_row(&self, index: usize) -> Result<Vec<f64>> {
        if index >= self.basis.len() {
            return Err(Error::invalid(
                "particle index",
                format!("{index} has no row in a basis over {} particles", self.basis.len()),
            ));
        }
        Ok(self.basis.row(index))
    }

    pub fn predict_angles<const D: usize>(
        &self,
        particle: &ParticleRecord<D>,
        coeffs: &CoefficientMatrices,
    ) -> Result<ChainAngles> {
        angles_for_particle(coeffs, self.reference, &self.phi_row(particle.index)?)
    }

    pub fn predict_curve<const D: usize>(
        &self,
        particle: &ParticleRecord<D>,
        coeffs: &CoefficientMatrices,
    ) -> Result<DiscreteCurve<D>>
    where
        Space<D>: FrenetSpace<D>,
    {
        let angles = self.predict_angles(particle, coeffs)?;
        synthesize_curve(&angles, &particle.pose, self.delta)
    }

    pub fn predict_image<const D: usize>(
        &self,
        particle: &ParticleRecord<D>,
        coeffs: &CoefficientMatrices,
    ) -> Result<ProjectionImage>
    where
        Space<D>: FrenetSpace<D>,
    {
        let curve = self.predict_curve(particle, coeffs)?;
        crate::forward::project(&curve, self.forward)
    }

    fn check_batch<const D: usize>(&self, batch: &[usize], particles: &[ParticleRecord<D>]) -> Result<()> {
        if batch.is_empty() {
            return Err(Error::invalid("batch", "empty batch"));
        }
        if let Some(&bad) = batch.iter().find(|&&i| i >= particles.len()) {
            return Err(Error::invalid(
                "batch",
                format!("particle {bad} out of range for {} particles", particles.len()),
            ));
        }
        let expected = self.forward.grid.len();
        for &i in batch {
            let p = &particles[i];
            for image in [&p.image, &p.clean_image] {
                if image.values.len() != expected {
                    return Err(Error::Shape {
                        what: "image samples",
                        expected,
                        found: image.values.len(),
                    });
                }
            }
        }
        Ok(())
    }

    /// `(1/|batch|)·Σ_i ‖Ŷ_i - Y_i‖²` against the chosen images.
    pub fn loss<const D: usize>(
        &self,
        coeffs: &CoefficientMatrices,
        batch: &[usize],
        particles: &[ParticleRecord<D>],
        target: Target,
    ) -> Result<f64>
    where
        Space<D>: FrenetSpace<D>,
    {
        self.check_batch(batch, particles)?;
        let per_particle = batch
            .par_iter()
            .map(|&i| {
                let p = &particles[i];
                let predicted = self.predict_image(p, coeffs)?;
                Ok(predicted.squared_distance(target_image(p, target)))
            })
            .collect::<Result<Vec<f64>>>()?;
        Ok(per_particle.iter().sum::<f64>() / batch.len() as f64)
    }

    /// Loss and its exact gradient on a batch, against the noisy images.
    pub fn loss_and_gradient<const D: usize>(
        &self,
        coeffs: &CoefficientMatrices,
        batch: &[usize],
        particles: &[ParticleRecord<D>],
    ) -> Result<(f64, Gradient)>
    where
        Space<D>: FrenetSpace<D>,
    {
        self.loss_and_gradient_against(coeffs, batch, particles, Target::Noisy)
    }

    pub fn loss_and_gradient_against<const D: usize>(
        &self,
        coeffs: &CoefficientMatrices,
        batch: &[usize],
        particles: &[ParticleRecord<D>],
        target: Target,
    ) -> Result<(f64, Gradient)>
    where
        Space<D>: FrenetSpace<D>,
    {
        self.check_batch(batch, particles)?;
        let scale = 1.0 / batch.len() as f64;
        let contributions = batch
            .par_iter()
            .map(|&i| {
                let p = &particles[i];
                let phi = self.phi_row(p.index)?;
                let angles = angles_for_particle(coeffs, self.reference, &phi)?;
                let (loss, d_theta, d_psi) =
                    particle_angle_gradient(&angles, p, target_image(p, target), self, scale);
                Ok((loss, d_theta, d_psi, phi))
            })
            .collect::<Result<Vec<_>>>()?;

        // sequential reduction in batch order keeps results bit-reproducible
        let (rows, k) = (coeffs.angle_count(), coeffs.rank());
        let mut total = 0.0;
        let mut ga = DMatrix::zeros(rows, k);
        let mut gb = coeffs.b.as_ref().map(|_| DMatrix::zeros(rows, k));
        for (loss, d_theta, d_psi, phi) in contributions {
            total += loss;
            accumulate_outer(&mut ga, &d_theta, &phi);
            if let (Some(gb), Some(d_psi)) = (&mut gb, d_psi) {
                accumulate_outer(gb, &d_psi, &phi);
            }
        }
        let mut grad = Gradient { a: ga, b: gb };
        for row in 0..rows {
            if !coeffs.is_free(row) {
                grad.a.row_mut(row).fill(0.0);
                if let Some(gb) = &mut grad.b {
                    gb.row_mut(row).fill(0.0);
                }
            }
        }
        Ok((total * scale, grad))
    }

    pub fn gradient<const D: usize>(
        &self,
        coeffs: &CoefficientMatrices,
        batch: &[usize],
        particles: &[ParticleRecord<D>],
    ) -> Result<Gradient>
    where
        Space<D>: FrenetSpace<D>,
    {
        Ok(self.loss_and_gradient(coeffs, batch, particles)?.1)
    }
}

fn accumulate_outer(m: &mut DMatrix<f64>, column: &[f64], row: &[f64]) {
    for (k, &r) in row.iter().enumerate() {
        if r == 0.0 {
            continue;
        }
        for (l, &c) in column.iter().enumerate() {
            m[(l, k)] += c * r;
        }
    }
}

/// Unscaled squared residual of one particle and the gradient of
/// `weight·‖Ŷ - Y‖²` with respect to its torsion and bond angles.
fn particle_angle_gradient<const D: usize>(
    angles: &ChainAngles,
    particle: &ParticleRecord<D>,
    target: &ProjectionImage,
    model: &Model<'_>,
    weight: f64,
) -> (f64, Vec<f64>, Option<Vec<f64>>)
where
    Space<D>: FrenetSpace<D>,
{
    let theta = angles.theta();
    let psi = angles.psi();
    let pose = &particle.pose;
    let delta = model.delta;
    let state = propagate(
        theta,
        psi,
        &pose.position,
        &pose.frame,
        pose.reference_index,
        delta,
    );
    let predicted = project_points(&state.points, model.forward);
    let mut loss = 0.0;
    let image_grad: Vec<f64> = predicted
        .iter()
        .zip(&target.values)
        .map(|(p, y)| {
            let r = p - y;
            loss += r * r;
            2.0 * weight * r
        })
        .collect();
    let point_grad = project_points_adjoint(&state.points, model.forward, &image_grad);
    let (d_theta, d_psi) = frames_adjoint(theta, psi, &state.frames, &point_grad, pose.reference_index, delta);
    (loss, d_theta, d_psi)
}

/// Back-propagates atom-position gradients through the frame recursion.
pub(crate) fn frames_adjoint<const D: usize>(
    theta: &[f64],
    psi: Option<&[f64]>,
    frames: &[Frame<D>],
    point_grad: &[Point<D>],
    reference_index: usize,
    delta: f64,
) -> (Vec<f64>, Option<Vec<f64>>)
where
    Space<D>: FrenetSpace<D>,
{
    let m = point_grad.len();
    let anchor = reference_index - 1;
    let bond = |k: usize| psi.map_or(0.0, |p| p[k]);

    // z_p = ẑ + δ·Σ_{a≤f<p} t_f above the anchor and ẑ - δ·Σ_{p≤f<a} t_f
    // below it, so each tangent collects a suffix or prefix sum.
    let mut tangent_grad = vec![Point::<D>::zeros(); m - 1];
    let mut acc = Point::<D>::zeros();
    for f in (anchor..m - 1).rev() {
        acc += point_grad[f + 1];
        tangent_grad[f] = acc * delta;
    }
    acc = Point::<D>::zeros();
    for f in 0..anchor {
        acc += point_grad[f];
        tangent_grad[f] = -acc * delta;
    }

    let mut frame_grad: Vec<Frame<D>> = tangent_grad
        .iter()
        .map(|g| {
            let mut fg = Frame::<D>::zeros();
            fg.set_row(D - 1, &g.transpose());
            fg
        })
        .collect();

    let mut d_theta = vec![0.0; theta.len()];
    let mut d_psi = psi.map(|p| vec![0.0; p.len()]);
    let mut record = |k: usize, rot_grad: &Frame<D>| {
        let (dr_t, dr_p) = Space::<D>::step_partials(theta[k], bond(k));
        d_theta[k] = rot_grad.dot(&dr_t);
        if let Some(dp) = &mut d_psi {
            dp[k] = rot_grad.dot(&dr_p);
        }
    };

    // above the anchor: F_f = R_{f-1} F_{f-1}
    for f in (anchor + 1..m - 1).rev() {
        let k = f - 1;
        let g = frame_grad[f];
        let rot_grad = g * frames[f - 1].transpose();
        record(k, &rot_grad);
        let r = Space::<D>::step(theta[k], bond(k));
        frame_grad[f - 1] += r.transpose() * g;
    }
    // below the anchor: F_f = R_fᵀ F_{f+1}
    for f in 0..anchor {
        let g = frame_grad[f];
        let rot_grad = frames[f + 1] * g.transpose();
        record(f, &rot_grad);
        let r = Space::<D>::step(theta[f], bond(f));
        frame_grad[f + 1] += r * g;
    }
    (d_theta, d_psi)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    /// Passes over the training set after the baseline evaluation.
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_shuffle")]
    pub shuffle: bool,
    /// Stop after this many mini-batch steps, even mid-epoch.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_steps: Option<usize>,
}

fn default_shuffle() -> bool {
    true
}

impl FitConfig {
    pub fn validate(&self, train_size: usize) -> Result<()> {
        if self.batch_size == 0 || self.batch_size > train_size {
            return Err(Error::invalid(
                "batch_size",
                format!("{} outside [1, {train_size}]", self.batch_size),
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(
                "learning_rate",
                format!("{} is not positive", self.learning_rate),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    /// 0 is the baseline before any step.
    pub epoch: usize,
    /// Mini-batch steps taken so far.
    pub steps: usize,
    /// Mean loss over the training set, against noisy images.
    pub train_loss: f64,
    /// Mean loss over the test set, against clean images.
    pub test_loss: Option<f64>,
    pub max_error: Option<f64>,
    pub avg_error: Option<f64>,
}

/// One row for the baseline and one per completed epoch.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitHistory {
    pub rows: Vec<HistoryRow>,
}

impl FitHistory {
    pub fn completed_epochs(&self) -> usize {
        self.rows.len().saturating_sub(1)
    }

    pub fn train_losses(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.train_loss).collect()
    }

    pub fn last(&self) -> Option<&HistoryRow> {
        self.rows.last()
    }
}

fn evaluate<const D: usize>(
    model: &Model<'_>,
    coeffs: &CoefficientMatrices,
    particles: &[ParticleRecord<D>],
    train: &[usize],
    test: &[usize],
    epoch: usize,
    steps: usize,
) -> Result<HistoryRow>
where
    Space<D>: FrenetSpace<D>,
{
    let train_loss = model.loss(coeffs, train, particles, Target::Noisy)?;
    let (mut test_loss, mut max_error, mut avg_error) = (None, None, None);
    if !test.is_empty() {
        test_loss = Some(model.loss(coeffs, test, particles, Target::Clean)?);
        if test.iter().all(|&i| particles[i].ground_truth.is_some()) {
            let truth: Vec<DiscreteCurve<D>> = test
                .iter()
                .map(|&i| particles[i].ground_truth.clone().expect("checked"))
                .collect();
            let pred = test
                .par_iter()
                .map(|&i| model.predict_curve(&particles[i], coeffs))
                .collect::<Result<Vec<_>>>()?;
            let report = error_report(&truth, &pred)?;
            max_error = Some(report.max_error);
            avg_error = Some(report.avg_error);
        }
    }
    Ok(HistoryRow {
        epoch,
        steps,
        train_loss,
        test_loss,
        max_error,
        avg_error,
    })
}

/// Plain mini-batch SGD from `A = B = 0` over the particles labelled
/// [`Split::Train`]. Test particles are scored on their clean images after
/// every epoch.
pub fn sgd_fit<const D: usize>(
    particles: &[ParticleRecord<D>],
    model: &Model<'_>,
    fit: &FitConfig,
    mask: Option<Vec<usize>>,
) -> Result<(CoefficientMatrices, FitHistory)>
where
    Space<D>: FrenetSpace<D>,
{
    let train: Vec<usize> = (0..particles.len())
        .filter(|&i| particles[i].split == Split::Train)
        .collect();
    let test: Vec<usize> = (0..particles.len())
        .filter(|&i| particles[i].split == Split::Test)
        .collect();
    if train.is_empty() {
        return Err(Error::invalid("dataset", "no training particles"));
    }
    fit.validate(train.len())?;
    let spatial = Space::<D>::HAS_BOND_ANGLES;
    let mut coeffs = CoefficientMatrices::zeros(
        model.reference.theta().len(),
        model.basis.rank(),
        spatial,
        mask,
    )?;
    let mut history = FitHistory::default();
    history
        .rows
        .push(evaluate(model, &coeffs, particles, &train, &test, 0, 0)?);

    let mut rng = ChaCha8Rng::seed_from_u64(fit.seed);
    let mut order = train.clone();
    let mut steps = 0usize;
    let step_limit = fit.max_steps.unwrap_or(usize::MAX);
    for epoch in 1..=fit.epochs {
        if steps >= step_limit {
            break;
        }
        if fit.shuffle {
            order.shuffle(&mut rng);
        }
        for batch in order.chunks(fit.batch_size) {
            if steps >= step_limit {
                break;
            }
            let (_, grad) = model.loss_and_gradient(&coeffs, batch, particles)?;
            coeffs.step(&grad, fit.learning_rate);
            steps += 1;
        }
        history
            .rows
            .push(evaluate(model, &coeffs, particles, &train, &test, epoch, steps)?);
    }
    Ok((coeffs, history))
}
