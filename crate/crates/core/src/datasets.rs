//! Synthetic particle datasets: the planar box with two arms and the spatial
//! backbone trajectory, with random poses, noisy projections, low-dimensional
//! representations for the similarity graph and a train/test split.
//!
//! Every particle draws from its own ChaCha stream keyed by `(seed, index,
//! purpose)`, so records do not depend on thread scheduling and projection
//! noise can be redrawn without touching anything else.

use std::f64::consts::PI;
use std::path::PathBuf;

use nalgebra::{DMatrix, Matrix2, Matrix3, Quaternion, UnitQuaternion};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::{
    add_noise_in_place, density_on_grid, project_points, snr, ForwardModelConfig, ProjectionGrid,
    ProjectionImage,
};
use crate::frenet::{
    extract_angles_with_tolerance, rotation_matrix_2d, synthesize_curve, ChainAngles,
    DiscreteCurve, Frame, FrenetSpace, Point, Pose, Space,
};
use crate::trajectory::SyntheticTrajectoryConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

/// Orientation of the structure used for the low-dimensional representation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LowDimFrame {
    /// The particle as imaged, including its random rotation.
    #[default]
    Rotated,
    /// The conformation with the identity frame at the reference atom.
    Canonical,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParticleRecord<const D: usize> {
    /// Row of this particle in the spectral basis.
    pub index: usize,
    /// Noisy projection `Y_i`.
    pub image: ProjectionImage,
    pub clean_image: ProjectionImage,
    pub pose: Pose<D>,
    pub beta: Vec<f64>,
    pub ground_truth: Option<DiscreteCurve<D>>,
    pub split: Split,
    /// Generator parameters of the conformation: `(θ̃_33, θ̃_133, θ̃_box)` for
    /// the box, `(frame index)` for the backbone.
    pub latent: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<const D: usize> {
    pub particles: Vec<ParticleRecord<D>>,
    /// Known conformation the reconstruction is anchored to.
    pub reference: ChainAngles,
    pub delta: f64,
    pub forward: ForwardModelConfig,
    pub noise_variance: f64,
}

impl<const D: usize> Dataset<D> {
    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn atom_count(&self) -> usize {
        self.reference.atom_count()
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        self.particles
            .iter()
            .enumerate()
            .filter(|(_, p)| p.split == split)
            .map(|(i, _)| i)
            .collect()
    }

    /// Signal-to-noise ratio of the clean projections against the dataset's
    /// projection noise.
    pub fn snr(&self) -> Result<f64> {
        snr(self.particles.iter().map(|p| &p.clean_image), self.noise_variance)
    }

    pub fn betas(&self) -> Vec<&[f64]> {
        self.particles.iter().map(|p| p.beta.as_slice()).collect()
    }
}

#[derive(Clone, Copy)]
enum Stream {
    Structure = 0,
    LowDim = 1,
    Projection = 2,
}

const SPLIT_STREAM: u64 = u64::MAX;

fn particle_rng(seed: u64, index: usize, purpose: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 * 4 + purpose as u64);
    rng
}

pub fn random_rotation_2d<R: Rng + ?Sized>(rng: &mut R) -> Matrix2<f64> {
    rotation_matrix_2d(rng.random_range(-PI..PI))
}

/// Haar-uniform rotation from a uniformly distributed unit quaternion.
pub fn random_rotation_3d<R: Rng + ?Sized>(rng: &mut R) -> Matrix3<f64> {
    loop {
        let q: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
        let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 1e-12 {
            let unit = UnitQuaternion::from_quaternion(Quaternion::new(q[0], q[1], q[2], q[3]));
            return *unit.to_rotation_matrix().matrix();
        }
    }
}

/// Haar-uniform rotation in dimension `dim` (2 or 3).
pub fn random_rotation<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Result<DMatrix<f64>> {
    match dim {
        2 => Ok(DMatrix::from_column_slice(2, 2, random_rotation_2d(rng).as_slice())),
        3 => Ok(DMatrix::from_column_slice(3, 3, random_rotation_3d(rng).as_slice())),
        _ => Err(Error::invalid("dimension", format!("rotations in {dim}D are not supported"))),
    }
}

/// Labels `round(n·test_fraction)` particles (at least one of each kind) as
/// test, chosen by a seeded shuffle.
pub fn split<const D: usize, R: Rng + ?Sized>(
    dataset: &mut Dataset<D>,
    test_fraction: f64,
    rng: &mut R,
) -> Result<()> {
    let labels = split_labels(dataset.len(), test_fraction, rng)?;
    for (p, s) in dataset.particles.iter_mut().zip(labels) {
        p.split = s;
    }
    Ok(())
}

pub fn split_labels<R: Rng + ?Sized>(n: usize, test_fraction: f64, rng: &mut R) -> Result<Vec<Split>> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::invalid(
            "test_fraction",
            format!("{test_fraction} outside (0, 1)"),
        ));
    }
    if n < 2 {
        return Err(Error::invalid("split", format!("needs at least 2 particles, got {n}")));
    }
    let n_test = ((n as f64 * test_fraction).round() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut labels = vec![Split::Train; n];
    for &i in &order[..n_test] {
        labels[i] = Split::Test;
    }
    Ok(labels)
}

fn split_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(SPLIT_STREAM);
    rng
}

/// Shared tail of both generators: projection, noise and low-dim sampling.
struct ImagingSetup<'a> {
    forward: &'a ForwardModelConfig,
    noise_variance: f64,
    projection_seed: u64,
    lowdim_seed: u64,
    lowdim_samples: usize,
    lowdim_extent: Vec<[f64; 2]>,
    lowdim_noise_variance: f64,
    lowdim_frame: LowDimFrame,
}

impl ImagingSetup<'_> {
    fn record<const D: usize>(
        &self,
        index: usize,
        angles: &ChainAngles,
        pose: Pose<D>,
        delta: f64,
        latent: Vec<f64>,
    ) -> Result<ParticleRecord<D>>
    where
        Space<D>: FrenetSpace<D>,
    {
        let curve = synthesize_curve(angles, &pose, delta)?;
        let clean = project_points(&curve.points, self.forward);
        let mut noisy = clean.clone();
        let mut rng = particle_rng(self.projection_seed, index, Stream::Projection);
        add_noise_in_place(&mut noisy, self.noise_variance, &mut rng)?;

        let lowdim_points = match self.lowdim_frame {
            LowDimFrame::Rotated => curve.points.clone(),
            LowDimFrame::Canonical => {
                let canonical = Pose {
                    frame: Frame::<D>::identity(),
                    ..pose.clone()
                };
                synthesize_curve(angles, &canonical, delta)?.points
            }
        };
        let mut beta = density_on_grid(
            &lowdim_points,
            self.forward.nu,
            self.forward.sigma,
            self.lowdim_samples,
            &self.lowdim_extent,
        )?;
        let mut rng = particle_rng(self.lowdim_seed, index, Stream::LowDim);
        add_noise_in_place(&mut beta, self.lowdim_noise_variance, &mut rng)?;

        let grid = self.forward.grid.clone();
        Ok(ParticleRecord {
            index,
            image: ProjectionImage { values: noisy, grid: grid.clone() },
            clean_image: ProjectionImage { values: clean, grid },
            pose,
            beta,
            ground_truth: Some(curve),
            split: Split::Train,
            latent,
        })
    }
}

fn centered_extent(dim: usize, half_width: f64) -> Vec<[f64; 2]> {
    vec![[-half_width, half_width]; dim]
}

fn check_positive(name: &'static str, value: f64) -> Result<()> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(name, format!("{value} is not positive")))
    }
}

fn check_nonnegative(name: &'static str, value: f64) -> Result<()> {
    if value >= 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(name, format!("{value} is negative")))
    }
}

/// Atoms in the box-with-arms chain.
pub const BOX_ATOMS: usize = 149;

/// 1-based torsion indices that vary in the box-with-arms family.
pub const BOX_VARYING_ANGLES: [usize; 6] = [33, 53, 73, 93, 123, 133];

/// Torsion angles of the box with two arms. All angles vanish except the six
/// corners: the arms turn by `-π/2 + t33` and `-π/2 + t133`, opposite box
/// corners by `-π/2 ± tbox`.
pub fn box_arms_angles(t33: f64, t133: f64, tbox: f64) -> ChainAngles {
    let mut theta = vec![0.0; BOX_ATOMS - 2];
    let mut set = |j: usize, v: f64| theta[j - 1] = v;
    set(33, -PI / 2.0 + t33);
    set(133, -PI / 2.0 + t133);
    set(53, -PI / 2.0 + tbox);
    set(93, -PI / 2.0 + tbox);
    set(73, -PI / 2.0 - tbox);
    set(123, -PI / 2.0 - tbox);
    ChainAngles::planar(theta)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Box2DConfig {
    pub n: usize,
    pub delta: f64,
    /// 1-based reference atom.
    pub reference_index: usize,
    pub sigma: f64,
    pub nu: f64,
    /// Projection samples.
    pub samples: usize,
    /// Projection grid spans `[-half_width, half_width]` around the reference atom.
    pub half_width: f64,
    pub noise_variance: f64,
    pub lowdim_samples: usize,
    pub lowdim_half_width: f64,
    pub lowdim_noise_variance: f64,
    pub lowdim_frame: LowDimFrame,
    pub test_fraction: f64,
    pub seed: u64,
    /// Seed of the projection noise; defaults to `seed`.
    pub projection_seed: Option<u64>,
}

impl Default for Box2DConfig {
    fn default() -> Self {
        Self {
            n: 4000,
            delta: 3.5,
            reference_index: 33,
            sigma: 7.0,
            nu: 1.0,
            samples: 128,
            half_width: 160.0,
            noise_variance: 2500.0,
            lowdim_samples: 64,
            lowdim_half_width: 160.0,
            lowdim_noise_variance: 9.0,
            lowdim_frame: LowDimFrame::Rotated,
            test_fraction: 0.1,
            seed: 0,
            projection_seed: None,
        }
    }
}

impl Box2DConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::invalid("n", format!("needs at least 2 particles, got {}", self.n)));
        }
        if self.reference_index == 0 || self.reference_index > BOX_ATOMS - 1 {
            return Err(Error::ReferenceIndex {
                index: self.reference_index,
                max: BOX_ATOMS - 1,
            });
        }
        check_positive("delta", self.delta)?;
        check_positive("half_width", self.half_width)?;
        check_positive("lowdim_half_width", self.lowdim_half_width)?;
        check_nonnegative("noise_variance", self.noise_variance)?;
        check_nonnegative("lowdim_noise_variance", self.lowdim_noise_variance)?;
        if self.lowdim_samples < 2 {
            return Err(Error::invalid("lowdim_samples", "needs at least 2"));
        }
        self.forward()?;
        Ok(())
    }

    pub fn forward(&self) -> Result<ForwardModelConfig> {
        ForwardModelConfig::new(
            self.nu,
            self.sigma,
            ProjectionGrid::new(self.samples, centered_extent(1, self.half_width))?,
        )
    }
}

/// The box-with-arms dataset: per particle `θ̃_33, θ̃_133 ~ U[-π/2, π/2]`,
/// `θ̃_box ~ U[-π/4, π/4]`, a uniform random frame at the reference atom
/// (placed at the origin), noisy 1D projections and noisy 2D density images
/// as low-dimensional representations.
pub fn sample_box_arms(cfg: &Box2DConfig) -> Result<Dataset<2>> {
    cfg.validate()?;
    let forward = cfg.forward()?;
    let setup = ImagingSetup {
        forward: &forward,
        noise_variance: cfg.noise_variance,
        projection_seed: cfg.projection_seed.unwrap_or(cfg.seed),
        lowdim_seed: cfg.seed,
        lowdim_samples: cfg.lowdim_samples,
        lowdim_extent: centered_extent(2, cfg.lowdim_half_width),
        lowdim_noise_variance: cfg.lowdim_noise_variance,
        lowdim_frame: cfg.lowdim_frame,
    };
    let particles = (0..cfg.n)
        .into_par_iter()
        .map(|i| {
            let mut rng = particle_rng(cfg.seed, i, Stream::Structure);
            let t33 = rng.random_range(-PI / 2.0..=PI / 2.0);
            let t133 = rng.random_range(-PI / 2.0..=PI / 2.0);
            let tbox = rng.random_range(-PI / 4.0..=PI / 4.0);
            let frame = random_rotation_2d(&mut rng);
            let pose = Pose {
                position: Point::<2>::zeros(),
                frame,
                reference_index: cfg.reference_index,
            };
            let angles = box_arms_angles(t33, t133, tbox);
            setup.record(i, &angles, pose, cfg.delta, vec![t33, t133, tbox])
        })
        .collect::<Result<Vec<_>>>()?;
    let mut dataset = Dataset {
        particles,
        reference: box_arms_angles(0.0, 0.0, 0.0),
        delta: cfg.delta,
        forward,
        noise_variance: cfg.noise_variance,
    };
    split(&mut dataset, cfg.test_fraction, &mut split_rng(cfg.seed))?;
    Ok(dataset)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Backbone3DConfig {
    pub n: usize,
    pub delta: f64,
    /// 1-based reference atom.
    pub reference_index: usize,
    pub sigma: f64,
    pub nu: f64,
    pub samples: usize,
    pub half_width: f64,
    pub noise_variance: f64,
    pub voxel_samples: usize,
    pub voxel_half_width: f64,
    pub lowdim_noise_variance: f64,
    pub lowdim_frame: LowDimFrame,
    /// Relative bond-length tolerance when extracting angles from frames.
    pub spacing_tolerance: f64,
    pub test_fraction: f64,
    pub seed: u64,
    pub projection_seed: Option<u64>,
    /// Trajectory file; the synthetic trajectory is used when absent.
    pub trajectory_path: Option<PathBuf>,
    pub synthetic_trajectory: SyntheticTrajectoryConfig,
}

impl Default for Backbone3DConfig {
    fn default() -> Self {
        Self {
            n: 4000,
            delta: 3.8412,
            reference_index: 112,
            sigma: 3.0,
            nu: 1.0,
            samples: 64,
            half_width: 60.0,
            noise_variance: 1089.0,
            voxel_samples: 16,
            voxel_half_width: 60.0,
            lowdim_noise_variance: 0.0,
            lowdim_frame: LowDimFrame::Rotated,
            spacing_tolerance: 0.25,
            test_fraction: 0.1,
            seed: 0,
            projection_seed: None,
            trajectory_path: None,
            synthetic_trajectory: SyntheticTrajectoryConfig::default(),
        }
    }
}

impl Backbone3DConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::invalid("n", format!("needs at least 2 particles, got {}", self.n)));
        }
        check_positive("delta", self.delta)?;
        check_positive("half_width", self.half_width)?;
        check_positive("voxel_half_width", self.voxel_half_width)?;
        check_positive("spacing_tolerance", self.spacing_tolerance)?;
        check_nonnegative("noise_variance", self.noise_variance)?;
        check_nonnegative("lowdim_noise_variance", self.lowdim_noise_variance)?;
        if self.voxel_samples < 2 {
            return Err(Error::invalid("voxel_samples", "needs at least 2"));
        }
        self.forward()?;
        Ok(())
    }

    pub fn forward(&self) -> Result<ForwardModelConfig> {
        ForwardModelConfig::new(
            self.nu,
            self.sigma,
            ProjectionGrid::new(self.samples, centered_extent(2, self.half_width))?,
        )
    }
}

/// The backbone dataset: each particle is a uniformly chosen trajectory frame,
/// re-expressed as an equally spaced chain through its extracted angles, given
/// a uniform random frame at the reference atom (placed at the origin) and
/// imaged into noisy 2D projections. Low-dimensional representations are
/// densities on a voxel grid. The known conformation is frame 0.
pub fn sample_backbone(frames: &[DiscreteCurve<3>], cfg: &Backbone3DConfig) -> Result<Dataset<3>> {
    cfg.validate()?;
    if frames.is_empty() {
        return Err(Error::invalid("trajectory", "no frames"));
    }
    let conformations = frames
        .iter()
        .map(|f| {
            extract_angles_with_tolerance(f, cfg.reference_index, cfg.spacing_tolerance)
                .map(|(angles, _)| angles)
        })
        .collect::<Result<Vec<_>>>()?;
    let forward = cfg.forward()?;
    let setup = ImagingSetup {
        forward: &forward,
        noise_variance: cfg.noise_variance,
        projection_seed: cfg.projection_seed.unwrap_or(cfg.seed),
        lowdim_seed: cfg.seed,
        lowdim_samples: cfg.voxel_samples,
        lowdim_extent: centered_extent(3, cfg.voxel_half_width),
        lowdim_noise_variance: cfg.lowdim_noise_variance,
        lowdim_frame: cfg.lowdim_frame,
    };
    let particles = (0..cfg.n)
        .into_par_iter()
        .map(|i| {
            let mut rng = particle_rng(cfg.seed, i, Stream::Structure);
            let f = rng.random_range(0..frames.len());
            let pose = Pose {
                position: Point::<3>::zeros(),
                frame: random_rotation_3d(&mut rng),
                reference_index: cfg.reference_index,
            };
            setup.record(i, &conformations[f], pose, cfg.delta, vec![f as f64])
        })
        .collect::<Result<Vec<_>>>()?;
    let mut dataset = Dataset {
        particles,
        reference: conformations[0].clone(),
        delta: cfg.delta,
        forward,
        noise_variance: cfg.noise_variance,
    };
    split(&mut dataset, cfg.test_fraction, &mut split_rng(cfg.seed))?;
    Ok(dataset)
}
