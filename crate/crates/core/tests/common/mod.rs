#![allow(dead_code)]

use std::f64::consts::PI;

use chainspec::datasets::{random_rotation_2d, random_rotation_3d};
use chainspec::frenet::{ChainAngles, DiscreteCurve, Point, Pose};
use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Interior angles are kept this far from the collinear configurations.
pub const COLLINEAR_MARGIN: f64 = 1e-3;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn planar_angles(rng: &mut impl Rng, m: usize) -> ChainAngles {
    ChainAngles::planar(
        (0..m - 2)
            .map(|_| rng.random_range(-PI + COLLINEAR_MARGIN..PI - COLLINEAR_MARGIN))
            .collect(),
    )
}

/// Torsions anywhere in (-π, π); bond angles of either sign, bounded away
/// from 0 and ±π.
pub fn spatial_angles(rng: &mut impl Rng, m: usize) -> ChainAngles {
    let theta = (0..m - 2).map(|_| rng.random_range(-PI..PI)).collect();
    let psi = (0..m - 2)
        .map(|_| {
            let magnitude = rng.random_range(COLLINEAR_MARGIN..PI - COLLINEAR_MARGIN);
            if rng.random_bool(0.5) {
                magnitude
            } else {
                -magnitude
            }
        })
        .collect();
    ChainAngles::spatial(theta, psi).unwrap()
}

pub fn planar_pose(rng: &mut impl Rng, j0: usize) -> Pose<2> {
    Pose::new(
        Vector2::new(rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0)),
        random_rotation_2d(rng),
        j0,
    )
    .unwrap()
}

pub fn spatial_pose(rng: &mut impl Rng, j0: usize) -> Pose<3> {
    Pose::new(
        Vector3::from_fn(|_, _| rng.random_range(-50.0..50.0)),
        random_rotation_3d(rng),
        j0,
    )
    .unwrap()
}

pub fn max_point_distance<const D: usize>(a: &DiscreteCurve<D>, b: &DiscreteCurve<D>) -> f64 {
    assert_eq!(a.len(), b.len());
    a.points
        .iter()
        .zip(&b.points)
        .map(|(p, q)| (p - q).norm())
        .fold(0.0, f64::max)
}

/// Largest angular distance between two angle lists, modulo 2π.
pub fn max_angle_gap(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| chainspec::frenet::angle_difference(*x, *y).abs())
        .fold(0.0, f64::max)
}

pub fn random_points<const D: usize>(rng: &mut impl Rng, m: usize, spread: f64) -> Vec<Point<D>> {
    (0..m)
        .map(|_| Point::<D>::from_fn(|_, _| rng.random_range(-spread..spread)))
        .collect()
}

pub mod instance {
    use super::*;
    use chainspec::datasets::{ParticleRecord, Split};
    use chainspec::forward::{project, ForwardModelConfig, ProjectionGrid, ProjectionImage};
    use chainspec::frenet::{synthesize_curve, FrenetSpace, Space};
    use chainspec::recon::{CoefficientMatrices, Model, Target};
    use chainspec::spectral::SpectralBasis;
    use nalgebra::DMatrix;

    /// A small reconstruction problem with random angles, poses, images and
    /// coefficients.
    pub struct Instance<const D: usize> {
        pub particles: Vec<ParticleRecord<D>>,
        pub basis: SpectralBasis,
        pub reference: ChainAngles,
        pub forward: ForwardModelConfig,
        pub delta: f64,
        pub coeffs: CoefficientMatrices,
    }

    impl<const D: usize> Instance<D>
    where
        Space<D>: FrenetSpace<D>,
    {
        pub fn model(&self) -> Model<'_> {
            Model::new(&self.basis, &self.reference, &self.forward, self.delta).unwrap()
        }

        pub fn batch(&self) -> Vec<usize> {
            (0..self.particles.len()).collect()
        }

        pub fn loss(&self, coeffs: &CoefficientMatrices) -> f64 {
            self.model().loss(coeffs, &self.batch(), &self.particles, Target::Noisy).unwrap()
        }
    }

    fn angles_for<const D: usize>(r: &mut impl Rng, m: usize) -> ChainAngles {
        if D == 2 {
            planar_angles(r, m)
        } else {
            spatial_angles(r, m)
        }
    }

    fn pose_for<const D: usize>(r: &mut impl Rng, j0: usize) -> Pose<D> {
        let mut frame = chainspec::frenet::Frame::<D>::identity();
        let mut position = Point::<D>::zeros();
        if D == 2 {
            let p = planar_pose(r, j0);
            frame.copy_from_slice(p.frame.as_slice());
        } else {
            let p = spatial_pose(r, j0);
            frame.copy_from_slice(p.frame.as_slice());
        }
        for c in 0..D {
            position[c] = r.random_range(-1.0..1.0);
        }
        Pose {
            position,
            frame,
            reference_index: j0,
        }
    }

    /// `m ≤ 10` atoms, `K ≤ 3` eigenvectors, at most 32 samples per grid axis.
    pub fn random<const D: usize>(r: &mut impl Rng, masked: bool) -> Instance<D>
    where
        Space<D>: FrenetSpace<D>,
    {
        let m = r.random_range(4..=10);
        let k = r.random_range(1..=3);
        let n = r.random_range(1..=3);
        let delta = r.random_range(0.8..1.5);
        let sigma = r.random_range(0.8..2.0);
        let samples = if D == 2 { r.random_range(8..=32) } else { r.random_range(6..=12) };
        let half = 1.2 * m as f64 * delta;
        let grid = ProjectionGrid::new(samples, vec![[-half, half]; D - 1]).unwrap();
        let forward = ForwardModelConfig::new(1.0, sigma, grid).unwrap();
        let reference = angles_for::<D>(r, m);
        let j0 = r.random_range(1..m);
        let particles = (0..n)
            .map(|i| {
                let pose = pose_for::<D>(r, j0);
                let truth = synthesize_curve(&angles_for::<D>(r, m), &pose, delta).unwrap();
                let clean = project(&truth, &forward).unwrap();
                let noisy: Vec<f64> = clean.values.iter().map(|v| v + r.random_range(-0.2..0.2)).collect();
                ParticleRecord {
                    index: i,
                    image: ProjectionImage::new(noisy, forward.grid.clone()).unwrap(),
                    clean_image: clean,
                    pose,
                    beta: vec![],
                    ground_truth: Some(truth),
                    split: Split::Train,
                    latent: vec![],
                }
            })
            .collect();
        let phi = DMatrix::from_fn(n, k, |_, _| r.random_range(-1.0..1.0));
        let basis = SpectralBasis::new(vec![0.0; k], phi).unwrap();
        let rows = m - 2;
        let mask = masked.then(|| {
            let mut free: Vec<usize> = (1..=rows).filter(|_| r.random_bool(0.5)).collect();
            if free.is_empty() {
                free.push(r.random_range(1..=rows));
            }
            free
        });
        let a = DMatrix::from_fn(rows, k, |_, _| r.random_range(-0.3..0.3));
        let b = (D == 3).then(|| DMatrix::from_fn(rows, k, |_, _| r.random_range(-0.3..0.3)));
        let coeffs = CoefficientMatrices::from_parts(a, b, mask).unwrap();
        Instance {
            particles,
            basis,
            reference,
            forward,
            delta,
            coeffs,
        }
    }

    /// Compares the analytic gradient with central differences (step 1e-6)
    /// over every free coefficient; masked rows must have an exactly zero
    /// gradient. Returns the worst relative error, or an error message.
    pub fn check_gradient<const D: usize>(inst: &Instance<D>) -> Result<f64, String>
    where
        Space<D>: FrenetSpace<D>,
    {
        let grad = inst.model().gradient(&inst.coeffs, &inst.batch(), &inst.particles).unwrap();
        let h = 1e-6;
        let mut worst: f64 = 0.0;
        let blocks: Vec<(usize, &DMatrix<f64>)> = std::iter::once((0, &grad.a))
            .chain(grad.b.as_ref().map(|b| (1, b)))
            .collect();
        for (which, g) in blocks {
            for l in 0..g.nrows() {
                for k in 0..g.ncols() {
                    if !inst.coeffs.is_free(l) {
                        if g[(l, k)] != 0.0 {
                            return Err(format!("masked row {l} has gradient {}", g[(l, k)]));
                        }
                        continue;
                    }
                    let mut plus = inst.coeffs.clone();
                    let mut minus = inst.coeffs.clone();
                    let (p, q) = if which == 0 {
                        (&mut plus.a, &mut minus.a)
                    } else {
                        (plus.b.as_mut().unwrap(), minus.b.as_mut().unwrap())
                    };
                    p[(l, k)] += h;
                    q[(l, k)] -= h;
                    let fd = (inst.loss(&plus) - inst.loss(&minus)) / (2.0 * h);
                    let analytic = g[(l, k)];
                    let diff = (fd - analytic).abs();
                    if diff <= 1e-8 {
                        continue;
                    }
                    let rel = diff / fd.abs().max(analytic.abs());
                    worst = worst.max(rel);
                    if rel >= 1e-5 {
                        return Err(format!("block {which} entry ({l}, {k}): analytic {analytic}, differences {fd}"));
                    }
                }
            }
        }
        Ok(worst)
    }
}
