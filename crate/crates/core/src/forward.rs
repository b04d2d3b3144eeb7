//! Gaussian-mixture densities and their parallel-beam projections.
//!
//! Each atom contributes `ν·exp(-‖x - z‖²/(2σ²))` to the density. Projection
//! integrates along the last coordinate axis, which turns every atom into a
//! Gaussian of the same width on the detector with peak `ν·σ·√(2π)`. A 3D
//! chain gives a 2D image, a 2D chain a 1D profile.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frenet::{DiscreteCurve, Point};

/// Detector sampling: `samples` points per axis, axis `a` spanning
/// `extent[a] = [min, max]` inclusive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProjectionGrid {
    pub samples: usize,
    pub extent: Vec<[f64; 2]>,
}

impl ProjectionGrid {
    pub fn new(samples: usize, extent: Vec<[f64; 2]>) -> Result<Self> {
        let grid = Self { samples, extent };
        grid.validate()?;
        Ok(grid)
    }

    /// Square grid of `samples` points per axis over `[center - half, center + half]`.
    pub fn centered(samples: usize, center: &[f64], half_width: f64) -> Result<Self> {
        Self::new(
            samples,
            center
                .iter()
                .map(|c| [c - half_width, c + half_width])
                .collect(),
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples < 2 {
            return Err(Error::invalid(
                "grid",
                format!("needs at least 2 samples per axis, got {}", self.samples),
            ));
        }
        if !(1..=2).contains(&self.extent.len()) {
            return Err(Error::invalid(
                "grid",
                format!("rank must be 1 or 2, got {}", self.extent.len()),
            ));
        }
        for &[lo, hi] in &self.extent {
            if !(lo.is_finite() && hi.is_finite() && hi > lo) {
                return Err(Error::invalid("grid", format!("empty extent [{lo}, {hi}]")));
            }
        }
        Ok(())
    }

    pub fn rank(&self) -> usize {
        self.extent.len()
    }

    pub fn len(&self) -> usize {
        self.samples.pow(self.rank() as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn shape(&self) -> Vec<usize> {
        vec![self.samples; self.rank()]
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        let [lo, hi] = self.extent[axis];
        (hi - lo) / (self.samples - 1) as f64
    }

    pub fn coordinate(&self, axis: usize, index: usize) -> f64 {
        self.extent[axis][0] + index as f64 * self.spacing(axis)
    }

    pub fn coordinates(&self, axis: usize) -> Vec<f64> {
        (0..self.samples).map(|i| self.coordinate(axis, i)).collect()
    }
}

/// Convolution kernel with odd side length and the same rank as the grid,
/// stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Psf {
    pub side: usize,
    pub values: Vec<f64>,
}

impl Psf {
    /// The single-entry kernel `[1]`, valid for either grid rank.
    pub fn identity() -> Self {
        Self {
            side: 1,
            values: vec![1.0],
        }
    }

    fn validate(&self, grid_rank: usize) -> Result<()> {
        if self.side % 2 == 0 {
            return Err(Error::invalid("psf", format!("side {} is not odd", self.side)));
        }
        let expected = self.side.pow(grid_rank as u32);
        if self.values.len() != expected {
            return Err(Error::Shape {
                what: "psf entries",
                expected,
                found: self.values.len(),
            });
        }
        if !self.values.iter().sum::<f64>().is_finite() {
            return Err(Error::invalid("psf", "kernel sum is not finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForwardModelConfig {
    #[serde(default = "default_nu")]
    pub nu: f64,
    pub sigma: f64,
    pub grid: ProjectionGrid,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub psf: Option<Psf>,
}

fn default_nu() -> f64 {
    1.0
}

impl ForwardModelConfig {
    pub fn new(nu: f64, sigma: f64, grid: ProjectionGrid) -> Result<Self> {
        let cfg = Self {
            nu,
            sigma,
            grid,
            psf: None,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_psf(mut self, psf: Psf) -> Result<Self> {
        self.psf = Some(psf);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.nu > 0.0 && self.nu.is_finite()) {
            return Err(Error::invalid("nu", format!("{} is not positive", self.nu)));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::invalid("sigma", format!("{} is not positive", self.sigma)));
        }
        self.grid.validate()?;
        if let Some(psf) = &self.psf {
            psf.validate(self.grid.rank())?;
        }
        Ok(())
    }

    /// Peak value of one projected atom, `ν·σ·√(2π)`.
    pub fn projected_amplitude(&self) -> f64 {
        self.nu * self.sigma * (2.0 * std::f64::consts::PI).sqrt()
    }

    fn check_dimension(&self, dim: usize) -> Result<()> {
        if self.grid.rank() + 1 != dim {
            return Err(Error::Shape {
                what: "grid axes (chain dimension minus one)",
                expected: dim - 1,
                found: self.grid.rank(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionImage {
    /// Row-major samples; for rank 2, index `a·N + b` holds `(x_a, y_b)`.
    pub values: Vec<f64>,
    pub grid: ProjectionGrid,
}

impl ProjectionImage {
    pub fn new(values: Vec<f64>, grid: ProjectionGrid) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Shape {
                what: "image samples",
                expected: grid.len(),
                found: values.len(),
            });
        }
        Ok(Self { values, grid })
    }

    pub fn zeros(grid: ProjectionGrid) -> Self {
        Self {
            values: vec![0.0; grid.len()],
            grid,
        }
    }

    /// Sum of squared sample differences.
    pub fn squared_distance(&self, other: &Self) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }
}

pub fn density_at<const D: usize>(
    curve: &DiscreteCurve<D>,
    cfg: &ForwardModelConfig,
    x: &Point<D>,
) -> f64 {
    density_of_points(&curve.points, cfg.nu, cfg.sigma, x)
}

pub(crate) fn density_of_points<const D: usize>(
    points: &[Point<D>],
    nu: f64,
    sigma: f64,
    x: &Point<D>,
) -> f64 {
    let scale = -0.5 / (sigma * sigma);
    points
        .iter()
        .map(|z| nu * ((x - z).norm_squared() * scale).exp())
        .sum()
}

/// Density sampled on a regular grid with one axis per spatial dimension,
/// `samples` points per axis, axis `a` spanning `extent[a]`. Row-major with
/// the first axis slowest.
pub fn density_on_grid<const D: usize>(
    points: &[Point<D>],
    nu: f64,
    sigma: f64,
    samples: usize,
    extent: &[[f64; 2]],
) -> Result<Vec<f64>> {
    if extent.len() != D {
        return Err(Error::Shape {
            what: "grid axes",
            expected: D,
            found: extent.len(),
        });
    }
    let grid = ProjectionGrid {
        samples,
        extent: extent.to_vec(),
    };
    if samples < 2 || extent.iter().any(|&[lo, hi]| !(hi > lo)) {
        return Err(Error::invalid("density grid", format!("{grid:?}")));
    }
    let scale = -0.5 / (sigma * sigma);
    let axes: Vec<Vec<f64>> = (0..D).map(|a| grid.coordinates(a)).collect();
    let mut out = vec![0.0; samples.pow(D as u32)];
    let mut profiles = vec![vec![0.0; samples]; D];
    // the Gaussian factorizes over axes, so each atom costs D profiles plus
    // one outer product
    for z in points {
        for a in 0..D {
            axis_profile(&axes[a], z[a], scale, &mut profiles[a]);
        }
        match D {
            2 => {
                for (row, gx) in out.chunks_exact_mut(samples).zip(&profiles[0]) {
                    let w = nu * gx;
                    for (o, gy) in row.iter_mut().zip(&profiles[1]) {
                        *o += w * gy;
                    }
                }
            }
            3 => {
                let plane = samples * samples;
                for (slab, gx) in out.chunks_exact_mut(plane).zip(&profiles[0]) {
                    for (row, gy) in slab.chunks_exact_mut(samples).zip(&profiles[1]) {
                        let w = nu * gx * gy;
                        for (o, gz) in row.iter_mut().zip(&profiles[2]) {
                            *o += w * gz;
                        }
                    }
                }
            }
            _ => unreachable!("chains live in 2 or 3 dimensions"),
        }
    }
    Ok(out)
}

/// Samples `exp(-(x_a - c)²/(2σ²))` along one grid axis.
fn axis_profile(coords: &[f64], center: f64, scale: f64, out: &mut [f64]) {
    for (o, &x) in out.iter_mut().zip(coords) {
        let d = x - center;
        *o = (d * d * scale).exp();
    }
}

pub fn project<const D: usize>(
    curve: &DiscreteCurve<D>,
    cfg: &ForwardModelConfig,
) -> Result<ProjectionImage> {
    cfg.check_dimension(D)?;
    Ok(ProjectionImage {
        values: project_points(&curve.points, cfg),
        grid: cfg.grid.clone(),
    })
}

/// Projection of atoms at `points`; the caller guarantees `grid.rank() == D - 1`.
pub(crate) fn project_points<const D: usize>(
    points: &[Point<D>],
    cfg: &ForwardModelConfig,
) -> Vec<f64> {
    let raw = project_unblurred(points, cfg);
    match &cfg.psf {
        Some(psf) => convolve(&raw, cfg.grid.samples, cfg.grid.rank(), psf),
        None => raw,
    }
}

fn project_unblurred<const D: usize>(points: &[Point<D>], cfg: &ForwardModelConfig) -> Vec<f64> {
    let n = cfg.grid.samples;
    let amp = cfg.projected_amplitude();
    let scale = -0.5 / (cfg.sigma * cfg.sigma);
    let xs = cfg.grid.coordinates(0);
    let mut gx = vec![0.0; n];
    match D {
        2 => {
            let mut out = vec![0.0; n];
            for z in points {
                axis_profile(&xs, z[0], scale, &mut gx);
                for (o, g) in out.iter_mut().zip(&gx) {
                    *o += amp * g;
                }
            }
            out
        }
        3 => {
            let ys = cfg.grid.coordinates(1);
            let mut gy = vec![0.0; n];
            let mut out = vec![0.0; n * n];
            for z in points {
                axis_profile(&xs, z[0], scale, &mut gx);
                axis_profile(&ys, z[1], scale, &mut gy);
                for (row, g) in out.chunks_exact_mut(n).zip(&gx) {
                    let w = amp * g;
                    for (o, h) in row.iter_mut().zip(&gy) {
                        *o += w * h;
                    }
                }
            }
            out
        }
        _ => unreachable!("chains live in 2 or 3 dimensions"),
    }
}

/// Gradient of `Σ_s image_grad[s]·Ŷ[s]` with respect to every atom position,
/// where `Ŷ = project_points(points)`. The component along the projection
/// axis is always zero.
pub(crate) fn project_points_adjoint<const D: usize>(
    points: &[Point<D>],
    cfg: &ForwardModelConfig,
    image_grad: &[f64],
) -> Vec<Point<D>> {
    let n = cfg.grid.samples;
    let pulled;
    let g = match &cfg.psf {
        Some(psf) => {
            pulled = correlate(image_grad, n, cfg.grid.rank(), psf);
            &pulled[..]
        }
        None => image_grad,
    };
    let amp = cfg.projected_amplitude();
    let inv_var = 1.0 / (cfg.sigma * cfg.sigma);
    let scale = -0.5 * inv_var;
    let xs = cfg.grid.coordinates(0);
    let mut gx = vec![0.0; n];
    match D {
        2 => points
            .iter()
            .map(|z| {
                axis_profile(&xs, z[0], scale, &mut gx);
                let dx: f64 = xs
                    .iter()
                    .zip(&gx)
                    .zip(g)
                    .map(|((x, p), r)| r * p * (x - z[0]))
                    .sum();
                let mut out = Point::<D>::zeros();
                out[0] = amp * inv_var * dx;
                out
            })
            .collect(),
        3 => {
            let ys = cfg.grid.coordinates(1);
            let mut gy = vec![0.0; n];
            let mut row_dot = vec![0.0; n];
            points
                .iter()
                .map(|z| {
                    axis_profile(&xs, z[0], scale, &mut gx);
                    axis_profile(&ys, z[1], scale, &mut gy);
                    // row_dot[a] = Σ_b g[a,b]·gy[b]
                    for (rd, row) in row_dot.iter_mut().zip(g.chunks_exact(n)) {
                        *rd = row.iter().zip(&gy).map(|(r, h)| r * h).sum();
                    }
                    let mut dx = 0.0;
                    let mut dy = 0.0;
                    for a in 0..n {
                        dx += (xs[a] - z[0]) * gx[a] * row_dot[a];
                    }
                    for (b, y) in ys.iter().enumerate() {
                        let col: f64 = (0..n).map(|a| g[a * n + b] * gx[a]).sum();
                        dy += (y - z[1]) * gy[b] * col;
                    }
                    let mut out = Point::<D>::zeros();
                    out[0] = amp * inv_var * dx;
                    out[1] = amp * inv_var * dy;
                    out
                })
                .collect()
        }
        _ => unreachable!("chains live in 2 or 3 dimensions"),
    }
}

/// Same-size convolution with zero padding: `out[i] = Σ_k K[k]·in[i - k + h]`.
fn convolve(input: &[f64], n: usize, rank: usize, psf: &Psf) -> Vec<f64> {
    let s = psf.side;
    let h = s / 2;
    let mut out = vec![0.0; input.len()];
    match rank {
        1 => {
            for (i, o) in out.iter_mut().enumerate() {
                for (k, w) in psf.values.iter().enumerate() {
                    if let Some(src) = (i + h).checked_sub(k).filter(|&j| j < n) {
                        *o += w * input[src];
                    }
                }
            }
        }
        _ => {
            for i in 0..n {
                for j in 0..n {
                    let mut acc = 0.0;
                    for ki in 0..s {
                        let Some(si) = (i + h).checked_sub(ki).filter(|&r| r < n) else {
                            continue;
                        };
                        for kj in 0..s {
                            let Some(sj) = (j + h).checked_sub(kj).filter(|&c| c < n) else {
                                continue;
                            };
                            acc += psf.values[ki * s + kj] * input[si * n + sj];
                        }
                    }
                    out[i * n + j] = acc;
                }
            }
        }
    }
    out
}

/// Adjoint of [`convolve`]: `out[j] = Σ_k K[k]·in[j + k - h]`.
fn correlate(input: &[f64], n: usize, rank: usize, psf: &Psf) -> Vec<f64> {
    let s = psf.side;
    let h = s / 2;
    let mut out = vec![0.0; input.len()];
    let shift = |i: usize, k: usize| (i + k).checked_sub(h).filter(|&r| r < n);
    match rank {
        1 => {
            for (j, o) in out.iter_mut().enumerate() {
                for (k, w) in psf.values.iter().enumerate() {
                    if let Some(src) = shift(j, k) {
                        *o += w * input[src];
                    }
                }
            }
        }
        _ => {
            for i in 0..n {
                for j in 0..n {
                    let mut acc = 0.0;
                    for ki in 0..s {
                        let Some(si) = shift(i, ki) else { continue };
                        for kj in 0..s {
                            let Some(sj) = shift(j, kj) else { continue };
                            acc += psf.values[ki * s + kj] * input[si * n + sj];
                        }
                    }
                    out[i * n + j] = acc;
                }
            }
        }
    }
    out
}

/// Adds i.i.d. `N(0, variance)` noise to every sample.
pub fn add_noise<R: Rng + ?Sized>(
    image: &ProjectionImage,
    variance: f64,
    rng: &mut R,
) -> Result<ProjectionImage> {
    let mut values = image.values.clone();
    add_noise_in_place(&mut values, variance, rng)?;
    Ok(ProjectionImage {
        values,
        grid: image.grid.clone(),
    })
}

pub(crate) fn add_noise_in_place<R: Rng + ?Sized>(
    values: &mut [f64],
    variance: f64,
    rng: &mut R,
) -> Result<()> {
    if !(variance >= 0.0 && variance.is_finite()) {
        return Err(Error::invalid(
            "noise variance",
            format!("{variance} is not a finite nonnegative number"),
        ));
    }
    if variance == 0.0 {
        return Ok(());
    }
    let normal = Normal::new(0.0, variance.sqrt()).expect("positive finite deviation");
    for v in values {
        *v += normal.sample(rng);
    }
    Ok(())
}

/// Pooled sample variance of all clean images divided by the noise variance.
pub fn snr<'a, I>(clean_images: I, noise_variance: f64) -> Result<f64>
where
    I: IntoIterator<Item = &'a ProjectionImage>,
{
    if !(noise_variance > 0.0 && noise_variance.is_finite()) {
        return Err(Error::invalid(
            "noise variance",
            format!("{noise_variance} is not positive"),
        ));
    }
    let (mut count, mut sum, mut sum_sq) = (0usize, 0.0, 0.0);
    for image in clean_images {
        count += image.values.len();
        for v in &image.values {
            sum += v;
            sum_sq += v * v;
        }
    }
    if count == 0 {
        return Err(Error::invalid("images", "no samples to pool"));
    }
    let mean = sum / count as f64;
    let variance = (sum_sq / count as f64 - mean * mean).max(0.0);
    Ok(variance / noise_variance)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::{Vector2, Vector3};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg(sigma: f64, grid: ProjectionGrid) -> ForwardModelConfig {
        ForwardModelConfig::new(1.0, sigma, grid).unwrap()
    }

    fn curve3(points: Vec<Vector3<f64>>) -> DiscreteCurve<3> {
        DiscreteCurve::new(points, 1.0).unwrap()
    }

    #[test]
    fn density_peak_and_half_maximum() {
        let c = cfg(1.0, ProjectionGrid::new(2, vec![[0.0, 1.0], [0.0, 1.0]]).unwrap());
        let curve = curve3(vec![Vector3::zeros()]);
        assert_eq!(density_at(&curve, &c, &Vector3::zeros()), 1.0);
        let x = Vector3::new(0.0, 0.0, (2.0 * 2f64.ln()).sqrt());
        assert_abs_diff_eq!(density_at(&curve, &c, &x), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn density_matches_direct_sum() {
        let c = cfg(1.3, ProjectionGrid::new(2, vec![[0.0, 1.0], [0.0, 1.0]]).unwrap());
        let pts = vec![
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(2.0, 0.0, 0.0),
        ];
        let mid = Vector3::new(1.0, 0.2, -0.3);
        let expected: f64 = pts
            .iter()
            .map(|p: &Vector3<f64>| (-(mid - p).norm_squared() / (2.0 * 1.3 * 1.3)).exp())
            .sum();
        let got = density_at(&curve3(pts), &c, &mid);
        assert!((got - expected).abs() < 1e-14);
    }

    #[test]
    fn density_grid_matches_pointwise() {
        let pts = vec![Vector3::new(0.2, -0.4, 1.0), Vector3::new(1.1, 0.3, -0.5)];
        let extent = [[-2.0, 2.0], [-1.0, 3.0], [-2.0, 1.0]];
        let values = density_on_grid(&pts, 1.5, 0.8, 5, &extent).unwrap();
        let c = cfg(0.8, ProjectionGrid::new(2, vec![[0.0, 1.0], [0.0, 1.0]]).unwrap());
        let c = ForwardModelConfig { nu: 1.5, ..c };
        let curve = curve3(pts);
        let step = |a: usize| (extent[a][1] - extent[a][0]) / 4.0;
        for i in 0..5 {
            for j in 0..5 {
                for k in 0..5 {
                    let x = Vector3::new(
                        extent[0][0] + i as f64 * step(0),
                        extent[1][0] + j as f64 * step(1),
                        extent[2][0] + k as f64 * step(2),
                    );
                    let v = values[(i * 5 + j) * 5 + k];
                    assert!((v - density_at(&curve, &c, &x)).abs() < 1e-14);
                }
            }
        }
        assert!(density_on_grid(&curve.points, 1.0, 1.0, 5, &extent[..2]).is_err());
    }

    #[test]
    fn projected_peak() {
        let c = cfg(1.0, ProjectionGrid::new(5, vec![[-2.0, 2.0]]).unwrap());
        let curve = DiscreteCurve::new(vec![Vector2::zeros()], 1.0).unwrap();
        let img = project(&curve, &c).unwrap();
        assert_abs_diff_eq!(img.values[2], (2.0 * std::f64::consts::PI).sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(img.values[2], 2.5066, epsilon = 1e-4);
    }

    #[test]
    fn identity_psf_is_noop() {
        let grid = ProjectionGrid::new(9, vec![[-4.0, 4.0], [-3.0, 5.0]]).unwrap();
        let plain = cfg(1.5, grid);
        let blurred = plain.clone().with_psf(Psf::identity()).unwrap();
        let curve = curve3(vec![Vector3::new(0.3, -0.2, 1.0), Vector3::new(1.0, 0.5, 0.0)]);
        assert_eq!(
            project(&curve, &plain).unwrap(),
            project(&curve, &blurred).unwrap()
        );
    }

    #[test]
    fn psf_shifts_and_zero_pads() {
        // kernel [0, 0, 1] convolved: out[i] = in[i - 1]
        let input = vec![1.0, 2.0, 3.0, 4.0];
        let psf = Psf {
            side: 3,
            values: vec![0.0, 0.0, 1.0],
        };
        assert_eq!(convolve(&input, 4, 1, &psf), vec![0.0, 1.0, 2.0, 3.0]);
        assert_eq!(correlate(&input, 4, 1, &psf), vec![2.0, 3.0, 4.0, 0.0]);
    }

    #[test]
    fn correlation_is_convolution_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for rank in 1..=2 {
            let n: usize = 6;
            let len = n.pow(rank as u32);
            let psf = Psf {
                side: 3,
                values: (0..3usize.pow(rank as u32)).map(|_| rng.random::<f64>()).collect(),
            };
            let u: Vec<f64> = (0..len).map(|_| rng.random::<f64>()).collect();
            let v: Vec<f64> = (0..len).map(|_| rng.random::<f64>()).collect();
            let lhs: f64 = convolve(&u, n, rank, &psf).iter().zip(&v).map(|(a, b)| a * b).sum();
            let rhs: f64 = u.iter().zip(correlate(&v, n, rank, &psf)).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_configs() {
        let grid = ProjectionGrid::new(4, vec![[0.0, 1.0]]).unwrap();
        assert!(ForwardModelConfig::new(0.0, 1.0, grid.clone()).is_err());
        assert!(ForwardModelConfig::new(1.0, -1.0, grid.clone()).is_err());
        let even = Psf {
            side: 2,
            values: vec![0.5, 0.5],
        };
        assert!(cfg(1.0, grid.clone()).with_psf(even).is_err());
        assert!(ProjectionGrid::new(1, vec![[0.0, 1.0]]).is_err());
        assert!(ProjectionGrid::new(4, vec![[1.0, 1.0]]).is_err());
        let curve = curve3(vec![Vector3::zeros()]);
        assert!(project(&curve, &cfg(1.0, grid)).is_err());
    }

    #[test]
    fn noise_contract() {
        let grid = ProjectionGrid::new(8, vec![[0.0, 1.0]]).unwrap();
        let img = ProjectionImage::zeros(grid);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(add_noise(&img, 0.0, &mut rng).unwrap(), img);
        assert!(add_noise(&img, -1.0, &mut rng).is_err());
        let a = add_noise(&img, 4.0, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = add_noise(&img, 4.0, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn noise_variance_law_of_large_numbers() {
        let grid = ProjectionGrid::new(1000, vec![[0.0, 1.0], [0.0, 1.0]]).unwrap();
        let img = ProjectionImage::zeros(grid);
        let noisy = add_noise(&img, 2500.0, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let n = noisy.values.len() as f64;
        let mean = noisy.values.iter().sum::<f64>() / n;
        let var = noisy.values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        assert!((var / 2500.0 - 1.0).abs() < 0.01, "variance {var}");
    }

    #[test]
    fn snr_examples() {
        let grid = ProjectionGrid::new(2, vec![[0.0, 1.0]]).unwrap();
        // two samples ±s have pooled variance s²
        let s = 182.63f64.sqrt();
        let img = ProjectionImage::new(vec![s, -s], grid.clone()).unwrap();
        assert_abs_diff_eq!(snr([&img], 2500.0).unwrap(), 0.073, epsilon = 5e-4);
        let s = 10f64.sqrt();
        let img = ProjectionImage::new(vec![s, -s], grid.clone()).unwrap();
        assert_abs_diff_eq!(snr([&img], 1089.0).unwrap(), 0.00918, epsilon = 5e-6);
        let flat = ProjectionImage::new(vec![3.0, 3.0], grid).unwrap();
        assert_eq!(snr([&flat, &flat], 1.0).unwrap(), 0.0);
        assert!(snr([&flat], 0.0).is_err());
        assert!(snr(std::iter::empty(), 1.0).is_err());
    }
}
