//! Similarity graphs over particles and the low end of their normalized
//! Laplacian spectrum.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest asymmetry accepted by [`smallest_eigenpairs`].
pub const SYMMETRY_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Kernel {
    /// `W_ij = exp(-‖β_i - β_j‖²/(2σ²))`.
    Gaussian { sigma: f64 },
    /// `W_ij = 1` when either vertex is among the other's `k` nearest neighbours.
    Knn { k: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphConfig {
    pub kernel: Kernel,
    /// Weights below this value are dropped; 0 keeps every edge.
    #[serde(default)]
    pub sparsify_threshold: f64,
}

impl GraphConfig {
    pub fn gaussian(sigma: f64) -> Self {
        Self {
            kernel: Kernel::Gaussian { sigma },
            sparsify_threshold: 0.0,
        }
    }

    pub fn knn(k: usize) -> Self {
        Self {
            kernel: Kernel::Knn { k },
            sparsify_threshold: 0.0,
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        match self.kernel {
            Kernel::Gaussian { sigma } if !(sigma > 0.0 && sigma.is_finite()) => {
                return Err(Error::invalid("kernel", format!("sigma {sigma} is not positive")));
            }
            Kernel::Knn { k } if k == 0 || k >= n => {
                return Err(Error::invalid(
                    "kernel",
                    format!("k = {k} must lie in [1, {}]", n.saturating_sub(1)),
                ));
            }
            _ => {}
        }
        if !(self.sparsify_threshold >= 0.0 && self.sparsify_threshold.is_finite()) {
            return Err(Error::invalid(
                "sparsify_threshold",
                format!("{} is negative", self.sparsify_threshold),
            ));
        }
        Ok(())
    }
}

/// Smallest eigenpairs of a graph Laplacian.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralBasis {
    /// Ascending.
    pub eigenvalues: Vec<f64>,
    /// `n × K`, column `k` is the eigenvector of `eigenvalues[k]`.
    pub phi: DMatrix<f64>,
}

impl SpectralBasis {
    pub fn new(eigenvalues: Vec<f64>, phi: DMatrix<f64>) -> Result<Self> {
        if phi.ncols() != eigenvalues.len() {
            return Err(Error::Shape {
                what: "basis columns",
                expected: eigenvalues.len(),
                found: phi.ncols(),
            });
        }
        Ok(Self { eigenvalues, phi })
    }

    /// Number of particles `n`.
    pub fn len(&self) -> usize {
        self.phi.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.phi.nrows() == 0
    }

    /// Number of eigenvectors `K`.
    pub fn rank(&self) -> usize {
        self.phi.ncols()
    }

    /// Spectral coordinates `Φ_i` of particle `i`.
    pub fn row(&self, i: usize) -> Vec<f64> {
        self.phi.row(i).iter().copied().collect()
    }

    /// Keeps the first `k` eigenpairs.
    pub fn truncated(&self, k: usize) -> Result<Self> {
        if k == 0 || k > self.rank() {
            return Err(Error::invalid(
                "K",
                format!("{k} outside [1, {}]", self.rank()),
            ));
        }
        Ok(Self {
            eigenvalues: self.eigenvalues[..k].to_vec(),
            phi: self.phi.columns(0, k).into_owned(),
        })
    }
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    // eight independent accumulators let the compiler vectorize the loop
    let mut acc = [0.0f64; 8];
    let chunks_a = a.chunks_exact(8);
    let chunks_b = b.chunks_exact(8);
    let tail: f64 = chunks_a
        .remainder()
        .iter()
        .zip(chunks_b.remainder())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    for (ca, cb) in chunks_a.zip(chunks_b) {
        for k in 0..8 {
            let d = ca[k] - cb[k];
            acc[k] += d * d;
        }
    }
    acc.iter().sum::<f64>() + tail
}

/// All pairwise squared Euclidean distances, computed directly so that equal
/// vectors are at distance exactly zero.
pub fn pairwise_squared_distances<B: AsRef<[f64]> + Sync>(betas: &[B]) -> Result<DMatrix<f64>> {
    let n = betas.len();
    let q = betas.first().map_or(0, |b| b.as_ref().len());
    for b in betas {
        if b.as_ref().len() != q {
            return Err(Error::Shape {
                what: "representation entries",
                expected: q,
                found: b.as_ref().len(),
            });
        }
    }
    // rows are computed independently and the upper triangle mirrored, so the
    // result is exactly symmetric
    let upper: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let bi = betas[i].as_ref();
            (i + 1..n)
                .map(|j| squared_distance(bi, betas[j].as_ref()))
                .collect()
        })
        .collect();
    let mut d = DMatrix::zeros(n, n);
    for (i, row) in upper.iter().enumerate() {
        for (offset, &v) in row.iter().enumerate() {
            let j = i + 1 + offset;
            d[(i, j)] = v;
            d[(j, i)] = v;
        }
    }
    Ok(d)
}

/// Symmetric nonnegative weight matrix with zero diagonal.
pub fn build_weights<B: AsRef<[f64]> + Sync>(betas: &[B], cfg: &GraphConfig) -> Result<DMatrix<f64>> {
    let n = betas.len();
    if n < 2 {
        return Err(Error::invalid("graph", format!("needs at least 2 vertices, got {n}")));
    }
    cfg.validate(n)?;
    let dist = pairwise_squared_distances(betas)?;
    let mut w = match cfg.kernel {
        Kernel::Gaussian { sigma } => {
            let scale = -0.5 / (sigma * sigma);
            let mut w = dist.map(|d| (d * scale).exp());
            w.fill_diagonal(0.0);
            w
        }
        Kernel::Knn { k } => {
            let mut w = DMatrix::zeros(n, n);
            for j in 0..n {
                let mut order: Vec<usize> = (0..n).filter(|&i| i != j).collect();
                // ties broken by index for reproducibility
                order.sort_by(|&a, &b| dist[(a, j)].total_cmp(&dist[(b, j)]).then(a.cmp(&b)));
                for &i in &order[..k] {
                    w[(i, j)] = 1.0;
                    w[(j, i)] = 1.0;
                }
            }
            w
        }
    };
    if cfg.sparsify_threshold > 0.0 {
        w.apply(|v| {
            if *v < cfg.sparsify_threshold {
                *v = 0.0;
            }
        });
    }
    Ok(w)
}

/// `L = D^{-1/2}(D - W)D^{-1/2}` with `D = diag(Σ_j W_ij)`.
pub fn normalized_laplacian(w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = w.nrows();
    if w.ncols() != n {
        return Err(Error::Shape {
            what: "weight matrix columns",
            expected: n,
            found: w.ncols(),
        });
    }
    let degrees: Vec<f64> = (0..n).map(|i| w.row(i).sum()).collect();
    if let Some(i) = degrees.iter().position(|&d| d <= 0.0) {
        return Err(Error::IsolatedVertex(i));
    }
    let inv_sqrt: Vec<f64> = degrees.iter().map(|d| 1.0 / d.sqrt()).collect();
    let mut l = DMatrix::from_fn(n, n, |i, j| {
        let w_ij = 0.5 * (w[(i, j)] + w[(j, i)]);
        -w_ij * inv_sqrt[i] * inv_sqrt[j]
    });
    for i in 0..n {
        l[(i, i)] += degrees[i] * inv_sqrt[i] * inv_sqrt[i];
    }
    Ok(l)
}

/// The `k` smallest eigenpairs of a symmetric matrix. Each eigenvector is
/// signed so that its first largest-magnitude component is positive.
pub fn smallest_eigenpairs(l: &DMatrix<f64>, k: usize) -> Result<SpectralBasis> {
    let n = l.nrows();
    if l.ncols() != n {
        return Err(Error::Shape {
            what: "matrix columns",
            expected: n,
            found: l.ncols(),
        });
    }
    if k == 0 || k > n {
        return Err(Error::invalid("K", format!("{k} outside [1, {n}]")));
    }
    let asym = (0..n)
        .flat_map(|i| (0..i).map(move |j| (i, j)))
        .map(|(i, j)| (l[(i, j)] - l[(j, i)]).abs())
        .fold(0.0f64, f64::max);
    if asym > SYMMETRY_TOL {
        return Err(Error::NotSymmetric(asym));
    }

    let mat = faer::Mat::<f64>::from_fn(n, n, |i, j| l[(i, j)]);
    let eig = mat
        .self_adjoint_eigen(faer::Side::Lower)
        .map_err(|e| Error::invalid("eigensolver", format!("{e:?}")))?;
    let values = eig.S().column_vector();
    let vectors = eig.U();

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    order.truncate(k);

    let eigenvalues = order.iter().map(|&c| values[c]).collect();
    let mut phi = DMatrix::zeros(n, k);
    for (dst, &src) in order.iter().enumerate() {
        let mut pivot = 0;
        for i in 1..n {
            if vectors[(i, src)].abs() > vectors[(pivot, src)].abs() {
                pivot = i;
            }
        }
        let sign = if vectors[(pivot, src)] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..n {
            phi[(i, dst)] = sign * vectors[(i, src)];
        }
    }
    SpectralBasis::new(eigenvalues, phi)
}

/// Weights, Laplacian and eigenpairs in one call.
pub fn embed<B: AsRef<[f64]> + Sync>(betas: &[B], cfg: &GraphConfig, k: usize) -> Result<SpectralBasis> {
    let w = build_weights(betas, cfg)?;
    let l = normalized_laplacian(&w)?;
    smallest_eigenpairs(&l, k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn gaussian_weight_examples() {
        let w = build_weights(&[vec![1.0, 2.0], vec![1.0, 2.0]], &GraphConfig::gaussian(3.0)).unwrap();
        assert_eq!(w[(0, 1)], 1.0);
        assert_eq!(w[(0, 0)], 0.0);
        let sigma = 2.0;
        let w = build_weights(
            &[vec![0.0, 0.0], vec![sigma * 2f64.sqrt(), 0.0]],
            &GraphConfig::gaussian(sigma),
        )
        .unwrap();
        assert_abs_diff_eq!(w[(0, 1)], (-1.0f64).exp(), epsilon = 1e-15);
    }

    #[test]
    fn sparsify_drops_small_weights() {
        let betas = [vec![0.0], vec![1.0], vec![10.0]];
        let cfg = GraphConfig {
            kernel: Kernel::Gaussian { sigma: 1.0 },
            sparsify_threshold: 1e-3,
        };
        let w = build_weights(&betas, &cfg).unwrap();
        assert!(w[(0, 1)] > 0.0);
        assert_eq!(w[(0, 2)], 0.0);
        assert_eq!(w[(1, 2)], 0.0);
    }

    #[test]
    fn weight_errors() {
        assert!(build_weights(&[vec![0.0], vec![1.0, 2.0]], &GraphConfig::gaussian(1.0)).is_err());
        assert!(build_weights(&[vec![0.0], vec![1.0]], &GraphConfig::knn(2)).is_err());
        assert!(build_weights(&[vec![0.0], vec![1.0]], &GraphConfig::knn(0)).is_err());
        assert!(build_weights(&[vec![0.0]], &GraphConfig::gaussian(1.0)).is_err());
        assert!(build_weights(&[vec![0.0], vec![1.0]], &GraphConfig::gaussian(0.0)).is_err());
    }

    #[test]
    fn complete_graph_on_three_vertices() {
        let w = DMatrix::from_fn(3, 3, |i, j| if i == j { 0.0 } else { 1.0 });
        let l = normalized_laplacian(&w).unwrap();
        let expected = DMatrix::from_fn(3, 3, |i, j| if i == j { 1.0 } else { -0.5 });
        assert_abs_diff_eq!(l, expected, epsilon = 1e-15);
        let basis = smallest_eigenpairs(&l, 3).unwrap();
        for (got, want) in basis.eigenvalues.iter().zip([0.0, 1.5, 1.5]) {
            assert!((got - want).abs() < 1e-10);
        }
    }

    #[test]
    fn isolated_vertex_is_named() {
        let mut w = DMatrix::zeros(3, 3);
        w[(0, 1)] = 1.0;
        w[(1, 0)] = 1.0;
        assert!(matches!(normalized_laplacian(&w), Err(Error::IsolatedVertex(2))));
    }

    #[test]
    fn two_components_give_double_zero() {
        let mut w = DMatrix::zeros(4, 4);
        for (a, b) in [(0, 1), (2, 3)] {
            w[(a, b)] = 1.0;
            w[(b, a)] = 1.0;
        }
        let basis = smallest_eigenpairs(&normalized_laplacian(&w).unwrap(), 3).unwrap();
        assert!(basis.eigenvalues[0].abs() < 1e-12);
        assert!(basis.eigenvalues[1].abs() < 1e-12);
        assert!((basis.eigenvalues[2] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn zero_matrix_single_pair() {
        let basis = smallest_eigenpairs(&DMatrix::zeros(4, 4), 1).unwrap();
        assert_eq!(basis.eigenvalues, vec![0.0]);
        assert!((basis.phi.column(0).norm() - 1.0).abs() < 1e-12);
        let col = basis.phi.column(0);
        let pivot = col.iamax();
        assert!(col[pivot] > 0.0);
    }

    #[test]
    fn eigen_errors() {
        let l = DMatrix::<f64>::identity(3, 3);
        assert!(smallest_eigenpairs(&l, 0).is_err());
        assert!(smallest_eigenpairs(&l, 4).is_err());
        let mut skew = l.clone();
        skew[(0, 1)] = 1e-6;
        assert!(matches!(smallest_eigenpairs(&skew, 1), Err(Error::NotSymmetric(_))));
    }
}
