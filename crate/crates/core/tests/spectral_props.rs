mod common;

use chainspec::spectral::{build_weights, normalized_laplacian, smallest_eigenpairs, GraphConfig};
use common::*;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

fn random_betas(r: &mut impl Rng, n: usize, q: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..q).map(|_| r.random_range(-1.0..1.0)).collect()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn connected_graph_has_trivial_bottom(seed in any::<u64>(), n in 3usize..40, sigma in 0.5f64..3.0) {
        let mut r = rng(seed);
        let w = build_weights(&random_betas(&mut r, n, 5), &GraphConfig::gaussian(sigma)).unwrap();
        let l = normalized_laplacian(&w).unwrap();
        let basis = smallest_eigenpairs(&l, n).unwrap();
        prop_assert!(basis.eigenvalues[0] <= 1e-10);
        let root_degree: Vec<f64> = (0..n).map(|i| w.row(i).sum().sqrt()).collect();
        let norm = root_degree.iter().map(|v| v * v).sum::<f64>().sqrt();
        let cosine: f64 = (0..n).map(|i| basis.phi[(i, 0)] * root_degree[i]).sum::<f64>() / norm;
        prop_assert!(cosine.abs() > 1.0 - 1e-8, "cosine {cosine}");
        for &v in &basis.eigenvalues {
            prop_assert!((-1e-10..=2.0 + 1e-10).contains(&v), "eigenvalue {v}");
        }
        let gram = basis.phi.transpose() * &basis.phi;
        prop_assert!((gram - DMatrix::identity(n, n)).amax() < 1e-8);
        let residual = &l * &basis.phi - &basis.phi * DMatrix::from_diagonal(&basis.eigenvalues.clone().into());
        prop_assert!(residual.amax() < 1e-8);
    }

    #[test]
    fn knn_spectrum_is_bounded(seed in any::<u64>(), n in 4usize..40, k in 1usize..4) {
        let mut r = rng(seed);
        let w = build_weights(&random_betas(&mut r, n, 3), &GraphConfig::knn(k.min(n - 1))).unwrap();
        let basis = smallest_eigenpairs(&normalized_laplacian(&w).unwrap(), n).unwrap();
        for &v in &basis.eigenvalues {
            prop_assert!((-1e-10..=2.0 + 1e-10).contains(&v), "eigenvalue {v}");
        }
    }

    #[test]
    fn relabeling_permutes_rows(seed in any::<u64>(), n in 4usize..30) {
        let mut r = rng(seed);
        let betas = random_betas(&mut r, n, 4);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut r);
        let permuted: Vec<Vec<f64>> = perm.iter().map(|&i| betas[i].clone()).collect();
        let cfg = GraphConfig::gaussian(1.0);
        let spectrum = |b: &[Vec<f64>]| smallest_eigenpairs(&normalized_laplacian(&build_weights(b, &cfg).unwrap()).unwrap(), n).unwrap();
        let a = spectrum(&betas);
        let b = spectrum(&permuted);
        for (x, y) in a.eigenvalues.iter().zip(&b.eigenvalues) {
            prop_assert!((x - y).abs() < 1e-10);
        }
        let k = n.min(4);
        for c in 0..k {
            // eigenvectors are only determined for isolated eigenvalues
            let gap = a.eigenvalues.iter().enumerate()
                .filter(|(j, _)| *j != c)
                .map(|(_, v)| (v - a.eigenvalues[c]).abs())
                .fold(f64::INFINITY, f64::min);
            if gap < 1e-4 {
                continue;
            }
            for (new, &old) in perm.iter().enumerate() {
                prop_assert!((b.phi[(new, c)] - a.phi[(old, c)]).abs() < 1e-8);
            }
        }
    }
}
