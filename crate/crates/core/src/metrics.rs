//! Point-cloud errors between predicted and ground-truth chains.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frenet::DiscreteCurve;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    /// Mean over particles of the largest per-atom displacement.
    pub max_error: f64,
    /// Mean per-atom displacement over all particles and atoms.
    pub avg_error: f64,
    pub per_particle_max: Vec<f64>,
}

fn check_pairs<const D: usize>(truth: &[DiscreteCurve<D>], pred: &[DiscreteCurve<D>]) -> Result<()> {
    if truth.len() != pred.len() {
        return Err(Error::Shape {
            what: "predicted curves",
            expected: truth.len(),
            found: pred.len(),
        });
    }
    if truth.is_empty() {
        return Err(Error::invalid("curves", "no curves to compare"));
    }
    for (t, p) in truth.iter().zip(pred) {
        if t.len() != p.len() {
            return Err(Error::Shape {
                what: "atoms in predicted curve",
                expected: t.len(),
                found: p.len(),
            });
        }
    }
    Ok(())
}

/// Per-atom displacements for every pair.
fn displacements<const D: usize>(truth: &[DiscreteCurve<D>], pred: &[DiscreteCurve<D>]) -> Vec<Vec<f64>> {
    truth
        .par_iter()
        .zip(pred)
        .map(|(t, p)| {
            t.points
                .iter()
                .zip(&p.points)
                .map(|(a, b)| (a - b).norm())
                .collect()
        })
        .collect()
}

pub fn error_report<const D: usize>(
    truth: &[DiscreteCurve<D>],
    pred: &[DiscreteCurve<D>],
) -> Result<ErrorReport> {
    check_pairs(truth, pred)?;
    let disp = displacements(truth, pred);
    let per_particle_max: Vec<f64> = disp
        .iter()
        .map(|d| d.iter().copied().fold(0.0, f64::max))
        .collect();
    let max_error = per_particle_max.iter().sum::<f64>() / truth.len() as f64;
    let atoms: usize = disp.iter().map(Vec::len).sum();
    let total: f64 = disp.iter().map(|d| d.iter().sum::<f64>()).sum();
    let avg_error = if atoms == 0 { 0.0 } else { total / atoms as f64 };
    Ok(ErrorReport {
        max_error,
        avg_error,
        per_particle_max,
    })
}

/// `(1/n)·Σ_i max_j ‖z_ij - z̃_ij‖`, without alignment.
pub fn max_pointcloud_error<const D: usize>(
    truth: &[DiscreteCurve<D>],
    pred: &[DiscreteCurve<D>],
) -> Result<f64> {
    Ok(error_report(truth, pred)?.max_error)
}

/// `(1/(n·m))·Σ_i Σ_j ‖z_ij - z̃_ij‖`, without alignment.
pub fn avg_pointcloud_error<const D: usize>(
    truth: &[DiscreteCurve<D>],
    pred: &[DiscreteCurve<D>],
) -> Result<f64> {
    Ok(error_report(truth, pred)?.avg_error)
}

/// Rigidly superimposes `pred` onto `truth` (Kabsch, proper rotations only)
/// and returns the aligned copy. Intended for studies where poses are
/// estimated rather than known.
pub fn kabsch_align<const D: usize>(truth: &DiscreteCurve<D>, pred: &DiscreteCurve<D>) -> Result<DiscreteCurve<D>> {
    check_pairs(std::slice::from_ref(truth), std::slice::from_ref(pred))?;
    let m = truth.len() as f64;
    let ct = truth.points.iter().sum::<nalgebra::SVector<f64, D>>() / m;
    let cp = pred.points.iter().sum::<nalgebra::SVector<f64, D>>() / m;
    let mut h = DMatrix::<f64>::zeros(D, D);
    for (t, p) in truth.points.iter().zip(&pred.points) {
        let (t, p) = (t - ct, p - cp);
        for r in 0..D {
            for c in 0..D {
                h[(r, c)] += p[r] * t[c];
            }
        }
    }
    let svd = h.svd(true, true);
    let (u, v_t) = (svd.u.expect("requested"), svd.v_t.expect("requested"));
    let mut correction = DMatrix::<f64>::identity(D, D);
    if (v_t.transpose() * u.transpose()).determinant() < 0.0 {
        correction[(D - 1, D - 1)] = -1.0;
    }
    let rot = v_t.transpose() * correction * u.transpose();
    let points = pred
        .points
        .iter()
        .map(|p| {
            let d = p - cp;
            let mut out = ct;
            for r in 0..D {
                for c in 0..D {
                    out[r] += rot[(r, c)] * d[c];
                }
            }
            out
        })
        .collect();
    DiscreteCurve::new(points, pred.delta)
}

/// [`error_report`] after aligning every prediction with [`kabsch_align`].
pub fn aligned_error_report<const D: usize>(
    truth: &[DiscreteCurve<D>],
    pred: &[DiscreteCurve<D>],
) -> Result<ErrorReport> {
    check_pairs(truth, pred)?;
    let aligned = truth
        .iter()
        .zip(pred)
        .map(|(t, p)| kabsch_align(t, p))
        .collect::<Result<Vec<_>>>()?;
    error_report(truth, &aligned)
}
