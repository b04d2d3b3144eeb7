//! Backbone trajectories: the plain-text frame format and a synthetic
//! stand-in for molecular-dynamics output.
//!
//! ```text
//! # comment
//! FRAME 0
//! 1.0 2.0 3.0
//! 4.8 2.0 3.0
//! FRAME 1
//! ...
//! ```

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frenet::{synthesize_curve, ChainAngles, DiscreteCurve, Pose};

/// Largest relative deviation of a bond length from the trajectory mean
/// accepted by [`load_trajectory`].
pub const TRAJECTORY_SPACING_TOL: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpacingStats {
    pub mean: f64,
    /// Population variance.
    pub variance: f64,
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl SpacingStats {
    pub fn of<'a, const D: usize>(curves: impl IntoIterator<Item = &'a DiscreteCurve<D>>) -> Self {
        let (mut count, mut sum, mut sum_sq) = (0usize, 0.0, 0.0);
        let (mut min, mut max) = (f64::INFINITY, f64::NEG_INFINITY);
        for curve in curves {
            for d in curve.spacings() {
                count += 1;
                sum += d;
                sum_sq += d * d;
                min = min.min(d);
                max = max.max(d);
            }
        }
        let mean = sum / count.max(1) as f64;
        Self {
            mean,
            variance: (sum_sq / count.max(1) as f64 - mean * mean).max(0.0),
            min,
            max,
            count,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// Each frame's `delta` is the trajectory-wide mean bond length.
    pub frames: Vec<DiscreteCurve<3>>,
    pub stats: SpacingStats,
}

pub fn parse_trajectory(text: &str, path: &Path) -> Result<Trajectory> {
    let err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        location: format!("line {line}"),
        message,
    };
    let mut frames: Vec<Vec<Vector3<f64>>> = Vec::new();
    let mut frame_lines: Vec<usize> = Vec::new();
    for (number, raw) in text.lines().enumerate() {
        let line_no = number + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(rest) = line.strip_prefix("FRAME") {
            let rest = rest.trim();
            if rest.parse::<u64>().is_err() {
                return Err(err(line_no, format!("bad frame index {rest:?}")));
            }
            frames.push(Vec::new());
            frame_lines.push(line_no);
            continue;
        }
        let Some(frame) = frames.last_mut() else {
            return Err(err(line_no, "atom line before the first FRAME line".into()));
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(err(line_no, format!("expected 3 coordinates, found {}", fields.len())));
        }
        let mut xyz = [0.0; 3];
        for (slot, field) in xyz.iter_mut().zip(&fields) {
            *slot = field
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| err(line_no, format!("bad coordinate {field:?}")))?;
        }
        frame.push(Vector3::from(xyz));
    }
    if frames.is_empty() {
        return Err(err(text.lines().count().max(1), "no FRAME found".into()));
    }
    for (atoms, &line_no) in frames.iter().zip(&frame_lines) {
        if atoms.len() < 3 {
            return Err(err(line_no, Error::ChainTooShort(atoms.len()).to_string()));
        }
        if atoms.len() != frames[0].len() {
            return Err(err(
                line_no,
                format!("frame has {} atoms, first frame has {}", atoms.len(), frames[0].len()),
            ));
        }
    }
    let provisional: Vec<DiscreteCurve<3>> = frames
        .into_iter()
        .map(|points| DiscreteCurve { points, delta: 1.0 })
        .collect();
    let stats = SpacingStats::of(&provisional);
    let frames: Vec<DiscreteCurve<3>> = provisional
        .into_iter()
        .map(|c| DiscreteCurve {
            points: c.points,
            delta: stats.mean,
        })
        .collect();
    for frame in &frames {
        frame.check_spacing(TRAJECTORY_SPACING_TOL)?;
    }
    Ok(Trajectory { frames, stats })
}

/// Reads a trajectory file; atoms-per-frame must be constant and every bond
/// length within [`TRAJECTORY_SPACING_TOL`] of the mean.
pub fn load_trajectory(path: impl AsRef<Path>) -> Result<Trajectory> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_trajectory(&text, path)
}

pub fn format_trajectory(frames: &[DiscreteCurve<3>]) -> String {
    let mut out = String::new();
    for (index, frame) in frames.iter().enumerate() {
        writeln!(out, "FRAME {index}").unwrap();
        for p in &frame.points {
            // `{}` on f64 prints the shortest string that parses back exactly
            writeln!(out, "{} {} {}", p.x, p.y, p.z).unwrap();
        }
    }
    out
}

pub fn write_trajectory(path: impl AsRef<Path>, frames: &[DiscreteCurve<3>]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, format_trajectory(frames)).map_err(|e| Error::io(path, e))
}

/// Parameters of [`synthetic_trajectory`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticTrajectoryConfig {
    pub atoms: usize,
    pub frames: usize,
    pub delta: f64,
    /// Standard deviation of the per-coordinate thermal jitter.
    pub jitter: f64,
    /// Largest torsion change at a hinge over the trajectory (radians).
    pub hinge_amplitude: f64,
    pub seed: u64,
}

impl Default for SyntheticTrajectoryConfig {
    fn default() -> Self {
        Self {
            atoms: 214,
            frames: 102,
            delta: 3.8412,
            jitter: 0.058,
            hinge_amplitude: 0.9,
            seed: 7,
        }
    }
}

/// Number of random loop conformations scored per loop when folding.
const LOOP_CANDIDATES: usize = 48;
/// Non-adjacent atoms closer than this (in bond lengths) count as a clash.
const CLASH_DISTANCE: f64 = 1.05;

/// Radius of gyration of the chain plus a steep penalty for clashes.
fn fold_score(points: &[Vector3<f64>], delta: f64) -> f64 {
    let n = points.len() as f64;
    let centroid = points.iter().sum::<Vector3<f64>>() / n;
    let rg2 = points.iter().map(|p| (p - centroid).norm_squared()).sum::<f64>() / n;
    let limit = CLASH_DISTANCE * delta;
    let mut clash = 0.0;
    for (i, a) in points.iter().enumerate() {
        for b in points.iter().skip(i + 3) {
            let d = (a - b).norm();
            if d < limit {
                clash += (limit - d) * (limit - d);
            }
        }
    }
    rg2.sqrt() + 100.0 * clash
}

/// Torsion and bond angles of a compact backbone: helical stretches
/// (torsion ≈ 0.87, bond ≈ 1.55, close to C-α helix geometry) joined by
/// loops. Each loop is the best of [`LOOP_CANDIDATES`] random draws, scored
/// after appending the next helix, so the chain folds into a globule
/// instead of wandering off.
pub fn synthetic_backbone_angles(atoms: usize, seed: u64) -> Result<ChainAngles> {
    if atoms < 3 {
        return Err(Error::ChainTooShort(atoms));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = atoms - 2;
    let pose = Pose::<3>::identity(1);
    let helix_angles = |rng: &mut ChaCha8Rng, len: usize| -> (Vec<f64>, Vec<f64>) {
        (0..len)
            .map(|_| (0.87 + rng.random_range(-0.05..0.05), 1.55 + rng.random_range(-0.05..0.05)))
            .unzip()
    };
    let len = rng.random_range(10..18);
    let (mut theta, mut psi) = helix_angles(&mut rng, len);
    while theta.len() < count {
        let turn = rng.random_range(3..6);
        let len = rng.random_range(10..18);
        let (helix_theta, helix_psi) = helix_angles(&mut rng, len);
        let mut best: Option<(f64, Vec<f64>, Vec<f64>)> = None;
        for _ in 0..LOOP_CANDIDATES {
            let loop_theta: Vec<f64> = (0..turn)
                .map(|_| rng.random_range(-std::f64::consts::PI..std::f64::consts::PI))
                .collect();
            let loop_psi: Vec<f64> = (0..turn).map(|_| rng.random_range(0.9..1.9)).collect();
            let mut t = [theta.as_slice(), &loop_theta, &helix_theta].concat();
            let mut p = [psi.as_slice(), &loop_psi, &helix_psi].concat();
            t.truncate(count);
            p.truncate(count);
            let curve = synthesize_curve(&ChainAngles::spatial(t, p)?, &pose, 1.0)?;
            let score = fold_score(&curve.points, 1.0);
            if best.as_ref().is_none_or(|b| score < b.0) {
                best = Some((score, loop_theta, loop_psi));
            }
        }
        let (_, loop_theta, loop_psi) = best.expect("at least one candidate");
        theta.extend(loop_theta.into_iter().chain(helix_theta));
        psi.extend(loop_psi.into_iter().chain(helix_psi));
    }
    theta.truncate(count);
    psi.truncate(count);
    ChainAngles::spatial(theta, psi)
}

/// A continuously deforming backbone: a compact reference chain whose torsion
/// angles at three hinge atoms swing smoothly across the frames, with
/// independent Gaussian jitter on every coordinate so bond lengths fluctuate
/// around `delta` as in thermal motion.
pub fn synthetic_trajectory(cfg: &SyntheticTrajectoryConfig) -> Result<Vec<DiscreteCurve<3>>> {
    if cfg.frames == 0 {
        return Err(Error::invalid("frames", "trajectory needs at least one frame"));
    }
    if !(cfg.jitter >= 0.0 && cfg.jitter.is_finite()) {
        return Err(Error::invalid("jitter", format!("{} is negative", cfg.jitter)));
    }
    let base = synthetic_backbone_angles(cfg.atoms, cfg.seed)?;
    let count = cfg.atoms - 2;
    let hinges = [count / 4, count / 2, (3 * count) / 4];
    let phases = [0.0, 2.1, 4.2];
    let jitter = Normal::new(0.0, cfg.jitter.max(f64::MIN_POSITIVE)).expect("finite deviation");
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let pose = Pose::<3>::identity(1);
    (0..cfg.frames)
        .map(|f| {
            let s = if cfg.frames > 1 {
                f as f64 / (cfg.frames - 1) as f64
            } else {
                0.0
            };
            let mut theta = base.theta().to_vec();
            for (&h, phase) in hinges.iter().zip(phases) {
                let swing = (std::f64::consts::PI * s + phase).sin() - phase.sin();
                theta[h] += cfg.hinge_amplitude * swing;
            }
            let angles = ChainAngles::spatial(theta, base.psi().expect("spatial").to_vec())?;
            let mut curve = synthesize_curve(&angles, &pose, cfg.delta)?;
            let centroid = curve.points.iter().sum::<Vector3<f64>>() / curve.len() as f64;
            for p in &mut curve.points {
                *p -= centroid;
                if cfg.jitter > 0.0 {
                    *p += Vector3::from_fn(|_, _| jitter.sample(&mut rng));
                }
            }
            Ok(curve)
        })
        .collect()
}
