//! Discrete Frenet frames along a chain of equally spaced atoms.
//!
//! A chain `z_1, …, z_m` with spacing `δ` is generated by the recursion
//!
//! ```text
//! z_{j+1} = z_j + δ · e_D F_j        j = 1 … m-1
//! F_{j+1} = R(θ_j, ψ_j) · F_j        j = 1 … m-2
//! ```
//!
//! started from the pose `z_{j0} = ẑ`, `F_{j0} = F̂` at a reference atom `j0`.
//! `e_D F_j` is the last row of the frame (the segment tangent). Frames below
//! the reference atom are obtained by running the recursion backwards.
//!
//! Indices in the public API follow the 1-based chemical convention (atom 1
//! is the first atom, `j0 = 33` means the 33rd atom); storage is 0-based.
//!
//! In 3D the frame rows are `(normal, binormal, tangent)`. The curve does not
//! determine the binormal of the first segment, so the first torsion angle is
//! a gauge degree of freedom; extraction fixes it with `b_1 = b_2` (hence
//! `θ_1 = 0`) and returns bond angles in `[0, π]`.

use std::f64::consts::PI;

use nalgebra::{Matrix2, Matrix3, SMatrix, SVector, Vector3};

use crate::error::{Error, Result};

pub type Point<const D: usize> = SVector<f64, D>;
pub type Frame<const D: usize> = SMatrix<f64, D, D>;

/// Cross products shorter than this are treated as collinear segments.
pub const COLLINEAR_EPS: f64 = 1e-10;

/// Relative spacing tolerance accepted by [`extract_angles`].
pub const CHAIN_SPACING_TOL: f64 = 1e-6;

/// Tolerance on `FᵀF = I` and `det F = 1` for a pose frame.
pub const ROTATION_TOL: f64 = 1e-12;

/// Step rotation for spatial chains.
pub fn rotation_matrix_3d(theta: f64, psi: f64) -> Matrix3<f64> {
    let (st, ct) = theta.sin_cos();
    let (sp, cp) = psi.sin_cos();
    #[rustfmt::skip]
    let r = Matrix3::new(
        cp * ct, cp * st, -sp,
        -st,     ct,      0.0,
        sp * ct, sp * st, cp,
    );
    r
}

/// Step rotation for planar chains.
pub fn rotation_matrix_2d(theta: f64) -> Matrix2<f64> {
    let (s, c) = theta.sin_cos();
    Matrix2::new(c, -s, s, c)
}

/// Dimension marker; the geometry of each supported dimension lives in its
/// [`FrenetSpace`] impl.
#[derive(Debug, Clone, Copy)]
pub struct Space<const D: usize>;

/// Dimension-specific pieces of the frame recursion.
pub trait FrenetSpace<const D: usize> {
    /// Whether each step carries a bond angle `ψ` besides the torsion `θ`.
    const HAS_BOND_ANGLES: bool;

    fn step(theta: f64, psi: f64) -> Frame<D>;

    /// `(∂R/∂θ, ∂R/∂ψ)` of [`FrenetSpace::step`]. The second entry is zero in 2D.
    fn step_partials(theta: f64, psi: f64) -> (Frame<D>, Frame<D>);

    /// Inverse of [`FrenetSpace::step`] for a matrix of the step form.
    fn step_angles(r: &Frame<D>) -> (f64, f64);

    /// Frames for a sequence of unit segment tangents.
    fn frames_from_tangents(tangents: &[Point<D>]) -> Vec<Frame<D>>;

    fn determinant(m: &Frame<D>) -> f64;
}

impl FrenetSpace<2> for Space<2> {
    const HAS_BOND_ANGLES: bool = false;

    fn step(theta: f64, _psi: f64) -> Frame<2> {
        rotation_matrix_2d(theta)
    }

    fn step_partials(theta: f64, _psi: f64) -> (Frame<2>, Frame<2>) {
        let (s, c) = theta.sin_cos();
        (Matrix2::new(-s, -c, c, -s), Matrix2::zeros())
    }

    fn step_angles(r: &Frame<2>) -> (f64, f64) {
        (r[(1, 0)].atan2(r[(1, 1)]), 0.0)
    }

    fn frames_from_tangents(tangents: &[Point<2>]) -> Vec<Frame<2>> {
        // rows (n, t) with n = t rotated by -π/2, so det = 1
        tangents
            .iter()
            .map(|t| Matrix2::new(t.y, -t.x, t.x, t.y))
            .collect()
    }

    fn determinant(m: &Frame<2>) -> f64 {
        m.determinant()
    }
}

impl FrenetSpace<3> for Space<3> {
    const HAS_BOND_ANGLES: bool = true;

    fn step(theta: f64, psi: f64) -> Frame<3> {
        rotation_matrix_3d(theta, psi)
    }

    fn step_partials(theta: f64, psi: f64) -> (Frame<3>, Frame<3>) {
        let (st, ct) = theta.sin_cos();
        let (sp, cp) = psi.sin_cos();
        #[rustfmt::skip]
        let d_theta = Matrix3::new(
            -cp * st, cp * ct, 0.0,
            -ct,      -st,     0.0,
            -sp * st, sp * ct, 0.0,
        );
        #[rustfmt::skip]
        let d_psi = Matrix3::new(
            -sp * ct, -sp * st, -cp,
            0.0,      0.0,      0.0,
            cp * ct,  cp * st,  -sp,
        );
        (d_theta, d_psi)
    }

    fn step_angles(r: &Frame<3>) -> (f64, f64) {
        let theta = (-r[(1, 0)]).atan2(r[(1, 1)]);
        let psi = (-r[(0, 2)]).atan2(r[(2, 2)]);
        (theta, psi)
    }

    fn frames_from_tangents(tangents: &[Point<3>]) -> Vec<Frame<3>> {
        spatial_frames(tangents)
    }

    fn determinant(m: &Frame<3>) -> f64 {
        m.determinant()
    }
}

fn spatial_frames(tangents: &[Vector3<f64>]) -> Vec<Matrix3<f64>> {
    let count = tangents.len();
    let mut binormals: Vec<Option<Vector3<f64>>> = vec![None; count];
    for k in 1..count {
        let cross = tangents[k - 1].cross(&tangents[k]);
        let norm = cross.norm();
        if norm >= COLLINEAR_EPS {
            binormals[k] = Some(cross / norm);
        }
    }
    // b_1 = b_2, generalized: leading degenerate segments take the first
    // defined binormal, later ones carry the previous binormal forward.
    let seed = binormals
        .iter()
        .flatten()
        .next()
        .copied()
        .unwrap_or_else(|| any_perpendicular(&tangents[0]));
    let mut previous = seed;
    tangents
        .iter()
        .zip(binormals)
        .map(|(t, b)| {
            let b = match b {
                Some(b) => b,
                None => {
                    let projected = previous - t * previous.dot(t);
                    projected.normalize()
                }
            };
            previous = b;
            let n = b.cross(t);
            Matrix3::from_rows(&[n.transpose(), b.transpose(), t.transpose()])
        })
        .collect()
}

fn any_perpendicular(t: &Vector3<f64>) -> Vector3<f64> {
    let axis = if t.x.abs() <= t.y.abs() && t.x.abs() <= t.z.abs() {
        Vector3::x()
    } else if t.y.abs() <= t.z.abs() {
        Vector3::y()
    } else {
        Vector3::z()
    };
    t.cross(&axis).normalize()
}

/// Torsion angles `θ` (and bond angles `ψ` for spatial chains) of a chain,
/// one pair per interior atom.
///
/// Extracted angles are wrapped into `(-π, π]`; angles produced during
/// optimization may leave that range, which is harmless because the step
/// rotation is 2π-periodic.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainAngles {
    theta: Vec<f64>,
    psi: Option<Vec<f64>>,
}

impl ChainAngles {
    pub fn planar(theta: Vec<f64>) -> Self {
        Self { theta, psi: None }
    }

    pub fn spatial(theta: Vec<f64>, psi: Vec<f64>) -> Result<Self> {
        if theta.len() != psi.len() {
            return Err(Error::Shape {
                what: "bond angles",
                expected: theta.len(),
                found: psi.len(),
            });
        }
        Ok(Self {
            theta,
            psi: Some(psi),
        })
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn psi(&self) -> Option<&[f64]> {
        self.psi.as_deref()
    }

    /// Number of atoms `m` in the chain these angles describe.
    pub fn atom_count(&self) -> usize {
        self.theta.len() + 2
    }

    /// Ambient dimension of the chain (2 or 3).
    pub fn dimension(&self) -> usize {
        if self.psi.is_some() {
            3
        } else {
            2
        }
    }

    pub fn wrapped(&self) -> Self {
        Self {
            theta: self.theta.iter().copied().map(wrap_angle).collect(),
            psi: self
                .psi
                .as_ref()
                .map(|p| p.iter().copied().map(wrap_angle).collect()),
        }
    }

    pub fn is_wrapped(&self) -> bool {
        let in_range = |a: &f64| (-PI..=PI).contains(a);
        self.theta.iter().all(in_range) && self.psi.iter().flatten().all(in_range)
    }
}

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w - 2.0 * PI
    } else {
        w
    }
}

/// Signed difference `a - b` reduced to `(-π, π]`.
pub fn angle_difference(a: f64, b: f64) -> f64 {
    wrap_angle(a - b)
}

/// Position and orientation of a chain at its reference atom.
#[derive(Debug, Clone, PartialEq)]
pub struct Pose<const D: usize> {
    pub position: Point<D>,
    pub frame: Frame<D>,
    /// 1-based reference atom `j0`.
    pub reference_index: usize,
}

impl<const D: usize> Pose<D>
where
    Space<D>: FrenetSpace<D>,
{
    pub fn new(position: Point<D>, frame: Frame<D>, reference_index: usize) -> Result<Self> {
        check_rotation(&frame)?;
        if reference_index == 0 {
            return Err(Error::ReferenceIndex {
                index: 0,
                max: usize::MAX,
            });
        }
        Ok(Self {
            position,
            frame,
            reference_index,
        })
    }

    pub fn identity(reference_index: usize) -> Self {
        Self {
            position: Point::zeros(),
            frame: Frame::identity(),
            reference_index,
        }
    }
}

pub(crate) fn check_rotation<const D: usize>(frame: &Frame<D>) -> Result<()>
where
    Space<D>: FrenetSpace<D>,
{
    let orth = (frame.transpose() * frame - Frame::<D>::identity()).amax();
    let det = Space::<D>::determinant(frame);
    if orth > ROTATION_TOL || (det - 1.0).abs() > ROTATION_TOL {
        return Err(Error::NotARotation(format!(
            "|FᵀF - I|max = {orth:e}, det = {det}"
        )));
    }
    Ok(())
}

/// Ordered atom positions with a nominal inter-atom spacing.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteCurve<const D: usize> {
    pub points: Vec<Point<D>>,
    pub delta: f64,
}

impl<const D: usize> DiscreteCurve<D> {
    pub fn new(points: Vec<Point<D>>, delta: f64) -> Result<Self> {
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::invalid("spacing", format!("{delta} is not positive")));
        }
        Ok(Self { points, delta })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn spacings(&self) -> impl Iterator<Item = f64> + '_ {
        self.points.windows(2).map(|w| (w[1] - w[0]).norm())
    }

    /// Fails on the first segment whose length differs from `delta` by more
    /// than `rel_tol · delta`.
    pub fn check_spacing(&self, rel_tol: f64) -> Result<()> {
        for (index, distance) in self.spacings().enumerate() {
            if (distance - self.delta).abs() > rel_tol * self.delta {
                return Err(Error::NotAChain {
                    index: index + 1,
                    distance,
                    delta: self.delta,
                    tolerance: rel_tol,
                });
            }
        }
        Ok(())
    }

    /// Rigid motion `z ↦ Q z + v` applied to every atom.
    pub fn transformed(&self, rotation: &Frame<D>, translation: &Point<D>) -> Self {
        Self {
            points: self.points.iter().map(|p| rotation * p + translation).collect(),
            delta: self.delta,
        }
    }
}

/// Frames and atom positions produced by the recursion.
#[derive(Debug, Clone)]
pub(crate) struct ChainState<const D: usize> {
    pub frames: Vec<Frame<D>>,
    pub points: Vec<Point<D>>,
}

pub(crate) fn tangent<const D: usize>(frame: &Frame<D>) -> Point<D> {
    frame.row(D - 1).transpose()
}

fn check_angles<const D: usize>(angles: &ChainAngles, j0: usize) -> Result<()>
where
    Space<D>: FrenetSpace<D>,
{
    let expected_dim = if Space::<D>::HAS_BOND_ANGLES { 3 } else { 2 };
    if angles.dimension() != expected_dim {
        return Err(Error::Shape {
            what: "angle channels",
            expected: expected_dim - 1,
            found: angles.dimension() - 1,
        });
    }
    let m = angles.atom_count();
    if j0 == 0 || j0 > m - 1 {
        return Err(Error::ReferenceIndex {
            index: j0,
            max: m - 1,
        });
    }
    Ok(())
}

/// Runs the recursion from the reference atom in both directions. Angle
/// slices must already be validated; `psi` is ignored for planar chains.
pub(crate) fn propagate<const D: usize>(
    theta: &[f64],
    psi: Option<&[f64]>,
    position: &Point<D>,
    frame: &Frame<D>,
    j0: usize,
    delta: f64,
) -> ChainState<D>
where
    Space<D>: FrenetSpace<D>,
{
    let m = theta.len() + 2;
    let anchor = j0 - 1;
    let bond = |k: usize| psi.map_or(0.0, |p| p[k]);

    let mut frames = vec![Frame::<D>::zeros(); m - 1];
    frames[anchor] = *frame;
    for k in anchor..m - 2 {
        frames[k + 1] = Space::<D>::step(theta[k], bond(k)) * frames[k];
    }
    for k in (0..anchor).rev() {
        frames[k] = Space::<D>::step(theta[k], bond(k)).transpose() * frames[k + 1];
    }

    let mut points = vec![Point::<D>::zeros(); m];
    points[anchor] = *position;
    for k in anchor..m - 1 {
        points[k + 1] = points[k] + tangent(&frames[k]) * delta;
    }
    for k in (0..anchor).rev() {
        points[k] = points[k + 1] - tangent(&frames[k]) * delta;
    }
    ChainState { frames, points }
}

/// Builds the chain described by `angles`, placed at `pose`.
pub fn synthesize_curve<const D: usize>(
    angles: &ChainAngles,
    pose: &Pose<D>,
    delta: f64,
) -> Result<DiscreteCurve<D>>
where
    Space<D>: FrenetSpace<D>,
{
    check_angles::<D>(angles, pose.reference_index)?;
    let state = propagate(
        angles.theta(),
        angles.psi(),
        &pose.position,
        &pose.frame,
        pose.reference_index,
        delta,
    );
    DiscreteCurve::new(state.points, delta)
}

/// Recovers angles and the pose at atom `j0` from a chain whose spacings
/// match `curve.delta` within [`CHAIN_SPACING_TOL`].
pub fn extract_angles<const D: usize>(
    curve: &DiscreteCurve<D>,
    j0: usize,
) -> Result<(ChainAngles, Pose<D>)>
where
    Space<D>: FrenetSpace<D>,
{
    extract_angles_with_tolerance(curve, j0, CHAIN_SPACING_TOL)
}

/// [`extract_angles`] with a caller-chosen spacing tolerance, for measured
/// trajectories whose bond lengths fluctuate. Tangents are normalized by the
/// actual segment lengths, so resynthesizing with a constant spacing yields
/// the closest equally spaced chain with the same angles.
pub fn extract_angles_with_tolerance<const D: usize>(
    curve: &DiscreteCurve<D>,
    j0: usize,
    rel_tol: f64,
) -> Result<(ChainAngles, Pose<D>)>
where
    Space<D>: FrenetSpace<D>,
{
    let m = curve.len();
    if m < 3 {
        return Err(Error::ChainTooShort(m));
    }
    if j0 == 0 || j0 > m - 1 {
        return Err(Error::ReferenceIndex {
            index: j0,
            max: m - 1,
        });
    }
    curve.check_spacing(rel_tol)?;

    let tangents: Vec<Point<D>> = curve
        .points
        .windows(2)
        .map(|w| (w[1] - w[0]).normalize())
        .collect();
    let frames = Space::<D>::frames_from_tangents(&tangents);

    let mut theta = Vec::with_capacity(m - 2);
    let mut psi = Vec::with_capacity(m - 2);
    for k in 0..m - 2 {
        let transition = frames[k + 1] * frames[k].transpose();
        let (t, p) = Space::<D>::step_angles(&transition);
        theta.push(t);
        psi.push(p);
    }
    let angles = if Space::<D>::HAS_BOND_ANGLES {
        ChainAngles::spatial(theta, psi)?
    } else {
        ChainAngles::planar(theta)
    };
    let pose = Pose {
        position: curve.points[j0 - 1],
        frame: frames[j0 - 1],
        reference_index: j0,
    };
    Ok((angles, pose))
}

/// Maps spatial angles to the representative that extraction returns for the
/// same chain: `θ_1 = 0` and bond angles in `[0, π]`. The chain built from
/// the result at the same reference position coincides with the input chain
/// whenever `j0 > 1`; for `j0 = 1` the pose frame rotates about the first
/// tangent instead, which [`canonical_frame`] accounts for.
pub fn canonicalize(angles: &ChainAngles) -> ChainAngles {
    let Some(psi) = angles.psi() else {
        return angles.wrapped();
    };
    // Flipping the binormal of frame k+1 maps (θ_k, ψ_k) → (θ_k + π, -ψ_k)
    // and θ_{k+1} → θ_{k+1} + π; sweep left to right.
    let mut theta = angles.theta().to_vec();
    let mut psi = psi.to_vec();
    for k in 0..theta.len() {
        if wrap_angle(psi[k]) < 0.0 {
            psi[k] = -psi[k];
            theta[k] += PI;
            if k + 1 < theta.len() {
                theta[k + 1] += PI;
            }
        }
    }
    if let Some(first) = theta.first_mut() {
        *first = 0.0;
    }
    ChainAngles {
        theta: theta.into_iter().map(wrap_angle).collect(),
        psi: Some(psi.into_iter().map(wrap_angle).collect()),
    }
}

/// Pose frame matching [`canonicalize`] for a chain anchored at `j0 = 1`:
/// rotates `F̂` about its tangent by the first torsion angle (after the
/// bond-angle sign flip of the first step, if any).
pub fn canonical_frame(angles: &ChainAngles, frame: &Frame<3>) -> Frame<3> {
    let Some(psi) = angles.psi() else {
        return *frame;
    };
    let Some(&theta0) = angles.theta().first() else {
        return *frame;
    };
    let theta0 = if wrap_angle(psi[0]) < 0.0 {
        theta0 + PI
    } else {
        theta0
    };
    // R(θ, 0) rotates (n, b) about t; F_2 = R(θ_1, ψ_1)F_1 = R(0, ψ_1)R(θ_1, 0)F_1
    rotation_matrix_3d(theta0, 0.0) * frame
}
