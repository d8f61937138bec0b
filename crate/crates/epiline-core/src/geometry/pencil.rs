//! The 1-D projective map between two epipolar pencils.
//!
//! An epipolar pencil is the one-parameter family of lines through an
//! epipole. Three corresponding line pairs determine the map exactly: the
//! first two pairs serve as pencil bases, and the third pair fixes the one
//! remaining degree of freedom. In basis-aligned coordinates the map is
//! `diag(1, mu)`. Together with the epipoles this is equivalent to a
//! fundamental matrix.

use nalgebra::{Matrix2, Matrix3, SMatrix, Vector2, Vector3};

use super::fundamental::skew;
use super::{FundamentalMatrix, GeometryError, HomLine2, HomPoint2, ImageRect, INCIDENCE_TOL};

/// Condition-number bound for a pencil basis.
const BASIS_CONDITION_BOUND: f64 = 1e8;

/// How far (pixels) the third pair may sit from the proposed epipoles before
/// the input is rejected as inconsistent.
const THIRD_PAIR_INCIDENCE_TOL_PX: f64 = 5.0;

/// Epipoles plus the 1-D projective map between the two epipolar pencils.
#[derive(Debug, Clone)]
pub struct PencilHomography {
    e: HomPoint2,
    e_prime: HomPoint2,
    basis_a: [HomLine2; 2],
    basis_b: [HomLine2; 2],
    m: Matrix2<f64>,
}

impl PencilHomography {
    pub fn epipole_a(&self) -> &HomPoint2 {
        &self.e
    }

    pub fn epipole_b(&self) -> &HomPoint2 {
        &self.e_prime
    }

    pub fn basis_a(&self) -> &[HomLine2; 2] {
        &self.basis_a
    }

    pub fn basis_b(&self) -> &[HomLine2; 2] {
        &self.basis_b
    }

    pub fn map(&self) -> &Matrix2<f64> {
        &self.m
    }
}

/// Least-squares coefficients `(alpha, beta)` expressing a line in a pencil
/// basis, all three lines unit-normalized. Errors when the basis is
/// near-dependent (condition number above 1e8).
pub fn pencil_coordinates(
    l: &HomLine2,
    basis: &[HomLine2; 2],
) -> Result<(f64, f64), GeometryError> {
    let b1 = basis[0].unit_normalized()?;
    let b2 = basis[1].unit_normalized()?;
    let ln = l.unit_normalized()?;
    let sol = raw_coordinates(ln.coords(), b1.coords(), b2.coords())?;
    Ok((sol[0], sol[1]))
}

/// Similarity transform conditioning image coordinates: translate the image
/// center to the origin and scale so the half-diagonal becomes sqrt(2).
struct Conditioner {
    /// Line transform `T^{-T}` of the point similarity `T`.
    t_inv_t: Matrix3<f64>,
}

impl Conditioner {
    fn for_rect(rect: &ImageRect) -> Self {
        let (cx, cy) = (0.5 * rect.w(), 0.5 * rect.h());
        let s = 2.0 * std::f64::consts::SQRT_2 / rect.diagonal();
        let t_inv_t = Matrix3::new(1.0 / s, 0.0, 0.0, 0.0, 1.0 / s, 0.0, cx, cy, 1.0);
        Self { t_inv_t }
    }

    /// Transformed line, rescaled to unit image direction. The returned scale
    /// factor is strictly positive, so coefficient signs are preserved.
    fn unit_line(&self, l: &Vector3<f64>) -> Result<(Vector3<f64>, f64), GeometryError> {
        let v = self.t_inv_t * l;
        let n = v.x.hypot(v.y);
        if !(n > 0.0) || !n.is_finite() {
            return Err(GeometryError::DegenerateInput(
                "conditioned line has no image direction",
            ));
        }
        Ok((v / n, n))
    }
}

/// Orthogonal-projection coefficients of `l` in the span of `(b1, b2)`,
/// in closed form: with `n = b1 x b2`, the out-of-span component of `l` is
/// parallel to `n` and drops out of the triple products, so
/// `alpha = (l x b2) . n / |n|^2` and `beta = (b1 x l) . n / |n|^2` are the
/// exact least-squares coefficients.
fn raw_coordinates(
    l: &Vector3<f64>,
    b1: &Vector3<f64>,
    b2: &Vector3<f64>,
) -> Result<Vector2<f64>, GeometryError> {
    let n = b1.cross(b2);
    let nn = n.norm_squared();
    // singular values of [b1 b2] from the exact invariants
    // s1^2 s2^2 = |n|^2 and s1^2 + s2^2 = |b1|^2 + |b2|^2
    let q = b1.norm_squared() + b2.norm_squared();
    let disc = (q * q - 4.0 * nn).max(0.0).sqrt();
    let s1_sq = 0.5 * (q + disc);
    if !(nn > 0.0) || s1_sq * s1_sq / nn > BASIS_CONDITION_BOUND * BASIS_CONDITION_BOUND {
        return Err(GeometryError::DegenerateInput("near-dependent pencil basis"));
    }
    let alpha = l.cross(b2).dot(&n) / nn;
    let beta = b1.cross(l).dot(&n) / nn;
    Ok(Vector2::new(alpha, beta))
}

fn check_proportional(lines: &[&HomLine2]) -> Result<(), GeometryError> {
    for i in 0..lines.len() {
        for j in (i + 1)..lines.len() {
            let cross = lines[i].coords().cross(lines[j].coords());
            let scale = lines[i].coords().norm() * lines[j].coords().norm();
            if cross.norm() <= 1e-12 * scale {
                return Err(GeometryError::DegenerateInput(
                    "two lines of the same camera are proportional",
                ));
            }
        }
    }
    Ok(())
}

/// Exact 1-D homography between two epipolar pencils from three corresponding
/// line pairs `(l1, l1'), (l2, l2'), (l3, l3')` and the epipoles `(e, e')`.
///
/// The first two pairs become the pencil bases and must pass through their
/// epipoles essentially exactly; the third pair fixes the remaining degree of
/// freedom and may sit a few pixels off (it is projected onto the pencil).
/// Coordinates are conditioned to the image center and half-diagonal before
/// the coefficient extraction, and the resulting map is expressed back in
/// image pixel units.
pub fn build_pencil_homography(
    pairs: &[(HomLine2, HomLine2); 3],
    e: &HomPoint2,
    e_prime: &HomPoint2,
    rect_a: &ImageRect,
    rect_b: &ImageRect,
) -> Result<PencilHomography, GeometryError> {
    check_proportional(&[&pairs[0].0, &pairs[1].0, &pairs[2].0])?;
    check_proportional(&[&pairs[0].1, &pairs[1].1, &pairs[2].1])?;

    // Basis pairs: exact incidence. The normalized residual |l^ . e^| is
    // scale-free in both arguments.
    for (idx, (line, epi)) in [
        (&pairs[0].0, e),
        (&pairs[1].0, e),
        (&pairs[0].1, e_prime),
        (&pairs[1].1, e_prime),
    ]
    .iter()
    .enumerate()
    {
        let u = line.unit_normalized()?;
        let en = epi.normalized();
        if u.coords().dot(en.coords()).abs() > INCIDENCE_TOL {
            return Err(GeometryError::InconsistentInput(format!(
                "basis line {} does not pass through its epipole (residual {:.3e})",
                idx,
                u.coords().dot(en.coords()).abs()
            )));
        }
    }
    // Third pair: loose pixel-level incidence.
    for (side, (line, epi, width)) in [
        (&pairs[2].0, e, rect_a.w()),
        (&pairs[2].1, e_prime, rect_b.w()),
    ]
    .iter()
    .enumerate()
    {
        let r = super::epipole_incidence_residual(line, epi, *width)?;
        if r > THIRD_PAIR_INCIDENCE_TOL_PX {
            return Err(GeometryError::InconsistentInput(format!(
                "third pair line (camera {}) is {:.2} px from its epipole",
                if side == 0 { "A" } else { "B" },
                r
            )));
        }
    }

    // Pixel-frame unit-normalized bases; these are what the homography stores.
    let b1a = pairs[0].0.unit_normalized()?;
    let b2a = pairs[1].0.unit_normalized()?;
    let b1b = pairs[0].1.unit_normalized()?;
    let b2b = pairs[1].1.unit_normalized()?;
    let l3a = pairs[2].0.unit_normalized()?;
    let l3b = pairs[2].1.unit_normalized()?;

    // Conditioned coefficient extraction. All rescalings are positive, so the
    // conditioned coefficients map back to pixel-frame ones through the pure
    // scale factors t_i (alpha_px ~ alpha_cond / t1, beta_px ~ beta_cond / t2).
    let ca = Conditioner::for_rect(rect_a);
    let cb = Conditioner::for_rect(rect_b);
    let (c1a, t1a) = ca.unit_line(b1a.coords())?;
    let (c2a, t2a) = ca.unit_line(b2a.coords())?;
    let (w3a, _) = ca.unit_line(l3a.coords())?;
    let (c1b, t1b) = cb.unit_line(b1b.coords())?;
    let (c2b, t2b) = cb.unit_line(b2b.coords())?;
    let (w3b, _) = cb.unit_line(l3b.coords())?;

    let ab_a = raw_coordinates(&w3a, &c1a, &c2a)?;
    let ab_b = raw_coordinates(&w3b, &c1b, &c2b)?;
    let (alpha3, beta3) = (ab_a[0], ab_a[1]);
    let (alpha3p, beta3p) = (ab_b[0], ab_b[1]);
    let scale_a = ab_a.norm();
    let scale_b = ab_b.norm();
    if alpha3.abs() <= 1e-9 * scale_a
        || beta3.abs() <= 1e-9 * scale_a
        || alpha3p.abs() <= 1e-9 * scale_b
        || beta3p.abs() <= 1e-9 * scale_b
    {
        return Err(GeometryError::DegenerateInput(
            "third line coincides with a basis line of its pencil",
        ));
    }

    let mu_cond = (beta3p * alpha3) / (alpha3p * beta3);
    let mu = mu_cond * (t1b * t2a) / (t2b * t1a);
    if !mu.is_finite() || mu == 0.0 {
        return Err(GeometryError::DegenerateInput(
            "pencil map is singular",
        ));
    }

    Ok(PencilHomography {
        e: e.normalized(),
        e_prime: e_prime.normalized(),
        basis_a: [b1a, b2a],
        basis_b: [b1b, b2b],
        m: Matrix2::new(1.0, 0.0, 0.0, mu),
    })
}

/// Map a line of camera A to camera B: project onto the pencil of `e`, apply
/// the 1-D map, and rebuild from the B-side basis. The result passes through
/// `e'` by construction.
pub fn apply_pencil_homography(
    h: &PencilHomography,
    l: &HomLine2,
) -> Result<HomLine2, GeometryError> {
    let (alpha, beta) = pencil_coordinates(l, &h.basis_a)?;
    let coeffs = h.m * Vector2::new(alpha, beta);
    let v = h.basis_b[0].coords() * coeffs[0] + h.basis_b[1].coords() * coeffs[1];
    HomLine2::from_vector(v).unit_normalized()
}

/// Fundamental matrix of a pencil homography:
/// `F = L' * m * P * skew(e)` where `skew(e)` sends a point `x` of camera A
/// to its epipolar line `e x x`, `P` extracts pencil coordinates in the
/// A basis, `m` maps them to B pencil coordinates and `L'` rebuilds the line.
pub fn f_from_pencil(h: &PencilHomography) -> Result<FundamentalMatrix, GeometryError> {
    let b = SMatrix::<f64, 3, 2>::from_columns(&[
        *h.basis_a[0].coords(),
        *h.basis_a[1].coords(),
    ]);
    let gram = (b.transpose() * b)
        .try_inverse()
        .ok_or(GeometryError::DegenerateInput("near-dependent pencil basis"))?;
    let p = gram * b.transpose();
    let l_prime = SMatrix::<f64, 3, 2>::from_columns(&[
        *h.basis_b[0].coords(),
        *h.basis_b[1].coords(),
    ]);
    let f = l_prime * h.m * p * skew(h.e.coords());
    FundamentalMatrix::from_matrix(f)
}
