//! Fundamental matrices: construction-time invariants, epipole extraction,
//! the symmetric epipolar distance, and the plain-text serialization format.

use nalgebra::{Matrix3, Vector3};

use super::{point_line_distance, GeometryError, HomLine2, HomPoint2, INCIDENCE_TOL};

/// Rank-2 3x3 matrix relating two views: `x'^T F x = 0` for every
/// corresponding point pair. Stored Frobenius-normalized with a deterministic
/// sign (the entry of largest magnitude is positive).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FundamentalMatrix {
    m: Matrix3<f64>,
}

impl FundamentalMatrix {
    /// Validating constructor: the matrix must be nonzero and numerically
    /// rank 2 (`sigma_3 <= 1e-9 * sigma_1`).
    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self, GeometryError> {
        let f = Self::from_matrix_unchecked(m);
        let sv = f.m.singular_values();
        if !(sv[0] > 0.0) || !sv[0].is_finite() {
            return Err(GeometryError::InvariantViolation(
                "fundamental matrix is zero or non-finite".into(),
            ));
        }
        if sv[2] > INCIDENCE_TOL * sv[0] {
            return Err(GeometryError::InvariantViolation(format!(
                "matrix is numerically rank 3 (sigma_3/sigma_1 = {:.3e})",
                sv[2] / sv[0]
            )));
        }
        if sv[1] <= INCIDENCE_TOL * sv[0] {
            return Err(GeometryError::InvariantViolation(format!(
                "matrix is numerically rank 1 (sigma_2/sigma_1 = {:.3e})",
                sv[1] / sv[0]
            )));
        }
        Ok(f)
    }

    /// Wrap a raw matrix after normalizing scale and sign, without the rank
    /// check. Intended for tests and for callers that validate separately.
    pub fn from_matrix_unchecked(m: Matrix3<f64>) -> Self {
        let norm = m.norm();
        let mut n = if norm > 0.0 { m / norm } else { m };
        let lead = n.iter().cloned().fold(0.0f64, |acc, v| {
            if v.abs() > acc.abs() {
                v
            } else {
                acc
            }
        });
        if lead < 0.0 {
            n = -n;
        }
        Self { m: n }
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.m
    }

    /// Epipolar line in the second image of a point in the first: `l' = F x`.
    pub fn epipolar_line_in_b(&self, x: &HomPoint2) -> HomLine2 {
        HomLine2::from_vector(self.m * x.coords())
    }

    /// Epipolar line in the first image of a point in the second: `l = F^T x'`.
    pub fn epipolar_line_in_a(&self, x_prime: &HomPoint2) -> HomLine2 {
        HomLine2::from_vector(self.m.transpose() * x_prime.coords())
    }

    /// Sign-resolved Frobenius distance between unit-normalized matrices.
    pub fn frobenius_distance(&self, other: &Self) -> f64 {
        let d1 = (self.m - other.m).norm();
        let d2 = (self.m + other.m).norm();
        d1.min(d2)
    }

    /// Plain-text form: 3 rows of 3 whitespace-separated values, 17
    /// significant digits (round-trips `f64` exactly).
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for r in 0..3 {
            for c in 0..3 {
                if c > 0 {
                    out.push(' ');
                }
                out.push_str(&format!("{:.16e}", self.m[(r, c)]));
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, GeometryError> {
        let vals: Vec<f64> = text
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| GeometryError::InvariantViolation(format!("bad number: {e}")))?;
        if vals.len() != 9 {
            return Err(GeometryError::InvariantViolation(format!(
                "expected 9 values, got {}",
                vals.len()
            )));
        }
        Self::from_matrix(Matrix3::from_row_slice(&vals))
    }
}

/// Skew-symmetric matrix of a 3-vector: `skew(e) * x = e x x`.
pub(crate) fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Null vector of the span of three nearly-coplanar vectors: the largest of
/// the pairwise cross products. For an exactly rank-2 matrix this is far more
/// accurate than an iteratively computed singular vector.
fn span_normal(v0: &Vector3<f64>, v1: &Vector3<f64>, v2: &Vector3<f64>) -> Vector3<f64> {
    let candidates = [v0.cross(v1), v0.cross(v2), v1.cross(v2)];
    candidates
        .into_iter()
        .max_by(|a, b| a.norm().partial_cmp(&b.norm()).unwrap())
        .unwrap()
}

/// Right and left null vectors of a rank-2 fundamental matrix: the epipoles
/// `(e, e')` with `F e = 0` and `e'^T F = 0`.
pub fn epipoles_of(f: &FundamentalMatrix) -> Result<(HomPoint2, HomPoint2), GeometryError> {
    let sv = f.matrix().singular_values();
    if sv[2] > INCIDENCE_TOL * sv[0] {
        return Err(GeometryError::InvariantViolation(format!(
            "matrix is numerically rank 3 (sigma_3/sigma_1 = {:.3e})",
            sv[2] / sv[0]
        )));
    }
    if sv[1] <= INCIDENCE_TOL * sv[0] {
        return Err(GeometryError::InvariantViolation(format!(
            "matrix is numerically rank 1 (sigma_2/sigma_1 = {:.3e})",
            sv[1] / sv[0]
        )));
    }
    let m = f.matrix();
    let e = span_normal(
        &m.row(0).transpose(),
        &m.row(1).transpose(),
        &m.row(2).transpose(),
    );
    let e_prime = span_normal(
        &m.column(0).into_owned(),
        &m.column(1).into_owned(),
        &m.column(2).into_owned(),
    );
    Ok((
        HomPoint2::from_vector(e).normalized(),
        HomPoint2::from_vector(e_prime).normalized(),
    ))
}

/// Mean of the two point-to-epipolar-line distances of a correspondence:
/// `1/2 (d(x', F x) + d(x, F^T x'))`, in pixels.
pub fn symmetric_epipolar_distance(
    f: &FundamentalMatrix,
    x: &HomPoint2,
    x_prime: &HomPoint2,
) -> Result<f64, GeometryError> {
    let lb = f.epipolar_line_in_b(x);
    let la = f.epipolar_line_in_a(x_prime);
    let scale = f.matrix().norm();
    if lb.coords().norm() <= 1e-14 * scale * x.coords().norm()
        || la.coords().norm() <= 1e-14 * scale * x_prime.coords().norm()
    {
        return Err(GeometryError::Domain(
            "point maps to the zero vector (point at an epipole)",
        ));
    }
    let d1 = point_line_distance(x_prime, &lb)?;
    let d2 = point_line_distance(x, &la)?;
    Ok(0.5 * (d1 + d2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// A handy exactly-rank-2 matrix: skew(e') * M with invertible M.
    fn sample_f() -> FundamentalMatrix {
        let e_prime = Vector3::new(120.0, -40.0, 1.0);
        let m = Matrix3::new(2.0, 0.3, -1.0, 0.1, 1.5, 4.0, -0.2, 0.7, 3.0);
        FundamentalMatrix::from_matrix(skew(&e_prime) * m).unwrap()
    }

    #[test]
    fn rank3_matrix_is_rejected() {
        let m = Matrix3::new(1.0, 0.2, 0.3, 0.4, 2.0, 0.6, 0.7, 0.8, 3.0);
        assert!(matches!(
            FundamentalMatrix::from_matrix(m),
            Err(GeometryError::InvariantViolation(_))
        ));
        let f = FundamentalMatrix::from_matrix_unchecked(m);
        assert!(epipoles_of(&f).is_err());
    }

    #[test]
    fn epipoles_are_null_vectors() {
        let f = sample_f();
        let (e, ep) = epipoles_of(&f).unwrap();
        assert!((f.matrix() * e.coords()).norm() < 1e-9);
        assert!((f.matrix().transpose() * ep.coords()).norm() < 1e-9);
    }

    #[test]
    fn symmetric_distance_zero_for_exact_correspondences() {
        let f = sample_f();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let x = HomPoint2::from_xy(rng.random_range(0.0..640.0), rng.random_range(0.0..480.0));
            let l = f.epipolar_line_in_b(&x);
            let Ok(u) = l.unit_normalized() else { continue };
            // a point on the epipolar line
            let (a, b, c) = (u.coords().x, u.coords().y, u.coords().z);
            let t: f64 = rng.random_range(-100.0..100.0);
            let xp = HomPoint2::from_xy(-a * c + t * b, -b * c - t * a);
            let d = symmetric_epipolar_distance(&f, &x, &xp).unwrap();
            assert!(d < 1e-9, "exact correspondence must have zero distance");
        }
    }

    #[test]
    fn symmetric_distance_averages_both_sides_of_a_2px_shift() {
        // Rectified stereo pair: x'^T F x = y - y'. Shifting x' by 2 px
        // perpendicular to its epipolar line moves both one-sided distances
        // to exactly 2, so the mean is 2.
        let f = FundamentalMatrix::from_matrix_unchecked(Matrix3::new(
            0.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 1.0, 0.0,
        ));
        let x = HomPoint2::from_xy(100.0, 200.0);
        let xp = HomPoint2::from_xy(340.0, 200.0);
        assert_relative_eq!(
            symmetric_epipolar_distance(&f, &x, &xp).unwrap(),
            0.0,
            epsilon = 1e-12
        );
        let shifted = HomPoint2::from_xy(340.0, 202.0);
        let d1 = point_line_distance(&shifted, &f.epipolar_line_in_b(&x)).unwrap();
        let d2 = point_line_distance(&x, &f.epipolar_line_in_a(&shifted)).unwrap();
        assert_relative_eq!(d1, 2.0, epsilon = 1e-12);
        assert_relative_eq!(
            symmetric_epipolar_distance(&f, &x, &shifted).unwrap(),
            0.5 * (d1 + d2),
            epsilon = 1e-12
        );
    }

    #[test]
    fn symmetric_distance_matches_direct_formula() {
        let f = sample_f();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let x = HomPoint2::from_xy(rng.random_range(0.0..640.0), rng.random_range(0.0..480.0));
            let xp = HomPoint2::from_xy(rng.random_range(0.0..640.0), rng.random_range(0.0..480.0));
            let d = symmetric_epipolar_distance(&f, &x, &xp).unwrap();
            // independent re-implementation
            let fx = f.matrix() * x.coords();
            let ftxp = f.matrix().transpose() * xp.coords();
            let d1 = (fx.dot(xp.coords())).abs() / fx.x.hypot(fx.y);
            let d2 = (ftxp.dot(x.coords())).abs() / ftxp.x.hypot(ftxp.y);
            assert_relative_eq!(d, 0.5 * (d1 + d2), epsilon = 1e-9);
        }
    }

    #[test]
    fn text_round_trip_is_exact() {
        let f = sample_f();
        let g = FundamentalMatrix::from_text(&f.to_text()).unwrap();
        assert_eq!(f.matrix(), g.matrix());
    }

    #[test]
    fn bad_text_is_rejected() {
        assert!(FundamentalMatrix::from_text("1 2 3").is_err());
        assert!(FundamentalMatrix::from_text("a b c d e f g h i").is_err());
    }
}
