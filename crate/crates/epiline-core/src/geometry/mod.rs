//! Homogeneous 2-D primitives and the exact line/rectangle computations the
//! rest of the pipeline is built on: incidence, clipping, the area enclosed
//! between two lines inside an image, epipolar-pencil homographies and
//! fundamental matrices.
//!
//! Conventions used throughout:
//! - pixel `(x, y)`: `x` is the column in `[0, W)`, `y` the row in `[0, H)`,
//!   origin at the top-left, pixel centers at `integer + 0.5`;
//! - a line `(a, b, c)` contains the point `(x, y)` iff `a x + b y + c = 0`;
//! - lines are unit-normalized (`‖(a, b)‖ = 1`, sign fixed by `a > 0`, or
//!   `b > 0` when `a = 0`) before any comparison or distance computation.

mod fundamental;
mod pencil;

pub use fundamental::{epipoles_of, symmetric_epipolar_distance, FundamentalMatrix};
pub use pencil::{
    apply_pencil_homography, build_pencil_homography, f_from_pencil, pencil_coordinates,
    PencilHomography,
};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Relative tolerance below which two homogeneous vectors count as proportional.
pub(crate) const PROPORTIONAL_TOL: f64 = 1e-12;

/// Normalized incidence tolerance for epipole/line and point/line identities.
pub(crate) const INCIDENCE_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("degenerate input: {0}")]
    DegenerateInput(&'static str),
    #[error("inconsistent input: {0}")]
    InconsistentInput(String),
    #[error("domain error: {0}")]
    Domain(&'static str),
    #[error("invariant violation: {0}")]
    InvariantViolation(String),
}

/// Point of the projective plane, pixel units when the third coordinate is 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HomPoint2 {
    h: Vector3<f64>,
}

impl HomPoint2 {
    pub fn new(x: f64, y: f64, w: f64) -> Self {
        Self {
            h: Vector3::new(x, y, w),
        }
    }

    /// Finite image point `(x, y)`.
    pub fn from_xy(x: f64, y: f64) -> Self {
        Self::new(x, y, 1.0)
    }

    pub fn from_vector(h: Vector3<f64>) -> Self {
        Self { h }
    }

    pub fn coords(&self) -> &Vector3<f64> {
        &self.h
    }

    /// True iff the third coordinate is exactly zero (ideal point).
    pub fn is_at_infinity(&self) -> bool {
        self.h.z == 0.0
    }

    /// Dehomogenized pixel coordinates; `None` for ideal points.
    pub fn to_xy(&self) -> Option<(f64, f64)> {
        if self.is_at_infinity() {
            None
        } else {
            Some((self.h.x / self.h.z, self.h.y / self.h.z))
        }
    }

    /// Unit 3-norm representative with a deterministic sign: the last nonzero
    /// coordinate is made positive.
    pub fn normalized(&self) -> Self {
        let n = self.h.norm();
        let mut v = self.h / n;
        let lead = if v.z != 0.0 {
            v.z
        } else if v.y != 0.0 {
            v.y
        } else {
            v.x
        };
        if lead < 0.0 {
            v = -v;
        }
        Self { h: v }
    }
}

/// Line of the projective plane; a point `p` lies on the line iff `l · p = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HomLine2 {
    h: Vector3<f64>,
}

impl HomLine2 {
    pub fn new(a: f64, b: f64, c: f64) -> Self {
        Self {
            h: Vector3::new(a, b, c),
        }
    }

    pub fn from_vector(h: Vector3<f64>) -> Self {
        Self { h }
    }

    pub fn coords(&self) -> &Vector3<f64> {
        &self.h
    }

    /// Signed incidence value `a x + b y + c` at a finite pixel position.
    pub fn eval_xy(&self, x: f64, y: f64) -> f64 {
        self.h.x * x + self.h.y * y + self.h.z
    }

    /// Unit-normalized representative: `‖(a, b)‖ = 1`, sign fixed by `a > 0`
    /// (or `b > 0` when `a = 0`). Fails for the line at infinity.
    pub fn unit_normalized(&self) -> Result<Self, GeometryError> {
        let n = self.h.x.hypot(self.h.y);
        if n == 0.0 || !n.is_finite() {
            return Err(GeometryError::DegenerateInput(
                "line has no image direction (a, b) = (0, 0)",
            ));
        }
        let mut v = self.h / n;
        let flip = if v.x != 0.0 { v.x < 0.0 } else { v.y < 0.0 };
        if flip {
            v = -v;
        }
        Ok(Self { h: v })
    }

    /// Line orientation as `(rho, theta)` with `theta ∈ (-pi/2, pi/2]` and the
    /// point equation `x cos(theta) + y sin(theta) = rho`.
    pub fn rho_theta(&self) -> Result<(f64, f64), GeometryError> {
        let u = self.unit_normalized()?;
        Ok((-u.h.z, u.h.y.atan2(u.h.x)))
    }
}

/// Image rectangle `[0, W] x [0, H]` in continuous pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRect {
    pub width: u32,
    pub height: u32,
}

impl ImageRect {
    pub fn new(width: u32, height: u32) -> Self {
        assert!(width > 0 && height > 0, "image rectangle must be non-empty");
        Self { width, height }
    }

    pub fn w(&self) -> f64 {
        f64::from(self.width)
    }

    pub fn h(&self) -> f64 {
        f64::from(self.height)
    }

    pub fn diagonal(&self) -> f64 {
        self.w().hypot(self.h())
    }

    /// The larger of the two image dimensions.
    pub fn length(&self) -> f64 {
        self.w().max(self.h())
    }

    pub fn corners(&self) -> [(f64, f64); 4] {
        [
            (0.0, 0.0),
            (self.w(), 0.0),
            (self.w(), self.h()),
            (0.0, self.h()),
        ]
    }
}

/// Segment of a line clipped to an image rectangle, endpoints on the boundary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub p: (f64, f64),
    pub q: (f64, f64),
}

impl Segment {
    pub fn midpoint(&self) -> (f64, f64) {
        (0.5 * (self.p.0 + self.q.0), 0.5 * (self.p.1 + self.q.1))
    }

    pub fn length(&self) -> f64 {
        (self.p.0 - self.q.0).hypot(self.p.1 - self.q.1)
    }
}

/// Join of two points. Errors when the points are proportional.
pub fn line_through(p: &HomPoint2, q: &HomPoint2) -> Result<HomLine2, GeometryError> {
    let cross = p.coords().cross(q.coords());
    if cross.norm() <= PROPORTIONAL_TOL * p.coords().norm() * q.coords().norm() {
        return Err(GeometryError::DegenerateInput("points are proportional"));
    }
    Ok(HomLine2::from_vector(cross))
}

/// Meet of two lines. Parallel but distinct lines meet at an ideal point;
/// proportional lines are an error.
pub fn intersect(l1: &HomLine2, l2: &HomLine2) -> Result<HomPoint2, GeometryError> {
    let cross = l1.coords().cross(l2.coords());
    if cross.norm() <= PROPORTIONAL_TOL * l1.coords().norm() * l2.coords().norm() {
        return Err(GeometryError::DegenerateInput("lines are proportional"));
    }
    Ok(HomPoint2::from_vector(cross))
}

/// Euclidean distance in pixels from a finite point to a line.
pub fn point_line_distance(p: &HomPoint2, l: &HomLine2) -> Result<f64, GeometryError> {
    if p.is_at_infinity() {
        return Err(GeometryError::Domain(
            "point at infinity has no distance to a line",
        ));
    }
    let n = l.coords().x.hypot(l.coords().y);
    if n == 0.0 {
        return Err(GeometryError::Domain("line at infinity"));
    }
    Ok((l.coords().dot(p.coords())).abs() / (n * p.coords().z.abs()))
}

/// Clip a line to the rectangle. Returns `None` when the line misses the
/// rectangle or only grazes a corner. Endpoints are ordered lexicographically
/// by `(x, y)` and lie exactly on the binding boundary edge.
pub fn clip_line_to_rect(l: &HomLine2, rect: &ImageRect) -> Option<Segment> {
    let (a, b, c) = (l.coords().x, l.coords().y, l.coords().z);
    let n2 = a * a + b * b;
    if n2 == 0.0 || !n2.is_finite() {
        return None;
    }
    // Foot of the perpendicular from the rectangle center; unit direction.
    let (cx, cy) = (0.5 * rect.w(), 0.5 * rect.h());
    let f = (a * cx + b * cy + c) / n2;
    let (px, py) = (cx - a * f, cy - b * f);
    let inv = n2.sqrt().recip();
    let (dx, dy) = (b * inv, -a * inv);

    // Liang-Barsky on the infinite line: intersect the parameter intervals
    // imposed by 0 <= x <= W and 0 <= y <= H. Track which wall binds each end
    // so the endpoint can be snapped exactly onto it.
    let mut t_lo = f64::NEG_INFINITY;
    let mut t_hi = f64::INFINITY;
    // (axis, boundary value) for the binding constraint at each end.
    let mut lo_wall: Option<(usize, f64)> = None;
    let mut hi_wall: Option<(usize, f64)> = None;
    for (axis, p0, d, max) in [(0usize, px, dx, rect.w()), (1usize, py, dy, rect.h())] {
        if d.abs() < 1e-15 {
            if p0 < 0.0 || p0 > max {
                return None;
            }
            continue;
        }
        let (mut t0, mut t1) = ((0.0 - p0) / d, (max - p0) / d);
        let (mut w0, mut w1) = (0.0, max);
        if t0 > t1 {
            std::mem::swap(&mut t0, &mut t1);
            std::mem::swap(&mut w0, &mut w1);
        }
        if t0 > t_lo {
            t_lo = t0;
            lo_wall = Some((axis, w0));
        }
        if t1 < t_hi {
            t_hi = t1;
            hi_wall = Some((axis, w1));
        }
    }
    if !(t_lo < t_hi) || !t_lo.is_finite() || !t_hi.is_finite() {
        return None;
    }

    let endpoint = |t: f64, wall: Option<(usize, f64)>| {
        let mut x = px + t * dx;
        let mut y = py + t * dy;
        match wall {
            Some((0, w)) => x = w,
            Some((1, w)) => y = w,
            _ => {}
        }
        (x.clamp(0.0, rect.w()), y.clamp(0.0, rect.h()))
    };
    let e0 = endpoint(t_lo, lo_wall);
    let e1 = endpoint(t_hi, hi_wall);
    let (p, q) = if (e0.0, e0.1) <= (e1.0, e1.1) {
        (e0, e1)
    } else {
        (e1, e0)
    };
    Some(Segment { p, q })
}

/// Orient two unit-normalized lines so their normals agree (non-negative dot
/// product) and return the area of the region of the rectangle where their
/// signed incidence values disagree in sign. Symmetric, invariant to
/// coefficient rescaling, zero iff the lines coincide inside the rectangle.
pub fn area_between_lines(l1: &HomLine2, l2: &HomLine2, rect: &ImageRect) -> f64 {
    let (u1, u2) = match (l1.unit_normalized(), l2.unit_normalized()) {
        (Ok(u1), Ok(u2)) => (u1, u2),
        // A line without image direction has constant sign; fall back to the
        // raw coefficients and the orientation that minimizes the area.
        _ => {
            let a = disagreement_area(l1, l2, rect);
            let neg = HomLine2::from_vector(-l2.coords());
            return a.min(disagreement_area(l1, &neg, rect));
        }
    };
    let dot = u1.coords().x * u2.coords().x + u1.coords().y * u2.coords().y;
    if dot > 0.0 {
        disagreement_area(&u1, &u2, rect)
    } else if dot < 0.0 {
        let neg = HomLine2::from_vector(-u2.coords());
        disagreement_area(&u1, &neg, rect)
    } else {
        let neg = HomLine2::from_vector(-u2.coords());
        disagreement_area(&u1, &u2, rect).min(disagreement_area(&u1, &neg, rect))
    }
}

/// Area of `{p in rect : sign(l1·p) != sign(l2·p)}` for the given (already
/// oriented) coefficient vectors, by exact convex polygon clipping.
fn disagreement_area(l1: &HomLine2, l2: &HomLine2, rect: &ImageRect) -> f64 {
    let poly: Vec<(f64, f64)> = rect.corners().to_vec();
    let piece = |s1: f64, s2: f64| {
        let c1 = clip_polygon_halfplane(&poly, l1, s1);
        let c2 = clip_polygon_halfplane(&c1, l2, s2);
        polygon_area(&c2)
    };
    piece(1.0, -1.0) + piece(-1.0, 1.0)
}

/// Sutherland-Hodgman clip of a convex polygon against `sign * (l · p) >= 0`.
fn clip_polygon_halfplane(poly: &[(f64, f64)], l: &HomLine2, sign: f64) -> Vec<(f64, f64)> {
    if poly.is_empty() {
        return Vec::new();
    }
    let f = |p: &(f64, f64)| sign * l.eval_xy(p.0, p.1);
    let mut out = Vec::with_capacity(poly.len() + 2);
    for i in 0..poly.len() {
        let cur = poly[i];
        let nxt = poly[(i + 1) % poly.len()];
        let (fc, fx) = (f(&cur), f(&nxt));
        if fc >= 0.0 {
            out.push(cur);
        }
        if (fc > 0.0 && fx < 0.0) || (fc < 0.0 && fx > 0.0) {
            let t = fc / (fc - fx);
            out.push((cur.0 + t * (nxt.0 - cur.0), cur.1 + t * (nxt.1 - cur.1)));
        }
    }
    out
}

/// Shoelace area of a simple polygon.
fn polygon_area(poly: &[(f64, f64)]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    let mut twice = 0.0;
    for i in 0..poly.len() {
        let (x0, y0) = poly[i];
        let (x1, y1) = poly[(i + 1) % poly.len()];
        twice += x0 * y1 - x1 * y0;
    }
    0.5 * twice.abs()
}

/// Undirected angle between the directions of two lines, in `[0, pi/2]`.
pub fn angle_between_lines(l1: &HomLine2, l2: &HomLine2) -> Result<f64, GeometryError> {
    let u1 = l1.unit_normalized()?;
    let u2 = l2.unit_normalized()?;
    let dot = (u1.coords().x * u2.coords().x + u1.coords().y * u2.coords().y).abs();
    Ok(dot.min(1.0).acos())
}

/// Incidence residual of a line against an epipole, in pixel units.
///
/// Finite epipoles use the point-to-line distance. For an ideal epipole the
/// point-to-line distance is undefined, so the residual is the angular
/// deviation (radians) between the line direction and the ideal direction,
/// scaled by the image width.
pub fn epipole_incidence_residual(
    l: &HomLine2,
    e: &HomPoint2,
    image_width: f64,
) -> Result<f64, GeometryError> {
    if e.is_at_infinity() {
        let u = l.unit_normalized()?;
        let dn = e.coords().x.hypot(e.coords().y);
        if dn == 0.0 {
            return Err(GeometryError::DegenerateInput("zero epipole"));
        }
        let s = (u.coords().x * e.coords().x + u.coords().y * e.coords().y).abs() / dn;
        Ok(s.min(1.0).asin() * image_width)
    } else {
        point_line_distance(e, l)
    }
}
