//! Synthetic multi-camera silhouette scenes with exact ground truth.
//!
//! Cubes fly inside a world box watched by pinhole cameras on a ring. Each
//! frame renders the union of the cubes' projected silhouettes (the convex
//! hull of the projected corners, clipped against the near plane) into a
//! binary mask. Because cameras and geometry are exact, the fundamental
//! matrix of every camera pair and arbitrarily many exact point
//! correspondences are available for verification.
//!
//! Three scenario kinds exercise the pipeline:
//! - `Generic`: cubes bounce freely inside the world box;
//! - `StraightPath`: most cubes travel along one shared 3-D line that extends
//!   well beyond the viewing volume, so they periodically leave the view (the
//!   "traffic" regime that corrupts barcode matching);
//! - `EpipolarPlaneDegenerate`: the shared line additionally lies inside an
//!   epipolar plane of camera pair (0, 1), the configuration in which a
//!   unique fundamental matrix cannot be recovered.

use nalgebra::{Matrix3, SMatrix, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{FundamentalMatrix, GeometryError, HomPoint2, ImageRect};
use crate::mask_io::{BitMask, SilhouetteVideo};

/// Depth of the near clipping plane, world units.
const NEAR_PLANE: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum SimulatorError {
    #[error("config error: {0}")]
    Config(String),
    #[error("degenerate rig: {0}")]
    DegenerateRig(&'static str),
    #[error("domain error: {0}")]
    Domain(&'static str),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Pinhole camera: upper-triangular intrinsics, orthonormal rotation with
/// determinant +1, world-space center.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    intrinsics: Matrix3<f64>,
    rotation: Matrix3<f64>,
    center: Vector3<f64>,
    image: ImageRect,
}

impl CameraModel {
    pub fn new(
        intrinsics: Matrix3<f64>,
        rotation: Matrix3<f64>,
        center: Vector3<f64>,
        image: ImageRect,
    ) -> Result<Self, SimulatorError> {
        let ortho = (rotation.transpose() * rotation - Matrix3::identity()).norm();
        if ortho > 1e-12 {
            return Err(SimulatorError::Config(format!(
                "rotation is not orthonormal (|R^T R - I| = {ortho:.3e})"
            )));
        }
        if (rotation.determinant() - 1.0).abs() > 1e-9 {
            return Err(SimulatorError::Config("rotation must have determinant +1".into()));
        }
        if !(intrinsics[(0, 0)] > 0.0 && intrinsics[(1, 1)] > 0.0) {
            return Err(SimulatorError::Config("focal lengths must be positive".into()));
        }
        for (r, c) in [(1, 0), (2, 0), (2, 1)] {
            if intrinsics[(r, c)] != 0.0 {
                return Err(SimulatorError::Config(
                    "intrinsics must be upper-triangular".into(),
                ));
            }
        }
        Ok(Self {
            intrinsics,
            rotation,
            center,
            image,
        })
    }

    /// Camera at `center` aimed at `target` with world-up `(0, 1, 0)`,
    /// square pixels, principal point at the image center.
    pub fn look_at(
        center: Vector3<f64>,
        target: Vector3<f64>,
        focal_px: f64,
        image: ImageRect,
    ) -> Result<Self, SimulatorError> {
        let forward = target - center;
        if forward.norm() < 1e-12 {
            return Err(SimulatorError::Config("camera target equals center".into()));
        }
        let forward = forward.normalize();
        let up = Vector3::new(0.0, 1.0, 0.0);
        let right = forward.cross(&up);
        if right.norm() < 1e-9 {
            return Err(SimulatorError::Config(
                "camera looks straight up or down; pick another target".into(),
            ));
        }
        let right = right.normalize();
        let down = forward.cross(&right);
        let rotation = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let k = Matrix3::new(
            focal_px,
            0.0,
            0.5 * image.w(),
            0.0,
            focal_px,
            0.5 * image.h(),
            0.0,
            0.0,
            1.0,
        );
        Self::new(k, rotation, center, image)
    }

    pub fn intrinsics(&self) -> &Matrix3<f64> {
        &self.intrinsics
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn center(&self) -> &Vector3<f64> {
        &self.center
    }

    pub fn image(&self) -> &ImageRect {
        &self.image
    }

    /// 3x4 projection matrix `K R [I | -C]`.
    pub fn projection_matrix(&self) -> SMatrix<f64, 3, 4> {
        let kr = self.intrinsics * self.rotation;
        let t = -kr * self.center;
        let mut p = SMatrix::<f64, 3, 4>::zeros();
        p.fixed_view_mut::<3, 3>(0, 0).copy_from(&kr);
        p.fixed_view_mut::<3, 1>(0, 3).copy_from(&t);
        p
    }

    /// Depth of a world point along the optical axis.
    pub fn depth(&self, x_world: &Vector3<f64>) -> f64 {
        (self.rotation * (x_world - self.center)).z
    }

    /// True if the point projects strictly inside the image with positive depth.
    pub fn sees(&self, x_world: &Vector3<f64>) -> bool {
        if self.depth(x_world) <= NEAR_PLANE {
            return false;
        }
        match project(self, x_world) {
            Ok(p) => match p.to_xy() {
                Some((x, y)) => {
                    x >= 0.0 && x <= self.image.w() && y >= 0.0 && y <= self.image.h()
                }
                None => false,
            },
            Err(_) => false,
        }
    }
}

/// Pinhole projection `K R (x - C)` as a homogeneous image point.
pub fn project(cam: &CameraModel, x_world: &Vector3<f64>) -> Result<HomPoint2, SimulatorError> {
    if (x_world - cam.center).norm() < 1e-12 {
        return Err(SimulatorError::Domain("point at the camera center"));
    }
    Ok(HomPoint2::from_vector(
        cam.intrinsics * (cam.rotation * (x_world - cam.center)),
    ))
}

/// Fundamental matrix of a camera pair from the projection matrices:
/// `F = [e']_x P' P^+` with `e'` the image of the first camera's center in
/// the second camera.
pub fn ground_truth_f(
    cam_a: &CameraModel,
    cam_b: &CameraModel,
) -> Result<FundamentalMatrix, SimulatorError> {
    if (cam_a.center - cam_b.center).norm() < 1e-9 {
        return Err(SimulatorError::DegenerateRig("coincident camera centers"));
    }
    let e_prime = project(cam_b, &cam_a.center)?;
    let p_a = cam_a.projection_matrix();
    let p_b = cam_b.projection_matrix();
    let p_a_pinv = p_a
        .pseudo_inverse(1e-12)
        .map_err(|_| SimulatorError::DegenerateRig("projection matrix pseudo-inverse failed"))?;
    let ex = {
        let v = e_prime.coords();
        Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
    };
    let f = ex * (p_b * p_a_pinv);
    Ok(FundamentalMatrix::from_matrix(f)?)
}

/// Axis-aligned world box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorldBounds {
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
}

impl WorldBounds {
    pub fn centered(half_extent: f64) -> Self {
        Self {
            min: Vector3::from_element(-half_extent),
            max: Vector3::from_element(half_extent),
        }
    }

    pub fn center(&self) -> Vector3<f64> {
        0.5 * (self.min + self.max)
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Vector3<f64> {
        Vector3::new(
            rng.random_range(self.min.x..self.max.x),
            rng.random_range(self.min.y..self.max.y),
            rng.random_range(self.min.z..self.max.z),
        )
    }
}

/// Triangle-wave fold of `x` into `[lo, hi]` (reflection at the walls).
fn fold(x: f64, lo: f64, hi: f64) -> f64 {
    let span = hi - lo;
    if span <= 0.0 {
        return lo;
    }
    let u = (x - lo).rem_euclid(2.0 * span);
    if u <= span {
        lo + u
    } else {
        lo + 2.0 * span - u
    }
}

/// Piecewise-linear cube motion: free bouncing inside the world box, or
/// 1-D bouncing along a fixed segment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum Trajectory {
    FreeBounce {
        start: Vector3<f64>,
        velocity: Vector3<f64>,
    },
    SegmentBounce {
        origin: Vector3<f64>,
        dir: Vector3<f64>,
        length: f64,
        s0: f64,
        speed: f64,
    },
}

impl Trajectory {
    pub fn position(&self, frame: usize, bounds: &WorldBounds) -> Vector3<f64> {
        let t = frame as f64;
        match self {
            Trajectory::FreeBounce { start, velocity } => Vector3::new(
                fold(start.x + velocity.x * t, bounds.min.x, bounds.max.x),
                fold(start.y + velocity.y * t, bounds.min.y, bounds.max.y),
                fold(start.z + velocity.z * t, bounds.min.z, bounds.max.z),
            ),
            Trajectory::SegmentBounce {
                origin,
                dir,
                length,
                s0,
                speed,
            } => origin + dir * fold(s0 + speed * t, 0.0, *length),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Cube {
    pub half_extent: f64,
    pub orientation: Matrix3<f64>,
    pub trajectory: Trajectory,
}

impl Cube {
    pub fn corners(&self, center: &Vector3<f64>) -> [Vector3<f64>; 8] {
        let h = self.half_extent;
        let mut out = [Vector3::zeros(); 8];
        for (i, corner) in out.iter_mut().enumerate() {
            let s = Vector3::new(
                if i & 1 == 0 { -h } else { h },
                if i & 2 == 0 { -h } else { h },
                if i & 4 == 0 { -h } else { h },
            );
            *corner = center + self.orientation * s;
        }
        out
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CubeScene {
    pub cubes: Vec<Cube>,
    pub num_frames: usize,
    pub bounds: WorldBounds,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    Generic,
    StraightPath,
    EpipolarPlaneDegenerate,
}

/// Camera placement: an inward-looking ring, or explicit camera models.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CameraSetup {
    Ring {
        count: usize,
        radius: f64,
        height: f64,
        focal_px: f64,
        image_width: u32,
        image_height: u32,
    },
    Explicit(Vec<CameraModel>),
}

impl Default for CameraSetup {
    fn default() -> Self {
        CameraSetup::Ring {
            count: 2,
            radius: 12.0,
            height: 2.0,
            focal_px: 500.0,
            image_width: 640,
            image_height: 480,
        }
    }
}

fn default_num_cubes() -> usize {
    8
}
fn default_half_extent_range() -> (f64, f64) {
    (0.35, 0.8)
}
fn default_path_half_extent_range() -> (f64, f64) {
    (0.1, 0.18)
}
fn default_speed_range() -> (f64, f64) {
    (0.04, 0.16)
}
fn default_num_frames() -> usize {
    800
}
fn default_world_half_extent() -> f64 {
    4.0
}
fn default_path_excursion_factor() -> f64 {
    5.0
}

/// Full description of a synthetic run; `simulate` is deterministic in it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub kind: ScenarioKind,
    #[serde(default = "default_num_cubes")]
    pub num_cubes: usize,
    #[serde(default = "default_half_extent_range")]
    pub half_extent_range: (f64, f64),
    /// Size range for cubes placed on the shared straight path; kept small so
    /// the traffic band stays narrow.
    #[serde(default = "default_path_half_extent_range")]
    pub path_half_extent_range: (f64, f64),
    #[serde(default = "default_speed_range")]
    pub speed_range: (f64, f64),
    /// The shared path extends this many world half-extents on each side of
    /// the center, so path cubes periodically leave the common view.
    #[serde(default = "default_path_excursion_factor")]
    pub path_excursion_factor: f64,
    /// Direction of the shared straight path. `None` samples a direction
    /// transverse to all cameras. Ignored by the epipolar-plane scenario,
    /// which derives its direction from the camera pair.
    #[serde(default)]
    pub path_direction: Option<Vector3<f64>>,
    #[serde(default = "default_num_frames")]
    pub num_frames: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub cameras: CameraSetup,
    #[serde(default = "default_world_half_extent")]
    pub world_half_extent: f64,
    /// Per-pixel i.i.d. flip probability, a stand-in for segmentation noise.
    #[serde(default)]
    pub noise_flip_prob: f64,
}

impl ScenarioConfig {
    pub fn generic(seed: u64) -> Self {
        Self {
            kind: ScenarioKind::Generic,
            num_cubes: default_num_cubes(),
            half_extent_range: default_half_extent_range(),
            path_half_extent_range: default_path_half_extent_range(),
            speed_range: default_speed_range(),
            path_excursion_factor: default_path_excursion_factor(),
            path_direction: None,
            num_frames: default_num_frames(),
            seed,
            cameras: CameraSetup::default(),
            world_half_extent: default_world_half_extent(),
            noise_flip_prob: 0.0,
        }
    }

    /// Traffic preset: most cubes ride one shared 3-D line. The free cubes
    /// are kept small and fast so their dwell heat stays far below the
    /// traffic band, and the path excursion is short enough that the band
    /// dominates the heat map while along-path lines remain informative.
    pub fn straight_path(seed: u64) -> Self {
        Self {
            kind: ScenarioKind::StraightPath,
            half_extent_range: (0.3, 0.5),
            speed_range: (0.08, 0.2),
            path_excursion_factor: 3.5,
            ..Self::generic(seed)
        }
    }

    /// The failure-mode preset: sparse traffic confined to a single line in
    /// the epipolar plane of camera pair (0, 1). With only a couple of
    /// objects, lines crossing the path see too few events to stay
    /// informative, so the candidate set collapses onto the one epipolar
    /// line pair and no unique fundamental matrix exists.
    pub fn epipolar_plane_degenerate(seed: u64) -> Self {
        Self {
            kind: ScenarioKind::EpipolarPlaneDegenerate,
            num_cubes: 2,
            ..Self::generic(seed)
        }
    }
}

/// Everything a simulation run produces.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub cameras: Vec<CameraModel>,
    pub videos: Vec<SilhouetteVideo>,
    /// Ground-truth fundamental matrix for every camera pair `(i, j)`, `i < j`.
    pub f_truth: Vec<((usize, usize), FundamentalMatrix)>,
    pub scene: CubeScene,
    pub config: ScenarioConfig,
}

impl Simulation {
    pub fn f_for_pair(&self, i: usize, j: usize) -> Option<&FundamentalMatrix> {
        self.f_truth
            .iter()
            .find(|(p, _)| *p == (i, j))
            .map(|(_, f)| f)
    }
}

fn build_cameras(setup: &CameraSetup) -> Result<Vec<CameraModel>, SimulatorError> {
    match setup {
        CameraSetup::Ring {
            count,
            radius,
            height,
            focal_px,
            image_width,
            image_height,
        } => {
            if *count < 2 {
                return Err(SimulatorError::Config("need at least 2 cameras".into()));
            }
            let image = ImageRect::new(*image_width, *image_height);
            // quarter-circle steps for small rigs: adjacent cameras sit 90
            // degrees apart, which keeps epipoles outside the images (facing
            // cameras put the epipole in the image center, the worst case for
            // border-line sampling density near the pencil)
            let step = 2.0 * std::f64::consts::PI / (*count).max(4) as f64;
            (0..*count)
                .map(|k| {
                    let phi = step * k as f64;
                    let c = Vector3::new(radius * phi.cos(), *height, radius * phi.sin());
                    CameraModel::look_at(c, Vector3::zeros(), *focal_px, image)
                })
                .collect()
        }
        CameraSetup::Explicit(cams) => {
            if cams.len() < 2 {
                return Err(SimulatorError::Config("need at least 2 cameras".into()));
            }
            Ok(cams.clone())
        }
    }
}

fn random_unit_vector(rng: &mut impl Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return v / n;
        }
    }
}

fn random_rotation(rng: &mut impl Rng) -> Matrix3<f64> {
    let a = random_unit_vector(rng);
    let mut b = random_unit_vector(rng);
    b = (b - a * a.dot(&b)).normalize();
    let c = a.cross(&b);
    Matrix3::from_columns(&[a, b, c])
}

/// The shared straight path for the traffic scenarios. It passes through the
/// world center and extends well beyond the box on both sides, so cubes
/// leave the common viewing volume periodically.
fn straight_path_segment(
    dir: Vector3<f64>,
    bounds: &WorldBounds,
    world_half_extent: f64,
    excursion_factor: f64,
) -> (Vector3<f64>, Vector3<f64>, f64) {
    let length = 2.0 * excursion_factor * world_half_extent;
    let origin = bounds.center() - dir * (0.5 * length);
    (origin, dir, length)
}

/// In-plane direction for the degenerate scenario: a line through the world
/// center inside the epipolar plane spanned by the two camera centers.
fn epipolar_plane_direction(
    cam_a: &CameraModel,
    cam_b: &CameraModel,
    center: &Vector3<f64>,
) -> Result<Vector3<f64>, SimulatorError> {
    let u1 = cam_b.center() - cam_a.center();
    if u1.norm() < 1e-9 {
        return Err(SimulatorError::DegenerateRig("coincident camera centers"));
    }
    let u1 = u1.normalize();
    let w = center - cam_a.center();
    let u2 = w - u1 * u1.dot(&w);
    if u2.norm() < 1e-9 {
        return Err(SimulatorError::Config(
            "world center lies on the baseline; the epipolar plane is undefined".into(),
        ));
    }
    let u2 = u2.normalize();
    // mix baseline and in-plane orthogonal directions so the motion sweeps
    // visibly across the volume while staying inside the epipolar plane
    let angle = 35f64.to_radians();
    Ok((u1 * angle.cos() + u2 * angle.sin()).normalize())
}

fn generate_scene(
    config: &ScenarioConfig,
    cameras: &[CameraModel],
    rng: &mut ChaCha8Rng,
) -> Result<CubeScene, SimulatorError> {
    let bounds = WorldBounds::centered(config.world_half_extent);
    let (lo, hi) = config.half_extent_range;
    if !(lo > 0.0 && hi >= lo) {
        return Err(SimulatorError::Config("invalid half_extent_range".into()));
    }
    let (slo, shi) = config.speed_range;
    if !(slo > 0.0 && shi >= slo) {
        return Err(SimulatorError::Config("invalid speed_range".into()));
    }

    let on_path_count = match config.kind {
        ScenarioKind::Generic => 0,
        ScenarioKind::StraightPath => ((config.num_cubes as f64) * 0.8).ceil() as usize,
        ScenarioKind::EpipolarPlaneDegenerate => config.num_cubes,
    };
    let path = match config.kind {
        ScenarioKind::Generic => None,
        ScenarioKind::StraightPath => {
            let dir = match config.path_direction {
                Some(d) => {
                    if d.norm() < 1e-9 {
                        return Err(SimulatorError::Config("zero path_direction".into()));
                    }
                    d.normalize()
                }
                // sampled directions stay transverse to every camera: depth
                // then varies little along the path and its image is a long
                // thin band rather than a short fat wedge
                None => loop {
                    let d = random_unit_vector(rng);
                    let min_angle = cameras
                        .iter()
                        .map(|cam| {
                            let fwd = cam.rotation().row(2).transpose();
                            d.dot(&fwd).abs().min(1.0).acos()
                        })
                        .fold(f64::INFINITY, f64::min);
                    if min_angle >= 40f64.to_radians() {
                        break d;
                    }
                },
            };
            Some(straight_path_segment(
                dir,
                &bounds,
                config.world_half_extent,
                config.path_excursion_factor,
            ))
        }
        ScenarioKind::EpipolarPlaneDegenerate => {
            let dir = epipolar_plane_direction(&cameras[0], &cameras[1], &bounds.center())?;
            Some(straight_path_segment(
                dir,
                &bounds,
                config.world_half_extent,
                config.path_excursion_factor,
            ))
        }
    };

    let (plo, phi) = config.path_half_extent_range;
    if !(plo > 0.0 && phi >= plo) {
        return Err(SimulatorError::Config("invalid path_half_extent_range".into()));
    }
    let mut cubes = Vec::with_capacity(config.num_cubes);
    for i in 0..config.num_cubes {
        let orientation = random_rotation(rng);
        let speed = rng.random_range(slo..=shi);
        let on_path = i < on_path_count;
        let half_extent = if on_path {
            rng.random_range(plo..=phi)
        } else {
            rng.random_range(lo..=hi)
        };
        let trajectory = if on_path {
            let (origin, dir, length) = path.expect("path scenarios define a segment");
            Trajectory::SegmentBounce {
                origin,
                dir,
                length,
                s0: rng.random_range(0.0..length),
                speed: if rng.random::<bool>() { speed } else { -speed },
            }
        } else {
            Trajectory::FreeBounce {
                start: bounds.sample(rng),
                velocity: random_unit_vector(rng) * speed,
            }
        };
        cubes.push(Cube {
            half_extent,
            orientation,
            trajectory,
        });
    }
    Ok(CubeScene {
        cubes,
        num_frames: config.num_frames,
        bounds,
    })
}

/// Vertices of the cube clipped against the camera's near plane: corners with
/// admissible depth plus the crossings of the 12 box edges.
fn near_clipped_vertices(cam: &CameraModel, corners: &[Vector3<f64>; 8]) -> Vec<Vector3<f64>> {
    let depths: Vec<f64> = corners.iter().map(|c| cam.depth(c)).collect();
    let mut verts: Vec<Vector3<f64>> = Vec::with_capacity(12);
    for (c, d) in corners.iter().zip(&depths) {
        if *d >= NEAR_PLANE {
            verts.push(*c);
        }
    }
    if verts.len() == 8 {
        return verts;
    }
    // box edges connect corner indices differing in exactly one bit
    for i in 0..8usize {
        for bit in [1usize, 2, 4] {
            let j = i ^ bit;
            if j < i {
                continue;
            }
            let (di, dj) = (depths[i], depths[j]);
            if (di - NEAR_PLANE) * (dj - NEAR_PLANE) < 0.0 {
                let t = (NEAR_PLANE - di) / (dj - di);
                verts.push(corners[i] + (corners[j] - corners[i]) * t);
            }
        }
    }
    verts
}

/// Monotone-chain convex hull; returns vertices in counter-clockwise order.
fn convex_hull(points: &mut Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    points.sort_by(|a, b| a.partial_cmp(b).unwrap());
    points.dedup();
    let n = points.len();
    if n < 3 {
        return points.clone();
    }
    let cross = |o: (f64, f64), a: (f64, f64), b: (f64, f64)| {
        (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
    };
    let mut hull: Vec<(f64, f64)> = Vec::with_capacity(2 * n);
    for &p in points.iter() {
        while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    let lower_len = hull.len() + 1;
    for &p in points.iter().rev() {
        while hull.len() >= lower_len && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0
        {
            hull.pop();
        }
        hull.push(p);
    }
    hull.pop();
    hull
}

/// Fill a convex polygon into the mask: a pixel is set iff its center lies
/// inside (or on the boundary of) the polygon.
fn fill_convex(mask: &mut BitMask, hull: &[(f64, f64)]) {
    if hull.len() < 3 {
        return;
    }
    let (w, h) = (mask.width(), mask.height());
    let min_y = hull.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let max_y = hull.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    let j0 = (min_y - 0.5).ceil().max(0.0) as i64;
    let j1 = ((max_y - 0.5).floor() as i64).min(i64::from(h) - 1);
    for j in j0..=j1 {
        let yc = j as f64 + 0.5;
        let mut x_lo = f64::INFINITY;
        let mut x_hi = f64::NEG_INFINITY;
        for i in 0..hull.len() {
            let (x0, y0) = hull[i];
            let (x1, y1) = hull[(i + 1) % hull.len()];
            if y0 == y1 {
                if y0 == yc {
                    x_lo = x_lo.min(x0.min(x1));
                    x_hi = x_hi.max(x0.max(x1));
                }
                continue;
            }
            if (y0 - yc) * (y1 - yc) <= 0.0 {
                let x = x0 + (yc - y0) * (x1 - x0) / (y1 - y0);
                x_lo = x_lo.min(x);
                x_hi = x_hi.max(x);
            }
        }
        if x_lo > x_hi {
            continue;
        }
        let i0 = (x_lo - 0.5).ceil().max(0.0) as i64;
        let i1 = ((x_hi - 0.5).floor() as i64).min(i64::from(w) - 1);
        for i in i0..=i1 {
            mask.set(i as u32, j as u32, true);
        }
    }
}

/// Render the silhouette union of all cubes for one frame.
pub fn render_frame(
    cam: &CameraModel,
    scene: &CubeScene,
    frame: usize,
) -> Result<BitMask, SimulatorError> {
    if frame >= scene.num_frames {
        return Err(SimulatorError::Domain("frame index out of range"));
    }
    let mut mask = BitMask::new(cam.image.width, cam.image.height);
    for cube in &scene.cubes {
        let center = cube.trajectory.position(frame, &scene.bounds);
        let corners = cube.corners(&center);
        let verts = near_clipped_vertices(cam, &corners);
        if verts.len() < 3 {
            continue;
        }
        let mut pts: Vec<(f64, f64)> = Vec::with_capacity(verts.len());
        for v in &verts {
            let p = project(cam, v)?;
            if let Some(xy) = p.to_xy() {
                pts.push(xy);
            }
        }
        let hull = convex_hull(&mut pts);
        fill_convex(&mut mask, &hull);
    }
    Ok(mask)
}

pub(crate) fn mix_seed(base: u64, tag: u64, index: u64) -> u64 {
    // splitmix64 over the combined words
    let mut z = base
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(tag)
        .wrapping_mul(0xBF58_476D_1CE4_E5B9)
        .wrapping_add(index);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn apply_flip_noise(mask: &mut BitMask, prob: f64, rng: &mut ChaCha8Rng) {
    for y in 0..mask.height() {
        for x in 0..mask.width() {
            if rng.random::<f64>() < prob {
                let v = mask.get(x, y);
                mask.set(x, y, !v);
            }
        }
    }
}

/// Run a full scenario: build cameras, generate cube trajectories, render all
/// frames for every camera and compute the ground-truth fundamental matrices.
/// Bit-identical for a fixed config.
pub fn simulate(config: &ScenarioConfig) -> Result<Simulation, SimulatorError> {
    if config.num_frames == 0 {
        return Err(SimulatorError::Config("num_frames must be >= 1".into()));
    }
    if config.num_cubes == 0 {
        return Err(SimulatorError::Config("need at least one cube".into()));
    }
    if !(0.0..1.0).contains(&config.noise_flip_prob) {
        return Err(SimulatorError::Config("noise_flip_prob must be in [0, 1)".into()));
    }
    let cameras = build_cameras(&config.cameras)?;
    let bounds = WorldBounds::centered(config.world_half_extent);
    for (i, cam) in cameras.iter().enumerate() {
        if !cam.sees(&bounds.center()) {
            return Err(SimulatorError::Config(format!(
                "camera {i} does not see the world center; no common viewing volume"
            )));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let scene = generate_scene(config, &cameras, &mut rng)?;

    let videos = cameras
        .iter()
        .enumerate()
        .map(|(cam_idx, cam)| {
            let frames: Result<Vec<BitMask>, SimulatorError> = (0..config.num_frames)
                .into_par_iter()
                .map(|fr| {
                    let mut mask = render_frame(cam, &scene, fr)?;
                    if config.noise_flip_prob > 0.0 {
                        let mut frame_rng = ChaCha8Rng::seed_from_u64(mix_seed(
                            config.seed,
                            0x6e6f_6973 ^ cam_idx as u64,
                            fr as u64,
                        ));
                        apply_flip_noise(&mut mask, config.noise_flip_prob, &mut frame_rng);
                    }
                    Ok(mask)
                })
                .collect();
            SilhouetteVideo::new(frames?).map_err(|e| SimulatorError::Config(e.to_string()))
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut f_truth = Vec::new();
    for i in 0..cameras.len() {
        for j in (i + 1)..cameras.len() {
            f_truth.push(((i, j), ground_truth_f(&cameras[i], &cameras[j])?));
        }
    }

    Ok(Simulation {
        cameras,
        videos,
        f_truth,
        scene,
        config: config.clone(),
    })
}

/// Projections of world points visible in both cameras; every returned pair
/// satisfies the epipolar constraint of the pair's fundamental matrix exactly.
pub fn ground_truth_correspondences(
    cam_a: &CameraModel,
    cam_b: &CameraModel,
    bounds: &WorldBounds,
    count: usize,
    rng: &mut impl Rng,
) -> Result<Vec<(HomPoint2, HomPoint2)>, SimulatorError> {
    if count == 0 {
        return Err(SimulatorError::Config("count must be >= 1".into()));
    }
    let mut out = Vec::with_capacity(count);
    let max_attempts = count.saturating_mul(10_000);
    for _ in 0..max_attempts {
        if out.len() == count {
            break;
        }
        let x = bounds.sample(rng);
        if cam_a.sees(&x) && cam_b.sees(&x) {
            out.push((project(cam_a, &x)?, project(cam_b, &x)?));
        }
    }
    if out.len() < count {
        return Err(SimulatorError::Config(format!(
            "visibility region too small: found {} of {count} correspondences",
            out.len()
        )));
    }
    Ok(out)
}

/// The exact epipole of camera A with respect to camera B: the image of B's
/// center in A.
pub fn epipole_in_a(cam_a: &CameraModel, cam_b: &CameraModel) -> Result<HomPoint2, SimulatorError> {
    project(cam_a, &cam_b.center)
}
