//! Laboratory frame, detector, aperture pose and ray tracing through the
//! aperture slab.
//!
//! Lab frame: the sample sits at the origin, the beam runs along +z, the
//! detector plane is normal to +y and centered above the origin. The
//! aperture is a slab of the mask's thickness whose mid-plane sits at
//! `y = standoff + heave`. Its local axes are: ξ along the bars (lab x at
//! zero pose), η along the slab normal (lab y) and ζ along the pattern
//! (lab z). Pattern coordinate `u = ζ + length/2`, so the mask spans
//! `[0, length)` with its center at the rotation pivot.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::linalg::{Mat3, Vec3};
use crate::mask::ApertureMask;
use crate::scalar::Real;

/// The six pose coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Coordinate {
    Surge,
    Sway,
    Heave,
    Yaw,
    Pitch,
    Roll,
}

impl Coordinate {
    pub const ALL: [Coordinate; 6] = [
        Coordinate::Surge,
        Coordinate::Sway,
        Coordinate::Heave,
        Coordinate::Yaw,
        Coordinate::Pitch,
        Coordinate::Roll,
    ];

    /// Cyclic order used by the coordinate descent: pitch first since the
    /// encoding is most sensitive to it, then yaw, surge, heave, roll, sway.
    pub const DESCENT_ORDER: [Coordinate; 6] = [
        Coordinate::Pitch,
        Coordinate::Yaw,
        Coordinate::Surge,
        Coordinate::Heave,
        Coordinate::Roll,
        Coordinate::Sway,
    ];

    pub fn is_rotation(self) -> bool {
        matches!(self, Coordinate::Yaw | Coordinate::Pitch | Coordinate::Roll)
    }

    pub fn name(self) -> &'static str {
        match self {
            Coordinate::Surge => "surge",
            Coordinate::Sway => "sway",
            Coordinate::Heave => "heave",
            Coordinate::Yaw => "yaw",
            Coordinate::Pitch => "pitch",
            Coordinate::Roll => "roll",
        }
    }
}

impl fmt::Display for Coordinate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Coordinate {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Coordinate::ALL
            .into_iter()
            .find(|c| c.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::invalid(format!("unknown coordinate '{s}'")))
    }
}

/// Aperture position (μm) and orientation (degrees).
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Pose6Dof<T> {
    /// Translation along z.
    pub surge: T,
    /// Translation along x.
    pub sway: T,
    /// Translation along y.
    pub heave: T,
    /// Rotation about the mask normal.
    pub yaw: T,
    /// Rotation about the transverse (bar) axis.
    pub pitch: T,
    /// Rotation about the longitudinal (pattern) axis.
    pub roll: T,
}

impl<T: Real> Pose6Dof<T> {
    pub fn identity() -> Self {
        Self::default()
    }

    pub fn get(&self, c: Coordinate) -> T {
        match c {
            Coordinate::Surge => self.surge,
            Coordinate::Sway => self.sway,
            Coordinate::Heave => self.heave,
            Coordinate::Yaw => self.yaw,
            Coordinate::Pitch => self.pitch,
            Coordinate::Roll => self.roll,
        }
    }

    pub fn set(&mut self, c: Coordinate, v: T) {
        let v = if c.is_rotation() { wrap_degrees(v) } else { v };
        match c {
            Coordinate::Surge => self.surge = v,
            Coordinate::Sway => self.sway = v,
            Coordinate::Heave => self.heave = v,
            Coordinate::Yaw => self.yaw = v,
            Coordinate::Pitch => self.pitch = v,
            Coordinate::Roll => self.roll = v,
        }
    }

    pub fn with(mut self, c: Coordinate, v: T) -> Self {
        self.set(c, v);
        self
    }

    /// Angles wrapped into (-180, 180].
    pub fn normalized(mut self) -> Self {
        self.yaw = wrap_degrees(self.yaw);
        self.pitch = wrap_degrees(self.pitch);
        self.roll = wrap_degrees(self.roll);
        self
    }

    pub fn is_finite(&self) -> bool {
        Coordinate::ALL.iter().all(|&c| self.get(c).is_finite())
    }

    pub fn rotation(&self) -> Mat3<T> {
        rotation_from_angles(self.yaw, self.pitch, self.roll)
    }
}

/// Wraps an angle in degrees into (-180, 180].
pub fn wrap_degrees<T: Real>(deg: T) -> T {
    let full = T::lit(360.0);
    let half = T::lit(180.0);
    let mut a = deg % full;
    if a <= -half {
        a = a + full;
    } else if a > half {
        a = a - full;
    }
    a
}

/// Euler–Rodrigues parameters (a, b, c, d) of a rotation by `angle` radians
/// about the unit `axis`.
fn euler_rodrigues<T: Real>(axis: Vec3<T>, angle: T) -> [T; 4] {
    let h = angle * T::lit(0.5);
    let s = h.sin();
    [h.cos(), axis.x * s, axis.y * s, axis.z * s]
}

/// Parameters of the rotation `p` followed by `q`.
fn compose_parameters<T: Real>(q: [T; 4], p: [T; 4]) -> [T; 4] {
    let [a1, b1, c1, d1] = q;
    let [a2, b2, c2, d2] = p;
    [
        a1 * a2 - b1 * b2 - c1 * c2 - d1 * d2,
        a1 * b2 + b1 * a2 + c1 * d2 - d1 * c2,
        a1 * c2 - b1 * d2 + c1 * a2 + d1 * b2,
        a1 * d2 + b1 * c2 - c1 * b2 + d1 * a2,
    ]
}

fn matrix_from_parameters<T: Real>([a, b, c, d]: [T; 4]) -> Mat3<T> {
    let two = T::lit(2.0);
    Mat3 {
        rows: [
            [a * a + b * b - c * c - d * d, two * (b * c - a * d), two * (b * d + a * c)],
            [two * (b * c + a * d), a * a + c * c - b * b - d * d, two * (c * d - a * b)],
            [two * (b * d - a * c), two * (c * d + a * b), a * a + d * d - b * b - c * c],
        ],
    }
}

/// Body-to-lab rotation of the aperture for angles in degrees.
///
/// Roll (about z) is applied first, then pitch (about x), then yaw (about
/// y): `R = R_yaw · R_pitch · R_roll`. Composition is done on Euler–Rodrigues
/// parameters and converted to a matrix once.
pub fn rotation_from_angles<T: Real>(yaw: T, pitch: T, roll: T) -> Mat3<T> {
    let (o, z) = (T::one(), T::zero());
    let ry = euler_rodrigues(Vec3::new(z, o, z), yaw.to_radians());
    let rx = euler_rodrigues(Vec3::new(o, z, z), pitch.to_radians());
    let rz = euler_rodrigues(Vec3::new(z, z, o), roll.to_radians());
    matrix_from_parameters(compose_parameters(ry, compose_parameters(rx, rz)))
}

/// Area detector in 90° reflection geometry above the sample.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DetectorGeometry<T> {
    /// Height of the detector plane above the sample, μm.
    pub distance_above_sample: T,
    /// Edge length of the square sensitive area, μm.
    pub side_length: T,
    pub pixels_per_side: usize,
}

impl<T: Real> Default for DetectorGeometry<T> {
    fn default() -> Self {
        Self {
            distance_above_sample: T::lit(510_900.0),
            side_length: T::lit(409_600.0),
            pixels_per_side: 2048,
        }
    }
}

impl<T: Real> DetectorGeometry<T> {
    pub fn pixel_pitch(&self) -> T {
        self.side_length / T::from_usize_lossy(self.pixels_per_side)
    }

    pub fn contains(&self, pixel: Pixel) -> bool {
        pixel.row < self.pixels_per_side && pixel.col < self.pixels_per_side
    }

    /// Lab position of a pixel center. Columns run along x, rows along z;
    /// pixel `(n/2, n/2)` sits directly above the origin.
    pub fn pixel_center(&self, pixel: Pixel) -> Result<Vec3<T>> {
        if !self.contains(pixel) {
            return Err(Error::invalid(format!(
                "pixel ({}, {}) outside a {}x{} detector",
                pixel.row, pixel.col, self.pixels_per_side, self.pixels_per_side
            )));
        }
        let half = T::from_usize_lossy(self.pixels_per_side / 2);
        let p = self.pixel_pitch();
        Ok(Vec3::new(
            (T::from_usize_lossy(pixel.col) - half) * p,
            self.distance_above_sample,
            (T::from_usize_lossy(pixel.row) - half) * p,
        ))
    }

    pub fn center_pixel(&self) -> Pixel {
        Pixel::new(self.pixels_per_side / 2, self.pixels_per_side / 2)
    }
}

#[derive(
    Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize,
)]
pub struct Pixel {
    pub row: usize,
    pub col: usize,
}

impl Pixel {
    pub const fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }
}

impl fmt::Display for Pixel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.row, self.col)
    }
}

/// Fixed parts of the microscope: detector and nominal aperture standoff.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Instrument<T> {
    pub detector: DetectorGeometry<T>,
    /// Nominal height of the aperture mid-plane above the sample, μm.
    pub standoff: T,
}

impl<T: Real> Default for Instrument<T> {
    fn default() -> Self {
        Self { detector: DetectorGeometry::default(), standoff: T::lit(1000.0) }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray<T> {
    pub origin: Vec3<T>,
    /// Unit direction.
    pub direction: Vec3<T>,
}

/// Ray from the beam-axis point `(0, 0, source_depth)` through the center of
/// `pixel`.
pub fn pixel_ray<T: Real>(det: &DetectorGeometry<T>, pixel: Pixel, source_depth: T) -> Result<Ray<T>> {
    let target = det.pixel_center(pixel)?;
    let origin = Vec3::new(T::zero(), T::zero(), source_depth);
    Ok(Ray { origin, direction: (target - origin).normalized() })
}

/// In-plane displacement of the aperture by the scan stage, μm.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct MaskShift<T> {
    pub x: T,
    pub z: T,
}

impl<T: Real> MaskShift<T> {
    pub fn along_z(z: T) -> Self {
        Self { x: T::zero(), z }
    }

    fn as_vec(self) -> Vec3<T> {
        Vec3::new(self.x, T::zero(), self.z)
    }
}

/// Pattern coordinates where a ray pierces the two slab faces.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SlabCrossing<T> {
    pub u_entry: T,
    pub u_exit: T,
}

impl<T: Real> SlabCrossing<T> {
    pub fn mid(&self) -> T {
        (self.u_entry + self.u_exit) * T::lit(0.5)
    }
}

/// Crossing of one fixed ray through a mask that translates by a constant
/// vector per scan step. Pattern coordinates are affine in the step index.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SlabTrace<T> {
    pub entry: T,
    pub exit: T,
    /// Change of both coordinates per step.
    pub per_step: T,
    /// Ray parameter of the first face at step 0 and its change per step.
    s_entry: T,
    s_per_step: T,
}

impl<T: Real> SlabTrace<T> {
    pub fn at(&self, step: T) -> SlabCrossing<T> {
        SlabCrossing {
            u_entry: self.entry + step * self.per_step,
            u_exit: self.exit + step * self.per_step,
        }
    }

    /// True when at `step` the ray crosses the slab ahead of its origin and
    /// inside the pattern extent (non-cyclic masks).
    pub fn valid_at(&self, step: T, mask: &ApertureMask<T>) -> bool {
        let s = self.s_entry + step * self.s_per_step;
        if !(s > T::zero()) {
            return false;
        }
        if mask.cyclic {
            return true;
        }
        let c = self.at(step);
        let len = mask.length();
        let inside = |u: T| u >= T::zero() && u <= len;
        inside(c.u_entry) && inside(c.u_exit)
    }
}

const PARALLEL_EPS: f64 = 1e-12;

/// Aperture placed at a pose: the lab-to-local rotation and the slab center
/// at zero stage displacement.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PosedAperture<T> {
    to_local: Mat3<T>,
    center: Vec3<T>,
    half_thickness: T,
    half_length: T,
}

impl<T: Real> PosedAperture<T> {
    pub fn new(pose: &Pose6Dof<T>, mask: &ApertureMask<T>, standoff: T) -> Self {
        Self {
            to_local: pose.rotation().transpose(),
            center: Vec3::new(pose.sway, standoff + pose.heave, pose.surge),
            half_thickness: mask.thickness * T::lit(0.5),
            half_length: mask.length() * T::lit(0.5),
        }
    }

    /// Traces `ray` through the slab displaced by `base` and then by
    /// `per_step` for every scan step. `None` when the ray runs parallel to
    /// the slab.
    pub fn trace(&self, ray: &Ray<T>, base: MaskShift<T>, per_step: MaskShift<T>) -> Option<SlabTrace<T>> {
        let rt = &self.to_local;
        let l0 = rt.mul_vec(ray.origin - (self.center + base.as_vec()));
        let d = rt.mul_vec(ray.direction);
        if d.y.abs() < T::lit(PARALLEL_EPS) {
            return None;
        }
        let q = rt.mul_vec(per_step.as_vec());
        let half_t = self.half_thickness;
        let (near, far) = if d.y > T::zero() { (-half_t, half_t) } else { (half_t, -half_t) };
        let s_near = (near - l0.y) / d.y;
        let s_far = (far - l0.y) / d.y;
        let slope = d.z / d.y;
        Some(SlabTrace {
            entry: l0.z + s_near * d.z + self.half_length,
            exit: l0.z + s_far * d.z + self.half_length,
            per_step: -q.z + q.y * slope,
            s_entry: s_near,
            s_per_step: q.y / d.y,
        })
    }
}

/// Traces `ray` through the slab of `mask` posed at `pose`, displaced by
/// `base` and then by `per_step` for every scan step.
///
/// Returns `None` when the ray runs parallel to the slab.
pub fn trace_scan<T: Real>(
    ray: &Ray<T>,
    pose: &Pose6Dof<T>,
    mask: &ApertureMask<T>,
    standoff: T,
    base: MaskShift<T>,
    per_step: MaskShift<T>,
) -> Option<SlabTrace<T>> {
    PosedAperture::new(pose, mask, standoff).trace(ray, base, per_step)
}

/// Pattern coordinates of the two slab faces pierced by `ray`, or `None`
/// when the ray is parallel to the slab, meets it behind its origin, or (for
/// non-cyclic masks) crosses outside the pattern.
///
/// `shift` is the scan-stage displacement of the aperture from its pose.
pub fn intersect_aperture<T: Real>(
    ray: &Ray<T>,
    pose: &Pose6Dof<T>,
    mask: &ApertureMask<T>,
    standoff: T,
    shift: MaskShift<T>,
) -> Option<SlabCrossing<T>> {
    let trace = trace_scan(ray, pose, mask, standoff, shift, MaskShift::default())?;
    trace.valid_at(T::zero(), mask).then(|| trace.at(T::zero()))
}

/// Mid-slab pattern coordinate pierced by the ray from `(0, 0, depth)` to
/// `pixel` with the stage at zero displacement.
pub fn depth_to_aperture_position<T: Real>(
    inst: &Instrument<T>,
    mask: &ApertureMask<T>,
    pose: &Pose6Dof<T>,
    pixel: Pixel,
    depth: T,
) -> Option<T> {
    let ray = pixel_ray(&inst.detector, pixel, depth).ok()?;
    intersect_aperture(&ray, pose, mask, inst.standoff, MaskShift::default()).map(|c| c.mid())
}

/// Inverse of [`depth_to_aperture_position`]: the beam-axis depth whose ray to
/// `pixel` pierces the slab mid-plane at pattern coordinate `u`.
///
/// The forward map is a projective function of depth, so a secant iteration
/// started from the unit-magnification guess converges in a handful of steps.
pub fn aperture_position_to_depth<T: Real>(
    inst: &Instrument<T>,
    mask: &ApertureMask<T>,
    pose: &Pose6Dof<T>,
    pixel: Pixel,
    u: T,
) -> Option<T> {
    // The extent check would reject depths whose ray leaves the mask while
    // iterating; work on an unbounded copy.
    let unbounded = ApertureMask { cyclic: true, ..mask.clone() };
    let f = |z: T| depth_to_aperture_position(inst, &unbounded, pose, pixel, z).map(|v| v - u);
    let mut z0 = T::zero();
    let mut f0 = f(z0)?;
    let mut z1 = -f0;
    let mut f1 = f(z1)?;
    let tol = T::lit(1e-11) * (T::one() + u.abs());
    for _ in 0..60 {
        if f1.abs() <= tol {
            break;
        }
        let denom = f1 - f0;
        if denom == T::zero() {
            return None;
        }
        let z2 = z1 - f1 * (z1 - z0) / denom;
        z0 = z1;
        f0 = f1;
        z1 = z2;
        f1 = f(z1)?;
    }
    (f1.abs() <= tol * T::lit(1e3)).then_some(z1)
}
