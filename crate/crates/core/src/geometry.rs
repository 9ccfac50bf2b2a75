//! Ray geometry primitives: vectors, rays, surface intersection, refraction
//! and the rotation about the optical axis that reduces an off-axis ray to
//! the meridional (y-z) plane.
//!
//! Light travels toward +z. A spherical surface with radius `R > 0` has its
//! center of curvature at larger z than its vertex.

use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

/// Positional tolerance used throughout the geometry code, in millimeters.
pub const POSITION_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3::new(0.0, 0.0, 0.0);
    pub const Z: Vec3 = Vec3::new(0.0, 0.0, 1.0);

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn dot(self, other: Vec3) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn cross(self, other: Vec3) -> Vec3 {
        Vec3::new(
            self.y * other.z - self.z * other.y,
            self.z * other.x - self.x * other.z,
            self.x * other.y - self.y * other.x,
        )
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn normalized(self) -> Vec3 {
        self * (1.0 / self.norm())
    }

    /// Distance from the optical axis.
    pub fn radial(self) -> f64 {
        self.x.hypot(self.y)
    }

    /// Rotate about the z axis by `angle` radians (counter-clockwise seen from +z).
    pub fn rotate_z(self, angle: f64) -> Vec3 {
        let (s, c) = angle.sin_cos();
        Vec3::new(c * self.x - s * self.y, s * self.x + c * self.y, self.z)
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

impl From<[f64; 3]> for Vec3 {
    fn from(a: [f64; 3]) -> Self {
        Vec3::new(a[0], a[1], a[2])
    }
}

/// A ray with an origin in millimeters and a unit direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ray {
    pub origin: Vec3,
    pub direction: Vec3,
}

impl Ray {
    pub fn new(origin: Vec3, direction: Vec3) -> Self {
        Self { origin, direction }
    }

    /// Builds a ray through two points.
    pub fn through(from: Vec3, to: Vec3) -> Self {
        Self::new(from, (to - from).normalized())
    }

    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.direction * t
    }

    pub fn rotate_z(&self, angle: f64) -> Ray {
        Ray::new(self.origin.rotate_z(angle), self.direction.rotate_z(angle))
    }

    /// The same line traversed in the opposite direction.
    pub fn reversed(&self) -> Ray {
        Ray::new(self.origin, -self.direction)
    }

    /// Moves the origin along the line to the plane `z = plane_z`, in either
    /// direction. `None` when the ray is parallel to the plane.
    pub fn to_plane(&self, plane_z: f64) -> Option<Ray> {
        if self.direction.z.abs() < f64::EPSILON {
            return None;
        }
        let t = (plane_z - self.origin.z) / self.direction.z;
        let mut p = self.at(t);
        p.z = plane_z;
        Some(Ray::new(p, self.direction))
    }
}

/// Input ray reduced by rotational symmetry: the origin sits on the positive
/// y axis of the input plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeridionalRay {
    pub y_hat: f64,
    pub dx_hat: f64,
    pub dy_hat: f64,
    /// Rotation about z that was applied to the original ray.
    pub phi: f64,
}

impl MeridionalRay {
    pub fn inputs(&self) -> [f64; 3] {
        [self.y_hat, self.dx_hat, self.dy_hat]
    }
}

/// Intersection of a ray with the plane `z = plane_z`. `None` when the ray is
/// parallel to the plane or the plane lies behind the origin.
pub fn intersect_plane(ray: &Ray, plane_z: f64) -> Option<Vec3> {
    let dz = ray.direction.z;
    if dz.abs() < f64::EPSILON {
        return None;
    }
    let t = (plane_z - ray.origin.z) / dz;
    if t < 0.0 {
        return None;
    }
    let mut p = ray.at(t);
    p.z = plane_z;
    Some(p)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SphereHit {
    Hit {
        point: Vec3,
        normal: Vec3,
    },
    /// The ray does not meet the spherical cap.
    Miss,
    /// The ray meets the surface (or its mount) outside the clear aperture.
    Clipped,
}

/// Intersects a ray with a spherical cap whose vertex is at `(0, 0, vertex_z)`.
///
/// Only the hemisphere on the vertex side of the center counts as the
/// surface, so rays starting inside the sphere still find the physical cap.
/// Rays that pass entirely outside the sphere are reported as `Clipped` when
/// they cross the vertex plane outside the clear aperture (they would hit the
/// mount), otherwise as `Miss`.
pub fn intersect_sphere(ray: &Ray, vertex_z: f64, curvature_radius: f64, semi_aperture: f64) -> SphereHit {
    let center = Vec3::new(0.0, 0.0, vertex_z + curvature_radius);
    let oc = ray.origin - center;
    let b = oc.dot(ray.direction);
    let c = oc.dot(oc) - curvature_radius * curvature_radius;
    let disc = b * b - c;
    let outside_aperture = || match ray.to_plane(vertex_z) {
        Some(r) => r.origin.radial() > semi_aperture,
        None => true,
    };
    if disc < 0.0 {
        return if outside_aperture() { SphereHit::Clipped } else { SphereHit::Miss };
    }
    let sq = disc.sqrt();
    // cancellation-free roots
    let q = if b > 0.0 { -b - sq } else { -b + sq };
    let (mut t0, mut t1) = if q != 0.0 { (q, c / q) } else { (-b, -b) };
    if t0 > t1 {
        std::mem::swap(&mut t0, &mut t1);
    }
    let r_abs = curvature_radius.abs();
    let on_cap = |t: f64| {
        let p = ray.at(t);
        // vertex-side hemisphere
        (p.z - vertex_z) * curvature_radius.signum() <= r_abs && (p.z - center.z) * curvature_radius.signum() <= 0.0
    };
    let t = [t0, t1].into_iter().find(|&t| t > -POSITION_EPS && on_cap(t));
    let Some(t) = t else {
        return if outside_aperture() { SphereHit::Clipped } else { SphereHit::Miss };
    };
    let point = ray.at(t);
    if point.radial() > semi_aperture {
        return SphereHit::Clipped;
    }
    let mut normal = (point - center) * (1.0 / r_abs);
    if normal.dot(ray.direction) > 0.0 {
        normal = -normal;
    }
    SphereHit::Hit { point, normal }
}

#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
#[error("total internal reflection (n1/n2 * sin(theta_i) = {ratio:.6} > 1)")]
pub struct TotalInternalReflection {
    pub ratio: f64,
}

/// Vector form of Snell's law. `normal` must face the incoming ray
/// (`direction · normal < 0`).
pub fn refract(direction: Vec3, normal: Vec3, n1: f64, n2: f64) -> Result<Vec3, TotalInternalReflection> {
    if n1 == n2 {
        return Ok(direction);
    }
    let eta = n1 / n2;
    let cos_i = -direction.dot(normal);
    let sin2_i = (1.0 - cos_i * cos_i).max(0.0);
    let sin2_t = eta * eta * sin2_i;
    if sin2_t > 1.0 {
        return Err(TotalInternalReflection { ratio: sin2_t.sqrt() });
    }
    let cos_t = (1.0 - sin2_t).sqrt();
    let t = direction * eta + normal * (eta * cos_i - cos_t);
    Ok(t.normalized())
}

/// Rotates a ray about the optical axis so that its origin lands on the
/// positive y axis.
///
/// For origins on the axis (within [`POSITION_EPS`]) the direction is used
/// instead: it is rotated to have zero x component and non-negative y
/// component. A fully axial ray gets `phi = 0`.
pub fn rotate_meridional(ray: &Ray) -> MeridionalRay {
    let o = ray.origin;
    let d = ray.direction;
    let phi = if o.radial() > POSITION_EPS {
        o.x.atan2(o.y)
    } else if d.radial() > POSITION_EPS {
        d.x.atan2(d.y)
    } else {
        0.0
    };
    let p = o.rotate_z(phi);
    let dr = d.rotate_z(phi);
    MeridionalRay { y_hat: p.y.max(0.0), dx_hat: dr.x, dy_hat: dr.y, phi }
}

/// Undoes the rotation that [`rotate_meridional`] applied.
pub fn rotate_back(origin: Vec3, direction: Vec3, phi: f64) -> Ray {
    Ray::new(origin.rotate_z(-phi), direction.rotate_z(-phi))
}
