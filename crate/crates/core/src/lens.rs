//! Exact sequential ray tracing through a stack of spherical surfaces, plus
//! the paraxial (ABCD) description of the same stack.
//!
//! Surfaces are listed in the order light meets them. Surface 0 has its vertex
//! at `z = 0`; every following vertex sits `thickness_mm` further along +z.
//! The medium in front of surface 0 is air.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{intersect_sphere, refract, Ray, SphereHit, Vec3};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Profile {
    Planar,
    /// Signed radius of curvature in mm; positive when the center lies at larger z.
    Spherical(f64),
}

impl Profile {
    pub fn radius(&self) -> Option<f64> {
        match *self {
            Profile::Planar => None,
            Profile::Spherical(r) => Some(r),
        }
    }

    fn curvature(&self) -> f64 {
        match *self {
            Profile::Planar => 0.0,
            Profile::Spherical(r) => 1.0 / r,
        }
    }

    fn negated(&self) -> Profile {
        match *self {
            Profile::Planar => Profile::Planar,
            Profile::Spherical(r) => Profile::Spherical(-r),
        }
    }

    /// Axial sag at radial height `h`, measured from the vertex along +z.
    pub fn sag(&self, h: f64) -> f64 {
        match *self {
            Profile::Planar => 0.0,
            Profile::Spherical(r) => {
                let h = h.min(r.abs());
                r - r.signum() * (r * r - h * h).sqrt()
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LensSurface {
    pub profile: Profile,
    pub thickness_to_next: f64,
    pub refractive_index_after: f64,
    pub semi_aperture: f64,
    pub is_stop: bool,
}

impl LensSurface {
    pub fn spherical(radius: f64, thickness: f64, n_after: f64, semi_aperture: f64) -> Self {
        Self {
            profile: Profile::Spherical(radius),
            thickness_to_next: thickness,
            refractive_index_after: n_after,
            semi_aperture,
            is_stop: false,
        }
    }

    pub fn planar(thickness: f64, n_after: f64, semi_aperture: f64) -> Self {
        Self {
            profile: Profile::Planar,
            thickness_to_next: thickness,
            refractive_index_after: n_after,
            semi_aperture,
            is_stop: false,
        }
    }

    pub fn stop(thickness: f64, semi_aperture: f64) -> Self {
        Self { is_stop: true, ..Self::planar(thickness, 1.0, semi_aperture) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LensPrescription {
    pub name: String,
    pub design_wavelength_nm: f64,
    pub surfaces: Vec<LensSurface>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockReason {
    ApertureClip,
    CapMiss,
    TotalInternalReflection,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TraceOutcome {
    /// The refracted ray leaving the last surface, with its origin on that surface.
    Exit(Ray),
    Blocked {
        surface: usize,
        reason: BlockReason,
    },
}

impl TraceOutcome {
    pub fn exit(self) -> Option<Ray> {
        match self {
            TraceOutcome::Exit(r) => Some(r),
            TraceOutcome::Blocked { .. } => None,
        }
    }
}

impl LensPrescription {
    pub fn new(name: impl Into<String>, design_wavelength_nm: f64, surfaces: Vec<LensSurface>) -> Self {
        Self { name: name.into(), design_wavelength_nm, surfaces }
    }

    pub fn empty() -> Self {
        Self::new("empty", 587.56, Vec::new())
    }

    /// Vertex positions along z.
    pub fn vertex_positions(&self) -> Vec<f64> {
        let mut z = 0.0;
        self.surfaces
            .iter()
            .map(|s| {
                let here = z;
                z += s.thickness_to_next;
                here
            })
            .collect()
    }

    /// Position of the last vertex (the total track between first and last vertex).
    pub fn last_vertex_z(&self) -> f64 {
        self.vertex_positions().last().copied().unwrap_or(0.0)
    }

    pub fn stop_index(&self) -> Option<usize> {
        self.surfaces.iter().position(|s| s.is_stop)
    }

    fn index_before(&self, i: usize) -> f64 {
        if i == 0 {
            1.0
        } else {
            self.surfaces[i - 1].refractive_index_after
        }
    }

    /// Smallest and largest z reached by any surface within its clear aperture.
    pub fn axial_extent(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for (s, z) in self.surfaces.iter().zip(self.vertex_positions()) {
            let rim = z + s.profile.sag(s.semi_aperture);
            lo = lo.min(z).min(rim);
            hi = hi.max(z).max(rim);
        }
        if self.surfaces.is_empty() {
            (0.0, 0.0)
        } else {
            (lo, hi)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let stops = self.surfaces.iter().filter(|s| s.is_stop).count();
        if !self.surfaces.is_empty() && stops != 1 {
            return Err(Error::Lens(format!("expected exactly one stop surface, found {stops}")));
        }
        for (i, s) in self.surfaces.iter().enumerate() {
            if !(s.thickness_to_next >= 0.0 && s.thickness_to_next.is_finite()) {
                return Err(Error::Lens(format!("surface {i}: thickness must be finite and >= 0")));
            }
            if !(s.refractive_index_after > 0.0 && s.refractive_index_after.is_finite()) {
                return Err(Error::Lens(format!("surface {i}: refractive index must be > 0")));
            }
            if !(s.semi_aperture > 0.0 && s.semi_aperture.is_finite()) {
                return Err(Error::Lens(format!("surface {i}: semi-aperture must be > 0")));
            }
            if let Profile::Spherical(r) = s.profile {
                if r == 0.0 || !r.is_finite() {
                    return Err(Error::Lens(format!("surface {i}: radius must be finite and nonzero (use planar)")));
                }
                if s.semi_aperture > r.abs() {
                    return Err(Error::Lens(format!("surface {i}: semi-aperture exceeds |radius|")));
                }
            }
        }
        Ok(())
    }

    /// Traces a ray through every surface. The ray must start in front of the
    /// first surface.
    pub fn trace(&self, ray: &Ray) -> TraceOutcome {
        let mut current = *ray;
        let mut n1 = 1.0;
        for (i, (s, z)) in self.surfaces.iter().zip(self.vertex_positions()).enumerate() {
            let (point, normal) = match s.profile {
                Profile::Planar => {
                    let Some(p) = crate::geometry::intersect_plane(&current, z) else {
                        return TraceOutcome::Blocked { surface: i, reason: BlockReason::CapMiss };
                    };
                    if p.radial() > s.semi_aperture {
                        return TraceOutcome::Blocked { surface: i, reason: BlockReason::ApertureClip };
                    }
                    let nz = if current.direction.z > 0.0 { -1.0 } else { 1.0 };
                    (p, Vec3::new(0.0, 0.0, nz))
                }
                Profile::Spherical(r) => match intersect_sphere(&current, z, r, s.semi_aperture) {
                    SphereHit::Hit { point, normal } => (point, normal),
                    SphereHit::Miss => return TraceOutcome::Blocked { surface: i, reason: BlockReason::CapMiss },
                    SphereHit::Clipped => {
                        return TraceOutcome::Blocked { surface: i, reason: BlockReason::ApertureClip }
                    }
                },
            };
            let n2 = s.refractive_index_after;
            let Ok(dir) = refract(current.direction, normal, n1, n2) else {
                return TraceOutcome::Blocked { surface: i, reason: BlockReason::TotalInternalReflection };
            };
            current = Ray::new(point, dir);
            n1 = n2;
        }
        TraceOutcome::Exit(current)
    }

    /// The same lens seen from the other side: surface order reversed and
    /// radii negated, with thicknesses and indices re-aligned so the reversed
    /// stack occupies the mirror image `z -> L - z` of the original, where `L`
    /// is the last vertex position. The trailing thickness is kept.
    ///
    /// Assumes air behind the last surface, like every bundled design.
    pub fn reversed(&self) -> LensPrescription {
        let n = self.surfaces.len();
        let surfaces = (0..n)
            .map(|k| {
                let orig = &self.surfaces[n - 1 - k];
                let (thickness, n_after) = if k + 1 < n {
                    let prev = &self.surfaces[n - 2 - k];
                    (prev.thickness_to_next, prev.refractive_index_after)
                } else {
                    (self.surfaces[n - 1].thickness_to_next, 1.0)
                };
                LensSurface {
                    profile: orig.profile.negated(),
                    thickness_to_next: thickness,
                    refractive_index_after: n_after,
                    semi_aperture: orig.semi_aperture,
                    is_stop: orig.is_stop,
                }
            })
            .collect();
        LensPrescription { name: self.name.clone(), design_wavelength_nm: self.design_wavelength_nm, surfaces }
    }

    /// Paraxial matrix from the plane `z_in` (in air, before surface 0) to the
    /// plane `z_out` (after the last surface).
    pub fn paraxial_matrix_between(&self, z_in: f64, z_out: f64) -> ParaxialMatrix {
        self.paraxial_span(0..self.surfaces.len(), z_in, z_out)
    }

    /// Paraxial matrix from the first vertex to the last vertex.
    pub fn paraxial_matrix(&self) -> ParaxialMatrix {
        let z = self.vertex_positions();
        match (z.first(), z.last()) {
            (Some(&a), Some(&b)) => self.paraxial_matrix_between(a, b),
            _ => ParaxialMatrix::IDENTITY,
        }
    }

    /// Matrix over the surfaces in `range`, starting at `z_start` in the
    /// medium in front of the first surface of the range.
    fn paraxial_span(&self, range: std::ops::Range<usize>, z_start: f64, z_end: f64) -> ParaxialMatrix {
        let zs = self.vertex_positions();
        let mut m = ParaxialMatrix::IDENTITY;
        let mut z = z_start;
        let mut n = self.index_before(range.start);
        for i in range {
            let s = &self.surfaces[i];
            m = ParaxialMatrix::gap((zs[i] - z) / n).then(&m);
            let n2 = s.refractive_index_after;
            m = ParaxialMatrix::refraction((n2 - n) * s.profile.curvature()).then(&m);
            z = zs[i];
            n = n2;
        }
        ParaxialMatrix::gap((z_end - z) / n).then(&m)
    }

    /// Paraxial image of the aperture stop seen from `viewpoint_z`: the
    /// entrance-side pupil when the viewpoint lies in front of the stop,
    /// otherwise the pupil formed by the surfaces behind it.
    pub fn paraxial_pupil(&self, viewpoint_z: f64) -> Result<Pupil> {
        let s = self.stop_index().ok_or_else(|| Error::Lens("prescription has no stop surface".into()))?;
        let zs = self.vertex_positions();
        let z_stop = zs[s];
        let stop_radius = self.surfaces[s].semi_aperture;
        if viewpoint_z <= z_stop {
            let m = self.paraxial_span(0..s, zs[0], z_stop);
            if m.a.abs() < 1e-12 {
                return Err(Error::DegenerateImaging);
            }
            Ok(Pupil { z: zs[0] + m.b / m.a, radius: stop_radius / m.a.abs() })
        } else {
            let z_last = *zs.last().unwrap();
            let m = self.paraxial_span(s + 1..self.surfaces.len(), z_stop, z_last);
            if m.d.abs() < 1e-12 {
                return Err(Error::DegenerateImaging);
            }
            let mag = m.a - m.b * m.c / m.d;
            Ok(Pupil { z: z_last - m.b / m.d, radius: stop_radius * mag.abs() })
        }
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let file: LensFile = serde_json::from_str(text).map_err(|e| Error::Lens(e.to_string()))?;
        let lens = file.into_prescription()?;
        lens.validate()?;
        Ok(lens)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&LensFile::from(self)).expect("lens serialization")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pupil {
    pub z: f64,
    pub radius: f64,
}

/// 2x2 paraxial ray-transfer matrix acting on (height, reduced angle n·u).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParaxialMatrix {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl ParaxialMatrix {
    pub const IDENTITY: ParaxialMatrix = ParaxialMatrix { a: 1.0, b: 0.0, c: 0.0, d: 1.0 };

    /// Transfer over a reduced distance `t / n`.
    pub fn gap(reduced: f64) -> Self {
        Self { a: 1.0, b: reduced, c: 0.0, d: 1.0 }
    }

    pub fn refraction(power: f64) -> Self {
        Self { a: 1.0, b: 0.0, c: -power, d: 1.0 }
    }

    /// `other` followed by `self`, i.e. the product `self * other`.
    pub fn then(&self, other: &ParaxialMatrix) -> ParaxialMatrix {
        ParaxialMatrix {
            a: self.a * other.a + self.b * other.c,
            b: self.a * other.b + self.b * other.d,
            c: self.c * other.a + self.d * other.c,
            d: self.c * other.b + self.d * other.d,
        }
    }

    pub fn determinant(&self) -> f64 {
        self.a * self.d - self.b * self.c
    }

    pub fn apply(&self, height: f64, angle: f64) -> (f64, f64) {
        (self.a * height + self.b * angle, self.c * height + self.d * angle)
    }
}

// ---- file format ----

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LensFile {
    name: String,
    wavelength_nm: f64,
    surfaces: Vec<SurfaceFile>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SurfaceFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    radius_mm: Option<f64>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    planar: bool,
    thickness_mm: f64,
    n_after: f64,
    semi_aperture_mm: f64,
    #[serde(default)]
    is_stop: bool,
}

impl LensFile {
    fn into_prescription(self) -> Result<LensPrescription> {
        let surfaces = self
            .surfaces
            .into_iter()
            .enumerate()
            .map(|(i, s)| {
                let profile = match (s.radius_mm, s.planar) {
                    (Some(_), true) => {
                        return Err(Error::Lens(format!("surface {i}: both radius_mm and planar given")))
                    }
                    (Some(r), false) => Profile::Spherical(r),
                    (None, true) => Profile::Planar,
                    (None, false) => {
                        return Err(Error::Lens(format!("surface {i}: needs radius_mm or \"planar\": true")))
                    }
                };
                Ok(LensSurface {
                    profile,
                    thickness_to_next: s.thickness_mm,
                    refractive_index_after: s.n_after,
                    semi_aperture: s.semi_aperture_mm,
                    is_stop: s.is_stop,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(LensPrescription { name: self.name, design_wavelength_nm: self.wavelength_nm, surfaces })
    }
}

impl From<&LensPrescription> for LensFile {
    fn from(lens: &LensPrescription) -> Self {
        LensFile {
            name: lens.name.clone(),
            wavelength_nm: lens.design_wavelength_nm,
            surfaces: lens
                .surfaces
                .iter()
                .map(|s| SurfaceFile {
                    radius_mm: s.profile.radius(),
                    planar: s.profile == Profile::Planar,
                    thickness_mm: s.thickness_to_next,
                    n_after: s.refractive_index_after,
                    semi_aperture_mm: s.semi_aperture,
                    is_stop: s.is_stop,
                })
                .collect(),
        }
    }
}

/// Lens designs shipped with the crate, given object side first.
pub mod bundled {
    use super::LensPrescription;

    pub const DOUBLE_GAUSS: &str = include_str!("../lenses/double-gauss.json");
    pub const PETZVAL: &str = include_str!("../lenses/petzval.json");
    pub const COOKE_TRIPLET: &str = include_str!("../lenses/cooke-triplet.json");
    pub const HIGH_BEND: &str = include_str!("../lenses/high-bend.json");

    pub fn double_gauss() -> LensPrescription {
        LensPrescription::from_json_str(DOUBLE_GAUSS).expect("bundled lens")
    }

    pub fn petzval() -> LensPrescription {
        LensPrescription::from_json_str(PETZVAL).expect("bundled lens")
    }

    pub fn cooke_triplet() -> LensPrescription {
        LensPrescription::from_json_str(COOKE_TRIPLET).expect("bundled lens")
    }

    pub fn high_bend() -> LensPrescription {
        LensPrescription::from_json_str(HIGH_BEND).expect("bundled lens")
    }

    /// All designs with convex pass regions and plane outputs.
    pub fn all() -> Vec<LensPrescription> {
        vec![double_gauss(), petzval(), cooke_triplet()]
    }

    /// A bare circular stop of the given radius.
    pub fn bare_stop(semi_aperture: f64) -> LensPrescription {
        LensPrescription::new("bare-stop", 587.56, vec![super::LensSurface::stop(0.0, semi_aperture)])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn thin_lens(r1: f64, r2: f64, n: f64, trailing: f64) -> Vec<LensSurface> {
        vec![LensSurface::spherical(r1, 0.0, n, 5.0), LensSurface::spherical(r2, trailing, 1.0, 5.0)]
    }

    fn close(m: ParaxialMatrix, e: [f64; 4], tol: f64) {
        let got = [m.a, m.b, m.c, m.d];
        for (g, w) in got.iter().zip(e) {
            assert!((g - w).abs() < tol, "{got:?} vs {e:?}");
        }
    }

    #[test]
    fn empty_lens_is_identity() {
        let r = Ray::new(Vec3::new(0.3, -0.2, -1.0), Vec3::new(0.1, 0.2, 1.0).normalized());
        assert_eq!(LensPrescription::empty().trace(&r), TraceOutcome::Exit(r));
        assert_eq!(LensPrescription::empty().reversed(), LensPrescription::empty());
        close(LensPrescription::empty().paraxial_matrix_between(0.0, 10.0), [1.0, 10.0, 0.0, 1.0], 1e-15);
    }

    #[test]
    fn axial_ray_stays_on_axis() {
        for lens in bundled::all().into_iter().chain([bundled::high_bend()]) {
            for l in [lens.reversed(), lens] {
                let out = l.trace(&Ray::new(Vec3::new(0.0, 0.0, -5.0), Vec3::Z)).exit().unwrap();
                assert_eq!((out.origin.x, out.origin.y), (0.0, 0.0), "{}", l.name);
                assert_eq!(out.direction, Vec3::Z);
            }
        }
    }

    #[test]
    fn paraxial_ray_matches_matrix() {
        for lens in bundled::all() {
            let z0 = -1.0;
            let z1 = lens.last_vertex_z() + 10.0;
            let (y, u) = (0.01, 0.001f64);
            let r = Ray::new(Vec3::new(0.0, y, z0), Vec3::new(0.0, u.sin(), u.cos()));
            let out = lens.trace(&r).exit().unwrap().to_plane(z1).unwrap();
            let (y1, u1) = lens.paraxial_matrix_between(z0, z1).apply(y, u);
            assert!((out.origin.y - y1).abs() < 1e-6, "{}: {} vs {y1}", lens.name, out.origin.y);
            assert!((out.direction.y / out.direction.z - u1).abs() < 1e-6, "{}", lens.name);
        }
    }

    #[test]
    fn bundled_determinants_are_one() {
        for lens in bundled::all() {
            assert!((lens.paraxial_matrix().determinant() - 1.0).abs() < 1e-9);
            assert!((lens.reversed().paraxial_matrix().determinant() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn single_and_thin_surfaces() {
        let one = LensPrescription::new("s", 550.0, vec![LensSurface::spherical(10.0, 0.0, 1.5, 5.0)]);
        assert!((one.paraxial_matrix().c + 0.05).abs() < 1e-15);
        let thin = LensPrescription::new("t", 550.0, thin_lens(10.0, -10.0, 1.5, 0.0));
        close(thin.paraxial_matrix(), [1.0, 0.0, -0.1, 1.0], 1e-15);
    }

    #[test]
    fn reversal_is_an_involution() {
        for lens in bundled::all().into_iter().chain([bundled::high_bend()]) {
            assert_eq!(lens.reversed().reversed(), lens);
        }
        let stop = bundled::bare_stop(2.0);
        assert_eq!(stop.reversed(), stop);
    }

    #[test]
    fn reversed_trace_retraces_the_ray() {
        for lens in bundled::all() {
            let l = lens.last_vertex_z();
            let rev = lens.reversed();
            for (y, u) in [(0.5, 0.02), (-1.5, -0.05), (2.0, 0.0)] {
                let r = Ray::new(Vec3::new(0.3, y, -2.0), Vec3::new(0.01, u, 1.0).normalized());
                let s = lens.trace(&r).exit().unwrap();
                let mirror = |p: Vec3| Vec3::new(p.x, p.y, l - p.z);
                let d = Vec3::new(-s.direction.x, -s.direction.y, s.direction.z);
                let start = Ray::new(mirror(s.origin) - d, d);
                let back = rev.trace(&start).exit().unwrap().to_plane(l + 2.0).unwrap();
                let want = mirror(r.origin);
                assert!((back.origin - want).norm() < 1e-9, "{}: {:?} vs {want:?}", lens.name, back.origin);
                let wd = Vec3::new(-r.direction.x, -r.direction.y, r.direction.z);
                assert!((back.direction - wd).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn pupils() {
        let p = bundled::bare_stop(2.5).paraxial_pupil(-1.0).unwrap();
        assert_eq!((p.z, p.radius), (0.0, 2.5));

        // thin f = 50 lens with the stop 25 behind it: virtual image at +50,
        // magnified twice.
        let mut s = thin_lens(50.0, -50.0, 1.5, 25.0);
        s.push(LensSurface::stop(0.0, 1.0));
        let lens = LensPrescription::new("t", 550.0, s);
        let p = lens.paraxial_pupil(-1.0).unwrap();
        assert!((p.z - 50.0).abs() < 1e-9 && (p.radius - 2.0).abs() < 1e-12, "{p:?}");

        let dg = bundled::double_gauss();
        for v in [-1.0, dg.last_vertex_z() + 1.0] {
            assert!(dg.paraxial_pupil(v).unwrap().radius > 0.0);
        }
        assert!(matches!(LensPrescription::empty().paraxial_pupil(0.0), Err(Error::Lens(_))));
    }

    #[test]
    fn json_rejects_bad_files() {
        let two_stops = r#"{"name": "x", "wavelength_nm": 550, "surfaces": [
            {"planar": true, "thickness_mm": 1, "n_after": 1, "semi_aperture_mm": 1, "is_stop": true},
            {"planar": true, "thickness_mm": 1, "n_after": 1, "semi_aperture_mm": 1, "is_stop": true}]}"#;
        assert!(matches!(LensPrescription::from_json_str(two_stops), Err(Error::Lens(m)) if m.contains("stop")));
        let neither = r#"{"name": "x", "wavelength_nm": 550, "surfaces": [
            {"thickness_mm": 1, "n_after": 1, "semi_aperture_mm": 1, "is_stop": true}]}"#;
        assert!(LensPrescription::from_json_str(neither).is_err());
        for lens in bundled::all() {
            assert_eq!(LensPrescription::from_json_str(&lens.to_json_string()).unwrap(), lens);
        }
    }
}
