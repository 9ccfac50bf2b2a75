//! Input/output ray-pair datasets: generation by tracing the oracle lens and
//! the whitespace-separated text format (12 columns, `NaN` for blocked rays).

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Ray, Vec3, POSITION_EPS};
use crate::lens::LensPrescription;

/// Default clearance between a lens vertex and the adjacent RTF plane.
pub const DEFAULT_PLANE_OFFSET_MM: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum OutputSurface {
    Plane {
        #[serde(rename = "z_mm")]
        z: f64,
    },
    Sphere {
        #[serde(rename = "center_z_mm")]
        center_z: f64,
        #[serde(rename = "radius_mm")]
        radius: f64,
    },
}

impl OutputSurface {
    pub fn is_plane(&self) -> bool {
        matches!(self, OutputSurface::Plane { .. })
    }

    /// Carries a ray leaving the last lens surface onto this surface. Planes
    /// are reached along the ray's line (possibly backwards, when a rim sits
    /// past the plane); spheres by the forward exit root.
    pub fn transport(&self, ray: &Ray) -> Option<Ray> {
        match *self {
            OutputSurface::Plane { z } => {
                if ray.direction.z <= 0.0 {
                    return None;
                }
                ray.to_plane(z)
            }
            OutputSurface::Sphere { center_z, radius } => {
                let center = Vec3::new(0.0, 0.0, center_z);
                let oc = ray.origin - center;
                let b = oc.dot(ray.direction);
                let c = oc.dot(oc) - radius * radius;
                let disc = b * b - c;
                if disc < 0.0 {
                    return None;
                }
                let t = -b + disc.sqrt();
                if t < -POSITION_EPS {
                    return None;
                }
                let p = ray.at(t);
                // snap onto the sphere
                let p = center + (p - center) * (radius / (p - center).norm());
                Some(Ray::new(p, ray.direction))
            }
        }
    }

    /// Residual of the surface equation at `p`.
    pub fn residual(&self, p: Vec3) -> f64 {
        match *self {
            OutputSurface::Plane { z } => (p.z - z).abs(),
            OutputSurface::Sphere { center_z, radius } => ((p - Vec3::new(0.0, 0.0, center_z)).norm() - radius).abs(),
        }
    }
}

/// Positions of the three auxiliary planes, in the coordinates of the
/// (sensor-side first) lens.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlaneConfig {
    pub input_plane_z: f64,
    pub output_surface: OutputSurface,
    /// Distance of the ray-pass plane from the input plane.
    pub raypass_plane_offset: f64,
}

impl PlaneConfig {
    /// Planes `offset` mm outside the first and last vertex; the ray-pass
    /// plane sits at the paraxial pupil seen from the input side (or 1 mm in
    /// when that pupil is degenerate).
    pub fn for_lens(lens: &LensPrescription, input_offset: f64, output_offset: f64) -> Self {
        let input_plane_z = -input_offset;
        let output_z = lens.last_vertex_z() + output_offset;
        let raypass_plane_offset = match lens.paraxial_pupil(input_plane_z) {
            Ok(p) if (p.z - input_plane_z).abs() > 1e-6 => p.z - input_plane_z,
            _ => 1.0,
        };
        Self { input_plane_z, output_surface: OutputSurface::Plane { z: output_z }, raypass_plane_offset }
    }

    pub fn with_sphere_output(mut self, center_z: f64, radius: f64) -> Self {
        self.output_surface = OutputSurface::Sphere { center_z, radius };
        self
    }

    pub fn raypass_plane_z(&self) -> f64 {
        self.input_plane_z + self.raypass_plane_offset
    }

    pub fn validate(&self) -> Result<()> {
        if self.raypass_plane_offset == 0.0 || !self.raypass_plane_offset.is_finite() {
            return Err(Error::Config("raypass_plane_offset must be finite and nonzero".into()));
        }
        if let OutputSurface::Sphere { radius, .. } = self.output_surface {
            if !(radius > 0.0) {
                return Err(Error::Config("output sphere radius must be > 0".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    pub n_field: usize,
    pub y_max: f64,
    pub n_pupil_radial: usize,
    pub n_pupil_angular: usize,
    pub pupil_margin: f64,
    pub seed: u64,
    /// Jitter each pupil sample within its grid cell (seeded).
    #[serde(default)]
    pub jitter: bool,
    /// Fraction of a grid step by which field and pupil grids are shifted;
    /// 0.5 gives a held-out grid interleaved with the default one.
    #[serde(default)]
    pub grid_offset: f64,
    /// Pupil (z, radius) to use instead of the paraxial estimate.
    #[serde(default)]
    pub pupil_override: Option<(f64, f64)>,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            n_field: 20,
            y_max: 1.0,
            n_pupil_radial: 32,
            n_pupil_angular: 32,
            pupil_margin: 1.2,
            seed: 0,
            jitter: false,
            grid_offset: 0.0,
            pupil_override: None,
        }
    }
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_field < 2 {
            return Err(Error::Config("n_field must be >= 2".into()));
        }
        if !(self.y_max > 0.0) {
            return Err(Error::Config("y_max must be > 0".into()));
        }
        if self.n_pupil_radial == 0 || self.n_pupil_angular == 0 {
            return Err(Error::Config("pupil grid must be non-empty".into()));
        }
        if !(self.pupil_margin >= 1.0) {
            return Err(Error::Config("pupil_margin must be >= 1".into()));
        }
        Ok(())
    }

    /// Field positions on the input plane.
    pub fn field_positions(&self) -> Vec<f64> {
        let step = self.y_max / (self.n_field - 1) as f64;
        (0..self.n_field).map(|i| ((i as f64 + self.grid_offset) * step).min(self.y_max)).collect()
    }

    /// Polar sample grid on the unit disc, area-uniform in radius.
    pub fn unit_pupil_grid(&self, field_index: usize) -> Vec<(f64, f64)> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(field_index as u64);
        let nr = self.n_pupil_radial as f64;
        let na = self.n_pupil_angular as f64;
        let mut out = Vec::with_capacity(self.n_pupil_radial * self.n_pupil_angular);
        for i in 0..self.n_pupil_radial {
            for j in 0..self.n_pupil_angular {
                let (u, v) = if self.jitter { (rng.gen::<f64>(), rng.gen::<f64>()) } else { (0.5, 0.5) };
                let ru = ((i as f64 + u + self.grid_offset) / nr).min(1.0);
                let r = ru.sqrt();
                let a = std::f64::consts::TAU * (j as f64 + v + self.grid_offset) / na;
                out.push((r * a.cos(), r * a.sin()));
            }
        }
        out
    }
}

/// One input/output ray pair. Blocked rays have `output == None`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayRecord {
    pub input: Ray,
    pub output: Option<Ray>,
}

impl RayRecord {
    pub fn is_blocked(&self) -> bool {
        self.output.is_none()
    }

    pub fn input_array(&self) -> [f64; 6] {
        ray_array(&self.input)
    }

    pub fn output_array(&self) -> [f64; 6] {
        self.output.as_ref().map(ray_array).unwrap_or([f64::NAN; 6])
    }
}

fn ray_array(r: &Ray) -> [f64; 6] {
    [r.origin.x, r.origin.y, r.origin.z, r.direction.x, r.direction.y, r.direction.z]
}

#[derive(Debug, Clone, PartialEq)]
pub struct RtfDataset {
    pub records: Vec<RayRecord>,
    pub planes: PlaneConfig,
    pub lens_name: String,
    pub wavelength_nm: f64,
    /// Sampling used to produce the records, when known.
    pub sampling: Option<SamplingConfig>,
}

impl RtfDataset {
    pub fn passing(&self) -> impl Iterator<Item = (&Ray, &Ray)> {
        self.records.iter().filter_map(|r| r.output.as_ref().map(|o| (&r.input, o)))
    }

    pub fn blocked_count(&self) -> usize {
        self.records.iter().filter(|r| r.is_blocked()).count()
    }

    /// Records grouped by input height, in ascending order.
    pub fn groups_by_height(&self) -> Vec<(f64, Vec<&RayRecord>)> {
        let mut groups: Vec<(f64, Vec<&RayRecord>)> = Vec::new();
        for rec in &self.records {
            let y = rec.input.origin.radial();
            match groups.iter_mut().find(|(gy, _)| (gy - y).abs() <= 1e-9 * (1.0 + y.abs())) {
                Some((_, v)) => v.push(rec),
                None => groups.push((y, vec![rec])),
            }
        }
        groups.sort_by(|a, b| a.0.total_cmp(&b.0));
        groups
    }
}

/// Traces a ray that lies on the input plane, starting it well in front of
/// the lens so that surfaces reaching past the input plane are still met.
pub fn trace_from_input_plane(lens: &LensPrescription, ray: &Ray) -> Option<Ray> {
    let (front, _) = lens.axial_extent();
    let start = ray.to_plane(ray.origin.z.min(front) - 1.0).unwrap_or(*ray);
    lens.trace(&start).exit()
}

/// Samples the input plane and pupil, traces every ray through `lens`
/// (sensor side first) and records where it meets the output surface.
pub fn generate_dataset(
    lens: &LensPrescription,
    planes: &PlaneConfig,
    sampling: &SamplingConfig,
) -> Result<RtfDataset> {
    planes.validate()?;
    sampling.validate()?;
    let (pupil_z, pupil_radius) = match sampling.pupil_override {
        Some(p) => p,
        None => {
            let p = lens
                .paraxial_pupil(planes.input_plane_z)
                .map_err(|e| Error::Config(format!("paraxial pupil unavailable ({e}); provide a pupil override")))?;
            (p.z, p.radius)
        }
    };
    if (pupil_z - planes.input_plane_z).abs() < 1e-9 {
        return Err(Error::Config("pupil lies on the input plane; provide a pupil override".into()));
    }
    let disc = pupil_radius * sampling.pupil_margin;
    let heights = sampling.field_positions();
    let per_field: Vec<(Vec<RayRecord>, usize)> = heights
        .par_iter()
        .enumerate()
        .map(|(fi, &y)| {
            let origin = Vec3::new(0.0, y, planes.input_plane_z);
            let mut flagged = 0;
            let records = sampling
                .unit_pupil_grid(fi)
                .into_iter()
                .map(|(u, v)| {
                    let target = Vec3::new(u * disc, v * disc, pupil_z);
                    let mut input = Ray::through(origin, target);
                    if input.direction.z < 0.0 {
                        input.direction = -input.direction;
                    }
                    let output = trace_from_input_plane(lens, &input).and_then(|exit| {
                        let out = planes.output_surface.transport(&exit);
                        if out.is_none() && planes.output_surface.is_plane() {
                            flagged += 1;
                        }
                        out
                    });
                    RayRecord { input, output }
                })
                .collect();
            (records, flagged)
        })
        .collect();
    let flagged: usize = per_field.iter().map(|(_, f)| f).sum();
    if flagged > 0 {
        log::warn!("{flagged} exiting rays have d_z <= 0 and cannot reach the output plane; recorded as blocked");
    }
    Ok(RtfDataset {
        records: per_field.into_iter().flat_map(|(r, _)| r).collect(),
        planes: *planes,
        lens_name: lens.name.clone(),
        wavelength_nm: lens.design_wavelength_nm,
        sampling: Some(*sampling),
    })
}

// ---- text format ----

const HEADER_TAG: &str = "# rtf-dataset v1";

fn fmt_num(out: &mut String, v: f64) {
    if v.is_nan() {
        out.push_str("NaN");
    } else {
        // 17 significant digits
        let _ = write!(out, "{v:.16e}");
    }
}

pub fn write_dataset(ds: &RtfDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(dataset_to_string(ds).as_bytes()).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn dataset_to_string(ds: &RtfDataset) -> String {
    let mut s = String::with_capacity(64 + ds.records.len() * 300);
    let _ = writeln!(s, "{HEADER_TAG}");
    let _ = writeln!(s, "# lens: {}", serde_json::to_string(&ds.lens_name).unwrap());
    let _ = writeln!(s, "# wavelength_nm: {}", serde_json::to_string(&ds.wavelength_nm).unwrap());
    let _ = writeln!(s, "# planes: {}", serde_json::to_string(&ds.planes).unwrap());
    if let Some(sampling) = &ds.sampling {
        let _ = writeln!(s, "# sampling: {}", serde_json::to_string(sampling).unwrap());
    }
    let _ = writeln!(s, "# columns: in_x in_y in_z in_dx in_dy in_dz out_x out_y out_z out_dx out_dy out_dz");
    for rec in &ds.records {
        let vals = rec.input_array().into_iter().chain(rec.output_array());
        for (i, v) in vals.enumerate() {
            if i > 0 {
                s.push(' ');
            }
            fmt_num(&mut s, v);
        }
        s.push('\n');
    }
    s
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<RtfDataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(BufReader::new(file))
}

pub fn parse_dataset(reader: impl BufRead) -> Result<RtfDataset> {
    let mut lens_name = String::new();
    let mut wavelength_nm = f64::NAN;
    let mut planes: Option<PlaneConfig> = None;
    let mut sampling = None;
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::Parse { line: lineno, message: e.to_string() })?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(meta) = trimmed.strip_prefix('#') {
            let perr = |e: serde_json::Error| Error::Parse { line: lineno, message: e.to_string() };
            let meta = meta.trim();
            if let Some(v) = meta.strip_prefix("lens:") {
                lens_name = serde_json::from_str(v.trim()).map_err(perr)?;
            } else if let Some(v) = meta.strip_prefix("wavelength_nm:") {
                wavelength_nm = serde_json::from_str(v.trim()).map_err(perr)?;
            } else if let Some(v) = meta.strip_prefix("planes:") {
                planes = Some(serde_json::from_str(v.trim()).map_err(perr)?);
            } else if let Some(v) = meta.strip_prefix("sampling:") {
                sampling = Some(serde_json::from_str(v.trim()).map_err(perr)?);
            }
            continue;
        }
        let mut vals = [0.0f64; 12];
        let mut count = 0;
        for tok in trimmed.split_whitespace() {
            if count < 12 {
                vals[count] = tok
                    .parse::<f64>()
                    .map_err(|_| Error::Parse { line: lineno, message: format!("not a number: {tok:?}") })?;
            }
            count += 1;
        }
        if count != 12 {
            return Err(Error::Parse { line: lineno, message: format!("expected 12 columns, found {count}") });
        }
        let input = Ray::new(Vec3::new(vals[0], vals[1], vals[2]), Vec3::new(vals[3], vals[4], vals[5]));
        let out = &vals[6..];
        let output = if out.iter().all(|v| v.is_nan()) {
            None
        } else if out.iter().any(|v| v.is_nan()) {
            return Err(Error::Parse { line: lineno, message: "partially NaN output ray".into() });
        } else {
            Some(Ray::new(Vec3::new(out[0], out[1], out[2]), Vec3::new(out[3], out[4], out[5])))
        };
        records.push(RayRecord { input, output });
    }
    let planes = planes.ok_or(Error::Parse { line: 0, message: "missing '# planes:' header".into() })?;
    Ok(RtfDataset { records, planes, lens_name, wavelength_nm, sampling })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lens::bundled;

    fn free_space_planes() -> PlaneConfig {
        PlaneConfig { input_plane_z: 0.0, output_surface: OutputSurface::Plane { z: 10.0 }, raypass_plane_offset: 5.0 }
    }

    fn small_sampling() -> SamplingConfig {
        SamplingConfig {
            n_field: 4,
            y_max: 2.0,
            n_pupil_radial: 4,
            n_pupil_angular: 6,
            pupil_override: Some((5.0, 1.0)),
            ..Default::default()
        }
    }

    #[test]
    fn free_space_transport() {
        let ds = generate_dataset(&LensPrescription::empty(), &free_space_planes(), &small_sampling()).unwrap();
        assert_eq!(ds.records.len(), 4 * 24);
        for rec in &ds.records {
            let out = rec.output.unwrap();
            assert_eq!(out.direction, rec.input.direction);
            let expect = rec.input.to_plane(10.0).unwrap();
            assert!((out.origin - expect.origin).norm() < 1e-12);
            assert_eq!(rec.input.origin.x, 0.0);
            assert!(rec.input.origin.y >= 0.0);
        }
    }

    #[test]
    fn stop_shadow() {
        let lens = bundled::bare_stop(1.0);
        let planes = PlaneConfig {
            input_plane_z: -5.0,
            output_surface: OutputSurface::Plane { z: 1.0 },
            raypass_plane_offset: 5.0,
        };
        let sampling =
            SamplingConfig { n_field: 2, y_max: 0.5, n_pupil_radial: 8, n_pupil_angular: 8, ..Default::default() };
        let ds = generate_dataset(&lens, &planes, &sampling).unwrap();
        for rec in &ds.records {
            let at_stop = rec.input.to_plane(0.0).unwrap().origin.radial();
            assert_eq!(rec.is_blocked(), at_stop > 1.0, "radius {at_stop}");
        }
        assert!(ds.blocked_count() > 0);
        assert!(ds.blocked_count() < ds.records.len());
    }

    #[test]
    fn text_layout() {
        let mut ds = generate_dataset(&LensPrescription::empty(), &free_space_planes(), &small_sampling()).unwrap();
        ds.records.truncate(1);
        let text = dataset_to_string(&ds);
        let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].split_whitespace().count(), 12);
        ds.records[0].output = None;
        let text = dataset_to_string(&ds);
        let row = text.lines().last().unwrap();
        assert!(row.ends_with("NaN NaN NaN NaN NaN NaN"), "{row}");
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let text = "# planes: {\"input_plane_z\":0.0,\"output_surface\":{\"type\":\"plane\",\"z_mm\":1.0},\"raypass_plane_offset\":1.0}\n1 2 3\n";
        match parse_dataset(text.as_bytes()) {
            Err(Error::Parse { line, message }) => {
                assert_eq!(line, 2);
                assert!(message.contains("12 columns"));
            }
            other => panic!("{other:?}"),
        }
        let text = "# planes: {\"input_plane_z\":0.0,\"output_surface\":{\"type\":\"plane\",\"z_mm\":1.0},\"raypass_plane_offset\":1.0}\n0 0 0 0 0 1 0 0 1 0 x 1\n";
        assert!(matches!(parse_dataset(text.as_bytes()), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn missing_pupil_is_config_error() {
        let lens = LensPrescription::empty();
        let sampling = SamplingConfig { pupil_override: None, ..small_sampling() };
        assert!(matches!(generate_dataset(&lens, &free_space_planes(), &sampling), Err(Error::Config(_))));
    }

    #[test]
    fn zero_raypass_offset_rejected() {
        let planes = PlaneConfig { raypass_plane_offset: 0.0, ..free_space_planes() };
        assert!(generate_dataset(&LensPrescription::empty(), &planes, &small_sampling()).is_err());
    }
}
