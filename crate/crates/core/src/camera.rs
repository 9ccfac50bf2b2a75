//! Camera model built from a fitted ray-transfer function: planes, polynomial
//! map, ray-pass model and film distance, with JSON persistence.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{OutputSurface, PlaneConfig, RtfDataset};
use crate::error::{Error, Result};
use crate::geometry::{rotate_back, rotate_meridional, Ray, Vec3};
use crate::poly::{fit_polynomial_map, FitReport, MonomialBasis, PolynomialMap};
use crate::raypass::{
    fit_circle_model, fit_ellipse_table, CirclePassModel, Ellipse, EllipseTable, PassCircle, Point2, RayPassModel,
};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct RtfModel {
    pub name: String,
    pub lens_name: String,
    pub wavelength_nm: f64,
    /// Axial distance from the sensor to the input plane.
    pub film_distance: f64,
    pub planes: PlaneConfig,
    pub polymap: PolynomialMap,
    pub raypass: RayPassModel,
}

impl RtfModel {
    pub fn validate(&self) -> Result<()> {
        self.planes.validate()?;
        self.polymap.validate()?;
        if !(self.film_distance > 0.0 && self.film_distance.is_finite()) {
            return Err(Error::Schema { key: "film_distance_mm".into(), message: "must be > 0".into() });
        }
        let plane_z = match self.planes.output_surface {
            OutputSurface::Plane { z } => Some(z),
            OutputSurface::Sphere { .. } => None,
        };
        if plane_z != self.polymap.plane_output_z {
            return Err(Error::Schema {
                key: "planes.output".into(),
                message: "polynomial output convention does not match the output surface".into(),
            });
        }
        if self.raypass.pass_plane_offset() != self.planes.raypass_plane_offset {
            return Err(Error::Schema {
                key: "planes.raypass_offset_mm".into(),
                message: "ray-pass model was fitted on a different pass plane".into(),
            });
        }
        match &self.raypass {
            RayPassModel::Ellipse(t) => t.validate(),
            RayPassModel::Circles(c) => c.validate(),
        }
    }

    pub fn sensor_z(&self) -> f64 {
        self.planes.input_plane_z - self.film_distance
    }

    pub fn raypass_plane_z(&self) -> f64 {
        self.planes.raypass_plane_z()
    }

    /// Copy with a new film distance; nothing else changes.
    pub fn with_film_distance(&self, d: f64) -> Result<Self> {
        if !(d > 0.0 && d.is_finite()) {
            return Err(Error::Domain(format!("film distance must be > 0, got {d}")));
        }
        Ok(Self { film_distance: d, ..self.clone() })
    }

    /// Traces a ray from `sensor_point` toward `pupil_sample` (an (x, y)
    /// point on the ray-pass plane) through the fitted lens. `None` when the
    /// ray-pass model blocks it.
    pub fn generate_camera_ray(&self, sensor_point: Vec3, pupil_sample: Point2, scratch: &mut Vec<f64>) -> Option<Ray> {
        let target = Vec3::new(pupil_sample.x, pupil_sample.y, self.raypass_plane_z());
        let input = Ray::through(sensor_point, target).to_plane(self.planes.input_plane_z)?;
        let m = rotate_meridional(&input);
        let pass = Point2::new(pupil_sample.x, pupil_sample.y).rotate(m.phi);
        if !self.raypass.passes(m.y_hat, pass) {
            return None;
        }
        let o = self.polymap.eval_with(m.inputs(), scratch);
        let mut origin = Vec3::new(o[0], o[1], o[2]);
        let mut direction = Vec3::new(o[3], o[4], o[5]);
        match self.planes.output_surface {
            OutputSurface::Plane { .. } => {
                if o[3] * o[3] + o[4] * o[4] >= 1.0 {
                    return None;
                }
            }
            OutputSurface::Sphere { center_z, radius } => {
                let c = Vec3::new(0.0, 0.0, center_z);
                let r = (origin - c).norm();
                if !(r > 0.0) || !(direction.norm() > 0.0) {
                    return None;
                }
                origin = c + (origin - c) * (radius / r);
                direction = direction.normalized();
            }
        }
        let ray = rotate_back(origin, direction, m.phi);
        (ray.origin.is_finite() && ray.direction.is_finite()).then_some(ray)
    }
}

pub fn set_film_distance(model: &RtfModel, d: f64) -> Result<RtfModel> {
    model.with_film_distance(d)
}

/// Film distance that focuses the fitted lens at infinity, from the linear
/// part of the map: rays leaving one sensor point exit parallel.
pub fn infinity_focus_distance(map: &PolynomialMap) -> Result<f64> {
    let [_, _, c, d] = map.meridional_jacobian();
    let f = -d / c;
    if !(c.abs() > 1e-12 && f > 0.0 && f.is_finite()) {
        return Err(Error::FitFailed(format!(
            "fitted map has no positive infinity-focus distance (C = {c:e}, D = {d:e})"
        )));
    }
    Ok(f)
}

#[derive(Debug, Clone, PartialEq)]
pub enum RayPassMethod {
    Ellipse,
    Circles { breakpoints: Vec<f64> },
}

/// Fits the polynomial map and the ray-pass model on one dataset and
/// assembles the camera. `film_distance` defaults to infinity focus.
pub fn fit_rtf_model(
    ds: &RtfDataset,
    name: &str,
    degree: usize,
    method: &RayPassMethod,
    film_distance: Option<f64>,
) -> Result<(RtfModel, FitReport)> {
    let (polymap, report) = fit_polynomial_map(ds, degree)?;
    let raypass = match method {
        RayPassMethod::Ellipse => RayPassModel::Ellipse(fit_ellipse_table(ds)?),
        RayPassMethod::Circles { breakpoints } => RayPassModel::Circles(fit_circle_model(ds, breakpoints)?),
    };
    let film_distance = match film_distance {
        Some(d) => d,
        None => infinity_focus_distance(&polymap)?,
    };
    let model = RtfModel {
        name: name.to_string(),
        lens_name: ds.lens_name.clone(),
        wavelength_nm: ds.wavelength_nm,
        film_distance,
        planes: ds.planes,
        polymap,
        raypass,
    };
    model.validate()?;
    Ok((model, report))
}

// ---- JSON -------------------------------------------------------------

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    schema_version: u32,
    name: String,
    lens_name: String,
    wavelength_nm: f64,
    film_distance_mm: f64,
    planes: PlanesFile,
    polynomial: PolynomialFile,
    raypass: RayPassFile,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PlanesFile {
    input_z_mm: f64,
    output: OutputSurface,
    raypass_offset_mm: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PolynomialFile {
    degree: usize,
    input_scale: [f64; 3],
    exponents: Vec<[u32; 3]>,
    coefficients: CoefficientsFile,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CoefficientsFile {
    x: Vec<f64>,
    y: Vec<f64>,
    z: Vec<f64>,
    dx: Vec<f64>,
    dy: Vec<f64>,
    dz: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case", deny_unknown_fields)]
enum RayPassFile {
    Ellipse {
        positions_mm: Vec<f64>,
        center_y_mm: Vec<f64>,
        radius_x_mm: Vec<f64>,
        radius_y_mm: Vec<f64>,
        blocked: Vec<bool>,
    },
    Circles {
        circles: Vec<CircleFile>,
        /// Optional: input height beyond which everything is blocked.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        field_limit_mm: Option<f64>,
    },
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CircleFile {
    radius_mm: f64,
    sensitivity: f64,
}

impl From<&RtfModel> for ModelFile {
    fn from(m: &RtfModel) -> Self {
        let c = &m.polymap.coefficients;
        let raypass = match &m.raypass {
            RayPassModel::Ellipse(t) => {
                let get = |f: fn(&Ellipse) -> f64| t.entries.iter().map(|e| e.as_ref().map_or(0.0, f)).collect();
                RayPassFile::Ellipse {
                    positions_mm: t.positions.clone(),
                    center_y_mm: get(|e| e.center_y),
                    radius_x_mm: get(|e| e.radius_x),
                    radius_y_mm: get(|e| e.radius_y),
                    blocked: t.entries.iter().map(Option::is_none).collect(),
                }
            }
            RayPassModel::Circles(cm) => RayPassFile::Circles {
                circles: cm
                    .circles
                    .iter()
                    .map(|c| CircleFile { radius_mm: c.radius, sensitivity: c.sensitivity })
                    .collect(),
                field_limit_mm: cm.field_limit,
            },
        };
        ModelFile {
            schema_version: SCHEMA_VERSION,
            name: m.name.clone(),
            lens_name: m.lens_name.clone(),
            wavelength_nm: m.wavelength_nm,
            film_distance_mm: m.film_distance,
            planes: PlanesFile {
                input_z_mm: m.planes.input_plane_z,
                output: m.planes.output_surface,
                raypass_offset_mm: m.planes.raypass_plane_offset,
            },
            polynomial: PolynomialFile {
                degree: m.polymap.basis.degree(),
                input_scale: m.polymap.input_scale,
                exponents: m.polymap.basis.exponents().to_vec(),
                coefficients: CoefficientsFile {
                    x: c[0].clone(),
                    y: c[1].clone(),
                    z: c[2].clone(),
                    dx: c[3].clone(),
                    dy: c[4].clone(),
                    dz: c[5].clone(),
                },
            },
            raypass,
        }
    }
}

impl TryFrom<ModelFile> for RtfModel {
    type Error = Error;

    fn try_from(f: ModelFile) -> Result<Self> {
        let planes = PlaneConfig {
            input_plane_z: f.planes.input_z_mm,
            output_surface: f.planes.output,
            raypass_plane_offset: f.planes.raypass_offset_mm,
        };
        let basis = MonomialBasis::from_exponents(f.polynomial.degree, f.polynomial.exponents)?;
        let k = f.polynomial.coefficients;
        let plane_output_z = match planes.output_surface {
            OutputSurface::Plane { z } => Some(z),
            OutputSurface::Sphere { .. } => None,
        };
        let polymap = PolynomialMap {
            basis,
            input_scale: f.polynomial.input_scale,
            coefficients: [k.x, k.y, k.z, k.dx, k.dy, k.dz],
            plane_output_z,
        };
        let offset = planes.raypass_plane_offset;
        let raypass = match f.raypass {
            RayPassFile::Ellipse { positions_mm, center_y_mm, radius_x_mm, radius_y_mm, blocked } => {
                let n = positions_mm.len();
                for (key, len) in [
                    ("raypass.center_y_mm", center_y_mm.len()),
                    ("raypass.radius_x_mm", radius_x_mm.len()),
                    ("raypass.radius_y_mm", radius_y_mm.len()),
                    ("raypass.blocked", blocked.len()),
                ] {
                    if len != n {
                        return Err(Error::Schema {
                            key: key.into(),
                            message: format!("expected {n} entries, found {len}"),
                        });
                    }
                }
                let entries = (0..n)
                    .map(|i| {
                        (!blocked[i]).then_some(Ellipse {
                            center_y: center_y_mm[i],
                            radius_x: radius_x_mm[i],
                            radius_y: radius_y_mm[i],
                        })
                    })
                    .collect();
                RayPassModel::Ellipse(EllipseTable { positions: positions_mm, entries, pass_plane_offset: offset })
            }
            RayPassFile::Circles { circles, field_limit_mm } => RayPassModel::Circles(CirclePassModel {
                circles: circles
                    .into_iter()
                    .map(|c| PassCircle { radius: c.radius_mm, sensitivity: c.sensitivity })
                    .collect(),
                pass_plane_offset: offset,
                field_limit: field_limit_mm,
            }),
        };
        let model = RtfModel {
            name: f.name,
            lens_name: f.lens_name,
            wavelength_nm: f.wavelength_nm,
            film_distance: f.film_distance_mm,
            planes,
            polymap,
            raypass,
        };
        model.validate()?;
        Ok(model)
    }
}

pub fn to_json_string(model: &RtfModel) -> String {
    serde_json::to_string_pretty(&ModelFile::from(model)).expect("model serializes")
}

/// Extracts the offending key from a serde error message, if it names one.
fn serde_key(msg: &str) -> String {
    for marker in ["missing field `", "unknown field `", "unknown variant `"] {
        if let Some(rest) = msg.split(marker).nth(1) {
            if let Some(key) = rest.split('`').next() {
                return key.to_string();
            }
        }
    }
    String::new()
}

pub fn from_json_str(s: &str) -> Result<RtfModel> {
    let value: serde_json::Value =
        serde_json::from_str(s).map_err(|e| Error::Schema { key: String::new(), message: e.to_string() })?;
    match value.get("schema_version") {
        None => return Err(Error::Schema { key: "schema_version".into(), message: "missing field".into() }),
        Some(v) => {
            let found = v.as_u64().ok_or_else(|| Error::Schema {
                key: "schema_version".into(),
                message: format!("expected a non-negative integer, found {v}"),
            })?;
            if found != SCHEMA_VERSION as u64 {
                return Err(Error::Version { found, expected: SCHEMA_VERSION as u64 });
            }
        }
    }
    let file: ModelFile = serde_json::from_value(value).map_err(|e| {
        let message = e.to_string();
        Error::Schema { key: serde_key(&message), message }
    })?;
    RtfModel::try_from(file)
}

pub fn save_rtf_json(model: &RtfModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, to_json_string(model) + "\n").map_err(|e| Error::io(path, e))
}

pub fn load_rtf_json(path: impl AsRef<Path>) -> Result<RtfModel> {
    let path = path.as_ref();
    let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_json_str(&s)
}
