//! Image-domain evaluation: relative illumination, edge-spread functions,
//! rendering-noise floor and curve comparison between a fitted camera and
//! the traced lens it approximates.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::{fit_rtf_model, RayPassMethod, RtfModel};
use crate::dataset::{generate_dataset, trace_from_input_plane, PlaneConfig, SamplingConfig};
use crate::error::{Error, Result};
use crate::geometry::{Ray, Vec3};
use crate::lens::LensPrescription;
use crate::raypass::Point2;

/// Camera that traces the real lens (sensor side first) between the same
/// planes an RTF would use.
#[derive(Debug, Clone)]
pub struct OracleCamera {
    pub name: String,
    pub lens: LensPrescription,
    pub planes: PlaneConfig,
    pub film_distance: f64,
}

impl OracleCamera {
    pub fn trace(&self, sensor: Vec3, sample: Point2) -> Option<Ray> {
        let target = Vec3::new(sample.x, sample.y, self.planes.raypass_plane_z());
        let input = Ray::through(sensor, target).to_plane(self.planes.input_plane_z)?;
        let exit = trace_from_input_plane(&self.lens, &input)?;
        self.planes.output_surface.transport(&exit)
    }
}

#[derive(Debug, Clone)]
pub enum CameraAdapter {
    Oracle(OracleCamera),
    Rtf(RtfModel),
}

impl CameraAdapter {
    pub fn name(&self) -> &str {
        match self {
            CameraAdapter::Oracle(o) => &o.name,
            CameraAdapter::Rtf(m) => &m.name,
        }
    }

    pub fn planes(&self) -> &PlaneConfig {
        match self {
            CameraAdapter::Oracle(o) => &o.planes,
            CameraAdapter::Rtf(m) => &m.planes,
        }
    }

    pub fn film_distance(&self) -> f64 {
        match self {
            CameraAdapter::Oracle(o) => o.film_distance,
            CameraAdapter::Rtf(m) => m.film_distance,
        }
    }

    pub fn sensor_z(&self) -> f64 {
        self.planes().input_plane_z - self.film_distance()
    }

    pub fn with_film_distance(&self, d: f64) -> Result<Self> {
        if !(d > 0.0 && d.is_finite()) {
            return Err(Error::Domain(format!("film distance must be > 0, got {d}")));
        }
        Ok(match self {
            CameraAdapter::Oracle(o) => CameraAdapter::Oracle(OracleCamera { film_distance: d, ..o.clone() }),
            CameraAdapter::Rtf(m) => CameraAdapter::Rtf(m.with_film_distance(d)?),
        })
    }

    /// Ray from `sensor` toward `sample` on the ray-pass plane, as it leaves
    /// the output surface; `None` when blocked.
    pub fn generate_camera_ray(&self, sensor: Vec3, sample: Point2, scratch: &mut Vec<f64>) -> Option<Ray> {
        match self {
            CameraAdapter::Oracle(o) => o.trace(sensor, sample),
            CameraAdapter::Rtf(m) => m.generate_camera_ray(sensor, sample, scratch),
        }
    }
}

/// Disc, centered on the axis at `pupil_z`, toward which camera rays are
/// aimed. It is projected onto the ray-pass plane from each sensor point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingDisc {
    pub pupil_z: f64,
    pub radius: f64,
}

impl SamplingDisc {
    /// Paraxial pupil of `lens` (sensor side first), enlarged by `margin`.
    pub fn for_lens(lens: &LensPrescription, planes: &PlaneConfig, margin: f64) -> Result<Self> {
        let p = lens.paraxial_pupil(planes.input_plane_z)?;
        Ok(Self { pupil_z: p.z, radius: p.radius * margin })
    }

    /// Disc on the ray-pass plane covering every pass region in the model.
    pub fn for_model(model: &RtfModel, margin: f64) -> Self {
        use crate::raypass::RayPassModel;
        let reach = match &model.raypass {
            RayPassModel::Ellipse(t) => {
                t.entries.iter().flatten().map(|e| e.center_y.abs() + e.radius_x.max(e.radius_y)).fold(0.0, f64::max)
            }
            RayPassModel::Circles(c) => {
                let y = c.field_limit.unwrap_or(0.0);
                c.circles.iter().map(|k| k.offset(y).abs() + k.radius).fold(f64::INFINITY, f64::min)
            }
        };
        Self { pupil_z: model.planes.raypass_plane_z(), radius: reach * margin }
    }

    /// Center and radius of the disc as seen on the ray-pass plane from
    /// `sensor`.
    pub fn on_pass_plane(&self, sensor: Vec3, pass_z: f64) -> (Point2, f64) {
        let t = (pass_z - sensor.z) / (self.pupil_z - sensor.z);
        (Point2::new(sensor.x * (1.0 - t), sensor.y * (1.0 - t)), self.radius * t.abs())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleMode {
    /// Independent uniform samples; the RNG stream is the sensor-position
    /// index and the position within the stream the sample index.
    Random,
    /// The same deterministic sunflower pattern at every position.
    Grid,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub n_samples: usize,
    pub seed: u64,
    pub mode: SampleMode,
    pub disc: SamplingDisc,
}

/// Unit-disc samples for one sensor position.
pub fn unit_disc_samples(cfg: &EvalConfig, position: usize) -> Vec<Point2> {
    let n = cfg.n_samples;
    match cfg.mode {
        SampleMode::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(position as u64);
            (0..n)
                .map(|_| {
                    let r = rng.gen::<f64>().sqrt();
                    let a = std::f64::consts::TAU * rng.gen::<f64>();
                    Point2::new(r * a.cos(), r * a.sin())
                })
                .collect()
        }
        SampleMode::Grid => {
            let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
            (0..n)
                .map(|k| {
                    let r = ((k as f64 + 0.5) / n as f64).sqrt();
                    let a = golden * k as f64;
                    Point2::new(r * a.cos(), r * a.sin())
                })
                .collect()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalCurve {
    pub label: String,
    pub abscissa: Vec<f64>,
    pub values: Vec<f64>,
    /// One-sigma Monte Carlo uncertainty per value (zero for grid sampling).
    pub sigma: Vec<f64>,
    pub n_samples: usize,
    pub seed: u64,
}

/// Per-sample estimator terms at one sensor point: `f(ray, cos θ)` for
/// every passing sample, zero for blocked ones. Returns the mean, its
/// standard error and the number of samples for which `f` failed.
fn estimate<F>(cam: &CameraAdapter, cfg: &EvalConfig, position: usize, sensor: Vec3, f: F) -> (f64, f64, usize)
where
    F: Fn(&Ray, f64) -> Option<f64>,
{
    let pass_z = cam.planes().raypass_plane_z();
    let (center, radius) = cfg.disc.on_pass_plane(sensor, pass_z);
    let mut scratch = Vec::new();
    let (mut s, mut s2, mut failed) = (0.0, 0.0, 0usize);
    for u in unit_disc_samples(cfg, position) {
        let p = Point2::new(center.x + radius * u.x, center.y + radius * u.y);
        let v = match cam.generate_camera_ray(sensor, p, &mut scratch) {
            Some(ray) => {
                let d = Vec3::new(p.x, p.y, pass_z) - sensor;
                match f(&ray, d.z.abs() / d.norm()) {
                    Some(v) => v,
                    None => {
                        failed += 1;
                        0.0
                    }
                }
            }
            None => 0.0,
        };
        s += v;
        s2 += v * v;
    }
    let n = cfg.n_samples as f64;
    let mean = s / n;
    let var = (s2 / n - mean * mean).max(0.0);
    let se = if cfg.mode == SampleMode::Random && n > 1.0 { (var / (n - 1.0)).sqrt() } else { 0.0 };
    (mean, se, failed)
}

/// Relative illumination at the given sensor heights (mm), normalized to
/// the on-axis value. The estimator is the `cos⁴θ`-weighted pass fraction
/// over the projected sampling disc, whose area is the same at every height.
/// Sigma includes the uncertainty of the on-axis normalization.
pub fn relative_illumination(cam: &CameraAdapter, field_heights: &[f64], cfg: &EvalConfig) -> Result<EvalCurve> {
    let zero = field_heights
        .iter()
        .position(|&h| h == 0.0)
        .ok_or_else(|| Error::Domain("field heights must include 0".into()))?;
    let sz = cam.sensor_z();
    let raw: Vec<(f64, f64)> = field_heights
        .par_iter()
        .enumerate()
        .map(|(i, &h)| {
            let (m, se, _) = estimate(cam, cfg, i, Vec3::new(0.0, h, sz), |_, c| Some(c.powi(4)));
            (m, se)
        })
        .collect();
    let e0 = raw[zero].0;
    if !(e0 > 0.0) {
        return Err(Error::Evaluation(format!("{}: every on-axis ray is blocked", cam.name())));
    }
    Ok(EvalCurve {
        label: cam.name().to_string(),
        abscissa: field_heights.to_vec(),
        values: raw.iter().map(|(m, _)| m / e0).collect(),
        sigma: raw
            .iter()
            .enumerate()
            .map(|(i, &(m, se))| if i == zero { 0.0 } else { (se * se + (m / e0 * raw[zero].1).powi(2)).sqrt() / e0 })
            .collect(),
        n_samples: cfg.n_samples,
        seed: cfg.seed,
    })
}

/// Step-edge scene: radiance 1 where `x >= edge_x` on the object plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeScene {
    pub object_plane_z: f64,
    pub edge_x: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EsfResult {
    /// Min-max normalized curve.
    pub curve: EvalCurve,
    /// Pixel means before normalization.
    pub raw: Vec<f64>,
    /// Passing samples whose output ray never reaches the object plane.
    pub missed: usize,
    pub passed: usize,
}

/// Median of the outer `frac` of values at each end.
fn plateaus(values: &[f64], frac: f64) -> (f64, f64) {
    let k = ((values.len() as f64 * frac).round() as usize).max(1).min(values.len());
    let median = |s: &[f64]| {
        let mut v = s.to_vec();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        if n % 2 == 1 {
            v[n / 2]
        } else {
            0.5 * (v[n / 2 - 1] + v[n / 2])
        }
    };
    (median(&values[..k]), median(&values[values.len() - k..]))
}

/// Index of the numbered sensor position, offset so that ESF and noise
/// runs on the same row use distinct streams from the RI run.
const ROW_STREAM_BASE: usize = 1 << 20;

/// Renders one sensor row (x in µm, y = 0) of a step edge. Geometric optics
/// only.
pub fn edge_spread(
    cam: &CameraAdapter,
    scene: &EdgeScene,
    sensor_xs_um: &[f64],
    cfg: &EvalConfig,
) -> Result<EsfResult> {
    if sensor_xs_um.len() < 3 {
        return Err(Error::Domain("need at least 3 sensor positions".into()));
    }
    let sz = cam.sensor_z();
    let zobj = scene.object_plane_z;
    let per: Vec<(f64, f64, usize, usize)> = sensor_xs_um
        .par_iter()
        .enumerate()
        .map(|(i, &x)| {
            let passed = std::cell::Cell::new(0usize);
            let (m, se, missed) = estimate(cam, cfg, ROW_STREAM_BASE + i, Vec3::new(x * 1e-3, 0.0, sz), |ray, _| {
                passed.set(passed.get() + 1);
                if ray.direction.z <= 0.0 {
                    return None;
                }
                let hit = ray.to_plane(zobj)?;
                if (hit.origin.z - ray.origin.z) * ray.direction.z < 0.0 {
                    return None;
                }
                Some(if hit.origin.x >= scene.edge_x { 1.0 } else { 0.0 })
            });
            (m, se, missed, passed.get())
        })
        .collect();
    let missed: usize = per.iter().map(|p| p.2).sum();
    let passed: usize = per.iter().map(|p| p.3).sum();
    if passed == 0 {
        return Err(Error::Evaluation(format!("{}: no ray reaches the scene", cam.name())));
    }
    if missed * 2 > passed {
        return Err(Error::Evaluation(format!(
            "{}: {missed} of {passed} passing rays never reach the object plane",
            cam.name()
        )));
    }
    if missed > 0 {
        log::warn!("{}: {missed} of {passed} passing rays miss the object plane", cam.name());
    }
    let raw: Vec<f64> = per.iter().map(|p| p.0).collect();
    let (lo, hi) = plateaus(&raw, 0.1);
    let span = hi - lo;
    if !(span.abs() > 1e-12) {
        return Err(Error::Evaluation(format!("{}: edge not resolved (flat plateaus)", cam.name())));
    }
    Ok(EsfResult {
        curve: EvalCurve {
            label: cam.name().to_string(),
            abscissa: sensor_xs_um.to_vec(),
            values: raw.iter().map(|v| (v - lo) / span).collect(),
            sigma: per.iter().map(|p| p.1 / span.abs()).collect(),
            n_samples: cfg.n_samples,
            seed: cfg.seed,
        },
        raw,
        missed,
        passed,
    })
}

/// Standard deviation of the normalized pixel values of a uniform scene
/// rendered on the same row and with the same samples as [`edge_spread`].
pub fn noise_floor(cam: &CameraAdapter, sensor_xs_um: &[f64], cfg: &EvalConfig) -> Result<f64> {
    let sz = cam.sensor_z();
    let vals: Vec<f64> = sensor_xs_um
        .par_iter()
        .enumerate()
        .map(|(i, &x)| estimate(cam, cfg, ROW_STREAM_BASE + i, Vec3::new(x * 1e-3, 0.0, sz), |_, _| Some(1.0)).0)
        .collect();
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    if !(mean > 0.0) {
        return Err(Error::Evaluation(format!("{}: uniform scene renders black", cam.name())));
    }
    let var = vals.iter().map(|v| (v / mean - 1.0).powi(2)).sum::<f64>() / n;
    Ok(var.sqrt())
}

/// Root mean squared difference of `b` resampled (linearly) onto the
/// abscissa of `a`, over their common range.
pub fn rmse_compare(a: &EvalCurve, b: &EvalCurve) -> Result<f64> {
    let (b0, b1) = match (b.abscissa.first(), b.abscissa.last()) {
        (Some(&x0), Some(&x1)) => (x0.min(x1), x0.max(x1)),
        _ => return Err(Error::Domain("empty curve".into())),
    };
    let mut order: Vec<usize> = (0..b.abscissa.len()).collect();
    order.sort_by(|&i, &j| b.abscissa[i].total_cmp(&b.abscissa[j]));
    let bx: Vec<f64> = order.iter().map(|&i| b.abscissa[i]).collect();
    let by: Vec<f64> = order.iter().map(|&i| b.values[i]).collect();
    let interp = |x: f64| {
        let k = bx.partition_point(|&v| v <= x);
        if k == 0 {
            return by[0];
        }
        if k >= bx.len() {
            return by[bx.len() - 1];
        }
        let t = (x - bx[k - 1]) / (bx[k] - bx[k - 1]);
        by[k - 1] + t * (by[k] - by[k - 1])
    };
    let diffs: Vec<f64> =
        a.abscissa.iter().zip(&a.values).filter(|(&x, _)| x >= b0 && x <= b1).map(|(&x, &v)| v - interp(x)).collect();
    if diffs.is_empty() {
        return Err(Error::Domain("curves do not overlap".into()));
    }
    Ok((diffs.iter().map(|d| d * d).sum::<f64>() / diffs.len() as f64).sqrt())
}

/// Sensor positions (µm) centered on 0.
pub fn default_sensor_row(n: usize, pitch_um: f64) -> Vec<f64> {
    let half = (n as f64 - 1.0) / 2.0;
    (0..n).map(|i| (i as f64 - half) * pitch_um).collect()
}

/// Film distance that images the plane `object_plane_z` sharply, from the
/// paraxial matrix of `lens` (sensor side first) between the input plane and
/// the object plane.
pub fn focus_film_distance(lens: &LensPrescription, input_plane_z: f64, object_plane_z: f64) -> Result<f64> {
    let m = lens.paraxial_matrix_between(input_plane_z, object_plane_z);
    let f = -m.b / m.a;
    if !(f > 0.0 && f.is_finite()) {
        return Err(Error::Evaluation(format!(
            "object plane at z = {object_plane_z} has no real image behind the input plane"
        )));
    }
    Ok(f)
}

/// In-focus object distance (from the front vertex) and one twice as far.
/// The near one sits at 100 focal lengths, which keeps the defocus blur of
/// the far one within a few hundred pixels of 1 µm.
pub fn default_object_distances(lens: &LensPrescription) -> [f64; 2] {
    let m = lens.paraxial_matrix();
    object_distances_for_focal_length(if m.c != 0.0 { (1.0 / m.c).abs() } else { 50.0 })
}

pub fn object_distances_for_focal_length(efl: f64) -> [f64; 2] {
    [100.0 * efl, 200.0 * efl]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub planes: PlaneConfig,
    pub sampling: SamplingConfig,
    pub raypass: RayPassSpec,
    pub eval: EvalConfig,
    pub sensor_xs_um: Vec<f64>,
    /// Object distances from the front vertex; the camera focuses on the
    /// first.
    pub object_distances: [f64; 2],
    pub edge_x: f64,
}

/// Serializable form of [`RayPassMethod`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum RayPassSpec {
    Ellipse,
    Circles { breakpoints: Vec<f64> },
}

impl From<&RayPassSpec> for RayPassMethod {
    fn from(s: &RayPassSpec) -> Self {
        match s {
            RayPassSpec::Ellipse => RayPassMethod::Ellipse,
            RayPassSpec::Circles { breakpoints } => RayPassMethod::Circles { breakpoints: breakpoints.clone() },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReportRow {
    pub degree: usize,
    pub object_distance: f64,
    pub rmse: f64,
    pub log10_rmse: f64,
    pub noise_floor: f64,
    pub error: Option<String>,
}

/// Fits an RTF per degree and compares its ESF against the traced lens at
/// both object distances. `lens` is sensor side first.
pub fn rmse_vs_degree_report(
    lens: &LensPrescription,
    cfg: &SweepConfig,
    degrees: &[usize],
) -> Result<Vec<SweepReportRow>> {
    let ds = generate_dataset(lens, &cfg.planes, &cfg.sampling)?;
    let front = lens.last_vertex_z();
    let zin = cfg.planes.input_plane_z;
    let film = focus_film_distance(lens, zin, front + cfg.object_distances[0])?;
    let oracle = CameraAdapter::Oracle(OracleCamera {
        name: "oracle".into(),
        lens: lens.clone(),
        planes: cfg.planes,
        film_distance: film,
    });
    let mut oracle_curves = Vec::new();
    for &d in &cfg.object_distances {
        let scene = EdgeScene { object_plane_z: front + d, edge_x: cfg.edge_x };
        oracle_curves.push(edge_spread(&oracle, &scene, &cfg.sensor_xs_um, &cfg.eval)?);
    }
    let floor = noise_floor(&oracle, &cfg.sensor_xs_um, &cfg.eval)?;
    let method = RayPassMethod::from(&cfg.raypass);
    let mut rows = Vec::new();
    for &degree in degrees {
        let model = fit_rtf_model(&ds, &format!("rtf-degree-{degree}"), degree, &method, Some(film));
        for (k, &d) in cfg.object_distances.iter().enumerate() {
            let scene = EdgeScene { object_plane_z: front + d, edge_x: cfg.edge_x };
            let row = model.as_ref().map_err(|e| e.to_string()).and_then(|(m, _)| {
                let cam = CameraAdapter::Rtf(m.clone());
                let esf = edge_spread(&cam, &scene, &cfg.sensor_xs_um, &cfg.eval).map_err(|e| e.to_string())?;
                rmse_compare(&oracle_curves[k].curve, &esf.curve).map_err(|e| e.to_string())
            });
            rows.push(match row {
                Ok(rmse) => SweepReportRow {
                    degree,
                    object_distance: d,
                    rmse,
                    log10_rmse: rmse.log10(),
                    noise_floor: floor,
                    error: None,
                },
                Err(e) => SweepReportRow {
                    degree,
                    object_distance: d,
                    rmse: f64::NAN,
                    log10_rmse: f64::NAN,
                    noise_floor: floor,
                    error: Some(e),
                },
            });
        }
    }
    Ok(rows)
}

/// Median of each value with its two neighbours (ends kept).
pub fn median3(v: &[f64]) -> Vec<f64> {
    (0..v.len())
        .map(|i| {
            if i == 0 || i + 1 == v.len() {
                v[i]
            } else {
                let mut w = [v[i - 1], v[i], v[i + 1]];
                w.sort_by(f64::total_cmp);
                w[1]
            }
        })
        .collect()
}

// ---- output ------------------------------------------------------------

/// CSV text: `#`-prefixed comment lines, then a header row, then one row per
/// entry. Columns must have equal length.
pub fn csv_string(comments: &[String], headers: &[&str], columns: &[Vec<f64>]) -> String {
    let mut out = String::new();
    for c in comments {
        for line in c.lines() {
            out.push_str("# ");
            out.push_str(line);
            out.push('\n');
        }
    }
    out.push_str(&headers.join(","));
    out.push('\n');
    let n = columns.first().map_or(0, Vec::len);
    for i in 0..n {
        let row: Vec<String> = columns.iter().map(|c| format!("{}", c[i])).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// Line plot of several curves sharing the x axis.
pub fn svg_plot(title: &str, x_label: &str, y_label: &str, curves: &[&EvalCurve]) -> String {
    const W: f64 = 640.0;
    const H: f64 = 400.0;
    const M: f64 = 50.0;
    const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];
    let pts =
        curves.iter().flat_map(|c| c.abscissa.iter().zip(&c.values)).filter(|(x, y)| x.is_finite() && y.is_finite());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for (&x, &y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !(x1 > x0) {
        x1 = x0 + 1.0;
    }
    if !(y1 > y0) {
        y1 = y0 + 1.0;
    }
    let sx = |x: f64| M + (x - x0) / (x1 - x0) * (W - 2.0 * M);
    let sy = |y: f64| H - M - (y - y0) / (y1 - y0) * (H - 2.0 * M);
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" font-family=\"sans-serif\" font-size=\"12\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"20\" text-anchor=\"middle\">{}</text>\n\
         <line x1=\"{M}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n\
         <line x1=\"{M}\" y1=\"{M}\" x2=\"{M}\" y2=\"{}\" stroke=\"black\"/>\n\
         <text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n\
         <text x=\"15\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 15 {})\">{}</text>\n\
         <text x=\"{M}\" y=\"{}\" text-anchor=\"start\">{x0:.4}</text>\n\
         <text x=\"{}\" y=\"{}\" text-anchor=\"end\">{x1:.4}</text>\n\
         <text x=\"{}\" y=\"{}\" text-anchor=\"end\">{y0:.4}</text>\n\
         <text x=\"{}\" y=\"{}\" text-anchor=\"end\">{y1:.4}</text>\n",
        W / 2.0,
        xml_escape(title),
        H - M,
        W - M,
        H - M,
        H - M,
        W / 2.0,
        H - 10.0,
        xml_escape(x_label),
        H / 2.0,
        H / 2.0,
        xml_escape(y_label),
        H - M + 15.0,
        W - M,
        H - M + 15.0,
        M - 4.0,
        H - M,
        M - 4.0,
        M + 4.0,
    );
    for (k, c) in curves.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let path: Vec<String> = c
            .abscissa
            .iter()
            .zip(&c.values)
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|(&x, &y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        s.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
            path.join(" ")
        ));
        s.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" fill=\"{color}\" text-anchor=\"end\">{}</text>\n",
            W - M,
            M + 15.0 * (k as f64 + 1.0),
            xml_escape(&c.label)
        ));
    }
    s.push_str("</svg>\n");
    s
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn curve(x: Vec<f64>, y: Vec<f64>) -> EvalCurve {
        let n = x.len();
        EvalCurve { label: "c".into(), abscissa: x, values: y, sigma: vec![0.0; n], n_samples: 1, seed: 0 }
    }

    #[test]
    fn rmse_examples() {
        let a = curve(vec![0.0, 1.0, 2.0], vec![0.0, 0.0, 0.0]);
        assert_eq!(rmse_compare(&a, &a).unwrap(), 0.0);
        let b = curve(vec![0.0, 1.0, 2.0], vec![1.0, 1.0, 1.0]);
        assert!((rmse_compare(&a, &b).unwrap() - 1.0).abs() < 1e-15);
        // ramp y = 2x against itself shifted by one step of 0.5:
        // difference is the constant 2 * 0.5 over the overlap.
        let xs: Vec<f64> = (0..11).map(|i| i as f64 * 0.5).collect();
        let ramp = curve(xs.clone(), xs.iter().map(|x| 2.0 * x).collect());
        let shifted = curve(xs.iter().map(|x| x + 0.5).collect(), xs.iter().map(|x| 2.0 * x).collect());
        assert!((rmse_compare(&ramp, &shifted).unwrap() - 1.0).abs() < 1e-12);
        let far = curve(vec![10.0, 11.0], vec![0.0, 0.0]);
        assert!(matches!(rmse_compare(&a, &far), Err(Error::Domain(_))));
    }

    #[test]
    fn plateau_medians() {
        let v: Vec<f64> = (0..20).map(|i| if i < 10 { 0.1 } else { 0.9 }).collect();
        assert_eq!(plateaus(&v, 0.1), (0.1, 0.9));
    }

    #[test]
    fn samples_are_reproducible_and_inside() {
        let cfg = EvalConfig {
            n_samples: 500,
            seed: 3,
            mode: SampleMode::Random,
            disc: SamplingDisc { pupil_z: 1.0, radius: 1.0 },
        };
        let a = unit_disc_samples(&cfg, 4);
        assert_eq!(a, unit_disc_samples(&cfg, 4));
        assert_ne!(a, unit_disc_samples(&cfg, 5));
        assert!(a.iter().all(|p| p.x * p.x + p.y * p.y <= 1.0));
        let g = unit_disc_samples(&EvalConfig { mode: SampleMode::Grid, ..cfg }, 0);
        assert_eq!(g, unit_disc_samples(&EvalConfig { mode: SampleMode::Grid, ..cfg }, 9));
    }

    #[test]
    fn disc_projection() {
        let d = SamplingDisc { pupil_z: 10.0, radius: 2.0 };
        let (c, r) = d.on_pass_plane(Vec3::new(0.0, 4.0, -10.0), 0.0);
        assert!((c.y - 2.0).abs() < 1e-12 && (r - 1.0).abs() < 1e-12);
        let (c, r) = d.on_pass_plane(Vec3::new(0.0, 4.0, -10.0), 10.0);
        assert!(c.y.abs() < 1e-12 && (r - 2.0).abs() < 1e-12);
    }

    #[test]
    fn csv_layout() {
        let s = csv_string(&["config: {}".into()], &["a", "b"], &[vec![1.0, 2.0], vec![3.0, 4.5]]);
        assert_eq!(s, "# config: {}\na,b\n1,3\n2,4.5\n");
    }

    #[test]
    fn median_filter() {
        assert_eq!(median3(&[0.0, 5.0, 1.0, 2.0]), vec![0.0, 1.0, 2.0, 2.0]);
    }
}
