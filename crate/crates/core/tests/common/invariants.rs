//! Randomized invariant suites shared by the property tests and the
//! acceptance run. Each suite takes the number of cases and reports the
//! first counterexample as an error string.

use std::sync::OnceLock;

use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestCaseError, TestRng, TestRunner};

use rtfkit::camera::{fit_rtf_model, RayPassMethod, RtfModel};
use rtfkit::dataset::{dataset_to_string, generate_dataset, PlaneConfig, SamplingConfig};
use rtfkit::geometry::{refract, rotate_back, rotate_meridional, Ray, Vec3};
use rtfkit::lens::{bundled, LensPrescription};
use rtfkit::raypass::{min_vol_ellipse, Point2, KHACHIYAN_TOL};

pub type Suite = (&'static str, fn(u32) -> Result<(), String>);

pub const SUITES: [Suite; 5] = [
    ("rotation round trip", rotation_round_trip),
    ("Snell residual", snell_residual),
    ("ellipse containment", ellipse_containment),
    ("equivariance", equivariance),
    ("determinism", determinism),
];

pub fn runner(cases: u32) -> TestRunner {
    let config = Config { cases, failure_persistence: None, max_shrink_iters: 256, ..Config::default() };
    TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha))
}

pub fn unit_vector() -> impl Strategy<Value = Vec3> {
    (-1.0..1.0f64, 0.0..std::f64::consts::TAU).prop_map(|(z, a)| {
        let s = (1.0 - z * z).sqrt();
        Vec3::new(s * a.cos(), s * a.sin(), z)
    })
}

pub fn forward_vector(max_tilt: f64) -> impl Strategy<Value = Vec3> {
    (0.0..max_tilt, 0.0..std::f64::consts::TAU)
        .prop_map(|(t, a)| Vec3::new(t.sin() * a.cos(), t.sin() * a.sin(), t.cos()))
}

/// Origins away from the axis, plus exact on-axis ones one time in ten.
fn origin() -> impl Strategy<Value = Vec3> {
    prop_oneof![
        9 => (-30.0..30.0f64, -30.0..30.0f64, -5.0..5.0f64).prop_map(|(x, y, z)| Vec3::new(x, y, z)),
        1 => (-5.0..5.0f64).prop_map(|z| Vec3::new(0.0, 0.0, z)),
    ]
}

fn close(a: Vec3, b: Vec3, tol: f64) -> bool {
    (a - b).norm() <= tol * (1.0 + a.norm())
}

fn rotation_round_trip(cases: u32) -> Result<(), String> {
    runner(cases)
        .run(&(origin(), unit_vector()), |(o, d)| {
            let ray = Ray::new(o, d);
            let m = rotate_meridional(&ray);
            prop_assert!(m.y_hat >= 0.0);
            let along = Vec3::new(0.0, m.y_hat, o.z);
            let dir = Vec3::new(m.dx_hat, m.dy_hat, d.z);
            let back = rotate_back(along, dir, m.phi);
            prop_assert!(close(back.origin, o, 1e-12), "{:?} vs {:?}", back.origin, o);
            prop_assert!(close(back.direction, d, 1e-12), "{:?} vs {:?}", back.direction, d);
            Ok(())
        })
        .map_err(|e| e.to_string())
}

fn snell_residual(cases: u32) -> Result<(), String> {
    let strategy = (unit_vector(), unit_vector(), 1.0..2.0f64, 1.0..2.0f64);
    runner(cases)
        .run(&strategy, |(d, n, n1, n2)| {
            let normal = if d.dot(n) > 0.0 { -n } else { n };
            prop_assume!(d.dot(normal) < -1e-6);
            let sin_i = d.cross(normal).norm();
            match refract(d, normal, n1, n2) {
                Ok(t) => {
                    let sin_t = t.cross(normal).norm();
                    prop_assert!((n1 * sin_i - n2 * sin_t).abs() < 1e-12, "{} vs {}", n1 * sin_i, n2 * sin_t);
                    prop_assert!((t.norm() - 1.0).abs() < 1e-12);
                    // in the plane of incidence
                    let plane = d.cross(normal);
                    if plane.norm() > 1e-9 {
                        prop_assert!(t.dot(plane.normalized()).abs() < 1e-12);
                    }
                    prop_assert!(t.dot(normal) < 0.0);
                }
                Err(_) => prop_assert!(n1 * sin_i > n2 * (1.0 - 1e-12)),
            }
            Ok(())
        })
        .map_err(|e| e.to_string())
}

fn ellipse_containment(cases: u32) -> Result<(), String> {
    let cloud = (-5.0..5.0f64, 0.1..4.0f64, 0.1..4.0f64, prop::collection::vec((0.0..1.0f64, 0.0..1.0f64), 3..60));
    runner(cases)
        .run(&cloud, |(cy, sx, sy, raw)| {
            let points: Vec<Point2> =
                raw.iter().map(|&(u, v)| Point2::new((u - 0.5) * sx, cy + (v - 0.5) * sy)).collect();
            let e = match min_vol_ellipse(&points, KHACHIYAN_TOL) {
                Ok(e) => e,
                // collinear clouds are legitimately rejected
                Err(_) => return Ok(()),
            };
            for p in &points {
                prop_assert!(e.level(*p) <= 1.0 + 1e-6, "{p:?} at level {}", e.level(*p));
            }
            Ok(())
        })
        .map_err(|e| e.to_string())
}

pub fn test_lens() -> &'static LensPrescription {
    static LENS: OnceLock<LensPrescription> = OnceLock::new();
    LENS.get_or_init(|| bundled::double_gauss().reversed())
}

/// Small double-Gauss camera shared by the suites.
pub fn test_model() -> &'static RtfModel {
    static MODEL: OnceLock<RtfModel> = OnceLock::new();
    MODEL.get_or_init(|| {
        let lens = test_lens();
        let planes = PlaneConfig::for_lens(lens, 0.01, 0.01);
        let sampling =
            SamplingConfig { y_max: 12.0, n_field: 16, n_pupil_radial: 16, n_pupil_angular: 16, ..Default::default() };
        let ds = generate_dataset(lens, &planes, &sampling).expect("dataset");
        fit_rtf_model(&ds, "suite", 5, &RayPassMethod::Ellipse, None).expect("fit").0
    })
}

fn equivariance(cases: u32) -> Result<(), String> {
    let lens = test_lens();
    let model = test_model();
    let front = lens.axial_extent().0 - 1.0;
    let strategy =
        (0.0..12.0f64, 0.0..std::f64::consts::TAU, -1.0..1.0f64, -1.0..1.0f64, forward_vector(0.5), -3.0..3.0f64);
    runner(cases)
        .run(&strategy, |(h, phi, u, v, d, a)| {
            // oracle trace
            let ray = Ray::new(Vec3::new(0.0, h * 0.5, front), d);
            let a_out = lens.trace(&ray).exit();
            let b_out = lens.trace(&ray.rotate_z(a)).exit();
            match (a_out, b_out) {
                (Some(p), Some(q)) => {
                    let p = p.rotate_z(a);
                    prop_assert!(close(p.origin, q.origin, 1e-9) && close(p.direction, q.direction, 1e-9));
                }
                (None, None) => {}
                other => return Err(TestCaseError::fail(format!("blocking differs under rotation: {other:?}"))),
            }

            // fitted camera
            let mut scratch = Vec::new();
            let sensor = Vec3::new(0.0, h, model.sensor_z());
            let r = 12.0 * (u * u + v * v).sqrt().min(1.0);
            let sample = Point2::new(r * (u * 7.0).cos(), h * 0.4 + r * (u * 7.0).sin());
            let sensor_rot = sensor.rotate_z(phi);
            let sample_rot = sample.rotate(phi);
            let first = model.generate_camera_ray(sensor, sample, &mut scratch);
            let second = model.generate_camera_ray(sensor_rot, sample_rot, &mut scratch);
            match (first, second) {
                (Some(p), Some(q)) => {
                    let p = p.rotate_z(phi);
                    prop_assert!(close(p.origin, q.origin, 1e-9), "{:?} vs {:?}", p.origin, q.origin);
                    prop_assert!(close(p.direction, q.direction, 1e-9), "{:?} vs {:?}", p.direction, q.direction);
                }
                (None, None) => {}
                other => return Err(TestCaseError::fail(format!("gate differs under rotation: {other:?}"))),
            }
            Ok(())
        })
        .map_err(|e| e.to_string())
}

fn determinism(cases: u32) -> Result<(), String> {
    let lens = test_lens();
    let model = test_model();
    let planes = PlaneConfig::for_lens(lens, 0.01, 0.01);
    let strategy = (any::<u64>(), 0.5..12.0f64, any::<bool>(), -4.0..4.0f64, -4.0..4.0f64);
    runner(cases)
        .run(&strategy, |(seed, y_max, jitter, px, py)| {
            let s = SamplingConfig {
                seed,
                y_max,
                jitter,
                n_field: 2,
                n_pupil_radial: 2,
                n_pupil_angular: 2,
                ..Default::default()
            };
            let a = generate_dataset(lens, &planes, &s).map_err(|e| TestCaseError::fail(e.to_string()))?;
            let b = generate_dataset(lens, &planes, &s).map_err(|e| TestCaseError::fail(e.to_string()))?;
            prop_assert_eq!(dataset_to_string(&a), dataset_to_string(&b));

            let mut scratch = Vec::new();
            let sensor = Vec3::new(0.0, y_max, model.sensor_z());
            let first = model.generate_camera_ray(sensor, Point2::new(px, py), &mut scratch);
            let second = model.generate_camera_ray(sensor, Point2::new(px, py), &mut Vec::new());
            let bits = |r: Option<Ray>| {
                r.map(|r| {
                    [r.origin.to_array(), r.direction.to_array()]
                        .concat()
                        .iter()
                        .map(|v| v.to_bits())
                        .collect::<Vec<_>>()
                })
            };
            prop_assert_eq!(bits(first), bits(second));
            Ok(())
        })
        .map_err(|e| e.to_string())
}
