mod common;

use proptest::prelude::*;

use common::invariants::{forward_vector, test_lens, test_model, SUITES};
use rtfkit::dataset::{dataset_to_string, parse_dataset, OutputSurface, PlaneConfig, RayRecord, RtfDataset};
use rtfkit::geometry::{intersect_sphere, rotate_meridional, Ray, SphereHit, Vec3};
use rtfkit::lens::bundled;
use rtfkit::raypass::{circle_pass, CirclePassModel, PassCircle, Point2};

const CASES: u32 = 10_000;

fn suite(name: &str) {
    let (_, run) = SUITES.iter().find(|(n, _)| *n == name).unwrap();
    run(CASES).unwrap();
}

#[test]
fn rotation_round_trip() {
    suite("rotation round trip");
}

#[test]
fn snell_residual() {
    suite("Snell residual");
}

#[test]
fn ellipse_containment() {
    suite("ellipse containment");
}

#[test]
fn equivariance() {
    suite("equivariance");
}

#[test]
fn determinism() {
    suite("determinism");
}

fn circles() -> impl Strategy<Value = CirclePassModel> {
    prop::collection::vec((1.0..20.0f64, -2.0..2.0f64), 1..4).prop_map(|c| CirclePassModel {
        circles: c.into_iter().map(|(radius, sensitivity)| PassCircle { radius, sensitivity }).collect(),
        pass_plane_offset: 10.0,
        field_limit: None,
    })
}

fn point() -> impl Strategy<Value = Point2> {
    (-20.0..20.0f64, -20.0..20.0f64).prop_map(|(x, y)| Point2::new(x, y))
}

fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![any::<f64>().prop_filter("finite", |v| v.is_finite()), -100.0..100.0f64, Just(0.0), Just(-0.0)]
}

fn record() -> impl Strategy<Value = RayRecord> {
    let ray = || {
        prop::array::uniform6(finite()).prop_map(|a| Ray::new(Vec3::new(a[0], a[1], a[2]), Vec3::new(a[3], a[4], a[5])))
    };
    (ray(), prop::option::of(ray())).prop_map(|(input, output)| RayRecord { input, output })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: CASES, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn sphere_hits_lie_on_the_sphere(o in (-5.0..5.0f64, -5.0..5.0f64, -10.0..-1.0f64), d in forward_vector(1.2), r in prop_oneof![-50.0..-2.0f64, 2.0..50.0f64]) {
        let ray = Ray::new(Vec3::new(o.0, o.1, o.2), d);
        if let SphereHit::Hit { point, normal } = intersect_sphere(&ray, 0.0, r, r.abs()) {
            let c = Vec3::new(0.0, 0.0, r);
            prop_assert!(((point - c).norm() - r.abs()).abs() < 1e-9);
            prop_assert!((normal.norm() - 1.0).abs() < 1e-12);
            prop_assert!(normal.dot(d) <= 0.0);
            prop_assert!((point.z).abs() <= r.abs() + 1e-9);
        }
    }

    #[test]
    fn lens_trace_is_reversible(k in 0usize..3, x in -3.0..3.0f64, y in -3.0..3.0f64, d in forward_vector(0.3)) {
        let lens = &bundled::all()[k];
        let l = lens.last_vertex_z();
        let r = Ray::new(Vec3::new(x, y, -2.0), d);
        if let Some(s) = lens.trace(&r).exit() {
            let mirror = |p: Vec3| Vec3::new(p.x, p.y, l - p.z);
            let flip = |v: Vec3| Vec3::new(-v.x, -v.y, v.z);
            let start = Ray::new(mirror(s.origin) - flip(s.direction), flip(s.direction));
            let back = lens.reversed().trace(&start).exit();
            prop_assume!(back.is_some());
            let back = back.unwrap().to_plane(l + 2.0).unwrap();
            prop_assert!((back.origin - mirror(r.origin)).norm() < 1e-9, "{:?}", back.origin);
            prop_assert!((back.direction - flip(r.direction)).norm() < 1e-9);
        }
    }

    #[test]
    fn camera_rays_pass_the_gate_and_point_forward(h in 0.0..12.0f64, u in -14.0..14.0f64, v in -14.0..14.0f64) {
        let model = test_model();
        let sensor = Vec3::new(0.0, h, model.sensor_z());
        let sample = Point2::new(u, v);
        if let Some(ray) = model.generate_camera_ray(sensor, sample, &mut Vec::new()) {
            let d = ray.direction;
            prop_assert!((d.z - (1.0 - d.x * d.x - d.y * d.y).sqrt()).abs() < 1e-9);
            prop_assert!(model.planes.output_surface.residual(ray.origin) < 1e-9);
            let target = Vec3::new(u, v, model.raypass_plane_z());
            let input = Ray::through(sensor, target).to_plane(model.planes.input_plane_z).unwrap();
            let m = rotate_meridional(&input);
            prop_assert!(model.raypass.passes(m.y_hat, sample.rotate(m.phi)));
        }
    }

    #[test]
    fn circle_regions_are_convex(model in circles(), y_hat in 0.0..5.0f64, a in point(), b in point()) {
        if circle_pass(&model, y_hat, a) && circle_pass(&model, y_hat, b) {
            let mid = Point2::new(0.5 * (a.x + b.x), 0.5 * (a.y + b.y));
            prop_assert!(circle_pass(&model, y_hat, mid));
        }
    }

    #[test]
    fn shrinking_a_circle_never_unblocks(model in circles(), y_hat in 0.0..5.0f64, p in point(), k in 0usize..3, f in 0.0..1.0f64) {
        let mut smaller = model.clone();
        let k = k % smaller.circles.len();
        smaller.circles[k].radius *= f;
        if !circle_pass(&model, y_hat, p) {
            prop_assert!(!circle_pass(&smaller, y_hat, p));
        }
    }

    #[test]
    fn dataset_text_round_trips_bit_exactly(records in prop::collection::vec(record(), 0..8)) {
        let ds = RtfDataset {
            records,
            planes: PlaneConfig { input_plane_z: -0.01, output_surface: OutputSurface::Sphere { center_z: 1.5, radius: 7.25 }, raypass_plane_offset: 3.0 },
            lens_name: "random \"quoted\" name".into(),
            wavelength_nm: 587.56,
            sampling: None,
        };
        let text = dataset_to_string(&ds);
        let back = parse_dataset(text.as_bytes()).unwrap();
        prop_assert_eq!(dataset_to_string(&back), text);
        prop_assert_eq!(back.records.len(), ds.records.len());
        for (a, b) in ds.records.iter().zip(&back.records) {
            let bits = |v: [f64; 6]| v.map(f64::to_bits);
            prop_assert_eq!(bits(a.input_array()), bits(b.input_array()));
            prop_assert_eq!(a.output.is_none(), b.output.is_none());
            if a.output.is_some() {
                prop_assert_eq!(bits(a.output_array()), bits(b.output_array()));
            }
        }
    }

    #[test]
    fn oracle_trace_is_rotationally_symmetric(x in -4.0..4.0f64, y in -4.0..4.0f64, d in forward_vector(0.6), phi in -3.2..3.2f64) {
        let lens = test_lens();
        let r = Ray::new(Vec3::new(x, y, -1.0), d);
        match (lens.trace(&r).exit(), lens.trace(&r.rotate_z(phi)).exit()) {
            (Some(a), Some(b)) => {
                let a = a.rotate_z(phi);
                prop_assert!((a.origin - b.origin).norm() < 1e-9 && (a.direction - b.direction).norm() < 1e-9);
            }
            (None, None) => {}
            (a, b) => prop_assert!(false, "{:?} vs {:?}", a, b),
        }
    }
}
