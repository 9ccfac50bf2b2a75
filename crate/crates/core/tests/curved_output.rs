use rtfkit::camera::{fit_rtf_model, from_json_str, to_json_string, RayPassMethod};
use rtfkit::dataset::{generate_dataset, OutputSurface, PlaneConfig, RtfDataset, SamplingConfig};
use rtfkit::geometry::Vec3;
use rtfkit::lens::{bundled, LensPrescription};
use rtfkit::poly::{fit_polynomial_map, residuals};
use rtfkit::raypass::Point2;

fn lens() -> LensPrescription {
    bundled::high_bend().reversed()
}

fn sphere_planes(lens: &LensPrescription) -> PlaneConfig {
    PlaneConfig::for_lens(lens, 1.0, 0.01).with_sphere_output(lens.last_vertex_z() - 8.0, 30.0)
}

fn sampling() -> SamplingConfig {
    SamplingConfig { y_max: 4.0, n_field: 20, n_pupil_radial: 24, n_pupil_angular: 24, ..Default::default() }
}

fn backward(ds: &RtfDataset) -> usize {
    ds.passing().filter(|(_, o)| o.direction.z < 0.0).count()
}

#[test]
fn sphere_output_keeps_backward_rays() {
    let lens = lens();
    let ds = generate_dataset(&lens, &sphere_planes(&lens), &sampling()).unwrap();
    let surface = ds.planes.output_surface;
    let n_back = backward(&ds);
    assert!(n_back * 5 > ds.passing().count(), "only {n_back} rays leave backwards");
    for (_, o) in ds.passing() {
        assert!(surface.residual(o.origin) < 1e-9);
        assert!((o.direction.norm() - 1.0).abs() < 1e-9);
    }

    let flat = PlaneConfig::for_lens(&lens, 1.0, 0.01);
    let flat_ds = generate_dataset(&lens, &flat, &sampling()).unwrap();
    assert_eq!(backward(&flat_ds), 0);
    assert!(flat_ds.blocked_count() >= ds.blocked_count() + n_back);
}

#[test]
fn fitted_sphere_model_converges_and_round_trips() {
    let lens = lens();
    let planes = sphere_planes(&lens);
    let ds = generate_dataset(&lens, &planes, &sampling()).unwrap();
    let held_out = generate_dataset(&lens, &planes, &SamplingConfig { grid_offset: 0.5, ..sampling() }).unwrap();
    let rms: Vec<f64> =
        [3, 5, 7].iter().map(|&d| residuals(&fit_polynomial_map(&ds, d).unwrap().0, &held_out).0).collect();
    assert!(rms[0] > rms[1] && rms[1] > rms[2], "{rms:?}");
    assert!(rms[2] < 0.2, "{rms:?}");

    let (model, _) = fit_rtf_model(&ds, "bend", 7, &RayPassMethod::Ellipse, Some(2.0)).unwrap();
    let back = from_json_str(&to_json_string(&model)).unwrap();
    assert_eq!(back, model);
    assert!(matches!(back.planes.output_surface, OutputSurface::Sphere { .. }));

    let mut scratch = Vec::new();
    let sensor = Vec3::new(0.0, 5.0, model.sensor_z());
    let mut backwards = 0;
    let mut generated = 0;
    for i in 0..200 {
        let a = i as f64 * 0.7;
        let sample = Point2::new(1.8 * (i as f64 / 200.0).sqrt() * a.cos(), 1.8 * (i as f64 / 200.0).sqrt() * a.sin());
        if let Some(ray) = model.generate_camera_ray(sensor, sample, &mut scratch) {
            generated += 1;
            assert!(planes.output_surface.residual(ray.origin) < 1e-9);
            assert!((ray.direction.norm() - 1.0).abs() < 1e-12);
            backwards += usize::from(ray.direction.z < 0.0);
        }
    }
    assert!(generated > 100, "{generated}");
    assert!(backwards > 0);
}
