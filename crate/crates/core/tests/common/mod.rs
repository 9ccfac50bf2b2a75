#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rtfkit::dataset::{OutputSurface, PlaneConfig, RayRecord, RtfDataset};
use rtfkit::geometry::{Ray, Vec3};
use rtfkit::raypass::{circle_pass, CirclePassModel, PassCircle, Point2};

/// Pass-plane intersections labelled by a known circle model, uniformly
/// scattered over a square around the first circle at each height.
pub fn circle_dataset(truth: &CirclePassModel, heights: &[f64], per_height: usize, seed: u64) -> RtfDataset {
    let offset = truth.pass_plane_offset;
    let main = truth.circles[0];
    let mut records = Vec::with_capacity(heights.len() * per_height);
    for (k, &y_hat) in heights.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(k as u64);
        let half = 1.3 * main.radius;
        let cy = main.offset(y_hat);
        for _ in 0..per_height {
            let p = Point2::new(rng.gen_range(-half..half), cy + rng.gen_range(-half..half));
            let origin = Vec3::new(0.0, y_hat, 0.0);
            let ray = Ray::new(origin, Vec3::new(p.x, p.y - y_hat, offset).normalized());
            let output = circle_pass(truth, y_hat, p).then_some(ray);
            records.push(RayRecord { input: ray, output });
        }
    }
    RtfDataset {
        records,
        planes: PlaneConfig {
            input_plane_z: 0.0,
            output_surface: OutputSurface::Plane { z: 2.0 * offset },
            raypass_plane_offset: offset,
        },
        lens_name: "synthetic".into(),
        wavelength_nm: 550.0,
        sampling: None,
    }
}

pub fn reference_circles() -> CirclePassModel {
    CirclePassModel {
        circles: vec![
            PassCircle { radius: 5.74, sensitivity: 0.72 },
            PassCircle { radius: 42.67, sensitivity: -1.7 },
            PassCircle { radius: 9.65, sensitivity: 0.30 },
        ],
        pass_plane_offset: 17.0,
        field_limit: None,
    }
}
pub mod invariants;
