//! Ray-pass models: which input rays make it through the lens.
//!
//! Both models live on the ray-pass plane, a plane at a fixed offset from the
//! input plane. Rays leaving one input-plane position are intersected with
//! that plane and the passing subset is described either by an ellipse whose
//! parameters are tabulated against ŷ, or by an intersection of discs whose
//! centers drift linearly with ŷ.

mod circles;
mod ellipse;

pub use circles::{circle_pass, fit_circle_model, propose_breakpoints, CirclePassModel, PassCircle};
pub use ellipse::{
    ellipse_pass, fit_ellipse_table, min_vol_ellipse, Ellipse, EllipseTable, KHACHIYAN_MAX_ITER, KHACHIYAN_TOL,
};

use serde::{Deserialize, Serialize};

use crate::dataset::RtfDataset;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn rotate(self, angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }
}

/// Pass-plane intersections of all rays leaving one input-plane height.
#[derive(Debug, Clone, PartialEq)]
pub struct PassGroup {
    pub y_hat: f64,
    pub passing: Vec<Point2>,
    pub blocked: Vec<Point2>,
}

impl PassGroup {
    pub fn pass_fraction(&self) -> f64 {
        let n = self.passing.len() + self.blocked.len();
        if n == 0 {
            0.0
        } else {
            self.passing.len() as f64 / n as f64
        }
    }
}

/// Advances every input ray to the ray-pass plane and groups the hits by
/// input height, labelled by whether the ray exits the lens.
pub fn project_to_pass_plane(ds: &RtfDataset) -> Vec<PassGroup> {
    let z = ds.planes.raypass_plane_z();
    ds.groups_by_height()
        .into_iter()
        .map(|(y_hat, recs)| {
            let mut g = PassGroup { y_hat, passing: Vec::new(), blocked: Vec::new() };
            for rec in recs {
                let Some(r) = rec.input.to_plane(z) else { continue };
                let p = Point2::new(r.origin.x, r.origin.y);
                if rec.is_blocked() {
                    g.blocked.push(p);
                } else {
                    g.passing.push(p);
                }
            }
            g
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub enum RayPassModel {
    Ellipse(EllipseTable),
    Circles(CirclePassModel),
}

impl RayPassModel {
    pub fn pass_plane_offset(&self) -> f64 {
        match self {
            RayPassModel::Ellipse(t) => t.pass_plane_offset,
            RayPassModel::Circles(c) => c.pass_plane_offset,
        }
    }

    /// Whether a ray starting at height `y_hat` (meridional frame) that
    /// crosses the pass plane at `point` (same frame) gets through.
    pub fn passes(&self, y_hat: f64, point: Point2) -> bool {
        match self {
            RayPassModel::Ellipse(t) => ellipse_pass(t, y_hat, point),
            RayPassModel::Circles(c) => circle_pass(c, y_hat, point),
        }
    }

    /// Largest input height with any passing ray, when the model bounds it.
    pub fn field_extent(&self) -> Option<f64> {
        match self {
            RayPassModel::Ellipse(t) => {
                t.positions.iter().zip(&t.entries).rev().find(|(_, e)| e.is_some()).map(|(p, _)| *p)
            }
            RayPassModel::Circles(c) => c.field_limit,
        }
    }

    pub fn method(&self) -> &'static str {
        match self {
            RayPassModel::Ellipse(_) => "ellipse",
            RayPassModel::Circles(_) => "circles",
        }
    }
}

/// Fraction of records in `ds` whose pass/block label the model gets wrong.
pub fn misclassification_rate(model: &RayPassModel, ds: &RtfDataset) -> f64 {
    let groups = project_to_pass_plane(ds);
    let mut wrong = 0usize;
    let mut total = 0usize;
    for g in &groups {
        wrong += g.passing.iter().filter(|&&p| !model.passes(g.y_hat, p)).count();
        wrong += g.blocked.iter().filter(|&&p| model.passes(g.y_hat, p)).count();
        total += g.passing.len() + g.blocked.len();
    }
    if total == 0 {
        0.0
    } else {
        wrong as f64 / total as f64
    }
}
