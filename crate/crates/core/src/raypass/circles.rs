//! Circle-intersection ray-pass model.
//!
//! Each aperture of the lens, seen from the pass plane, is a disc of fixed
//! radius whose center moves along y proportionally to the input height. A
//! ray passes when it lies inside every disc.

use serde::{Deserialize, Serialize};

use super::{project_to_pass_plane, PassGroup, Point2};
use crate::dataset::RtfDataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PassCircle {
    pub radius: f64,
    pub sensitivity: f64,
}

impl PassCircle {
    /// Center offset `d = s * ŷ` along y.
    pub fn offset(&self, y_hat: f64) -> f64 {
        self.sensitivity * y_hat
    }

    pub fn contains(&self, y_hat: f64, p: Point2) -> bool {
        let dy = p.y - self.offset(y_hat);
        p.x * p.x + dy * dy <= self.radius * self.radius
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CirclePassModel {
    pub circles: Vec<PassCircle>,
    pub pass_plane_offset: f64,
    /// Largest input height that still passes light; beyond it everything is
    /// blocked. `None` leaves the discs alone to decide.
    pub field_limit: Option<f64>,
}

impl CirclePassModel {
    pub fn validate(&self) -> Result<()> {
        if self.circles.is_empty() {
            return Err(Error::Schema {
                key: "raypass.circles".into(),
                message: "at least one circle required".into(),
            });
        }
        if self.circles.iter().any(|c| !(c.radius > 0.0 && c.radius.is_finite() && c.sensitivity.is_finite())) {
            return Err(Error::Schema {
                key: "raypass.circles".into(),
                message: "radii must be finite and > 0".into(),
            });
        }
        Ok(())
    }
}

pub fn circle_pass(model: &CirclePassModel, y_hat: f64, point: Point2) -> bool {
    if model.field_limit.is_some_and(|lim| y_hat > lim) {
        return false;
    }
    model.circles.iter().all(|c| c.contains(y_hat, point))
}

/// Circle found by [`separate`]: center on the y-axis at `center`.
#[derive(Debug, Clone, Copy)]
struct Separation {
    center: f64,
    radius: f64,
    /// Radial gap between the outermost inside point and the innermost
    /// outside point; negative when the sets overlap.
    margin: f64,
}

fn radial_extremes(c: f64, inside: &[Point2], outside: &[Point2]) -> (f64, f64) {
    let d2 = |p: &Point2| p.x * p.x + (p.y - c) * (p.y - c);
    let r_in = inside.iter().map(d2).fold(0.0, f64::max).sqrt();
    let r_out = outside.iter().map(d2).fold(f64::INFINITY, f64::min).sqrt();
    (r_in, r_out)
}

/// Circle centered on the y-axis that contains `inside`, excludes `outside`
/// and maximizes the radial clearance to both sets.
///
/// A coarse scan over the center position followed by golden-section
/// refinement of the best bracket.
fn separate(inside: &[Point2], outside: &[Point2]) -> Separation {
    let hull = super::ellipse::convex_hull(inside);
    let inside = if hull.len() >= 3 { &hull[..] } else { inside };
    let (lo, hi) = inside.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.y), b.max(p.y)));
    let width = inside.iter().map(|p| p.x.abs()).fold(0.0, f64::max);
    let extent = (hi - lo).max(width).max(1e-9);
    let reach = 40.0 * extent;
    let (a, b) = (lo - reach, hi + reach);
    let margin = |c: f64| {
        let (ri, ro) = radial_extremes(c, inside, outside);
        ro - ri
    };

    const SCAN: usize = 800;
    let step = (b - a) / SCAN as f64;
    let mut best = (a, f64::NEG_INFINITY);
    for i in 0..=SCAN {
        let c = a + step * i as f64;
        let m = margin(c);
        if m > best.1 {
            best = (c, m);
        }
    }
    let (mut l, mut r) = (best.0 - step, best.0 + step);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = r - g * (r - l);
    let mut x2 = l + g * (r - l);
    let (mut f1, mut f2) = (margin(x1), margin(x2));
    while r - l > 1e-10 * extent {
        if f1 < f2 {
            l = x1;
            x1 = x2;
            f1 = f2;
            x2 = l + g * (r - l);
            f2 = margin(x2);
        } else {
            r = x2;
            x2 = x1;
            f2 = f1;
            x1 = r - g * (r - l);
            f1 = margin(x1);
        }
    }
    let c = if f1.max(f2) >= best.1 { 0.5 * (l + r) } else { best.0 };
    let (ri, ro) = radial_extremes(c, inside, outside);
    Separation { center: c, radius: 0.5 * (ri + ro), margin: ro - ri }
}

/// Typical spacing between neighbouring samples of a group.
fn sample_spacing(g: &PassGroup) -> f64 {
    let all = g.passing.iter().chain(&g.blocked);
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    let mut n = 0usize;
    for p in all {
        x0 = x0.min(p.x);
        x1 = x1.max(p.x);
        y0 = y0.min(p.y);
        y1 = y1.max(p.y);
        n += 1;
    }
    if n < 2 {
        return 0.0;
    }
    ((x1 - x0) * (y1 - y0) / n as f64).sqrt()
}

/// Fits the circle-intersection model.
///
/// The first circle comes from the pass region of the smallest sampled input
/// height; its sensitivity is the slope of the fitted center over the leading
/// heights at which the pass region keeps that radius. Each breakpoint then
/// adds one circle separating the passing rays at that height from the
/// blocked rays that the circles found so far fail to explain.
pub fn fit_circle_model(ds: &RtfDataset, breakpoints: &[f64]) -> Result<CirclePassModel> {
    let groups: Vec<PassGroup> = project_to_pass_plane(ds).into_iter().filter(|g| !g.passing.is_empty()).collect();
    fit_groups(&groups, breakpoints, ds.planes.raypass_plane_offset)
}

fn fit_groups(groups: &[PassGroup], breakpoints: &[f64], offset: f64) -> Result<CirclePassModel> {
    let first = groups.first().ok_or_else(|| Error::FitFailed("no passing rays".into()))?;
    if first.blocked.is_empty() {
        return Err(Error::FitFailed(format!("no blocked rays at y = {} to locate the first aperture", first.y_hat)));
    }
    let base = separate(&first.passing, &first.blocked);
    check_margin(&base, first)?;

    let mut bps: Vec<f64> = breakpoints.to_vec();
    bps.sort_by(f64::total_cmp);
    let limit = bps.first().copied().unwrap_or(f64::INFINITY);

    let (mut num, mut den) = (0.0, 0.0);
    if first.y_hat > 0.0 {
        num += base.center * first.y_hat;
        den += first.y_hat * first.y_hat;
    }
    for g in groups.iter().skip(1).take_while(|g| g.y_hat < limit) {
        if g.blocked.is_empty() {
            continue;
        }
        let s = separate(&g.passing, &g.blocked);
        // The separation gaps measure how finely each boundary is sampled.
        let tol = 0.5 * (base.margin.max(0.0) + s.margin.max(0.0)) + 1e-3 * base.radius;
        if s.margin < 0.0 || (s.radius - base.radius).abs() > tol {
            break;
        }
        num += s.center * g.y_hat;
        den += g.y_hat * g.y_hat;
    }
    if den == 0.0 {
        return Err(Error::FitFailed("no off-axis height with an unobstructed first aperture".into()));
    }
    let mut circles = vec![PassCircle { radius: base.radius, sensitivity: num / den }];

    for &b in &bps {
        if b <= 0.0 {
            return Err(Error::FitFailed(format!("breakpoint {b} must be off-axis")));
        }
        let g = groups.iter().min_by(|a, c| (a.y_hat - b).abs().total_cmp(&(c.y_hat - b).abs())).expect("non-empty");
        let circle = fit_at(g, &circles)?;
        circles.push(circle);
    }

    let field_limit = groups.last().map(|g| g.y_hat);
    Ok(CirclePassModel { circles, pass_plane_offset: offset, field_limit })
}

fn check_margin(s: &Separation, g: &PassGroup) -> Result<()> {
    let tol = 0.01 * s.radius + 2.0 * sample_spacing(g);
    if s.margin < -tol {
        return Err(Error::FitFailed(format!(
            "no circle separates passing from blocked rays at y = {} (overlap {:.4} mm)",
            g.y_hat, -s.margin
        )));
    }
    Ok(())
}

/// One new circle at group `g`, given the circles already known.
fn fit_at(g: &PassGroup, known: &[PassCircle]) -> Result<PassCircle> {
    if g.y_hat == 0.0 {
        return Err(Error::FitFailed("breakpoint at the optical axis".into()));
    }
    let unexplained = unexplained(g, known);
    if unexplained.is_empty() {
        return Err(Error::FitFailed(format!("no newly blocked rays at y = {}", g.y_hat)));
    }
    let s = separate(&g.passing, &unexplained);
    check_margin(&s, g)?;
    Ok(PassCircle { radius: s.radius, sensitivity: s.center / g.y_hat })
}

/// Blocked points of `g` that none of the `known` circles accounts for.
fn unexplained(g: &PassGroup, known: &[PassCircle]) -> Vec<Point2> {
    let guard = 3.0 * sample_spacing(g);
    g.blocked
        .iter()
        .copied()
        .filter(|&p| {
            known.iter().all(|c| {
                let dy = p.y - c.offset(g.y_hat);
                (p.x * p.x + dy * dy).sqrt() < c.radius - guard
            })
        })
        .collect()
}

/// Suggests breakpoints by growing the model one circle at a time.
///
/// Starting from the first aperture, the heights are scanned for the first
/// one where the current circles let through more than `threshold` of the
/// rays that are actually blocked. That onset marks a kink in the pass
/// fraction; the breakpoint goes halfway between it and the last height that
/// still passes light, where the new aperture's edge is well exposed.
pub fn propose_breakpoints(ds: &RtfDataset, max_circles: usize) -> Vec<f64> {
    const THRESHOLD: f64 = 0.01;
    let groups: Vec<PassGroup> = project_to_pass_plane(ds).into_iter().filter(|g| !g.passing.is_empty()).collect();
    let offset = ds.planes.raypass_plane_offset;
    let Some(last) = groups.last().map(|g| g.y_hat) else { return Vec::new() };
    let errors = |m: &CirclePassModel| -> usize {
        groups
            .iter()
            .map(|g| {
                g.blocked.iter().filter(|&&p| circle_pass(m, g.y_hat, p)).count()
                    + g.passing.iter().filter(|&&p| !circle_pass(m, g.y_hat, p)).count()
            })
            .sum()
    };
    let mut bps: Vec<f64> = Vec::new();
    let Ok(mut model) = fit_groups(&groups, &bps, offset) else { return bps };
    while bps.len() + 1 < max_circles {
        let onset = groups.iter().find(|g| {
            let total = g.passing.len() + g.blocked.len();
            let false_pass = g.blocked.iter().filter(|&&p| circle_pass(&model, g.y_hat, p)).count();
            false_pass as f64 > THRESHOLD * total as f64
        });
        let Some(onset) = onset else { break };
        let target = 0.5 * (onset.y_hat + last);
        let mut candidates: Vec<f64> =
            groups.iter().map(|g| g.y_hat).filter(|&y| y >= onset.y_hat && y > 0.0 && !bps.contains(&y)).collect();
        candidates.sort_by(|a, b| (a - target).abs().total_cmp(&(b - target).abs()));
        let current = errors(&model);
        let accepted = candidates.into_iter().find_map(|b| {
            let mut trial = bps.clone();
            trial.push(b);
            trial.sort_by(f64::total_cmp);
            let m = fit_groups(&groups, &trial, offset).ok()?;
            (errors(&m) < current).then_some((trial, m))
        });
        let Some((trial, m)) = accepted else { break };
        bps = trial;
        model = m;
    }
    bps
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_circle_containment() {
        let m = CirclePassModel {
            circles: vec![PassCircle { radius: 1.0, sensitivity: 0.0 }],
            pass_plane_offset: 1.0,
            field_limit: None,
        };
        assert!(circle_pass(&m, 0.0, Point2::new(0.0, 0.0)));
        assert!(!circle_pass(&m, 0.0, Point2::new(0.0, 1.5)));
    }

    #[test]
    fn offset_is_sensitivity_times_height() {
        assert!((PassCircle { radius: 1.0, sensitivity: 0.72 }.offset(2.0) - 1.44).abs() < 1e-15);
    }

    #[test]
    fn field_limit_blocks_beyond() {
        let m = CirclePassModel {
            circles: vec![PassCircle { radius: 10.0, sensitivity: 0.0 }],
            pass_plane_offset: 1.0,
            field_limit: Some(3.0),
        };
        assert!(circle_pass(&m, 3.0, Point2::default()));
        assert!(!circle_pass(&m, 3.1, Point2::default()));
    }

    #[test]
    fn separation_of_concentric_rings() {
        let ring = |r: f64, c: f64| -> Vec<Point2> {
            (0..720)
                .map(|i| {
                    let t = std::f64::consts::TAU * i as f64 / 720.0;
                    Point2::new(r * t.cos(), c + r * t.sin())
                })
                .collect()
        };
        let s = separate(&ring(2.0, 1.5), &ring(2.2, 1.5));
        assert!(
            (s.center - 1.5).abs() < 1e-6 && (s.radius - 2.1).abs() < 1e-6 && (s.margin - 0.2).abs() < 1e-6,
            "{s:?}"
        );
    }
}
