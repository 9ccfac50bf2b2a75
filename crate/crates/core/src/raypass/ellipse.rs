//! Minimum-volume enclosing ellipses and the per-height ellipse table.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::{project_to_pass_plane, Point2};
use crate::dataset::RtfDataset;
use crate::error::{Error, Result};

pub const KHACHIYAN_TOL: f64 = 1e-6;
pub const KHACHIYAN_MAX_ITER: usize = 10_000;

/// Axis-aligned ellipse centered on the y-axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ellipse {
    pub center_y: f64,
    pub radius_x: f64,
    pub radius_y: f64,
}

impl Ellipse {
    /// Normalized radial coordinate: `<= 1` inside.
    pub fn level(&self, p: Point2) -> f64 {
        let u = p.x / self.radius_x;
        let v = (p.y - self.center_y) / self.radius_y;
        (u * u + v * v).sqrt()
    }

    pub fn contains(&self, p: Point2) -> bool {
        self.level(p) <= 1.0
    }

    pub fn area(&self) -> f64 {
        std::f64::consts::PI * self.radius_x * self.radius_y
    }
}

fn cross(o: Point2, a: Point2, b: Point2) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

/// Convex hull vertices (Andrew's monotone chain), counter-clockwise.
pub(super) fn convex_hull(points: &[Point2]) -> Vec<Point2> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut hull: Vec<Point2> = Vec::with_capacity(pts.len() * 2);
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &Point2>> =
            if pass == 0 { Box::new(pts.iter()) } else { Box::new(pts.iter().rev()) };
        for &p in iter {
            while hull.len() >= start + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull
}

/// Smallest-area ellipse symmetric about the y-axis containing `points`.
///
/// The point set is mirrored about the y-axis, reduced to its convex hull and
/// passed to Khachiyan's algorithm with Todd-Yildirim away steps. The result
/// is finally inflated, if needed, so every input point lies inside.
pub fn min_vol_ellipse(points: &[Point2], tol: f64) -> Result<Ellipse> {
    if points.len() < 3 {
        return Err(Error::Degenerate(format!("need at least 3 points, got {}", points.len())));
    }
    if points.iter().any(|p| !(p.x.is_finite() && p.y.is_finite())) {
        return Err(Error::Degenerate("non-finite point".into()));
    }
    let mut sym: Vec<Point2> = points.iter().flat_map(|&p| [p, Point2::new(-p.x, p.y)]).collect();
    sym = convex_hull(&sym);
    let span = sym.iter().map(|p| p.x.abs().max(p.y.abs())).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let area2: f64 = (0..sym.len()).map(|i| cross(Point2::default(), sym[i], sym[(i + 1) % sym.len()])).sum();
    if sym.len() < 3 || area2.abs() <= 1e-12 * span * span {
        return Err(Error::Degenerate("points are collinear after mirroring about the y-axis".into()));
    }

    // Work in units of `span` for conditioning.
    let q: Vec<Vector3<f64>> = sym.iter().map(|p| Vector3::new(p.x / span, p.y / span, 1.0)).collect();
    let n = q.len();
    let d1 = 3.0;
    let mut u = vec![1.0 / n as f64; n];
    let mut m = vec![0.0; n];
    let mut converged = false;
    for _ in 0..KHACHIYAN_MAX_ITER {
        let mut x = Matrix3::zeros();
        for (qi, &ui) in q.iter().zip(&u) {
            x += qi * qi.transpose() * ui;
        }
        let Some(xi) = x.try_inverse() else {
            return Err(Error::Degenerate("singular moment matrix".into()));
        };
        for (mi, qi) in m.iter_mut().zip(&q) {
            *mi = (qi.transpose() * xi * qi)[0];
        }
        let (j, mj) = m.iter().copied().enumerate().fold((0, f64::MIN), |b, (i, v)| if v > b.1 { (i, v) } else { b });
        let (k, mk) = m.iter().copied().enumerate().filter(|&(i, _)| u[i] > 0.0).fold((0, f64::MAX), |b, (i, v)| {
            if v < b.1 {
                (i, v)
            } else {
                b
            }
        });
        let up = mj / d1 - 1.0;
        let down = 1.0 - mk / d1;
        if up <= tol && down <= tol {
            converged = true;
            break;
        }
        if up >= down {
            let step = (mj - d1) / (d1 * (mj - 1.0));
            for ui in u.iter_mut() {
                *ui *= 1.0 - step;
            }
            u[j] += step;
        } else {
            let step = ((mk - d1) / (d1 * (mk - 1.0))).max(-u[k] / (1.0 - u[k]));
            for ui in u.iter_mut() {
                *ui *= 1.0 - step;
            }
            u[k] += step;
            if u[k] < 1e-300 {
                u[k] = 0.0;
            }
        }
    }
    if !converged {
        log::warn!("minimum-volume ellipse did not reach tolerance {tol} in {KHACHIYAN_MAX_ITER} iterations");
    }

    let mut cy = 0.0;
    let mut syy = 0.0;
    let mut sxx = 0.0;
    for (qi, &ui) in q.iter().zip(&u) {
        cy += ui * qi.y;
        syy += ui * qi.y * qi.y;
        sxx += ui * qi.x * qi.x;
    }
    // Shape matrix inverse is 2 * covariance; symmetry kills the off-diagonal.
    let var_y = syy - cy * cy;
    if !(sxx > 0.0 && var_y > 0.0) {
        return Err(Error::Degenerate("zero-width ellipse".into()));
    }
    let mut e =
        Ellipse { center_y: cy * span, radius_x: (2.0 * sxx).sqrt() * span, radius_y: (2.0 * var_y).sqrt() * span };
    let worst = points.iter().map(|&p| e.level(p)).fold(0.0, f64::max);
    if worst > 1.0 {
        e.radius_x *= worst;
        e.radius_y *= worst;
    }
    Ok(e)
}

/// Ellipses tabulated against input height, with `None` for heights at which
/// no usable set of passing rays exists.
#[derive(Debug, Clone, PartialEq)]
pub struct EllipseTable {
    pub positions: Vec<f64>,
    pub entries: Vec<Option<Ellipse>>,
    pub pass_plane_offset: f64,
}

impl EllipseTable {
    pub fn validate(&self) -> Result<()> {
        if self.positions.len() != self.entries.len() || self.positions.len() < 2 {
            return Err(Error::Schema {
                key: "raypass.positions_mm".into(),
                message: "need at least 2 entries of matching length".into(),
            });
        }
        if self.positions.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Schema {
                key: "raypass.positions_mm".into(),
                message: "must be strictly increasing".into(),
            });
        }
        for e in self.entries.iter().flatten() {
            if !(e.radius_x > 0.0 && e.radius_y > 0.0 && e.center_y.is_finite()) {
                return Err(Error::Schema { key: "raypass.radius_x_mm".into(), message: "radii must be > 0".into() });
            }
        }
        Ok(())
    }

    /// Interpolated ellipse at `y_hat`; `None` where the table says blocked,
    /// including anywhere strictly between a blocked entry and its neighbour.
    pub fn at(&self, y_hat: f64) -> Option<Ellipse> {
        let pos = &self.positions;
        let last = *pos.last()?;
        if y_hat > last {
            return None;
        }
        if y_hat <= pos[0] {
            return self.entries[0];
        }
        let i = pos.partition_point(|&p| p <= y_hat) - 1;
        if i + 1 >= pos.len() {
            return self.entries[i];
        }
        if y_hat == pos[i] {
            return self.entries[i];
        }
        let t = (y_hat - pos[i]) / (pos[i + 1] - pos[i]);
        match (self.entries[i], self.entries[i + 1]) {
            (Some(a), Some(b)) => Some(Ellipse {
                center_y: a.center_y + t * (b.center_y - a.center_y),
                radius_x: a.radius_x + t * (b.radius_x - a.radius_x),
                radius_y: a.radius_y + t * (b.radius_y - a.radius_y),
            }),
            _ => None,
        }
    }
}

/// Fits one ellipse per input height in the dataset.
pub fn fit_ellipse_table(ds: &RtfDataset) -> Result<EllipseTable> {
    let groups = project_to_pass_plane(ds);
    if groups.len() < 2 {
        return Err(Error::FitFailed(format!("need at least 2 field positions, got {}", groups.len())));
    }
    let mut positions = Vec::with_capacity(groups.len());
    let mut entries = Vec::with_capacity(groups.len());
    for g in &groups {
        positions.push(g.y_hat);
        let e = if g.passing.len() >= 3 {
            match min_vol_ellipse(&g.passing, KHACHIYAN_TOL) {
                Ok(e) => Some(e),
                Err(err) => {
                    log::warn!("ellipse at y = {} marked blocked: {err}", g.y_hat);
                    None
                }
            }
        } else {
            None
        };
        entries.push(e);
    }
    if entries.iter().all(Option::is_none) {
        return Err(Error::FitFailed("no input height has enough passing rays".into()));
    }
    Ok(EllipseTable { positions, entries, pass_plane_offset: ds.planes.raypass_plane_offset })
}

pub fn ellipse_pass(table: &EllipseTable, y_hat: f64, point: Point2) -> bool {
    table.at(y_hat).is_some_and(|e| e.contains(point))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ring(cy: f64, rx: f64, ry: f64, n: usize) -> Vec<Point2> {
        (0..n)
            .map(|i| {
                let t = std::f64::consts::TAU * i as f64 / n as f64;
                Point2::new(rx * t.cos(), cy + ry * t.sin())
            })
            .collect()
    }

    #[test]
    fn recovers_sampled_ellipse() {
        let e = min_vol_ellipse(&ring(1.5, 3.0, 2.0, 400), 1e-9).unwrap();
        assert!((e.center_y - 1.5).abs() < 1e-6);
        assert!((e.radius_x - 3.0).abs() < 1e-6);
        assert!((e.radius_y - 2.0).abs() < 1e-6);
    }

    #[test]
    fn four_axis_points() {
        let pts = [Point2::new(1.0, 0.0), Point2::new(-1.0, 0.0), Point2::new(0.0, 2.0), Point2::new(0.0, -2.0)];
        let e = min_vol_ellipse(&pts, 1e-9).unwrap();
        assert!(e.center_y.abs() < 1e-6 && (e.radius_x - 1.0).abs() < 1e-6 && (e.radius_y - 2.0).abs() < 1e-6, "{e:?}");
    }

    #[test]
    fn two_hundred_point_round_trip() {
        let e = min_vol_ellipse(&ring(0.3, 1.2, 0.8, 200), KHACHIYAN_TOL).unwrap();
        assert!(
            (e.center_y - 0.3).abs() < 1e-3 && (e.radius_x - 1.2).abs() < 1e-3 && (e.radius_y - 0.8).abs() < 1e-3,
            "{e:?}"
        );
    }

    #[test]
    fn half_disc_mirrored() {
        // Right half of a unit circle plus interior points: mirroring restores
        // the full circle.
        let mut pts: Vec<Point2> = ring(0.0, 1.0, 1.0, 360).into_iter().filter(|p| p.x >= 0.0).collect();
        pts.push(Point2::new(0.2, 0.1));
        let e = min_vol_ellipse(&pts, 1e-9).unwrap();
        assert!((e.radius_x - 1.0).abs() < 1e-6 && (e.radius_y - 1.0).abs() < 1e-6 && e.center_y.abs() < 1e-6);
    }

    #[test]
    fn triangle_is_contained() {
        let pts = [Point2::new(0.0, 0.0), Point2::new(1.0, 0.0), Point2::new(0.0, 2.0)];
        let e = min_vol_ellipse(&pts, 1e-7).unwrap();
        for p in pts {
            assert!(e.level(p) <= 1.0 + 1e-9);
        }
    }

    #[test]
    fn degenerate_inputs() {
        assert!(matches!(
            min_vol_ellipse(&[Point2::new(1.0, 0.0), Point2::new(2.0, 0.0)], 1e-6),
            Err(Error::Degenerate(_))
        ));
        let axis: Vec<Point2> = (0..5).map(|i| Point2::new(0.0, i as f64)).collect();
        assert!(matches!(min_vol_ellipse(&axis, 1e-6), Err(Error::Degenerate(_))));
        let row: Vec<Point2> = (0..5).map(|i| Point2::new(i as f64, 3.0)).collect();
        assert!(matches!(min_vol_ellipse(&row, 1e-6), Err(Error::Degenerate(_))));
    }

    #[test]
    fn table_interpolation_and_extrapolation() {
        let a = Ellipse { center_y: 0.0, radius_x: 1.0, radius_y: 1.0 };
        let b = Ellipse { center_y: 2.0, radius_x: 3.0, radius_y: 1.0 };
        let t = EllipseTable {
            positions: vec![0.0, 1.0, 2.0],
            entries: vec![Some(a), Some(b), None],
            pass_plane_offset: 1.0,
        };
        let m = t.at(0.5).unwrap();
        assert!((m.center_y - 1.0).abs() < 1e-12 && (m.radius_x - 2.0).abs() < 1e-12);
        assert_eq!(t.at(-1.0), Some(a));
        assert_eq!(t.at(1.0), Some(b));
        assert_eq!(t.at(1.2), None);
        assert_eq!(t.at(2.5), None);
        assert!(ellipse_pass(&t, 0.0, Point2::new(0.5, 0.5)));
        assert!(!ellipse_pass(&t, 0.0, Point2::new(0.9, 0.9)));
    }
}
