//! Polynomial ray-transfer function: six polynomials in the reduced input
//! `(ŷ, d̂x, d̂y)` predicting the output ray `(x, y, z, dx, dy, dz)`.

use rayon::prelude::*;

use crate::dataset::{OutputSurface, RtfDataset};
use crate::error::{Error, Result};
use crate::geometry::{rotate_back, rotate_meridional, MeridionalRay, Ray, Vec3};
use crate::lstsq::StreamingQr;

pub const OUTPUT_NAMES: [&str; 6] = ["x", "y", "z", "dx", "dy", "dz"];

/// Relative pivot size below which a basis column counts as dependent.
const RANK_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct MonomialBasis {
    degree: usize,
    exponents: Vec<[u32; 3]>,
}

impl MonomialBasis {
    /// All exponent triples of total degree at most `degree`, ordered by total
    /// degree and then lexicographically (higher power of ŷ first).
    pub fn new(degree: usize) -> Self {
        let mut exponents = Vec::new();
        for total in 0..=degree as u32 {
            for i in (0..=total).rev() {
                for j in (0..=total - i).rev() {
                    exponents.push([i, j, total - i - j]);
                }
            }
        }
        Self { degree, exponents }
    }

    /// Rebuilds a basis from stored exponents, checking they match the
    /// canonical ordering for `degree`.
    pub fn from_exponents(degree: usize, exponents: Vec<[u32; 3]>) -> Result<Self> {
        let canonical = Self::new(degree);
        if canonical.exponents != exponents {
            return Err(Error::Schema {
                key: "polynomial.exponents".into(),
                message: format!("not the canonical basis for degree {degree}"),
            });
        }
        Ok(canonical)
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn exponents(&self) -> &[[u32; 3]] {
        &self.exponents
    }

    pub fn len(&self) -> usize {
        self.exponents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exponents.is_empty()
    }

    /// Number of monomials in three variables of degree at most `degree`.
    pub fn count_for(degree: usize) -> usize {
        (degree + 1) * (degree + 2) * (degree + 3) / 6
    }

    /// Values of every monomial at `v`, written into `out`.
    pub fn evaluate_into(&self, v: [f64; 3], out: &mut Vec<f64>) {
        let d = self.degree;
        let mut pow = [[1.0f64; 16]; 3];
        for (k, p) in pow.iter_mut().enumerate() {
            for e in 1..=d.min(15) {
                p[e] = p[e - 1] * v[k];
            }
        }
        out.clear();
        if d <= 15 {
            out.extend(
                self.exponents.iter().map(|&[i, j, k]| pow[0][i as usize] * pow[1][j as usize] * pow[2][k as usize]),
            );
        } else {
            out.extend(
                self.exponents.iter().map(|&[i, j, k]| v[0].powi(i as i32) * v[1].powi(j as i32) * v[2].powi(k as i32)),
            );
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolynomialMap {
    pub basis: MonomialBasis,
    /// Divisors applied to `(ŷ, d̂x, d̂y)` before evaluating monomials.
    pub input_scale: [f64; 3],
    /// One coefficient vector per output, in [`OUTPUT_NAMES`] order.
    pub coefficients: [Vec<f64>; 6],
    /// For plane outputs: the plane position. Evaluation then returns this z
    /// and rebuilds d_z from the unit-norm constraint.
    pub plane_output_z: Option<f64>,
}

impl PolynomialMap {
    pub fn zeros(degree: usize, plane_output_z: Option<f64>) -> Self {
        let basis = MonomialBasis::new(degree);
        let n = basis.len();
        Self { basis, input_scale: [1.0; 3], coefficients: std::array::from_fn(|_| vec![0.0; n]), plane_output_z }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_scale.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::Schema { key: "polynomial.input_scale".into(), message: "entries must be > 0".into() });
        }
        for (name, c) in OUTPUT_NAMES.iter().zip(&self.coefficients) {
            if c.len() != self.basis.len() {
                return Err(Error::Schema {
                    key: format!("polynomial.coefficients.{name}"),
                    message: format!("expected {} entries, found {}", self.basis.len(), c.len()),
                });
            }
        }
        Ok(())
    }

    fn raw(&self, inputs: [f64; 3], scratch: &mut Vec<f64>) -> [f64; 6] {
        let v = [inputs[0] / self.input_scale[0], inputs[1] / self.input_scale[1], inputs[2] / self.input_scale[2]];
        self.basis.evaluate_into(v, scratch);
        std::array::from_fn(|o| self.coefficients[o].iter().zip(scratch.iter()).map(|(c, m)| c * m).sum())
    }

    /// Output ray components in the meridional frame.
    pub fn eval(&self, input: &MeridionalRay) -> [f64; 6] {
        let mut scratch = Vec::with_capacity(self.basis.len());
        self.eval_with(input.inputs(), &mut scratch)
    }

    pub fn eval_with(&self, inputs: [f64; 3], scratch: &mut Vec<f64>) -> [f64; 6] {
        let mut out = self.raw(inputs, scratch);
        if let Some(z) = self.plane_output_z {
            out[2] = z;
            out[5] = (1.0 - out[3] * out[3] - out[4] * out[4]).max(0.0).sqrt();
        }
        out
    }

    /// Full pipeline for an input-plane ray: rotate into the meridional plane,
    /// evaluate, rotate back. Returns origin and direction as predicted
    /// (direction not renormalized).
    pub fn transfer(&self, ray: &Ray, scratch: &mut Vec<f64>) -> (Vec3, Vec3) {
        let m = rotate_meridional(ray);
        let o = self.eval_with(m.inputs(), scratch);
        let r = rotate_back(Vec3::new(o[0], o[1], o[2]), Vec3::new(o[3], o[4], o[5]), m.phi);
        (r.origin, r.direction)
    }

    /// Linear part of the map at the origin: `(∂y/∂ŷ, ∂y/∂d̂y, ∂dy/∂ŷ, ∂dy/∂d̂y)`.
    pub fn meridional_jacobian(&self) -> [f64; 4] {
        let idx = |e: [u32; 3]| self.basis.exponents().iter().position(|&x| x == e);
        let coef = |o: usize, e: [u32; 3], s: f64| idx(e).map_or(0.0, |i| self.coefficients[o][i] / s);
        [
            coef(1, [1, 0, 0], self.input_scale[0]),
            coef(1, [0, 0, 1], self.input_scale[2]),
            coef(4, [1, 0, 0], self.input_scale[0]),
            coef(4, [0, 0, 1], self.input_scale[2]),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub degree: usize,
    pub rms: [f64; 6],
    pub max_abs: [f64; 6],
    /// RMS of the 3D distance between predicted and true output positions.
    pub position_rms: f64,
    pub used: usize,
    pub blocked: usize,
    pub effective_rank: usize,
    pub condition_estimate: f64,
    /// Training samples whose predicted (dx, dy) leaves the unit disc
    /// (plane outputs only).
    pub direction_violations: usize,
}

impl FitReport {
    pub fn max_residual(&self) -> f64 {
        self.max_abs.iter().copied().fold(0.0, f64::max)
    }
}

/// Training pair in the meridional frame.
fn meridional_pairs(ds: &RtfDataset) -> Vec<([f64; 3], [f64; 6])> {
    ds.passing()
        .map(|(input, output)| {
            let m = rotate_meridional(input);
            let o = output.rotate_z(m.phi);
            (m.inputs(), [o.origin.x, o.origin.y, o.origin.z, o.direction.x, o.direction.y, o.direction.z])
        })
        .collect()
}

fn plane_z(ds: &RtfDataset) -> Option<f64> {
    match ds.planes.output_surface {
        OutputSurface::Plane { z } => Some(z),
        OutputSurface::Sphere { .. } => None,
    }
}

/// Least-squares fit of all six outputs at the given total degree.
pub fn fit_polynomial_map(ds: &RtfDataset, degree: usize) -> Result<(PolynomialMap, FitReport)> {
    fit_polynomial_map_scaled(ds, degree, None)
}

/// As [`fit_polynomial_map`], with an explicit input normalization instead
/// of the dataset maxima.
pub fn fit_polynomial_map_scaled(
    ds: &RtfDataset,
    degree: usize,
    input_scale: Option<[f64; 3]>,
) -> Result<(PolynomialMap, FitReport)> {
    if degree == 0 {
        return Err(Error::Config("polynomial degree must be >= 1".into()));
    }
    let pairs = meridional_pairs(ds);
    let basis = MonomialBasis::new(degree);
    if pairs.len() < basis.len() {
        return Err(Error::Underdetermined { records: pairs.len(), coefficients: basis.len() });
    }
    let scale = input_scale.unwrap_or_else(|| {
        let mut s = [0.0f64; 3];
        for (inp, _) in &pairs {
            for k in 0..3 {
                s[k] = s[k].max(inp[k].abs());
            }
        }
        s.map(|v| if v > 0.0 { v } else { 1.0 })
    });

    let mut qr = StreamingQr::new(basis.len(), 6);
    let mut row = Vec::with_capacity(basis.len());
    for (inp, out) in &pairs {
        let v = [inp[0] / scale[0], inp[1] / scale[1], inp[2] / scale[2]];
        basis.evaluate_into(v, &mut row);
        qr.push_row(&row, out);
    }
    let sol = qr.solve(RANK_TOL);
    if sol.effective_rank < basis.len() {
        log::warn!(
            "rank-deficient design matrix at degree {degree}: effective rank {} of {}",
            sol.effective_rank,
            basis.len()
        );
    }
    let coefficients: [Vec<f64>; 6] = std::array::from_fn(|o| sol.solutions[o].clone());
    let map = PolynomialMap { basis, input_scale: scale, coefficients, plane_output_z: plane_z(ds) };

    let mut sq = [0.0f64; 6];
    let mut max_abs = [0.0f64; 6];
    let mut pos_sq = 0.0;
    let mut violations = 0;
    let mut scratch = Vec::new();
    for (inp, out) in &pairs {
        if map.plane_output_z.is_some() {
            let raw = map.raw(*inp, &mut scratch);
            if raw[3] * raw[3] + raw[4] * raw[4] > 1.0 {
                violations += 1;
            }
        }
        let pred = map.eval_with(*inp, &mut scratch);
        for o in 0..6 {
            let e = pred[o] - out[o];
            sq[o] += e * e;
            max_abs[o] = max_abs[o].max(e.abs());
        }
        pos_sq += (0..3).map(|o| (pred[o] - out[o]).powi(2)).sum::<f64>();
    }
    if violations > 0 {
        log::warn!("{violations} training samples predict |(dx, dy)| > 1");
    }
    let n = pairs.len() as f64;
    let report = FitReport {
        degree,
        rms: sq.map(|s| (s / n).sqrt()),
        max_abs,
        position_rms: (pos_sq / n).sqrt(),
        used: pairs.len(),
        blocked: ds.blocked_count(),
        effective_rank: sol.effective_rank,
        condition_estimate: sol.condition_estimate,
        direction_violations: violations,
    };
    Ok((map, report))
}

/// RMS position and direction error of `map` on the passing records of `ds`,
/// evaluated through the full rotate / evaluate / rotate-back path.
pub fn residuals(map: &PolynomialMap, ds: &RtfDataset) -> (f64, f64) {
    let (pos, dir, n) = ds
        .records
        .par_iter()
        .filter_map(|r| r.output.map(|o| (r.input, o)))
        .map_init(Vec::new, |scratch, (input, output)| {
            let (p, d) = map.transfer(&input, scratch);
            ((p - output.origin).dot(p - output.origin), (d - output.direction).dot(d - output.direction), 1usize)
        })
        .reduce(|| (0.0, 0.0, 0), |a, b| (a.0 + b.0, a.1 + b.1, a.2 + b.2));
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    ((pos / n as f64).sqrt(), (dir / n as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub degree: usize,
    pub train_position_rms: f64,
    pub validation_position_rms: f64,
    pub validation_direction_rms: f64,
    pub error: Option<String>,
}

/// Fits every degree on `ds` and scores it on `validation`.
pub fn degree_sweep(ds: &RtfDataset, degrees: &[usize], validation: &RtfDataset) -> Vec<SweepRow> {
    degrees
        .iter()
        .map(|&degree| match fit_polynomial_map(ds, degree) {
            Ok((map, report)) => {
                let (vp, vd) = residuals(&map, validation);
                SweepRow {
                    degree,
                    train_position_rms: report.position_rms,
                    validation_position_rms: vp,
                    validation_direction_rms: vd,
                    error: None,
                }
            }
            Err(e) => SweepRow {
                degree,
                train_position_rms: f64::NAN,
                validation_position_rms: f64::NAN,
                validation_direction_rms: f64::NAN,
                error: Some(e.to_string()),
            },
        })
        .collect()
}

/// Whether validation RMS declines with every step of the sweep.
pub fn sweep_is_monotone(rows: &[SweepRow]) -> bool {
    rows.windows(2).all(|w| w[1].validation_position_rms < w[0].validation_position_rms)
}
