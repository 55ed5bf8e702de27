//! Weighted least-squares fit of interference fringes.
//!
//! Counts are modelled as `C0·(1 + V·cos(φ + φ0))`, rewritten as the linear
//! model `a + b·cos φ + c·sin φ`. Weights are Poissonian; the fit is
//! iterated a few times with variances taken from the model prediction so
//! that low-count points are not over-weighted.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One point of a four-fold coincidence scan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FringePoint {
    pub phi_a: f64,
    pub fourfold_count: u64,
    pub total_heralds: u64,
}

impl FringePoint {
    pub fn poisson_sigma(&self) -> f64 {
        (self.fourfold_count as f64).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FringeFit {
    pub visibility: f64,
    pub visibility_error: f64,
    pub phase_offset: f64,
    pub mean_count: f64,
}

const REWEIGHT_PASSES: usize = 3;

fn solve(points: &[(f64, f64)], variances: &[f64]) -> Result<(Vector3<f64>, Matrix3<f64>)> {
    let mut normal = Matrix3::zeros();
    let mut rhs = Vector3::zeros();
    for (&(phi, y), &var) in points.iter().zip(variances) {
        let x = Vector3::new(1.0, phi.cos(), phi.sin());
        let w = 1.0 / var;
        normal += x * x.transpose() * w;
        rhs += x * (y * w);
    }
    let scale = normal.norm();
    if scale.is_nan() || scale <= 0.0 || normal.determinant().abs() < 1e-12 * scale.powi(3) {
        return Err(Error::Fit(
            "phase grid does not determine a sinusoid".into(),
        ));
    }
    let cov = normal
        .try_inverse()
        .ok_or_else(|| Error::Fit("normal matrix is singular".into()))?;
    Ok((cov * rhs, cov))
}

fn angular_span(phis: &[f64]) -> f64 {
    // largest arc covered by the sorted phases on the circle
    let mut p: Vec<f64> = phis.iter().map(|x| x.rem_euclid(2.0 * PI)).collect();
    p.sort_by(|a, b| a.partial_cmp(b).unwrap());
    p.dedup();
    if p.len() < 2 {
        return 0.0;
    }
    let mut max_gap = 2.0 * PI - (p[p.len() - 1] - p[0]);
    for w in p.windows(2) {
        max_gap = max_gap.max(w[1] - w[0]);
    }
    let raw_span = phis.iter().cloned().fold(f64::MIN, f64::max)
        - phis.iter().cloned().fold(f64::MAX, f64::min);
    raw_span.max(2.0 * PI - max_gap)
}

/// Fits `C0·(1 + V·cos(φ_A + φ0))` to the four-fold counts.
pub fn fit_visibility(points: &[FringePoint]) -> Result<FringeFit> {
    if points.len() < 4 {
        return Err(Error::Fit(format!(
            "need at least 4 points, got {}",
            points.len()
        )));
    }
    if points.iter().any(|p| !p.phi_a.is_finite()) {
        return Err(Error::Fit("non-finite phase in grid".into()));
    }
    let phis: Vec<f64> = points.iter().map(|p| p.phi_a).collect();
    if angular_span(&phis) < PI - 1e-9 {
        return Err(Error::Fit(
            "phase grid spans less than half a period".into(),
        ));
    }
    let data: Vec<(f64, f64)> = points
        .iter()
        .map(|p| (p.phi_a, p.fourfold_count as f64))
        .collect();

    let mut variances: Vec<f64> = data.iter().map(|&(_, y)| y.max(1.0)).collect();
    let (mut beta, mut cov) = solve(&data, &variances)?;
    for _ in 0..REWEIGHT_PASSES {
        variances = data
            .iter()
            .map(|&(phi, _)| (beta[0] + beta[1] * phi.cos() + beta[2] * phi.sin()).max(1.0))
            .collect();
        (beta, cov) = solve(&data, &variances)?;
    }

    let (a, b, c) = (beta[0], beta[1], beta[2]);
    if a.is_nan() || a <= 0.0 {
        return Ok(FringeFit {
            visibility: 0.0,
            visibility_error: 1.0,
            phase_offset: 0.0,
            mean_count: a.max(0.0),
        });
    }
    let amp = (b * b + c * c).sqrt();
    let v = amp / a;
    // gradient of V = sqrt(b² + c²)/a with respect to (a, b, c)
    let grad = if amp > 0.0 {
        Vector3::new(-v / a, b / (amp * a), c / (amp * a))
    } else {
        // at zero amplitude use the radial error of (b, c)
        let s = ((cov[(1, 1)] + cov[(2, 2)]) / 2.0).sqrt() / a;
        return Ok(FringeFit {
            visibility: 0.0,
            visibility_error: s,
            phase_offset: 0.0,
            mean_count: a,
        });
    };
    let var_v = (grad.transpose() * cov * grad)[(0, 0)].max(0.0);
    Ok(FringeFit {
        visibility: v.clamp(0.0, 1.0),
        visibility_error: var_v.sqrt(),
        phase_offset: (-c).atan2(b),
        mean_count: a,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::finite_key::linear_grid;
    use approx::assert_abs_diff_eq;

    fn synthetic(v: f64, phi0: f64, c0: f64) -> Vec<FringePoint> {
        linear_grid(0.0, 2.0 * PI, 13)
            .into_iter()
            .map(|phi| FringePoint {
                phi_a: phi,
                fourfold_count: (c0 * (1.0 + v * (phi + phi0).cos())).round() as u64,
                total_heralds: 0,
            })
            .collect()
    }

    #[test]
    fn recovers_clean_fringe() {
        // large C0 keeps rounding below the 1e-6 target
        let fit = fit_visibility(&synthetic(0.8, 0.0, 1e9)).unwrap();
        assert_abs_diff_eq!(fit.visibility, 0.8, epsilon = 1e-6);
        assert_abs_diff_eq!(fit.phase_offset, 0.0, epsilon = 1e-6);
        let fit = fit_visibility(&synthetic(0.5, 1.0, 1e9)).unwrap();
        assert_abs_diff_eq!(fit.visibility, 0.5, epsilon = 1e-6);
        assert_abs_diff_eq!(fit.phase_offset, 1.0, epsilon = 1e-6);
    }

    #[test]
    fn flat_counts_give_zero_visibility() {
        let pts = synthetic(0.0, 0.0, 100.0);
        let fit = fit_visibility(&pts).unwrap();
        assert!(fit.visibility <= 2.0 * fit.visibility_error + 1e-12);
    }

    #[test]
    fn degenerate_grids_fail() {
        let same: Vec<_> = (0..6)
            .map(|_| FringePoint {
                phi_a: 0.3,
                fourfold_count: 10,
                total_heralds: 40,
            })
            .collect();
        assert!(matches!(fit_visibility(&same), Err(Error::Fit(_))));
        let narrow: Vec<_> = linear_grid(0.0, 1.0, 6)
            .into_iter()
            .map(|phi| FringePoint {
                phi_a: phi,
                fourfold_count: 10,
                total_heralds: 40,
            })
            .collect();
        assert!(fit_visibility(&narrow).is_err());
        assert!(fit_visibility(&synthetic(0.5, 0.0, 10.0)[..3]).is_err());
    }

    #[test]
    fn visibility_is_clamped() {
        let mut pts = synthetic(1.0, 0.0, 50.0);
        for p in pts.iter_mut() {
            if p.fourfold_count < 20 {
                p.fourfold_count = 0;
            }
        }
        let fit = fit_visibility(&pts).unwrap();
        assert!(fit.visibility <= 1.0);
    }
}
