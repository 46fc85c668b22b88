use nalgebra::Vector3;

use crate::error::{Error, Result};

/// Natural cubic spline through 3-D points, parameterized by cumulative
/// chord length.
#[derive(Debug, Clone)]
pub struct SplinePath {
    knots: Vec<Vector3<f64>>,
    params: Vec<f64>,
    /// Per segment: value, first, second and third order coefficients in
    /// the local offset `t = u − u_i`.
    coeffs: Vec<[Vector3<f64>; 4]>,
    second: Vec<Vector3<f64>>,
}

/// Fits a natural cubic spline; consecutive duplicate points are collapsed.
pub fn fit_spline(centers: &[Vector3<f64>]) -> Result<SplinePath> {
    let mut knots: Vec<Vector3<f64>> = Vec::with_capacity(centers.len());
    for c in centers {
        if !c.iter().all(|v| v.is_finite()) {
            return Err(Error::arg("non-finite spline knot"));
        }
        if knots.last().is_none_or(|last| (c - last).norm() > 1e-12) {
            knots.push(*c);
        }
    }
    if knots.len() < 2 {
        return Err(Error::arg("a spline needs at least 2 distinct points"));
    }
    let n = knots.len() - 1;
    let mut params = Vec::with_capacity(n + 1);
    params.push(0.0);
    for i in 0..n {
        params.push(params[i] + (knots[i + 1] - knots[i]).norm());
    }
    let h: Vec<f64> = (0..n).map(|i| params[i + 1] - params[i]).collect();

    // Second derivatives with M_0 = M_n = 0 (Thomas algorithm).
    let mut second = vec![Vector3::zeros(); n + 1];
    if n >= 2 {
        let m = n - 1;
        let mut diag = vec![0.0; m];
        let mut rhs = vec![Vector3::zeros(); m];
        for k in 0..m {
            let i = k + 1;
            diag[k] = 2.0 * (h[i - 1] + h[i]);
            rhs[k] = ((knots[i + 1] - knots[i]) / h[i] - (knots[i] - knots[i - 1]) / h[i - 1]) * 6.0;
        }
        for k in 1..m {
            let w = h[k] / diag[k - 1];
            diag[k] -= w * h[k];
            let prev = rhs[k - 1];
            rhs[k] -= prev * w;
        }
        second[m] = rhs[m - 1] / diag[m - 1];
        for k in (0..m - 1).rev() {
            second[k + 1] = (rhs[k] - second[k + 2] * h[k + 1]) / diag[k];
        }
    }

    let coeffs = (0..n)
        .map(|i| {
            let (m0, m1) = (second[i], second[i + 1]);
            let a = knots[i];
            let b = (knots[i + 1] - knots[i]) / h[i] - (m0 * 2.0 + m1) * (h[i] / 6.0);
            let c = m0 / 2.0;
            let d = (m1 - m0) / (6.0 * h[i]);
            [a, b, c, d]
        })
        .collect();
    Ok(SplinePath {
        knots,
        params,
        coeffs,
        second,
    })
}

impl SplinePath {
    pub fn knots(&self) -> &[Vector3<f64>] {
        &self.knots
    }

    /// Knot parameters `u_i`, starting at 0.
    pub fn parameters(&self) -> &[f64] {
        &self.params
    }

    /// Second derivatives at the knots.
    pub fn second_derivatives(&self) -> &[Vector3<f64>] {
        &self.second
    }

    /// Total chord length `u_max`.
    pub fn length(&self) -> f64 {
        *self.params.last().expect("at least 2 knots")
    }

    fn locate(&self, u: f64) -> (usize, f64) {
        let u = u.clamp(0.0, self.length());
        let seg = (self.params.partition_point(|&p| p <= u).max(1) - 1).min(self.coeffs.len() - 1);
        (seg, u - self.params[seg])
    }

    pub fn eval(&self, u: f64) -> Vector3<f64> {
        if u >= self.length() {
            return *self.knots.last().unwrap();
        }
        let (i, t) = self.locate(u);
        let [a, b, c, d] = &self.coeffs[i];
        a + (b + (c + d * t) * t) * t
    }

    pub fn derivative(&self, u: f64) -> Vector3<f64> {
        let (i, t) = self.locate(u);
        let [_, b, c, d] = &self.coeffs[i];
        b + (c * 2.0 + d * (3.0 * t)) * t
    }

    pub fn second_derivative(&self, u: f64) -> Vector3<f64> {
        let (i, t) = self.locate(u);
        let [_, _, c, d] = &self.coeffs[i];
        c * 2.0 + d * (6.0 * t)
    }

    pub fn eval_with_derivative(&self, u: f64) -> (Vector3<f64>, Vector3<f64>) {
        (self.eval(u), self.derivative(u))
    }

    /// Parameter of the knot closest to `p`.
    pub fn nearest_knot_parameter(&self, p: &Vector3<f64>) -> f64 {
        let (i, _) = self
            .knots
            .iter()
            .enumerate()
            .map(|(i, k)| (i, (k - p).norm_squared()))
            .fold((0, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc });
        self.params[i]
    }

    /// Per-segment polynomial pieces at the left end of segment `i`
    /// evaluated at its right end, for continuity checks.
    pub fn segment_end(&self, i: usize) -> [Vector3<f64>; 3] {
        let [a, b, c, d] = &self.coeffs[i];
        let t = self.params[i + 1] - self.params[i];
        [
            a + (b + (c + d * t) * t) * t,
            b + (c * 2.0 + d * (3.0 * t)) * t,
            c * 2.0 + d * (6.0 * t),
        ]
    }

    pub fn segment_count(&self) -> usize {
        self.coeffs.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn v(x: f64, y: f64, z: f64) -> Vector3<f64> {
        Vector3::new(x, y, z)
    }

    #[test]
    fn two_points_give_a_segment() {
        let s = fit_spline(&[v(1.0, 1.0, 1.0), v(4.0, 5.0, 1.0)]).unwrap();
        assert_eq!(s.length(), 5.0);
        assert!((s.eval(2.5) - v(2.5, 3.0, 1.0)).norm() < 1e-12);
        assert!(s.second_derivative(1.0).norm() < 1e-15);
    }

    #[test]
    fn collinear_points_have_zero_curvature() {
        let pts: Vec<_> = (0..9).map(|i| v(0.3 * i as f64, -0.6 * i as f64, 0.1 * i as f64)).collect();
        let s = fit_spline(&pts).unwrap();
        assert!(s.second_derivatives().iter().all(|m| m.norm() < 1e-9));
    }

    #[test]
    fn duplicates_collapse_and_degenerate_inputs_fail() {
        let s = fit_spline(&[v(0.0, 0.0, 0.0), v(0.0, 0.0, 0.0), v(1.0, 0.0, 0.0)]).unwrap();
        assert_eq!(s.knots().len(), 2);
        assert!(fit_spline(&[v(1.0, 1.0, 1.0), v(1.0, 1.0, 1.0)]).is_err());
        assert!(fit_spline(&[v(1.0, 1.0, 1.0)]).is_err());
    }

    proptest! {
        #[test]
        fn interpolates_knots_with_c2_joins(
            raw in prop::collection::vec(prop::array::uniform3(-20.0f64..20.0), 2..25)
        ) {
            let pts: Vec<_> = raw.iter().map(|p| Vector3::from(*p)).collect();
            prop_assume!(pts.windows(2).all(|w| (w[1] - w[0]).norm() > 1e-2));
            let s = fit_spline(&pts).unwrap();
            for (k, u) in pts.iter().zip(s.parameters()) {
                prop_assert!((s.eval(*u) - k).amax() <= 1e-12);
            }
            for i in 0..s.segment_count() - 1 {
                let [p, d1, d2] = s.segment_end(i);
                let u = s.parameters()[i + 1];
                let scale = 1.0 + d2.amax();
                prop_assert!((p - s.eval(u)).amax() <= 1e-9);
                prop_assert!((d1 - s.derivative(u)).amax() <= 1e-9 * scale);
                prop_assert!((d2 - s.second_derivative(u)).amax() <= 1e-9 * scale);
            }
            prop_assert!(s.second_derivatives()[0].norm() == 0.0);
            prop_assert!(s.second_derivatives().last().unwrap().norm() == 0.0);
        }
    }
}
