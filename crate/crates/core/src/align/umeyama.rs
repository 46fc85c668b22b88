use nalgebra::{Matrix3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene_io::Sim3Transform;

/// How the scale of a closed-form similarity is estimated.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScaleEstimator {
    /// Minimizes `Σ‖dst − (sR·src + t)‖²`. Noise on `src` biases it low.
    LeastSquares,
    /// Ratio of RMS spreads about the centroids, `sqrt(Σ‖d′‖² / Σ‖s′‖²)`.
    /// Unbiased when both sets carry noise proportional to their scale.
    #[default]
    Symmetric,
}

/// Least-squares similarity `dst ≈ s·R·src + t` in closed form.
pub fn umeyama(src: &[Vector3<f64>], dst: &[Vector3<f64>]) -> Result<Sim3Transform> {
    umeyama_with(src, dst, ScaleEstimator::LeastSquares)
}

/// Closed-form similarity `dst ≈ s·R·src + t`; rotation from the SVD of the
/// cross-covariance, scale per `scale`.
pub fn umeyama_with(src: &[Vector3<f64>], dst: &[Vector3<f64>], scale: ScaleEstimator) -> Result<Sim3Transform> {
    if src.len() != dst.len() {
        return Err(Error::arg("correspondence lists differ in length"));
    }
    if src.len() < 3 {
        return Err(Error::Registration(format!("{} correspondences, need at least 3", src.len())));
    }
    let n = src.len() as f64;
    let mu_s = src.iter().sum::<Vector3<f64>>() / n;
    let mu_d = dst.iter().sum::<Vector3<f64>>() / n;
    let mut cov = Matrix3::zeros();
    let mut var_s = 0.0;
    let mut var_d = 0.0;
    for (a, b) in src.iter().zip(dst) {
        let da = a - mu_s;
        let db = b - mu_d;
        cov += db * da.transpose();
        var_s += da.norm_squared();
        var_d += db.norm_squared();
    }
    cov /= n;
    var_s /= n;
    var_d /= n;
    if var_s < 1e-24 {
        return Err(Error::Degenerate("source correspondences are coincident".into()));
    }
    let svd = cov.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut sign = Matrix3::identity();
    if u.determinant() * v_t.determinant() < 0.0 {
        sign[(2, 2)] = -1.0;
    }
    let r = u * sign * v_t;
    let s = match scale {
        ScaleEstimator::LeastSquares => (svd.singular_values.component_mul(&sign.diagonal())).sum() / var_s,
        ScaleEstimator::Symmetric => (var_d / var_s).sqrt(),
    };
    let t = mu_d - r * mu_s * s;
    if !(s.is_finite() && t.iter().all(|x| x.is_finite()) && r.iter().all(|x| x.is_finite())) {
        return Err(Error::Numerical("non-finite similarity estimate".into()));
    }
    if s <= 0.0 {
        return Err(Error::Degenerate("correspondences admit no positive scale".into()));
    }
    Sim3Transform::new(s, UnitQuaternion::from_matrix(&r), t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_exact_similarity() {
        let g = Sim3Transform::new(
            1.3,
            UnitQuaternion::from_axis_angle(&nalgebra::Unit::new_normalize(Vector3::new(1.0, 1.0, 0.0)), 17f64.to_radians()),
            Vector3::new(0.2, -0.1, 0.4),
        )
        .unwrap();
        let src: Vec<_> = (0..20)
            .map(|i| {
                let t = i as f64;
                Vector3::new(t.sin() * 3.0, (t * 0.7).cos(), t * 0.1)
            })
            .collect();
        let dst: Vec<_> = src.iter().map(|p| g.apply(p)).collect();
        let est = umeyama(&src, &dst).unwrap();
        assert!((est.s - 1.3).abs() < 1e-12);
        assert!(est.rotation.angle_to(&g.rotation) < 1e-12);
        assert!((est.t - g.t).norm() < 1e-12);
    }

    #[test]
    fn symmetric_scale_resists_noise() {
        let g = Sim3Transform::new(0.7, UnitQuaternion::identity(), Vector3::zeros()).unwrap();
        let mut v = 0x2545_f491_4f6c_dd1du64;
        let mut jitter = || {
            v ^= v << 13;
            v ^= v >> 7;
            v ^= v << 17;
            (v % 2001) as f64 / 1000.0 - 1.0
        };
        let src: Vec<_> = (0..4000)
            .map(|i| {
                let t = i as f64 * 0.01;
                Vector3::new(t.sin() * 5.0, (t * 1.3).cos() * 5.0, (t * 0.7).sin() * 5.0)
            })
            .collect();
        let dst: Vec<_> = src.iter().map(|p| g.apply(p)).collect();
        let mut noisy = |pts: &[Vector3<f64>], amp: f64| -> Vec<Vector3<f64>> {
            pts.iter().map(|p| p + Vector3::new(jitter(), jitter(), jitter()) * amp).collect()
        };
        let (src_n, dst_n) = (noisy(&src, 1.0), noisy(&dst, 0.7));
        let ls = umeyama_with(&src_n, &dst_n, ScaleEstimator::LeastSquares).unwrap();
        let sym = umeyama_with(&src_n, &dst_n, ScaleEstimator::Symmetric).unwrap();
        assert!((sym.s - 0.7).abs() < (ls.s - 0.7).abs());
        assert!((sym.s - 0.7).abs() < 2e-3, "{}", sym.s);
    }

    #[test]
    fn too_few_or_degenerate() {
        let p = Vector3::new(1.0, 2.0, 3.0);
        assert!(matches!(umeyama(&[p, p], &[p, p]), Err(Error::Registration(_))));
        assert!(matches!(umeyama(&[p, p, p], &[p, p, p]), Err(Error::Degenerate(_))));
    }
}
