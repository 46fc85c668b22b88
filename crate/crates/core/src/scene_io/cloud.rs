use nalgebra::Vector3;

use super::sim3::Sim3Transform;
use crate::error::{Error, Result};

/// Point positions with optional 8-bit RGB colors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vector3<f64>>,
    pub colors: Option<Vec<[u8; 3]>>,
}

impl PointCloud {
    pub fn new(points: Vec<Vector3<f64>>) -> Self {
        Self { points, colors: None }
    }

    pub fn with_colors(points: Vec<Vector3<f64>>, colors: Vec<[u8; 3]>) -> Result<Self> {
        if points.len() != colors.len() {
            return Err(Error::data(format!(
                "{} points but {} colors",
                points.len(),
                colors.len()
            )));
        }
        Ok(Self {
            points,
            colors: Some(colors),
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(i) = self.points.iter().position(|p| !p.iter().all(|v| v.is_finite())) {
            return Err(Error::data(format!("point {i} has a non-finite coordinate")));
        }
        if let Some(c) = &self.colors {
            if c.len() != self.points.len() {
                return Err(Error::data("color count does not match point count"));
            }
        }
        Ok(())
    }

    pub fn transformed(&self, g: &Sim3Transform) -> PointCloud {
        PointCloud {
            points: self.points.iter().map(|p| g.apply(p)).collect(),
            colors: self.colors.clone(),
        }
    }

    /// Keeps the points whose index satisfies `keep`.
    pub fn select(&self, mut keep: impl FnMut(usize, &Vector3<f64>) -> bool) -> PointCloud {
        let idx: Vec<usize> = (0..self.points.len())
            .filter(|&i| keep(i, &self.points[i]))
            .collect();
        PointCloud {
            points: idx.iter().map(|&i| self.points[i]).collect(),
            colors: self
                .colors
                .as_ref()
                .map(|c| idx.iter().map(|&i| c[i]).collect()),
        }
    }

    pub fn centroid(&self) -> Option<Vector3<f64>> {
        if self.points.is_empty() {
            return None;
        }
        let sum: Vector3<f64> = self.points.iter().sum();
        Some(sum / self.points.len() as f64)
    }

    /// Diagonal of the axis-aligned bounding box.
    pub fn diameter(&self) -> f64 {
        let Some(first) = self.points.first() else {
            return 0.0;
        };
        let (lo, hi) = self
            .points
            .iter()
            .fold((*first, *first), |(lo, hi), p| (lo.inf(p), hi.sup(p)));
        (hi - lo).norm()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::UnitQuaternion;

    fn cube() -> PointCloud {
        let pts = (0..8)
            .map(|i| Vector3::new((i & 1) as f64, ((i >> 1) & 1) as f64, ((i >> 2) & 1) as f64))
            .collect();
        PointCloud::new(pts)
    }

    #[test]
    fn diameter_and_centroid_of_unit_cube() {
        let c = cube();
        assert!((c.diameter() - 3f64.sqrt()).abs() < 1e-12);
        assert!((c.centroid().unwrap() - Vector3::repeat(0.5)).norm() < 1e-12);
        assert_eq!(PointCloud::default().diameter(), 0.0);
        assert!(PointCloud::default().centroid().is_none());
    }

    #[test]
    fn transform_scales_distances() {
        let g = Sim3Transform::new(
            2.5,
            UnitQuaternion::from_euler_angles(0.3, -0.2, 1.1),
            Vector3::new(4.0, 5.0, -6.0),
        )
        .unwrap();
        let c = cube();
        let moved = c.transformed(&g);
        for i in 0..8 {
            for j in 0..8 {
                let before = (c.points[i] - c.points[j]).norm();
                let after = (moved.points[i] - moved.points[j]).norm();
                assert!((after - 2.5 * before).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn select_keeps_colors_aligned() {
        let colors = (0..8).map(|i| [i as u8, 0, 0]).collect();
        let c = PointCloud::with_colors(cube().points, colors).unwrap();
        let odd = c.select(|i, _| i % 2 == 1);
        assert_eq!(odd.len(), 4);
        assert_eq!(odd.colors.as_ref().unwrap()[2], [5, 0, 0]);
        assert_eq!(odd.points[2], c.points[5]);
        assert!(PointCloud::with_colors(cube().points, vec![[0; 3]]).is_err());
    }

    #[test]
    fn validate_rejects_non_finite() {
        let mut c = cube();
        assert!(c.validate().is_ok());
        c.points[3].y = f64::NAN;
        assert!(c.validate().is_err());
    }
}
