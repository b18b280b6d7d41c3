use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Principal axes of a point cloud, sorted by decreasing variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// Unit-length axes; each is signed so its largest-magnitude loading is positive.
    pub components: Vec<Vec<f64>>,
    /// All eigenvalues of the (1/n) covariance, descending.
    pub eigenvalues: Vec<f64>,
}

impl Pca {
    pub fn transform(&self, points: &[Vec<f64>]) -> Vec<Vec<f64>> {
        points
            .iter()
            .map(|p| {
                self.components
                    .iter()
                    .map(|c| c.iter().zip(p).zip(&self.mean).map(|((w, x), m)| w * (x - m)).sum())
                    .collect()
            })
            .collect()
    }

    pub fn reconstruct(&self, coords: &[f64]) -> Vec<f64> {
        let mut out = self.mean.clone();
        for (c, &z) in self.components.iter().zip(coords) {
            for (o, w) in out.iter_mut().zip(c) {
                *o += z * w;
            }
        }
        out
    }
}

/// Top-`k` principal components.
pub fn pca(points: &[Vec<f64>], k: usize) -> Result<Pca> {
    let n = points.len();
    if n < 2 {
        return Err(Error::TooFewPoints { need: 2, got: n });
    }
    let dim = points[0].len();
    if let Some(p) = points.iter().find(|p| p.len() != dim) {
        return Err(Error::DimMismatch {
            expected: dim,
            got: p.len(),
        });
    }
    if points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParams("points must be finite".into()));
    }
    let mean: Vec<f64> = (0..dim).map(|d| points.iter().map(|p| p[d]).sum::<f64>() / n as f64).collect();
    let centred = DMatrix::from_fn(n, dim, |i, d| points[i][d] - mean[d]);
    let cov = centred.transpose() * &centred / n as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    let components = order
        .iter()
        .take(k.min(dim))
        .map(|&i| {
            let mut v: Vec<f64> = eig.eigenvectors.column(i).iter().copied().collect();
            let lead = v.iter().copied().fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
            if lead < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
            v
        })
        .collect();
    Ok(Pca {
        mean,
        components,
        eigenvalues,
    })
}

/// Coordinates on the first two principal axes.
pub fn project_2d(points: &[Vec<f64>]) -> Result<Vec<[f64; 2]>> {
    let p = pca(points, 2)?;
    Ok(p.transform(points)
        .into_iter()
        .map(|c| [c.first().copied().unwrap_or(0.0), c.get(1).copied().unwrap_or(0.0)])
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_one_data_has_flat_second_axis() {
        let pts: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64, 2.0 * i as f64, -(i as f64)]).collect();
        let xy = project_2d(&pts).unwrap();
        assert!(xy.iter().all(|p| p[1].abs() < 1e-9));
    }

    #[test]
    fn planar_data_keeps_distances() {
        let pts: Vec<Vec<f64>> = (0..15).map(|i| vec![(i * 7 % 11) as f64, (i * 3 % 5) as f64 * 0.7]).collect();
        let xy = project_2d(&pts).unwrap();
        for i in 0..pts.len() {
            for j in 0..pts.len() {
                let d0 = ((pts[i][0] - pts[j][0]).powi(2) + (pts[i][1] - pts[j][1]).powi(2)).sqrt();
                let d1 = ((xy[i][0] - xy[j][0]).powi(2) + (xy[i][1] - xy[j][1]).powi(2)).sqrt();
                assert!((d0 - d1).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn sign_convention() {
        let pts: Vec<Vec<f64>> = (0..10).map(|i| vec![-(i as f64), 0.1 * (i % 3) as f64]).collect();
        let p = pca(&pts, 1).unwrap();
        let c = &p.components[0];
        let lead = c.iter().copied().fold(0.0f64, |a, x| if x.abs() > a.abs() { x } else { a });
        assert!(lead > 0.0);
        assert!(matches!(project_2d(&pts[..1]), Err(Error::TooFewPoints { .. })));
    }
}
