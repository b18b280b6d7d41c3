use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Dense matrix of pairwise euclidean distances.
pub struct DistanceMatrix {
    n: usize,
    d: Vec<f64>,
}

impl DistanceMatrix {
    pub fn new(points: &[Vec<f64>]) -> Self {
        let n = points.len();
        let mut d = vec![0.0; n * n];
        for i in 0..n {
            for j in i + 1..n {
                let v = points[i]
                    .iter()
                    .zip(&points[j])
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                d[i * n + j] = v;
                d[j * n + i] = v;
            }
        }
        Self { n, d }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.d[i * self.n + j]
    }

    /// Indices within `eps` of `i`, including `i` itself.
    fn neighbors(&self, i: usize, eps: f64) -> Vec<usize> {
        let row = &self.d[i * self.n..(i + 1) * self.n];
        (0..self.n).filter(|&j| row[j] <= eps).collect()
    }
}

fn check(points: &[Vec<f64>], eps: f64, min_samples: usize) -> Result<()> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::InvalidParams(format!("eps must be positive, got {eps}")));
    }
    if min_samples == 0 {
        return Err(Error::InvalidParams("min_samples must be at least 1".into()));
    }
    if points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParams("points must be finite".into()));
    }
    if let Some(p) = points.first() {
        if let Some(q) = points.iter().find(|q| q.len() != p.len()) {
            return Err(Error::DimMismatch {
                expected: p.len(),
                got: q.len(),
            });
        }
    }
    Ok(())
}

/// DBSCAN over euclidean distance. `None` marks noise.
///
/// A point is core when at least `min_samples` points (itself included) lie
/// within `eps`. Clusters are grown in index order, and a border point
/// reachable from several clusters joins the first one to reach it.
pub fn dbscan(points: &[Vec<f64>], eps: f64, min_samples: usize) -> Result<Vec<Option<usize>>> {
    check(points, eps, min_samples)?;
    Ok(dbscan_matrix(&DistanceMatrix::new(points), eps, min_samples))
}

pub fn dbscan_matrix(dist: &DistanceMatrix, eps: f64, min_samples: usize) -> Vec<Option<usize>> {
    let n = dist.len();
    let mut labels: Vec<Option<usize>> = vec![None; n];
    let mut visited = vec![false; n];
    let mut next = 0;
    for i in 0..n {
        if visited[i] {
            continue;
        }
        visited[i] = true;
        let nb = dist.neighbors(i, eps);
        if nb.len() < min_samples {
            continue;
        }
        let c = next;
        next += 1;
        labels[i] = Some(c);
        let mut queue: VecDeque<usize> = nb.into_iter().filter(|&j| j != i).collect();
        while let Some(q) = queue.pop_front() {
            if labels[q].is_none() {
                labels[q] = Some(c);
            }
            if visited[q] {
                continue;
            }
            visited[q] = true;
            let nq = dist.neighbors(q, eps);
            if nq.len() >= min_samples {
                queue.extend(nq.into_iter().filter(|&j| labels[j].is_none() || !visited[j]));
            }
        }
    }
    labels
}

pub fn cluster_count(labels: &[Option<usize>]) -> usize {
    labels.iter().flatten().max().map_or(0, |m| m + 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    None,
    /// Per-dimension zero mean, unit variance (constant dimensions are only centred).
    #[default]
    ZScore,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub eps_values: Vec<f64>,
    pub min_samples_values: Vec<usize>,
    pub normalization: Normalization,
    /// Cluster in the space of this many principal components instead of the raw space.
    pub pca_dims: Option<usize>,
    /// Scale normalized points by `sqrt(reference_dim / dim)`. Typical
    /// z-scored distances grow with the square root of the dimension, so this
    /// keeps the eps grid meaningful for embeddings smaller than 256.
    pub reference_dim: Option<usize>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            eps_values: (3..=10).map(f64::from).collect(),
            min_samples_values: (4..=8).collect(),
            normalization: Normalization::ZScore,
            pca_dims: None,
            reference_dim: Some(256),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRun {
    pub eps: f64,
    pub min_samples: usize,
    pub clusters: usize,
    pub noise: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub runs: Vec<SweepRun>,
    pub average_clusters: f64,
}

pub fn normalize(points: &[Vec<f64>], how: Normalization) -> Vec<Vec<f64>> {
    match how {
        Normalization::None => points.to_vec(),
        Normalization::ZScore => {
            let n = points.len().max(1) as f64;
            let dim = points.first().map_or(0, Vec::len);
            let mean: Vec<f64> = (0..dim).map(|d| points.iter().map(|p| p[d]).sum::<f64>() / n).collect();
            let sd: Vec<f64> = (0..dim)
                .map(|d| (points.iter().map(|p| (p[d] - mean[d]).powi(2)).sum::<f64>() / n).sqrt())
                .collect();
            points
                .iter()
                .map(|p| {
                    p.iter()
                        .enumerate()
                        .map(|(d, &v)| if sd[d] > 1e-12 { (v - mean[d]) / sd[d] } else { v - mean[d] })
                        .collect()
                })
                .collect()
        }
    }
}

/// The space the sweep clusters in: normalized, then optionally reduced to
/// the leading principal components.
pub fn sweep_space(points: &[Vec<f64>], config: &SweepConfig) -> Result<Vec<Vec<f64>>> {
    let mut space = normalize(points, config.normalization);
    let dim = space.first().map_or(0, Vec::len);
    if let (Some(r), true) = (config.reference_dim, dim > 0) {
        let k = (r as f64 / dim as f64).sqrt();
        space.iter_mut().flatten().for_each(|v| *v *= k);
    }
    match config.pca_dims {
        Some(k) => Ok(super::pca(&space, k)?.transform(&space)),
        None => Ok(space),
    }
}

/// Run DBSCAN over the full parameter grid and average the cluster counts
/// (noise excluded).
pub fn cluster_sweep(points: &[Vec<f64>], config: &SweepConfig) -> Result<SweepResult> {
    let need = config.min_samples_values.iter().copied().max().unwrap_or(1);
    if points.len() < need {
        return Err(Error::TooFewPoints {
            need,
            got: points.len(),
        });
    }
    if config.eps_values.is_empty() || config.min_samples_values.is_empty() {
        return Err(Error::InvalidParams("empty parameter grid".into()));
    }
    for &e in &config.eps_values {
        check(points, e, 1)?;
    }
    let space = sweep_space(points, config)?;
    let dist = DistanceMatrix::new(&space);
    let mut runs = Vec::new();
    for &eps in &config.eps_values {
        for &m in &config.min_samples_values {
            if m == 0 {
                return Err(Error::InvalidParams("min_samples must be at least 1".into()));
            }
            let labels = dbscan_matrix(&dist, eps, m);
            runs.push(SweepRun {
                eps,
                min_samples: m,
                clusters: cluster_count(&labels),
                noise: labels.iter().filter(|l| l.is_none()).count(),
            });
        }
    }
    let average_clusters = runs.iter().map(|r| r.clusters as f64).sum::<f64>() / runs.len() as f64;
    Ok(SweepResult { runs, average_clusters })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_points_form_one_cluster() {
        let pts = vec![vec![1.0, 2.0]; 6];
        assert_eq!(dbscan(&pts, 0.5, 6).unwrap(), vec![Some(0); 6]);
    }

    #[test]
    fn tiny_eps_makes_everything_noise() {
        let pts: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, 0.0]).collect();
        assert!(dbscan(&pts, 1e-9, 2).unwrap().iter().all(Option::is_none));
    }

    #[test]
    fn border_goes_to_first_cluster() {
        // the point at the origin is within reach of both squares but is not a core itself
        let right = [[1.0, 0.0], [1.5, 0.0], [1.0, 0.5], [1.5, 0.5]];
        let left = [[-1.0, 0.0], [-1.5, 0.0], [-1.0, 0.5], [-1.5, 0.5]];
        let mut pts: Vec<Vec<f64>> = right.iter().map(|p| p.to_vec()).collect();
        pts.push(vec![0.0, 0.0]);
        pts.extend(left.iter().map(|p| p.to_vec()));
        let labels = dbscan(&pts, 1.0, 4).unwrap();
        assert_eq!(labels[4], Some(0));
        assert_eq!(labels[5], Some(1));
        assert_eq!(cluster_count(&labels), 2);
    }

    #[test]
    fn invalid_parameters() {
        let pts = vec![vec![0.0]];
        assert!(dbscan(&pts, 0.0, 1).is_err());
        assert!(dbscan(&pts, 1.0, 0).is_err());
        assert!(dbscan(&[vec![f64::NAN]], 1.0, 1).is_err());
    }

    #[test]
    fn default_grid_has_forty_runs() {
        let pts: Vec<Vec<f64>> = (0..20).map(|i| vec![(i % 5) as f64 * 0.01, 0.0]).collect();
        let r = cluster_sweep(
            &pts,
            &SweepConfig {
                normalization: Normalization::None,
                ..SweepConfig::default()
            },
        )
        .unwrap();
        assert_eq!(r.runs.len(), 40);
        assert_eq!(r.average_clusters, 1.0);
        assert!(matches!(
            cluster_sweep(&pts[..3], &SweepConfig::default()),
            Err(Error::TooFewPoints { need: 8, got: 3 })
        ));
    }

    #[test]
    fn reference_dim_rescales() {
        let pts = vec![vec![1.0; 16], vec![-1.0; 16]];
        let cfg = SweepConfig {
            normalization: Normalization::None,
            ..SweepConfig::default()
        };
        assert_eq!(sweep_space(&pts, &cfg).unwrap()[0][0], 4.0);
        let off = SweepConfig {
            reference_dim: None,
            ..cfg
        };
        assert_eq!(sweep_space(&pts, &off).unwrap()[0][0], 1.0);
    }
}
