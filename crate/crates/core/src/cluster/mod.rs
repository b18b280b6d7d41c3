//! Behaviour discovery in embedding space: DBSCAN sweeps, per-cluster AU
//! frequency profiles and the PSM-vs-GM novelty comparison.

mod dbscan;
mod pca;

pub use dbscan::{
    cluster_count, cluster_sweep, dbscan, dbscan_matrix, normalize, sweep_space, DistanceMatrix, Normalization, SweepConfig,
    SweepResult, SweepRun,
};
pub use pca::{pca, project_2d, Pca};

use serde::{Deserialize, Serialize};

use crate::au::{AuRecord, AU_COUNT};
use crate::data::pearson;
use crate::{Error, Result};

pub const NOVELTY_THRESHOLD: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Psm,
    Gm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterProfile {
    pub cluster_id: usize,
    /// Indices of the member frames in the clustered sequence.
    pub members: Vec<usize>,
    /// Fraction of members with each AU active.
    pub au_frequency: [f64; AU_COUNT],
    pub source: Side,
}

/// One profile per non-noise cluster, ordered by cluster id.
pub fn cluster_au_frequencies(labels: &[Option<usize>], records: &[AuRecord], source: Side) -> Result<Vec<ClusterProfile>> {
    if labels.len() != records.len() {
        return Err(Error::LengthMismatch {
            left: labels.len(),
            right: records.len(),
        });
    }
    let k = cluster_count(labels);
    let mut members = vec![Vec::new(); k];
    for (i, l) in labels.iter().enumerate() {
        if let Some(c) = l {
            members[*c].push(i);
        }
    }
    Ok(members
        .into_iter()
        .enumerate()
        .filter(|(_, m)| !m.is_empty())
        .map(|(c, m)| {
            let mut freq = [0.0; AU_COUNT];
            for &i in &m {
                for (f, &on) in freq.iter_mut().zip(records[i].binary()) {
                    *f += on as u8 as f64;
                }
            }
            freq.iter_mut().for_each(|f| *f /= m.len() as f64);
            ClusterProfile {
                cluster_id: c,
                members: m,
                au_frequency: freq,
                source,
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MetricDistance {
    #[default]
    L1,
    L2,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawMetric {
    pub value: f64,
    /// Pearson correlation was undefined (a constant vector) and taken as 0.
    pub zero_variance: bool,
}

/// Pearson correlation minus distance between two AU frequency vectors.
pub fn custom_metric_raw(a: &[f64; AU_COUNT], b: &[f64; AU_COUNT], distance: MetricDistance) -> RawMetric {
    let (rho, zero_variance) = match pearson(a, b) {
        Some(r) => (r, false),
        None => (0.0, true),
    };
    let dist = match distance {
        MetricDistance::L1 => a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>(),
        MetricDistance::L2 => a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt(),
    };
    RawMetric {
        value: rho - dist,
        zero_variance,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoveltyVerdict {
    pub cluster_id: usize,
    pub source: Side,
    /// Normalized metric against every cluster on the other side.
    pub metric_values: Vec<f64>,
    pub is_novel: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoveltyReport {
    /// `[psm][gm]` raw metric values.
    pub raw: Vec<Vec<f64>>,
    /// Min-max normalized over the whole matrix.
    pub normalized: Vec<Vec<f64>>,
    pub psm: Vec<NoveltyVerdict>,
    pub gm: Vec<NoveltyVerdict>,
    pub threshold: f64,
    /// Pairs where a constant vector made the correlation undefined.
    pub zero_variance_pairs: usize,
    /// All raw values were equal, so every normalized value is 1.
    pub degenerate_range: bool,
}

/// A cluster is novel when its normalized metric is below `threshold`
/// against every cluster of the other model.
pub fn novelty_flags(
    psm: &[ClusterProfile],
    gm: &[ClusterProfile],
    threshold: f64,
    distance: MetricDistance,
) -> Result<NoveltyReport> {
    if psm.is_empty() {
        return Err(Error::EmptySide("psm"));
    }
    if gm.is_empty() {
        return Err(Error::EmptySide("gm"));
    }
    let mut zero_variance_pairs = 0;
    let raw: Vec<Vec<f64>> = psm
        .iter()
        .map(|p| {
            gm.iter()
                .map(|g| {
                    let m = custom_metric_raw(&p.au_frequency, &g.au_frequency, distance);
                    zero_variance_pairs += m.zero_variance as usize;
                    m.value
                })
                .collect()
        })
        .collect();
    if zero_variance_pairs > 0 {
        log::warn!("{zero_variance_pairs} cluster pairs had a constant AU profile; correlation taken as 0");
    }
    let lo = raw.iter().flatten().copied().fold(f64::INFINITY, f64::min);
    let hi = raw.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
    let degenerate_range = hi - lo <= 0.0;
    let normalized: Vec<Vec<f64>> = raw
        .iter()
        .map(|row| {
            row.iter()
                .map(|&v| if degenerate_range { 1.0 } else { (v - lo) / (hi - lo) })
                .collect()
        })
        .collect();
    let verdict = |id: usize, source: Side, values: Vec<f64>| NoveltyVerdict {
        cluster_id: id,
        source,
        is_novel: values.iter().all(|&v| v < threshold),
        metric_values: values,
    };
    let psm_v = psm
        .iter()
        .enumerate()
        .map(|(i, p)| verdict(p.cluster_id, Side::Psm, normalized[i].clone()))
        .collect();
    let gm_v = gm
        .iter()
        .enumerate()
        .map(|(j, g)| verdict(g.cluster_id, Side::Gm, normalized.iter().map(|row| row[j]).collect()))
        .collect();
    Ok(NoveltyReport {
        raw,
        normalized,
        psm: psm_v,
        gm: gm_v,
        threshold,
        zero_variance_pairs,
        degenerate_range,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn indicator(i: usize) -> [f64; AU_COUNT] {
        let mut v = [0.0; AU_COUNT];
        v[i] = 1.0;
        v
    }

    fn profile(id: usize, f: [f64; AU_COUNT], source: Side) -> ClusterProfile {
        ClusterProfile {
            cluster_id: id,
            members: vec![],
            au_frequency: f,
            source,
        }
    }

    #[test]
    fn indicator_vectors_closed_form() {
        let m = custom_metric_raw(&indicator(0), &indicator(1), MetricDistance::L1);
        assert!((m.value - (-1.0 / 11.0 - 2.0)).abs() < 1e-12);
        let v = [0.1, 0.5, 0.2, 0.9, 0.0, 0.3, 0.3, 0.7, 0.1, 0.0, 0.4, 0.6];
        assert_eq!(custom_metric_raw(&v, &v, MetricDistance::L1).value, 1.0);
    }

    #[test]
    fn constant_vector_is_flagged() {
        let m = custom_metric_raw(&[0.5; AU_COUNT], &indicator(3), MetricDistance::L1);
        assert!(m.zero_variance);
        assert!((m.value - (-(0.5 * 11.0 + 0.5))).abs() < 1e-12);
    }

    #[test]
    fn copies_are_not_novel() {
        let psm = vec![profile(0, indicator(2), Side::Psm)];
        let gm = vec![profile(0, indicator(2), Side::Gm), profile(1, indicator(5), Side::Gm)];
        let r = novelty_flags(&psm, &gm, NOVELTY_THRESHOLD, MetricDistance::L1).unwrap();
        assert_eq!(r.normalized[0][0], 1.0);
        assert!(!r.psm[0].is_novel);
        assert!(r.gm[1].is_novel);
        assert!(matches!(
            novelty_flags(&[], &gm, 0.8, MetricDistance::L1),
            Err(Error::EmptySide("psm"))
        ));
    }

    #[test]
    fn frequencies_of_pure_cluster() {
        let mut rec = [0u8; AU_COUNT];
        rec[2] = 4;
        let on = AuRecord::new(rec).unwrap();
        let labels = vec![Some(0), Some(0), None, Some(1)];
        let records = vec![on, on, AuRecord::zeros(), AuRecord::zeros()];
        let p = cluster_au_frequencies(&labels, &records, Side::Psm).unwrap();
        assert_eq!(p.len(), 2);
        assert_eq!(p[0].au_frequency, indicator(2));
        assert_eq!(p[1].au_frequency, [0.0; AU_COUNT]);
        assert!(cluster_au_frequencies(&[None], &records[..1], Side::Gm).unwrap().is_empty());
    }
}
