use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::au::AU_COUNT;
use crate::error::{Error, Result};

/// Dataset-level AU statistics over all labelled frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuStatistics {
    pub per_au_frequency: [f64; AU_COUNT],
    pub per_subject_frequency: BTreeMap<String, [f64; AU_COUNT]>,
    /// `cooccurrence[i][j] = P(AU_i = 1 | AU_j = 1)`; `None` where AU_j never fires.
    pub cooccurrence: [[Option<f64>; AU_COUNT]; AU_COUNT],
    /// Mean Pearson correlation of binary AU series over subject pairs and
    /// AUs, skipping zero-variance series. `None` when nothing qualifies.
    pub cross_subject_temporal_correlation: Option<f64>,
    pub correlation_pairs_used: usize,
    pub correlation_pairs_skipped: usize,
    /// Subject series are truncated to their common length before correlating.
    pub truncated_to_common_length: bool,
}

pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len().min(b.len());
    if n < 2 {
        return None;
    }
    let (a, b) = (&a[..n], &b[..n]);
    let ma = a.iter().sum::<f64>() / n as f64;
    let mb = b.iter().sum::<f64>() / n as f64;
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va <= 0.0 || vb <= 0.0 {
        return None;
    }
    Some(cov / (va * vb).sqrt())
}

pub fn au_statistics(dataset: &Dataset) -> Result<AuStatistics> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut total = 0usize;
    let mut pos = [0usize; AU_COUNT];
    let mut joint = [[0usize; AU_COUNT]; AU_COUNT];
    let mut per_subject = BTreeMap::new();
    let mut series: Vec<Vec<Vec<f64>>> = Vec::new();

    for (id, frames) in dataset.subjects() {
        let mut spos = [0usize; AU_COUNT];
        let mut s = vec![Vec::with_capacity(frames.len()); AU_COUNT];
        for f in frames {
            let b = f.labels.binary();
            for j in 0..AU_COUNT {
                s[j].push(b[j] as u8 as f64);
                if b[j] {
                    spos[j] += 1;
                    for i in 0..AU_COUNT {
                        joint[i][j] += b[i] as usize;
                    }
                }
            }
        }
        for j in 0..AU_COUNT {
            pos[j] += spos[j];
        }
        total += frames.len();
        let n = frames.len().max(1) as f64;
        per_subject.insert(id.clone(), spos.map(|c| c as f64 / n));
        series.push(s);
    }

    let mut cooc = [[None; AU_COUNT]; AU_COUNT];
    for j in 0..AU_COUNT {
        if pos[j] > 0 {
            for i in 0..AU_COUNT {
                cooc[i][j] = Some(joint[i][j] as f64 / pos[j] as f64);
            }
        }
    }

    let lengths: Vec<usize> = series.iter().map(|s| s[0].len()).collect();
    let truncated = lengths.windows(2).any(|w| w[0] != w[1]);
    let (mut sum, mut used, mut skipped) = (0.0, 0usize, 0usize);
    for a in 0..series.len() {
        for b in (a + 1)..series.len() {
            for au in 0..AU_COUNT {
                match pearson(&series[a][au], &series[b][au]) {
                    Some(r) => {
                        sum += r;
                        used += 1;
                    }
                    None => skipped += 1,
                }
            }
        }
    }

    Ok(AuStatistics {
        per_au_frequency: pos.map(|c| c as f64 / total as f64),
        per_subject_frequency: per_subject,
        cooccurrence: cooc,
        cross_subject_temporal_correlation: (used > 0).then(|| sum / used as f64),
        correlation_pairs_used: used,
        correlation_pairs_skipped: skipped,
        truncated_to_common_length: truncated,
    })
}
