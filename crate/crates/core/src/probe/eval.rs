use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::exchange::EmbeddingTable;
use super::linear::{fit_probe, ProbeConfig};
use super::metrics::{bootstrap_f1, f1_score, BootstrapSummary};
use crate::au::{channel_of, AuRecord, AU_COUNT, AU_IDS};
use crate::data::{identity_folds, stratified_split, Dataset, FrameRef};
use crate::model::ModelBundle;
use crate::{Error, Result};

/// Where frame embeddings come from.
pub enum EmbeddingSource<'a> {
    Bundle(&'a ModelBundle),
    Table(&'a EmbeddingTable),
}

impl EmbeddingSource<'_> {
    pub fn embed(&self, frames: &[&FrameRef]) -> Result<Vec<Vec<f32>>> {
        match self {
            EmbeddingSource::Bundle(b) => embed_frames(b, frames),
            EmbeddingSource::Table(t) => frames
                .iter()
                .map(|f| {
                    t.get(&f.identity, f.index).map(<[f32]>::to_vec).ok_or_else(|| Error::SchemaMismatch {
                        field: "rows".into(),
                        detail: format!("no embedding for {} frame {}", f.identity, f.index),
                    })
                })
                .collect(),
        }
    }
}

pub fn embed_frames(bundle: &ModelBundle, frames: &[&FrameRef]) -> Result<Vec<Vec<f32>>> {
    frames
        .iter()
        .map(|f| Ok(bundle.encode_motion(&f.load_pixels()?)?.code))
        .collect()
}

/// AUs whose positive rate over `labels` is at least `min_rate`.
pub fn active_aus<'a>(labels: impl IntoIterator<Item = &'a AuRecord>, min_rate: f64) -> Vec<u8> {
    let mut counts = [0usize; AU_COUNT];
    let mut n = 0usize;
    for l in labels {
        n += 1;
        for (c, &on) in l.binary().iter().enumerate() {
            counts[c] += on as usize;
        }
    }
    if n == 0 {
        return Vec::new();
    }
    AU_IDS
        .iter()
        .zip(counts)
        .filter(|(_, c)| *c as f64 / n as f64 >= min_rate)
        .map(|(&au, _)| au)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldDescriptor {
    pub train_identities: Vec<String>,
    pub test_identities: Vec<String>,
    pub n_train: usize,
    pub n_test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SplitDescriptor {
    PersonDependent {
        identity: String,
        train_fraction: f64,
        n_train: usize,
        n_test: usize,
        seed: u64,
    },
    PersonIndependent {
        folds: Vec<FoldDescriptor>,
        seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    /// Bootstrap-mean F1 per evaluated AU.
    pub per_au_f1: BTreeMap<u8, f64>,
    /// F1 on the full test set.
    pub plug_in_f1: BTreeMap<u8, f64>,
    pub bootstrap: BTreeMap<u8, BootstrapSummary>,
    pub evaluated_aus: Vec<u8>,
    /// AUs that passed the activity filter but could not be fitted.
    pub skipped_aus: Vec<u8>,
    pub split: SplitDescriptor,
}

impl ProbeResult {
    pub fn mean_f1(&self) -> f64 {
        if self.per_au_f1.is_empty() {
            return 0.0;
        }
        self.per_au_f1.values().sum::<f64>() / self.per_au_f1.len() as f64
    }
}

struct SplitScores {
    plug_in: BTreeMap<u8, f64>,
    bootstrap: BTreeMap<u8, BootstrapSummary>,
}

fn score_split(
    train: (&[Vec<f32>], &[AuRecord]),
    test: (&[Vec<f32>], &[AuRecord]),
    aus: &[u8],
    config: &ProbeConfig,
) -> Result<SplitScores> {
    let model = fit_probe(train.0, train.1, aus, config)?;
    let preds: Vec<Vec<bool>> = test.0.iter().map(|e| model.predict(e)).collect();
    let mut plug_in = BTreeMap::new();
    let mut bootstrap = BTreeMap::new();
    for (k, &au) in model.aus.iter().enumerate() {
        let c = channel_of(au).unwrap();
        let p: Vec<bool> = preds.iter().map(|v| v[k]).collect();
        let l: Vec<bool> = test.1.iter().map(|r| r.binary()[c]).collect();
        plug_in.insert(au, f1_score(&p, &l)?);
        if config.n_bootstrap > 0 {
            bootstrap.insert(au, bootstrap_f1(&p, &l, config.n_bootstrap, config.seed.wrapping_add(au as u64))?);
        }
    }
    Ok(SplitScores { plug_in, bootstrap })
}

fn finish(scores: SplitScores, active: Vec<u8>, split: SplitDescriptor) -> ProbeResult {
    let evaluated: Vec<u8> = active.iter().copied().filter(|a| scores.plug_in.contains_key(a)).collect();
    let skipped: Vec<u8> = active.iter().copied().filter(|a| !scores.plug_in.contains_key(a)).collect();
    let per_au_f1 = scores
        .plug_in
        .iter()
        .map(|(&au, &f)| (au, scores.bootstrap.get(&au).map_or(f, |b| b.mean)))
        .collect();
    ProbeResult {
        per_au_f1,
        plug_in_f1: scores.plug_in,
        bootstrap: scores.bootstrap,
        evaluated_aus: evaluated,
        skipped_aus: skipped,
        split,
    }
}

/// 80/20 stratified split of one person's frames; AUs active in under 2%
/// of that person's video are left out.
pub fn eval_person_dependent(
    source: &EmbeddingSource<'_>,
    dataset: &Dataset,
    identity: &str,
    config: &ProbeConfig,
) -> Result<ProbeResult> {
    let all = dataset.frames(identity)?;
    let active = active_aus(all.iter().map(|f| &f.labels), config.min_active_rate);
    let usable = dataset.usable_frames(identity)?;
    let (train, test) = stratified_split(&usable, config.train_fraction, config.seed)?;
    let split = SplitDescriptor::PersonDependent {
        identity: identity.to_string(),
        train_fraction: config.train_fraction,
        n_train: train.len(),
        n_test: test.len(),
        seed: config.seed,
    };
    if active.is_empty() {
        return Ok(finish(
            SplitScores {
                plug_in: BTreeMap::new(),
                bootstrap: BTreeMap::new(),
            },
            active,
            split,
        ));
    }
    let train_emb = source.embed(&train)?;
    let test_emb = source.embed(&test)?;
    let train_lab: Vec<AuRecord> = train.iter().map(|f| f.labels).collect();
    let test_lab: Vec<AuRecord> = test.iter().map(|f| f.labels).collect();
    let scores = match score_split((&train_emb, &train_lab), (&test_emb, &test_lab), &active, config) {
        Ok(s) => s,
        Err(Error::DegenerateLabels { .. }) => SplitScores {
            plug_in: BTreeMap::new(),
            bootstrap: BTreeMap::new(),
        },
        Err(e) => return Err(e),
    };
    Ok(finish(scores, active, split))
}

/// k-fold cross validation over identities. The activity filter is applied
/// over the whole dataset; per-AU scores and bootstrap values are averaged
/// over the folds in which the AU could be fitted.
pub fn eval_person_independent(
    source: &EmbeddingSource<'_>,
    dataset: &Dataset,
    config: &ProbeConfig,
) -> Result<ProbeResult> {
    let ids = dataset.identities();
    let folds = identity_folds(&ids, config.folds, config.seed)?;
    let active = active_aus(
        dataset.subjects().values().flat_map(|fs| fs.iter().map(|f| &f.labels)),
        config.min_active_rate,
    );
    let mut per_id: BTreeMap<&str, (Vec<Vec<f32>>, Vec<AuRecord>)> = BTreeMap::new();
    for id in &ids {
        let usable = dataset.usable_frames(id)?;
        let emb = source.embed(&usable)?;
        per_id.insert(id, (emb, usable.iter().map(|f| f.labels).collect()));
    }
    let mut sums: BTreeMap<u8, (f64, Vec<f64>, usize)> = BTreeMap::new();
    let mut descriptors = Vec::new();
    for test_ids in &folds {
        let test_set: BTreeSet<&str> = test_ids.iter().map(String::as_str).collect();
        let train_ids: Vec<String> = ids.iter().filter(|i| !test_set.contains(i.as_str())).cloned().collect();
        assert!(train_ids.iter().all(|i| !test_set.contains(i.as_str())), "identity leak across fold");
        let gather = |which: &[String]| {
            let mut e = Vec::new();
            let mut l = Vec::new();
            for id in which {
                let (emb, lab) = &per_id[id.as_str()];
                e.extend(emb.iter().cloned());
                l.extend(lab.iter().copied());
            }
            (e, l)
        };
        let (tr_e, tr_l) = gather(&train_ids);
        let (te_e, te_l) = gather(test_ids);
        descriptors.push(FoldDescriptor {
            train_identities: train_ids,
            test_identities: test_ids.clone(),
            n_train: tr_e.len(),
            n_test: te_e.len(),
        });
        if active.is_empty() || te_e.len() < 2 {
            continue;
        }
        let scores = match score_split((&tr_e, &tr_l), (&te_e, &te_l), &active, config) {
            Ok(s) => s,
            Err(Error::DegenerateLabels { .. }) => continue,
            Err(e) => return Err(e),
        };
        for (au, f) in scores.plug_in {
            let entry = sums.entry(au).or_insert_with(|| (0.0, vec![0.0; config.n_bootstrap], 0));
            entry.0 += f;
            if let Some(b) = scores.bootstrap.get(&au) {
                for (s, v) in entry.1.iter_mut().zip(&b.values) {
                    *s += v;
                }
            }
            entry.2 += 1;
        }
    }
    let mut plug_in = BTreeMap::new();
    let mut bootstrap = BTreeMap::new();
    for (au, (f, values, n)) in sums {
        let n = n as f64;
        plug_in.insert(au, f / n);
        if config.n_bootstrap > 0 {
            bootstrap.insert(au, BootstrapSummary::from_values(values.into_iter().map(|v| v / n).collect()));
        }
    }
    Ok(finish(
        SplitScores { plug_in, bootstrap },
        active,
        SplitDescriptor::PersonIndependent {
            folds: descriptors,
            seed: config.seed,
        },
    ))
}
