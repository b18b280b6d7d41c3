use psmlab::data::{synth_generate, SynthConfig};
use psmlab::model::{ModelConfig, RegimeTag};
use psmlab::regimes::{
    curriculum_distance, sample_pair, train_gm, train_psm, transfer, CurriculumConfig, Regime, RegimeConfig,
};
use psmlab::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn tiny_data() -> psmlab::data::Dataset {
    synth_generate(&SynthConfig {
        subjects: 2,
        frames_per_subject: 24,
        image_size: 16,
        seed: 3,
        ..SynthConfig::default()
    })
    .unwrap()
}

fn tiny_model() -> ModelConfig {
    ModelConfig {
        image_size: 16,
        embedding_dim: 4,
        widths: vec![4, 4],
        ..ModelConfig::default()
    }
}

fn short(regime: Regime, epochs: u32) -> RegimeConfig {
    RegimeConfig {
        regime,
        epochs,
        seed: 5,
        adam: psmlab::nn::AdamConfig {
            lr: 1e-3,
            ..Default::default()
        },
        ..RegimeConfig::default()
    }
}

#[test]
fn pair_distances_are_uniform_under_curriculum() {
    let c = CurriculumConfig::linear(1, 41, 40);
    let epoch = 9;
    let d = curriculum_distance(epoch, &c) as usize;
    assert_eq!(d, 10);
    let seq = vec![(); 200];
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut counts = vec![0usize; d + 1];
    let n = 10_000;
    for _ in 0..n {
        let (i, j) = sample_pair(&seq, epoch, Some(&c), &mut rng).unwrap();
        counts[i.abs_diff(j)] += 1;
    }
    assert_eq!(counts[0], 0);
    let expected = n as f64 / d as f64;
    let chi2: f64 = counts[1..].iter().map(|&o| (o as f64 - expected).powi(2) / expected).sum();
    let critical = ChiSquared::new((d - 1) as f64).unwrap().inverse_cdf(0.95);
    assert!(chi2 < critical, "chi2 {chi2} >= {critical}");
}

#[test]
fn curriculum_clamps_to_sequence_length() {
    let c = CurriculumConfig::linear(1, 100, 1);
    let seq = vec![(); 5];
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..200 {
        let (i, j) = sample_pair(&seq, 10, Some(&c), &mut rng).unwrap();
        assert!(i < 5 && j < 5 && i != j);
    }
}

#[test]
fn unknown_identity_is_reported() {
    let data = tiny_data();
    let err = train_psm(&data, "SN999", &short(Regime::Psm, 1), &tiny_model()).unwrap_err();
    assert!(matches!(err, Error::UnknownIdentity(_)));
}

#[test]
fn gm_is_reproducible_and_lists_identities() {
    let data = tiny_data();
    let a = train_gm(&data, &short(Regime::Gm, 2), &tiny_model()).unwrap();
    let b = train_gm(&data, &short(Regime::Gm, 2), &tiny_model()).unwrap();
    assert_eq!(a.bundle, b.bundle);
    assert_eq!(a.bundle.provenance.identities, vec!["SN001", "SN002"]);
    assert_eq!(a.bundle.provenance.regime, RegimeTag::Gm);
    assert_eq!(a.losses.len(), 2);
}

#[test]
fn transfer_with_zero_epochs_keeps_parameters() {
    let data = tiny_data();
    let psm = train_psm(&data, "SN001", &short(Regime::Psm, 1), &tiny_model()).unwrap();
    let t = transfer(&psm.bundle, &data, "SN002", &short(Regime::TransferFromPsm, 0)).unwrap();
    assert_eq!(t.bundle.net, psm.bundle.net);
    assert_eq!(t.bundle.provenance.source.as_deref(), Some(&psm.bundle.provenance));

    let tuned = transfer(&psm.bundle, &data, "SN002", &short(Regime::TransferFromPsm, 1)).unwrap();
    assert_ne!(tuned.bundle.net, psm.bundle.net);
    assert_eq!(tuned.bundle.provenance.total_epochs(), 2);
}

#[test]
fn transfer_rejects_other_image_size() {
    let data = tiny_data();
    let other = psmlab::model::ModelBundle::new(ModelConfig::tiny(4), 0).unwrap();
    let err = transfer(&other, &data, "SN001", &short(Regime::TransferFromGm, 1)).unwrap_err();
    assert!(matches!(err, Error::ConfigMismatch(_)));
}

#[test]
fn frame_fraction_limits_training_frames() {
    let data = tiny_data();
    let cfg = RegimeConfig {
        frame_fraction: 0.25,
        ..short(Regime::ScratchShort, 1)
    };
    let seq = psmlab::regimes::load_sequence(&data, "SN001", cfg.frame_fraction).unwrap();
    assert_eq!(seq.len(), 6);
    let t = train_psm(&data, "SN001", &cfg, &tiny_model()).unwrap();
    assert_eq!(t.bundle.provenance.regime, RegimeTag::Scratch);
}
