//! Property-based tests: invariants that must hold for arbitrary inputs,
//! not just hand-picked ones.

use proptest::collection::vec;
use proptest::prelude::*;

use fedsim_core::models::{model_from_bytes, model_to_bytes};
use fedsim_core::numerics::StreamPurpose;
use fedsim_core::{
    dirichlet_partition, make_synthetic, roc_auc, ArchConfig, ModelParams, PartitionSpec,
    RngStream, TaskMode,
};

/// Scores drawn from a coarse integer grid so ties are common.
fn tied_scores_and_labels() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    vec((0u8..7, any::<bool>()), 2..80).prop_map(|pairs| {
        pairs
            .into_iter()
            .map(|(s, l)| (s as f64 / 4.0, l))
            .unzip()
    })
}

fn brute_force_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut num = 0.0;
    let mut pairs = 0u64;
    for (i, &li) in labels.iter().enumerate() {
        for (j, &lj) in labels.iter().enumerate() {
            if li && !lj {
                pairs += 1;
                if scores[i] > scores[j] {
                    num += 1.0;
                } else if scores[i] == scores[j] {
                    num += 0.5;
                }
            }
        }
    }
    num / pairs as f64
}

proptest! {
    /// The rank-based AUC is bit-identical to naive pair counting, ties and all.
    #[test]
    fn auc_equals_pair_counting((scores, labels) in tied_scores_and_labels()) {
        prop_assume!(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l));
        let fast = roc_auc(&scores, &labels).unwrap();
        let slow = brute_force_auc(&scores, &labels);
        prop_assert_eq!(fast.to_bits(), slow.to_bits());
    }

    /// Strictly increasing score transforms cannot change the AUC at all.
    #[test]
    fn auc_invariant_under_affine_transform(
        (scores, labels) in tied_scores_and_labels(),
        scale in 0.1f64..50.0,
        shift in -100.0f64..100.0,
    ) {
        prop_assume!(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l));
        let base = roc_auc(&scores, &labels).unwrap();
        let mapped: Vec<f64> = scores.iter().map(|s| scale * s + shift).collect();
        let transformed = roc_auc(&mapped, &labels).unwrap();
        prop_assert_eq!(base.to_bits(), transformed.to_bits());
    }

    /// Partitioning moves every example to exactly one client, for any
    /// client count, concentration, and seed.
    #[test]
    fn partition_conserves_ids(
        num_clients in 1usize..8,
        alpha in 0.05f64..50.0,
        seed in any::<u64>(),
        n in 8usize..200,
    ) {
        let ds = make_synthetic(4, 6, n, 2.0, TaskMode::Multiclass, 3).unwrap();
        let parts = dirichlet_partition(&ds, &PartitionSpec { num_clients, alpha, seed }).unwrap();
        prop_assert_eq!(parts.len(), num_clients);
        let mut seen: Vec<u64> = parts.iter().flat_map(|p| p.ids.iter().copied()).collect();
        seen.sort_unstable();
        let mut expect = ds.ids.clone();
        expect.sort_unstable();
        prop_assert_eq!(seen, expect);
    }

    /// Wire serialization quantizes each value to exactly its nearest f32
    /// (and nothing else), so a second trip through the wire is lossless.
    #[test]
    fn model_bytes_roundtrip(
        feature_dim in 2usize..10,
        latent_frac in 1usize..9,
        num_classes in 2usize..6,
        noise_dim in 1usize..4,
        ext_hidden in vec(1usize..12, 0..2),
        pred_hidden in vec(1usize..12, 0..2),
        seed in any::<u64>(),
    ) {
        let latent_dim = (latent_frac * (feature_dim - 1) / 8).max(1).min(feature_dim - 1);
        let arch = ArchConfig {
            feature_dim,
            latent_dim,
            num_classes,
            noise_dim,
            extractor_hidden: ext_hidden,
            predictor_hidden: pred_hidden,
            generator_hidden: vec![6],
        };
        let model = ModelParams::init(
            &arch,
            &mut RngStream::for_purpose(seed, StreamPurpose::ModelInit, 0, 0),
        ).unwrap();
        let back = model_from_bytes(&model_to_bytes(&model)).unwrap();

        let flatten = |m: &ModelParams| -> Vec<f64> {
            m.extractor
                .params()
                .iter()
                .chain(m.predictor.params().iter())
                .flat_map(|t| t.data().iter().copied())
                .collect()
        };
        let sent = flatten(&model);
        let received = flatten(&back);
        prop_assert_eq!(sent.len(), received.len());
        for (s, r) in sent.iter().zip(&received) {
            prop_assert_eq!((*s as f32) as f64, *r);
        }

        let again = model_from_bytes(&model_to_bytes(&back)).unwrap();
        prop_assert_eq!(back, again);
    }
}
