use proptest::prelude::*;

use g3singer::chordgen::{ChordToken, Key, VOCAB_SIZE};
use g3singer::container::{decode_features, encode_features, DType};
use g3singer::features::MelNorm;
use g3singer::g3began::{tau_update, BeganState};
use g3singer::numerics::Array2;
use g3singer::trainer::bucket_batches;

proptest! {
    #[test]
    fn tau_stays_in_unit_interval(tau in 0.0f64..=1.0, lx in 0.0f64..10.0, lg in 0.0f64..10.0, gamma in 0.0f64..2.0) {
        let next = tau_update(&BeganState { tau, lambda: 0.5, gamma }, lx, lg);
        prop_assert!((0.0..=1.0).contains(&next.tau));
    }

    #[test]
    fn chord_transpose_composes(id in 0usize..VOCAB_SIZE, a in -24i32..24, b in -24i32..24) {
        let t = ChordToken::new(id).unwrap();
        prop_assert_eq!(t.transpose(a).transpose(b), t.transpose(a + b));
        prop_assert_eq!(t.transpose(a).transpose(-a), t);
        prop_assert_eq!(t.transpose(a).quality(), t.quality());
    }

    #[test]
    fn key_transpose_round_trips(tonic in 0usize..12, minor: bool, k in -12i32..12) {
        let key = if minor { Key::minor(tonic) } else { Key::major(tonic) };
        prop_assert_eq!(key.transpose(k).transpose(-k), key);
        prop_assert_eq!(Key::parse(&key.to_string()).unwrap(), key);
    }

    #[test]
    fn mel_normalisation_inverts(values in prop::collection::vec(-11.5f64..12.0, 1..64)) {
        let norm = MelNorm::default();
        let a = Array2::from_vec(1, values.len(), values).unwrap();
        let n = norm.normalize(&a);
        prop_assert!(n.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        let back = norm.denormalize(&n);
        for (x, y) in a.data().iter().zip(back.data()) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn feature_files_round_trip(rows in 1usize..6, cols in 1usize..20, seed: u64) {
        let data: Vec<f64> = (0..rows * cols).map(|i| ((i as u64 ^ seed) as f64).sin()).collect();
        let a = Array2::from_vec(rows, cols, data).unwrap();
        let back = decode_features(&encode_features(&a, DType::F64).unwrap()).unwrap();
        prop_assert_eq!(back.shape(), a.shape());
        prop_assert!(a.data().iter().zip(back.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn buckets_partition_and_share_length(lens in prop::collection::vec(1usize..4, 1..30), batch in 1usize..6) {
        let order: Vec<usize> = (0..lens.len()).collect();
        let batches = bucket_batches(&order, |i| lens[i], batch);
        let mut seen: Vec<usize> = batches.iter().flatten().copied().collect();
        seen.sort_unstable();
        prop_assert_eq!(seen, order);
        for b in &batches {
            prop_assert!(!b.is_empty() && b.len() <= batch);
            prop_assert!(b.iter().all(|&i| lens[i] == lens[b[0]]));
        }
    }
}
