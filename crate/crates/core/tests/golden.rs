use ndarray::Array2;

use taa_core::eval::{evaluate, Insult};
use taa_core::maps::MapKind;
use taa_core::store::{decode_predictions, encode_predictions, SampleRecord, StoreError, StoredMap};

const GOLDEN: &[u8] = include_bytes!("fixtures/golden_predictions.bin");

fn value(sample_id: u64, channel: u64, i: usize, j: usize) -> f64 {
    ((sample_id * 7 + channel * 13 + (i * 41 + j) as u64) % 97) as f64 / 96.0
}

fn expected(sample_id: u64, channel: u64) -> Array2<f64> {
    Array2::from_shape_fn((41, 41), |(i, j)| value(sample_id, channel, i, j))
}

#[test]
fn golden_predictions_parse_and_reencode_identically() {
    let set = decode_predictions(GOLDEN).unwrap();
    assert_eq!(set.model_id, "golden-unet");
    assert_eq!(set.predictions.iter().map(|p| p.sample_id).collect::<Vec<_>>(), vec![3, 17, 42]);
    for p in &set.predictions {
        assert_eq!(p.theta_ce, expected(p.sample_id, 0).mapv(|v| v as f32));
        assert_eq!(p.theta_delta, expected(p.sample_id, 1).mapv(|v| v as f32));
    }
    assert_eq!(encode_predictions(&set), GOLDEN);
}

#[test]
fn golden_predictions_score_zero_against_matching_truth() {
    let set = decode_predictions(GOLDEN).unwrap();
    let truth: Vec<SampleRecord> = set
        .predictions
        .iter()
        .map(|p| SampleRecord {
            sample_id: p.sample_id,
            profile_id: p.sample_id,
            combo_index: 2,
            amplitude_scale: 1.0,
            maps: vec![
                StoredMap::f32(MapKind::ThetaStar, &Array2::from_elem((41, 41), 1.0)),
                StoredMap::f32(MapKind::InsultCe, &expected(p.sample_id, 0)),
                StoredMap::f32(MapKind::InsultDelta, &expected(p.sample_id, 1)),
            ],
        })
        .collect();
    let report = evaluate(&set, &truth, "fixture").unwrap();
    for i in Insult::BOTH {
        assert_eq!(report.score(i).full.mean, 0.0);
        assert_eq!(report.score(i).filtered.mean, 0.0);
    }
}

#[test]
fn corrupted_golden_bytes_are_rejected() {
    let mut bad = GOLDEN.to_vec();
    let last = bad.len() - 1;
    bad[last] ^= 0x40;
    assert!(matches!(decode_predictions(&bad), Err(StoreError::Checksum { .. })));
    assert!(matches!(decode_predictions(&GOLDEN[..GOLDEN.len() - 3]), Err(StoreError::Truncated { .. })));
}
