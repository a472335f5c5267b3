//! Property tests over the public API.

use proptest::prelude::*;

use prlab::data::CorpusSpec;
use prlab::eval::{duration_diff, edit_distance};
use prlab::model::{apply_delay_pattern, revert_delay_pattern, CodecGrid};
use prlab::numeric::{Tape, Tensor};
use prlab::positional::{pmrope_rotate, rope_rotate, ProgressIndex, RotationSchedule};
use prlab::selftest::brute_force_edit_distance;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn pair_vectors() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (1usize..=16).prop_flat_map(|half| {
        (
            proptest::collection::vec(-1.0f64..1.0, 2 * half),
            proptest::collection::vec(-1.0f64..1.0, 2 * half),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn rope_depends_on_offset_only((q, k) in pair_vectors(), m in 0usize..1000, n in 0usize..1000, s in 0usize..1000) {
        let sched = RotationSchedule::with_dim(q.len()).unwrap();
        let a = dot(&rope_rotate(&q, m, &sched).unwrap(), &rope_rotate(&k, n, &sched).unwrap());
        let b = dot(&rope_rotate(&q, m + s, &sched).unwrap(), &rope_rotate(&k, n + s, &sched).unwrap());
        prop_assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn pmrope_ignores_common_rescaling((q, k) in pair_vectors(), total in 1usize..300, a in 0usize..300, b in 0usize..300, m in 2usize..10) {
        let sched = RotationSchedule::with_dim(q.len()).unwrap();
        let (a, b) = (a % total, b % total);
        let p = |x| ProgressIndex::new(x, total).unwrap();
        let base = dot(&pmrope_rotate(&q, p(a), &sched).unwrap(), &pmrope_rotate(&k, p(b), &sched).unwrap());
        let scaled = dot(
            &pmrope_rotate(&q, p(a).scaled(m).unwrap(), &sched).unwrap(),
            &pmrope_rotate(&k, p(b).scaled(m).unwrap(), &sched).unwrap(),
        );
        prop_assert!((base - scaled).abs() < 1e-9);
    }

    #[test]
    fn rotation_preserves_norm(v in proptest::collection::vec(-5.0f64..5.0, 8), pos in 0usize..5000) {
        let sched = RotationSchedule::with_dim(8).unwrap();
        let r = rope_rotate(&v, pos, &sched).unwrap();
        prop_assert!((dot(&r, &r) - dot(&v, &v)).abs() < 1e-9);
    }

    #[test]
    fn delay_pattern_round_trips(k in 1usize..=4, rows in proptest::collection::vec(proptest::collection::vec(0usize..50, 1..40), 4)) {
        let len = rows.iter().map(Vec::len).min().unwrap();
        let grid = CodecGrid::new(rows.into_iter().take(k).map(|r| r[..len].to_vec()).collect()).unwrap();
        let delayed = apply_delay_pattern(&grid, 99).unwrap();
        prop_assert_eq!(delayed.len(), len + k - 1);
        prop_assert_eq!(revert_delay_pattern(&delayed, 99).unwrap(), grid);
    }

    #[test]
    fn edit_distance_matches_oracle(a in proptest::collection::vec(0usize..4, 0..=12), b in proptest::collection::vec(0usize..4, 0..=12)) {
        let d = edit_distance(&a, &b);
        prop_assert_eq!(d, brute_force_edit_distance(&a, &b));
        prop_assert_eq!(d, edit_distance(&b, &a));
        prop_assert!(d >= a.len().abs_diff(b.len()) && d <= a.len().max(b.len()));
    }

    #[test]
    fn duration_diff_symmetric(a in 0usize..500, b in 0usize..500) {
        prop_assert_eq!(duration_diff(a, b, 0.02), duration_diff(b, a, 0.02));
        prop_assert_eq!(duration_diff(a, b, 0.02) == 0.0, a == b);
    }

    #[test]
    fn softmax_rows_sum_to_one(vals in proptest::collection::vec(-1e4f64..1e4, 12)) {
        let mut tape = Tape::new();
        let x = tape.leaf(&Tensor::new(vec![3, 4], vals).unwrap());
        let s = tape.softmax_rows(x);
        for row in tape.value(s).chunks(4) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn speed_perturb_keeps_content(speaker in 0u64..50, index in 0u64..8, count in 1usize..12, factor in 0.75f64..=1.25) {
        let spec = CorpusSpec::toy(3);
        let u = spec.gen_utterance(speaker, index, count).unwrap();
        let p = spec.speed_perturb(&u, factor, 0.25).unwrap();
        prop_assert_eq!(&p.phonemes, &u.phonemes);
        prop_assert!((p.duration_frames() as f64 * factor - u.duration_frames() as f64).abs() <= count as f64 + 1e-9);
    }
}

#[test]
fn utterances_are_deterministic() {
    let spec = CorpusSpec::toy(9);
    assert_eq!(spec.gen_utterance(4, 2, 7).unwrap(), spec.gen_utterance(4, 2, 7).unwrap());
}
