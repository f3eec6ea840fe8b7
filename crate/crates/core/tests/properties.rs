mod common;

use proptest::prelude::*;

use chorusnet::annotations::{
    boundary_curve, chorus_curve, Segment, SegmentList, CHORUS, NON_CHORUS,
};
use chorusnet::chunking::{chunk_offsets, CHUNK_FRAMES, CHUNK_HOP, LABEL_POOL};
use chorusnet::inference::{contributor_counts, merge_overlaps};
use chorusnet::metrics::{auc, pairwise_f1_labels};
use chorusnet::postprocess::{
    binarize, binarize_with, label_partition, pick_boundary_peaks, DatasetPrior,
};
use chorusnet::ActivationCurve;
use common::{brute_auc, brute_pairwise, brute_peaks};

fn chunk_preds() -> impl Strategy<Value = (Vec<(usize, Vec<f64>)>, usize)> {
    (1usize..200, 1usize..40).prop_flat_map(|(l_out, width)| {
        let starts = proptest::collection::vec(0..l_out, 1..30);
        (starts, Just(l_out), Just(width)).prop_flat_map(|(mut starts, l_out, width)| {
            // Guarantee coverage with a tiling of chunks.
            starts.extend((0..l_out).step_by(width));
            let n = starts.len();
            (
                Just(starts),
                proptest::collection::vec(proptest::collection::vec(0.0f64..1.0, width), n),
                Just(l_out),
            )
                .prop_map(|(starts, values, l_out)| {
                    (starts.into_iter().zip(values).collect(), l_out)
                })
        })
    })
}

fn chorus_annotation() -> impl Strategy<Value = SegmentList> {
    (
        20.0f64..200.0,
        proptest::collection::vec((0.5f64..30.0, 0.2f64..30.0), 0..8),
    )
        .prop_map(|(d, spans)| {
            let mut t = 0.0;
            let mut segs = Vec::new();
            for (len, gap) in spans {
                let start = t + gap;
                let end = (start + len).min(d);
                if start >= d - 0.1 {
                    break;
                }
                segs.push(Segment::new(start, end, CHORUS));
                t = end;
            }
            SegmentList::new(segs, d).unwrap()
        })
}

proptest! {
    #[test]
    fn merge_is_permutation_invariant((preds, l_out) in chunk_preds(), seed in any::<u64>()) {
        let a = merge_overlaps(&preds, l_out, 1.0).unwrap();
        let mut shuffled = preds.clone();
        chorusnet::rng::SplitMix64::new(seed).shuffle(&mut shuffled);
        let b = merge_overlaps(&shuffled, l_out, 1.0).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn merge_within_contributor_range((preds, l_out) in chunk_preds()) {
        let m = merge_overlaps(&preds, l_out, 1.0).unwrap();
        for t in 0..l_out {
            let vals: Vec<f64> = preds.iter()
                .filter(|(s, v)| *s <= t && t < s + v.len())
                .map(|(s, v)| v[t - s])
                .collect();
            let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(lo <= m.values[t] && m.values[t] <= hi);
        }
    }

    #[test]
    fn every_output_index_is_covered(frames in 1usize..5000) {
        let q = contributor_counts(frames, CHUNK_FRAMES, CHUNK_HOP, LABEL_POOL).unwrap();
        prop_assert_eq!(q.len(), frames.div_ceil(LABEL_POOL));
        prop_assert!(q.iter().all(|&c| c >= 1));
        prop_assert_eq!(q[0], 1);
    }

    #[test]
    fn chunk_offsets_stay_in_song(len in 1usize..5000, align in prop::sample::select(vec![1usize, 6])) {
        let offsets = chunk_offsets(len, CHUNK_FRAMES, CHUNK_HOP, align).unwrap();
        prop_assert!(offsets.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(offsets.iter().all(|o| o % align == 0));
        let last = *offsets.last().unwrap();
        // The last chunk reaches the song end and overruns it by less than `align` frames
        // (unless the song is shorter than one chunk).
        prop_assert!(last + CHUNK_FRAMES >= len);
        if len > CHUNK_FRAMES {
            prop_assert!(last + CHUNK_FRAMES < len + align);
        }
    }

    #[test]
    fn auc_matches_pair_counting(pred in proptest::collection::vec(0u8..8, 2..120), bits in proptest::collection::vec(any::<bool>(), 120)) {
        let pred: Vec<f64> = pred.into_iter().map(f64::from).collect();
        let reference = &bits[..pred.len()];
        match brute_auc(&pred, reference) {
            Some(expected) => prop_assert_eq!(auc(&pred, reference).unwrap(), expected),
            None => prop_assert!(auc(&pred, reference).is_err()),
        }
    }

    #[test]
    fn auc_invariant_under_increasing_maps(pred in proptest::collection::vec(-5.0f64..5.0, 4..100), seed in any::<u64>()) {
        let mut rng = chorusnet::rng::SplitMix64::new(seed);
        let mut reference: Vec<bool> = pred.iter().map(|_| rng.next_f64() < 0.5).collect();
        reference[0] = true;
        reference[1] = false;
        let a = auc(&pred, &reference).unwrap();
        let mapped: Vec<f64> = pred.iter().map(|x| x.exp() + 3.0 * x).collect();
        prop_assert_eq!(a, auc(&mapped, &reference).unwrap());
    }

    #[test]
    fn pairwise_f1_bounds_and_oracle(est in proptest::collection::vec(any::<bool>(), 1..150), flip in any::<bool>(), seed in any::<u64>()) {
        let mut rng = chorusnet::rng::SplitMix64::new(seed);
        let reference: Vec<bool> = est.iter().map(|_| rng.next_f64() < 0.4).collect();
        let (p, r, f) = pairwise_f1_labels(&est, &reference).unwrap();
        prop_assert!((0.0..=1.0).contains(&p) && (0.0..=1.0).contains(&r) && (0.0..=1.0).contains(&f));
        prop_assert!(f <= p.max(r) + 1e-15);
        prop_assert_eq!((p, r, f), brute_pairwise(&est, &reference));
        // Relabelling every estimated frame leaves pair co-membership unchanged.
        if flip {
            let flipped: Vec<bool> = est.iter().map(|b| !b).collect();
            prop_assert_eq!(pairwise_f1_labels(&flipped, &reference).unwrap(), (p, r, f));
        }
    }

    #[test]
    fn peak_picking_matches_brute_force(values in proptest::collection::vec(0u8..20, 1..800), rate in 1.0f64..32.0) {
        let values: Vec<f64> = values.into_iter().map(|v| f64::from(v) / 20.0).collect();
        let curve = ActivationCurve::new(values.clone(), rate);
        let got: Vec<(usize, f64)> = pick_boundary_peaks(&curve).iter().map(|p| (p.index, p.score)).collect();
        prop_assert_eq!(got, brute_peaks(&values, rate));
    }

    #[test]
    fn binarize_output_is_a_partition(
        c in proptest::collection::vec(0.0f64..1.0, 20..600),
        b_seed in any::<u64>(),
        theta in 0.5f64..6.0,
    ) {
        let rate = 31.25 / 6.0;
        let d = c.len() as f64 / rate;
        let mut rng = chorusnet::rng::SplitMix64::new(b_seed);
        let b: Vec<f64> = c.iter().map(|_| rng.next_f64()).collect();
        let (cc, bc) = (ActivationCurve::new(c, rate), ActivationCurve::new(b, rate));
        let out = binarize(&cc, &bc, d, DatasetPrior::new(theta).unwrap()).unwrap();
        let segs = &out.segments.segments;
        prop_assert_eq!(segs[0].start, 0.0);
        prop_assert_eq!(segs.last().unwrap().end, d);
        for w in segs.windows(2) {
            prop_assert_eq!(w[0].end, w[1].start);
            prop_assert!(w[0].label != w[1].label);
        }
        prop_assert!(segs.iter().all(|s| s.end > s.start && (s.label == CHORUS || s.label == NON_CHORUS)));
        // Deterministic.
        prop_assert_eq!(&out, &binarize(&cc, &bc, d, DatasetPrior::new(theta).unwrap()).unwrap());
    }

    #[test]
    fn binarize_is_scale_invariant(
        c in proptest::collection::vec(0u8..=64, 20..400),
        cuts in proptest::collection::vec(0.0f64..1.0, 0..12),
        shift in 0u32..6,
        r in 1usize..6,
    ) {
        // Power-of-two scale factors keep the arithmetic exact.
        let k = 0.5f64.powi(shift as i32);
        let rate = 5.0;
        let d = c.len() as f64 / rate;
        let c: Vec<f64> = c.into_iter().map(|v| f64::from(v) / 64.0).collect();
        let cuts: Vec<f64> = cuts.into_iter().map(|u| u * d).collect();
        let base = label_partition(&ActivationCurve::new(c.clone(), rate), &cuts, d, r);
        let scaled = label_partition(&ActivationCurve::new(c.iter().map(|v| v * k).collect(), rate), &cuts, d, r);
        prop_assert_eq!(base, scaled);
    }

    #[test]
    fn label_curves_stay_in_unit_range(s in chorus_annotation()) {
        let n = (s.duration * 31.25) as usize;
        let c = chorus_curve(&s, 31.25, n);
        let b = boundary_curve(&s, 31.25, n);
        prop_assert!(c.values.iter().chain(&b.values).all(|v| (0.0..=1.0).contains(v)));
        for seg in &s.segments {
            // Interior of a chorus segment is fully on.
            let mid = 0.5 * (seg.start + seg.end);
            let i = (mid * 31.25) as usize;
            if i < n {
                prop_assert_eq!(c.values[i], 1.0);
            }
        }
    }
}

/// Ground-truth curves decode back to the annotation. Boundaries sit on
/// plateaus of equal maxima and ties resolve to the earliest frame, so onsets
/// may move by up to half the plateau plus one output frame.
#[test]
fn ground_truth_curves_decode_to_annotation() {
    let rate = 31.25 / 6.0;
    let tol = 0.25 + 1.0 / rate;
    let mut rng = chorusnet::rng::SplitMix64::new(11);
    for _ in 0..100 {
        // Boundaries in distinct 10 s windows, away from window edges.
        let windows = 6 + rng.below(10) as usize;
        let d = windows as f64 * 10.0;
        let mut picks: Vec<usize> = (1..windows).collect();
        rng.shuffle(&mut picks);
        let mut bounds: Vec<f64> = picks
            [..2 * (1 + rng.below(((windows - 1) / 2) as u64) as usize).min(windows - 1) / 2 * 2]
            .iter()
            .map(|&w| w as f64 * 10.0 + rng.uniform(2.5, 7.5))
            .collect();
        bounds.sort_by(f64::total_cmp);
        let segs: Vec<Segment> = bounds
            .chunks(2)
            .map(|p| Segment::new(p[0], p[1], CHORUS))
            .collect();
        let truth = SegmentList::new(segs, d).unwrap();
        let n = (d * 31.25) as usize;
        let c = chorusnet::chunking::pool_curve(&chorus_curve(&truth, 31.25, n), 6);
        let b = chorusnet::chunking::pool_curve(&boundary_curve(&truth, 31.25, n), 6);
        let out = binarize_with(&c, &b, d, bounds.len(), truth.segments.len()).unwrap();
        let found: Vec<&Segment> = out.segments.chorus_segments().collect();
        assert_eq!(
            found.len(),
            truth.segments.len(),
            "{truth:?} vs {:?}",
            out.segments
        );
        for (f, t) in found.iter().zip(&truth.segments) {
            assert!(
                (f.start - t.start).abs() <= tol && (f.end - t.end).abs() <= tol,
                "{f:?} vs {t:?}"
            );
        }
    }
}
