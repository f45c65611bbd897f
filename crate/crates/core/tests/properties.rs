use hitframe::eval::{hit_tolerance_counts, interval_iou, token_counts};
use hitframe::geometry::{denormalize_pair, order_players, KEYPOINTS_PER_PERSON};
use hitframe::synth::default_court;
use hitframe::{
    detect_hits, filter_players, normalize_pair, point_in_court, segment_rallies, smooth_stream,
    trimming_report, AngleStream, CourtKeypoints, DirectionSequence, DirectionToken, KeypointStats,
    PlayerKeypointPair, Point2, RallySegment, ShotAngleToken, SkeletonKeypoints, ToleranceConfig,
};
use proptest::prelude::*;

fn angle() -> impl Strategy<Value = ShotAngleToken> {
    prop_oneof![Just(ShotAngleToken::Other), Just(ShotAngleToken::High)]
}

fn direction() -> impl Strategy<Value = DirectionToken> {
    prop_oneof![Just(DirectionToken::S), Just(DirectionToken::B), Just(DirectionToken::U)]
}

fn court() -> impl Strategy<Value = CourtKeypoints> {
    // Trapezoids narrowing upward, with a middle line between.
    (0.0..500.0f64, 0.0..500.0f64, 50.0..400.0f64, 50.0..300.0f64, 100.0..600.0f64, 100.0..500.0f64).prop_map(
        |(x0, y0, top_w, inset, bottom_extra, h)| {
            let bl = Point2::new(x0, y0 + h);
            let br = Point2::new(x0 + top_w + 2.0 * inset + bottom_extra, y0 + h);
            let ul = Point2::new(x0 + inset + bottom_extra / 2.0, y0);
            let ur = Point2::new(ul.x + top_w, y0);
            let ml = Point2::new((ul.x + bl.x) / 2.0, y0 + h / 2.0);
            let mr = Point2::new((ur.x + br.x) / 2.0, y0 + h / 2.0);
            CourtKeypoints::new([ul, ur, ml, mr, bl, br]).unwrap()
        },
    )
}

fn skeleton() -> impl Strategy<Value = SkeletonKeypoints> {
    (
        200.0..1700.0f64,
        200.0..1100.0f64,
        prop::collection::vec((-60.0..60.0f64, -200.0..0.0f64), KEYPOINTS_PER_PERSON),
    )
        .prop_map(|(x, y, offsets)| {
            let mut pts = [Point2::new(0.0, 0.0); KEYPOINTS_PER_PERSON];
            for (p, (dx, dy)) in pts.iter_mut().zip(offsets) {
                *p = Point2::new(x + dx, y + dy);
            }
            SkeletonKeypoints(pts)
        })
}

proptest! {
    #[test]
    fn court_test_is_scale_invariant(c in court(), x in -100.0..1500.0f64, y in -100.0..1200.0f64, k in -8i32..8) {
        let s = 2f64.powi(k);
        let p = Point2::new(x, y);
        prop_assert_eq!(
            point_in_court(p, &c).unwrap(),
            point_in_court(Point2::new(x * s, y * s), &c.scaled(s)).unwrap()
        );
    }

    #[test]
    fn court_corners_are_inside(c in court()) {
        for p in c.corners() {
            prop_assert!(point_in_court(p, &c).unwrap());
        }
    }

    #[test]
    fn filtering_is_idempotent(people in prop::collection::vec(skeleton(), 0..6)) {
        let court = default_court();
        if let Ok(pair) = filter_players(&people, &court) {
            let again = filter_players(&[pair.top_player, pair.bottom_player], &court).unwrap();
            prop_assert_eq!(again, pair);
            let bottom = pair.bottom_player.ankle_midpoint();
            let top = pair.top_player.ankle_midpoint();
            prop_assert!(bottom.y >= top.y);
        }
    }

    #[test]
    fn player_order_ignores_argument_order(a in skeleton(), b in skeleton()) {
        prop_assume!(a.ankle_midpoint() != b.ankle_midpoint());
        prop_assert_eq!(order_players(a, b), order_players(b, a));
    }

    #[test]
    fn normalization_round_trips(pairs in prop::collection::vec((skeleton(), skeleton()), 2..8)) {
        let pairs: Vec<PlayerKeypointPair> = pairs.into_iter().map(|(a, b)| order_players(a, b)).collect();
        let stats = KeypointStats::from_pairs(&pairs).unwrap();
        for p in &pairs {
            let back = denormalize_pair(&normalize_pair(p, &stats), &stats);
            for (x, y) in back.flat().iter().zip(p.flat()) {
                prop_assert!((x - y).abs() <= 1e-9 * (1.0 + y.abs()));
            }
        }
        let id = normalize_pair(&pairs[0], &KeypointStats::identity());
        prop_assert_eq!(id, pairs[0]);
    }

    #[test]
    fn segments_partition_high_frames(tokens in prop::collection::vec(angle(), 1..300)) {
        let stream = AngleStream::new("v", 25.0, tokens.clone()).unwrap();
        let segs = segment_rallies(&stream).unwrap();
        let mut covered = vec![false; tokens.len()];
        for s in &segs {
            for f in s.frames() {
                prop_assert!(!covered[f]);
                covered[f] = true;
            }
        }
        for (t, c) in tokens.iter().zip(&covered) {
            prop_assert_eq!(*c, *t == ShotAngleToken::High);
        }
        for w in segs.windows(2) {
            // Maximal runs never touch.
            prop_assert!(w[0].end_frame + 1 < w[1].start_frame);
        }
    }

    #[test]
    fn smoothing_removes_short_interior_runs(tokens in prop::collection::vec(angle(), 1..200), k in 1usize..8) {
        let stream = AngleStream::new("v", 25.0, tokens).unwrap();
        let s = smooth_stream(&stream, k).unwrap();
        prop_assert_eq!(s.len(), stream.len());
        prop_assert_eq!(s.tokens[0], stream.tokens[0]);
        prop_assert_eq!(smooth_stream(&stream, 1).unwrap(), stream.clone());
        // Short runs merge into their predecessor, so only the first run may
        // stay short.
        let mut runs = Vec::new();
        let mut i = 0;
        while i < s.len() {
            let mut j = i;
            while j < s.len() && s.tokens[j] == s.tokens[i] {
                j += 1;
            }
            runs.push(j - i);
            i = j;
        }
        for (n, &len) in runs.iter().enumerate().skip(1) {
            prop_assert!(len >= k, "run {} has length {} < {}", n, len, k);
        }
    }

    #[test]
    fn hits_sit_on_direction_changes(tokens in prop::collection::vec(direction(), 0..60)) {
        let seq = DirectionSequence::new("r", tokens.clone()).unwrap();
        let hits = detect_hits(&seq).unwrap().indices;
        prop_assert!(hits.windows(2).all(|w| w[0] < w[1]));
        for &h in &hits {
            prop_assert!(tokens[h] != DirectionToken::S);
            let prev = if h == 0 { DirectionToken::S } else { tokens[h - 1] };
            prop_assert_ne!(prev, tokens[h]);
        }
        // Every S→B/U or B↔U change is reported.
        let mut prev = DirectionToken::S;
        let mut expected = 0;
        for &t in &tokens {
            expected += usize::from(t != prev && t != DirectionToken::S);
            prev = t;
        }
        prop_assert_eq!(hits.len(), expected);
    }

    #[test]
    fn tolerance_counts_are_monotone(
        pred in prop::collection::btree_set(0usize..300, 0..20),
        actual in prop::collection::btree_set(0usize..300, 0..20),
        t1 in 1usize..40,
        dt in 0usize..40,
    ) {
        let p: Vec<usize> = pred.into_iter().collect();
        let a: Vec<usize> = actual.into_iter().collect();
        let lo = hit_tolerance_counts(&p, &a, 300, ToleranceConfig::new(t1).unwrap()).unwrap();
        let hi = hit_tolerance_counts(&p, &a, 300, ToleranceConfig::new(t1 + dt).unwrap()).unwrap();
        prop_assert!(lo.tp <= hi.tp);
        prop_assert_eq!(lo.tp + lo.fp, p.len() as u64);
        prop_assert_eq!(lo.tp + lo.fn_, a.len() as u64);
        prop_assert_eq!(lo.total(), 300);
    }

    #[test]
    fn token_counts_ignore_position_order(
        pairs in prop::collection::vec((direction(), direction()), 1..50),
        rot in 0usize..50,
    ) {
        let (p, g): (Vec<_>, Vec<_>) = pairs.iter().copied().unzip();
        let k = rot % pairs.len();
        let mut pr = p.clone();
        let mut gr = g.clone();
        pr.rotate_left(k);
        gr.rotate_left(k);
        pr.reverse();
        gr.reverse();
        prop_assert_eq!(token_counts(&p, &g).unwrap(), token_counts(&pr, &gr).unwrap());
    }

    #[test]
    fn trimming_counts_balance(
        pred in prop::collection::btree_set(0usize..60, 0..10),
        actual in prop::collection::btree_set(0usize..60, 1..10),
    ) {
        // Disjoint ten-frame slots starting at multiples of ten.
        let slots = |s: &std::collections::BTreeSet<usize>| -> Vec<RallySegment> {
            s.iter().map(|&i| RallySegment::new(i * 10, i * 10 + 7).unwrap()).collect()
        };
        let (p, a) = (slots(&pred), slots(&actual));
        let r = trimming_report(&p, &a, 0.5).unwrap();
        prop_assert_eq!(r.correct + r.extra, r.total_trimmed);
        prop_assert_eq!(r.correct + r.missed, r.actual);
        prop_assert_eq!(r.correct as usize, pred.intersection(&actual).count());
        let same = trimming_report(&a, &a, 0.5).unwrap();
        prop_assert_eq!(same.accuracy, 1.0);
        for s in &a {
            prop_assert_eq!(interval_iou(s, s), 1.0);
        }
    }
}
