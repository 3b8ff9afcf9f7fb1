mod common;

use common::*;
use proptest::prelude::*;
use rand::Rng;
use tubelet_core::eval::{average_precision, corloc, corloc_report, mean_ap, temporal_variation};

#[test]
fn ap_matches_brute_force_enumeration() {
    let mut r = rng(3);
    for case in 0..500 {
        let (dets, gts) = random_ap_instance(&mut r, 20, 10);
        let thresh = [0.5, 0.3, 0.7][case % 3];
        let got = average_precision(&dets, &gts, thresh).unwrap();
        let want = brute_force_ap(&dets, &gts, thresh);
        assert!((got - want).abs() <= 1e-12, "case {case}: {got} vs {want}");
        assert!((0.0..=1.0).contains(&got));
    }
}

#[test]
fn hand_cases() {
    let g = bb(0.0, 0.0, 10.0, 10.0);
    let far = bb(50.0, 50.0, 60.0, 60.0);
    let gts = [gt("v", 0, 0, 0, g)];
    assert_eq!(average_precision(&[det("v", 0, 0, 0.9, g)], &gts, 0.5).unwrap(), 1.0);
    let fp_first = [det("v", 0, 0, 0.9, far), det("v", 0, 0, 0.1, g)];
    assert_eq!(average_precision(&fp_first, &gts, 0.5).unwrap(), 0.5);
    assert_eq!(average_precision(&[], &gts, 0.5).unwrap(), 0.0);
    assert!(average_precision(&fp_first, &[], 0.5).is_err());
}

#[test]
fn mean_over_classes_with_ground_truth() {
    let g = bb(0.0, 0.0, 10.0, 10.0);
    let classes = vec!["a".to_string(), "b".to_string(), "c".to_string()];
    let gts = [gt("v", 0, 0, 0, g), gt("v", 0, 1, 1, g)];
    // class a perfect, class b missed, class c has no ground truth
    let dets = [det("v", 0, 0, 1.0, g), det("v", 0, 2, 1.0, g)];
    let r = mean_ap("t", &dets, &gts, &classes, 0.5).unwrap();
    assert_eq!(r.mean_ap, Some(0.5));
    assert_eq!(r.class(2).unwrap().ap, None);
    assert!(mean_ap("t", &dets, &[], &classes, 0.5).is_err());
}

proptest! {
    #[test]
    fn ap_invariant_under_monotone_score_transform(seed in any::<u64>()) {
        let mut r = rng(seed);
        let (dets, gts) = random_ap_instance(&mut r, 20, 10);
        let moved: Vec<_> = dets.iter().map(|d| {
            let mut d = d.clone();
            d.score = (3.0 * d.score).exp() - 7.0;
            d
        }).collect();
        prop_assert_eq!(average_precision(&dets, &gts, 0.5).unwrap(), average_precision(&moved, &gts, 0.5).unwrap());
    }

    #[test]
    fn lowest_false_positive_never_helps(seed in any::<u64>()) {
        let mut r = rng(seed);
        let (mut dets, gts) = random_ap_instance(&mut r, 20, 10);
        let before = average_precision(&dets, &gts, 0.5).unwrap();
        // a box on a frame no ground truth uses cannot match
        dets.push(det("zzz", 0, 0, -10.0, random_box(&mut r)));
        prop_assert!(average_precision(&dets, &gts, 0.5).unwrap() <= before + 1e-15);
    }

    #[test]
    fn top_true_positive_never_hurts(seed in any::<u64>()) {
        let mut r = rng(seed);
        let (mut dets, mut gts) = random_ap_instance(&mut r, 20, 10);
        let before = average_precision(&dets, &gts, 0.5).unwrap();
        let g = random_box(&mut r);
        gts.push(gt("new", 0, 0, 99, g));
        let with_gt = average_precision(&dets, &gts, 0.5).unwrap();
        dets.insert(0, det("new", 0, 0, 10.0, g));
        let after = average_precision(&dets, &gts, 0.5).unwrap();
        prop_assert!(after >= with_gt - 1e-15);
        prop_assert!(after >= before * (gts.len() - 1) as f64 / gts.len() as f64 - 1e-12);
    }

    #[test]
    fn corloc_ignores_non_top_scores(seed in any::<u64>()) {
        let mut r = rng(seed);
        let (mut dets, gts) = random_ap_instance(&mut r, 20, 10);
        let before = corloc(&dets, &gts, 0).unwrap();
        let mut top = std::collections::HashMap::new();
        for d in &dets {
            let t = top.entry((d.video_id.clone(), d.frame)).or_insert(f64::NEG_INFINITY);
            *t = f64::max(*t, d.score);
        }
        for d in &mut dets {
            let t = top[&(d.video_id.clone(), d.frame)];
            if d.score < t {
                d.score = t - r.random_range(0.001..5.0);
            }
        }
        prop_assert_eq!(before, corloc(&dets, &gts, 0).unwrap());
    }
}

#[test]
fn corloc_three_frame_fixture() {
    let g = bb(10.0, 10.0, 30.0, 30.0);
    let gts: Vec<_> = (0..3).map(|f| gt("v", f, 0, 0, g)).collect();
    let dets = vec![
        det("v", 0, 0, 0.9, g),
        // miss: the top box is elsewhere, the correct one scores lower
        det("v", 1, 0, 0.9, bb(60.0, 60.0, 80.0, 80.0)),
        det("v", 1, 0, 0.5, g),
        det("v", 2, 0, 0.7, bb(11.0, 10.0, 31.0, 30.0)),
    ];
    assert!((corloc(&dets, &gts, 0).unwrap() - 2.0 / 3.0).abs() < 1e-15);
    // a frame without detections counts as a miss
    assert!((corloc(&dets[..1], &gts, 0).unwrap() - 1.0 / 3.0).abs() < 1e-15);
    assert!(corloc(&dets, &gts, 1).is_err());
}

#[test]
fn perfect_detections_give_perfect_scores() {
    let world = tubelet_core::oracles::generate_world(&tubelet_core::oracles::SimConfig {
        videos: 3,
        frames: 20,
        ..Default::default()
    })
    .unwrap();
    let dets: Vec<_> = world.ground_truth.iter().map(|g| det(&g.video_id, g.frame, g.class_id, 1.0, g.bbox)).collect();
    let r = corloc_report("perfect", &dets, &world.ground_truth, &world.classes).unwrap();
    for c in r.classes.iter().filter(|c| c.gt > 0) {
        assert_eq!(c.corloc, Some(1.0));
    }
    let m = mean_ap("perfect", &dets, &world.ground_truth, &world.classes, 0.5).unwrap();
    assert_eq!(m.mean_ap, Some(1.0));
}

#[test]
fn temporal_variation_cases() {
    assert_eq!(temporal_variation(&[0.3; 5]), 0.0);
    assert_eq!(temporal_variation(&[0.0, 1.0, 0.0, 1.0]), 1.0);
    assert_eq!(temporal_variation(&[2.0]), 0.0);
}
