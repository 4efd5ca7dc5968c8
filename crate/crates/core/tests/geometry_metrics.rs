use proptest::prelude::*;

use rtmdnet::eval::metrics::{curves, evaluate, pooled, SUCCESS_STEPS};
use rtmdnet::regressor::{decode_targets, encode_targets};
use rtmdnet::{iou, BBox};

fn arb_box() -> impl Strategy<Value = BBox> {
    (-50.0..50.0f64, -50.0..50.0f64, 0.5..60.0f64, 0.5..60.0f64)
        .prop_map(|(x, y, w, h)| BBox::from_xywh(x, y, w, h).unwrap())
}

proptest! {
    #[test]
    fn iou_is_symmetric_and_bounded(a in arb_box(), b in arb_box()) {
        let v = iou(&a, &b);
        prop_assert!((0.0..=1.0).contains(&v));
        prop_assert_eq!(v, iou(&b, &a));
        prop_assert!((iou(&a, &a) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn regression_targets_round_trip(p in arb_box(), g in arb_box()) {
        let back = decode_targets(&p, encode_targets(&p, &g));
        for (x, y) in [(back.x1, g.x1), (back.y1, g.y1), (back.x2, g.x2), (back.y2, g.y2)] {
            prop_assert!((x - y).abs() < 1e-9 * (1.0 + y.abs()));
        }
        prop_assert_eq!(encode_targets(&g, &g), [0.0; 4]);
    }

    #[test]
    fn curves_are_monotone(ious in prop::collection::vec(0.0..=1.0f64, 1..40), seed in 0u64..1000) {
        let errors: Vec<f64> = ious.iter().enumerate().map(|(i, v)| (v * 97.0 + (i as u64 * 31 + seed) as f64) % 60.0).collect();
        let r = curves(&ious, &errors).unwrap();
        prop_assert!(r.success.windows(2).all(|w| w[0] >= w[1]));
        prop_assert!(r.precision.windows(2).all(|w| w[0] <= w[1]));
        prop_assert_eq!(r.success[0], 1.0);
        prop_assert!((r.auc - r.success.iter().sum::<f64>() / SUCCESS_STEPS as f64).abs() < 1e-15);
    }

    #[test]
    fn frame_order_does_not_matter(pairs in prop::collection::vec((arb_box(), arb_box()), 1..20), rot in 0usize..20) {
        let (t, g): (Vec<BBox>, Vec<BBox>) = pairs.iter().cloned().unzip();
        let a = evaluate(&t, &g).unwrap();
        let k = rot % t.len();
        let (mut t2, mut g2) = (t.clone(), g.clone());
        t2.rotate_left(k);
        g2.rotate_left(k);
        t2.reverse();
        g2.reverse();
        let b = evaluate(&t2, &g2).unwrap();
        prop_assert_eq!(a.success, b.success);
        prop_assert_eq!(a.precision, b.precision);
    }

    #[test]
    fn pooling_concatenates_frames(pairs in prop::collection::vec((arb_box(), arb_box()), 2..20), cut in 1usize..19) {
        let (t, g): (Vec<BBox>, Vec<BBox>) = pairs.iter().cloned().unzip();
        let c = cut.min(t.len() - 1);
        let whole = evaluate(&t, &g).unwrap();
        let parts = pooled(&[evaluate(&t[..c], &g[..c]).unwrap(), evaluate(&t[c..], &g[c..]).unwrap()]).unwrap();
        prop_assert_eq!(parts.frames, whole.frames);
        for (x, y) in parts.success.iter().zip(&whole.success) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }
}

#[test]
fn clamp_inside_keeps_boxes_in_frame() {
    let frame = BBox::new(0.0, 0.0, 96.0, 96.0).unwrap();
    let b = BBox::new(-10.0, 80.0, 20.0, 130.0)
        .unwrap()
        .clamp_inside(&frame);
    assert!(b.x1 >= 0.0 && b.y1 >= 0.0 && b.x2 <= 96.0 && b.y2 <= 96.0);
}
