use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use rtmdnet::head::{head_forward_branches, HeadConfig, HeadParams};
use rtmdnet::sampling::{
    choose_distinct, choose_fill, sample_boxes, IouGate, ProposalDistribution,
};
use rtmdnet::tracker::{hard_minibatch, top_k_indices};
use rtmdnet::{iou, BBox, Tensor};

fn frame() -> BBox {
    BBox::new(0.0, 0.0, 96.0, 96.0).unwrap()
}

fn head(width: usize, seed: u64) -> HeadParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    HeadParams::init(
        &HeadConfig {
            in_features: 12,
            width,
            domains: 1,
        },
        &mut rng,
    )
    .unwrap()
}

/// Sigmoid of the positive-minus-negative score, recomputed from the raw
/// head output.
fn positive_prob(h: &HeadParams, x: &Tensor) -> Vec<f64> {
    let s = head_forward_branches(x, h, &[0]).unwrap();
    (0..x.dim(0))
        .map(|i| 1.0 / (1.0 + (s.data()[2 * i + 1] - s.data()[2 * i]).exp()))
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn sampled_boxes_pass_their_gate(seed in 0u64..1000, x in 10.0..50.0f64, y in 10.0..50.0f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = BBox::from_xywh(x, y, 30.0, 26.0).unwrap();
        let pos = sample_boxes(&r, &frame(), 50, IouGate::Above(0.7), &ProposalDistribution::POSITIVE, &mut rng).unwrap();
        let neg = sample_boxes(&r, &frame(), 200, IouGate::Below(0.3), &ProposalDistribution::NEGATIVE, &mut rng).unwrap();
        prop_assert_eq!(pos.len(), 50);
        prop_assert_eq!(neg.len(), 200);
        prop_assert!(pos.iter().all(|b| iou(b, &r) > 0.7));
        prop_assert!(neg.iter().all(|b| iou(b, &r) < 0.3));
        let f = frame();
        prop_assert!(pos.iter().chain(&neg).all(|b| b.x1 >= f.x1 && b.y1 >= f.y1 && b.x2 <= f.x2 && b.y2 <= f.y2));
    }

    #[test]
    fn index_choices(n in 1usize..300, k in 1usize..300, seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut d = choose_distinct(n, k, &mut rng);
        prop_assert_eq!(d.len(), k.min(n));
        d.sort();
        d.dedup();
        prop_assert_eq!(d.len(), k.min(n));
        let f = choose_fill(n, k, &mut rng);
        prop_assert_eq!(f.len(), k);
        prop_assert!(f.iter().all(|&i| i < n));
        if n <= k {
            let mut u = f.clone();
            u.sort();
            u.dedup();
            prop_assert_eq!(u.len(), n);
        }
    }

    #[test]
    fn mined_negatives_are_the_pool_top(n_neg in 1usize..1500, n_pos in 1usize..80, seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = head(16, seed);
        let pos = Tensor::uniform([n_pos, 12], 1.0, &mut rng);
        let neg = Tensor::uniform([n_neg, 12], 1.0, &mut rng);
        let b = hard_minibatch(&pos, &neg, &h, 32, 1024, 96, &mut rng).unwrap();
        prop_assert_eq!(b.labels.iter().filter(|&&l| l).count(), 32);
        prop_assert_eq!(b.labels.iter().filter(|&&l| !l).count(), 96);
        prop_assert_eq!(b.features.shape(), &[128, 12]);
        prop_assert_eq!(b.pool.len(), if n_neg >= 1024 { 1024 } else { n_neg.max(96) });
        if n_neg >= 1024 {
            let mut u = b.pool.clone();
            u.sort();
            u.dedup();
            prop_assert_eq!(u.len(), 1024);
        }
        // Oracle: fully sort the independently scored pool.
        let pool_rows: Vec<f64> = b.pool.iter().flat_map(|&i| neg.data()[i * 12..(i + 1) * 12].to_vec()).collect();
        let scores = positive_prob(&h, &Tensor::new([b.pool.len(), 12], pool_rows).unwrap());
        for (a, o) in b.pool_scores.iter().zip(&scores) {
            prop_assert!((a - o).abs() < 1e-12);
        }
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&i, &j| scores[j].partial_cmp(&scores[i]).unwrap().then(i.cmp(&j)));
        prop_assert_eq!(&b.selected, &order[..96].to_vec());
        let kth = scores[order[95]];
        let mut picked = vec![false; scores.len()];
        for &s in &b.selected {
            picked[s] = true;
        }
        prop_assert!(scores.iter().zip(&picked).all(|(s, p)| *p || *s <= kth));
    }
}

#[test]
fn top_k_keeps_everything_when_short() {
    assert_eq!(top_k_indices(&[0.2, 0.3], 96), vec![1, 0]);
    assert!(top_k_indices(&[], 3).is_empty());
}
