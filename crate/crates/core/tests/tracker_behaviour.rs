use std::sync::OnceLock;

use rtmdnet::backbone::BackboneVariant;
use rtmdnet::checkpoint::Checkpoint;
use rtmdnet::dataset::{DomainDataset, Sequence};
use rtmdnet::error::Error;
use rtmdnet::eval::synth::{generate_sequence, toy_domains, SyntheticSpec};
use rtmdnet::head::{head_forward_branches, positive_probability};
use rtmdnet::network::{frame_rect, Network, NetworkConfig};
use rtmdnet::pretrain::{pretrain_loop, PretrainConfig};
use rtmdnet::roi::RoiMode;
use rtmdnet::tracker::{track_sequence, Label, Tracker, TrackerConfig, UpdateKind};
use rtmdnet::{iou, Tensor};

fn pretrained() -> &'static Network {
    static NET: OnceLock<Network> = OnceLock::new();
    NET.get_or_init(|| {
        let ds = DomainDataset::new(toy_domains(3, 20, 4).unwrap()).unwrap();
        let cfg = PretrainConfig {
            epochs: 40,
            ..PretrainConfig::toy()
        };
        let net = NetworkConfig::toy(BackboneVariant::DenseFm, RoiMode::AdaptiveAlign);
        pretrain_loop(&ds, net, cfg, 1).unwrap().network
    })
}

fn moving(length: usize, seed: u64) -> Sequence {
    let spec = SyntheticSpec {
        velocity: (0.8, -0.5),
        texture_seed: 40 + seed,
        length,
        ..SyntheticSpec::default()
    };
    generate_sequence(&spec, seed).unwrap()
}

fn config() -> TrackerConfig {
    TrackerConfig {
        init_pos: 200,
        init_neg: 1000,
        init_iters: 20,
        ..TrackerConfig::toy()
    }
}

fn start(seq: &Sequence, cfg: TrackerConfig, seed: u64) -> Tracker {
    Tracker::init(pretrained(), &seq.frames[0], seq.groundtruth[0], cfg, seed)
        .unwrap()
        .0
}

#[test]
fn long_updates_fire_on_multiples_of_ten() {
    let seq = moving(41, 2);
    let run = track_sequence(pretrained(), &seq, config(), 3).unwrap();
    for f in &run.frames[1..] {
        let expect = if f.index % 10 == 0 {
            Some(UpdateKind::Long)
        } else if !f.success {
            Some(UpdateKind::Short)
        } else {
            None
        };
        assert_eq!(f.update, expect, "frame {}", f.index);
    }
    let longs: Vec<usize> = run
        .frames
        .iter()
        .filter(|f| f.update == Some(UpdateKind::Long))
        .map(|f| f.index)
        .collect();
    assert_eq!(longs, [10, 20, 30, 40]);
    assert_eq!(run.forward_passes, seq.len());
}

#[test]
fn frames_must_arrive_in_order() {
    let seq = moving(4, 5);
    let mut t = start(&seq, config(), 1);
    assert!(matches!(
        t.track_frame(2, &seq.frames[2]),
        Err(Error::State(_))
    ));
    assert!(matches!(
        t.track_frame(0, &seq.frames[0]),
        Err(Error::State(_))
    ));
    t.track_frame(1, &seq.frames[1]).unwrap();
    assert!(matches!(
        t.track_frame(1, &seq.frames[1]),
        Err(Error::State(_))
    ));
    assert_eq!(t.forward_passes(), 2);
}

#[test]
fn one_backbone_forward_per_frame_and_frozen_convolutions() {
    let seq = moving(12, 6);
    let mut t = start(&seq, config(), 2);
    assert_eq!(t.network.backbone, pretrained().backbone);
    for i in 1..seq.len() {
        t.track_frame(i, &seq.frames[i]).unwrap();
        assert_eq!(t.forward_passes(), i + 1);
    }
    assert_eq!(t.network.backbone, pretrained().backbone);
    assert_ne!(t.network.head.fc4_w, pretrained().head.fc4_w);
}

#[test]
fn chosen_box_is_the_per_candidate_argmax() {
    let seq = moving(6, 7);
    let mut t = start(&seq, config(), 4);
    for i in 1..seq.len() {
        let mut probe = t.clone();
        let bounds = frame_rect(&seq.frames[i]);
        let cands = probe.draw_candidates(&bounds).unwrap();
        let current = t.state().to_box(t.base_size());
        let boxes: Vec<_> = cands.iter().map(|c| c.1).collect();
        let prep = probe
            .network
            .prepare_frame(&seq.frames[i], &current, &boxes)
            .unwrap();
        let map = probe.network.feature_map(&prep.tensor).unwrap();
        // Score candidates one at a time.
        let mut best = (f64::MIN, 0);
        for (k, b) in boxes.iter().enumerate() {
            let f = probe
                .network
                .roi_features(&map, &[prep.transform.to_crop(b)])
                .unwrap();
            let s = positive_probability(
                &head_forward_branches(&f, &probe.network.head, &[0]).unwrap(),
                0,
            )[0];
            if s > best.0 {
                best = (s, k);
            }
        }
        let r = t.track_frame(i, &seq.frames[i]).unwrap();
        assert_eq!(r.raw, boxes[best.1]);
        assert!((r.score - best.0).abs() < 1e-12);
    }
}

#[test]
fn low_scores_keep_the_state_and_skip_regression() {
    let seq = moving(15, 8);
    let cfg = TrackerConfig {
        success_threshold: 0.999_999,
        ..config()
    };
    let mut t = start(&seq, cfg, 5);
    let s0 = t.state();
    for i in 1..seq.len() {
        let r = t.track_frame(i, &seq.frames[i]).unwrap();
        assert!(!r.success);
        assert_eq!(r.reported, r.raw);
        assert_eq!(r.state, s0);
        assert!(!r.collected);
    }
    // Nothing was collected after frame 0.
    assert!(t.memory.entries().iter().all(|e| e.frame == 0));
}

#[test]
fn success_moves_the_state_to_the_raw_box() {
    let seq = moving(12, 9);
    let mut t = start(&seq, config(), 6);
    for i in 1..seq.len() {
        let r = t.track_frame(i, &seq.frames[i]).unwrap();
        if r.success {
            assert_eq!(r.state.to_box(t.base_size()), r.raw);
        }
    }
}

#[test]
fn memory_respects_both_horizons() {
    let seq = moving(45, 10);
    let cfg = TrackerConfig {
        t_long: 15,
        t_short: 5,
        ..config()
    };
    let mut t = start(&seq, cfg, 7);
    for i in 1..seq.len() {
        let r = t.track_frame(i, &seq.frames[i]).unwrap();
        if r.collected {
            for e in t.memory.entries() {
                let age = i - e.frame;
                match e.label {
                    Label::Positive => assert!(age < 15),
                    Label::Negative => assert!(age < 5),
                }
            }
            assert!(t.memory.rows() <= 15 * 50 + 5 * 200);
        }
    }
}

#[test]
fn resumed_session_matches_uninterrupted_run() {
    let seq = moving(24, 11);
    let mut a = start(&seq, config(), 8);
    for i in 1..12 {
        a.track_frame(i, &seq.frames[i]).unwrap();
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("session.ckpt");
    a.save_session(&path).unwrap();
    let mut b = Tracker::from_session(&Checkpoint::load(&path).unwrap(), config()).unwrap();
    assert_eq!(b.last_frame(), 11);
    for i in 12..seq.len() {
        let ra = a.track_frame(i, &seq.frames[i]).unwrap();
        let rb = b.track_frame(i, &seq.frames[i]).unwrap();
        assert_eq!(ra, rb);
    }
    assert_eq!(a.network, b.network);
}

#[test]
fn initial_fine_tuning_lowers_the_loss() {
    let seq = moving(1, 12);
    let cfg = TrackerConfig {
        init_iters: 50,
        ..config()
    };
    let (_, report) =
        Tracker::init(pretrained(), &seq.frames[0], seq.groundtruth[0], cfg, 9).unwrap();
    let avg = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    let windows: Vec<f64> = report.losses.chunks(10).map(avg).collect();
    assert!(
        windows.last().unwrap() < windows.first().unwrap(),
        "{windows:?}"
    );
    assert!(report.gt_score > 0.5);
}

#[test]
fn tracking_is_deterministic_in_the_seed() {
    let seq = moving(14, 13);
    let a = track_sequence(pretrained(), &seq, config(), 21).unwrap();
    let b = track_sequence(pretrained(), &seq, config(), 21).unwrap();
    assert_eq!(a.to_text(), b.to_text());
    let c = track_sequence(pretrained(), &seq, config(), 22).unwrap();
    assert_ne!(a.to_text(), c.to_text());
}

#[test]
fn still_target_is_held() {
    let spec = SyntheticSpec {
        length: 30,
        texture_seed: 77,
        ..SyntheticSpec::default()
    };
    let seq = generate_sequence(&spec, 1).unwrap();
    let run = track_sequence(pretrained(), &seq, TrackerConfig::toy(), 5).unwrap();
    let good = run
        .boxes()
        .iter()
        .zip(&seq.groundtruth)
        .filter(|(a, b)| iou(a, b) >= 0.5)
        .count();
    assert!(good >= 27, "{good} of 30 frames");
}

#[test]
fn dropout_changes_updates_but_stays_seeded() {
    let seq = moving(12, 15);
    let cfg = TrackerConfig {
        dropout: 0.3,
        ..config()
    };
    let a = track_sequence(pretrained(), &seq, cfg.clone(), 4).unwrap();
    let b = track_sequence(pretrained(), &seq, cfg, 4).unwrap();
    assert_eq!(a.to_text(), b.to_text());
    let plain = track_sequence(pretrained(), &seq, config(), 4).unwrap();
    assert_ne!(a.to_text(), plain.to_text());
}

#[test]
fn memory_accepts_only_ordered_frames() {
    let mut t = start(&moving(2, 14), config(), 1);
    let row = Tensor::zeros([1, pretrained().config.feature_len()]);
    t.memory.add(5, Label::Positive, row.clone()).unwrap();
    assert!(matches!(
        t.memory.add(4, Label::Negative, row),
        Err(Error::State(_))
    ));
}
