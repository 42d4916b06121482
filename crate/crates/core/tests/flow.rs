use std::collections::BTreeMap;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use wordbox::evaluation::{prf_match, recall_curve};
use wordbox::formats::{
    parse_detections, parse_gt, serialize_boxes_as_gt, serialize_detections, Config,
};
use wordbox::pipeline::{run_pipeline, PipelineConfig};
use wordbox::suppression::{iterative_vote, nms, DetectionSet};
use wordbox::synth::{generate_scene, jitter_proposals, SceneSpec};
use wordbox::{iou, BBox, ScoredBox};

fn b(x1: f64, y1: f64, x2: f64, y2: f64) -> BBox {
    BBox::new(x1, y1, x2, y2).unwrap()
}

#[test]
fn synthetic_scene_survives_gt_file() {
    let spec = SceneSpec {
        seed: 42,
        ..Default::default()
    };
    let scene = generate_scene(&spec, &mut spec.rng()).unwrap();
    let parsed = parse_gt(&serialize_boxes_as_gt(&scene.gts)).unwrap();
    assert_eq!(parsed.len(), scene.gts.len());
    for (r, g) in parsed.iter().zip(&scene.gts) {
        assert!(iou(&r.bbox, g) > 1.0 - 1e-6);
        assert!(r.transcription.is_none());
    }
}

#[test]
fn detections_file_through_suppression() {
    let text = "img 0 0 10 10 0.9\nimg 1 1 11 11 0.8\nimg 50 50 60 60 0.7\nother 0 0 5 5 0.5 2\n";
    let sets = parse_detections(text).unwrap();
    let kept: BTreeMap<String, DetectionSet> = sets
        .into_iter()
        .map(|(id, s)| (id, DetectionSet::new(nms(&s.items, 0.5).unwrap())))
        .collect();
    assert_eq!(
        serialize_detections(&kept),
        "img 0.000000 0.000000 10.000000 10.000000 0.900000 1\n\
         img 50.000000 50.000000 60.000000 60.000000 0.700000 1\n\
         other 0.000000 0.000000 5.000000 5.000000 0.500000 2\n"
    );
}

#[test]
fn jittered_proposals_vote_down_to_one_per_word() {
    let gts = vec![b(10., 10., 110., 40.), b(200., 100., 260., 130.)];
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let sets: Vec<DetectionSet> = (0..3)
        .map(|t| {
            let items = jitter_proposals(&gts, 5, 0.02, 0, 320.0, 240.0, 0.0, &mut rng).unwrap();
            DetectionSet::tagged(items, t)
        })
        .collect();
    let voted = iterative_vote(&sets, 0.3).unwrap();
    assert_eq!(voted.items.len(), 2);
    let prf = prf_match(&voted.items, &gts, 0.5);
    assert_eq!((prf.tp, prf.fp, prf.fn_), (2, 0, 0));
}

#[test]
fn noisy_pipeline_is_deterministic_and_well_formed() {
    let cfg = PipelineConfig {
        scenes: 6,
        seed: 99,
        noise_sigma: 0.2,
        ..Default::default()
    };
    let a = run_pipeline(&cfg).unwrap();
    assert_eq!(a, run_pipeline(&cfg).unwrap());
    let gts: usize = a.scenes.iter().map(|s| s.gts.len()).sum();
    let dets: usize = a.scenes.iter().map(|s| s.detections.len()).sum();
    assert_eq!(a.prf.tp + a.prf.fn_, gts);
    assert_eq!(a.prf.tp + a.prf.fp, dets);
    assert!(a.recall.recall.windows(2).all(|w| w[0] >= w[1]));
    for s in &a.scenes {
        assert!(s.proposals.windows(2).all(|w| w[0].score >= w[1].score));
    }
}

#[test]
fn different_seeds_give_different_scenes() {
    let run = |seed| {
        run_pipeline(&PipelineConfig {
            scenes: 2,
            seed,
            ..Default::default()
        })
        .unwrap()
    };
    assert_ne!(run(1).gts(), run(2).gts());
}

#[test]
fn config_document_drives_the_pipeline() {
    let cfg =
        Config::from_json(r#"{"synth": {"n_words": [2, 2], "image_w": 320, "image_h": 240}}"#)
            .unwrap();
    let report = run_pipeline(&PipelineConfig {
        scenes: 3,
        seed: 4,
        scene: cfg.synth.clone(),
        ..Default::default()
    })
    .unwrap();
    assert!(report.scenes.iter().all(|s| s.gts.len() == 2));
    assert!(report
        .scenes
        .iter()
        .flat_map(|s| &s.gts)
        .all(|g| g.x2 <= 320.0 && g.y2 <= 240.0));
    assert_eq!(Config::from_json(&cfg.to_json()).unwrap(), cfg);
}

#[test]
fn recall_counts_images_without_proposals() {
    let gts = vec![vec![b(0., 0., 10., 10.)], vec![b(0., 0., 10., 10.)]];
    let props = vec![
        vec![ScoredBox::text(b(0., 0., 10., 10.), 1.0).unwrap()],
        vec![],
    ];
    let c = recall_curve(&props, &gts, 300, &[0.5]).unwrap();
    assert_eq!(c.recall, vec![0.5]);
}

fn boxes(n: usize) -> impl Strategy<Value = Vec<BBox>> {
    prop::collection::vec(
        (0.0..200.0f64, 0.0..200.0f64, 1.0..60.0f64, 1.0..60.0f64),
        0..n,
    )
    .prop_map(|v| {
        v.into_iter()
            .map(|(x, y, w, h)| b(x, y, x + w, y + h))
            .collect()
    })
}

proptest! {
    #[test]
    fn matching_an_unmatched_gt_never_lowers_recall(gts in boxes(8), dets in boxes(10), pick in any::<prop::sample::Index>()) {
        prop_assume!(!gts.is_empty());
        let scored: Vec<ScoredBox> = dets
            .iter()
            .enumerate()
            .map(|(i, d)| ScoredBox::text(*d, 0.5 + 0.4 / (i + 1) as f64).unwrap())
            .collect();
        let before = prf_match(&scored, &gts, 0.5);
        let g = gts[pick.index(gts.len())];
        let mut more = scored.clone();
        more.push(ScoredBox::text(g, 0.01).unwrap());
        let after = prf_match(&more, &gts, 0.5);
        prop_assert!(after.recall >= before.recall);
        prop_assert!(after.tp >= before.tp);
    }
}
