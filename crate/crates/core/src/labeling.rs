//! Training label assignment for priors and word proposals, and minibatch
//! sampling over the assigned labels.
//!
//! Priors use two thresholds: max-IoU above 0.5 is positive, below 0.3 is
//! background and anything in between is ignored. Proposals use three
//! classes: max-IoU of at least 0.5 is positive text, `[0.2, 0.5)` is
//! ambiguous text and below 0.2 is background.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codec::{encode_boxes, RegressionOffsets};
use crate::geometry::{iou, max_iou, BBox, CLASS_AMBIGUOUS, CLASS_BACKGROUND, CLASS_TEXT};

pub const RPN_POSITIVE_IOU: f64 = 0.5;
pub const RPN_BACKGROUND_IOU: f64 = 0.3;
pub const DETECTION_POSITIVE_IOU: f64 = 0.5;
pub const DETECTION_AMBIGUOUS_IOU: f64 = 0.2;

/// Ordered so that `Background < Ambiguous < Positive`; `Ignore` sorts last
/// and carries no ordering meaning.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Background,
    Ambiguous,
    Positive,
    Ignore,
}

impl Label {
    /// Classification target index, or `None` for ignored boxes.
    pub fn class_id(self) -> Option<u8> {
        match self {
            Label::Background => Some(CLASS_BACKGROUND),
            Label::Positive => Some(CLASS_TEXT),
            Label::Ambiguous => Some(CLASS_AMBIGUOUS),
            Label::Ignore => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Background => "background",
            Label::Ambiguous => "ambiguous",
            Label::Positive => "positive",
            Label::Ignore => "ignore",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AssignMode {
    Rpn,
    Detection,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxLabel {
    pub label: Label,
    pub matched_gt: Option<usize>,
    /// Offsets from the box to its matched ground truth; set iff positive.
    pub target: Option<RegressionOffsets>,
    pub max_iou: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelAssignment {
    pub mode: AssignMode,
    pub labels: Vec<BoxLabel>,
}

impl LabelAssignment {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn indices_of(&self, label: Label) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, l)| l.label == label)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn count(&self, label: Label) -> usize {
        self.labels.iter().filter(|l| l.label == label).count()
    }
}

fn labeled(label: Label, matched: Option<(usize, f64)>, b: &BBox, gts: &[BBox]) -> BoxLabel {
    let max = matched.map_or(0.0, |(_, v)| v);
    match label {
        Label::Positive => {
            let (g, _) = matched.expect("positive box has a match");
            // Positive overlap implies both boxes have positive area.
            let target = encode_boxes(b, &gts[g]).expect("overlapping boxes have positive extents");
            BoxLabel {
                label,
                matched_gt: Some(g),
                target: Some(target),
                max_iou: max,
            }
        }
        Label::Ambiguous => BoxLabel {
            label,
            matched_gt: matched.map(|(g, _)| g),
            target: None,
            max_iou: max,
        },
        Label::Background | Label::Ignore => BoxLabel {
            label,
            matched_gt: None,
            target: None,
            max_iou: max,
        },
    }
}

/// Prior label for a given max-IoU.
pub fn rpn_label_for(m: f64) -> Label {
    if m > RPN_POSITIVE_IOU {
        Label::Positive
    } else if m < RPN_BACKGROUND_IOU {
        Label::Background
    } else {
        Label::Ignore
    }
}

/// Proposal label for a given max-IoU.
pub fn detection_label_for(m: f64) -> Label {
    if m >= DETECTION_POSITIVE_IOU {
        Label::Positive
    } else if m >= DETECTION_AMBIGUOUS_IOU {
        Label::Ambiguous
    } else {
        Label::Background
    }
}

/// Labels priors against ground truth.
///
/// With `force_best_match`, every prior that attains a ground truth's best
/// IoU (when that IoU is positive) is also positive; its regression target
/// still points at the prior's own argmax ground truth.
pub fn assign_rpn_labels(priors: &[BBox], gts: &[BBox], force_best_match: bool) -> LabelAssignment {
    assign_rpn_labels_masked(priors, None, gts, force_best_match)
}

/// As [`assign_rpn_labels`], but priors with `excluded[i]` set are ignored
/// outright and never forced positive.
pub fn assign_rpn_labels_masked(
    priors: &[BBox],
    excluded: Option<&[bool]>,
    gts: &[BBox],
    force_best_match: bool,
) -> LabelAssignment {
    let is_excluded = |i: usize| excluded.is_some_and(|e| e[i]);
    let matches: Vec<Option<(usize, f64)>> = priors.iter().map(|p| max_iou(p, gts)).collect();
    let mut labels: Vec<Label> = matches
        .iter()
        .enumerate()
        .map(|(i, m)| {
            if is_excluded(i) {
                Label::Ignore
            } else {
                rpn_label_for(m.map_or(0.0, |(_, v)| v))
            }
        })
        .collect();

    if force_best_match {
        for g in gts {
            let ious: Vec<f64> = priors.iter().map(|p| iou(p, g)).collect();
            let best = ious
                .iter()
                .enumerate()
                .filter(|&(i, _)| !is_excluded(i))
                .map(|(_, &v)| v)
                .fold(0.0, f64::max);
            if best <= 0.0 {
                continue;
            }
            for (i, &v) in ious.iter().enumerate() {
                if v == best && !is_excluded(i) {
                    labels[i] = Label::Positive;
                }
            }
        }
    }

    let labels = priors
        .iter()
        .zip(labels)
        .zip(&matches)
        .map(|((p, label), &m)| labeled(label, m, p, gts))
        .collect();
    LabelAssignment {
        mode: AssignMode::Rpn,
        labels,
    }
}

/// Labels word proposals into positive, ambiguous and background text.
pub fn assign_detection_labels(proposals: &[BBox], gts: &[BBox]) -> LabelAssignment {
    let labels = proposals
        .iter()
        .map(|p| {
            let m = max_iou(p, gts);
            let label = detection_label_for(m.map_or(0.0, |(_, v)| v));
            labeled(label, m, p, gts)
        })
        .collect();
    LabelAssignment {
        mode: AssignMode::Detection,
        labels,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    /// Positives and negatives per prior minibatch (each).
    pub n_b: usize,
    pub n_p: usize,
    pub n_a: usize,
    pub n_n: usize,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            n_b: 128,
            n_p: 64,
            n_a: 32,
            n_n: 160,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Sampled {
    pub index: usize,
    pub label: Label,
}

fn draw<R: Rng + ?Sized>(pool: &[usize], amount: usize, rng: &mut R) -> Vec<usize> {
    let amount = amount.min(pool.len());
    rand::seq::index::sample(rng, pool.len(), amount)
        .into_iter()
        .map(|i| pool[i])
        .collect()
}

/// Draws a minibatch without replacement.
///
/// Each class contributes up to its requested count; any shortfall in the
/// positive (and ambiguous) classes is filled with extra background boxes.
/// Ignored boxes are never drawn. Output is grouped positive, ambiguous,
/// background, each in draw order.
pub fn sample_minibatch<R: Rng + ?Sized>(
    assignment: &LabelAssignment,
    mode: AssignMode,
    config: &SamplerConfig,
    rng: &mut R,
) -> Vec<Sampled> {
    let positives = assignment.indices_of(Label::Positive);
    let ambiguous = assignment.indices_of(Label::Ambiguous);
    let background = assignment.indices_of(Label::Background);

    let (want_pos, want_amb, want_bg) = match mode {
        AssignMode::Rpn => (config.n_b, 0, config.n_b),
        AssignMode::Detection => (config.n_p, config.n_a, config.n_n),
    };

    let pos = draw(&positives, want_pos, rng);
    let amb = draw(&ambiguous, want_amb, rng);
    let shortfall = (want_pos - pos.len()) + (want_amb - amb.len());
    let bg = draw(&background, want_bg + shortfall, rng);

    let tag = |label: Label| move |index: usize| Sampled { index, label };
    pos.into_iter()
        .map(tag(Label::Positive))
        .chain(amb.into_iter().map(tag(Label::Ambiguous)))
        .chain(bg.into_iter().map(tag(Label::Background)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::decode_box;
    use proptest::prelude::*;

    fn b(x1: f64, y1: f64, x2: f64, y2: f64) -> BBox {
        BBox::new(x1, y1, x2, y2).unwrap()
    }

    #[test]
    fn rpn_examples() {
        let gt = b(0., 0., 2., 2.);
        let a = assign_rpn_labels(
            &[gt, b(1., 0., 3., 2.), b(50., 50., 60., 60.)],
            &[gt],
            false,
        );
        let labels: Vec<Label> = a.labels.iter().map(|l| l.label).collect();
        assert_eq!(labels, [Label::Positive, Label::Ignore, Label::Background]);
        assert_eq!(a.labels[0].matched_gt, Some(0));
        assert_eq!(a.labels[0].target, Some(RegressionOffsets::default()));
        assert_eq!(a.labels[1].matched_gt, None);

        let empty = assign_rpn_labels(&[gt, b(1., 1., 4., 4.)], &[], true);
        assert!(empty.labels.iter().all(|l| l.label == Label::Background));
    }

    #[test]
    fn rpn_boundaries() {
        assert_eq!(rpn_label_for(0.5), Label::Ignore);
        assert_eq!(rpn_label_for(0.3), Label::Ignore);
        assert_eq!(rpn_label_for(0.5000001), Label::Positive);
        assert_eq!(rpn_label_for(0.2999999), Label::Background);
    }

    #[test]
    fn force_best_match_promotes_best_prior() {
        let gt = b(0., 0., 2., 2.);
        let priors = [
            b(1., 0., 3., 2.),
            b(1.5, 0., 3.5, 2.),
            b(10., 10., 12., 12.),
        ];
        let plain = assign_rpn_labels(&priors, &[gt], false);
        assert_eq!(plain.labels[0].label, Label::Ignore);
        let forced = assign_rpn_labels(&priors, &[gt], true);
        assert_eq!(forced.labels[0].label, Label::Positive);
        assert_eq!(forced.labels[0].matched_gt, Some(0));
        assert!(forced.labels[0].target.is_some());
        assert_eq!(forced.labels[1].label, Label::Background);
        assert_eq!(forced.labels[2].label, Label::Background);
    }

    #[test]
    fn force_best_match_skips_non_overlapping_gt() {
        let priors = [b(0., 0., 1., 1.)];
        let a = assign_rpn_labels(&priors, &[b(5., 5., 6., 6.)], true);
        assert_eq!(a.labels[0].label, Label::Background);
    }

    #[test]
    fn excluded_priors_are_ignored() {
        let gt = b(0., 0., 2., 2.);
        let a = assign_rpn_labels_masked(&[gt, gt], Some(&[true, false]), &[gt], true);
        assert_eq!(a.labels[0].label, Label::Ignore);
        assert_eq!(a.labels[1].label, Label::Positive);
    }

    #[test]
    fn detection_examples() {
        let gt = b(0., 0., 2., 2.);
        let a = assign_detection_labels(&[gt, b(1., 0., 3., 2.)], &[gt]);
        let labels: Vec<Label> = a.labels.iter().map(|l| l.label).collect();
        assert_eq!(labels, [Label::Positive, Label::Ambiguous]);
        assert!(a.labels[1].target.is_none());
        assert_eq!(a.labels[1].matched_gt, Some(0));

        let thin = assign_detection_labels(&[b(0., 0., 10., 1.)], &[b(0., 0., 1., 1.)]);
        assert_eq!(thin.labels[0].label, Label::Background);
        assert!((thin.labels[0].max_iou - 0.1).abs() < 1e-12);
        assert_eq!(detection_label_for(0.5), Label::Positive);
        assert_eq!(detection_label_for(0.2), Label::Ambiguous);
        assert_eq!(detection_label_for(0.19999), Label::Background);
    }

    fn synthetic(pos: usize, amb: usize, bg: usize, ignore: usize) -> LabelAssignment {
        let mk = |label| BoxLabel {
            label,
            matched_gt: None,
            target: None,
            max_iou: 0.0,
        };
        let labels = std::iter::repeat_n(mk(Label::Positive), pos)
            .chain(std::iter::repeat_n(mk(Label::Ambiguous), amb))
            .chain(std::iter::repeat_n(mk(Label::Background), bg))
            .chain(std::iter::repeat_n(mk(Label::Ignore), ignore))
            .collect();
        LabelAssignment {
            mode: AssignMode::Detection,
            labels,
        }
    }

    fn counts(batch: &[Sampled]) -> [usize; 3] {
        let c = |l| batch.iter().filter(|s| s.label == l).count();
        [
            c(Label::Positive),
            c(Label::Ambiguous),
            c(Label::Background),
        ]
    }

    #[test]
    fn rpn_sampling_counts() {
        let cfg = SamplerConfig::default();
        let a = synthetic(200, 0, 5000, 50);
        let batch = sample_minibatch(&a, AssignMode::Rpn, &cfg, &mut cfg.rng());
        assert_eq!(counts(&batch), [128, 0, 128]);

        let a = synthetic(10, 0, 5000, 50);
        let batch = sample_minibatch(&a, AssignMode::Rpn, &cfg, &mut cfg.rng());
        assert_eq!(counts(&batch), [10, 0, 246]);
    }

    #[test]
    fn detection_sampling_fills_from_background() {
        let cfg = SamplerConfig::default();
        let a = synthetic(20, 5, 1000, 0);
        let batch = sample_minibatch(&a, AssignMode::Detection, &cfg, &mut cfg.rng());
        assert_eq!(counts(&batch), [20, 5, 160 + 44 + 27]);

        let scarce = synthetic(1, 1, 3, 0);
        let batch = sample_minibatch(&scarce, AssignMode::Detection, &cfg, &mut cfg.rng());
        assert_eq!(counts(&batch), [1, 1, 3]);
    }

    #[test]
    fn sampling_is_deterministic_and_never_draws_ignored() {
        let cfg = SamplerConfig {
            seed: 42,
            ..Default::default()
        };
        let a = synthetic(300, 40, 3000, 500);
        let one = sample_minibatch(&a, AssignMode::Rpn, &cfg, &mut cfg.rng());
        let two = sample_minibatch(&a, AssignMode::Rpn, &cfg, &mut cfg.rng());
        assert_eq!(one, two);
        let mut seen = std::collections::HashSet::new();
        for s in &one {
            assert_eq!(a.labels[s.index].label, s.label);
            assert_ne!(s.label, Label::Ignore);
            assert!(seen.insert(s.index), "drawn twice");
        }
    }

    #[test]
    fn negative_counts_rejected_by_config_parser() {
        let err = serde_json::from_str::<SamplerConfig>(r#"{"n_b": -1}"#);
        assert!(err.is_err());
        let err = serde_json::from_str::<SamplerConfig>(r#"{"n_q": 1}"#);
        assert!(err.is_err());
    }

    fn boxes(n: usize) -> impl Strategy<Value = Vec<BBox>> {
        prop::collection::vec(
            (0.0..100.0f64, 0.0..100.0f64, 1.0..40.0f64, 1.0..40.0f64)
                .prop_map(|(x, y, w, h)| b(x, y, x + w, y + h)),
            0..n,
        )
    }

    proptest! {
        #[test]
        fn positives_decode_to_their_gt(props in boxes(30), gts in boxes(6)) {
            for a in [assign_detection_labels(&props, &gts), assign_rpn_labels(&props, &gts, true)] {
                prop_assert_eq!(a.len(), props.len());
                for (p, l) in props.iter().zip(&a.labels) {
                    prop_assert_eq!(l.target.is_some(), l.label == Label::Positive);
                    if let Some(t) = l.target {
                        let g = gts[l.matched_gt.unwrap()];
                        let d = decode_box(&t, p).unwrap();
                        for (u, v) in [(d.x1, g.x1), (d.y1, g.y1), (d.x2, g.x2), (d.y2, g.y2)] {
                            prop_assert!((u - v).abs() <= 1e-9);
                        }
                    }
                    if matches!(l.label, Label::Background | Label::Ignore) {
                        prop_assert!(l.matched_gt.is_none());
                    }
                }
                match a.mode {
                    AssignMode::Rpn => prop_assert_eq!(a.count(Label::Ambiguous), 0),
                    AssignMode::Detection => prop_assert_eq!(a.count(Label::Ignore), 0),
                }
            }
        }

        #[test]
        fn detection_label_is_monotone(m1 in 0.0..=1.0f64, m2 in 0.0..=1.0f64) {
            let (lo, hi) = if m1 <= m2 { (m1, m2) } else { (m2, m1) };
            prop_assert!(detection_label_for(lo) <= detection_label_for(hi));
        }
    }
}
