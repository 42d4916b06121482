//! Proposal recall curves, detection precision/recall/F-measure and binary
//! classification rates.
//!
//! Detection matching is a simplified one-to-one greedy IoU matcher, not the
//! Wolf–Jolion protocol used by the ICDAR benchmarks.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{iou, BBox, ScoredBox};
use crate::suppression::{ranked_indices, top_k};

pub const DEFAULT_MATCH_IOU: f64 = 0.5;
/// Proposals per image used for recall curves.
pub const DEFAULT_RECALL_TOP_N: usize = 300;

/// Thresholds `0.10, 0.15, ..., 0.90`.
pub fn default_thresholds() -> Vec<f64> {
    (0..17).map(|i| (10 + 5 * i) as f64 / 100.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub match_iou: f64,
    pub recall_top_n: usize,
    pub thresholds: Vec<f64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            match_iou: DEFAULT_MATCH_IOU,
            recall_top_n: DEFAULT_RECALL_TOP_N,
            thresholds: default_thresholds(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecallCurve {
    pub thresholds: Vec<f64>,
    pub recall: Vec<f64>,
    pub n_proposals: usize,
}

impl RecallCurve {
    /// Recall at the given threshold, if it is on the curve.
    pub fn at(&self, threshold: f64) -> Option<f64> {
        self.thresholds
            .iter()
            .position(|&t| (t - threshold).abs() < 1e-12)
            .map(|i| self.recall[i])
    }
}

/// Best IoU each ground truth reaches against the top `n` proposals of its image.
pub fn best_overlaps(
    per_image_proposals: &[Vec<ScoredBox>],
    per_image_gts: &[Vec<BBox>],
    n: usize,
) -> Result<Vec<f64>> {
    if per_image_proposals.len() != per_image_gts.len() {
        return Err(Error::invalid(format!(
            "{} proposal lists for {} ground-truth lists",
            per_image_proposals.len(),
            per_image_gts.len()
        )));
    }
    let mut best = Vec::new();
    for (props, gts) in per_image_proposals.iter().zip(per_image_gts) {
        let kept = top_k(props, n);
        best.extend(
            gts.iter()
                .map(|g| kept.iter().map(|p| iou(&p.bbox, g)).fold(0.0, f64::max)),
        );
    }
    Ok(best)
}

/// Fraction of ground truths covered by a top-`n` proposal at each IoU threshold.
pub fn recall_curve(
    per_image_proposals: &[Vec<ScoredBox>],
    per_image_gts: &[Vec<BBox>],
    n: usize,
    thresholds: &[f64],
) -> Result<RecallCurve> {
    if thresholds.windows(2).any(|w| w[0] >= w[1])
        || thresholds.iter().any(|&t| !(t > 0.0 && t <= 1.0))
    {
        return Err(Error::invalid(format!(
            "thresholds must be ascending within (0, 1]: {thresholds:?}"
        )));
    }
    let best = best_overlaps(per_image_proposals, per_image_gts, n)?;
    if best.is_empty() {
        return Err(Error::invalid("recall is undefined without ground truth"));
    }
    let total = best.len() as f64;
    let recall = thresholds
        .iter()
        .map(|&t| best.iter().filter(|&&m| m >= t).count() as f64 / total)
        .collect();
    Ok(RecallCurve {
        thresholds: thresholds.to_vec(),
        recall,
        n_proposals: n,
    })
}

/// Precision, recall and F-measure with the underlying counts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl Prf {
    /// Derives the ratios from counts. Precision is 0 without detections;
    /// recall is 1 when there is nothing to find.
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let precision = if tp + fp == 0 {
            0.0
        } else {
            tp as f64 / (tp + fp) as f64
        };
        let recall = if tp + fn_ == 0 {
            1.0
        } else {
            tp as f64 / (tp + fn_) as f64
        };
        let f_measure = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self {
            precision,
            recall,
            f_measure,
            tp,
            fp,
            fn_,
        }
    }

    /// Pools counts over images.
    pub fn sum<'a>(parts: impl IntoIterator<Item = &'a Prf>) -> Prf {
        let (tp, fp, fn_) = parts
            .into_iter()
            .fold((0, 0, 0), |(a, b, c), p| (a + p.tp, b + p.fp, c + p.fn_));
        Prf::from_counts(tp, fp, fn_)
    }
}

impl fmt::Display for Prf {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "P={:.6} R={:.6} F={:.6} TP={} FP={} FN={}",
            self.precision, self.recall, self.f_measure, self.tp, self.fp, self.fn_
        )
    }
}

/// Greedy one-to-one matching in descending detection rank.
///
/// Each detection takes the unmatched ground truth of highest IoU (lowest
/// index on ties) when that IoU is at least `match_iou`.
pub fn prf_match(detections: &[ScoredBox], gts: &[BBox], match_iou: f64) -> Prf {
    let mut taken = vec![false; gts.len()];
    let mut tp = 0;
    for d in ranked_indices(detections) {
        let det = &detections[d].bbox;
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if taken[g] {
                continue;
            }
            let v = iou(det, gt);
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((g, v));
            }
        }
        if let Some((g, v)) = best {
            if v >= match_iou {
                taken[g] = true;
                tp += 1;
            }
        }
    }
    Prf::from_counts(tp, detections.len() - tp, gts.len() - tp)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConfusionRates {
    pub tp_rate: f64,
    pub fp_rate: f64,
}

/// True and false positive rates of binary predictions (`true` = positive).
pub fn confusion_rates(predicted: &[bool], actual: &[bool]) -> Result<ConfusionRates> {
    if predicted.len() != actual.len() {
        return Err(Error::invalid(format!(
            "{} predictions for {} labels",
            predicted.len(),
            actual.len()
        )));
    }
    let (mut pos, mut neg, mut tp, mut fp) = (0usize, 0usize, 0usize, 0usize);
    for (&p, &a) in predicted.iter().zip(actual) {
        match (p, a) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            _ => {}
        }
        if a {
            pos += 1;
        } else {
            neg += 1;
        }
    }
    if pos == 0 || neg == 0 {
        return Err(Error::invalid(
            "rates need at least one actual positive and one actual negative",
        ));
    }
    Ok(ConfusionRates {
        tp_rate: tp as f64 / pos as f64,
        fp_rate: fp as f64 / neg as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn b(x1: f64, y1: f64, x2: f64, y2: f64) -> BBox {
        BBox::new(x1, y1, x2, y2).unwrap()
    }

    fn sb(bbox: BBox, s: f64) -> ScoredBox {
        ScoredBox::text(bbox, s).unwrap()
    }

    #[test]
    fn default_grid() {
        let t = default_thresholds();
        assert_eq!(t.len(), 17);
        assert_eq!((t[0], t[16]), (0.1, 0.9));
        assert_eq!(t[1], 0.15);
    }

    #[test]
    fn recall_examples() {
        let gts = vec![vec![b(0., 0., 2., 2.), b(10., 10., 20., 20.)]];
        let exact = vec![gts[0].iter().map(|&g| sb(g, 1.0)).collect()];
        let th = default_thresholds();
        let c = recall_curve(&exact, &gts, 300, &th).unwrap();
        assert!(c.recall.iter().all(|&r| r == 1.0));
        let c = recall_curve(&exact, &gts, 300, &[1.0]).unwrap();
        assert_eq!(c.recall, vec![1.0]);

        let none = vec![vec![]];
        assert!(recall_curve(&none, &gts, 300, &th)
            .unwrap()
            .recall
            .iter()
            .all(|&r| r == 0.0));

        let one_gt = vec![vec![b(0., 0., 2., 2.)]];
        let third = vec![vec![sb(b(1., 0., 3., 2.), 0.5)]];
        let c = recall_curve(&third, &one_gt, 10, &[0.3, 1.0 / 3.0, 0.34, 0.5]).unwrap();
        assert_eq!(c.recall, vec![1.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn recall_errors() {
        let th = default_thresholds();
        assert!(recall_curve(&[vec![]], &[vec![]], 10, &th).is_err());
        assert!(recall_curve(&[], &[vec![b(0., 0., 1., 1.)]], 10, &th).is_err());
        let gts = vec![vec![b(0., 0., 1., 1.)]];
        assert!(recall_curve(&[vec![]], &gts, 10, &[0.5, 0.4]).is_err());
        assert!(recall_curve(&[vec![]], &gts, 10, &[0.0]).is_err());
    }

    #[test]
    fn top_n_truncation_applies() {
        let gts = vec![vec![b(0., 0., 10., 10.)]];
        let props = vec![vec![
            sb(b(50., 50., 60., 60.), 0.9),
            sb(b(0., 0., 10., 10.), 0.1),
        ]];
        assert_eq!(
            recall_curve(&props, &gts, 1, &[0.5]).unwrap().recall,
            vec![0.0]
        );
        assert_eq!(
            recall_curve(&props, &gts, 2, &[0.5]).unwrap().recall,
            vec![1.0]
        );
    }

    #[test]
    fn prf_examples() {
        let gts = [b(0., 0., 10., 10.), b(20., 0., 30., 10.)];
        let exact: Vec<ScoredBox> = gts.iter().map(|&g| sb(g, 0.9)).collect();
        let p = prf_match(&exact, &gts, 0.5);
        assert_eq!((p.precision, p.recall, p.f_measure), (1.0, 1.0, 1.0));

        let p = prf_match(&[], &gts, 0.5);
        assert_eq!(
            (p.precision, p.recall, p.f_measure, p.fn_),
            (0.0, 0.0, 0.0, 2)
        );

        let mut dets = exact.clone();
        dets.push(sb(b(100., 100., 110., 110.), 0.95));
        let p = prf_match(&dets, &gts, 0.5);
        assert_eq!((p.tp, p.fp, p.fn_), (2, 1, 0));
        assert!((p.precision - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(p.recall, 1.0);
        assert!((p.f_measure - 0.8).abs() < 1e-15);
        assert_eq!(
            p.to_string(),
            "P=0.666667 R=1.000000 F=0.800000 TP=2 FP=1 FN=0"
        );

        let empty = prf_match(&[], &[], 0.5);
        assert_eq!((empty.precision, empty.recall), (0.0, 1.0));
    }

    #[test]
    fn duplicate_detections_match_once() {
        let gts = [b(0., 0., 10., 10.)];
        let dets = [sb(gts[0], 0.9), sb(gts[0], 0.8)];
        let p = prf_match(&dets, &gts, 0.5);
        assert_eq!((p.tp, p.fp, p.fn_), (1, 1, 0));
    }

    #[test]
    fn confusion_examples() {
        let actual = [true, true, false, false];
        let r = confusion_rates(&actual, &actual).unwrap();
        assert_eq!((r.tp_rate, r.fp_rate), (1.0, 0.0));
        let r = confusion_rates(&[true; 4], &actual).unwrap();
        assert_eq!((r.tp_rate, r.fp_rate), (1.0, 1.0));

        let mut predicted = vec![true; 7];
        predicted.push(false);
        predicted.extend(std::iter::repeat_n(true, 10));
        predicted.extend(std::iter::repeat_n(false, 90));
        let mut truth = vec![true; 8];
        truth.extend(std::iter::repeat_n(false, 100));
        let r = confusion_rates(&predicted, &truth).unwrap();
        assert_eq!((r.tp_rate, r.fp_rate), (0.875, 0.1));

        assert!(confusion_rates(&[true], &[true]).is_err());
        assert!(confusion_rates(&[true], &[false]).is_err());
        assert!(confusion_rates(&[true], &[true, false]).is_err());
    }

    fn boxes(n: usize) -> impl Strategy<Value = Vec<BBox>> {
        prop::collection::vec(
            (0.0..80.0f64, 0.0..80.0f64, 2.0..30.0f64, 2.0..30.0f64)
                .prop_map(|(x, y, w, h)| b(x, y, x + w, y + h)),
            0..n,
        )
    }

    proptest! {
        #[test]
        fn prf_counts_and_order_independence(gts in boxes(8), det_boxes in boxes(12), seed in any::<u64>()) {
            let dets: Vec<ScoredBox> = det_boxes
                .iter()
                .enumerate()
                .map(|(i, &d)| sb(d, (i as f64 + 1.0) / 13.0))
                .collect();
            let p = prf_match(&dets, &gts, 0.5);
            prop_assert_eq!(p.tp + p.fn_, gts.len());
            prop_assert_eq!(p.tp + p.fp, dets.len());
            for v in [p.precision, p.recall, p.f_measure] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            let mut shuffled = dets.clone();
            let n = shuffled.len();
            if n > 1 {
                let mut s = seed;
                for i in (1..n).rev() {
                    s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                    shuffled.swap(i, (s >> 33) as usize % (i + 1));
                }
            }
            prop_assert_eq!(prf_match(&shuffled, &gts, 0.5), p);
        }

        #[test]
        fn recall_monotone(gts in boxes(6), props in boxes(40)) {
            prop_assume!(!gts.is_empty());
            let props: Vec<ScoredBox> = props.iter().enumerate().map(|(i, &p)| sb(p, 1.0 / (i as f64 + 1.0))).collect();
            let th = default_thresholds();
            let mut prev: Option<RecallCurve> = None;
            for n in [5, 10, 20, 40] {
                let c = recall_curve(std::slice::from_ref(&props), std::slice::from_ref(&gts), n, &th).unwrap();
                for w in c.recall.windows(2) {
                    prop_assert!(w[0] >= w[1]);
                }
                if let Some(p) = &prev {
                    for (a, b) in p.recall.iter().zip(&c.recall) {
                        prop_assert!(b >= a);
                    }
                }
                prev = Some(c);
            }
        }

        #[test]
        fn confusion_permutation_invariant(pairs in prop::collection::vec((any::<bool>(), any::<bool>()), 2..50), rot in 0usize..50) {
            let pred: Vec<bool> = pairs.iter().map(|p| p.0).collect();
            let act: Vec<bool> = pairs.iter().map(|p| p.1).collect();
            let base = confusion_rates(&pred, &act);
            let k = rot % pairs.len();
            let mut rp = pred.clone();
            let mut ra = act.clone();
            rp.rotate_left(k);
            ra.rotate_left(k);
            rp.reverse();
            ra.reverse();
            prop_assert_eq!(confusion_rates(&rp, &ra), base);
        }
    }
}
