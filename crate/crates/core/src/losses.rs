//! Multi-task detection loss: softmax classification plus smooth-L1 box
//! regression, with analytic gradients and a central-difference checker.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::codec::RegressionOffsets;
use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::mlrp::{
    fuse, fuse_weight_gradient, pool_multilevel, FeatureGrid, FusionWeights, PooledFeature,
};

/// Loss balance for the proposal network.
pub const RPN_LAMBDA: f64 = 3.0;
/// Loss balance for the detection network.
pub const DETECTION_LAMBDA: f64 = 1.0;

/// Unnormalised class scores.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassScores(Vec<f64>);

impl ClassScores {
    pub fn new(logits: Vec<f64>) -> Result<Self> {
        if logits.is_empty() {
            return Err(Error::invalid("class scores need at least one logit"));
        }
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("logits {logits:?}")));
        }
        Ok(Self(logits))
    }

    pub fn logits(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Softmax probabilities, computed with a max shift.
    pub fn probabilities(&self) -> Vec<f64> {
        let m = self.0.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = self.0.iter().map(|z| (z - m).exp()).collect();
        let s: f64 = e.iter().sum();
        e.into_iter().map(|v| v / s).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub l_cls: f64,
    pub l_reg: f64,
    pub lambda: f64,
    pub total: f64,
}

fn check_label(scores: &ClassScores, label: usize) -> Result<()> {
    if label >= scores.len() {
        return Err(Error::invalid(format!(
            "label {label} out of range for {} classes",
            scores.len()
        )));
    }
    Ok(())
}

/// Negative log softmax probability of `label`.
pub fn softmax_xent(scores: &ClassScores, label: usize) -> Result<f64> {
    check_label(scores, label)?;
    let z = scores.logits();
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    Ok((lse - z[label]).max(0.0))
}

/// Gradient of [`softmax_xent`] with respect to the logits: `p - onehot`.
pub fn softmax_xent_grad(scores: &ClassScores, label: usize) -> Result<Vec<f64>> {
    check_label(scores, label)?;
    let mut p = scores.probabilities();
    p[label] -= 1.0;
    Ok(p)
}

fn smooth_l1_scalar(d: f64) -> f64 {
    if d.abs() < 1.0 {
        0.5 * d * d
    } else {
        d.abs() - 0.5
    }
}

fn smooth_l1_scalar_grad(d: f64) -> f64 {
    if d.abs() < 1.0 {
        d
    } else {
        d.signum()
    }
}

/// Sum of smooth-L1 over the four offset components.
pub fn smooth_l1(pred: &RegressionOffsets, target: &RegressionOffsets) -> f64 {
    pred.to_array()
        .iter()
        .zip(target.to_array())
        .map(|(p, t)| smooth_l1_scalar(p - t))
        .sum()
}

/// Gradient of [`smooth_l1`] with respect to `pred`.
pub fn smooth_l1_grad(pred: &RegressionOffsets, target: &RegressionOffsets) -> [f64; 4] {
    let p = pred.to_array();
    let t = target.to_array();
    std::array::from_fn(|i| smooth_l1_scalar_grad(p[i] - t[i]))
}

/// `mean(classification) + lambda * mean(regression)`.
///
/// `regression` holds `(predicted, target)` pairs of positive samples only;
/// an empty list contributes zero.
pub fn multitask_loss(
    classification: &[(ClassScores, usize)],
    regression: &[(RegressionOffsets, RegressionOffsets)],
    lambda: f64,
) -> Result<LossBreakdown> {
    if classification.is_empty() {
        return Err(Error::invalid(
            "multi-task loss needs at least one classification sample",
        ));
    }
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(Error::invalid(format!("lambda must be > 0, got {lambda}")));
    }
    let mut cls_sum = 0.0;
    for (scores, label) in classification {
        cls_sum += softmax_xent(scores, *label)?;
    }
    let l_cls = cls_sum / classification.len() as f64;
    let l_reg = if regression.is_empty() {
        0.0
    } else {
        regression.iter().map(|(p, t)| smooth_l1(p, t)).sum::<f64>() / regression.len() as f64
    };
    Ok(LossBreakdown {
        l_cls,
        l_reg,
        lambda,
        total: l_cls + lambda * l_reg,
    })
}

pub const DEFAULT_FD_EPS: f64 = 1e-5;

/// Largest relative error between `analytic` and central differences of `f`
/// at `x`, with denominator `max(|a|, |n|, 1e-8)` per component.
pub fn finite_diff_check<F>(f: F, analytic: &[f64], x: &[f64], eps: f64) -> Result<f64>
where
    F: Fn(&[f64]) -> f64,
{
    if !(eps.is_finite() && eps > 0.0) {
        return Err(Error::invalid(format!("eps must be > 0, got {eps}")));
    }
    if analytic.len() != x.len() {
        return Err(Error::invalid(format!(
            "gradient has {} components, point has {}",
            analytic.len(),
            x.len()
        )));
    }
    let mut probe = x.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        probe[i] = x[i] + eps;
        let hi = f(&probe);
        probe[i] = x[i] - eps;
        let lo = f(&probe);
        probe[i] = x[i];
        if !hi.is_finite() || !lo.is_finite() {
            return Err(Error::NonFinite(format!(
                "function value near component {i}"
            )));
        }
        let numeric = (hi - lo) / (2.0 * eps);
        let a = analytic[i];
        if !a.is_finite() {
            return Err(Error::NonFinite(format!("analytic gradient component {i}")));
        }
        let denom = a.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max((a - numeric).abs() / denom);
    }
    Ok(worst)
}

/// Worst relative gradient errors over a batch of random points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientReport {
    pub points: usize,
    pub softmax_xent: f64,
    pub smooth_l1: f64,
    pub fusion: f64,
}

impl GradientReport {
    pub fn max_error(&self) -> f64 {
        self.softmax_xent.max(self.smooth_l1).max(self.fusion)
    }
}

/// Distance kept from the smooth-L1 kinks at `|d| = 1` when drawing points.
pub const KINK_MARGIN: f64 = 1e-3;

fn random_grid<R: Rng>(rng: &mut R, c: usize, h: usize, w: usize, stride: f64) -> FeatureGrid {
    let values = (0..c * h * w)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    FeatureGrid::new(c, h, w, stride, values).expect("valid random grid")
}

/// Checks the analytic gradients of the softmax loss, smooth-L1 loss and the
/// fusion map against central differences at `points` random points each.
pub fn gradient_suite(seed: u64, points: usize, eps: f64) -> Result<GradientReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradientReport {
        points,
        softmax_xent: 0.0,
        smooth_l1: 0.0,
        fusion: 0.0,
    };

    for _ in 0..points {
        let classes = rng.random_range(2..=6);
        let logits: Vec<f64> = (0..classes).map(|_| rng.random_range(-3.0..3.0)).collect();
        let label = rng.random_range(0..classes);
        let grad = softmax_xent_grad(&ClassScores::new(logits.clone())?, label)?;
        let err = finite_diff_check(
            |z| softmax_xent(&ClassScores::new(z.to_vec()).expect("finite"), label).expect("label"),
            &grad,
            &logits,
            eps,
        )?;
        report.softmax_xent = report.softmax_xent.max(err);
    }

    for _ in 0..points {
        let target =
            RegressionOffsets::from_array(std::array::from_fn(|_| rng.random_range(-2.0..2.0)));
        let pred: [f64; 4] = std::array::from_fn(|i| {
            let t = target.to_array()[i];
            loop {
                let d: f64 = rng.random_range(-3.0..3.0);
                if (d.abs() - 1.0).abs() > KINK_MARGIN && d.abs() > KINK_MARGIN {
                    break t + d;
                }
            }
        });
        let pred = RegressionOffsets::from_array(pred);
        let grad = smooth_l1_grad(&pred, &target);
        let err = finite_diff_check(
            |p| {
                smooth_l1(
                    &RegressionOffsets::from_array([p[0], p[1], p[2], p[3]]),
                    &target,
                )
            },
            &grad,
            &pred.to_array(),
            eps,
        )?;
        report.smooth_l1 = report.smooth_l1.max(err);
    }

    for _ in 0..points {
        let (c0, c1) = (rng.random_range(1..=3), rng.random_range(1..=3));
        let c_out = rng.random_range(1..=3);
        let grids = [
            random_grid(&mut rng, c0, 8, 8, 8.0),
            random_grid(&mut rng, c1, 4, 4, 16.0),
        ];
        let x1 = rng.random_range(0.0..40.0);
        let y1 = rng.random_range(0.0..40.0);
        let roi = BBox::new(
            x1,
            y1,
            x1 + rng.random_range(4.0..24.0),
            y1 + rng.random_range(4.0..24.0),
        )?;
        let concat = pool_multilevel(&grids, &roi, 2, 2)?;
        let c_in = c0 + c1;
        let mut upstream = PooledFeature::zeros(c_out, 2, 2);
        upstream
            .values
            .iter_mut()
            .for_each(|v| *v = rng.random_range(-1.0..1.0));
        let params: Vec<f64> = (0..c_out * c_in + c_out)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();

        let objective = |p: &[f64]| {
            let w = FusionWeights::new(
                c_out,
                c_in,
                p[..c_out * c_in].to_vec(),
                Some(p[c_out * c_in..].to_vec()),
            )
            .expect("finite weights");
            let out = fuse(&concat, &w).expect("matching channels");
            out.values
                .iter()
                .zip(&upstream.values)
                .map(|(a, b)| a * b)
                .sum::<f64>()
        };
        let (mut grad, grad_b) = fuse_weight_gradient(&concat, &upstream);
        grad.extend(grad_b);
        let err = finite_diff_check(objective, &grad, &params, eps)?;
        report.fusion = report.fusion.max(err);
    }

    Ok(report)
}
