//! Synthetic word scenes and an IoU oracle that plays the role of the
//! network's textness score.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{contains, iou, max_iou, BBox, ScoredBox, CLASS_TEXT};

/// Consecutive rejections tolerated per word before giving up.
pub const MAX_PLACEMENT_ATTEMPTS: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSpec {
    pub image_w: u32,
    pub image_h: u32,
    /// Inclusive word count range.
    pub n_words: (usize, usize),
    /// Word height range in pixels.
    pub height_range: (f64, f64),
    /// Height-over-width range.
    pub ratio_range: (f64, f64),
    pub max_gt_iou: f64,
    /// Permit a word box to lie inside another.
    pub allow_nested: bool,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            image_w: 640,
            image_h: 480,
            n_words: (3, 12),
            height_range: (16.0, 96.0),
            ratio_range: (0.2, 1.5),
            max_gt_iou: 0.1,
            allow_nested: false,
            seed: 0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let range_ok =
            |(lo, hi): (f64, f64)| lo.is_finite() && hi.is_finite() && lo > 0.0 && lo <= hi;
        if self.image_w == 0 || self.image_h == 0 {
            return Err(Error::invalid("scene dimensions must be positive"));
        }
        if self.n_words.0 > self.n_words.1 {
            return Err(Error::invalid(format!(
                "empty word count range {:?}",
                self.n_words
            )));
        }
        if !range_ok(self.height_range) {
            return Err(Error::invalid(format!(
                "bad height range {:?}",
                self.height_range
            )));
        }
        if !range_ok(self.ratio_range) {
            return Err(Error::invalid(format!(
                "bad ratio range {:?}",
                self.ratio_range
            )));
        }
        if !(0.0..1.0).contains(&self.max_gt_iou) {
            return Err(Error::invalid(format!(
                "max_gt_iou must be in [0, 1), got {}",
                self.max_gt_iou
            )));
        }
        Ok(())
    }

    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthScene {
    pub gts: Vec<BBox>,
    pub spec: SceneSpec,
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

/// Rejection-samples word boxes honouring the `SceneSpec` ranges, the pairwise
/// IoU cap and (unless allowed) the no-nesting rule.
pub fn generate_scene<R: Rng + ?Sized>(spec: &SceneSpec, rng: &mut R) -> Result<SynthScene> {
    spec.validate()?;
    let (iw, ih) = (spec.image_w as f64, spec.image_h as f64);
    let count = rng.random_range(spec.n_words.0..=spec.n_words.1);
    let mut gts: Vec<BBox> = Vec::with_capacity(count);
    for word in 0..count {
        let mut placed = false;
        for _ in 0..MAX_PLACEMENT_ATTEMPTS {
            let h = uniform(rng, spec.height_range);
            let ratio = uniform(rng, spec.ratio_range);
            let w = h / ratio;
            if w > iw || h > ih {
                continue;
            }
            let x1 = uniform(rng, (0.0, iw - w));
            let y1 = uniform(rng, (0.0, ih - h));
            let cand = BBox {
                x1,
                y1,
                x2: (x1 + w).min(iw),
                y2: (y1 + h).min(ih),
            };
            let clash = gts.iter().any(|g| {
                iou(g, &cand) > spec.max_gt_iou
                    || (!spec.allow_nested && (contains(g, &cand, 0.0) || contains(&cand, g, 0.0)))
            });
            if !clash {
                gts.push(cand);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::Placement {
                word,
                attempts: MAX_PLACEMENT_ATTEMPTS,
            });
        }
    }
    Ok(SynthScene {
        gts,
        spec: spec.clone(),
    })
}

/// Max-IoU against `gts` plus Gaussian noise, clamped to `[0, 1]`.
///
/// With `noise_sigma == 0` no randomness is consumed and the score is exactly
/// the max-IoU.
pub fn oracle_score<R: Rng + ?Sized>(b: &BBox, gts: &[BBox], noise_sigma: f64, rng: &mut R) -> f64 {
    let base = max_iou(b, gts).map_or(0.0, |(_, v)| v);
    let noise = if noise_sigma > 0.0 {
        Normal::new(0.0, noise_sigma)
            .expect("positive finite sigma")
            .sample(rng)
    } else {
        0.0
    };
    (base + noise).clamp(0.0, 1.0)
}

/// Perturbs center and extent by up to `±frac` of the extent, uniformly.
pub fn jitter_box<R: Rng + ?Sized>(b: &BBox, frac: f64, rng: &mut R) -> BBox {
    if frac <= 0.0 {
        return *b;
    }
    let (w, h) = (b.width(), b.height());
    let mut unit = || rng.random_range(-frac..=frac);
    let cx = (b.x1 + b.x2) / 2.0 + unit() * w;
    let cy = (b.y1 + b.y2) / 2.0 + unit() * h;
    let nw = w * (1.0 + unit());
    let nh = h * (1.0 + unit());
    BBox {
        x1: cx - nw / 2.0,
        y1: cy - nh / 2.0,
        x2: cx + nw / 2.0,
        y2: cy + nh / 2.0,
    }
}

/// `per_gt` jittered copies of every ground truth (clipped to the image)
/// followed by `n_negatives` random in-bounds boxes, all oracle-scored.
#[allow(clippy::too_many_arguments)]
pub fn jitter_proposals<R: Rng + ?Sized>(
    gts: &[BBox],
    per_gt: usize,
    jitter_frac: f64,
    n_negatives: usize,
    image_w: f64,
    image_h: f64,
    noise_sigma: f64,
    rng: &mut R,
) -> Result<Vec<ScoredBox>> {
    if !(0.0..1.0).contains(&jitter_frac) {
        return Err(Error::invalid(format!(
            "jitter_frac must be in [0, 1), got {jitter_frac}"
        )));
    }
    let mut out = Vec::with_capacity(gts.len() * per_gt + n_negatives);
    for g in gts {
        for _ in 0..per_gt {
            let b = jitter_box(g, jitter_frac, rng).clip(image_w, image_h);
            let score = oracle_score(&b, gts, noise_sigma, rng);
            out.push(ScoredBox {
                bbox: b,
                score,
                class_id: CLASS_TEXT,
            });
        }
    }
    let max_w = (image_w / 2.0).max(4.0);
    let max_h = (image_h / 2.0).max(4.0);
    for _ in 0..n_negatives {
        let w = rng.random_range(1.0..=max_w).min(image_w);
        let h = rng.random_range(1.0..=max_h).min(image_h);
        let x1 = uniform(rng, (0.0, image_w - w));
        let y1 = uniform(rng, (0.0, image_h - h));
        let b = BBox {
            x1,
            y1,
            x2: x1 + w,
            y2: y1 + h,
        };
        let score = oracle_score(&b, gts, noise_sigma, rng);
        out.push(ScoredBox {
            bbox: b,
            score,
            class_id: CLASS_TEXT,
        });
    }
    Ok(out)
}
