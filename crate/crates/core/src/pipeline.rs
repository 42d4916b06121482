//! End-to-end run over synthetic scenes with the IoU oracle in place of the
//! network.
//!
//! Per scene: tile priors, let the oracle regress positive priors onto
//! their ground truth and score every box, suppress at the proposal
//! threshold and keep the top proposals; then, for each simulated training
//! snapshot, classify proposals with the ambiguous-text thresholds and emit
//! jittered refinements of the positive ones; finally vote across
//! snapshots, filter nested boxes and match against ground truth.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::codec::decode_box;
use crate::error::{Error, Result};
use crate::evaluation::{
    default_thresholds, prf_match, recall_curve, Prf, RecallCurve, DEFAULT_MATCH_IOU,
};
use crate::geometry::{max_iou, BBox, ScoredBox, CLASS_TEXT};
use crate::labeling::{assign_rpn_labels_masked, detection_label_for, Label};
use crate::priors::{generate_priors, grid_for_image, PriorConfig};
use crate::suppression::{
    filter_nested, iterative_vote, nms_top_k, DetectionSet, SuppressionConfig,
};
use crate::synth::{generate_scene, jitter_box, oracle_score, SceneSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub scenes: usize,
    pub seed: u64,
    /// Scene template; its seed is replaced per scene.
    pub scene: SceneSpec,
    pub priors: PriorConfig,
    pub suppression: SuppressionConfig,
    /// Proposals kept per image after suppression.
    pub top_n: usize,
    /// Standard deviation of the oracle score noise.
    pub noise_sigma: f64,
    /// Regress positive priors onto their ground truth before scoring.
    pub refine_proposals: bool,
    /// Simulated snapshots whose detections are voted.
    pub iterations: usize,
    pub jitter_frac: f64,
    pub match_iou: f64,
    pub thresholds: Vec<f64>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            scenes: 50,
            seed: 0,
            scene: SceneSpec::default(),
            priors: PriorConfig::default(),
            suppression: SuppressionConfig::default(),
            top_n: 300,
            noise_sigma: 0.0,
            refine_proposals: true,
            iterations: 3,
            jitter_frac: 0.05,
            match_iou: DEFAULT_MATCH_IOU,
            thresholds: default_thresholds(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneResult {
    pub seed: u64,
    pub gts: Vec<BBox>,
    pub proposals: Vec<ScoredBox>,
    pub detections: Vec<ScoredBox>,
    pub prf: Prf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineReport {
    pub scenes: Vec<SceneResult>,
    pub recall: RecallCurve,
    pub prf: Prf,
}

impl PipelineReport {
    pub fn proposals(&self) -> Vec<Vec<ScoredBox>> {
        self.scenes.iter().map(|s| s.proposals.clone()).collect()
    }

    pub fn gts(&self) -> Vec<Vec<BBox>> {
        self.scenes.iter().map(|s| s.gts.clone()).collect()
    }
}

/// Scored, suppressed and truncated word proposals for one image.
#[allow(clippy::too_many_arguments)]
pub fn propose<R: Rng + ?Sized>(
    gts: &[BBox],
    image_w: f64,
    image_h: f64,
    priors: &PriorConfig,
    suppression: &SuppressionConfig,
    top_n: usize,
    noise_sigma: f64,
    refine: bool,
    rng: &mut R,
) -> Result<Vec<ScoredBox>> {
    let (m, n) = grid_for_image(image_w, image_h, priors.stride);
    let lattice = generate_priors(m, n, image_w, image_h, priors)?;
    let labels = refine
        .then(|| assign_rpn_labels_masked(&lattice.boxes, Some(&lattice.excluded), gts, true));

    let mut scored = Vec::with_capacity(lattice.len());
    for (i, prior) in lattice.boxes.iter().enumerate() {
        let target = labels.as_ref().and_then(|a| a.labels[i].target);
        let bbox = match target {
            Some(t) => decode_box(&t, prior)?,
            None => *prior,
        };
        let score = oracle_score(&bbox, gts, noise_sigma, rng);
        scored.push(ScoredBox {
            bbox,
            score,
            class_id: CLASS_TEXT,
        });
    }
    nms_top_k(&scored, suppression.proposal_iou, top_n)
}

/// Detection sets from `iterations` simulated snapshots.
///
/// A snapshot labels each proposal from its (noisy) oracle score; positive
/// proposals are regressed onto a jittered copy of their best ground truth.
#[allow(clippy::too_many_arguments)]
pub fn detect<R: Rng + ?Sized>(
    proposals: &[ScoredBox],
    gts: &[BBox],
    image_w: f64,
    image_h: f64,
    iterations: usize,
    jitter_frac: f64,
    noise_sigma: f64,
    rng: &mut R,
) -> Vec<DetectionSet> {
    (1..=iterations)
        .map(|t| {
            let mut items = Vec::new();
            for p in proposals {
                let cls = oracle_score(&p.bbox, gts, noise_sigma, rng);
                if detection_label_for(cls) != Label::Positive {
                    continue;
                }
                let refined = match max_iou(&p.bbox, gts) {
                    Some((g, v)) if v > 0.0 => {
                        jitter_box(&gts[g], jitter_frac, rng).clip(image_w, image_h)
                    }
                    _ => p.bbox,
                };
                if refined.area() <= 0.0 {
                    continue;
                }
                let score = oracle_score(&refined, gts, noise_sigma, rng);
                items.push(ScoredBox {
                    bbox: refined,
                    score,
                    class_id: CLASS_TEXT,
                });
            }
            DetectionSet::tagged(items, t as u32)
        })
        .collect()
}

fn run_scene(cfg: &PipelineConfig, seed: u64) -> Result<SceneResult> {
    let spec = SceneSpec {
        seed,
        ..cfg.scene.clone()
    };
    let mut rng = spec.rng();
    let scene = generate_scene(&spec, &mut rng)?;
    let (w, h) = (spec.image_w as f64, spec.image_h as f64);
    let proposals = propose(
        &scene.gts,
        w,
        h,
        &cfg.priors,
        &cfg.suppression,
        cfg.top_n,
        cfg.noise_sigma,
        cfg.refine_proposals,
        &mut rng,
    )?;
    let sets = detect(
        &proposals,
        &scene.gts,
        w,
        h,
        cfg.iterations,
        cfg.jitter_frac,
        cfg.noise_sigma,
        &mut rng,
    );
    let detections = if sets.is_empty() {
        Vec::new()
    } else {
        let voted = iterative_vote(&sets, cfg.suppression.vote_iou)?;
        filter_nested(&voted.items, cfg.suppression.nested_eps)
    };
    let prf = prf_match(&detections, &scene.gts, cfg.match_iou);
    Ok(SceneResult {
        seed,
        gts: scene.gts,
        proposals,
        detections,
        prf,
    })
}

/// Runs every scene (in parallel) and aggregates recall and PRF.
///
/// Scene seeds are drawn sequentially from `cfg.seed`, so results do not
/// depend on scheduling.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineReport> {
    if cfg.scenes == 0 {
        return Err(Error::invalid("pipeline needs at least one scene"));
    }
    let mut master = ChaCha8Rng::seed_from_u64(cfg.seed);
    let seeds: Vec<u64> = (0..cfg.scenes).map(|_| master.next_u64()).collect();
    let scenes = seeds
        .par_iter()
        .map(|&s| run_scene(cfg, s))
        .collect::<Result<Vec<_>>>()?;
    let proposals: Vec<Vec<ScoredBox>> = scenes.iter().map(|s| s.proposals.clone()).collect();
    let gts: Vec<Vec<BBox>> = scenes.iter().map(|s| s.gts.clone()).collect();
    let recall = recall_curve(&proposals, &gts, cfg.top_n, &cfg.thresholds)?;
    let prf = Prf::sum(scenes.iter().map(|s| &s.prf));
    Ok(PipelineReport {
        scenes,
        recall,
        prf,
    })
}
