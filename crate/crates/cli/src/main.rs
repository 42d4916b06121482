use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use wordbox::evaluation::{prf_match, recall_curve, Prf};
use wordbox::formats::{
    image_id_from_gt_name, parse_detections, parse_feature_grid, parse_fusion_weights, parse_gt,
    serialize_boxes_as_gt, serialize_curve, serialize_detections, serialize_prf, write_detections,
    Config,
};
use wordbox::labeling::{
    assign_detection_labels, assign_rpn_labels, sample_minibatch, AssignMode, SamplerConfig,
};
use wordbox::losses::{gradient_suite, multitask_loss, ClassScores, DEFAULT_FD_EPS};
use wordbox::mlrp::{fuse, pool_multilevel, PooledFeature};
use wordbox::pipeline::{run_pipeline, PipelineConfig};
use wordbox::priors::{generate_priors, grid_for_image};
use wordbox::suppression::{filter_nested, iterative_vote, nms_top_k, DetectionSet};
use wordbox::synth::generate_scene;
use wordbox::{BBox, RegressionOffsets, ScoredBox};

const SIMPLIFIED_NOTE: &str =
    "# simplified one-to-one IoU matching (not the official ICDAR protocol)";
const GRADIENT_TOLERANCE: f64 = 1e-4;

/// Word-box geometry, suppression and evaluation tools.
///
/// Thresholds default to the detector's published constants. A JSON file
/// passed with --config replaces those defaults; explicit flags override both.
#[derive(Parser)]
#[command(name = "wordbox", version)]
struct Cli {
    /// Shared JSON configuration (keys: priors, sampler, suppression, mlrp, eval, synth)
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Tile prior boxes over the feature grid of an image; writes ground-truth format
    Priors(PriorsArgs),
    /// Label boxes against ground truth, optionally drawing a training minibatch
    Assign(AssignArgs),
    /// Greedy non-maximum suppression per image
    Nms(NmsArgs),
    /// Union detection files (one per snapshot) and suppress at the voting threshold
    Vote(VoteArgs),
    /// Keep the best box of every group of nested boxes
    Filter(FilterArgs),
    /// Proposal recall against IoU threshold
    EvalRecall(EvalRecallArgs),
    /// Precision, recall and F-measure of detections
    EvalPrf(EvalPrfArgs),
    /// Generate synthetic scenes as ground-truth files
    Synth(SynthArgs),
    /// Multi-level ROI max pooling with optional 1x1 fusion
    Roipool(RoipoolArgs),
    /// Finite-difference check of every loss gradient
    Losscheck(LosscheckArgs),
    /// Full synthetic run: scenes, proposals, detection, voting, filtering, evaluation
    Pipeline(PipelineArgs),
}

#[derive(Args)]
struct PriorsArgs {
    /// Image width in pixels
    #[arg(long, default_value_t = 640.0)]
    image_w: f64,
    /// Image height in pixels
    #[arg(long, default_value_t = 480.0)]
    image_h: f64,
    /// Grid rows [default: ceil(image_h / stride)]
    #[arg(long)]
    rows: Option<usize>,
    /// Grid columns [default: ceil(image_w / stride)]
    #[arg(long)]
    cols: Option<usize>,
    /// Output file [default: stdout]
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Rpn,
    Detection,
}

#[derive(Args)]
struct AssignArgs {
    /// Boxes to label, ground-truth format [default: stdin]
    #[arg(long = "in")]
    input: Option<PathBuf>,
    /// Ground-truth file for the image
    #[arg(long)]
    gt: PathBuf,
    /// Threshold set: rpn (0.3/0.5, ignore band) or detection (0.2/0.5, ambiguous band)
    #[arg(long, value_enum, default_value = "rpn")]
    mode: Mode,
    /// Do not promote the best box of each ground truth (rpn mode)
    #[arg(long)]
    no_force: bool,
    /// Print only a sampled minibatch (sizes from the sampler config: 128/128 or 64/32/160)
    #[arg(long, requires = "seed")]
    sample: bool,
    /// Sampling seed
    #[arg(long)]
    seed: Option<u64>,
    /// Output file [default: stdout]
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct NmsArgs {
    /// Detections file [default: stdin]
    #[arg(long = "in")]
    input: Option<PathBuf>,
    /// Suppress boxes whose IoU with a kept box exceeds this [default: 0.7]
    #[arg(long, value_parser = unit_threshold)]
    iou: Option<f64>,
    /// Boxes kept per image [default: 2000]
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    top_n: Option<u64>,
    /// Output file [default: stdout]
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct VoteArgs {
    /// Detections file of one snapshot; repeat for each snapshot
    #[arg(long = "in", required = true)]
    input: Vec<PathBuf>,
    /// Voting IoU threshold [default: 0.3]
    #[arg(long, value_parser = unit_threshold)]
    iou: Option<f64>,
    /// Output file [default: stdout]
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FilterArgs {
    /// Detections file [default: stdin]
    #[arg(long = "in")]
    input: Option<PathBuf>,
    /// Containment tolerance in pixels [default: 0]
    #[arg(long, value_parser = non_negative)]
    eps: Option<f64>,
    /// Output file [default: stdout]
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalRecallArgs {
    /// Proposals file [default: stdin]
    #[arg(long = "in")]
    input: Option<PathBuf>,
    /// Ground-truth file or directory of gt_<image>.txt files
    #[arg(long)]
    gt: PathBuf,
    /// Top proposals considered per image [default: 300]
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    top_n: Option<u64>,
    /// Output file [default: stdout]
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalPrfArgs {
    /// Detections file [default: stdin]
    #[arg(long = "in")]
    input: Option<PathBuf>,
    /// Ground-truth file or directory of gt_<image>.txt files
    #[arg(long)]
    gt: PathBuf,
    /// Minimum IoU for a match [default: 0.5]
    #[arg(long, value_parser = unit_threshold)]
    iou: Option<f64>,
    /// Output file [default: stdout]
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    seed: u64,
    /// Number of scenes
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    scenes: u64,
    /// Directory receiving gt_scene_NNN.txt files
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RoipoolArgs {
    /// Feature grid file ("C height width stride" header); repeat per level
    #[arg(long, required = true)]
    grid: Vec<PathBuf>,
    /// Region in image coordinates: x1,y1,x2,y2
    #[arg(long, value_parser = parse_roi, allow_hyphen_values = true)]
    roi: BBox,
    /// Fusion weights ("C_out C_in has_bias" header); omit to print the concatenation
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Output bins per column [default: 7]
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pool_h: Option<u64>,
    /// Output bins per row [default: 7]
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pool_w: Option<u64>,
    /// Output file [default: stdout]
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct LosscheckArgs {
    #[arg(long)]
    seed: u64,
    /// Random points per function
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u64).range(1..))]
    points: u64,
    /// Regression weight of the sample multi-task loss
    #[arg(long, default_value_t = 3.0, value_parser = non_negative)]
    lambda: f64,
}

#[derive(Args)]
struct PipelineArgs {
    #[arg(long)]
    seed: u64,
    /// Number of synthetic scenes
    #[arg(long, default_value_t = 50, value_parser = clap::value_parser!(u64).range(1..))]
    scenes: u64,
    /// Proposals kept per image [default: 300]
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    top_n: Option<u64>,
    /// Standard deviation of the oracle score noise
    #[arg(long, default_value_t = 0.0, value_parser = non_negative)]
    sigma: f64,
    /// Detection jitter as a fraction of box size
    #[arg(long, default_value_t = 0.05, value_parser = non_negative)]
    jitter: f64,
    /// Simulated snapshots voted together
    #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u64).range(1..))]
    iterations: u64,
    /// Minimum IoU for a detection match [default: 0.5]
    #[arg(long, value_parser = unit_threshold)]
    iou: Option<f64>,
    /// Score raw priors instead of regressing positive ones onto their word
    #[arg(long)]
    no_refine: bool,
    /// Also write the final detections of every scene to this file
    #[arg(long)]
    out: Option<PathBuf>,
}

fn unit_threshold(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("`{s}` is not a number"))?;
    if v > 0.0 && v <= 1.0 {
        Ok(v)
    } else {
        Err(format!("threshold must be > 0 and <= 1, got {v}"))
    }
}

fn non_negative(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("`{s}` is not a number"))?;
    if v.is_finite() && v >= 0.0 {
        Ok(v)
    } else {
        Err(format!("value must be finite and >= 0, got {v}"))
    }
}

fn parse_roi(s: &str) -> Result<BBox, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| format!("`{t}` is not a number"))
        })
        .collect::<Result<_, _>>()?;
    if v.len() != 4 {
        return Err(format!("expected x1,y1,x2,y2, got {} values", v.len()));
    }
    BBox::new(v[0], v[1], v[2], v[3]).map_err(|e| e.to_string())
}

/// Failure of a command: bad usage (exit 1) or bad data (exit 2).
enum Failure {
    Usage(String),
    Data(String),
}

impl Failure {
    fn at(path: &Path, e: wordbox::Error) -> Self {
        match e {
            wordbox::Error::Parse { ref content, .. } if !content.is_empty() => {
                Failure::Data(format!("{}: {e}: `{content}`", path.display()))
            }
            _ => Failure::Data(format!("{}: {e}", path.display())),
        }
    }
}

impl From<wordbox::Error> for Failure {
    fn from(e: wordbox::Error) -> Self {
        Failure::Data(e.to_string())
    }
}

type CmdResult = Result<(), Failure>;

fn read_text(path: Option<&Path>) -> Result<String, Failure> {
    match path {
        Some(p) => {
            fs::read_to_string(p).map_err(|e| Failure::Data(format!("{}: {e}", p.display())))
        }
        None => {
            let mut s = String::new();
            io::stdin()
                .read_to_string(&mut s)
                .map_err(|e| Failure::Data(format!("stdin: {e}")))?;
            Ok(s)
        }
    }
}

fn display(path: Option<&Path>) -> PathBuf {
    path.map_or_else(|| PathBuf::from("<stdin>"), Path::to_path_buf)
}

fn write_output(path: Option<&Path>, text: &str) -> CmdResult {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| Failure::Data(format!("{}: {e}", p.display()))),
        None => io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| Failure::Data(format!("stdout: {e}"))),
    }
}

fn load_detections(path: Option<&Path>) -> Result<BTreeMap<String, DetectionSet>, Failure> {
    let text = read_text(path)?;
    parse_detections(&text).map_err(|e| Failure::at(&display(path), e))
}

fn load_gt_boxes(path: &Path) -> Result<Vec<BBox>, Failure> {
    let text = read_text(Some(path))?;
    let records = parse_gt(&text).map_err(|e| Failure::at(path, e))?;
    Ok(records.into_iter().map(|r| r.bbox).collect())
}

/// Ground truth keyed by image id, from one file or a directory of files.
fn load_gt(path: &Path) -> Result<BTreeMap<String, Vec<BBox>>, Failure> {
    let name = |p: &Path| {
        p.file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default()
    };
    let mut out = BTreeMap::new();
    if path.is_dir() {
        let entries =
            fs::read_dir(path).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
        let mut files: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file())
            .collect();
        files.sort();
        for f in files {
            out.insert(image_id_from_gt_name(&name(&f)), load_gt_boxes(&f)?);
        }
    } else {
        out.insert(image_id_from_gt_name(&name(path)), load_gt_boxes(path)?);
    }
    Ok(out)
}

fn load_config(path: Option<&Path>) -> Result<Config, Failure> {
    match path {
        None => Ok(Config::default()),
        Some(p) => {
            let text = read_text(Some(p))?;
            Config::from_json(&text).map_err(|e| Failure::at(p, e))
        }
    }
}

fn cmd_priors(cfg: &Config, a: PriorsArgs) -> CmdResult {
    if !(a.image_w > 0.0 && a.image_h > 0.0) {
        return Err(Failure::Usage("image dimensions must be > 0".into()));
    }
    let (m, n) = grid_for_image(a.image_w, a.image_h, cfg.priors.stride);
    let lattice = generate_priors(
        a.rows.unwrap_or(m),
        a.cols.unwrap_or(n),
        a.image_w,
        a.image_h,
        &cfg.priors,
    )?;
    let kept: Vec<BBox> = lattice
        .boxes
        .iter()
        .zip(&lattice.excluded)
        .filter(|(_, &x)| !x)
        .map(|(b, _)| *b)
        .collect();
    write_output(a.out.as_deref(), &serialize_boxes_as_gt(&kept))
}

fn cmd_assign(cfg: &Config, a: AssignArgs) -> CmdResult {
    let input = display(a.input.as_deref());
    let boxes: Vec<BBox> = parse_gt(&read_text(a.input.as_deref())?)
        .map_err(|e| Failure::at(&input, e))?
        .into_iter()
        .map(|r| r.bbox)
        .collect();
    let gts = load_gt_boxes(&a.gt)?;
    let (assignment, mode) = match a.mode {
        Mode::Rpn => (
            assign_rpn_labels(&boxes, &gts, !a.no_force),
            AssignMode::Rpn,
        ),
        Mode::Detection => (assign_detection_labels(&boxes, &gts), AssignMode::Detection),
    };
    let rows: Vec<usize> = match (a.sample, a.seed) {
        (true, Some(seed)) => {
            let sampler = SamplerConfig {
                seed,
                ..cfg.sampler.clone()
            };
            sample_minibatch(&assignment, mode, &sampler, &mut sampler.rng())
                .into_iter()
                .map(|s| s.index)
                .collect()
        }
        _ => (0..assignment.len()).collect(),
    };
    let mut out = String::from("# index\tlabel\tmax_iou\tgt\ttx ty tw th\n");
    for i in rows {
        let l = &assignment.labels[i];
        let gt = l.matched_gt.map_or("-".to_string(), |g| g.to_string());
        let target = l.target.map_or("-".to_string(), |t| {
            let [x, y, w, h] = t.to_array();
            format!("{x:.6} {y:.6} {w:.6} {h:.6}")
        });
        let _ = writeln!(
            out,
            "{i}\t{}\t{:.6}\t{gt}\t{target}",
            l.label.as_str(),
            l.max_iou
        );
    }
    write_output(a.out.as_deref(), &out)
}

fn cmd_nms(cfg: &Config, a: NmsArgs) -> CmdResult {
    let sets = load_detections(a.input.as_deref())?;
    let iou = a.iou.unwrap_or(cfg.suppression.proposal_iou);
    let k = a
        .top_n
        .map_or(cfg.suppression.proposal_top_k, |n| n as usize);
    let mut out = BTreeMap::new();
    for (id, set) in sets {
        out.insert(id, DetectionSet::new(nms_top_k(&set.items, iou, k)?));
    }
    write_output(a.out.as_deref(), &serialize_detections(&out))
}

fn cmd_vote(cfg: &Config, a: VoteArgs) -> CmdResult {
    let mut per_image: BTreeMap<String, Vec<DetectionSet>> = BTreeMap::new();
    for (t, path) in a.input.iter().enumerate() {
        for (id, set) in load_detections(Some(path))? {
            per_image
                .entry(id)
                .or_default()
                .push(DetectionSet::tagged(set.items, t as u32 + 1));
        }
    }
    let iou = a.iou.unwrap_or(cfg.suppression.vote_iou);
    let mut out = BTreeMap::new();
    for (id, sets) in per_image {
        out.insert(id, iterative_vote(&sets, iou)?);
    }
    write_output(a.out.as_deref(), &serialize_detections(&out))
}

fn cmd_filter(cfg: &Config, a: FilterArgs) -> CmdResult {
    let eps = a.eps.unwrap_or(cfg.suppression.nested_eps);
    let out: BTreeMap<String, DetectionSet> = load_detections(a.input.as_deref())?
        .into_iter()
        .map(|(id, set)| (id, DetectionSet::new(filter_nested(&set.items, eps))))
        .collect();
    write_output(a.out.as_deref(), &serialize_detections(&out))
}

/// Aligns detections and ground truth over the union of their image ids.
fn paired(
    mut dets: BTreeMap<String, DetectionSet>,
    mut gts: BTreeMap<String, Vec<BBox>>,
) -> Vec<(String, Vec<ScoredBox>, Vec<BBox>)> {
    let ids: BTreeSet<String> = dets.keys().chain(gts.keys()).cloned().collect();
    ids.into_iter()
        .map(|id| {
            let d = dets.remove(&id).map(|s| s.items).unwrap_or_default();
            let g = gts.remove(&id).unwrap_or_default();
            (id, d, g)
        })
        .collect()
}

fn cmd_eval_recall(cfg: &Config, a: EvalRecallArgs) -> CmdResult {
    let pairs = paired(load_detections(a.input.as_deref())?, load_gt(&a.gt)?);
    let n = a.top_n.map_or(cfg.eval.recall_top_n, |n| n as usize);
    let (props, gts): (Vec<_>, Vec<_>) = pairs.into_iter().map(|(_, d, g)| (d, g)).unzip();
    let curve = recall_curve(&props, &gts, n, &cfg.eval.thresholds)?;
    write_output(a.out.as_deref(), &serialize_curve(&curve))
}

fn cmd_eval_prf(cfg: &Config, a: EvalPrfArgs) -> CmdResult {
    let pairs = paired(load_detections(a.input.as_deref())?, load_gt(&a.gt)?);
    let iou = a.iou.unwrap_or(cfg.eval.match_iou);
    let parts: Vec<Prf> = pairs.iter().map(|(_, d, g)| prf_match(d, g, iou)).collect();
    let text = format!("{SIMPLIFIED_NOTE}\n{}", serialize_prf(&Prf::sum(&parts)));
    write_output(a.out.as_deref(), &text)
}

fn cmd_synth(cfg: &Config, a: SynthArgs) -> CmdResult {
    fs::create_dir_all(&a.out).map_err(|e| Failure::Data(format!("{}: {e}", a.out.display())))?;
    let mut master = ChaCha8Rng::seed_from_u64(a.seed);
    for i in 0..a.scenes {
        let spec = wordbox::synth::SceneSpec {
            seed: master.random(),
            ..cfg.synth.clone()
        };
        let scene = generate_scene(&spec, &mut spec.rng())?;
        let path = a.out.join(format!("gt_scene_{i:03}.txt"));
        write_output(Some(&path), &serialize_boxes_as_gt(&scene.gts))?;
    }
    Ok(())
}

fn serialize_pooled(p: &PooledFeature) -> String {
    let mut out = format!("{} {} {}\n", p.channels, p.height, p.width);
    for row in p.values.chunks(p.width) {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

fn cmd_roipool(cfg: &Config, a: RoipoolArgs) -> CmdResult {
    let grids = a
        .grid
        .iter()
        .map(|p| parse_feature_grid(&read_text(Some(p))?).map_err(|e| Failure::at(p, e)))
        .collect::<Result<Vec<_>, _>>()?;
    let h = a.pool_h.map_or(cfg.mlrp.pool_h, |v| v as usize);
    let w = a.pool_w.map_or(cfg.mlrp.pool_w, |v| v as usize);
    let mut pooled = pool_multilevel(&grids, &a.roi, h, w)?;
    if let Some(p) = &a.weights {
        let weights = parse_fusion_weights(&read_text(Some(p))?).map_err(|e| Failure::at(p, e))?;
        pooled = fuse(&pooled, &weights)?;
    }
    write_output(a.out.as_deref(), &serialize_pooled(&pooled))
}

fn cmd_losscheck(a: LosscheckArgs) -> CmdResult {
    let report = gradient_suite(a.seed, a.points as usize, DEFAULT_FD_EPS)?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let cls: Vec<(ClassScores, usize)> = (0..8)
        .map(|_| {
            let logits = (0..3).map(|_| rng.random_range(-4.0..4.0)).collect();
            Ok((ClassScores::new(logits)?, rng.random_range(0..3)))
        })
        .collect::<wordbox::Result<_>>()?;
    let reg: Vec<(RegressionOffsets, RegressionOffsets)> = (0..4)
        .map(|_| {
            let mut t = || {
                RegressionOffsets::from_array(std::array::from_fn(|_| rng.random_range(-2.0..2.0)))
            };
            (t(), t())
        })
        .collect();
    let loss = multitask_loss(&cls, &reg, a.lambda)?;

    let mut out = String::new();
    let _ = writeln!(out, "points\t{}", report.points);
    let _ = writeln!(out, "softmax_xent\t{:.3e}", report.softmax_xent);
    let _ = writeln!(out, "smooth_l1\t{:.3e}", report.smooth_l1);
    let _ = writeln!(out, "fusion\t{:.3e}", report.fusion);
    let _ = writeln!(out, "max\t{:.3e}", report.max_error());
    let _ = writeln!(
        out,
        "multitask\tlambda={} l_cls={:.6} l_reg={:.6} total={:.6}",
        loss.lambda, loss.l_cls, loss.l_reg, loss.total
    );
    write_output(None, &out)?;
    if report.max_error() >= GRADIENT_TOLERANCE {
        return Err(Failure::Data(format!(
            "gradient check failed: max relative error {:.3e} >= {GRADIENT_TOLERANCE:e}",
            report.max_error()
        )));
    }
    Ok(())
}

fn cmd_pipeline(cfg: &Config, a: PipelineArgs) -> CmdResult {
    let pc = PipelineConfig {
        scenes: a.scenes as usize,
        seed: a.seed,
        scene: cfg.synth.clone(),
        priors: cfg.priors.clone(),
        suppression: cfg.suppression.clone(),
        top_n: a.top_n.map_or(cfg.eval.recall_top_n, |n| n as usize),
        noise_sigma: a.sigma,
        refine_proposals: !a.no_refine,
        iterations: a.iterations as usize,
        jitter_frac: a.jitter,
        match_iou: a.iou.unwrap_or(cfg.eval.match_iou),
        thresholds: cfg.eval.thresholds.clone(),
    };
    let report = run_pipeline(&pc)?;
    let mut out = format!(
        "# recall vs IoU threshold, top-{} proposals over {} scenes\n",
        pc.top_n, pc.scenes
    );
    out.push_str(&serialize_curve(&report.recall));
    if let Some(r) = report.recall.at(0.5) {
        let _ = writeln!(out, "recall@0.5\t{r:.6}");
    }
    out.push_str(SIMPLIFIED_NOTE);
    out.push('\n');
    out.push_str(&serialize_prf(&report.prf));
    if let Some(p) = &a.out {
        let mut dets = String::new();
        for (i, s) in report.scenes.iter().enumerate() {
            write_detections(&mut dets, &format!("scene_{i:03}"), &s.detections);
        }
        write_output(Some(p), &dets)?;
    }
    write_output(None, &out)
}

fn run(cli: Cli) -> CmdResult {
    let cfg = load_config(cli.config.as_deref())?;
    match cli.command {
        Command::Priors(a) => cmd_priors(&cfg, a),
        Command::Assign(a) => cmd_assign(&cfg, a),
        Command::Nms(a) => cmd_nms(&cfg, a),
        Command::Vote(a) => cmd_vote(&cfg, a),
        Command::Filter(a) => cmd_filter(&cfg, a),
        Command::EvalRecall(a) => cmd_eval_recall(&cfg, a),
        Command::EvalPrf(a) => cmd_eval_prf(&cfg, a),
        Command::Synth(a) => cmd_synth(&cfg, a),
        Command::Roipool(a) => cmd_roipool(&cfg, a),
        Command::Losscheck(a) => cmd_losscheck(a),
        Command::Pipeline(a) => cmd_pipeline(&cfg, a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Data(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
