//! Text formats: ground-truth annotations, detection files, feature grid and
//! fusion weight tensors, TSV recall curves, and the JSON configuration.
//!
//! All formats are UTF-8 with `\n` line endings and `.` as decimal point.
//! Coordinates and scores are written with six decimals, which is the
//! canonical form that parse/serialize round-trips exactly.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::{EvalConfig, Prf, RecallCurve};
use crate::geometry::{BBox, ScoredBox, CLASS_AMBIGUOUS, CLASS_TEXT};
use crate::labeling::SamplerConfig;
use crate::mlrp::{FeatureGrid, FusionWeights, MlrpConfig};
use crate::priors::PriorConfig;
use crate::suppression::{DetectionSet, SuppressionConfig};
use crate::synth::SceneSpec;

/// One annotated word.
#[derive(Debug, Clone, PartialEq)]
pub struct GtRecord {
    pub bbox: BBox,
    pub transcription: Option<String>,
}

/// Content lines with their 1-based numbers; skips blanks and `#` comments.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    let text = text.strip_prefix('\u{feff}').unwrap_or(text);
    text.lines().enumerate().filter_map(|(i, raw)| {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            None
        } else {
            Some((i + 1, line))
        }
    })
}

fn number(field: &str, line: usize, content: &str) -> Result<f64> {
    let v: f64 = field
        .trim()
        .parse()
        .map_err(|_| Error::parse(line, format!("invalid number `{}`", field.trim()), content))?;
    if !v.is_finite() {
        return Err(Error::parse(
            line,
            format!("non-finite number `{}`", field.trim()),
            content,
        ));
    }
    Ok(v)
}

fn strip_quotes(s: &str) -> &str {
    let s = s.trim();
    if s.len() >= 2 && s.starts_with('"') && s.ends_with('"') {
        &s[1..s.len() - 1]
    } else {
        s
    }
}

fn parse_gt_line(line: usize, content: &str) -> Result<GtRecord> {
    let too_few = || Error::parse(line, "expected ≥4 coordinates", content);
    let (coords, rest): (Vec<&str>, &str) = if content.contains(',') {
        let mut parts = content.splitn(5, ',');
        let coords: Vec<&str> = parts.by_ref().take(4).collect();
        (coords, parts.next().unwrap_or(""))
    } else {
        let mut coords = Vec::with_capacity(4);
        let mut rest = content;
        for _ in 0..4 {
            let trimmed = rest.trim_start();
            if trimmed.is_empty() {
                break;
            }
            let end = trimmed.find(char::is_whitespace).unwrap_or(trimmed.len());
            coords.push(&trimmed[..end]);
            rest = &trimmed[end..];
        }
        (coords, rest)
    };
    if coords.len() < 4 || coords.iter().any(|c| c.trim().is_empty()) {
        return Err(too_few());
    }
    let v: Vec<f64> = coords
        .iter()
        .map(|c| number(c, line, content))
        .collect::<Result<_>>()?;
    let bbox = BBox::from_corners(v[0], v[1], v[2], v[3])
        .map_err(|e| Error::parse(line, e.to_string(), content))?;
    let rest = rest.trim();
    let transcription = (!rest.is_empty()).then(|| strip_quotes(rest).to_string());
    Ok(GtRecord {
        bbox,
        transcription,
    })
}

/// Parses one ground-truth file.
///
/// Each line is `x1, y1, x2, y2[, "text"]` or the whitespace-separated
/// equivalent. Swapped corners are normalised. Any malformed line fails the
/// whole file.
pub fn parse_gt(text: &str) -> Result<Vec<GtRecord>> {
    content_lines(text)
        .map(|(n, line)| parse_gt_line(n, line))
        .collect()
}

/// Canonical ground-truth text.
pub fn serialize_gt(records: &[GtRecord]) -> String {
    let mut out = String::new();
    for r in records {
        let b = &r.bbox;
        let _ = write!(out, "{:.6}, {:.6}, {:.6}, {:.6}", b.x1, b.y1, b.x2, b.y2);
        if let Some(t) = &r.transcription {
            let _ = write!(out, ", \"{t}\"");
        }
        out.push('\n');
    }
    out
}

/// Ground-truth text for bare boxes, e.g. synthetic scenes.
pub fn serialize_boxes_as_gt(boxes: &[BBox]) -> String {
    let records: Vec<GtRecord> = boxes
        .iter()
        .map(|&bbox| GtRecord {
            bbox,
            transcription: None,
        })
        .collect();
    serialize_gt(&records)
}

/// Image id for a ground-truth file name: the stem without a `gt_` prefix.
pub fn image_id_from_gt_name(file_name: &str) -> String {
    let stem = file_name.rsplit_once('.').map_or(file_name, |(s, _)| s);
    stem.strip_prefix("gt_").unwrap_or(stem).to_string()
}

fn split_fields(line: &str) -> Vec<&str> {
    line.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|f| !f.is_empty())
        .collect()
}

/// Parses a detections file into per-image sets, ordered by image id.
///
/// Fields are `image_id x1 y1 x2 y2 score [class]`, whitespace- or
/// comma-separated. Class defaults to positive text.
pub fn parse_detections(text: &str) -> Result<BTreeMap<String, DetectionSet>> {
    let mut out: BTreeMap<String, DetectionSet> = BTreeMap::new();
    for (n, line) in content_lines(text) {
        let f = split_fields(line);
        if f.len() != 6 && f.len() != 7 {
            return Err(Error::parse(
                n,
                format!("expected 6 or 7 fields, found {}", f.len()),
                line,
            ));
        }
        let c: Vec<f64> = f[1..5]
            .iter()
            .map(|v| number(v, n, line))
            .collect::<Result<_>>()?;
        let bbox = BBox::from_corners(c[0], c[1], c[2], c[3])
            .map_err(|e| Error::parse(n, e.to_string(), line))?;
        let score = number(f[5], n, line)?;
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::parse(n, "score out of range", line));
        }
        let class_id = match f.get(6) {
            None => CLASS_TEXT,
            Some(s) => match s.parse::<u8>() {
                Ok(c) if c <= CLASS_AMBIGUOUS => c,
                _ => return Err(Error::parse(n, format!("invalid class `{s}`"), line)),
            },
        };
        out.entry(f[0].to_string())
            .or_default()
            .items
            .push(ScoredBox {
                bbox,
                score,
                class_id,
            });
    }
    Ok(out)
}

/// Appends the lines of one image's detections.
pub fn write_detections(out: &mut String, image_id: &str, items: &[ScoredBox]) {
    for d in items {
        let b = &d.bbox;
        let _ = writeln!(
            out,
            "{image_id} {:.6} {:.6} {:.6} {:.6} {:.6} {}",
            b.x1, b.y1, b.x2, b.y2, d.score, d.class_id
        );
    }
}

/// Canonical detections text, image ids in map order.
pub fn serialize_detections(sets: &BTreeMap<String, DetectionSet>) -> String {
    let mut out = String::new();
    for (id, set) in sets {
        write_detections(&mut out, id, &set.items);
    }
    out
}

/// `threshold<TAB>recall` lines.
pub fn serialize_curve(curve: &RecallCurve) -> String {
    curve
        .thresholds
        .iter()
        .zip(&curve.recall)
        .map(|(t, r)| format!("{t}\t{r:.6}\n"))
        .collect()
}

/// Single summary line `P=.. R=.. F=.. TP=.. FP=.. FN=..`.
pub fn serialize_prf(prf: &Prf) -> String {
    format!("{prf}\n")
}

struct Tokens<'a> {
    iter: Box<dyn Iterator<Item = (usize, &'a str)> + 'a>,
    last_line: usize,
}

impl<'a> Tokens<'a> {
    fn new(text: &'a str) -> Self {
        let it: Box<dyn Iterator<Item = (usize, &'a str)> + 'a> = Box::new(
            content_lines(text).flat_map(|(n, l)| l.split_whitespace().map(move |t| (n, t))),
        );
        Self {
            iter: it,
            last_line: text.lines().count().max(1),
        }
    }

    fn next_num<T: std::str::FromStr>(&mut self, what: &str) -> Result<T> {
        match self.iter.next() {
            Some((n, tok)) => tok
                .parse()
                .map_err(|_| Error::parse(n, format!("invalid {what} `{tok}`"), tok)),
            None => Err(Error::parse(
                self.last_line,
                format!("unexpected end of input, expected {what}"),
                "",
            )),
        }
    }

    fn values(&mut self, count: usize) -> Result<Vec<f64>> {
        (0..count).map(|_| self.next_num::<f64>("value")).collect()
    }

    fn finish(mut self) -> Result<()> {
        match self.iter.next() {
            Some((n, tok)) => Err(Error::parse(n, "trailing data", tok)),
            None => Ok(()),
        }
    }
}

/// Parses `C height width stride` followed by `C·height·width` values.
pub fn parse_feature_grid(text: &str) -> Result<FeatureGrid> {
    let mut t = Tokens::new(text);
    let c: usize = t.next_num("channel count")?;
    let h: usize = t.next_num("height")?;
    let w: usize = t.next_num("width")?;
    let stride: f64 = t.next_num("stride")?;
    let values = t.values(c * h * w)?;
    t.finish()?;
    FeatureGrid::new(c, h, w, stride, values)
}

pub fn serialize_feature_grid(grid: &FeatureGrid) -> String {
    let mut out = format!(
        "{} {} {} {}\n",
        grid.channels(),
        grid.height(),
        grid.width(),
        grid.stride()
    );
    for row in grid.values().chunks(grid.width()) {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

/// Parses `C_out C_in has_bias`, the row-major matrix, then the bias if present.
pub fn parse_fusion_weights(text: &str) -> Result<FusionWeights> {
    let mut t = Tokens::new(text);
    let c_out: usize = t.next_num("output channel count")?;
    let c_in: usize = t.next_num("input channel count")?;
    let has_bias: u8 = t.next_num("bias flag")?;
    if has_bias > 1 {
        return Err(Error::Config(format!(
            "bias flag must be 0 or 1, got {has_bias}"
        )));
    }
    let matrix = t.values(c_out * c_in)?;
    let bias = if has_bias == 1 {
        Some(t.values(c_out)?)
    } else {
        None
    };
    t.finish()?;
    FusionWeights::new(c_out, c_in, matrix, bias)
}

pub fn serialize_fusion_weights(w: &FusionWeights) -> String {
    let mut out = format!(
        "{} {} {}\n",
        w.c_out(),
        w.c_in(),
        u8::from(w.bias().is_some())
    );
    for row in w.matrix().chunks(w.c_in()) {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    if let Some(b) = w.bias() {
        let line: Vec<String> = b.iter().map(|v| v.to_string()).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

/// The shared configuration document. Every section is optional.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub priors: PriorConfig,
    pub sampler: SamplerConfig,
    pub suppression: SuppressionConfig,
    pub mlrp: MlrpConfig,
    pub eval: EvalConfig,
    pub synth: SceneSpec,
}

impl Config {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Config = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.priors.validate()?;
        cfg.synth.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
