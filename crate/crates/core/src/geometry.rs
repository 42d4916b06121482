//! Axis-aligned boxes and the overlap predicates used by every stage.
//!
//! Coordinates are continuous image pixels. Boxes are closed rectangles and
//! area is `(x2 - x1) * (y2 - y1)`, without the `+1` pixel correction some
//! detectors apply.

use crate::error::{Error, Result};

/// Class id of background detections.
pub const CLASS_BACKGROUND: u8 = 0;
/// Class id of positive text detections.
pub const CLASS_TEXT: u8 = 1;
/// Class id of ambiguous text detections.
pub const CLASS_AMBIGUOUS: u8 = 2;

/// Corner-form rectangle `(x1, y1)`-`(x2, y2)`.
///
/// Zero-area boxes are legal. They have IoU 0 against everything and cannot
/// be converted to a [`CenterBox`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox {
    /// Builds a box, rejecting non-finite coordinates and inverted corners.
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        if ![x1, y1, x2, y2].iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "box coordinates ({x1}, {y1}, {x2}, {y2})"
            )));
        }
        if x1 > x2 || y1 > y2 {
            return Err(Error::invalid(format!(
                "inverted box ({x1}, {y1}, {x2}, {y2})"
            )));
        }
        Ok(Self { x1, y1, x2, y2 })
    }

    /// Builds a box from two arbitrary corners, swapping coordinates as needed.
    pub fn from_corners(xa: f64, ya: f64, xb: f64, yb: f64) -> Result<Self> {
        Self::new(xa.min(xb), ya.min(yb), xa.max(xb), ya.max(yb))
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn is_valid(&self) -> bool {
        [self.x1, self.y1, self.x2, self.y2]
            .iter()
            .all(|v| v.is_finite())
            && self.x1 <= self.x2
            && self.y1 <= self.y2
    }

    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let w = self.x2.min(other.x2) - self.x1.max(other.x1);
        let h = self.y2.min(other.y2) - self.y1.max(other.y1);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }

    pub fn translate(&self, dx: f64, dy: f64) -> BBox {
        BBox {
            x1: self.x1 + dx,
            y1: self.y1 + dy,
            x2: self.x2 + dx,
            y2: self.y2 + dy,
        }
    }

    /// Scales all coordinates about the origin.
    pub fn scale(&self, factor: f64) -> BBox {
        BBox {
            x1: self.x1 * factor,
            y1: self.y1 * factor,
            x2: self.x2 * factor,
            y2: self.y2 * factor,
        }
    }

    /// Clips the box to `[0, width] x [0, height]`.
    pub fn clip(&self, width: f64, height: f64) -> BBox {
        let cx = |v: f64| v.clamp(0.0, width);
        let cy = |v: f64| v.clamp(0.0, height);
        BBox {
            x1: cx(self.x1),
            y1: cy(self.y1),
            x2: cx(self.x2),
            y2: cy(self.y2),
        }
    }

    /// True if the box lies entirely inside `[0, width] x [0, height]`.
    pub fn inside(&self, width: f64, height: f64) -> bool {
        self.x1 >= 0.0 && self.y1 >= 0.0 && self.x2 <= width && self.y2 <= height
    }

    /// Center form of the box. Fails on zero width or height.
    pub fn to_center(&self) -> Result<CenterBox> {
        CenterBox::new(
            (self.x1 + self.x2) / 2.0,
            (self.y1 + self.y2) / 2.0,
            self.width(),
            self.height(),
        )
    }
}

/// Intersection over union of two boxes; 0 when the union is empty.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).min(1.0)
    }
}

/// True if `outer` contains `inner`, allowing `eps` pixels of slack per side.
pub fn contains(outer: &BBox, inner: &BBox, eps: f64) -> bool {
    outer.x1 <= inner.x1 + eps
        && outer.y1 <= inner.y1 + eps
        && outer.x2 >= inner.x2 - eps
        && outer.y2 >= inner.y2 - eps
}

/// Largest IoU of `b` against `gts`, with the index of the first maximiser.
pub fn max_iou(b: &BBox, gts: &[BBox]) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, g) in gts.iter().enumerate() {
        let v = iou(b, g);
        match best {
            Some((_, m)) if v <= m => {}
            _ => best = Some((i, v)),
        }
    }
    best
}

/// Center-form rectangle with strictly positive extents.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CenterBox {
    cx: f64,
    cy: f64,
    w: f64,
    h: f64,
}

impl CenterBox {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        if ![cx, cy, w, h].iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "center box ({cx}, {cy}, {w}, {h})"
            )));
        }
        if w <= 0.0 || h <= 0.0 {
            return Err(Error::invalid(format!(
                "center box extents must be positive, got w={w} h={h}"
            )));
        }
        Ok(Self { cx, cy, w, h })
    }

    pub fn cx(&self) -> f64 {
        self.cx
    }

    pub fn cy(&self) -> f64 {
        self.cy
    }

    pub fn w(&self) -> f64 {
        self.w
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn to_bbox(&self) -> BBox {
        BBox {
            x1: self.cx - self.w / 2.0,
            y1: self.cy - self.h / 2.0,
            x2: self.cx + self.w / 2.0,
            y2: self.cy + self.h / 2.0,
        }
    }
}

impl TryFrom<BBox> for CenterBox {
    type Error = Error;

    fn try_from(b: BBox) -> Result<Self> {
        b.to_center()
    }
}

impl From<CenterBox> for BBox {
    fn from(c: CenterBox) -> Self {
        c.to_bbox()
    }
}

/// A box with a textness score and a class id.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredBox {
    pub bbox: BBox,
    pub score: f64,
    pub class_id: u8,
}

impl ScoredBox {
    /// Builds a scored box, rejecting scores outside `[0, 1]`.
    pub fn new(bbox: BBox, score: f64, class_id: u8) -> Result<Self> {
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::invalid(format!("score {score} outside [0, 1]")));
        }
        Ok(Self {
            bbox,
            score,
            class_id,
        })
    }

    /// Positive-text detection.
    pub fn text(bbox: BBox, score: f64) -> Result<Self> {
        Self::new(bbox, score, CLASS_TEXT)
    }
}
