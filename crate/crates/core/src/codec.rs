//! Box regression offsets relative to a reference (prior or proposal) box.
//!
//! Centers are offset in units of the reference extent, extents as natural
//! log ratios. Decoded boxes are never clipped here.

use crate::error::{Error, Result};
use crate::geometry::{BBox, CenterBox};

/// Largest `|tw|` / `|th|` accepted by [`decode`].
pub const MAX_LOG_SCALE: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RegressionOffsets {
    pub tx: f64,
    pub ty: f64,
    pub tw: f64,
    pub th: f64,
}

impl RegressionOffsets {
    pub fn new(tx: f64, ty: f64, tw: f64, th: f64) -> Result<Self> {
        let t = Self { tx, ty, tw, th };
        if !t.is_finite() {
            return Err(Error::NonFinite(format!("offsets {:?}", t.to_array())));
        }
        Ok(t)
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.tx, self.ty, self.tw, self.th]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self {
            tx: a[0],
            ty: a[1],
            tw: a[2],
            th: a[3],
        }
    }
}

/// Offsets that move `reference` onto `target`.
pub fn encode(reference: &CenterBox, target: &CenterBox) -> RegressionOffsets {
    RegressionOffsets {
        tx: (target.cx() - reference.cx()) / reference.w(),
        ty: (target.cy() - reference.cy()) / reference.h(),
        tw: (target.w() / reference.w()).ln(),
        th: (target.h() / reference.h()).ln(),
    }
}

/// Applies `offsets` to `reference`.
pub fn decode(offsets: &RegressionOffsets, reference: &CenterBox) -> Result<CenterBox> {
    if !offsets.is_finite() {
        return Err(Error::NonFinite(format!(
            "offsets {:?}",
            offsets.to_array()
        )));
    }
    if offsets.tw.abs() > MAX_LOG_SCALE || offsets.th.abs() > MAX_LOG_SCALE {
        return Err(Error::invalid(format!(
            "log-scale offsets ({}, {}) exceed {MAX_LOG_SCALE}",
            offsets.tw, offsets.th
        )));
    }
    CenterBox::new(
        offsets.tx * reference.w() + reference.cx(),
        offsets.ty * reference.h() + reference.cy(),
        reference.w() * offsets.tw.exp(),
        reference.h() * offsets.th.exp(),
    )
}

/// Corner-form convenience over [`encode`]; fails on zero-area boxes.
pub fn encode_boxes(reference: &BBox, target: &BBox) -> Result<RegressionOffsets> {
    Ok(encode(&reference.to_center()?, &target.to_center()?))
}

/// Corner-form convenience over [`decode`].
pub fn decode_box(offsets: &RegressionOffsets, reference: &BBox) -> Result<BBox> {
    Ok(decode(offsets, &reference.to_center()?)?.to_bbox())
}
