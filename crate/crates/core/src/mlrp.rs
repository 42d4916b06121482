//! Multi-level ROI max pooling.
//!
//! An ROI given in image pixels is max-pooled into a fixed `H x W` grid over
//! each of several feature grids (each with its own stride), the pooled
//! features are concatenated along channels, and a 1x1 linear map fuses them
//! into the output channel count.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;

pub const DEFAULT_POOL_SIZE: usize = 7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlrpConfig {
    pub pool_h: usize,
    pub pool_w: usize,
    /// Strides of the shallow and deep feature grids.
    pub strides: Vec<f64>,
}

impl Default for MlrpConfig {
    fn default() -> Self {
        Self {
            pool_h: DEFAULT_POOL_SIZE,
            pool_w: DEFAULT_POOL_SIZE,
            strides: vec![8.0, 16.0],
        }
    }
}

/// `C x height x width` values, channel-major, with pixel stride metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid {
    channels: usize,
    height: usize,
    width: usize,
    stride: f64,
    values: Vec<f64>,
}

impl FeatureGrid {
    pub fn new(
        channels: usize,
        height: usize,
        width: usize,
        stride: f64,
        values: Vec<f64>,
    ) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::invalid(format!(
                "feature grid dimensions must be >= 1, got {channels}x{height}x{width}"
            )));
        }
        if !(stride.is_finite() && stride > 0.0) {
            return Err(Error::invalid(format!("stride must be > 0, got {stride}")));
        }
        if values.len() != channels * height * width {
            return Err(Error::invalid(format!(
                "expected {} values, got {}",
                channels * height * width,
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("feature value at index {i}")));
        }
        Ok(Self {
            channels,
            height,
            width,
            stride,
            values,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn stride(&self) -> f64 {
        self.stride
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.values[(c * self.height + y) * self.width + x]
    }

    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        self.values[(c * self.height + y) * self.width + x] = v;
    }
}

/// Pooled (or fused) `C x H x W` feature, channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledFeature {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

impl PooledFeature {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            values: vec![0.0; channels * height * width],
        }
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.values[(c * self.height + y) * self.width + x]
    }

    fn at_mut(&mut self, c: usize, y: usize, x: usize) -> &mut f64 {
        &mut self.values[(c * self.height + y) * self.width + x]
    }

    /// Stacks features of equal spatial size along the channel axis.
    pub fn concat(parts: &[PooledFeature]) -> Result<PooledFeature> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("nothing to concatenate"))?;
        if parts
            .iter()
            .any(|p| p.height != first.height || p.width != first.width)
        {
            return Err(Error::invalid("pooled features differ in spatial size"));
        }
        Ok(PooledFeature {
            channels: parts.iter().map(|p| p.channels).sum(),
            height: first.height,
            width: first.width,
            values: parts
                .iter()
                .flat_map(|p| p.values.iter().copied())
                .collect(),
        })
    }
}

/// 1x1 fusion weights: `c_out x c_in` row-major matrix and optional bias.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionWeights {
    c_out: usize,
    c_in: usize,
    matrix: Vec<f64>,
    bias: Option<Vec<f64>>,
}

impl FusionWeights {
    pub fn new(
        c_out: usize,
        c_in: usize,
        matrix: Vec<f64>,
        bias: Option<Vec<f64>>,
    ) -> Result<Self> {
        if c_out == 0 || c_in == 0 {
            return Err(Error::invalid("fusion weights need c_out, c_in >= 1"));
        }
        if matrix.len() != c_out * c_in {
            return Err(Error::invalid(format!(
                "fusion matrix needs {} values, got {}",
                c_out * c_in,
                matrix.len()
            )));
        }
        if bias.as_ref().is_some_and(|b| b.len() != c_out) {
            return Err(Error::invalid(format!("fusion bias needs {c_out} values")));
        }
        if matrix
            .iter()
            .chain(bias.iter().flatten())
            .any(|v| !v.is_finite())
        {
            return Err(Error::NonFinite("fusion weights".into()));
        }
        Ok(Self {
            c_out,
            c_in,
            matrix,
            bias,
        })
    }

    pub fn c_out(&self) -> usize {
        self.c_out
    }

    pub fn c_in(&self) -> usize {
        self.c_in
    }

    pub fn matrix(&self) -> &[f64] {
        &self.matrix
    }

    pub fn bias(&self) -> Option<&[f64]> {
        self.bias.as_deref()
    }

    pub fn weight(&self, o: usize, i: usize) -> f64 {
        self.matrix[o * self.c_in + i]
    }
}

/// Half-open cell ranges `[floor(i·len/bins), ceil((i+1)·len/bins))` for
/// each of `bins` bins over a region of `len` cells. Every range is
/// non-empty when `len >= 1`.
pub fn bin_ranges(len: usize, bins: usize) -> Vec<(usize, usize)> {
    (0..bins)
        .map(|i| (i * len / bins, ((i + 1) * len).div_ceil(bins)))
        .collect()
}

/// Cell range `[start, end)` covered by the pixel interval `[lo, hi]`.
fn map_axis(lo: f64, hi: f64, stride: f64, cells: usize) -> Option<(usize, usize)> {
    let start = (lo / stride).floor();
    let end = (hi / stride).ceil();
    if end <= 0.0 || start >= cells as f64 {
        return None;
    }
    let start = start.max(0.0) as usize;
    let mut end = (end as usize).min(cells);
    if end <= start {
        end = start + 1;
    }
    Some((start, end))
}

/// Grid cell region `(row_start, row_end, col_start, col_end)` of an ROI.
pub fn roi_cells(grid: &FeatureGrid, roi: &BBox) -> Result<(usize, usize, usize, usize)> {
    if !roi.is_valid() || roi.area() <= 0.0 {
        return Err(Error::invalid(format!(
            "ROI must have positive area: {roi:?}"
        )));
    }
    let rows = map_axis(roi.y1, roi.y2, grid.stride, grid.height);
    let cols = map_axis(roi.x1, roi.x2, grid.stride, grid.width);
    match (rows, cols) {
        (Some((r0, r1)), Some((c0, c1))) => Ok((r0, r1, c0, c1)),
        _ => Err(Error::invalid(format!(
            "ROI {roi:?} lies outside the {}x{} grid",
            grid.height, grid.width
        ))),
    }
}

/// Adaptive max pooling of `roi` into `out_h x out_w` bins per channel.
pub fn roi_max_pool(
    grid: &FeatureGrid,
    roi: &BBox,
    out_h: usize,
    out_w: usize,
) -> Result<PooledFeature> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::invalid("pooled size must be at least 1x1"));
    }
    let (r0, r1, c0, c1) = roi_cells(grid, roi)?;
    let row_bins = bin_ranges(r1 - r0, out_h);
    let col_bins = bin_ranges(c1 - c0, out_w);

    let mut out = PooledFeature::zeros(grid.channels, out_h, out_w);
    for c in 0..grid.channels {
        for (i, &(ys, ye)) in row_bins.iter().enumerate() {
            for (j, &(xs, xe)) in col_bins.iter().enumerate() {
                let mut m = f64::NEG_INFINITY;
                for y in r0 + ys..r0 + ye {
                    for x in c0 + xs..c0 + xe {
                        m = m.max(grid.get(c, y, x));
                    }
                }
                *out.at_mut(c, i, j) = m;
            }
        }
    }
    Ok(out)
}

/// Applies the 1x1 linear map at every spatial cell.
pub fn fuse(concat: &PooledFeature, weights: &FusionWeights) -> Result<PooledFeature> {
    if concat.channels != weights.c_in {
        return Err(Error::invalid(format!(
            "fusion expects {} input channels, pooled features have {}",
            weights.c_in, concat.channels
        )));
    }
    let mut out = PooledFeature::zeros(weights.c_out, concat.height, concat.width);
    for o in 0..weights.c_out {
        let b = weights.bias.as_ref().map_or(0.0, |b| b[o]);
        for y in 0..concat.height {
            for x in 0..concat.width {
                let mut acc = b;
                for i in 0..weights.c_in {
                    acc += weights.weight(o, i) * concat.get(i, y, x);
                }
                *out.at_mut(o, y, x) = acc;
            }
        }
    }
    Ok(out)
}

/// Pools `roi` on every grid and concatenates along channels.
pub fn pool_multilevel(
    grids: &[FeatureGrid],
    roi: &BBox,
    out_h: usize,
    out_w: usize,
) -> Result<PooledFeature> {
    if grids.is_empty() {
        return Err(Error::invalid(
            "multi-level pooling needs at least one grid",
        ));
    }
    let pooled = grids
        .iter()
        .map(|g| roi_max_pool(g, roi, out_h, out_w))
        .collect::<Result<Vec<_>>>()?;
    PooledFeature::concat(&pooled)
}

/// Multi-level pooling followed by 1x1 fusion.
pub fn fuse_multilevel(
    grids: &[FeatureGrid],
    roi: &BBox,
    out_h: usize,
    out_w: usize,
    weights: &FusionWeights,
) -> Result<PooledFeature> {
    let in_channels: usize = grids.iter().map(|g| g.channels).sum();
    if in_channels != weights.c_in {
        return Err(Error::invalid(format!(
            "fusion expects {} input channels, grids provide {in_channels}",
            weights.c_in
        )));
    }
    fuse(&pool_multilevel(grids, roi, out_h, out_w)?, weights)
}

/// Gradient of `sum(upstream ⊙ fuse(concat, W))` with respect to the matrix
/// (row-major, `c_out x c_in`) and the bias.
pub fn fuse_weight_gradient(
    concat: &PooledFeature,
    upstream: &PooledFeature,
) -> (Vec<f64>, Vec<f64>) {
    let (c_out, c_in) = (upstream.channels, concat.channels);
    let mut grad_m = vec![0.0; c_out * c_in];
    let mut grad_b = vec![0.0; c_out];
    for o in 0..c_out {
        for y in 0..upstream.height {
            for x in 0..upstream.width {
                let u = upstream.get(o, y, x);
                grad_b[o] += u;
                for i in 0..c_in {
                    grad_m[o * c_in + i] += u * concat.get(i, y, x);
                }
            }
        }
    }
    (grad_m, grad_b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid(
        c: usize,
        h: usize,
        w: usize,
        stride: f64,
        f: impl Fn(usize, usize, usize) -> f64,
    ) -> FeatureGrid {
        let mut v = Vec::with_capacity(c * h * w);
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    v.push(f(ch, y, x));
                }
            }
        }
        FeatureGrid::new(c, h, w, stride, v).unwrap()
    }

    fn b(x1: f64, y1: f64, x2: f64, y2: f64) -> BBox {
        BBox::new(x1, y1, x2, y2).unwrap()
    }

    #[test]
    fn four_by_four_into_two_by_two() {
        let g = grid(1, 4, 4, 1.0, |_, y, x| (y * 4 + x + 1) as f64);
        let p = roi_max_pool(&g, &b(0., 0., 4., 4.), 2, 2).unwrap();
        assert_eq!(p.values, vec![6., 8., 14., 16.]);
    }

    #[test]
    fn one_cell_per_bin_copies_subgrid() {
        let g = grid(2, 10, 12, 16.0, |c, y, x| (c * 1000 + y * 12 + x) as f64);
        let p = roi_max_pool(&g, &b(32., 16., 144., 128.), 7, 7).unwrap();
        for c in 0..2 {
            for i in 0..7 {
                for j in 0..7 {
                    assert_eq!(p.get(c, i, j), g.get(c, 1 + i, 2 + j));
                }
            }
        }
    }

    #[test]
    fn constant_grid_pools_to_constant() {
        let g = grid(3, 5, 5, 8.0, |_, _, _| 2.5);
        let p = roi_max_pool(&g, &b(3., 3., 17., 30.), 7, 7).unwrap();
        assert!(p.values.iter().all(|&v| v == 2.5));
    }

    #[test]
    fn roi_is_clamped_and_forced_non_empty() {
        let g = grid(1, 4, 4, 10.0, |_, y, x| (y * 4 + x) as f64);
        let (r0, r1, c0, c1) = roi_cells(&g, &b(-50., 35., 5., 100.)).unwrap();
        assert_eq!((r0, r1, c0, c1), (3, 4, 0, 1));
        let p = roi_max_pool(&g, &b(-50., 35., 5., 100.), 3, 3).unwrap();
        assert!(p.values.iter().all(|&v| v == 12.0));
    }

    #[test]
    fn rejects_outside_and_degenerate() {
        let g = grid(1, 4, 4, 10.0, |_, _, _| 0.0);
        assert!(roi_max_pool(&g, &b(40., 0., 60., 10.), 2, 2).is_err());
        assert!(roi_max_pool(&g, &b(-20., 0., 0., 10.), 2, 2).is_err());
        assert!(roi_max_pool(&g, &b(5., 5., 5., 9.), 2, 2).is_err());
        assert!(roi_max_pool(&g, &b(0., 0., 10., 10.), 0, 2).is_err());
    }

    #[test]
    fn bins_are_non_empty_and_cover() {
        for len in 1..20 {
            for bins in 1..10 {
                let r = bin_ranges(len, bins);
                assert_eq!(r[0].0, 0);
                assert_eq!(r.last().unwrap().1, len);
                for w in r.windows(2) {
                    assert!(w[0].0 <= w[1].0);
                    assert!(w[1].0 <= w[0].1, "gap between bins");
                }
                assert!(r.iter().all(|&(s, e)| e > s));
            }
        }
    }

    #[test]
    fn fusion_special_cases() {
        let g0 = grid(2, 6, 6, 8.0, |c, y, x| (c + y * x) as f64);
        let g1 = grid(3, 3, 3, 16.0, |c, y, x| (c * 7 + y + x) as f64 * 0.5);
        let roi = b(4., 4., 40., 44.);
        let mut m = vec![0.0; 2 * 5];
        m[0] = 1.0;
        m[5 + 1] = 1.0;
        let proj = FusionWeights::new(2, 5, m, None).unwrap();
        let out = fuse_multilevel(&[g0.clone(), g1.clone()], &roi, 2, 2, &proj).unwrap();
        assert_eq!(out, roi_max_pool(&g0, &roi, 2, 2).unwrap());

        let zero = FusionWeights::new(4, 5, vec![0.0; 20], None).unwrap();
        let out = fuse_multilevel(&[g0.clone(), g1.clone()], &roi, 2, 2, &zero).unwrap();
        assert!(out.values.iter().all(|&v| v == 0.0));

        let bad = FusionWeights::new(4, 4, vec![0.0; 16], None).unwrap();
        assert!(fuse_multilevel(&[g0, g1], &roi, 2, 2, &bad).is_err());
    }

    #[test]
    fn bias_is_added_per_output_channel() {
        let g = grid(1, 2, 2, 1.0, |_, y, x| (y * 2 + x) as f64);
        let w = FusionWeights::new(2, 1, vec![1.0, -1.0], Some(vec![10.0, 20.0])).unwrap();
        let out = fuse_multilevel(&[g], &b(0., 0., 2., 2.), 1, 1, &w).unwrap();
        assert_eq!(out.values, vec![13.0, 17.0]);
    }

    #[test]
    fn weight_validation() {
        assert!(FusionWeights::new(2, 2, vec![0.0; 3], None).is_err());
        assert!(FusionWeights::new(2, 2, vec![0.0; 4], Some(vec![0.0])).is_err());
        assert!(FusionWeights::new(1, 1, vec![f64::NAN], None).is_err());
        assert!(FeatureGrid::new(1, 1, 1, 0.0, vec![0.0]).is_err());
        assert!(FeatureGrid::new(1, 2, 1, 1.0, vec![0.0]).is_err());
    }

    proptest! {
        #[test]
        fn pooled_values_are_attained_and_monotone(
            vals in prop::collection::vec(-10.0..10.0f64, 36),
            (x1, y1, w, h) in (0.0..40.0f64, 0.0..40.0f64, 1.0..40.0f64, 1.0..40.0f64),
            bins in 1usize..5,
            poke in 0usize..36,
            bump in 0.0..5.0f64,
        ) {
            let g = FeatureGrid::new(1, 6, 6, 8.0, vals.clone()).unwrap();
            let roi = b(x1, y1, x1 + w, y1 + h);
            let (r0, r1, c0, c1) = roi_cells(&g, &roi).unwrap();
            let p = roi_max_pool(&g, &roi, bins, bins).unwrap();
            let rows = bin_ranges(r1 - r0, bins);
            let cols = bin_ranges(c1 - c0, bins);
            for (i, &(ys, ye)) in rows.iter().enumerate() {
                for (j, &(xs, xe)) in cols.iter().enumerate() {
                    let v = p.get(0, i, j);
                    let members: Vec<f64> = (r0 + ys..r0 + ye)
                        .flat_map(|y| (c0 + xs..c0 + xe).map(move |x| (y, x)))
                        .map(|(y, x)| g.get(0, y, x))
                        .collect();
                    prop_assert!(members.contains(&v));
                    prop_assert!(members.iter().all(|&m| m <= v));
                }
            }
            let mut bumped = vals;
            bumped[poke] += bump;
            let q = roi_max_pool(&FeatureGrid::new(1, 6, 6, 8.0, bumped).unwrap(), &roi, bins, bins).unwrap();
            for (a, c) in p.values.iter().zip(&q.values) {
                prop_assert!(c >= a);
            }
        }
    }
}
