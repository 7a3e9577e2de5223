//! Spatial pyramid pooling over feature-map regions. Each proposal is mapped
//! onto the final conv feature map, partitioned into g x g sub-windows for
//! every pyramid level, and each sub-window is pooled per channel (l2 norm by
//! default, max as the ablation variant), yielding a fixed-length vector
//! regardless of region size.

use crate::error::{Error, Result};
use crate::l2pool::DEFAULT_EPSILON;
use crate::tape::GradTape;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PyramidPoolMode {
    L2,
    Max,
}

#[derive(Debug, Clone)]
pub struct PyramidSpec {
    /// Grid sizes, pooled and concatenated in this order.
    pub levels: Vec<usize>,
    pub pool: PyramidPoolMode,
}

impl Default for PyramidSpec {
    fn default() -> Self {
        Self { levels: vec![4, 2, 1], pool: PyramidPoolMode::L2 }
    }
}

impl PyramidSpec {
    pub fn validate(&self) -> Result<()> {
        if self.levels.is_empty() || self.levels.iter().any(|&g| g == 0) {
            return Err(Error::BadConfig("pyramid levels must all be >= 1".into()));
        }
        Ok(())
    }

    /// Cells per channel: sum of level squares (21 for [4,2,1]).
    pub fn cells(&self) -> usize {
        self.levels.iter().map(|g| g * g).sum()
    }

    pub fn output_len(&self, channels: usize) -> usize {
        channels * self.cells()
    }
}

/// A proposal expressed in feature-map cells, half-open on both axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureRegion {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl FeatureRegion {
    pub fn width(&self) -> usize {
        self.x1 - self.x0
    }

    pub fn height(&self) -> usize {
        self.y1 - self.y0
    }
}

fn map_axis(start: u32, end: u32, image: usize, feature: usize) -> (usize, usize) {
    let scale = feature as f64 / image as f64;
    // Start rounds half down, end rounds half up, so a box spanning exactly
    // half a cell on either side still claims it.
    let s = (start as f64 * scale - 0.5).ceil().max(0.0) as usize;
    let e = (end as f64 * scale + 0.5).floor().max(0.0) as usize;
    let s = s.min(feature - 1);
    let e = e.clamp(s + 1, feature);
    (s, e)
}

/// Projects an image-space box onto a feature map of the given size. The
/// result is clipped into bounds and never degenerate: width and height are
/// at least one cell.
pub fn map_proposal_to_feature(
    b: &crate::boxes::RegionProposal,
    image_hw: (usize, usize),
    feature_hw: (usize, usize),
) -> Result<FeatureRegion> {
    if b.x1 <= b.x0 || b.y1 <= b.y0 {
        return Err(Error::EmptyBox);
    }
    if image_hw.0 == 0 || image_hw.1 == 0 || feature_hw.0 == 0 || feature_hw.1 == 0 {
        return Err(Error::BadConfig("image and feature sizes must be positive".into()));
    }
    let (y0, y1) = map_axis(b.y0, b.y1, image_hw.0, feature_hw.0);
    let (x0, x1) = map_axis(b.x0, b.x1, image_hw.1, feature_hw.1);
    Ok(FeatureRegion { x0, y0, x1, y1 })
}

/// Half-open (start, end) cell ranges partitioning `extent` into `g` bins
/// with edges floor(i * extent / g). For extents smaller than the grid the
/// edges are clamped so every bin keeps width >= 1, sharing cells.
pub(crate) fn bins(extent: usize, g: usize) -> Vec<(usize, usize)> {
    (0..g)
        .map(|i| {
            let s = (i * extent / g).min(extent - 1);
            let e = (((i + 1) * extent) / g).clamp(s + 1, extent);
            (s, e)
        })
        .collect()
}

fn check_region(feature: &Tensor, region: &FeatureRegion) -> Result<(usize, usize, usize)> {
    let (c, h, w) = match feature.shape() {
        [c, h, w] => (*c, *h, *w),
        other => {
            return Err(Error::ShapeMismatch(format!(
                "pyramid_pool expects a [C,H,W] feature map, got {other:?}"
            )))
        }
    };
    if region.x1 <= region.x0 || region.y1 <= region.y0 {
        return Err(Error::EmptyBox);
    }
    if region.x1 > w || region.y1 > h {
        return Err(Error::ShapeMismatch(format!(
            "region {region:?} exceeds feature map {h}x{w}"
        )));
    }
    Ok((c, h, w))
}

/// Non-recorded pyramid pooling; see [`GradTape::pyramid_pool`] for the
/// version used in training.
pub fn pyramid_pool_forward(
    feature: &Tensor,
    region: &FeatureRegion,
    spec: &PyramidSpec,
) -> Result<Tensor> {
    spec.validate()?;
    let (c, _, w) = check_region(feature, region)?;
    let data = feature.data();
    let plane = feature.shape()[1] * w;
    let mut out = Vec::with_capacity(spec.output_len(c));
    for &g in &spec.levels {
        let ybins = bins(region.height(), g);
        let xbins = bins(region.width(), g);
        for ch in 0..c {
            for &(ys, ye) in &ybins {
                for &(xs, xe) in &xbins {
                    let mut acc = match spec.pool {
                        PyramidPoolMode::L2 => 0.0,
                        PyramidPoolMode::Max => f64::NEG_INFINITY,
                    };
                    for y in region.y0 + ys..region.y0 + ye {
                        for x in region.x0 + xs..region.x0 + xe {
                            let v = data[ch * plane + y * w + x];
                            match spec.pool {
                                PyramidPoolMode::L2 => acc += v * v,
                                PyramidPoolMode::Max => acc = acc.max(v),
                            }
                        }
                    }
                    out.push(match spec.pool {
                        PyramidPoolMode::L2 => acc.sqrt(),
                        PyramidPoolMode::Max => acc,
                    });
                }
            }
        }
    }
    Ok(Tensor::from_parts(vec![out.len()], out, false))
}

impl GradTape {
    /// Pools a feature-map region into the pyramid vector
    /// [C * sum(level^2)], levels concatenated in spec order and
    /// channel-major within each level.
    pub fn pyramid_pool(
        &mut self,
        feature: &Tensor,
        region: &FeatureRegion,
        spec: &PyramidSpec,
    ) -> Result<Tensor> {
        spec.validate()?;
        let (c, h, w) = check_region(feature, region)?;
        let out = pyramid_pool_forward(feature, region, spec)?;
        let featurec = feature.clone();
        let regionc = *region;
        let specc = spec.clone();
        let values = out.data().to_vec();
        self.emit(
            out.shape().to_vec(),
            values.clone(),
            feature.requires_grad(),
            move || {
                Box::new(move |g, store| {
                    if let Some(slot) = store.slot(&featurec) {
                        let data = featurec.data();
                        let plane = h * w;
                        let mut i = 0usize;
                        for &lvl in &specc.levels {
                            let ybins = bins(regionc.height(), lvl);
                            let xbins = bins(regionc.width(), lvl);
                            for ch in 0..c {
                                for &(ys, ye) in &ybins {
                                    for &(xs, xe) in &xbins {
                                        let upstream = g[i];
                                        match specc.pool {
                                            PyramidPoolMode::L2 => {
                                                let norm = values[i];
                                                let f = upstream / norm.max(DEFAULT_EPSILON);
                                                for y in regionc.y0 + ys..regionc.y0 + ye {
                                                    for x in regionc.x0 + xs..regionc.x0 + xe
                                                    {
                                                        let at = ch * plane + y * w + x;
                                                        slot[at] += f * data[at];
                                                    }
                                                }
                                            }
                                            PyramidPoolMode::Max => {
                                                let mut best_at = None;
                                                let mut best = f64::NEG_INFINITY;
                                                for y in regionc.y0 + ys..regionc.y0 + ye {
                                                    for x in regionc.x0 + xs..regionc.x0 + xe
                                                    {
                                                        let at = ch * plane + y * w + x;
                                                        if data[at] > best {
                                                            best = data[at];
                                                            best_at = Some(at);
                                                        }
                                                    }
                                                }
                                                if let Some(at) = best_at {
                                                    slot[at] += upstream;
                                                }
                                            }
                                        }
                                        i += 1;
                                    }
                                }
                            }
                        }
                    }
                })
            },
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boxes::RegionProposal;

    #[test]
    fn default_spec_has_21_cells() {
        let spec = PyramidSpec::default();
        assert_eq!(spec.cells(), 21);
        assert_eq!(spec.output_len(512), 10752);
    }

    #[test]
    fn full_image_box_maps_to_full_feature_map() {
        let b = RegionProposal::new(0, 0, 224, 224).unwrap();
        let r = map_proposal_to_feature(&b, (224, 224), (14, 14)).unwrap();
        assert_eq!(r, FeatureRegion { x0: 0, y0: 0, x1: 14, y1: 14 });
    }

    #[test]
    fn exact_division_box_maps_exactly() {
        let b = RegionProposal::new(32, 32, 96, 96).unwrap();
        let r = map_proposal_to_feature(&b, (224, 224), (14, 14)).unwrap();
        assert_eq!(r, FeatureRegion { x0: 2, y0: 2, x1: 6, y1: 6 });
    }

    #[test]
    fn tiny_box_still_claims_one_cell() {
        let b = RegionProposal::new(100, 100, 101, 101).unwrap();
        let r = map_proposal_to_feature(&b, (224, 224), (14, 14)).unwrap();
        assert_eq!(r.width(), 1);
        assert_eq!(r.height(), 1);
        assert!(r.x1 <= 14 && r.y1 <= 14);
    }

    #[test]
    fn bins_partition_when_extent_fits() {
        for extent in 4..30 {
            let b = bins(extent, 4);
            assert_eq!(b[0].0, 0);
            assert_eq!(b[3].1, extent);
            for w in b.windows(2) {
                assert_eq!(w[0].1, w[1].0, "bins must tile {extent}");
            }
        }
    }

    #[test]
    fn bins_clamp_small_extents_to_unit_width() {
        let b = bins(2, 4);
        assert!(b.iter().all(|&(s, e)| e - s >= 1 && e <= 2 && s < 2));
    }

    #[test]
    fn single_level_pool_equals_global_norm() {
        let vals: Vec<f64> = (0..16).map(|v| (v as f64 - 7.5) / 4.0).collect();
        let feature = Tensor::new(vec![1, 4, 4], vals.clone(), false).unwrap();
        let region = FeatureRegion { x0: 0, y0: 0, x1: 4, y1: 4 };
        let spec = PyramidSpec { levels: vec![1], pool: PyramidPoolMode::L2 };
        let out = pyramid_pool_forward(&feature, &region, &spec).unwrap();
        let want: f64 = vals.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert_eq!(out.data()[0].to_bits(), want.to_bits());
    }

    #[test]
    fn zero_region_pools_to_zero_vector() {
        let feature = Tensor::zeros(vec![3, 8, 8], false);
        let region = FeatureRegion { x0: 1, y0: 2, x1: 7, y1: 8 };
        let out = pyramid_pool_forward(&feature, &region, &PyramidSpec::default()).unwrap();
        assert_eq!(out.shape(), &[63]);
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn output_length_ignores_region_size() {
        let feature = Tensor::new(
            vec![2, 9, 9],
            (0..162).map(|v| (v % 13) as f64 / 7.0).collect(),
            false,
        )
        .unwrap();
        let spec = PyramidSpec::default();
        for (x1, y1) in [(1, 1), (3, 2), (9, 9), (5, 9)] {
            let region = FeatureRegion { x0: 0, y0: 0, x1, y1 };
            let out = pyramid_pool_forward(&feature, &region, &spec).unwrap();
            assert_eq!(out.shape(), &[42]);
        }
    }

    #[test]
    fn max_mode_takes_subwindow_maxima() {
        let feature = Tensor::new(
            vec![1, 2, 2],
            vec![1.0, -2.0, 3.0, 0.5],
            false,
        )
        .unwrap();
        let region = FeatureRegion { x0: 0, y0: 0, x1: 2, y1: 2 };
        let spec = PyramidSpec { levels: vec![2, 1], pool: PyramidPoolMode::Max };
        let out = pyramid_pool_forward(&feature, &region, &spec).unwrap();
        assert_eq!(out.data(), &[1.0, -2.0, 3.0, 0.5, 3.0]);
    }

    #[test]
    fn recorded_pool_routes_gradient_into_region() {
        let mut tape = GradTape::new();
        let feature = Tensor::new(
            vec![1, 4, 4],
            (0..16).map(|v| v as f64 / 5.0 + 0.1).collect(),
            true,
        )
        .unwrap();
        let region = FeatureRegion { x0: 1, y0: 1, x1: 3, y1: 3 };
        let spec = PyramidSpec { levels: vec![1], pool: PyramidPoolMode::L2 };
        let out = tape.pyramid_pool(&feature, &region, &spec).unwrap();
        let loss = tape.sum(&out).unwrap();
        let grads = tape.backward(&loss).unwrap();
        let g = grads.wrt(&feature);
        // Cells outside the region stay untouched.
        assert_eq!(g.data()[0], 0.0);
        assert_eq!(g.data()[3], 0.0);
        assert!(g.data()[5] > 0.0);
    }
}
