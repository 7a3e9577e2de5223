//! 2-d slice extraction from volumes: three anatomical views, modality-to-
//! channel fusion (with a configurable fallback when a modality is missing),
//! lesion-aware filtering, and label/box-preserving augmentation.

use std::str::FromStr;

use crate::boxes::{LabeledBox, RegionProposal};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::volume::{Modality, MultiModalVolume};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum View {
    Axial,
    Coronal,
    Sagittal,
}

impl View {
    pub const ALL: [View; 3] = [View::Axial, View::Coronal, View::Sagittal];

    pub fn as_str(&self) -> &'static str {
        match self {
            View::Axial => "axial",
            View::Coronal => "coronal",
            View::Sagittal => "sagittal",
        }
    }

    /// Number of slices this view yields from a (D,H,W) volume.
    pub fn extent(&self, dims: (usize, usize, usize)) -> usize {
        match self {
            View::Axial => dims.0,
            View::Coronal => dims.1,
            View::Sagittal => dims.2,
        }
    }

    /// (rows, cols) of one slice plane.
    pub fn plane(&self, dims: (usize, usize, usize)) -> (usize, usize) {
        match self {
            View::Axial => (dims.1, dims.2),
            View::Coronal => (dims.0, dims.2),
            View::Sagittal => (dims.0, dims.1),
        }
    }
}

impl FromStr for View {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        View::ALL
            .iter()
            .find(|v| v.as_str().eq_ignore_ascii_case(s))
            .copied()
            .ok_or_else(|| Error::Parse(format!("unknown view {s:?}")))
    }
}

/// A multi-channel 2-d sample cut from a volume. Classification uses the
/// three-modality fusion ([3,H,W]); detection stacks take whatever channel
/// count the modality list dictates. Boxes are present only on axial slices
/// of lesion volumes.
#[derive(Debug, Clone)]
pub struct FusedSlice {
    pub image: Tensor,
    pub view: View,
    pub label: u32,
    /// (volume id, slice index along the view axis)
    pub source: (String, usize),
    pub boxes: Vec<LabeledBox>,
}

/// Which modalities land in which channel, and what substitutes for a
/// missing one (e.g. DWI standing in for FLAIR).
#[derive(Debug, Clone)]
pub struct FusionSpec {
    pub triple: [Modality; 3],
    pub fallback: Vec<(Modality, Modality)>,
}

impl Default for FusionSpec {
    fn default() -> Self {
        Self {
            triple: [Modality::T1, Modality::T1c, Modality::Flair],
            fallback: vec![(Modality::Flair, Modality::Dwi)],
        }
    }
}

impl FusionSpec {
    /// The volume's tensor for `m`, or its configured substitute.
    pub fn resolve<'v>(&self, vol: &'v MultiModalVolume, m: Modality) -> Result<&'v Tensor> {
        if let Ok(t) = vol.modality(m) {
            return Ok(t);
        }
        for &(missing, substitute) in &self.fallback {
            if missing == m {
                if let Ok(t) = vol.modality(substitute) {
                    return Ok(t);
                }
            }
        }
        Err(Error::MissingModality(format!(
            "volume lacks {m} and no configured fallback is present"
        )))
    }
}

/// Copies one slice plane out of a [D,H,W] tensor.
fn plane_of(t: &Tensor, view: View, index: usize) -> Result<Vec<f64>> {
    let (d, h, w) = match t.shape() {
        [d, h, w] => (*d, *h, *w),
        other => {
            return Err(Error::ShapeMismatch(format!(
                "volume tensor must be [D,H,W], got {other:?}"
            )))
        }
    };
    if index >= view.extent((d, h, w)) {
        return Err(Error::ShapeMismatch(format!(
            "slice {index} out of range for {} view",
            view.as_str()
        )));
    }
    let data = t.data();
    let out = match view {
        View::Axial => data[index * h * w..(index + 1) * h * w].to_vec(),
        View::Coronal => {
            let mut out = Vec::with_capacity(d * w);
            for dd in 0..d {
                let row = dd * h * w + index * w;
                out.extend_from_slice(&data[row..row + w]);
            }
            out
        }
        View::Sagittal => {
            let mut out = Vec::with_capacity(d * h);
            for dd in 0..d {
                for y in 0..h {
                    out.push(data[dd * h * w + y * w + index]);
                }
            }
            out
        }
    };
    Ok(out)
}

/// Stacks the given modalities' planes into a [C,rows,cols] tensor, honoring
/// the fusion fallback for missing modalities.
pub fn stack_modalities(
    vol: &MultiModalVolume,
    modalities: &[Modality],
    spec: &FusionSpec,
    view: View,
    index: usize,
) -> Result<Tensor> {
    if modalities.is_empty() {
        return Err(Error::BadSubset);
    }
    let (rows, cols) = view.plane(vol.dims());
    let mut data = Vec::with_capacity(modalities.len() * rows * cols);
    for &m in modalities {
        let t = spec.resolve(vol, m)?;
        data.extend(plane_of(t, view, index)?);
    }
    Tensor::new(vec![modalities.len(), rows, cols], data, false)
}

/// Ground-truth boxes lying on one axial slice.
pub fn axial_boxes(vol: &MultiModalVolume, index: usize) -> Vec<LabeledBox> {
    vol.lesion_boxes
        .iter()
        .filter(|b| b.slice as usize == index)
        .filter_map(|b| {
            Some(LabeledBox {
                region: RegionProposal::new(b.x0, b.y0, b.x1, b.y1).ok()?,
                class: b.cls as usize,
            })
        })
        .collect()
}

/// Fuses the spec's modality triple at one slice position into a 3-channel
/// sample.
pub fn fuse_modalities(
    vol: &MultiModalVolume,
    vol_id: &str,
    spec: &FusionSpec,
    view: View,
    index: usize,
) -> Result<FusedSlice> {
    let image = stack_modalities(vol, &spec.triple, spec, view, index)?;
    let boxes = if view == View::Axial { axial_boxes(vol, index) } else { Vec::new() };
    Ok(FusedSlice {
        image,
        view,
        label: vol.label,
        source: (vol_id.to_string(), index),
        boxes,
    })
}

/// True when slice `index` of `view` intersects any lesion box. Boxes are
/// anchored to axial slices, so the other views test their row/column spans.
fn slice_touches_lesion(vol: &MultiModalVolume, view: View, index: usize) -> bool {
    vol.lesion_boxes.iter().any(|b| match view {
        View::Axial => b.slice as usize == index,
        View::Coronal => (b.y0 as usize) <= index && index < b.y1 as usize,
        View::Sagittal => (b.x0 as usize) <= index && index < b.x1 as usize,
    })
}

/// One fused slice per index along the view axis. With `lesion_only`, only
/// slices intersecting a lesion box are kept — except on volumes without any
/// boxes (healthy or atrophy-only classes), where the filter is vacuous and
/// every slice passes.
pub fn extract_slices(
    vol: &MultiModalVolume,
    vol_id: &str,
    spec: &FusionSpec,
    view: View,
    lesion_only: bool,
) -> Result<Vec<FusedSlice>> {
    let n = view.extent(vol.dims());
    let mut out = Vec::new();
    for i in 0..n {
        if lesion_only && !vol.lesion_boxes.is_empty() && !slice_touches_lesion(vol, view, i) {
            continue;
        }
        out.push(fuse_modalities(vol, vol_id, spec, view, i)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AugmentOp {
    HFlip,
    VFlip,
    Scale(f64),
}

impl FromStr for AugmentOp {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hflip" => Ok(AugmentOp::HFlip),
            "vflip" => Ok(AugmentOp::VFlip),
            other => {
                if let Some(num) = other.strip_prefix("scale(").and_then(|r| r.strip_suffix(')'))
                {
                    let s: f64 = num
                        .parse()
                        .map_err(|_| Error::Parse(format!("bad scale factor {num:?}")))?;
                    if !(s > 0.0) {
                        return Err(Error::Parse(format!("scale factor must be > 0, got {s}")));
                    }
                    return Ok(AugmentOp::Scale(s));
                }
                Err(Error::Parse(format!("unknown augmentation {other:?}")))
            }
        }
    }
}

fn flip_image(image: &Tensor, horizontal: bool) -> Tensor {
    let (c, h, w) = match image.shape() {
        [c, h, w] => (*c, *h, *w),
        _ => unreachable!("fused slices are rank 3"),
    };
    let src = image.data();
    let mut out = vec![0.0; src.len()];
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                let (sy, sx) = if horizontal { (y, w - 1 - x) } else { (h - 1 - y, x) };
                out[(ch * h + y) * w + x] = src[(ch * h + sy) * w + sx];
            }
        }
    }
    Tensor::from_parts(image.shape().to_vec(), out, false)
}

fn flip_boxes(boxes: &[LabeledBox], h: u32, w: u32, horizontal: bool) -> Vec<LabeledBox> {
    boxes
        .iter()
        .map(|b| {
            let r = b.region;
            let region = if horizontal {
                RegionProposal { x0: w - r.x1, x1: w - r.x0, ..r }
            } else {
                RegionProposal { y0: h - r.y1, y1: h - r.y0, ..r }
            };
            LabeledBox { region, class: b.class }
        })
        .collect()
}

/// Bilinear resample of one plane to (rh, rw), border-clamped.
fn resize_plane(src: &[f64], h: usize, w: usize, rh: usize, rw: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(rh * rw);
    let sy = h as f64 / rh as f64;
    let sx = w as f64 / rw as f64;
    for y in 0..rh {
        let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, h as f64 - 1.0);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let wy = fy - y0 as f64;
        for x in 0..rw {
            let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, w as f64 - 1.0);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let wx = fx - x0 as f64;
            let top = src[y0 * w + x0] * (1.0 - wx) + src[y0 * w + x1] * wx;
            let bot = src[y1 * w + x0] * (1.0 - wx) + src[y1 * w + x1] * wx;
            out.push(top * (1.0 - wy) + bot * wy);
        }
    }
    out
}

fn scale_slice(slice: &FusedSlice, s: f64) -> FusedSlice {
    let (c, h, w) = match slice.image.shape() {
        [c, h, w] => (*c, *h, *w),
        _ => unreachable!(),
    };
    let rh = ((h as f64 * s).round() as usize).max(1);
    let rw = ((w as f64 * s).round() as usize).max(1);
    let mut out = vec![0.0; c * h * w];
    for ch in 0..c {
        let plane = &slice.image.data()[ch * h * w..(ch + 1) * h * w];
        let resized = resize_plane(plane, h, w, rh, rw);
        // Center-crop when enlarged, center-pad with zeros when shrunk.
        let oy = rh.abs_diff(h) / 2;
        let ox = rw.abs_diff(w) / 2;
        for y in 0..h.min(rh) {
            for x in 0..w.min(rw) {
                let (dy, dx, sy, sx) = if rh >= h {
                    (y, x, y + oy, x + ox)
                } else {
                    (y + oy, x + ox, y, x)
                };
                out[(ch * h + dy) * w + dx] = resized[sy * rw + sx];
            }
        }
    }
    let offset_y = if rh >= h { -((rh - h) as i64 / 2) } else { ((h - rh) / 2) as i64 };
    let offset_x = if rw >= w { -((rw - w) as i64 / 2) } else { ((w - rw) / 2) as i64 };
    let boxes = slice
        .boxes
        .iter()
        .filter_map(|b| {
            let r = b.region;
            let tx = |v: u32| ((v as f64 * s).round() as i64 + offset_x).clamp(0, w as i64) as u32;
            let ty = |v: u32| ((v as f64 * s).round() as i64 + offset_y).clamp(0, h as i64) as u32;
            let region = RegionProposal::new(tx(r.x0), ty(r.y0), tx(r.x1), ty(r.y1)).ok()?;
            Some(LabeledBox { region, class: b.class })
        })
        .collect();
    FusedSlice {
        image: Tensor::from_parts(slice.image.shape().to_vec(), out, false),
        view: slice.view,
        label: slice.label,
        source: slice.source.clone(),
        boxes,
    }
}

/// The original slice followed by one transformed copy per requested op.
/// Labels are preserved; boxes move with the pixels (and are dropped if a
/// shrink pushes them fully out of frame).
pub fn augment(slice: &FusedSlice, ops: &[AugmentOp]) -> Vec<FusedSlice> {
    let (h, w) = match slice.image.shape() {
        [_, h, w] => (*h as u32, *w as u32),
        _ => unreachable!(),
    };
    let mut out = vec![slice.clone()];
    for op in ops {
        match op {
            AugmentOp::HFlip => out.push(FusedSlice {
                image: flip_image(&slice.image, true),
                boxes: flip_boxes(&slice.boxes, h, w, true),
                source: slice.source.clone(),
                ..slice.clone()
            }),
            AugmentOp::VFlip => out.push(FusedSlice {
                image: flip_image(&slice.image, false),
                boxes: flip_boxes(&slice.boxes, h, w, false),
                source: slice.source.clone(),
                ..slice.clone()
            }),
            AugmentOp::Scale(s) => out.push(scale_slice(slice, *s)),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::LesionBox;
    use std::collections::BTreeMap;

    fn vol_with(
        mods: &[(Modality, u64)],
        dims: (usize, usize, usize),
        label: u32,
        boxes: Vec<LesionBox>,
    ) -> MultiModalVolume {
        let mut m = BTreeMap::new();
        let n = dims.0 * dims.1 * dims.2;
        for &(modality, salt) in mods {
            let vals: Vec<f64> = (0..n)
                .map(|i| ((i as u64).wrapping_mul(97).wrapping_add(salt) % 101) as f64 / 100.0)
                .collect();
            m.insert(
                modality,
                Tensor::new(vec![dims.0, dims.1, dims.2], vals, false).unwrap(),
            );
        }
        MultiModalVolume::new(m, label, boxes).unwrap()
    }

    #[test]
    fn axial_extraction_counts_depth() {
        let vol = vol_with(
            &[(Modality::T1, 1), (Modality::T1c, 2), (Modality::Flair, 3)],
            (8, 8, 8),
            0,
            vec![],
        );
        let got =
            extract_slices(&vol, "v0", &FusionSpec::default(), View::Axial, false).unwrap();
        assert_eq!(got.len(), 8);
        assert_eq!(got[0].image.shape(), &[3, 8, 8]);
    }

    #[test]
    fn three_views_cover_d_plus_h_plus_w() {
        let vol = vol_with(
            &[(Modality::T1, 1), (Modality::T1c, 2), (Modality::Flair, 3)],
            (4, 6, 5),
            0,
            vec![],
        );
        let total: usize = View::ALL
            .iter()
            .map(|&v| {
                extract_slices(&vol, "v0", &FusionSpec::default(), v, false).unwrap().len()
            })
            .sum();
        assert_eq!(total, 4 + 6 + 5);
    }

    #[test]
    fn lesion_only_keeps_box_slices() {
        let boxes = (2..=4)
            .map(|s| LesionBox { slice: s, x0: 1, y0: 1, x1: 4, y1: 4, cls: 1 })
            .collect();
        let vol = vol_with(
            &[(Modality::T1, 1), (Modality::T1c, 2), (Modality::Flair, 3)],
            (8, 8, 8),
            1,
            boxes,
        );
        let got =
            extract_slices(&vol, "v0", &FusionSpec::default(), View::Axial, true).unwrap();
        let kept: Vec<usize> = got.iter().map(|s| s.source.1).collect();
        assert_eq!(kept, vec![2, 3, 4]);
    }

    #[test]
    fn lesion_only_is_vacuous_without_boxes() {
        let vol = vol_with(
            &[(Modality::T1, 1), (Modality::T1c, 2), (Modality::Flair, 3)],
            (8, 8, 8),
            0,
            vec![],
        );
        let got =
            extract_slices(&vol, "v0", &FusionSpec::default(), View::Axial, true).unwrap();
        assert_eq!(got.len(), 8);
    }

    #[test]
    fn identical_triple_gives_identical_channels() {
        let vol = vol_with(&[(Modality::T1, 1)], (4, 5, 5), 0, vec![]);
        let spec = FusionSpec { triple: [Modality::T1; 3], fallback: vec![] };
        let s = fuse_modalities(&vol, "v0", &spec, View::Axial, 2).unwrap();
        let d = s.image.data();
        assert_eq!(&d[0..25], &d[25..50]);
        assert_eq!(&d[0..25], &d[50..75]);
    }

    #[test]
    fn channels_match_their_modalities() {
        let vol = vol_with(
            &[(Modality::T1, 1), (Modality::T1c, 2), (Modality::Flair, 3)],
            (4, 5, 5),
            0,
            vec![],
        );
        let s = fuse_modalities(&vol, "v0", &FusionSpec::default(), View::Axial, 1).unwrap();
        let flair = vol.modality(Modality::Flair).unwrap();
        assert_eq!(&s.image.data()[50..75], &flair.data()[25..50]);
    }

    #[test]
    fn missing_flair_falls_back_to_dwi() {
        let vol = vol_with(
            &[(Modality::T1, 1), (Modality::T1c, 2), (Modality::Dwi, 9)],
            (4, 5, 5),
            0,
            vec![],
        );
        let s = fuse_modalities(&vol, "v0", &FusionSpec::default(), View::Axial, 0).unwrap();
        let dwi = vol.modality(Modality::Dwi).unwrap();
        assert_eq!(&s.image.data()[50..75], &dwi.data()[0..25]);
    }

    #[test]
    fn missing_modality_without_fallback_errors() {
        let vol = vol_with(&[(Modality::T1, 1), (Modality::T1c, 2)], (4, 5, 5), 0, vec![]);
        let spec = FusionSpec { fallback: vec![], ..Default::default() };
        assert!(matches!(
            fuse_modalities(&vol, "v0", &spec, View::Axial, 0),
            Err(Error::MissingModality(_))
        ));
    }

    fn sample_slice(boxes: Vec<LabeledBox>) -> FusedSlice {
        let vals: Vec<f64> = (0..3 * 8 * 8).map(|i| (i % 29) as f64 / 28.0).collect();
        FusedSlice {
            image: Tensor::new(vec![3, 8, 8], vals, false).unwrap(),
            view: View::Axial,
            label: 2,
            source: ("v1".into(), 3),
            boxes,
        }
    }

    #[test]
    fn hflip_twice_is_identity() {
        let s = sample_slice(vec![]);
        let once = augment(&s, &[AugmentOp::HFlip]);
        let twice = augment(&once[1], &[AugmentOp::HFlip]);
        assert!(twice[1].image.bit_eq(&s.image));
    }

    #[test]
    fn vflip_reflects_boxes() {
        let b = LabeledBox {
            region: RegionProposal::new(1, 2, 3, 4).unwrap(),
            class: 1,
        };
        let s = sample_slice(vec![b]);
        let out = augment(&s, &[AugmentOp::VFlip]);
        let r = out[1].boxes[0].region;
        assert_eq!((r.x0, r.y0, r.x1, r.y1), (1, 4, 3, 6));
    }

    #[test]
    fn scale_one_is_identity() {
        let s = sample_slice(vec![LabeledBox {
            region: RegionProposal::new(2, 2, 6, 6).unwrap(),
            class: 1,
        }]);
        let out = augment(&s, &[AugmentOp::Scale(1.0)]);
        assert!(out[1].image.bit_eq(&s.image));
        assert_eq!(out[1].boxes, s.boxes);
    }

    #[test]
    fn augment_preserves_label_and_shape() {
        let s = sample_slice(vec![LabeledBox {
            region: RegionProposal::new(2, 2, 6, 6).unwrap(),
            class: 1,
        }]);
        let ops = [AugmentOp::HFlip, AugmentOp::VFlip, AugmentOp::Scale(0.75), AugmentOp::Scale(1.25)];
        let out = augment(&s, &ops);
        assert_eq!(out.len(), 5);
        for a in &out {
            assert_eq!(a.label, s.label);
            assert_eq!(a.image.shape(), s.image.shape());
            for b in &a.boxes {
                assert!(b.region.x1 <= 8 && b.region.y1 <= 8);
            }
        }
    }

    #[test]
    fn augment_op_parsing() {
        assert_eq!("hflip".parse::<AugmentOp>().unwrap(), AugmentOp::HFlip);
        assert_eq!("scale(0.75)".parse::<AugmentOp>().unwrap(), AugmentOp::Scale(0.75));
        assert!("zoom".parse::<AugmentOp>().is_err());
        assert!("scale(-1)".parse::<AugmentOp>().is_err());
    }
}
