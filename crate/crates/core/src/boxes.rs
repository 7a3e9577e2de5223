//! Region proposals over 2-d slices: IoU, non-maximum suppression,
//! matching/regression-target assignment, and a deterministic proposal
//! generator (threshold components + greedy merges + sliding windows) that
//! stands in for an external segmentation-based proposer.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box over pixel indices, half-open on both axes:
/// covers x in [x0, x1) and y in [y0, y1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionProposal {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
    /// Classifier confidence, absent until scored.
    pub score: Option<f64>,
}

impl RegionProposal {
    pub fn new(x0: u32, y0: u32, x1: u32, y1: u32) -> Result<Self> {
        if x1 <= x0 || y1 <= y0 {
            return Err(Error::EmptyBox);
        }
        Ok(Self { x0, y0, x1, y1, score: None })
    }

    pub fn with_score(mut self, score: f64) -> Self {
        self.score = Some(score);
        self
    }

    pub fn width(&self) -> u32 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> u32 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> u64 {
        self.width() as u64 * self.height() as u64
    }

    fn center(&self) -> (f64, f64) {
        (
            self.x0 as f64 + self.width() as f64 / 2.0,
            self.y0 as f64 + self.height() as f64 / 2.0,
        )
    }

    /// Extent equality ignoring scores.
    pub fn same_extent(&self, other: &Self) -> bool {
        self.x0 == other.x0 && self.y0 == other.y0 && self.x1 == other.x1 && self.y1 == other.y1
    }
}

/// Intersection over union of two half-open boxes; 0 when disjoint.
pub fn iou(a: &RegionProposal, b: &RegionProposal) -> f64 {
    let ix0 = a.x0.max(b.x0);
    let iy0 = a.y0.max(b.y0);
    let ix1 = a.x1.min(b.x1);
    let iy1 = a.y1.min(b.y1);
    if ix1 <= ix0 || iy1 <= iy0 {
        return 0.0;
    }
    let inter = (ix1 - ix0) as f64 * (iy1 - iy0) as f64;
    let union = a.area() as f64 + b.area() as f64 - inter;
    inter / union
}

/// Greedy non-maximum suppression. Candidates are visited in descending
/// score order (ties keep the earlier input index); a candidate is dropped
/// when its IoU with an already-kept box exceeds `iou_threshold`. Every
/// input must be scored.
pub fn nms(proposals: &[RegionProposal], iou_threshold: f64) -> Result<Vec<RegionProposal>> {
    for (i, p) in proposals.iter().enumerate() {
        if p.score.is_none() {
            return Err(Error::UnscoredProposal(i));
        }
    }
    let mut order: Vec<usize> = (0..proposals.len()).collect();
    order.sort_by(|&a, &b| {
        proposals[b]
            .score
            .unwrap()
            .partial_cmp(&proposals[a].score.unwrap())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut kept: Vec<RegionProposal> = Vec::new();
    for &i in &order {
        if kept.iter().all(|k| iou(k, &proposals[i]) <= iou_threshold) {
            kept.push(proposals[i]);
        }
    }
    Ok(kept)
}

/// A ground-truth region with the class it belongs to (0 is background and
/// never appears in ground truth).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabeledBox {
    pub region: RegionProposal,
    pub class: usize,
}

/// A proposal with its assigned training role: class 0 is background,
/// anything else carries center/log-size regression deltas toward the
/// matched ground truth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabeledProposal {
    pub proposal: RegionProposal,
    pub cls: usize,
    pub target: [f64; 4],
    pub matched_iou: f64,
}

/// Assigns each proposal to its highest-IoU ground-truth box. Proposals at
/// or above `fg_threshold` take that box's class and the deltas
/// (tx, ty, tw, th) = ((gcx-pcx)/pw, (gcy-pcy)/ph, ln(gw/pw), ln(gh/ph));
/// proposals below `bg_upper` become background with zero deltas; the band
/// in between is dropped from the output entirely.
pub fn label_proposals(
    proposals: &[RegionProposal],
    gt: &[LabeledBox],
    fg_threshold: f64,
    bg_upper: f64,
) -> Result<Vec<LabeledProposal>> {
    if !(bg_upper > 0.0 && bg_upper <= fg_threshold && fg_threshold <= 1.0) {
        return Err(Error::BadConfig(format!(
            "need 0 < bg_upper <= fg_threshold <= 1, got bg_upper={bg_upper} fg={fg_threshold}"
        )));
    }
    for g in gt {
        if g.class == 0 {
            return Err(Error::LabelOutOfRange { label: 0, classes: 0 });
        }
    }
    let mut out = Vec::with_capacity(proposals.len());
    for p in proposals {
        let mut best: Option<(&LabeledBox, f64)> = None;
        for g in gt {
            let v = iou(p, &g.region);
            let better = match best {
                None => true,
                Some((_, bv)) => v > bv,
            };
            if better {
                best = Some((g, v));
            }
        }
        let matched_iou = best.map(|(_, v)| v).unwrap_or(0.0);
        if matched_iou >= fg_threshold {
            let (g, v) = best.unwrap();
            let (pcx, pcy) = p.center();
            let (gcx, gcy) = g.region.center();
            let (pw, ph) = (p.width() as f64, p.height() as f64);
            let (gw, gh) = (g.region.width() as f64, g.region.height() as f64);
            out.push(LabeledProposal {
                proposal: *p,
                cls: g.class,
                target: [(gcx - pcx) / pw, (gcy - pcy) / ph, (gw / pw).ln(), (gh / ph).ln()],
                matched_iou: v,
            });
        } else if matched_iou < bg_upper {
            out.push(LabeledProposal {
                proposal: *p,
                cls: 0,
                target: [0.0; 4],
                matched_iou,
            });
        }
        // IoU in [bg_upper, fg_threshold) is deliberately dropped.
    }
    Ok(out)
}

/// Applies predicted (tx, ty, tw, th) deltas to a proposal and clips the
/// refined box into an h x w image, keeping it at least one pixel wide.
pub fn apply_deltas(p: &RegionProposal, d: [f64; 4], h: u32, w: u32) -> RegionProposal {
    let (pcx, pcy) = p.center();
    let (pw, ph) = (p.width() as f64, p.height() as f64);
    // Cap the size growth so a wild regression output cannot overflow.
    let nw = pw * d[2].clamp(-4.0, 4.0).exp();
    let nh = ph * d[3].clamp(-4.0, 4.0).exp();
    let ncx = pcx + d[0] * pw;
    let ncy = pcy + d[1] * ph;
    let x0 = ((ncx - nw / 2.0).round().max(0.0) as u32).min(w.saturating_sub(1));
    let y0 = ((ncy - nh / 2.0).round().max(0.0) as u32).min(h.saturating_sub(1));
    let x1 = ((ncx + nw / 2.0).round().max(0.0) as u32).clamp(x0 + 1, w.max(x0 + 1));
    let y1 = ((ncy + nh / 2.0).round().max(0.0) as u32).clamp(y0 + 1, h.max(y0 + 1));
    RegionProposal { x0, y0, x1, y1, score: p.score }
}

#[derive(Debug, Clone)]
pub struct ProposalConfig {
    /// Intensity cut points over the normalized [0,1] slice.
    pub thresholds: Vec<f64>,
    /// Components smaller than this many pixels are noise.
    pub min_area: usize,
    /// Hard cap on the number of emitted proposals.
    pub max_proposals: usize,
    /// Pairs of component boxes at or above this IoU also emit their union.
    pub merge_iou: f64,
    /// Near-duplicates (IoU above this) are dropped.
    pub dedup_iou: f64,
    /// Square sliding-window edges, in pixels.
    pub window_sizes: Vec<u32>,
    /// Each component box is also emitted grown by these per-side fractions
    /// of its own extent; thresholding hugs only the bright core of a
    /// soft-edged structure, so the grown copies recover its true footprint.
    pub dilations: Vec<f64>,
    /// Square boxes of these edge sizes are centred on bright local maxima;
    /// they are the main recall path for structures too small to clear
    /// `min_area` as connected components.
    pub peak_edges: Vec<u32>,
    pub seed: u64,
}

impl Default for ProposalConfig {
    fn default() -> Self {
        Self {
            thresholds: vec![0.45, 0.58, 0.7, 0.82],
            min_area: 5,
            max_proposals: 192,
            merge_iou: 0.05,
            dedup_iou: 0.95,
            window_sizes: vec![8, 12, 18, 26],
            dilations: vec![0.3],
            peak_edges: vec![5, 7, 9],
            seed: 0,
        }
    }
}

fn component_boxes(
    intensity: &[f64],
    h: usize,
    w: usize,
    threshold: f64,
    min_area: usize,
) -> Vec<RegionProposal> {
    let mut seen = vec![false; h * w];
    let mut out = Vec::new();
    let mut stack = Vec::new();
    for start in 0..h * w {
        if seen[start] || intensity[start] <= threshold {
            continue;
        }
        // Flood fill one 4-connected component.
        let (mut x0, mut y0, mut x1, mut y1) = (start % w, start / w, start % w, start / w);
        let mut area = 0usize;
        stack.push(start);
        seen[start] = true;
        while let Some(at) = stack.pop() {
            let (y, x) = (at / w, at % w);
            area += 1;
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
            let mut push = |n: usize| {
                if !seen[n] && intensity[n] > threshold {
                    seen[n] = true;
                    stack.push(n);
                }
            };
            if x > 0 {
                push(at - 1);
            }
            if x + 1 < w {
                push(at + 1);
            }
            if y > 0 {
                push(at - w);
            }
            if y + 1 < h {
                push(at + w);
            }
        }
        if area >= min_area {
            out.push(RegionProposal {
                x0: x0 as u32,
                y0: y0 as u32,
                x1: x1 as u32 + 1,
                y1: y1 as u32 + 1,
                score: None,
            });
        }
    }
    out
}

/// Bright 8-neighbourhood local maxima, strongest first, greedily thinned so
/// no two kept peaks sit within Chebyshev distance 3; at most 24 survive.
fn find_peaks(intensity: &[f64], h: usize, w: usize, floor: f64) -> Vec<(usize, usize)> {
    let mut cand: Vec<(usize, usize)> = Vec::new();
    for y in 1..h.saturating_sub(1) {
        for x in 1..w.saturating_sub(1) {
            let v = intensity[y * w + x];
            if v <= floor {
                continue;
            }
            let higher = (-1isize..=1)
                .flat_map(|dy| (-1isize..=1).map(move |dx| (dy, dx)))
                .filter(|&(dy, dx)| (dy, dx) != (0, 0))
                .any(|(dy, dx)| {
                    intensity[((y as isize + dy) as usize) * w + (x as isize + dx) as usize] >= v
                });
            if !higher {
                cand.push((y, x));
            }
        }
    }
    cand.sort_by(|a, b| {
        let (va, vb) = (intensity[a.0 * w + a.1], intensity[b.0 * w + b.1]);
        vb.partial_cmp(&va).unwrap().then_with(|| a.cmp(b))
    });
    let mut kept: Vec<(usize, usize)> = Vec::new();
    for (y, x) in cand {
        if kept.len() == 24 {
            break;
        }
        if kept.iter().all(|&(ky, kx)| ky.abs_diff(y).max(kx.abs_diff(x)) > 3) {
            kept.push((y, x));
        }
    }
    kept
}

fn peak_boxes(intensity: &[f64], h: usize, w: usize, cfg: &ProposalConfig) -> Vec<RegionProposal> {
    let floor = cfg.thresholds.iter().copied().fold(f64::INFINITY, f64::min);
    let mut out = Vec::new();
    for (y, x) in find_peaks(intensity, h, w, floor) {
        for &e in &cfg.peak_edges {
            if e == 0 || e as usize > h || e as usize > w {
                continue;
            }
            let x1 = (x as u32 + e.div_ceil(2)).min(w as u32);
            let y1 = (y as u32 + e.div_ceil(2)).min(h as u32);
            let x0 = x1.saturating_sub(e);
            let y0 = y1.saturating_sub(e);
            out.push(RegionProposal { x0, y0, x1: x0 + e, y1: y0 + e, score: None });
        }
    }
    out
}

/// Deterministic region proposer over a normalized [C,H,W] slice.
///
/// Channels collapse to a per-pixel maximum intensity; bright connected
/// components at several thresholds seed the candidate set; overlapping
/// pairs contribute union boxes (a cheap stand-in for hierarchical region
/// merging); square sliding windows backstop recall. Near-duplicates are
/// removed and the list is capped by seeded subsampling so the output is
/// reproducible for a given config.
pub fn generate_proposals(
    image: &crate::tensor::Tensor,
    cfg: &ProposalConfig,
) -> Result<Vec<RegionProposal>> {
    let (c, h, w) = match image.shape() {
        [c, h, w] => (*c, *h, *w),
        other => {
            return Err(Error::ShapeMismatch(format!(
                "generate_proposals expects [C,H,W], got {other:?}"
            )))
        }
    };
    if h < 16 || w < 16 {
        return Err(Error::ImageTooSmall { h, w });
    }
    let mut intensity = vec![f64::NEG_INFINITY; h * w];
    for ch in 0..c {
        let plane = &image.data()[ch * h * w..(ch + 1) * h * w];
        for (acc, &v) in intensity.iter_mut().zip(plane) {
            if v > *acc {
                *acc = v;
            }
        }
    }
    let intensity = &intensity;
    if cfg.max_proposals == 0 || cfg.thresholds.is_empty() {
        return Err(Error::BadConfig(
            "proposal generation needs thresholds and a positive cap".into(),
        ));
    }

    let mut components = Vec::new();
    for &t in &cfg.thresholds {
        components.extend(component_boxes(intensity, h, w, t, cfg.min_area));
    }

    let mut merged = Vec::new();
    for i in 0..components.len() {
        for j in i + 1..components.len() {
            let (a, b) = (&components[i], &components[j]);
            if !a.same_extent(b) && iou(a, b) >= cfg.merge_iou {
                merged.push(RegionProposal {
                    x0: a.x0.min(b.x0),
                    y0: a.y0.min(b.y0),
                    x1: a.x1.max(b.x1),
                    y1: a.y1.max(b.y1),
                    score: None,
                });
            }
        }
    }

    let grown: Vec<RegionProposal> = cfg
        .dilations
        .iter()
        .flat_map(|&frac| {
            components.iter().map(move |b| {
                let pad_x = ((b.width() as f64 * frac).round() as u32).max(1);
                let pad_y = ((b.height() as f64 * frac).round() as u32).max(1);
                RegionProposal {
                    x0: b.x0.saturating_sub(pad_x),
                    y0: b.y0.saturating_sub(pad_y),
                    x1: (b.x1 + pad_x).min(w as u32),
                    y1: (b.y1 + pad_y).min(h as u32),
                    score: None,
                }
            })
        })
        .collect();
    components.extend(grown);
    components.extend(peak_boxes(intensity, h, w, cfg));

    let mut windows = Vec::new();
    for &size in &cfg.window_sizes {
        if size == 0 || size as usize > h || size as usize > w {
            continue;
        }
        let step = (size / 2).max(1);
        let mut y = 0u32;
        loop {
            let y1 = (y + size).min(h as u32);
            let y0 = y1 - size;
            let mut x = 0u32;
            loop {
                let x1 = (x + size).min(w as u32);
                let x0 = x1 - size;
                windows.push(RegionProposal { x0, y0, x1, y1, score: None });
                if x1 >= w as u32 {
                    break;
                }
                x += step;
            }
            if y1 >= h as u32 {
                break;
            }
            y += step;
        }
    }

    // Components carry the most signal, so they survive dedup and the cap
    // first; sliding windows fill whatever capacity remains as a seeded
    // uniform sample so coverage does not collapse to one image corner.
    let mut structural = components;
    structural.extend(merged);
    let mut unique: Vec<RegionProposal> = Vec::new();
    for p in structural {
        if unique.iter().all(|k| iou(k, &p) <= cfg.dedup_iou) {
            unique.push(p);
        }
    }
    unique.truncate(cfg.max_proposals);

    if unique.len() < cfg.max_proposals {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        windows.shuffle(&mut rng);
        let room = cfg.max_proposals - unique.len();
        let mut kept = 0usize;
        for p in windows {
            if kept == room {
                break;
            }
            if unique.iter().all(|k| iou(k, &p) <= cfg.dedup_iou) {
                unique.push(p);
                kept += 1;
            }
        }
    }
    Ok(unique)
}
