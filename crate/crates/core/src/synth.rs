//! Seeded synthetic multi-modal brain-like volumes. Five classes are told
//! apart by lesion morphology and cross-modality contrast, never by overall
//! brightness: per-volume anatomy jitter (brain size, base intensity, noise
//! level) is class-independent and large compared to any lesion's
//! contribution to the mean, so a mean-intensity classifier stays near
//! chance while a spatial model has clean signal.
//!
//! Class recipes:
//! * 0 healthy — background anatomy only.
//! * 1 tumor_hgg — one or two large blobs, bright in FLAIR/T2, dark core and
//!   bright rim in T1c.
//! * 2 tumor_lgg — one medium blob, bright in FLAIR/T2, no T1c rim.
//! * 3 alzheimer — no focal lesion; ventricles enlarged and a thin CSF rim
//!   around the cortex.
//! * 4 ms — several small periventricular blobs, bright in FLAIR/T2.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::volume::{min_max_normalize, LesionBox, Modality, MultiModalVolume};

pub const NUM_CLASSES: usize = 5;
pub const CLASS_NAMES: [&str; NUM_CLASSES] =
    ["healthy", "tumor_hgg", "tumor_lgg", "alzheimer", "ms"];

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub volumes_per_class: usize,
    pub depth: usize,
    pub height: usize,
    pub width: usize,
    pub modalities: Vec<Modality>,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            volumes_per_class: 20,
            depth: 12,
            height: 64,
            width: 64,
            modalities: vec![Modality::T1, Modality::T1c, Modality::T2, Modality::Flair],
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.volumes_per_class == 0 {
            return Err(Error::BadConfig("volumes_per_class must be >= 1".into()));
        }
        if self.depth < 4 || self.height < 16 || self.width < 16 {
            return Err(Error::BadConfig(format!(
                "volume dims too small: {}x{}x{} (need >= 4x16x16)",
                self.depth, self.height, self.width
            )));
        }
        if self.modalities.is_empty() {
            return Err(Error::BadConfig("at least one modality is required".into()));
        }
        Ok(())
    }
}

/// One lesion blob: soft-edged ellipsoid with per-modality amplitude.
struct Blob {
    cz: f64,
    cy: f64,
    cx: f64,
    rz: f64,
    ry: f64,
    rx: f64,
    /// Additive amplitude per modality at the blob center.
    amp: BTreeMap<Modality, f64>,
    /// T1c-style rim: (inner fraction, amplitude); the shell between
    /// inner*r and r brightens instead of the core.
    rim: Option<(f64, f64)>,
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E3779B97F4A7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D049BB133111EB);
    x ^ (x >> 31)
}

fn volume_seed(seed: u64, label: u32, idx: usize) -> u64 {
    splitmix(seed ^ splitmix((label as u64) << 32 | idx as u64))
}

struct Anatomy {
    cz: f64,
    cy: f64,
    cx: f64,
    rz: f64,
    ry: f64,
    rx: f64,
    /// Ventricle half-pair: mirrored ellipsoids offset +-vent_dx from center.
    vent_dx: f64,
    vent_ry: f64,
    vent_rx: f64,
    vent_rz: f64,
    /// CSF rim thickness (in normalized brain-radius units); 0 disables.
    rim_width: f64,
    base: BTreeMap<Modality, f64>,
    noise: f64,
}

fn base_level(m: Modality) -> f64 {
    match m {
        Modality::T1 => 0.58,
        Modality::T1c => 0.52,
        Modality::T2 => 0.40,
        Modality::Flair => 0.46,
        Modality::Dwi => 0.44,
        Modality::Pd => 0.50,
        Modality::Mra => 0.36,
    }
}

fn sample_anatomy(rng: &mut ChaCha8Rng, cfg: &SynthConfig, enlarged_ventricles: bool) -> Anatomy {
    let (d, h, w) = (cfg.depth as f64, cfg.height as f64, cfg.width as f64);
    // Brain size jitter is the main defence against brightness shortcuts:
    // mean intensity tracks brain volume fraction, which varies per volume
    // independently of class.
    let size = rng.gen_range(0.86..1.14);
    let vent_scale = if enlarged_ventricles { rng.gen_range(1.7..2.1) } else { rng.gen_range(0.9..1.1) };
    let mut base = BTreeMap::new();
    let gain = rng.gen_range(0.85..1.15);
    for &m in &cfg.modalities {
        base.insert(m, base_level(m) * gain * rng.gen_range(0.95..1.05));
    }
    Anatomy {
        cz: d / 2.0 + rng.gen_range(-0.5..0.5),
        cy: h / 2.0 + rng.gen_range(-1.5..1.5),
        cx: w / 2.0 + rng.gen_range(-1.5..1.5),
        rz: d * 0.48 * rng.gen_range(0.95..1.05),
        ry: h * 0.40 * size,
        rx: w * 0.36 * size,
        vent_dx: w * 0.085,
        vent_ry: h * 0.14 * vent_scale,
        vent_rx: w * 0.045 * vent_scale,
        vent_rz: d * 0.38,
        rim_width: if enlarged_ventricles { rng.gen_range(0.05..0.08) } else { 0.0 },
        base,
        noise: rng.gen_range(0.015..0.035),
    }
}

fn sample_blobs(rng: &mut ChaCha8Rng, label: u32, a: &Anatomy) -> Vec<Blob> {
    let mut blobs = Vec::new();
    let lesion_center = |rng: &mut ChaCha8Rng, max_frac: f64| {
        // Somewhere well inside the brain ellipsoid.
        let ang: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        let rad: f64 = rng.gen_range(0.15..max_frac);
        (
            a.cz + rng.gen_range(-0.25..0.25) * a.rz,
            a.cy + ang.sin() * rad * a.ry,
            a.cx + ang.cos() * rad * a.rx,
        )
    };
    match label {
        1 => {
            // High-grade: large, rim-enhancing.
            for _ in 0..rng.gen_range(1..=2) {
                let (cz, cy, cx) = lesion_center(rng, 0.45);
                let r = rng.gen_range(7.0..10.5);
                let mut amp = BTreeMap::new();
                amp.insert(Modality::Flair, 0.50);
                amp.insert(Modality::T2, 0.38);
                amp.insert(Modality::T1, -0.22);
                blobs.push(Blob {
                    cz,
                    cy,
                    cx,
                    rz: rng.gen_range(2.2..3.6),
                    ry: r * rng.gen_range(0.85..1.15),
                    rx: r,
                    amp,
                    rim: Some((0.62, 0.55)),
                });
            }
        }
        2 => {
            // Low-grade: single medium blob, no rim enhancement.
            let (cz, cy, cx) = lesion_center(rng, 0.5);
            let r = rng.gen_range(4.0..6.5);
            let mut amp = BTreeMap::new();
            amp.insert(Modality::Flair, 0.44);
            amp.insert(Modality::T2, 0.34);
            amp.insert(Modality::T1, -0.12);
            blobs.push(Blob {
                cz,
                cy,
                cx,
                rz: rng.gen_range(1.6..2.8),
                ry: r * rng.gen_range(0.85..1.15),
                rx: r,
                amp,
                rim: None,
            });
        }
        4 => {
            // MS: several small periventricular spots.
            for _ in 0..rng.gen_range(3..=6) {
                let side = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                let cz = a.cz + rng.gen_range(-0.3..0.3) * a.rz;
                let cy = a.cy + rng.gen_range(-1.1..1.1) * a.vent_ry;
                let cx = a.cx + side * (a.vent_dx + a.vent_rx + rng.gen_range(2.0..7.0));
                let r = rng.gen_range(2.0..3.4);
                let mut amp = BTreeMap::new();
                amp.insert(Modality::Flair, 0.52);
                amp.insert(Modality::T2, 0.42);
                blobs.push(Blob {
                    cz,
                    cy,
                    cx,
                    rz: rng.gen_range(1.0..1.8),
                    ry: r,
                    rx: r * rng.gen_range(0.85..1.15),
                    amp,
                    rim: None,
                });
            }
        }
        _ => {}
    }
    blobs
}

/// Normalized squared ellipsoid distance; < 1 means inside.
fn edist2(z: f64, y: f64, x: f64, cz: f64, cy: f64, cx: f64, rz: f64, ry: f64, rx: f64) -> f64 {
    let dz = (z - cz) / rz;
    let dy = (y - cy) / ry;
    let dx = (x - cx) / rx;
    dz * dz + dy * dy + dx * dx
}

fn boxes_for_blob(b: &Blob, cfg: &SynthConfig, cls: u32) -> Vec<LesionBox> {
    let mut out = Vec::new();
    for z in 0..cfg.depth {
        let dz = (z as f64 + 0.5 - b.cz) / b.rz;
        let cross = 1.0 - dz * dz;
        if cross <= 0.0 {
            continue;
        }
        // The blob's additive profile runs all the way to the nominal
        // radius (55% amplitude at the cutoff), so the full geometric
        // cross-section is the visible extent.
        let scale = cross.sqrt();
        let (ry, rx) = (b.ry * scale, b.rx * scale);
        if ry < 1.2 || rx < 1.2 {
            continue;
        }
        let x0 = (b.cx - rx).floor().max(0.0) as u32;
        let y0 = (b.cy - ry).floor().max(0.0) as u32;
        let x1 = ((b.cx + rx).ceil() as u32).min(cfg.width as u32);
        let y1 = ((b.cy + ry).ceil() as u32).min(cfg.height as u32);
        if x1 > x0 && y1 > y0 {
            out.push(LesionBox { slice: z as u32, x0, y0, x1, y1, cls });
        }
    }
    out
}

fn render_volume(cfg: &SynthConfig, label: u32, idx: usize) -> Result<MultiModalVolume> {
    let mut rng = ChaCha8Rng::seed_from_u64(volume_seed(cfg.seed, label, idx));
    let anatomy = sample_anatomy(&mut rng, cfg, label == 3);
    let blobs = sample_blobs(&mut rng, label, &anatomy);

    let (d, h, w) = (cfg.depth, cfg.height, cfg.width);
    let n = d * h * w;
    let mut planes: BTreeMap<Modality, Vec<f64>> =
        cfg.modalities.iter().map(|&m| (m, vec![0.0; n])).collect();

    for z in 0..d {
        for y in 0..h {
            for x in 0..w {
                let at = (z * h + y) * w + x;
                let (fz, fy, fx) = (z as f64 + 0.5, y as f64 + 0.5, x as f64 + 0.5);
                let brain = edist2(
                    fz, fy, fx, anatomy.cz, anatomy.cy, anatomy.cx, anatomy.rz, anatomy.ry,
                    anatomy.rx,
                );
                // One noise draw per voxel per modality keeps the rng
                // sequence independent of class recipes.
                for &m in &cfg.modalities {
                    let noise = rng.gen_range(-anatomy.noise..anatomy.noise);
                    let v = &mut planes.get_mut(&m).unwrap()[at];
                    if brain >= 1.0 {
                        *v = (noise.abs() * 0.6).min(0.05);
                        continue;
                    }
                    let mut val = anatomy.base[&m] * (1.0 - 0.22 * brain) + noise;
                    // CSF rim (cortical atrophy signature): bright in T2,
                    // dark elsewhere, in a thin shell at the brain surface.
                    if anatomy.rim_width > 0.0 && brain > (1.0 - anatomy.rim_width).powi(2) {
                        val = match m {
                            Modality::T2 => 0.78 + noise,
                            _ => val * 0.45,
                        };
                    }
                    // Ventricles: CSF-dark in T1-like contrasts, bright in T2.
                    let vent = [-1.0f64, 1.0]
                        .iter()
                        .map(|&side| {
                            edist2(
                                fz,
                                fy,
                                fx,
                                anatomy.cz,
                                anatomy.cy,
                                anatomy.cx + side * anatomy.vent_dx,
                                anatomy.vent_rz,
                                anatomy.vent_ry,
                                anatomy.vent_rx,
                            )
                        })
                        .fold(f64::INFINITY, f64::min);
                    if vent < 1.0 {
                        val = match m {
                            Modality::T2 => 0.82 + noise,
                            _ => val * 0.32,
                        };
                    }
                    for b in &blobs {
                        let dist = edist2(fz, fy, fx, b.cz, b.cy, b.cx, b.rz, b.ry, b.rx);
                        if dist >= 1.0 {
                            continue;
                        }
                        let soft = 1.0 - 0.45 * dist;
                        if let Some(&a) = b.amp.get(&m) {
                            val += a * soft;
                        }
                        if m == Modality::T1c {
                            if let Some((inner, rim_amp)) = b.rim {
                                if dist >= inner * inner {
                                    val += rim_amp;
                                } else {
                                    val -= 0.10;
                                }
                            }
                        }
                    }
                    *v = val.clamp(0.0, 1.25);
                }
            }
        }
    }

    let mut modalities = BTreeMap::new();
    for (m, raw) in planes {
        // Normalize in f64, then snap to f32 so the stored file reloads
        // bit-exactly (post-quantization min stays 0.0 and max stays 1.0).
        let vals: Vec<f64> =
            min_max_normalize(&raw).into_iter().map(|v| v as f32 as f64).collect();
        modalities.insert(m, Tensor::new(vec![d, h, w], vals, false)?);
    }

    let mut lesion_boxes = Vec::new();
    for b in &blobs {
        lesion_boxes.extend(boxes_for_blob(b, cfg, label));
    }
    MultiModalVolume::new(modalities, label, lesion_boxes)
}

/// Generates the full class-balanced dataset: `NUM_CLASSES *
/// volumes_per_class` volumes with stable string ids, bit-reproducible from
/// the seed.
pub fn generate_synthetic_dataset(
    cfg: &SynthConfig,
) -> Result<Vec<(String, MultiModalVolume)>> {
    cfg.validate()?;
    let mut out = Vec::with_capacity(NUM_CLASSES * cfg.volumes_per_class);
    for label in 0..NUM_CLASSES as u32 {
        for idx in 0..cfg.volumes_per_class {
            let id = format!("{}_{idx:03}", CLASS_NAMES[label as usize]);
            out.push((id, render_volume(cfg, label, idx)?));
        }
    }
    Ok(out)
}

/// Volume-level split: shuffles the ids with a dedicated seeded stream and
/// cuts the shuffled order at cumulative-fraction boundaries. The final
/// bucket absorbs rounding remainders, so the buckets always partition the
/// input and no id lands in two buckets.
pub fn split_ids(ids: &[String], fractions: &[f64], seed: u64) -> Result<Vec<Vec<String>>> {
    if fractions.is_empty() {
        return Err(Error::BadConfig("need at least one split fraction".into()));
    }
    if fractions.iter().any(|&f| !(f > 0.0 && f < 1.0)) {
        return Err(Error::BadConfig(format!("fractions must be in (0,1), got {fractions:?}")));
    }
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::BadConfig(format!("fractions must sum to 1, got {total}")));
    }
    let mut order: Vec<String> = ids.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let mut out = Vec::with_capacity(fractions.len());
    let mut start = 0usize;
    let mut cum = 0.0;
    for (i, f) in fractions.iter().enumerate() {
        cum += f;
        let end =
            if i + 1 == fractions.len() { ids.len() } else { (cum * ids.len() as f64).round() as usize };
        let end = end.clamp(start, ids.len());
        out.push(order[start..end].to_vec());
        start = end;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> SynthConfig {
        SynthConfig { volumes_per_class: 2, depth: 8, height: 32, width: 32, ..Default::default() }
    }

    #[test]
    fn zero_volumes_is_rejected() {
        let cfg = SynthConfig { volumes_per_class: 0, ..Default::default() };
        assert!(matches!(generate_synthetic_dataset(&cfg), Err(Error::BadConfig(_))));
    }

    #[test]
    fn healthy_volumes_have_no_boxes() {
        let data = generate_synthetic_dataset(&small_cfg()).unwrap();
        for (id, vol) in &data {
            if vol.label == 0 || vol.label == 3 {
                assert!(vol.lesion_boxes.is_empty(), "{id} should have no boxes");
            } else {
                assert!(!vol.lesion_boxes.is_empty(), "{id} should have boxes");
            }
        }
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let a = generate_synthetic_dataset(&small_cfg()).unwrap();
        let b = generate_synthetic_dataset(&small_cfg()).unwrap();
        assert_eq!(a.len(), b.len());
        for ((ida, va), (idb, vb)) in a.iter().zip(&b) {
            assert_eq!(ida, idb);
            assert_eq!(va.lesion_boxes, vb.lesion_boxes);
            for (m, t) in &va.modalities {
                assert!(vb.modalities[m].bit_eq(t));
            }
        }
    }

    #[test]
    fn different_seeds_differ() {
        let a = generate_synthetic_dataset(&small_cfg()).unwrap();
        let cfg2 = SynthConfig { seed: 8, ..small_cfg() };
        let b = generate_synthetic_dataset(&cfg2).unwrap();
        let ta = &a[0].1.modalities[&Modality::T1];
        let tb = &b[0].1.modalities[&Modality::T1];
        assert!(!ta.bit_eq(tb));
    }

    #[test]
    fn intensities_span_exactly_unit_interval() {
        let data = generate_synthetic_dataset(&small_cfg()).unwrap();
        for (_, vol) in &data {
            for t in vol.modalities.values() {
                let lo = t.data().iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = t.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                assert_eq!(lo, 0.0);
                assert_eq!(hi, 1.0);
                // Values must survive the f32 storage round trip.
                for &v in t.data() {
                    assert_eq!(v, v as f32 as f64);
                }
            }
        }
    }

    #[test]
    fn boxes_stay_in_bounds() {
        let cfg = small_cfg();
        let data = generate_synthetic_dataset(&cfg).unwrap();
        for (_, vol) in &data {
            for b in &vol.lesion_boxes {
                assert!(b.slice < cfg.depth as u32);
                assert!(b.x1 <= cfg.width as u32 && b.y1 <= cfg.height as u32);
                assert!(b.x1 > b.x0 && b.y1 > b.y0);
                assert_eq!(b.cls, vol.label);
            }
        }
    }

    #[test]
    fn class_counts_are_balanced() {
        let cfg = small_cfg();
        let data = generate_synthetic_dataset(&cfg).unwrap();
        assert_eq!(data.len(), NUM_CLASSES * cfg.volumes_per_class);
        for label in 0..NUM_CLASSES as u32 {
            let n = data.iter().filter(|(_, v)| v.label == label).count();
            assert_eq!(n, cfg.volumes_per_class);
        }
    }
}
