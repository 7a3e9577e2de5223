//! Multi-modal volume storage. Volumes hold co-registered 3-d intensity
//! grids for up to seven MRI modalities, a class label, and per-slice lesion
//! boxes, and serialize to a small little-endian binary format (MVOL).

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use crate::boxes::RegionProposal;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MVOL_MAGIC: &[u8; 6] = b"MVOL1\0";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Modality {
    T1,
    T1c,
    T2,
    Flair,
    Dwi,
    Pd,
    Mra,
}

impl Modality {
    pub const ALL: [Modality; 7] = [
        Modality::T1,
        Modality::T1c,
        Modality::T2,
        Modality::Flair,
        Modality::Dwi,
        Modality::Pd,
        Modality::Mra,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Modality::T1 => "T1",
            Modality::T1c => "T1c",
            Modality::T2 => "T2",
            Modality::Flair => "FLAIR",
            Modality::Dwi => "DWI",
            Modality::Pd => "PD",
            Modality::Mra => "MRA",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Modality::ALL
            .iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s))
            .copied()
            .ok_or_else(|| Error::MissingModality(format!("unknown modality name {s:?}")))
    }
}

/// An axial-slice-anchored ground-truth box: `slice` indexes the depth axis,
/// the box covers [x0,x1) x [y0,y1) in that slice's plane.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LesionBox {
    pub slice: u32,
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
    pub cls: u32,
}

impl LesionBox {
    pub fn region(&self) -> Result<RegionProposal> {
        RegionProposal::new(self.x0, self.y0, self.x1, self.y1)
    }
}

#[derive(Debug, Clone)]
pub struct MultiModalVolume {
    /// Modality name -> [D,H,W] tensor; ordered map so iteration order is
    /// stable everywhere.
    pub modalities: BTreeMap<Modality, Tensor>,
    /// Class label in 0..=4.
    pub label: u32,
    pub lesion_boxes: Vec<LesionBox>,
}

impl MultiModalVolume {
    pub fn new(
        modalities: BTreeMap<Modality, Tensor>,
        label: u32,
        lesion_boxes: Vec<LesionBox>,
    ) -> Result<Self> {
        let vol = Self { modalities, label, lesion_boxes };
        vol.check()?;
        Ok(vol)
    }

    fn check(&self) -> Result<()> {
        if self.modalities.is_empty() {
            return Err(Error::MissingModality("volume holds no modalities".into()));
        }
        let mut dims: Option<(usize, usize, usize)> = None;
        for (m, t) in &self.modalities {
            let d = match t.shape() {
                [d, h, w] => (*d, *h, *w),
                other => {
                    return Err(Error::InconsistentDims(format!(
                        "modality {m} has shape {other:?}, expected [D,H,W]"
                    )))
                }
            };
            match dims {
                None => dims = Some(d),
                Some(prev) if prev != d => {
                    return Err(Error::InconsistentDims(format!(
                        "modality {m} is {d:?} but earlier modalities are {prev:?}"
                    )))
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        let t = self.modalities.values().next().expect("checked non-empty");
        match t.shape() {
            [d, h, w] => (*d, *h, *w),
            _ => unreachable!("checked rank 3"),
        }
    }

    pub fn modality(&self, m: Modality) -> Result<&Tensor> {
        self.modalities
            .get(&m)
            .ok_or_else(|| Error::MissingModality(format!("volume lacks modality {m}")))
    }
}

/// Min-max normalization to [0,1]; a zero-range (constant) channel maps to
/// all zeros.
pub fn min_max_normalize(values: &[f64]) -> Vec<f64> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !(hi > lo) {
        return vec![0.0; values.len()];
    }
    let range = hi - lo;
    values.iter().map(|&v| (v - lo) / range).collect()
}

fn write_u32<W: Write>(w: &mut W, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R, what: &str) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)
        .map_err(|_| Error::TruncatedFile(format!("while reading {what}")))?;
    Ok(u32::from_le_bytes(buf))
}

/// Serializes a volume to the MVOL binary layout: magic, modality count,
/// then per modality a 16-byte null-padded name, u32 D/H/W and f32 voxels;
/// footer: u32 label, u32 box count, boxes as six u32 each.
pub fn save_volume(vol: &MultiModalVolume, path: &Path) -> Result<()> {
    vol.check()?;
    let mut out: Vec<u8> = Vec::new();
    out.extend_from_slice(MVOL_MAGIC);
    write_u32(&mut out, vol.modalities.len() as u32)?;
    for (m, t) in &vol.modalities {
        let mut name = [0u8; 16];
        let s = m.as_str().as_bytes();
        name[..s.len()].copy_from_slice(s);
        out.extend_from_slice(&name);
        let (d, h, w) = match t.shape() {
            [d, h, w] => (*d as u32, *h as u32, *w as u32),
            _ => unreachable!(),
        };
        write_u32(&mut out, d)?;
        write_u32(&mut out, h)?;
        write_u32(&mut out, w)?;
        for &v in t.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    write_u32(&mut out, vol.label)?;
    write_u32(&mut out, vol.lesion_boxes.len() as u32)?;
    for b in &vol.lesion_boxes {
        for v in [b.slice, b.x0, b.y0, b.x1, b.y1, b.cls] {
            write_u32(&mut out, v)?;
        }
    }
    // Write-then-rename so readers never observe a half-written volume.
    let tmp = path.with_extension("mvol.tmp");
    std::fs::write(&tmp, &out)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Parses an MVOL file; intensities are min-max normalized per modality on
/// load (already-normalized files pass through bit-exactly because their min
/// is 0.0 and max is 1.0).
pub fn load_volume(path: &Path) -> Result<MultiModalVolume> {
    let bytes = std::fs::read(path)?;
    let mut r: &[u8] = &bytes;
    let mut magic = [0u8; 6];
    r.read_exact(&mut magic)
        .map_err(|_| Error::TruncatedFile("while reading magic".into()))?;
    if &magic != MVOL_MAGIC {
        return Err(Error::BadMagic(format!("{:?}", &magic)));
    }
    let n_mod = read_u32(&mut r, "modality count")?;
    if n_mod == 0 || n_mod as usize > Modality::ALL.len() {
        return Err(Error::InconsistentDims(format!("{n_mod} modalities")));
    }
    let mut modalities = BTreeMap::new();
    let mut dims: Option<(u32, u32, u32)> = None;
    for _ in 0..n_mod {
        let mut name = [0u8; 16];
        r.read_exact(&mut name)
            .map_err(|_| Error::TruncatedFile("while reading modality name".into()))?;
        let end = name.iter().position(|&b| b == 0).unwrap_or(16);
        let name = std::str::from_utf8(&name[..end])
            .map_err(|_| Error::Parse("modality name is not UTF-8".into()))?;
        let modality: Modality = name.parse()?;
        let d = read_u32(&mut r, "D")?;
        let h = read_u32(&mut r, "H")?;
        let w = read_u32(&mut r, "W")?;
        match dims {
            None => dims = Some((d, h, w)),
            Some(prev) if prev != (d, h, w) => {
                return Err(Error::InconsistentDims(format!(
                    "modality {modality} is {d}x{h}x{w} but earlier modalities are {prev:?}"
                )))
            }
            _ => {}
        }
        let count = d as usize * h as usize * w as usize;
        if count == 0 {
            return Err(Error::InconsistentDims(format!(
                "modality {modality} has a zero dimension"
            )));
        }
        let mut values = Vec::with_capacity(count);
        for _ in 0..count {
            let mut buf = [0u8; 4];
            r.read_exact(&mut buf)
                .map_err(|_| Error::TruncatedFile(format!("in voxels of {modality}")))?;
            values.push(f32::from_le_bytes(buf) as f64);
        }
        let values = min_max_normalize(&values);
        let t = Tensor::new(vec![d as usize, h as usize, w as usize], values, false)?;
        modalities.insert(modality, t);
    }
    let label = read_u32(&mut r, "label")?;
    let n_boxes = read_u32(&mut r, "box count")?;
    let mut lesion_boxes = Vec::with_capacity(n_boxes as usize);
    for _ in 0..n_boxes {
        let slice = read_u32(&mut r, "box slice")?;
        let x0 = read_u32(&mut r, "box x0")?;
        let y0 = read_u32(&mut r, "box y0")?;
        let x1 = read_u32(&mut r, "box x1")?;
        let y1 = read_u32(&mut r, "box y1")?;
        let cls = read_u32(&mut r, "box cls")?;
        if x1 <= x0 || y1 <= y0 {
            return Err(Error::EmptyBox);
        }
        lesion_boxes.push(LesionBox { slice, x0, y0, x1, y1, cls });
    }
    MultiModalVolume::new(modalities, label, lesion_boxes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn normalized_tensor(shape: Vec<usize>, seedish: u64) -> Tensor {
        let n: usize = shape.iter().product();
        let raw: Vec<f64> = (0..n)
            .map(|i| ((i as u64).wrapping_mul(2654435761).wrapping_add(seedish) % 997) as f64)
            .collect();
        // Stored volumes quantize through f32, so build values that survive
        // the round trip: normalize, then snap to f32.
        let vals: Vec<f64> =
            min_max_normalize(&raw).into_iter().map(|v| v as f32 as f64).collect();
        Tensor::new(shape, vals, false).unwrap()
    }

    fn sample_volume() -> MultiModalVolume {
        let mut m = BTreeMap::new();
        m.insert(Modality::T1, normalized_tensor(vec![4, 6, 5], 3));
        m.insert(Modality::Flair, normalized_tensor(vec![4, 6, 5], 11));
        MultiModalVolume::new(
            m,
            2,
            vec![LesionBox { slice: 1, x0: 1, y0: 2, x1: 4, y1: 5, cls: 2 }],
        )
        .unwrap()
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("v.mvol");
        let vol = sample_volume();
        save_volume(&vol, &path).unwrap();
        let back = load_volume(&path).unwrap();
        assert_eq!(back.label, vol.label);
        assert_eq!(back.lesion_boxes, vol.lesion_boxes);
        assert_eq!(back.modalities.len(), vol.modalities.len());
        for (m, t) in &vol.modalities {
            assert!(back.modalities[m].bit_eq(t), "modality {m} changed in round trip");
        }
    }

    #[test]
    fn bad_magic_is_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.mvol");
        std::fs::write(&path, b"NOTMVOL_WHATSOEVER").unwrap();
        assert!(matches!(load_volume(&path), Err(Error::BadMagic(_))));
    }

    #[test]
    fn truncated_file_is_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("v.mvol");
        save_volume(&sample_volume(), &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(load_volume(&path), Err(Error::TruncatedFile(_))));
    }

    #[test]
    fn mismatched_dims_across_modalities_are_rejected() {
        let mut m = BTreeMap::new();
        m.insert(Modality::T1, normalized_tensor(vec![4, 6, 5], 3));
        m.insert(Modality::T2, normalized_tensor(vec![4, 6, 6], 5));
        assert!(matches!(
            MultiModalVolume::new(m, 0, vec![]),
            Err(Error::InconsistentDims(_))
        ));
    }

    #[test]
    fn constant_modality_loads_as_zeros() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("c.mvol");
        let mut m = BTreeMap::new();
        m.insert(Modality::T1, Tensor::new(vec![2, 2, 2], vec![0.7; 8], false).unwrap());
        let vol = MultiModalVolume::new(m, 0, vec![]).unwrap();
        save_volume(&vol, &path).unwrap();
        let back = load_volume(&path).unwrap();
        assert!(back.modalities[&Modality::T1].data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn normalize_spans_unit_interval() {
        let got = min_max_normalize(&[2.0, 4.0, 6.0]);
        assert_eq!(got, vec![0.0, 0.5, 1.0]);
    }

    #[test]
    fn modality_names_round_trip() {
        for m in Modality::ALL {
            let back: Modality = m.as_str().parse().unwrap();
            assert_eq!(back, m);
        }
        assert!("T9".parse::<Modality>().is_err());
    }
}
