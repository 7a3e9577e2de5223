//! The two networks the CLI trains, plus the checkpoint format.
//!
//! Both are deliberately small: the classification net runs on 64x64 fused
//! slices and the detection extractor keeps an overall feature stride of 4 so
//! that proposal boxes map onto a usable feature grid. Pooling everywhere is
//! switchable between the euclidean-norm unit and plain max pooling, which is
//! what the `ablate-pooling` command compares.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::l2pool::{GradientMode, L2PoolConfig, DEFAULT_EPSILON};
use crate::layers::{BlockKind, ConvLayer, DenseLayer, ResidualBlock};
use crate::pyramid::{FeatureRegion, PyramidPoolMode, PyramidSpec};
use crate::report::write_atomic;
use crate::synth::NUM_CLASSES;
use crate::tape::GradTape;
use crate::tensor::Tensor;

/// Which pooling operator the networks use at every downsampling point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolKind {
    L2,
    Max,
}

impl PoolKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            PoolKind::L2 => "l2",
            PoolKind::Max => "max",
        }
    }
}

impl FromStr for PoolKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l2" => Ok(PoolKind::L2),
            "max" => Ok(PoolKind::Max),
            other => Err(Error::BadConfig(format!(
                "unknown pooling {other:?} (expected l2 or max)"
            ))),
        }
    }
}

fn pool_step(
    tape: &mut GradTape,
    x: &Tensor,
    pooling: PoolKind,
    mode: GradientMode,
) -> Result<Tensor> {
    match pooling {
        // Normalized (root-mean-square) windows keep activation magnitudes
        // roughly constant through the stack; the raw norm doubles them at
        // every 2x2 stage, which destabilises SGD on the dense head.
        PoolKind::L2 => tape.l2_pool(
            x,
            &L2PoolConfig {
                filter_size: 2,
                stride: 2,
                normalized: true,
                gradient_mode: mode,
                epsilon: DEFAULT_EPSILON,
            },
        ),
        PoolKind::Max => tape.max_pool(x, 2, 2),
    }
}

fn global_pool_step(tape: &mut GradTape, x: &Tensor, pooling: PoolKind) -> Result<Tensor> {
    match pooling {
        PoolKind::L2 => {
            let (h, w) = (x.shape()[1], x.shape()[2]);
            let pooled = tape.global_l2_pool(x)?;
            // Same conditioning as above: report the per-channel rms rather
            // than a norm that grows with the spatial extent.
            tape.scale(&pooled, 1.0 / ((h * w) as f64).sqrt())
        }
        PoolKind::Max => tape.global_max_pool(x),
    }
}

// ── classification ─────────────────────────────────────────────────────────

/// Slice classifier: conv stem, norm-pool, two residual blocks with a
/// widening conv between them, global norm-pool, dense head over the five
/// classes. Input slices are [C,64,64].
#[derive(Debug, Clone)]
pub struct ClassifyNet {
    pub stem: ConvLayer,
    pub block1: ResidualBlock,
    pub widen: ConvLayer,
    pub block2: ResidualBlock,
    pub head: DenseLayer,
    pub pooling: PoolKind,
    pub gradient_mode: GradientMode,
    pub in_channels: usize,
}

impl ClassifyNet {
    pub fn new(
        rng: &mut ChaCha8Rng,
        in_channels: usize,
        pooling: PoolKind,
        gradient_mode: GradientMode,
    ) -> Self {
        Self {
            stem: ConvLayer::new(rng, in_channels, 8, 3, 1, 1),
            block1: ResidualBlock::new(rng, 8, BlockKind::Vanilla),
            widen: ConvLayer::new(rng, 8, 16, 3, 1, 1),
            block2: ResidualBlock::new(rng, 16, BlockKind::Vanilla),
            head: DenseLayer::new(rng, 16, NUM_CLASSES),
            pooling,
            gradient_mode,
            in_channels,
        }
    }

    /// Per-image feature vector [16].
    fn features(&self, tape: &mut GradTape, image: &Tensor) -> Result<Tensor> {
        let x = self.stem.forward(tape, image)?;
        let x = tape.relu(&x)?;
        let x = pool_step(tape, &x, self.pooling, self.gradient_mode)?;
        let x = self.block1.forward(tape, &x)?;
        let x = tape.relu(&x)?;
        let x = pool_step(tape, &x, self.pooling, self.gradient_mode)?;
        let x = self.widen.forward(tape, &x)?;
        let x = tape.relu(&x)?;
        let x = self.block2.forward(tape, &x)?;
        let x = tape.relu(&x)?;
        global_pool_step(tape, &x, self.pooling)
    }

    /// Batch of [C,H,W] images to logits [N,5].
    pub fn forward(&self, tape: &mut GradTape, images: &[Tensor]) -> Result<Tensor> {
        let feats = images
            .iter()
            .map(|im| self.features(tape, im))
            .collect::<Result<Vec<_>>>()?;
        let x = tape.stack_rows(&feats)?;
        self.head.forward(tape, &x)
    }

    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![
            ("stem.weight".to_string(), &self.stem.weight),
            ("stem.bias".to_string(), &self.stem.bias),
        ];
        for (i, c) in self.block1.convs.iter().enumerate() {
            out.push((format!("block1.conv{i}.weight"), &c.weight));
            out.push((format!("block1.conv{i}.bias"), &c.bias));
        }
        out.push(("widen.weight".to_string(), &self.widen.weight));
        out.push(("widen.bias".to_string(), &self.widen.bias));
        for (i, c) in self.block2.convs.iter().enumerate() {
            out.push((format!("block2.conv{i}.weight"), &c.weight));
            out.push((format!("block2.conv{i}.bias"), &c.bias));
        }
        out.push(("head.weight".to_string(), &self.head.weight));
        out.push(("head.bias".to_string(), &self.head.bias));
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = self.stem.params_mut();
        out.extend(self.block1.params_mut());
        out.extend(self.widen.params_mut());
        out.extend(self.block2.params_mut());
        out.extend(self.head.params_mut());
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let manifest = Manifest {
            kind: "classify".to_string(),
            in_channels: self.in_channels,
            pooling: self.pooling.as_str().to_string(),
            gradient_mode: self.gradient_mode.as_str().to_string(),
            num_classes: NUM_CLASSES,
            pyramid_levels: Vec::new(),
            params: self
                .named_params()
                .iter()
                .map(|(n, t)| (n.clone(), t.shape().to_vec()))
                .collect(),
        };
        write_checkpoint(path, &manifest, &self.named_params())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (manifest, tensors) = read_checkpoint(path)?;
        if manifest.kind != "classify" {
            return Err(Error::CheckpointMismatch(format!(
                "expected a classify checkpoint, found kind {:?}",
                manifest.kind
            )));
        }
        let pooling = PoolKind::from_str(&manifest.pooling)?;
        let gradient_mode = GradientMode::from_str(&manifest.gradient_mode)?;
        let mut rng = rand::SeedableRng::seed_from_u64(0);
        let mut net = ClassifyNet::new(&mut rng, manifest.in_channels, pooling, gradient_mode);
        install_params(net.params_mut(), &manifest, tensors)?;
        Ok(net)
    }
}

// ── detection ───────────────────────────────────────────────────────────────

/// Overall downsampling factor of the detection feature extractor.
pub const DETECT_FEATURE_STRIDE: usize = 4;
/// Channels of the detection feature map fed to pyramid pooling.
pub const DETECT_FEATURE_CHANNELS: usize = 32;

/// Proposal-based detector: four conv stages with a norm-pool after the
/// second and fourth (feature stride 4), pyramid pooling over each proposal,
/// one shared dense layer, and two sibling heads — class scores and box
/// regression offsets.
#[derive(Debug, Clone)]
pub struct DetectNet {
    pub conv1: ConvLayer,
    pub conv2: ConvLayer,
    pub conv3: ConvLayer,
    pub conv4: ConvLayer,
    pub fc: DenseLayer,
    pub cls_head: DenseLayer,
    pub bbox_head: DenseLayer,
    pub pyramid: PyramidSpec,
    pub pooling: PoolKind,
    pub gradient_mode: GradientMode,
    pub in_channels: usize,
}

impl DetectNet {
    pub fn new(
        rng: &mut ChaCha8Rng,
        in_channels: usize,
        pooling: PoolKind,
        gradient_mode: GradientMode,
    ) -> Self {
        Self::with_pyramid(rng, in_channels, pooling, gradient_mode, vec![4, 2, 1])
            .expect("default pyramid levels are valid")
    }

    /// Like [`DetectNet::new`] but with caller-chosen pyramid grid sizes;
    /// the fc width follows the resulting cell count.
    pub fn with_pyramid(
        rng: &mut ChaCha8Rng,
        in_channels: usize,
        pooling: PoolKind,
        gradient_mode: GradientMode,
        levels: Vec<usize>,
    ) -> Result<Self> {
        let pyramid = PyramidSpec {
            levels,
            pool: match pooling {
                PoolKind::L2 => PyramidPoolMode::L2,
                PoolKind::Max => PyramidPoolMode::Max,
            },
        };
        pyramid.validate()?;
        let fc_in = pyramid.cells() * DETECT_FEATURE_CHANNELS;
        Ok(Self {
            conv1: ConvLayer::new(rng, in_channels, 8, 3, 1, 1),
            conv2: ConvLayer::new(rng, 8, 16, 3, 1, 1),
            conv3: ConvLayer::new(rng, 16, 24, 3, 1, 1),
            conv4: ConvLayer::new(rng, 24, DETECT_FEATURE_CHANNELS, 3, 1, 1),
            fc: DenseLayer::new(rng, fc_in, 64),
            cls_head: DenseLayer::new(rng, 64, 2),
            bbox_head: DenseLayer::new(rng, 64, 4),
            pyramid,
            pooling,
            gradient_mode,
            in_channels,
        })
    }

    /// Image [C,H,W] to feature map [32, H/4, W/4]. H and W must be
    /// divisible by 4.
    pub fn extract_features(&self, tape: &mut GradTape, image: &Tensor) -> Result<Tensor> {
        let x = self.conv1.forward(tape, image)?;
        let x = tape.relu(&x)?;
        let x = self.conv2.forward(tape, &x)?;
        let x = tape.relu(&x)?;
        let x = pool_step(tape, &x, self.pooling, self.gradient_mode)?;
        let x = self.conv3.forward(tape, &x)?;
        let x = tape.relu(&x)?;
        let x = self.conv4.forward(tape, &x)?;
        let x = tape.relu(&x)?;
        pool_step(tape, &x, self.pooling, self.gradient_mode)
    }

    /// Pools each proposal region off the shared feature map and runs the
    /// sibling heads. Returns (class logits [P,2], box offsets [P,4]).
    pub fn forward_proposals(
        &self,
        tape: &mut GradTape,
        feature: &Tensor,
        regions: &[FeatureRegion],
    ) -> Result<(Tensor, Tensor)> {
        if regions.is_empty() {
            return Err(Error::BadConfig("no proposal regions to pool".into()));
        }
        let pooled = regions
            .iter()
            .map(|r| tape.pyramid_pool(feature, r, &self.pyramid))
            .collect::<Result<Vec<_>>>()?;
        let x = tape.stack_rows(&pooled)?;
        let x = self.fc.forward(tape, &x)?;
        let x = tape.relu(&x)?;
        let cls = self.cls_head.forward(tape, &x)?;
        let bbox = self.bbox_head.forward(tape, &x)?;
        Ok((cls, bbox))
    }

    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        vec![
            ("conv1.weight".to_string(), &self.conv1.weight),
            ("conv1.bias".to_string(), &self.conv1.bias),
            ("conv2.weight".to_string(), &self.conv2.weight),
            ("conv2.bias".to_string(), &self.conv2.bias),
            ("conv3.weight".to_string(), &self.conv3.weight),
            ("conv3.bias".to_string(), &self.conv3.bias),
            ("conv4.weight".to_string(), &self.conv4.weight),
            ("conv4.bias".to_string(), &self.conv4.bias),
            ("fc.weight".to_string(), &self.fc.weight),
            ("fc.bias".to_string(), &self.fc.bias),
            ("cls_head.weight".to_string(), &self.cls_head.weight),
            ("cls_head.bias".to_string(), &self.cls_head.bias),
            ("bbox_head.weight".to_string(), &self.bbox_head.weight),
            ("bbox_head.bias".to_string(), &self.bbox_head.bias),
        ]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = self.conv1.params_mut();
        out.extend(self.conv2.params_mut());
        out.extend(self.conv3.params_mut());
        out.extend(self.conv4.params_mut());
        out.extend(self.fc.params_mut());
        out.extend(self.cls_head.params_mut());
        out.extend(self.bbox_head.params_mut());
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let manifest = Manifest {
            kind: "detect".to_string(),
            in_channels: self.in_channels,
            pooling: self.pooling.as_str().to_string(),
            gradient_mode: self.gradient_mode.as_str().to_string(),
            num_classes: 2,
            pyramid_levels: self.pyramid.levels.clone(),
            params: self
                .named_params()
                .iter()
                .map(|(n, t)| (n.clone(), t.shape().to_vec()))
                .collect(),
        };
        write_checkpoint(path, &manifest, &self.named_params())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (manifest, tensors) = read_checkpoint(path)?;
        if manifest.kind != "detect" {
            return Err(Error::CheckpointMismatch(format!(
                "expected a detect checkpoint, found kind {:?}",
                manifest.kind
            )));
        }
        let pooling = PoolKind::from_str(&manifest.pooling)?;
        let gradient_mode = GradientMode::from_str(&manifest.gradient_mode)?;
        if manifest.pyramid_levels.is_empty() {
            return Err(Error::CheckpointMismatch(
                "detect manifest lists no pyramid levels".into(),
            ));
        }
        let mut rng = rand::SeedableRng::seed_from_u64(0);
        let mut net = DetectNet::with_pyramid(
            &mut rng,
            manifest.in_channels,
            pooling,
            gradient_mode,
            manifest.pyramid_levels.clone(),
        )?;
        install_params(net.params_mut(), &manifest, tensors)?;
        Ok(net)
    }
}

// ── checkpoint format ───────────────────────────────────────────────────────

const CKPT_MAGIC: &str = "L2NETCKPT1";

/// First-line-after-magic JSON header describing the network so a loader can
/// rebuild the topology before installing weights.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub kind: String,
    pub in_channels: usize,
    pub pooling: String,
    pub gradient_mode: String,
    pub num_classes: usize,
    pub pyramid_levels: Vec<usize>,
    pub params: Vec<(String, Vec<usize>)>,
}

fn write_checkpoint(path: &Path, manifest: &Manifest, params: &[(String, &Tensor)]) -> Result<()> {
    let mut text = String::new();
    text.push_str(CKPT_MAGIC);
    text.push('\n');
    let header = serde_json::to_string(manifest)
        .map_err(|e| std::io::Error::other(e.to_string()))?;
    text.push_str(&header);
    text.push('\n');
    for (name, tensor) in params {
        let _ = writeln!(text, "PARAM {name}");
        text.push_str(&tensor.to_text());
    }
    write_atomic(path, text.as_bytes())
}

/// Parses a checkpoint into its manifest and named parameter tensors,
/// validating the magic line, the parameter count, and every name and shape
/// against the manifest.
pub fn read_checkpoint(path: &Path) -> Result<(Manifest, Vec<(String, Tensor)>)> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    match lines.next() {
        Some(CKPT_MAGIC) => {}
        _ => return Err(Error::BadMagic(path.display().to_string())),
    }
    let header = lines
        .next()
        .ok_or_else(|| Error::CheckpointMismatch("missing manifest line".into()))?;
    let manifest: Manifest = serde_json::from_str(header)
        .map_err(|e| Error::CheckpointMismatch(format!("bad manifest: {e}")))?;
    let mut tensors = Vec::new();
    while let Some(line) = lines.next() {
        if line.is_empty() {
            continue;
        }
        let name = line
            .strip_prefix("PARAM ")
            .ok_or_else(|| Error::CheckpointMismatch(format!("expected PARAM line, got {line:?}")))?;
        let shape_line = lines
            .next()
            .ok_or_else(|| Error::CheckpointMismatch(format!("{name}: missing shape line")))?;
        let data_line = lines
            .next()
            .ok_or_else(|| Error::CheckpointMismatch(format!("{name}: missing data line")))?;
        let tensor = Tensor::from_text(&format!("{shape_line}\n{data_line}\n"), true)
            .map_err(|e| Error::CheckpointMismatch(format!("{name}: {e}")))?;
        tensors.push((name.to_string(), tensor));
    }
    if tensors.len() != manifest.params.len() {
        return Err(Error::CheckpointMismatch(format!(
            "manifest lists {} parameters, file holds {}",
            manifest.params.len(),
            tensors.len()
        )));
    }
    for ((name, tensor), (m_name, m_shape)) in tensors.iter().zip(&manifest.params) {
        if name != m_name || tensor.shape() != m_shape.as_slice() {
            return Err(Error::CheckpointMismatch(format!(
                "parameter {name} {:?} does not match manifest entry {m_name} {m_shape:?}",
                tensor.shape()
            )));
        }
    }
    Ok((manifest, tensors))
}

fn install_params(
    slots: Vec<&mut Tensor>,
    manifest: &Manifest,
    tensors: Vec<(String, Tensor)>,
) -> Result<()> {
    if slots.len() != tensors.len() {
        return Err(Error::CheckpointMismatch(format!(
            "network has {} parameters, checkpoint holds {}",
            slots.len(),
            tensors.len()
        )));
    }
    for (slot, ((name, tensor), (_, m_shape))) in
        slots.into_iter().zip(tensors.into_iter().zip(&manifest.params))
    {
        if slot.shape() != m_shape.as_slice() {
            return Err(Error::CheckpointMismatch(format!(
                "parameter {name}: checkpoint shape {m_shape:?} vs network shape {:?}",
                slot.shape()
            )));
        }
        *slot = tensor;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn image(c: usize, h: usize, w: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..c * h * w)
            .map(|_| rand::Rng::gen_range(&mut rng, 0.0..1.0))
            .collect();
        Tensor::new(vec![c, h, w], data, false).unwrap()
    }

    #[test]
    fn classify_forward_shape_and_determinism() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = ClassifyNet::new(&mut rng, 3, PoolKind::L2, GradientMode::Analytic);
        let imgs = vec![image(3, 64, 64, 1), image(3, 64, 64, 2)];
        let mut tape = GradTape::new();
        let logits = net.forward(&mut tape, &imgs).unwrap();
        assert_eq!(logits.shape(), &[2, NUM_CLASSES]);
        let mut tape2 = GradTape::new();
        let logits2 = net.forward(&mut tape2, &imgs).unwrap();
        assert!(logits.bit_eq(&logits2));
    }

    #[test]
    fn classify_gradients_reach_every_parameter() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = ClassifyNet::new(&mut rng, 3, PoolKind::L2, GradientMode::Analytic);
        let imgs = vec![image(3, 64, 64, 9)];
        let mut tape = GradTape::new();
        let logits = net.forward(&mut tape, &imgs).unwrap();
        let loss = tape.softmax_cross_entropy(&logits, &[2]).unwrap();
        let grads = tape.backward(&loss).unwrap();
        for (name, p) in net.named_params() {
            let g = grads.wrt(p);
            assert!(
                g.data().iter().any(|v| *v != 0.0),
                "no gradient reached {name}"
            );
        }
    }

    #[test]
    fn detect_feature_stride_is_four() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = DetectNet::new(&mut rng, 4, PoolKind::L2, GradientMode::Analytic);
        let img = image(4, 64, 64, 11);
        let mut tape = GradTape::inference();
        let f = net.extract_features(&mut tape, &img).unwrap();
        assert_eq!(f.shape(), &[DETECT_FEATURE_CHANNELS, 16, 16]);
    }

    #[test]
    fn detect_heads_have_sibling_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let net = DetectNet::new(&mut rng, 3, PoolKind::Max, GradientMode::Analytic);
        let img = image(3, 32, 32, 12);
        let mut tape = GradTape::new();
        let f = net.extract_features(&mut tape, &img).unwrap();
        let regions = vec![
            FeatureRegion { x0: 0, y0: 0, x1: 8, y1: 8 },
            FeatureRegion { x0: 2, y0: 3, x1: 5, y1: 7 },
            FeatureRegion { x0: 0, y0: 0, x1: 1, y1: 1 },
        ];
        let (cls, bbox) = net.forward_proposals(&mut tape, &f, &regions).unwrap();
        assert_eq!(cls.shape(), &[3, 2]);
        assert_eq!(bbox.shape(), &[3, 4]);
    }

    #[test]
    fn classify_checkpoint_round_trips_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let net = ClassifyNet::new(&mut rng, 3, PoolKind::L2, GradientMode::Analytic);
        net.save(&path).unwrap();
        let back = ClassifyNet::load(&path).unwrap();
        for ((n1, t1), (n2, t2)) in net.named_params().iter().zip(back.named_params()) {
            assert_eq!(*n1, n2);
            assert!(t1.bit_eq(t2), "{n1} changed across save/load");
        }
        // Loaded net computes the same logits.
        let imgs = vec![image(3, 64, 64, 21)];
        let mut ta = GradTape::inference();
        let a = net.forward(&mut ta, &imgs).unwrap();
        let mut tb = GradTape::inference();
        let b = back.forward(&mut tb, &imgs).unwrap();
        assert!(a.bit_eq(&b));
    }

    #[test]
    fn detect_checkpoint_round_trips_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("det.ckpt");
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let net = DetectNet::new(&mut rng, 4, PoolKind::L2, GradientMode::Analytic);
        net.save(&path).unwrap();
        let back = DetectNet::load(&path).unwrap();
        for ((n1, t1), (n2, t2)) in net.named_params().iter().zip(back.named_params()) {
            assert_eq!(*n1, n2);
            assert!(t1.bit_eq(t2), "{n1} changed across save/load");
        }
    }

    #[test]
    fn truncated_checkpoint_is_a_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let net = ClassifyNet::new(&mut rng, 3, PoolKind::L2, GradientMode::Analytic);
        net.save(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let cut = text.len() * 2 / 3;
        std::fs::write(&path, &text[..cut]).unwrap();
        assert!(matches!(
            ClassifyNet::load(&path),
            Err(Error::CheckpointMismatch(_))
        ));
    }

    #[test]
    fn wrong_kind_is_a_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let net = DetectNet::new(&mut rng, 3, PoolKind::L2, GradientMode::Analytic);
        net.save(&path).unwrap();
        assert!(matches!(
            ClassifyNet::load(&path),
            Err(Error::CheckpointMismatch(_))
        ));
    }

    #[test]
    fn bad_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        std::fs::write(&path, "NOTACKPT\n{}\n").unwrap();
        assert!(matches!(ClassifyNet::load(&path), Err(Error::BadMagic(_))));
    }
}
