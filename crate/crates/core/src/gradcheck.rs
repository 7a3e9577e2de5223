//! Finite-difference verification of every backward pass, shared by the
//! `gradcheck` CLI command and the integration test suite.
//!
//! Each suite draws seeded random cases, projects the op's output through a
//! fixed random weighting to get a scalar, and compares the tape gradient
//! against central differences. Non-smooth inputs (pooling ties, hinge
//! boundaries, near-zero window norms, ReLU kinks inside blocks) are
//! rejection-sampled away, because no gradient checker is meaningful at a
//! kink. The euclidean-pooling backward also runs in its published
//! alternative form, which fails these checks by design; that suite is
//! reported as EXPECTED FAIL rather than a defect.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::fdiff::{finite_difference_grad, max_relative_error};
use crate::l2pool::{GradientMode, L2PoolConfig, DEFAULT_EPSILON};
use crate::layers::{BlockKind, ConvLayer, ResidualBlock};
use crate::pyramid::{bins, FeatureRegion, PyramidPoolMode, PyramidSpec};
use crate::tape::GradTape;
use crate::tensor::Tensor;

const FD_STEP: f64 = 1e-5;

/// Which suites to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scope {
    L2,
    Layers,
    Pyramid,
    All,
}

impl std::str::FromStr for Scope {
    type Err = crate::error::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l2" => Ok(Scope::L2),
            "layers" => Ok(Scope::Layers),
            "pyramid" => Ok(Scope::Pyramid),
            "all" => Ok(Scope::All),
            other => Err(crate::error::Error::BadConfig(format!(
                "unknown gradcheck scope {other:?} (expected l2, layers, pyramid or all)"
            ))),
        }
    }
}

/// Outcome of one op's suite.
#[derive(Debug, Clone)]
pub struct SuiteResult {
    pub op: String,
    pub cases: usize,
    pub failures: usize,
    pub max_rel_err: f64,
    /// True for the published-alternative gradient, whose failure is the
    /// documented outcome rather than a bug.
    pub expected_fail: bool,
}

impl SuiteResult {
    pub fn passed(&self) -> bool {
        if self.expected_fail {
            // The alternative form must fail nearly everywhere to count as
            // reproduced.
            self.failures * 100 >= self.cases * 95
        } else {
            self.failures == 0
        }
    }
}

fn sample_value(rng: &mut ChaCha8Rng) -> f64 {
    let mag = rng.gen_range(0.2..1.5);
    if rng.gen_bool(0.5) {
        mag
    } else {
        -mag
    }
}

fn sample_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>, requires_grad: bool) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| sample_value(rng)).collect();
    Tensor::new(shape, data, requires_grad).unwrap()
}

/// Fixed random projection so the scalar loss is sensitive to every output
/// coordinate with a distinct weight.
fn projection(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(0.5..1.5) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 }).collect()
}

fn project(out: &Tensor, weights: &[f64]) -> f64 {
    out.data().iter().zip(weights).map(|(v, w)| v * w).sum()
}

/// Runs one case: analytic gradient of `weights . op(x)` w.r.t. every tensor
/// in `inputs`, against central differences. Returns the worst relative
/// error across all checked tensors.
fn check_case<F>(inputs: &[&Tensor], weights: &[f64], f: F) -> Result<f64>
where
    F: Fn(&mut GradTape, &[&Tensor]) -> Result<Tensor>,
{
    let mut tape = GradTape::new();
    let out = f(&mut tape, inputs)?;
    let proj = Tensor::new(out.shape().to_vec(), weights.to_vec(), false)?;
    let weighted = tape.mul(&out, &proj)?;
    let loss = tape.sum(&weighted)?;
    let grads = tape.backward(&loss)?;

    let mut worst: f64 = 0.0;
    for (k, x) in inputs.iter().enumerate() {
        let analytic = grads.wrt(x);
        let fd = finite_difference_grad(
            |perturbed| {
                let mut t = GradTape::inference();
                let swapped: Vec<&Tensor> = inputs
                    .iter()
                    .enumerate()
                    .map(|(j, orig)| if j == k { perturbed } else { *orig })
                    .collect();
                let out = f(&mut t, &swapped)?;
                Ok(project(&out, weights))
            },
            x,
            FD_STEP,
        )?;
        worst = worst.max(max_relative_error(&analytic, &fd));
    }
    Ok(worst)
}

fn run_suite<G>(
    op: &str,
    seed: u64,
    cases: usize,
    tolerance: f64,
    expected_fail: bool,
    mut one_case: G,
) -> Result<SuiteResult>
where
    G: FnMut(&mut ChaCha8Rng) -> Result<f64>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = 0;
    let mut max_rel_err: f64 = 0.0;
    for _ in 0..cases {
        let err = one_case(&mut rng)?;
        max_rel_err = max_rel_err.max(err);
        if err >= tolerance {
            failures += 1;
        }
    }
    Ok(SuiteResult { op: op.to_string(), cases, failures, max_rel_err, expected_fail })
}

// ── smoothness guards ───────────────────────────────────────────────────────

/// All f x f window norms above the cutoff (the zero-norm subgradient point
/// is excluded from differencing by contract).
fn l2_windows_safe(x: &Tensor, f: usize, s: usize) -> bool {
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let data = x.data();
    for ch in 0..c {
        for oy in 0..(h - f) / s + 1 {
            for ox in 0..(w - f) / s + 1 {
                let mut ss = 0.0;
                for dy in 0..f {
                    for dx in 0..f {
                        let v = data[ch * h * w + (oy * s + dy) * w + (ox * s + dx)];
                        ss += v * v;
                    }
                }
                if ss.sqrt() < 1e-3 {
                    return false;
                }
            }
        }
    }
    true
}

/// Top-two gap inside every max-pool window comfortably exceeds the FD step.
fn max_windows_safe(x: &Tensor, f: usize, s: usize) -> bool {
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let data = x.data();
    for ch in 0..c {
        for oy in 0..(h - f) / s + 1 {
            for ox in 0..(w - f) / s + 1 {
                let mut best = f64::NEG_INFINITY;
                let mut second = f64::NEG_INFINITY;
                for dy in 0..f {
                    for dx in 0..f {
                        let v = data[ch * h * w + (oy * s + dy) * w + (ox * s + dx)];
                        if v > best {
                            second = best;
                            best = v;
                        } else if v > second {
                            second = v;
                        }
                    }
                }
                if f * f > 1 && best - second < 1e-3 {
                    return false;
                }
            }
        }
    }
    true
}

/// Same gap requirement for every pyramid cell of every level.
fn pyramid_cells_safe(x: &Tensor, region: &FeatureRegion, levels: &[usize]) -> bool {
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let data = x.data();
    for &g in levels {
        let ybins = bins(region.height(), g);
        let xbins = bins(region.width(), g);
        for ch in 0..c {
            for &(ys, ye) in &ybins {
                for &(xs, xe) in &xbins {
                    let mut best = f64::NEG_INFINITY;
                    let mut second = f64::NEG_INFINITY;
                    let mut count = 0;
                    for y in ys..ye {
                        for x_ in xs..xe {
                            let v = data[ch * h * w + (region.y0 + y) * w + (region.x0 + x_)];
                            count += 1;
                            if v > best {
                                second = best;
                                best = v;
                            } else if v > second {
                                second = v;
                            }
                        }
                    }
                    if count > 1 && best - second < 1e-3 {
                        return false;
                    }
                }
            }
        }
    }
    true
}

/// Pre-activation magnitudes inside a residual block stay away from the
/// ReLU kink for every internal nonlinearity.
fn block_relu_safe(block: &ResidualBlock, x: &Tensor) -> Result<bool> {
    let mut tape = GradTape::inference();
    let mut cur = x.clone();
    for (i, conv) in block.convs.iter().enumerate() {
        cur = conv.forward(&mut tape, &cur)?;
        if i + 1 < block.convs.len() {
            if cur.data().iter().any(|v| v.abs() < 1e-3) {
                return Ok(false);
            }
            cur = tape.relu(&cur)?;
        }
    }
    Ok(true)
}

fn resample<T>(rng: &mut ChaCha8Rng, mut gen: impl FnMut(&mut ChaCha8Rng) -> Result<(T, bool)>) -> Result<T> {
    for _ in 0..200 {
        let (v, ok) = gen(rng)?;
        if ok {
            return Ok(v);
        }
    }
    Err(crate::error::Error::BadConfig(
        "could not sample a smooth gradcheck case in 200 tries".into(),
    ))
}

// ── suites ──────────────────────────────────────────────────────────────────

fn l2_pool_suite(seed: u64, tolerance: f64, mode: GradientMode) -> Result<SuiteResult> {
    let name = match mode {
        GradientMode::Analytic => "l2_pool",
        GradientMode::PaperLiteral => "l2_pool[paper_literal]",
    };
    run_suite(name, seed, 100, tolerance, mode == GradientMode::PaperLiteral, |rng| {
        let f = rng.gen_range(1..=3usize);
        let s = rng.gen_range(1..=2usize);
        let c = rng.gen_range(1..=3usize);
        let h = rng.gen_range(f..=10usize);
        let w = rng.gen_range(f..=10usize);
        let normalized = rng.gen_bool(0.5);
        let x = resample(rng, |r| {
            let t = sample_tensor(r, vec![c, h, w], true);
            let ok = l2_windows_safe(&t, f, s);
            Ok((t, ok))
        })?;
        let cfg = L2PoolConfig {
            filter_size: f,
            stride: s,
            normalized,
            gradient_mode: mode,
            epsilon: DEFAULT_EPSILON,
        };
        let out_len = (((h - f) / s + 1) * ((w - f) / s + 1)) * c;
        let weights = projection(rng, out_len);
        check_case(&[&x], &weights, |tape, ins| tape.l2_pool(ins[0], &cfg))
    })
}

fn global_l2_pool_suite(seed: u64, tolerance: f64) -> Result<SuiteResult> {
    run_suite("global_l2_pool", seed, 100, tolerance, false, |rng| {
        let c = rng.gen_range(1..=4usize);
        let h = rng.gen_range(2..=8usize);
        let w = rng.gen_range(2..=8usize);
        let x = sample_tensor(rng, vec![c, h, w], true);
        let weights = projection(rng, c);
        check_case(&[&x], &weights, |tape, ins| tape.global_l2_pool(ins[0]))
    })
}

fn conv2d_suite(seed: u64, tolerance: f64) -> Result<SuiteResult> {
    run_suite("conv2d", seed, 100, tolerance, false, |rng| {
        let c_in = rng.gen_range(1..=3usize);
        let c_out = rng.gen_range(1..=3usize);
        let k = rng.gen_range(1..=3usize);
        let stride = rng.gen_range(1..=2usize);
        let padding = rng.gen_range(0..=1usize);
        let h = rng.gen_range(k.max(2)..=8usize);
        let w = rng.gen_range(k.max(2)..=8usize);
        let x = sample_tensor(rng, vec![c_in, h, w], true);
        let weight = sample_tensor(rng, vec![c_out, c_in, k, k], true);
        let bias = sample_tensor(rng, vec![c_out], true);
        let oh = (h + 2 * padding - k) / stride + 1;
        let ow = (w + 2 * padding - k) / stride + 1;
        let weights = projection(rng, c_out * oh * ow);
        check_case(&[&x, &weight, &bias], &weights, |tape, ins| {
            tape.conv2d(ins[0], ins[1], ins[2], stride, padding)
        })
    })
}

fn max_pool_suite(seed: u64, tolerance: f64) -> Result<SuiteResult> {
    run_suite("max_pool", seed, 100, tolerance, false, |rng| {
        let f = rng.gen_range(2..=3usize);
        let s = rng.gen_range(1..=2usize);
        let c = rng.gen_range(1..=3usize);
        let h = rng.gen_range(f..=9usize);
        let w = rng.gen_range(f..=9usize);
        let x = resample(rng, |r| {
            let t = sample_tensor(r, vec![c, h, w], true);
            let ok = max_windows_safe(&t, f, s);
            Ok((t, ok))
        })?;
        let out_len = (((h - f) / s + 1) * ((w - f) / s + 1)) * c;
        let weights = projection(rng, out_len);
        check_case(&[&x], &weights, |tape, ins| tape.max_pool(ins[0], f, s))
    })
}

fn residual_suite(seed: u64, tolerance: f64, kind: BlockKind) -> Result<SuiteResult> {
    let name = match kind {
        BlockKind::Vanilla => "residual_block",
        BlockKind::Dense => "residual_block[dense]",
    };
    run_suite(name, seed, 100, tolerance, false, |rng| {
        let c = rng.gen_range(1..=2usize);
        let h = rng.gen_range(3..=6usize);
        let w = rng.gen_range(3..=6usize);
        let (block, x) = resample(rng, |r| {
            let block = ResidualBlock::new(r, c, kind);
            let x = sample_tensor(r, vec![c, h, w], true);
            let ok = block_relu_safe(&block, &x)?;
            Ok(((block, x), ok))
        })?;
        let weights = projection(rng, c * h * w);
        // Check input plus every block parameter.
        let params: Vec<&Tensor> = block.params();
        let mut inputs = vec![&x];
        inputs.extend(params);
        check_case(&inputs, &weights, |tape, ins| {
            // Rebuild the block around the (possibly perturbed) parameters.
            let mut convs = Vec::new();
            let mut at = 1;
            for conv in &block.convs {
                convs.push(ConvLayer {
                    weight: ins[at].clone(),
                    bias: ins[at + 1].clone(),
                    stride: conv.stride,
                    padding: conv.padding,
                });
                at += 2;
            }
            let b = ResidualBlock { convs, kind: block.kind };
            b.forward(tape, ins[0])
        })
    })
}

fn pyramid_suite(seed: u64, tolerance: f64, mode: PyramidPoolMode) -> Result<SuiteResult> {
    let name = match mode {
        PyramidPoolMode::L2 => "pyramid_pool[l2]",
        PyramidPoolMode::Max => "pyramid_pool[max]",
    };
    run_suite(name, seed, 100, tolerance, false, |rng| {
        let c = rng.gen_range(1..=3usize);
        let h = rng.gen_range(6..=12usize);
        let w = rng.gen_range(6..=12usize);
        let spec = PyramidSpec { levels: vec![4, 2, 1], pool: mode };
        let (x, region) = resample(rng, |r| {
            let x = sample_tensor(r, vec![c, h, w], true);
            let x0 = r.gen_range(0..w - 1);
            let y0 = r.gen_range(0..h - 1);
            let x1 = r.gen_range(x0 + 1..=w);
            let y1 = r.gen_range(y0 + 1..=h);
            let region = FeatureRegion { x0, y0, x1, y1 };
            let ok = match mode {
                PyramidPoolMode::L2 => true,
                PyramidPoolMode::Max => pyramid_cells_safe(&x, &region, &spec.levels),
            };
            Ok(((x, region), ok))
        })?;
        let weights = projection(rng, spec.output_len(c));
        check_case(&[&x], &weights, |tape, ins| tape.pyramid_pool(ins[0], &region, &spec))
    })
}

fn softmax_ce_suite(seed: u64, tolerance: f64) -> Result<SuiteResult> {
    run_suite("softmax_cross_entropy", seed, 100, tolerance, false, |rng| {
        let n = rng.gen_range(1..=6usize);
        let k = rng.gen_range(2..=5usize);
        let logits = sample_tensor(rng, vec![n, k], true);
        let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
        check_case(&[&logits], &[1.0], |tape, ins| tape.softmax_cross_entropy(ins[0], &labels))
    })
}

fn hinge_suite(seed: u64, tolerance: f64) -> Result<SuiteResult> {
    run_suite("multiclass_hinge", seed, 100, tolerance, false, |rng| {
        let n = rng.gen_range(1..=6usize);
        let k = rng.gen_range(2..=5usize);
        let margin = [0.5, 1.0, 2.0][rng.gen_range(0..3)];
        let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
        let logits = resample(rng, |r| {
            let t = sample_tensor(r, vec![n, k], true);
            // Stay away from the hinge boundary margin + s_k - s_y == 0.
            let d = t.data();
            let ok = (0..n).all(|i| {
                (0..k).all(|j| {
                    j == labels[i]
                        || (margin + d[i * k + j] - d[i * k + labels[i]]).abs() > 1e-3
                })
            });
            Ok((t, ok))
        })?;
        check_case(&[&logits], &[1.0], |tape, ins| {
            tape.multiclass_hinge(ins[0], &labels, margin)
        })
    })
}

fn smooth_l1_suite(seed: u64, tolerance: f64) -> Result<SuiteResult> {
    run_suite("smooth_l1", seed, 100, tolerance, false, |rng| {
        let n = rng.gen_range(1..=6usize);
        let beta = [0.5, 1.0, 2.0][rng.gen_range(0..3)];
        let pred = sample_tensor(rng, vec![n, 4], true);
        let target = sample_tensor(rng, vec![n, 4], false);
        check_case(&[&pred], &[1.0], |tape, ins| tape.smooth_l1(ins[0], &target, beta))
    })
}

/// Runs the selected suites. The tolerance applies to the analytic checks;
/// the published-alternative suite counts a case as failed above 1e-2
/// regardless, since documenting that failure is its purpose.
pub fn run_gradcheck(scope: Scope, seed: u64, tolerance: f64) -> Result<Vec<SuiteResult>> {
    let mut out = Vec::new();
    if matches!(scope, Scope::L2 | Scope::All) {
        out.push(l2_pool_suite(seed, tolerance, GradientMode::Analytic)?);
        out.push(global_l2_pool_suite(seed.wrapping_add(1), tolerance)?);
        out.push(l2_pool_suite(seed.wrapping_add(2), 1e-2, GradientMode::PaperLiteral)?);
    }
    if matches!(scope, Scope::Layers | Scope::All) {
        out.push(conv2d_suite(seed.wrapping_add(3), tolerance)?);
        out.push(max_pool_suite(seed.wrapping_add(4), tolerance)?);
        out.push(residual_suite(seed.wrapping_add(5), tolerance, BlockKind::Vanilla)?);
        out.push(residual_suite(seed.wrapping_add(6), tolerance, BlockKind::Dense)?);
        out.push(softmax_ce_suite(seed.wrapping_add(7), tolerance)?);
        out.push(hinge_suite(seed.wrapping_add(8), tolerance)?);
        out.push(smooth_l1_suite(seed.wrapping_add(9), tolerance)?);
    }
    if matches!(scope, Scope::Pyramid | Scope::All) {
        out.push(pyramid_suite(seed.wrapping_add(10), tolerance, PyramidPoolMode::L2)?);
        out.push(pyramid_suite(seed.wrapping_add(11), tolerance, PyramidPoolMode::Max)?);
    }
    Ok(out)
}
