//! Network building blocks: 2-d convolution, max pooling, dense layers and
//! residual blocks. All forward passes are tape ops so gradients flow to both
//! activations and parameters.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tape::GradTape;
use crate::tensor::Tensor;

fn require_chw(t: &Tensor, what: &str) -> Result<(usize, usize, usize)> {
    match t.shape() {
        [c, h, w] => Ok((*c, *h, *w)),
        other => Err(Error::ShapeMismatch(format!(
            "{what} expects a [C,H,W] tensor, got {other:?}"
        ))),
    }
}

fn conv_out_extent(extent: usize, k: usize, stride: usize, padding: usize) -> Result<usize> {
    let padded = extent + 2 * padding;
    if padded < k {
        return Err(Error::WindowLargerThanInput { filter: k, extent: padded });
    }
    Ok((padded - k) / stride + 1)
}

/// Output positions o for which `o*stride + k_off - padding` lands inside
/// `[0, in_extent)`, as a half-open range clamped to `[0, out_extent)`.
fn valid_out_range(
    k_off: usize,
    padding: usize,
    stride: usize,
    in_extent: usize,
    out_extent: usize,
) -> (usize, usize) {
    let lo = if k_off >= padding { 0 } else { (padding - k_off).div_ceil(stride) };
    let hi = match (in_extent - 1 + padding).checked_sub(k_off) {
        Some(top) => (top / stride + 1).min(out_extent),
        None => 0,
    };
    (lo.min(out_extent), hi)
}

#[allow(clippy::too_many_arguments)]
fn conv_forward_data(
    x: &[f64],
    (ci, h, w): (usize, usize, usize),
    wt: &[f64],
    bias: &[f64],
    co: usize,
    k: usize,
    stride: usize,
    padding: usize,
) -> (usize, usize, Vec<f64>) {
    let oh = (h + 2 * padding - k) / stride + 1;
    let ow = (w + 2 * padding - k) / stride + 1;
    // Accumulate one shifted row at a time so the hot loops run over
    // contiguous slices instead of re-deriving padded indices per element.
    let mut out = vec![0.0; co * oh * ow];
    for o in 0..co {
        let plane = &mut out[o * oh * ow..(o + 1) * oh * ow];
        plane.fill(bias[o]);
        for c in 0..ci {
            let xplane = &x[c * h * w..(c + 1) * h * w];
            for ky in 0..k {
                let (y_lo, y_hi) = valid_out_range(ky, padding, stride, h, oh);
                for kx in 0..k {
                    let (x_lo, x_hi) = valid_out_range(kx, padding, stride, w, ow);
                    if x_lo >= x_hi {
                        continue;
                    }
                    let wv = wt[((o * ci + c) * k + ky) * k + kx];
                    for y in y_lo..y_hi {
                        let ih = y * stride + ky - padding;
                        let xrow = &xplane[ih * w..(ih + 1) * w];
                        let orow = &mut plane[y * ow..(y + 1) * ow];
                        if stride == 1 {
                            let off = x_lo + kx - padding;
                            let src = &xrow[off..off + (x_hi - x_lo)];
                            for (dst, s) in orow[x_lo..x_hi].iter_mut().zip(src) {
                                *dst += wv * s;
                            }
                        } else {
                            for (x_, dst) in orow[x_lo..x_hi].iter_mut().enumerate() {
                                *dst += wv * xrow[(x_ + x_lo) * stride + kx - padding];
                            }
                        }
                    }
                }
            }
        }
    }
    (oh, ow, out)
}

impl GradTape {
    /// 2-d convolution: input [C_in,H,W], weight [C_out,C_in,k,k],
    /// bias [C_out] -> [C_out,H',W'] with H' = (H + 2p - k)/s + 1.
    pub fn conv2d(
        &mut self,
        input: &Tensor,
        weight: &Tensor,
        bias: &Tensor,
        stride: usize,
        padding: usize,
    ) -> Result<Tensor> {
        let (ci, h, w) = require_chw(input, "conv2d")?;
        let (co, wci, k) = match weight.shape() {
            [co, wci, k, k2] if k == k2 => (*co, *wci, *k),
            other => {
                return Err(Error::ShapeMismatch(format!(
                    "conv2d weight must be [C_out,C_in,k,k], got {other:?}"
                )))
            }
        };
        if wci != ci {
            return Err(Error::ShapeMismatch(format!(
                "conv2d weight expects {wci} input channels, input has {ci}"
            )));
        }
        if bias.shape() != [co] {
            return Err(Error::ShapeMismatch(format!(
                "conv2d bias must be [{co}], got {:?}",
                bias.shape()
            )));
        }
        if stride < 1 {
            return Err(Error::BadConfig("conv2d stride must be >= 1".into()));
        }
        let oh = conv_out_extent(h, k, stride, padding)?;
        let ow = conv_out_extent(w, k, stride, padding)?;
        let (_, _, out) = conv_forward_data(
            input.data(),
            (ci, h, w),
            weight.data(),
            bias.data(),
            co,
            k,
            stride,
            padding,
        );
        let requires = input.requires_grad() || weight.requires_grad() || bias.requires_grad();
        let (xc, wc, bc) = (input.clone(), weight.clone(), bias.clone());
        self.emit(vec![co, oh, ow], out, requires, move || {
            Box::new(move |g, store| {
                // d_bias
                if let Some(slot) = store.slot(&bc) {
                    for o in 0..co {
                        let mut acc = 0.0;
                        for i in 0..oh * ow {
                            acc += g[o * oh * ow + i];
                        }
                        slot[o] += acc;
                    }
                }
                // d_weight: each kernel tap is a dot product between the
                // upstream plane and the correspondingly shifted input rows.
                if let Some(slot) = store.slot(&wc) {
                    let x = xc.data();
                    for o in 0..co {
                        let gplane = &g[o * oh * ow..(o + 1) * oh * ow];
                        for c in 0..ci {
                            let xplane = &x[c * h * w..(c + 1) * h * w];
                            for ky in 0..k {
                                let (y_lo, y_hi) = valid_out_range(ky, padding, stride, h, oh);
                                for kx in 0..k {
                                    let (x_lo, x_hi) =
                                        valid_out_range(kx, padding, stride, w, ow);
                                    let mut acc = 0.0;
                                    for y in y_lo..y_hi {
                                        let ih = y * stride + ky - padding;
                                        let grow = &gplane[y * ow..(y + 1) * ow];
                                        let xrow = &xplane[ih * w..(ih + 1) * w];
                                        if stride == 1 && x_lo < x_hi {
                                            let off = x_lo + kx - padding;
                                            let src = &xrow[off..off + (x_hi - x_lo)];
                                            for (gv, s) in grow[x_lo..x_hi].iter().zip(src) {
                                                acc += gv * s;
                                            }
                                        } else {
                                            for x_ in x_lo..x_hi {
                                                acc += grow[x_]
                                                    * xrow[x_ * stride + kx - padding];
                                            }
                                        }
                                    }
                                    slot[((o * ci + c) * k + ky) * k + kx] += acc;
                                }
                            }
                        }
                    }
                }
                // d_input: scatter each kernel tap back as a scaled copy of
                // the upstream rows, mirroring the forward accumulation.
                if let Some(slot) = store.slot(&xc) {
                    let wt = wc.data();
                    for o in 0..co {
                        let gplane = &g[o * oh * ow..(o + 1) * oh * ow];
                        for c in 0..ci {
                            let splane = &mut slot[c * h * w..(c + 1) * h * w];
                            for ky in 0..k {
                                let (y_lo, y_hi) = valid_out_range(ky, padding, stride, h, oh);
                                for kx in 0..k {
                                    let (x_lo, x_hi) =
                                        valid_out_range(kx, padding, stride, w, ow);
                                    if x_lo >= x_hi {
                                        continue;
                                    }
                                    let wv = wt[((o * ci + c) * k + ky) * k + kx];
                                    for y in y_lo..y_hi {
                                        let ih = y * stride + ky - padding;
                                        let grow = &gplane[y * ow..(y + 1) * ow];
                                        let srow = &mut splane[ih * w..(ih + 1) * w];
                                        if stride == 1 {
                                            let off = x_lo + kx - padding;
                                            let dst = &mut srow[off..off + (x_hi - x_lo)];
                                            for (d, gv) in dst.iter_mut().zip(&grow[x_lo..x_hi])
                                            {
                                                *d += wv * gv;
                                            }
                                        } else {
                                            for x_ in x_lo..x_hi {
                                                srow[x_ * stride + kx - padding] +=
                                                    wv * grow[x_];
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            })
        })
    }

    /// Max pooling over f x f windows. Ties route the gradient to the first
    /// maximal element in row-major window order.
    pub fn max_pool(
        &mut self,
        input: &Tensor,
        filter_size: usize,
        stride: usize,
    ) -> Result<Tensor> {
        let (c, h, w) = require_chw(input, "max_pool")?;
        if filter_size < 1 || stride < 1 {
            return Err(Error::BadConfig(
                "max_pool filter_size and stride must be >= 1".into(),
            ));
        }
        if h < filter_size || w < filter_size {
            return Err(Error::WindowLargerThanInput {
                filter: filter_size,
                extent: h.min(w),
            });
        }
        let oh = (h - filter_size) / stride + 1;
        let ow = (w - filter_size) / stride + 1;
        let data = input.data();
        let mut out = Vec::with_capacity(c * oh * ow);
        let mut argmax = Vec::with_capacity(c * oh * ow);
        for ch in 0..c {
            let plane = &data[ch * h * w..(ch + 1) * h * w];
            for y in 0..oh {
                for x in 0..ow {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_at = 0usize;
                    for dy in 0..filter_size {
                        for dx in 0..filter_size {
                            let at = (y * stride + dy) * w + (x * stride + dx);
                            if plane[at] > best {
                                best = plane[at];
                                best_at = at;
                            }
                        }
                    }
                    out.push(best);
                    argmax.push(ch * h * w + best_at);
                }
            }
        }
        let inputc = input.clone();
        self.emit(vec![c, oh, ow], out, input.requires_grad(), move || {
            Box::new(move |g, store| {
                if let Some(slot) = store.slot(&inputc) {
                    for (i, &at) in argmax.iter().enumerate() {
                        slot[at] += g[i];
                    }
                }
            })
        })
    }

    /// Per-channel spatial maximum, [C,H,W] -> [C]. Same tie rule as
    /// [`GradTape::max_pool`].
    pub fn global_max_pool(&mut self, input: &Tensor) -> Result<Tensor> {
        let (c, h, w) = require_chw(input, "global_max_pool")?;
        let data = input.data();
        let mut out = Vec::with_capacity(c);
        let mut argmax = Vec::with_capacity(c);
        for ch in 0..c {
            let plane = &data[ch * h * w..(ch + 1) * h * w];
            let mut best = f64::NEG_INFINITY;
            let mut best_at = 0usize;
            for (i, &v) in plane.iter().enumerate() {
                if v > best {
                    best = v;
                    best_at = i;
                }
            }
            out.push(best);
            argmax.push(ch * h * w + best_at);
        }
        let inputc = input.clone();
        self.emit(vec![c], out, input.requires_grad(), move || {
            Box::new(move |g, store| {
                if let Some(slot) = store.slot(&inputc) {
                    for (ch, &at) in argmax.iter().enumerate() {
                        slot[at] += g[ch];
                    }
                }
            })
        })
    }

    /// Adds a [K] bias row-wise to a [N,K] tensor.
    pub fn add_row_bias(&mut self, x: &Tensor, bias: &Tensor) -> Result<Tensor> {
        let (n, k) = match x.shape() {
            [n, k] => (*n, *k),
            other => {
                return Err(Error::ShapeMismatch(format!(
                    "add_row_bias expects [N,K], got {other:?}"
                )))
            }
        };
        if bias.shape() != [k] {
            return Err(Error::ShapeMismatch(format!(
                "bias {:?} does not fit row width {k}",
                bias.shape()
            )));
        }
        let mut out = x.data().to_vec();
        for r in 0..n {
            for c in 0..k {
                out[r * k + c] += bias.data()[c];
            }
        }
        let requires = x.requires_grad() || bias.requires_grad();
        let (xc, bc) = (x.clone(), bias.clone());
        self.emit(vec![n, k], out, requires, move || {
            Box::new(move |g, store| {
                if let Some(slot) = store.slot(&xc) {
                    for (d, &v) in slot.iter_mut().zip(g) {
                        *d += v;
                    }
                }
                if let Some(slot) = store.slot(&bc) {
                    for r in 0..n {
                        for c in 0..k {
                            slot[c] += g[r * k + c];
                        }
                    }
                }
            })
        })
    }
}

fn kaiming_uniform(rng: &mut ChaCha8Rng, fan_in: usize, len: usize) -> Vec<f64> {
    let limit = (6.0 / fan_in as f64).sqrt();
    (0..len).map(|_| rng.gen_range(-limit..limit)).collect()
}

/// Convolution layer owning its weight and bias parameters.
#[derive(Debug, Clone)]
pub struct ConvLayer {
    pub weight: Tensor,
    pub bias: Tensor,
    pub stride: usize,
    pub padding: usize,
}

impl ConvLayer {
    pub fn new(
        rng: &mut ChaCha8Rng,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        padding: usize,
    ) -> Self {
        let fan_in = c_in * k * k;
        let weight = Tensor::from_parts(
            vec![c_out, c_in, k, k],
            kaiming_uniform(rng, fan_in, c_out * c_in * k * k),
            true,
        );
        let bias = Tensor::zeros(vec![c_out], true);
        Self { weight, bias, stride, padding }
    }

    pub fn forward(&self, tape: &mut GradTape, x: &Tensor) -> Result<Tensor> {
        tape.conv2d(x, &self.weight, &self.bias, self.stride, self.padding)
    }

    pub fn params(&self) -> Vec<&Tensor> {
        vec![&self.weight, &self.bias]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// Fully connected layer; weight is stored [in, out] so a [N,in] batch maps
/// through a single matmul.
#[derive(Debug, Clone)]
pub struct DenseLayer {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl DenseLayer {
    pub fn new(rng: &mut ChaCha8Rng, d_in: usize, d_out: usize) -> Self {
        let weight =
            Tensor::from_parts(vec![d_in, d_out], kaiming_uniform(rng, d_in, d_in * d_out), true);
        let bias = Tensor::zeros(vec![d_out], true);
        Self { weight, bias }
    }

    /// x: [N, in] -> [N, out].
    pub fn forward(&self, tape: &mut GradTape, x: &Tensor) -> Result<Tensor> {
        let xw = tape.matmul(x, &self.weight)?;
        tape.add_row_bias(&xw, &self.bias)
    }

    pub fn params(&self) -> Vec<&Tensor> {
        vec![&self.weight, &self.bias]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.weight, &mut self.bias]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    /// Two stacked convolutions in the body.
    Vanilla,
    /// Three stacked convolutions in the body.
    Dense,
}

/// Channel-preserving residual block: out = x + body(x), where the body is a
/// stack of 3x3/pad-1 convolutions with ReLU between (not after) them. A
/// zero-weight body therefore passes the input through exactly.
#[derive(Debug, Clone)]
pub struct ResidualBlock {
    pub convs: Vec<ConvLayer>,
    pub kind: BlockKind,
}

impl ResidualBlock {
    pub fn new(rng: &mut ChaCha8Rng, channels: usize, kind: BlockKind) -> Self {
        let n = match kind {
            BlockKind::Vanilla => 2,
            BlockKind::Dense => 3,
        };
        let convs = (0..n).map(|_| ConvLayer::new(rng, channels, channels, 3, 1, 1)).collect();
        Self { convs, kind }
    }

    pub fn forward(&self, tape: &mut GradTape, x: &Tensor) -> Result<Tensor> {
        let mut body = x.clone();
        for (i, conv) in self.convs.iter().enumerate() {
            body = conv.forward(tape, &body)?;
            if i + 1 < self.convs.len() {
                body = tape.relu(&body)?;
            }
        }
        tape.add(x, &body)
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.convs.iter().flat_map(|c| c.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.convs.iter_mut().flat_map(|c| c.params_mut()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn conv_identity_kernel_passes_input_through() {
        let mut tape = GradTape::new();
        let x = Tensor::new(vec![1, 3, 3], (1..=9).map(|v| v as f64).collect(), false).unwrap();
        // 1x1 kernel with weight 1, bias 0
        let w = Tensor::new(vec![1, 1, 1, 1], vec![1.0], false).unwrap();
        let b = Tensor::zeros(vec![1], false);
        let y = tape.conv2d(&x, &w, &b, 1, 0).unwrap();
        assert_eq!(y.shape(), &[1, 3, 3]);
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn conv_known_3x3_sum_kernel() {
        let mut tape = GradTape::new();
        let x = Tensor::new(vec![1, 3, 3], vec![1.0; 9], false).unwrap();
        let w = Tensor::new(vec![1, 1, 3, 3], vec![1.0; 9], false).unwrap();
        let b = Tensor::new(vec![1], vec![0.5], false).unwrap();
        // padding 1: corner windows see 4 ones, edges 6, center 9
        let y = tape.conv2d(&x, &w, &b, 1, 1).unwrap();
        assert_eq!(y.shape(), &[1, 3, 3]);
        let want = [4.5, 6.5, 4.5, 6.5, 9.5, 6.5, 4.5, 6.5, 4.5];
        assert_eq!(y.data(), &want);
    }

    #[test]
    fn conv_stride_two_halves_extent() {
        let mut tape = GradTape::new();
        let x = Tensor::zeros(vec![2, 8, 8], false);
        let w = Tensor::zeros(vec![4, 2, 3, 3], false);
        let b = Tensor::zeros(vec![4], false);
        let y = tape.conv2d(&x, &w, &b, 2, 1).unwrap();
        assert_eq!(y.shape(), &[4, 4, 4]);
    }

    #[test]
    fn conv_rejects_channel_mismatch() {
        let mut tape = GradTape::new();
        let x = Tensor::zeros(vec![3, 4, 4], false);
        let w = Tensor::zeros(vec![2, 2, 3, 3], false);
        let b = Tensor::zeros(vec![2], false);
        assert!(tape.conv2d(&x, &w, &b, 1, 1).is_err());
    }

    #[test]
    fn max_pool_ties_go_to_first_element() {
        let mut tape = GradTape::new();
        let x = Tensor::new(vec![1, 2, 2], vec![7.0, 7.0, 7.0, 7.0], true).unwrap();
        let y = tape.max_pool(&x, 2, 2).unwrap();
        assert_eq!(y.data(), &[7.0]);
        let loss = tape.sum(&y).unwrap();
        let grads = tape.backward(&loss).unwrap();
        assert_eq!(grads.wrt(&x).data(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn global_max_pool_picks_per_channel_max() {
        let mut tape = GradTape::new();
        let x = Tensor::new(
            vec![2, 2, 2],
            vec![1.0, 5.0, 2.0, 0.0, -3.0, -1.0, -9.0, -2.0],
            false,
        )
        .unwrap();
        let y = tape.global_max_pool(&x).unwrap();
        assert_eq!(y.data(), &[5.0, -1.0]);
    }

    #[test]
    fn dense_layer_known_values() {
        let mut tape = GradTape::new();
        let layer = DenseLayer {
            weight: Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], true).unwrap(),
            bias: Tensor::new(vec![3], vec![0.1, 0.2, 0.3], true).unwrap(),
        };
        let x = Tensor::new(vec![1, 2], vec![1.0, 1.0], false).unwrap();
        let y = layer.forward(&mut tape, &x).unwrap();
        assert_eq!(y.shape(), &[1, 3]);
        let want = [5.1, 7.2, 9.3];
        for (got, want) in y.data().iter().zip(want) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_body_residual_block_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut block = ResidualBlock::new(&mut rng, 2, BlockKind::Vanilla);
        for conv in &mut block.convs {
            conv.weight = Tensor::zeros(conv.weight.shape().to_vec(), true);
            conv.bias = Tensor::zeros(conv.bias.shape().to_vec(), true);
        }
        let mut tape = GradTape::new();
        let x = Tensor::new(vec![2, 3, 3], (0..18).map(|v| v as f64 / 3.0).collect(), false)
            .unwrap();
        let y = block.forward(&mut tape, &x).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn dense_block_has_three_convs() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let block = ResidualBlock::new(&mut rng, 4, BlockKind::Dense);
        assert_eq!(block.convs.len(), 3);
        assert_eq!(block.params().len(), 6);
    }
}
