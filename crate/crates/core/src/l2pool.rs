//! Windowed l2-norm pooling.
//!
//! Forward pools each f x f window of a [C,H,W] tensor to the euclidean norm
//! of its contents (optionally the root-mean-square). Two backward modes are
//! provided:
//!
//! * `Analytic` — the calculus gradient of the forward map,
//!   d||w||/dx_k = x_k / ||w||, with an epsilon guard and the zero
//!   subgradient at all-zero windows. Training uses this mode.
//! * `PaperLiteral` — a published variant that distributes
//!   n / (2 ||w||) uniformly over the window, independent of x_k. It is not
//!   the derivative of the forward map; it is kept selectable so the
//!   discrepancy is executable and tested rather than folklore.

use crate::error::{Error, Result};
use crate::tape::GradTape;
use crate::tensor::Tensor;

/// Division guard for near-zero window norms.
pub const DEFAULT_EPSILON: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradientMode {
    Analytic,
    PaperLiteral,
}

impl GradientMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            GradientMode::Analytic => "analytic",
            GradientMode::PaperLiteral => "paper_literal",
        }
    }
}

impl std::str::FromStr for GradientMode {
    type Err = crate::error::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "analytic" => Ok(GradientMode::Analytic),
            "paper_literal" => Ok(GradientMode::PaperLiteral),
            other => Err(crate::error::Error::BadConfig(format!(
                "unknown gradient mode {other:?} (expected analytic or paper_literal)"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct L2PoolConfig {
    /// Window edge in pixels.
    pub filter_size: usize,
    pub stride: usize,
    /// Divide the sum of squares by the window element count before the root.
    pub normalized: bool,
    pub gradient_mode: GradientMode,
    pub epsilon: f64,
}

impl Default for L2PoolConfig {
    fn default() -> Self {
        Self {
            filter_size: 2,
            stride: 2,
            normalized: false,
            gradient_mode: GradientMode::Analytic,
            epsilon: DEFAULT_EPSILON,
        }
    }
}

impl L2PoolConfig {
    pub fn validate(&self) -> Result<()> {
        if self.filter_size < 1 || self.stride < 1 {
            return Err(Error::BadConfig(
                "l2 pool filter_size and stride must be >= 1".into(),
            ));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::BadConfig("l2 pool epsilon must be positive".into()));
        }
        Ok(())
    }
}

fn require_chw(t: &Tensor, what: &str) -> Result<(usize, usize, usize)> {
    match t.shape() {
        [c, h, w] => Ok((*c, *h, *w)),
        other => Err(Error::ShapeMismatch(format!(
            "{what} expects a [C,H,W] tensor, got {other:?}"
        ))),
    }
}

fn pooled_extent(extent: usize, filter: usize, stride: usize) -> Result<usize> {
    if extent < filter {
        return Err(Error::WindowLargerThanInput { filter, extent });
    }
    Ok((extent - filter) / stride + 1)
}

fn forward_data(
    data: &[f64],
    c: usize,
    h: usize,
    w: usize,
    cfg: &L2PoolConfig,
) -> Result<(Vec<usize>, Vec<f64>)> {
    cfg.validate()?;
    let f = cfg.filter_size;
    let s = cfg.stride;
    let oh = pooled_extent(h, f, s)?;
    let ow = pooled_extent(w, f, s)?;
    let n = (f * f) as f64;
    let mut out = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let plane = &data[ch * h * w..(ch + 1) * h * w];
        for y in 0..oh {
            for x in 0..ow {
                let mut ss = 0.0;
                for dy in 0..f {
                    let row = (y * s + dy) * w + x * s;
                    for dx in 0..f {
                        let v = plane[row + dx];
                        ss += v * v;
                    }
                }
                out.push(if cfg.normalized { (ss / n).sqrt() } else { ss.sqrt() });
            }
        }
    }
    Ok((vec![c, oh, ow], out))
}

fn backward_data(
    data: &[f64],
    c: usize,
    h: usize,
    w: usize,
    upstream: &[f64],
    cfg: &L2PoolConfig,
) -> Vec<f64> {
    let f = cfg.filter_size;
    let s = cfg.stride;
    let oh = (h - f) / s + 1;
    let ow = (w - f) / s + 1;
    let n = (f * f) as f64;
    let mut grad = vec![0.0; data.len()];
    for ch in 0..c {
        let plane = &data[ch * h * w..(ch + 1) * h * w];
        let gplane = &mut grad[ch * h * w..(ch + 1) * h * w];
        for y in 0..oh {
            for x in 0..ow {
                let g = upstream[(ch * oh + y) * ow + x];
                let mut ss = 0.0;
                for dy in 0..f {
                    let row = (y * s + dy) * w + x * s;
                    for dx in 0..f {
                        let v = plane[row + dx];
                        ss += v * v;
                    }
                }
                let norm = ss.sqrt();
                match cfg.gradient_mode {
                    GradientMode::Analytic => {
                        let mut factor = g / norm.max(cfg.epsilon);
                        if cfg.normalized {
                            factor /= n.sqrt();
                        }
                        for dy in 0..f {
                            let row = (y * s + dy) * w + x * s;
                            for dx in 0..f {
                                gplane[row + dx] += factor * plane[row + dx];
                            }
                        }
                    }
                    GradientMode::PaperLiteral => {
                        // n * d(sum x) / (2 sqrt(sum x^2)): uniform over the
                        // window, no dependence on the element itself.
                        let v = g * n / (2.0 * norm.max(cfg.epsilon));
                        for dy in 0..f {
                            let row = (y * s + dy) * w + x * s;
                            for dx in 0..f {
                                gplane[row + dx] += v;
                            }
                        }
                    }
                }
            }
        }
    }
    grad
}

/// Pools each window of a [C,H,W] tensor to its l2 norm. Pure function; see
/// [`GradTape::l2_pool`] for the recorded form.
pub fn l2_pool_forward(input: &Tensor, cfg: &L2PoolConfig) -> Result<Tensor> {
    let (c, h, w) = require_chw(input, "l2_pool_forward")?;
    let (shape, out) = forward_data(input.data(), c, h, w, cfg)?;
    Ok(Tensor::from_parts(shape, out, false))
}

/// Gradient of [`l2_pool_forward`] w.r.t. its input, in the mode selected by
/// `cfg.gradient_mode`. Overlapping windows accumulate additively.
pub fn l2_pool_backward(input: &Tensor, upstream: &Tensor, cfg: &L2PoolConfig) -> Result<Tensor> {
    let (c, h, w) = require_chw(input, "l2_pool_backward")?;
    cfg.validate()?;
    let oh = pooled_extent(h, cfg.filter_size, cfg.stride)?;
    let ow = pooled_extent(w, cfg.filter_size, cfg.stride)?;
    if upstream.shape() != [c, oh, ow] {
        return Err(Error::ShapeMismatch(format!(
            "upstream grad {:?} vs pooled shape {:?}",
            upstream.shape(),
            [c, oh, ow]
        )));
    }
    let grad = backward_data(input.data(), c, h, w, upstream.data(), cfg);
    Ok(Tensor::from_parts(input.shape().to_vec(), grad, false))
}

/// Per-channel l2 norm over the whole spatial extent, [C,H,W] -> [C].
/// The pre-dense placement of the operator; always differentiated
/// analytically.
pub fn global_l2_pool_forward(input: &Tensor) -> Result<Tensor> {
    let (c, h, w) = require_chw(input, "global_l2_pool")?;
    let mut out = Vec::with_capacity(c);
    for ch in 0..c {
        let ss: f64 = input.data()[ch * h * w..(ch + 1) * h * w]
            .iter()
            .map(|v| v * v)
            .sum();
        out.push(ss.sqrt());
    }
    Ok(Tensor::from_parts(vec![c], out, false))
}

impl GradTape {
    /// Recorded form of [`l2_pool_forward`]; backward follows
    /// `cfg.gradient_mode`.
    pub fn l2_pool(&mut self, input: &Tensor, cfg: &L2PoolConfig) -> Result<Tensor> {
        let (c, h, w) = require_chw(input, "l2_pool")?;
        let (shape, out) = forward_data(input.data(), c, h, w, cfg)?;
        let inputc = input.clone();
        let cfgc = cfg.clone();
        self.emit(shape, out, input.requires_grad(), move || {
            Box::new(move |g, store| {
                if let Some(slot) = store.slot(&inputc) {
                    let grad = backward_data(inputc.data(), c, h, w, g, &cfgc);
                    for (d, v) in slot.iter_mut().zip(grad) {
                        *d += v;
                    }
                }
            })
        })
    }

    /// Recorded form of [`global_l2_pool_forward`].
    pub fn global_l2_pool(&mut self, input: &Tensor) -> Result<Tensor> {
        let (c, h, w) = require_chw(input, "global_l2_pool")?;
        let out = global_l2_pool_forward(input)?;
        let norms = out.data().to_vec();
        let inputc = input.clone();
        self.emit(vec![c], norms.clone(), input.requires_grad(), move || {
            Box::new(move |g, store| {
                if let Some(slot) = store.slot(&inputc) {
                    for ch in 0..c {
                        let factor = g[ch] / norms[ch].max(DEFAULT_EPSILON);
                        let base = ch * h * w;
                        for i in 0..h * w {
                            slot[base + i] += factor * inputc.data()[base + i];
                        }
                    }
                }
            })
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chw(c: usize, h: usize, w: usize, data: Vec<f64>) -> Tensor {
        Tensor::new(vec![c, h, w], data, false).unwrap()
    }

    #[test]
    fn three_four_five_window() {
        let input = chw(1, 2, 2, vec![3.0, 4.0, 0.0, 0.0]);
        let out = l2_pool_forward(&input, &L2PoolConfig::default()).unwrap();
        assert_eq!(out.shape(), &[1, 1, 1]);
        assert_eq!(out.data(), &[5.0]);
    }

    #[test]
    fn normalized_divides_by_window_count() {
        let input = chw(1, 2, 2, vec![3.0, 4.0, 0.0, 0.0]);
        let cfg = L2PoolConfig { normalized: true, ..Default::default() };
        let out = l2_pool_forward(&input, &cfg).unwrap();
        assert!((out.data()[0] - 2.5).abs() < 1e-15); // sqrt(25/4)
    }

    #[test]
    fn zero_input_pools_to_zero() {
        let input = Tensor::zeros(vec![2, 4, 4], false);
        let out = l2_pool_forward(&input, &L2PoolConfig::default()).unwrap();
        assert_eq!(out.shape(), &[2, 2, 2]);
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn window_larger_than_input_is_rejected() {
        let input = Tensor::zeros(vec![1, 3, 3], false);
        let cfg = L2PoolConfig { filter_size: 4, stride: 1, ..Default::default() };
        assert!(matches!(
            l2_pool_forward(&input, &cfg),
            Err(Error::WindowLargerThanInput { .. })
        ));
    }

    #[test]
    fn analytic_backward_on_345_window() {
        let input = chw(1, 2, 2, vec![3.0, 4.0, 0.0, 0.0]);
        let upstream = chw(1, 1, 1, vec![1.0]);
        let g = l2_pool_backward(&input, &upstream, &L2PoolConfig::default()).unwrap();
        let want = [0.6, 0.8, 0.0, 0.0];
        for (got, want) in g.data().iter().zip(want) {
            assert!((got - want).abs() < 1e-15, "{got} vs {want}");
        }
    }

    #[test]
    fn zero_window_takes_zero_subgradient() {
        let input = Tensor::zeros(vec![1, 2, 2], false);
        let upstream = chw(1, 1, 1, vec![1.0]);
        let g = l2_pool_backward(&input, &upstream, &L2PoolConfig::default()).unwrap();
        assert!(g.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn global_pool_examples() {
        let ones = chw(1, 2, 2, vec![1.0; 4]);
        assert_eq!(global_l2_pool_forward(&ones).unwrap().data(), &[2.0]);

        let onehot = chw(1, 3, 3, {
            let mut v = vec![0.0; 9];
            v[4] = 1.0;
            v
        });
        assert_eq!(global_l2_pool_forward(&onehot).unwrap().data(), &[1.0]);
    }

    #[test]
    fn global_pool_matches_full_window_l2_pool() {
        let mut vals = Vec::new();
        for i in 0..75 {
            vals.push(((i * 37 % 19) as f64 - 9.0) / 7.0);
        }
        let input = chw(3, 5, 5, vals);
        let global = global_l2_pool_forward(&input).unwrap();
        let cfg = L2PoolConfig { filter_size: 5, stride: 1, ..Default::default() };
        let full = l2_pool_forward(&input, &cfg).unwrap();
        assert_eq!(full.shape(), &[3, 1, 1]);
        for (a, b) in global.data().iter().zip(full.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn paper_literal_is_uniform_over_window() {
        let input = chw(1, 2, 2, vec![3.0, 4.0, 0.0, 0.0]);
        let upstream = chw(1, 1, 1, vec![1.0]);
        let cfg = L2PoolConfig {
            gradient_mode: GradientMode::PaperLiteral,
            ..Default::default()
        };
        let g = l2_pool_backward(&input, &upstream, &cfg).unwrap();
        // 4 / (2 * 5) regardless of the element value
        for &v in g.data() {
            assert!((v - 0.4).abs() < 1e-15);
        }
    }
}
