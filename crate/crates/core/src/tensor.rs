use std::fmt::Write as _;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::error::{Error, Result};

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

/// Identity of a tensor for gradient bookkeeping. Fresh per construction,
/// including parameter updates (an updated parameter is a new tensor).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TensorId(pub u64);

fn fresh_id() -> TensorId {
    TensorId(NEXT_ID.fetch_add(1, Ordering::Relaxed))
}

/// Dense row-major f64 tensor. Immutable after construction and cheap to
/// clone (the buffer is shared), so it is safe to capture into backward
/// rules and to share across threads.
#[derive(Debug, Clone)]
pub struct Tensor {
    id: TensorId,
    shape: Vec<usize>,
    data: Arc<Vec<f64>>,
    requires_grad: bool,
}

impl Tensor {
    /// Checked constructor: shape product must equal the data length and all
    /// values must be finite.
    pub fn new(shape: Vec<usize>, data: Vec<f64>, requires_grad: bool) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "shape {:?} holds {} elements but {} values were given",
                shape,
                numel,
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput(format!(
                "value at flat index {pos} is {}",
                data[pos]
            )));
        }
        Ok(Self::from_parts(shape, data, requires_grad))
    }

    /// Internal constructor used by operators. Shapes are trusted; finiteness
    /// is only re-checked by tapes running in strict mode.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>, requires_grad: bool) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self {
            id: fresh_id(),
            shape,
            data: Arc::new(data),
            requires_grad,
        }
    }

    pub fn scalar(value: f64) -> Result<Self> {
        Self::new(vec![1], vec![value], false)
    }

    pub fn zeros(shape: Vec<usize>, requires_grad: bool) -> Self {
        let numel = shape.iter().product();
        Self::from_parts(shape, vec![0.0; numel], requires_grad)
    }

    pub fn id(&self) -> TensorId {
        self.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// Value of a scalar tensor.
    pub fn item(&self) -> Result<f64> {
        if self.is_scalar() {
            Ok(self.data[0])
        } else {
            Err(Error::NotScalarLoss(self.shape.clone()))
        }
    }

    /// Same contents with a different grad flag (new identity).
    pub fn with_requires_grad(&self, requires_grad: bool) -> Self {
        Self {
            id: fresh_id(),
            shape: self.shape.clone(),
            data: Arc::clone(&self.data),
            requires_grad,
        }
    }

    /// Replaces the buffer, keeping shape and grad flag (new identity).
    /// The parameter-update path for optimizers.
    pub fn with_data(&self, data: Vec<f64>) -> Result<Self> {
        if data.len() != self.data.len() {
            return Err(Error::ShapeMismatch(format!(
                "replacement buffer has {} values, tensor holds {}",
                data.len(),
                self.data.len()
            )));
        }
        Ok(Self {
            id: fresh_id(),
            shape: self.shape.clone(),
            data: Arc::new(data),
            requires_grad: self.requires_grad,
        })
    }

    /// Exact bitwise equality of shape and contents.
    pub fn bit_eq(&self, other: &Tensor) -> bool {
        self.shape == other.shape
            && self
                .data
                .iter()
                .zip(other.data.iter())
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }

    /// Text form: shape on the first line, values on the second, 17
    /// significant digits so that parsing restores the exact f64 bits.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (i, d) in self.shape.iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            let _ = write!(out, "{d}");
        }
        out.push('\n');
        for (i, v) in self.data.iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            let _ = write!(out, "{v:.16e}");
        }
        out.push('\n');
        out
    }

    /// Parses the text form produced by [`Tensor::to_text`].
    pub fn from_text(text: &str, requires_grad: bool) -> Result<Self> {
        let mut lines = text.lines();
        let shape_line = lines
            .next()
            .ok_or_else(|| Error::Parse("missing shape line".into()))?;
        let data_line = lines
            .next()
            .ok_or_else(|| Error::Parse("missing data line".into()))?;
        let shape = shape_line
            .split_whitespace()
            .map(|t| {
                t.parse::<usize>()
                    .map_err(|e| Error::Parse(format!("bad dimension {t:?}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let data = data_line
            .split_whitespace()
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|e| Error::Parse(format!("bad value {t:?}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(shape, data, requires_grad)
    }
}

/// Shape equality guard shared by the element-wise operators.
pub(crate) fn check_same_shape(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch(format!(
            "{what}: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn create_basic() {
        let t = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0], false).unwrap();
        assert_eq!(t.shape(), &[2, 2]);
        assert_eq!(t.data(), &[1.0, 2.0, 3.0, 4.0]);
        assert!(!t.requires_grad());
    }

    #[test]
    fn create_zero_vector_with_grad() {
        let t = Tensor::new(vec![3], vec![0.0, 0.0, 0.0], true).unwrap();
        assert_eq!(t.shape(), &[3]);
        assert!(t.requires_grad());
    }

    #[test]
    fn create_rejects_length_mismatch() {
        let err = Tensor::new(vec![2, 2], vec![1.0, 2.0], false).unwrap_err();
        assert!(matches!(err, Error::ShapeMismatch(_)));
    }

    #[test]
    fn create_rejects_nan_and_inf() {
        let err = Tensor::new(vec![2], vec![1.0, f64::NAN], false).unwrap_err();
        assert!(matches!(err, Error::NonFiniteInput(_)));
        let err = Tensor::new(vec![1], vec![f64::INFINITY], false).unwrap_err();
        assert!(matches!(err, Error::NonFiniteInput(_)));
    }

    #[test]
    fn ids_are_unique() {
        let a = Tensor::scalar(1.0).unwrap();
        let b = Tensor::scalar(1.0).unwrap();
        assert_ne!(a.id(), b.id());
    }

    #[test]
    fn text_round_trip_is_bit_exact() {
        let vals = vec![
            0.1,
            -1.0 / 3.0,
            std::f64::consts::PI,
            1e-300,
            -2.5e200,
            0.0,
            f64::MIN_POSITIVE,
        ];
        let t = Tensor::new(vec![7], vals, false).unwrap();
        let back = Tensor::from_text(&t.to_text(), false).unwrap();
        assert!(t.bit_eq(&back));
    }

    #[test]
    fn text_parse_errors() {
        assert!(Tensor::from_text("", false).is_err());
        assert!(Tensor::from_text("2\n1.0 x\n", false).is_err());
        assert!(Tensor::from_text("2 2\n1 2 3\n", false).is_err());
    }
}
