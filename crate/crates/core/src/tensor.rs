//! Dense row-major f64 tensors and the numeric kernels the rest of the
//! crate builds on.
//!
//! Everything is 64-bit and single-threaded so that results are
//! deterministic and finite-difference gradient checks are meaningful.

use thiserror::Error;

/// Errors raised by tensor construction and the numeric kernels.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum TensorError {
    #[error("shape {shape:?} implies {expected} elements, got {actual}")]
    DataLength {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("shape {shape:?} contains a zero dimension")]
    ZeroDim { shape: Vec<usize> },
    #[error("{op}: dimension mismatch between {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op}: expected rank {expected}, got shape {shape:?}")]
    RankMismatch {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },
    #[error("axis {axis} out of range for rank-{rank} tensor")]
    InvalidAxis { axis: usize, rank: usize },
    #[error("{op}: index range {start}..{end} out of bounds for dimension {dim}")]
    IndexRange {
        op: &'static str,
        start: usize,
        end: usize,
        dim: usize,
    },
    #[error("loss is not a scalar (shape {shape:?})")]
    NotScalar { shape: Vec<usize> },
    #[error("non-finite loss encountered ({value})")]
    NonFiniteLoss { value: f64 },
    #[error("layer cap {k} out of range 1..={l}")]
    LayerCapOutOfRange { k: usize, l: usize },
}

/// Dense tensor: explicit shape vector plus a flat row-major f64 buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Build a tensor, validating that the buffer length matches the shape
    /// and that no dimension is zero.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, TensorError> {
        if shape.contains(&0) {
            return Err(TensorError::ZeroDim { shape });
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(TensorError::DataLength {
                expected,
                actual: data.len(),
                shape,
            });
        }
        Ok(Self { shape, data })
    }

    /// Zero-filled tensor. Panics on a zero dimension (programming error).
    pub fn zeros(shape: &[usize]) -> Self {
        assert!(
            shape.iter().all(|&d| d > 0),
            "zero dimension in shape {shape:?}"
        );
        let n: usize = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    /// Rank-0 scalar.
    pub fn scalar(value: f64) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    /// Scalar extraction; `None` unless the tensor holds exactly one element.
    pub fn as_scalar(&self) -> Option<f64> {
        (self.data.len() == 1).then(|| self.data[0])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Element access by multi-index (row-major). Test and oracle helper.
    pub fn at(&self, idx: &[usize]) -> f64 {
        assert_eq!(idx.len(), self.rank(), "index rank mismatch");
        let mut flat = 0;
        for (i, (&ix, &dim)) in idx.iter().zip(self.shape.iter()).enumerate() {
            assert!(ix < dim, "index {ix} out of bounds for axis {i}");
            flat = flat * dim + ix;
        }
        self.data[flat]
    }

    /// Reinterpret the buffer under a new shape with the same element count.
    pub fn reshape(&self, shape: Vec<usize>) -> Result<Self, TensorError> {
        Self::new(shape, self.data.clone())
    }
}

// ── Elementwise kernels ──────────────────────────────────────────────

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<(), TensorError> {
    if a.shape != b.shape {
        return Err(TensorError::ShapeMismatch {
            op,
            left: a.shape.clone(),
            right: b.shape.clone(),
        });
    }
    Ok(())
}

fn map(a: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor {
        shape: a.shape.clone(),
        data: a.data.iter().map(|&v| f(v)).collect(),
    }
}

fn zip(op: &'static str, a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor, TensorError> {
    same_shape(op, a, b)?;
    Ok(Tensor {
        shape: a.shape.clone(),
        data: a
            .data
            .iter()
            .zip(b.data.iter())
            .map(|(&x, &y)| f(x, y))
            .collect(),
    })
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
    zip("add", a, b, |x, y| x + y)
}

pub fn sub(a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
    zip("sub", a, b, |x, y| x - y)
}

pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
    zip("mul", a, b, |x, y| x * y)
}

pub fn scale(a: &Tensor, c: f64) -> Tensor {
    map(a, |v| v * c)
}

pub fn add_scalar(a: &Tensor, c: f64) -> Tensor {
    map(a, |v| v + c)
}

/// Numerically stable logistic function.
///
/// Two-branch form: never exponentiates a positive argument, so extreme
/// inputs saturate instead of overflowing. Underflows to exactly 0.0 for
/// x below about -745 (and to 1.0 above +37), so strict (0,1) membership
/// holds for moderate |x| only.
pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(a: &Tensor) -> Tensor {
    map(a, sigmoid_scalar)
}

/// SWISH activation x * sigmoid(x).
pub fn swish(a: &Tensor) -> Tensor {
    map(a, |x| x * sigmoid_scalar(x))
}

pub fn tanh(a: &Tensor) -> Tensor {
    map(a, f64::tanh)
}

/// Stable softplus ln(1 + e^x); derivative is the sigmoid.
pub fn softplus_scalar(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn softplus(a: &Tensor) -> Tensor {
    map(a, softplus_scalar)
}

/// sqrt(max(x, 0)): exact zero for non-positive input, used for standard
/// deviations where tiny negative rounding residues must not produce NaN.
pub fn sqrt_clamped(a: &Tensor) -> Tensor {
    map(a, |x| if x > 0.0 { x.sqrt() } else { 0.0 })
}

// ── Matrix kernels ───────────────────────────────────────────────────

fn expect_rank(op: &'static str, a: &Tensor, rank: usize) -> Result<(), TensorError> {
    if a.rank() != rank {
        return Err(TensorError::RankMismatch {
            op,
            expected: rank,
            shape: a.shape.clone(),
        });
    }
    Ok(())
}

/// Standard 2-D matrix product.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
    expect_rank("matmul", a, 2)?;
    expect_rank("matmul", b, 2)?;
    let (m, k) = (a.shape[0], a.shape[1]);
    let (k2, n) = (b.shape[0], b.shape[1]);
    if k != k2 {
        return Err(TensorError::ShapeMismatch {
            op: "matmul",
            left: a.shape.clone(),
            right: b.shape.clone(),
        });
    }
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let av = a.data[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b.data[p * n..(p + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] += av * brow[j];
            }
        }
    }
    Ok(Tensor {
        shape: vec![m, n],
        data: out,
    })
}

pub fn transpose(a: &Tensor) -> Result<Tensor, TensorError> {
    expect_rank("transpose", a, 2)?;
    let (m, n) = (a.shape[0], a.shape[1]);
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a.data[i * n + j];
        }
    }
    Ok(Tensor {
        shape: vec![n, m],
        data: out,
    })
}

/// Add a length-n row vector to every row of an m×n matrix.
pub fn add_row(a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
    expect_rank("add_row", a, 2)?;
    expect_rank("add_row", b, 1)?;
    let (m, n) = (a.shape[0], a.shape[1]);
    if b.shape[0] != n {
        return Err(TensorError::ShapeMismatch {
            op: "add_row",
            left: a.shape.clone(),
            right: b.shape.clone(),
        });
    }
    let mut data = a.data.clone();
    for i in 0..m {
        for j in 0..n {
            data[i * n + j] += b.data[j];
        }
    }
    Ok(Tensor {
        shape: vec![m, n],
        data,
    })
}

/// Arithmetic mean along one axis; the result drops that axis.
pub fn mean_axis(a: &Tensor, axis: usize) -> Result<Tensor, TensorError> {
    if axis >= a.rank() {
        return Err(TensorError::InvalidAxis {
            axis,
            rank: a.rank(),
        });
    }
    let out_shape: Vec<usize> = a
        .shape
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != axis)
        .map(|(_, &d)| d)
        .collect();
    let n_axis = a.shape[axis];
    let inner: usize = a.shape[axis + 1..].iter().product();
    let outer: usize = a.shape[..axis].iter().product();
    let mut out = vec![0.0; outer * inner];
    for o in 0..outer {
        for x in 0..n_axis {
            let base = (o * n_axis + x) * inner;
            let obase = o * inner;
            for i in 0..inner {
                out[obase + i] += a.data[base + i];
            }
        }
    }
    let inv = 1.0 / n_axis as f64;
    for v in &mut out {
        *v *= inv;
    }
    Tensor::new(out_shape, out)
}

/// Row-wise softmax of an m×n matrix, max-shifted for stability.
pub fn softmax_rows(a: &Tensor) -> Result<Tensor, TensorError> {
    expect_rank("softmax_rows", a, 2)?;
    let (m, n) = (a.shape[0], a.shape[1]);
    let mut data = vec![0.0; m * n];
    for i in 0..m {
        let row = &a.data[i * n..(i + 1) * n];
        let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for j in 0..n {
            let e = (row[j] - mx).exp();
            data[i * n + j] = e;
            sum += e;
        }
        for j in 0..n {
            data[i * n + j] /= sum;
        }
    }
    Ok(Tensor {
        shape: vec![m, n],
        data,
    })
}

/// Per-row layer normalization with affine parameters.
pub fn layer_norm_rows(
    a: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    eps: f64,
) -> Result<Tensor, TensorError> {
    expect_rank("layer_norm", a, 2)?;
    expect_rank("layer_norm", gamma, 1)?;
    expect_rank("layer_norm", beta, 1)?;
    let (m, n) = (a.shape[0], a.shape[1]);
    if gamma.shape[0] != n || beta.shape[0] != n {
        return Err(TensorError::ShapeMismatch {
            op: "layer_norm",
            left: a.shape.clone(),
            right: gamma.shape.clone(),
        });
    }
    let mut data = vec![0.0; m * n];
    for i in 0..m {
        let row = &a.data[i * n..(i + 1) * n];
        let mean = row.iter().sum::<f64>() / n as f64;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        let inv = 1.0 / (var + eps).sqrt();
        for j in 0..n {
            data[i * n + j] = (row[j] - mean) * inv * gamma.data[j] + beta.data[j];
        }
    }
    Ok(Tensor {
        shape: vec![m, n],
        data,
    })
}

/// Columns start..end of an m×n matrix.
pub fn slice_cols(a: &Tensor, start: usize, end: usize) -> Result<Tensor, TensorError> {
    expect_rank("slice_cols", a, 2)?;
    let (m, n) = (a.shape[0], a.shape[1]);
    if start >= end || end > n {
        return Err(TensorError::IndexRange {
            op: "slice_cols",
            start,
            end,
            dim: n,
        });
    }
    let w = end - start;
    let mut data = vec![0.0; m * w];
    for i in 0..m {
        data[i * w..(i + 1) * w].copy_from_slice(&a.data[i * n + start..i * n + end]);
    }
    Ok(Tensor {
        shape: vec![m, w],
        data,
    })
}

/// Rows start..end of an m×n matrix.
pub fn slice_rows(a: &Tensor, start: usize, end: usize) -> Result<Tensor, TensorError> {
    expect_rank("slice_rows", a, 2)?;
    let (m, n) = (a.shape[0], a.shape[1]);
    if start >= end || end > m {
        return Err(TensorError::IndexRange {
            op: "slice_rows",
            start,
            end,
            dim: m,
        });
    }
    Ok(Tensor {
        shape: vec![end - start, n],
        data: a.data[start * n..end * n].to_vec(),
    })
}

/// Horizontal concatenation of two matrices with equal row counts.
pub fn concat_cols(a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
    expect_rank("concat_cols", a, 2)?;
    expect_rank("concat_cols", b, 2)?;
    let (m, n1) = (a.shape[0], a.shape[1]);
    let (m2, n2) = (b.shape[0], b.shape[1]);
    if m != m2 {
        return Err(TensorError::ShapeMismatch {
            op: "concat_cols",
            left: a.shape.clone(),
            right: b.shape.clone(),
        });
    }
    let n = n1 + n2;
    let mut data = vec![0.0; m * n];
    for i in 0..m {
        data[i * n..i * n + n1].copy_from_slice(&a.data[i * n1..(i + 1) * n1]);
        data[i * n + n1..(i + 1) * n].copy_from_slice(&b.data[i * n2..(i + 1) * n2]);
    }
    Ok(Tensor {
        shape: vec![m, n],
        data,
    })
}

// ── Layer-stack kernels (T×H×L tensors) ──────────────────────────────

fn expect_stack(op: &'static str, x: &Tensor) -> Result<(usize, usize, usize), TensorError> {
    expect_rank(op, x, 3)?;
    Ok((x.shape[0], x.shape[1], x.shape[2]))
}

/// Per-layer gating: out[t,h,l] = x[t,h,l] * w[l].
pub fn mul_layerwise(x: &Tensor, w: &Tensor) -> Result<Tensor, TensorError> {
    let (t, h, l) = expect_stack("mul_layerwise", x)?;
    expect_rank("mul_layerwise", w, 1)?;
    if w.shape[0] != l {
        return Err(TensorError::ShapeMismatch {
            op: "mul_layerwise",
            left: x.shape.clone(),
            right: w.shape.clone(),
        });
    }
    let mut data = x.data.clone();
    for i in 0..t * h {
        for j in 0..l {
            data[i * l + j] *= w.data[j];
        }
    }
    Ok(Tensor {
        shape: vec![t, h, l],
        data,
    })
}

/// Weighted sum across the layer axis: out[t,h] = sum_l w[l] * x[t,h,l].
pub fn weighted_sum_layers(x: &Tensor, w: &Tensor) -> Result<Tensor, TensorError> {
    let (t, h, l) = expect_stack("weighted_sum_layers", x)?;
    expect_rank("weighted_sum_layers", w, 1)?;
    if w.shape[0] != l {
        return Err(TensorError::ShapeMismatch {
            op: "weighted_sum_layers",
            left: x.shape.clone(),
            right: w.shape.clone(),
        });
    }
    let mut data = vec![0.0; t * h];
    for i in 0..t * h {
        let row = &x.data[i * l..(i + 1) * l];
        let mut acc = 0.0;
        for j in 0..l {
            acc += w.data[j] * row[j];
        }
        data[i] = acc;
    }
    Ok(Tensor {
        shape: vec![t, h],
        data,
    })
}

/// Flatten each frame of a T×H×L stack into a length H*L vector with the
/// layer as the major index: position h + H*l holds x[t,h,l]. The order is
/// fixed so serialized projection weights stay portable.
pub fn flatten_frames(x: &Tensor) -> Result<Tensor, TensorError> {
    let (t, h, l) = expect_stack("flatten_frames", x)?;
    let w = h * l;
    let mut data = vec![0.0; t * w];
    for ti in 0..t {
        for hi in 0..h {
            for li in 0..l {
                data[ti * w + hi + h * li] = x.data[(ti * h + hi) * l + li];
            }
        }
    }
    Ok(Tensor {
        shape: vec![t, w],
        data,
    })
}

/// Assemble L matrices of shape T×H into a T×H×L stack.
pub fn stack_layers(layers: &[&Tensor]) -> Result<Tensor, TensorError> {
    assert!(!layers.is_empty(), "stack_layers needs at least one layer");
    let first = layers[0];
    expect_rank("stack_layers", first, 2)?;
    let (t, h) = (first.shape[0], first.shape[1]);
    for layer in layers {
        same_shape("stack_layers", first, layer)?;
    }
    let l = layers.len();
    let mut data = vec![0.0; t * h * l];
    for (li, layer) in layers.iter().enumerate() {
        for i in 0..t * h {
            data[i * l + li] = layer.data[i];
        }
    }
    Ok(Tensor {
        shape: vec![t, h, l],
        data,
    })
}

/// Extract layer slice `layer` (0-based) of a T×H×L stack as T×H.
pub fn layer_slice(x: &Tensor, layer: usize) -> Result<Tensor, TensorError> {
    let (t, h, l) = expect_stack("layer_slice", x)?;
    if layer >= l {
        return Err(TensorError::IndexRange {
            op: "layer_slice",
            start: layer,
            end: layer + 1,
            dim: l,
        });
    }
    let mut data = vec![0.0; t * h];
    for i in 0..t * h {
        data[i] = x.data[i * l + layer];
    }
    Ok(Tensor {
        shape: vec![t, h],
        data,
    })
}

// ── Scalar-reduction kernels ─────────────────────────────────────────

/// log(sum(exp(x))) over a rank-1 vector, max-shifted.
pub fn logsumexp(a: &Tensor) -> Result<Tensor, TensorError> {
    expect_rank("logsumexp", a, 1)?;
    let mx = a.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = a.data.iter().map(|&v| (v - mx).exp()).sum();
    Ok(Tensor::scalar(mx + sum.ln()))
}

/// Single element of a rank-1 vector as a scalar.
pub fn pick(a: &Tensor, index: usize) -> Result<Tensor, TensorError> {
    expect_rank("pick", a, 1)?;
    if index >= a.shape[0] {
        return Err(TensorError::IndexRange {
            op: "pick",
            start: index,
            end: index + 1,
            dim: a.shape[0],
        });
    }
    Ok(Tensor::scalar(a.data[index]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn construction_validates_length_and_dims() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
        assert!(matches!(
            Tensor::new(vec![2, 3], vec![0.0; 5]),
            Err(TensorError::DataLength { .. })
        ));
        assert!(matches!(
            Tensor::new(vec![2, 0], vec![]),
            Err(TensorError::ZeroDim { .. })
        ));
    }

    #[test]
    fn matmul_identity_and_zero() {
        let id = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let b = Tensor::new(vec![2, 2], vec![3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(matmul(&id, &b).unwrap(), b);

        let z = Tensor::zeros(&[2, 2]);
        let prod = matmul(&z, &b).unwrap();
        assert!(prod.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matmul_rejects_inner_mismatch() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[4, 2]);
        let err = matmul(&a, &b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[4, 2]"), "{msg}");
    }

    #[test]
    fn mean_axis_matches_hand_case() {
        // column means of [[1,3],[5,7]]
        let a = Tensor::new(vec![2, 2], vec![1.0, 3.0, 5.0, 7.0]).unwrap();
        let m = mean_axis(&a, 0).unwrap();
        assert_eq!(m.shape(), &[2]);
        assert_eq!(m.data(), &[3.0, 5.0]);

        // single-element axis is the identity on the remaining dims
        let b = Tensor::new(vec![1, 3], vec![2.0, 4.0, 6.0]).unwrap();
        let mb = mean_axis(&b, 0).unwrap();
        assert_eq!(mb.data(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn mean_axis_rejects_bad_axis() {
        let a = Tensor::zeros(&[2, 2]);
        assert!(matches!(
            mean_axis(&a, 2),
            Err(TensorError::InvalidAxis { axis: 2, rank: 2 })
        ));
    }

    #[test]
    fn sigmoid_values_and_stability() {
        assert_eq!(sigmoid_scalar(0.0), 0.5);
        let tiny = sigmoid_scalar(-30.0);
        assert!(tiny > 0.0 && tiny <= 1e-12);
        assert!(sigmoid_scalar(-1000.0).is_finite());
        assert!(sigmoid_scalar(1000.0).is_finite());
        // symmetry: sigmoid(x) + sigmoid(-x) == 1
        for &x in &[0.3, 2.0, 17.5, -4.2] {
            let s = sigmoid_scalar(x) + sigmoid_scalar(-x);
            assert!((s - 1.0).abs() <= 1e-15, "x={x}: {s}");
        }
    }

    #[test]
    fn swish_values() {
        let x = Tensor::new(vec![3], vec![0.0, 2.0, -1000.0]).unwrap();
        let y = swish(&x);
        assert_eq!(y.data()[0], 0.0);
        // hand evaluation: 2 / (1 + e^-2)
        let expect = 2.0 / (1.0 + (-2.0f64).exp());
        assert!((y.data()[1] - expect).abs() < 1e-15);
        assert!(y.data()[2].abs() < 1e-300 && y.data()[2].is_finite());
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let a = Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, -50.0, 0.0, 50.0]).unwrap();
        let s = softmax_rows(&a).unwrap();
        for i in 0..2 {
            let sum: f64 = s.data()[i * 3..(i + 1) * 3].iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn flatten_frames_layer_major_order() {
        // T=1, H=2, L=3: x[0,h,l] = 10h + l
        let x = Tensor::new(vec![1, 2, 3], vec![0.0, 1.0, 2.0, 10.0, 11.0, 12.0]).unwrap();
        let f = flatten_frames(&x).unwrap();
        assert_eq!(f.shape(), &[1, 6]);
        // position h + H*l
        assert_eq!(f.data(), &[0.0, 10.0, 1.0, 11.0, 2.0, 12.0]);
    }

    #[test]
    fn stack_and_slice_roundtrip() {
        let l0 = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let l1 = Tensor::new(vec![2, 2], vec![5.0, 6.0, 7.0, 8.0]).unwrap();
        let st = stack_layers(&[&l0, &l1]).unwrap();
        assert_eq!(st.shape(), &[2, 2, 2]);
        assert_eq!(layer_slice(&st, 0).unwrap(), l0);
        assert_eq!(layer_slice(&st, 1).unwrap(), l1);
    }

    #[test]
    fn logsumexp_stable_at_extremes() {
        let a = Tensor::new(vec![2], vec![1000.0, 1000.0]).unwrap();
        let v = logsumexp(&a).unwrap().as_scalar().unwrap();
        assert!((v - (1000.0 + 2.0f64.ln())).abs() < 1e-9);
    }

    #[test]
    fn transpose_involution() {
        let a = Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let tt = transpose(&transpose(&a).unwrap()).unwrap();
        assert_eq!(tt, a);
    }
}
