//! Independent naive-loop reference implementations used as oracles.
//!
//! Everything here is written directly from the defining equations with
//! explicit scalar loops and stays independent of the library's kernels:
//! agreement between the two is the point of the comparison tests.

#![allow(dead_code)]
#![allow(clippy::needless_range_loop, clippy::too_many_arguments)]

pub fn sigmoid_ref(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn swish_ref(x: f64) -> f64 {
    x * sigmoid_ref(x)
}

pub fn softplus_ref(x: f64) -> f64 {
    (1.0 + x.exp()).ln()
}

/// A[m,k] * B[k,n] by triple loop.
pub fn matmul_ref(a: &[f64], m: usize, k: usize, b: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut acc = 0.0;
            for p in 0..k {
                acc += a[i * k + p] * b[p * n + j];
            }
            out[i * n + j] = acc;
        }
    }
    out
}

/// Mean over one axis of a rank-3 tensor laid out [d0][d1][d2].
pub fn mean_axis3_ref(x: &[f64], dims: [usize; 3], axis: usize) -> Vec<f64> {
    let [d0, d1, d2] = dims;
    let out_dims: Vec<usize> = (0..3).filter(|&i| i != axis).map(|i| dims[i]).collect();
    let mut out = vec![0.0; out_dims.iter().product()];
    for i0 in 0..d0 {
        for i1 in 0..d1 {
            for i2 in 0..d2 {
                let v = x[(i0 * d1 + i1) * d2 + i2];
                let idx = match axis {
                    0 => i1 * d2 + i2,
                    1 => i0 * d2 + i2,
                    _ => i0 * d1 + i1,
                };
                out[idx] += v;
            }
        }
    }
    let n = dims[axis] as f64;
    for v in &mut out {
        *v /= n;
    }
    out
}

/// Squeeze: x_sq[l] = swish( sum_h ( (1/T) sum_t X[t,h,l] ) * w[h] ).
pub fn squeeze_ref(stack: &[f64], t: usize, h: usize, l: usize, w: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; l];
    for li in 0..l {
        let mut z = 0.0;
        for hi in 0..h {
            let mut mean = 0.0;
            for ti in 0..t {
                mean += stack[(ti * h + hi) * l + li];
            }
            mean /= t as f64;
            z += mean * w[hi];
        }
        out[li] = swish_ref(z);
    }
    out
}

/// Excitation: sigmoid( swish(x_sq * W1) * W2 ).
pub fn excite_ref(x_sq: &[f64], l: usize, s: usize, w1: &[f64], w2: &[f64]) -> Vec<f64> {
    let mut hidden = vec![0.0; s];
    for j in 0..s {
        let mut acc = 0.0;
        for li in 0..l {
            acc += x_sq[li] * w1[li * s + j];
        }
        hidden[j] = swish_ref(acc);
    }
    let mut out = vec![0.0; l];
    for li in 0..l {
        let mut acc = 0.0;
        for j in 0..s {
            acc += hidden[j] * w2[j * l + li];
        }
        out[li] = sigmoid_ref(acc);
    }
    out
}

/// Hadamard gate broadcast over frames and hidden dims.
pub fn reweight_ref(stack: &[f64], t: usize, h: usize, l: usize, w: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; t * h * l];
    for ti in 0..t {
        for hi in 0..h {
            for li in 0..l {
                let idx = (ti * h + hi) * l + li;
                out[idx] = stack[idx] * w[li];
            }
        }
    }
    out
}

/// Frame-flattened three-matrix bottleneck; flat position h + H*l.
pub fn merge_projection_ref(
    gated: &[f64],
    t: usize,
    h: usize,
    l: usize,
    i_dim: usize,
    w1: &[f64],
    w2: &[f64],
    w3: &[f64],
) -> Vec<f64> {
    let hl = h * l;
    let mut flat = vec![0.0; t * hl];
    for ti in 0..t {
        for hi in 0..h {
            for li in 0..l {
                flat[ti * hl + hi + h * li] = gated[(ti * h + hi) * l + li];
            }
        }
    }
    let y1 = matmul_ref(&flat, t, hl, w1, i_dim);
    let y2 = matmul_ref(&y1, t, i_dim, w2, i_dim);
    matmul_ref(&y2, t, i_dim, w3, h)
}

/// Weighted layer sum with softplus-positive weights from theta.
pub fn linm_merge_ref(stack: &[f64], t: usize, h: usize, l: usize, theta: &[f64]) -> Vec<f64> {
    let w: Vec<f64> = theta.iter().map(|&v| softplus_ref(v)).collect();
    let mut out = vec![0.0; t * h];
    for ti in 0..t {
        for hi in 0..h {
            let mut acc = 0.0;
            for li in 0..l {
                acc += w[li] * stack[(ti * h + hi) * l + li];
            }
            out[ti * h + hi] = acc;
        }
    }
    out
}

/// Single-layer gated recurrence, final-state output projection.
/// Gate blocks ordered input, forget, cell, output.
pub struct RecurrentRef<'a> {
    pub w_input: &'a [f64],  // H x 4r
    pub w_hidden: &'a [f64], // r x 4r
    pub b_gates: &'a [f64],  // 4r
    pub w_out: &'a [f64],    // r x 2
    pub b_out: &'a [f64],    // 2
}

pub fn recurrent_ref(x: &[f64], t: usize, h: usize, r: usize, p: &RecurrentRef) -> [f64; 2] {
    let mut hidden = vec![0.0; r];
    let mut cell = vec![0.0; r];
    for ti in 0..t {
        let mut gates = vec![0.0; 4 * r];
        for j in 0..4 * r {
            let mut acc = p.b_gates[j];
            for hi in 0..h {
                acc += x[ti * h + hi] * p.w_input[hi * 4 * r + j];
            }
            for q in 0..r {
                acc += hidden[q] * p.w_hidden[q * 4 * r + j];
            }
            gates[j] = acc;
        }
        let mut new_hidden = vec![0.0; r];
        for q in 0..r {
            let gi = sigmoid_ref(gates[q]);
            let gf = sigmoid_ref(gates[r + q]);
            let gg = gates[2 * r + q].tanh();
            let go = sigmoid_ref(gates[3 * r + q]);
            cell[q] = gf * cell[q] + gi * gg;
            new_hidden[q] = go * cell[q].tanh();
        }
        hidden = new_hidden;
    }
    let mut logits = [0.0; 2];
    for k in 0..2 {
        let mut acc = p.b_out[k];
        for q in 0..r {
            acc += hidden[q] * p.w_out[q * 2 + k];
        }
        logits[k] = acc;
    }
    logits
}

/// Attentive-statistics pooling: swish projection, softmax-normalized
/// frame scores, weighted mean and stddev, output projection.
pub struct PoolingRef<'a> {
    pub w_proj: &'a [f64],  // H x p
    pub b_proj: &'a [f64],  // p
    pub w_score: &'a [f64], // p x 1
    pub b_score: &'a [f64], // 1
    pub w_out: &'a [f64],   // 2p x 2
    pub b_out: &'a [f64],   // 2
}

pub fn pooling_ref(x: &[f64], t: usize, h: usize, pd: usize, p: &PoolingRef) -> [f64; 2] {
    let mut v = vec![0.0; t * pd];
    for ti in 0..t {
        for j in 0..pd {
            let mut acc = p.b_proj[j];
            for hi in 0..h {
                acc += x[ti * h + hi] * p.w_proj[hi * pd + j];
            }
            v[ti * pd + j] = swish_ref(acc);
        }
    }
    let mut scores = vec![0.0; t];
    for ti in 0..t {
        let mut acc = p.b_score[0];
        for j in 0..pd {
            acc += v[ti * pd + j] * p.w_score[j];
        }
        scores[ti] = acc;
    }
    let mx = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|&s| (s - mx).exp()).collect();
    let z: f64 = exps.iter().sum();
    let alpha: Vec<f64> = exps.iter().map(|&e| e / z).collect();

    let mut mean = vec![0.0; pd];
    let mut second = vec![0.0; pd];
    for ti in 0..t {
        for j in 0..pd {
            mean[j] += alpha[ti] * v[ti * pd + j];
            second[j] += alpha[ti] * v[ti * pd + j] * v[ti * pd + j];
        }
    }
    let std: Vec<f64> = mean
        .iter()
        .zip(&second)
        .map(|(&m, &s)| {
            let var = s - m * m;
            if var > 0.0 {
                var.sqrt()
            } else {
                0.0
            }
        })
        .collect();

    let mut logits = [0.0; 2];
    for k in 0..2 {
        let mut acc = p.b_out[k];
        for j in 0..pd {
            acc += mean[j] * p.w_out[j * 2 + k];
            acc += std[j] * p.w_out[(pd + j) * 2 + k];
        }
        logits[k] = acc;
    }
    logits
}

/// Brute-force equal error rate: rescan every trial at every distinct
/// threshold (ascending), accept spoof at score >= threshold, find the
/// first threshold where FAR - FRR changes sign, interpolate linearly.
pub fn eer_ref(bona: &[f64], spoof: &[f64]) -> f64 {
    let mut thresholds: Vec<f64> = bona.iter().chain(spoof.iter()).cloned().collect();
    thresholds.sort_by(|a, b| a.partial_cmp(b).unwrap());
    thresholds.dedup();

    let rates = |t: f64| -> (f64, f64) {
        let fa = spoof.iter().filter(|&&s| s >= t).count() as f64 / spoof.len() as f64;
        let fr = bona.iter().filter(|&&s| s < t).count() as f64 / bona.len() as f64;
        (fa, fr)
    };

    let mut prev: Option<(f64, f64)> = None;
    for &t in &thresholds {
        let (far, frr) = rates(t);
        let diff = far - frr;
        if diff <= 0.0 {
            if diff == 0.0 {
                return far;
            }
            match prev {
                None => return far,
                Some((pfar, pfrr)) => {
                    let d1 = pfar - pfrr;
                    let d2 = diff;
                    let s = d1 / (d1 - d2);
                    return pfar + s * (far - pfar);
                }
            }
        }
        prev = Some((far, frr));
    }
    // crossing against the virtual all-reject point (FAR 0, FRR 1)
    let (pfar, pfrr) = prev.expect("at least one threshold");
    let d1 = pfar - pfrr;
    let s = d1 / (d1 - (0.0 - 1.0));
    pfar + s * (0.0 - pfar)
}

/// Deterministic xorshift generator so oracle inputs need no crate RNG.
pub struct TestRng(u64);

impl TestRng {
    pub fn new(seed: u64) -> Self {
        Self(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).max(1))
    }

    pub fn next_u64(&mut self) -> u64 {
        let mut x = self.0;
        x ^= x << 13;
        x ^= x >> 7;
        x ^= x << 17;
        self.0 = x;
        x
    }

    /// Uniform in [lo, hi).
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        let u = (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
        lo + u * (hi - lo)
    }

    pub fn index(&mut self, n: usize) -> usize {
        (self.next_u64() % n as u64) as usize
    }

    pub fn fill(&mut self, n: usize, lo: f64, hi: f64) -> Vec<f64> {
        (0..n).map(|_| self.uniform(lo, hi)).collect()
    }
}
