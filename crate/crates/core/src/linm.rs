//! Linear merging baseline: one positive weight per layer, combined as a
//! weighted sum, with normalized-weight export for layer-contribution
//! analysis.

use rand_chacha::ChaCha12Rng;

use crate::encoder::EmbeddingStack;
use crate::tape::{Tape, Var};
use crate::tensor::{self, Tensor, TensorError};

/// Unconstrained per-layer parameters; effective weights are
/// softplus(theta), so positivity holds for any parameter value.
#[derive(Debug, Clone)]
pub struct LinmParams {
    pub theta: Tensor,
}

#[derive(Debug, Clone, Copy)]
pub struct LinmVars {
    pub theta: Var,
}

impl LinmParams {
    /// Uniform small effective weights (softplus(-2) ~ 0.13 per layer);
    /// normalized weights start at exactly 1/L.
    pub fn init(num_layers: usize, _rng: &mut ChaCha12Rng) -> Self {
        Self {
            theta: Tensor::new(vec![num_layers], vec![-2.0; num_layers]).expect("init shape"),
        }
    }

    pub fn num_layers(&self) -> usize {
        self.theta.shape()[0]
    }

    /// Effective positive weights softplus(theta).
    pub fn weights(&self) -> Tensor {
        tensor::softplus(&self.theta)
    }

    pub fn push(&self, tape: &mut Tape) -> LinmVars {
        LinmVars {
            theta: tape.param(self.theta.clone()),
        }
    }

    pub fn entries(&self, prefix: &str) -> Vec<(String, &Tensor)> {
        vec![(format!("{prefix}.theta"), &self.theta)]
    }

    pub fn entries_mut(&mut self, prefix: &str) -> Vec<(String, &mut Tensor)> {
        vec![(format!("{prefix}.theta"), &mut self.theta)]
    }
}

impl LinmVars {
    pub fn entries(&self, prefix: &str) -> Vec<(String, Var)> {
        vec![(format!("{prefix}.theta"), self.theta)]
    }
}

/// Weighted sum over the layer axis with softplus-positive weights.
pub fn merge_tape(tape: &mut Tape, stack: Var, vars: &LinmVars) -> Result<Var, TensorError> {
    let weights = tape.softplus(vars.theta);
    tape.weighted_sum_layers(stack, weights)
}

/// Plain merge of a stack under the given parameters.
pub fn merge(stack: &EmbeddingStack, params: &LinmParams) -> Result<Tensor, TensorError> {
    let mut tape = Tape::new();
    let s = tape.constant(stack.data().clone());
    let vars = LinmVars {
        theta: tape.constant(params.theta.clone()),
    };
    let out = merge_tape(&mut tape, s, &vars)?;
    Ok(tape.value(out).clone())
}

/// Effective weights rescaled to sum to one, for layer-contribution plots.
pub fn normalized_weights(params: &LinmParams) -> Tensor {
    let w = params.weights();
    let total: f64 = w.data().iter().sum();
    tensor::scale(&w, 1.0 / total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream_rng, Stream};
    use rand::Rng;

    fn random_stack(t: usize, h: usize, l: usize, seed: u64) -> EmbeddingStack {
        let mut rng = stream_rng(seed, Stream::Data);
        let data: Vec<f64> = (0..t * h * l).map(|_| rng.random_range(-1.0..1.0)).collect();
        EmbeddingStack::new(Tensor::new(vec![t, h, l], data).unwrap(), "utt").unwrap()
    }

    #[test]
    fn uniform_theta_normalizes_to_one_over_l() {
        let mut rng = stream_rng(0, Stream::Init);
        let params = LinmParams::init(6, &mut rng);
        let n = normalized_weights(&params);
        for &v in n.data() {
            assert!((v - 1.0 / 6.0).abs() < 1e-15);
        }
        let sum: f64 = n.data().iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dominant_theta_concentrates_mass() {
        let params = LinmParams {
            theta: Tensor::new(vec![4], vec![25.0, -8.0, -8.0, -8.0]).unwrap(),
        };
        let n = normalized_weights(&params);
        assert!(n.data()[0] > 0.99);
        assert!(n.data().iter().all(|&v| v > 0.0));
    }

    #[test]
    fn merge_with_selector_weights_extracts_one_layer() {
        let stack = random_stack(3, 2, 4, 9);
        // softplus(30) saturates to 30 up to rounding; the other layers get
        // softplus(-40) which is ~4e-18
        let params = LinmParams {
            theta: Tensor::new(vec![4], vec![-40.0, 30.0, -40.0, -40.0]).unwrap(),
        };
        let merged = merge(&stack, &params).unwrap();
        let layer = tensor::layer_slice(stack.data(), 1).unwrap();
        let w1 = tensor::softplus_scalar(30.0);
        for (m, x) in merged.data().iter().zip(layer.data()) {
            assert!((m - w1 * x).abs() < 1e-12);
        }
    }

    #[test]
    fn uniform_weights_give_layer_mean() {
        let stack = random_stack(2, 3, 5, 21);
        // softplus(theta) = 1/5  =>  theta = ln(e^{1/5} - 1)
        let theta_val = (0.2f64.exp() - 1.0).ln();
        let params = LinmParams {
            theta: Tensor::new(vec![5], vec![theta_val; 5]).unwrap(),
        };
        let merged = merge(&stack, &params).unwrap();
        let mean = tensor::mean_axis(stack.data(), 2).unwrap();
        for (m, x) in merged.data().iter().zip(mean.data()) {
            assert!((m - x).abs() < 1e-12, "{m} vs {x}");
        }
    }

    #[test]
    fn merge_rejects_layer_count_mismatch() {
        let stack = random_stack(2, 2, 3, 33);
        let params = LinmParams {
            theta: Tensor::zeros(&[4]),
        };
        assert!(merge(&stack, &params).is_err());
    }
}
