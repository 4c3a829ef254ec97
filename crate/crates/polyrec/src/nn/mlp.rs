//! Multilayer perceptron with hand-written forward/backward passes.
//!
//! Layout convention: every layer stores its weight matrix as `out x in` and
//! inputs are batches of row vectors (`batch x dim`). ReLU follows every
//! layer except the last, which stays linear; inverted dropout is applied to
//! hidden activations in train mode so eval is a plain affine/ReLU chain.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::matrix::{add_grad_input, add_grad_weight, matmul_xwt, Matrix};
use super::NnError;

/// Forward-pass mode. Train applies dropout (when the rate is nonzero) and
/// records everything backward needs; eval is deterministic.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// One affine layer, weight stored `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }
}

/// A stack of affine layers with ReLU between them.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Layer>,
}

/// Everything `backward` needs to replay a forward pass: the input each
/// layer saw, and for each hidden layer the combined ReLU/dropout mask.
pub struct MlpCache {
    inputs: Vec<Matrix>,
    masks: Vec<Matrix>,
}

/// Per-layer parameter gradients, same shapes as the layers themselves.
#[derive(Debug, Clone)]
pub struct LayerGrad {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct MlpGrads {
    pub layers: Vec<LayerGrad>,
}

impl MlpGrads {
    pub fn zeros_like(mlp: &Mlp) -> Self {
        let layers = mlp
            .layers
            .iter()
            .map(|l| LayerGrad {
                weight: Matrix::zeros(l.weight.rows(), l.weight.cols()),
                bias: vec![0.0; l.bias.len()],
            })
            .collect();
        Self { layers }
    }

    /// Reset all gradients to zero (buffer reuse between batches).
    pub fn zero(&mut self) {
        for layer in &mut self.layers {
            layer.weight.data_mut().fill(0.0);
            layer.bias.fill(0.0);
        }
    }

    pub fn add_assign(&mut self, other: &MlpGrads) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.weight.data_mut().iter_mut().zip(b.weight.data()) {
                *x += y;
            }
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                *x += y;
            }
        }
    }
}

impl Mlp {
    /// Seeded init: weights `Uniform(+-sqrt(6/fan_in))`, biases zero.
    pub fn init(dims: &[usize], rng: &mut ChaCha8Rng) -> Result<Self, NnError> {
        if dims.len() < 2 {
            return Err(NnError::InvalidDims(format!(
                "need at least 2 layer dims, got {}",
                dims.len()
            )));
        }
        if let Some(&bad) = dims.iter().find(|&&d| d == 0) {
            return Err(NnError::InvalidDims(format!("layer dim must be positive, got {bad}")));
        }
        let layers = dims
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = (6.0 / fan_in as f64).sqrt();
                let weight =
                    Matrix::from_fn(fan_out, fan_in, |_, _| rng.random_range(-bound..bound));
                Layer { weight, bias: vec![0.0; fan_out] }
            })
            .collect();
        Ok(Self { layers })
    }

    /// Convenience wrapper when a dedicated seed is wanted.
    pub fn init_seeded(dims: &[usize], seed: u64) -> Result<Self, NnError> {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::init(dims, &mut rng)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<Self, NnError> {
        if layers.is_empty() {
            return Err(NnError::InvalidDims("empty layer list".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(NnError::InvalidDims(format!(
                    "layer dims do not chain: {} -> {}",
                    pair[0].out_dim(),
                    pair[1].in_dim()
                )));
            }
        }
        Ok(Self { layers })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").out_dim()
    }

    /// Layer widths as `[in, h1, .., out]`.
    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.input_dim()];
        d.extend(self.layers.iter().map(|l| l.out_dim()));
        d
    }

    /// Full forward pass returning the cache needed by [`Mlp::backward`].
    ///
    /// Dropout draws consume `rng` in a fixed row-major order, so a given
    /// seed always produces the same masks.
    pub fn forward(
        &self,
        input: &Matrix,
        dropout_rate: f64,
        mode: Mode,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(Matrix, MlpCache), NnError> {
        if input.cols() != self.input_dim() {
            return Err(NnError::DimMismatch { expected: self.input_dim(), actual: input.cols() });
        }
        if !(0.0..1.0).contains(&dropout_rate) {
            return Err(NnError::InvalidDropout(dropout_rate));
        }
        let apply_dropout = mode == Mode::Train && dropout_rate > 0.0;
        let mut rng = rng;
        if apply_dropout && rng.is_none() {
            return Err(NnError::MissingRng);
        }

        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut masks = Vec::with_capacity(self.layers.len().saturating_sub(1));
        let mut current = input.clone();
        let last = self.layers.len() - 1;
        for (li, layer) in self.layers.iter().enumerate() {
            let mut z = affine(&current, layer);
            inputs.push(current);
            if li < last {
                let mut mask = Matrix::zeros(z.rows(), z.cols());
                if apply_dropout {
                    let keep_scale = 1.0 / (1.0 - dropout_rate);
                    let r = rng.as_mut().expect("checked above");
                    for (zv, mv) in z.data_mut().iter_mut().zip(mask.data_mut().iter_mut()) {
                        // one draw per unit, independent of the ReLU state
                        let keep = r.random::<f64>() >= dropout_rate;
                        let m = if keep && *zv > 0.0 { keep_scale } else { 0.0 };
                        *zv *= m;
                        *mv = m;
                    }
                } else {
                    for (zv, mv) in z.data_mut().iter_mut().zip(mask.data_mut().iter_mut()) {
                        if *zv > 0.0 {
                            *mv = 1.0;
                        } else {
                            *zv = 0.0;
                        }
                    }
                }
                masks.push(mask);
            }
            current = z;
        }
        Ok((current, MlpCache { inputs, masks }))
    }

    /// Eval-mode forward without cache bookkeeping.
    pub fn forward_eval(&self, input: &Matrix) -> Result<Matrix, NnError> {
        if input.cols() != self.input_dim() {
            return Err(NnError::DimMismatch { expected: self.input_dim(), actual: input.cols() });
        }
        let last = self.layers.len() - 1;
        let mut current = input.clone();
        for (li, layer) in self.layers.iter().enumerate() {
            let mut z = affine(&current, layer);
            if li < last {
                for v in z.data_mut() {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
            current = z;
        }
        Ok(current)
    }

    /// Exact gradients of the forward map recorded in `cache`.
    ///
    /// Returns parameter gradients and the gradient w.r.t. the input batch.
    pub fn backward(&self, cache: &MlpCache, grad_output: &Matrix) -> Result<(MlpGrads, Matrix), NnError> {
        let mut grads = MlpGrads::zeros_like(self);
        let grad_in = self
            .backward_into(cache, grad_output, &mut grads, true)?
            .expect("input grad requested");
        Ok((grads, grad_in))
    }

    /// [`Mlp::backward`] into a caller-owned gradient buffer, so training
    /// loops can reuse allocations across batches. `grads` is overwritten.
    ///
    /// When the caller does not need the gradient w.r.t. the input batch
    /// (the usual case for networks fed raw data), `need_input_grad = false`
    /// skips the first layer's input-gradient product entirely.
    pub fn backward_into(
        &self,
        cache: &MlpCache,
        grad_output: &Matrix,
        grads: &mut MlpGrads,
        need_input_grad: bool,
    ) -> Result<Option<Matrix>, NnError> {
        if cache.inputs.len() != self.layers.len() || grads.layers.len() != self.layers.len() {
            return Err(NnError::CacheMismatch);
        }
        if grad_output.cols() != self.output_dim()
            || grad_output.rows() != cache.inputs[0].rows()
        {
            return Err(NnError::DimMismatch {
                expected: self.output_dim(),
                actual: grad_output.cols(),
            });
        }

        grads.zero();
        let mut grad = grad_output.clone();
        for li in (0..self.layers.len()).rev() {
            let layer = &self.layers[li];
            let input = &cache.inputs[li];
            // Hidden layers: push grad through the stored ReLU/dropout mask.
            if li < self.layers.len() - 1 {
                let mask = &cache.masks[li];
                for (gv, mv) in grad.data_mut().iter_mut().zip(mask.data()) {
                    *gv *= mv;
                }
            }
            let lg = &mut grads.layers[li];
            add_grad_weight(&grad, input, &mut lg.weight, &mut lg.bias);
            if li == 0 && !need_input_grad {
                return Ok(None);
            }
            let mut grad_in = Matrix::zeros(input.rows(), input.cols());
            add_grad_input(&grad, &layer.weight, &mut grad_in);
            grad = grad_in;
        }
        Ok(Some(grad))
    }
}

/// `y = x W^T + b` over a batch of row vectors.
fn affine(input: &Matrix, layer: &Layer) -> Matrix {
    let mut out = Matrix::zeros(input.rows(), layer.out_dim());
    matmul_xwt(input, &layer.weight, &layer.bias, &mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::gradient_check;
    use rand::SeedableRng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn init_shapes_and_bounds() {
        let mlp = Mlp::init_seeded(&[4, 3], 7).unwrap();
        assert_eq!(mlp.layers().len(), 1);
        assert_eq!(mlp.layers()[0].weight.rows(), 3);
        assert_eq!(mlp.layers()[0].weight.cols(), 4);
        assert_eq!(mlp.layers()[0].bias.len(), 3);

        let big = Mlp::init_seeded(&[600, 256, 128, 3], 11).unwrap();
        let bound = (6.0f64 / 600.0).sqrt();
        assert!(big.layers()[0].weight.data().iter().all(|w| w.abs() <= bound));
        let bound2 = (6.0f64 / 256.0).sqrt();
        assert!(big.layers()[1].weight.data().iter().all(|w| w.abs() <= bound2));
    }

    #[test]
    fn init_is_deterministic() {
        let a = Mlp::init_seeded(&[8, 5, 2], 42).unwrap();
        let b = Mlp::init_seeded(&[8, 5, 2], 42).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn init_rejects_bad_dims() {
        assert!(Mlp::init_seeded(&[4], 0).is_err());
        assert!(Mlp::init_seeded(&[4, 0, 2], 0).is_err());
    }

    #[test]
    fn identity_layer_eval() {
        let weight = Matrix::from_fn(3, 3, |r, c| if r == c { 1.0 } else { 0.0 });
        let mlp = Mlp::from_layers(vec![Layer { weight, bias: vec![0.0; 3] }]).unwrap();
        let x = Matrix::from_vec(1, 3, vec![0.5, -2.0, 3.0]);
        let y = mlp.forward_eval(&x).unwrap();
        assert_eq!(y.row(0), x.row(0));
    }

    #[test]
    fn zero_dropout_train_matches_eval() {
        let mlp = Mlp::init_seeded(&[6, 4, 2], 3).unwrap();
        let x = Matrix::from_fn(5, 6, |r, c| (r as f64 - 2.0) * 0.3 + c as f64 * 0.1);
        let mut r = rng(9);
        let (train_out, _) = mlp.forward(&x, 0.0, Mode::Train, Some(&mut r)).unwrap();
        let eval_out = mlp.forward_eval(&x).unwrap();
        assert_eq!(train_out.data(), eval_out.data());
    }

    #[test]
    fn dropout_preserves_expected_activation() {
        // Monte Carlo over masks: mean train-mode hidden output ~ eval output.
        let mlp = Mlp::init_seeded(&[10, 32, 1], 5).unwrap();
        let x = Matrix::from_fn(1, 10, |_, c| 0.2 + c as f64 * 0.05);
        let eval_out = mlp.forward_eval(&x).unwrap().row(0)[0];
        let mut r = rng(123);
        let n = 20_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let (out, _) = mlp.forward(&x, 0.4, Mode::Train, Some(&mut r)).unwrap();
            sum += out.row(0)[0];
        }
        let mean = sum / n as f64;
        assert!(
            (mean - eval_out).abs() <= 0.02 * eval_out.abs().max(1.0),
            "mean {mean} vs eval {eval_out}"
        );
    }

    #[test]
    fn dropout_rate_validated() {
        let mlp = Mlp::init_seeded(&[4, 2], 0).unwrap();
        let x = Matrix::zeros(1, 4);
        let mut r = rng(0);
        assert!(matches!(
            mlp.forward(&x, 1.0, Mode::Train, Some(&mut r)),
            Err(NnError::InvalidDropout(_))
        ));
        assert!(matches!(
            mlp.forward(&x, -0.1, Mode::Eval, None),
            Err(NnError::InvalidDropout(_))
        ));
    }

    #[test]
    fn dim_mismatch_rejected() {
        let mlp = Mlp::init_seeded(&[4, 2], 0).unwrap();
        let x = Matrix::zeros(1, 5);
        assert!(matches!(
            mlp.forward_eval(&x),
            Err(NnError::DimMismatch { expected: 4, actual: 5 })
        ));
    }

    #[test]
    fn linear_layer_gradient_closed_form() {
        // y = Wx, single sample: dW = g (outer) x, dx = g W.
        let weight = Matrix::from_vec(2, 3, vec![1.0, -2.0, 0.5, 0.0, 1.5, -1.0]);
        let mlp = Mlp::from_layers(vec![Layer { weight, bias: vec![0.0; 2] }]).unwrap();
        let x = Matrix::from_vec(1, 3, vec![2.0, 1.0, -1.0]);
        let (_, cache) = mlp.forward(&x, 0.0, Mode::Eval, None).unwrap();
        let g = Matrix::from_vec(1, 2, vec![0.7, -0.3]);
        let (grads, gx) = mlp.backward(&cache, &g).unwrap();
        let gw = &grads.layers[0].weight;
        for o in 0..2 {
            for i in 0..3 {
                assert!((gw.row(o)[i] - g.row(0)[o] * x.row(0)[i]).abs() < 1e-12);
            }
        }
        // dx = g W
        for i in 0..3 {
            let expect = 0.7 * mlp.layers()[0].weight.row(0)[i] - 0.3 * mlp.layers()[0].weight.row(1)[i];
            assert!((gx.row(0)[i] - expect).abs() < 1e-12);
        }
        assert_eq!(grads.layers[0].bias, vec![0.7, -0.3]);
    }

    #[test]
    fn relu_blocks_gradient_at_negative_preactivation() {
        // One hidden unit driven negative: its incoming weights get no grad.
        let w1 = Matrix::from_vec(1, 1, vec![1.0]);
        let w2 = Matrix::from_vec(1, 1, vec![3.0]);
        let mlp = Mlp::from_layers(vec![
            Layer { weight: w1, bias: vec![0.0] },
            Layer { weight: w2, bias: vec![0.0] },
        ])
        .unwrap();
        let x = Matrix::from_vec(1, 1, vec![-2.0]);
        let (_, cache) = mlp.forward(&x, 0.0, Mode::Eval, None).unwrap();
        let (grads, gx) = mlp.backward(&cache, &Matrix::from_vec(1, 1, vec![1.0])).unwrap();
        assert_eq!(grads.layers[0].weight.row(0)[0], 0.0);
        assert_eq!(gx.row(0)[0], 0.0);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mlp = Mlp::init_seeded(&[5, 7, 3], 21).unwrap();
        let x = Matrix::from_fn(4, 5, |r, c| ((r * 5 + c) as f64 * 0.37).sin());
        let target = Matrix::from_fn(4, 3, |r, c| ((r * 3 + c) as f64 * 0.11).cos());

        // loss = mean squared error against a fixed target
        let loss_of = |m: &Mlp| -> f64 {
            let y = m.forward_eval(&x).unwrap();
            let mut s = 0.0;
            for (yv, tv) in y.data().iter().zip(target.data()) {
                s += (yv - tv) * (yv - tv);
            }
            s / y.data().len() as f64
        };

        let (y, cache) = mlp.forward(&x, 0.0, Mode::Eval, None).unwrap();
        let mut grad_out = Matrix::zeros(4, 3);
        let n = y.data().len() as f64;
        for i in 0..y.data().len() {
            grad_out.data_mut()[i] = 2.0 * (y.data()[i] - target.data()[i]) / n;
        }
        let (grads, _) = mlp.backward(&cache, &grad_out).unwrap();

        // flatten params + analytic grads in the same order
        let work = mlp.clone();
        for li in 0..work.layers().len() {
            for kind in 0..2 {
                let len = if kind == 0 {
                    work.layers()[li].weight.data().len()
                } else {
                    work.layers()[li].bias.len()
                };
                let analytic: Vec<f64> = if kind == 0 {
                    grads.layers[li].weight.data().to_vec()
                } else {
                    grads.layers[li].bias.clone()
                };
                let coords: Vec<usize> = (0..len).step_by(3).collect();
                let mut params: Vec<f64> = if kind == 0 {
                    work.layers()[li].weight.data().to_vec()
                } else {
                    work.layers()[li].bias.clone()
                };
                let err = gradient_check(
                    |p: &[f64]| {
                        let mut probe = work.clone();
                        if kind == 0 {
                            probe.layers_mut()[li].weight.data_mut().copy_from_slice(p);
                        } else {
                            probe.layers_mut()[li].bias.copy_from_slice(p);
                        }
                        loss_of(&probe)
                    },
                    &mut params,
                    &analytic,
                    1e-3,
                    &coords,
                );
                assert!(err < 1e-4, "layer {li} kind {kind}: max rel err {err}");
            }
        }
    }
}
