//! End-to-end gradient verification: analytic backprop through each fusion
//! architecture and the masked loss vs central finite differences.

use polyrec::fusion::{
    masked_mse, masked_mse_with_grad, Architecture, FusionModel, Modality, ModelDims,
};
use polyrec::nn::gradient_check;
use polyrec::nn::matrix::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_batch(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

fn random_mask(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    loop {
        let m = Matrix::from_fn(rows, cols, |_, _| if rng.random::<f64>() < 0.7 { 1.0 } else { 0.0 });
        if m.data().iter().any(|v| *v != 0.0) {
            return m;
        }
    }
}

/// Independent re-computation of every hidden pre-activation, returning the
/// smallest |z| across the whole model. Central differences are only a valid
/// oracle away from ReLU kinks, so probe batches must keep a margin above
/// the finite-difference step.
fn min_kink_margin(model: &FusionModel, x: &Matrix) -> f64 {
    use polyrec::fusion::Components;
    use polyrec::nn::matrix::dot;
    use polyrec::nn::Mlp;

    // forward one MLP by hand, tracking min |preactivation| of hidden layers
    fn walk(mlp: &Mlp, input: &Matrix, margin: &mut f64) -> Matrix {
        let mut current = input.clone();
        let last = mlp.layers().len() - 1;
        for (li, layer) in mlp.layers().iter().enumerate() {
            let mut out = Matrix::zeros(current.rows(), layer.out_dim());
            for b in 0..current.rows() {
                for o in 0..layer.out_dim() {
                    let z = dot(current.row(b), layer.weight.row(o)) + layer.bias[o];
                    if li < last {
                        *margin = margin.min(z.abs());
                        out.row_mut(b)[o] = z.max(0.0);
                    } else {
                        out.row_mut(b)[o] = z;
                    }
                }
            }
            current = out;
        }
        current
    }

    let mut margin = f64::INFINITY;
    match model.components() {
        Components::Early { trunk } => {
            walk(trunk, x, &mut margin);
        }
        Components::GatedLate { expert_lang, expert_graph, gate } => {
            let lang_dim = expert_lang.input_dim();
            let mut xl = Matrix::zeros(x.rows(), lang_dim);
            let mut xg = Matrix::zeros(x.rows(), x.cols() - lang_dim);
            for b in 0..x.rows() {
                xl.row_mut(b).copy_from_slice(&x.row(b)[..lang_dim]);
                xg.row_mut(b).copy_from_slice(&x.row(b)[lang_dim..]);
            }
            walk(expert_lang, &xl, &mut margin);
            walk(expert_graph, &xg, &mut margin);
            walk(gate, x, &mut margin);
        }
        Components::Mmoe { experts, gates, towers } => {
            let expert_outs: Vec<Matrix> =
                experts.iter().map(|e| walk(e, x, &mut margin)).collect();
            for (gate, tower) in gates.iter().zip(towers) {
                let mut logits = walk(gate, x, &mut margin);
                // softmax rows
                let cols = logits.cols();
                for row in logits.data_mut().chunks_exact_mut(cols) {
                    let max = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
                    let mut sum = 0.0;
                    for v in row.iter_mut() {
                        *v = (*v - max).exp();
                        sum += *v;
                    }
                    for v in row.iter_mut() {
                        *v /= sum;
                    }
                }
                let mut mixture = Matrix::zeros(x.rows(), expert_outs[0].cols());
                for b in 0..x.rows() {
                    for (i, f) in expert_outs.iter().enumerate() {
                        let g = logits.row(b)[i];
                        for (m, v) in mixture.row_mut(b).iter_mut().zip(f.row(b)) {
                            *m += g * v;
                        }
                    }
                }
                walk(tower, &mixture, &mut margin);
            }
        }
    }
    margin
}

/// Loss as a pure function of one flattened parameter buffer.
fn loss_with_buffer(
    model: &FusionModel,
    mlp_idx: usize,
    layer_idx: usize,
    bias: bool,
    values: &[f64],
    x: &Matrix,
    y: &Matrix,
    mask: &Matrix,
) -> f64 {
    let mut probe = model.clone();
    {
        let mut mlps = probe.mlps_mut();
        let layer = &mut mlps[mlp_idx].layers_mut()[layer_idx];
        if bias {
            layer.bias.copy_from_slice(values);
        } else {
            layer.weight.data_mut().copy_from_slice(values);
        }
    }
    let (preds, _) = probe.forward_eval_batch(x).unwrap();
    masked_mse(&preds, y, mask).unwrap()
}

const FD_STEP: f64 = 1e-3;

fn check_architecture(arch: Architecture, seed: u64) -> f64 {
    let dims = ModelDims::tiny();
    let model = FusionModel::build(arch, Modality::Both, &dims, seed).unwrap();
    let batch = 5;
    // draw probe batches until every hidden unit clears the step by 10x
    let (x, y, mask) = (0..)
        .map(|attempt| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 1000 + attempt);
            let x = random_batch(batch, model.input_dim(), &mut rng);
            let y = random_batch(batch, 3, &mut rng);
            let mask = random_mask(batch, 3, &mut rng);
            (x, y, mask)
        })
        .find(|(x, _, _)| min_kink_margin(&model, x) > 10.0 * FD_STEP)
        .expect("some batch keeps clear of ReLU kinks");

    // analytic gradients through train-mode forward with dropout disabled
    let mut fwd_rng = ChaCha8Rng::seed_from_u64(0);
    let (preds, ctx) = model.forward_train(&x, 0.0, &mut fwd_rng).unwrap();
    let (_, grad_preds) = masked_mse_with_grad(&preds, &y, &mask).unwrap();
    let grads = model.backward(&ctx, &grad_preds).unwrap();

    let mut worst = 0.0f64;
    let n_mlps = model.mlps().len();
    for mlp_idx in 0..n_mlps {
        let n_layers = model.mlps()[mlp_idx].layers().len();
        for layer_idx in 0..n_layers {
            for bias in [false, true] {
                let (mut params, analytic): (Vec<f64>, Vec<f64>) = {
                    let layer = &model.mlps()[mlp_idx].layers()[layer_idx];
                    let g = &grads.per_mlp[mlp_idx].layers[layer_idx];
                    if bias {
                        (layer.bias.clone(), g.bias.clone())
                    } else {
                        (layer.weight.data().to_vec(), g.weight.data().to_vec())
                    }
                };
                // sample coordinates to keep the runtime bounded
                let stride = (params.len() / 24).max(1);
                let coords: Vec<usize> = (0..params.len()).step_by(stride).collect();
                let err = gradient_check(
                    |vals| loss_with_buffer(&model, mlp_idx, layer_idx, bias, vals, &x, &y, &mask),
                    &mut params,
                    &analytic,
                    FD_STEP,
                    &coords,
                );
                worst = worst.max(err);
            }
        }
    }
    worst
}

#[test]
fn early_fusion_gradients_match_finite_differences() {
    let err = check_architecture(Architecture::Early, 101);
    assert!(err < 1e-4, "max relative error {err}");
}

#[test]
fn gated_late_gradients_match_finite_differences() {
    let err = check_architecture(Architecture::GatedLate, 202);
    assert!(err < 1e-4, "max relative error {err}");
}

#[test]
fn mmoe_gradients_match_finite_differences() {
    let err = check_architecture(Architecture::Mmoe, 303);
    assert!(err < 1e-4, "max relative error {err}");
}

#[test]
fn masked_label_perturbation_leaves_gradients_bitwise_identical() {
    let dims = ModelDims::tiny();
    let model = FusionModel::build(Architecture::GatedLate, Modality::Both, &dims, 77).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(78);
    let x = random_batch(6, model.input_dim(), &mut rng);
    let y = random_batch(6, 3, &mut rng);
    let mask = random_mask(6, 3, &mut rng);

    let mut y_perturbed = y.clone();
    for i in 0..y_perturbed.data().len() {
        if mask.data()[i] == 0.0 {
            y_perturbed.data_mut()[i] = 1e12;
        }
    }

    let run = |labels: &Matrix| {
        let mut fwd_rng = ChaCha8Rng::seed_from_u64(0);
        let (preds, ctx) = model.forward_train(&x, 0.0, &mut fwd_rng).unwrap();
        let (loss, grad_preds) = masked_mse_with_grad(&preds, labels, &mask).unwrap();
        let grads = model.backward(&ctx, &grad_preds).unwrap();
        (loss, grads)
    };
    let (loss_a, grads_a) = run(&y);
    let (loss_b, grads_b) = run(&y_perturbed);
    assert_eq!(loss_a.to_bits(), loss_b.to_bits());
    for (ga, gb) in grads_a.per_mlp.iter().zip(&grads_b.per_mlp) {
        for (la, lb) in ga.layers.iter().zip(&gb.layers) {
            for (a, b) in la.weight.data().iter().zip(lb.weight.data()) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
            for (a, b) in la.bias.iter().zip(&lb.bias) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }
}
