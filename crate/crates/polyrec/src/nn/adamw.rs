//! AdamW with decoupled weight decay.

use super::NnError;

/// Optimizer state: hyperparameters plus per-buffer moment accumulators.
///
/// Moment buffers are allocated on the first step and keyed by position in
/// the parameter traversal, so callers must visit buffers in a fixed order.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    moments: Vec<Moment>,
}

#[derive(Debug, Clone)]
struct Moment {
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamW {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            moments: Vec::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One optimizer step over every parameter buffer.
    ///
    /// `p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + wd * p)`, with the usual
    /// bias-corrected first/second moments.
    pub fn step<'a, I>(&mut self, pairs: I) -> Result<(), NnError>
    where
        I: Iterator<Item = (&'a mut [f64], &'a [f64])>,
    {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (slot, (params, grads)) in pairs.enumerate() {
            if params.len() != grads.len() {
                return Err(NnError::DimMismatch { expected: params.len(), actual: grads.len() });
            }
            if grads.iter().any(|g| !g.is_finite()) {
                return Err(NnError::NonFiniteGrad);
            }
            if slot == self.moments.len() {
                self.moments.push(Moment { m: vec![0.0; params.len()], v: vec![0.0; params.len()] });
            }
            let moment = &mut self.moments[slot];
            if moment.m.len() != params.len() {
                return Err(NnError::DimMismatch { expected: moment.m.len(), actual: params.len() });
            }
            let (beta1, beta2) = (self.beta1, self.beta2);
            let (lr, wd, eps) = (self.lr, self.weight_decay, self.eps);
            let inv_bc1 = 1.0 / bc1;
            let inv_bc2 = 1.0 / bc2;
            for (((p, &g), m), v) in
                params.iter_mut().zip(grads).zip(moment.m.iter_mut()).zip(moment.v.iter_mut())
            {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let m_hat = *m * inv_bc1;
                let v_hat = *v * inv_bc2;
                *p -= lr * (m_hat / (v_hat.sqrt() + eps) + wd * *p);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_grad_applies_pure_decay() {
        // p=1, lr=0.1, wd=0.1, zero grad: p -> 1 - 0.1*0.1 = 0.99
        let mut opt = AdamW::new(0.1, 0.1);
        let mut p = vec![1.0];
        let g = vec![0.0];
        opt.step([(p.as_mut_slice(), g.as_slice())].into_iter()).unwrap();
        assert!((p[0] - 0.99).abs() < 1e-15);
    }

    #[test]
    fn first_step_is_signed_unit_step() {
        // wd=0, constant grad: first update ~ -lr * sign(g).
        let mut opt = AdamW::new(0.01, 0.0);
        let mut p = vec![0.5, 0.5];
        let g = vec![3.0, -0.02];
        opt.step([(p.as_mut_slice(), g.as_slice())].into_iter()).unwrap();
        // m_hat = g, v_hat = g^2 -> delta = -lr * g/(|g|+eps)
        assert!((p[0] - (0.5 - 0.01)).abs() < 1e-6);
        assert!((p[1] - (0.5 + 0.01)).abs() < 1e-6);
    }

    #[test]
    fn zero_lr_leaves_params_unchanged() {
        let mut opt = AdamW::new(0.0, 0.5);
        let mut p = vec![1.0, -2.0, 3.0];
        let orig = p.clone();
        let g = vec![0.3, 0.1, -0.7];
        opt.step([(p.as_mut_slice(), g.as_slice())].into_iter()).unwrap();
        assert_eq!(p, orig);
    }

    #[test]
    fn non_finite_grad_rejected() {
        let mut opt = AdamW::new(0.1, 0.0);
        let mut p = vec![1.0];
        let g = vec![f64::NAN];
        assert!(matches!(
            opt.step([(p.as_mut_slice(), g.as_slice())].into_iter()),
            Err(NnError::NonFiniteGrad)
        ));
    }

    #[test]
    fn deterministic_across_runs() {
        let run = || {
            let mut opt = AdamW::new(0.05, 1e-3);
            let mut p = vec![0.1, -0.4, 0.9];
            for k in 0..25 {
                let g: Vec<f64> = p.iter().map(|x| 2.0 * x + k as f64 * 1e-3).collect();
                opt.step([(p.as_mut_slice(), g.as_slice())].into_iter()).unwrap();
            }
            p
        };
        assert_eq!(run(), run());
    }
}
