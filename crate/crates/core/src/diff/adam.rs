use super::tape::ParamSet;
use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

/// First/second moment estimates for every tensor of one [`ParamSet`].
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T = f32> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Number of steps taken so far.
    pub t: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &ParamSet<T>, lr: f64) -> Self {
        let zeros = || {
            params
                .values()
                .iter()
                .map(|p| Tensor::zeros(p.rows(), p.cols()))
                .collect::<Vec<_>>()
        };
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// One bias-corrected Adam update of `params` from their accumulated
    /// gradients. Gradients are left in place; zero them before the next
    /// backward pass.
    pub fn step(&mut self, params: &mut ParamSet<T>) -> Result<()> {
        if params.len() != self.m.len()
            || params
                .values()
                .iter()
                .zip(&self.m)
                .any(|(p, m)| p.shape() != m.shape())
        {
            return Err(Error::Shape {
                op: "adam_step",
                detail: "optimizer state does not match parameter shapes".into(),
            });
        }
        if params.grads().iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("gradient"));
        }
        self.t += 1;
        let t = self.t as i32;
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let one = T::one();
        let c1 = T::lit(1.0 - self.beta1.powi(t));
        let c2 = T::lit(1.0 - self.beta2.powi(t));
        let lr = T::lit(self.lr);
        let eps = T::lit(self.eps);

        let (values, grads) = params.values_and_grads_mut();
        for (((p, g), m), v) in values.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for (((pj, &gj), mj), vj) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mj = b1 * *mj + (one - b1) * gj;
                *vj = b2 * *vj + (one - b2) * gj * gj;
                let m_hat = *mj / c1;
                let v_hat = *vj / c2;
                *pj = *pj - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        if params.values().iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("adam_step"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_params(v: f64) -> ParamSet<f64> {
        let mut p = ParamSet::new();
        p.insert("w", Tensor::scalar(v));
        p
    }

    fn set_grad(p: &mut ParamSet<f64>, g: f64) {
        p.zero_grad();
        let mut tape = crate::diff::Tape::new();
        let w = tape.param(p, "w").unwrap();
        let loss = tape.scale(w, g).unwrap();
        tape.backward_into(loss, &mut [p]).unwrap();
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = scalar_params(1.5);
        let mut adam = AdamState::new(&p, 0.001);
        for _ in 0..5 {
            adam.step(&mut p).unwrap();
        }
        assert_eq!(p.get("w").item(), 1.5);
        assert_eq!(adam.m[0].item(), 0.0);
        assert_eq!(adam.v[0].item(), 0.0);
        assert_eq!(adam.t, 5);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = scalar_params(0.0);
        set_grad(&mut p, 1.0);
        let mut adam = AdamState::new(&p, 0.001);
        adam.step(&mut p).unwrap();
        // m̂ = 1, v̂ = 1 → Δ = lr / (1 + ε)
        let expected = -0.001 / (1.0 + 1e-8);
        assert!((p.get("w").item() - expected).abs() < 1e-15);
    }

    #[test]
    fn constant_gradient_step_approaches_lr_sign() {
        let mut p = scalar_params(0.0);
        set_grad(&mut p, -3.0);
        let mut adam = AdamState::new(&p, 0.01);
        let mut last = 0.0;
        for _ in 0..2000 {
            let before = p.get("w").item();
            adam.step(&mut p).unwrap();
            last = p.get("w").item() - before;
        }
        assert!((last - 0.01).abs() < 1e-6, "step {last}");
    }

    #[test]
    fn non_finite_gradient_is_rejected() {
        let mut p = scalar_params(0.0);
        let mut adam = AdamState::new(&p, 0.001);
        set_grad(&mut p, 1.0);
        // poison the gradient through a second accumulate of +inf
        let mut tape = crate::diff::Tape::new();
        let w = tape.param(&p, "w").unwrap();
        let loss = tape.scale(w, f64::MAX).unwrap();
        tape.backward_into(loss, &mut [&mut p]).unwrap();
        tape.backward_into(loss, &mut [&mut p]).unwrap();
        assert!(matches!(adam.step(&mut p), Err(Error::NonFinite(_))));
        assert_eq!(adam.t, 0);
    }
}
