//! First-order optimizers over flat parameter vectors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub trait Optimizer {
    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) -> Result<()>;
}

fn check_grad(params: &[f64], grad: &[f64]) -> Result<()> {
    if params.len() != grad.len() {
        return Err(Error::invalid(format!(
            "gradient has {} entries, parameters {}",
            grad.len(),
            params.len()
        )));
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NumericFailure("non-finite gradient".into()));
    }
    Ok(())
}

/// Adam with bias-corrected moment estimates.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(dim: usize, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            beta1,
            beta2,
            eps,
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            t: 0,
        }
    }

    pub fn with_defaults(dim: usize) -> Self {
        Self::new(dim, 0.9, 0.999, 1e-8)
    }

    pub fn steps_taken(&self) -> i32 {
        self.t
    }
}

impl Optimizer for Adam {
    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) -> Result<()> {
        check_grad(params, grad)?;
        if self.m.len() != params.len() {
            return Err(Error::invalid("optimizer state does not match parameters"));
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

/// Plain gradient descent.
#[derive(Clone, Debug, Default)]
pub struct Sgd;

impl Optimizer for Sgd {
    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) -> Result<()> {
        check_grad(params, grad)?;
        for (p, g) in params.iter_mut().zip(grad) {
            *p -= lr * g;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn first_step_is_sign_scaled() {
        let mut adam = Adam::with_defaults(3);
        let mut p = vec![1.0, 1.0, 1.0];
        adam.step(&mut p, &[0.5, -20.0, 1e-3], 0.01).unwrap();
        assert_relative_eq!(p[0], 0.99, epsilon = 1e-7);
        assert_relative_eq!(p[1], 1.01, epsilon = 1e-7);
        assert_relative_eq!(p[2], 0.99, epsilon = 1e-5);
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut adam = Adam::with_defaults(2);
        let mut p = vec![0.3, -0.7];
        adam.step(&mut p, &[0.0, 0.0], 0.1).unwrap();
        assert_eq!(p, vec![0.3, -0.7]);
    }

    #[test]
    fn repeated_gradient_does_not_grow_the_step() {
        // With identical gradients m̂ = g and v̂ = g², so steps stay equal up
        // to the eps term; they never grow.
        let mut adam = Adam::with_defaults(1);
        let mut p = vec![0.0];
        adam.step(&mut p, &[2.0], 0.1).unwrap();
        let first = -p[0];
        let before = p[0];
        adam.step(&mut p, &[2.0], 0.1).unwrap();
        let second = before - p[0];
        assert!(second <= first + 1e-15, "{second} > {first}");
    }

    #[test]
    fn non_finite_gradient_is_rejected() {
        let mut adam = Adam::with_defaults(1);
        let mut p = vec![0.0];
        assert!(matches!(adam.step(&mut p, &[f64::NAN], 0.1), Err(Error::NumericFailure(_))));
        assert!(Sgd.step(&mut p, &[1.0, 2.0], 0.1).is_err());
    }
}
