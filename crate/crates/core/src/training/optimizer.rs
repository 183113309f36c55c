use crate::autodiff::{Gradients, ParamSet};
use crate::real::Real;

use super::{Result, TrainError};

/// Rectified Adam.
#[derive(Debug, Clone, PartialEq)]
pub struct RAdam<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Number of updates applied so far.
    pub t: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Real> RAdam<T> {
    pub fn new(set: &ParamSet<T>) -> Self {
        let zeros: Vec<Vec<T>> = set.iter().map(|p| vec![T::zero(); p.data.len()]).collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// Variance-rectification factor for update `t` (1-based), or `None`
    /// while the approximated SMA length is at most 4.
    pub fn rectification(&self, t: u64) -> Option<f64> {
        let b2t = self.beta2.powi(t as i32);
        let rho_inf = 2.0 / (1.0 - self.beta2) - 1.0;
        let rho = rho_inf - 2.0 * t as f64 * b2t / (1.0 - b2t);
        if rho > 4.0 {
            Some(
                ((rho - 4.0) * (rho - 2.0) * rho_inf / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho)).sqrt(),
            )
        } else {
            None
        }
    }

    pub fn step(&mut self, set: &mut ParamSet<T>, grads: &Gradients<T>, lr: f64) -> Result<()> {
        if grads.tensors.len() != self.m.len() {
            return Err(TrainError::Config(format!(
                "{} gradient tensors for {} optimizer slots",
                grads.tensors.len(),
                self.m.len()
            )));
        }
        if !grads.all_finite() {
            return Err(TrainError::NonFinite {
                what: "gradient",
                step: self.t,
                detail: "optimizer input".into(),
            });
        }
        self.t += 1;
        let t = self.t;
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let (c1, c2) = (T::one() - b1, T::one() - b2);
        let bias1 = T::lit(1.0 - self.beta1.powi(t as i32));
        let bias2 = T::lit(1.0 - self.beta2.powi(t as i32));
        let rect = self.rectification(t);
        let lr = T::lit(lr);
        let eps = T::lit(self.eps);
        for (i, g) in grads.tensors.iter().enumerate() {
            let p = &mut set.get_mut(i).data;
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for k in 0..g.len() {
                m[k] = b1 * m[k] + c1 * g[k];
                v[k] = b2 * v[k] + c2 * g[k] * g[k];
                let m_hat = m[k] / bias1;
                match rect {
                    Some(r) => {
                        let v_hat = (v[k] / bias2).sqrt();
                        p[k] -= lr * T::lit(r) * m_hat / (v_hat + eps);
                    }
                    None => p[k] -= lr * m_hat,
                }
            }
        }
        Ok(())
    }
}
