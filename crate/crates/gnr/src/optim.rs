//! Gradient-descent optimizers over [`TensorCollection`] parameter sets.

use serde::{Deserialize, Serialize};

use crate::tensor::TensorCollection;

/// Which update rule to apply.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimKind {
    Sgd,
    Adam,
}

impl Default for OptimKind {
    fn default() -> Self {
        OptimKind::Sgd
    }
}

/// Plain SGD or Adam with per-tensor moment buffers.
pub struct Optimizer {
    kind: OptimKind,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step_count: u64,
    moments: Vec<(Vec<f64>, Vec<f64>)>,
}

impl Optimizer {
    pub fn new(kind: OptimKind, lr: f64) -> Self {
        Optimizer {
            kind,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step_count: 0,
            moments: Vec::new(),
        }
    }

    pub fn learning_rate(&self) -> f64 {
        self.lr
    }

    /// Applies one update, `params -= lr * adjusted(grads)`.
    pub fn step<P: TensorCollection>(&mut self, params: &mut P, grads: &P) {
        match self.kind {
            OptimKind::Sgd => params.add_scaled(grads, -self.lr),
            OptimKind::Adam => self.adam_step(params, grads),
        }
    }

    fn adam_step<P: TensorCollection>(&mut self, params: &mut P, grads: &P) {
        let grad_views = grads.tensors();
        if self.moments.is_empty() {
            self.moments = grad_views
                .iter()
                .map(|(_, g)| (vec![0.0; g.len()], vec![0.0; g.len()]))
                .collect();
        }
        self.step_count += 1;
        let t = self.step_count as f64;
        let bias1 = 1.0 - self.beta1.powf(t);
        let bias2 = 1.0 - self.beta2.powf(t);

        for (idx, (_, mut p)) in params.tensors_mut().into_iter().enumerate() {
            let (_, g) = &grad_views[idx];
            let (m, v) = &mut self.moments[idx];
            for (k, (pv, gv)) in p.iter_mut().zip(g.iter()).enumerate() {
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * gv;
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * gv * gv;
                let m_hat = m[k] / bias1;
                let v_hat = v[k] / bias2;
                *pv -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{Array1, ArrayViewD, ArrayViewMutD};

    struct Vec1(Array1<f64>);

    impl TensorCollection for Vec1 {
        fn tensors(&self) -> Vec<(String, ArrayViewD<'_, f64>)> {
            vec![("x".into(), self.0.view().into_dyn())]
        }
        fn tensors_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, f64>)> {
            vec![("x".into(), self.0.view_mut().into_dyn())]
        }
    }

    #[test]
    fn sgd_minimizes_quadratic() {
        let mut p = Vec1(Array1::from_vec(vec![3.0, -2.0]));
        let mut opt = Optimizer::new(OptimKind::Sgd, 0.1);
        for _ in 0..200 {
            let g = Vec1(p.0.clone());
            opt.step(&mut p, &g);
        }
        assert!(p.0.iter().all(|x| x.abs() < 1e-6));
    }

    #[test]
    fn adam_minimizes_quadratic() {
        let mut p = Vec1(Array1::from_vec(vec![3.0, -2.0]));
        let mut opt = Optimizer::new(OptimKind::Adam, 0.05);
        for _ in 0..2000 {
            let g = Vec1(p.0.clone());
            opt.step(&mut p, &g);
        }
        assert!(p.0.iter().all(|x| x.abs() < 1e-4), "{:?}", p.0);
    }

    #[test]
    fn zero_learning_rate_is_a_null_update() {
        let mut p = Vec1(Array1::from_vec(vec![3.0, -2.0]));
        let before = p.0.clone();
        let mut opt = Optimizer::new(OptimKind::Sgd, 0.0);
        let g = Vec1(Array1::from_vec(vec![10.0, 10.0]));
        opt.step(&mut p, &g);
        assert!(before
            .iter()
            .zip(p.0.iter())
            .all(|(a, b)| a.to_bits() == b.to_bits()));
    }
}
