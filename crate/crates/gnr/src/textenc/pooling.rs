//! Additive-attention pooling: score each row with a tanh bottleneck and a
//! learned query, softmax over valid rows, return the weighted sum.

use ndarray::{Array1, Array2, ArrayViewD, ArrayViewMutD, Axis};

use crate::tensor::{with_prefix, with_prefix_mut, TensorCollection};

#[derive(Debug, Clone)]
pub struct AdditivePool {
    pub proj: Array2<f64>,
    pub bias: Array1<f64>,
    pub query: Array1<f64>,
}

#[derive(Debug, Clone)]
pub struct PoolCache {
    xs: Array2<f64>,
    acts: Array2<f64>,
    alpha: Array1<f64>,
}

impl PoolCache {
    pub fn weights(&self) -> &Array1<f64> {
        &self.alpha
    }
}

impl AdditivePool {
    pub fn zeros(dim: usize) -> Self {
        AdditivePool {
            proj: Array2::zeros((dim, dim)),
            bias: Array1::zeros(dim),
            query: Array1::zeros(dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.query.len()
    }

    /// Pools rows of `xs` marked valid; all-invalid input yields a zero
    /// vector.
    pub fn forward(&self, xs: &Array2<f64>, valid: &[bool]) -> (Array1<f64>, PoolCache) {
        let len = xs.nrows();
        assert_eq!(xs.ncols(), self.dim(), "input width must match pool dim");
        assert_eq!(valid.len(), len);

        let acts = (xs.dot(&self.proj.t()) + &self.bias).mapv(f64::tanh);
        let scores = acts.dot(&self.query);

        let mut alpha = Array1::zeros(len);
        let max_score = scores
            .iter()
            .zip(valid)
            .filter(|(_, v)| **v)
            .map(|(s, _)| *s)
            .fold(f64::NEG_INFINITY, f64::max);
        if max_score > f64::NEG_INFINITY {
            let mut denom = 0.0;
            for (t, &ok) in valid.iter().enumerate() {
                if ok {
                    alpha[t] = (scores[t] - max_score).exp();
                    denom += alpha[t];
                }
            }
            alpha /= denom;
        }

        let out = alpha.dot(xs);
        (
            out,
            PoolCache {
                xs: xs.clone(),
                acts,
                alpha,
            },
        )
    }

    pub fn backward(
        &self,
        cache: &PoolCache,
        d_out: &Array1<f64>,
        grads: &mut AdditivePool,
        d_xs: &mut Array2<f64>,
    ) {
        let len = cache.xs.nrows();

        // out = sum_t alpha_t * x_t
        let d_alpha = cache.xs.dot(d_out);
        for t in 0..len {
            let scaled = d_out * cache.alpha[t];
            d_xs.row_mut(t).zip_mut_with(&scaled, |a, b| *a += b);
        }

        // softmax backward (alpha of invalid rows is 0, so they drop out)
        let mix: f64 = (&d_alpha * &cache.alpha).sum();
        let d_scores = &cache.alpha * &(d_alpha - mix);

        // scores_t = query . acts_t
        for t in 0..len {
            grads
                .query
                .zip_mut_with(&cache.acts.row(t), |g, a| *g += d_scores[t] * a);
        }
        let d_acts = {
            let mut d = Array2::zeros((len, self.dim()));
            for t in 0..len {
                let row = &self.query * d_scores[t];
                d.row_mut(t).assign(&row);
            }
            d
        };

        // acts = tanh(proj x + bias)
        let d_z = &d_acts * &cache.acts.mapv(|a| 1.0 - a * a);
        *(&mut grads.proj) += &d_z.t().dot(&cache.xs);
        grads.bias += &d_z.sum_axis(Axis(0));
        *d_xs += &d_z.dot(&self.proj);
    }
}

impl TensorCollection for AdditivePool {
    fn tensors(&self) -> Vec<(String, ArrayViewD<'_, f64>)> {
        vec![
            ("proj".into(), self.proj.view().into_dyn()),
            ("bias".into(), self.bias.view().into_dyn()),
            ("query".into(), self.query.view().into_dyn()),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, f64>)> {
        vec![
            ("proj".into(), self.proj.view_mut().into_dyn()),
            ("bias".into(), self.bias.view_mut().into_dyn()),
            ("query".into(), self.query.view_mut().into_dyn()),
        ]
    }
}

impl AdditivePool {
    pub fn prefixed_tensors(&self, prefix: &str) -> Vec<(String, ArrayViewD<'_, f64>)> {
        with_prefix(prefix, self.tensors())
    }

    pub fn prefixed_tensors_mut(&mut self, prefix: &str) -> Vec<(String, ArrayViewMutD<'_, f64>)> {
        with_prefix_mut(prefix, self.tensors_mut())
    }
}
