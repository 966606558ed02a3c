//! Single-layer multi-head self-attention with hand-derived backward pass.

use ndarray::{s, Array1, Array2, ArrayViewD, ArrayViewMutD};

use crate::tensor::{with_prefix, with_prefix_mut, TensorCollection};

/// Query/key/value projections for `heads` heads laid side by side in
/// `d x d` matrices. There is no output projection: head contexts are
/// concatenated directly.
#[derive(Debug, Clone)]
pub struct SelfAttention {
    pub wq: Array2<f64>,
    pub wk: Array2<f64>,
    pub wv: Array2<f64>,
    pub heads: usize,
}

/// Intermediates kept from a forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct AttentionCache {
    x: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    attn: Vec<Array2<f64>>,
}

impl SelfAttention {
    pub fn zeros(dim: usize, heads: usize) -> Self {
        assert!(heads >= 1 && dim % heads == 0, "dim must divide into heads");
        SelfAttention {
            wq: Array2::zeros((dim, dim)),
            wk: Array2::zeros((dim, dim)),
            wv: Array2::zeros((dim, dim)),
            heads,
        }
    }

    pub fn dim(&self) -> usize {
        self.wq.nrows()
    }

    fn head_dim(&self) -> usize {
        self.dim() / self.heads
    }

    /// Runs attention over `x` (rows are positions). `key_valid[j]` gates
    /// position `j` as an attention key; with `causal` set, position `t`
    /// additionally only sees `j <= t`. Rows with no admissible key yield a
    /// zero context row.
    pub fn forward(
        &self,
        x: &Array2<f64>,
        key_valid: &[bool],
        causal: bool,
    ) -> (Array2<f64>, AttentionCache) {
        let len = x.nrows();
        let dim = self.dim();
        assert_eq!(x.ncols(), dim, "input width must match attention dim");
        assert_eq!(key_valid.len(), len);

        let q = x.dot(&self.wq);
        let k = x.dot(&self.wk);
        let v = x.dot(&self.wv);
        let scale = 1.0 / (self.head_dim() as f64).sqrt();

        let mut ctx = Array2::zeros((len, dim));
        let mut attn = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let cols = s![.., h * self.head_dim()..(h + 1) * self.head_dim()];
            let qh = q.slice(cols);
            let kh = k.slice(cols);
            let vh = v.slice(cols);

            let mut a = Array2::zeros((len, len));
            for t in 0..len {
                let mut max_logit = f64::NEG_INFINITY;
                let mut logits = vec![f64::NEG_INFINITY; len];
                for j in 0..len {
                    if !key_valid[j] || (causal && j > t) {
                        continue;
                    }
                    let logit = qh.row(t).dot(&kh.row(j)) * scale;
                    logits[j] = logit;
                    max_logit = max_logit.max(logit);
                }
                if max_logit == f64::NEG_INFINITY {
                    continue; // no admissible key: zero row
                }
                let mut denom = 0.0;
                for logit in logits.iter_mut() {
                    if *logit == f64::NEG_INFINITY {
                        *logit = 0.0;
                    } else {
                        *logit = (*logit - max_logit).exp();
                        denom += *logit;
                    }
                }
                for j in 0..len {
                    a[[t, j]] = logits[j] / denom;
                }
            }
            let ctx_h = a.dot(&vh);
            ctx.slice_mut(cols).assign(&ctx_h);
            attn.push(a);
        }

        (
            ctx,
            AttentionCache {
                x: x.clone(),
                q,
                k,
                v,
                attn,
            },
        )
    }

    /// Accumulates parameter gradients into `grads` and input gradients into
    /// `d_x`, given `d_ctx` = dLoss/dContext.
    pub fn backward(
        &self,
        cache: &AttentionCache,
        d_ctx: &Array2<f64>,
        grads: &mut SelfAttention,
        d_x: &mut Array2<f64>,
    ) {
        let hd = self.head_dim();
        let scale = 1.0 / (hd as f64).sqrt();

        for h in 0..self.heads {
            let cols = s![.., h * hd..(h + 1) * hd];
            let qh = cache.q.slice(cols).to_owned();
            let kh = cache.k.slice(cols).to_owned();
            let vh = cache.v.slice(cols).to_owned();
            let a = &cache.attn[h];
            let d_ctx_h = d_ctx.slice(cols).to_owned();

            let d_a = d_ctx_h.dot(&vh.t());
            let d_v = a.t().dot(&d_ctx_h);

            // Row-wise softmax backward; masked cells have a == 0 so their
            // logit gradient vanishes automatically.
            let row_dot: Array1<f64> = (&d_a * a).sum_axis(ndarray::Axis(1));
            let mut d_s = d_a.clone();
            for ((t, _), cell) in d_s.indexed_iter_mut() {
                *cell -= row_dot[t];
            }
            let d_s = &d_s * a;

            let d_q = d_s.dot(&kh) * scale;
            let d_k = d_s.t().dot(&qh) * scale;

            grads
                .wq
                .slice_mut(cols)
                .zip_mut_with(&cache.x.t().dot(&d_q), |g, v| *g += v);
            grads
                .wk
                .slice_mut(cols)
                .zip_mut_with(&cache.x.t().dot(&d_k), |g, v| *g += v);
            grads
                .wv
                .slice_mut(cols)
                .zip_mut_with(&cache.x.t().dot(&d_v), |g, v| *g += v);

            let wq_h = self.wq.slice(cols);
            let wk_h = self.wk.slice(cols);
            let wv_h = self.wv.slice(cols);
            *d_x += &d_q.dot(&wq_h.t());
            *d_x += &d_k.dot(&wk_h.t());
            *d_x += &d_v.dot(&wv_h.t());
        }
    }
}

impl TensorCollection for SelfAttention {
    fn tensors(&self) -> Vec<(String, ArrayViewD<'_, f64>)> {
        vec![
            ("wq".into(), self.wq.view().into_dyn()),
            ("wk".into(), self.wk.view().into_dyn()),
            ("wv".into(), self.wv.view().into_dyn()),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, f64>)> {
        vec![
            ("wq".into(), self.wq.view_mut().into_dyn()),
            ("wk".into(), self.wk.view_mut().into_dyn()),
            ("wv".into(), self.wv.view_mut().into_dyn()),
        ]
    }
}

/// Helpers so nesting structs can expose attention tensors with a prefix.
impl SelfAttention {
    pub fn prefixed_tensors(&self, prefix: &str) -> Vec<(String, ArrayViewD<'_, f64>)> {
        with_prefix(prefix, self.tensors())
    }

    pub fn prefixed_tensors_mut(&mut self, prefix: &str) -> Vec<(String, ArrayViewMutD<'_, f64>)> {
        with_prefix_mut(prefix, self.tensors_mut())
    }
}
