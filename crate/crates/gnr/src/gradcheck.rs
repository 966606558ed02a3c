//! Central finite-difference verification of analytic gradients.

use ndarray::ArrayViewMutD;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::tensor::TensorCollection;

#[derive(Debug, Error)]
pub enum GradCheckError {
    #[error("loss is not finite at probe of tensor {tensor} index {index}")]
    NonFiniteLoss { tensor: String, index: usize },
    #[error("parameter set has no tensors")]
    Empty,
}

/// One probed coordinate.
#[derive(Debug, Clone)]
pub struct Probe {
    pub tensor: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

/// Result of a finite-difference sweep.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub probes: Vec<Probe>,
    pub max_rel_err: f64,
    pub epsilon: f64,
}

impl GradCheckReport {
    pub fn within(&self, tolerance: f64) -> bool {
        self.max_rel_err <= tolerance
    }

    /// Probe with the largest relative error, if any probe ran.
    pub fn worst(&self) -> Option<&Probe> {
        self.probes
            .iter()
            .max_by(|a, b| a.rel_err.total_cmp(&b.rel_err))
    }
}

// Central differences carry ~|loss|*1e-16/epsilon of rounding noise, so a
// raw ratio blows up on near-zero coordinates. Flooring the denominator
// compares those on an absolute scale instead; a real sign or factor bug
// still produces a ratio orders of magnitude above any tolerance.
fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if diff == 0.0 {
        return 0.0;
    }
    diff / analytic.abs().max(numeric.abs()).max(1e-6)
}

fn perturb(view: &mut ArrayViewMutD<'_, f64>, flat_index: usize, delta: f64) {
    let slice = view
        .as_slice_memory_order_mut()
        .expect("parameter tensors are contiguous");
    slice[flat_index] += delta;
}

/// Compares `analytic` gradients against central finite differences of
/// `loss`, probing `probes_per_tensor` random coordinates in every tensor.
///
/// `params` is restored to its entry state. The analytic gradient must have
/// been computed at exactly the entry state.
pub fn check_gradients<P, F>(
    params: &mut P,
    analytic: &P,
    mut loss: F,
    probes_per_tensor: usize,
    epsilon: f64,
    seed: u64,
) -> Result<GradCheckReport, GradCheckError>
where
    P: TensorCollection,
    F: FnMut(&P) -> f64,
{
    let names: Vec<(String, usize)> = params
        .tensors()
        .into_iter()
        .map(|(name, view)| (name, view.len()))
        .collect();
    if names.is_empty() {
        return Err(GradCheckError::Empty);
    }
    let grads: Vec<Vec<f64>> = analytic
        .tensors()
        .into_iter()
        .map(|(_, view)| view.iter().copied().collect())
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probes = Vec::new();

    for (tensor_idx, (name, len)) in names.iter().enumerate() {
        if *len == 0 {
            continue;
        }
        let picks = sample_indices(&mut rng, *len, probes_per_tensor);
        for flat in picks {
            let numeric = {
                perturb(&mut params.tensors_mut()[tensor_idx].1, flat, epsilon);
                let up = loss(params);
                perturb(&mut params.tensors_mut()[tensor_idx].1, flat, -2.0 * epsilon);
                let down = loss(params);
                perturb(&mut params.tensors_mut()[tensor_idx].1, flat, epsilon);
                if !up.is_finite() || !down.is_finite() {
                    return Err(GradCheckError::NonFiniteLoss {
                        tensor: name.clone(),
                        index: flat,
                    });
                }
                (up - down) / (2.0 * epsilon)
            };
            let a = grads[tensor_idx][flat];
            probes.push(Probe {
                tensor: name.clone(),
                index: flat,
                analytic: a,
                numeric,
                rel_err: relative_error(a, numeric),
            });
        }
    }

    let max_rel_err = probes.iter().map(|p| p.rel_err).fold(0.0, f64::max);
    Ok(GradCheckReport {
        probes,
        max_rel_err,
        epsilon,
    })
}

/// Up to `count` distinct indices in `0..len`; all of them when `len <= count`.
fn sample_indices(rng: &mut ChaCha8Rng, len: usize, count: usize) -> Vec<usize> {
    if len <= count {
        return (0..len).collect();
    }
    let mut chosen = std::collections::BTreeSet::new();
    while chosen.len() < count {
        chosen.insert(rng.gen_range(0..len));
    }
    chosen.into_iter().collect()
}
