//! Named-tensor traversal shared by checkpointing, optimizers, and the
//! gradient checker.

use ndarray::{ArrayViewD, ArrayViewMutD};

/// A model parameter set viewed as an ordered list of named tensors.
///
/// Implementations must list tensors in a fixed order with stable names so
/// that two values of the same type (parameters and their gradients) can be
/// zipped positionally.
pub trait TensorCollection {
    fn tensors(&self) -> Vec<(String, ArrayViewD<'_, f64>)>;
    fn tensors_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, f64>)>;

    /// Total number of scalar parameters.
    fn param_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// True if every entry of every tensor is finite.
    fn all_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|(_, t)| t.iter().all(|x| x.is_finite()))
    }

    /// Sets every tensor entry to zero.
    fn zero_all(&mut self) {
        for (_, mut t) in self.tensors_mut() {
            t.fill(0.0);
        }
    }

    /// `self += scale * other`, tensor by tensor.
    fn add_scaled(&mut self, other: &Self, scale: f64) {
        let theirs = other.tensors();
        for (i, (name, mut t)) in self.tensors_mut().into_iter().enumerate() {
            let (other_name, o) = &theirs[i];
            debug_assert_eq!(&name, other_name, "tensor order mismatch");
            t.zip_mut_with(o, |a, b| *a += scale * b);
        }
    }
}

/// Prefixes every tensor name, used when nesting collections.
pub fn with_prefix<'a>(
    prefix: &str,
    tensors: Vec<(String, ArrayViewD<'a, f64>)>,
) -> Vec<(String, ArrayViewD<'a, f64>)> {
    tensors
        .into_iter()
        .map(|(name, view)| (format!("{prefix}.{name}"), view))
        .collect()
}

/// Mutable counterpart of [`with_prefix`].
pub fn with_prefix_mut<'a>(
    prefix: &str,
    tensors: Vec<(String, ArrayViewMutD<'a, f64>)>,
) -> Vec<(String, ArrayViewMutD<'a, f64>)> {
    tensors
        .into_iter()
        .map(|(name, view)| (format!("{prefix}.{name}"), view))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{Array1, Array2};

    struct Pair {
        a: Array1<f64>,
        b: Array2<f64>,
    }

    impl TensorCollection for Pair {
        fn tensors(&self) -> Vec<(String, ArrayViewD<'_, f64>)> {
            vec![
                ("a".into(), self.a.view().into_dyn()),
                ("b".into(), self.b.view().into_dyn()),
            ]
        }

        fn tensors_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, f64>)> {
            vec![
                ("a".into(), self.a.view_mut().into_dyn()),
                ("b".into(), self.b.view_mut().into_dyn()),
            ]
        }
    }

    #[test]
    fn add_scaled_updates_every_tensor() {
        let mut p = Pair {
            a: Array1::zeros(2),
            b: Array2::zeros((2, 2)),
        };
        let g = Pair {
            a: Array1::from_vec(vec![1.0, 2.0]),
            b: Array2::from_elem((2, 2), 3.0),
        };
        p.add_scaled(&g, -0.5);
        assert_eq!(p.a[0], -0.5);
        assert_eq!(p.a[1], -1.0);
        assert_eq!(p.b[[1, 1]], -1.5);
        assert_eq!(p.param_count(), 6);
        assert!(p.all_finite());
    }
}
