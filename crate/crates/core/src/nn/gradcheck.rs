//! Finite-difference verification of reverse-mode gradients.

use crate::error::{Error, Result};
use crate::nn::graph::{Graph, Var};
use crate::nn::tensor::Tensor;

/// `|a − b| / max(1, |a|, |b|)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / 1f64.max(a.abs()).max(b.abs())
}

/// Compares reverse-mode gradients of the scalar built by `f` against
/// central differences with step `epsilon`, over every coordinate of every
/// tensor in `point`. Returns the largest relative error.
pub fn grad_check<F>(f: F, point: &[Tensor], epsilon: f64) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    grad_check_coords(f, point, epsilon, |_, _| true)
}

/// Like [`grad_check`], but only coordinates accepted by `select(tensor, coord)`
/// are perturbed.
pub fn grad_check_coords<F, S>(f: F, point: &[Tensor], epsilon: f64, select: S) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
    S: Fn(usize, usize) -> bool,
{
    let eval = |inputs: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        scalar(&g, out)
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = point.iter().map(|t| g.leaf(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    scalar(&g, out)?;
    let grads = g.backward(out)?;

    let mut worst = 0.0f64;
    let mut probe: Vec<Tensor> = point.to_vec();
    for (ti, var) in vars.iter().enumerate() {
        let analytic = grads.get(*var).cloned().unwrap_or_else(|| Tensor::zeros(point[ti].shape()));
        for ci in 0..point[ti].len() {
            if !select(ti, ci) {
                continue;
            }
            let orig = point[ti].values()[ci];
            probe[ti].values_mut()[ci] = orig + epsilon;
            let plus = eval(&probe)?;
            probe[ti].values_mut()[ci] = orig - epsilon;
            let minus = eval(&probe)?;
            probe[ti].values_mut()[ci] = orig;
            let numeric = (plus - minus) / (2.0 * epsilon);
            worst = worst.max(relative_error(analytic.values()[ci], numeric));
        }
    }
    Ok(worst)
}

fn scalar(g: &Graph, v: Var) -> Result<f64> {
    let t = g.value(v);
    if t.len() != 1 {
        return Err(Error::Shape(format!("gradient check needs a scalar output, got {:?}", t.shape())));
    }
    Ok(t.values()[0])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_floors_at_one() {
        assert_eq!(relative_error(1e-8, 0.0), 1e-8);
        assert!((relative_error(100.0, 101.0) - 1.0 / 101.0).abs() < 1e-15);
    }

    #[test]
    fn linear_function_is_exact() {
        let point = [Tensor::new(vec![2], vec![0.5, -0.3]).unwrap()];
        let err = grad_check(
            |g, v| {
                let w = Tensor::new(vec![2], vec![1.0, 2.0]).unwrap();
                g.weighted_sum(v[0], &w)
            },
            &point,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-9);
    }
}
