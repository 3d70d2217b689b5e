//! Force, depth and combined objectives.

use faf_tensor::{Graph, Var};

use crate::error::Result;

/// Mean over the batch of the L1 norm of each `[B, 3]` residual row.
pub fn loss_force(g: &mut Graph, pred: Var, target: Var) -> Result<Var> {
    let r = g.sub(pred, target)?;
    let r = g.abs(r);
    let rows = g.sum_last(r);
    Ok(g.mean_all(rows))
}

/// Mean over the batch of the Euclidean norm of each flattened depth residual.
pub fn loss_depth(g: &mut Graph, pred: Var, target: Var) -> Result<Var> {
    let b = g.shape(pred)[0];
    let r = g.sub(pred, target)?;
    let n = g.value(r).numel() / b.max(1);
    let r = g.reshape(r, &[b, n])?;
    let rows = g.row_norm(r);
    Ok(g.mean_all(rows))
}

/// `α·L_F + β_w·L_D`.
pub fn loss_total(g: &mut Graph, force: Var, depth: Option<Var>, alpha: f64, beta_w: f64) -> Result<Var> {
    let lf = g.scale(force, alpha);
    match depth {
        Some(d) => {
            let ld = g.scale(d, beta_w);
            Ok(g.add(lf, ld)?)
        }
        None => Ok(lf),
    }
}

/// Scalar form of [`loss_total`].
pub fn combine(force: f64, depth: f64, alpha: f64, beta_w: f64) -> f64 {
    alpha * force + beta_w * depth
}

/// Per-axis full-scale ranges (N) used to normalize errors.
pub const FULL_SCALE: [f64; 3] = [4.0, 4.0, 15.0];

/// Mean over axes of `|F̂ − F|` divided by the axis full-scale range.
pub fn normalized_error(truth: [f64; 3], pred: [f64; 3]) -> f64 {
    (0..3).map(|i| (pred[i] - truth[i]).abs() / FULL_SCALE[i]).sum::<f64>() / 3.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use faf_tensor::Tensor;

    fn scalar(f: impl FnOnce(&mut Graph) -> Var) -> f64 {
        let mut g = Graph::new();
        let v = f(&mut g);
        g.value(v).item()
    }

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn force_loss_values() {
        let f = t(&[1, 3], &[1.0, 2.0, 3.0]);
        let same = scalar(|g| {
            let (a, b) = (g.constant(f.clone()), g.constant(f.clone()));
            loss_force(g, a, b).unwrap()
        });
        assert_eq!(same, 0.0);
        let one = scalar(|g| {
            let a = g.constant(t(&[1, 3], &[0.1, -0.2, 0.3]));
            let b = g.constant(Tensor::zeros(&[1, 3]));
            loss_force(g, a, b).unwrap()
        });
        assert!((one - 0.6).abs() < 1e-15);
        let two = scalar(|g| {
            let a = g.constant(t(&[2, 3], &[0.1, -0.2, 0.3, 0.5, 0.25, -0.25]));
            let b = g.constant(Tensor::zeros(&[2, 3]));
            loss_force(g, a, b).unwrap()
        });
        assert!((two - 0.8).abs() < 1e-15);
    }

    #[test]
    fn depth_loss_values() {
        let d = |v: f64| {
            scalar(|g| {
                let a = g.constant(Tensor::full(&[1, 1, 2, 2], v));
                let b = g.constant(Tensor::zeros(&[1, 1, 2, 2]));
                loss_depth(g, a, b).unwrap()
            })
        };
        assert_eq!(d(0.0), 0.0);
        assert_eq!(d(0.5), 1.0);
        assert_eq!(d(1.0), 2.0 * d(0.5));
    }

    #[test]
    fn total_loss_values() {
        assert_eq!(combine(1.0, 1.0, 1.0, 0.0), 1.0);
        assert_eq!(combine(1.0, 2.0, 0.5, 0.5), 1.5);
        let v = scalar(|g| {
            let (a, b) = (g.constant(Tensor::scalar(1.0)), g.constant(Tensor::scalar(2.0)));
            loss_total(g, a, Some(b), 0.5, 0.5).unwrap()
        });
        assert_eq!(v, 1.5);
    }

    #[test]
    fn normalized_error_values() {
        assert_eq!(normalized_error([1.0, 2.0, 3.0], [1.0, 2.0, 3.0]), 0.0);
        assert!((normalized_error([0.0; 3], [0.0, 0.0, 1.5]) - 0.1 / 3.0).abs() < 1e-15);
        assert!((normalized_error([0.0; 3], [0.4, 0.4, 1.5]) - 0.1).abs() < 1e-15);
    }
}
