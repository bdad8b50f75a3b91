//! Gauss–Hermite quadrature in the probabilists' convention.
//!
//! An order-`q` rule provides nodes `ξ_k` and weights `w_k` with
//! `Σ_k w_k f(ξ_k) ≈ E[f(Y)]` for `Y ~ N(0, 1)`, exact for polynomials of
//! degree `2q − 1`. Nodes and weights come from the Golub–Welsch algorithm:
//! the eigenvalues of the symmetrized Jacobi matrix of the Hermite
//! recurrence are the (physicists') nodes and the squared first eigenvector
//! components give the weights.

use nalgebra::DMatrix;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum QuadratureError {
    #[error("quadrature order must be at least 1, got {0}")]
    InvalidOrder(usize),
}

/// Nodes and weights for a standard-normal expectation.
///
/// Nodes are sorted ascending, weights are positive and sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussHermite {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussHermite {
    pub fn new(order: usize) -> Result<Self, QuadratureError> {
        if order == 0 {
            return Err(QuadratureError::InvalidOrder(order));
        }
        if order == 1 {
            return Ok(Self {
                nodes: vec![0.0],
                weights: vec![1.0],
            });
        }

        // Symmetric tridiagonal Jacobi matrix: zero diagonal, sqrt(k/2) on
        // the off-diagonals (physicists' Hermite recurrence).
        let mut jacobi = DMatrix::zeros(order, order);
        for k in 0..order - 1 {
            let off = ((k + 1) as f64 * 0.5).sqrt();
            jacobi[(k, k + 1)] = off;
            jacobi[(k + 1, k)] = off;
        }
        let eigen = jacobi.symmetric_eigen();

        let mut pairs: Vec<(f64, f64)> = eigen
            .eigenvalues
            .iter()
            .enumerate()
            // Physicists' weight is sqrt(pi) * v0^2; the normal-measure
            // weight drops the sqrt(pi) as it cancels in the conversion.
            .map(|(i, &t)| (t, eigen.eigenvectors[(0, i)].powi(2)))
            .collect();
        pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());

        // Convert to probabilists' convention: node = sqrt(2) * t.
        let mut nodes: Vec<f64> = pairs.iter().map(|p| p.0 * std::f64::consts::SQRT_2).collect();
        let mut weights: Vec<f64> = pairs.iter().map(|p| p.1).collect();

        // Enforce the exact symmetry of the rule; the eigensolver leaves
        // asymmetries at rounding level.
        let n = nodes.len();
        for i in 0..n / 2 {
            let j = n - 1 - i;
            let mag = 0.5 * (nodes[j] - nodes[i]);
            nodes[i] = -mag;
            nodes[j] = mag;
            let w = 0.5 * (weights[i] + weights[j]);
            weights[i] = w;
            weights[j] = w;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        let total: f64 = weights.iter().sum();
        for w in &mut weights {
            *w /= total;
        }

        Ok(Self { nodes, weights })
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `E[f(Y)]` for `Y ~ N(mean, variance)`.
    pub fn expect(&self, mean: f64, std_dev: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&xi, &w)| w * f(mean + std_dev * xi))
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    /// E[Y^k] for Y ~ N(0,1): 0 for odd k, (k-1)!! for even k.
    fn normal_moment(k: u32) -> f64 {
        if k % 2 == 1 {
            0.0
        } else {
            (1..=k as u64).step_by(2).map(|m| m as f64).product()
        }
    }

    #[test]
    fn order_one_is_single_node_at_zero() {
        let q = GaussHermite::new(1).unwrap();
        assert_eq!(q.nodes(), &[0.0]);
        assert_eq!(q.weights(), &[1.0]);
    }

    #[test]
    fn zero_order_rejected() {
        assert!(GaussHermite::new(0).is_err());
    }

    #[test]
    fn weights_sum_to_one() {
        for order in [2, 3, 5, 10, 20] {
            let q = GaussHermite::new(order).unwrap();
            let sum: f64 = q.weights().iter().sum();
            assert_abs_diff_eq!(sum, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn exact_on_polynomials_up_to_degree_2q_minus_1() {
        // Check every monomial up to 2q-1 against the closed-form
        // Gaussian moments.
        for order in [1usize, 2, 3, 5, 10] {
            let q = GaussHermite::new(order).unwrap();
            for k in 0..(2 * order as u32) {
                let approx = q.expect(0.0, 1.0, |y| y.powi(k as i32));
                let exact = normal_moment(k);
                assert_abs_diff_eq!(approx, exact, epsilon = 1e-10 * exact.abs().max(1.0));
            }
        }
    }

    #[test]
    fn shifted_scaled_moments() {
        let q = GaussHermite::new(10).unwrap();
        let (mu, sd) = (0.7, 0.3);
        // E[Y] and Var[Y] under N(mu, sd^2).
        assert_abs_diff_eq!(q.expect(mu, sd, |y| y), mu, epsilon = 1e-12);
        let second = q.expect(mu, sd, |y| (y - mu) * (y - mu));
        assert_abs_diff_eq!(second, sd * sd, epsilon = 1e-12);
    }

    #[test]
    fn nodes_are_symmetric_and_sorted() {
        let q = GaussHermite::new(10).unwrap();
        let n = q.nodes();
        for i in 0..n.len() - 1 {
            assert!(n[i] < n[i + 1]);
        }
        for i in 0..n.len() / 2 {
            assert_eq!(n[i], -n[n.len() - 1 - i]);
            assert_eq!(q.weights()[i], q.weights()[n.len() - 1 - i]);
        }
    }
}
