//! Gauss-Hermite quadrature normalized for expectations under N(0, 1).
//!
//! Nodes and weights come from the Golub-Welsch algorithm: eigenvalues of the
//! symmetric tridiagonal Jacobi matrix with zero diagonal and off-diagonal
//! sqrt(k/2), rescaled by sqrt(2) so that `expect(g)` approximates E[g(e)]
//! for e ~ N(0,1). A rule with m nodes integrates polynomials up to degree
//! 2m - 1 exactly, so the default 40-node rule is exact for every polynomial
//! nonlinearity used here.

use crate::error::{Error, Result};
use nalgebra::DMatrix;

/// Default node count used by coefficient contexts.
pub const DEFAULT_NODES: usize = 40;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussHermite {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussHermite {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Config("quadrature needs at least one node".into()));
        }
        let mut jacobi = DMatrix::<f64>::zeros(n, n);
        for k in 0..n - 1 {
            let off = ((k + 1) as f64 * 0.5).sqrt();
            jacobi[(k, k + 1)] = off;
            jacobi[(k + 1, k)] = off;
        }
        let eigen = jacobi.symmetric_eigen();
        // Physicists' nodes t_i and weights v0^2 * sqrt(pi); switching to the
        // probabilists' normalization gives e_i = sqrt(2) t_i and weights
        // summing to one, since the first components of the orthonormal
        // eigenvectors have unit square sum.
        let mut pairs: Vec<(f64, f64)> = eigen
            .eigenvalues
            .iter()
            .enumerate()
            .map(|(i, &t)| {
                let v0 = eigen.eigenvectors[(0, i)];
                (t * std::f64::consts::SQRT_2, v0 * v0)
            })
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let (nodes, weights) = pairs.into_iter().unzip();
        Ok(Self { nodes, weights })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// E[g(e)] for e ~ N(0,1).
    pub fn expect<F: Fn(f64) -> f64>(&self, g: F) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * g(x))
            .sum()
    }
}
