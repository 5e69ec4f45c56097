//! Limited-memory BFGS Hessian approximation in compact form.
//!
//! With `S = [u_0 .. u_{k-1}]`, `Y = [y_0 .. y_{k-1}]` and scaling `theta`,
//!
//! ```text
//! B = theta I - W N^{-1} W^T,   W = [Y, theta S],
//! N = [[-D, L^T], [L, theta S^T S]]
//! ```
//!
//! where `D = diag(u_i^T y_i)` and `L` is the strictly lower triangle of
//! `S^T Y`. A product `B v` costs `O(k D)` once `N` is factored.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, ArrayView1};

/// Curvature threshold below which a pair is discarded.
pub const CURVATURE_EPS: f64 = 1e-10;

/// Something that can multiply a vector by a symmetric positive definite matrix.
pub trait HessianProduct {
    fn apply(&self, v: ArrayView1<'_, f64>) -> Array1<f64>;
}

/// `theta * I`.
#[derive(Debug, Clone, Copy)]
pub struct ScaledIdentity(pub f64);

impl HessianProduct for ScaledIdentity {
    fn apply(&self, v: ArrayView1<'_, f64>) -> Array1<f64> {
        v.mapv(|x| x * self.0)
    }
}

/// Ring buffer of the most recent `(u, y)` pairs.
#[derive(Debug, Clone)]
pub struct LbfgsMemory {
    capacity: usize,
    pairs: VecDeque<(Array1<f64>, Array1<f64>)>,
}

impl LbfgsMemory {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            pairs: VecDeque::with_capacity(capacity),
        }
    }

    /// Stores the pair if it satisfies the curvature condition; returns whether it was kept.
    pub fn push(&mut self, u: Array1<f64>, y: Array1<f64>) -> bool {
        if u.dot(&y) <= CURVATURE_EPS {
            return false;
        }
        if self.pairs.len() == self.capacity {
            self.pairs.pop_front();
        }
        self.pairs.push_back((u, y));
        true
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> impl Iterator<Item = (&Array1<f64>, &Array1<f64>)> {
        self.pairs.iter().map(|(u, y)| (u, y))
    }

    /// `y^T y / u^T y` of the newest pair.
    pub fn theta(&self) -> Option<f64> {
        self.pairs.back().map(|(u, y)| y.dot(y) / u.dot(y))
    }

    /// Factors the compact representation for repeated products.
    pub fn compact(&self) -> Option<CompactHessian<'_>> {
        let theta = self.theta()?;
        let k = self.pairs.len();
        let mut n = DMatrix::zeros(2 * k, 2 * k);
        for (i, (ui, yi)) in self.pairs.iter().enumerate() {
            n[(i, i)] = -ui.dot(yi);
            for (j, (uj, yj)) in self.pairs.iter().enumerate() {
                if i > j {
                    // L_ij = u_i^T y_j
                    let l = ui.dot(yj);
                    n[(k + i, j)] = l;
                    n[(j, k + i)] = l;
                }
                n[(k + i, k + j)] = theta * ui.dot(uj);
            }
        }
        Some(CompactHessian {
            memory: self,
            theta,
            middle: n.lu(),
        })
    }
}

pub struct CompactHessian<'a> {
    memory: &'a LbfgsMemory,
    theta: f64,
    middle: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

impl CompactHessian<'_> {
    pub fn theta(&self) -> f64 {
        self.theta
    }
}

impl HessianProduct for CompactHessian<'_> {
    fn apply(&self, v: ArrayView1<'_, f64>) -> Array1<f64> {
        let k = self.memory.len();
        let mut wtv = DVector::zeros(2 * k);
        for (i, (u, y)) in self.memory.pairs.iter().enumerate() {
            wtv[i] = y.dot(&v);
            wtv[k + i] = self.theta * u.dot(&v);
        }
        let x = self
            .middle
            .solve(&wtv)
            .expect("compact BFGS middle matrix is nonsingular when all pairs have positive curvature");
        let mut out = v.mapv(|a| a * self.theta);
        for (i, (u, y)) in self.memory.pairs.iter().enumerate() {
            out.scaled_add(-x[i], y);
            out.scaled_add(-self.theta * x[k + i], u);
        }
        out
    }
}
