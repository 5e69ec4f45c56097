//! Regularized cross diffusion over several views and kNN sparsification of the
//! fused status matrix.
//!
//! Each view `v` keeps a status matrix, initialized to its transition matrix
//! `P_v`. One iteration replaces it with
//!
//! ```text
//! P_v * mean_{i != v}(status_i) * P_v^T + alpha * I
//! ```
//!
//! which for two views is the usual alternating scheme. The fused matrix `P*`
//! is the mean of the final status matrices; the graph `G` keeps each row's
//! strongest neighbors of the symmetrized `P*`.

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::affinity::{connected_components, TransitionMatrix};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiffusionConfig {
    /// Weight of the identity added after every iteration.
    pub alpha: f64,
    pub max_iters: usize,
    /// Relative Frobenius change below which iteration stops.
    pub tol: f64,
    /// Neighbors kept per row when sparsifying `P*`.
    pub k_fuse: usize,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        Self {
            alpha: 0.01,
            max_iters: 20,
            tol: 1e-8,
            k_fuse: 5,
        }
    }
}

impl DiffusionConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        self.validate_iteration()?;
        if self.k_fuse == 0 || self.k_fuse >= n {
            return Err(Error::Config(format!(
                "k_fuse must satisfy 1 <= k_fuse < n = {n}, got {}",
                self.k_fuse
            )));
        }
        Ok(())
    }

    fn validate_iteration(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        if self.max_iters == 0 {
            return Err(Error::Config("max_iters must be >= 1".into()));
        }
        if self.tol.is_nan() || self.tol < 0.0 {
            return Err(Error::Config(format!("tol must be >= 0, got {}", self.tol)));
        }
        Ok(())
    }
}

/// Final status matrices of one diffusion run.
#[derive(Debug, Clone)]
pub struct StatusRun {
    pub statuses: Vec<Array2<f64>>,
    pub iterations_run: usize,
    pub converged: bool,
    /// Largest relative change over views at the last iteration.
    pub final_delta: f64,
}

/// Cross-diffused matrix and its sparsified symmetric graph.
#[derive(Debug, Clone)]
pub struct FusedGraph {
    pub p_star: Array2<f64>,
    pub g: Array2<f64>,
    pub iterations_run: usize,
    pub converged: bool,
    pub final_delta: f64,
}

fn check_transitions(transitions: &[TransitionMatrix]) -> Result<usize> {
    if transitions.len() < 2 {
        return Err(Error::TooFewViews(transitions.len()));
    }
    let n = transitions[0].n();
    if let Some(bad) = transitions.iter().position(|t| t.n() != n) {
        return Err(Error::DimensionMismatch(format!(
            "transition {bad} is {0}x{0}, expected {n}x{n}",
            transitions[bad].n()
        )));
    }
    Ok(n)
}

fn sandwich(p: ArrayView2<'_, f64>, m: &Array2<f64>, alpha: f64) -> Array2<f64> {
    let mut next = p.dot(m).dot(&p.t());
    if alpha != 0.0 {
        next.diag_mut().mapv_inplace(|d| d + alpha);
    }
    next
}

fn relative_change(new: &Array2<f64>, old: &Array2<f64>) -> f64 {
    let diff: f64 = new.iter().zip(old).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    let base: f64 = old.iter().map(|a| a * a).sum::<f64>().sqrt();
    if base > 0.0 {
        diff / base
    } else {
        diff
    }
}

fn iterate<F>(transitions: &[TransitionMatrix], config: &DiffusionConfig, step: F) -> StatusRun
where
    F: Fn(&[Array2<f64>]) -> Vec<Array2<f64>>,
{
    let mut statuses: Vec<Array2<f64>> = transitions.iter().map(|t| t.matrix().to_owned()).collect();
    let mut iterations_run = 0;
    let mut converged = false;
    let mut final_delta = f64::INFINITY;
    while iterations_run < config.max_iters {
        let next = step(&statuses);
        final_delta = next
            .iter()
            .zip(&statuses)
            .map(|(a, b)| relative_change(a, b))
            .fold(0.0, f64::max);
        statuses = next;
        iterations_run += 1;
        if final_delta < config.tol {
            converged = true;
            break;
        }
    }
    StatusRun {
        statuses,
        iterations_run,
        converged,
        final_delta,
    }
}

/// Runs the general `m`-view recursion. Views are updated in parallel from the
/// previous iteration's matrices.
pub fn diffuse_status(transitions: &[TransitionMatrix], config: &DiffusionConfig) -> Result<StatusRun> {
    check_transitions(transitions)?;
    config.validate_iteration()?;
    let m = transitions.len();
    let scale = 1.0 / (m - 1) as f64;
    Ok(iterate(transitions, config, |prev| {
        (0..m)
            .into_par_iter()
            .map(|v| {
                let mut others = prev.iter().enumerate().filter(|(i, _)| *i != v).map(|(_, s)| s);
                let mut mean = others.next().expect("m >= 2").clone();
                for s in others {
                    mean += s;
                }
                mean *= scale;
                sandwich(transitions[v].matrix(), &mean, config.alpha)
            })
            .collect()
    }))
}

/// The two-view recursion written out directly: each view's status is
/// sandwiched by its own transition matrix around the other view's status.
pub fn diffuse_status_pairwise(
    first: &TransitionMatrix,
    second: &TransitionMatrix,
    config: &DiffusionConfig,
) -> Result<StatusRun> {
    let pair = [first.clone(), second.clone()];
    check_transitions(&pair)?;
    config.validate_iteration()?;
    Ok(iterate(&pair, config, |prev| {
        let (a, b) = rayon::join(
            || sandwich(first.matrix(), &prev[1], config.alpha),
            || sandwich(second.matrix(), &prev[0], config.alpha),
        );
        vec![a, b]
    }))
}

/// Mean of the final status matrices.
pub fn average_statuses(statuses: &[Array2<f64>]) -> Array2<f64> {
    let mut total = statuses[0].clone();
    for s in &statuses[1..] {
        total += s;
    }
    total / statuses.len() as f64
}

/// Symmetrizes `p_star`, drops its diagonal, keeps the `k` largest positive
/// entries of every row (ties to the lower column) and unions with the
/// transpose. Kept edges carry the symmetrized weight.
pub fn sparsify_knn(p_star: ArrayView2<'_, f64>, k: usize) -> Array2<f64> {
    let n = p_star.nrows();
    let mut sym = (&p_star + &p_star.t()) * 0.5;
    sym.diag_mut().fill(0.0);
    let mut g = Array2::zeros((n, n));
    for i in 0..n {
        let mut cand: Vec<(f64, usize)> = sym
            .row(i)
            .iter()
            .enumerate()
            .filter(|&(j, &v)| j != i && v > 0.0)
            .map(|(j, &v)| (v, j))
            .collect();
        cand.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        for &(v, j) in cand.iter().take(k) {
            g[[i, j]] = v;
            g[[j, i]] = v;
        }
    }
    g
}

/// Full fusion: diffusion, averaging, and kNN sparsification.
pub fn cross_diffuse(transitions: &[TransitionMatrix], config: &DiffusionConfig) -> Result<FusedGraph> {
    config.validate(check_transitions(transitions)?)?;
    let run = diffuse_status(transitions, config)?;
    let p_star = average_statuses(&run.statuses);
    let g = sparsify_knn(p_star.view(), config.k_fuse);
    Ok(FusedGraph {
        p_star,
        g,
        iterations_run: run.iterations_run,
        converged: run.converged,
        final_delta: run.final_delta,
    })
}

fn unit_frobenius(m: Array2<f64>) -> Array2<f64> {
    let norm = m.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        m / norm
    } else {
        m
    }
}

fn matrix_power(m: &Array2<f64>, t: usize) -> Array2<f64> {
    let mut out = Array2::eye(m.nrows());
    for _ in 0..t {
        out = out.dot(m);
    }
    out
}

/// Compares the unregularized two-view recursion at step `2t + 1` with its
/// closed form `(P1 P2)^t P1 (P2^T P1^T)^t` (and the mirrored expression for
/// the second view), after scaling both sides to unit Frobenius norm.
/// Returns the largest absolute entry difference over both views.
pub fn unrolled_check(first: &TransitionMatrix, second: &TransitionMatrix, t: usize) -> Result<f64> {
    if t < 1 {
        return Err(Error::InvalidParameter("t must be >= 1".into()));
    }
    let config = DiffusionConfig {
        alpha: 0.0,
        max_iters: 2 * t,
        tol: 0.0,
        k_fuse: 1,
    };
    let run = diffuse_status_pairwise(first, second, &config)?;
    let (p1, p2) = (first.matrix().to_owned(), second.matrix().to_owned());
    let closed = |a: &Array2<f64>, b: &Array2<f64>| {
        let left = matrix_power(&a.dot(b), t);
        let right = matrix_power(&b.t().dot(&a.t()), t);
        left.dot(a).dot(&right)
    };
    let expected = [closed(&p1, &p2), closed(&p2, &p1)];
    Ok(run
        .statuses
        .into_iter()
        .zip(expected)
        .map(|(got, want)| {
            let (got, want) = (unit_frobenius(got), unit_frobenius(want));
            got.iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
        })
        .fold(0.0, f64::max))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentPurity {
    pub members: Vec<usize>,
    pub majority_class: usize,
    pub purity: f64,
}

/// Majority-class purity of the connected components of a graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentPurityReport {
    pub components: Vec<ComponentPurity>,
    /// Number of components.
    pub q: usize,
    /// `max_q (1 - purity_q)`.
    pub epsilon: f64,
}

pub fn component_purity(g: ArrayView2<'_, f64>, labels: Option<&[usize]>) -> Result<ComponentPurityReport> {
    let labels = labels.ok_or(Error::MissingLabels)?;
    if labels.len() != g.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "{} labels for a graph on {} nodes",
            labels.len(),
            g.nrows()
        )));
    }
    let components: Vec<ComponentPurity> = connected_components(g)
        .into_iter()
        .map(|members| {
            let mut counts = std::collections::BTreeMap::<usize, usize>::new();
            for &i in &members {
                *counts.entry(labels[i]).or_default() += 1;
            }
            // Highest count, lowest class id on ties.
            let (majority_class, top) = counts
                .iter()
                .fold((0, 0), |best, (&c, &k)| if k > best.1 { (c, k) } else { best });
            let purity = top as f64 / members.len() as f64;
            ComponentPurity {
                members,
                majority_class,
                purity,
            }
        })
        .collect();
    let epsilon = components.iter().map(|c| 1.0 - c.purity).fold(0.0, f64::max);
    Ok(ComponentPurityReport {
        q: components.len(),
        components,
        epsilon,
    })
}
