//! Spectral projected gradient on a box-constrained quadratic model.

use std::collections::VecDeque;

use ndarray::{Array1, ArrayView1};

use super::lbfgs::HessianProduct;
use super::{clamp_box, in_box};
use crate::error::{Error, Result};

/// `q(s) = g^T (s - c) + 1/2 (s - c)^T B (s - c)`, the quadratic model around `c`
/// without its constant term.
pub struct QuadraticModel<'a> {
    pub center: ArrayView1<'a, f64>,
    pub gradient: ArrayView1<'a, f64>,
    pub hessian: &'a dyn HessianProduct,
}

impl QuadraticModel<'_> {
    /// Model value and model gradient at `s`.
    pub fn evaluate(&self, s: ArrayView1<'_, f64>) -> (f64, Array1<f64>) {
        let step = &s - &self.center;
        let b_step = self.hessian.apply(step.view());
        let value = self.gradient.dot(&step) + 0.5 * step.dot(&b_step);
        (value, &self.gradient + &b_step)
    }
}

#[derive(Debug, Clone)]
pub struct SpgOptions {
    pub max_iters: usize,
    pub step_bounds: (f64, f64),
    pub history: usize,
    pub c1: f64,
}

impl Default for SpgOptions {
    fn default() -> Self {
        Self {
            max_iters: 10,
            step_bounds: (1e-10, 1e10),
            history: 10,
            c1: 1e-4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SpgOutcome {
    pub point: Array1<f64>,
    /// Model value at `point`; never above the value at the start.
    pub value: f64,
    pub start_value: f64,
    pub iterations: usize,
}

fn inf_norm(v: &Array1<f64>) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Approximately minimizes `model` over `[0, 1]^D` from a feasible `start`
/// using Barzilai-Borwein steps and a non-monotone line search.
pub fn spg_solve(model: &QuadraticModel<'_>, start: ArrayView1<'_, f64>, options: &SpgOptions) -> Result<SpgOutcome> {
    if !in_box(start) {
        return Err(Error::InvalidParameter(
            "spectral projected gradient needs a feasible start".into(),
        ));
    }
    let (lo, hi) = options.step_bounds;
    let mut x = start.to_owned();
    let (mut qx, mut gx) = model.evaluate(x.view());
    let start_value = qx;
    let mut best = (qx, x.clone());
    let mut history: VecDeque<f64> = VecDeque::from([qx]);

    let first = clamp_box(&x - &gx) - &x;
    let first_norm = inf_norm(&first);
    if first_norm == 0.0 {
        return Ok(SpgOutcome {
            point: x,
            value: qx,
            start_value,
            iterations: 0,
        });
    }
    let mut alpha = (1.0 / first_norm).clamp(lo, hi);

    let mut iterations = 0;
    while iterations < options.max_iters {
        let d = clamp_box(&x - &(&gx * alpha)) - &x;
        if inf_norm(&d) <= f64::EPSILON {
            break;
        }
        let gtd = gx.dot(&d);
        if gtd >= 0.0 {
            break;
        }
        let dbd = d.dot(&model.hessian.apply(d.view()));
        let reference = history.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut eta = 1.0;
        for _ in 0..60 {
            let trial = qx + eta * gtd + 0.5 * eta * eta * dbd;
            if trial <= reference + options.c1 * eta * gtd {
                break;
            }
            // Minimizer of the one-dimensional quadratic, safeguarded.
            let curvature = 2.0 * (trial - qx - eta * gtd);
            let interp = if curvature > 0.0 {
                -gtd * eta * eta / curvature
            } else {
                0.5 * eta
            };
            eta = interp.clamp(0.1 * eta, 0.5 * eta);
        }
        let next = clamp_box(&x + &(&d * eta));
        let (q_next, g_next) = model.evaluate(next.view());
        let s = &next - &x;
        let y = &g_next - &gx;
        let sty = s.dot(&y);
        alpha = if sty > 0.0 { (s.dot(&s) / sty).clamp(lo, hi) } else { hi };
        x = next;
        qx = q_next;
        gx = g_next;
        if history.len() == options.history.max(1) {
            history.pop_front();
        }
        history.push_back(qx);
        if qx < best.0 {
            best = (qx, x.clone());
        }
        iterations += 1;
    }
    let (value, point) = if best.0 <= start_value {
        best
    } else {
        (start_value, start.to_owned())
    };
    Ok(SpgOutcome {
        point,
        value,
        start_value,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::lbfgs::ScaledIdentity;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    struct Diagonal(Array1<f64>);

    impl HessianProduct for Diagonal {
        fn apply(&self, v: ArrayView1<'_, f64>) -> Array1<f64> {
            &self.0 * &v
        }
    }

    /// `|s - target|^2` written as a model around `center`.
    fn distance_model<'a>(
        center: &'a Array1<f64>,
        gradient: &'a mut Array1<f64>,
        target: f64,
        h: &'a ScaledIdentity,
    ) -> QuadraticModel<'a> {
        *gradient = center.mapv(|c| 2.0 * (c - target));
        QuadraticModel {
            center: center.view(),
            gradient: gradient.view(),
            hessian: h,
        }
    }

    #[test]
    fn interior_minimum() {
        let center = Array1::from_vec(vec![0.9, 0.1, 0.0, 1.0]);
        let mut g = Array1::zeros(4);
        let h = ScaledIdentity(2.0);
        let model = distance_model(&center, &mut g, 0.5, &h);
        let opts = SpgOptions {
            max_iters: 50,
            ..Default::default()
        };
        let out = spg_solve(&model, center.view(), &opts).unwrap();
        assert!(out.point.iter().all(|v| (v - 0.5).abs() < 1e-9));
    }

    #[test]
    fn minimum_outside_box_clamps_to_corner() {
        let center = Array1::from_vec(vec![0.2, 0.7, 0.4]);
        let mut g = Array1::zeros(3);
        let h = ScaledIdentity(2.0);
        let model = distance_model(&center, &mut g, 2.0, &h);
        let out = spg_solve(&model, center.view(), &SpgOptions::default()).unwrap();
        assert!(out.point.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn separable_quadratic_matches_coordinatewise_optimum() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..20 {
            let diag: Array1<f64> = Array1::from_shape_fn(5, |_| rng.random_range(0.2..5.0));
            let linear: Array1<f64> = Array1::from_shape_fn(5, |_| rng.random_range(-4.0..4.0));
            let center = Array1::from_shape_fn(5, |_| rng.random_range(0.0..1.0));
            // q(s) = linear^T s + 1/2 s^T diag s, re-expressed around `center`.
            let gradient = &linear + &(&diag * &center);
            let optimum = Array1::from_shape_fn(5, |p| (-linear[p] / diag[p]).clamp(0.0, 1.0));
            let h = Diagonal(diag.clone());
            let model = QuadraticModel {
                center: center.view(),
                gradient: gradient.view(),
                hessian: &h,
            };
            let opts = SpgOptions {
                max_iters: 100,
                ..Default::default()
            };
            let out = spg_solve(&model, center.view(), &opts).unwrap();
            for (a, b) in out.point.iter().zip(&optimum) {
                assert!((a - b).abs() < 1e-6, "{a} vs {b}");
            }
            assert!(out.value <= out.start_value);
        }
    }

    #[test]
    fn infeasible_start_is_rejected() {
        let center = Array1::from_vec(vec![1.5]);
        let g = Array1::zeros(1);
        let h = ScaledIdentity(1.0);
        let model = QuadraticModel {
            center: center.view(),
            gradient: g.view(),
            hessian: &h,
        };
        assert!(spg_solve(&model, center.view(), &SpgOptions::default()).is_err());
    }
}
