//! Projected quasi-Newton minimization over the unit box.
//!
//! The outer loop builds a limited-memory BFGS model of the objective around
//! the current iterate, minimizes it approximately over `[0, 1]^D` with a few
//! spectral projected gradient steps, and backtracks along the resulting
//! direction until the Armijo condition holds.

pub mod lbfgs;
pub mod spg;

use ndarray::{Array1, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::alignment::Objective;
use crate::error::{Error, Result};
use lbfgs::{HessianProduct, LbfgsMemory, ScaledIdentity};
use spg::{spg_solve, QuadraticModel, SpgOptions};

/// Backtracking halvings before the line search gives up.
pub const MAX_HALVINGS: usize = 30;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub lbfgs_memory: usize,
    pub spg_max_iters: usize,
    pub outer_max_iters: usize,
    pub armijo_c1: f64,
    /// Stop once `|P(s - grad) - s|_inf` falls below this.
    pub grad_tol: f64,
    pub bb_step_bounds: (f64, f64),
    /// Non-monotone window of the inner solver.
    pub spg_history: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            lbfgs_memory: 10,
            spg_max_iters: 10,
            outer_max_iters: 500,
            armijo_c1: 1e-4,
            grad_tol: 1e-6,
            bb_step_bounds: (1e-10, 1e10),
            spg_history: 10,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.bb_step_bounds;
        if self.lbfgs_memory == 0 || self.spg_max_iters == 0 {
            return Err(Error::Config("lbfgs_memory and spg_max_iters must be >= 1".into()));
        }
        if !(self.armijo_c1 > 0.0 && self.armijo_c1 < 1.0) {
            return Err(Error::Config(format!(
                "armijo_c1 must lie in (0, 1), got {}",
                self.armijo_c1
            )));
        }
        if !(lo > 0.0 && lo < hi) {
            return Err(Error::Config(format!(
                "bb_step_bounds must satisfy 0 < min < max, got {lo}, {hi}"
            )));
        }
        if self.grad_tol.is_nan() || self.grad_tol < 0.0 {
            return Err(Error::Config("grad_tol must be >= 0".into()));
        }
        Ok(())
    }

    fn spg_options(&self) -> SpgOptions {
        SpgOptions {
            max_iters: self.spg_max_iters,
            step_bounds: self.bb_step_bounds,
            history: self.spg_history,
            c1: self.armijo_c1,
        }
    }
}

/// Coordinatewise projection onto `[0, 1]`.
pub fn project_box(s: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
    if s.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: "box projection input".into(),
        });
    }
    Ok(clamp_box(s.to_owned()))
}

pub(crate) fn clamp_box(mut s: Array1<f64>) -> Array1<f64> {
    s.mapv_inplace(|v| v.clamp(0.0, 1.0));
    s
}

pub(crate) fn in_box(s: ArrayView1<'_, f64>) -> bool {
    s.iter().all(|v| (0.0..=1.0).contains(v))
}

/// `|P(s - g) - s|_inf`.
pub fn projected_gradient_norm(s: ArrayView1<'_, f64>, g: ArrayView1<'_, f64>) -> f64 {
    s.iter()
        .zip(g)
        .map(|(x, d)| ((x - d).clamp(0.0, 1.0) - x).abs())
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverStatus {
    Converged,
    MaxIterations,
    LineSearchFailed,
}

/// Iterate, cached objective and gradient, and curvature memory.
#[derive(Debug, Clone)]
pub struct SolverState {
    pub iterate: Array1<f64>,
    pub objective: f64,
    pub gradient: Array1<f64>,
    pub memory: LbfgsMemory,
    pub iteration: usize,
}

/// What happened in one accepted outer step.
#[derive(Debug, Clone)]
pub struct StepRecord {
    pub iteration: usize,
    /// Model value at the inner solution relative to the model at the iterate.
    pub model_decrease: f64,
    pub step_length: f64,
    pub directional_derivative: f64,
    pub pair_stored: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolverOutcome {
    pub s: Array1<f64>,
    pub objective: f64,
    pub gradient: Array1<f64>,
    /// Objective at the start and after every accepted step.
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub status: SolverStatus,
    pub projected_gradient_norm: f64,
    pub evaluations: usize,
}

pub fn pqn_minimize<O: Objective>(
    objective: &O,
    config: &SolverConfig,
    start: Option<ArrayView1<'_, f64>>,
) -> Result<SolverOutcome> {
    pqn_minimize_observed(objective, config, start, |_, _| {})
}

/// Like [`pqn_minimize`], calling `observer` after every accepted step.
pub fn pqn_minimize_observed<O, F>(
    objective: &O,
    config: &SolverConfig,
    start: Option<ArrayView1<'_, f64>>,
    mut observer: F,
) -> Result<SolverOutcome>
where
    O: Objective,
    F: FnMut(&SolverState, &StepRecord),
{
    config.validate()?;
    let dim = objective.dim();
    let s0 = match start {
        Some(s) if s.len() != dim => {
            return Err(Error::DimensionMismatch(format!(
                "start has {} entries, expected {dim}",
                s.len()
            )))
        }
        Some(s) => project_box(s)?,
        None => Array1::ones(dim),
    };
    let (f0, g0) = objective.value_and_gradient(s0.view());
    let mut evaluations = 1;
    let mut state = SolverState {
        iterate: s0,
        objective: f0,
        gradient: g0,
        memory: LbfgsMemory::new(config.lbfgs_memory),
        iteration: 0,
    };
    let mut trace = vec![f0];
    let spg_options = config.spg_options();
    let status = loop {
        let pg_norm = projected_gradient_norm(state.iterate.view(), state.gradient.view());
        if pg_norm < config.grad_tol {
            break SolverStatus::Converged;
        }
        if state.iteration >= config.outer_max_iters {
            break SolverStatus::MaxIterations;
        }

        // Direction from the quadratic model; with no curvature pairs yet the
        // model uses B = I and its box minimizer is the projected gradient point.
        let (target, model_decrease) = {
            let compact = state.memory.compact();
            let identity = ScaledIdentity(1.0);
            let hessian: &dyn HessianProduct = match &compact {
                Some(c) => c,
                None => &identity,
            };
            let model = QuadraticModel {
                center: state.iterate.view(),
                gradient: state.gradient.view(),
                hessian,
            };
            if compact.is_none() {
                let target = clamp_box(&state.iterate - &state.gradient);
                let (q, _) = model.evaluate(target.view());
                (target, q)
            } else {
                let out = spg_solve(&model, state.iterate.view(), &spg_options)?;
                (out.point, out.value)
            }
        };
        let mut direction = &target - &state.iterate;
        let mut gtd = state.gradient.dot(&direction);
        if gtd.is_nan() || gtd >= 0.0 {
            direction = clamp_box(&state.iterate - &state.gradient) - &state.iterate;
            gtd = state.gradient.dot(&direction);
            if gtd.is_nan() || gtd >= 0.0 {
                break SolverStatus::Converged;
            }
        }

        let mut eta = 1.0;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let trial = clamp_box(&state.iterate + &(&direction * eta));
            let f_trial = objective.value(trial.view());
            evaluations += 1;
            if f_trial <= state.objective + config.armijo_c1 * eta * gtd {
                accepted = Some(trial);
                break;
            }
            eta *= 0.5;
        }
        let Some(next) = accepted else {
            log::warn!(
                "line search failed at iteration {} (directional derivative {gtd:e})",
                state.iteration
            );
            break SolverStatus::LineSearchFailed;
        };
        let (f_next, g_next) = objective.value_and_gradient(next.view());
        evaluations += 1;
        let u = &next - &state.iterate;
        let y = &g_next - &state.gradient;
        let pair_stored = state.memory.push(u, y);
        state.iterate = next;
        state.objective = f_next;
        state.gradient = g_next;
        state.iteration += 1;
        trace.push(f_next);
        observer(
            &state,
            &StepRecord {
                iteration: state.iteration,
                model_decrease,
                step_length: eta,
                directional_derivative: gtd,
                pair_stored,
            },
        );
    };
    Ok(SolverOutcome {
        projected_gradient_norm: projected_gradient_norm(state.iterate.view(), state.gradient.view()),
        s: state.iterate,
        objective: state.objective,
        gradient: state.gradient,
        trace,
        iterations: state.iteration,
        status,
        evaluations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    /// Separable quadratic `sum_p a_p (s_p - t_p)^2`.
    struct Separable {
        a: Array1<f64>,
        t: Array1<f64>,
    }

    impl Objective for Separable {
        fn dim(&self) -> usize {
            self.a.len()
        }
        fn value(&self, s: ArrayView1<'_, f64>) -> f64 {
            s.iter()
                .zip(&self.a)
                .zip(&self.t)
                .map(|((x, a), t)| a * (x - t).powi(2))
                .sum()
        }
        fn value_and_gradient(&self, s: ArrayView1<'_, f64>) -> (f64, Array1<f64>) {
            let g = Array1::from_iter(s.iter().zip(&self.a).zip(&self.t).map(|((x, a), t)| 2.0 * a * (x - t)));
            (self.value(s), g)
        }
    }

    /// Rosenbrock-like coupled objective, non-separable.
    struct Coupled;

    impl Objective for Coupled {
        fn dim(&self) -> usize {
            3
        }
        fn value(&self, s: ArrayView1<'_, f64>) -> f64 {
            (0..2)
                .map(|i| 10.0 * (s[i + 1] - s[i] * s[i]).powi(2) + (0.6 - s[i]).powi(2))
                .sum()
        }
        fn value_and_gradient(&self, s: ArrayView1<'_, f64>) -> (f64, Array1<f64>) {
            let mut g = Array1::zeros(3);
            for i in 0..2 {
                let r = s[i + 1] - s[i] * s[i];
                g[i] += -40.0 * r * s[i] - 2.0 * (0.6 - s[i]);
                g[i + 1] += 20.0 * r;
            }
            (self.value(s), g)
        }
    }

    #[test]
    fn projection_examples() {
        assert_eq!(
            project_box(array![-0.5, 0.3, 1.7].view()).unwrap(),
            array![0.0, 0.3, 1.0]
        );
        assert_eq!(
            project_box(array![0.0, 0.25, 1.0].view()).unwrap(),
            array![0.0, 0.25, 1.0]
        );
        assert_eq!(project_box(array![2.0, 2.0].view()).unwrap(), array![1.0, 1.0]);
        assert!(project_box(array![f64::NAN].view()).is_err());
    }

    #[test]
    fn separable_box_optimum() {
        let obj = Separable {
            a: array![1.0, 3.0, 0.5, 2.0],
            t: array![0.25, -1.0, 3.0, 0.75],
        };
        let out = pqn_minimize(&obj, &SolverConfig::default(), None).unwrap();
        assert_eq!(out.status, SolverStatus::Converged);
        let want = [0.25, 0.0, 1.0, 0.75];
        for (a, b) in out.s.iter().zip(want) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn coupled_objective_descends_monotonically_and_stays_feasible() {
        let mut model_ok = true;
        let mut feasible = true;
        let out = pqn_minimize_observed(
            &Coupled,
            &SolverConfig::default(),
            Some(array![0.1, 0.9, 0.2].view()),
            |st, rec| {
                feasible &= in_box(st.iterate.view());
                model_ok &= rec.model_decrease <= 0.0;
            },
        )
        .unwrap();
        assert!(feasible && model_ok);
        assert!(out.trace.windows(2).all(|w| w[1] <= w[0] + 1e-12));
        assert_eq!(out.status, SolverStatus::Converged);
        // Stationary point of the coupled objective inside the box.
        assert!(out.projected_gradient_norm < 1e-6);
    }

    #[test]
    fn zero_gradient_stops_immediately() {
        let obj = Separable {
            a: array![1.0, 1.0],
            t: array![1.0, 1.0],
        };
        let out = pqn_minimize(&obj, &SolverConfig::default(), None).unwrap();
        assert_eq!(out.iterations, 0);
        assert_eq!(out.s, array![1.0, 1.0]);
    }

    #[test]
    fn invalid_config() {
        let cfg = SolverConfig {
            armijo_c1: 1.5,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn deterministic() {
        let run = || pqn_minimize(&Coupled, &SolverConfig::default(), Some(array![0.9, 0.1, 0.5].view())).unwrap();
        let (a, b) = (run(), run());
        assert_eq!(a.s, b.s);
        assert_eq!(a.trace, b.trace);
    }
}
