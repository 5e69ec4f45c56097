//! End-to-end selection: fuse the views once, then tune the sparsity weight of
//! every view until the number of selected features hits its budget.

use ndarray::{Array1, Array2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::affinity::{build_similarity, row_normalize, TransitionMatrix, Weighting};
use crate::alignment::{center, AlignmentContext, Bandwidth};
use crate::data::{normalize_unit_length, MultiViewDataset, ZeroRow};
use crate::diffusion::{component_purity, cross_diffuse, ComponentPurityReport, DiffusionConfig, FusedGraph};
use crate::error::{Error, Result};
use crate::solver::{pqn_minimize, SolverConfig, SolverOutcome, SolverStatus};

/// Smallest and largest sparsity weight the bracket may expand to.
pub const LAMBDA_RANGE: (f64, f64) = (1e-8, 1e8);
/// Bisection steps after the bracket straddles the target.
pub const MAX_BISECTIONS: usize = 25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionRequest {
    /// Desired feature count per view. A single entry applies to every view.
    pub target_d: Vec<usize>,
    /// Allowed absolute deviation of the raw count from the target.
    pub count_slack: usize,
    pub lambda_bracket: (f64, f64),
    /// `s_p` at or above this counts as selected.
    pub rounding_threshold: f64,
}

impl Default for SelectionRequest {
    fn default() -> Self {
        Self {
            target_d: vec![10],
            count_slack: 10,
            lambda_bracket: (1e-3, 1.0),
            rounding_threshold: 0.999,
        }
    }
}

impl SelectionRequest {
    /// Per-view targets, checked against the feature counts of every view.
    pub fn targets(&self, n_features: &[usize]) -> Result<Vec<usize>> {
        let targets = match self.target_d.len() {
            1 => vec![self.target_d[0]; n_features.len()],
            m if m == n_features.len() => self.target_d.clone(),
            m => {
                return Err(Error::Config(format!(
                    "target_d has {m} entries for {} views",
                    n_features.len()
                )))
            }
        };
        for (v, (&d, &dim)) in targets.iter().zip(n_features).enumerate() {
            if d == 0 || d > dim {
                return Err(Error::Config(format!(
                    "target_d for view {v} must lie in 1..={dim}, got {d}"
                )));
            }
        }
        self.validate()?;
        Ok(targets)
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.lambda_bracket;
        if !(lo > 0.0 && lo < hi && hi.is_finite()) {
            return Err(Error::Config(format!(
                "lambda_bracket must satisfy 0 < lo < hi, got ({lo}, {hi})"
            )));
        }
        if !(self.rounding_threshold > 0.0 && self.rounding_threshold <= 1.0) {
            return Err(Error::Config(format!(
                "rounding_threshold must lie in (0, 1], got {}",
                self.rounding_threshold
            )));
        }
        if self.target_d.is_empty() {
            return Err(Error::Config("target_d is empty".into()));
        }
        Ok(())
    }

    fn window(&self, d: usize) -> (usize, usize) {
        (d.saturating_sub(self.count_slack), d + self.count_slack)
    }
}

/// Every knob of one selection run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionSettings {
    /// Scale rows to unit length before anything else.
    pub normalize: bool,
    pub weighting: Weighting,
    pub diffusion: DiffusionConfig,
    pub bandwidth: Bandwidth,
    pub request: SelectionRequest,
    pub solver: SolverConfig,
}

impl Default for SelectionSettings {
    fn default() -> Self {
        Self {
            normalize: true,
            weighting: Weighting::default(),
            diffusion: DiffusionConfig::default(),
            bandwidth: Bandwidth::default(),
            request: SelectionRequest::default(),
            solver: SolverConfig::default(),
        }
    }
}

/// One solve inside a lambda search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    pub lambda: f64,
    pub count: usize,
    pub objective: f64,
    pub iterations: usize,
    pub status: SolverStatus,
    /// Lambda of the probe whose solution seeded this one, if any.
    pub warm_start: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct LambdaSearch {
    pub lambda: f64,
    pub outcome: SolverOutcome,
    /// Probes in the order they were solved.
    pub probes: Vec<Probe>,
    /// Solutions of every probe, parallel to `probes`.
    pub solutions: Vec<Array1<f64>>,
    pub within_slack: bool,
    pub warnings: Vec<String>,
}

impl LambdaSearch {
    /// Fraction of adjacent probes, sorted by lambda, whose count does not increase.
    pub fn monotone_fraction(&self) -> f64 {
        monotone_fraction(&self.probes)
    }
}

pub fn monotone_fraction(probes: &[Probe]) -> f64 {
    let mut sorted: Vec<&Probe> = probes.iter().collect();
    sorted.sort_by(|a, b| a.lambda.total_cmp(&b.lambda));
    let pairs = sorted.len().saturating_sub(1);
    if pairs == 0 {
        return 1.0;
    }
    let ok = sorted.windows(2).filter(|w| w[1].count <= w[0].count).count();
    ok as f64 / pairs as f64
}

fn count_selected(s: &Array1<f64>, threshold: f64) -> usize {
    s.iter().filter(|&&v| v >= threshold).count()
}

struct Searcher<'c, 'a> {
    ctx: &'c AlignmentContext<'a>,
    request: &'c SelectionRequest,
    solver: &'c SolverConfig,
    probes: Vec<Probe>,
    solutions: Vec<Array1<f64>>,
    outcomes: Vec<SolverOutcome>,
}

impl Searcher<'_, '_> {
    /// Solves at `lambda`, warm-started from the nearest probe below it.
    ///
    /// A probe from above is never used: its solution may sit at `s = 0`,
    /// which is stationary for every lambda.
    fn probe(&mut self, lambda: f64) -> Result<usize> {
        let below = self
            .probes
            .iter()
            .enumerate()
            .filter(|(_, p)| p.lambda < lambda)
            .max_by(|a, b| a.1.lambda.total_cmp(&b.1.lambda))
            .map(|(i, p)| (i, p.lambda));
        let ctx = self.ctx.with_lambda(lambda)?;
        let start = below.map(|(i, _)| self.solutions[i].view());
        let outcome = pqn_minimize(&ctx, self.solver, start)?;
        let count = count_selected(&outcome.s, self.request.rounding_threshold);
        log::debug!("lambda {lambda:e}: {count} features, {} iterations", outcome.iterations);
        self.probes.push(Probe {
            lambda,
            count,
            objective: outcome.objective,
            iterations: outcome.iterations,
            status: outcome.status,
            warm_start: below.map(|(_, l)| l),
        });
        self.solutions.push(outcome.s.clone());
        self.outcomes.push(outcome);
        Ok(count)
    }
}

/// Searches the sparsity weight whose solution selects about `target` features.
///
/// The bracket is widened (halving the lower end, doubling the upper end)
/// until its counts straddle the target, then bisected geometrically until a
/// count falls within the slack window or [`MAX_BISECTIONS`] is reached.
/// The probe with the count closest to the target wins; ties go to the
/// smaller lambda.
pub fn lambda_search(
    ctx: &AlignmentContext<'_>,
    target: usize,
    request: &SelectionRequest,
    solver: &SolverConfig,
) -> Result<LambdaSearch> {
    request.validate()?;
    if target == 0 || target > ctx.n_features() {
        return Err(Error::Config(format!(
            "target must lie in 1..={}, got {target}",
            ctx.n_features()
        )));
    }
    let (win_lo, win_hi) = request.window(target);
    let inside = |c: usize| (win_lo..=win_hi).contains(&c);
    let mut warnings = Vec::new();
    let mut search = Searcher {
        ctx,
        request,
        solver,
        probes: Vec::new(),
        solutions: Vec::new(),
        outcomes: Vec::new(),
    };

    let (mut lo, mut hi) = request.lambda_bracket;
    let mut c_lo = search.probe(lo)?;
    let mut found = inside(c_lo);
    while !found && c_lo < target && lo / 2.0 >= LAMBDA_RANGE.0 {
        lo /= 2.0;
        c_lo = search.probe(lo)?;
        found = inside(c_lo);
    }
    if !found {
        let mut c_hi = search.probe(hi)?;
        found = inside(c_hi);
        while !found && c_hi > target && hi * 2.0 <= LAMBDA_RANGE.1 {
            hi *= 2.0;
            c_hi = search.probe(hi)?;
            found = inside(c_hi);
        }
        let straddles = c_lo >= target && c_hi <= target;
        if !found && !straddles {
            warnings.push(format!(
                "lambda bracket [{lo:e}, {hi:e}] could not be widened to straddle {target} features \
                 (counts {c_lo} and {c_hi})"
            ));
        }
        if straddles {
            for _ in 0..MAX_BISECTIONS {
                if found {
                    break;
                }
                let mid = (lo * hi).sqrt();
                let c = search.probe(mid)?;
                found = inside(c);
                if c > target {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
        }
    }

    let best = (0..search.probes.len())
        .min_by(|&a, &b| {
            let (pa, pb) = (&search.probes[a], &search.probes[b]);
            pa.count
                .abs_diff(target)
                .cmp(&pb.count.abs_diff(target))
                .then(pa.lambda.total_cmp(&pb.lambda))
        })
        .expect("at least one probe");
    let within_slack = inside(search.probes[best].count);
    if !within_slack {
        warnings.push(format!(
            "no lambda reached {target} +/- {} features; closest count is {}",
            request.count_slack, search.probes[best].count
        ));
    }
    let monotone = monotone_fraction(&search.probes);
    if monotone < 1.0 {
        log::info!(
            "feature count rose with lambda on {:.1}% of probe pairs",
            100.0 * (1.0 - monotone)
        );
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    let outcome = search.outcomes.swap_remove(best);
    Ok(LambdaSearch {
        lambda: search.probes[best].lambda,
        outcome,
        probes: search.probes,
        solutions: search.solutions,
        within_slack,
        warnings,
    })
}

/// Indices meeting the rounding rule, ascending.
pub fn raw_selection(s: &Array1<f64>, threshold: f64) -> Vec<usize> {
    (0..s.len()).filter(|&p| s[p] >= threshold).collect()
}

/// Grows or shrinks `start` to exactly `d` features, one feature at a time,
/// always taking the switch that lowers the binary objective most (or raises
/// it least). Ties go to the larger `s_p`, then the lower index.
pub fn complete_selection(ctx: &AlignmentContext<'_>, start: &[usize], s: &Array1<f64>, d: usize) -> Vec<usize> {
    let dim = ctx.n_features();
    let d = d.min(dim);
    let mut b = Array1::<f64>::zeros(dim);
    for &p in start {
        b[p] = 1.0;
    }
    let mut count = start.len();
    while count != d {
        let adding = count < d;
        let deltas = ctx.toggle_deltas(b.view());
        let pick = (0..dim)
            .filter(|&p| (b[p] == 0.0) == adding)
            .min_by(|&x, &y| {
                deltas[x]
                    .total_cmp(&deltas[y])
                    .then(if adding {
                        s[y].total_cmp(&s[x])
                    } else {
                        s[x].total_cmp(&s[y])
                    })
                    .then(x.cmp(&y))
            })
            .expect("a feature is left to switch");
        b[pick] = if adding { 1.0 } else { 0.0 };
        count = if adding { count + 1 } else { count - 1 };
    }
    (0..dim).filter(|&p| b[p] == 1.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverSummary {
    pub iterations: usize,
    pub evaluations: usize,
    pub status: SolverStatus,
    pub objective: f64,
    pub projected_gradient_norm: f64,
    /// Objective at the start and after every accepted step of the chosen probe.
    pub trace: Vec<f64>,
}

impl From<&SolverOutcome> for SolverSummary {
    fn from(o: &SolverOutcome) -> Self {
        Self {
            iterations: o.iterations,
            evaluations: o.evaluations,
            status: o.status,
            objective: o.objective,
            projected_gradient_norm: o.projected_gradient_norm,
            trace: o.trace.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewSelection {
    pub view: usize,
    pub n_features: usize,
    pub target_d: usize,
    pub sigma2: f64,
    pub lambda: f64,
    pub s: Vec<f64>,
    /// Indices with `s_p` at or above the rounding threshold.
    pub raw_selected: Vec<usize>,
    /// Exactly `target_d` indices.
    pub selected: Vec<usize>,
    pub within_slack: bool,
    pub probes: Vec<Probe>,
    pub solver: SolverSummary,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionDiagnostics {
    pub iterations_run: usize,
    pub converged: bool,
    pub final_delta: f64,
    /// Per view, rows whose similarities were all zero.
    pub fallback_rows: Vec<Vec<usize>>,
    pub zero_rows: Vec<ZeroRow>,
    /// Nonzero entries of the fused graph.
    pub graph_nonzeros: usize,
    pub purity: Option<ComponentPurityReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub version: String,
    pub settings: SelectionSettings,
    pub n: usize,
    /// Absent when the graph was supplied rather than fused in this run.
    pub diffusion: Option<DiffusionDiagnostics>,
    pub views: Vec<ViewSelection>,
}

impl SelectionResult {
    pub fn selected(&self) -> Vec<Vec<usize>> {
        self.views.iter().map(|v| v.selected.clone()).collect()
    }

    /// Whether the line search failed in the solve behind any reported selection.
    pub fn line_search_failed(&self) -> bool {
        self.views
            .iter()
            .any(|v| v.solver.status == SolverStatus::LineSearchFailed)
    }

    pub fn warnings(&self) -> impl Iterator<Item = &str> {
        self.views.iter().flat_map(|v| v.warnings.iter().map(String::as_str))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Fused graph of a dataset together with what it took to build it.
#[derive(Debug, Clone)]
pub struct Fusion {
    pub dataset: MultiViewDataset,
    pub transitions: Vec<TransitionMatrix>,
    pub graph: FusedGraph,
    pub diagnostics: DiffusionDiagnostics,
}

/// Optional normalization, per-view transition matrices, and cross diffusion.
pub fn fuse(dataset: &MultiViewDataset, settings: &SelectionSettings) -> Result<Fusion> {
    let (dataset, zero_rows) = if settings.normalize {
        normalize_unit_length(dataset)
    } else {
        (dataset.clone(), Vec::new())
    };
    settings.diffusion.validate(dataset.n())?;
    let built = dataset
        .views()
        .par_iter()
        .map(|v| build_similarity(v.data(), settings.weighting).map(|w| row_normalize(&w)))
        .collect::<Result<Vec<_>>>()?;
    let (transitions, fallback_rows): (Vec<_>, Vec<_>) = built.into_iter().unzip();
    let graph = cross_diffuse(&transitions, &settings.diffusion)?;
    let purity = dataset
        .labels()
        .map(|l| component_purity(graph.g.view(), Some(l)))
        .transpose()?;
    let diagnostics = DiffusionDiagnostics {
        iterations_run: graph.iterations_run,
        converged: graph.converged,
        final_delta: graph.final_delta,
        fallback_rows,
        zero_rows,
        graph_nonzeros: graph.g.iter().filter(|v| **v != 0.0).count(),
        purity,
    };
    Ok(Fusion {
        dataset,
        transitions,
        graph,
        diagnostics,
    })
}

/// Selects features in every view against an already fused graph.
///
/// `dataset` must be the (possibly normalized) dataset the graph was built from.
pub fn select_with_graph(
    dataset: &MultiViewDataset,
    g: &Array2<f64>,
    settings: &SelectionSettings,
) -> Result<Vec<ViewSelection>> {
    let dims: Vec<usize> = dataset.views().iter().map(|v| v.n_features()).collect();
    let targets = settings.request.targets(&dims)?;
    settings.solver.validate()?;
    if g.dim() != (dataset.n(), dataset.n()) {
        return Err(Error::DimensionMismatch(format!(
            "graph is {:?} for {} instances",
            g.dim(),
            dataset.n()
        )));
    }
    let g_centered = center(g.view());
    let threshold = settings.request.rounding_threshold;
    (0..dataset.n_views())
        .into_par_iter()
        .map(|v| {
            let view = dataset.view(v).data();
            let sigma2 = settings.bandwidth.resolve(view)?;
            let ctx = AlignmentContext::new(g_centered.view(), view, sigma2, 0.0)?;
            let search = lambda_search(&ctx, targets[v], &settings.request, &settings.solver)?;
            let s = search.outcome.s.clone();
            let raw_selected = raw_selection(&s, threshold);
            let selected = if raw_selected.len() == targets[v] {
                raw_selected.clone()
            } else {
                complete_selection(&ctx, &raw_selected, &s, targets[v])
            };
            Ok(ViewSelection {
                view: v,
                n_features: dims[v],
                target_d: targets[v],
                sigma2,
                lambda: search.lambda,
                s: s.to_vec(),
                raw_selected,
                selected,
                within_slack: search.within_slack,
                solver: SolverSummary::from(&search.outcome),
                probes: search.probes,
                warnings: search.warnings,
            })
        })
        .collect()
}

/// Fuses the views and selects features in each against the shared graph.
pub fn select_features(dataset: &MultiViewDataset, settings: &SelectionSettings) -> Result<SelectionResult> {
    let dims: Vec<usize> = dataset.views().iter().map(|v| v.n_features()).collect();
    settings.request.targets(&dims)?;
    let fusion = fuse(dataset, settings)?;
    let views = select_with_graph(&fusion.dataset, &fusion.graph.g, settings)?;
    Ok(SelectionResult {
        version: env!("CARGO_PKG_VERSION").to_string(),
        settings: settings.clone(),
        n: dataset.n(),
        diffusion: Some(fusion.diagnostics),
        views,
    })
}

/// Selects features against a previously fused graph.
pub fn select_features_with_graph(
    dataset: &MultiViewDataset,
    g: &Array2<f64>,
    settings: &SelectionSettings,
) -> Result<SelectionResult> {
    let dataset = if settings.normalize {
        normalize_unit_length(dataset).0
    } else {
        dataset.clone()
    };
    let views = select_with_graph(&dataset, g, settings)?;
    Ok(SelectionResult {
        version: env!("CARGO_PKG_VERSION").to_string(),
        settings: settings.clone(),
        n: dataset.n(),
        diffusion: None,
        views,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SyntheticParams};

    fn synthetic(seed: u64) -> MultiViewDataset {
        generate_synthetic(&SyntheticParams {
            seed,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn request_validation() {
        let r = SelectionRequest {
            target_d: vec![5, 200],
            ..Default::default()
        };
        assert!(r.targets(&[100, 100]).unwrap_err().is_config());
        let r = SelectionRequest {
            target_d: vec![7],
            ..Default::default()
        };
        assert_eq!(r.targets(&[10, 20, 30]).unwrap(), vec![7, 7, 7]);
        let r = SelectionRequest {
            lambda_bracket: (1.0, 0.5),
            ..Default::default()
        };
        assert!(r.validate().is_err());
    }

    #[test]
    fn window_saturates_at_zero() {
        let r = SelectionRequest::default();
        assert_eq!(r.window(4), (0, 14));
    }

    #[test]
    fn monotone_fraction_counts_rises() {
        let probe = |lambda, count| Probe {
            lambda,
            count,
            objective: 0.0,
            iterations: 0,
            status: SolverStatus::Converged,
            warm_start: None,
        };
        let probes = [probe(1.0, 5), probe(0.1, 9), probe(10.0, 6), probe(0.5, 8)];
        // Sorted: 9, 8, 5, 6 -> one rise out of three pairs.
        assert!((monotone_fraction(&probes) - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn selects_target_count_and_is_deterministic() {
        let ds = synthetic(3);
        let a = select_features(&ds, &SelectionSettings::default()).unwrap();
        let b = select_features(&ds, &SelectionSettings::default()).unwrap();
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
        for v in &a.views {
            assert_eq!(v.selected.len(), 10);
            assert!(v.selected.windows(2).all(|w| w[0] < w[1]));
            assert!(v.s.iter().all(|x| (0.0..=1.0).contains(x)));
            let raw: Vec<usize> = (0..v.s.len()).filter(|&p| v.s[p] >= 0.999).collect();
            assert_eq!(raw, v.raw_selected);
        }
        let back = SelectionResult::from_json(&a.to_json().unwrap()).unwrap();
        assert_eq!(back, a);

        let fused = fuse(&ds, &SelectionSettings::default()).unwrap();
        let c = select_features_with_graph(&ds, &fused.graph.g, &SelectionSettings::default()).unwrap();
        assert_eq!(c.views, a.views);
    }

    #[test]
    fn three_views_have_the_same_shape() {
        let ds = generate_synthetic(&SyntheticParams {
            views: 3,
            n: 60,
            noise: 20,
            ..Default::default()
        })
        .unwrap();
        let r = select_features(&ds, &SelectionSettings::default()).unwrap();
        assert_eq!(r.views.len(), 3);
        assert!(r.views.iter().all(|v| v.selected.len() == 10 && v.s.len() == 30));
    }
}
