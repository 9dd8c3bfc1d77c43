//! Graph fused-lasso logistic regression.
//!
//! The fitted log-odds field minimizes
//!
//! ```text
//! Q(beta) = -(1/n) l(beta) + rho * sum_{(i,j) in E} |beta_i - beta_j|
//! ```
//!
//! with `l` the Bernoulli log-likelihood. Each proximal gradient step takes a
//! gradient step of length `1/L` with `L = 1/n` and then solves the fused-lasso
//! proximal problem with weight `rho / L` by ADMM. Clusters are the connected
//! components of the graph after dropping edges whose endpoints were not
//! fused, and cluster probabilities are refit as within-cluster proportions.

mod prox;

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{connected_components, SpatialGraph};

pub use prox::{kkt_residual, prox_fused_lasso, AdmmSettings, ProxSolution, ProxSolver};

/// Absolute slack allowed in the per-iteration objective decrease.
pub const DESCENT_SLACK: f64 = 1e-10;

/// Loosest tolerance used for a proximal solve.
const MAX_PROX_TOL: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub rho: f64,
    pub max_outer_iters: usize,
    /// Stop once `|Q_t - Q_{t+1}| <= outer_tol * |Q_t|`.
    pub outer_tol: f64,
    pub admm_max_iters: usize,
    pub admm_penalty: f64,
    pub admm_abs_tol: f64,
    pub admm_rel_tol: f64,
    pub fuse_tol: f64,
    /// Each proximal solve is run to `prox_tol_factor` times the size of
    /// the previous outer step, floored at `admm_abs_tol`.
    pub prox_tol_factor: f64,
    pub acceleration: Acceleration,
    /// Every this many outer iterations, jump to the exact minimizer over the
    /// current fusion pattern when that lowers the objective; 0 disables.
    pub polish_every: usize,
}

/// Outer iteration scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Acceleration {
    /// `beta_{t+1} = prox(beta_t + grad / (n L))`.
    #[default]
    None,
    /// The same proximal step taken from an extrapolated point, keeping
    /// whichever of the new and current iterates has the lower objective and
    /// restarting the momentum whenever the objective would increase.
    Monotone,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            rho: 0.01,
            max_outer_iters: 20_000,
            outer_tol: 1e-10,
            admm_max_iters: 20_000,
            admm_penalty: 1.0,
            admm_abs_tol: 1e-8,
            admm_rel_tol: 1e-9,
            fuse_tol: 1e-6,
            prox_tol_factor: 0.01,
            acceleration: Acceleration::default(),
            polish_every: 5,
        }
    }
}

impl FitConfig {
    pub fn with_rho(mut self, rho: f64) -> Self {
        self.rho = rho;
        self
    }

    pub fn admm(&self) -> AdmmSettings {
        AdmmSettings {
            max_iters: self.admm_max_iters,
            penalty: self.admm_penalty,
            abs_tol: self.admm_abs_tol,
            rel_tol: self.admm_rel_tol,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho >= 0.0 && self.rho.is_finite()) {
            return Err(Error::parameter(format!("rho = {} must be a nonnegative number", self.rho)));
        }
        let positive = [
            ("outer_tol", self.outer_tol),
            ("admm_penalty", self.admm_penalty),
            ("admm_abs_tol", self.admm_abs_tol),
            ("admm_rel_tol", self.admm_rel_tol),
            ("fuse_tol", self.fuse_tol),
            ("prox_tol_factor", self.prox_tol_factor),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::parameter(format!("{name} = {v} must be positive")));
            }
        }
        if self.max_outer_iters == 0 || self.admm_max_iters == 0 {
            return Err(Error::parameter("iteration limits must be positive"));
        }
        Ok(())
    }
}

/// `log(1 + e^b)` without overflow.
pub fn log1p_exp(b: f64) -> f64 {
    b.max(0.0) + (-b.abs()).exp().ln_1p()
}

pub fn sigmoid(b: f64) -> f64 {
    if b >= 0.0 {
        1.0 / (1.0 + (-b).exp())
    } else {
        let e = b.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Bernoulli log-likelihood of log-odds `beta`.
pub fn log_likelihood(beta: &[f64], y: &[u8]) -> f64 {
    assert_eq!(beta.len(), y.len(), "beta and y lengths differ");
    beta.iter().zip(y).map(|(&b, &yi)| f64::from(yi) * b - log1p_exp(b)).sum()
}

/// Gradient of [`log_likelihood`].
pub fn gradient(beta: &[f64], y: &[u8]) -> Vec<f64> {
    assert_eq!(beta.len(), y.len(), "beta and y lengths differ");
    beta.iter().zip(y).map(|(&b, &yi)| f64::from(yi) - sigmoid(b)).collect()
}

/// Penalized objective `Q`.
pub fn objective(beta: &[f64], y: &[u8], graph: &SpatialGraph, rho: f64) -> f64 {
    let n = beta.len() as f64;
    -log_likelihood(beta, y) / n + rho * graph.incidence().total_variation(beta)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clusters {
    pub labels: Vec<usize>,
    pub sizes: Vec<usize>,
    pub positives: Vec<usize>,
    /// Clamped within-cluster proportions.
    pub p_hat: Vec<f64>,
    /// Whether the raw proportion hit the clamp.
    pub clamped: Vec<bool>,
}

impl Clusters {
    pub fn len(&self) -> usize {
        self.sizes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sizes.is_empty()
    }

    /// Cluster-constant log-odds implied by `p_hat`.
    pub fn refit_beta(&self) -> Vec<f64> {
        self.labels.iter().map(|&c| logit(self.p_hat[c])).collect()
    }
}

/// Clusters from fused edges (`|beta_i - beta_j| <= fuse_tol`) with
/// proportions clamped to `[1/(2 n_c), 1 - 1/(2 n_c)]`.
pub fn extract_clusters(beta: &[f64], y: &[u8], graph: &SpatialGraph, fuse_tol: f64) -> Clusters {
    let active: Vec<bool> = graph.edges().iter().map(|&(i, j)| (beta[i] - beta[j]).abs() <= fuse_tol).collect();
    let labels = connected_components(graph, &active);
    let k = labels.iter().max().map_or(0, |&m| m + 1);
    let mut sizes = vec![0usize; k];
    let mut positives = vec![0usize; k];
    for (&c, &yi) in labels.iter().zip(y) {
        sizes[c] += 1;
        positives[c] += usize::from(yi);
    }
    let mut p_hat = Vec::with_capacity(k);
    let mut clamped = Vec::with_capacity(k);
    for (&s, &pos) in sizes.iter().zip(&positives) {
        let raw = pos as f64 / s as f64;
        let lo = 1.0 / (2.0 * s as f64);
        let p = raw.clamp(lo, 1.0 - lo);
        clamped.push(p != raw);
        p_hat.push(p);
    }
    Clusters { labels, sizes, positives, p_hat, clamped }
}

/// `-2 l(beta_refit) + k log n`.
pub fn bic(clusters: &Clusters, y: &[u8]) -> f64 {
    let n = y.len() as f64;
    -2.0 * log_likelihood(&clusters.refit_beta(), y) + clusters.len() as f64 * n.ln()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub rho: f64,
    pub beta: Vec<f64>,
    pub clusters: Clusters,
    pub n_clusters: usize,
    /// BIC with the likelihood at the refit cluster-constant field.
    pub bic: f64,
    /// BIC with the likelihood at the penalized estimate.
    pub bic_penalized: f64,
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Proximal solves that hit the ADMM iteration limit.
    pub prox_failures: usize,
}

impl FitResult {
    pub fn objective(&self) -> f64 {
        *self.objective_trace.last().expect("trace holds the starting value")
    }

    pub fn p_hat(&self) -> &[f64] {
        &self.clusters.p_hat
    }

    pub fn labels(&self) -> &[usize] {
        &self.clusters.labels
    }
}

fn check_inputs(y: &[u8], graph: &SpatialGraph) -> Result<()> {
    if y.len() < 2 {
        return Err(Error::parameter("need at least two observations"));
    }
    if graph.n_vertices() != y.len() {
        return Err(Error::parameter(format!(
            "graph has {} vertices but there are {} observations",
            graph.n_vertices(),
            y.len()
        )));
    }
    if y.iter().any(|&v| v > 1) {
        return Err(Error::validation("outcomes must be 0 or 1"));
    }
    Ok(())
}

/// Minimizer of the objective over fields that keep the fusion groups and
/// the ordering of adjacent groups of `beta`.
///
/// Within that face the objective separates by group: a group with `m`
/// members, `Y` positives and net edge orientation `s` (edges to lower
/// neighbours minus edges to higher ones) is solved by
/// `sigmoid(b) = (Y - n rho s) / m`. Returns `None` when some group has no
/// finite solution or the solution reorders adjacent groups.
fn polish(beta: &[f64], y: &[u8], graph: &SpatialGraph, rho: f64, tol: f64) -> Option<Vec<f64>> {
    let n = y.len() as f64;
    let active: Vec<bool> = graph.edges().iter().map(|&(i, j)| (beta[i] - beta[j]).abs() <= tol).collect();
    let labels = connected_components(graph, &active);
    let k = labels.iter().max().map_or(0, |&m| m + 1);
    let mut size = vec![0.0; k];
    let mut pos = vec![0.0; k];
    let mut mean = vec![0.0; k];
    for (i, &c) in labels.iter().enumerate() {
        size[c] += 1.0;
        pos[c] += f64::from(y[i]);
        mean[c] += beta[i];
    }
    for c in 0..k {
        mean[c] /= size[c];
    }
    let mut orient = vec![0.0; k];
    for &(i, j) in graph.edges() {
        let (a, b) = (labels[i], labels[j]);
        if a != b {
            let s = (mean[a] - mean[b]).signum();
            orient[a] += s;
            orient[b] -= s;
        }
    }
    let mut value = vec![0.0; k];
    for c in 0..k {
        let p = (pos[c] - n * rho * orient[c]) / size[c];
        if !(p > 0.0 && p < 1.0) {
            return None;
        }
        value[c] = logit(p);
    }
    for &(i, j) in graph.edges() {
        let (a, b) = (labels[i], labels[j]);
        if a != b && (value[a] - value[b]) * (mean[a] - mean[b]) <= 0.0 {
            return None;
        }
    }
    Some(labels.iter().map(|&c| value[c]).collect())
}

/// Proximal gradient iterations from `beta0`, reusing `solver` state.
fn fit_from(y: &[u8], cfg: &FitConfig, beta0: Vec<f64>, solver: &mut ProxSolver<'_>) -> FitResult {
    let graph = solver.graph();
    let n = y.len() as f64;
    let step_l = 1.0 / n;
    let lambda = cfg.rho / step_l;
    let mut admm = cfg.admm();

    let mut beta = beta0;
    let mut q = objective(&beta, y, graph, cfg.rho);
    let mut trace = vec![q];
    let mut converged = false;
    let mut prox_failures = 0;
    let mut iterations = 0;
    let mut g = vec![0.0; beta.len()];
    let mut last_step = f64::INFINITY;
    let mut tighten = 1.0;
    // extrapolation point and momentum for the accelerated scheme
    let mut point = beta.clone();
    let mut momentum = 1.0_f64;
    let mut extrapolated = false;
    let mut small_changes = 0;
    let required_small = match cfg.acceleration {
        Acceleration::None => 1,
        Acceleration::Monotone => 3,
    };

    for _ in 0..cfg.max_outer_iters {
        iterations += 1;
        for ((gi, &b), &yi) in g.iter_mut().zip(&point).zip(y) {
            *gi = b + (f64::from(yi) - sigmoid(b)) / (step_l * n);
        }
        let loose = (cfg.prox_tol_factor * last_step).min(MAX_PROX_TOL) * tighten;
        admm.abs_tol = loose.max(cfg.admm_abs_tol);
        let sol = solver.solve(&g, lambda, &admm);
        if !sol.converged {
            prox_failures += 1;
        }
        let candidate = sol.beta;
        let q_cand = objective(&candidate, y, graph, cfg.rho);

        if q_cand > q + DESCENT_SLACK {
            trace.push(q);
            if extrapolated {
                // restart the momentum from the current iterate
                point.copy_from_slice(&beta);
                momentum = 1.0;
                extrapolated = false;
                continue;
            }
            // a plain step failed to descend: either the prox solve was too
            // loose or no further descent is possible
            if admm.abs_tol <= cfg.admm_abs_tol {
                converged = true;
                break;
            }
            tighten *= 0.01;
            continue;
        }

        let change = q - q_cand;
        last_step = candidate.iter().zip(&beta).fold(0.0, |m, (a, b)| m.max((a - b).abs()));
        match cfg.acceleration {
            Acceleration::None => point.copy_from_slice(&candidate),
            Acceleration::Monotone => {
                let next_momentum = 0.5 * (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt());
                let w = (momentum - 1.0) / next_momentum;
                for ((pt, &c), &b) in point.iter_mut().zip(&candidate).zip(&beta) {
                    *pt = c + w * (c - b);
                }
                momentum = next_momentum;
                extrapolated = w > 0.0;
            }
        }
        beta = candidate;
        q = q_cand;
        trace.push(q);
        if change.abs() <= cfg.outer_tol * q.abs().max(f64::MIN_POSITIVE) {
            small_changes += 1;
            if small_changes >= required_small {
                converged = true;
                break;
            }
        } else {
            small_changes = 0;
        }

        if cfg.polish_every > 0 && iterations % cfg.polish_every == 0 {
            let pattern_tol = (10.0 * admm.abs_tol).max(cfg.fuse_tol);
            if let Some(polished) = polish(&beta, y, graph, cfg.rho, pattern_tol) {
                let q_pol = objective(&polished, y, graph, cfg.rho);
                if q_pol < q {
                    last_step = polished.iter().zip(&beta).fold(0.0, |m, (a, b)| m.max((a - b).abs()));
                    beta = polished;
                    q = q_pol;
                    *trace.last_mut().expect("trace is nonempty") = q;
                    point.copy_from_slice(&beta);
                    momentum = 1.0;
                    extrapolated = false;
                    small_changes = 0;
                }
            }
        }
    }

    let clusters = extract_clusters(&beta, y, graph, cfg.fuse_tol);
    let bic_refit = bic(&clusters, y);
    let bic_penalized = -2.0 * log_likelihood(&beta, y) + clusters.len() as f64 * n.ln();
    FitResult {
        rho: cfg.rho,
        n_clusters: clusters.len(),
        beta,
        clusters,
        bic: bic_refit,
        bic_penalized,
        objective_trace: trace,
        iterations,
        converged,
        prox_failures,
    }
}

/// Fits the penalized model at `cfg.rho` starting from `beta = 0`.
pub fn fit(y: &[u8], graph: &SpatialGraph, cfg: &FitConfig) -> Result<FitResult> {
    cfg.validate()?;
    check_inputs(y, graph)?;
    let mut solver = ProxSolver::new(graph, cfg.admm_penalty);
    Ok(fit_from(y, cfg, vec![0.0; y.len()], &mut solver))
}

/// One entry of the BIC path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathPoint {
    pub rho: f64,
    pub bic: f64,
    pub bic_penalized: f64,
    pub n_clusters: usize,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub prox_failures: usize,
}

impl From<&FitResult> for PathPoint {
    fn from(f: &FitResult) -> Self {
        PathPoint {
            rho: f.rho,
            bic: f.bic,
            bic_penalized: f.bic_penalized,
            n_clusters: f.n_clusters,
            objective: f.objective(),
            iterations: f.iterations,
            converged: f.converged,
            prox_failures: f.prox_failures,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RhoSelection {
    pub best: FitResult,
    /// Every fit, in the order run (descending rho).
    pub path: Vec<PathPoint>,
}

/// Fits every rho in the grid from largest to smallest, warm-starting each
/// fit from the previous solution, and keeps the fit with the lowest BIC.
/// Ties go to the larger rho.
pub fn select_rho(y: &[u8], graph: &SpatialGraph, rho_grid: &[f64], cfg: &FitConfig) -> Result<RhoSelection> {
    if rho_grid.is_empty() {
        return Err(Error::parameter("rho grid is empty"));
    }
    check_inputs(y, graph)?;
    let mut grid = rho_grid.to_vec();
    for &r in &grid {
        cfg.with_rho(r).validate()?;
    }
    grid.sort_by(|a, b| b.total_cmp(a));
    grid.dedup();

    let mut solver = ProxSolver::new(graph, cfg.admm_penalty);
    let mut beta = vec![0.0; y.len()];
    let mut best: Option<FitResult> = None;
    let mut path = Vec::with_capacity(grid.len());
    for rho in grid {
        let f = fit_from(y, &cfg.with_rho(rho), beta, &mut solver);
        beta = f.beta.clone();
        path.push(PathPoint::from(&f));
        // strict improvement only, so ties keep the earlier (larger) rho
        if best.as_ref().is_none_or(|b| f.bic < b.bic) {
            best = Some(f);
        }
    }
    Ok(RhoSelection { best: best.expect("grid is nonempty"), path })
}

/// Lower bound on the smallest rho that fuses everything: at full fusion each
/// vertex's gradient imbalance must be absorbed by its incident edges.
fn rho_lower_bound(y: &[u8], graph: &SpatialGraph) -> f64 {
    let n = y.len() as f64;
    let ybar = y.iter().map(|&v| f64::from(v)).sum::<f64>() / n;
    let deg = graph.degrees();
    y.iter().zip(&deg).map(|(&yi, &d)| (f64::from(yi) - ybar).abs() / (n * d.max(1) as f64)).fold(0.0, f64::max)
}

/// Smallest rho in a doubling sequence whose fit fuses every connected
/// component of the graph into a single cluster.
pub fn rho_max(y: &[u8], graph: &SpatialGraph, cfg: &FitConfig) -> Result<f64> {
    check_inputs(y, graph)?;
    let all = vec![true; graph.n_edges()];
    let floor = connected_components(graph, &all).into_iter().max().map_or(0, |m| m + 1);
    let mut rho = rho_lower_bound(y, graph);
    if rho == 0.0 {
        // constant outcomes: any positive rho fuses
        return Ok(1e-6);
    }
    let mut solver = ProxSolver::new(graph, cfg.admm_penalty);
    let mut beta = vec![0.0; y.len()];
    for _ in 0..64 {
        let f = fit_from(y, &cfg.with_rho(rho), beta, &mut solver);
        if f.n_clusters == floor {
            return Ok(rho);
        }
        beta = f.beta;
        rho *= 2.0;
    }
    Err(Error::parameter("could not find a rho that fuses every vertex"))
}

/// `count` log-spaced values from `hi / span` up to `hi`, descending.
pub fn log_grid(hi: f64, span: f64, count: usize) -> Vec<f64> {
    if count <= 1 {
        return vec![hi];
    }
    let lo = hi / span;
    (0..count).map(|i| hi * (lo / hi).powf(i as f64 / (count - 1) as f64)).collect()
}

/// Default grid: 30 log-spaced values over `[rho_max / 1e3, rho_max]`.
pub fn default_rho_grid(y: &[u8], graph: &SpatialGraph, cfg: &FitConfig) -> Result<Vec<f64>> {
    Ok(log_grid(rho_max(y, graph, cfg)?, 1e3, 30))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub id: usize,
    pub size: usize,
    pub positives: usize,
    pub p_hat: f64,
    pub clamped: bool,
}

/// Serialized form of a fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub rho: f64,
    pub bic: f64,
    pub bic_penalized: f64,
    pub n_clusters: usize,
    pub clusters: Vec<ClusterSummary>,
    pub labels: Vec<usize>,
    pub converged: bool,
    pub iterations: usize,
    pub prox_failures: usize,
}

impl From<&FitResult> for FitReport {
    fn from(f: &FitResult) -> Self {
        let c = &f.clusters;
        FitReport {
            rho: f.rho,
            bic: f.bic,
            bic_penalized: f.bic_penalized,
            n_clusters: f.n_clusters,
            clusters: (0..c.len())
                .map(|id| ClusterSummary {
                    id,
                    size: c.sizes[id],
                    positives: c.positives[id],
                    p_hat: c.p_hat[id],
                    clamped: c.clamped[id],
                })
                .collect(),
            labels: c.labels.clone(),
            converged: f.converged,
            iterations: f.iterations,
            prox_failures: f.prox_failures,
        }
    }
}

pub fn write_beta_csv<W: Write>(beta: &[f64], mut out: W) -> std::io::Result<()> {
    writeln!(out, "index,beta")?;
    for (i, b) in beta.iter().enumerate() {
        writeln!(out, "{i},{b}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn likelihood_examples() {
        let l = log_likelihood(&[0.0, 0.0], &[1, 0]);
        assert!((l + 2.0 * 2f64.ln()).abs() < 1e-15);
        let l = log_likelihood(&[9f64.ln()], &[1]);
        assert!((l - 0.9f64.ln()).abs() < 1e-15);
        assert!((l + 0.105_361).abs() < 1e-6);
        let l = log_likelihood(&[1000.0, -1000.0], &[1, 0]);
        assert!(l.is_finite() && l.abs() < 1e-300);
    }

    #[test]
    fn gradient_examples_and_finite_differences() {
        assert_eq!(gradient(&[0.0], &[1]), vec![0.5]);
        assert_eq!(gradient(&[0.0], &[0]), vec![-0.5]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let beta: Vec<f64> = (0..6).map(|_| rng.gen_range(-4.0..4.0)).collect();
            let y: Vec<u8> = (0..6).map(|_| rng.gen_range(0..2)).collect();
            let grad = gradient(&beta, &y);
            let h = 1e-5;
            for i in 0..6 {
                let mut up = beta.clone();
                let mut dn = beta.clone();
                up[i] += h;
                dn[i] -= h;
                let fd = (log_likelihood(&up, &y) - log_likelihood(&dn, &y)) / (2.0 * h);
                assert!((fd - grad[i]).abs() <= 1e-5 * grad[i].abs().max(1e-3), "{fd} vs {}", grad[i]);
            }
        }
    }

    #[test]
    fn bic_examples() {
        let y = [1, 0, 1, 0];
        let graph = SpatialGraph::chain(4);
        let one = extract_clusters(&[0.0; 4], &y, &graph, 1e-6);
        let b = bic(&one, &y);
        assert!((b - (8.0 * 2f64.ln() + 4f64.ln())).abs() < 1e-12);

        // splitting into two clusters with the same proportion keeps l fixed
        let two = extract_clusters(&[0.0, 0.0, 1.0, 1.0], &y, &graph, 1e-6);
        assert_eq!(two.p_hat, vec![0.5, 0.5]);
        assert!((bic(&two, &y) - b - 4f64.ln()).abs() < 1e-12);

        // relabeling invariance: reverse the chain
        let rev_y = [0, 1, 0, 1];
        let rev = extract_clusters(&[1.0, 1.0, 0.0, 0.0], &rev_y, &graph, 1e-6);
        assert!((bic(&rev, &rev_y) - bic(&two, &y)).abs() < 1e-12);
    }

    #[test]
    fn extract_clusters_examples() {
        let graph = SpatialGraph::chain(6);
        let y = [1, 0, 0, 1, 1, 0];
        let c = extract_clusters(&[0.3; 6], &y, &graph, 1e-6);
        assert_eq!(c.len(), 1);
        assert!((c.p_hat[0] - 0.5).abs() < 1e-15);

        let c = extract_clusters(&[0.0, 0.0, 0.0, 5.0, 5.0, 5.0], &y, &graph, 1e-6);
        assert_eq!(c.labels, vec![0, 0, 0, 1, 1, 1]);
        assert!((c.p_hat[0] - 1.0 / 3.0).abs() < 1e-15);
        assert!((c.p_hat[1] - 2.0 / 3.0).abs() < 1e-15);

        // all-zero cluster clamps to 1/(2 n_c)
        let c = extract_clusters(&[0.0; 4], &[0, 0, 0, 0], &SpatialGraph::chain(4), 1e-6);
        assert_eq!(c.p_hat, vec![0.125]);
        assert!(c.clamped[0]);
    }

    #[test]
    fn single_cluster_proportion() {
        let n = 6482;
        let y: Vec<u8> = (0..n).map(|i| u8::from(i % 35 == 0 && i / 35 < 186)).collect();
        let c = extract_clusters(&vec![-3.5; n], &y, &SpatialGraph::chain(n), 1e-6);
        assert_eq!((c.len(), c.positives[0]), (1, 186));
        assert!((c.p_hat[0] - 0.028_694_85).abs() < 5e-9);
    }

    #[test]
    fn large_rho_pools_everything() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let y: Vec<u8> = (0..30).map(|_| u8::from(rng.gen_bool(0.3))).collect();
        let graph = SpatialGraph::chain(30);
        let f = fit(&y, &graph, &FitConfig::default().with_rho(1e3)).unwrap();
        assert_eq!(f.n_clusters, 1);
        let ybar = y.iter().map(|&v| f64::from(v)).sum::<f64>() / 30.0;
        // 1-D bisection on the pooled score as the oracle
        let (mut lo, mut hi) = (-10.0, 10.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if sigmoid(mid) < ybar {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        for &b in &f.beta {
            assert!((b - lo).abs() < 1e-4, "{b} vs {lo}");
        }
        assert!(f.objective_trace.windows(2).all(|w| w[1] <= w[0] + DESCENT_SLACK));
    }

    #[test]
    fn zero_rho_separates_by_outcome() {
        let y = [1, 0, 1, 0, 0];
        let graph = SpatialGraph::chain(5);
        let cfg = FitConfig { rho: 0.0, max_outer_iters: 200, ..Default::default() };
        let f = fit(&y, &graph, &cfg).unwrap();
        // each vertex is its own cluster apart from the adjacent 0s
        assert_eq!(f.n_clusters, 4);
        for (i, &yi) in y.iter().enumerate() {
            let c = f.clusters.labels[i];
            let size = f.clusters.sizes[c] as f64;
            let clamp = 1.0 / (2.0 * size);
            assert!((f.clusters.p_hat[c] - f64::from(yi).clamp(clamp, 1.0 - clamp)).abs() < 1e-15);
        }
        let q = f.objective();
        assert!((q + log_likelihood(&f.beta, &y) / 5.0).abs() < 1e-15);
    }

    #[test]
    fn single_value_grid_matches_fit() {
        let y = [1, 1, 0, 0, 1, 0, 0, 0];
        let graph = SpatialGraph::chain(8);
        let cfg = FitConfig::default();
        let sel = select_rho(&y, &graph, &[0.02], &cfg).unwrap();
        let f = fit(&y, &graph, &cfg.with_rho(0.02)).unwrap();
        assert_eq!(sel.best.n_clusters, f.n_clusters);
        assert!((sel.best.objective() - f.objective()).abs() < 1e-10);
        assert!((sel.best.bic - bic(&sel.best.clusters, &y)).abs() < 1e-12);
        assert_eq!(sel.path.len(), 1);
    }

    #[test]
    fn log_grid_spacing() {
        let g = log_grid(1.0, 1e3, 4);
        let want = [1.0, 0.1, 0.01, 0.001];
        for (a, b) in g.iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let graph = SpatialGraph::chain(3);
        assert!(fit(&[1], &SpatialGraph::chain(1), &FitConfig::default()).is_err());
        assert!(fit(&[1, 0], &graph, &FitConfig::default()).is_err());
        assert!(fit(&[1, 0, 2], &graph, &FitConfig::default()).is_err());
        assert!(fit(&[1, 0, 1], &graph, &FitConfig::default().with_rho(-1.0)).is_err());
        assert!(select_rho(&[1, 0, 1], &graph, &[], &FitConfig::default()).is_err());
    }
}
