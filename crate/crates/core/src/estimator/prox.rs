//! ADMM solver for the graph fused-lasso proximal problem
//!
//! ```text
//! minimize  1/2 |beta - g|^2 + lambda * sum_{(i,j) in E} |beta_i - beta_j|
//! ```
//!
//! split as `z = D beta` with `D` the edge incidence operator. The `beta`
//! update solves `(I + mu D^T D) beta = g + D^T (mu z - y)` by Jacobi
//! preconditioned conjugate gradients. The solver keeps `z`, the dual `y` and
//! `mu` between calls so consecutive proximal steps with nearby inputs start
//! close to their solution.

use serde::{Deserialize, Serialize};

use crate::graph::SpatialGraph;

/// Inner solver settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdmmSettings {
    pub max_iters: usize,
    /// Initial augmented-Lagrangian penalty `mu`.
    pub penalty: f64,
    /// Bound on the stationarity residual and floor of the primal bound.
    pub abs_tol: f64,
    /// Primal residual allowance relative to `max(|D beta|, |z|)`.
    pub rel_tol: f64,
}

impl Default for AdmmSettings {
    fn default() -> Self {
        AdmmSettings { max_iters: 20_000, penalty: 1.0, abs_tol: 1e-8, rel_tol: 1e-9 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProxSolution {
    pub beta: Vec<f64>,
    /// Dual certificate `w` with `|w_e| <= 1` and `beta - g + lambda D^T w ~ 0`.
    pub dual: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// `max_e |(D beta - z)_e|` at exit.
    pub primal_residual: f64,
    /// `max_i |(beta - g + lambda D^T w)_i|` at exit.
    pub dual_residual: f64,
}

/// Reusable ADMM state for one graph.
#[derive(Debug, Clone)]
pub struct ProxSolver<'g> {
    graph: &'g SpatialGraph,
    degree: Vec<f64>,
    beta: Vec<f64>,
    z: Vec<f64>,
    y: Vec<f64>,
    mu: f64,
    fresh: bool,
    // scratch
    d_beta: Vec<f64>,
    rhs: Vec<f64>,
    tmp_e: Vec<f64>,
    cg_r: Vec<f64>,
    cg_p: Vec<f64>,
    cg_ap: Vec<f64>,
    cg_z: Vec<f64>,
}

fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, &x| m.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl<'g> ProxSolver<'g> {
    pub fn new(graph: &'g SpatialGraph, penalty: f64) -> Self {
        let n = graph.n_vertices();
        let m = graph.n_edges();
        ProxSolver {
            graph,
            degree: graph.degrees().into_iter().map(|d| d as f64).collect(),
            beta: vec![0.0; n],
            z: vec![0.0; m],
            y: vec![0.0; m],
            mu: penalty,
            fresh: true,
            d_beta: vec![0.0; m],
            rhs: vec![0.0; n],
            tmp_e: vec![0.0; m],
            cg_r: vec![0.0; n],
            cg_p: vec![0.0; n],
            cg_ap: vec![0.0; n],
            cg_z: vec![0.0; n],
        }
    }

    pub fn graph(&self) -> &'g SpatialGraph {
        self.graph
    }

    /// `out = (I + mu D^T D) x`.
    fn apply_system(graph: &SpatialGraph, mu: f64, x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(x);
        for &(i, j) in graph.edges() {
            let d = mu * (x[i] - x[j]);
            out[i] += d;
            out[j] -= d;
        }
    }

    /// Preconditioned CG on `(I + mu D^T D) beta = rhs`, warm-started from
    /// the current `beta`.
    fn solve_beta(&mut self, tol: f64) {
        let graph = self.graph;
        let n = self.beta.len();
        Self::apply_system(graph, self.mu, &self.beta, &mut self.cg_ap);
        for i in 0..n {
            self.cg_r[i] = self.rhs[i] - self.cg_ap[i];
        }
        let precond = |deg: f64, mu: f64| 1.0 / (1.0 + mu * deg);
        for i in 0..n {
            self.cg_z[i] = self.cg_r[i] * precond(self.degree[i], self.mu);
        }
        self.cg_p.copy_from_slice(&self.cg_z);
        let mut rz = dot(&self.cg_r, &self.cg_z);
        for _ in 0..(4 * n + 50) {
            if norm_inf(&self.cg_r) <= tol {
                break;
            }
            Self::apply_system(graph, self.mu, &self.cg_p, &mut self.cg_ap);
            let pap = dot(&self.cg_p, &self.cg_ap);
            if pap <= 0.0 {
                break;
            }
            let alpha = rz / pap;
            for i in 0..n {
                self.beta[i] += alpha * self.cg_p[i];
                self.cg_r[i] -= alpha * self.cg_ap[i];
            }
            for i in 0..n {
                self.cg_z[i] = self.cg_r[i] * precond(self.degree[i], self.mu);
            }
            let rz_new = dot(&self.cg_r, &self.cg_z);
            let beta_cg = rz_new / rz;
            rz = rz_new;
            for i in 0..n {
                self.cg_p[i] = self.cg_z[i] + beta_cg * self.cg_p[i];
            }
        }
    }

    /// Forgets the warm-start state.
    pub fn reset(&mut self, penalty: f64) {
        self.beta.fill(0.0);
        self.z.fill(0.0);
        self.y.fill(0.0);
        self.mu = penalty;
        self.fresh = true;
    }

    pub fn solve(&mut self, g: &[f64], lambda: f64, settings: &AdmmSettings) -> ProxSolution {
        let graph = self.graph;
        let n = graph.n_vertices();
        let m = graph.n_edges();
        assert_eq!(g.len(), n, "input length must equal the vertex count");
        assert!(lambda >= 0.0, "lambda must be nonnegative");

        if lambda == 0.0 || m == 0 {
            return ProxSolution {
                beta: g.to_vec(),
                dual: vec![0.0; m],
                converged: true,
                iterations: 0,
                primal_residual: 0.0,
                dual_residual: 0.0,
            };
        }

        // the dual must stay feasible for the new lambda
        for v in &mut self.y {
            *v = v.clamp(-lambda, lambda);
        }
        if self.fresh {
            self.beta.copy_from_slice(g);
            self.fresh = false;
        }
        let inc = graph.incidence();
        let cg_tol = 0.05 * settings.abs_tol;

        let mut converged = false;
        let mut iterations = 0;
        let mut r_norm = f64::INFINITY;
        let mut s_norm = f64::INFINITY;
        for it in 0..settings.max_iters {
            iterations = it + 1;
            // beta update
            for e in 0..m {
                self.tmp_e[e] = self.mu * self.z[e] - self.y[e];
            }
            inc.apply_transpose(&self.tmp_e, &mut self.rhs);
            for (r, gi) in self.rhs.iter_mut().zip(g) {
                *r += gi;
            }
            self.solve_beta(cg_tol);

            // z update (soft threshold) and dual ascent
            inc.apply(&self.beta, &mut self.d_beta);
            let thresh = lambda / self.mu;
            r_norm = 0.0;
            for e in 0..m {
                let v = self.d_beta[e] + self.y[e] / self.mu;
                let z_new = v.signum() * (v.abs() - thresh).max(0.0);
                self.tmp_e[e] = z_new - self.z[e];
                self.z[e] = z_new;
                let r = self.d_beta[e] - z_new;
                r_norm = r_norm.max(r.abs());
                self.y[e] = (self.y[e] + self.mu * r).clamp(-lambda, lambda);
            }
            // stationarity residual mu D^T (z - z_old)
            inc.apply_transpose(&self.tmp_e, &mut self.cg_z);
            s_norm = self.mu * norm_inf(&self.cg_z);

            let scale_r = norm_inf(&self.d_beta).max(norm_inf(&self.z));
            let eps_pri = settings.abs_tol + settings.rel_tol * scale_r;
            // stationarity is held to the absolute tolerance alone
            let eps_dual = settings.abs_tol;
            if r_norm <= eps_pri && s_norm <= eps_dual {
                converged = true;
                break;
            }

            // residual balancing
            if it % 10 == 9 {
                let r_rel = r_norm / eps_pri;
                let s_rel = s_norm / eps_dual;
                if r_rel > 10.0 * s_rel {
                    self.mu *= 2.0;
                } else if s_rel > 10.0 * r_rel {
                    self.mu /= 2.0;
                }
            }
        }

        ProxSolution {
            beta: self.beta.clone(),
            dual: self.y.iter().map(|&v| v / lambda).collect(),
            converged,
            iterations,
            primal_residual: r_norm,
            dual_residual: s_norm,
        }
    }
}

/// One-shot proximal operator from a cold start.
pub fn prox_fused_lasso(g: &[f64], lambda: f64, graph: &SpatialGraph, settings: &AdmmSettings) -> ProxSolution {
    ProxSolver::new(graph, settings.penalty).solve(g, lambda, settings)
}

/// `max_i |beta - g + lambda D^T w|` together with the worst sign violation
/// of `w` on edges where `|D beta|` exceeds `edge_tol`.
pub fn kkt_residual(graph: &SpatialGraph, g: &[f64], lambda: f64, sol: &ProxSolution, edge_tol: f64) -> (f64, f64) {
    let inc = graph.incidence();
    let mut dtw = vec![0.0; graph.n_vertices()];
    inc.apply_transpose(&sol.dual, &mut dtw);
    let stationarity =
        sol.beta.iter().zip(g).zip(&dtw).map(|((b, gi), d)| (b - gi + lambda * d).abs()).fold(0.0, f64::max);
    let d_beta = inc.diff(&sol.beta);
    let mut sign_violation: f64 = 0.0;
    for (db, w) in d_beta.iter().zip(&sol.dual) {
        sign_violation = sign_violation.max(w.abs() - 1.0);
        if db.abs() > edge_tol {
            sign_violation = sign_violation.max((w - db.signum()).abs());
        }
    }
    (stationarity, sign_violation.max(0.0))
}
