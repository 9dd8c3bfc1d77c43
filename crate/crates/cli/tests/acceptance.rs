//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Run with `cargo test -p wellplan-cli --test acceptance`. Reference values
//! are checked against oracles written here, independent of the library.

use std::collections::{BTreeMap, HashMap};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::sync::Mutex;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};
use wellplan::design::{
    kernel_intensity, scott_bandwidth, target_intensity, thin_candidates, ClusterRegion, Grid, IntensityField,
    TargetField, Window,
};
use wellplan::estimator::{
    default_rho_grid, fit, gradient, log_likelihood, prox_fused_lasso, select_rho, AdmmSettings, FitConfig,
};
use wellplan::graph::{hybrid_graph, knn_graph, SpatialGraph};
use wellplan::ingest::{aggregate_observations, CandidateWell, Coordinates};
use wellplan::simulate::{adjusted_rand_index, simulate, SimulationSpec};
use wellplan::sizing::{
    beta_quantile, normal_quantile, size, wilson_sample_size, wilson_sample_size_exact, SizingSpec,
};
use wellplan::{CountyPolygon, Point};

/// Objective traces of every fit run by the suite.
static TRACES: Mutex<Vec<Vec<f64>>> = Mutex::new(Vec::new());

fn record_trace(trace: &[f64]) {
    TRACES.lock().unwrap().push(trace.to_vec());
}

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

// ---------------------------------------------------------------------------
// 1. Reference sample-size table

fn reference_table() -> Outcome {
    let start = Instant::now();
    let ps = [0.03, 0.21, 0.34];
    let levels = [0.90, 0.95, 0.99];
    // rows: level; columns: cluster
    let wilson = [[8766u64, 1017, 523], [12446, 1444, 743], [21497, 2493, 1282]];
    let jeffreys = [[8746u64, 1015, 523], [12420, 1442, 743], [21456, 2492, 1284]];
    let mut worst_w = 0u64;
    let mut worst_j: f64 = 0.0;
    for (li, &level) in levels.iter().enumerate() {
        for (ci, &p) in ps.iter().enumerate() {
            let r = size(&SizingSpec::relative(p, 0.1, level).unwrap(), false).unwrap();
            worst_w = worst_w.max(r.n_wilson.abs_diff(wilson[li][ci]));
            worst_j = worst_j.max((r.n_jeffreys as f64 - jeffreys[li][ci] as f64).abs() / jeffreys[li][ci] as f64);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst_w <= 1 && worst_j <= 0.005 && secs < 30.0,
        format!(
            "max Wilson diff {worst_w} (tol 1), max Jeffreys rel diff {:.3}% (tol 0.5%), {secs:.1}s (limit 30s)",
            worst_j * 100.0
        ),
    )
}

// ---------------------------------------------------------------------------
// 2. Wilson closed form against double-double arithmetic

#[derive(Clone, Copy, Debug)]
struct Dd(f64, f64);

impl Dd {
    fn from(v: f64) -> Dd {
        Dd(v, 0.0)
    }

    fn quick(a: f64, b: f64) -> Dd {
        let s = a + b;
        Dd(s, b - (s - a))
    }

    fn add(self, o: Dd) -> Dd {
        let s = self.0 + o.0;
        let bb = s - self.0;
        let e = (self.0 - (s - bb)) + (o.0 - bb);
        Dd::quick(s, e + self.1 + o.1)
    }

    fn neg(self) -> Dd {
        Dd(-self.0, -self.1)
    }

    fn sub(self, o: Dd) -> Dd {
        self.add(o.neg())
    }

    fn mul(self, o: Dd) -> Dd {
        let p = self.0 * o.0;
        let e = self.0.mul_add(o.0, -p) + self.0 * o.1 + self.1 * o.0;
        Dd::quick(p, e)
    }

    fn div(self, o: Dd) -> Dd {
        let q1 = self.0 / o.0;
        let r = self.sub(o.mul(Dd::from(q1)));
        let q2 = r.0 / o.0;
        let r = r.sub(o.mul(Dd::from(q2)));
        let q3 = r.0 / o.0;
        Dd::quick(q1, q2).add(Dd::from(q3))
    }

    fn sqrt(self) -> Dd {
        let s = Dd::from(self.0.sqrt());
        // one Newton step doubles the ~16 correct digits
        s.add(self.sub(s.mul(s)).div(s.mul(Dd::from(2.0))))
    }

    fn ratio(num: i64, den: i64) -> Dd {
        Dd::from(num as f64).div(Dd::from(den as f64))
    }
}

fn wilson_oracle(p: Dd, delta: Dd, z: Dd) -> Dd {
    let z2 = z.mul(z);
    let d2 = Dd::from(4.0).mul(delta).mul(delta);
    let a = d2.sub(Dd::from(2.0).mul(p).mul(Dd::from(1.0).sub(p)));
    let root = a.mul(a).sub(d2.mul(d2.sub(Dd::from(1.0)))).sqrt();
    z2.mul(a).neg().add(z2.mul(root)).div(d2)
}

fn wilson_spot_check() -> Outcome {
    let oracle = wilson_oracle(Dd::ratio(3, 100), Dd::ratio(3, 1000), Dd::ratio(1_959_964, 1_000_000));
    let exact = wilson_sample_size_exact(0.03, 0.003, 1.959964);
    let rounded = wilson_sample_size(&SizingSpec::new(0.03, 0.003, 0.95).unwrap()).n;
    let pass = (exact - 12446.1).abs() <= 0.2
        && (oracle.0 - 12446.1).abs() <= 0.2
        && (exact - oracle.0).abs() <= 1e-8 * oracle.0;
    outcome(pass, format!("library {exact:.6}, oracle {:.6}, target 12446.1 ± 0.2, rounded n = {rounded}", oracle.0))
}

// ---------------------------------------------------------------------------
// 3. Chain graphs against exhaustive fusion-pattern search

fn objective_oracle(beta: &[f64], y: &[u8], rho: f64) -> f64 {
    let n = beta.len() as f64;
    let loss: f64 = beta
        .iter()
        .zip(y)
        .map(|(&b, &yi)| {
            let log1pexp = if b > 0.0 { b + (-b).exp().ln_1p() } else { b.exp().ln_1p() };
            log1pexp - f64::from(yi) * b
        })
        .sum();
    let tv: f64 = beta.windows(2).map(|w| (w[1] - w[0]).abs()).sum();
    loss / n + rho * tv
}

/// Minimum over every segmentation of the chain and every sign pattern of
/// the jumps between segments, using the closed-form block values.
fn chain_oracle(y: &[u8], rho: f64) -> f64 {
    let n = y.len();
    let mut best = f64::INFINITY;
    for breaks in 0u32..(1 << (n - 1)) {
        let mut blocks: Vec<(usize, usize)> = Vec::new();
        let mut start = 0;
        for i in 0..n - 1 {
            if breaks & (1 << i) != 0 {
                blocks.push((start, i + 1));
                start = i + 1;
            }
        }
        blocks.push((start, n));
        let k = blocks.len();
        for signs in 0u32..(1 << (k - 1)) {
            let s = |j: isize| -> f64 {
                if j < 0 || j as usize >= k - 1 {
                    0.0
                } else if signs & (1 << j) != 0 {
                    1.0
                } else {
                    -1.0
                }
            };
            let mut beta = vec![0.0; n];
            let mut feasible = true;
            for (j, &(a, b)) in blocks.iter().enumerate() {
                let m = (b - a) as f64;
                let ones: f64 = y[a..b].iter().map(|&v| f64::from(v)).sum();
                let c = s(j as isize - 1) - s(j as isize);
                let p = (ones - n as f64 * rho * c) / m;
                if !(p > 0.0 && p < 1.0) {
                    feasible = false;
                    break;
                }
                beta[a..b].fill((p / (1.0 - p)).ln());
            }
            if feasible {
                best = best.min(objective_oracle(&beta, y, rho));
            }
        }
    }
    best
}

fn chain_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    let mut worst_case = String::new();
    for _ in 0..50 {
        let n = rng.gen_range(2..=8);
        let mut y: Vec<u8> = (0..n).map(|_| rng.gen_range(0..=1)).collect();
        if y.iter().all(|&v| v == y[0]) {
            y[rng.gen_range(0..n)] ^= 1;
        }
        let rho = 10f64.powf(rng.gen_range(-2.5..-0.5));
        let f = fit(&y, &SpatialGraph::chain(n), &FitConfig::default().with_rho(rho)).unwrap();
        record_trace(&f.objective_trace);
        let got = objective_oracle(&f.beta, &y, rho);
        let want = chain_oracle(&y, rho);
        let gap = (got - want).abs();
        if gap > worst {
            worst = gap;
            worst_case = format!("n={n} rho={rho:.4}");
        }
    }
    outcome(worst <= 1e-5, format!("50 instances, max |Q_fit - Q_oracle| = {worst:.2e} (tol 1e-5) at {worst_case}"))
}

// ---------------------------------------------------------------------------
// 4. Proximal operator

fn kkt_certificate(graph: &SpatialGraph, g: &[f64], lambda: f64, beta: &[f64], w: &[f64]) -> f64 {
    let mut dtw = vec![0.0; g.len()];
    for (e, &(i, j)) in graph.edges().iter().enumerate() {
        dtw[i] += w[e];
        dtw[j] -= w[e];
    }
    let mut res: f64 = 0.0;
    for i in 0..g.len() {
        res = res.max((beta[i] - g[i] + lambda * dtw[i]).abs());
    }
    for (e, &(i, j)) in graph.edges().iter().enumerate() {
        let d = beta[i] - beta[j];
        res = res.max(w[e].abs() - 1.0);
        if d.abs() > 1e-6 {
            res = res.max(lambda * (w[e] - d.signum()).abs());
        }
    }
    res
}

fn prox_correctness() -> Outcome {
    let tight = AdmmSettings { max_iters: 200_000, abs_tol: 1e-12, rel_tol: 1e-12, ..Default::default() };
    let two = SpatialGraph::chain(2);
    let a = prox_fused_lasso(&[1.0, 0.0], 0.2, &two, &tight).beta;
    let b = prox_fused_lasso(&[1.0, 0.0], 0.6, &two, &tight).beta;
    let closed_err = [a[0] - 0.8, a[1] - 0.2, b[0] - 0.5, b[1] - 0.5].iter().fold(0.0f64, |m, v| m.max(v.abs()));

    let settings = AdmmSettings { max_iters: 200_000, abs_tol: 1e-10, rel_tol: 1e-11, ..Default::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.gen_range(10..=200);
        let pts: Vec<Point> = (0..n).map(|_| Point::new(rng.gen_range(0.0..10.0), rng.gen_range(0.0..10.0))).collect();
        let graph = knn_graph(&pts, rng.gen_range(2..=6)).unwrap();
        let g: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let lambda = 10f64.powf(rng.gen_range(-2.0..0.3));
        let sol = prox_fused_lasso(&g, lambda, &graph, &settings);
        worst = worst.max(kkt_certificate(&graph, &g, lambda, &sol.beta, &sol.dual));
    }
    outcome(
        closed_err <= 1e-9 && worst <= 1e-6,
        format!("two-node error {closed_err:.1e}; max KKT residual over 100 kNN instances {worst:.2e} (tol 1e-6)"),
    )
}

// ---------------------------------------------------------------------------
// 5. Descent and gradient

fn descent_and_gradient() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let n = rng.gen_range(50..=300);
        let pts: Vec<Point> = (0..n).map(|_| Point::new(rng.gen_range(0.0..10.0), rng.gen_range(0.0..10.0))).collect();
        let y: Vec<u8> = pts.iter().map(|p| u8::from(rng.gen::<f64>() < if p.x < 5.0 { 0.1 } else { 0.5 })).collect();
        let graph = knn_graph(&pts, 4).unwrap();
        let rho = 10f64.powf(rng.gen_range(-3.5..-1.5));
        record_trace(&fit(&y, &graph, &FitConfig::default().with_rho(rho)).unwrap().objective_trace);
    }
    let traces = TRACES.lock().unwrap();
    let violations = traces.iter().filter(|t| t.windows(2).any(|w| w[1] > w[0] + 1e-10)).count();

    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let n = 30;
        let beta: Vec<f64> = (0..n).map(|_| rng.gen_range(-4.0..4.0)).collect();
        let y: Vec<u8> = (0..n).map(|_| rng.gen_range(0..=1)).collect();
        let grad = gradient(&beta, &y);
        let h = 1e-5;
        let (mut num, mut den) = (0.0f64, 0.0f64);
        for i in 0..n {
            let mut up = beta.clone();
            let mut down = beta.clone();
            up[i] += h;
            down[i] -= h;
            let fd = (log_likelihood(&up, &y) - log_likelihood(&down, &y)) / (2.0 * h);
            num += (grad[i] - fd).powi(2);
            den += fd * fd;
        }
        worst = worst.max((num / den).sqrt());
    }
    outcome(
        violations == 0 && worst <= 1e-5,
        format!(
            "{} fits, {violations} traces increasing beyond 1e-10; gradient rel error {worst:.2e} (tol 1e-5)",
            traces.len()
        ),
    )
}

// ---------------------------------------------------------------------------
// 6. Cluster recovery on synthetic maps

fn cluster_recovery() -> Outcome {
    let start = Instant::now();
    let mut good_ari = 0;
    let mut recovered = 0;
    let mut worst_p: f64 = 0.0;
    let replicates = 20;
    for seed in 0..replicates {
        let spec = SimulationSpec { seed, ..SimulationSpec::default() };
        let data = simulate(&spec).unwrap();
        let set = aggregate_observations(&data.records, spec.threshold_mg_l, None).unwrap();
        assert_eq!(set.len(), 2000);
        let truth = data.regions_of(&set).unwrap();
        let y = set.outcomes();
        let graph = hybrid_graph(&set.observations, Default::default()).unwrap();
        let cfg = FitConfig::default();
        let grid = default_rho_grid(&y, &graph, &cfg).unwrap();
        let sel = select_rho(&y, &graph, &grid, &cfg).unwrap();
        record_trace(&sel.best.objective_trace);
        let labels = sel.best.labels();
        let ari = adjusted_rand_index(&truth, labels);

        let mut p_ok = true;
        for (r, &p) in spec.region_p.iter().enumerate() {
            let mut overlap: BTreeMap<usize, usize> = BTreeMap::new();
            for (&t, &l) in truth.iter().zip(labels) {
                if t == r {
                    *overlap.entry(l).or_default() += 1;
                }
            }
            let (&matched, _) = overlap.iter().max_by_key(|(&l, &c)| (c, std::cmp::Reverse(l))).unwrap();
            let err = (sel.best.p_hat()[matched] - p).abs();
            if ari >= 0.9 {
                worst_p = worst_p.max(err);
            }
            p_ok &= err <= 0.05;
        }
        good_ari += usize::from(ari >= 0.9);
        recovered += usize::from(ari >= 0.9 && p_ok);
    }
    let secs = start.elapsed().as_secs_f64();
    let needed = (0.8 * replicates as f64).ceil() as usize;
    outcome(
        recovered >= needed && secs < 300.0,
        format!(
            "ARI >= 0.90 in {good_ari}/{replicates}, with every matched p_hat within 0.05 in {recovered}/{replicates} (need {needed}); \
             worst p_hat error {worst_p:.3}; {secs:.0}s (limit 300s)"
        ),
    )
}

// ---------------------------------------------------------------------------
// 7. Special functions

/// Adaptive Gauss-Kronrod 7/15 quadrature.
fn gauss_kronrod(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
    const XK: [f64; 8] = [
        0.991_455_371_120_812_6,
        0.949_107_912_342_758_5,
        0.864_864_423_359_769_1,
        0.741_531_185_599_394_5,
        0.586_087_235_467_691_1,
        0.405_845_151_377_397_2,
        0.207_784_955_007_898_48,
        0.000000000000000000000000000000000,
    ];
    const WK: [f64; 8] = [
        0.022_935_322_010_529_224,
        0.063_092_092_629_978_56,
        0.104_790_010_322_250_19,
        0.140_653_259_715_525_92,
        0.169_004_726_639_267_9,
        0.190_350_578_064_785_42,
        0.204_432_940_075_298_89,
        0.209_482_141_084_727_82,
    ];
    const WG: [f64; 4] =
        [0.129_484_966_168_869_7, 0.279_705_391_489_276_64, 0.381_830_050_505_118_9, 0.417_959_183_673_469_4];
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = WK[7] * fc;
    let mut gauss = WG[3] * fc;
    for i in 0..7 {
        let pair = f(c - h * XK[i]) + f(c + h * XK[i]);
        kronrod += WK[i] * pair;
        if i % 2 == 1 {
            gauss += WG[i / 2] * pair;
        }
    }
    let (kronrod, gauss) = (kronrod * h, gauss * h);
    if (kronrod - gauss).abs() <= tol || depth == 0 {
        kronrod
    } else {
        gauss_kronrod(f, a, c, tol / 2.0, depth - 1) + gauss_kronrod(f, c, b, tol / 2.0, depth - 1)
    }
}

/// Regularized incomplete beta by quadrature after `t = x v^(1/a)`, which
/// removes the endpoint singularity of the density.
fn inc_beta_oracle(x: f64, a: f64, b: f64) -> f64 {
    let lower = |x: f64, a: f64, b: f64| {
        let f = |v: f64| (1.0 - x * v.powf(1.0 / a)).powf(b - 1.0);
        let integral = gauss_kronrod(&f, 0.0, 1.0, 1e-15, 40);
        (a * x.ln() - a.ln() - statrs::function::beta::ln_beta(a, b)).exp() * integral
    };
    if x <= a / (a + b) {
        lower(x, a, b)
    } else {
        1.0 - lower(1.0 - x, b, a)
    }
}

fn special_functions() -> Outcome {
    let z = normal_quantile(0.975).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let q = rng.gen_range(0.001..0.999);
        let a = 10f64.powf(rng.gen_range(-0.3..1.5));
        let b = 10f64.powf(rng.gen_range(-0.3..1.5));
        let x = beta_quantile(q, a, b).unwrap();
        worst = worst.max((inc_beta_oracle(x, a, b) - q).abs());
    }
    outcome(
        (z - 1.959964).abs() <= 1e-6 && worst <= 1e-10,
        format!("normal_quantile(0.975) = {z:.9}; max |I_x(a,b) - q| over 50 draws {worst:.2e} (tol 1e-10)"),
    )
}

// ---------------------------------------------------------------------------
// 8. Kernel intensity on homogeneous patterns

fn square_window(side: f64) -> Window {
    Window::new(vec![CountyPolygon::rectangle("S", 0.0, 0.0, side, side).unwrap()]).unwrap()
}

fn intensity_estimation() -> Outcome {
    let side = 10.0;
    let n = 500;
    let window = square_window(side);
    let grid = Grid::for_window(&window, Some(side / 64.0)).unwrap();
    let mask = window.mask(&grid);
    let replicates = 400;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut sum = vec![0.0; grid.len()];
    let mut sum2 = vec![0.0; grid.len()];
    let mut worst_mass: f64 = 0.0;
    let mut bandwidth = 0.0;
    for _ in 0..replicates {
        let pts: Vec<Point> = (0..n).map(|_| Point::new(rng.gen_range(0.0..side), rng.gen_range(0.0..side))).collect();
        bandwidth = scott_bandwidth(&pts).unwrap();
        let field = kernel_intensity(&pts, &mask, &grid, bandwidth).unwrap();
        worst_mass = worst_mass.max((field.integral_over(&mask) - n as f64).abs() / n as f64);
        for (i, v) in field.values.iter().enumerate() {
            sum[i] += v;
            sum2[i] += v * v;
        }
    }
    let level = n as f64 / (side * side);
    let r = replicates as f64;
    let margin = 2.0 * bandwidth;
    let (mut interior, mut inside) = (0, 0);
    for idx in 0..grid.len() {
        let c = grid.center(idx);
        if !mask[idx] || c.x < margin || c.y < margin || c.x > side - margin || c.y > side - margin {
            continue;
        }
        interior += 1;
        let mean = sum[idx] / r;
        let se = ((sum2[idx] / r - mean * mean).max(0.0) / (r - 1.0)).sqrt();
        inside += usize::from((mean - level).abs() <= 3.0 * se);
    }
    let share = inside as f64 / interior as f64;
    outcome(
        worst_mass <= 0.02 && share >= 0.95,
        format!(
            "{replicates} patterns of {n} points, h = {bandwidth:.2}: worst |integral - N|/N {:.2}% (tol 2%); \
             {inside}/{interior} interior cells within 3 MC s.e. ({:.1}%, need 95%)",
            worst_mass * 100.0,
            share * 100.0
        ),
    )
}

// ---------------------------------------------------------------------------
// 9. Thinning behaviour

fn candidate(id: String, site: Point, tested: bool) -> CandidateWell {
    CandidateWell {
        well_id: id,
        site,
        coords: Coordinates::Planar(site),
        county_id: "S".into(),
        previously_tested: tested,
    }
}

fn constant_target(grid: Grid, mask: &[bool], value: f64) -> TargetField {
    TargetField {
        cluster_id: 0,
        field: IntensityField::constant(grid, mask, value),
        region_mask: mask.to_vec(),
        oversampled: vec![false; mask.len()],
    }
}

fn thinning_behaviour() -> Outcome {
    let side = 10.0;
    let window = square_window(side);
    let grid = Grid::for_window(&window, Some(side / 32.0)).unwrap();
    let mask = window.mask(&grid);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut candidates: Vec<CandidateWell> = (0..1000)
        .map(|i| candidate(format!("U{i:04}"), Point::new(rng.gen_range(0.0..side), rng.gen_range(0.0..side)), false))
        .collect();
    candidates.extend(
        (0..500).map(|i| {
            candidate(format!("T{i:04}"), Point::new(rng.gen_range(0.0..side), rng.gen_range(0.0..side)), true)
        }),
    );
    let cand_field = IntensityField::constant(grid, &mask, 10.0);
    let half = constant_target(grid, &mask, 5.0);
    let zero = constant_target(grid, &mask, 0.0);
    let band = 3.0 * (1000.0f64 * 0.25).sqrt();
    let (mut in_band, mut tested_hits, mut zero_nonempty) = (0, 0, 0);
    let (mut lo, mut hi) = (usize::MAX, 0);
    for seed in 0..100 {
        let plan = thin_candidates(&candidates, &half, &cand_field, seed).unwrap();
        let count = plan.len();
        lo = lo.min(count);
        hi = hi.max(count);
        in_band += usize::from((count as f64 - 500.0).abs() <= band);
        tested_hits += plan.selected.iter().filter(|s| candidates[s.index].previously_tested).count();
        zero_nonempty += usize::from(!thin_candidates(&candidates, &zero, &cand_field, seed).unwrap().is_empty());
    }
    outcome(
        in_band == 100 && tested_hits == 0 && zero_nonempty == 0,
        format!(
            "{in_band}/100 counts in 500 ± {band:.1} (range {lo}..{hi}); zero target non-empty in {zero_nonempty}; \
             tested wells selected {tested_hits}"
        ),
    )
}

// ---------------------------------------------------------------------------
// 10. Combined uniformity of existing and selected wells

fn combined_uniformity() -> Outcome {
    let side = 100.0;
    let window = square_window(side);
    let grid = Grid::for_window(&window, Some(side / 128.0)).unwrap();
    let mask = window.mask(&grid);
    let square = window.polygons().to_vec();
    let critical_cache: Mutex<HashMap<usize, f64>> = Mutex::new(HashMap::new());
    let critical = |df: usize| {
        *critical_cache
            .lock()
            .unwrap()
            .entry(df)
            .or_insert_with(|| ChiSquared::new(df as f64).unwrap().inverse_cdf(0.99))
    };
    let mut passes = 0;
    let mut flagged_share = 0.0;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let mut existing = Vec::new();
        while existing.len() < 600 {
            // Box-Muller around the origin corner, scale 40 km
            let (u1, u2): (f64, f64) = (rng.gen_range(f64::EPSILON..1.0), rng.gen());
            let r = 40.0 * (-2.0 * u1.ln()).sqrt();
            let p = Point::new(
                (r * (std::f64::consts::TAU * u2).cos()).abs(),
                (r * (std::f64::consts::TAU * u2).sin()).abs(),
            );
            if p.x < side && p.y < side {
                existing.push(p);
            }
        }
        let candidates: Vec<CandidateWell> = (0..20_000)
            .map(|i| {
                candidate(format!("C{i:05}"), Point::new(rng.gen_range(0.0..side), rng.gen_range(0.0..side)), false)
            })
            .collect();
        let untested: Vec<Point> = candidates.iter().map(|c| c.site).collect();
        let h = scott_bandwidth(&untested).unwrap();
        let cand_field = kernel_intensity(&untested, &mask, &grid, h).unwrap();
        let exist_field = kernel_intensity(&existing, &mask, &grid, h).unwrap();
        let region = ClusterRegion {
            cluster_id: 0,
            polygons: square.clone(),
            area_km2: side * side,
            required_n: 1500.0,
            existing_count: existing.len(),
        };
        let target = target_intensity(&region, &exist_field).unwrap();
        let plan = thin_candidates(&candidates, &target, &cand_field, seed).unwrap();
        flagged_share += target.oversampled_count() as f64 / grid.len() as f64;

        let quadrat =
            |p: Point| ((p.x / 25.0).floor().min(3.0) as usize) + 4 * ((p.y / 25.0).floor().min(3.0) as usize);
        let mut observed = [0.0f64; 16];
        let mut free_cells = [0.0f64; 16];
        for idx in 0..grid.len() {
            if mask[idx] && !target.oversampled[idx] {
                free_cells[quadrat(grid.center(idx))] += 1.0;
            }
        }
        let combined = existing.iter().copied().chain(plan.selected.iter().map(|s| candidates[s.index].site));
        for p in combined {
            if let Some(idx) = grid.locate(p) {
                if !target.oversampled[idx] {
                    observed[quadrat(p)] += 1.0;
                }
            }
        }
        let total: f64 = observed.iter().sum();
        let free: f64 = free_cells.iter().sum();
        let mut stat = 0.0;
        let mut used = 0;
        for q in 0..16 {
            if free_cells[q] > 0.0 {
                let expected = total * free_cells[q] / free;
                stat += (observed[q] - expected).powi(2) / expected;
                used += 1;
            }
        }
        passes += usize::from(stat <= critical(used - 1));
    }
    outcome(
        passes >= 90,
        format!(
            "{passes}/100 runs pass the 4x4 quadrat test at 1% (need 90); mean flagged share {:.1}% of cells",
            flagged_share
        ),
    )
}

// ---------------------------------------------------------------------------
// 11. Determinism of the command-line pipeline

fn collect_files(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            collect_files(root, &path, out);
        } else if path.file_name().unwrap() != "manifest.json" {
            out.insert(path.strip_prefix(root).unwrap().display().to_string(), std::fs::read(&path).unwrap());
        }
    }
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let mut snapshots = Vec::new();
    for name in ["a", "b"] {
        let run = tmp.path().join(name);
        let run_s = run.to_str().unwrap();
        let bin = env!("CARGO_BIN_EXE_wellplan");
        let sim = Command::new(bin).args(["--run-dir", run_s, "--seed", "11", "simulate"]).output().unwrap();
        assert_eq!(sim.status.code(), Some(0));
        let cfg = run.join("simulate/run_config.json");
        let out =
            Command::new(bin).args(["--config", cfg.to_str().unwrap(), "--run-dir", run_s, "run"]).output().unwrap();
        assert!(matches!(out.status.code(), Some(0 | 1)), "{}", String::from_utf8_lossy(&out.stderr));
        let mut files = BTreeMap::new();
        collect_files(&run, &run, &mut files);
        snapshots.push(files);
    }
    let (a, b) = (&snapshots[0], &snapshots[1]);
    let differing: Vec<&String> = a.keys().filter(|k| b.get(*k) != a.get(*k)).collect();
    let same_names = a.keys().eq(b.keys());
    outcome(
        same_names && differing.is_empty() && a.len() >= 20,
        format!("{} artifacts compared, {} differ {:?}", a.len(), differing.len(), differing),
    )
}

// ---------------------------------------------------------------------------

fn main() {
    type Criterion = (usize, &'static str, fn() -> Outcome);
    // recovery runs before the descent check so its traces are included
    let criteria: [Criterion; 11] = [
        (1, "reference sample-size table", reference_table),
        (2, "Wilson closed form spot check", wilson_spot_check),
        (3, "chain graphs match exhaustive search", chain_equivalence),
        (4, "proximal operator correctness", prox_correctness),
        (6, "cluster recovery on synthetic maps", cluster_recovery),
        (5, "descent and gradient", descent_and_gradient),
        (7, "special functions", special_functions),
        (8, "kernel intensity estimation", intensity_estimation),
        (9, "thinning behaviour", thinning_behaviour),
        (10, "combined uniformity", combined_uniformity),
        (11, "pipeline determinism", determinism),
    ];
    let only: Option<usize> = std::env::args().skip(1).find_map(|a| a.parse().ok());
    let mut results = BTreeMap::new();
    for (id, name, check) in criteria {
        if only.is_some_and(|o| o != id) {
            continue;
        }
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            outcome(false, format!("panicked: {}", msg.unwrap_or_default()))
        });
        results.insert(id, (name, result, start.elapsed().as_secs_f64()));
    }
    let mut failed = 0;
    for (id, (name, r, secs)) in &results {
        failed += usize::from(!r.pass);
        println!("[{}] {id:>2}. {name}: {} [{secs:.1}s]", if r.pass { "PASS" } else { "FAIL" }, r.detail);
    }
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
