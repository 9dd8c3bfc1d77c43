//! Binomial confidence intervals and per-cluster sample sizes.
//!
//! Two methods are provided. The Wilson score interval has a closed-form
//! sample size. The modified Jeffreys interval has none: its sample size is
//! the smallest `n` whose expected interval length, averaged over the
//! binomial distribution of the success count, drops to `2 * delta`.

mod special;

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use special::{beta_quantile, inc_beta, ln_beta, ln_gamma, normal_quantile};

/// Binomial terms below this fraction of the modal term are skipped in the
/// expected-length sum.
const NEGLIGIBLE_LOG_WEIGHT: f64 = -50.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SizingSpec {
    pub p: f64,
    pub delta: f64,
    pub confidence: f64,
}

impl SizingSpec {
    pub fn new(p: f64, delta: f64, confidence: f64) -> Result<Self> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::parameter(format!("p = {p} must lie in (0, 1)")));
        }
        if !(delta > 0.0 && delta <= 0.5) {
            return Err(Error::parameter(format!("delta = {delta} must lie in (0, 0.5]")));
        }
        if !(confidence > 0.0 && confidence < 1.0) {
            return Err(Error::parameter(format!("confidence = {confidence} must lie in (0, 1)")));
        }
        Ok(SizingSpec { p, delta, confidence })
    }

    /// Half-width set to a fraction of `p`.
    pub fn relative(p: f64, delta_fraction: f64, confidence: f64) -> Result<Self> {
        SizingSpec::new(p, delta_fraction * p, confidence)
    }

    pub fn alpha(&self) -> f64 {
        1.0 - self.confidence
    }

    /// `z_{1 - alpha/2}`.
    pub fn z(&self) -> f64 {
        two_sided_z(self.confidence)
    }
}

fn two_sided_z(confidence: f64) -> f64 {
    normal_quantile(1.0 - (1.0 - confidence) / 2.0).expect("confidence validated to lie in (0, 1)")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
}

impl Interval {
    pub fn length(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lower <= v && v <= self.upper
    }
}

fn check_counts(x: u64, n: u64) -> Result<()> {
    if n == 0 {
        return Err(Error::parameter("n must be at least 1"));
    }
    if x > n {
        return Err(Error::parameter(format!("x = {x} exceeds n = {n}")));
    }
    Ok(())
}

fn check_confidence(confidence: f64) -> Result<()> {
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(Error::parameter(format!("confidence = {confidence} must lie in (0, 1)")));
    }
    Ok(())
}

/// Wilson score interval, clipped to `[0, 1]`.
pub fn wilson_ci(x: u64, n: u64, confidence: f64) -> Result<Interval> {
    check_counts(x, n)?;
    check_confidence(confidence)?;
    let z = two_sided_z(confidence);
    let z2 = z * z;
    let (xf, nf) = (x as f64, n as f64);
    let centre = 2.0 * xf + z2;
    let spread = z * (z2 + 4.0 * xf * (1.0 - xf / nf)).sqrt();
    let denom = 2.0 * (nf + z2);
    Ok(Interval {
        lower: ((centre - spread) / denom).clamp(0.0, 1.0),
        upper: ((centre + spread) / denom).clamp(0.0, 1.0),
    })
}

/// Closed-form Wilson sample size before rounding.
pub fn wilson_sample_size_exact(p: f64, delta: f64, z: f64) -> f64 {
    let z2 = z * z;
    let d2 = 4.0 * delta * delta;
    let a = d2 - 2.0 * p * (1.0 - p);
    (-z2 * a + z2 * (a * a - d2 * (d2 - 1.0)).sqrt()) / d2
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WilsonSize {
    pub n: u64,
    pub exact: f64,
    /// Set when delta is so wide that no sample is required.
    pub degenerate: bool,
}

/// Wilson sample size rounded to the nearest integer, at least 1 unless the
/// precision target is met with no data at all.
pub fn wilson_sample_size(spec: &SizingSpec) -> WilsonSize {
    let z = spec.z();
    let exact = wilson_sample_size_exact(spec.p, spec.delta, z);
    if exact <= 1e-9 * z * z {
        return WilsonSize { n: 0, exact, degenerate: true };
    }
    WilsonSize { n: (exact.round() as u64).max(1), exact, degenerate: false }
}

/// Modified Jeffreys interval.
///
/// Interior counts use the equal-tailed Beta(x + 1/2, n - x + 1/2) credible
/// interval; `x = 0` and `x = n` use the exact one-sided bounds and the
/// endpoints next to them are pinned at 0 and 1.
pub fn jeffreys_ci(x: u64, n: u64, confidence: f64) -> Result<Interval> {
    check_counts(x, n)?;
    check_confidence(confidence)?;
    let half_alpha = (1.0 - confidence) / 2.0;
    if x == 0 {
        return Ok(Interval { lower: 0.0, upper: 1.0 - half_alpha.powf(1.0 / n as f64) });
    }
    if x == n {
        return Ok(Interval { lower: half_alpha.powf(1.0 / n as f64), upper: 1.0 });
    }
    let a = x as f64 + 0.5;
    let b = (n - x) as f64 + 0.5;
    let lower = if x == 1 { 0.0 } else { beta_quantile(half_alpha, a, b)? };
    let upper = if x == n - 1 { 1.0 } else { beta_quantile(1.0 - half_alpha, a, b)? };
    Ok(Interval { lower, upper })
}

fn ln_binom_pmf(x: u64, n: u64, ln_p: f64, ln_q: f64, ln_n_fact: f64) -> f64 {
    let (xf, nf) = (x as f64, n as f64);
    ln_n_fact - ln_gamma(xf + 1.0) - ln_gamma(nf - xf + 1.0) + xf * ln_p + (nf - xf) * ln_q
}

/// Expected Jeffreys interval length over `X ~ Binomial(n, p)`.
///
/// The sum runs over `X = 1..=n`; `include_boundary_terms` adds `X = 0`.
/// Terms whose binomial weight is below `e^-50` of the modal weight are
/// skipped.
pub fn expected_length(n: u64, spec: &SizingSpec, include_boundary_terms: bool) -> Result<f64> {
    if n < 2 {
        return Err(Error::parameter("expected length needs n >= 2"));
    }
    let (ln_p, ln_q) = (spec.p.ln(), (-spec.p).ln_1p());
    let ln_n_fact = ln_gamma(n as f64 + 1.0);
    let mode = (((n + 1) as f64) * spec.p).floor().min(n as f64) as u64;
    let ln_mode = ln_binom_pmf(mode, n, ln_p, ln_q, ln_n_fact);
    let start = u64::from(!include_boundary_terms);

    let mut total = 0.0;
    let mut add = |x: u64| -> Result<bool> {
        let lw = ln_binom_pmf(x, n, ln_p, ln_q, ln_n_fact);
        if lw - ln_mode < NEGLIGIBLE_LOG_WEIGHT {
            return Ok(false);
        }
        total += jeffreys_ci(x, n, spec.confidence)?.length() * lw.exp();
        Ok(true)
    };
    // walk outwards from the mode; weights decrease monotonically both ways
    let mut x = mode;
    loop {
        if x < start || !add(x)? {
            break;
        }
        if x == 0 {
            break;
        }
        x -= 1;
    }
    for x in (mode + 1)..=n {
        if !add(x)? {
            break;
        }
    }
    Ok(total)
}

/// Smallest `n >= 2` whose expected Jeffreys length is at most `2 * delta`.
pub fn jeffreys_sample_size(spec: &SizingSpec, include_boundary_terms: bool) -> Result<u64> {
    let target = 2.0 * spec.delta;
    let meets = |n: u64| -> Result<bool> { Ok(expected_length(n, spec, include_boundary_terms)? <= target) };
    let mut lo = 1u64;
    let mut hi = 2u64;
    while !meets(hi)? {
        lo = hi;
        hi = hi.checked_mul(2).ok_or_else(|| Error::parameter("Jeffreys sample size overflow"))?;
    }
    // invariant: meets(hi), and lo == 1 or !meets(lo)
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if meets(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SizeResult {
    pub spec: SizingSpec,
    pub n_wilson: u64,
    pub n_jeffreys: u64,
    pub wilson_exact: f64,
    pub wilson_degenerate: bool,
}

pub fn size(spec: &SizingSpec, include_boundary_terms: bool) -> Result<SizeResult> {
    let w = wilson_sample_size(spec);
    Ok(SizeResult {
        spec: *spec,
        n_wilson: w.n,
        n_jeffreys: jeffreys_sample_size(spec, include_boundary_terms)?,
        wilson_exact: w.exact,
        wilson_degenerate: w.degenerate,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizingRow {
    pub cluster_id: String,
    pub p: f64,
    pub delta: f64,
    pub confidence: f64,
    pub n_wilson: u64,
    pub n_jeffreys: u64,
}

#[derive(Debug, Deserialize)]
struct SizingRequest {
    cluster_id: String,
    p: f64,
    delta: f64,
    confidence: f64,
}

pub fn size_rows(requests: &[(String, SizingSpec)], include_boundary_terms: bool) -> Result<Vec<SizingRow>> {
    requests
        .iter()
        .map(|(id, spec)| {
            let r = size(spec, include_boundary_terms)?;
            Ok(SizingRow {
                cluster_id: id.clone(),
                p: spec.p,
                delta: spec.delta,
                confidence: spec.confidence,
                n_wilson: r.n_wilson,
                n_jeffreys: r.n_jeffreys,
            })
        })
        .collect()
}

pub fn write_sizing_csv<W: Write>(rows: &[SizingRow], out: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    for row in rows {
        wtr.serialize(row)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_sizing_csv<R: Read>(input: R) -> Result<Vec<SizingRow>> {
    let mut rdr = csv::Reader::from_reader(input);
    rdr.deserialize().map(|r| r.map_err(Error::from)).collect()
}

/// Batch mode: reads `cluster_id,p,delta,confidence` and writes the same
/// columns followed by `n_wilson,n_jeffreys`.
pub fn size_batch<R: Read, W: Write>(input: R, output: W, include_boundary_terms: bool) -> Result<Vec<SizingRow>> {
    let mut rdr = csv::Reader::from_reader(input);
    let mut requests = Vec::new();
    for req in rdr.deserialize::<SizingRequest>() {
        let req = req?;
        requests.push((req.cluster_id, SizingSpec::new(req.p, req.delta, req.confidence)?));
    }
    let rows = size_rows(&requests, include_boundary_terms)?;
    write_sizing_csv(&rows, output)?;
    Ok(rows)
}
