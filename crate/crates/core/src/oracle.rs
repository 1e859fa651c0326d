//! Monte Carlo oracle: sample random games and count their internal
//! equilibria directly.
//!
//! For two strategies an equilibrium is a positive root of a univariate
//! polynomial, counted with a Sturm chain. For two players the equilibria
//! solve a linear system, and there is at most one.
//!
//! Sample `i` draws from the ChaCha stream `(seed, i)`; samples are processed
//! in fixed-size chunks whose integer tallies are merged in chunk order, so a
//! report depends only on `(n, d, samples, seed, sigma)` and never on the
//! thread count.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::{Signed, Zero};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{current_threads, map_range, Execution};
use crate::game_model::{stream_rng, GameSpec, SystemSampler};

/// Samples per parallel work item.
const CHUNK: usize = 2048;

/// Leading coefficients below this (relative to the largest) are dropped.
const DEGREE_DROP: f64 = 1e-12;

/// Sturm remainders whose size or leading coefficient falls below this
/// fraction of their dividend make the double-precision chain untrustworthy.
const CHAIN_SUSPECT: f64 = 1e-9;

/// Condition number beyond which a two-player system is redrawn.
const MAX_CONDITION: f64 = 1e12;

/// Distinct real roots of a polynomial in `(0, inf)`, split at `y = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RootCount {
    pub total: usize,
    /// Roots in `(0, 1)`; the rest lie in `(1, inf)`.
    pub below_one: usize,
    /// The double-precision chain was rejected and the count is exact.
    pub exact: bool,
}

/// Number of distinct real roots in `(0, inf)` of `sum_k coeffs[k] y^k`.
pub fn count_positive_roots(coeffs: &[f64]) -> Result<usize> {
    Ok(sturm_count(coeffs)?.total)
}

/// Positive-root count with its split at `y = 1`.
pub fn sturm_count(coeffs: &[f64]) -> Result<RootCount> {
    Ok(SturmChain::new(coeffs)?.count())
}

fn validate(coeffs: &[f64]) -> Result<()> {
    if coeffs.iter().any(|c| !c.is_finite()) {
        return Err(Error::invalid("polynomial coefficients must be finite"));
    }
    if coeffs.iter().all(|&c| c == 0.0) {
        return Err(Error::invalid("the zero polynomial has no isolated roots"));
    }
    Ok(())
}

/// Scales by the power of two at the largest magnitude (exact, so repeated
/// roots survive), drops negligible leading terms and divides out powers of
/// `y` (roots at zero are not positive).
fn normalize(coeffs: &[f64]) -> Vec<f64> {
    let max = coeffs.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    let scale = 2f64.powi(max.log2().floor() as i32);
    let mut p: Vec<f64> = coeffs.iter().map(|c| c / scale).collect();
    while p.len() > 1 && p.last().is_some_and(|c| c.abs() < DEGREE_DROP) {
        p.pop();
    }
    let zeros = p.iter().take_while(|&&c| c == 0.0).count();
    p.drain(..zeros);
    p
}

fn sign(x: f64) -> i8 {
    if x > 0.0 {
        1
    } else if x < 0.0 {
        -1
    } else {
        0
    }
}

fn variations(signs: impl Iterator<Item = i8>) -> usize {
    let mut last = 0i8;
    let mut count = 0;
    for s in signs.filter(|&s| s != 0) {
        if last != 0 && s != last {
            count += 1;
        }
        last = s;
    }
    count
}

/// Sign of `q(y)` for `y` in `[0, inf]`; uses the reversed polynomial at
/// `1/y` past one so nothing overflows. At `y = 0` this is the sign at `0+`.
fn sign_at(q: &[f64], y: f64) -> i8 {
    if y == 0.0 {
        return q.iter().map(|&c| sign(c)).find(|&s| s != 0).unwrap_or(0);
    }
    if y.is_infinite() {
        return q.iter().rev().map(|&c| sign(c)).find(|&s| s != 0).unwrap_or(0);
    }
    if y <= 1.0 {
        sign(q.iter().rev().fold(0.0, |acc, &c| acc * y + c))
    } else {
        let z = 1.0 / y;
        sign(q.iter().fold(0.0, |acc, &c| acc * z + c))
    }
}

/// A Sturm chain stored as normalised double-precision polynomials (exact
/// chains are converted after construction; only their signs matter).
#[derive(Debug, Clone)]
pub struct SturmChain {
    polys: Vec<Vec<f64>>,
    exact: bool,
}

impl SturmChain {
    pub fn new(coeffs: &[f64]) -> Result<Self> {
        validate(coeffs)?;
        let p = normalize(coeffs);
        if p.len() <= 1 {
            return Ok(SturmChain {
                polys: vec![p],
                exact: false,
            });
        }
        if let Some(chain) = float_chain(&p) {
            let candidate = SturmChain {
                polys: chain,
                exact: false,
            };
            if candidate.consistent(&p) {
                return Ok(candidate);
            }
        }
        Ok(SturmChain {
            polys: exact_chain(&p),
            exact: true,
        })
    }

    pub fn is_exact(&self) -> bool {
        self.exact
    }

    /// The (normalised) polynomial the chain was built from.
    pub fn poly(&self) -> &[f64] {
        &self.polys[0]
    }

    /// Sign variations of the chain at `y` in `[0, inf]`.
    pub fn variations_at(&self, y: f64) -> usize {
        variations(self.polys.iter().map(|q| sign_at(q, y)))
    }

    pub fn count(&self) -> RootCount {
        let v0 = self.variations_at(0.0);
        let v1 = self.variations_at(1.0);
        let vinf = self.variations_at(f64::INFINITY);
        RootCount {
            total: v0.saturating_sub(vinf),
            below_one: v0.saturating_sub(v1),
            exact: self.exact,
        }
    }

    /// Parity and Descartes-bound checks of a double-precision count.
    fn consistent(&self, p: &[f64]) -> bool {
        let v0 = self.variations_at(0.0);
        let v1 = self.variations_at(1.0);
        let vinf = self.variations_at(f64::INFINITY);
        if vinf > v1 || v1 > v0 {
            return false;
        }
        let count = v0 - vinf;
        let descartes = variations(p.iter().map(|&c| sign(c)));
        if count > descartes || !(descartes - count).is_multiple_of(2) {
            return false;
        }
        let s0 = sign_at(p, 0.0);
        let sinf = sign_at(p, f64::INFINITY);
        (count % 2 == 1) == (s0 != sinf)
    }

    /// Positive roots, isolated with the chain and refined by bisection.
    /// Returns fewer roots than [`Self::count`] only for clusters that cannot
    /// be separated in double precision.
    pub fn isolate(&self) -> Vec<f64> {
        // Bisect in u = y / (1 + y) so the whole half-line is a unit interval.
        let y_of = |u: f64| if u >= 1.0 { f64::INFINITY } else { u / (1.0 - u) };
        let mut roots = Vec::new();
        let mut stack = vec![(
            0.0f64,
            1.0f64,
            self.variations_at(0.0),
            self.variations_at(f64::INFINITY),
        )];
        while let Some((a, b, va, vb)) = stack.pop() {
            let count = va.saturating_sub(vb);
            if count == 0 {
                continue;
            }
            if count == 1 {
                roots.push(self.refine(a, b, y_of));
                continue;
            }
            if b - a < 1e-15 {
                continue;
            }
            let mid = 0.5 * (a + b);
            let vm = self.variations_at(y_of(mid));
            stack.push((mid, b, vm, vb));
            stack.push((a, mid, va, vm));
        }
        roots.sort_by(f64::total_cmp);
        roots
    }

    fn refine(&self, mut a: f64, mut b: f64, y_of: impl Fn(f64) -> f64) -> f64 {
        let p = self.poly();
        let sa = sign_at(p, y_of(a));
        for _ in 0..200 {
            let mid = 0.5 * (a + b);
            if mid <= a || mid >= b {
                break;
            }
            let s = sign_at(p, y_of(mid));
            if s == 0 {
                return y_of(mid);
            }
            if s == sa {
                a = mid;
            } else {
                b = mid;
            }
        }
        y_of(0.5 * (a + b))
    }
}

/// Double-precision chain `p, p', -rem(...)`, renormalised at every step.
/// `None` when a remainder is too close to vanishing to trust its signs.
fn float_chain(p: &[f64]) -> Option<Vec<Vec<f64>>> {
    let deriv: Vec<f64> = p.iter().enumerate().skip(1).map(|(k, &c)| k as f64 * c).collect();
    let mut chain = vec![p.to_vec(), scale_to_unit(deriv)];
    loop {
        let a = &chain[chain.len() - 2];
        let b = &chain[chain.len() - 1];
        if b.len() <= 1 {
            break;
        }
        let rem = poly_rem(a, b);
        let size = rem.iter().fold(0.0f64, |m, c| m.max(c.abs()));
        if size == 0.0 {
            break;
        }
        let mut r: Vec<f64> = rem.iter().map(|c| -c / size).collect();
        if size < CHAIN_SUSPECT {
            return None;
        }
        if r.last().is_some_and(|c| c.abs() < CHAIN_SUSPECT) {
            return None;
        }
        while r.len() > 1 && r.last() == Some(&0.0) {
            r.pop();
        }
        chain.push(r);
    }
    Some(chain)
}

fn scale_to_unit(p: Vec<f64>) -> Vec<f64> {
    let max = p.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    if max == 0.0 {
        return p;
    }
    p.into_iter().map(|c| c / max).collect()
}

/// Remainder of `a / b` (`b` with non-zero leading coefficient).
fn poly_rem(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut r = a.to_vec();
    let db = b.len() - 1;
    let lead = b[db];
    while r.len() > db {
        let top = r.len() - 1;
        let q = r[top] / lead;
        let shift = top - db;
        for (j, &bj) in b.iter().enumerate() {
            r[shift + j] -= q * bj;
        }
        r.pop();
    }
    r
}

/// Exact Sturm chain over the integers. The input doubles are scaled by a
/// common power of two so every coefficient is an integer; pseudo-remainders
/// use the positive multiplier `|lc|` so signs are preserved.
fn exact_chain(p: &[f64]) -> Vec<Vec<f64>> {
    let ints = to_integers(p);
    let deriv: Vec<BigInt> = ints
        .iter()
        .enumerate()
        .skip(1)
        .map(|(k, c)| c * BigInt::from(k))
        .collect();
    let mut chain = vec![primitive(ints), primitive(deriv)];
    loop {
        let a = &chain[chain.len() - 2];
        let b = &chain[chain.len() - 1];
        if b.len() <= 1 {
            break;
        }
        let r = pseudo_rem(a, b);
        if r.iter().all(|c| c.is_zero()) {
            break;
        }
        let neg: Vec<BigInt> = r.into_iter().map(|c| -c).collect();
        chain.push(primitive(neg));
    }
    chain.iter().map(|q| big_poly_to_unit_f64(q)).collect()
}

fn to_integers(p: &[f64]) -> Vec<BigInt> {
    // every finite double is m * 2^e with |m| < 2^53
    let decomposed: Vec<(i64, i32)> = p.iter().map(|&c| decompose(c)).collect();
    let min_exp = decomposed
        .iter()
        .filter(|(m, _)| *m != 0)
        .map(|&(_, e)| e)
        .min()
        .unwrap_or(0);
    decomposed
        .into_iter()
        .map(|(m, e)| {
            if m == 0 {
                BigInt::zero()
            } else {
                BigInt::from(m) << (e - min_exp) as usize
            }
        })
        .collect()
}

fn decompose(x: f64) -> (i64, i32) {
    if x == 0.0 {
        return (0, 0);
    }
    let bits = x.to_bits();
    let negative = bits >> 63 != 0;
    let exp_bits = ((bits >> 52) & 0x7ff) as i32;
    let frac = (bits & ((1u64 << 52) - 1)) as i64;
    let (mant, exp) = if exp_bits == 0 {
        (frac, -1074)
    } else {
        (frac | (1i64 << 52), exp_bits - 1075)
    };
    (if negative { -mant } else { mant }, exp)
}

fn primitive(mut p: Vec<BigInt>) -> Vec<BigInt> {
    while p.len() > 1 && p.last().is_some_and(|c| c.is_zero()) {
        p.pop();
    }
    let g = p.iter().fold(BigInt::zero(), |g, c| g.gcd(c));
    if g.is_zero() || g == BigInt::from(1) {
        return p;
    }
    p.into_iter().map(|c| c / &g).collect()
}

/// `|lc(b)|^s * a mod b` for the number of elimination steps `s`.
fn pseudo_rem(a: &[BigInt], b: &[BigInt]) -> Vec<BigInt> {
    let mut r = a.to_vec();
    let db = b.len() - 1;
    let lead = &b[db];
    let lead_abs = lead.abs();
    let lead_sign = if lead.is_negative() {
        BigInt::from(-1)
    } else {
        BigInt::from(1)
    };
    while r.len() > db && !r.is_empty() {
        let top = r.len() - 1;
        let rt = r[top].clone();
        let shift = top - db;
        for c in r.iter_mut() {
            *c *= &lead_abs;
        }
        let factor = &rt * &lead_sign;
        for (j, bj) in b.iter().enumerate() {
            r[shift + j] -= &factor * bj;
        }
        debug_assert!(r[top].is_zero());
        r.pop();
    }
    r
}

fn big_poly_to_unit_f64(p: &[BigInt]) -> Vec<f64> {
    let bits = p.iter().map(|c| c.bits()).max().unwrap_or(0);
    let shift = bits.saturating_sub(60);
    p.iter()
        .map(|c| {
            let s: BigInt = c >> shift as usize;
            // keep a non-zero marker for tiny non-zero values
            let v = num_traits::ToPrimitive::to_f64(&s).unwrap_or(0.0);
            if v == 0.0 && !c.is_zero() {
                if c.is_negative() {
                    -f64::MIN_POSITIVE
                } else {
                    f64::MIN_POSITIVE
                }
            } else {
                v
            }
        })
        .collect()
}

/// Second-opinion counter: eigenvalues of the companion matrix that are real
/// (`|im| <= 1e-7 max(1, |z|)`) and positive (`re > 1e-9`).
pub fn count_positive_roots_eigen(coeffs: &[f64]) -> Result<usize> {
    validate(coeffs)?;
    let p = normalize(coeffs);
    let deg = p.len() - 1;
    if deg == 0 {
        return Ok(0);
    }
    let mut comp = DMatrix::<f64>::zeros(deg, deg);
    for i in 1..deg {
        comp[(i, i - 1)] = 1.0;
    }
    for i in 0..deg {
        comp[(i, deg - 1)] = -p[i] / p[deg];
    }
    Ok(comp
        .complex_eigenvalues()
        .iter()
        .filter(|z| z.im.abs() <= 1e-7 * z.norm().max(1.0) && z.re > 1e-9)
        .count())
}

/// Stability of the internal equilibrium `x = y / (1 + y)` of the two-strategy
/// replicator dynamics at a positive root `y` of the fitness difference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stability {
    Stable,
    Unstable,
    Marginal,
}

/// Classifies a positive root of the fitness-difference polynomial: the
/// fitness difference is `(1-x)^(d-1) P(y)` and `dy/dx > 0`, so the
/// equilibrium is stable exactly when `P'(y) < 0`.
pub fn stability_classify(coeffs: &[f64], root: f64) -> Result<Stability> {
    validate(coeffs)?;
    if !(root > 0.0 && root.is_finite()) {
        return Err(Error::invalid(format!("root must be positive and finite, got {root}")));
    }
    let max = coeffs.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    let p: Vec<f64> = coeffs.iter().map(|c| c / max).collect();
    // Past y = 1 everything is divided by y^deg (value) or y^(deg-1)
    // (derivative) to stay finite; the scales are divided identically.
    let (value, value_scale, deriv, deriv_scale) = if root <= 1.0 {
        let mut v = 0.0;
        let mut vs = 0.0;
        let mut dv = 0.0;
        let mut ds = 0.0;
        for (k, &c) in p.iter().enumerate().rev() {
            v = v * root + c;
            vs = vs * root + c.abs();
            if k > 0 {
                dv = dv * root + k as f64 * c;
                ds = ds * root + k as f64 * c.abs();
            }
        }
        (v, vs, dv, ds)
    } else {
        let z = 1.0 / root;
        let mut v = 0.0;
        let mut vs = 0.0;
        let mut dv = 0.0;
        let mut ds = 0.0;
        for (k, &c) in p.iter().enumerate() {
            v = v * z + c;
            vs = vs * z + c.abs();
            if k > 0 {
                dv = dv * z + k as f64 * c;
                ds = ds * z + k as f64 * c.abs();
            }
        }
        (v, vs, dv, ds)
    };
    if value.abs() > 1e-8 * value_scale.max(f64::MIN_POSITIVE) {
        return Err(Error::invalid(format!(
            "{root} is not a root: residual {value:e} against scale {value_scale:e}"
        )));
    }
    if deriv.abs() < 1e-10 * deriv_scale.max(f64::MIN_POSITIVE) {
        return Ok(Stability::Marginal);
    }
    Ok(if deriv < 0.0 {
        Stability::Stable
    } else {
        Stability::Unstable
    })
}

/// Monte Carlo run settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McConfig {
    pub samples: u64,
    pub seed: u64,
    pub sigma: f64,
    pub exec: Execution,
}

impl McConfig {
    pub fn new(samples: u64, seed: u64) -> Self {
        McConfig {
            samples,
            seed,
            sigma: 1.0,
            exec: Execution::default(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.samples == 0 {
            return Err(Error::invalid("need at least one sample"));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::invalid(format!("sigma must be positive, got {}", self.sigma)));
        }
        Ok(())
    }
}

/// Run-time diagnostics; not part of the statistical result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McDiagnostics {
    /// Samples whose root count needed the exact integer Sturm chain.
    pub exact_fallbacks: u64,
    /// Two-player systems redrawn for being near-singular.
    pub resampled: u64,
    /// Roots that could not be isolated for stability classification.
    pub unresolved_roots: u64,
    pub wall_time_s: f64,
    pub threads: usize,
}

/// Aggregated Monte Carlo result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McReport {
    pub n: usize,
    pub d: usize,
    pub samples: u64,
    pub seed: u64,
    pub sigma: f64,
    pub mean_count: f64,
    pub std_err: f64,
    /// `histogram[i]` = number of games with exactly `i` internal equilibria.
    pub histogram: Vec<u64>,
    /// Fraction of stable equilibria among stable + unstable (n = 2).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stable_fraction: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stable_std_err: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stability_counts: Option<StabilityCounts>,
    /// Mean number of roots in `(0, 1)` and in `(1, inf)` (n = 2).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub split_counts: Option<(f64, f64)>,
    /// Standard errors of the two split means and of their paired difference.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub split_std_err: Option<(f64, f64, f64)>,
    pub diagnostics: McDiagnostics,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StabilityCounts {
    pub stable: u64,
    pub unstable: u64,
    pub marginal: u64,
}

impl McReport {
    /// Empirical probability of exactly `i` equilibria.
    pub fn p(&self, i: usize) -> f64 {
        self.histogram.get(i).copied().unwrap_or(0) as f64 / self.samples as f64
    }
}

/// Integer tallies of one chunk.
#[derive(Debug, Clone, Default)]
struct Tally {
    histogram: Vec<u64>,
    sum_lo: u64,
    sum_hi: u64,
    sum_lo_sq: u64,
    sum_hi_sq: u64,
    sum_diff_sq: u64,
    stability: StabilityCounts,
    exact_fallbacks: u64,
    resampled: u64,
    unresolved: u64,
}

impl Tally {
    fn new(support: usize) -> Self {
        Tally {
            histogram: vec![0; support],
            ..Default::default()
        }
    }

    fn merge(&mut self, o: &Tally) {
        for (a, b) in self.histogram.iter_mut().zip(&o.histogram) {
            *a += b;
        }
        self.sum_lo += o.sum_lo;
        self.sum_hi += o.sum_hi;
        self.sum_lo_sq += o.sum_lo_sq;
        self.sum_hi_sq += o.sum_hi_sq;
        self.sum_diff_sq += o.sum_diff_sq;
        self.stability.stable += o.stability.stable;
        self.stability.unstable += o.stability.unstable;
        self.stability.marginal += o.stability.marginal;
        self.exact_fallbacks += o.exact_fallbacks;
        self.resampled += o.resampled;
        self.unresolved += o.unresolved;
    }
}

fn mean_and_se(sum: f64, sum_sq: f64, n: f64) -> (f64, f64) {
    let mean = sum / n;
    if n < 2.0 {
        return (mean, 0.0);
    }
    let var = ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0);
    (mean, (var / n).sqrt())
}

fn histogram_stats(h: &[u64], n: f64) -> (f64, f64) {
    let sum: f64 = h.iter().enumerate().map(|(i, &c)| i as f64 * c as f64).sum();
    let sum_sq: f64 = h.iter().enumerate().map(|(i, &c)| (i * i) as f64 * c as f64).sum();
    mean_and_se(sum, sum_sq, n)
}

fn run_chunks<F>(cfg: &McConfig, support: usize, per_sample: F) -> Tally
where
    F: Fn(u64, &mut Tally) + Sync + Send,
{
    let chunks = (cfg.samples as usize).div_ceil(CHUNK);
    let partials = map_range(cfg.exec, chunks, |c| {
        let mut t = Tally::new(support);
        let start = (c * CHUNK) as u64;
        let end = (start + CHUNK as u64).min(cfg.samples);
        for i in start..end {
            per_sample(i, &mut t);
        }
        t
    });
    let mut total = Tally::new(support);
    for p in &partials {
        total.merge(p);
    }
    total
}

/// Outcome of one two-strategy game.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleOutcome {
    pub count: RootCount,
    pub stability: StabilityCounts,
    pub unresolved: u64,
}

/// Counts and classifies the equilibria of one sampled polynomial.
pub fn analyze_two_strategy(coeffs: &[f64]) -> Result<SampleOutcome> {
    let chain = SturmChain::new(coeffs)?;
    let count = chain.count();
    let mut stability = StabilityCounts::default();
    let roots = chain.isolate();
    for &r in &roots {
        match stability_classify(chain.poly(), r) {
            Ok(Stability::Stable) => stability.stable += 1,
            Ok(Stability::Unstable) => stability.unstable += 1,
            Ok(Stability::Marginal) | Err(_) => stability.marginal += 1,
        }
    }
    Ok(SampleOutcome {
        count,
        stability,
        unresolved: count.total.saturating_sub(roots.len()) as u64,
    })
}

/// Monte Carlo estimate of `E(2, d)` with unit-variance payoffs.
pub fn mc_e2d(d: usize, samples: u64, seed: u64) -> Result<McReport> {
    mc_e2d_with(d, &McConfig::new(samples, seed))
}

pub fn mc_e2d_with(d: usize, cfg: &McConfig) -> Result<McReport> {
    cfg.validate()?;
    let started = Instant::now();
    let spec = GameSpec::new(2, d)?;
    let sampler = SystemSampler::new(spec, cfg.sigma)?;
    let support = d; // 0..=d-1 roots
    let tally = run_chunks(cfg, support, |i, t| {
        let mut coeffs = Vec::with_capacity(d);
        sampler.fill(cfg.seed, i, &mut coeffs);
        // A Gaussian draw is never identically zero.
        let out = analyze_two_strategy(&coeffs).expect("non-zero polynomial");
        let c = out.count;
        t.histogram[c.total.min(support - 1)] += 1;
        let lo = c.below_one as u64;
        let hi = (c.total - c.below_one) as u64;
        t.sum_lo += lo;
        t.sum_hi += hi;
        t.sum_lo_sq += lo * lo;
        t.sum_hi_sq += hi * hi;
        t.sum_diff_sq += lo.abs_diff(hi).pow(2);
        t.stability.stable += out.stability.stable;
        t.stability.unstable += out.stability.unstable;
        t.stability.marginal += out.stability.marginal;
        t.exact_fallbacks += c.exact as u64;
        t.unresolved += out.unresolved;
    });
    let n = cfg.samples as f64;
    let (mean_count, std_err) = histogram_stats(&tally.histogram, n);
    let (mean_lo, se_lo) = mean_and_se(tally.sum_lo as f64, tally.sum_lo_sq as f64, n);
    let (mean_hi, se_hi) = mean_and_se(tally.sum_hi as f64, tally.sum_hi_sq as f64, n);
    let diff_sum = tally.sum_lo as f64 - tally.sum_hi as f64;
    let (_, se_diff) = mean_and_se(diff_sum, tally.sum_diff_sq as f64, n);
    let classified = tally.stability.stable + tally.stability.unstable;
    let (stable_fraction, stable_std_err) = if classified > 0 {
        let p = tally.stability.stable as f64 / classified as f64;
        (Some(p), Some((p * (1.0 - p) / classified as f64).sqrt()))
    } else {
        (None, None)
    };
    Ok(McReport {
        n: 2,
        d,
        samples: cfg.samples,
        seed: cfg.seed,
        sigma: cfg.sigma,
        mean_count,
        std_err,
        histogram: tally.histogram,
        stable_fraction,
        stable_std_err,
        stability_counts: Some(tally.stability),
        split_counts: Some((mean_lo, mean_hi)),
        split_std_err: Some((se_lo, se_hi, se_diff)),
        diagnostics: McDiagnostics {
            exact_fallbacks: tally.exact_fallbacks,
            resampled: 0,
            unresolved_roots: tally.unresolved,
            wall_time_s: started.elapsed().as_secs_f64(),
            threads: if cfg.exec.is_parallel() { current_threads() } else { 1 },
        },
    })
}

/// Per-sample root counts of the two-strategy run, in sample order.
pub fn mc_e2d_counts(d: usize, cfg: &McConfig) -> Result<Vec<usize>> {
    cfg.validate()?;
    let sampler = SystemSampler::new(GameSpec::new(2, d)?, cfg.sigma)?;
    let per_chunk = map_range(cfg.exec, (cfg.samples as usize).div_ceil(CHUNK), |c| {
        let start = (c * CHUNK) as u64;
        let end = (start + CHUNK as u64).min(cfg.samples);
        let mut coeffs = Vec::with_capacity(d);
        (start..end)
            .map(|i| {
                sampler.fill(cfg.seed, i, &mut coeffs);
                count_positive_roots(&coeffs).expect("non-zero polynomial")
            })
            .collect::<Vec<_>>()
    });
    Ok(per_chunk.into_iter().flatten().collect())
}

/// Solves one two-player system. Returns `None` when it is too badly
/// conditioned to decide, otherwise whether a strictly positive solution
/// exists.
pub fn two_player_equilibrium(rows: &[Vec<f64>]) -> Option<bool> {
    let m = rows.len();
    // canonical order: constant, then y_{m}, y_{m-1}, ..., y_1
    let a = DMatrix::from_fn(m, m, |i, col| rows[i][m - col]);
    let b = DVector::from_fn(m, |i, _| -rows[i][0]);
    let sv = a.clone().singular_values();
    let (smax, smin) = (sv.max(), sv.min());
    if !(smin > 0.0) || smax / smin > MAX_CONDITION {
        return None;
    }
    let y = a.lu().solve(&b)?;
    Some(y.iter().all(|&v| v > 0.0))
}

/// Monte Carlo estimate of `E(n, 2)`.
pub fn mc_en2(n: usize, samples: u64, seed: u64) -> Result<McReport> {
    mc_en2_with(n, &McConfig::new(samples, seed))
}

pub fn mc_en2_with(n: usize, cfg: &McConfig) -> Result<McReport> {
    cfg.validate()?;
    let started = Instant::now();
    let spec = GameSpec::new(n, 2)?;
    let width = spec.monomial_count();
    let tally = run_chunks(cfg, 2, |i, t| {
        let mut rng = stream_rng(cfg.seed, i);
        loop {
            let rows = draw_rows(&mut rng, n - 1, width, cfg.sigma);
            match two_player_equilibrium(&rows) {
                Some(found) => {
                    t.histogram[found as usize] += 1;
                    break;
                }
                None => t.resampled += 1,
            }
        }
    });
    let nf = cfg.samples as f64;
    let (mean_count, std_err) = histogram_stats(&tally.histogram, nf);
    Ok(McReport {
        n,
        d: 2,
        samples: cfg.samples,
        seed: cfg.seed,
        sigma: cfg.sigma,
        mean_count,
        std_err,
        histogram: tally.histogram,
        stable_fraction: None,
        stable_std_err: None,
        stability_counts: None,
        split_counts: None,
        split_std_err: None,
        diagnostics: McDiagnostics {
            exact_fallbacks: 0,
            resampled: tally.resampled,
            unresolved_roots: 0,
            wall_time_s: started.elapsed().as_secs_f64(),
            threads: if cfg.exec.is_parallel() { current_threads() } else { 1 },
        },
    })
}

/// At `d = 2` every multinomial weight is one, so rows are plain draws.
fn draw_rows(rng: &mut ChaCha8Rng, rows: usize, width: usize, sigma: f64) -> Vec<Vec<f64>> {
    (0..rows)
        .map(|_| {
            (0..width)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(rng);
                    sigma * z
                })
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density2;
    use crate::quad::QuadConfig;

    fn poly_from_roots(roots: &[f64], lead: f64) -> Vec<f64> {
        let mut p = vec![lead];
        for &r in roots {
            let mut next = vec![0.0; p.len() + 1];
            for (k, &c) in p.iter().enumerate() {
                next[k + 1] += c;
                next[k] -= r * c;
            }
            p = next;
        }
        p
    }

    #[test]
    fn count_examples() {
        assert_eq!(count_positive_roots(&[-1.0, 1.0]).unwrap(), 1);
        assert_eq!(count_positive_roots(&[1.0, 0.0, 1.0]).unwrap(), 0);
        assert_eq!(count_positive_roots(&[2.0, -3.0, 1.0]).unwrap(), 2);
        assert!(count_positive_roots(&[0.0, 0.0]).is_err());
        assert_eq!(count_positive_roots(&[3.0]).unwrap(), 0);
    }

    #[test]
    fn zero_and_negative_roots_are_not_counted() {
        // y (y - 2) (y + 1)
        let p = poly_from_roots(&[0.0, 2.0, -1.0], 1.0);
        assert_eq!(count_positive_roots(&p).unwrap(), 1);
        // (y - 0.5)(y - 3)(y + 2)(y + 5)
        let c = sturm_count(&poly_from_roots(&[0.5, 3.0, -2.0, -5.0], -2.0)).unwrap();
        assert_eq!((c.total, c.below_one), (2, 1));
    }

    #[test]
    fn negligible_leading_coefficient_is_dropped() {
        let mut p = poly_from_roots(&[0.3, 4.0], 1.0);
        p.push(1e-14);
        assert_eq!(count_positive_roots(&p).unwrap(), 2);
    }

    #[test]
    fn multiple_roots_are_counted_once() {
        // (y - 1)^2 (y - 2)
        let p = poly_from_roots(&[1.0, 1.0, 2.0], 1.0);
        assert_eq!(count_positive_roots(&p).unwrap(), 2);
    }

    #[test]
    fn exact_chain_agrees_with_float_chain() {
        for roots in [vec![0.2, 0.9, 3.0], vec![0.5, 1.5, 2.5, 7.0, -1.0], vec![1.1, -0.4]] {
            let p = poly_from_roots(&roots, 1.5);
            let float = SturmChain::new(&p).unwrap();
            let exact = SturmChain {
                polys: exact_chain(&normalize(&p)),
                exact: true,
            };
            assert_eq!(float.count().total, exact.count().total);
            assert_eq!(float.count().below_one, exact.count().below_one);
        }
    }

    #[test]
    fn clustered_roots_fall_back_to_exact() {
        // two roots 1e-9 apart: the double chain's remainders nearly vanish
        let p = poly_from_roots(&[1.0, 1.0 + 1e-9, 5.0], 1.0);
        let chain = SturmChain::new(&p).unwrap();
        assert_eq!(chain.count().total, 3);
    }

    #[test]
    fn isolation_finds_roots() {
        let p = poly_from_roots(&[0.01, 0.7, 1.3, 250.0, -3.0], 0.8);
        let roots = SturmChain::new(&p).unwrap().isolate();
        let expected = [0.01, 0.7, 1.3, 250.0];
        assert_eq!(roots.len(), 4);
        for (r, e) in roots.iter().zip(expected) {
            assert!((r - e).abs() < 1e-9 * e, "{r} vs {e}");
        }
    }

    #[test]
    fn stability_examples() {
        assert_eq!(stability_classify(&[1.0, -1.0], 1.0).unwrap(), Stability::Stable);
        assert_eq!(stability_classify(&[-1.0, 1.0], 1.0).unwrap(), Stability::Unstable);
        assert!(stability_classify(&[-1.0, 1.0], 1.5).is_err());
        // double root at 2: derivative vanishes
        let p = poly_from_roots(&[2.0, 2.0], 1.0);
        assert_eq!(stability_classify(&p, 2.0).unwrap(), Stability::Marginal);
        // large root handled through the reversed form
        let p = poly_from_roots(&[1e6, 0.5], -1.0);
        assert_eq!(stability_classify(&p, 1e6).unwrap(), Stability::Stable);
    }

    #[test]
    fn stability_alternates_along_the_half_line() {
        let sampler = SystemSampler::new(GameSpec::new(2, 8).unwrap(), 1.0).unwrap();
        let mut c = Vec::new();
        for i in 0..2000 {
            sampler.fill(3, i, &mut c);
            let chain = SturmChain::new(&c).unwrap();
            let out = analyze_two_strategy(&c).unwrap();
            let m = out.count.total as u64;
            // P(0+) > 0 means the first crossing goes + to -, i.e. stable
            let starts_positive = sign_at(chain.poly(), 0.0) > 0;
            let stable = if starts_positive { m.div_ceil(2) } else { m / 2 };
            assert_eq!(out.stability.stable, stable, "sample {i}");
            assert_eq!(out.stability.stable + out.stability.unstable, m);
        }
    }

    #[test]
    fn d2_histogram_support() {
        let r = mc_e2d(2, 20_000, 1).unwrap();
        assert_eq!(r.histogram.len(), 2);
        assert_eq!(r.histogram.iter().sum::<u64>(), 20_000);
        assert!((r.p(1) - 0.5).abs() < 4.0 * (0.25f64 / 20_000.0).sqrt());
    }

    #[test]
    fn report_invariants() {
        let r = mc_e2d(6, 10_000, 9).unwrap();
        assert_eq!(r.histogram.iter().sum::<u64>(), r.samples);
        let mean: f64 = r
            .histogram
            .iter()
            .enumerate()
            .map(|(i, &c)| i as f64 * c as f64)
            .sum::<f64>()
            / r.samples as f64;
        assert_eq!(mean, r.mean_count);
        assert_eq!(r.histogram.len(), 6);
        let (lo, hi) = r.split_counts.unwrap();
        assert!((lo + hi - r.mean_count).abs() < 1e-12);
    }

    #[test]
    fn mc_agrees_with_quadrature_small_run() {
        let q = QuadConfig::default();
        for d in [3, 5] {
            let r = mc_e2d(d, 20_000, 17).unwrap();
            let e = density2::e2d(d, &q).unwrap().value;
            assert!(
                (r.mean_count - e).abs() < 4.0 * r.std_err,
                "d={d}: {} vs {e}",
                r.mean_count
            );
        }
    }

    #[test]
    fn two_player_small_run() {
        for n in 2..=4 {
            let r = mc_en2(n, 20_000, 5).unwrap();
            let e = 0.5f64.powi(n as i32 - 1);
            assert_eq!(r.histogram.len(), 2);
            assert!((r.mean_count - e).abs() < 4.0 * r.std_err, "n={n}");
        }
    }

    #[test]
    fn two_player_system_layout() {
        // rows for n = 3: [c, b_y2, b_y1]; y1 = 1, y2 = 2 solves both
        let rows = vec![vec![-5.0, 2.0, 1.0], vec![-1.0, -1.0, 3.0]];
        assert_eq!(two_player_equilibrium(&rows), Some(true));
        let rows = vec![vec![5.0, 2.0, 1.0], vec![-1.0, -1.0, 3.0]];
        assert_eq!(two_player_equilibrium(&rows), Some(false));
        let singular = vec![vec![1.0, 1.0, 1.0], vec![2.0, 2.0, 2.0]];
        assert_eq!(two_player_equilibrium(&singular), None);
    }

    #[test]
    fn sequential_and_parallel_reports_match() {
        let mut cfg = McConfig::new(5_000, 77);
        cfg.exec = Execution::Sequential;
        let a = mc_e2d_with(7, &cfg).unwrap();
        cfg.exec = Execution::default();
        let b = mc_e2d_with(7, &cfg).unwrap();
        assert_eq!(a.histogram, b.histogram);
        assert_eq!(a.stability_counts, b.stability_counts);
        assert_eq!(a.mean_count.to_bits(), b.mean_count.to_bits());
    }

    #[test]
    fn sigma_scaling_keeps_counts() {
        let mut cfg = McConfig::new(5_000, 4);
        let a = mc_e2d_counts(9, &cfg).unwrap();
        cfg.sigma = 10.0;
        let b = mc_e2d_counts(9, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sturm_vs_eigen_small() {
        let mut disagreements = 0;
        let mut c = Vec::new();
        for d in [3usize, 6, 10, 15] {
            let sampler = SystemSampler::new(GameSpec::new(2, d).unwrap(), 1.0).unwrap();
            for i in 0..500 {
                sampler.fill(2, i, &mut c);
                if count_positive_roots(&c).unwrap() != count_positive_roots_eigen(&c).unwrap() {
                    disagreements += 1;
                }
            }
        }
        assert!(disagreements <= 2, "{disagreements} disagreements");
    }

    #[test]
    fn integer_decomposition_is_exact() {
        for x in [1.0, -0.375, 1e-300, 123456.789, f64::MIN_POSITIVE / 4.0] {
            let (m, e) = decompose(x);
            assert_eq!(m as f64 * 2f64.powi(e), x);
        }
    }
}
