//! The random game and its polynomial system.
//!
//! With frequencies `x_1..x_n` and `y_i = x_i / x_n`, the internal equilibria
//! of a symmetric `d`-player `n`-strategy game are the strictly positive
//! solutions of
//!
//! ```text
//!     sum_k  beta^i_k * multinomial(d-1; k_1..k_n) * prod_{j<n} y_j^{k_j} = 0,   i = 1..n-1
//! ```
//!
//! where `k` ranges over exponent vectors with `k_1 + .. + k_{n-1} <= d - 1`
//! and `k_n = d - 1 - (k_1 + .. + k_{n-1})`. Only the payoff differences
//! `beta` are sampled; the payoffs themselves are never materialised.

use std::sync::Arc;

use num_bigint::BigUint;
use num_traits::{ToPrimitive, Zero};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Strategy count `n` and player count `d`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GameSpec {
    n: usize,
    d: usize,
}

impl GameSpec {
    pub fn new(n: usize, d: usize) -> Result<Self> {
        if n < 2 || d < 2 {
            return Err(Error::invalid(format!(
                "a game needs n >= 2 strategies and d >= 2 players (got n = {n}, d = {d})"
            )));
        }
        Ok(GameSpec { n, d })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// Number of polynomial equations, `n - 1`.
    pub fn rows(&self) -> usize {
        self.n - 1
    }

    /// Sharp upper bound `(d-1)^(n-1)` on the number of isolated internal
    /// equilibria. Saturates at `u64::MAX`.
    pub fn max_equilibria(&self) -> u64 {
        let base = (self.d - 1) as u64;
        (0..self.n - 1).fold(1u64, |acc, _| acc.saturating_mul(base))
    }

    /// `C(d-1+n-1, n-1)`, the number of monomials in each equation.
    pub fn monomial_count(&self) -> usize {
        binomial_u128((self.d - 1 + self.n - 1) as u64, (self.n - 1) as u64)
            .and_then(|c| usize::try_from(c).ok())
            .expect("monomial count overflows usize")
    }
}

/// Exponents `k_1..k_{n-1}` of one monomial; `k_n` is implicit.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MultiIndex(Vec<u32>);

impl MultiIndex {
    pub fn new(exponents: Vec<u32>, spec: &GameSpec) -> Result<Self> {
        if exponents.len() != spec.rows() {
            return Err(Error::invalid(format!(
                "multi-index needs {} exponents, got {}",
                spec.rows(),
                exponents.len()
            )));
        }
        let total: u64 = exponents.iter().map(|&k| k as u64).sum();
        if total > (spec.d() - 1) as u64 {
            return Err(Error::invalid(format!(
                "exponent sum {total} exceeds d - 1 = {}",
                spec.d() - 1
            )));
        }
        Ok(MultiIndex(exponents))
    }

    pub fn exponents(&self) -> &[u32] {
        &self.0
    }

    pub fn total(&self) -> u32 {
        self.0.iter().sum()
    }

    /// The implicit last exponent `k_n = d - 1 - sum(k)`.
    pub fn last(&self, spec: &GameSpec) -> u32 {
        (spec.d() - 1) as u32 - self.total()
    }

    /// All `n` parts `(k_1, .., k_n)`.
    pub fn parts(&self, spec: &GameSpec) -> Vec<u32> {
        let mut p = self.0.clone();
        p.push(self.last(spec));
        p
    }
}

fn binomial_u128(n: u64, k: u64) -> Option<u128> {
    if k > n {
        return Some(0);
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 1..=k {
        // acc = C(n-k+i-1, i-1) here, so the division is exact.
        acc = acc.checked_mul((n - k + i) as u128)? / i as u128;
    }
    Some(acc)
}

fn multinomial_u128(dm1: u64, parts: &[u32]) -> Option<u128> {
    let mut acc: u128 = 1;
    let mut filled = 0u64;
    for &p in parts {
        filled += p as u64;
        acc = acc.checked_mul(binomial_u128(filled, p as u64)?)?;
    }
    debug_assert_eq!(filled, dm1);
    Some(acc)
}

fn binomial_big(n: u64, k: u64) -> BigUint {
    if k > n {
        return BigUint::zero();
    }
    let k = k.min(n - k);
    let mut acc = BigUint::from(1u32);
    for i in 1..=k {
        acc = acc * BigUint::from(n - k + i) / BigUint::from(i);
    }
    acc
}

/// Exact multinomial coefficient `dm1! / prod(parts_i!)`.
///
/// Uses 128-bit arithmetic when the result fits and exact big integers
/// otherwise.
pub fn multinomial(dm1: u32, parts: &[u32]) -> Result<BigUint> {
    let sum: u64 = parts.iter().map(|&p| p as u64).sum();
    if sum != dm1 as u64 {
        return Err(Error::invalid(format!(
            "multinomial parts sum to {sum}, expected {dm1}"
        )));
    }
    if let Some(v) = multinomial_u128(dm1 as u64, parts) {
        return Ok(BigUint::from(v));
    }
    let mut acc = BigUint::from(1u32);
    let mut filled = 0u64;
    for &p in parts {
        filled += p as u64;
        acc *= binomial_big(filled, p as u64);
    }
    Ok(acc)
}

/// Exact binomial coefficient.
pub fn binomial(n: u32, k: u32) -> BigUint {
    match binomial_u128(n as u64, k as u64) {
        Some(v) => BigUint::from(v),
        None => binomial_big(n as u64, k as u64),
    }
}

/// Natural log of a positive big integer, accurate to double precision.
pub fn big_ln(x: &BigUint) -> f64 {
    if x.is_zero() {
        return f64::NEG_INFINITY;
    }
    let bits = x.bits();
    if bits <= 1000 {
        return x.to_f64().expect("finite below 2^1000").ln();
    }
    let shift = bits - 60;
    let top = (x >> shift).to_f64().expect("60-bit value");
    top.ln() + shift as f64 * std::f64::consts::LN_2
}

/// Big integer to `f64`; `+inf` past the double range.
pub fn big_to_f64(x: &BigUint) -> f64 {
    x.to_f64().unwrap_or(f64::INFINITY)
}

/// All multi-indices of `spec` in lexicographic order, starting at zero.
pub fn enumerate_indices(spec: &GameSpec) -> Vec<MultiIndex> {
    fn rec(pos: usize, left: u32, cur: &mut Vec<u32>, out: &mut Vec<MultiIndex>) {
        if pos == cur.len() {
            out.push(MultiIndex(cur.clone()));
            return;
        }
        for k in 0..=left {
            cur[pos] = k;
            rec(pos + 1, left - k, cur, out);
        }
        cur[pos] = 0;
    }
    let mut out = Vec::with_capacity(spec.monomial_count());
    let mut cur = vec![0u32; spec.rows()];
    rec(0, (spec.d() - 1) as u32, &mut cur, &mut out);
    out
}

/// Indices and their multinomial weights, shared by every draw of a system.
#[derive(Debug)]
struct Layout {
    indices: Vec<MultiIndex>,
    weights: Vec<f64>,
}

/// Reusable sampler for one `(spec, sigma)`. Each draw is addressed by
/// `(seed, stream)`, so draws can be generated in any order or in parallel.
#[derive(Debug, Clone)]
pub struct SystemSampler {
    spec: GameSpec,
    sigma: f64,
    layout: Arc<Layout>,
}

impl SystemSampler {
    pub fn new(spec: GameSpec, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::invalid(format!("sigma must be positive, got {sigma}")));
        }
        let indices = enumerate_indices(&spec);
        let dm1 = (spec.d() - 1) as u32;
        let weights = indices
            .iter()
            .map(|k| multinomial(dm1, &k.parts(&spec)).map(|m| big_to_f64(&m)))
            .collect::<Result<Vec<_>>>()?;
        Ok(SystemSampler {
            spec,
            sigma,
            layout: Arc::new(Layout { indices, weights }),
        })
    }

    pub fn spec(&self) -> GameSpec {
        self.spec
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn weights(&self) -> &[f64] {
        &self.layout.weights
    }

    /// Draws the weighted coefficients of every row into `out`
    /// (row-major, canonical index order).
    pub fn fill(&self, seed: u64, stream: u64, out: &mut Vec<f64>) {
        let mut rng = stream_rng(seed, stream);
        out.clear();
        for _ in 0..self.spec.rows() {
            for &w in &self.layout.weights {
                let z: f64 = StandardNormal.sample(&mut rng);
                out.push(self.sigma * z * w);
            }
        }
    }

    pub fn sample(&self, seed: u64, stream: u64) -> CoeffSystem {
        let mut flat = Vec::with_capacity(self.spec.rows() * self.layout.weights.len());
        self.fill(seed, stream, &mut flat);
        let m = self.layout.weights.len();
        let rows = flat.chunks(m).map(|c| c.to_vec()).collect();
        CoeffSystem {
            spec: self.spec,
            sigma: self.sigma,
            seed,
            stream,
            layout: Arc::clone(&self.layout),
            rows,
        }
    }
}

/// Counter-based generator: ChaCha8 keyed by `seed`, one stream per draw.
pub(crate) fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// One sampled polynomial system: `n - 1` rows of weighted coefficients.
#[derive(Debug, Clone)]
pub struct CoeffSystem {
    spec: GameSpec,
    sigma: f64,
    seed: u64,
    stream: u64,
    layout: Arc<Layout>,
    rows: Vec<Vec<f64>>,
}

impl CoeffSystem {
    pub fn spec(&self) -> GameSpec {
        self.spec
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    pub fn indices(&self) -> &[MultiIndex] {
        &self.layout.indices
    }

    /// Multinomial weight of each index, aligned with [`Self::indices`].
    pub fn weights(&self) -> &[f64] {
        &self.layout.weights
    }

    /// Coefficients of row `row` (1-based, as the equations are numbered).
    pub fn row(&self, row: usize) -> Result<&[f64]> {
        if row == 0 || row > self.rows.len() {
            return Err(Error::invalid(format!(
                "row {row} out of range 1..={}",
                self.rows.len()
            )));
        }
        Ok(&self.rows[row - 1])
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }
}

/// Draws every `beta` i.i.d. `N(0, sigma^2)` and weights it by its
/// multinomial coefficient. Equal `(spec, sigma, seed)` give identical systems.
pub fn sample_system(spec: GameSpec, sigma: f64, seed: u64) -> Result<CoeffSystem> {
    Ok(SystemSampler::new(spec, sigma)?.sample(seed, 0))
}

/// Evaluates equation `row` (1-based) at a strictly positive point `y`.
pub fn eval_poly(system: &CoeffSystem, row: usize, y: &[f64]) -> Result<f64> {
    let coeffs = system.row(row)?;
    if y.len() != system.spec.rows() {
        return Err(Error::invalid(format!(
            "point has {} coordinates, expected {}",
            y.len(),
            system.spec.rows()
        )));
    }
    if let Some(bad) = y.iter().find(|&&v| !(v > 0.0)) {
        return Err(Error::invalid(format!("coordinates must be positive, got {bad}")));
    }
    let mut sum = NeumaierSum::default();
    for (k, &c) in system.indices().iter().zip(coeffs) {
        let mono: f64 = k.exponents().iter().zip(y).map(|(&e, &v)| v.powi(e as i32)).product();
        sum.add(c * mono);
    }
    Ok(sum.value())
}

/// Compensated summation.
#[derive(Debug, Default, Clone, Copy)]
pub(crate) struct NeumaierSum {
    sum: f64,
    comp: f64,
}

impl NeumaierSum {
    pub(crate) fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub(crate) fn value(&self) -> f64 {
        self.sum + self.comp
    }
}
