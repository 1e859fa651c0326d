//! Two-strategy analytics.
//!
//! For `n = 2` the equilibria are the positive roots of
//! `P(y) = sum_k beta_k C(d-1,k) y^k`, and the expected number of them is
//! `E(2,d) = int_0^inf f(t) dt` with
//!
//! ```text
//!     f(t) = (d-1)/pi * sqrt(sum_{k=0}^{2d-4} a_k t^(2k)) / M_d(t),
//!     M_d(t) = sum_k C(d-1,k)^2 t^(2k).
//! ```
//!
//! The `a_k` are integers, palindromic, and at least one, so the numerator
//! is a sum of positive terms. Evaluating through them avoids the
//! cancellation in the equivalent form `sqrt(A_d M_d - B_d^2) / (pi M_d)`.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_bigint::{BigInt, BigUint, Sign};
use num_traits::Zero;

use crate::error::{Error, Result};
use crate::game_model::{big_ln, big_to_f64, binomial};
use crate::quad::{integrate_1d, QuadConfig};
use crate::report::{EstimateReport, Method};

/// Precomputed coefficient tables for a fixed player count `d`.
#[derive(Debug, Clone)]
pub struct DensityContext {
    d: usize,
    /// `C(d-1,k)^2`, exact.
    binom_sq_exact: Vec<BigUint>,
    binom_sq: Vec<f64>,
    log_binom_sq: Vec<f64>,
    a_exact: Vec<BigUint>,
    a_coeffs: Vec<f64>,
    log_a: Vec<f64>,
    /// Plain Horner evaluation on `[0, 1]` is safe (no overflow).
    horner_ok: bool,
}

impl DensityContext {
    pub fn new(d: usize) -> Result<Self> {
        if d < 2 {
            return Err(Error::invalid(format!("need d >= 2, got {d}")));
        }
        let binom_sq_exact: Vec<BigUint> = (0..d)
            .map(|k| {
                let c = binomial((d - 1) as u32, k as u32);
                &c * &c
            })
            .collect();
        let a_exact = a_coefficients_exact(d);
        let binom_sq: Vec<f64> = binom_sq_exact.iter().map(big_to_f64).collect();
        let a_coeffs: Vec<f64> = a_exact.iter().map(big_to_f64).collect();
        // The sums at t = 1 bound every evaluation on [0, 1].
        let sum_m: f64 = binom_sq.iter().sum();
        let sum_a: f64 = a_coeffs.iter().sum();
        let horner_ok = sum_m < 1e300 && sum_a < 1e300;
        Ok(DensityContext {
            d,
            log_binom_sq: binom_sq_exact.iter().map(big_ln).collect(),
            log_a: a_exact.iter().map(big_ln).collect(),
            binom_sq_exact,
            binom_sq,
            a_exact,
            a_coeffs,
            horner_ok,
        })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn binom_sq(&self) -> &[f64] {
        &self.binom_sq
    }

    pub fn binom_sq_exact(&self) -> &[BigUint] {
        &self.binom_sq_exact
    }

    pub fn a_coeffs(&self) -> &[f64] {
        &self.a_coeffs
    }

    pub fn a_exact(&self) -> &[BigUint] {
        &self.a_exact
    }

    /// `M_d(t) = sum_k C(d-1,k)^2 t^(2k)`.
    pub fn m_poly(&self, t: f64) -> f64 {
        log_sum_powers(self.log_binom_sq.iter().enumerate().map(|(k, &c)| (c, 2 * k as i32)), t).exp()
    }

    /// `A_d(t) = sum_{k>=1} k^2 C(d-1,k)^2 t^(2k-2)`.
    pub fn a_poly(&self, t: f64) -> f64 {
        let terms = self
            .log_binom_sq
            .iter()
            .enumerate()
            .skip(1)
            .map(|(k, &c)| (c + 2.0 * (k as f64).ln(), 2 * k as i32 - 2));
        log_sum_powers(terms, t).exp()
    }

    /// `B_d(t) = sum_{k>=1} k C(d-1,k)^2 t^(2k-1)`.
    pub fn b_poly(&self, t: f64) -> f64 {
        let terms = self
            .log_binom_sq
            .iter()
            .enumerate()
            .skip(1)
            .map(|(k, &c)| (c + (k as f64).ln(), 2 * k as i32 - 1));
        log_sum_powers(terms, t).exp()
    }

    /// Density of positive roots at `y = t`.
    pub fn density_f(&self, t: f64) -> f64 {
        debug_assert!(t >= 0.0);
        let scale = (self.d - 1) as f64 / PI;
        if t <= 1.0 && self.horner_ok {
            let s = t * t;
            return scale * horner(&self.a_coeffs, s).sqrt() / horner(&self.binom_sq, s);
        }
        let log_num = log_sum_powers(self.log_a.iter().enumerate().map(|(k, &c)| (c, 2 * k as i32)), t);
        let log_den = log_sum_powers(self.log_binom_sq.iter().enumerate().map(|(k, &c)| (c, 2 * k as i32)), t);
        scale * (0.5 * log_num - log_den).exp()
    }

    /// The same density through `sqrt(A M - B^2) / (pi M)`; loses accuracy
    /// where the subtraction cancels. Kept as a cross-check.
    pub fn density_f_raw(&self, t: f64) -> f64 {
        let m = self.m_poly(t);
        let a = self.a_poly(t);
        let b = self.b_poly(t);
        (a * m - b * b).max(0.0).sqrt() / (PI * m)
    }
}

fn horner(coeffs: &[f64], s: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * s + c)
}

/// `ln sum_j exp(log_c_j) t^(p_j)` with max-term scaling. At `t = 0` only
/// the terms with `p_j = 0` survive.
fn log_sum_powers(terms: impl Iterator<Item = (f64, i32)> + Clone, t: f64) -> f64 {
    let ln_t = t.ln();
    let log_term = |(c, p): (f64, i32)| {
        if p == 0 {
            c
        } else if t == 0.0 {
            f64::NEG_INFINITY
        } else {
            c + p as f64 * ln_t
        }
    };
    let max = terms.clone().map(log_term).fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    let sum: f64 = terms.map(|x| (log_term(x) - max).exp()).sum();
    max + sum.ln()
}

/// `a_k` as exact integers. Equal to the sum-of-squares form
/// `C(d-2,k)^2 + sum_{i<=j, i+j=k-1} (C(d-1,i+1) C(d-2,j) - C(d-2,i) C(d-1,j+1))^2`,
/// hence non-negative.
pub fn a_coefficients_exact(d: usize) -> Vec<BigUint> {
    let signed = a_coefficients_signed(d, 1);
    signed
        .into_iter()
        .map(|v| v.to_biguint().expect("a_k is non-negative"))
        .collect()
}

/// The double-sum definition
/// `a_k = sum_{i+j=k} C(d-1,i)^2 C(d-2,j)^2 - sign * sum_{i+j=k-1} Q_i Q_j`
/// with `Q_i = C(d-2,i) C(d-1,i+1)`, returned as polynomial coefficients in
/// `t^2` with the (cancelling) top coefficient trimmed when it vanishes.
/// `second_sign = 1` is the correct formula; `-1` flips the sign of the
/// second sum and exists so the verification suite can show that the
/// palindrome check catches it.
pub fn a_coefficients_signed(d: usize, second_sign: i32) -> Vec<BigInt> {
    assert!(d >= 2, "need d >= 2");
    let dm1 = (d - 1) as u32;
    let dm2 = (d - 2) as u32;
    let big = |x: BigUint| BigInt::from_biguint(Sign::Plus, x);
    let m_d: Vec<BigInt> = (0..=dm1).map(|i| big(binomial(dm1, i).pow(2))).collect();
    let m_dm1: Vec<BigInt> = (0..=dm2).map(|j| big(binomial(dm2, j).pow(2))).collect();
    let q: Vec<BigInt> = (0..=dm2)
        .map(|i| big(binomial(dm2, i) * binomial(dm1, i + 1)))
        .collect();

    let len = m_d.len() + m_dm1.len() - 1; // 2d - 2
    let mut out = vec![BigInt::zero(); len];
    for (i, mi) in m_d.iter().enumerate() {
        for (j, pj) in m_dm1.iter().enumerate() {
            out[i + j] += mi * pj;
        }
    }
    for (i, qi) in q.iter().enumerate() {
        for (j, qj) in q.iter().enumerate() {
            let prod = qi * qj;
            if second_sign >= 0 {
                out[i + j + 1] -= prod;
            } else {
                out[i + j + 1] += prod;
            }
        }
    }
    while out.len() > 1 && out.last().is_some_and(|c| c.is_zero()) {
        out.pop();
    }
    out
}

/// `a_0 .. a_{2d-4}` as doubles (length `max(1, 2d-3)`).
pub fn a_coefficients(d: usize) -> Vec<f64> {
    a_coefficients_exact(d).iter().map(big_to_f64).collect()
}

/// Checks `a_0 = a_last = 1`, exact palindrome, and `min a_k >= 1`.
pub fn check_a_identities(a: &[BigInt], d: usize) -> std::result::Result<(), String> {
    let expected_len = (2 * d).saturating_sub(3).max(1);
    if a.len() != expected_len {
        return Err(format!("length {} != {expected_len}", a.len()));
    }
    let one = BigInt::from(1);
    if a[0] != one || a[a.len() - 1] != one {
        return Err(format!("end coefficients {} and {} are not 1", a[0], a[a.len() - 1]));
    }
    if a.iter().ne(a.iter().rev()) {
        return Err("not palindromic".into());
    }
    if let Some(bad) = a.iter().find(|c| c < &&one) {
        return Err(format!("coefficient {bad} < 1"));
    }
    Ok(())
}

/// `f(t)` for `d` players.
pub fn density_f(ctx: &DensityContext, t: f64) -> f64 {
    ctx.density_f(t)
}

/// `E(2,d) = 2 int_0^1 f(t) dt`.
pub fn e2d(d: usize, quad: &QuadConfig) -> Result<EstimateReport> {
    e2d_with(&DensityContext::new(d)?, quad)
}

pub fn e2d_with(ctx: &DensityContext, quad: &QuadConfig) -> Result<EstimateReport> {
    let evals = std::cell::Cell::new(0u64);
    let (value, err) = integrate_1d(
        |t| {
            evals.set(evals.get() + 1);
            2.0 * ctx.density_f(t)
        },
        0.0,
        1.0,
        quad,
    )?;
    Ok(EstimateReport {
        n: 2,
        d: ctx.d,
        value,
        method: Method::Quadrature,
        err_estimate: err,
        evaluations: evals.get(),
        nodes: None,
        seed: None,
    })
}

/// `int_1^inf f`, computed as `int_0^1 f(1/s) / s^2 ds`.
pub fn upper_half_integral(ctx: &DensityContext, quad: &QuadConfig) -> Result<(f64, f64)> {
    integrate_1d(|s| ctx.density_f(1.0 / s) / (s * s), 0.0, 1.0, quad)
}

/// Analytic bounds on `E(2,d)`:
/// `(d-1)/(pi sqrt(2d-3)) <= E(2,d) <= sqrt(d-1) sqrt(1 + pi/2 sqrt(d-1)) / pi`.
pub fn bounds_e2d(d: usize) -> (f64, f64) {
    assert!(d >= 2, "need d >= 2");
    let dm1 = (d - 1) as f64;
    let lower = dm1 / (PI * (2.0 * d as f64 - 3.0).sqrt());
    let upper = dm1.sqrt() * (1.0 + 0.5 * PI * dm1.sqrt()).sqrt() / PI;
    (lower, upper)
}

/// Bounds on the expected number of stable equilibria, `E(2,d) / 2`.
pub fn stable_e2d_interval(d: usize) -> (f64, f64) {
    let (lo, hi) = bounds_e2d(d);
    (0.5 * lo, 0.5 * hi)
}

/// Upper bound on the probability of exactly `m` equilibria:
/// `p_m <= E(2,d)/m <= upper(d)/m`.
pub fn p_max_bound(d: usize, m: usize) -> Result<f64> {
    if d < 2 || m == 0 || m > d - 1 {
        return Err(Error::invalid(format!("need 1 <= m <= d-1, got m = {m}, d = {d}")));
    }
    Ok(bounds_e2d(d).1 / m as f64)
}

/// Largest `d` for which [`m_roots`] factors `M_d` numerically.
pub const ROOT_FACTOR_MAX_D: usize = 12;

/// The `r_i > 0` with `M_d(t) = prod_i (t^2 + r_i)`, ascending.
///
/// Roots of `M_d` as a polynomial in `s = t^2` come from companion-matrix
/// eigenvalues, then a few Newton steps on the exact coefficients.
pub fn m_roots(ctx: &DensityContext) -> Result<Vec<f64>> {
    if ctx.d > ROOT_FACTOR_MAX_D {
        return Err(Error::invalid(format!(
            "M_d root factorisation is limited to d <= {ROOT_FACTOR_MAX_D}"
        )));
    }
    let c = &ctx.binom_sq; // monic: c[d-1] = 1
    let deg = c.len() - 1;
    if deg == 0 {
        return Ok(Vec::new());
    }
    let mut comp = DMatrix::<f64>::zeros(deg, deg);
    for i in 1..deg {
        comp[(i, i - 1)] = 1.0;
    }
    for i in 0..deg {
        comp[(i, deg - 1)] = -c[i] / c[deg];
    }
    let mut roots: Vec<f64> = comp
        .complex_eigenvalues()
        .iter()
        .map(|z| {
            let mut s = z.re;
            for _ in 0..8 {
                let (p, dp) = c.iter().rev().fold((0.0, 0.0), |(p, dp), &ck| (p * s + ck, dp * s + p));
                if dp == 0.0 {
                    break;
                }
                s -= p / dp;
            }
            -s
        })
        .collect();
    roots.sort_by(f64::total_cmp);
    Ok(roots)
}

/// `(2 pi f(t))^2` through the root factorisation: `sum_i 4 r_i / (t^2 + r_i)^2`.
pub fn density_sq_from_roots(roots: &[f64], t: f64) -> f64 {
    let s = t * t;
    roots.iter().map(|&r| 4.0 * r / ((s + r) * (s + r))).sum()
}

/// Elementary symmetric sums `e_{m}` and `e_{m-1}` of the roots: the product
/// of all roots and the sum of all products leaving one root out.
pub fn vieta_sums(roots: &[f64]) -> (f64, f64) {
    let product: f64 = roots.iter().product();
    let leave_one_out: f64 = (0..roots.len())
        .map(|i| {
            roots
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, r)| r)
                .product::<f64>()
        })
        .sum();
    (product, leave_one_out)
}
