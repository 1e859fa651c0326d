//! Expected number of positive roots of the general system via the
//! Kostlan-type integral
//!
//! ```text
//!     E(n,d) = pi^(-n/2) Gamma(n/2) int_{[0,inf)^(n-1)} sqrt(det L(t)) dt,
//!     L_ij(t) = d^2/dx_i dy_j  log K(x, y) |_{x=y=t},
//!     K(x, y) = sum_k multinomial(d-1; k)^2 prod_i (x_i y_i)^(k_i).
//! ```
//!
//! `L` is assembled from three moment sums over the multi-indices,
//! `S0 = sum w t^(2k)`, `S1_i = sum k_i w t^(2k) / t_i` and
//! `S2_ij = sum k_i k_j w t^(2k) / (t_i t_j)` (with `k_i^2 t^(2k-2)` on the
//! diagonal), as `L_ij = S2_ij / S0 - S1_i S1_j / S0^2`. The divisions by
//! `t_i` are folded into the exponents, so the boundary `t_i = 0` needs no
//! special casing.

use std::f64::consts::PI;
use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::game_model::{big_ln, big_to_f64, enumerate_indices, multinomial, GameSpec, MultiIndex};
use crate::quad::{integrate_semiinf_nd, QuadConfig};
use crate::report::{EstimateReport, Method};

/// Largest strategy count the cubature supports.
pub const MAX_N: usize = 4;

/// Determinants below this (after row scaling) count as numerical-quality
/// warnings rather than round-off.
const NEGATIVE_DET_WARN: f64 = -1e-9;

/// The covariance kernel `K(x, y)` of one equation of the system.
#[derive(Debug)]
pub struct KernelContext {
    spec: GameSpec,
    indices: Vec<MultiIndex>,
    /// Row-major exponents, `n - 1` per index.
    exps: Vec<u32>,
    /// `multinomial^2`, times the optional variance scale.
    weights: Vec<f64>,
    log_weights: Vec<f64>,
    max_log_weight: f64,
    negative_dets: AtomicU64,
}

impl Clone for KernelContext {
    fn clone(&self) -> Self {
        KernelContext {
            spec: self.spec,
            indices: self.indices.clone(),
            exps: self.exps.clone(),
            weights: self.weights.clone(),
            log_weights: self.log_weights.clone(),
            max_log_weight: self.max_log_weight,
            negative_dets: AtomicU64::new(self.negative_dets.load(Ordering::Relaxed)),
        }
    }
}

impl KernelContext {
    pub fn new(spec: GameSpec) -> Result<Self> {
        Self::with_variance(spec, 1.0)
    }

    /// Kernel for `beta ~ N(0, sigma_sq)`: every weight is multiplied by
    /// `sigma_sq`.
    pub fn with_variance(spec: GameSpec, sigma_sq: f64) -> Result<Self> {
        if !(sigma_sq > 0.0 && sigma_sq.is_finite()) {
            return Err(Error::invalid(format!("variance must be positive, got {sigma_sq}")));
        }
        let indices = enumerate_indices(&spec);
        let dm1 = (spec.d() - 1) as u32;
        let mut weights = Vec::with_capacity(indices.len());
        let mut log_weights = Vec::with_capacity(indices.len());
        for k in &indices {
            let m = multinomial(dm1, &k.parts(&spec))?;
            let sq = &m * &m;
            weights.push(big_to_f64(&sq) * sigma_sq);
            log_weights.push(big_ln(&sq) + sigma_sq.ln());
        }
        let exps = indices.iter().flat_map(|k| k.exponents().iter().copied()).collect();
        let max_log_weight = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok(KernelContext {
            spec,
            indices,
            exps,
            weights,
            log_weights,
            max_log_weight,
            negative_dets: AtomicU64::new(0),
        })
    }

    pub fn spec(&self) -> GameSpec {
        self.spec
    }

    pub fn indices(&self) -> &[MultiIndex] {
        &self.indices
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Integrand evaluations whose scaled determinant fell below `-1e-9`.
    pub fn negative_det_warnings(&self) -> u64 {
        self.negative_dets.load(Ordering::Relaxed)
    }

    fn dims(&self) -> usize {
        self.spec.rows()
    }

    /// `K(x, y) = sum_k w_k prod_i (x_i y_i)^(k_i)`, evaluated with max-term
    /// scaling in log space.
    pub fn kernel(&self, x: &[f64], y: &[f64]) -> f64 {
        let dims = self.dims();
        assert!(x.len() == dims && y.len() == dims, "kernel needs {dims} coordinates");
        let ln_xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| (a * b).ln()).collect();
        let log_terms = self.exps.chunks(dims).zip(&self.log_weights).map(|(k, &lw)| {
            k.iter()
                .zip(&ln_xy)
                .fold(lw, |acc, (&e, &l)| if e == 0 { acc } else { acc + e as f64 * l })
        });
        log_sum_exp(log_terms)
    }

    /// The matrix `L(t)` of second log-derivatives.
    pub fn l_matrix(&self, t: &[f64]) -> LMatrix {
        let dims = self.dims();
        assert_eq!(t.len(), dims, "l_matrix needs {dims} coordinates");
        let m = self.moments(t);
        let mut entries = DMatrix::<f64>::zeros(dims, dims);
        for i in 0..dims {
            for j in i..dims {
                let v = m.s2[i * dims + j] / m.s0 - (m.s1[i] / m.s0) * (m.s1[j] / m.s0);
                entries[(i, j)] = v;
                entries[(j, i)] = v;
            }
        }
        LMatrix {
            entries,
            point: t.to_vec(),
        }
    }

    /// `sqrt(max(det L(t), 0))`.
    pub fn integrand(&self, t: &[f64]) -> f64 {
        let l = self.l_matrix(t);
        let (det, scaled) = scaled_det(&l.entries);
        if scaled < NEGATIVE_DET_WARN {
            self.negative_dets.fetch_add(1, Ordering::Relaxed);
        }
        det.max(0.0).sqrt()
    }

    fn moments(&self, t: &[f64]) -> Moments {
        let dims = self.dims();
        let top = 2 * (self.spec.d() - 1);
        let max_ln_t = t.iter().map(|&x| x.max(1.0).ln()).fold(0.0, f64::max);
        let bound = self.max_log_weight + top as f64 * max_ln_t + 2.0 * (self.spec.d() as f64).ln();
        if bound < 600.0 && t.iter().all(|&x| x >= 0.0 && x.is_finite()) {
            self.moments_direct(t, dims, top)
        } else {
            self.moments_log(t, dims)
        }
    }

    fn moments_direct(&self, t: &[f64], dims: usize, top: usize) -> Moments {
        // pw[l][e] = t_l^e
        let pw: Vec<Vec<f64>> = t
            .iter()
            .map(|&x| {
                let mut row = Vec::with_capacity(top + 1);
                let mut p = 1.0;
                for _ in 0..=top {
                    row.push(p);
                    p *= x;
                }
                row
            })
            .collect();
        self.accumulate(dims, |l, e| pw[l][e], |w| w, false)
    }

    fn moments_log(&self, t: &[f64], dims: usize) -> Moments {
        let ln_t: Vec<f64> = t.iter().map(|x| x.ln()).collect();
        let lp = |l: usize, e: usize| if e == 0 { 0.0 } else { e as f64 * ln_t[l] };
        let shift = self
            .exps
            .chunks(dims)
            .zip(&self.log_weights)
            .map(|(k, &lw)| {
                k.iter()
                    .enumerate()
                    .fold(lw, |acc, (l, &e)| acc + lp(l, 2 * e as usize))
            })
            .fold(f64::NEG_INFINITY, f64::max);
        // Every term is exp(log w + sum lp - shift); split the shift into the
        // weight factor so the per-coordinate factors stay unscaled logs.
        self.accumulate(dims, lp, |lw| lw - shift, true)
    }

    /// Shared accumulation loop. Directly, `factor` returns `t_l^e` and terms
    /// are products; with `log` set, `factor` returns `e ln t_l`, weights are
    /// log-weights, and each term is a sum that gets exponentiated.
    fn accumulate<P, W>(&self, dims: usize, factor: P, weight: W, log: bool) -> Moments
    where
        P: Fn(usize, usize) -> f64,
        W: Fn(f64) -> f64,
    {
        let mut s0 = 0.0;
        let mut s1 = vec![0.0; dims];
        let mut s2 = vec![0.0; dims * dims];
        let combine = |acc: f64, x: f64| if log { acc + x } else { acc * x };
        let finish = |x: f64| if log { x.exp() } else { x };
        let ws: &[f64] = if log { &self.log_weights } else { &self.weights };
        let mut full = vec![0.0; dims]; // factor at exponent 2k_l
        let mut once = vec![0.0; dims]; // factor at exponent 2k_l - 1
        let mut twice = vec![0.0; dims]; // factor at exponent 2k_l - 2
        for (k, &w0) in self.exps.chunks(dims).zip(ws) {
            let w = weight(w0);
            for l in 0..dims {
                let e = 2 * k[l] as usize;
                full[l] = factor(l, e);
                if k[l] > 0 {
                    once[l] = factor(l, e - 1);
                    twice[l] = factor(l, e - 2);
                }
            }
            let base = full.iter().fold(w, |acc, &f| combine(acc, f));
            s0 += finish(base);
            for i in 0..dims {
                let ki = k[i] as f64;
                if k[i] == 0 {
                    continue;
                }
                let rest_i = (0..dims).filter(|&l| l != i).fold(w, |acc, l| combine(acc, full[l]));
                s1[i] += ki * finish(combine(rest_i, once[i]));
                s2[i * dims + i] += ki * ki * finish(combine(rest_i, twice[i]));
                for j in (i + 1)..dims {
                    if k[j] == 0 {
                        continue;
                    }
                    let kj = k[j] as f64;
                    let rest_ij = (0..dims)
                        .filter(|&l| l != i && l != j)
                        .fold(w, |acc, l| combine(acc, full[l]));
                    let v = ki * kj * finish(combine(combine(rest_ij, once[i]), once[j]));
                    s2[i * dims + j] += v;
                    s2[j * dims + i] += v;
                }
            }
        }
        Moments { s0, s1, s2 }
    }
}

struct Moments {
    s0: f64,
    s1: Vec<f64>,
    /// Row-major `dims x dims`.
    s2: Vec<f64>,
}

fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return 0.0;
    }
    max.exp() * xs.map(|x| (x - max).exp()).sum::<f64>()
}

/// `L(t)` together with the point it was evaluated at.
#[derive(Debug, Clone, PartialEq)]
pub struct LMatrix {
    pub entries: DMatrix<f64>,
    pub point: Vec<f64>,
}

impl LMatrix {
    pub fn order(&self) -> usize {
        self.entries.nrows()
    }

    pub fn det(&self) -> f64 {
        scaled_det(&self.entries).0
    }
}

/// Determinant by partial-pivot elimination after scaling every row to unit
/// max-entry. Returns `(det, det of the scaled matrix)`.
pub fn scaled_det(a: &DMatrix<f64>) -> (f64, f64) {
    let n = a.nrows();
    let mut m = a.clone();
    let mut row_scale = 1.0;
    for i in 0..n {
        let s = m.row(i).iter().fold(0.0f64, |acc, x| acc.max(x.abs()));
        if s == 0.0 {
            return (0.0, 0.0);
        }
        row_scale *= s;
        for j in 0..n {
            m[(i, j)] /= s;
        }
    }
    let mut det = 1.0;
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&x, &y| m[(x, col)].abs().total_cmp(&m[(y, col)].abs()))
            .expect("non-empty");
        if m[(pivot, col)] == 0.0 {
            return (0.0, 0.0);
        }
        if pivot != col {
            m.swap_rows(pivot, col);
            det = -det;
        }
        let p = m[(col, col)];
        det *= p;
        for r in (col + 1)..n {
            let factor = m[(r, col)] / p;
            for c in col..n {
                m[(r, c)] -= factor * m[(col, c)];
            }
        }
    }
    (det * row_scale, det)
}

/// `det L` at `d = 2` in closed form: `(1 + sum t_k^2)^(-n)`.
pub fn det_l_closed_d2(n: usize, t: &[f64]) -> f64 {
    let sigma = 1.0 + t.iter().map(|x| x * x).sum::<f64>();
    sigma.powi(-(n as i32))
}

/// `E(n, 2) = 2^(1-n)`.
pub fn e_n2_closed(n: usize) -> f64 {
    assert!(n >= 2, "need n >= 2");
    (0.5f64).powi(n as i32 - 1)
}

/// `Gamma(n/2)` for integer `n >= 1`.
pub fn gamma_half(n: usize) -> f64 {
    assert!(n >= 1);
    if n.is_multiple_of(2) {
        (1..n / 2).map(|k| k as f64).product()
    } else {
        // Gamma(1/2) = sqrt(pi), Gamma(x+1) = x Gamma(x)
        (0..(n - 1) / 2).fold(PI.sqrt(), |acc, j| acc * (j as f64 + 0.5))
    }
}

/// The constant `pi^(-n/2) Gamma(n/2)` in front of the integral.
pub fn prefactor(n: usize) -> f64 {
    PI.powf(-(n as f64) / 2.0) * gamma_half(n)
}

fn check_dimension(n: usize, d: usize) -> Result<()> {
    if n < 2 || d < 2 {
        return Err(Error::invalid(format!("need n >= 2 and d >= 2, got n = {n}, d = {d}")));
    }
    if n > MAX_N {
        return Err(Error::UnsupportedDimension {
            n,
            supported: "2 <= n <= 4",
        });
    }
    Ok(())
}

/// `E(n, d)`: the closed form at `d = 2`, the cubature otherwise.
pub fn e_nd(n: usize, d: usize, quad: &QuadConfig) -> Result<EstimateReport> {
    check_dimension(n, d)?;
    if d == 2 {
        return Ok(EstimateReport::closed_form(n, 2, e_n2_closed(n)));
    }
    e_nd_integrated(n, d, quad)
}

/// `E(n, d)` by cubature, including at `d = 2`.
pub fn e_nd_integrated(n: usize, d: usize, quad: &QuadConfig) -> Result<EstimateReport> {
    check_dimension(n, d)?;
    let ctx = KernelContext::new(GameSpec::new(n, d)?)?;
    let c = prefactor(n);
    let cub = integrate_semiinf_nd(|t| ctx.integrand(t), n - 1, quad).map_err(|e| match e {
        Error::FailedConvergence {
            value,
            err_estimate,
            detail,
        } => Error::FailedConvergence {
            value: c * value,
            err_estimate: c * err_estimate,
            detail,
        },
        other => other,
    })?;
    Ok(EstimateReport {
        n,
        d,
        value: c * cub.value,
        method: Method::Quadrature,
        err_estimate: c * cub.err_estimate,
        evaluations: cub.evaluations,
        nodes: Some((quad.nodes_per_dim, quad.verify_nodes_per_dim)),
        seed: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density2::DensityContext;
    use proptest::prelude::*;

    fn ctx(n: usize, d: usize) -> KernelContext {
        KernelContext::new(GameSpec::new(n, d).unwrap()).unwrap()
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    #[test]
    fn kernel_examples() {
        for d in 2..=8 {
            let c = ctx(2, d);
            assert!((c.kernel(&[1e-200], &[1e-200]) - 1.0).abs() < 1e-15);
            let central = big_to_f64(&crate::game_model::binomial(2 * (d as u32 - 1), d as u32 - 1));
            assert!(rel(c.kernel(&[1.0], &[1.0]), central) < 1e-13);
        }
        let c = ctx(3, 2);
        let (t1, t2) = (0.7, 1.9);
        assert!(rel(c.kernel(&[t1, t2], &[t1, t2]), 1.0 + t1 * t1 + t2 * t2) < 1e-14);
        assert_eq!(c.kernel(&[0.0, 0.0], &[0.0, 0.0]), 1.0);
    }

    #[test]
    fn weights_are_squared_multinomials() {
        let c = ctx(3, 6);
        for (k, &w) in c.indices().iter().zip(c.weights()) {
            let m = big_to_f64(&multinomial(5, &k.parts(&c.spec())).unwrap());
            assert_eq!(w, m * m);
        }
        assert_eq!(c.weights()[0], 1.0);
    }

    #[test]
    fn d2_matrix_at_one_one() {
        let l = ctx(3, 2).l_matrix(&[1.0, 1.0]);
        assert!((l.entries[(0, 0)] - 2.0 / 9.0).abs() < 1e-15);
        assert!((l.entries[(1, 1)] - 2.0 / 9.0).abs() < 1e-15);
        assert!((l.entries[(0, 1)] + 1.0 / 9.0).abs() < 1e-15);
        assert_eq!(l.entries[(0, 1)], l.entries[(1, 0)]);
        assert_eq!(l.order(), 2);
        assert!(rel(ctx(3, 2).integrand(&[1.0, 1.0]), (1.0f64 / 27.0).sqrt()) < 1e-14);
        assert!((ctx(3, 2).integrand(&[0.0, 0.0]) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn closed_form_det_examples() {
        assert_eq!(det_l_closed_d2(3, &[0.0, 0.0]), 1.0);
        assert!((det_l_closed_d2(3, &[1.0, 1.0]) - 1.0 / 27.0).abs() < 1e-16);
        assert!((det_l_closed_d2(4, &[1.0, 1.0, 1.0]) - 4f64.powi(-4)).abs() < 1e-18);
        assert_eq!(e_n2_closed(2), 0.5);
        assert_eq!(e_n2_closed(3), 0.25);
        assert_eq!(e_n2_closed(4), 0.125);
    }

    #[test]
    fn n2_reduction_matches_density() {
        for d in 2..=20 {
            let k = ctx(2, d);
            let f = DensityContext::new(d).unwrap();
            for i in 1..=100 {
                let t = i as f64 * 0.1;
                let l11 = k.l_matrix(&[t]).entries[(0, 0)];
                let pf = PI * f.density_f(t);
                assert!(rel(l11, pf * pf) < 1e-10, "d={d} t={t}");
                assert!(rel(k.integrand(&[t]), pf) < 1e-10);
            }
            // boundary
            assert!(rel(k.integrand(&[0.0]), PI * f.density_f(0.0)) < 1e-14);
        }
    }

    #[test]
    fn log_path_agrees_with_direct_path() {
        let c = ctx(3, 7);
        for t in [[0.3, 2.0], [1.5, 0.01], [4.0, 4.0]] {
            let a = c.moments_direct(&t, 2, 12);
            let b = c.moments_log(&t, 2);
            let la = a.s2[1] / a.s0 - a.s1[0] * a.s1[1] / (a.s0 * a.s0);
            let lb = b.s2[1] / b.s0 - b.s1[0] * b.s1[1] / (b.s0 * b.s0);
            assert!(rel(la, lb) < 1e-12, "{la} vs {lb}");
            assert!(rel(a.s1[0] / a.s0, b.s1[0] / b.s0) < 1e-13);
        }
        // far out only the log path is usable
        let far = c.l_matrix(&[1e60, 1e-3]);
        assert!(far.entries.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn boundary_limits_are_finite() {
        let c = ctx(4, 5);
        let l = c.l_matrix(&[0.0, 0.4, 0.0]);
        assert!(l.entries.iter().all(|x| x.is_finite()));
        assert_eq!(l.entries[(0, 1)], 0.0);
        assert!(c.integrand(&[0.0, 0.0, 0.0]) > 0.0);
    }

    #[test]
    fn integrand_is_permutation_symmetric() {
        let c = ctx(4, 6);
        let a = c.integrand(&[0.3, 1.2, 2.5]);
        for p in [[1.2, 0.3, 2.5], [2.5, 1.2, 0.3], [0.3, 2.5, 1.2]] {
            assert!(rel(c.integrand(&p), a) < 1e-12);
        }
    }

    #[test]
    fn unsupported_dimension() {
        assert!(matches!(
            e_nd(5, 3, &QuadConfig::default()),
            Err(Error::UnsupportedDimension { n: 5, .. })
        ));
        assert!(matches!(
            e_nd(1, 3, &QuadConfig::default()),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn gamma_half_values() {
        assert_eq!(gamma_half(2), 1.0);
        assert!((gamma_half(3) - PI.sqrt() / 2.0).abs() < 1e-15);
        assert_eq!(gamma_half(4), 1.0);
        assert!((gamma_half(5) - 0.75 * PI.sqrt()).abs() < 1e-15);
        assert_eq!(gamma_half(6), 2.0);
        assert!((gamma_half(1) - PI.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn gamma_chain_identity() {
        // int_0^inf (a + t^2)^-p dt = sqrt(pi) Gamma(p - 1/2) a^(1/2 - p) / (2 Gamma(p))
        let q = QuadConfig::default();
        for (a, two_p) in [(1.0, 3usize), (2.5, 4), (0.4, 5)] {
            let p = two_p as f64 / 2.0;
            let (v, _) = crate::quad::integrate_1d(
                |u| {
                    let s = 1.0 - u;
                    let t = s.powi(-2) - 1.0;
                    (a + t * t).powf(-p) * 2.0 * s.powi(-3)
                },
                0.0,
                1.0,
                &q,
            )
            .unwrap();
            let exact = PI.sqrt() * gamma_half(two_p - 1) * a.powf(0.5 - p) / (2.0 * gamma_half(two_p));
            assert!(rel(v, exact) < 1e-8);
        }
        for n in 2..=4 {
            let r = e_nd_integrated(n, 2, &q).unwrap();
            assert!((r.value - e_n2_closed(n)).abs() < 1e-4, "n={n}: {}", r.value);
        }
    }

    #[test]
    fn n2_cubature_matches_density_quadrature() {
        let q = QuadConfig::default();
        for d in 2..=10 {
            let a = e_nd_integrated(2, d, &q).unwrap().value;
            let b = crate::density2::e2d(d, &q).unwrap().value;
            assert!((a - b).abs() < 1e-5, "d={d}: {a} vs {b}");
        }
    }

    #[test]
    fn table_spot_values() {
        let q = QuadConfig::default();
        for (n, d, expected, tol) in [(3, 4, 0.92, 1e-2), (4, 5, 1.39, 2e-2), (4, 10, 5.66, 5e-2)] {
            let r = e_nd(n, d, &q).unwrap();
            assert!((r.value - expected).abs() < tol, "E({n},{d}) = {}", r.value);
            assert_eq!(r.method, Method::Quadrature);
        }
        assert_eq!(e_nd(3, 2, &q).unwrap().method, Method::ClosedForm);
    }

    proptest! {
        #[test]
        fn d2_det_matches_closed_form(n in 2usize..=4, raw in proptest::collection::vec(0.0f64..10.0, 3)) {
            let t = &raw[..n - 1];
            let det = ctx(n, 2).l_matrix(t).det();
            let exact = det_l_closed_d2(n, t);
            prop_assert!(rel(det, exact) <= 1e-10, "det={} exact={}", det, exact);
        }

        #[test]
        fn variance_scale_leaves_l_unchanged(d in 2usize..8, s in 0.1f64..50.0, t1 in 0.01f64..5.0, t2 in 0.01f64..5.0) {
            let spec = GameSpec::new(3, d).unwrap();
            let a = KernelContext::new(spec).unwrap().l_matrix(&[t1, t2]);
            let b = KernelContext::with_variance(spec, s * s).unwrap().l_matrix(&[t1, t2]);
            for (x, y) in a.entries.iter().zip(b.entries.iter()) {
                prop_assert!((x - y).abs() <= 1e-14 * x.abs().max(1e-300) + 1e-15);
            }
        }

        #[test]
        fn l_is_symmetric_psd(d in 2usize..10, t in proptest::collection::vec(0.01f64..8.0, 3)) {
            let l = ctx(4, d).l_matrix(&t);
            prop_assert_eq!(l.entries.clone(), l.entries.transpose());
            let (_, scaled) = scaled_det(&l.entries);
            prop_assert!(scaled >= -1e-12);
        }
    }
}
