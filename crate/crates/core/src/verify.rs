//! Self-check suite behind `randgame verify`.
//!
//! Every check recomputes a quantity two independent ways, or against a
//! closed form, and reports rather than panics. `quick` runs in seconds;
//! `full` adds the root-factorisation identities and larger Monte Carlo runs.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use num_bigint::BigInt;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::density2::{
    a_coefficients_signed, bounds_e2d, check_a_identities, density_sq_from_roots, e2d_with, m_roots,
    upper_half_integral, vieta_sums, DensityContext, ROOT_FACTOR_MAX_D,
};
use crate::error::{Error, Result};
use crate::game_model::GameSpec;
use crate::kostlan::{det_l_closed_d2, e_n2_closed, e_nd_integrated, KernelContext};
use crate::oracle::{mc_e2d_with, mc_en2_with, McConfig};
use crate::quad::QuadConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Quick,
    Full,
}

impl FromStr for Level {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "quick" => Ok(Level::Quick),
            "full" => Ok(Level::Full),
            other => Err(Error::invalid(format!("unknown verify level '{other}' (quick|full)"))),
        }
    }
}

/// Which formula produces the `a_k` under test. `SignFlipped` negates the
/// second double sum; it exists to show the palindrome check has teeth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ASource {
    #[default]
    Correct,
    SignFlipped,
}

impl ASource {
    fn coefficients(self, d: usize) -> Vec<BigInt> {
        match self {
            ASource::Correct => a_coefficients_signed(d, 1),
            ASource::SignFlipped => a_coefficients_signed(d, -1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyOptions {
    pub level: Level,
    pub seed: u64,
    pub quad: QuadConfig,
    pub a_source: ASource,
}

impl VerifyOptions {
    pub fn new(level: Level, seed: u64) -> Self {
        VerifyOptions {
            level,
            seed,
            quad: QuadConfig::default(),
            a_source: ASource::Correct,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub elapsed_s: f64,
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{tag} {:<28} {} ({:.2}s)", self.name, self.detail, self.elapsed_s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifySummary {
    pub level: Level,
    pub seed: u64,
    pub checks: Vec<CheckResult>,
}

impl VerifySummary {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckResult> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

type Outcome = std::result::Result<String, String>;

fn timed(name: &'static str, check: impl FnOnce() -> Outcome) -> CheckResult {
    let started = Instant::now();
    let (passed, detail) = match check() {
        Ok(d) => (true, d),
        Err(d) => (false, d),
    };
    CheckResult {
        name,
        passed,
        detail,
        elapsed_s: started.elapsed().as_secs_f64(),
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

fn fail_on(e: Error) -> String {
    e.to_string()
}

pub fn run(opts: &VerifyOptions) -> VerifySummary {
    let mut checks = vec![
        timed("a_k identities", || check_a_palindromes(opts.a_source)),
        timed("f inversion symmetry", || check_inversion_symmetry(opts.seed)),
        timed("half-interval identity", || check_half_interval(&opts.quad)),
        timed("det L at d=2", || check_det_l_oracle(opts.seed)),
        timed("n=2 reduction", || check_n2_reduction(opts.seed)),
        timed("gamma chain", || check_gamma_chain(&opts.quad)),
        timed("bound sandwich", || check_sandwich(&opts.quad)),
    ];
    match opts.level {
        Level::Quick => {
            checks.push(timed("mc agreement (2e4)", || {
                check_mc_agreement(opts.seed, 20_000, &[2, 3, 5], &opts.quad)
            }));
        }
        Level::Full => {
            checks.push(timed("root representation", check_root_representation));
            let ds: Vec<usize> = (2..=10).collect();
            checks.push(timed("mc agreement (1e5)", || {
                check_mc_agreement(opts.seed, 100_000, &ds, &opts.quad)
            }));
            checks.push(timed("stability split (1e5)", || check_stability(opts.seed, 100_000)));
        }
    }
    VerifySummary {
        level: opts.level,
        seed: opts.seed,
        checks,
    }
}

pub fn check_a_palindromes(source: ASource) -> Outcome {
    for d in 2..=50 {
        check_a_identities(&source.coefficients(d), d).map_err(|e| format!("d={d}: {e}"))?;
    }
    Ok("exact for d = 2..50".into())
}

pub fn check_inversion_symmetry(seed: u64) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for d in 2..=20 {
        let ctx = DensityContext::new(d).map_err(fail_on)?;
        for _ in 0..100 {
            let t: f64 = rng.random_range(1e-3..=10.0);
            let e = rel_err(ctx.density_f(1.0 / t), t * t * ctx.density_f(t));
            worst = worst.max(e);
        }
    }
    if worst <= 1e-10 {
        Ok(format!("max rel err {worst:.1e}"))
    } else {
        Err(format!("max rel err {worst:.1e} > 1e-10"))
    }
}

pub fn check_half_interval(quad: &QuadConfig) -> Outcome {
    let mut worst = 0.0f64;
    for d in [2, 3, 5, 10, 20, 50] {
        let ctx = DensityContext::new(d).map_err(fail_on)?;
        let lower = e2d_with(&ctx, quad).map_err(fail_on)?.value / 2.0;
        let (upper, _) = upper_half_integral(&ctx, quad).map_err(fail_on)?;
        worst = worst.max((lower - upper).abs());
    }
    if worst <= 1e-8 {
        Ok(format!("max abs diff {worst:.1e}"))
    } else {
        Err(format!("max abs diff {worst:.1e} > 1e-8"))
    }
}

fn random_point(rng: &mut ChaCha8Rng, dims: usize) -> Vec<f64> {
    // log-uniform over [1e-3, 1e2] so both the origin and the tails are hit
    (0..dims).map(|_| 10f64.powf(rng.random_range(-3.0..2.0))).collect()
}

pub fn check_det_l_oracle(seed: u64) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xd2);
    let mut worst = 0.0f64;
    for n in 2..=4 {
        let ctx = KernelContext::new(GameSpec::new(n, 2).map_err(fail_on)?).map_err(fail_on)?;
        for _ in 0..100 {
            let t = random_point(&mut rng, n - 1);
            worst = worst.max(rel_err(ctx.l_matrix(&t).det(), det_l_closed_d2(n, &t)));
        }
    }
    if worst <= 1e-10 {
        Ok(format!("max rel err {worst:.1e}"))
    } else {
        Err(format!("max rel err {worst:.1e} > 1e-10"))
    }
}

pub fn check_n2_reduction(seed: u64) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x2);
    let mut worst = 0.0f64;
    for d in 2..=20 {
        let kernel = KernelContext::new(GameSpec::new(2, d).map_err(fail_on)?).map_err(fail_on)?;
        let density = DensityContext::new(d).map_err(fail_on)?;
        for _ in 0..50 {
            let t = random_point(&mut rng, 1);
            worst = worst.max(rel_err(
                kernel.integrand(&t),
                std::f64::consts::PI * density.density_f(t[0]),
            ));
        }
    }
    if worst <= 1e-10 {
        Ok(format!("max rel err {worst:.1e}"))
    } else {
        Err(format!("max rel err {worst:.1e} > 1e-10"))
    }
}

pub fn check_gamma_chain(quad: &QuadConfig) -> Outcome {
    let mut worst = 0.0f64;
    for n in 2..=4 {
        let got = e_nd_integrated(n, 2, quad).map_err(fail_on)?.value;
        worst = worst.max((got - e_n2_closed(n)).abs());
    }
    if worst <= 1e-4 {
        Ok(format!("max abs diff {worst:.1e} for n = 2..4"))
    } else {
        Err(format!("max abs diff {worst:.1e} > 1e-4"))
    }
}

pub fn check_sandwich(quad: &QuadConfig) -> Outcome {
    let mut violations = Vec::new();
    for d in 2..=100 {
        let e = e2d_with(&DensityContext::new(d).map_err(fail_on)?, quad)
            .map_err(fail_on)?
            .value;
        let (lo, hi) = bounds_e2d(d);
        if !(lo <= e && e <= hi) {
            violations.push(d);
        }
    }
    if violations.is_empty() {
        Ok("lower <= E(2,d) <= upper for d = 2..100".into())
    } else {
        Err(format!("violated at d = {violations:?}"))
    }
}

fn check_mc_agreement(seed: u64, samples: u64, ds: &[usize], quad: &QuadConfig) -> Outcome {
    let cfg = McConfig::new(samples, seed);
    let mut worst = 0.0f64;
    let mut bad = Vec::new();
    for &d in ds {
        let mc = mc_e2d_with(d, &cfg).map_err(fail_on)?;
        let reference = e2d_with(&DensityContext::new(d).map_err(fail_on)?, quad)
            .map_err(fail_on)?
            .value;
        let z = (mc.mean_count - reference).abs() / mc.std_err;
        worst = worst.max(z);
        if z > 3.0 {
            bad.push(format!("E(2,{d})"));
        }
    }
    for n in 2..=4 {
        let mc = mc_en2_with(n, &cfg).map_err(fail_on)?;
        let z = (mc.mean_count - e_n2_closed(n)).abs() / mc.std_err;
        worst = worst.max(z);
        if z > 3.0 {
            bad.push(format!("E({n},2)"));
        }
    }
    if bad.is_empty() {
        Ok(format!("max deviation {worst:.2} std errs"))
    } else {
        Err(format!("beyond 3 std errs: {}", bad.join(", ")))
    }
}

fn check_stability(seed: u64, samples: u64) -> Outcome {
    let cfg = McConfig::new(samples, seed);
    let mut parts = Vec::new();
    let mut ok = true;
    for d in [3, 5, 10] {
        let mc = mc_e2d_with(d, &cfg).map_err(fail_on)?;
        let frac = mc.stable_fraction.unwrap_or(f64::NAN);
        ok &= (frac - 0.5).abs() <= 0.01;
        parts.push(format!("d={d}: {frac:.4}"));
    }
    let detail = parts.join(", ");
    if ok {
        Ok(detail)
    } else {
        Err(format!("{detail} (expected 0.5 +- 0.01)"))
    }
}

pub fn check_root_representation() -> Outcome {
    let mut worst_f = 0.0f64;
    let mut worst_v = 0.0f64;
    for d in 2..=ROOT_FACTOR_MAX_D {
        let ctx = DensityContext::new(d).map_err(fail_on)?;
        let roots = m_roots(&ctx).map_err(fail_on)?;
        for i in 0..=40 {
            let t = i as f64 * 0.125;
            let direct = (2.0 * std::f64::consts::PI * ctx.density_f(t)).powi(2);
            worst_f = worst_f.max(rel_err(density_sq_from_roots(&roots, t), direct));
        }
        if !roots.is_empty() {
            let (product, leave_one_out) = vieta_sums(&roots);
            let target = ((d - 1) * (d - 1)) as f64;
            worst_v = worst_v.max(rel_err(product, 1.0)).max(rel_err(leave_one_out, target));
        }
    }
    let detail = format!("density rel err {worst_f:.1e}, vieta rel err {worst_v:.1e}");
    if worst_f <= 1e-6 && worst_v <= 1e-6 {
        Ok(detail)
    } else {
        Err(format!("{detail} > 1e-6"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn level_parses() {
        assert_eq!("quick".parse::<Level>().unwrap(), Level::Quick);
        assert_eq!("full".parse::<Level>().unwrap(), Level::Full);
        assert!("fast".parse::<Level>().is_err());
    }

    #[test]
    fn palindrome_check_passes_and_catches_sign_flip() {
        assert!(check_a_palindromes(ASource::Correct).is_ok());
        let err = check_a_palindromes(ASource::SignFlipped).unwrap_err();
        assert!(err.starts_with("d=2:"), "{err}");
    }

    #[test]
    fn deterministic_checks_pass() {
        assert!(check_inversion_symmetry(7).is_ok());
        assert!(check_det_l_oracle(7).is_ok());
        assert!(check_n2_reduction(7).is_ok());
        assert!(check_root_representation().is_ok());
    }

    #[test]
    fn quick_suite_with_mutation_reports_failure() {
        let mut opts = VerifyOptions::new(Level::Quick, 3);
        opts.a_source = ASource::SignFlipped;
        let summary = run(&opts);
        assert!(!summary.all_passed());
        let failed: Vec<_> = summary.failures().map(|c| c.name).collect();
        assert_eq!(failed, ["a_k identities"]);
    }
}
