//! Numerical integration: adaptive Gauss-Kronrod in 1D and tensor-product
//! Gauss-Legendre over `[0, inf)^dims`.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};
use crate::exec::{map_range, pairwise_sum, Execution};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadConfig {
    /// Relative tolerance of the 1D adaptive rule.
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// 1D bisection depth cap: no subinterval narrower than `(b-a)/2^max_depth`.
    pub max_depth: u32,
    pub nodes_per_dim: usize,
    /// Coarser level used for the two-level cubature error estimate.
    pub verify_nodes_per_dim: usize,
    /// Relative tolerance for the two-level cubature difference.
    pub cubature_rel_tol: f64,
    /// Endpoint grading `q` of the semi-infinite map
    /// `t = (1-v)^(-q) - 1`; `q = 1` is the plain `u/(1-u)` map.
    pub grading: u32,
    pub exec: Execution,
}

impl Default for QuadConfig {
    fn default() -> Self {
        QuadConfig {
            rel_tol: 1e-8,
            abs_tol: 1e-10,
            max_depth: 30,
            nodes_per_dim: 80,
            verify_nodes_per_dim: 60,
            cubature_rel_tol: 1e-3,
            grading: 2,
            exec: Execution::default(),
        }
    }
}

impl QuadConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |x: f64| x > 0.0 && x.is_finite();
        if !positive(self.rel_tol) || !positive(self.abs_tol) || !positive(self.cubature_rel_tol) {
            return Err(Error::invalid("quadrature tolerances must be positive"));
        }
        if self.max_depth == 0 || self.max_depth > 60 {
            return Err(Error::invalid("max_depth must be in 1..=60"));
        }
        if self.verify_nodes_per_dim == 0 || self.verify_nodes_per_dim >= self.nodes_per_dim {
            return Err(Error::invalid(
                "verify_nodes_per_dim must be positive and below nodes_per_dim",
            ));
        }
        if self.grading == 0 {
            return Err(Error::invalid("grading must be at least 1"));
        }
        Ok(())
    }

    pub fn with_nodes(mut self, nodes: usize, verify: usize) -> Self {
        self.nodes_per_dim = nodes;
        self.verify_nodes_per_dim = verify;
        self
    }
}

// Gauss-Kronrod 7/15 abscissae and weights (QUADPACK qk15).
#[allow(clippy::excessive_precision)]
const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_838_258_730,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.0,
];
#[allow(clippy::excessive_precision)]
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];
#[allow(clippy::excessive_precision)]
const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];

/// One 15-point Kronrod panel. Returns the Kronrod value and `|K - G|`.
fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kron = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let dx = h * XGK[j];
        let pair = f(c - dx) + f(c + dx);
        kron += WGK[j] * pair;
        if j % 2 == 1 {
            gauss += WG[j / 2] * pair;
        }
    }
    (kron * h, ((kron - gauss) * h).abs())
}

#[derive(Debug, Clone, Copy)]
struct Panel {
    a: f64,
    b: f64,
    depth: u32,
    value: f64,
    err: f64,
}

impl PartialEq for Panel {
    fn eq(&self, other: &Self) -> bool {
        self.err.total_cmp(&other.err) == Ordering::Equal
    }
}
impl Eq for Panel {}
impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Panel {
    fn cmp(&self, other: &Self) -> Ordering {
        self.err.total_cmp(&other.err)
    }
}

/// Globally adaptive Gauss-Kronrod integration of `f` over `[a, b]`.
///
/// The panel with the largest error is bisected until the summed error is
/// below `max(rel_tol * |value|, abs_tol)`. Returns `(value, err_estimate)`.
pub fn integrate_1d<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, cfg: &QuadConfig) -> Result<(f64, f64)> {
    cfg.validate()?;
    if !(a < b) || !a.is_finite() || !b.is_finite() {
        return Err(Error::invalid(format!("need finite a < b, got [{a}, {b}]")));
    }
    let panel = |a: f64, b: f64, depth: u32| -> Result<Panel> {
        let (value, err) = gk15(&f, a, b);
        if !value.is_finite() {
            return Err(Error::Domain {
                node: vec![0.5 * (a + b)],
                value,
            });
        }
        Ok(Panel {
            a,
            b,
            depth,
            value,
            err,
        })
    };

    let mut heap = BinaryHeap::new();
    heap.push(panel(a, b, 0)?);
    // panels that hit the depth cap without meeting their share of the tolerance
    let mut frozen: Vec<Panel> = Vec::new();
    loop {
        let total_value: f64 = heap.iter().chain(&frozen).map(|p| p.value).sum();
        let total_err: f64 = heap.iter().chain(&frozen).map(|p| p.err).sum();
        let tol = (cfg.rel_tol * total_value.abs()).max(cfg.abs_tol);
        if total_err <= tol {
            return Ok((total_value, total_err));
        }
        let Some(worst) = heap.pop() else {
            return Err(Error::FailedConvergence {
                value: total_value,
                err_estimate: total_err,
                detail: format!("bisection depth {} exhausted", cfg.max_depth),
            });
        };
        if worst.depth >= cfg.max_depth {
            frozen.push(worst);
            continue;
        }
        let mid = 0.5 * (worst.a + worst.b);
        heap.push(panel(worst.a, mid, worst.depth + 1)?);
        heap.push(panel(mid, worst.b, worst.depth + 1)?);
    }
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`, nodes ascending.
pub fn gauss_legendre(m: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(m > 0, "Gauss-Legendre rule needs at least one node");
    let mut x = vec![0.0; m];
    let mut w = vec![0.0; m];
    for i in 0..m.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (m as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(m, z);
            dp = d;
            let dz = p / d;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(m, z);
        if d != 0.0 {
            dp = d;
        }
        let weight = 2.0 / ((1.0 - z * z) * dp * dp);
        x[i] = -z;
        x[m - 1 - i] = z;
        w[i] = weight;
        w[m - 1 - i] = weight;
    }
    (x, w)
}

fn legendre_with_derivative(m: usize, z: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, z);
    if m == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=m {
        let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    let d = m as f64 * (z * p1 - p0) / (z * z - 1.0);
    (p1, d)
}

/// Nodes `t` on `[0, inf)` with weights including the map Jacobian.
/// The map is `t = (1-v)^(-q) - 1` over `v` in `(0, 1)`.
pub fn semi_infinite_rule(m: usize, grading: u32) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = gauss_legendre(m);
    let q = grading as i32;
    x.iter()
        .zip(&w)
        .map(|(&xi, &wi)| {
            let v = 0.5 * (xi + 1.0);
            let s = 0.5 * (1.0 - xi); // 1 - v without cancellation
            let t = s.powi(-q) - 1.0;
            let jac = q as f64 * s.powi(-q - 1);
            debug_assert!(v > 0.0 && v < 1.0);
            (t, 0.5 * wi * jac)
        })
        .unzip()
}

/// Result of a two-level tensor cubature.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cubature {
    pub value: f64,
    pub coarse_value: f64,
    pub err_estimate: f64,
    pub evaluations: u64,
}

/// Weighted values of one outer node, or the first non-finite sample.
type Slab = std::result::Result<Vec<f64>, (Vec<f64>, f64)>;

/// Single-level tensor Gauss-Legendre sum over `[0, inf)^dims`.
pub fn tensor_semi_infinite<F>(f: &F, dims: usize, m: usize, grading: u32, exec: Execution) -> Result<f64>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    if !(1..=3).contains(&dims) {
        return Err(Error::invalid(format!(
            "cubature supports 1..=3 dimensions, got {dims}"
        )));
    }
    let (t, w) = semi_infinite_rule(m, grading);
    let inner = m.pow(dims as u32 - 1);
    // One task per outer node; each returns its inner slice of weighted values.
    let slabs: Vec<Slab> = map_range(exec, m, |i0| {
        let mut point = vec![0.0; dims];
        let mut vals = Vec::with_capacity(inner);
        for flat in 0..inner {
            point[0] = t[i0];
            let mut weight = w[i0];
            let mut rest = flat;
            for slot in point.iter_mut().skip(1).rev() {
                let idx = rest % m;
                rest /= m;
                *slot = t[idx];
                weight *= w[idx];
            }
            let fx = f(&point);
            if !fx.is_finite() {
                return Err((point, fx));
            }
            vals.push(weight * fx);
        }
        Ok(vals)
    });
    let mut all = Vec::with_capacity(m * inner);
    for slab in slabs {
        match slab {
            Ok(v) => all.extend(v),
            Err((node, value)) => return Err(Error::Domain { node, value }),
        }
    }
    Ok(pairwise_sum(&all))
}

/// Integrates `f` over `[0, inf)^dims` (`dims` in 1..=3) with tensor
/// Gauss-Legendre on the mapped unit cube, at `nodes_per_dim` and at
/// `verify_nodes_per_dim`. The error estimate is the difference between the
/// two levels.
pub fn integrate_semiinf_nd<F>(f: F, dims: usize, cfg: &QuadConfig) -> Result<Cubature>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    cfg.validate()?;
    let fine = tensor_semi_infinite(&f, dims, cfg.nodes_per_dim, cfg.grading, cfg.exec)?;
    let coarse = tensor_semi_infinite(&f, dims, cfg.verify_nodes_per_dim, cfg.grading, cfg.exec)?;
    let err = (fine - coarse).abs();
    let evaluations = (cfg.nodes_per_dim.pow(dims as u32) + cfg.verify_nodes_per_dim.pow(dims as u32)) as u64;
    if err > (cfg.cubature_rel_tol * fine.abs()).max(cfg.abs_tol) {
        return Err(Error::FailedConvergence {
            value: fine,
            err_estimate: err,
            detail: format!(
                "{} nodes/dim gave {fine}, {} nodes/dim gave {coarse}",
                cfg.nodes_per_dim, cfg.verify_nodes_per_dim
            ),
        });
    }
    Ok(Cubature {
        value: fine,
        coarse_value: coarse,
        err_estimate: err,
        evaluations,
    })
}
