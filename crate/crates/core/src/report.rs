use std::fmt;

use serde::{Deserialize, Serialize};

/// How an estimate of `E(n, d)` was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    ClosedForm,
    Quadrature,
    MonteCarlo,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::ClosedForm => "closed-form",
            Method::Quadrature => "quadrature",
            Method::MonteCarlo => "monte-carlo",
        })
    }
}

/// A computed value of `E(n, d)` with its provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub n: usize,
    pub d: usize,
    pub value: f64,
    pub method: Method,
    /// Absolute error estimate: quadrature error bound, two-level cubature
    /// difference, or Monte Carlo standard error. Zero for closed forms.
    pub err_estimate: f64,
    /// Integrand evaluations spent (quadrature) or samples drawn (Monte Carlo).
    pub evaluations: u64,
    /// Nodes per dimension for the primary and verification cubature levels.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nodes: Option<(usize, usize)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl EstimateReport {
    pub fn closed_form(n: usize, d: usize, value: f64) -> Self {
        EstimateReport {
            n,
            d,
            value,
            method: Method::ClosedForm,
            err_estimate: 0.0,
            evaluations: 0,
            nodes: None,
            seed: None,
        }
    }
}

impl fmt::Display for EstimateReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "E({},{}) = {:.2}  value={} method={} err_estimate={:.3e}",
            self.n, self.d, self.value, self.value, self.method, self.err_estimate
        )?;
        if let Some((hi, lo)) = self.nodes {
            write!(f, " nodes={hi}/{lo}")?;
        }
        if let Some(seed) = self.seed {
            write!(f, " seed={seed}")?;
        }
        Ok(())
    }
}
