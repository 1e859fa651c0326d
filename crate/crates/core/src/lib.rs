//! Expected number of internal equilibria of random evolutionary games.
//!
//! A `d`-player game with `n` strategies and i.i.d. Gaussian payoff
//! differences has its internal equilibria at the strictly positive roots of
//! a system of `n - 1` random polynomials of degree `d - 1`. This crate
//! computes the mean root count `E(n, d)` several independent ways:
//!
//! * [`density2`]: the two-strategy density `f(t)`, its special values and
//!   symmetry laws, and the analytic bounds on `E(2, d)`;
//! * [`kostlan`]: the general Kostlan-type integral over `[0, inf)^(n-1)`
//!   together with the closed form `E(n, 2) = 2^(1-n)`;
//! * [`oracle`]: Monte Carlo sampling of games with exact-sign root counting;
//! * [`quad`]: the integration engines the first two rely on.
//!
//! Data-parallel loops (cubature nodes, Monte Carlo samples) run on rayon when
//! the `parallel` feature is enabled and sequentially otherwise; see [`exec`].

pub mod cli;
pub mod density2;
pub mod error;
pub mod exec;
pub mod game_model;
pub mod kostlan;
pub mod oracle;
pub mod quad;
pub mod report;
pub mod verify;

pub use error::{Error, Result};
pub use exec::Execution;
pub use game_model::{CoeffSystem, GameSpec, MultiIndex};
pub use quad::QuadConfig;
pub use report::{EstimateReport, Method};
