//! Minima of branching random walks.
//!
//! - [`stepdist`]: step laws, their log-moment generating functions and samplers.
//! - [`ldnum`]: the tilt equation, regime classification and sharp tail asymptotics.
//! - [`brwsim`]: seeded tree simulation with exact, pruned and beam searches.
//! - [`pathlab`]: leading walks, cyclic rotations and chord-shape events.
//! - [`experiments`]: reproducible experiment runs with CSV rows and manifests.
//!
//! ```
//! use brwmin::ldnum::{analyze, Regime};
//! use brwmin::stepdist::StepSpec;
//!
//! let a = analyze(&StepSpec::Gaussian { mu: 0.0, sigma: 1.0 }, 2.0)?;
//! assert_eq!(a.regime, Regime::SharpLogCorrection);
//! let p = a.predictions.unwrap();
//! println!("γ = {:.6}, β = {:.4}", p.gamma, p.beta_brw);
//! # Ok::<(), brwmin::Error>(())
//! ```

pub mod brwsim;
pub mod error;
pub mod experiments;
pub mod ldnum;
pub mod pathlab;
pub mod rng;
pub mod stepdist;
pub mod util;

pub use error::{Error, Result};

// The guide's code blocks run as doctests through these modules.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/constants.md")]
    mod constants {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/paths.md")]
    mod paths {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
