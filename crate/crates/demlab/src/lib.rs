//! Statistics for digital experimentation.
//!
//! The crate is organised by concern:
//!
//! * [`distkit`]: special functions and the distributions the rest of the crate uses.
//! * [`rulu`]: ranking under lower uncertainty, the value of cutting estimation noise
//!   when picking the top `M` of `N` candidate propositions.
//! * [`testkit`]: fixed-horizon tests, effect sizes and design calculators.
//! * [`seqkit`]: SPRT, mixture SPRT and Bayes-factor monitors with checkpoint replay.
//! * [`clusterse`]: standard errors under user-level randomisation via the Poisson bootstrap.
//! * [`pse`]: evaluation of personalisation-strategy experiment setups.
//! * [`simlab`]: seeded Monte Carlo helpers shared by the verification routines.

pub mod clusterse;
pub mod distkit;
pub mod error;
pub mod pse;
pub mod rulu;
pub mod seqkit;
pub mod simlab;
pub mod testkit;

pub use error::{Error, Result};
