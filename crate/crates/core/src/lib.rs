//! Structural model of how households split a fixed education budget among
//! their children.
//!
//! The crate is organised bottom-up:
//!
//! * [`model`] holds the structural parameters, the per-child return exponent,
//!   household utility and the allocation solver (intensive margin), plus the
//!   aversion-type draws that decide which children are educated at all
//!   (extensive margin) and the threshold algebra linking those draws to cost
//!   gaps.
//! * [`population`] generates synthetic households, reads and writes the
//!   household CSV format and fits the Beta law of relative ability.
//! * [`moments`] computes inequality statistics and the matched moment vector.
//! * [`regress`] contains OLS, household fixed-effects regressions and the
//!   gender / birth-order / ability decomposition.
//! * [`estimator`] is the simulated-method-of-moments estimator with bootstrap
//!   moment covariance and sandwich standard errors.
//! * [`recovery`] inverts the allocation map to recover ability pairs.
//! * [`counterfactual`] runs the three policy experiments and the distribution
//!   comparison utilities (ECDF, KS distance, dominance).

// `!(x > 0.0)` deliberately rejects NaN too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod counterfactual;
pub mod error;
pub mod estimator;
pub mod model;
pub mod moments;
pub mod population;
pub mod recovery;
pub mod regress;
pub mod rng;
pub mod stats;

pub use counterfactual::{GapDistribution, PolicySpec};
pub use error::{Error, Result};
pub use estimator::{EstimationConfig, EstimationResult};
pub use model::{Allocation, ChildSpec, HouseholdSpec, ParentEduc, Theta};
pub use moments::{InequalityStats, MomentVector, Stratum};
pub use population::{AbilityDist, ChildRecord, HouseholdRecord, PopulationConfig};
pub use recovery::RecoveredAbility;
pub use regress::{DecompositionShares, Margin, RegressionResult};

/// Default per-child cap on years of education.
pub const DEFAULT_Q_MAX: f64 = 21.0;
