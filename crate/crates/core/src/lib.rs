//! Monotone stepwise bid parameterizations and the market machinery used to
//! test them.
//!
//! The crate is organized bottom-up:
//!
//! - [`bid_domain`]: feasible step bid curves and their validation.
//! - [`param_maps`]: the four action-to-bid mappings (DPMP, SORT, CLIP, PROJECT),
//!   the DPMP inverse and its analytic Jacobian determinant.
//! - [`nc_verify`]: Monte Carlo and finite-difference diagnostics for the three
//!   necessary conditions (no atoms, injectivity, nonsingular Jacobian).
//! - [`market_single`]: the single-node uniform-price benchmark market.
//! - [`oracle`]: enumerated optimal profit, brute-force best response, gap metric.
//! - [`learn`]: MLP networks with hand-written backprop, Adam, PPO, A2C and DDPG.
//! - [`lp`]: dense bounded-variable simplex with dual extraction.
//! - [`market_network`]: the 39-bus network market with SCED and LMPs.
//! - [`validity`]: gap statistics and the exploitability harness.

pub mod bid_domain;
pub mod error;
pub mod learn;
pub mod lp;
pub mod market_network;
pub mod market_single;
pub mod nc_verify;
pub mod oracle;
pub mod param_maps;
pub mod rng;
pub mod validity;

pub use bid_domain::{FeasibilityReport, StepBidCurve, Violation};
pub use error::{Error, Result};
pub use learn::{Algorithm, LearnerConfig, PolicyParameters};
pub use market_network::{DispatchResult, NetworkCase, ShiftFactorMatrix};
pub use market_single::{ClearingOutcome, CostModel, DemandProcess, OpponentLadder};
pub use oracle::OracleResult;
pub use param_maps::{DpmpConfig, DualPositiveAction, MapMode, NonRedundantCoords, UnitBoxAction};
pub use validity::{ExploitabilityReport, GapStatistics};
