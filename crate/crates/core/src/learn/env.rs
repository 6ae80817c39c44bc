use crate::bid_domain::StepBidCurve;
use crate::error::Result;
use crate::param_maps::{DpmpConfig, MapMode, UnitBoxAction};

/// What one period produced, for traces and metrics.
#[derive(Clone, Debug, PartialEq)]
pub struct StepInfo {
    pub t: usize,
    pub demand: f64,
    /// Price paid to the agent (uniform price or own-bus LMP).
    pub price: f64,
    pub dispatch: f64,
    pub profit: f64,
    /// Benchmark profit where one is defined and finite.
    pub oracle_profit: Option<f64>,
    pub curve: StepBidCurve,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

/// A single-agent episodic environment that consumes unit-box actions.
pub trait Env {
    fn obs_dim(&self) -> usize;
    fn segments(&self) -> usize;
    fn horizon(&self) -> usize;
    fn mode(&self) -> MapMode;
    fn map_config(&self) -> &DpmpConfig;
    /// Starts an episode whose exogenous randomness is fixed by `episode_seed`.
    fn reset(&mut self, episode_seed: u64) -> Result<Vec<f64>>;
    fn step(&mut self, u: &UnitBoxAction) -> Result<Transition>;
}
