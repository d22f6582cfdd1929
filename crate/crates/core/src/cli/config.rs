//! Experiment configuration: a single JSON document.

use serde::{Deserialize, Serialize};

use crate::analytic::BachelierSpec;
use crate::contract::{ClaimSpec, Expression, SimpleDemand, UtilityParams};
use crate::error::{Error, Result};
use crate::lattice::{LatticeKind, LatticeModel, TimeGrid, DEFAULT_STEP_CAP};

pub const CONFIG_SCHEMA: &str = "price-impact/config/v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_schema")]
    pub schema: String,
    pub model: ModelSection,
    pub grid: GridSection,
    pub demand: DemandSection,
    pub utility: UtilitySection,
    #[serde(default)]
    pub run: RunSection,
}

fn default_schema() -> String {
    CONFIG_SCHEMA.to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    /// Payoff expression in `t` and `b`.
    pub payoff: String,
    #[serde(default)]
    pub payoff_bound: Option<f64>,
    /// Slope of the Bachelier claim `zeta * b`, used by `converge`.
    #[serde(default)]
    pub zeta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub horizon: f64,
    /// Demand partition; defaults to `[0, horizon]`.
    #[serde(default)]
    pub partition: Option<Vec<f64>>,
    pub substeps: usize,
    pub lattice: LatticeKind,
    #[serde(default)]
    pub step_cap: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ThetaSpec {
    Constant(f64),
    Single(String),
    PerInterval(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemandSection {
    pub theta: ThetaSpec,
    #[serde(default)]
    pub bound: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UtilitySection {
    pub gamma: f64,
    #[serde(default)]
    pub initial_wealth: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    #[serde(default)]
    pub epsilons: Vec<f64>,
    #[serde(default)]
    pub step_ladder: Vec<usize>,
    #[serde(default)]
    pub convergence_tolerance: Option<f64>,
    #[serde(default)]
    pub order_range: Option<[f64; 2]>,
    #[serde(default)]
    pub perturbation: Option<f64>,
    #[serde(default)]
    pub density_samples: Option<usize>,
    #[serde(default)]
    pub seed: u64,
}

/// A config resolved into model objects.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub lattice: LatticeModel,
    pub claim: ClaimSpec,
    pub demand: SimpleDemand,
    pub utility: UtilityParams,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> std::result::Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn partition(&self) -> Vec<f64> {
        self.grid.partition.clone().unwrap_or_else(|| vec![0.0, self.grid.horizon])
    }

    pub fn demand(&self) -> Result<SimpleDemand> {
        let partition = self.partition();
        match &self.demand.theta {
            ThetaSpec::Constant(v) => SimpleDemand::new(partition, vec![Expression::constant(*v)], self.demand.bound),
            ThetaSpec::Single(s) => SimpleDemand::parse(partition, &[s.as_str()], self.demand.bound),
            ThetaSpec::PerInterval(list) => {
                let refs: Vec<&str> = list.iter().map(String::as_str).collect();
                SimpleDemand::parse(partition, &refs, self.demand.bound)
            }
        }
    }

    pub fn build(&self) -> Result<Experiment> {
        if self.schema != CONFIG_SCHEMA {
            return Err(Error::InvalidParameter(format!(
                "unsupported config schema `{}`, expected `{CONFIG_SCHEMA}`",
                self.schema
            )));
        }
        let claim = ClaimSpec::parse(&self.model.payoff, self.model.payoff_bound)?;
        let demand = self.demand()?;
        let utility = UtilityParams::new(self.utility.gamma, self.utility.initial_wealth)?;
        let grid = TimeGrid::new(self.grid.horizon, self.partition(), self.grid.substeps)?;
        let cap = self.grid.step_cap.unwrap_or(DEFAULT_STEP_CAP);
        let lattice = LatticeModel::build(grid, self.grid.lattice, cap)?;
        if let Some(&bad) = self.run.epsilons.iter().find(|e| !(e.is_finite() && **e > 0.0)) {
            return Err(Error::InvalidParameter(format!("epsilon ladder entries must be positive, got {bad}")));
        }
        Ok(Experiment { lattice, claim, demand, utility })
    }

    /// Bachelier parameters for the convergence study: needs `model.zeta`
    /// and a demand that is one constant on every interval.
    pub fn bachelier(&self) -> Result<BachelierSpec> {
        let zeta = self
            .model
            .zeta
            .ok_or_else(|| Error::InvalidParameter("model.zeta is required for a convergence study".into()))?;
        let theta = match &self.demand.theta {
            ThetaSpec::Constant(v) => *v,
            ThetaSpec::Single(s) => constant_value(s)?,
            ThetaSpec::PerInterval(list) => {
                let values = list.iter().map(|s| constant_value(s)).collect::<Result<Vec<_>>>()?;
                match values.split_first() {
                    Some((first, rest)) if rest.iter().all(|v| v == first) => *first,
                    _ => {
                        return Err(Error::InvalidParameter(
                            "convergence study needs the same constant theta on every interval".into(),
                        ))
                    }
                }
            }
        };
        BachelierSpec::new(zeta, theta, self.utility.gamma, self.grid.horizon)
    }
}

fn constant_value(src: &str) -> Result<f64> {
    let expr = Expression::parse(src)?;
    if expr.references_state() || contains_time(&expr) {
        return Err(Error::InvalidParameter(format!("theta `{src}` is not a constant")));
    }
    Ok(expr.evaluate(0.0, 0.0)?)
}

fn contains_time(e: &Expression) -> bool {
    match e {
        Expression::Time => true,
        Expression::Number(_) | Expression::State => false,
        Expression::Neg(x) => contains_time(x),
        Expression::Binary(_, l, r) => contains_time(l) || contains_time(r),
        Expression::Call(_, args) => args.iter().any(contains_time),
    }
}
