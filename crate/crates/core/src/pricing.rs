//! Backward induction for the price process under a simple demand and the
//! associated pricing measure.
//!
//! On `[t_k, t_{k+1}]` the price is the ratio `E[f W_k | F_t] / E[W_k | F_t]`
//! with suffix weight
//!
//! ```text
//! W_k = exp{ gamma * (theta^k S_{t_{k+1}} + sum_{i>k} theta^i (S_{t_{i+1}} - S_{t_i})) }
//!     = exp{ gamma * sum_{j>k} S_{t_j} (theta^{j-1} - theta^j) },   theta^N = 0.
//! ```
//!
//! The sweep keeps `B = E[W | node]` in log form and the price `S = A / B`.
//! Inside an interval `B` is the plain conditional average of the children.
//! Crossing a partition time `t_j` multiplies the child's weight by
//! `exp{gamma S_{t_j} (theta^{j-1} - theta^j)}`: the `theta^j` half belongs to
//! the child ("own" weight), the `theta^{j-1}` half is applied on the edge by
//! the parent, which is the only node that knows the demand in force.
//!
//! Normalised edge weights are the transition probabilities of the pricing
//! measure, so `S` is a martingale under them by construction.

use rayon::prelude::*;

use crate::contract::{ClaimSpec, DemandTable, SimpleDemand, UtilityParams};
use crate::error::{Error, Result};
use crate::lattice::LatticeModel;

pub const DEFAULT_OVERFLOW_BUDGET: f64 = 700.0;

const PARALLEL_THRESHOLD: usize = 1 << 12;

#[derive(Debug, Clone, PartialEq)]
pub enum SurfaceLabel {
    ZeroDemand,
    UnderDemand { demand: String, scale: f64, gamma: f64 },
}

#[derive(Debug, Clone, Copy)]
pub struct PricingOptions {
    /// Largest allowed spread of child log-weights within one normalisation.
    pub overflow_budget: f64,
}

impl Default for PricingOptions {
    fn default() -> Self {
        Self { overflow_budget: DEFAULT_OVERFLOW_BUDGET }
    }
}

/// Per-node prices plus the log suffix weights that produced them.
#[derive(Debug, Clone)]
pub struct PriceSurface {
    label: SurfaceLabel,
    prices: Vec<Vec<f64>>,
    /// `ln B(node)`, zero at terminals and for zero-demand surfaces.
    log_norm: Vec<Vec<f64>>,
    /// `ln B(node)` minus the node's own `gamma theta^j S` at partition times.
    own_log_weight: Vec<Vec<f64>>,
}

impl PriceSurface {
    pub fn label(&self) -> &SurfaceLabel {
        &self.label
    }

    pub fn price(&self, step: usize, index: usize) -> f64 {
        self.prices[step][index]
    }

    pub fn prices(&self, step: usize) -> &[f64] {
        &self.prices[step]
    }

    pub fn root(&self) -> f64 {
        self.prices[0][0]
    }

    pub fn steps(&self) -> usize {
        self.prices.len() - 1
    }

    /// `ln B` where `B = E[W_k | node]`; `A = S * B`.
    pub fn log_suffix_weight(&self, step: usize, index: usize) -> f64 {
        self.log_norm[step][index]
    }

    /// `(A, B)` in linear scale. May overflow for large weights; prefer
    /// [`Self::log_suffix_weight`].
    pub fn suffix_weights(&self, step: usize, index: usize) -> (f64, f64) {
        let b = self.log_norm[step][index].exp();
        (self.prices[step][index] * b, b)
    }

    /// Returns a copy with one node price shifted, for fault-injection tests.
    pub fn with_perturbed_price(&self, step: usize, index: usize, delta: f64) -> Self {
        let mut out = self.clone();
        out.prices[step][index] += delta;
        out
    }

    fn check_matches(&self, demand: &SimpleDemand, gamma: Option<f64>) -> Result<()> {
        match &self.label {
            SurfaceLabel::UnderDemand { demand: id, gamma: g, .. }
                if *id == demand.fingerprint() && gamma.is_none_or(|x| x == *g) =>
            {
                Ok(())
            }
            other => Err(Error::InconsistentSurface(format!(
                "surface {other:?} was not priced under demand {demand}"
            ))),
        }
    }
}

/// Pricing-measure transition probabilities and conditional normalisers.
#[derive(Debug, Clone)]
pub struct MeasureDensity {
    /// `ln D(node)`, the conditional expectation of the suffix weight.
    log_norm: Vec<Vec<f64>>,
    /// `[p_H(down), p_H(up)]` for every non-terminal node.
    transitions: Vec<Vec<[f64; 2]>>,
    /// `dP^H/dP` per leaf, path trees only.
    terminal: Option<Vec<f64>>,
}

impl MeasureDensity {
    pub fn transition(&self, step: usize, index: usize) -> [f64; 2] {
        self.transitions[step][index]
    }

    pub fn log_normalizer(&self, step: usize, index: usize) -> f64 {
        self.log_norm[step][index]
    }

    pub fn terminal_density(&self) -> Option<&[f64]> {
        self.terminal.as_deref()
    }

    /// Product of `p_H / p` along a path given as moves from the root
    /// (`true` = up).
    pub fn path_density(&self, lattice: &LatticeModel, moves: &[bool]) -> f64 {
        let mut index = 0;
        let mut density = 1.0;
        for (step, &up) in moves.iter().enumerate() {
            let k = usize::from(up);
            density *= self.transitions[step][index][k] / lattice.transition_probabilities(step, index)[k];
            index = lattice.children(index)[k];
        }
        density
    }
}

/// `S^0_t = E[f | F_t]`.
pub fn price_zero_demand(lattice: &LatticeModel, claim: &ClaimSpec) -> Result<PriceSurface> {
    let steps = lattice.steps();
    let mut prices = vec![Vec::new(); steps + 1];
    prices[steps] = claim.terminal_values(lattice)?;
    for step in (0..steps).rev() {
        let next = &prices[step + 1];
        let row: Vec<f64> = (0..lattice.node_count(step))
            .map(|i| {
                let p = lattice.transition_probabilities(step, i);
                let [d, u] = lattice.children(i);
                p[0] * next[d] + p[1] * next[u]
            })
            .collect();
        prices[step] = row;
    }
    let zeros: Vec<Vec<f64>> = prices.iter().map(|r| vec![0.0; r.len()]).collect();
    Ok(PriceSurface {
        label: SurfaceLabel::ZeroDemand,
        prices,
        log_norm: zeros.clone(),
        own_log_weight: zeros,
    })
}

pub fn price_under_demand(
    lattice: &LatticeModel,
    claim: &ClaimSpec,
    demand: &SimpleDemand,
    utility: &UtilityParams,
) -> Result<PriceSurface> {
    price_under_demand_with(lattice, claim, demand, utility, PricingOptions::default())
}

struct NodeValue {
    price: f64,
    log_norm: f64,
    own: f64,
    range: f64,
}

pub fn price_under_demand_with(
    lattice: &LatticeModel,
    claim: &ClaimSpec,
    demand: &SimpleDemand,
    utility: &UtilityParams,
    options: PricingOptions,
) -> Result<PriceSurface> {
    let table = demand.table(lattice)?;
    let gamma = utility.gamma;
    let grid = lattice.grid();
    let steps = lattice.steps();

    let mut prices = vec![Vec::new(); steps + 1];
    let mut log_norm = vec![Vec::new(); steps + 1];
    let mut own = vec![Vec::new(); steps + 1];
    let terminal = claim.terminal_values(lattice)?;
    log_norm[steps] = vec![0.0; terminal.len()];
    own[steps] = vec![0.0; terminal.len()];
    prices[steps] = terminal;

    for step in (0..steps).rev() {
        let child_at_partition = grid.is_partition_step(step + 1);
        let at_partition = grid.is_partition_step(step) && step > 0;
        let next_prices = &prices[step + 1];
        let next_own = &own[step + 1];

        let node = |i: usize| -> NodeValue {
            let theta = table.leaving(step, i);
            let p = lattice.transition_probabilities(step, i);
            let children = lattice.children(i);
            let mut lw = [0.0; 2];
            for k in 0..2 {
                let c = children[k];
                lw[k] = p[k].ln() + next_own[c];
                if child_at_partition {
                    lw[k] += gamma * theta * next_prices[c];
                }
            }
            let hi = lw[0].max(lw[1]);
            let lo = lw[0].min(lw[1]);
            let w = [(lw[0] - hi).exp(), (lw[1] - hi).exp()];
            let total = w[0] + w[1];
            let price = (w[0] * next_prices[children[0]] + w[1] * next_prices[children[1]]) / total;
            let norm = hi + total.ln();
            let own = if at_partition { norm - gamma * theta * price } else { norm };
            NodeValue { price, log_norm: norm, own, range: hi - lo }
        };

        let n = lattice.node_count(step);
        let values: Vec<NodeValue> = if n >= PARALLEL_THRESHOLD {
            (0..n).into_par_iter().map(node).collect()
        } else {
            (0..n).map(node).collect()
        };

        if let Some(v) = values.iter().find(|v| !(v.range <= options.overflow_budget)) {
            return Err(Error::OverflowGuard { range: v.range, budget: options.overflow_budget, step });
        }
        prices[step] = values.iter().map(|v| v.price).collect();
        log_norm[step] = values.iter().map(|v| v.log_norm).collect();
        own[step] = values.iter().map(|v| v.own).collect();
    }

    Ok(PriceSurface {
        label: SurfaceLabel::UnderDemand {
            demand: demand.fingerprint(),
            scale: demand.scale(),
            gamma,
        },
        prices,
        log_norm,
        own_log_weight: own,
    })
}

/// Transition probabilities of the pricing measure, read off the suffix
/// weights of a surface priced under `demand`.
pub fn pricing_measure(
    lattice: &LatticeModel,
    surface: &PriceSurface,
    demand: &SimpleDemand,
    utility: &UtilityParams,
) -> Result<MeasureDensity> {
    surface.check_matches(demand, Some(utility.gamma))?;
    if surface.steps() != lattice.steps() {
        return Err(Error::InconsistentSurface("surface and lattice differ in step count".into()));
    }
    let table = demand.table(lattice)?;
    let gamma = utility.gamma;
    let grid = lattice.grid();
    let steps = lattice.steps();

    let mut transitions = Vec::with_capacity(steps);
    for step in 0..steps {
        let child_at_partition = grid.is_partition_step(step + 1);
        let row = (0..lattice.node_count(step))
            .map(|i| {
                let theta = table.leaving(step, i);
                let p = lattice.transition_probabilities(step, i);
                let children = lattice.children(i);
                let norm = surface.log_norm[step][i];
                let mut out = [0.0; 2];
                for k in 0..2 {
                    let c = children[k];
                    let mut lw = p[k].ln() + surface.own_log_weight[step + 1][c];
                    if child_at_partition {
                        lw += gamma * theta * surface.prices[step + 1][c];
                    }
                    out[k] = (lw - norm).exp();
                }
                out
            })
            .collect::<Vec<_>>();
        transitions.push(row);
    }

    let terminal = match lattice.kind() {
        crate::lattice::LatticeKind::PathTree => {
            let mut density = vec![1.0];
            for (step, row) in transitions.iter().enumerate() {
                let mut next = vec![0.0; lattice.node_count(step + 1)];
                for (i, &d) in density.iter().enumerate() {
                    let p = lattice.transition_probabilities(step, i);
                    let [down, up] = lattice.children(i);
                    next[down] = d * row[i][0] / p[0];
                    next[up] = d * row[i][1] / p[1];
                }
                density = next;
            }
            Some(density)
        }
        crate::lattice::LatticeKind::Recombining => None,
    };

    let log_norm = surface.log_norm[..steps].to_vec();
    Ok(MeasureDensity { log_norm, transitions, terminal })
}

/// Largest number of steps for which per-path outputs are enumerated.
pub const PATH_ENUMERATION_CAP: usize = crate::lattice::DEFAULT_STEP_CAP;

/// Market maker's terminal wealth `x - sum H dS^H` on every path, in
/// path-tree leaf order (binary path, first move most significant).
pub fn hedged_wealth(
    lattice: &LatticeModel,
    surface: &PriceSurface,
    demand: &SimpleDemand,
    initial_wealth: f64,
) -> Result<Vec<f64>> {
    surface.check_matches(demand, None)?;
    let table = demand.table(lattice)?;
    path_accumulate(lattice, PATH_ENUMERATION_CAP, initial_wealth, |step, node, child| {
        -table.leaving(step, node) * (surface.prices[step + 1][child] - surface.prices[step][node])
    })
}

/// Runs `acc += increment(step, node, child)` down every path of the lattice.
pub(crate) fn path_accumulate(
    lattice: &LatticeModel,
    cap: usize,
    start: f64,
    increment: impl Fn(usize, usize, usize) -> f64,
) -> Result<Vec<f64>> {
    let steps = lattice.steps();
    if steps > cap {
        return Err(Error::StepCapExceeded { steps, cap });
    }
    let mut paths: Vec<(usize, f64)> = vec![(0, start)];
    for step in 0..steps {
        let mut next = Vec::with_capacity(paths.len() * 2);
        for &(node, acc) in &paths {
            for child in lattice.children(node) {
                next.push((child, acc + increment(step, node, child)));
            }
        }
        paths = next;
    }
    Ok(paths.into_iter().map(|(_, acc)| acc).collect())
}

/// Demand table for a surface, checked against its label.
pub(crate) fn demand_table_for(
    lattice: &LatticeModel,
    surface: &PriceSurface,
    demand: &SimpleDemand,
) -> Result<DemandTable> {
    surface.check_matches(demand, None)?;
    demand.table(lattice)
}
