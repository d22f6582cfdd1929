//! First-order small-demand expansion of the price process and its residual.
//!
//! `S^{eps H}_t = S^0_t + eps * I_t + xi_t(eps)` with
//! `I_t = E[gamma * int_t^T H_u d<S^0>_u | F_t]`. The quadratic variation is
//! taken in its predictable form, the conditional variance of each `S^0` step.

use crate::contract::{ClaimSpec, SimpleDemand, UtilityParams};
use crate::error::{Error, Result};
use crate::lattice::LatticeModel;
use crate::pricing::{price_under_demand, price_zero_demand, PriceSurface};

#[derive(Debug, Clone)]
pub struct ExpansionSurface {
    zero_demand: PriceSurface,
    /// `I(node)`.
    first_order: Vec<Vec<f64>>,
    /// `q(node) = sum_c p(c) (S^0(c) - S^0(node))^2`, empty at terminals.
    quadratic_variation: Vec<Vec<f64>>,
    /// `gamma * H(node+) * q(node)`, the per-node contribution to `I`.
    increments: Vec<Vec<f64>>,
}

impl ExpansionSurface {
    pub fn first_order(&self, step: usize, index: usize) -> f64 {
        self.first_order[step][index]
    }

    pub fn first_order_row(&self, step: usize) -> &[f64] {
        &self.first_order[step]
    }

    pub fn root(&self) -> f64 {
        self.first_order[0][0]
    }

    pub fn quadratic_variation(&self, step: usize, index: usize) -> f64 {
        self.quadratic_variation[step][index]
    }

    pub fn increment(&self, step: usize, index: usize) -> f64 {
        self.increments[step][index]
    }

    pub fn zero_demand(&self) -> &PriceSurface {
        &self.zero_demand
    }

    pub fn steps(&self) -> usize {
        self.first_order.len() - 1
    }
}

pub fn expansion_term(
    lattice: &LatticeModel,
    claim: &ClaimSpec,
    demand: &SimpleDemand,
    utility: &UtilityParams,
) -> Result<ExpansionSurface> {
    let table = demand.table(lattice)?;
    let s0 = price_zero_demand(lattice, claim)?;
    let steps = lattice.steps();

    let mut first_order = vec![Vec::new(); steps + 1];
    let mut quadratic_variation = vec![Vec::new(); steps + 1];
    let mut increments = vec![Vec::new(); steps + 1];
    first_order[steps] = vec![0.0; lattice.node_count(steps)];

    for step in (0..steps).rev() {
        let n = lattice.node_count(step);
        let mut i_row = Vec::with_capacity(n);
        let mut q_row = Vec::with_capacity(n);
        let mut inc_row = Vec::with_capacity(n);
        for i in 0..n {
            let p = lattice.transition_probabilities(step, i);
            let children = lattice.children(i);
            let s = s0.price(step, i);
            let q: f64 = (0..2)
                .map(|k| {
                    let d = s0.price(step + 1, children[k]) - s;
                    p[k] * d * d
                })
                .sum();
            let inc = utility.gamma * table.leaving(step, i) * q;
            let carry: f64 = (0..2).map(|k| p[k] * first_order[step + 1][children[k]]).sum();
            i_row.push(inc + carry);
            q_row.push(q);
            inc_row.push(inc);
        }
        first_order[step] = i_row;
        quadratic_variation[step] = q_row;
        increments[step] = inc_row;
    }

    Ok(ExpansionSurface { zero_demand: s0, first_order, quadratic_variation, increments })
}

/// Residual `xi(eps) = S^{eps H} - S^0 - eps I` on every node for one `eps`.
#[derive(Debug, Clone)]
pub struct ResidualRow {
    pub epsilon: f64,
    pub priced_root: f64,
    pub expansion_root: f64,
    pub xi: Vec<Vec<f64>>,
}

impl ResidualRow {
    pub fn xi_root(&self) -> f64 {
        self.xi[0][0]
    }

    pub fn ratio_root(&self) -> f64 {
        self.xi_root() / self.epsilon
    }

    pub fn ratio(&self, step: usize, index: usize) -> f64 {
        self.xi[step][index] / self.epsilon
    }
}

pub fn residual(
    lattice: &LatticeModel,
    claim: &ClaimSpec,
    demand: &SimpleDemand,
    utility: &UtilityParams,
    epsilons: &[f64],
) -> Result<Vec<ResidualRow>> {
    if let Some(&bad) = epsilons.iter().find(|e| !(e.is_finite() && **e > 0.0)) {
        return Err(Error::InvalidParameter(format!("epsilon must be positive, got {bad}")));
    }
    let expansion = expansion_term(lattice, claim, demand, utility)?;
    epsilons
        .iter()
        .map(|&eps| signed_residual(lattice, claim, demand, utility, &expansion, eps))
        .collect()
}

/// As [`residual`] for a single `eps` of either sign, reusing an expansion.
pub fn signed_residual(
    lattice: &LatticeModel,
    claim: &ClaimSpec,
    demand: &SimpleDemand,
    utility: &UtilityParams,
    expansion: &ExpansionSurface,
    epsilon: f64,
) -> Result<ResidualRow> {
    let priced = price_under_demand(lattice, claim, &demand.scaled(epsilon), utility)?;
    let s0 = expansion.zero_demand();
    let xi = (0..=lattice.steps())
        .map(|k| {
            (0..lattice.node_count(k))
                .map(|i| priced.price(k, i) - s0.price(k, i) - epsilon * expansion.first_order(k, i))
                .collect()
        })
        .collect();
    Ok(ResidualRow {
        epsilon,
        priced_root: priced.root(),
        expansion_root: s0.root() + epsilon * expansion.root(),
        xi,
    })
}
