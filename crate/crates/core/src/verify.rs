//! Checks that a priced surface is an equilibrium: martingale identities
//! under the pricing measure, the explicit density of the pricing measure,
//! first-order optimality of the market maker's position, and convergence of
//! the lattice Bachelier price to its closed form.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};

use crate::analytic::{bachelier_price, BachelierSpec};
use crate::contract::{BinaryOp, ClaimSpec, Expression, SimpleDemand, UtilityParams};
use crate::error::{Error, Result};
use crate::lattice::{LatticeKind, LatticeModel, TimeGrid};
use crate::pricing::{
    demand_table_for, price_under_demand, pricing_measure, MeasureDensity, PriceSurface,
};

pub const IDENTITY_TOLERANCE: f64 = 1e-12;
pub const FINITE_DIFFERENCE_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerificationReport {
    pub check: String,
    pub max_violation: f64,
    pub location: Option<String>,
    pub tolerance: f64,
    pub pass: bool,
    pub metadata: BTreeMap<String, Value>,
}

impl VerificationReport {
    fn new(check: &str, violation: f64, location: Option<String>, tolerance: f64) -> Self {
        Self {
            check: check.to_string(),
            max_violation: violation,
            location,
            tolerance,
            pass: violation <= tolerance,
            metadata: BTreeMap::new(),
        }
    }

    pub fn with(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.metadata.insert(key.to_string(), value.into());
        self
    }
}

/// Running maximum that remembers where it was attained. NaN counts as
/// an infinite violation.
#[derive(Default)]
struct Worst {
    value: f64,
    at: Option<(usize, usize)>,
}

impl Worst {
    fn update(&mut self, v: f64, step: usize, index: usize) {
        let v = if v.is_nan() { f64::INFINITY } else { v };
        if v > self.value || self.at.is_none() {
            self.value = v;
            self.at = Some((step, index));
        }
    }

    fn label(&self, lattice: &LatticeModel) -> Option<String> {
        self.at.map(|(s, i)| lattice.node_label(s, i))
    }
}

fn lattice_metadata(report: VerificationReport, lattice: &LatticeModel) -> VerificationReport {
    report
        .with("lattice", json!(lattice.kind()))
        .with("steps", lattice.steps())
        .with("nodes", lattice.total_nodes())
}

/// `sum_c p_H(c) S(c) = S(node)` and `sum_c p_H(c) H dS(c) = 0` at every
/// non-terminal node.
pub fn check_martingale(
    lattice: &LatticeModel,
    surface: &PriceSurface,
    density: &MeasureDensity,
    demand: &SimpleDemand,
) -> Result<VerificationReport> {
    if surface.steps() != lattice.steps() {
        return Err(Error::InconsistentInputs("surface and lattice differ in step count".into()));
    }
    let table = demand_table_for(lattice, surface, demand)
        .map_err(|e| Error::InconsistentInputs(e.to_string()))?;
    let mut worst = Worst::default();
    for step in 0..lattice.steps() {
        for i in 0..lattice.node_count(step) {
            let q = density.transition(step, i);
            let [d, u] = lattice.children(i);
            let s = surface.price(step, i);
            let (sd, su) = (surface.price(step + 1, d), surface.price(step + 1, u));
            let price_gap = q[0] * sd + q[1] * su - s;
            let theta = table.leaving(step, i);
            let gain = q[0] * theta * (sd - s) + q[1] * theta * (su - s);
            worst.update(price_gap.abs().max(gain.abs()), step, i);
        }
    }
    Ok(lattice_metadata(
        VerificationReport::new("martingale", worst.value, worst.label(lattice), IDENTITY_TOLERANCE),
        lattice,
    ))
}

/// Pricing-measure transitions are positive and sum to one at every node.
pub fn check_equivalence(lattice: &LatticeModel, density: &MeasureDensity) -> VerificationReport {
    let mut worst = Worst::default();
    for step in 0..lattice.steps() {
        for i in 0..lattice.node_count(step) {
            let q = density.transition(step, i);
            let v = if q[0] > 0.0 && q[1] > 0.0 { (q[0] + q[1] - 1.0).abs() } else { f64::INFINITY };
            worst.update(v, step, i);
        }
    }
    lattice_metadata(
        VerificationReport::new("measure_equivalence", worst.value, worst.label(lattice), IDENTITY_TOLERANCE),
        lattice,
    )
}

/// Paths whose densities are compared when a lattice has too many to list.
pub const DEFAULT_DENSITY_SAMPLES: usize = 512;
const FULL_ENUMERATION_STEPS: usize = 16;

/// Compares the product of `p_H / p` along each path with the explicit
/// density `exp{gamma sum theta dS} / E[exp{gamma sum theta dS}]`, relative
/// error. The normaliser is accumulated by a forward pass over the lattice.
/// Path trees and small lattices check every path; larger recombining
/// lattices check `samples` seeded random paths.
pub fn check_terminal_density(
    lattice: &LatticeModel,
    surface: &PriceSurface,
    density: &MeasureDensity,
    demand: &SimpleDemand,
    utility: &UtilityParams,
    samples: usize,
    seed: u64,
) -> Result<VerificationReport> {
    let table = demand_table_for(lattice, surface, demand)
        .map_err(|e| Error::InconsistentInputs(e.to_string()))?;
    let gamma = utility.gamma;
    let steps = lattice.steps();
    let exponent = |step: usize, node: usize, child: usize| {
        gamma * table.leaving(step, node) * (surface.price(step + 1, child) - surface.price(step, node))
    };

    // log E[exp{exponent}] by forward accumulation
    let mut log_mass = vec![0.0f64];
    for step in 0..steps {
        let mut next = vec![f64::NEG_INFINITY; lattice.node_count(step + 1)];
        for (i, &lm) in log_mass.iter().enumerate() {
            let p = lattice.transition_probabilities(step, i);
            for (k, c) in lattice.children(i).into_iter().enumerate() {
                next[c] = log_add(next[c], lm + p[k].ln() + exponent(step, i, c));
            }
        }
        log_mass = next;
    }
    let log_z = log_mass.iter().fold(f64::NEG_INFINITY, |acc, &v| log_add(acc, v));

    let path_count_log2 = steps;
    let exhaustive = lattice.kind() == LatticeKind::PathTree || steps <= FULL_ENUMERATION_STEPS;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let paths: Vec<Vec<bool>> = if exhaustive {
        (0..1usize << path_count_log2)
            .map(|bits| (0..steps).map(|s| (bits >> (steps - 1 - s)) & 1 == 1).collect())
            .collect()
    } else {
        (0..samples).map(|_| (0..steps).map(|_| rng.gen::<bool>()).collect()).collect()
    };

    let mut worst = Worst::default();
    for (n, moves) in paths.iter().enumerate() {
        let mut node = 0;
        let mut total = 0.0;
        for (step, &up) in moves.iter().enumerate() {
            let child = lattice.children(node)[usize::from(up)];
            total += exponent(step, node, child);
            node = child;
        }
        let explicit = (total - log_z).exp();
        let product = match (exhaustive, density.terminal_density()) {
            (true, Some(leaves)) => leaves[n],
            _ => density.path_density(lattice, moves),
        };
        worst.update((product / explicit - 1.0).abs(), steps, n);
    }
    let location = worst.at.map(|(_, n)| {
        paths[n].iter().map(|&up| if up { 'u' } else { 'd' }).collect::<String>()
    });
    Ok(lattice_metadata(
        VerificationReport::new("terminal_density", worst.value, location, IDENTITY_TOLERANCE),
        lattice,
    )
    .with("paths_checked", paths.len())
    .with("exhaustive", exhaustive))
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

#[derive(Debug, Clone, Copy, Default)]
pub struct OptimalityOptions {
    /// Perturbation size; defaults to `1e-4 * bound`.
    pub perturbation: Option<f64>,
    /// Evaluate the market maker holding `+H` instead of `-H` (fault injection).
    pub reverse_holding: bool,
}

/// Perturbs the market maker's position by `±delta` on the single step
/// leaving each node and evaluates the expected utility exactly.
///
/// Returns two reports. `optimality_first_order` holds the largest central
/// difference quotient `(E U(W + delta X) - E U(W - delta X)) / (2 delta)`
/// divided by `E[U'(W)]`, against `1e-8 * gamma * bound * bound`.
/// `optimality_maximality` holds the largest utility gain from either
/// perturbation above the rounding level of the price increments, against
/// zero.
///
/// Expectations over paths through a node factor into a forward mass, the
/// edge, and a backward mass, so the cost is linear in the number of nodes.
pub fn check_optimality(
    lattice: &LatticeModel,
    claim: &ClaimSpec,
    demand: &SimpleDemand,
    utility: &UtilityParams,
    options: OptimalityOptions,
) -> Result<[VerificationReport; 2]> {
    let surface = price_under_demand(lattice, claim, demand, utility)?;
    let table = demand.table(lattice)?;
    let bound = claim.effective_bound(lattice)?;
    let delta = options.perturbation.unwrap_or(1e-4 * bound);
    if !(delta.is_finite() && delta > 0.0) {
        return Err(Error::InvalidParameter(format!("perturbation must be positive, got {delta}")));
    }
    let gamma = utility.gamma;
    let holding = if options.reverse_holding { 1.0 } else { -1.0 };
    let steps = lattice.steps();

    // log of U'(W) contribution per edge: W gains holding * theta * dS
    let edge = |step: usize, node: usize, child: usize| {
        -gamma * holding * table.leaving(step, node) * (surface.price(step + 1, child) - surface.price(step, node))
    };

    let mut forward = vec![vec![0.0f64]];
    for step in 0..steps {
        let mut next = vec![f64::NEG_INFINITY; lattice.node_count(step + 1)];
        for (i, &lf) in forward[step].iter().enumerate() {
            let p = lattice.transition_probabilities(step, i);
            for (k, c) in lattice.children(i).into_iter().enumerate() {
                next[c] = log_add(next[c], lf + p[k].ln() + edge(step, i, c));
            }
        }
        forward.push(next);
    }
    let mut backward = vec![Vec::new(); steps + 1];
    backward[steps] = vec![0.0; lattice.node_count(steps)];
    for step in (0..steps).rev() {
        let row = (0..lattice.node_count(step))
            .map(|i| {
                let p = lattice.transition_probabilities(step, i);
                lattice
                    .children(i)
                    .into_iter()
                    .enumerate()
                    .fold(f64::NEG_INFINITY, |acc, (k, c)| {
                        log_add(acc, p[k].ln() + edge(step, i, c) + backward[step + 1][c])
                    })
            })
            .collect();
        backward[step] = row;
    }
    let log_total = backward[0][0];

    let mut derivative = Worst::default();
    let mut gain = Worst::default();
    let mut gain_raw = f64::NEG_INFINITY;
    for step in 0..steps {
        for i in 0..lattice.node_count(step) {
            let p = lattice.transition_probabilities(step, i);
            let s = surface.price(step, i);
            let (mut d, mut up, mut down, mut slack) = (0.0, 0.0, 0.0, 0.0);
            for (k, c) in lattice.children(i).into_iter().enumerate() {
                let w = (forward[step][i] + p[k].ln() + edge(step, i, c) + backward[step + 1][c] - log_total).exp();
                let x = surface.price(step + 1, c) - s;
                let a = gamma * delta * x;
                d += w * a.sinh() / (gamma * delta);
                up -= w * (-a).exp_m1() / gamma;
                down -= w * a.exp_m1() / gamma;
                // rounding of the increment scales with the prices, not with x
                slack += w * delta * (surface.price(step + 1, c).abs() + s.abs());
            }
            derivative.update(d.abs(), step, i);
            let worst_change = up.max(down);
            gain_raw = gain_raw.max(worst_change);
            gain.update((worst_change - 8.0 * f64::EPSILON * slack).max(0.0), step, i);
        }
    }

    let tolerance = FINITE_DIFFERENCE_TOLERANCE * gamma * bound * bound;
    let first = lattice_metadata(
        VerificationReport::new("optimality_first_order", derivative.value, derivative.label(lattice), tolerance),
        lattice,
    )
    .with("perturbation", delta)
    .with("bound", bound)
    .with("reverse_holding", options.reverse_holding);
    let second = lattice_metadata(
        VerificationReport::new("optimality_maximality", gain.value, gain.label(lattice), 0.0),
        lattice,
    )
    .with("perturbation", delta)
    .with("largest_utility_change", gain_raw)
    .with("reverse_holding", options.reverse_holding);
    Ok([first, second])
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceRow {
    pub steps: usize,
    pub root_price: f64,
    pub closed_form: f64,
    pub error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceStudy {
    pub rows: Vec<ConvergenceRow>,
    /// Least-squares slope of `-ln(error)` against `ln(n)`; `None` when fewer
    /// than two errors are positive.
    pub order: Option<f64>,
    pub report: VerificationReport,
}

impl ConvergenceStudy {
    /// Whether the fitted order lies in `range`.
    pub fn order_report(&self, range: (f64, f64)) -> VerificationReport {
        let violation = match self.order {
            Some(o) => (range.0 - o).max(o - range.1).max(0.0),
            None => f64::INFINITY,
        };
        VerificationReport::new("convergence_order", violation, None, 0.0)
            .with("order", self.order)
            .with("range", vec![range.0, range.1])
    }
}

/// Prices `zeta * b_T` under constant demand on recombining lattices with
/// the given step counts and compares the root with `gamma theta zeta^2 T`.
pub fn check_convergence(spec: &BachelierSpec, ladder: &[usize], tolerance: f64) -> Result<ConvergenceStudy> {
    if ladder.is_empty() || ladder.contains(&0) {
        return Err(Error::InvalidParameter("step ladder must hold positive step counts".into()));
    }
    let payoff = Expression::Binary(BinaryOp::Mul, Box::new(Expression::Number(spec.zeta)), Box::new(Expression::State));
    let claim = ClaimSpec::new(payoff, None)?;
    let utility = UtilityParams::new(spec.gamma, 0.0)?;
    let target = bachelier_price(spec, 0.0, 0.0)?;
    let partition = vec![0.0, spec.horizon];
    let demand = SimpleDemand::constant(partition, spec.theta)?;

    let mut rows = Vec::with_capacity(ladder.len());
    for &n in ladder {
        let lattice = LatticeModel::recombining(TimeGrid::uniform(spec.horizon, n)?)?;
        let surface = price_under_demand(&lattice, &claim, &demand, &utility)?;
        rows.push(ConvergenceRow {
            steps: n,
            root_price: surface.root(),
            closed_form: target,
            error: (surface.root() - target).abs(),
        });
    }
    let order = fit_order(rows.iter().map(|r| (r.steps as f64, r.error)));
    let last = rows.iter().max_by_key(|r| r.steps).unwrap();
    let report = VerificationReport::new("convergence", last.error, Some(format!("n={}", last.steps)), tolerance)
        .with("order", order)
        .with("zeta", spec.zeta)
        .with("theta", spec.theta)
        .with("gamma", spec.gamma)
        .with("horizon", spec.horizon);
    Ok(ConvergenceStudy { rows, order, report })
}

/// Empirical order `p` in `error ~ C n^{-p}`.
pub fn fit_order(points: impl Iterator<Item = (f64, f64)>) -> Option<f64> {
    let pts: Vec<(f64, f64)> = points.filter(|(_, e)| *e > 0.0).map(|(n, e)| (n.ln(), e.ln())).collect();
    if pts.len() < 2 {
        return None;
    }
    let m = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    (sxx > 0.0).then(|| -sxy / sxx)
}

/// Ratios `|v_k| / |v_{k+1}|` along a ladder.
pub fn decay_factors(values: &[f64]) -> Vec<f64> {
    values.windows(2).map(|w| w[0].abs() / w[1].abs()).collect()
}

/// Runs the martingale, equivalence and density checks for one priced
/// instance.
pub fn check_equilibrium(
    lattice: &LatticeModel,
    claim: &ClaimSpec,
    demand: &SimpleDemand,
    utility: &UtilityParams,
    seed: u64,
) -> Result<Vec<VerificationReport>> {
    let surface = price_under_demand(lattice, claim, demand, utility)?;
    let density = pricing_measure(lattice, &surface, demand, utility)?;
    Ok(vec![
        check_martingale(lattice, &surface, &density, demand)?,
        check_equivalence(lattice, &density),
        check_terminal_density(lattice, &surface, &density, demand, utility, DEFAULT_DENSITY_SAMPLES, seed)?,
    ])
}
