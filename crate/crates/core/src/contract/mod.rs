//! Claims, simple demands and the exponential utility parameter.

mod expr;

pub use expr::{BinaryOp, Expression, Function};

use std::fmt;

use crate::error::{Error, Result};
use crate::lattice::{LatticeKind, LatticeModel};

/// Terminal payoff `f` as an expression of `(t, b)` evaluated at maturity.
#[derive(Debug, Clone, PartialEq)]
pub struct ClaimSpec {
    payoff: Expression,
    bound: Option<f64>,
}

impl ClaimSpec {
    /// `bound`, when given, is enforced on every terminal node. Without it the
    /// observed maximum of `|f|` is used.
    pub fn new(payoff: Expression, bound: Option<f64>) -> Result<Self> {
        if let Some(b) = bound {
            if !(b.is_finite() && b > 0.0) {
                return Err(Error::InvalidParameter(format!("payoff bound must be positive, got {b}")));
            }
        }
        Ok(Self { payoff, bound })
    }

    pub fn parse(src: &str, bound: Option<f64>) -> Result<Self> {
        Self::new(Expression::parse(src)?, bound)
    }

    pub fn payoff(&self) -> &Expression {
        &self.payoff
    }

    pub fn declared_bound(&self) -> Option<f64> {
        self.bound
    }

    /// Payoff at every terminal node, checked against the bound.
    pub fn terminal_values(&self, lattice: &LatticeModel) -> Result<Vec<f64>> {
        let last = lattice.steps();
        let t = lattice.time(last);
        let values = lattice
            .states(last)
            .iter()
            .map(|&b| self.payoff.evaluate(t, b).map_err(Error::from))
            .collect::<Result<Vec<_>>>()?;
        if let Some(bound) = self.bound {
            if let Some(&v) = values.iter().find(|v| v.abs() > bound) {
                return Err(Error::OutOfBound { what: "payoff".into(), value: v, bound });
            }
        }
        Ok(values)
    }

    /// Declared bound, or `max |f|` over the lattice terminals (at least 1e-300).
    pub fn effective_bound(&self, lattice: &LatticeModel) -> Result<f64> {
        match self.bound {
            Some(b) => Ok(b),
            None => Ok(self
                .terminal_values(lattice)?
                .iter()
                .fold(f64::MIN_POSITIVE, |m, v| m.max(v.abs()))),
        }
    }
}

/// Piecewise-constant demand `H_t = theta^i` on `(t_i, t_{i+1}]`, with each
/// `theta^i` a function of the state at `t_i`.
///
/// The point mass `theta^0 1_{0}` carries no weight in any price formula and
/// is not represented.
#[derive(Debug, Clone, PartialEq)]
pub struct SimpleDemand {
    partition: Vec<f64>,
    thetas: Vec<Expression>,
    bound: Option<f64>,
    scale: f64,
}

impl SimpleDemand {
    /// One expression per interval, or a single expression used on every interval.
    pub fn new(partition: Vec<f64>, thetas: Vec<Expression>, bound: Option<f64>) -> Result<Self> {
        if partition.len() < 2 {
            return Err(Error::InvalidParameter("demand partition needs at least two times".into()));
        }
        let intervals = partition.len() - 1;
        if thetas.len() != intervals && thetas.len() != 1 {
            return Err(Error::InvalidParameter(format!(
                "expected {intervals} theta expressions (or one), got {}",
                thetas.len()
            )));
        }
        if let Some(b) = bound {
            if !(b.is_finite() && b > 0.0) {
                return Err(Error::InvalidParameter(format!("demand bound must be positive, got {b}")));
            }
        }
        Ok(Self { partition, thetas, bound, scale: 1.0 })
    }

    pub fn constant(partition: Vec<f64>, theta: f64) -> Result<Self> {
        Self::new(partition, vec![Expression::constant(theta)], None)
    }

    pub fn parse(partition: Vec<f64>, thetas: &[&str], bound: Option<f64>) -> Result<Self> {
        let exprs = thetas.iter().map(|s| Expression::parse(s)).collect::<std::result::Result<_, _>>()?;
        Self::new(partition, exprs, bound)
    }

    /// The same demand multiplied by `epsilon`.
    pub fn scaled(&self, epsilon: f64) -> Self {
        Self { scale: self.scale * epsilon, ..self.clone() }
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn partition(&self) -> &[f64] {
        &self.partition
    }

    pub fn intervals(&self) -> usize {
        self.partition.len() - 1
    }

    pub fn declared_bound(&self) -> Option<f64> {
        self.bound
    }

    pub fn theta_expression(&self, interval: usize) -> &Expression {
        if self.thetas.len() == 1 {
            &self.thetas[0]
        } else {
            &self.thetas[interval]
        }
    }

    /// Identifier stored in surfaces priced under this demand.
    pub fn fingerprint(&self) -> String {
        self.to_string()
    }

    fn check_lattice(&self, lattice: &LatticeModel) -> Result<()> {
        if lattice.grid().partition() != self.partition.as_slice() {
            return Err(Error::InconsistentInputs(format!(
                "demand partition {:?} differs from lattice partition {:?}",
                self.partition,
                lattice.grid().partition()
            )));
        }
        Ok(())
    }

    /// Demand in force on the step ending at `(step, index)`, `step >= 1`:
    /// `theta^i` with `t_i` the last partition time strictly before the
    /// node's time, evaluated on the node's state at `t_i`.
    pub fn demand_at(&self, lattice: &LatticeModel, step: usize, index: usize) -> Result<f64> {
        self.check_lattice(lattice)?;
        if step == 0 || step > lattice.steps() {
            return Err(Error::InvalidParameter(format!(
                "demand is defined on (0, T]; step {step} is outside"
            )));
        }
        let interval = lattice.grid().interval_leaving(step - 1);
        self.evaluate_for(lattice, interval, step, index)
    }

    fn evaluate_for(&self, lattice: &LatticeModel, interval: usize, step: usize, index: usize) -> Result<f64> {
        let expr = self.theta_expression(interval);
        let at = lattice.grid().partition_step(interval);
        let t_i = lattice.time(at);
        let b = match lattice.ancestor(step, index, at) {
            Some(anc) => lattice.state(at, anc),
            None if !expr.references_state() => 0.0,
            None => return Err(Error::NonMarkovDemandOnRecombiningLattice { interval }),
        };
        let theta = expr.evaluate(t_i, b)?;
        if let Some(bound) = self.bound {
            if theta.abs() > bound {
                return Err(Error::OutOfBound { what: format!("theta^{interval}"), value: theta, bound });
            }
        }
        Ok(self.scale * theta)
    }

    /// Evaluates every `theta^i` once, on every node at `t_i`.
    pub fn table(&self, lattice: &LatticeModel) -> Result<DemandTable> {
        self.check_lattice(lattice)?;
        let grid = lattice.grid();
        let substeps_state_free = grid.substeps() == 1 || lattice.kind() == LatticeKind::PathTree;
        let mut levels = Vec::with_capacity(grid.intervals());
        for interval in 0..grid.intervals() {
            let step = grid.partition_step(interval);
            if !substeps_state_free && self.theta_expression(interval).references_state() {
                return Err(Error::NonMarkovDemandOnRecombiningLattice { interval });
            }
            let row = (0..lattice.node_count(step))
                .map(|i| self.evaluate_for(lattice, interval, step, i))
                .collect::<Result<Vec<_>>>()?;
            levels.push(row);
        }
        Ok(DemandTable { levels, substeps: grid.substeps(), kind: lattice.kind() })
    }
}

impl fmt::Display for SimpleDemand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}*[", self.scale)?;
        for (i, th) in self.thetas.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{th}")?;
        }
        write!(f, "]@{:?}", self.partition)
    }
}

/// `theta^i` evaluated on every node at `t_i` (already multiplied by the
/// demand scale).
#[derive(Debug, Clone)]
pub struct DemandTable {
    levels: Vec<Vec<f64>>,
    substeps: usize,
    kind: LatticeKind,
}

impl DemandTable {
    /// `theta^i` at a node sitting on partition time `t_i`.
    pub fn at_partition(&self, interval: usize, index: usize) -> f64 {
        self.levels[interval][index]
    }

    /// Demand on the move leaving `(step, index)`, i.e. `H` on the next step.
    #[inline]
    pub fn leaving(&self, step: usize, index: usize) -> f64 {
        let interval = step / self.substeps;
        let offset = step - interval * self.substeps;
        let row = &self.levels[interval];
        match self.kind {
            LatticeKind::PathTree => row[index >> offset],
            // state-free whenever offset > 0, so every entry is equal
            LatticeKind::Recombining => row[if offset == 0 { index } else { 0 }],
        }
    }

    /// Largest `|theta|` over the table.
    pub fn max_abs(&self) -> f64 {
        self.levels.iter().flatten().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Exponential utility `U(x) = -exp(-gamma x) / gamma`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UtilityParams {
    pub gamma: f64,
    /// Recorded for reporting; prices under exponential utility do not depend on it.
    pub initial_wealth: f64,
}

impl UtilityParams {
    pub fn new(gamma: f64, initial_wealth: f64) -> Result<Self> {
        if !(gamma.is_finite() && gamma > 0.0) {
            return Err(Error::InvalidParameter(format!("gamma must be positive and finite, got {gamma}")));
        }
        if !initial_wealth.is_finite() {
            return Err(Error::InvalidParameter("initial wealth must be finite".into()));
        }
        Ok(Self { gamma, initial_wealth })
    }

    pub fn utility(&self, wealth: f64) -> f64 {
        -(-self.gamma * wealth).exp() / self.gamma
    }

    pub fn marginal(&self, wealth: f64) -> f64 {
        (-self.gamma * wealth).exp()
    }
}
