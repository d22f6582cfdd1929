//! Binary random-walk discretizations of a one-dimensional Brownian filtration.
//!
//! Two shapes are provided. A [`LatticeKind::PathTree`] keeps one node per
//! path prefix, so any adapted functional of the path can be represented. A
//! [`LatticeKind::Recombining`] lattice merges nodes with equal Brownian level
//! and only carries functions of `(t, b)`.
//!
//! Nodes are addressed by `(step, index)`. In a path tree the index is the
//! path read as a binary number, most significant bit first, with `1` for an
//! up move. In a recombining lattice the index is the number of up moves.

use crate::error::{Error, Result};

pub const DEFAULT_STEP_CAP: usize = 22;

/// Demand partition `0 = t_0 < ... < t_N = T` refined by `M` equal substeps
/// inside each interval.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    horizon: f64,
    partition: Vec<f64>,
    substeps: usize,
    times: Vec<f64>,
}

impl TimeGrid {
    pub fn new(horizon: f64, partition: Vec<f64>, substeps: usize) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::InvalidGrid(format!("horizon must be positive, got {horizon}")));
        }
        if substeps == 0 {
            return Err(Error::InvalidGrid("substeps per interval must be positive".into()));
        }
        if partition.len() < 2 {
            return Err(Error::InvalidGrid("partition needs at least the points 0 and T".into()));
        }
        if partition[0] != 0.0 {
            return Err(Error::InvalidGrid(format!(
                "partition must start at 0, got {}",
                partition[0]
            )));
        }
        if *partition.last().unwrap() != horizon {
            return Err(Error::InvalidGrid(format!(
                "partition must end at the horizon {horizon}, got {}",
                partition.last().unwrap()
            )));
        }
        if let Some(w) = partition.windows(2).find(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidGrid(format!(
                "partition must be strictly increasing ({} then {})",
                w[0], w[1]
            )));
        }

        let mut times = Vec::with_capacity((partition.len() - 1) * substeps + 1);
        times.push(0.0);
        for w in partition.windows(2) {
            let width = w[1] - w[0];
            for m in 1..substeps {
                times.push(w[0] + width * (m as f64) / (substeps as f64));
            }
            times.push(w[1]);
        }
        if times.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidGrid("refined grid is not strictly increasing".into()));
        }
        Ok(Self { horizon, partition, substeps, times })
    }

    /// Single demand interval `[0, T]` split into `steps` substeps.
    pub fn uniform(horizon: f64, steps: usize) -> Result<Self> {
        Self::new(horizon, vec![0.0, horizon], steps)
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn partition(&self) -> &[f64] {
        &self.partition
    }

    /// Number of demand intervals `N`.
    pub fn intervals(&self) -> usize {
        self.partition.len() - 1
    }

    pub fn substeps(&self) -> usize {
        self.substeps
    }

    /// The refined grid, `N * M + 1` times.
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// Number of walk steps `N * M`.
    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn dt(&self, step: usize) -> f64 {
        self.times[step + 1] - self.times[step]
    }

    /// Step index of partition time `t_i`.
    pub fn partition_step(&self, interval: usize) -> usize {
        interval * self.substeps
    }

    pub fn is_partition_step(&self, step: usize) -> bool {
        step.is_multiple_of(self.substeps)
    }

    /// Demand interval whose `theta` governs the move leaving `step`.
    pub fn interval_leaving(&self, step: usize) -> usize {
        step / self.substeps
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatticeKind {
    PathTree,
    Recombining,
}

/// Symmetric `±sqrt(dt)` walk on a [`TimeGrid`]. Immutable once built.
#[derive(Debug, Clone)]
pub struct LatticeModel {
    grid: TimeGrid,
    kind: LatticeKind,
    states: Vec<Vec<f64>>,
}

/// Probability of each move; the walk is symmetric.
pub const MOVE_PROBABILITY: f64 = 0.5;

impl LatticeModel {
    pub fn path_tree(grid: TimeGrid) -> Result<Self> {
        Self::path_tree_with_cap(grid, DEFAULT_STEP_CAP)
    }

    pub fn path_tree_with_cap(grid: TimeGrid, cap: usize) -> Result<Self> {
        let steps = grid.steps();
        if steps > cap {
            return Err(Error::StepCapExceeded { steps, cap });
        }
        let mut states = Vec::with_capacity(steps + 1);
        states.push(vec![0.0]);
        for step in 0..steps {
            let h = grid.dt(step).sqrt();
            let prev: &Vec<f64> = &states[step];
            let mut next = Vec::with_capacity(prev.len() * 2);
            for &b in prev {
                next.push(b - h);
                next.push(b + h);
            }
            states.push(next);
        }
        Ok(Self { grid, kind: LatticeKind::PathTree, states })
    }

    /// Recombining walk. Requires equally spaced steps, otherwise an up move
    /// followed by a down move would not land where the reverse order does.
    pub fn recombining(grid: TimeGrid) -> Result<Self> {
        let steps = grid.steps();
        let dt = grid.horizon() / steps as f64;
        for step in 0..steps {
            if (grid.dt(step) - dt).abs() > 1e-12 * dt {
                return Err(Error::InvalidGrid(format!(
                    "recombining lattice needs equally spaced steps; step {step} has dt {} vs {dt}",
                    grid.dt(step)
                )));
            }
        }
        let h = dt.sqrt();
        let states = (0..=steps)
            .map(|k| (0..=k).map(|j| (2.0 * j as f64 - k as f64) * h).collect())
            .collect();
        Ok(Self { grid, kind: LatticeKind::Recombining, states })
    }

    pub fn build(grid: TimeGrid, kind: LatticeKind, cap: usize) -> Result<Self> {
        match kind {
            LatticeKind::PathTree => Self::path_tree_with_cap(grid, cap),
            LatticeKind::Recombining => Self::recombining(grid),
        }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn kind(&self) -> LatticeKind {
        self.kind
    }

    pub fn steps(&self) -> usize {
        self.grid.steps()
    }

    pub fn time(&self, step: usize) -> f64 {
        self.grid.times()[step]
    }

    pub fn node_count(&self, step: usize) -> usize {
        self.states[step].len()
    }

    pub fn total_nodes(&self) -> usize {
        self.states.iter().map(Vec::len).sum()
    }

    /// Brownian level at a node.
    pub fn state(&self, step: usize, index: usize) -> f64 {
        self.states[step][index]
    }

    pub fn states(&self, step: usize) -> &[f64] {
        &self.states[step]
    }

    /// `(down, up)` child indices at `step + 1`.
    #[inline]
    pub fn children(&self, index: usize) -> [usize; 2] {
        match self.kind {
            LatticeKind::PathTree => [2 * index, 2 * index + 1],
            LatticeKind::Recombining => [index, index + 1],
        }
    }

    /// Transition probabilities matching [`Self::children`].
    #[inline]
    pub fn transition_probabilities(&self, _step: usize, _index: usize) -> [f64; 2] {
        [MOVE_PROBABILITY, 1.0 - MOVE_PROBABILITY]
    }

    /// Index of the ancestor at `at_step`, when the node determines it.
    pub fn ancestor(&self, step: usize, index: usize, at_step: usize) -> Option<usize> {
        debug_assert!(at_step <= step);
        match self.kind {
            LatticeKind::PathTree => Some(index >> (step - at_step)),
            LatticeKind::Recombining => (step == at_step).then_some(index),
        }
    }

    /// Reference-measure probability of reaching each node.
    pub fn node_probabilities(&self) -> Vec<Vec<f64>> {
        let mut probs: Vec<Vec<f64>> = Vec::with_capacity(self.steps() + 1);
        probs.push(vec![1.0]);
        for step in 0..self.steps() {
            let mut next = vec![0.0; self.node_count(step + 1)];
            for (i, &p) in probs[step].iter().enumerate() {
                let q = self.transition_probabilities(step, i);
                let [d, u] = self.children(i);
                next[d] += p * q[0];
                next[u] += p * q[1];
            }
            probs.push(next);
        }
        probs
    }

    /// Human-readable node label: `u`/`d` path string for path trees,
    /// `step:level` for recombining lattices.
    pub fn node_label(&self, step: usize, index: usize) -> String {
        match self.kind {
            LatticeKind::PathTree => {
                if step == 0 {
                    return "root".to_string();
                }
                (0..step)
                    .rev()
                    .map(|bit| if (index >> bit) & 1 == 1 { 'u' } else { 'd' })
                    .collect()
            }
            LatticeKind::Recombining => format!("{step}:{index}"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_step_tree() {
        let lat = LatticeModel::path_tree(TimeGrid::uniform(1.0, 1).unwrap()).unwrap();
        assert_eq!(lat.node_count(0), 1);
        assert_eq!(lat.states(1), &[-1.0, 1.0]);
    }

    #[test]
    fn two_step_tree_leaves() {
        let lat = LatticeModel::path_tree(TimeGrid::uniform(1.0, 2).unwrap()).unwrap();
        assert_eq!(lat.total_nodes(), 7);
        let s = 2f64.sqrt();
        let leaves = lat.states(2);
        assert!((leaves[0] + s).abs() < 1e-15);
        assert!(leaves[1].abs() < 1e-15 && leaves[2].abs() < 1e-15);
        assert!((leaves[3] - s).abs() < 1e-15);
        assert_eq!(lat.node_label(2, 1), "du");
    }

    #[test]
    fn step_cap() {
        let grid = TimeGrid::new(1.0, vec![0.0, 0.5, 1.0], 15).unwrap();
        assert_eq!(
            LatticeModel::path_tree(grid).unwrap_err(),
            Error::StepCapExceeded { steps: 30, cap: 22 }
        );
    }

    #[test]
    fn recombining_counts() {
        let lat = LatticeModel::recombining(TimeGrid::uniform(1.0, 1000).unwrap()).unwrap();
        assert_eq!(lat.grid().times().len(), 1001);
        assert_eq!(lat.node_count(1000), 1001);

        let lat = LatticeModel::recombining(TimeGrid::new(2.0, vec![0.0, 1.0, 2.0], 1).unwrap())
            .unwrap();
        let counts: Vec<_> = (0..=2).map(|k| lat.node_count(k)).collect();
        assert_eq!(counts, vec![1, 2, 3]);
    }

    #[test]
    fn invalid_grids() {
        assert!(matches!(
            TimeGrid::new(1.0, vec![0.0, 0.7, 0.3, 1.0], 1),
            Err(Error::InvalidGrid(_))
        ));
        assert!(matches!(TimeGrid::new(1.0, vec![0.1, 1.0], 1), Err(Error::InvalidGrid(_))));
        assert!(matches!(TimeGrid::new(1.0, vec![0.0, 0.9], 1), Err(Error::InvalidGrid(_))));
        assert!(matches!(TimeGrid::new(0.0, vec![0.0, 0.0], 1), Err(Error::InvalidGrid(_))));
        assert!(matches!(TimeGrid::new(1.0, vec![0.0, 1.0], 0), Err(Error::InvalidGrid(_))));
        let uneven = TimeGrid::new(1.0, vec![0.0, 0.3, 1.0], 1).unwrap();
        assert!(matches!(LatticeModel::recombining(uneven), Err(Error::InvalidGrid(_))));
    }

    #[test]
    fn partition_times_on_grid() {
        let grid = TimeGrid::new(1.5, vec![0.0, 0.2, 0.9, 1.5], 3).unwrap();
        assert_eq!(grid.steps(), 9);
        for (i, &t) in grid.partition().iter().enumerate() {
            assert_eq!(grid.times()[grid.partition_step(i)], t);
            assert_eq!(grid.times().iter().filter(|&&s| s == t).count(), 1);
        }
        assert_eq!(grid.interval_leaving(2), 0);
        assert_eq!(grid.interval_leaving(3), 1);
    }

    #[test]
    fn walk_moments_per_step() {
        let grid = TimeGrid::new(1.0, vec![0.0, 0.25, 1.0], 2).unwrap();
        let lat = LatticeModel::path_tree(grid).unwrap();
        for step in 0..lat.steps() {
            let dt = lat.grid().dt(step);
            for i in 0..lat.node_count(step) {
                let p = lat.transition_probabilities(step, i);
                assert!((p[0] + p[1] - 1.0).abs() < 1e-15 && p[0] > 0.0 && p[1] > 0.0);
                let b = lat.state(step, i);
                let [d, u] = lat.children(i);
                let incs = [lat.state(step + 1, d) - b, lat.state(step + 1, u) - b];
                let mean = p[0] * incs[0] + p[1] * incs[1];
                let var = p[0] * incs[0] * incs[0] + p[1] * incs[1] * incs[1];
                assert!(mean.abs() < 1e-15);
                assert!((var - dt).abs() < 1e-15);
            }
        }
    }
}
