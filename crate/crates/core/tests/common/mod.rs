//! Shared test support: an independent brute-force evaluation of the
//! backward-induction price ratio, and a seeded generator of random
//! path-tree instances.
#![allow(dead_code)]

use price_impact::contract::{ClaimSpec, Expression, SimpleDemand, UtilityParams};
use price_impact::lattice::{LatticeModel, TimeGrid};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct Instance {
    pub horizon: f64,
    pub partition: Vec<f64>,
    pub substeps: usize,
    pub payoff: String,
    pub thetas: Vec<String>,
    pub gamma: f64,
}

impl Instance {
    pub fn lattice(&self) -> LatticeModel {
        let grid = TimeGrid::new(self.horizon, self.partition.clone(), self.substeps).unwrap();
        LatticeModel::path_tree(grid).unwrap()
    }

    pub fn claim(&self) -> ClaimSpec {
        ClaimSpec::parse(&self.payoff, None).unwrap()
    }

    pub fn demand(&self) -> SimpleDemand {
        let refs: Vec<&str> = self.thetas.iter().map(String::as_str).collect();
        SimpleDemand::parse(self.partition.clone(), &refs, None).unwrap()
    }

    pub fn utility(&self) -> UtilityParams {
        UtilityParams::new(self.gamma, 0.0).unwrap()
    }

    pub fn steps(&self) -> usize {
        (self.partition.len() - 1) * self.substeps
    }
}

fn coef(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    rng.gen_range(lo..hi)
}

/// Random bounded instance with at most six walk steps.
pub fn random_instance(seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let intervals = rng.gen_range(1..=3usize);
    let substeps = rng.gen_range(1..=6 / intervals);
    let horizon = coef(&mut rng, 0.5, 2.0);
    let mut cuts: Vec<f64> = (0..intervals - 1).map(|_| coef(&mut rng, 0.1, 0.9) * horizon).collect();
    cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    cuts.dedup();
    let mut partition = vec![0.0];
    partition.extend(cuts);
    partition.push(horizon);

    let a = coef(&mut rng, -2.0, 2.0);
    let c = coef(&mut rng, -1.0, 1.0);
    let k = coef(&mut rng, 0.0, 1.0);
    let payoff = match rng.gen_range(0..5) {
        0 => format!("{a} * b + {c}"),
        1 => format!("{a} * max(b - {c}, 0)"),
        2 => format!("{a} * tanh({c} * b + 0.5) + {k}"),
        3 => format!("{a} * min(max(b, -{k}), {k}) + {c} * b"),
        _ => format!("{a} * exp(-b * b / 2) + abs(b) * {c}"),
    };

    let thetas = (0..partition.len() - 1)
        .map(|_| {
            let c = coef(&mut rng, -1.5, 1.5);
            let d = coef(&mut rng, -1.5, 1.5);
            match rng.gen_range(0..5) {
                0 => format!("{c}"),
                1 => format!("{c} + {d} * b"),
                2 => format!("{c} * tanh(b)"),
                3 => format!("{c} + {d} * t"),
                _ => format!("{c} * max(b, 0) - {d}"),
            }
        })
        .collect();
    let gamma = coef(&mut rng, 0.2, 2.0);
    Instance { horizon, partition, substeps, payoff, thetas, gamma }
}

/// Prices on every node of the path tree, `[step][index]`, with the index
/// the path read as a binary number (up = 1, first move most significant).
pub struct OraclePrices {
    pub prices: Vec<Vec<f64>>,
    /// Largest gap at interior partition times between the interval-`k`
    /// ratio and the interval-`k-1` ratio.
    pub endpoint_gap: f64,
}

/// Evaluates, for every node, the ratio
/// `E[f exp{gamma X_k} | node] / E[exp{gamma X_k} | node]` with
/// `X_k = theta^k S_{t_{k+1}} + sum_{i>k} theta^i (S_{t_{i+1}} - S_{t_i})`
/// by summing over every terminal path below the node. Intervals are solved
/// from the last to the first so the later partition prices are known.
pub fn brute_force_prices(inst: &Instance) -> OraclePrices {
    let n_int = inst.partition.len() - 1;
    let m = inst.substeps;
    let steps = n_int * m;
    let payoff = Expression::parse(&inst.payoff).unwrap();
    let thetas: Vec<Expression> = inst.thetas.iter().map(|s| Expression::parse(s).unwrap()).collect();

    // refined times and per-path Brownian levels
    let mut times = vec![0.0];
    for w in inst.partition.windows(2) {
        for j in 1..=m {
            times.push(if j == m { w[1] } else { w[0] + (w[1] - w[0]) * j as f64 / m as f64 });
        }
    }
    let leaves = 1usize << steps;
    let level = |path: usize, step: usize| -> f64 {
        (0..step)
            .map(|s| {
                let up = (path >> (steps - 1 - s)) & 1 == 1;
                let h = (times[s + 1] - times[s]).sqrt();
                if up { h } else { -h }
            })
            .sum()
    };
    let node_of = |path: usize, step: usize| path >> (steps - step);

    let f: Vec<f64> = (0..leaves).map(|p| payoff.evaluate(inst.horizon, level(p, steps)).unwrap()).collect();
    // theta^i along each path
    let theta_on = |path: usize, i: usize| -> f64 {
        let s = i * m;
        thetas[i].evaluate(times[s], level(path, s)).unwrap()
    };

    let mut prices: Vec<Vec<f64>> = (0..=steps).map(|s| vec![f64::NAN; 1 << s]).collect();
    prices[steps] = f.clone();
    let mut endpoint_gap: f64 = 0.0;

    let ratio = |prices: &Vec<Vec<f64>>, k: usize, step: usize, index: usize| -> f64 {
        let width = steps - step;
        let first = index << width;
        let exps: Vec<f64> = (first..first + (1 << width))
            .map(|p| {
                let s_next = prices[(k + 1) * m][node_of(p, (k + 1) * m)];
                let mut x = theta_on(p, k) * s_next;
                for i in k + 1..n_int {
                    let a = prices[(i + 1) * m][node_of(p, (i + 1) * m)];
                    let b = prices[i * m][node_of(p, i * m)];
                    x += theta_on(p, i) * (a - b);
                }
                inst.gamma * x
            })
            .collect();
        let top = exps.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let (mut num, mut den) = (0.0, 0.0);
        for (j, e) in exps.iter().enumerate() {
            let w = (e - top).exp();
            num += w * f[first + j];
            den += w;
        }
        num / den
    };

    for k in (0..n_int).rev() {
        let lo = k * m;
        let hi = (k + 1) * m;
        // right endpoint: compare with the already computed interval-(k+1) value
        if k + 1 < n_int {
            for index in 0..(1 << hi) {
                let here = ratio(&prices, k, hi, index);
                endpoint_gap = endpoint_gap.max((here - prices[hi][index]).abs());
            }
        }
        for step in (lo..hi).rev() {
            for index in 0..(1 << step) {
                let v = ratio(&prices, k, step, index);
                prices[step][index] = v;
            }
        }
    }
    OraclePrices { prices, endpoint_gap }
}
