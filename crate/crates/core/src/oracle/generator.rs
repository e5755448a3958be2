use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::model::{AgentBlock, BigMEntry, MiqpProblem, Polarity, RowRef};

/// Distribution of the random test instances.
///
/// Each agent owns `binaries` switched variables `x_j` with a binary `delta_j`
/// and one free variable `y`. A switched variable obeys
/// `x_j <= M delta_j` and `l_j - x_j <= M (1 - delta_j)`, so it is either 0 or
/// in `[l_j, u_j]`. The objective on `(x, y)` is a random diagonally dominant
/// positive definite quadratic with negative linear terms pulling production
/// up. Switches are free unless `fixed_cost` is a non-empty range, in which
/// case each one gets a linear cost drawn from it. Two coupling rows bound the
/// total production (`sum x <= cap`) and the number of active switches
/// (`sum delta <= k_on`), and a third mixes `x` and `y` with random positive
/// weights.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GeneratorConfig {
    pub agents: usize,
    pub min_binaries: usize,
    pub max_binaries: usize,
    pub big_m: f64,
    /// Range of the linear cost on each binary; an empty range means no cost.
    pub fixed_cost: (f64, f64),
    /// Add the coupling row `sum delta <= k_on`.
    pub switch_budget: bool,
}

impl GeneratorConfig {
    pub fn new(agents: usize) -> Self {
        Self {
            agents,
            min_binaries: 2,
            max_binaries: 3,
            big_m: 1e3,
            fixed_cost: (0.0, 0.0),
            switch_budget: true,
        }
    }
}

pub fn random_instance<R: Rng>(rng: &mut R, cfg: &GeneratorConfig) -> MiqpProblem {
    const MC: usize = 3;
    let mut agents = Vec::with_capacity(cfg.agents);
    let mut total_bins = 0;
    let mut free_sum = 0.0;
    let mut ub_sum = 0.0;
    for _ in 0..cfg.agents {
        let k = rng.gen_range(cfg.min_binaries..=cfg.max_binaries);
        total_bins += k;
        // Columns: x_0..x_{k-1}, y, delta_0..delta_{k-1}.
        let n = 2 * k + 1;
        let nc = k + 1;
        let mut blk = AgentBlock::new(n, MC);

        let mut q = DMatrix::<f64>::zeros(nc, nc);
        for i in 0..nc {
            for j in 0..i {
                let v = rng.gen_range(-0.5..0.5);
                q[(i, j)] = v;
                q[(j, i)] = v;
            }
        }
        for i in 0..nc {
            let off: f64 = (0..nc).filter(|&j| j != i).map(|j| q[(i, j)].abs()).sum();
            q[(i, i)] = off + rng.gen_range(0.5..2.0);
        }
        blk.q_mat.view_mut((0, 0), (nc, nc)).copy_from(&q);
        for j in 0..nc {
            blk.q_vec[j] = -rng.gen_range(2.0..12.0);
        }
        for j in 0..k {
            let x = j;
            let delta = nc + j;
            if cfg.fixed_cost.1 > cfg.fixed_cost.0 {
                blk.q_vec[delta] = rng.gen_range(cfg.fixed_cost.0..cfg.fixed_cost.1);
            }
            blk.mark_binary(delta);
            let lo = rng.gen_range(0.5..2.0);
            let hi = lo + rng.gen_range(2.0..8.0);
            blk.lower[x] = 0.0;
            blk.upper[x] = hi;
            ub_sum += hi;
            let r_on = blk.push_row(&[(x, 1.0), (delta, -cfg.big_m)], 0.0);
            blk.bigm.push(BigMEntry::new(
                RowRef::Local(r_on),
                delta,
                Polarity::Delta,
                cfg.big_m,
            ));
            let r_lo = blk.push_row(&[(x, -1.0), (delta, cfg.big_m)], cfg.big_m - lo);
            blk.bigm.push(BigMEntry::new(
                RowRef::Local(r_lo),
                delta,
                Polarity::OneMinusDelta,
                cfg.big_m,
            ));
            blk.c[(0, x)] = 1.0;
            if cfg.switch_budget {
                blk.c[(1, delta)] = 1.0;
            }
            blk.c[(2, x)] = rng.gen_range(0.2..1.0);
        }
        let y = k;
        blk.lower[y] = -5.0;
        blk.upper[y] = 5.0;
        blk.c[(2, y)] = rng.gen_range(0.2..1.0);
        // Unconstrained optimum of the x block is a rough scale for the caps.
        let xs = q.clone().lu().solve(&(-blk.q_vec.rows(0, nc).into_owned()));
        if let Some(xs) = xs {
            free_sum += xs.rows(0, k).iter().map(|v| v.max(0.0)).sum::<f64>();
        }
        agents.push(blk);
    }
    let cap = rng.gen_range(0.4..0.8) * free_sum.min(ub_sum).max(1.0);
    let k_on = ((total_bins as f64) * rng.gen_range(0.5..0.8))
        .round()
        .max(1.0);
    let mix = rng.gen_range(0.3..0.7) * cap;
    MiqpProblem::new(agents, DVector::from_vec(vec![cap, k_on, mix]))
}
