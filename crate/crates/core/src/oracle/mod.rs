//! Exhaustive enumeration of binary assignments.

mod accuracy;
mod generator;

use nalgebra::DVector;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{MiqpProblem, Solution, SolveStatus};
use crate::qp::{self, QpOptions, QpStatus};
use crate::tighten::{fix_binaries, second_stage, FEAS_TOL};

pub use accuracy::{
    accuracy_experiment, AccuracyConfig, AccuracyRecord, AccuracyReport, SolverChoice,
};
pub use generator::{random_instance, GeneratorConfig};

pub const DEFAULT_BUDGET: usize = 20;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LeafRecord {
    pub assignment: Vec<u8>,
    pub status: QpStatus,
    pub feasible: bool,
    pub objective: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OracleResult {
    /// Best feasible leaf; `None` when every leaf is infeasible.
    pub best: Option<Solution>,
    pub best_objective: f64,
    pub leaves: Vec<LeafRecord>,
    pub enumerated: usize,
}

impl OracleResult {
    pub fn status(&self) -> SolveStatus {
        match self.best {
            Some(_) => SolveStatus::OptimalMi,
            None => SolveStatus::Infeasible,
        }
    }

    pub fn best_binaries(&self) -> Option<Vec<u8>> {
        self.best.as_ref().map(Solution::flat_binaries)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OracleConfig {
    pub budget: usize,
    /// Skip subtrees whose relaxation bound cannot beat the incumbent.
    pub prune: bool,
    pub qp: QpOptions,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            budget: DEFAULT_BUDGET,
            prune: false,
            qp: QpOptions::default(),
        }
    }
}

pub fn solve_exhaustive(p: &MiqpProblem, budget: usize) -> Result<OracleResult> {
    solve_exhaustive_with(
        p,
        &OracleConfig {
            budget,
            ..OracleConfig::default()
        },
    )
}

/// Enumerate assignments in lexicographic order (first binary most
/// significant), solve the continuous QP of each leaf with the original `M`
/// values, and keep the cheapest feasible one. A later leaf replaces the
/// incumbent only if it is better by more than `1e-9`, so ties go to the
/// lexicographically smallest assignment.
pub fn solve_exhaustive_with(p: &MiqpProblem, cfg: &OracleConfig) -> Result<OracleResult> {
    p.ensure_valid()?;
    let nb = p.total_binaries();
    if nb > cfg.budget {
        return Err(Error::BudgetExceeded {
            count: nb,
            budget: cfg.budget,
        });
    }
    let mut search = Search {
        p,
        cfg,
        sizes: p.agents.iter().map(|a| a.binary_cols.len()).collect(),
        leaves: Vec::new(),
        best: None,
    };
    let mut prefix = Vec::with_capacity(nb);
    search.descend(&mut prefix, nb)?;
    let enumerated = search.leaves.len();
    let (best, best_objective) = match search.best.take() {
        Some((x, bits, obj)) => {
            let binaries = search.unflatten(&bits);
            (
                Some(Solution {
                    x,
                    binaries,
                    objective: obj,
                    status: SolveStatus::OptimalMi,
                }),
                obj,
            )
        }
        None => (None, f64::INFINITY),
    };
    Ok(OracleResult {
        best,
        best_objective,
        leaves: search.leaves,
        enumerated,
    })
}

struct Search<'a> {
    p: &'a MiqpProblem,
    cfg: &'a OracleConfig,
    sizes: Vec<usize>,
    leaves: Vec<LeafRecord>,
    best: Option<(Vec<DVector<f64>>, Vec<u8>, f64)>,
}

impl Search<'_> {
    fn unflatten(&self, bits: &[u8]) -> Vec<Vec<u8>> {
        let mut out = Vec::with_capacity(self.sizes.len());
        let mut k = 0;
        for &s in &self.sizes {
            out.push(bits[k..k + s].to_vec());
            k += s;
        }
        out
    }

    fn descend(&mut self, prefix: &mut Vec<u8>, nb: usize) -> Result<()> {
        if prefix.len() == nb {
            return self.leaf(prefix);
        }
        if self.cfg.prune && !prefix.is_empty() {
            if let Some((_, _, incumbent)) = &self.best {
                let incumbent = *incumbent;
                match self.prefix_bound(prefix)? {
                    None => return Ok(()),
                    Some(lb) if lb >= incumbent - 1e-9 => return Ok(()),
                    Some(_) => {}
                }
            }
        }
        for v in [0u8, 1] {
            prefix.push(v);
            self.descend(prefix, nb)?;
            prefix.pop();
        }
        Ok(())
    }

    /// Relaxation bound with the first `prefix.len()` binaries fixed and the
    /// rest in `[0, 1]`; `None` if that relaxation is infeasible.
    fn prefix_bound(&self, prefix: &[u8]) -> Result<Option<f64>> {
        let mut p = self.p.clone();
        p.restore_initial_m();
        let mut k = 0;
        for blk in &mut p.agents {
            for &c in &blk.binary_cols {
                if k < prefix.len() {
                    blk.lower[c] = f64::from(prefix[k]);
                    blk.upper[c] = f64::from(prefix[k]);
                }
                k += 1;
            }
            blk.binary_cols.clear();
        }
        let (spec, _) = qp::stack(&p, None)?;
        let r = qp::solve_qp_with(&spec, &self.cfg.qp)?;
        Ok(match r.status {
            QpStatus::PrimalInfeasible => None,
            // An inexact solve is not a safe bound.
            QpStatus::MaxIter => Some(f64::NEG_INFINITY),
            QpStatus::Solved => Some(r.objective - 1e-7 * (1.0 + r.objective.abs())),
        })
    }

    fn leaf(&mut self, bits: &[u8]) -> Result<()> {
        let binaries = self.unflatten(bits);
        let (res, layout) = second_stage(self.p, &binaries, &self.cfg.qp)?;
        let mut rec = LeafRecord {
            assignment: bits.to_vec(),
            status: res.status,
            feasible: false,
            objective: f64::INFINITY,
        };
        if res.is_usable() {
            let x = layout.split(&res.x);
            let sol = Solution {
                x: x.clone(),
                binaries: binaries.clone(),
                objective: res.objective,
                status: SolveStatus::FeasibleMi,
            };
            rec.feasible = self.p.check_feasible(&sol, FEAS_TOL)?.feasible;
            if rec.feasible {
                let obj = fix_binaries(self.p, &binaries)?.penalized_objective(&x);
                rec.objective = obj;
                let better = self.best.as_ref().map_or(true, |b| obj < b.2 - 1e-9);
                if better {
                    self.best = Some((x, bits.to_vec(), obj));
                }
            }
        }
        self.leaves.push(rec);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::example1;

    #[test]
    fn example1_oracle() {
        let r = solve_exhaustive(&example1(), DEFAULT_BUDGET).unwrap();
        assert_eq!(r.enumerated, 16);
        assert_eq!(r.best_binaries().unwrap(), vec![1, 1, 1, 0]);
        assert!((r.best_objective + 344.5).abs() < 1e-7);
        let x: Vec<f64> = r.best.unwrap().x.iter().map(|v| v[0]).collect();
        for (a, b) in x.iter().zip([5.0, 6.5, 8.5, 0.0]) {
            assert!((a - b).abs() < 1e-7);
        }
        // Leaves with all four switched on violate sum delta <= 3.
        assert!(!r.leaves[15].feasible);
    }

    #[test]
    fn leaf_order_is_lexicographic() {
        let r = solve_exhaustive(&example1(), DEFAULT_BUDGET).unwrap();
        assert_eq!(r.leaves[1].assignment, vec![0, 0, 0, 1]);
        assert_eq!(r.leaves[8].assignment, vec![1, 0, 0, 0]);
    }

    #[test]
    fn budget_is_enforced() {
        assert!(matches!(
            solve_exhaustive(&example1(), 3),
            Err(Error::BudgetExceeded {
                count: 4,
                budget: 3
            })
        ));
    }

    #[test]
    fn forced_zero_assignment() {
        let mut p = example1();
        p.d[1] = 0.0;
        let r = solve_exhaustive(&p, DEFAULT_BUDGET).unwrap();
        assert_eq!(r.best_binaries().unwrap(), vec![0, 0, 0, 0]);
        assert!(r.leaves.iter().skip(1).all(|l| !l.feasible));
    }

    #[test]
    fn pruning_keeps_the_answer() {
        let cfg = OracleConfig {
            prune: true,
            ..OracleConfig::default()
        };
        let r = solve_exhaustive_with(&example1(), &cfg).unwrap();
        assert_eq!(r.best_binaries().unwrap(), vec![1, 1, 1, 0]);
        assert!(r.enumerated < 16);
    }
}
