use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{random_instance, solve_exhaustive_with, GeneratorConfig, OracleConfig};
use crate::admm::{solve_distributed, AdmmParams};
use crate::error::Result;
use crate::model::SolveStatus;
use crate::tighten::{solve_centralized, TightenConfig, FEAS_TOL};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SolverChoice {
    Centralized(TightenConfig),
    Distributed(AdmmParams),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AccuracyConfig {
    pub seed: u64,
    pub count: usize,
    pub generator: GeneratorConfig,
    pub solver: SolverChoice,
    pub oracle: OracleConfig,
}

impl AccuracyConfig {
    /// Distributed solver with the worked-example parameters.
    pub fn new(seed: u64, count: usize, agents: usize) -> Self {
        let params = AdmmParams {
            record_x: false,
            ..AdmmParams::default()
        };
        Self {
            seed,
            count,
            generator: GeneratorConfig::new(agents),
            solver: SolverChoice::Distributed(params),
            oracle: OracleConfig {
                prune: true,
                ..OracleConfig::default()
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AccuracyRecord {
    pub instance_id: usize,
    pub matched: bool,
    pub obj_solver: f64,
    pub obj_oracle: f64,
    pub iters: usize,
    #[serde(skip)]
    pub status: SolveStatus,
    #[serde(skip)]
    pub feasible: bool,
    #[serde(skip)]
    pub binaries: usize,
    #[serde(skip)]
    pub m_monotone: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AccuracyReport {
    pub records: Vec<AccuracyRecord>,
}

impl AccuracyReport {
    /// `None` when no instance was run.
    pub fn match_fraction(&self) -> Option<f64> {
        if self.records.is_empty() {
            return None;
        }
        let hits = self.records.iter().filter(|r| r.matched).count();
        Some(hits as f64 / self.records.len() as f64)
    }

    /// Mean of `obj_solver - obj_oracle` over mismatched instances with a
    /// feasible solver answer.
    pub fn mean_gap_mismatch(&self) -> Option<f64> {
        let gaps: Vec<f64> = self
            .records
            .iter()
            .filter(|r| !r.matched && r.feasible)
            .map(|r| r.obj_solver - r.obj_oracle)
            .collect();
        (!gaps.is_empty()).then(|| gaps.iter().sum::<f64>() / gaps.len() as f64)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "instance_id",
            "matched",
            "obj_solver",
            "obj_oracle",
            "iters",
        ])?;
        for r in &self.records {
            w.write_record([
                r.instance_id.to_string(),
                r.matched.to_string(),
                format!("{:.9}", r.obj_solver),
                format!("{:.9}", r.obj_oracle),
                r.iters.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Generate `count` instances from `seed` and compare the solver's binaries
/// with the exhaustive optimum. Instance `k` is drawn from ChaCha stream `k`
/// so that adding instances never changes earlier ones.
pub fn accuracy_experiment(cfg: &AccuracyConfig) -> Result<AccuracyReport> {
    let mut records = Vec::with_capacity(cfg.count);
    for k in 0..cfg.count {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(k as u64);
        let p = random_instance(&mut rng, &cfg.generator);
        let oracle = solve_exhaustive_with(&p, &cfg.oracle)?;
        let report = match &cfg.solver {
            SolverChoice::Centralized(c) => solve_centralized(&p, c)?,
            SolverChoice::Distributed(a) => solve_distributed(&p, a)?,
        };
        let feasible = report.status.is_mixed_integer()
            && p.check_feasible(&report.solution(), FEAS_TOL)?.feasible;
        let matched = oracle.best_binaries().as_deref() == Some(&report.flat_binaries()[..]);
        log::debug!(
            "instance {k}: {:?} matched={matched} solver {:.6} oracle {:.6}",
            report.status,
            report.objective,
            oracle.best_objective
        );
        records.push(AccuracyRecord {
            instance_id: k,
            matched,
            obj_solver: report.objective,
            obj_oracle: oracle.best_objective,
            iters: report.iterations,
            status: report.status,
            feasible,
            binaries: p.total_binaries(),
            m_monotone: report.m_non_increasing(),
        });
    }
    Ok(AccuracyReport { records })
}
