//! Monolithic view of a multi-agent problem.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use super::{solve_qp_with, QpOptions, QpResult, QpSpec};
use crate::error::{Error, Result};
use crate::model::{MiqpProblem, RowRef};

/// Column and row offsets of each agent inside the stacked QP.
///
/// Agent `i` owns columns `col_offsets[i]..col_offsets[i + 1]` and local rows
/// `row_offsets[i]..row_offsets[i + 1]`; coupling rows follow all local rows.
#[derive(Clone, Debug, PartialEq)]
pub struct StackLayout {
    pub col_offsets: Vec<usize>,
    pub row_offsets: Vec<usize>,
    pub m_coupling: usize,
    /// Stacked rows that carry at least one big-M entry, ascending.
    pub bigm_rows: Vec<usize>,
}

impl StackLayout {
    pub fn n_agents(&self) -> usize {
        self.col_offsets.len() - 1
    }

    pub fn row(&self, agent: usize, r: RowRef) -> usize {
        match r {
            RowRef::Local(k) => self.row_offsets[agent] + k,
            RowRef::Coupling(k) => self.coupling_row(k),
        }
    }

    pub fn coupling_row(&self, k: usize) -> usize {
        self.row_offsets[self.n_agents()] + k
    }

    pub fn col(&self, agent: usize, j: usize) -> usize {
        self.col_offsets[agent] + j
    }

    /// Cut a stacked vector into per-agent blocks.
    pub fn split(&self, x: &DVector<f64>) -> Vec<DVector<f64>> {
        (0..self.n_agents())
            .map(|i| {
                let (a, b) = (self.col_offsets[i], self.col_offsets[i + 1]);
                x.rows(a, b - a).into_owned()
            })
            .collect()
    }
}

/// Stack all agents into one QP.
///
/// With `bigm_weights = None` big-M rows stay hard. With `Some(w)` they become
/// penalty rows; `w` is indexed like [`StackLayout::bigm_rows`], and an empty
/// slice means unit weights. Soft rows are always penalty rows.
pub fn stack(p: &MiqpProblem, bigm_weights: Option<&[f64]>) -> Result<(QpSpec, StackLayout)> {
    let n_agents = p.n_agents();
    let mut col_offsets = vec![0];
    let mut row_offsets = vec![0];
    for blk in &p.agents {
        col_offsets.push(col_offsets.last().unwrap() + blk.n());
        row_offsets.push(row_offsets.last().unwrap() + blk.m_local());
    }
    let n = col_offsets[n_agents];
    let mc = p.m_coupling();
    let m = row_offsets[n_agents] + mc;
    let mut layout = StackLayout {
        col_offsets,
        row_offsets,
        m_coupling: mc,
        bigm_rows: Vec::new(),
    };

    let mut q_mat = DMatrix::zeros(n, n);
    let mut q_vec = DVector::zeros(n);
    let mut a = DMatrix::zeros(m, n);
    let mut b = DVector::zeros(m);
    let mut lower = DVector::zeros(n);
    let mut upper = DVector::zeros(n);
    let mut constant = 0.0;
    let mut penalty: BTreeMap<usize, f64> = BTreeMap::new();
    for (i, blk) in p.agents.iter().enumerate() {
        let (c0, r0, ni) = (layout.col_offsets[i], layout.row_offsets[i], blk.n());
        q_mat.view_mut((c0, c0), (ni, ni)).copy_from(&blk.q_mat);
        q_vec.rows_mut(c0, ni).copy_from(&blk.q_vec);
        a.view_mut((r0, c0), (blk.m_local(), ni)).copy_from(&blk.a);
        b.rows_mut(r0, blk.m_local()).copy_from(&blk.b);
        a.view_mut((layout.coupling_row(0), c0), (mc, ni))
            .copy_from(&blk.c);
        lower.rows_mut(c0, ni).copy_from(&blk.lower);
        upper.rows_mut(c0, ni).copy_from(&blk.upper);
        constant += blk.constant;
        for s in &blk.soft {
            penalty.insert(layout.row(i, s.row), s.weight);
        }
    }
    b.rows_mut(layout.coupling_row(0), mc).copy_from(&p.d);

    let mut bigm_rows: Vec<usize> = p
        .agents
        .iter()
        .enumerate()
        .flat_map(|(i, blk)| blk.bigm.iter().map(move |e| (i, e.row)))
        .map(|(i, r)| layout.row(i, r))
        .collect();
    bigm_rows.sort_unstable();
    bigm_rows.dedup();
    if let Some(w) = bigm_weights {
        if !w.is_empty() && w.len() != bigm_rows.len() {
            return Err(Error::Dimension(format!(
                "{} big-M weights for {} big-M rows",
                w.len(),
                bigm_rows.len()
            )));
        }
        for (k, &r) in bigm_rows.iter().enumerate() {
            penalty.insert(r, if w.is_empty() { 1.0 } else { w[k] });
        }
    }
    layout.bigm_rows = bigm_rows;

    let (rows, weights): (Vec<usize>, Vec<f64>) = penalty.into_iter().unzip();
    let mut spec = QpSpec::new(q_mat, q_vec)
        .with_rows(a, b)
        .with_bounds(lower, upper)
        .with_penalty(rows, weights);
    spec.constant = constant;
    Ok((spec, layout))
}

/// Solve the relaxation in which every big-M row is a penalty row.
pub fn solve_penalized_relaxation(
    p: &MiqpProblem,
    weights: &[f64],
    opts: &QpOptions,
) -> Result<(QpResult, StackLayout)> {
    let relaxed = p.relax();
    let (spec, layout) = stack(&relaxed, Some(weights))?;
    Ok((solve_qp_with(&spec, opts)?, layout))
}
