use std::collections::HashMap;

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};
use nalgebra::{DMatrix, DVector};

use super::{QpOptions, QpResult, QpSpec, QpStatus};

/// Where a row of the smooth problem came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Origin {
    /// Hard row `r`; `pair` is the opposite row folded into an equality.
    Row {
        r: usize,
        pair: Option<usize>,
    },
    /// `a_r x - t <= b_r`.
    Penalty {
        r: usize,
    },
    /// `-t <= 0` for the auxiliary of penalty row `r`.
    AuxNonneg {
        r: usize,
    },
    Lower(usize),
    Upper(usize),
    Fixed(usize),
}

/// The penalty-free reformulation `min z'Pz/2 + c'z  s.t.  Gz (=|<=) h`,
/// with equality rows first.
pub(crate) struct Smooth {
    pub n: usize,
    pub p: DMatrix<f64>,
    pub c: DVector<f64>,
    pub g: DMatrix<f64>,
    pub h: DVector<f64>,
    pub n_eq: usize,
    pub origin: Vec<Origin>,
    /// Auxiliary column of each penalty row, indexed by spec row.
    pub aux_of: HashMap<usize, usize>,
    infeasible: bool,
}

pub(crate) struct Raw {
    pub z: DVector<f64>,
    pub y: DVector<f64>,
    pub residual: f64,
    pub status: QpStatus,
    pub iterations: u32,
}

fn row_key(a: &DMatrix<f64>, r: usize, b: f64, sign: f64) -> Vec<u64> {
    let mut key: Vec<u64> = Vec::new();
    for j in 0..a.ncols() {
        let v = a[(r, j)];
        if v != 0.0 {
            key.push(j as u64);
            key.push((sign * v).to_bits());
        }
    }
    key.push((sign * b).to_bits());
    key
}

impl Smooth {
    pub fn build(spec: &QpSpec) -> Smooth {
        let n = spec.n();
        let m = spec.m();
        let k = spec.penalty_rows.len();
        let nz = n + k;
        let mut infeasible = false;

        let mut weight = vec![None; m];
        let mut aux_of = HashMap::new();
        for (i, (&r, &w)) in spec
            .penalty_rows
            .iter()
            .zip(&spec.penalty_weights)
            .enumerate()
        {
            weight[r] = Some(w);
            aux_of.insert(r, n + i);
        }

        let mut eq: Vec<(Vec<(usize, f64)>, f64, Origin)> = Vec::new();
        let mut ineq: Vec<(Vec<(usize, f64)>, f64, Origin)> = Vec::new();
        let coeffs = |r: usize| -> Vec<(usize, f64)> {
            (0..n)
                .filter_map(|j| {
                    let v = spec.a[(r, j)];
                    (v != 0.0).then_some((j, v))
                })
                .collect()
        };

        // Pair exact opposite hard rows into equalities.
        let mut by_key: HashMap<Vec<u64>, Vec<usize>> = HashMap::new();
        let mut paired = vec![None; m];
        for r in 0..m {
            if weight[r].is_some() || !spec.b[r].is_finite() {
                continue;
            }
            let neg = row_key(&spec.a, r, spec.b[r], -1.0);
            if let Some(list) = by_key.get_mut(&neg) {
                if let Some(s) = list.pop() {
                    paired[s] = Some(r);
                    paired[r] = Some(s);
                    continue;
                }
            }
            by_key
                .entry(row_key(&spec.a, r, spec.b[r], 1.0))
                .or_default()
                .push(r);
        }

        for r in 0..m {
            let b = spec.b[r];
            let cf = coeffs(r);
            if let Some(_w) = weight[r] {
                let aux = aux_of[&r];
                if b == f64::INFINITY {
                    // Never violated; keep the auxiliary pinned at zero.
                    ineq.push((vec![(aux, -1.0)], 0.0, Origin::AuxNonneg { r }));
                    continue;
                }
                let mut row = cf;
                row.push((aux, -1.0));
                if b == f64::NEG_INFINITY {
                    infeasible = true;
                    continue;
                }
                ineq.push((row, b, Origin::Penalty { r }));
                ineq.push((vec![(aux, -1.0)], 0.0, Origin::AuxNonneg { r }));
                continue;
            }
            if b == f64::INFINITY {
                continue;
            }
            if b.is_nan() || b == f64::NEG_INFINITY {
                infeasible = true;
                continue;
            }
            if cf.is_empty() {
                if b < 0.0 {
                    infeasible = true;
                }
                continue;
            }
            match paired[r] {
                Some(s) if s > r => eq.push((cf, b, Origin::Row { r, pair: Some(s) })),
                Some(_) => {}
                None => ineq.push((cf, b, Origin::Row { r, pair: None })),
            }
        }
        for j in 0..n {
            let (l, u) = (spec.lower[j], spec.upper[j]);
            if l.is_nan() || u.is_nan() || l > u || l == f64::INFINITY || u == f64::NEG_INFINITY {
                infeasible = true;
                continue;
            }
            if l == u {
                eq.push((vec![(j, 1.0)], l, Origin::Fixed(j)));
                continue;
            }
            if u.is_finite() {
                ineq.push((vec![(j, 1.0)], u, Origin::Upper(j)));
            }
            if l.is_finite() {
                ineq.push((vec![(j, -1.0)], -l, Origin::Lower(j)));
            }
        }

        let n_eq = eq.len();
        let rows: Vec<_> = eq.into_iter().chain(ineq).collect();
        let mut g = DMatrix::zeros(rows.len(), nz);
        let mut h = DVector::zeros(rows.len());
        let mut origin = Vec::with_capacity(rows.len());
        for (i, (cf, b, o)) in rows.into_iter().enumerate() {
            for (j, v) in cf {
                g[(i, j)] = v;
            }
            h[i] = b;
            origin.push(o);
        }
        let mut p = DMatrix::zeros(nz, nz);
        p.view_mut((0, 0), (n, n)).copy_from(&spec.q_mat);
        let mut c = DVector::zeros(nz);
        c.rows_mut(0, n).copy_from(&spec.q_vec);
        for (&r, &w) in spec.penalty_rows.iter().zip(&spec.penalty_weights) {
            c[aux_of[&r]] = w;
        }
        Smooth {
            n,
            p,
            c,
            g,
            h,
            n_eq,
            origin,
            aux_of,
            infeasible,
        }
    }

    pub fn trivially_infeasible(&self) -> bool {
        self.infeasible
    }

    pub fn nz(&self) -> usize {
        self.c.len()
    }

    pub fn solve(&self, opts: &QpOptions) -> Raw {
        let nz = self.nz();
        let rows = self.h.len();
        if nz == 0 {
            let z = DVector::zeros(0);
            let y = DVector::zeros(rows);
            let residual = self.residual(&z, &y);
            return Raw {
                z,
                y,
                residual,
                status: QpStatus::Solved,
                iterations: 0,
            };
        }
        let p = csc_upper(&self.p);
        let a = csc(&self.g);
        let mut cones = Vec::new();
        if self.n_eq > 0 {
            cones.push(SupportedConeT::ZeroConeT(self.n_eq));
        }
        if rows > self.n_eq {
            cones.push(SupportedConeT::NonnegativeConeT(rows - self.n_eq));
        }
        let tol = opts.tol.max(1e-14);
        let settings = DefaultSettingsBuilder::default()
            .verbose(false)
            .max_iter(opts.max_iter)
            .tol_gap_abs(tol)
            .tol_gap_rel(tol)
            .tol_feas(tol)
            .tol_ktratio(tol.max(1e-10))
            .presolve_enable(false)
            .build()
            .expect("static solver settings are valid");
        let q: Vec<f64> = self.c.iter().copied().collect();
        let b: Vec<f64> = self.h.iter().copied().collect();
        let mut solver = match DefaultSolver::new(&p, &q, &a, &b, &cones, settings) {
            Ok(s) => s,
            Err(e) => {
                log::warn!("QP backend rejected problem: {e}");
                return self.failed();
            }
        };
        solver.solve();
        let sol = &solver.solution;
        let status = match sol.status {
            SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
                QpStatus::PrimalInfeasible
            }
            SolverStatus::Solved | SolverStatus::AlmostSolved => QpStatus::Solved,
            _ => QpStatus::MaxIter,
        };
        let z = DVector::from_column_slice(&sol.x);
        let y = DVector::from_column_slice(&sol.z);
        let residual = if z.iter().chain(y.iter()).all(|v| v.is_finite()) {
            self.residual(&z, &y)
        } else {
            f64::INFINITY
        };
        Raw {
            z,
            y,
            residual,
            status,
            iterations: sol.iterations,
        }
    }

    fn failed(&self) -> Raw {
        Raw {
            z: DVector::zeros(self.nz()),
            y: DVector::zeros(self.h.len()),
            residual: f64::INFINITY,
            status: QpStatus::MaxIter,
            iterations: 0,
        }
    }

    /// Largest absolute row violation at `z`.
    pub fn max_violation(&self, z: &DVector<f64>) -> f64 {
        let gz = &self.g * z;
        (0..self.h.len())
            .map(|i| {
                let slack = self.h[i] - gz[i];
                if i < self.n_eq {
                    slack.abs()
                } else {
                    (-slack).max(0.0)
                }
            })
            .fold(0.0, f64::max)
    }

    /// Relative KKT residual of `(z, y)`.
    pub fn residual(&self, z: &DVector<f64>, y: &DVector<f64>) -> f64 {
        let gz = &self.g * z;
        let pz = &self.p * z;
        let gty = self.g.tr_mul(y);
        let inf = |v: &DVector<f64>| v.amax();
        let scale_p = 1.0 + inf(&self.h).max(inf(&gz));
        let scale_d = 1.0 + inf(&pz).max(inf(&self.c)).max(inf(&gty));
        let y_max = 1.0 + inf(y);
        let mut prim = 0.0_f64;
        let mut comp = 0.0_f64;
        let mut sign = 0.0_f64;
        for i in 0..self.h.len() {
            let slack = self.h[i] - gz[i];
            if i < self.n_eq {
                prim = prim.max(slack.abs());
            } else {
                prim = prim.max(-slack);
                comp = comp.max((y[i] * slack).abs());
                sign = sign.max(-y[i]);
            }
        }
        let stat = inf(&(pz + &self.c + gty));
        (prim / scale_p)
            .max(stat / scale_d)
            .max(comp / (scale_p * y_max))
            .max(sign / y_max)
    }

    /// Map a smooth-problem iterate back to the caller's variables and multipliers.
    pub fn finish(&self, spec: &QpSpec, raw: Raw, status: QpStatus, polished: bool) -> QpResult {
        let n = self.n;
        let x = raw.z.rows(0, n).into_owned();
        let mut row_duals = DVector::zeros(spec.m());
        let mut lower_duals = DVector::zeros(n);
        let mut upper_duals = DVector::zeros(n);
        for (i, o) in self.origin.iter().enumerate() {
            let y = raw.y[i];
            match *o {
                Origin::Row { r, pair: None } | Origin::Penalty { r } => row_duals[r] = y,
                Origin::Row { r, pair: Some(s) } => {
                    row_duals[r] = y.max(0.0);
                    row_duals[s] = (-y).max(0.0);
                }
                Origin::AuxNonneg { .. } => {}
                Origin::Lower(j) => lower_duals[j] = y,
                Origin::Upper(j) => upper_duals[j] = y,
                Origin::Fixed(j) => {
                    upper_duals[j] = y.max(0.0);
                    lower_duals[j] = (-y).max(0.0);
                }
            }
        }
        QpResult {
            objective: spec.objective(&x),
            penalty: spec.penalty(&x),
            x,
            kkt_residual: raw.residual,
            status,
            row_duals,
            lower_duals,
            upper_duals,
            iterations: raw.iterations,
            polished,
        }
    }

    /// Inverse of [`Smooth::finish`]: rebuild `(z, y)` from a result.
    pub fn lift(&self, spec: &QpSpec, r: &QpResult) -> (DVector<f64>, DVector<f64>) {
        let mut z = DVector::zeros(self.nz());
        z.rows_mut(0, self.n).copy_from(&r.x);
        for (&row, &aux) in &self.aux_of {
            let v = spec.a.row(row).transpose().dot(&r.x) - spec.b[row];
            z[aux] = v.max(0.0);
        }
        let mut y = DVector::zeros(self.h.len());
        let weight: HashMap<usize, f64> = spec
            .penalty_rows
            .iter()
            .copied()
            .zip(spec.penalty_weights.iter().copied())
            .collect();
        for (i, o) in self.origin.iter().enumerate() {
            y[i] = match *o {
                Origin::Row { r: row, pair: None } | Origin::Penalty { r: row } => r.row_duals[row],
                Origin::Row {
                    r: row,
                    pair: Some(s),
                } => r.row_duals[row] - r.row_duals[s],
                Origin::AuxNonneg { r: row } => {
                    let pen = if spec.b[row].is_finite() {
                        r.row_duals[row]
                    } else {
                        0.0
                    };
                    weight[&row] - pen
                }
                Origin::Lower(j) => r.lower_duals[j],
                Origin::Upper(j) => r.upper_duals[j],
                Origin::Fixed(j) => r.upper_duals[j] - r.lower_duals[j],
            };
        }
        (z, y)
    }
}

fn csc(m: &DMatrix<f64>) -> CscMatrix<f64> {
    csc_filtered(m, |_, _| true)
}

fn csc_upper(m: &DMatrix<f64>) -> CscMatrix<f64> {
    csc_filtered(m, |i, j| i <= j)
}

fn csc_filtered(m: &DMatrix<f64>, keep: impl Fn(usize, usize) -> bool) -> CscMatrix<f64> {
    let (rows, cols) = m.shape();
    let mut colptr = Vec::with_capacity(cols + 1);
    let mut rowval = Vec::new();
    let mut nzval = Vec::new();
    colptr.push(0);
    for j in 0..cols {
        for i in 0..rows {
            let v = m[(i, j)];
            if v != 0.0 && keep(i, j) {
                rowval.push(i);
                nzval.push(v);
            }
        }
        colptr.push(rowval.len());
    }
    CscMatrix::new(rows, cols, colptr, rowval, nzval)
}
