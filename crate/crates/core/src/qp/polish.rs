use nalgebra::{DMatrix, DVector};

use super::backend::{Raw, Smooth};
use super::QpStatus;

const MAX_ROUNDS: usize = 8;
const REFINE_STEPS: usize = 25;

/// Re-solve on the active set guessed from an interior-point iterate.
///
/// Rows whose multiplier exceeds their slack are treated as equalities. Rows
/// with a negative multiplier are dropped and violated rows added, for a few
/// rounds. Returns the candidate with the smallest KKT residual.
pub(crate) fn polish(s: &Smooth, raw: &Raw) -> Option<Raw> {
    let rows = s.h.len();
    let gz = &s.g * &raw.z;
    let mut active: Vec<bool> = (0..rows)
        .map(|i| i < s.n_eq || raw.y[i] > s.h[i] - gz[i])
        .collect();
    let mut best: Option<Raw> = None;
    for _ in 0..MAX_ROUNDS {
        let Some((z, y)) = solve_eqp(s, &active) else {
            break;
        };
        let residual = s.residual(&z, &y);
        let gz = &s.g * &z;
        if best.as_ref().map_or(true, |b| residual < b.residual) {
            best = Some(Raw {
                z,
                y: y.clone(),
                residual,
                status: QpStatus::Solved,
                iterations: raw.iterations,
            });
        }
        let mut changed = false;
        for i in s.n_eq..rows {
            let viol = gz[i] - s.h[i];
            if active[i] && y[i] < 0.0 {
                active[i] = false;
                changed = true;
            } else if !active[i] && viol > 1e-13 * (1.0 + s.h[i].abs()) {
                active[i] = true;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    best
}

fn solve_eqp(s: &Smooth, active: &[bool]) -> Option<(DVector<f64>, DVector<f64>)> {
    let nz = s.nz();
    let idx: Vec<usize> = (0..active.len()).filter(|&i| active[i]).collect();
    let na = idx.len();
    let dim = nz + na;
    let mut k0 = DMatrix::zeros(dim, dim);
    k0.view_mut((0, 0), (nz, nz)).copy_from(&s.p);
    for (a, &i) in idx.iter().enumerate() {
        for j in 0..nz {
            let v = s.g[(i, j)];
            k0[(nz + a, j)] = v;
            k0[(j, nz + a)] = v;
        }
    }
    let mut rhs = DVector::zeros(dim);
    rhs.rows_mut(0, nz).copy_from(&(-&s.c));
    for (a, &i) in idx.iter().enumerate() {
        rhs[nz + a] = s.h[i];
    }
    let delta = 1e-9 * (1.0 + k0.amax());
    let mut kreg = k0.clone();
    for d in 0..dim {
        kreg[(d, d)] += if d < nz { delta } else { -delta };
    }
    let lu = kreg.lu();
    let mut sol = lu.solve(&rhs)?;
    let scale = 1.0 + rhs.amax();
    for _ in 0..REFINE_STEPS {
        let r = &rhs - &k0 * &sol;
        if r.amax() <= 1e-15 * scale {
            break;
        }
        sol += lu.solve(&r)?;
    }
    if sol.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let z = sol.rows(0, nz).into_owned();
    let mut y = DVector::zeros(active.len());
    for (a, &i) in idx.iter().enumerate() {
        y[i] = sol[nz + a];
    }
    Some((z, y))
}
