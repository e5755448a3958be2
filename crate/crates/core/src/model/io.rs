//! JSON problem files.
//!
//! Matrices are dense and row-major. Infinite values are written as the
//! strings `"inf"` / `"-inf"`. A big-M `row` below the agent's local row count
//! refers to a local row; larger values refer to coupling row `row - m_i`.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::de::{self, Deserializer};
use serde::ser::Serializer;
use serde::{Deserialize, Serialize};

use super::{AgentBlock, BigMEntry, MiqpProblem, Polarity, RowRef, SoftRow};
use crate::error::{Error, Result};

/// A float that may be infinite; infinities travel as strings.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Real(f64);

impl Serialize for Real {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.0 == f64::INFINITY {
            s.serialize_str("inf")
        } else if self.0 == f64::NEG_INFINITY {
            s.serialize_str("-inf")
        } else {
            s.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for Real {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(Real(v)),
            Raw::Str(s) => match s.as_str() {
                "inf" | "+inf" | "Infinity" => Ok(Real(f64::INFINITY)),
                "-inf" | "-Infinity" => Ok(Real(f64::NEG_INFINITY)),
                other => Err(de::Error::custom(format!(
                    "expected number or \"inf\", got {other:?}"
                ))),
            },
        }
    }
}

#[derive(Serialize, Deserialize)]
#[allow(non_snake_case)]
#[serde(deny_unknown_fields)]
struct AgentJson {
    Q: Vec<Vec<f64>>,
    q: Vec<f64>,
    #[serde(default, skip_serializing_if = "is_zero")]
    constant: f64,
    A: Vec<Vec<f64>>,
    b: Vec<Real>,
    bounds: Vec<[Real; 2]>,
    binary_cols: Vec<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    relaxed_cols: Vec<usize>,
    #[serde(default)]
    bigm: Vec<BigMJson>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    soft: Vec<SoftJson>,
}

#[derive(Serialize, Deserialize)]
#[allow(non_snake_case)]
#[serde(deny_unknown_fields)]
struct BigMJson {
    row: usize,
    col: usize,
    polarity: Polarity,
    M: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    M_initial: Option<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SoftJson {
    row: usize,
    weight: f64,
}

#[derive(Serialize, Deserialize)]
#[allow(non_snake_case)]
#[serde(deny_unknown_fields)]
struct CouplingJson {
    C: Vec<Vec<Vec<f64>>>,
    d: Vec<Real>,
    #[serde(default, skip_serializing_if = "is_zero_usize")]
    eq_count: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProblemJson {
    agents: Vec<AgentJson>,
    coupling: CouplingJson,
}

fn is_zero(v: &f64) -> bool {
    *v == 0.0
}

fn is_zero_usize(v: &usize) -> bool {
    *v == 0
}

fn matrix(rows: &[Vec<f64>], ncols: usize, what: &str) -> Result<DMatrix<f64>> {
    if let Some((r, row)) = rows.iter().enumerate().find(|(_, r)| r.len() != ncols) {
        return Err(Error::Dimension(format!(
            "{what}: row {r} has {} entries, expected {ncols}",
            row.len()
        )));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn row_ref(row: usize, m_local: usize) -> RowRef {
    if row < m_local {
        RowRef::Local(row)
    } else {
        RowRef::Coupling(row - m_local)
    }
}

fn row_index(r: RowRef, m_local: usize) -> usize {
    match r {
        RowRef::Local(k) => k,
        RowRef::Coupling(k) => m_local + k,
    }
}

fn agent_from_json(i: usize, a: AgentJson, c: &[Vec<f64>], mc: usize) -> Result<AgentBlock> {
    let n = a.q.len();
    let ctx = |s: &str| format!("agent {i} {s}");
    let q_mat = matrix(&a.Q, n, &ctx("Q"))?;
    if q_mat.nrows() != n {
        return Err(Error::Dimension(format!(
            "agent {i} Q has {} rows, expected {n}",
            q_mat.nrows()
        )));
    }
    let a_mat = matrix(&a.A, n, &ctx("A"))?;
    if a.b.len() != a_mat.nrows() {
        return Err(Error::Dimension(format!(
            "agent {i} b has {} entries, A has {} rows",
            a.b.len(),
            a_mat.nrows()
        )));
    }
    let c_mat = matrix(c, n, &ctx("C"))?;
    if c_mat.nrows() != mc {
        return Err(Error::Dimension(format!(
            "agent {i} C has {} rows, d has {mc}",
            c_mat.nrows()
        )));
    }
    if a.bounds.len() != n {
        return Err(Error::Dimension(format!(
            "agent {i} has {} bounds, expected {n}",
            a.bounds.len()
        )));
    }
    let m_local = a_mat.nrows();
    Ok(AgentBlock {
        q_mat,
        q_vec: DVector::from_vec(a.q),
        constant: a.constant,
        a: a_mat,
        b: DVector::from_iterator(m_local, a.b.iter().map(|r| r.0)),
        c: c_mat,
        lower: DVector::from_iterator(n, a.bounds.iter().map(|b| b[0].0)),
        upper: DVector::from_iterator(n, a.bounds.iter().map(|b| b[1].0)),
        binary_cols: a.binary_cols,
        relaxed_cols: a.relaxed_cols,
        bigm: a
            .bigm
            .into_iter()
            .map(|e| BigMEntry {
                row: row_ref(e.row, m_local),
                col: e.col,
                polarity: e.polarity,
                m_current: e.M,
                m_initial: e.M_initial.unwrap_or(e.M),
            })
            .collect(),
        soft: a
            .soft
            .into_iter()
            .map(|s| SoftRow {
                row: row_ref(s.row, m_local),
                weight: s.weight,
            })
            .collect(),
    })
}

/// Parse a problem from JSON text. Shape errors are reported; structural
/// validation is left to [`MiqpProblem::validate`].
pub fn problem_from_json(text: &str) -> Result<MiqpProblem> {
    let raw: ProblemJson = serde_json::from_str(text)?;
    let mc = raw.coupling.d.len();
    if raw.coupling.C.len() != raw.agents.len() {
        return Err(Error::Dimension(format!(
            "coupling.C has {} blocks for {} agents",
            raw.coupling.C.len(),
            raw.agents.len()
        )));
    }
    let agents = raw
        .agents
        .into_iter()
        .zip(&raw.coupling.C)
        .enumerate()
        .map(|(i, (a, c))| agent_from_json(i, a, c, mc))
        .collect::<Result<Vec<_>>>()?;
    Ok(MiqpProblem {
        agents,
        d: DVector::from_iterator(mc, raw.coupling.d.iter().map(|r| r.0)),
        coupling_eq_count: raw.coupling.eq_count,
    })
}

pub fn problem_to_json(p: &MiqpProblem) -> String {
    let agents = p
        .agents
        .iter()
        .map(|blk| {
            let m_local = blk.m_local();
            AgentJson {
                Q: rows_of(&blk.q_mat),
                q: blk.q_vec.iter().copied().collect(),
                constant: blk.constant,
                A: rows_of(&blk.a),
                b: blk.b.iter().map(|v| Real(*v)).collect(),
                bounds: blk
                    .lower
                    .iter()
                    .zip(blk.upper.iter())
                    .map(|(l, u)| [Real(*l), Real(*u)])
                    .collect(),
                binary_cols: blk.binary_cols.clone(),
                relaxed_cols: blk.relaxed_cols.clone(),
                bigm: blk
                    .bigm
                    .iter()
                    .map(|e| BigMJson {
                        row: row_index(e.row, m_local),
                        col: e.col,
                        polarity: e.polarity,
                        M: e.m_current,
                        M_initial: (e.m_initial != e.m_current).then_some(e.m_initial),
                    })
                    .collect(),
                soft: blk
                    .soft
                    .iter()
                    .map(|s| SoftJson {
                        row: row_index(s.row, m_local),
                        weight: s.weight,
                    })
                    .collect(),
            }
        })
        .collect();
    let raw = ProblemJson {
        agents,
        coupling: CouplingJson {
            C: p.agents.iter().map(|a| rows_of(&a.c)).collect(),
            d: p.d.iter().map(|v| Real(*v)).collect(),
            eq_count: p.coupling_eq_count,
        },
    };
    serde_json::to_string_pretty(&raw).expect("problem serialization cannot fail")
}

pub fn read_problem(path: impl AsRef<Path>) -> Result<MiqpProblem> {
    problem_from_json(&fs::read_to_string(path)?)
}

pub fn write_problem(p: &MiqpProblem, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, problem_to_json(p) + "\n")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::example1;

    #[test]
    fn round_trip_example1() {
        let p = example1();
        let text = problem_to_json(&p);
        let back = problem_from_json(&text).unwrap();
        assert_eq!(back, p);
        assert_eq!(problem_to_json(&back), text);
    }

    #[test]
    fn infinities_are_strings() {
        let text = problem_to_json(&example1());
        assert!(text.contains("\"-inf\""));
        assert!(text.contains("\"inf\""));
    }

    #[test]
    fn coupling_bigm_row_offsets() {
        let mut p = example1();
        p.agents[0].c[(1, 1)] = 1.0;
        p.agents[0].bigm.push(BigMEntry::new(
            RowRef::Coupling(1),
            1,
            Polarity::OneMinusDelta,
            1.0,
        ));
        let back = problem_from_json(&problem_to_json(&p)).unwrap();
        assert_eq!(back.agents[0].bigm[1].row, RowRef::Coupling(1));
    }

    #[test]
    fn ragged_matrix_is_dimension_error() {
        let text = problem_to_json(&example1()).replacen(
            "[\n          2.0,\n          0.0\n        ]",
            "[2.0]",
            1,
        );
        assert!(matches!(problem_from_json(&text), Err(Error::Dimension(_))));
    }

    #[test]
    fn garbage_is_json_error() {
        assert!(matches!(problem_from_json("{"), Err(Error::Json(_))));
        assert!(matches!(
            problem_from_json(r#"{"agents": [], "coupling": {"C": [], "d": ["huge"]}}"#),
            Err(Error::Json(_))
        ));
    }
}
