//! The convex QP layer on its own: a box- and row-constrained problem with one
//! soft (penalized) row.
//!
//!     cargo run --example qp_backend

use dmiqp::qp::{solve_qp, QpSpec};
use nalgebra::{DMatrix, DVector};

fn main() -> dmiqp::Result<()> {
    // min (x0 - 3)^2 + (x1 - 2)^2  s.t.  x0 + x1 <= 3,  x0 - x1 <= 0.5 (soft, weight 2),  0 <= x <= 4
    let spec = QpSpec::new(
        DMatrix::from_diagonal_element(2, 2, 2.0),
        DVector::from_vec(vec![-6.0, -4.0]),
    )
    .with_rows(
        DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, -1.0]),
        DVector::from_vec(vec![3.0, 0.5]),
    )
    .with_bounds(DVector::zeros(2), DVector::from_element(2, 4.0))
    .with_penalty(vec![1], vec![2.0]);
    let r = solve_qp(&spec, 1e-9, 1000)?;
    println!("status {:?}", r.status);
    println!("x = {}", r.x.transpose());
    println!("objective {:.6} (penalty {:.6})", r.objective, r.penalty);
    println!("row duals {}", r.row_duals.transpose());
    println!(
        "KKT residual {:.2e}, polished {}",
        r.kkt_residual, r.polished
    );
    Ok(())
}
