//! Serial SVRG on a well-conditioned least-squares problem, printing the
//! suboptimality of each stage's anchor.

use dvrsgd::{make_synthetic, serial_svrg, LossKind, SyntheticSpec};

fn main() -> dvrsgd::Result<()> {
    // unit-norm-bounded rows keep every per-sample curvature at 10
    let p = make_synthetic(
        &SyntheticSpec::new(LossKind::Quadratic, 500, 10)
            .lambda(1.0)
            .row_norm(3.0)
            .seed(5),
    )?;
    let best = p.objective(&p.solve_optimum(1e-12, 10)?)?;
    let m = 2 * p.len() as u64;
    let anchors = serial_svrg(&p, 0.025, m, 8, 1)?;
    for (s, a) in anchors.iter().enumerate() {
        println!("stage {s:>2}  F - F* = {:.3e}", p.objective(a)? - best);
    }
    Ok(())
}
