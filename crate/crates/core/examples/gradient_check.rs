//! Finite-difference check of every differentiable primitive and of the
//! full training objective on a two-sample batch.

use a2summ::selfcheck::{gradient_checks, GRAD_TOLERANCE};

fn main() {
    let checks = gradient_checks();
    for c in &checks {
        println!("{} {:<26} {}", if c.passed { "ok  " } else { "FAIL" }, c.name, c.detail);
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    println!("{} checks below {GRAD_TOLERANCE:e}, {failed} failed", checks.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
