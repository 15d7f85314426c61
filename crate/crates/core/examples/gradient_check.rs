//! Finite-difference check of every layer and the tiny three-stream model.
//!
//! cargo run --example gradient_check -- [seed]

use skelfall::audit::{gradient_audit, GRAD_TOLERANCE};

fn main() -> skelfall::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let checks = gradient_audit(seed)?;
    for c in &checks {
        println!(
            "{:<32} {:>6} params  max rel error {:.2e}  {}",
            c.module,
            c.parameters,
            c.max_rel_error,
            if c.passed() { "ok" } else { "FAIL" }
        );
    }
    let failed = checks.iter().filter(|c| !c.passed()).count();
    println!("tolerance {GRAD_TOLERANCE:e}, {failed} failed");
    Ok(())
}
