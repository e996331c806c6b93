//! Finite-difference gradient checks for every registered op.
//!
//! `cargo run --release --example gradcheck [OP_NAME]`

use sqldepth::diffcore::gradcheck::{gradcheck, registered_names};

fn main() -> sqldepth::Result<()> {
    let names: Vec<String> = match std::env::args().nth(1) {
        Some(op) => vec![op],
        None => registered_names().into_iter().map(String::from).collect(),
    };
    let mut worst_overall = 0.0f64;
    for name in &names {
        let worst = (0..3).map(|seed| gradcheck(name, None, seed).map(|r| r.max_rel_err)).try_fold(0.0f64, |a, e| e.map(|e| a.max(e)))?;
        worst_overall = worst_overall.max(worst);
        println!("{:<28} {worst:.3e} {}", name, if worst < 1e-4 { "ok" } else { "FAIL" });
    }
    println!("{} ops, worst relative error {worst_overall:.3e}", names.len());
    Ok(())
}
