//! Expected revelations per unit as the unit grows, and where they fade out.
//!
//!     cargo run --example analytic_model

use voterev::model::{evaluate, expected_local, expected_public, public_maximizer, tipping_point, ModelParams};

fn main() -> voterev::Result<()> {
    let w = [0.7, 0.3];
    println!("   N   public  local(1)");
    for n in [1u64, 2, 3, 5, 10, 15, 20, 25, 30] {
        let p = ModelParams::new(n, &w, 0.0, 1)?;
        let local = expected_local(&p).map(|x| format!("{x:9.5}")).unwrap_or_else(|_| "        -".into());
        println!("{n:>4} {:8.5} {local}", expected_public(&p.with_alpha(0))?);
    }
    for t in [0.01, 0.001] {
        println!("below {t} from N = {}", tipping_point(&w, 0.0, t, 10_000)?);
    }
    let (n, peak) = public_maximizer(&[0.95, 0.05], 0.05, 200)?;
    println!("lopsided race with 5% abstention peaks at N = {n} ({peak:.3} voters)");

    // alpha near N/2 has no closed form; the evaluator picks enumeration or simulation
    let p = ModelParams::new(40, &[0.5, 0.3, 0.2], 0.1, 25)?;
    let (method, est) = evaluate(&p, 20_000, 1)?;
    println!("N=40 alpha=25 via {}: {:.4} +/- {:.4}", method.label(), est.mean, est.std_error);
    Ok(())
}
