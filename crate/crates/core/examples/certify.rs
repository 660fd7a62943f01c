//! Compare greedy with the exhaustive optimum and check the 1 - 1/e floor.

use eigsense::problems::ProblemSpec;
use eigsense::select::DEFAULT_EXHAUSTIVE_CAP;
use eigsense::{certify_bound, exhaustive, greedy};

fn main() -> eigsense::Result<()> {
    println!("seed  k  greedy        optimum       ratio");
    for seed in 0..8 {
        let problem = ProblemSpec::random(6, 12, seed).generate()?;
        let k = 1 + seed as usize % 5;
        let g = greedy(&problem, k)?;
        let opt = exhaustive(&problem, k, DEFAULT_EXHAUSTIVE_CAP)?;
        let cert = certify_bound(&g, &opt)?.certificate.expect("certified report");
        println!(
            "{seed:>4}  {k}  {:.6e}  {:.6e}  {:.6}",
            g.phi_final, cert.opt_phi, cert.ratio
        );
    }
    Ok(())
}
