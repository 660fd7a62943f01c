//! Monte Carlo estimate of the expected KL divergence against 1/2 phi.

use eigsense::problems::ProblemSpec;
use eigsense::verify::mc_eig;
use eigsense::{eig_nats, Design};

fn main() -> eigsense::Result<()> {
    let problem = ProblemSpec::random(3, 4, 11).generate()?;
    let design = Design::new(&problem, [0, 2])?;
    let analytic = eig_nats(&problem, &design)?;
    println!("analytic EIG {analytic:.6}");
    for n in [1_000, 10_000, 100_000] {
        let est = mc_eig(&problem, &design, n, 0)?;
        let z = (est.mean_kl - analytic) / est.std_error;
        println!(
            "{n:>7} samples: {:.6} +- {:.6}  (z = {z:+.2})",
            est.mean_kl, est.std_error
        );
    }
    Ok(())
}
