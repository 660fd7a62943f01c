//! Posterior mean and covariance for a design, and the KL divergence from the
//! prior.

use eigsense::problems::ProblemSpec;
use eigsense::verify::kl_gaussian;
use eigsense::Design;
use nalgebra::DVector;

fn main() -> eigsense::Result<()> {
    let problem = ProblemSpec::chain(12, 5, 0).generate()?;
    let design = Design::new(&problem, [0, 2, 4])?;

    // noiseless data from a smooth truth
    let truth = DVector::from_fn(problem.dim(), |i, _| (i as f64 / 11.0 * std::f64::consts::PI).sin());
    let all = problem.forward() * &truth;
    let y = DVector::from_fn(design.len(), |r, _| all[design.indices()[r]]);

    let post = problem.posterior(&design, &y)?;
    println!("node  truth     mean      std");
    for i in 0..problem.dim() {
        let var = post.cov.rep()[(i, i)];
        println!("{i:>4}  {:+.4}  {:+.4}  {:.4}", truth[i], post.mean[i], var.sqrt());
    }
    println!(
        "prior trace {:.4e}, posterior trace {:.4e}",
        problem.prior_cov().trace(),
        post.cov.trace()
    );
    println!("KL(posterior || prior) = {:.4}", kl_gaussian(&problem, &post)?);
    Ok(())
}
