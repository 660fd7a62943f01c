//! Sensor placement on a 1-D diffusion chain: greedy, lazy greedy and a
//! random baseline.
//!
//! cargo run --example chain_placement -- [n] [n_s] [k]

use eigsense::problems::{default_chain_sensors, ProblemSpec};
use eigsense::{greedy, lazy_greedy, random_baseline};

fn main() -> eigsense::Result<()> {
    let args: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let n = args.first().copied().unwrap_or(60);
    let n_s = args.get(1).copied().unwrap_or(20);
    let k = args.get(2).copied().unwrap_or(5);

    let problem = ProblemSpec::chain(n, n_s, 0).generate()?;
    let nodes = default_chain_sensors(n, n_s);

    let g = greedy(&problem, k)?;
    println!("step  sensor  node  gain          phi");
    for (i, s) in g.steps.iter().enumerate() {
        println!(
            "{:>4}  {:>6}  {:>4}  {:.6e}  {:.6e}",
            i + 1,
            s.index + 1,
            nodes[s.index],
            s.gain,
            s.phi
        );
    }

    let lazy = lazy_greedy(&problem, k)?;
    println!(
        "lazy greedy: same design = {}, {} gain evaluations vs {}",
        lazy.chosen == g.chosen,
        lazy.evaluations,
        g.evaluations
    );

    let best_random = (0..20)
        .map(|seed| random_baseline(&problem, k, seed).map(|r| r.phi_final))
        .collect::<eigsense::Result<Vec<_>>>()?
        .into_iter()
        .fold(f64::NEG_INFINITY, f64::max);
    println!(
        "greedy phi {:.4}, best of 20 random designs {:.4}",
        g.phi_final, best_random
    );
    Ok(())
}
