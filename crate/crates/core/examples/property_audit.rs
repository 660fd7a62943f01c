//! Audit monotonicity and diminishing returns of phi on a problem with a
//! duplicated sensor.

use eigsense::problems::{ChainParams, ProblemKind, ProblemSpec};
use eigsense::verify::{check_monotone, check_submodular, SubmodularMode};

fn main() -> eigsense::Result<()> {
    let spec = ProblemSpec {
        kind: ProblemKind::Chain,
        chain: ChainParams {
            sensors: Some(vec![2, 5, 5, 9, 12, 14]),
            ..ChainParams::default()
        },
        ..ProblemSpec::random(16, 6, 0)
    };
    let problem = spec.generate()?;

    let mono = check_monotone(&problem, 200, 1)?;
    println!(
        "monotone: {} gains checked, min gain {:.3e}, max formula error {:.1e}, passed {}",
        mono.checked,
        mono.min_gain.unwrap_or(f64::NAN),
        mono.max_formula_error,
        mono.passed()
    );

    let sub = check_submodular(&problem, SubmodularMode::Exhaustive)?;
    println!(
        "submodular: {} triples, gap range [{:.3e}, {:.3e}], max closed-form error {:.1e}, passed {}",
        sub.checked,
        sub.min_gap.unwrap_or(f64::NAN),
        sub.max_gap.unwrap_or(f64::NAN),
        sub.max_closed_form_error,
        sub.passed()
    );
    Ok(())
}
