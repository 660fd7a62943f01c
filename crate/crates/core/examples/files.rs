//! Write a problem file, read it back, and save a greedy report.
//!
//! cargo run --example files -- [output dir]

use std::path::PathBuf;

use eigsense::greedy;
use eigsense::io::{ProblemFile, ReportFile, SelectionRecord};
use eigsense::problems::ProblemSpec;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(std::env::temp_dir);
    let spec = ProblemSpec::random(4, 6, 2);
    let problem = spec.generate()?;

    let file = ProblemFile::from_problem(&problem, Some(spec));
    let problem_path = dir.join("problem.json");
    file.write(&problem_path)?;
    println!("wrote {} (hash {})", problem_path.display(), file.hash());

    let back = ProblemFile::read(&problem_path)?;
    assert_eq!(back.to_problem()?.fingerprint(), problem.fingerprint());

    let report = greedy(&back.to_problem()?, 3)?;
    let mut out = ReportFile::new(back.hash());
    out.selection = Some(SelectionRecord::from_report(&report, false));
    let report_path = dir.join("report.json");
    out.write(&report_path)?;
    println!("wrote {}", report_path.display());
    print!("{}", out.to_json());
    Ok(())
}
