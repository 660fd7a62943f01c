//! Solvers for `max { phi(S) : |S| <= k }`.
//!
//! Because `phi` is strictly increasing on active candidates, every solver
//! returns exactly `k` sensors. Ties are broken towards the lowest candidate
//! index (lexicographically smallest set for the exhaustive search).

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::time::Instant;

use nalgebra::{Cholesky, DMatrix};
use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::InverseProblem;
use crate::objective::{phi_eig, Design, DesignState};

/// `1 - 1/e`, the greedy approximation floor for monotone submodular
/// maximization under a cardinality constraint.
pub const GREEDY_FLOOR: f64 = 1.0 - 1.0 / std::f64::consts::E;

/// Slack allowed when comparing a ratio against [`GREEDY_FLOOR`].
pub const FLOOR_TOL: f64 = 1e-12;

/// Tolerance on the non-increase of successive greedy gains.
pub const GAIN_MONOTONE_TOL: f64 = 1e-9;

/// Default limit on the number of subsets the exhaustive search may visit.
pub const DEFAULT_EXHAUSTIVE_CAP: u128 = 2_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Greedy,
    LazyGreedy,
    Exhaustive,
    Random,
}

/// One selection step: the sensor added, its marginal gain, and `phi` after it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step {
    pub index: usize,
    pub gain: f64,
    pub phi: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundCertificate {
    pub opt_phi: f64,
    pub ratio: f64,
    pub floor: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionReport {
    pub method: Method,
    pub budget: usize,
    pub chosen: Design,
    /// For greedy methods, the order of selection. Exhaustive and random
    /// designs are replayed in ascending index order.
    pub steps: Vec<Step>,
    /// `phi(chosen)` by dense factorization, so that equal designs report
    /// bitwise-equal values regardless of method.
    pub phi_final: f64,
    /// `phi_final / 2`.
    pub eig_final: f64,
    pub certificate: Option<BoundCertificate>,
    pub wall_time: f64,
    pub seed: Option<u64>,
    pub problem_fingerprint: String,
    /// Number of marginal-gain (or subset) evaluations performed.
    pub evaluations: usize,
}

impl SelectionReport {
    pub fn gains(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.gain).collect()
    }
}

fn check_budget(problem: &InverseProblem, k: usize) -> Result<Vec<usize>> {
    let active = problem.active_indices();
    if k > active.len() {
        return Err(Error::BudgetTooLarge {
            k,
            active: active.len(),
        });
    }
    Ok(active)
}

struct Finish<'a> {
    problem: &'a InverseProblem,
    method: Method,
    budget: usize,
    steps: Vec<Step>,
    chosen: Design,
    started: Instant,
    seed: Option<u64>,
    evaluations: usize,
}

impl Finish<'_> {
    fn report(self) -> Result<SelectionReport> {
        let phi_final = phi_eig(self.problem, &self.chosen)?;
        Ok(SelectionReport {
            method: self.method,
            budget: self.budget,
            chosen: self.chosen,
            steps: self.steps,
            phi_final,
            eig_final: 0.5 * phi_final,
            certificate: None,
            wall_time: self.started.elapsed().as_secs_f64(),
            seed: self.seed,
            problem_fingerprint: self.problem.fingerprint().to_owned(),
            evaluations: self.evaluations,
        })
    }
}

fn push_step(steps: &mut Vec<Step>, state: &DesignState<'_>, index: usize, gain: f64) -> Result<()> {
    if let Some(prev) = steps.last() {
        if gain > prev.gain + GAIN_MONOTONE_TOL {
            return Err(Error::Invariant(format!(
                "greedy gain increased from {} to {gain} at step {}",
                prev.gain,
                steps.len() + 1
            )));
        }
    }
    steps.push(Step {
        index,
        gain,
        phi: state.phi(),
    });
    Ok(())
}

/// Standard greedy: `k` rounds of adding the candidate with the largest
/// marginal gain. Gains within a round are evaluated in parallel against the
/// frozen state.
pub fn greedy(problem: &InverseProblem, k: usize) -> Result<SelectionReport> {
    let started = Instant::now();
    let active = check_budget(problem, k)?;
    let mut state = DesignState::new(problem);
    let mut steps = Vec::with_capacity(k);
    let mut evaluations = 0;

    for _ in 0..k {
        let remaining: Vec<usize> = active
            .iter()
            .copied()
            .filter(|&i| !state.design().contains(i))
            .collect();
        let gains = remaining
            .par_iter()
            .map(|&v| state.marginal_gain(v))
            .collect::<Result<Vec<f64>>>()?;
        evaluations += gains.len();

        let mut best = 0;
        for (j, g) in gains.iter().enumerate().skip(1) {
            if *g > gains[best] {
                best = j;
            }
        }
        let v = remaining[best];
        let gain = state.extend(v)?;
        push_step(&mut steps, &state, v, gain)?;
    }

    Finish {
        problem,
        method: Method::Greedy,
        budget: k,
        chosen: state.design().clone(),
        steps,
        started,
        seed: None,
        evaluations,
    }
    .report()
}

#[derive(Debug, Clone, Copy)]
struct Bound {
    key: f64,
    index: usize,
}

impl PartialEq for Bound {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Bound {}

impl PartialOrd for Bound {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Bound {
    // max-heap: larger bound first, then lower index
    fn cmp(&self, other: &Self) -> Ordering {
        self.key
            .total_cmp(&other.key)
            .then_with(|| other.index.cmp(&self.index))
    }
}

/// Upper bound stored for a gain once it goes stale. The slack absorbs
/// roundoff that can make a later gain exceed an earlier one by a few ulps.
fn stale_bound(gain: f64) -> f64 {
    gain + 1e-10 * (1.0 + gain.abs())
}

/// Lazy (accelerated) greedy. Gains can only shrink as the design grows, so a
/// stale gain is an upper bound on the current one; only candidates whose
/// bound reaches the best fresh gain of the round are re-evaluated.
///
/// Selects the same sensors in the same order, with the same gains, as
/// [`greedy`].
pub fn lazy_greedy(problem: &InverseProblem, k: usize) -> Result<SelectionReport> {
    let started = Instant::now();
    let active = check_budget(problem, k)?;
    let mut state = DesignState::new(problem);
    let mut steps = Vec::with_capacity(k);
    let mut evaluations = 0;

    let mut heap: BinaryHeap<Bound> = active
        .iter()
        .map(|&index| Bound {
            key: f64::INFINITY,
            index,
        })
        .collect();

    for _ in 0..k {
        let mut fresh: Vec<(usize, f64)> = Vec::new();
        let mut best: Option<(usize, f64)> = None;
        while let Some(top) = heap.peek() {
            if let Some((_, best_gain)) = best {
                if top.key < best_gain {
                    break;
                }
            }
            let top = heap.pop().expect("peeked");
            let g = state.marginal_gain(top.index)?;
            evaluations += 1;
            let better = match best {
                None => true,
                Some((bi, bg)) => g > bg || (g == bg && top.index < bi),
            };
            if better {
                best = Some((top.index, g));
            }
            fresh.push((top.index, g));
        }
        let (v, _) = best.expect("budget checked against active candidates");
        for &(index, g) in &fresh {
            if index != v {
                heap.push(Bound {
                    key: stale_bound(g),
                    index,
                });
            }
        }
        let gain = state.extend(v)?;
        push_step(&mut steps, &state, v, gain)?;
    }

    Finish {
        problem,
        method: Method::LazyGreedy,
        budget: k,
        chosen: state.design().clone(),
        steps,
        started,
        seed: None,
        evaluations,
    }
    .report()
}

/// `C(n, k)`, saturating at `u128::MAX`.
pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        // acc * (n - i) / (i + 1) stays integral at every step
        acc = match acc.checked_mul((n - i) as u128) {
            Some(x) => x / (i as u128 + 1),
            None => return u128::MAX,
        };
    }
    acc
}

/// Replays `design` in ascending index order to produce per-step gains.
fn replay(problem: &InverseProblem, design: &Design) -> Result<Vec<Step>> {
    let mut state = DesignState::new(problem);
    let mut steps = Vec::with_capacity(design.len());
    for &v in design.indices() {
        let gain = state.extend(v)?;
        steps.push(Step {
            index: v,
            gain,
            phi: state.phi(),
        });
    }
    Ok(steps)
}

/// Exact maximizer of `phi` over all `k`-subsets of the active candidates.
///
/// Subsets are scored through the Gram matrix of the whitened sensor vectors,
/// `log det(I_k + G_S^T G_S)`, which equals `phi(S)` by Sylvester's
/// determinant identity. Subsets of size below `k` are never optimal since
/// `phi` is strictly increasing.
pub fn exhaustive(problem: &InverseProblem, k: usize, cap: u128) -> Result<SelectionReport> {
    let started = Instant::now();
    let active = check_budget(problem, k)?;
    let m = active.len();
    let subsets = binomial(m, k);
    if subsets > cap {
        return Err(Error::CapExceeded { subsets, cap });
    }

    let g = problem.whitened_sensors().select_columns(&active);
    let gram = g.tr_mul(&g);

    let mut combo: Vec<usize> = (0..k).collect();
    let mut best_phi = f64::NEG_INFINITY;
    let mut best = combo.clone();
    let mut evaluations = 0;
    let mut block = DMatrix::<f64>::zeros(k, k);
    loop {
        for (a, &i) in combo.iter().enumerate() {
            for (b, &j) in combo.iter().enumerate() {
                block[(a, b)] = gram[(i, j)] + if a == b { 1.0 } else { 0.0 };
            }
        }
        let phi = match Cholesky::new(block.clone()) {
            Some(c) => 2.0 * c.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>(),
            None => return Err(Error::NotPositiveDefinite("subset Gram matrix")),
        };
        evaluations += 1;
        if phi > best_phi {
            best_phi = phi;
            best.clone_from(&combo);
        }
        if !next_combination(&mut combo, m) {
            break;
        }
    }

    let chosen = Design::from_sorted_unchecked(best.iter().map(|&j| active[j]).collect());
    let steps = replay(problem, &chosen)?;
    Finish {
        problem,
        method: Method::Exhaustive,
        budget: k,
        chosen,
        steps,
        started,
        seed: None,
        evaluations,
    }
    .report()
}

/// Advances `combo` to the next `k`-combination of `0..m` in lexicographic
/// order. Returns false after the last one.
fn next_combination(combo: &mut [usize], m: usize) -> bool {
    let k = combo.len();
    let mut i = k;
    while i > 0 {
        i -= 1;
        if combo[i] < m - k + i {
            combo[i] += 1;
            for j in (i + 1)..k {
                combo[j] = combo[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// Uniformly random `k`-subset of the active candidates, drawn with
/// Xoshiro256++ seeded from `seed`.
pub fn random_baseline(problem: &InverseProblem, k: usize, seed: u64) -> Result<SelectionReport> {
    let started = Instant::now();
    let active = check_budget(problem, k)?;
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let mut picked: Vec<usize> = rand::seq::index::sample(&mut rng, active.len(), k)
        .into_iter()
        .map(|j| active[j])
        .collect();
    picked.sort_unstable();
    let chosen = Design::from_sorted_unchecked(picked);
    let steps = replay(problem, &chosen)?;
    Finish {
        problem,
        method: Method::Random,
        budget: k,
        chosen,
        steps,
        started,
        seed: Some(seed),
        evaluations: 0,
    }
    .report()
}

/// Attaches the approximation certificate `phi_greedy / phi_opt` to a greedy
/// report, using an exhaustive report for the same problem and budget.
pub fn certify_bound(greedy: &SelectionReport, exhaustive: &SelectionReport) -> Result<SelectionReport> {
    if greedy.problem_fingerprint != exhaustive.problem_fingerprint
        || greedy.budget != exhaustive.budget
        || exhaustive.method != Method::Exhaustive
    {
        return Err(Error::ReportMismatch);
    }
    let opt_phi = exhaustive.phi_final;
    let ratio = if opt_phi > 0.0 { greedy.phi_final / opt_phi } else { 1.0 };
    if ratio < GREEDY_FLOOR - FLOOR_TOL {
        return Err(Error::BoundViolated {
            ratio,
            floor: GREEDY_FLOOR,
        });
    }
    let mut out = greedy.clone();
    out.certificate = Some(BoundCertificate {
        opt_phi,
        ratio,
        floor: GREEDY_FLOOR,
    });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective::tests::three_sensor_problem;
    use crate::wspace::{Operator, WeightedSpace};
    use nalgebra::{dmatrix, DVector};
    use std::f64::consts::LN_2;
    use std::sync::Arc;

    fn identity_problem(n: usize) -> InverseProblem {
        let s = Arc::new(WeightedSpace::identity(n).unwrap());
        InverseProblem::new(
            Arc::clone(&s),
            DMatrix::identity(n, n),
            DVector::from_element(n, 1.0),
            DVector::zeros(n),
            Operator::identity(&s),
        )
        .unwrap()
    }

    /// Orthogonal sensors with distinct strengths 1..=n.
    fn orthogonal_problem(n: usize) -> InverseProblem {
        let s = Arc::new(WeightedSpace::identity(n).unwrap());
        let f = DMatrix::from_diagonal(&DVector::from_fn(n, |i, _| (i + 1) as f64));
        InverseProblem::new(
            Arc::clone(&s),
            f,
            DVector::from_element(n, 1.0),
            DVector::zeros(n),
            Operator::identity(&s),
        )
        .unwrap()
    }

    #[test]
    fn greedy_three_sensor_trace() {
        let p = three_sensor_problem();
        let r = greedy(&p, 2).unwrap();
        assert_eq!(r.chosen.one_based(), vec![1, 3]);
        assert_eq!(r.steps[0].index, 0);
        assert_eq!(r.steps[1].index, 2);
        assert!((r.steps[0].gain - 5f64.ln()).abs() < 1e-15);
        assert!((r.steps[1].gain - 2.2f64.ln()).abs() < 1e-15);
        assert!((r.phi_final - 11f64.ln()).abs() < 1e-14);
        assert_eq!(r.eig_final, 0.5 * r.phi_final);
    }

    #[test]
    fn greedy_identity_ties_go_to_lowest_index() {
        let p = identity_problem(5);
        let r = greedy(&p, 3).unwrap();
        assert_eq!(r.chosen.indices(), &[0, 1, 2]);
        assert_eq!(r.steps.iter().map(|s| s.index).collect::<Vec<_>>(), vec![0, 1, 2]);
        assert!((r.phi_final - 3.0 * LN_2).abs() < 1e-14);
        let full = greedy(&p, 5).unwrap();
        assert!((full.phi_final - 5.0 * LN_2).abs() < 1e-14);
    }

    #[test]
    fn greedy_one_step_is_exhaustive() {
        let p = three_sensor_problem();
        let g = greedy(&p, 1).unwrap();
        let e = exhaustive(&p, 1, DEFAULT_EXHAUSTIVE_CAP).unwrap();
        assert_eq!(g.chosen, e.chosen);
    }

    #[test]
    fn zero_budget() {
        let p = three_sensor_problem();
        for r in [
            greedy(&p, 0).unwrap(),
            lazy_greedy(&p, 0).unwrap(),
            exhaustive(&p, 0, DEFAULT_EXHAUSTIVE_CAP).unwrap(),
            random_baseline(&p, 0, 1).unwrap(),
        ] {
            assert!(r.chosen.is_empty());
            assert_eq!(r.phi_final, 0.0);
        }
    }

    #[test]
    fn budget_above_active_count() {
        let p = three_sensor_problem();
        assert!(matches!(greedy(&p, 4), Err(Error::BudgetTooLarge { k: 4, active: 3 })));
        assert!(lazy_greedy(&p, 4).is_err());
        assert!(exhaustive(&p, 4, DEFAULT_EXHAUSTIVE_CAP).is_err());
        assert!(random_baseline(&p, 4, 0).is_err());
    }

    #[test]
    fn lazy_matches_greedy_on_examples() {
        let p = three_sensor_problem();
        let lazy = lazy_greedy(&p, 2).unwrap();
        assert_eq!(lazy.chosen.one_based(), vec![1, 3]);
        let g = greedy(&p, 2).unwrap();
        assert_eq!(lazy.steps, g.steps);
        assert_eq!(lazy.phi_final, g.phi_final);

        let id = identity_problem(6);
        assert_eq!(lazy_greedy(&id, 4).unwrap().steps, greedy(&id, 4).unwrap().steps);
    }

    #[test]
    fn lazy_skips_unchanged_gains() {
        let n = 6;
        let p = orthogonal_problem(n);
        let k = 4;
        let r = lazy_greedy(&p, k).unwrap();
        // one full pass, then only the selected candidate is re-evaluated
        assert_eq!(r.evaluations, n + (k - 1));
        assert_eq!(r.chosen.indices(), &[2, 3, 4, 5]);
        assert_eq!(r.steps, greedy(&p, k).unwrap().steps);
    }

    #[test]
    fn exhaustive_three_sensor() {
        let p = three_sensor_problem();
        let r = exhaustive(&p, 2, DEFAULT_EXHAUSTIVE_CAP).unwrap();
        assert_eq!(r.chosen.one_based(), vec![1, 3]);
        assert!((r.phi_final - 11f64.ln()).abs() < 1e-14);
        assert_eq!(r.evaluations, 3);
        let all = exhaustive(&p, 3, DEFAULT_EXHAUSTIVE_CAP).unwrap();
        assert_eq!(all.chosen.indices(), &[0, 1, 2]);
    }

    #[test]
    fn exhaustive_identity_picks_lexicographic_first() {
        let p = identity_problem(5);
        let r = exhaustive(&p, 3, DEFAULT_EXHAUSTIVE_CAP).unwrap();
        assert_eq!(r.chosen.indices(), &[0, 1, 2]);
    }

    #[test]
    fn exhaustive_cap() {
        let p = identity_problem(10);
        let err = exhaustive(&p, 5, 100).unwrap_err();
        assert_eq!(err, Error::CapExceeded { subsets: 252, cap: 100 });
        assert!(exhaustive(&p, 5, 252).is_ok());
    }

    #[test]
    fn exhaustive_skips_inactive() {
        let s = Arc::new(WeightedSpace::identity(2).unwrap());
        let p = InverseProblem::new(
            Arc::clone(&s),
            dmatrix![0.0, 0.0; 1.0, 0.0; 0.0, 1.0],
            DVector::from_element(3, 1.0),
            DVector::zeros(2),
            Operator::identity(&s),
        )
        .unwrap();
        let r = exhaustive(&p, 2, DEFAULT_EXHAUSTIVE_CAP).unwrap();
        assert_eq!(r.chosen.indices(), &[1, 2]);
        assert!(greedy(&p, 3).is_err());
    }

    #[test]
    fn binomials() {
        assert_eq!(binomial(80, 10), 1_646_492_110_120);
        assert_eq!(binomial(5, 0), 1);
        assert_eq!(binomial(3, 4), 0);
        assert_eq!(binomial(12, 5), 792);
    }

    #[test]
    fn combinations_are_lexicographic() {
        let mut c = vec![0, 1];
        let mut seen = vec![c.clone()];
        while next_combination(&mut c, 4) {
            seen.push(c.clone());
        }
        assert_eq!(
            seen,
            vec![vec![0, 1], vec![0, 2], vec![0, 3], vec![1, 2], vec![1, 3], vec![2, 3]]
        );
    }

    #[test]
    fn certificate() {
        let p = three_sensor_problem();
        let g = greedy(&p, 2).unwrap();
        let e = exhaustive(&p, 2, DEFAULT_EXHAUSTIVE_CAP).unwrap();
        let c = certify_bound(&g, &e).unwrap().certificate.unwrap();
        assert_eq!(c.ratio, 1.0);
        assert_eq!(c.floor, GREEDY_FLOOR);

        let g3 = greedy(&p, 3).unwrap();
        let e3 = exhaustive(&p, 3, DEFAULT_EXHAUSTIVE_CAP).unwrap();
        assert_eq!(certify_bound(&g3, &e3).unwrap().certificate.unwrap().ratio, 1.0);

        assert_eq!(certify_bound(&g, &e3), Err(Error::ReportMismatch));
        let other = identity_problem(3);
        let eo = exhaustive(&other, 2, DEFAULT_EXHAUSTIVE_CAP).unwrap();
        assert_eq!(certify_bound(&g, &eo), Err(Error::ReportMismatch));
    }

    #[test]
    fn certificate_rejects_sub_floor_ratio() {
        let p = three_sensor_problem();
        let e = exhaustive(&p, 2, DEFAULT_EXHAUSTIVE_CAP).unwrap();
        let mut fake = greedy(&p, 2).unwrap();
        fake.phi_final = 0.5 * e.phi_final;
        assert!(matches!(certify_bound(&fake, &e), Err(Error::BoundViolated { .. })));
    }

    #[test]
    fn random_is_deterministic() {
        let p = identity_problem(8);
        let a = random_baseline(&p, 3, 42).unwrap();
        let b = random_baseline(&p, 3, 42).unwrap();
        assert_eq!(a.chosen, b.chosen);
        assert_eq!(a.seed, Some(42));
        let all = random_baseline(&p, 8, 42).unwrap();
        assert_eq!(all.chosen.len(), 8);
    }
}
