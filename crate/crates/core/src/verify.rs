//! Independent checks of the information-gain machinery.
//!
//! - [`kl_gaussian`] and [`mc_eig`] estimate the expected information gain
//!   from its definition (prior- and data-averaged KL divergence from
//!   posterior to prior) so it can be compared with `phi / 2`.
//! - [`check_monotone`] and [`check_submodular`] compare the closed-form
//!   gains against differences of densely recomputed `phi` values.
//!
//! Random streams are Xoshiro256++ seeded with `seed_from_u64`. Parallel work
//! is cut into fixed-size chunks and chunk `c` uses the generator advanced by
//! `c` jumps, so results do not depend on the number of threads.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use rand_xoshiro::Xoshiro256PlusPlus;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{InverseProblem, Posterior};
use crate::objective::{phi_eig, Design, DesignState};
use crate::wspace::Operator;

/// Absolute tolerance used by the property campaigns.
pub const PROPERTY_TOL: f64 = 1e-9;

/// Gains below this are treated as numerically zero when checking strictness.
pub const GAIN_FLOOR: f64 = 1e-14;

/// Largest number of active candidates accepted by the exhaustive check.
pub const EXHAUSTIVE_MAX_CANDIDATES: usize = 10;

const CHUNK: usize = 1024;

/// One independent generator per chunk, each `jump()` apart.
fn chunk_rngs(seed: u64, chunks: usize) -> Vec<Xoshiro256PlusPlus> {
    let mut base = Xoshiro256PlusPlus::seed_from_u64(seed);
    (0..chunks)
        .map(|_| {
            let r = base.clone();
            base.jump();
            r
        })
        .collect()
}

fn standard_normal(rng: &mut Xoshiro256PlusPlus, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

/// `D_kl(N(m_post, Gamma_post) || N(m_pr, Gamma_pr))` on the weighted space:
///
/// ```text
/// 1/2 [ tr(Gamma_pr^{-1} Gamma_post) - n
///       + <Gamma_pr^{-1} (m_post - m_pr), m_post - m_pr>_M
///       + log det Gamma_pr - log det Gamma_post ]
/// ```
pub fn kl_gaussian(problem: &InverseProblem, post: &Posterior) -> Result<f64> {
    let terms = KlTerms::new(problem, &post.cov)?;
    terms.kl(problem, &post.mean)
}

/// The mean-independent part of the Gaussian KL, reusable across samples.
struct KlTerms {
    constant: f64,
    prior_cov_lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

impl KlTerms {
    fn new(problem: &InverseProblem, post_cov: &Operator) -> Result<Self> {
        let prior = problem.prior_cov();
        if !post_cov.is_positive_selfadjoint(1e-8) {
            return Err(Error::NotPositiveDefinite("posterior covariance"));
        }
        let lu = prior.rep().clone().lu();
        let ratio = lu.solve(post_cov.rep()).ok_or(Error::Singular("prior covariance"))?;
        let n = problem.dim() as f64;
        let logdet = prior.logdet_spd()? - post_cov.logdet_spd()?;
        Ok(Self {
            constant: ratio.trace() - n + logdet,
            prior_cov_lu: lu,
        })
    }

    fn kl(&self, problem: &InverseProblem, post_mean: &DVector<f64>) -> Result<f64> {
        let d = post_mean - problem.prior_mean();
        let pd = self.prior_cov_lu.solve(&d).ok_or(Error::Singular("prior covariance"))?;
        let quad = problem.space().inner(&pd, &d)?;
        Ok(0.5 * (self.constant + quad))
    }
}

/// Monte Carlo estimate of the expected information gain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEigEstimate {
    pub n_samples: usize,
    /// Sample mean of the KL divergence, nats.
    pub mean_kl: f64,
    /// Sample standard deviation over `sqrt(n_samples)`, nats.
    pub std_error: f64,
    pub seed: u64,
}

impl McEigEstimate {
    /// `|mean - target| <= z * std_error`.
    pub fn within(&self, target: f64, z: f64) -> bool {
        (self.mean_kl - target).abs() <= z * self.std_error
    }
}

/// Estimates `E_{m ~ prior} E_{y | m} [ D_kl(posterior(y) || prior) ]`.
///
/// Prior draws are `m = m_pr + Gamma_pr^{1/2} L^{-T} z` with `z` standard
/// normal and `M = L L^T`; their coordinate covariance is `Gamma_pr M^{-1}`,
/// i.e. the Gaussian measure whose covariance operator on the weighted space
/// is `Gamma_pr`. Data are `y_i = (F m)_i + sigma_i e_i` for `i` in `design`.
pub fn mc_eig(problem: &InverseProblem, design: &Design, n_samples: usize, seed: u64) -> Result<McEigEstimate> {
    if n_samples < 2 {
        return Err(Error::InvalidArgument(format!(
            "mc_eig needs at least 2 samples, got {n_samples}"
        )));
    }
    problem.check_design(design)?;
    if design.is_empty() {
        return Ok(McEigEstimate {
            n_samples,
            mean_kl: 0.0,
            std_error: 0.0,
            seed,
        });
    }

    let post_cov = problem.posterior_cov(design)?;
    let terms = KlTerms::new(problem, &post_cov)?;
    let n = problem.dim();
    let rows = design.indices();

    let chunks = n_samples.div_ceil(CHUNK);
    let rngs = chunk_rngs(seed, chunks);
    let per_chunk = rngs
        .into_par_iter()
        .enumerate()
        .map(|(c, mut rng)| {
            let count = CHUNK.min(n_samples - c * CHUNK);
            let mut out = Vec::with_capacity(count);
            for _ in 0..count {
                let z = standard_normal(&mut rng, n);
                let m = problem.prior_mean() + problem.prior_cov_sqrt().rep() * problem.space().unwhiten(&z);
                let fm = problem.forward() * &m;
                let y = DVector::from_iterator(
                    rows.len(),
                    rows.iter().map(|&i| {
                        let e: f64 = rng.sample(StandardNormal);
                        fm[i] + problem.sigma()[i] * e
                    }),
                );
                let post = problem.posterior(design, &y)?;
                out.push(terms.kl(problem, &post.mean)?);
            }
            Ok(out)
        })
        .collect::<Result<Vec<Vec<f64>>>>()?;

    let samples: Vec<f64> = per_chunk.into_iter().flatten().collect();
    let count = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / count;
    let var = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (count - 1.0);
    Ok(McEigEstimate {
        n_samples,
        mean_kl: mean,
        std_error: (var / count).sqrt(),
        seed,
    })
}

/// A single failed check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub description: String,
    pub amount: f64,
}

/// Outcome of [`check_monotone`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotoneReport {
    pub trials: usize,
    pub checked: usize,
    /// Smallest dense marginal gain observed, if any check ran.
    pub min_gain: Option<f64>,
    /// Largest `|log(1 + alpha_vv) - (phi(S + v) - phi(S))|`.
    pub max_formula_error: f64,
    pub violations: Vec<Violation>,
}

impl MonotoneReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

fn random_subset(rng: &mut Xoshiro256PlusPlus, pool: &[usize]) -> Vec<usize> {
    pool.iter().copied().filter(|_| rng.gen_bool(0.5)).collect()
}

/// Samples random designs `S` and candidates `v` outside `S` and checks that
/// `phi(S + v) - phi(S)` is positive and equals `log(1 + alpha_vv)` computed
/// from the incremental state, within [`PROPERTY_TOL`].
///
/// Only active candidates are sampled.
pub fn check_monotone(problem: &InverseProblem, trials: usize, seed: u64) -> Result<MonotoneReport> {
    let active = problem.active_indices();
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let mut cases = Vec::with_capacity(trials);
    for _ in 0..trials {
        let s = random_subset(&mut rng, &active);
        let outside: Vec<usize> = active.iter().copied().filter(|i| !s.contains(i)).collect();
        if outside.is_empty() {
            continue;
        }
        let v = outside[rng.gen_range(0..outside.len())];
        cases.push((s, v));
    }

    let results = cases
        .par_iter()
        .map(|(s, v)| {
            let design = Design::new(problem, s.iter().copied())?;
            let mut state = DesignState::new(problem);
            for &i in design.indices() {
                state.extend(i)?;
            }
            let formula = state.marginal_gain(*v)?;
            let dense = phi_eig(problem, &design.with(*v))? - phi_eig(problem, &design)?;
            Ok((design, *v, formula, dense))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut report = MonotoneReport {
        trials,
        checked: results.len(),
        min_gain: None,
        max_formula_error: 0.0,
        violations: Vec::new(),
    };
    for (design, v, formula, dense) in results {
        report.min_gain = Some(report.min_gain.map_or(dense, |m: f64| m.min(dense)));
        let err = (formula - dense).abs();
        report.max_formula_error = report.max_formula_error.max(err);
        let label = || format!("S = {:?}, v = {}", design.one_based(), v + 1);
        if !(formula > 0.0) || (dense <= 0.0 && formula > GAIN_FLOOR) {
            report.violations.push(Violation {
                description: format!("non-positive gain at {}", label()),
                amount: dense.min(formula),
            });
        }
        if !(err <= PROPERTY_TOL) {
            report.violations.push(Violation {
                description: format!("closed-form gain mismatch at {}", label()),
                amount: err,
            });
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubmodularMode {
    /// Every `(A, v, w)` with `A` a subset of the active candidates.
    Exhaustive,
    /// Random nested pairs `A` within `B` and `v` outside `B`.
    Randomized { trials: usize, seed: u64 },
}

/// Outcome of [`check_submodular`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmodularReport {
    pub mode: SubmodularMode,
    pub checked: usize,
    /// Largest `gain(B, v) - gain(A, v)` over checked nested pairs; positive
    /// values are violations of diminishing returns.
    pub max_violation: Option<f64>,
    /// Smallest and largest `gain(A, v) - gain(B, v)`.
    pub min_gap: Option<f64>,
    pub max_gap: Option<f64>,
    /// Largest deviation of the closed forms from dense differences.
    pub max_closed_form_error: f64,
    pub violations: Vec<Violation>,
}

impl SubmodularReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    fn new(mode: SubmodularMode) -> Self {
        Self {
            mode,
            checked: 0,
            max_violation: None,
            min_gap: None,
            max_gap: None,
            max_closed_form_error: 0.0,
            violations: Vec::new(),
        }
    }

    fn record(&mut self, gap: f64, label: impl FnOnce() -> String) {
        self.checked += 1;
        self.max_violation = Some(self.max_violation.map_or(-gap, |m| m.max(-gap)));
        self.min_gap = Some(self.min_gap.map_or(gap, |m| m.min(gap)));
        self.max_gap = Some(self.max_gap.map_or(gap, |m| m.max(gap)));
        if !(-gap <= PROPERTY_TOL) {
            self.violations.push(Violation {
                description: format!("diminishing returns fails at {}", label()),
                amount: -gap,
            });
        }
    }

    fn record_closed_form(&mut self, err: f64, label: impl FnOnce() -> String) {
        self.max_closed_form_error = self.max_closed_form_error.max(err);
        if !(err <= PROPERTY_TOL) {
            self.violations.push(Violation {
                description: format!("closed-form gain mismatch at {}", label()),
                amount: err,
            });
        }
    }
}

fn one_based(v: &[usize]) -> Vec<usize> {
    v.iter().map(|i| i + 1).collect()
}

/// Checks diminishing returns.
///
/// Exhaustive mode tabulates `phi` densely on every subset of the active
/// candidates and compares `gain(A, v)` with `gain(A + w, v)` for all
/// `(A, v, w)`. It also checks `log(1 + alpha_vv)` and
/// `log(1 + alpha_vv - alpha_vw^2 / (1 + alpha_ww))` at `A` against the
/// tabulated differences.
///
/// Randomized mode samples nested `A` within `B` and `v` outside `B`, and one
/// `w` outside `A + v` for the closed-form check.
pub fn check_submodular(problem: &InverseProblem, mode: SubmodularMode) -> Result<SubmodularReport> {
    match mode {
        SubmodularMode::Exhaustive => submodular_exhaustive(problem),
        SubmodularMode::Randomized { trials, seed } => submodular_randomized(problem, trials, seed),
    }
}

fn submodular_exhaustive(problem: &InverseProblem) -> Result<SubmodularReport> {
    let active = problem.active_indices();
    let m = active.len();
    if m > EXHAUSTIVE_MAX_CANDIDATES {
        return Err(Error::InvalidArgument(format!(
            "exhaustive submodularity check supports at most {EXHAUSTIVE_MAX_CANDIDATES} active candidates, got {m}"
        )));
    }
    let design_of =
        |mask: usize| Design::from_sorted_unchecked((0..m).filter(|b| mask >> b & 1 == 1).map(|b| active[b]).collect());
    let table = (0..1usize << m)
        .into_par_iter()
        .map(|mask| phi_eig(problem, &design_of(mask)))
        .collect::<Result<Vec<f64>>>()?;

    // per base set: (gap, closed-form error, labels)
    type Row = (Vec<(f64, usize, usize)>, Vec<(f64, usize, usize)>);
    let rows = (0..1usize << m)
        .into_par_iter()
        .map(|mask| -> Result<Row> {
            let state = DesignState::from_design(problem, design_of(mask))?;
            let mut gaps = Vec::new();
            let mut errs = Vec::new();
            for v in (0..m).filter(|b| mask >> b & 1 == 0) {
                let gain_a = table[mask | 1 << v] - table[mask];
                errs.push(((state.marginal_gain(active[v])? - gain_a).abs(), v, v));
                for w in (0..m).filter(|&b| b != v && mask >> b & 1 == 0) {
                    let aw = mask | 1 << w;
                    let gain_aw = table[aw | 1 << v] - table[aw];
                    gaps.push((gain_a - gain_aw, v, w));
                    let closed = state.marginal_gain_conditioned(active[v], active[w])?;
                    errs.push(((closed - gain_aw).abs(), v, w));
                }
            }
            Ok((gaps, errs))
        })
        .collect::<Result<Vec<Row>>>()?;

    let mut report = SubmodularReport::new(SubmodularMode::Exhaustive);
    for (mask, (gaps, errs)) in rows.into_iter().enumerate() {
        let a = design_of(mask);
        for (gap, v, w) in gaps {
            report.record(gap, || {
                format!("A = {:?}, v = {}, w = {}", a.one_based(), active[v] + 1, active[w] + 1)
            });
        }
        for (err, v, w) in errs {
            report.record_closed_form(err, || {
                format!("A = {:?}, v = {}, w = {}", a.one_based(), active[v] + 1, active[w] + 1)
            });
        }
    }
    Ok(report)
}

fn submodular_randomized(problem: &InverseProblem, trials: usize, seed: u64) -> Result<SubmodularReport> {
    let active = problem.active_indices();
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let mut cases = Vec::with_capacity(trials);
    for _ in 0..trials {
        let a = random_subset(&mut rng, &active);
        let rest: Vec<usize> = active.iter().copied().filter(|i| !a.contains(i)).collect();
        if rest.is_empty() {
            continue;
        }
        let v = rest[rng.gen_range(0..rest.len())];
        let extra: Vec<usize> = rest.iter().copied().filter(|&i| i != v && rng.gen_bool(0.5)).collect();
        let others: Vec<usize> = rest.iter().copied().filter(|&i| i != v).collect();
        let w = if others.is_empty() {
            None
        } else {
            Some(others[rng.gen_range(0..others.len())])
        };
        cases.push((a, extra, v, w));
    }

    let results = cases
        .par_iter()
        .map(|(a, extra, v, w)| {
            let da = Design::new(problem, a.iter().copied())?;
            let db = Design::new(problem, a.iter().chain(extra.iter()).copied())?;
            let phi_a = phi_eig(problem, &da)?;
            let gain_a = phi_eig(problem, &da.with(*v))? - phi_a;
            let gain_b = phi_eig(problem, &db.with(*v))? - phi_eig(problem, &db)?;
            let closed_err = match w {
                Some(w) => {
                    let state = DesignState::from_design(problem, da.clone())?;
                    let daw = da.with(*w);
                    let dense = phi_eig(problem, &daw.with(*v))? - phi_eig(problem, &daw)?;
                    Some((state.marginal_gain_conditioned(*v, *w)? - dense).abs())
                }
                None => None,
            };
            Ok((gain_a - gain_b, closed_err))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut report = SubmodularReport::new(SubmodularMode::Randomized { trials, seed });
    for ((a, extra, v, w), (gap, closed_err)) in cases.iter().zip(results) {
        let label = || {
            format!(
                "A = {:?}, B \\ A = {:?}, v = {}, w = {:?}",
                one_based(a),
                one_based(extra),
                v + 1,
                w.map(|w| w + 1)
            )
        };
        report.record(gap, label);
        if let Some(err) = closed_err {
            report.record_closed_form(err, label);
        }
    }
    Ok(report)
}
