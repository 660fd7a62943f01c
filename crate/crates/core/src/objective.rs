//! The information-gain set function `phi(S) = log det(I + H~(S))`, its
//! discrete derivatives, and an incremental state that keeps
//! `A^{-1} = (I + H~(S))^{-1}` up to date with rank-one updates.
//!
//! With `alpha_ij = <A^{-1} f~_i, f~_j>_M` evaluated at the current design:
//!
//! ```text
//! phi(S + v)     - phi(S)     = log(1 + alpha_vv)
//! phi(S + v + w) - phi(S + w) = log(1 + alpha_vv - alpha_vw^2 / (1 + alpha_ww))
//! ```
//!
//! The second identity only needs quantities at `S`, which is what makes the
//! diminishing-returns property visible: the subtracted term is nonnegative.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::model::InverseProblem;
use crate::wspace::{max_abs, rank1_inverse_update, Operator};

/// Number of rank-one updates between dense refactorizations.
pub const REFACTOR_PERIOD: usize = 50;

/// Tolerance for the checks run at each refactorization.
pub const REFACTOR_TOL: f64 = 1e-8;

/// A set of candidate sensors, stored as strictly increasing 0-based indices.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct Design {
    indices: Vec<usize>,
}

impl Design {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Validates that every index is in range, distinct and active.
    pub fn new(problem: &InverseProblem, indices: impl IntoIterator<Item = usize>) -> Result<Self> {
        let mut indices: Vec<usize> = indices.into_iter().collect();
        indices.sort_unstable();
        for w in indices.windows(2) {
            if w[0] == w[1] {
                return Err(Error::DuplicateIndex(w[0]));
            }
        }
        for &i in &indices {
            if i >= problem.n_candidates() {
                return Err(Error::IndexOutOfRange {
                    index: i,
                    n_s: problem.n_candidates(),
                });
            }
            if !problem.is_active(i) {
                return Err(Error::InactiveCandidate(i));
            }
        }
        Ok(Self { indices })
    }

    /// Every active candidate.
    pub fn all_active(problem: &InverseProblem) -> Self {
        Self {
            indices: problem.active_indices(),
        }
    }

    pub(crate) fn from_sorted_unchecked(indices: Vec<usize>) -> Self {
        debug_assert!(indices.windows(2).all(|w| w[0] < w[1]));
        Self { indices }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    /// Indices shifted to the 1-based labels used in files and on the command line.
    pub fn one_based(&self) -> Vec<usize> {
        self.indices.iter().map(|i| i + 1).collect()
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.indices.binary_search(&i).is_ok()
    }

    /// Returns false if `i` was already present.
    pub(crate) fn insert(&mut self, i: usize) -> bool {
        match self.indices.binary_search(&i) {
            Ok(_) => false,
            Err(pos) => {
                self.indices.insert(pos, i);
                true
            }
        }
    }

    pub fn with(&self, i: usize) -> Self {
        let mut d = self.clone();
        d.insert(i);
        d
    }
}

/// `log det(I + H~(S))` in nats, evaluated by a dense Cholesky factorization.
/// Exactly zero for the empty design.
pub fn phi_eig(problem: &InverseProblem, design: &Design) -> Result<f64> {
    if design.is_empty() {
        return Ok(0.0);
    }
    let a = Operator::identity(problem.space()).add(&problem.hessian_preconditioned(design)?);
    a.logdet_spd()
}

/// The expected information gain `phi(S) / 2` in nats.
pub fn eig_nats(problem: &InverseProblem, design: &Design) -> Result<f64> {
    Ok(0.5 * phi_eig(problem, design)?)
}

/// Incremental state for `A = I + H~(S)`.
#[derive(Debug, Clone)]
pub struct DesignState<'p> {
    problem: &'p InverseProblem,
    design: Design,
    a_inv: Operator,
    phi: f64,
    updates_since_refactor: usize,
    refactor_period: usize,
}

impl<'p> DesignState<'p> {
    /// State for the empty design: `A = I`, `phi = 0`.
    pub fn new(problem: &'p InverseProblem) -> Self {
        Self {
            problem,
            design: Design::empty(),
            a_inv: Operator::identity(problem.space()),
            phi: 0.0,
            updates_since_refactor: 0,
            refactor_period: REFACTOR_PERIOD,
        }
    }

    /// State for `design` built by dense factorization.
    pub fn from_design(problem: &'p InverseProblem, design: Design) -> Result<Self> {
        let (a_inv, phi) = dense_state(problem, &design)?;
        Ok(Self {
            problem,
            design,
            a_inv,
            phi,
            updates_since_refactor: 0,
            refactor_period: REFACTOR_PERIOD,
        })
    }

    pub fn with_refactor_period(mut self, period: usize) -> Self {
        self.refactor_period = period.max(1);
        self
    }

    pub fn problem(&self) -> &'p InverseProblem {
        self.problem
    }

    pub fn design(&self) -> &Design {
        &self.design
    }

    pub fn a_inv(&self) -> &Operator {
        &self.a_inv
    }

    /// Current `phi(S)` in nats.
    pub fn phi(&self) -> f64 {
        self.phi
    }

    pub fn updates_since_refactor(&self) -> usize {
        self.updates_since_refactor
    }

    fn check_active(&self, i: usize) -> Result<()> {
        let n_s = self.problem.n_candidates();
        if i >= n_s {
            return Err(Error::IndexOutOfRange { index: i, n_s });
        }
        if !self.problem.is_active(i) {
            return Err(Error::InactiveCandidate(i));
        }
        Ok(())
    }

    fn check_absent(&self, i: usize) -> Result<()> {
        if self.design.contains(i) {
            return Err(Error::DuplicateIndex(i));
        }
        Ok(())
    }

    fn alpha_unchecked(&self, i: usize, j: usize) -> f64 {
        let a_inv_fi = self.a_inv.rep() * self.problem.f_tilde().column(i);
        a_inv_fi.dot(&self.problem.m_f_tilde().column(j))
    }

    /// `alpha_ij = <A^{-1} f~_i, f~_j>_M`.
    pub fn alpha(&self, i: usize, j: usize) -> Result<f64> {
        self.check_active(i)?;
        self.check_active(j)?;
        Ok(self.alpha_unchecked(i, j))
    }

    /// `phi(S + v) - phi(S) = log(1 + alpha_vv)`. Inactive candidates gain 0.
    pub fn marginal_gain(&self, v: usize) -> Result<f64> {
        let n_s = self.problem.n_candidates();
        if v >= n_s {
            return Err(Error::IndexOutOfRange { index: v, n_s });
        }
        self.check_absent(v)?;
        if !self.problem.is_active(v) {
            return Ok(0.0);
        }
        Ok(self.alpha_unchecked(v, v).ln_1p())
    }

    /// `phi(S + v + w) - phi(S + w)`, computed from `alpha` at `S` only.
    pub fn marginal_gain_conditioned(&self, v: usize, w: usize) -> Result<f64> {
        if v == w {
            return Err(Error::InvalidArgument(format!(
                "conditioned gain needs distinct candidates, got {v} twice"
            )));
        }
        self.check_active(v)?;
        self.check_active(w)?;
        self.check_absent(v)?;
        self.check_absent(w)?;
        let a_vv = self.alpha_unchecked(v, v);
        let a_ww = self.alpha_unchecked(w, w);
        let a_vw = self.alpha_unchecked(v, w);
        Ok((a_vv - a_vw * a_vw / (1.0 + a_ww)).ln_1p())
    }

    /// Adds `v` to the design: `A^{-1}` by Sherman-Morrison-Woodbury with
    /// `u = f~_v`, and `phi += log(1 + alpha_vv)`. Every
    /// [`REFACTOR_PERIOD`] updates the state is rebuilt densely.
    ///
    /// Returns the gain realized by the step.
    pub fn extend(&mut self, v: usize) -> Result<f64> {
        self.check_active(v)?;
        self.check_absent(v)?;
        let gain = self.alpha_unchecked(v, v).ln_1p();
        let fv = self.problem.f_tilde().column(v).into_owned();
        self.a_inv = rank1_inverse_update(&self.a_inv, &fv, &fv)?;
        self.phi += gain;
        self.design.insert(v);
        self.updates_since_refactor += 1;
        if self.updates_since_refactor >= self.refactor_period {
            self.refactor()?;
        }
        Ok(gain)
    }

    /// Like [`extend`](Self::extend) but leaves `self` untouched.
    pub fn extended(&self, v: usize) -> Result<Self> {
        let mut next = self.clone();
        next.extend(v)?;
        Ok(next)
    }

    /// `max|A^{-1} A - I|` against a dense `A = I + H~(S)`.
    pub fn inverse_residual(&self) -> Result<f64> {
        let a = Operator::identity(self.problem.space()).add(&self.problem.hessian_preconditioned(&self.design)?);
        let n = self.problem.dim();
        Ok(max_abs(&(self.a_inv.rep() * a.rep() - DMatrix::identity(n, n))))
    }

    /// Replaces the incrementally maintained `A^{-1}` and `phi` by dense
    /// recomputations after checking that they agree to [`REFACTOR_TOL`].
    pub fn refactor(&mut self) -> Result<()> {
        let residual = self.inverse_residual()?;
        let (a_inv, phi) = dense_state(self.problem, &self.design)?;
        if residual > REFACTOR_TOL {
            return Err(Error::Invariant(format!(
                "incremental inverse drifted: residual {residual:e}"
            )));
        }
        let drift = (self.phi - phi).abs();
        if drift > REFACTOR_TOL * phi.abs().max(1.0) {
            return Err(Error::Invariant(format!(
                "incremental log-determinant drifted by {drift:e}"
            )));
        }
        self.a_inv = a_inv;
        self.phi = phi;
        self.updates_since_refactor = 0;
        Ok(())
    }
}

fn dense_state(problem: &InverseProblem, design: &Design) -> Result<(Operator, f64)> {
    let a = Operator::identity(problem.space()).add(&problem.hessian_preconditioned(design)?);
    let a_inv = a.inverse()?;
    Ok((a_inv, phi_eig(problem, design)?))
}
