//! The linear Gaussian inverse problem `y = F m + eta` with uncorrelated
//! noise, its posterior, and the per-sensor rank-one decomposition of the
//! data-misfit Hessian.

use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::objective::Design;
use crate::wspace::{symmetrize, Operator, WeightedSpace};

/// Tolerance used to validate that the prior covariance is selfadjoint.
pub const TOL_PRIOR_SELFADJOINT: f64 = 1e-10;

/// A linear Gaussian inverse problem posed on a weighted space.
///
/// Candidate sensor `i` corresponds to row `i` of the forward map. Rows that
/// are identically zero contribute nothing to the information gain; they are
/// kept but marked inactive.
#[derive(Debug, Clone)]
pub struct InverseProblem {
    space: Arc<WeightedSpace>,
    forward: DMatrix<f64>,
    sigma: DVector<f64>,
    prior_mean: DVector<f64>,
    prior_cov: Operator,
    prior_cov_sqrt: Operator,
    /// Columns `f_i = sigma_i^{-1} F^* e_i`.
    f: DMatrix<f64>,
    /// Columns `f~_i = Gamma_pr^{1/2} f_i`.
    f_tilde: DMatrix<f64>,
    /// `M f~_i`, so that `<x, f~_i>_M` is a dot product.
    m_f_tilde: DMatrix<f64>,
    /// `L^T f~_i`, the sensor vectors in an `M`-orthonormal basis.
    g: DMatrix<f64>,
    active: Vec<bool>,
    fingerprint: String,
}

impl InverseProblem {
    /// Builds the problem and precomputes `F^*`, `Gamma_pr^{1/2}`, `f_i`, `f~_i`.
    pub fn new(
        space: Arc<WeightedSpace>,
        forward: DMatrix<f64>,
        sigma: DVector<f64>,
        prior_mean: DVector<f64>,
        prior_cov: Operator,
    ) -> Result<Self> {
        let n = space.dim();
        space.check_len("forward map columns", forward.ncols())?;
        space.check_len("prior mean", prior_mean.len())?;
        if prior_cov.rep().nrows() != n {
            return Err(Error::Dimension {
                what: "prior covariance",
                expected: n,
                got: prior_cov.rep().nrows(),
            });
        }
        if sigma.len() != forward.nrows() {
            return Err(Error::Dimension {
                what: "sigma length must equal rows of F",
                expected: forward.nrows(),
                got: sigma.len(),
            });
        }
        if let Some((index, &value)) = sigma.iter().enumerate().find(|(_, s)| !(s.is_finite() && **s > 0.0)) {
            return Err(Error::NonPositiveSigma { index, value });
        }
        if forward
            .iter()
            .chain(prior_mean.iter())
            .chain(prior_cov.rep().iter())
            .any(|x| !x.is_finite())
        {
            return Err(Error::InvalidArgument("non-finite entries in problem data".into()));
        }
        if !space.is_selfadjoint(&prior_cov, TOL_PRIOR_SELFADJOINT) {
            return Err(Error::NotSelfadjoint("prior covariance"));
        }
        let prior_cov_sqrt = selfadjoint_sqrt(&prior_cov)?;

        let q = forward.nrows();
        let mut f = space.adjoint_forward(&forward)?;
        for (mut col, s) in f.column_iter_mut().zip(sigma.iter()) {
            col /= *s;
        }
        let f_tilde = prior_cov_sqrt.rep() * &f;
        let m_f_tilde = space.weight() * &f_tilde;
        let g = space.whiten_matrix(&f_tilde);
        let active = (0..q).map(|i| forward.row(i).iter().any(|x| *x != 0.0)).collect();
        let fingerprint = fingerprint(&space, &forward, &sigma, &prior_mean, &prior_cov);

        Ok(Self {
            space,
            forward,
            sigma,
            prior_mean,
            prior_cov,
            prior_cov_sqrt,
            f,
            f_tilde,
            m_f_tilde,
            g,
            active,
            fingerprint,
        })
    }

    pub fn space(&self) -> &Arc<WeightedSpace> {
        &self.space
    }

    /// Parameter dimension `n`.
    pub fn dim(&self) -> usize {
        self.space.dim()
    }

    /// Number of candidate sensors `n_s` (rows of `F`).
    pub fn n_candidates(&self) -> usize {
        self.forward.nrows()
    }

    pub fn forward(&self) -> &DMatrix<f64> {
        &self.forward
    }

    pub fn sigma(&self) -> &DVector<f64> {
        &self.sigma
    }

    pub fn prior_mean(&self) -> &DVector<f64> {
        &self.prior_mean
    }

    pub fn prior_cov(&self) -> &Operator {
        &self.prior_cov
    }

    pub fn prior_cov_sqrt(&self) -> &Operator {
        &self.prior_cov_sqrt
    }

    /// `f_i` as columns, `n x n_s`.
    pub fn f(&self) -> &DMatrix<f64> {
        &self.f
    }

    /// `f~_i` as columns, `n x n_s`.
    pub fn f_tilde(&self) -> &DMatrix<f64> {
        &self.f_tilde
    }

    pub(crate) fn m_f_tilde(&self) -> &DMatrix<f64> {
        &self.m_f_tilde
    }

    /// `f~_i` expressed in an `M`-orthonormal basis.
    pub fn whitened_sensors(&self) -> &DMatrix<f64> {
        &self.g
    }

    pub fn is_active(&self, i: usize) -> bool {
        self.active.get(i).copied().unwrap_or(false)
    }

    /// Indices (0-based) of candidates with a nonzero row in `F`.
    pub fn active_indices(&self) -> Vec<usize> {
        (0..self.n_candidates()).filter(|&i| self.active[i]).collect()
    }

    /// Indices (0-based) of zero rows of `F`.
    pub fn inactive_indices(&self) -> Vec<usize> {
        (0..self.n_candidates()).filter(|&i| !self.active[i]).collect()
    }

    /// Hex digest over every input array; equal problems share it.
    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    fn rank_one_sum(&self, cols: &DMatrix<f64>, design: &Design) -> Result<Operator> {
        self.check_design(design)?;
        let n = self.dim();
        let mut rep = DMatrix::zeros(n, n);
        for &i in design.indices() {
            let u = cols.column(i);
            let mu = self.space.weight() * u;
            rep.ger(1.0, &u, &mu, 1.0);
        }
        Operator::new(&self.space, rep)
    }

    pub(crate) fn check_design(&self, design: &Design) -> Result<()> {
        for &i in design.indices() {
            if i >= self.n_candidates() {
                return Err(Error::IndexOutOfRange {
                    index: i,
                    n_s: self.n_candidates(),
                });
            }
        }
        Ok(())
    }

    /// `H(S) = sum_{i in S} f_i (x) f_i`; the zero operator for `S = {}`.
    pub fn hessian_misfit(&self, design: &Design) -> Result<Operator> {
        self.rank_one_sum(&self.f, design)
    }

    /// `H~(S) = sum_{i in S} f~_i (x) f~_i`, equal to
    /// `Gamma_pr^{1/2} H(S) Gamma_pr^{1/2}`.
    pub fn hessian_preconditioned(&self, design: &Design) -> Result<Operator> {
        self.rank_one_sum(&self.f_tilde, design)
    }

    /// Posterior given data `y` observed at the sensors in `design`, ordered
    /// by ascending sensor index.
    pub fn posterior(&self, design: &Design, y: &DVector<f64>) -> Result<Posterior> {
        if y.len() != design.len() {
            return Err(Error::Dimension {
                what: "data length must equal design size",
                expected: design.len(),
                got: y.len(),
            });
        }
        let h = self.hessian_misfit(design)?;
        // F(S)^* Gamma_n(S)^{-1} y = sum_i f_i y_i / sigma_i
        let mut misfit_grad = DVector::zeros(self.dim());
        for (&i, &yi) in design.indices().iter().zip(y.iter()) {
            misfit_grad.axpy(yi / self.sigma[i], &self.f.column(i), 1.0);
        }
        self.posterior_from_parts(&h, &misfit_grad)
    }

    /// Gamma_post = (I + Gamma_pr H)^{-1} Gamma_pr and
    /// m_post = (I + Gamma_pr H)^{-1} (Gamma_pr b + m_pr).
    fn posterior_from_parts(&self, h: &Operator, misfit_grad: &DVector<f64>) -> Result<Posterior> {
        let n = self.dim();
        let system = DMatrix::identity(n, n) + self.prior_cov.rep() * h.rep();
        let lu = system.lu();
        let cov = lu
            .solve(self.prior_cov.rep())
            .ok_or(Error::Singular("posterior system"))?;
        let rhs = self.prior_cov.rep() * misfit_grad + &self.prior_mean;
        let mean = lu.solve(&rhs).ok_or(Error::Singular("posterior system"))?;
        // project onto M-selfadjoint operators to remove roundoff
        let m = self.space.weight();
        let sym = symmetrize(&(m * &cov));
        let cov = self.space.solve_matrix(&sym);
        Ok(Posterior {
            mean,
            cov: Operator::new(&self.space, cov)?,
        })
    }

    /// Posterior covariance for `design`; it does not depend on the data.
    pub fn posterior_cov(&self, design: &Design) -> Result<Operator> {
        let h = self.hessian_misfit(design)?;
        Ok(self.posterior_from_parts(&h, &DVector::zeros(self.dim()))?.cov)
    }
}

/// Gaussian posterior `N(mean, cov)`.
#[derive(Debug, Clone)]
pub struct Posterior {
    pub mean: DVector<f64>,
    pub cov: Operator,
}

/// The unique selfadjoint positive square root of a selfadjoint positive
/// definite operator. Computed from the eigendecomposition of its
/// representation in an `M`-orthonormal basis.
pub fn selfadjoint_sqrt(op: &Operator) -> Result<Operator> {
    let space = op.space();
    let w = op.whitened();
    if Cholesky::new(w.clone()).is_none() {
        return Err(Error::NotPositiveDefinite("prior covariance"));
    }
    let eig = SymmetricEigen::new(w);
    if eig.eigenvalues.iter().any(|&l| !(l > 0.0)) {
        return Err(Error::NotPositiveDefinite("prior covariance"));
    }
    let sqrt_diag = DMatrix::from_diagonal(&eig.eigenvalues.map(f64::sqrt));
    let q = &eig.eigenvectors;
    let root_w = symmetrize(&(q * sqrt_diag * q.transpose()));
    // back to coordinates: L^{-T} R L^T
    let l = space.factor_l();
    let lt = l.transpose();
    let rep = lt
        .solve_upper_triangular(&(root_w * &lt))
        .expect("Cholesky factor has a positive diagonal");
    Operator::new(space, rep)
}

fn fingerprint(
    space: &WeightedSpace,
    forward: &DMatrix<f64>,
    sigma: &DVector<f64>,
    prior_mean: &DVector<f64>,
    prior_cov: &Operator,
) -> String {
    let mut hasher = Sha256::new();
    hasher.update((space.dim() as u64).to_le_bytes());
    hasher.update((forward.nrows() as u64).to_le_bytes());
    let arrays: [&[f64]; 5] = [
        space.weight().as_slice(),
        forward.as_slice(),
        sigma.as_slice(),
        prior_mean.as_slice(),
        prior_cov.rep().as_slice(),
    ];
    for a in arrays {
        for x in a {
            hasher.update(x.to_bits().to_le_bytes());
        }
    }
    hasher.finalize().iter().take(16).map(|b| format!("{b:02x}")).collect()
}
