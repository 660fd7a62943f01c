//! Linear algebra on `R^n` equipped with the weighted inner product
//! `<u, v>_M = u^T M v`.
//!
//! Operators are stored as plain `n x n` matrices acting on coordinate
//! vectors. The weight only enters through inner products, adjoints and the
//! notion of selfadjointness: `T` is selfadjoint iff `M T` is symmetric.
//!
//! With the Cholesky factor `M = L L^T`, the map `x -> L^T x` is an isometry
//! onto Euclidean `R^n`. Selfadjoint operators become symmetric matrices
//! `L^T T L^{-T}` under it, which is how log-determinants of selfadjoint
//! positive operators are evaluated.

use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Relative symmetry tolerance for weight matrices.
pub const TOL_SYM: f64 = 1e-10;

/// Relative tolerance on the rank-one update denominator.
pub const TOL_DEN: f64 = 1e-12;

pub(crate) fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
}

/// Largest entry of `|A - A^T|` relative to `max|A|`.
pub(crate) fn relative_asymmetry(a: &DMatrix<f64>) -> f64 {
    let scale = max_abs(a);
    if scale == 0.0 {
        return 0.0;
    }
    let mut worst = 0.0_f64;
    for i in 0..a.nrows() {
        for j in (i + 1)..a.ncols() {
            worst = worst.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    worst / scale
}

pub(crate) fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// `R^n` with the inner product induced by an SPD weight matrix.
#[derive(Debug, Clone)]
pub struct WeightedSpace {
    weight: DMatrix<f64>,
    factor: Cholesky<f64, Dyn>,
}

impl WeightedSpace {
    /// Validates `weight` (symmetric to [`TOL_SYM`], positive definite) and
    /// caches its Cholesky factor. The stored weight is the symmetrized input.
    pub fn new(weight: DMatrix<f64>) -> Result<Self> {
        if weight.nrows() != weight.ncols() {
            return Err(Error::Dimension {
                what: "weight matrix must be square",
                expected: weight.nrows(),
                got: weight.ncols(),
            });
        }
        if weight.nrows() == 0 {
            return Err(Error::InvalidArgument("dimension must be positive".into()));
        }
        if weight.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("weight matrix has non-finite entries".into()));
        }
        if relative_asymmetry(&weight) > TOL_SYM {
            return Err(Error::NotSymmetric("weight matrix"));
        }
        let weight = symmetrize(&weight);
        let factor = Cholesky::new(weight.clone()).ok_or(Error::NotPositiveDefinite("weight matrix"))?;
        Ok(Self { weight, factor })
    }

    /// Euclidean space, `M = I`.
    pub fn identity(n: usize) -> Result<Self> {
        Self::new(DMatrix::identity(n, n))
    }

    pub fn dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn weight(&self) -> &DMatrix<f64> {
        &self.weight
    }

    /// Lower Cholesky factor `L` with `M = L L^T`.
    pub fn factor_l(&self) -> DMatrix<f64> {
        self.factor.l()
    }

    pub(crate) fn check_len(&self, what: &'static str, got: usize) -> Result<()> {
        if got != self.dim() {
            return Err(Error::Dimension {
                what,
                expected: self.dim(),
                got,
            });
        }
        Ok(())
    }

    /// `<u, v>_M = u^T M v`.
    pub fn inner(&self, u: &DVector<f64>, v: &DVector<f64>) -> Result<f64> {
        self.check_len("inner: u", u.len())?;
        self.check_len("inner: v", v.len())?;
        Ok(u.dot(&(&self.weight * v)))
    }

    /// `M x`
    pub fn lower(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.weight * x
    }

    /// `M^{-1} b`, via the cached factor.
    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        self.factor.solve(b)
    }

    /// `M^{-1} B`, column by column.
    pub fn solve_matrix(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.factor.solve(b)
    }

    /// Coordinates in an `M`-orthonormal basis: `L^T x`.
    pub fn whiten(&self, x: &DVector<f64>) -> DVector<f64> {
        self.factor.l().tr_mul(x)
    }

    /// Column-wise [`whiten`](Self::whiten).
    pub fn whiten_matrix(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        self.factor.l().tr_mul(x)
    }

    /// Inverse of [`whiten`](Self::whiten): solves `L^T x = z`.
    pub fn unwhiten(&self, z: &DVector<f64>) -> DVector<f64> {
        let lt = self.factor.l().transpose();
        lt.solve_upper_triangular(z)
            .expect("Cholesky factor has a positive diagonal")
    }

    /// The rank-one operator `u (x) v` with `(u (x) v) x = <v, x>_M u`,
    /// represented as `u v^T M`.
    pub fn tensor(self: &Arc<Self>, u: &DVector<f64>, v: &DVector<f64>) -> Result<Operator> {
        self.check_len("tensor: u", u.len())?;
        self.check_len("tensor: v", v.len())?;
        let mv = &self.weight * v;
        Ok(Operator {
            space: Arc::clone(self),
            rep: u * mv.transpose(),
        })
    }

    /// The adjoint `F^* = M^{-1} F^T` of a map `F: (R^n, M) -> (R^q, I)`.
    ///
    /// Satisfies `<F^* y, v>_M = y^T F v`.
    pub fn adjoint_forward(&self, forward: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_len("adjoint_forward: columns of F", forward.ncols())?;
        Ok(self.factor.solve(&forward.transpose()))
    }

    /// True iff `M T` is symmetric within `tol` relative to `max|M T|`.
    pub fn is_selfadjoint(&self, t: &Operator, tol: f64) -> bool {
        if t.rep.nrows() != self.dim() || t.rep.ncols() != self.dim() {
            return false;
        }
        relative_asymmetry(&(&self.weight * &t.rep)) <= tol
    }
}

/// A linear operator on a [`WeightedSpace`], stored by its coordinate matrix.
#[derive(Debug, Clone)]
pub struct Operator {
    space: Arc<WeightedSpace>,
    rep: DMatrix<f64>,
}

impl Operator {
    pub fn new(space: &Arc<WeightedSpace>, rep: DMatrix<f64>) -> Result<Self> {
        let n = space.dim();
        if rep.nrows() != n || rep.ncols() != n {
            return Err(Error::Dimension {
                what: "operator matrix must be n x n",
                expected: n,
                got: if rep.nrows() != n { rep.nrows() } else { rep.ncols() },
            });
        }
        Ok(Self {
            space: Arc::clone(space),
            rep,
        })
    }

    pub fn identity(space: &Arc<WeightedSpace>) -> Self {
        let n = space.dim();
        Self {
            space: Arc::clone(space),
            rep: DMatrix::identity(n, n),
        }
    }

    pub fn zero(space: &Arc<WeightedSpace>) -> Self {
        let n = space.dim();
        Self {
            space: Arc::clone(space),
            rep: DMatrix::zeros(n, n),
        }
    }

    pub fn space(&self) -> &Arc<WeightedSpace> {
        &self.space
    }

    pub fn rep(&self) -> &DMatrix<f64> {
        &self.rep
    }

    pub fn into_rep(self) -> DMatrix<f64> {
        self.rep
    }

    pub fn apply(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.space.check_len("apply: x", x.len())?;
        Ok(&self.rep * x)
    }

    /// `self ∘ other`
    pub fn compose(&self, other: &Operator) -> Operator {
        Operator {
            space: Arc::clone(&self.space),
            rep: &self.rep * &other.rep,
        }
    }

    pub fn add(&self, other: &Operator) -> Operator {
        Operator {
            space: Arc::clone(&self.space),
            rep: &self.rep + &other.rep,
        }
    }

    pub fn sub(&self, other: &Operator) -> Operator {
        Operator {
            space: Arc::clone(&self.space),
            rep: &self.rep - &other.rep,
        }
    }

    pub fn inverse(&self) -> Result<Operator> {
        let rep = self
            .rep
            .clone()
            .lu()
            .try_inverse()
            .ok_or(Error::Singular("operator inverse"))?;
        Ok(Operator {
            space: Arc::clone(&self.space),
            rep,
        })
    }

    pub fn solve(&self, b: &DVector<f64>) -> Result<DVector<f64>> {
        self.space.check_len("solve: rhs", b.len())?;
        self.rep.clone().lu().solve(b).ok_or(Error::Singular("operator solve"))
    }

    pub fn trace(&self) -> f64 {
        self.rep.trace()
    }

    /// The symmetric matrix `L^T T L^{-T}`, the representation of a
    /// selfadjoint `T` in an `M`-orthonormal basis.
    pub fn whitened(&self) -> DMatrix<f64> {
        let l = self.space.factor_l();
        let lt = l.transpose();
        // L^T T L^{-T} = (L^{-1} (L^T T)^T)^T
        let ltt = &lt * &self.rep;
        let x = l
            .solve_lower_triangular(&ltt.transpose())
            .expect("Cholesky factor has a positive diagonal");
        symmetrize(&x.transpose())
    }

    /// `log det T` for a selfadjoint positive definite operator.
    pub fn logdet_spd(&self) -> Result<f64> {
        let chol = Cholesky::new(self.whitened()).ok_or(Error::NotPositiveDefinite("log-determinant"))?;
        Ok(2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>())
    }

    /// True iff `T` is selfadjoint in `M` and positive definite.
    pub fn is_positive_selfadjoint(&self, tol: f64) -> bool {
        self.space.is_selfadjoint(self, tol) && Cholesky::new(self.whitened()).is_some()
    }
}

/// `1 + <A^{-1} u, v>_M`, the factor by which `det A` changes under
/// `A -> A + u (x) v`.
pub fn rank1_det_factor(a: &Operator, u: &DVector<f64>, v: &DVector<f64>) -> Result<f64> {
    let space = a.space();
    space.check_len("rank1_det_factor: u", u.len())?;
    space.check_len("rank1_det_factor: v", v.len())?;
    let a_inv_u = a.solve(u)?;
    Ok(1.0 + space.inner(&a_inv_u, v)?)
}

/// `(A + u (x) v)^{-1}` from `A^{-1}` by the Sherman-Morrison-Woodbury identity:
/// `A^{-1} - A^{-1} (u (x) v) A^{-1} / (1 + <A^{-1} u, v>_M)`.
///
/// Fails with [`Error::SingularUpdate`] when the denominator is within
/// [`TOL_DEN`] of zero relative to `1 + |<A^{-1} u, v>_M|`.
pub fn rank1_inverse_update(a_inv: &Operator, u: &DVector<f64>, v: &DVector<f64>) -> Result<Operator> {
    let space = a_inv.space();
    space.check_len("rank1_inverse_update: u", u.len())?;
    space.check_len("rank1_inverse_update: v", v.len())?;
    let w = &a_inv.rep * u;
    let alpha = space.inner(&w, v)?;
    let denom = 1.0 + alpha;
    if denom.abs() < TOL_DEN * (1.0 + alpha.abs()) || !denom.is_finite() {
        return Err(Error::SingularUpdate(denom));
    }
    // row vector v^T M A^{-1}
    let z = a_inv.rep.tr_mul(&space.lower(v));
    let mut rep = a_inv.rep.clone();
    rep.ger(-1.0 / denom, &w, &z, 1.0);
    Ok(Operator {
        space: Arc::clone(space),
        rep,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dmatrix, dvector};

    fn diag21() -> Arc<WeightedSpace> {
        Arc::new(WeightedSpace::new(DMatrix::from_diagonal(&dvector![2.0, 1.0])).unwrap())
    }

    #[test]
    fn inner_examples() {
        let s = WeightedSpace::identity(2).unwrap();
        assert_eq!(s.inner(&dvector![1.0, 0.0], &dvector![0.0, 1.0]).unwrap(), 0.0);
        let s = diag21();
        assert_eq!(s.inner(&dvector![1.0, 0.0], &dvector![1.0, 0.0]).unwrap(), 2.0);
        assert_eq!(s.inner(&dvector![0.3, -4.0], &dvector![0.0, 0.0]).unwrap(), 0.0);
        assert!(matches!(
            s.inner(&dvector![1.0], &dvector![1.0, 0.0]),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn tensor_examples() {
        let s = Arc::new(WeightedSpace::identity(2).unwrap());
        let t = s.tensor(&dvector![1.0, 0.0], &dvector![1.0, 0.0]).unwrap();
        assert_eq!(t.rep(), &dmatrix![1.0, 0.0; 0.0, 0.0]);
        let t = s.tensor(&dvector![1.0, 0.0], &dvector![0.0, 1.0]).unwrap();
        assert_eq!(t.apply(&dvector![0.0, 3.0]).unwrap(), dvector![3.0, 0.0]);

        let t = diag21().tensor(&dvector![1.0, 0.0], &dvector![1.0, 0.0]).unwrap();
        assert_eq!(t.rep(), &dmatrix![2.0, 0.0; 0.0, 0.0]);
    }

    #[test]
    fn adjoint_examples() {
        let s = WeightedSpace::identity(3).unwrap();
        let f = dmatrix![1.0, 2.0, 3.0; -1.0, 0.5, 4.0];
        assert_eq!(s.adjoint_forward(&f).unwrap(), f.transpose());

        let fs = diag21().adjoint_forward(&dmatrix![1.0, 0.0]).unwrap();
        assert!((fs - dmatrix![0.5; 0.0]).amax() < 1e-15);

        assert!(diag21().adjoint_forward(&dmatrix![1.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn det_factor_examples() {
        let s = Arc::new(WeightedSpace::identity(2).unwrap());
        let e1 = dvector![1.0, 0.0];
        let a = Operator::identity(&s);
        assert_eq!(rank1_det_factor(&a, &e1, &e1).unwrap(), 2.0);
        assert_eq!(rank1_det_factor(&a, &e1, &dvector![0.0, 0.0]).unwrap(), 1.0);

        let s = diag21();
        let a = Operator::identity(&s);
        assert_eq!(rank1_det_factor(&a, &e1, &e1).unwrap(), 3.0);
        let updated = a.add(&s.tensor(&e1, &e1).unwrap());
        assert!((updated.rep().determinant() - 3.0).abs() < 1e-15);

        let singular = Operator::zero(&s);
        assert!(matches!(rank1_det_factor(&singular, &e1, &e1), Err(Error::Singular(_))));
    }

    #[test]
    fn smw_examples() {
        let s = diag21();
        let e1 = dvector![1.0, 0.0];
        let a_inv = Operator::identity(&s);
        let updated = rank1_inverse_update(&a_inv, &e1, &e1).unwrap();
        let dense = dmatrix![3.0, 0.0; 0.0, 1.0].try_inverse().unwrap();
        assert!((updated.rep() - &dense).amax() < 1e-15);
        assert!((updated.rep() - dmatrix![1.0 / 3.0, 0.0; 0.0, 1.0]).amax() < 1e-15);

        let same = rank1_inverse_update(&a_inv, &dvector![0.0, 0.0], &e1).unwrap();
        assert_eq!(same.rep(), a_inv.rep());
    }

    #[test]
    fn smw_rejects_vanishing_denominator() {
        // <A^{-1} u, v>_M = -1 with A = I, M = I
        let s = Arc::new(WeightedSpace::identity(2).unwrap());
        let a_inv = Operator::identity(&s);
        let err = rank1_inverse_update(&a_inv, &dvector![1.0, 0.0], &dvector![-1.0, 0.0]);
        assert!(matches!(err, Err(Error::SingularUpdate(_))));
    }

    #[test]
    fn update_then_downdate_round_trips() {
        let s = Arc::new(WeightedSpace::new(dmatrix![3.0, 0.5, 0.0; 0.5, 2.0, 0.25; 0.0, 0.25, 1.5]).unwrap());
        let a = Operator::new(&s, dmatrix![2.0, 0.1, 0.0; 0.3, 1.5, 0.2; 0.0, 0.1, 1.0]).unwrap();
        let a_inv = a.inverse().unwrap();
        let u = dvector![0.7, -0.2, 1.1];
        let up = rank1_inverse_update(&a_inv, &u, &u).unwrap();
        let back = rank1_inverse_update(&up, &(-&u), &u).unwrap();
        assert!((back.rep() - a_inv.rep()).amax() < 1e-10);
    }

    #[test]
    fn selfadjoint_checks() {
        let s = diag21();
        assert!(s.is_selfadjoint(&Operator::identity(&s), 1e-12));
        let t = Operator::new(&s, dmatrix![0.0, 1.0; 0.0, 0.0]).unwrap();
        assert!(!s.is_selfadjoint(&t, 1e-12));
        // M^{-1} C is selfadjoint for symmetric C
        let t = Operator::new(&s, dmatrix![0.5, 0.5; 1.0, 3.0]).unwrap();
        assert!(s.is_selfadjoint(&t, 1e-12));
    }

    #[test]
    fn weight_validation() {
        assert!(matches!(
            WeightedSpace::new(dmatrix![1.0, 0.5; 0.0, 1.0]),
            Err(Error::NotSymmetric(_))
        ));
        assert!(matches!(
            WeightedSpace::new(dmatrix![1.0, 2.0; 2.0, 1.0]),
            Err(Error::NotPositiveDefinite(_))
        ));
        // roundoff-level asymmetry is accepted and symmetrized
        let s = WeightedSpace::new(dmatrix![2.0, 0.5 + 1e-14; 0.5, 1.0]).unwrap();
        assert_eq!(s.weight()[(0, 1)], s.weight()[(1, 0)]);
    }

    #[test]
    fn whitening_is_an_isometry() {
        let s = WeightedSpace::new(dmatrix![3.0, 0.5; 0.5, 2.0]).unwrap();
        let u = dvector![0.3, -1.2];
        let v = dvector![2.0, 0.7];
        let lhs = s.inner(&u, &v).unwrap();
        let rhs = s.whiten(&u).dot(&s.whiten(&v));
        assert!((lhs - rhs).abs() < 1e-14);
        assert!((s.unwhiten(&s.whiten(&u)) - &u).amax() < 1e-14);
    }

    #[test]
    fn logdet_of_selfadjoint_operator() {
        let s = Arc::new(WeightedSpace::new(dmatrix![3.0, 0.5; 0.5, 2.0]).unwrap());
        let a = Operator::identity(&s).add(&s.tensor(&dvector![1.0, 2.0], &dvector![1.0, 2.0]).unwrap());
        let dense = a.rep().determinant().ln();
        assert!((a.logdet_spd().unwrap() - dense).abs() < 1e-13);
    }
}
