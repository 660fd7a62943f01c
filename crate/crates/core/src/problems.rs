//! Deterministic generators for desk-scale test problems.
//!
//! All randomness comes from Xoshiro256++ seeded with
//! `Xoshiro256PlusPlus::seed_from_u64(spec.seed)`, consumed in a fixed order,
//! so the same [`ProblemSpec`] yields the same problem on every platform.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::InverseProblem;
use crate::wspace::{symmetrize, Operator, WeightedSpace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemKind {
    Random,
    Chain,
}

/// Parameters of the 1-D chain surrogate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainParams {
    /// `kappa` in the state equation `(kappa K + M) u = M m`.
    pub diffusivity: f64,
    /// Mesh width `h`; `None` means a unit-length domain, `h = 1 / (n - 1)`.
    pub element_size: Option<f64>,
    /// `gamma` in the prior operator `((M + gamma K)^{-1} M)^2`.
    pub prior_correlation: f64,
    pub noise_std: f64,
    /// 0-based sensor nodes; `None` spreads `n_s` sensors over the interior.
    /// Repeated nodes give duplicated rows of the forward map.
    pub sensors: Option<Vec<usize>>,
}

impl Default for ChainParams {
    fn default() -> Self {
        Self {
            diffusivity: 0.01,
            element_size: None,
            prior_correlation: 0.02,
            noise_std: 0.05,
            sensors: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub kind: ProblemKind,
    /// Parameter dimension.
    pub n: usize,
    /// Number of candidate sensors.
    pub n_s: usize,
    pub seed: u64,
    /// Upper end of the log-uniform eigenvalue range of the random `M` and
    /// prior factors.
    pub conditioning: f64,
    pub chain: ChainParams,
}

impl ProblemSpec {
    pub fn random(n: usize, n_s: usize, seed: u64) -> Self {
        Self {
            kind: ProblemKind::Random,
            n,
            n_s,
            seed,
            conditioning: 10.0,
            chain: ChainParams::default(),
        }
    }

    pub fn chain(n: usize, n_s: usize, seed: u64) -> Self {
        Self {
            kind: ProblemKind::Chain,
            ..Self::random(n, n_s, seed)
        }
    }

    pub fn generate(&self) -> Result<InverseProblem> {
        match self.kind {
            ProblemKind::Random => gen_random(self),
            ProblemKind::Chain => gen_chain(self),
        }
    }
}

fn normal_matrix(rng: &mut Xoshiro256PlusPlus, rows: usize, cols: usize) -> DMatrix<f64> {
    // column-major fill order
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

fn log_uniform(rng: &mut Xoshiro256PlusPlus, lo: f64, hi: f64) -> f64 {
    let u: f64 = rng.gen();
    (lo.ln() + u * (hi.ln() - lo.ln())).exp()
}

/// `Q diag(lambda) Q^T` with `Q` orthogonal and `lambda` log-uniform in
/// `[1, conditioning]`.
fn random_spd(rng: &mut Xoshiro256PlusPlus, n: usize, conditioning: f64) -> DMatrix<f64> {
    let q = normal_matrix(rng, n, n).qr().q();
    let lambda = DVector::from_fn(n, |_, _| log_uniform(rng, 1.0, conditioning));
    symmetrize(&(&q * DMatrix::from_diagonal(&lambda) * q.transpose()))
}

/// Random well-conditioned instance: SPD `M`, prior `Gamma_pr = M^{-1} C`
/// with `C` SPD, Gaussian `F` and prior mean, `sigma_i` log-uniform in `[0.5, 2]`.
pub fn gen_random(spec: &ProblemSpec) -> Result<InverseProblem> {
    let (n, n_s) = (spec.n, spec.n_s);
    if n == 0 || n_s == 0 {
        return Err(Error::InvalidArgument("random problem needs n, n_s >= 1".into()));
    }
    if !(spec.conditioning >= 1.0 && spec.conditioning.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "conditioning must be a finite number >= 1, got {}",
            spec.conditioning
        )));
    }
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(spec.seed);
    let m = random_spd(&mut rng, n, spec.conditioning);
    let c = random_spd(&mut rng, n, spec.conditioning);
    let mut forward = normal_matrix(&mut rng, n_s, n);
    for mut row in forward.row_iter_mut() {
        if row.iter().all(|x| *x == 0.0) {
            row[0] = 1.0;
        }
    }
    let sigma = DVector::from_fn(n_s, |_, _| log_uniform(&mut rng, 0.5, 2.0));
    let prior_mean = DVector::from_fn(n, |_, _| rng.sample(StandardNormal));

    let space = Arc::new(WeightedSpace::new(m)?);
    let prior_cov = Operator::new(&space, space.solve_matrix(&c))?;
    InverseProblem::new(space, forward, sigma, prior_mean, prior_cov)
}

/// Mass and stiffness matrices of linear elements on a uniform mesh with `n`
/// nodes and width `h`.
pub fn chain_assembly(n: usize, h: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let mut mass = DMatrix::zeros(n, n);
    let mut stiff = DMatrix::zeros(n, n);
    for e in 0..n.saturating_sub(1) {
        let (a, b) = (e, e + 1);
        mass[(a, a)] += h / 3.0;
        mass[(b, b)] += h / 3.0;
        mass[(a, b)] += h / 6.0;
        mass[(b, a)] += h / 6.0;
        stiff[(a, a)] += 1.0 / h;
        stiff[(b, b)] += 1.0 / h;
        stiff[(a, b)] -= 1.0 / h;
        stiff[(b, a)] -= 1.0 / h;
    }
    (mass, stiff)
}

/// Sensor nodes used when none are given: `n_s` distinct interior nodes
/// spread evenly over `1..=n-2`.
pub fn default_chain_sensors(n: usize, n_s: usize) -> Vec<usize> {
    let interior = n - 2;
    (0..n_s).map(|j| 1 + ((2 * j + 1) * interior) / (2 * n_s)).collect()
}

/// 1-D diffusion surrogate on a uniform linear-element mesh.
///
/// - `M`: the tridiagonal mass matrix.
/// - `Gamma_pr = ((M + gamma K)^{-1} M)^2`, selfadjoint in `M`.
/// - `F = E (kappa K + M)^{-1} M`: solve for the state `u` driven by the
///   parameter, then read `u` at the sensor nodes (`E`).
/// - zero prior mean, constant `sigma`.
pub fn gen_chain(spec: &ProblemSpec) -> Result<InverseProblem> {
    let n = spec.n;
    if n < 3 {
        return Err(Error::InvalidArgument(format!("chain problem needs n >= 3, got {n}")));
    }
    let p = &spec.chain;
    let sensors = match &p.sensors {
        Some(s) => {
            if s.len() != spec.n_s {
                return Err(Error::InvalidArgument(format!(
                    "{} sensor nodes given for n_s = {}",
                    s.len(),
                    spec.n_s
                )));
            }
            if let Some(&bad) = s.iter().find(|&&j| j == 0 || j >= n - 1) {
                return Err(Error::InvalidArgument(format!(
                    "sensor node {bad} is not an interior node"
                )));
            }
            s.clone()
        }
        None => {
            if spec.n_s == 0 || spec.n_s > n - 2 {
                return Err(Error::InvalidArgument(format!(
                    "n_s = {} must be between 1 and the {} interior nodes",
                    spec.n_s,
                    n - 2
                )));
            }
            default_chain_sensors(n, spec.n_s)
        }
    };
    let h = p.element_size.unwrap_or(1.0 / (n - 1) as f64);
    for (name, v) in [
        ("element_size", h),
        ("diffusivity", p.diffusivity),
        ("prior_correlation", p.prior_correlation),
        ("noise_std", p.noise_std),
    ] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")));
        }
    }

    let (mass, stiff) = chain_assembly(n, h);
    let prior_op = (&mass + &stiff * p.prior_correlation)
        .cholesky()
        .ok_or(Error::NotPositiveDefinite("prior operator"))?
        .solve(&mass);
    let prior_rep = &prior_op * &prior_op;

    let state = (&mass + &stiff * p.diffusivity)
        .cholesky()
        .ok_or(Error::NotPositiveDefinite("state operator"))?
        .solve(&mass);
    let forward = DMatrix::from_fn(sensors.len(), n, |r, c| state[(sensors[r], c)]);

    let space = Arc::new(WeightedSpace::new(mass)?);
    // remove roundoff asymmetry of M Gamma_pr
    let prior_rep = space.solve_matrix(&symmetrize(&(space.weight() * prior_rep)));
    let prior_cov = Operator::new(&space, prior_rep)?;
    InverseProblem::new(
        space,
        forward,
        DVector::from_element(sensors.len(), p.noise_std),
        DVector::zeros(n),
        prior_cov,
    )
}
