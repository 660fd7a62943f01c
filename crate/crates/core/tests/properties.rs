use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use eigsense::problems::ProblemSpec;
use eigsense::select::{exhaustive, greedy, lazy_greedy, DEFAULT_EXHAUSTIVE_CAP};
use eigsense::verify::{check_submodular, kl_gaussian, mc_eig, SubmodularMode};
use eigsense::wspace::{rank1_det_factor, rank1_inverse_update};
use eigsense::{phi_eig, Design, DesignState, InverseProblem, Operator, WeightedSpace};

fn problem_strategy(max_n: usize, max_ns: usize) -> impl Strategy<Value = InverseProblem> {
    (any::<bool>(), 2..=max_n, 1..=max_ns, any::<u64>()).prop_map(|(chain, n, n_s, seed)| {
        let spec = if chain {
            ProblemSpec::chain(n.max(n_s + 2), n_s, seed)
        } else {
            ProblemSpec::random(n, n_s, seed)
        };
        spec.generate().unwrap()
    })
}

fn matrix(n: usize, lo: f64, hi: f64) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(lo..hi, n * n).prop_map(move |v| DMatrix::from_vec(n, n, v))
}

fn vector(n: usize) -> impl Strategy<Value = DVector<f64>> {
    prop::collection::vec(-1.0..1.0f64, n).prop_map(DVector::from_vec)
}

/// A weighted space, an operator `A` near `3 I`, and two vectors.
fn rank1_case() -> impl Strategy<Value = (Arc<WeightedSpace>, Operator, DVector<f64>, DVector<f64>)> {
    (1..=6usize).prop_flat_map(|n| {
        (matrix(n, -1.0, 1.0), matrix(n, -0.5, 0.5), vector(n), vector(n)).prop_map(move |(b, r, u, v)| {
            let weight = &b * b.transpose() + DMatrix::identity(n, n);
            let space = Arc::new(WeightedSpace::new(weight).unwrap());
            let a = Operator::new(&space, DMatrix::identity(n, n) * 3.0 + r).unwrap();
            (space, a, u, v)
        })
    })
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

fn mat_rel(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax() / a.amax().max(b.amax())
}

fn subset_of(p: &InverseProblem, mask: u32) -> Design {
    let active = p.active_indices();
    Design::new(p, active.iter().copied().filter(|&i| mask >> (i % 32) & 1 == 1)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn determinant_lemma((space, a, u, v) in rank1_case()) {
        let updated = a.add(&space.tensor(&u, &v).unwrap());
        let lhs = updated.rep().determinant();
        let rhs = a.rep().determinant() * rank1_det_factor(&a, &u, &v).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-9 * lhs.abs().max(1.0), "{lhs} vs {rhs}");
    }

    #[test]
    fn sherman_morrison((space, a, u, v) in rank1_case()) {
        let d = rank1_det_factor(&a, &u, &v).unwrap();
        prop_assume!(d.abs() > 0.1);
        let direct = a.add(&space.tensor(&u, &v).unwrap()).inverse().unwrap();
        let updated = rank1_inverse_update(&a.inverse().unwrap(), &u, &v).unwrap();
        prop_assert!(mat_rel(direct.rep(), updated.rep()) <= 1e-9);
    }

    #[test]
    fn preconditioned_hessian_is_additive(p in problem_strategy(6, 8), m1: u32, m2: u32) {
        let s = subset_of(&p, m1);
        let t = subset_of(&p, m2 & !m1);
        let union = Design::new(&p, s.indices().iter().chain(t.indices()).copied()).unwrap();
        let sum = p.hessian_preconditioned(&s).unwrap().add(&p.hessian_preconditioned(&t).unwrap());
        let whole = p.hessian_preconditioned(&union).unwrap();
        prop_assert!((sum.rep() - whole.rep()).amax() <= 1e-10 * whole.rep().amax().max(1.0));
    }

    #[test]
    fn posterior_covariance_below_prior(p in problem_strategy(6, 8), mask: u32) {
        let design = subset_of(&p, mask);
        let post = p.posterior_cov(&design).unwrap();
        let diff = p.prior_cov().sub(&post).whitened();
        let scale = p.prior_cov().whitened().amax();
        let min = diff.symmetric_eigenvalues().min();
        prop_assert!(min >= -1e-10 * scale, "{min}");
    }

    #[test]
    fn logdet_matches_plain_determinant(p in problem_strategy(6, 8), mask: u32) {
        let design = subset_of(&p, mask);
        let a = Operator::identity(p.space()).add(&p.hessian_preconditioned(&design).unwrap());
        let det = a.rep().determinant();
        prop_assert!(det > 0.0);
        let phi = phi_eig(&p, &design).unwrap();
        prop_assert!((phi - det.ln()).abs() <= 1e-9 * phi.abs().max(1.0), "{phi} vs {}", det.ln());
    }

    #[test]
    fn alpha_is_symmetric(p in problem_strategy(6, 8), mask: u32) {
        let design = subset_of(&p, mask);
        let state = DesignState::from_design(&p, design).unwrap();
        let active = p.active_indices();
        for &i in &active {
            for &j in &active {
                let (aij, aji) = (state.alpha(i, j).unwrap(), state.alpha(j, i).unwrap());
                prop_assert!((aij - aji).abs() <= 1e-10 * aij.abs().max(1.0));
            }
        }
    }

    #[test]
    fn lazy_matches_plain_greedy(p in problem_strategy(8, 12), k in 0usize..6) {
        let k = k.min(p.active_indices().len());
        let g = greedy(&p, k).unwrap();
        let l = lazy_greedy(&p, k).unwrap();
        prop_assert_eq!(g.chosen, l.chosen);
        prop_assert_eq!(g.phi_final, l.phi_final);
    }

    #[test]
    fn exhaustive_ignores_candidate_order(p in problem_strategy(5, 7), k in 1usize..4, rot in 1usize..7) {
        let q = p.n_candidates();
        let k = k.min(p.active_indices().len());
        let perm: Vec<usize> = (0..q).map(|i| (i + rot) % q).collect();
        let forward = DMatrix::from_fn(q, p.dim(), |i, j| p.forward()[(perm[i], j)]);
        let sigma = DVector::from_fn(q, |i, _| p.sigma()[perm[i]]);
        let permuted = InverseProblem::new(
            p.space().clone(),
            forward,
            sigma,
            p.prior_mean().clone(),
            p.prior_cov().clone(),
        )
        .unwrap();
        let a = exhaustive(&p, k, DEFAULT_EXHAUSTIVE_CAP).unwrap();
        let b = exhaustive(&permuted, k, DEFAULT_EXHAUSTIVE_CAP).unwrap();
        prop_assert!(rel(a.phi_final, b.phi_final) <= 1e-10);
        let mapped = Design::new(&p, b.chosen.indices().iter().map(|&i| perm[i])).unwrap();
        let phi_mapped = phi_eig(&p, &mapped).unwrap();
        prop_assert!(rel(phi_mapped, a.phi_final) <= 1e-10);
    }

    #[test]
    fn kl_is_basis_independent(p in problem_strategy(5, 6), r in matrix(8, -0.3, 0.3), y_seed in vector(6)) {
        let n = p.dim();
        let basis = DMatrix::identity(n, n) + r.view((0, 0), (n, n));
        let basis_inv = basis.clone().try_inverse().unwrap();
        let weight = basis.transpose() * p.space().weight() * &basis;
        let space = Arc::new(WeightedSpace::new(weight).unwrap());
        let prior = Operator::new(&space, &basis_inv * p.prior_cov().rep() * &basis).unwrap();
        let moved = InverseProblem::new(
            space,
            p.forward() * &basis,
            p.sigma().clone(),
            &basis_inv * p.prior_mean(),
            prior,
        )
        .unwrap();
        let design = Design::all_active(&p);
        let y = DVector::from_fn(p.n_candidates(), |i, _| y_seed[i % y_seed.len()]);
        let kl_a = kl_gaussian(&p, &p.posterior(&design, &y).unwrap()).unwrap();
        let kl_b = kl_gaussian(&moved, &moved.posterior(&design, &y).unwrap()).unwrap();
        prop_assert!((kl_a - kl_b).abs() <= 1e-8 * kl_a.abs().max(1.0), "{kl_a} vs {kl_b}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn submodular_modes_agree(p in problem_strategy(5, 7), seed: u64) {
        let exact = check_submodular(&p, SubmodularMode::Exhaustive).unwrap();
        let sampled = check_submodular(&p, SubmodularMode::Randomized { trials: 200, seed }).unwrap();
        prop_assert!(exact.passed());
        prop_assert_eq!(exact.passed(), sampled.passed());
        prop_assert!(sampled.max_closed_form_error <= 1e-9);
    }
}

#[test]
fn mc_standard_error_shrinks_like_root_n() {
    for seed in 0..4 {
        let p = ProblemSpec::random(3, 3, seed).generate().unwrap();
        let design = Design::all_active(&p);
        let small = mc_eig(&p, &design, 4_000, seed).unwrap();
        let large = mc_eig(&p, &design, 16_000, seed + 100).unwrap();
        let ratio = small.std_error / large.std_error;
        assert!((1.0..=4.0).contains(&ratio), "seed {seed}: ratio {ratio}");
    }
}
