//! Lyapunov equations and the concentration metric.
//!
//! The stationary covariance of the linearized fast fluctuations solves
//! `A X + X Aᵀ + F₀F₀ᵀ = 0`. Its solution X*(y) is the controllability
//! Grammian of the pair (A*(y), F₀(y,0)); it is nonsingular exactly when
//! that pair is controllable. The adiabatic metric X̄(y,ε) adds the slow
//! drift of X* along reduced orbits as an O(ε) correction, and the
//! cross-block Z̄(y,ε) captures the fast/slow noise correlation.
//!
//! The solver reduces A to real quasi-triangular form and back-substitutes
//! on 1x1/2x2 diagonal blocks (Bartels-Stewart). Quadrature of the integral
//! representation `∫ e^{sA} Q e^{sAᵀ} ds` is kept in the tests as an
//! independent oracle.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::manifold::{self, ManifoldPoint};
use crate::model::{NoiseParams, SlowFastSystem};

/// Residual bound enforced on every Lyapunov solve, relative to ‖Q‖.
pub const LYAP_RESIDUAL_TOL: f64 = 1e-10;

/// Eigenvalue-pair cutoff below which the Lyapunov operator is rejected.
pub const PAIR_SUM_TOL: f64 = 1e-12;

/// Solves `A X + X Aᵀ + Q = 0` for Hurwitz `A` and symmetric PSD `Q`.
pub fn solve_lyapunov(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "A must be square");
    assert_eq!((q.nrows(), q.ncols()), (n, n), "Q must match A");
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let abscissa = linalg::spectral_abscissa(a);
    if abscissa >= 0.0 {
        return Err(Error::NotHurwitz { abscissa });
    }
    let q_sym = linalg::symmetrize(q);

    let schur = nalgebra::linalg::Schur::try_new(a.clone(), f64::EPSILON, 10_000)
        .ok_or_else(|| Error::SingularJacobian {
            context: "Schur iteration did not converge".into(),
        })?;
    let (u, t) = schur.unpack();

    // Transformed equation T Y + Y Tᵀ = -Uᵀ Q U.
    let c = u.transpose() * &q_sym * &u;

    // Diagonal block structure of the quasi-triangular factor.
    let sub_tol = 1e-12 * t.norm().max(1.0);
    let mut blocks: Vec<(usize, usize)> = Vec::new();
    let mut i = 0;
    while i < n {
        if i + 1 < n && t[(i + 1, i)].abs() > sub_tol {
            blocks.push((i, 2));
            i += 2;
        } else {
            blocks.push((i, 1));
            i += 1;
        }
    }

    let mut y = DMatrix::<f64>::zeros(n, n);
    for &(bi, si) in blocks.iter().rev() {
        for &(bj, sj) in blocks.iter().rev() {
            let mut rhs = -c.view((bi, bj), (si, sj)).into_owned();
            // contributions from already-solved blocks to the right/below
            for &(bk, sk) in blocks.iter().filter(|&&(bk, _)| bk > bi) {
                let t_ik = t.view((bi, bk), (si, sk));
                let y_kj = y.view((bk, bj), (sk, sj));
                rhs -= t_ik * y_kj;
            }
            for &(bl, sl) in blocks.iter().filter(|&&(bl, _)| bl > bj) {
                let y_il = y.view((bi, bl), (si, sl));
                let t_jl = t.view((bj, bl), (sj, sl));
                rhs -= y_il * t_jl.transpose();
            }
            let t_ii = t.view((bi, bi), (si, si)).into_owned();
            let t_jj = t.view((bj, bj), (sj, sj)).into_owned();
            let y_ij = linalg::small_sylvester(&t_ii, &t_jj, &rhs, PAIR_SUM_TOL)?;
            y.view_mut((bi, bj), (si, sj)).copy_from(&y_ij);
        }
    }

    let x = linalg::symmetrize(&(&u * y * u.transpose()));
    let residual = (a * &x + &x * a.transpose() + &q_sym).norm();
    let bound = LYAP_RESIDUAL_TOL * q_sym.norm().max(f64::MIN_POSITIVE);
    if residual > bound {
        return Err(Error::IllConditioned {
            pair_sum: residual,
            tol: bound,
        });
    }
    Ok(x)
}

/// Rank of the controllability block matrix `[F₀ AF₀ … A^{n-1}F₀]` via a
/// rank-revealing orthogonal factorization. Singular values below
/// `n · 1e-12 · σ_max` count as zero.
pub fn controllability_rank(a: &DMatrix<f64>, f0: &DMatrix<f64>) -> (usize, bool) {
    let n = a.nrows();
    if n == 0 {
        return (0, true);
    }
    let k = f0.ncols();
    let mut block = DMatrix::<f64>::zeros(n, n * k);
    let mut power = f0.clone();
    for j in 0..n {
        block.view_mut((0, j * k), (n, k)).copy_from(&power);
        power = a * power;
    }
    let sv = block.singular_values();
    let cutoff = n as f64 * 1e-12 * sv.max();
    let rank = sv.iter().filter(|&&s| s > cutoff).count();
    (rank, rank == n)
}

/// The concentration-layer geometry at one slow point.
#[derive(Debug, Clone)]
pub struct ConcentrationMetric {
    pub y: DVector<f64>,
    /// Stationary Grammian X*(y), `A* X + X A*ᵀ + F₀(y,0)F₀(y,0)ᵀ = 0`.
    pub x_star: DMatrix<f64>,
    /// Adiabatic metric X̄(y,ε) = X* + O(ε).
    pub x_bar: DMatrix<f64>,
    /// Cross block Z̄(y,ε) = −√ε ρ A(y,ε)⁻¹ F₀ G₀ᵀ at leading order.
    pub z_bar: DMatrix<f64>,
    /// Condition number of X̄.
    pub cond: f64,
    pub controllable: bool,
}

/// Diffusion matrices restricted to the adiabatic manifold:
/// `F₀(y,ε) = F(x̄,y,ε) − ρ√ε ∂_y x̄ G(x̄,y,ε)`, `G₀(y,ε) = G(x̄,y,ε)`.
pub fn manifold_diffusion(
    sys: &SlowFastSystem,
    params: &NoiseParams,
    y: &DVector<f64>,
    x_guess: &DVector<f64>,
    newton_tol: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let eps = params.eps;
    let x_bar = manifold::adiabatic_point(sys, y, eps, x_guess, newton_tol)?;
    let g0 = sys.cap_g(&x_bar, y, eps);
    let mut f0 = sys.cap_f(&x_bar, y, eps);
    if params.rho != 0.0 {
        let slope = manifold::adiabatic_slope(sys, y, eps, x_guess, newton_tol)?;
        f0 -= slope * &g0 * (params.rho * eps.sqrt());
    }
    Ok((f0, g0))
}

/// Assembles the concentration metric at a uniformly stable manifold point.
///
/// X̄ solves `A(y,ε) X̄ + X̄ A(y,ε)ᵀ + F₀(y,ε)F₀(y,ε)ᵀ = ε ∂_g X*(y)`, one
/// Picard sweep of the invariance equation with X* inserted in the drift
/// term, where ∂_g is the directional derivative along the reduced drift.
pub fn metric_at(
    sys: &SlowFastSystem,
    params: &NoiseParams,
    mp: &ManifoldPoint,
) -> Result<ConcentrationMetric> {
    if !mp.is_uniformly_stable() {
        return Err(Error::NotHurwitz {
            abscissa: mp.max_re_eig(),
        });
    }
    let newton_tol = 1e-12;
    let y = &mp.y;
    let eps = params.eps;

    // Stationary Grammian at eps = 0.
    let f0_zero = sys.cap_f(&mp.x_star, y, 0.0);
    let (rank, controllable) = controllability_rank(&mp.a_star, &f0_zero);
    if !controllable {
        return Err(Error::NotControllable {
            location: format!("y = {:?}", y.as_slice()),
            rank,
            dim: sys.n,
        });
    }
    let x_star = solve_lyapunov(&mp.a_star, &(&f0_zero * f0_zero.transpose()))?;

    // eps-corrected layer: linearization and diffusion on the manifold.
    let a_eps = manifold::linearization_on_manifold(sys, y, eps, &mp.x_star, newton_tol)?;
    let (f0, g0) = manifold_diffusion(sys, params, y, &mp.x_star, newton_tol)?;
    let x_bar_pt = manifold::adiabatic_point(sys, y, eps, &mp.x_star, newton_tol)?;

    // Directional derivative of X* along the reduced drift.
    let drift = sys.g(&x_bar_pt, y, eps);
    let drift_norm = drift.norm();
    let x_star_dot = if drift_norm == 0.0 {
        DMatrix::zeros(sys.n, sys.n)
    } else {
        let h = crate::model::fd_step(y.norm()) / drift_norm.max(1.0);
        let yp = y + &drift * h;
        let ym = y - &drift * h;
        let xs_p = grammian_at(sys, &yp, &mp.x_star, newton_tol)?;
        let xs_m = grammian_at(sys, &ym, &mp.x_star, newton_tol)?;
        (xs_p - xs_m) / (2.0 * h)
    };

    let q_eff = &f0 * f0.transpose() - x_star_dot * eps;
    let x_bar = solve_lyapunov(&a_eps, &q_eff)?;

    let z_bar = if params.rho == 0.0 {
        DMatrix::zeros(sys.n, sys.m)
    } else {
        let rhs = &f0 * g0.transpose();
        let sol = linalg::lu_solve_mat(&a_eps, &rhs, "Z̄ solve")?;
        sol * (-(eps.sqrt()) * params.rho)
    };

    let sv = x_bar.clone().singular_values();
    let cond = sv.max() / sv.min().max(f64::MIN_POSITIVE);

    Ok(ConcentrationMetric {
        y: y.clone(),
        x_star,
        x_bar,
        z_bar,
        cond,
        controllable,
    })
}

/// X*(y) recomputed at a shifted slow point (used for the drift sweep).
fn grammian_at(
    sys: &SlowFastSystem,
    y: &DVector<f64>,
    x_guess: &DVector<f64>,
    newton_tol: f64,
) -> Result<DMatrix<f64>> {
    let mp = manifold::solve_slow_manifold(sys, y, x_guess, newton_tol)?;
    let f0 = sys.cap_f(&mp.x_star, y, 0.0);
    solve_lyapunov(&mp.a_star, &(&f0 * f0.transpose()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::expm;
    use crate::model::catalog_entry;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    /// Quadrature oracle for `∫₀^∞ e^{sA} Q e^{sAᵀ} ds` (composite Simpson
    /// with step-matrix powers); independent of the Schur-based solver.
    pub fn lyapunov_quadrature_oracle(
        a: &DMatrix<f64>,
        q: &DMatrix<f64>,
        intervals: usize,
    ) -> DMatrix<f64> {
        let abscissa = linalg::spectral_abscissa(a);
        assert!(abscissa < 0.0);
        let horizon = 40.0 / (-abscissa);
        let h = horizon / intervals as f64;
        let step = expm(&(a * h));
        let n = a.nrows();
        let mut e = DMatrix::<f64>::identity(n, n);
        let mut sum = DMatrix::<f64>::zeros(n, n);
        for node in 0..=intervals {
            let weight = if node == 0 || node == intervals {
                1.0
            } else if node % 2 == 1 {
                4.0
            } else {
                2.0
            };
            sum += &e * q * e.transpose() * weight;
            e = &step * e;
        }
        sum * (h / 3.0)
    }

    #[test]
    fn scalar_closed_form() {
        let a = DMatrix::from_element(1, 1, -1.0);
        let q = DMatrix::from_element(1, 1, 1.0);
        let x = solve_lyapunov(&a, &q).unwrap();
        assert_relative_eq!(x[(0, 0)], 0.5, epsilon = 1e-14);
    }

    #[test]
    fn diagonal_decouples() {
        let a = DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, -2.0]);
        let q = DMatrix::identity(2, 2);
        let x = solve_lyapunov(&a, &q).unwrap();
        assert_relative_eq!(x[(0, 0)], 0.5, epsilon = 1e-13);
        assert_relative_eq!(x[(1, 1)], 0.25, epsilon = 1e-13);
        assert!(x[(0, 1)].abs() < 1e-14);
    }

    fn seeded_hurwitz(n: usize, seed: u64) -> (DMatrix<f64>, DMatrix<f64>) {
        // simple LCG so the fixture is self-contained
        let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1);
        let mut next = move || {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
        };
        let r = DMatrix::from_fn(n, n, |_, _| next());
        let shift = linalg::op_norm(&r) + 0.5;
        let a = r - DMatrix::identity(n, n) * shift;
        let b = DMatrix::from_fn(n, n, |_, _| next());
        let q = &b * b.transpose();
        (a, q)
    }

    #[test]
    fn random_hurwitz_matches_quadrature_oracle() {
        let (a, q) = seeded_hurwitz(8, 42);
        let x = solve_lyapunov(&a, &q).unwrap();
        let oracle = lyapunov_quadrature_oracle(&a, &q, 4000);
        let rel = (&x - &oracle).norm() / oracle.norm();
        assert!(rel < 1e-6, "relative deviation {rel:e}");
    }

    #[test]
    fn rejects_non_hurwitz() {
        let a = DMatrix::from_element(1, 1, 1.0);
        let q = DMatrix::from_element(1, 1, 1.0);
        assert!(matches!(
            solve_lyapunov(&a, &q),
            Err(Error::NotHurwitz { .. })
        ));
    }

    #[test]
    fn near_zero_pair_sum_is_ill_conditioned() {
        let a = DMatrix::from_row_slice(2, 2, &[-1e-13, 0.0, 0.0, -1.0]);
        let q = DMatrix::identity(2, 2);
        assert!(matches!(
            solve_lyapunov(&a, &q),
            Err(Error::IllConditioned { .. })
        ));
    }

    #[test]
    fn forcing_scaling_is_quadratic() {
        let (a, _) = seeded_hurwitz(5, 7);
        let b = DMatrix::from_fn(5, 2, |i, j| ((i * 2 + j) as f64 * 0.37).sin());
        let x1 = solve_lyapunov(&a, &(&b * b.transpose())).unwrap();
        let c = 3.0;
        let bc = &b * c;
        let x2 = solve_lyapunov(&a, &(&bc * bc.transpose())).unwrap();
        let rel = (&x2 - &x1 * (c * c)).norm() / x2.norm();
        assert!(rel < 1e-12);
    }

    #[test]
    fn controllability_examples() {
        let a = DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, -2.0]);
        let f0 = DMatrix::from_row_slice(2, 1, &[1.0, 0.0]);
        assert_eq!(controllability_rank(&a, &f0), (1, false));

        let a = DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 0.0, -1.0]);
        let f0 = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        assert_eq!(controllability_rank(&a, &f0), (2, true));

        let a = DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, -2.0]);
        let f0 = DMatrix::identity(2, 2);
        assert_eq!(controllability_rank(&a, &f0), (2, true));
    }

    #[test]
    fn metric_linear1d_is_half_for_every_eps() {
        let entry = catalog_entry("linear1d").unwrap();
        let sys = &entry.system;
        let y = DVector::from_element(1, 0.7);
        let mp =
            manifold::solve_slow_manifold(sys, &y, &DVector::from_element(1, 0.0), 1e-12).unwrap();
        for eps in [1e-3, 1e-2, 0.1] {
            let params = NoiseParams::new(eps, 0.03, 0.0).unwrap();
            let metric = metric_at(sys, &params, &mp).unwrap();
            assert_relative_eq!(metric.x_bar[(0, 0)], 0.5, epsilon = 1e-9);
            assert_relative_eq!(metric.x_star[(0, 0)], 0.5, epsilon = 1e-12);
            assert_eq!(metric.z_bar[(0, 0)], 0.0);
            assert!(metric.controllable);
        }
    }

    #[test]
    fn metric_linear2d_matches_hand_arithmetic() {
        let entry = catalog_entry("linear2d").unwrap();
        let sys = &entry.system;
        let y = DVector::from_element(1, 0.4);
        let guess = DVector::from_vec(vec![0.0, 0.0]);
        let mp = manifold::solve_slow_manifold(sys, &y, &guess, 1e-12).unwrap();

        // rho = 0: F0 = I exactly and X* is constant, so X̄ = diag(1/2, 1/4).
        let params0 = NoiseParams::new(0.01, 0.03, 0.0).unwrap();
        let metric0 = metric_at(sys, &params0, &mp).unwrap();
        assert_relative_eq!(metric0.x_bar[(0, 0)], 0.5, epsilon = 1e-8);
        assert_relative_eq!(metric0.x_bar[(1, 1)], 0.25, epsilon = 1e-8);
        assert!(metric0.x_bar[(0, 1)].abs() < 1e-9);

        // rho > 0: Z̄ must equal −√ε ρ A⁻¹ F₀ G₀ᵀ assembled by hand.
        let params = NoiseParams::new(0.01, 0.03, 0.5).unwrap();
        let metric = metric_at(sys, &params, &mp).unwrap();
        let a_eps =
            manifold::linearization_on_manifold(sys, &y, params.eps, &mp.x_star, 1e-12).unwrap();
        let (f0, g0) = manifold_diffusion(sys, &params, &y, &mp.x_star, 1e-12).unwrap();
        let hand = -a_eps.try_inverse().unwrap() * &f0 * g0.transpose()
            * (params.eps.sqrt() * params.rho);
        assert!((&metric.z_bar - &hand).norm() < 1e-10);
        // X* stays diag(1/2, 1/4): the rho-correction only enters X̄.
        assert_relative_eq!(metric.x_star[(0, 0)], 0.5, epsilon = 1e-10);
        assert_relative_eq!(metric.x_star[(1, 1)], 0.25, epsilon = 1e-10);
    }

    #[test]
    fn uncontrollable_pair_is_rejected() {
        let entry = catalog_entry("linear2d").unwrap();
        let mut sys = entry.system.clone();
        // noise only on the first fast coordinate of a diagonal system
        sys.cap_f = std::sync::Arc::new(|_, _, _| {
            DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0])
        });
        let y = DVector::from_element(1, 0.0);
        let guess = DVector::from_vec(vec![0.0, 0.0]);
        let mp = manifold::solve_slow_manifold(&sys, &y, &guess, 1e-12).unwrap();
        let params = NoiseParams::new(0.01, 0.03, 0.0).unwrap();
        assert!(matches!(
            metric_at(&sys, &params, &mp),
            Err(Error::NotControllable { .. })
        ));
    }

    #[test]
    fn grammian_positive_definite_iff_controllable() {
        for name in ["linear1d", "linear2d", "cubic1d"] {
            let entry = catalog_entry(name).unwrap();
            let sys = &entry.system;
            let y = DVector::from_element(sys.m, 0.5);
            let guess = DVector::from_element(sys.n, 0.2);
            let mp = manifold::solve_slow_manifold(sys, &y, &guess, 1e-12).unwrap();
            let f0 = sys.cap_f(&mp.x_star, &y, 0.0);
            let (_, controllable) = controllability_rank(&mp.a_star, &f0);
            let x = solve_lyapunov(&mp.a_star, &(&f0 * f0.transpose())).unwrap();
            let (min_eig, max_eig) = linalg::sym_eig_range(&x);
            let positive_definite = min_eig > sys.n as f64 * 1e-12 * max_eig;
            assert_eq!(controllable, positive_definite, "{name}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn residual_and_symmetry_hold_on_random_instances(seed in 0u64..1000, n in 1usize..7) {
            let (a, q) = seeded_hurwitz(n, seed.wrapping_add(99));
            let x = solve_lyapunov(&a, &q).unwrap();
            let sym_defect = (&x - x.transpose()).norm();
            prop_assert!(sym_defect <= 1e-12 * x.norm().max(1e-300));
            let residual = (&a * &x + &x * a.transpose() + &q).norm();
            prop_assert!(residual <= 1e-10 * q.norm());
            let (min_eig, _) = linalg::sym_eig_range(&x);
            prop_assert!(min_eig > -1e-10 * x.norm());
        }
    }
}
