//! Slow manifold location, adiabatic correction and stability.
//!
//! The slow manifold is the root set x*(y) of the fast drift at ε = 0. The
//! invariant (adiabatic) manifold of the full system satisfies
//!
//! ```text
//! ε ∂_y x̄(y,ε) g(x̄(y,ε), y, ε) = f(x̄(y,ε), y, ε)
//! ```
//!
//! and is represented here by its first-order Taylor truncation
//! x̄ = x* + ε·x1 + O(ε²). Everything downstream (metrics, orbits,
//! exit sets) is stated with O(ε²) truncation error.

use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::SlowFastSystem;

/// Margin used by default when classifying hyperbolicity.
pub const DEFAULT_STABILITY_MARGIN: f64 = 1e-6;

/// Maximum Newton iterations for manifold solves.
pub const NEWTON_MAX_ITERS: usize = 50;

/// Stability of the fast linearization at a manifold point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StabilityClass {
    /// All eigenvalues bounded away from the imaginary axis, mixed signs.
    Hyperbolic,
    /// All eigenvalues with real part ≤ −margin.
    UniformlyAsymptoticallyStable,
    /// All eigenvalues with real part ≥ margin.
    Unstable,
    /// Some eigenvalue within the margin of the imaginary axis.
    NonHyperbolic,
}

impl StabilityClass {
    pub fn as_str(&self) -> &'static str {
        match self {
            StabilityClass::Hyperbolic => "hyperbolic",
            StabilityClass::UniformlyAsymptoticallyStable => "uniformly-asymptotically-stable",
            StabilityClass::Unstable => "unstable",
            StabilityClass::NonHyperbolic => "non-hyperbolic",
        }
    }
}

/// Classifies a fast spectrum against a hyperbolicity margin.
pub fn classify_spectrum(spectrum: &[Complex<f64>], margin: f64) -> StabilityClass {
    if spectrum.iter().any(|l| l.re.abs() < margin) {
        return StabilityClass::NonHyperbolic;
    }
    let all_stable = spectrum.iter().all(|l| l.re <= -margin);
    let all_unstable = spectrum.iter().all(|l| l.re >= margin);
    if all_stable {
        StabilityClass::UniformlyAsymptoticallyStable
    } else if all_unstable {
        StabilityClass::Unstable
    } else {
        StabilityClass::Hyperbolic
    }
}

/// A point on (or near) the slow manifold with its fast linearization.
#[derive(Debug, Clone)]
pub struct ManifoldPoint {
    pub y: DVector<f64>,
    /// Root of f(·, y, 0).
    pub x_star: DVector<f64>,
    /// First-order adiabatic coefficient, so x̄ = x* + ε·x1 + O(ε²).
    pub x1: Option<DVector<f64>>,
    /// A*(y) = ∂_x f(x*(y), y, 0).
    pub a_star: DMatrix<f64>,
    pub spectrum: Vec<Complex<f64>>,
    pub stability_class: StabilityClass,
    /// Residual of the Newton solve.
    pub residual: f64,
}

impl ManifoldPoint {
    pub fn is_uniformly_stable(&self) -> bool {
        self.stability_class == StabilityClass::UniformlyAsymptoticallyStable
    }

    pub fn max_re_eig(&self) -> f64 {
        self.spectrum
            .iter()
            .map(|l| l.re)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Damped Newton iteration on x ↦ f(x, y, 0).
///
/// The step is halved up to six times whenever the residual increases,
/// which keeps the iteration from jumping across folds.
pub fn solve_slow_manifold(
    sys: &SlowFastSystem,
    y: &DVector<f64>,
    x_guess: &DVector<f64>,
    newton_tol: f64,
) -> Result<ManifoldPoint> {
    assert!(newton_tol > 0.0, "newton_tol must be positive");
    let mut x = x_guess.clone();
    let mut res_vec = sys.f(&x, y, 0.0);
    let mut res = res_vec.norm();
    let mut iters = 0;
    while res > newton_tol {
        if iters >= NEWTON_MAX_ITERS {
            return Err(Error::NoConvergence {
                iters,
                residual: res,
            });
        }
        let jac = sys.jac_f_x(&x, y, 0.0);
        let step = linalg::lu_solve(&jac, &res_vec, "Newton step for slow manifold")?;
        if !step.iter().all(|v| v.is_finite()) {
            return Err(Error::SingularJacobian {
                context: "non-finite Newton step".into(),
            });
        }
        let mut scale = 1.0;
        let mut x_new = &x - &step * scale;
        let mut res_new = sys.f(&x_new, y, 0.0);
        for _ in 0..6 {
            if res_new.norm() <= res {
                break;
            }
            scale *= 0.5;
            x_new = &x - &step * scale;
            res_new = sys.f(&x_new, y, 0.0);
        }
        x = x_new;
        res_vec = res_new;
        res = res_vec.norm();
        iters += 1;
    }
    let a_star = sys.jac_f_x(&x, y, 0.0);
    let spectrum: Vec<Complex<f64>> = a_star.complex_eigenvalues().iter().cloned().collect();
    let stability_class = classify_spectrum(&spectrum, DEFAULT_STABILITY_MARGIN);
    Ok(ManifoldPoint {
        y: y.clone(),
        x_star: x,
        x1: None,
        a_star,
        spectrum,
        stability_class,
        residual: res,
    })
}

/// ∂_y x*(y) by implicit differentiation: −A*(y)⁻¹ ∂_y f(x*(y), y, 0).
pub fn slow_manifold_slope(sys: &SlowFastSystem, mp: &ManifoldPoint) -> Result<DMatrix<f64>> {
    let jac_y = sys.jac_f_y(&mp.x_star, &mp.y, 0.0);
    let sol = linalg::lu_solve_mat(&mp.a_star, &jac_y, "implicit differentiation of x*")?;
    Ok(-sol)
}

/// First-order adiabatic coefficient x1(y), the solution of
/// `A*(y) x1 = ∂_y x*(y) g(x*(y), y, 0) − ∂_ε f(x*(y), y, 0)`.
pub fn adiabatic_correction(sys: &SlowFastSystem, mp: &ManifoldPoint) -> Result<DVector<f64>> {
    let slope = slow_manifold_slope(sys, mp)?;
    let g0 = sys.g(&mp.x_star, &mp.y, 0.0);
    let df_deps = sys.df_deps(&mp.x_star, &mp.y, 0.0);
    let rhs = slope * g0 - df_deps;
    linalg::lu_solve(&mp.a_star, &rhs, "adiabatic correction solve")
}

/// Solves the manifold point at y and attaches x1.
pub fn manifold_point_with_correction(
    sys: &SlowFastSystem,
    y: &DVector<f64>,
    x_guess: &DVector<f64>,
    newton_tol: f64,
) -> Result<ManifoldPoint> {
    let mut mp = solve_slow_manifold(sys, y, x_guess, newton_tol)?;
    let x1 = adiabatic_correction(sys, &mp)?;
    mp.x1 = Some(x1);
    Ok(mp)
}

/// x̄(y, ε) = x*(y) + ε·x1(y), truncation error O(ε²).
pub fn adiabatic_point(
    sys: &SlowFastSystem,
    y: &DVector<f64>,
    eps: f64,
    x_guess: &DVector<f64>,
    newton_tol: f64,
) -> Result<DVector<f64>> {
    let mp = manifold_point_with_correction(sys, y, x_guess, newton_tol)?;
    Ok(&mp.x_star + mp.x1.as_ref().unwrap() * eps)
}

/// ∂_y x̄(y, ε) by central differences of the adiabatic point over y.
pub fn adiabatic_slope(
    sys: &SlowFastSystem,
    y: &DVector<f64>,
    eps: f64,
    x_guess: &DVector<f64>,
    newton_tol: f64,
) -> Result<DMatrix<f64>> {
    let h = crate::model::fd_step(y.norm());
    let mut slope = DMatrix::zeros(sys.n, sys.m);
    for j in 0..sys.m {
        let mut yp = y.clone();
        let mut ym = y.clone();
        yp[j] += h;
        ym[j] -= h;
        let xp = adiabatic_point(sys, &yp, eps, x_guess, newton_tol)?;
        let xm = adiabatic_point(sys, &ym, eps, x_guess, newton_tol)?;
        slope.set_column(j, &((xp - xm) / (2.0 * h)));
    }
    Ok(slope)
}

/// Fast linearization along the adiabatic manifold,
/// `A(y,ε) = ∂_x f(x̄,y,ε) − ε ∂_y x̄ ∂_x g(x̄,y,ε)`.
pub fn linearization_on_manifold(
    sys: &SlowFastSystem,
    y: &DVector<f64>,
    eps: f64,
    x_guess: &DVector<f64>,
    newton_tol: f64,
) -> Result<DMatrix<f64>> {
    let x_bar = adiabatic_point(sys, y, eps, x_guess, newton_tol)?;
    let slope = adiabatic_slope(sys, y, eps, x_guess, newton_tol)?;
    Ok(sys.jac_f_x(&x_bar, y, eps) - slope * sys.jac_g_x(&x_bar, y, eps) * eps)
}

/// Residual of the invariance identity with the truncated manifold,
/// `r(ε) = ‖f(x̄,y,ε) − ε ∂_y x̄ g(x̄,y,ε)‖`, which is O(ε²) for smooth
/// fields. Halving ε should divide r by ≈ 4.
pub fn invariance_residual(
    sys: &SlowFastSystem,
    y: &DVector<f64>,
    eps: f64,
    x_guess: &DVector<f64>,
    newton_tol: f64,
) -> Result<f64> {
    let x_bar = adiabatic_point(sys, y, eps, x_guess, newton_tol)?;
    let slope = adiabatic_slope(sys, y, eps, x_guess, newton_tol)?;
    let g = sys.g(&x_bar, y, eps);
    let r = sys.f(&x_bar, y, eps) - slope * g * eps;
    Ok(r.norm())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{catalog_entry, Domain};
    use approx::assert_relative_eq;
    use std::sync::Arc;

    fn v1(x: f64) -> DVector<f64> {
        DVector::from_element(1, x)
    }

    #[test]
    fn linear1d_manifold_point() {
        let sys = catalog_entry("linear1d").unwrap().system;
        let mp = solve_slow_manifold(&sys, &v1(2.0), &v1(0.0), 1e-12).unwrap();
        assert_relative_eq!(mp.x_star[0], 2.0, epsilon = 1e-12);
        assert_relative_eq!(mp.a_star[(0, 0)], -1.0, epsilon = 1e-12);
        assert_eq!(
            mp.stability_class,
            StabilityClass::UniformlyAsymptoticallyStable
        );
    }

    #[test]
    fn pitchfork_zero_branch_stable_before_bifurcation() {
        let sys = catalog_entry("pitchfork").unwrap().system;
        let mp = solve_slow_manifold(&sys, &v1(-1.0), &v1(0.0), 1e-12).unwrap();
        assert_relative_eq!(mp.x_star[0], 0.0, epsilon = 1e-12);
        assert_relative_eq!(mp.a_star[(0, 0)], -1.0, epsilon = 1e-12);
        assert!(mp.is_uniformly_stable());
    }

    #[test]
    fn cubic_newton_converges_to_origin() {
        // f(x, 0) = -x^3 - x: only real root is x = 0; A* = -1 there.
        let sys = catalog_entry("cubic1d").unwrap().system;
        let mp = solve_slow_manifold(&sys, &v1(0.0), &v1(1.0), 1e-12).unwrap();
        assert!(mp.x_star[0].abs() < 1e-12);
        assert_relative_eq!(mp.a_star[(0, 0)], -1.0, epsilon = 1e-10);
    }

    #[test]
    fn newton_reports_no_convergence_without_root() {
        // f(x) = cbrt(x): the damped Newton step overshoots every iteration,
        // so the residual decays far too slowly to reach 1e-12 in 50 steps.
        let mut sys = catalog_entry("linear1d").unwrap().system;
        sys.f = Arc::new(|x, _, _| v1(x[0].cbrt()));
        sys.jac_f_x = Some(Arc::new(|x, _, _| {
            let c = x[0].cbrt();
            DMatrix::from_element(1, 1, 1.0 / (3.0 * c * c))
        }));
        sys.jac_f_y = None;
        let err = solve_slow_manifold(&sys, &v1(0.0), &v1(1.0), 1e-12).unwrap_err();
        assert!(matches!(err, Error::NoConvergence { .. }));
    }

    #[test]
    fn singular_jacobian_is_reported() {
        let mut sys = catalog_entry("linear1d").unwrap().system;
        sys.f = Arc::new(|x, _, _| v1(x[0] * x[0] + 1.0));
        sys.jac_f_x = Some(Arc::new(|x, _, _| DMatrix::from_element(1, 1, 2.0 * x[0])));
        sys.jac_f_y = None;
        let err = solve_slow_manifold(&sys, &v1(0.0), &v1(0.0), 1e-12).unwrap_err();
        assert!(matches!(err, Error::SingularJacobian { .. }));
    }

    #[test]
    fn linear1d_adiabatic_correction_is_y() {
        let sys = catalog_entry("linear1d").unwrap().system;
        let mp = solve_slow_manifold(&sys, &v1(1.5), &v1(0.0), 1e-12).unwrap();
        let x1 = adiabatic_correction(&sys, &mp).unwrap();
        assert_relative_eq!(x1[0], 1.5, epsilon = 1e-9);
    }

    #[test]
    fn expanding_slow_field_flips_correction_sign() {
        // eps x' = -x + y, y' = +y gives x1 = -y.
        let mut sys = catalog_entry("linear1d").unwrap().system;
        sys.g = Arc::new(|_, y, _| v1(y[0]));
        sys.jac_g_x = Some(Arc::new(|_, _, _| DMatrix::zeros(1, 1)));
        sys.jac_g_y = Some(Arc::new(|_, _, _| DMatrix::from_element(1, 1, 1.0)));
        let mp = solve_slow_manifold(&sys, &v1(1.0), &v1(0.0), 1e-12).unwrap();
        let x1 = adiabatic_correction(&sys, &mp).unwrap();
        assert_relative_eq!(x1[0], -1.0, epsilon = 1e-9);
    }

    #[test]
    fn static_slow_variable_has_zero_correction() {
        let mut sys = catalog_entry("linear1d").unwrap().system;
        sys.g = Arc::new(|_, _, _| v1(0.0));
        sys.jac_g_x = Some(Arc::new(|_, _, _| DMatrix::zeros(1, 1)));
        sys.jac_g_y = Some(Arc::new(|_, _, _| DMatrix::zeros(1, 1)));
        let mp = solve_slow_manifold(&sys, &v1(1.0), &v1(0.0), 1e-12).unwrap();
        let x1 = adiabatic_correction(&sys, &mp).unwrap();
        assert!(x1[0].abs() < 1e-9);
    }

    #[test]
    fn adiabatic_point_first_order_accuracy() {
        let sys = catalog_entry("linear1d").unwrap().system;
        let xb = adiabatic_point(&sys, &v1(1.0), 0.1, &v1(0.0), 1e-12).unwrap();
        assert_relative_eq!(xb[0], 1.1, epsilon = 1e-9);
        // exact manifold is y/(1-eps) = 1.1111...; error must be O(eps^2)
        assert!((xb[0] - 1.0 / 0.9).abs() < 0.012);

        let x0 = adiabatic_point(&sys, &v1(1.0), 0.0, &v1(0.0), 1e-12).unwrap();
        assert_relative_eq!(x0[0], 1.0, epsilon = 1e-12);
        let xz = adiabatic_point(&sys, &v1(0.0), 0.05, &v1(0.0), 1e-12).unwrap();
        assert!(xz[0].abs() < 1e-12);
    }

    #[test]
    fn invariance_residual_is_second_order() {
        let sys = catalog_entry("cubic1d").unwrap().system;
        let guess = v1(0.3);
        for y in [-1.2f64, -0.4, 0.5, 1.3] {
            let r1 = invariance_residual(&sys, &v1(y), 1e-2, &guess, 1e-13).unwrap();
            let r2 = invariance_residual(&sys, &v1(y), 5e-3, &guess, 1e-13).unwrap();
            let ratio = r1 / r2;
            assert!(
                (3.2..=4.8).contains(&ratio),
                "residual ratio {ratio} at y = {y}"
            );
        }
    }

    #[test]
    fn implicit_slope_matches_finite_difference_of_solver() {
        let sys = catalog_entry("cubic1d").unwrap().system;
        let y = v1(0.8);
        let mp = solve_slow_manifold(&sys, &y, &v1(0.5), 1e-13).unwrap();
        let slope = slow_manifold_slope(&sys, &mp).unwrap();
        let h = 1e-5;
        let xp = solve_slow_manifold(&sys, &v1(0.8 + h), &mp.x_star, 1e-13).unwrap();
        let xm = solve_slow_manifold(&sys, &v1(0.8 - h), &mp.x_star, 1e-13).unwrap();
        let fd = (xp.x_star[0] - xm.x_star[0]) / (2.0 * h);
        assert!(
            ((slope[(0, 0)] - fd) / fd).abs() < 1e-4,
            "slope {} vs fd {}",
            slope[(0, 0)],
            fd
        );
    }

    #[test]
    fn stability_class_invariant_under_positive_rescaling() {
        let base = catalog_entry("cubic1d").unwrap().system;
        for c in [0.5, 2.0, 10.0] {
            let mut sys = base.clone();
            let f0 = base.f.clone();
            sys.f = Arc::new(move |x, y, e| f0(x, y, e) * c);
            sys.jac_f_x = None;
            sys.jac_f_y = None;
            let mp = solve_slow_manifold(&sys, &v1(0.7), &v1(0.5), 1e-12).unwrap();
            assert_eq!(
                mp.stability_class,
                StabilityClass::UniformlyAsymptoticallyStable
            );
        }
    }

    #[test]
    fn linearization_on_manifold_linear1d() {
        let sys = catalog_entry("linear1d").unwrap().system;
        let a = linearization_on_manifold(&sys, &v1(0.5), 0.05, &v1(0.0), 1e-12).unwrap();
        assert_relative_eq!(a[(0, 0)], -1.0, epsilon = 1e-8);
    }

    #[test]
    fn non_hyperbolic_point_is_flagged() {
        let sys = catalog_entry("pitchfork").unwrap().system;
        // at y = 0 the zero branch loses hyperbolicity
        let mp = solve_slow_manifold(&sys, &v1(0.0), &v1(0.0), 1e-12).unwrap();
        assert_eq!(mp.stability_class, StabilityClass::NonHyperbolic);
        let _ = Domain::boxed(vec![(-1.0, 1.0)]);
    }
}
