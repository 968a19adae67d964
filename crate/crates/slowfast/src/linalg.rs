//! Small dense linear-algebra helpers shared across modules.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Largest real part over the spectrum of a square matrix.
pub fn spectral_abscissa(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 0 {
        return f64::NEG_INFINITY;
    }
    a.complex_eigenvalues()
        .iter()
        .map(|l| l.re)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Operator 2-norm (largest singular value).
pub fn op_norm(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 0 || a.ncols() == 0 {
        return 0.0;
    }
    a.clone().singular_values().max()
}

/// Numerical rank with the `dim * tol * sigma_max` cutoff convention.
pub fn rank(a: &DMatrix<f64>, rel_tol: f64) -> usize {
    if a.nrows() == 0 || a.ncols() == 0 {
        return 0;
    }
    let sv = a.clone().singular_values();
    let cutoff = a.nrows().max(a.ncols()) as f64 * rel_tol * sv.max();
    sv.iter().filter(|&&s| s > cutoff).count()
}

/// Symmetric part (A + Aᵀ)/2.
pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Eigenvalue range (min, max) of a symmetric matrix.
pub fn sym_eig_range(a: &DMatrix<f64>) -> (f64, f64) {
    if a.nrows() == 0 {
        return (0.0, 0.0);
    }
    let ev = a.clone().symmetric_eigenvalues();
    (ev.min(), ev.max())
}

/// Solves A x = b by LU with a singularity guard.
pub fn lu_solve(a: &DMatrix<f64>, b: &DVector<f64>, context: &str) -> Result<DVector<f64>> {
    a.clone().lu().solve(b).ok_or_else(|| Error::SingularJacobian {
        context: context.to_string(),
    })
}

/// Solves A X = B columnwise by LU.
pub fn lu_solve_mat(a: &DMatrix<f64>, b: &DMatrix<f64>, context: &str) -> Result<DMatrix<f64>> {
    a.clone().lu().solve(b).ok_or_else(|| Error::SingularJacobian {
        context: context.to_string(),
    })
}

/// Matrix exponential by scaling and squaring with a Padé(6,6) approximant.
///
/// Accurate to near machine precision for the desk-scale matrices used here;
/// serves as the constant-coefficient reference for principal solutions and
/// as the kernel of the Lyapunov quadrature oracle.
pub fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "expm needs a square matrix");
    if n == 0 {
        return a.clone();
    }
    let norm = a.abs().row_sum().max(); // inf-norm
    let s = if norm > 0.5 {
        (norm / 0.5).log2().ceil() as i32
    } else {
        0
    };
    let a_scaled = a / 2f64.powi(s);

    // Padé(6,6) numerator coefficients: 1, 1/2, 5/44, 1/66, 1/792, 1/15840, 1/665280.
    let c = [
        1.0,
        0.5,
        5.0 / 44.0,
        1.0 / 66.0,
        1.0 / 792.0,
        1.0 / 15_840.0,
        1.0 / 665_280.0,
    ];
    let id = DMatrix::<f64>::identity(n, n);
    let a2 = &a_scaled * &a_scaled;
    let a4 = &a2 * &a2;
    let a6 = &a2 * &a4;
    let even = &id * c[0] + &a2 * c[2] + &a4 * c[4] + &a6 * c[6];
    let odd_core = &id * c[1] + &a2 * c[3] + &a4 * c[5];
    let odd = &a_scaled * odd_core;
    let num = &even + &odd;
    let den = &even - &odd;
    let mut e = den
        .lu()
        .solve(&num)
        .expect("Padé denominator is singular; matrix norm reduction failed");
    for _ in 0..s {
        e = &e * &e;
    }
    e
}

/// Column-stacked Kronecker solve of the 1x1/2x2-block Sylvester equation
/// `T_ii Y + Y T_jjᵀ = R` that arises in the Bartels-Stewart back-substitution.
pub fn small_sylvester(
    t_ii: &DMatrix<f64>,
    t_jj: &DMatrix<f64>,
    rhs: &DMatrix<f64>,
    pair_tol: f64,
) -> Result<DMatrix<f64>> {
    let p = t_ii.nrows();
    let q = t_jj.nrows();
    let dim = p * q;
    let mut sys = DMatrix::<f64>::zeros(dim, dim);
    // vec(Y) ordering: Y[(r, c)] -> index c*p + r.
    for r in 0..p {
        for cc in 0..q {
            let row = cc * p + r;
            for rr in 0..p {
                sys[(row, cc * p + rr)] += t_ii[(r, rr)];
            }
            for c2 in 0..q {
                sys[(row, c2 * p + r)] += t_jj[(cc, c2)];
            }
        }
    }
    // Smallest singular value ~ |a_i + a_j|; guard the near-singular pair.
    let sv = sys.clone().singular_values();
    if sv.min() <= pair_tol {
        return Err(Error::IllConditioned {
            pair_sum: sv.min(),
            tol: pair_tol,
        });
    }
    let b = DVector::from_iterator(dim, (0..q).flat_map(|cc| (0..p).map(move |r| (r, cc))).map(|(r, cc)| rhs[(r, cc)]));
    let sol = sys
        .lu()
        .solve(&b)
        .ok_or(Error::IllConditioned { pair_sum: 0.0, tol: pair_tol })?;
    Ok(DMatrix::from_fn(p, q, |r, cc| sol[cc * p + r]))
}
