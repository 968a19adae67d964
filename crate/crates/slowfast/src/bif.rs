//! Bifurcation-regime machinery.
//!
//! When the reduced flow drives the slow variable towards a bifurcation
//! point, the fast linearization splits into still-stable modes x⁻ and
//! bifurcating modes z. This module
//!
//! * block-diagonalizes the fast linearization into (A⁻, A⁰) and conjugates
//!   the fields into (x⁻, z) coordinates,
//! * computes the centre manifold x̄⁻(z,y,ε) and its layer metric X̄⁻ from
//!   the Lyapunov machinery,
//! * estimates exit probabilities from the layer B⁻(h) around the centre
//!   manifold with the same harness as the stable case,
//! * couples full and reduced runs pathwise to measure the reduced-model
//!   error (with the χ_C diagnostic scale), and
//! * runs the dynamic-pitchfork scaling experiment: spreading width before
//!   the bifurcation and the escape-time law after it.

use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::exitlab::{self, ExitCurve, ExitOptions, MetricField};
use crate::flow::{self, ChiVariant, OrbitOptions, OrbitTable};
use crate::linalg;
use crate::lyap;
use crate::model::{catalog_entry, NoiseParams, SlowFastSystem};
use crate::sde::{self, NoiseStream, ReducedModel};

/// Default hyperbolicity margin for the spectral splitting.
pub const SPLIT_MARGIN: f64 = 1e-6;

/// A slow-fast system in splitting coordinates `x = x̂ + T (x⁻; z)` around a
/// bifurcation point: the first n−q columns of T span the stable subspace,
/// the last q the critical one.
#[derive(Debug, Clone)]
pub struct SplitSystem {
    pub base: SlowFastSystem,
    pub q: usize,
    pub x_hat: DVector<f64>,
    pub y_hat: DVector<f64>,
    pub transform: DMatrix<f64>,
    pub transform_inv: DMatrix<f64>,
    /// Stable block of the fast linearization at the bifurcation point.
    pub a_minus: DMatrix<f64>,
    /// Critical block at the bifurcation point.
    pub a_zero: DMatrix<f64>,
    /// Half-width of the box neighbourhood 𝒩 around (ẑ = 0, ŷ).
    pub neighborhood_radius: f64,
    /// Condition number of the transform.
    pub transform_cond: f64,
}

impl SplitSystem {
    pub fn n_minus(&self) -> usize {
        self.base.n - self.q
    }

    pub fn m(&self) -> usize {
        self.base.m
    }

    pub fn k(&self) -> usize {
        self.base.k
    }

    /// Original coordinates from split ones.
    pub fn to_x(&self, x_minus: &DVector<f64>, z: &DVector<f64>) -> DVector<f64> {
        let mut w = DVector::zeros(self.base.n);
        w.rows_mut(0, self.n_minus()).copy_from(x_minus);
        w.rows_mut(self.n_minus(), self.q).copy_from(z);
        &self.x_hat + &self.transform * w
    }

    /// Split coordinates (x⁻, z) of an original point.
    pub fn to_split(&self, x: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let w = &self.transform_inv * (x - &self.x_hat);
        (
            w.rows(0, self.n_minus()).into_owned(),
            w.rows(self.n_minus(), self.q).into_owned(),
        )
    }

    /// Membership in the box neighbourhood 𝒩 of (ẑ, ŷ).
    pub fn in_neighborhood(&self, z: &DVector<f64>, y: &DVector<f64>) -> bool {
        z.iter().all(|v| v.abs() <= self.neighborhood_radius)
            && y
                .iter()
                .zip(self.y_hat.iter())
                .all(|(v, c)| (v - c).abs() <= self.neighborhood_radius)
    }

    /// Bounds of 𝒩 as a (z, y) box, z axes first.
    pub fn neighborhood_bounds(&self) -> Vec<(f64, f64)> {
        let r = self.neighborhood_radius;
        let mut b: Vec<(f64, f64)> = (0..self.q).map(|_| (-r, r)).collect();
        b.extend(self.y_hat.iter().map(|&c| (c - r, c + r)));
        b
    }

    fn f_w(&self, x_minus: &DVector<f64>, z: &DVector<f64>, y: &DVector<f64>, eps: f64) -> DVector<f64> {
        let x = self.to_x(x_minus, z);
        &self.transform_inv * self.base.f(&x, y, eps)
    }

    /// Stable-mode drift f⁻.
    pub fn f_minus(&self, x_minus: &DVector<f64>, z: &DVector<f64>, y: &DVector<f64>, eps: f64) -> DVector<f64> {
        self.f_w(x_minus, z, y, eps).rows(0, self.n_minus()).into_owned()
    }

    /// Bifurcating-mode drift f⁰.
    pub fn f_zero(&self, x_minus: &DVector<f64>, z: &DVector<f64>, y: &DVector<f64>, eps: f64) -> DVector<f64> {
        self.f_w(x_minus, z, y, eps).rows(self.n_minus(), self.q).into_owned()
    }

    /// Slow drift in split coordinates.
    pub fn g_field(&self, x_minus: &DVector<f64>, z: &DVector<f64>, y: &DVector<f64>, eps: f64) -> DVector<f64> {
        let x = self.to_x(x_minus, z);
        self.base.g(&x, y, eps)
    }

    fn cap_f_w(&self, x_minus: &DVector<f64>, z: &DVector<f64>, y: &DVector<f64>, eps: f64) -> DMatrix<f64> {
        let x = self.to_x(x_minus, z);
        &self.transform_inv * self.base.cap_f(&x, y, eps)
    }

    /// Diffusion rows of the stable modes.
    pub fn cap_f_minus(&self, x_minus: &DVector<f64>, z: &DVector<f64>, y: &DVector<f64>, eps: f64) -> DMatrix<f64> {
        self.cap_f_w(x_minus, z, y, eps).rows(0, self.n_minus()).into_owned()
    }

    /// Diffusion rows of the bifurcating modes.
    pub fn cap_f_zero(&self, x_minus: &DVector<f64>, z: &DVector<f64>, y: &DVector<f64>, eps: f64) -> DMatrix<f64> {
        self.cap_f_w(x_minus, z, y, eps)
            .rows(self.n_minus(), self.q)
            .into_owned()
    }

    pub fn cap_g(&self, x_minus: &DVector<f64>, z: &DVector<f64>, y: &DVector<f64>, eps: f64) -> DMatrix<f64> {
        let x = self.to_x(x_minus, z);
        self.base.cap_g(&x, y, eps)
    }

    /// Jacobian of the split fast drift with respect to (x⁻, z).
    fn jac_w(&self, x_minus: &DVector<f64>, z: &DVector<f64>, y: &DVector<f64>, eps: f64) -> DMatrix<f64> {
        let x = self.to_x(x_minus, z);
        &self.transform_inv * self.base.jac_f_x(&x, y, eps) * &self.transform
    }

    fn jac_w_y(&self, x_minus: &DVector<f64>, z: &DVector<f64>, y: &DVector<f64>, eps: f64) -> DMatrix<f64> {
        let x = self.to_x(x_minus, z);
        &self.transform_inv * self.base.jac_f_y(&x, y, eps)
    }

    /// Zeroth-order centre manifold plus one correction sweep; this is the
    /// representative x̄⁻(z, y, ε) used to pin reduced simulations.
    pub fn centre_manifold_pin(
        &self,
        z: &DVector<f64>,
        y: &DVector<f64>,
        eps: f64,
        x_guess: &DVector<f64>,
        newton_tol: f64,
    ) -> Result<DVector<f64>> {
        if self.n_minus() == 0 {
            return Ok(DVector::zeros(0));
        }
        let core = self.centre_core(z, y, eps, x_guess, newton_tol)?;
        Ok(core.x_bar_minus)
    }

    /// Shared zeroth-order solve + correction used by the pin and the full
    /// centre-manifold point.
    fn centre_core(
        &self,
        z: &DVector<f64>,
        y: &DVector<f64>,
        eps: f64,
        x_guess: &DVector<f64>,
        newton_tol: f64,
    ) -> Result<CentreCore> {
        let p = self.n_minus();
        // damped Newton on x⁻ ↦ f⁻(x⁻, z, y, 0)
        let mut xm = x_guess.clone();
        let mut res_vec = self.f_minus(&xm, z, y, 0.0);
        let mut res = res_vec.norm();
        let mut iters = 0;
        while res > newton_tol {
            if iters >= crate::manifold::NEWTON_MAX_ITERS {
                return Err(Error::NoConvergence { iters, residual: res });
            }
            let jac = self.jac_w(&xm, z, y, 0.0).view((0, 0), (p, p)).into_owned();
            let step = linalg::lu_solve(&jac, &res_vec, "centre-manifold Newton step")?;
            let mut scale = 1.0;
            let mut x_new = &xm - &step * scale;
            let mut res_new = self.f_minus(&x_new, z, y, 0.0);
            for _ in 0..6 {
                if res_new.norm() <= res {
                    break;
                }
                scale *= 0.5;
                x_new = &xm - &step * scale;
                res_new = self.f_minus(&x_new, z, y, 0.0);
            }
            xm = x_new;
            res_vec = res_new;
            res = res_vec.norm();
            iters += 1;
        }

        // implicit slopes of the zeroth-order manifold
        let jw = self.jac_w(&xm, z, y, 0.0);
        let jmm = jw.view((0, 0), (p, p)).into_owned();
        let jmz = jw.view((0, p), (p, self.q)).into_owned();
        let jy = self.jac_w_y(&xm, z, y, 0.0).rows(0, p).into_owned();
        let dz_xbar = -linalg::lu_solve_mat(&jmm, &jmz, "centre ∂_z slope")?;
        let dy_xbar = -linalg::lu_solve_mat(&jmm, &jy, "centre ∂_y slope")?;

        // one correction sweep of the invariance identity, solved against
        // A⁻(z, y, 0) = ∂_{x⁻}f⁻ − ∂_z x̄⁻ ∂_{x⁻}f⁰
        let jzm = jw.view((p, 0), (self.q, p)).into_owned();
        let a_minus0 = &jmm - &dz_xbar * &jzm;
        let rhs = &dz_xbar * self.f_zero(&xm, z, y, eps)
            + &dy_xbar * self.g_field(&xm, z, y, eps) * eps;
        let delta = linalg::lu_solve(&a_minus0, &rhs, "centre correction sweep")?;
        let x_bar_minus = &xm + &delta;

        Ok(CentreCore {
            x_bar_minus,
            dz_xbar,
            dy_xbar,
        })
    }
}

struct CentreCore {
    x_bar_minus: DVector<f64>,
    dz_xbar: DMatrix<f64>,
    dy_xbar: DMatrix<f64>,
}

/// Centre manifold point with its stable-mode linearization and metric.
#[derive(Debug, Clone)]
pub struct CentreManifoldPoint {
    pub z: DVector<f64>,
    pub y: DVector<f64>,
    pub xbar_minus: DVector<f64>,
    /// A⁻(z, y, ε): stable-mode linearization along the centre manifold.
    pub a_minus: DMatrix<f64>,
    /// X̄⁻(z, y, ε): Lyapunov metric of the stable modes.
    pub xbar_minus_metric: DMatrix<f64>,
}

/// Splits the fast linearization at a bifurcation point into q critical and
/// n−q stable modes via an ordered real eigen-decomposition.
pub fn split_at_bifurcation(
    sys: &SlowFastSystem,
    x_hat: &DVector<f64>,
    y_hat: &DVector<f64>,
    q: usize,
    neighborhood_radius: f64,
) -> Result<SplitSystem> {
    let drift = sys.f(x_hat, y_hat, 0.0).norm();
    if drift > 1e-10 {
        return Err(Error::Config(format!(
            "bifurcation point is not an equilibrium of the fast drift: |f| = {drift:e}"
        )));
    }
    let n = sys.n;
    let jac = sys.jac_f_x(x_hat, y_hat, 0.0);
    let margin = SPLIT_MARGIN;

    // cluster eigenvalues, then pull real basis vectors out of each cluster
    let eigs = jac.complex_eigenvalues();
    let scale = 1.0 + jac.norm();
    let cluster_tol = 1e-7 * scale;
    let mut clusters: Vec<(Complex<f64>, usize)> = Vec::new();
    for l in eigs.iter() {
        // conjugate pairs are handled once, through the upper representative
        if l.im < -cluster_tol {
            continue;
        }
        match clusters
            .iter_mut()
            .find(|(c, _)| (c - l).norm() < cluster_tol)
        {
            Some((_, count)) => *count += 1,
            None => clusters.push((*l, 1)),
        }
    }

    let mut stable_cols: Vec<DVector<f64>> = Vec::new();
    let mut critical_cols: Vec<DVector<f64>> = Vec::new();
    let mut detected_q = 0usize;
    for &(lambda, count) in &clusters {
        let is_pair = lambda.im > cluster_tol;
        let real_dim = if is_pair { 2 * count } else { count };
        let is_critical = lambda.re.abs() <= margin;
        let is_stable = lambda.re <= -10.0 * margin;
        if !is_critical && !is_stable {
            return Err(Error::NoSpectralGap {
                context: format!(
                    "eigenvalue {lambda} lies between the critical margin {margin:e} and the stable threshold {:e}",
                    -10.0 * margin
                ),
            });
        }
        let vectors = eigen_basis(&jac, lambda, count)?;
        let target = if is_critical {
            detected_q += real_dim;
            &mut critical_cols
        } else {
            &mut stable_cols
        };
        target.extend(vectors);
    }
    if detected_q != q {
        return Err(Error::WrongCriticalCount {
            requested: q,
            detected: detected_q,
        });
    }

    let mut transform = DMatrix::zeros(n, n);
    for (j, col) in stable_cols.iter().chain(critical_cols.iter()).enumerate() {
        transform.set_column(j, col);
    }
    let sv = transform.clone().singular_values();
    let cond = sv.max() / sv.min().max(f64::MIN_POSITIVE);
    if cond > 1e6 {
        return Err(Error::NoSpectralGap {
            context: format!("eigenbasis is ill-conditioned (cond = {cond:.3e})"),
        });
    }
    let transform_inv = transform.clone().try_inverse().ok_or_else(|| Error::NoSpectralGap {
        context: "eigenbasis is singular".into(),
    })?;

    let block = &transform_inv * &jac * &transform;
    let p = n - q;
    let off = block.view((0, p), (p, q)).norm() + block.view((p, 0), (q, p)).norm();
    if off > 1e-8 * scale {
        return Err(Error::NoSpectralGap {
            context: format!("off-block residual {off:e} after conjugation"),
        });
    }
    Ok(SplitSystem {
        base: sys.clone(),
        q,
        x_hat: x_hat.clone(),
        y_hat: y_hat.clone(),
        a_minus: block.view((0, 0), (p, p)).into_owned(),
        a_zero: block.view((p, p), (q, q)).into_owned(),
        transform,
        transform_inv,
        neighborhood_radius,
        transform_cond: cond,
    })
}

/// Real basis of the eigenspace for one eigenvalue cluster: null space of
/// (A − λI) via SVD, with complex pairs contributing Re/Im columns.
fn eigen_basis(
    jac: &DMatrix<f64>,
    lambda: Complex<f64>,
    count: usize,
) -> Result<Vec<DVector<f64>>> {
    let n = jac.nrows();
    let shifted = DMatrix::from_fn(n, n, |i, j| {
        Complex::new(jac[(i, j)], 0.0) - if i == j { lambda } else { Complex::new(0.0, 0.0) }
    });
    let svd = shifted.svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let mut out = Vec::new();
    for rank in 0..count {
        let row = v_t.row(n - 1 - rank);
        // right-singular vector (conjugated row of V^H)
        let v: DVector<Complex<f64>> = DVector::from_iterator(n, row.iter().map(|c| c.conj()));
        let re = DVector::from_iterator(n, v.iter().map(|c| c.re));
        let im = DVector::from_iterator(n, v.iter().map(|c| c.im));
        if lambda.im.abs() > 1e-9 {
            let re_n = re.norm();
            let im_n = im.norm();
            if re_n > 1e-12 {
                out.push(&re / re_n);
            }
            if im_n > 1e-12 {
                out.push(&im / im_n);
            }
        } else {
            // real eigenvalue: rotate the complex phase away
            let combined = if re.norm() >= im.norm() { re } else { im };
            out.push(&combined / combined.norm());
        }
    }
    if out.is_empty() {
        return Err(Error::NoSpectralGap {
            context: format!("no eigenvector found for eigenvalue {lambda}"),
        });
    }
    Ok(out)
}

/// Centre manifold point with the layer metric X̄⁻ of the stable modes.
pub fn centre_manifold_point(
    split: &SplitSystem,
    z: &DVector<f64>,
    y: &DVector<f64>,
    params: &NoiseParams,
    x_guess: &DVector<f64>,
    newton_tol: f64,
) -> Result<CentreManifoldPoint> {
    if !split.in_neighborhood(z, y) {
        return Err(Error::OutsideDomain {
            context: format!("(z, y) = ({:?}, {:?}) outside 𝒩", z.as_slice(), y.as_slice()),
        });
    }
    let p = split.n_minus();
    if p == 0 {
        return Ok(CentreManifoldPoint {
            z: z.clone(),
            y: y.clone(),
            xbar_minus: DVector::zeros(0),
            a_minus: DMatrix::zeros(0, 0),
            xbar_minus_metric: DMatrix::zeros(0, 0),
        });
    }
    let eps = params.eps;
    let core = split.centre_core(z, y, eps, x_guess, newton_tol)?;
    let xm = &core.x_bar_minus;

    // A⁻(z, y, ε) along the manifold
    let jw = split.jac_w(xm, z, y, eps);
    let jmm = jw.view((0, 0), (p, p)).into_owned();
    let jzm = jw.view((p, 0), (split.q, p)).into_owned();
    let x_full = split.to_x(xm, z);
    let jg_w = split.base.jac_g_x(&x_full, y, eps) * &split.transform;
    let jg_m = jg_w.view((0, 0), (split.m(), p)).into_owned();
    let a_minus = &jmm - &core.dz_xbar * &jzm - &core.dy_xbar * &jg_m * eps;

    let abscissa = linalg::spectral_abscissa(&a_minus);
    if abscissa >= 0.0 {
        return Err(Error::NotHurwitz { abscissa });
    }

    // F₀⁻ = F⁻ − ∂_z x̄⁻ F⁰ − ρ√ε ∂_y x̄⁻ G on the manifold
    let f_minus = split.cap_f_minus(xm, z, y, eps);
    let f_zero = split.cap_f_zero(xm, z, y, eps);
    let g_cap = split.cap_g(xm, z, y, eps);
    let f0_minus = &f_minus
        - &core.dz_xbar * &f_zero
        - &core.dy_xbar * &g_cap * (params.rho * eps.sqrt());

    let (rank, controllable) = lyap::controllability_rank(&a_minus, &f0_minus);
    if !controllable {
        return Err(Error::NotControllable {
            location: format!("(z, y) = ({:?}, {:?})", z.as_slice(), y.as_slice()),
            rank,
            dim: p,
        });
    }
    let metric = lyap::solve_lyapunov(&a_minus, &(&f0_minus * f0_minus.transpose()))?;
    Ok(CentreManifoldPoint {
        z: z.clone(),
        y: y.clone(),
        xbar_minus: core.x_bar_minus,
        a_minus,
        xbar_minus_metric: metric,
    })
}

/// Metric field over the (z, y) box 𝒩: centers x̄⁻, metrics X̄⁻.
pub fn centre_metric_field(
    split: &SplitSystem,
    params: &NoiseParams,
    resolution: usize,
) -> Result<MetricField> {
    let p = split.n_minus();
    if p == 0 {
        return Err(Error::Config(
            "B⁻(h) needs at least one stable fast mode (n − q ≥ 1)".into(),
        ));
    }
    let bounds = split.neighborhood_bounds();
    let mut warm = DVector::zeros(p);
    MetricField::from_fn(&bounds, resolution, params.eps, |coords| {
        let z = coords.rows(0, split.q).into_owned();
        let y = coords.rows(split.q, split.m()).into_owned();
        let cmp = centre_manifold_point(split, &z, &y, params, &warm, 1e-12)?;
        warm = cmp.xbar_minus.clone();
        Ok((cmp.xbar_minus, cmp.xbar_minus_metric))
    })
}

/// Full split-system simulation in (x⁻, z, y) coordinates with a per-step
/// callback; Euler-Maruyama on the conjugated fields, same stream
/// convention as the stable integrators.
pub fn simulate_split_full_with(
    split: &SplitSystem,
    params: &NoiseParams,
    x_minus0: &DVector<f64>,
    z0: &DVector<f64>,
    y0: &DVector<f64>,
    n_steps: usize,
    dt: f64,
    stream: &NoiseStream,
    mut on_sample: impl FnMut(usize, f64, &DVector<f64>, &DVector<f64>, &DVector<f64>),
) -> Result<Option<usize>> {
    let x0 = split.to_x(x_minus0, z0);
    sde::simulate_full_with(
        &split.base,
        params,
        &x0,
        y0,
        n_steps,
        dt,
        stream,
        |i, t, x, y| {
            let (xm, z) = split.to_split(x);
            on_sample(i, t, &xm, &z, y);
        },
    )
}

/// Monte Carlo estimate of `P(τ_{B⁻(h)} < t ∧ τ_𝒩)`: the layer is measured
/// on the stable modes only, with metric X̄⁻(z, y, ε).
#[allow(clippy::too_many_arguments)]
pub fn bminus_exit_probability(
    split: &SplitSystem,
    params: &NoiseParams,
    z0: &DVector<f64>,
    y0: &DVector<f64>,
    h_grid: &[f64],
    t_end: f64,
    n_paths: usize,
    seed: u64,
    opts: &ExitOptions,
) -> Result<ExitCurve> {
    if n_paths < 1000 {
        return Err(Error::Config(format!(
            "exit estimation needs at least 10^3 paths, got {n_paths}"
        )));
    }
    let three_sigma = 3.0 * params.sigma;
    for &h in h_grid {
        if h < three_sigma || h > opts.h0 {
            return Err(Error::Config(format!(
                "h = {h} outside the admissible range [3σ, h0]"
            )));
        }
    }
    let field = centre_metric_field(split, params, opts.resolution)?;
    let mut coords0 = DVector::zeros(split.q + split.m());
    coords0.rows_mut(0, split.q).copy_from(z0);
    coords0.rows_mut(split.q, split.m()).copy_from(y0);
    let (xm0, _) = field.at(&coords0)?;
    let (dt, _, n_steps) = flow::grid_layout(params.eps, t_end, &OrbitOptions::default());
    let h2: Vec<f64> = h_grid.iter().map(|h| h * h).collect();
    let field_ref = &field;

    exitlab::estimate_curve(
        h_grid,
        t_end,
        n_paths,
        seed,
        params.sigma,
        params.eps,
        dt,
        move |_idx, stream| {
            let mut exited = vec![false; h2.len()];
            let mut stopped = false;
            let mut bad: Option<Error> = None;
            let mut coords = DVector::zeros(split.q + split.m());
            simulate_split_full_with(
                split,
                params,
                &xm0,
                z0,
                y0,
                n_steps,
                dt,
                &stream,
                |_i, _t, xm, z, y| {
                    if stopped || bad.is_some() {
                        return;
                    }
                    if !split.in_neighborhood(z, y) {
                        stopped = true;
                        return;
                    }
                    coords.rows_mut(0, split.q).copy_from(z);
                    coords.rows_mut(split.q, split.m()).copy_from(y);
                    match field_ref.quadratic_form(xm, &coords) {
                        Ok(qf) => {
                            let mut all = true;
                            for (j, flag) in exited.iter_mut().enumerate() {
                                if !*flag && qf >= h2[j] {
                                    *flag = true;
                                }
                                all &= *flag;
                            }
                            stopped = all;
                        }
                        Err(Error::OutsideDomain { .. }) => stopped = true,
                        Err(e) => bad = Some(e),
                    }
                },
            )?;
            match bad {
                Some(e) => Err(e),
                None => Ok(exited),
            }
        },
    )
}

/// Stopping-time specification for full-vs-reduced comparisons: the run is
/// censored once the reduced path leaves a tube around the deterministic
/// reduced solution of half-width `c·σ/(‖ydet‖^{1/2} ∨ ε^{1/4})`.
#[derive(Debug, Clone, Copy)]
pub struct TauSpec {
    pub tube_constant: f64,
}

impl Default for TauSpec {
    fn default() -> Self {
        TauSpec { tube_constant: 3.0 }
    }
}

/// Pathwise deviation statistics between full and reduced runs.
#[derive(Debug, Clone)]
pub struct DeviationStats {
    pub t_end: f64,
    pub n_paths: usize,
    pub seed: u64,
    /// Quantiles of sup_{s ≤ t∧τ} ‖(z_s, y_s) − (z⁰_s, y⁰_s)‖.
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub q90: f64,
    pub max: f64,
    /// Fraction of paths stopped by τ before t_end.
    pub stopped_fraction: f64,
    /// χ_C diagnostics from the deterministic reduced orbit.
    pub chi_c1: f64,
    pub chi_c2: f64,
    /// Diagnostic deviation scale σ·χ_C⁽²⁾(t)^{1/2} + σ²·χ_C⁽¹⁾(t).
    pub diag_scale: f64,
}

/// Deterministic reduced orbit of the splitting, with the joint (z, y)
/// linearization stored as the fast generator (for the χ diagnostics) and
/// the stable-mode coupling C = (∂_{x⁻}f⁰; ε ∂_{x⁻}g) as weights.
fn reduced_orbit_with_coupling(
    split: &SplitSystem,
    params: &NoiseParams,
    z0: &DVector<f64>,
    y0: &DVector<f64>,
    t_end: f64,
) -> Result<(OrbitTable, Vec<DMatrix<f64>>, Vec<DVector<f64>>)> {
    let eps = params.eps;
    let q = split.q;
    let m = split.m();
    let p = split.n_minus();
    let (dt, refine, count) = flow::grid_layout(eps, t_end, &OrbitOptions::default());
    let times: Vec<f64> = (0..=count).map(|i| i as f64 * dt).collect();
    let len = times.len();

    let mut z = z0.clone();
    let mut y = y0.clone();
    let mut warm = DVector::zeros(p);
    let tol = 1e-12;
    let mut zdet = Vec::with_capacity(len);
    let mut ydet = Vec::with_capacity(len);
    let mut gen_t = Vec::with_capacity(len);
    let mut coup_t = Vec::with_capacity(len);

    let mut record = |z: &DVector<f64>, y: &DVector<f64>, warm: &mut DVector<f64>| -> Result<()> {
        let xm = split.centre_manifold_pin(z, y, eps, warm, tol)?;
        *warm = xm.clone();
        let x = split.to_x(&xm, z);
        let jw = &split.transform_inv * split.base.jac_f_x(&x, y, eps) * &split.transform;
        let jfy = &split.transform_inv * split.base.jac_f_y(&x, y, eps);
        let jgw = split.base.jac_g_x(&x, y, eps) * &split.transform;
        let jgy = split.base.jac_g_y(&x, y, eps);
        // joint (z, y) generator on the fast scale, eps ż = B z
        let mut gen = DMatrix::zeros(q + m, q + m);
        gen.view_mut((0, 0), (q, q)).copy_from(&jw.view((p, p), (q, q)));
        gen.view_mut((0, q), (q, m)).copy_from(&jfy.rows(p, q));
        gen.view_mut((q, 0), (m, q)).copy_from(&(jgw.columns(p, q) * eps));
        gen.view_mut((q, q), (m, m)).copy_from(&(jgy * eps));
        // coupling into the stable modes
        let mut coup = DMatrix::zeros(q + m, p.max(1));
        if p > 0 {
            coup.view_mut((0, 0), (q, p)).copy_from(&jw.view((p, 0), (q, p)));
            coup.view_mut((q, 0), (m, p)).copy_from(&(jgw.columns(0, p) * eps));
        }
        zdet.push(z.clone());
        ydet.push(y.clone());
        gen_t.push(gen);
        coup_t.push(coup);
        Ok(())
    };

    record(&z, &y, &mut warm)?;
    for _ in 0..count {
        // RK4 on the reduced drift (ε ż = f⁰, ẏ = g)
        let deriv = |z: &DVector<f64>, y: &DVector<f64>, warm: &mut DVector<f64>| -> Result<(DVector<f64>, DVector<f64>)> {
            let xm = split.centre_manifold_pin(z, y, eps, warm, tol)?;
            *warm = xm.clone();
            Ok((
                split.f_zero(&xm, z, y, eps) / eps,
                split.g_field(&xm, z, y, eps),
            ))
        };
        let (k1z, k1y) = deriv(&z, &y, &mut warm)?;
        let (k2z, k2y) = deriv(&(&z + &k1z * (0.5 * dt)), &(&y + &k1y * (0.5 * dt)), &mut warm)?;
        let (k3z, k3y) = deriv(&(&z + &k2z * (0.5 * dt)), &(&y + &k2y * (0.5 * dt)), &mut warm)?;
        let (k4z, k4y) = deriv(&(&z + &k3z * dt), &(&y + &k3y * dt), &mut warm)?;
        z += (k1z + k2z * 2.0 + k3z * 2.0 + k4z) * (dt / 6.0);
        y += (k1y + k2y * 2.0 + k3y * 2.0 + k4y) * (dt / 6.0);
        record(&z, &y, &mut warm)?;
    }

    let orbit = OrbitTable {
        eps,
        rho: params.rho,
        n: q + m,
        m,
        k: split.k(),
        times,
        dt,
        refine,
        y_det: ydet,
        x_bar: vec![DVector::zeros(q + m); len],
        a_t: gen_t,
        b_t: vec![DMatrix::zeros(m, m); len],
        c_t: vec![DMatrix::zeros(m, q + m); len],
        f0_t: vec![DMatrix::zeros(q + m, split.k()); len],
        g0_t: vec![DMatrix::zeros(m, split.k()); len],
        exit_index: None,
    };
    Ok((orbit, coup_t, zdet))
}

/// Couples full and reduced runs pathwise and measures the sup-deviation of
/// the bifurcating and slow coordinates up to t ∧ τ.
#[allow(clippy::too_many_arguments)]
pub fn compare_full_reduced(
    split: &SplitSystem,
    params: &NoiseParams,
    z0: &DVector<f64>,
    y0: &DVector<f64>,
    t_end: f64,
    n_paths: usize,
    seed: u64,
    tau: &TauSpec,
) -> Result<DeviationStats> {
    let eps = params.eps;
    let q = split.q;
    let m = split.m();
    let (dt, _, n_steps) = flow::grid_layout(eps, t_end, &OrbitOptions::default());

    // deterministic reduced orbit and χ_C diagnostics
    let (orbit, coupling, zdet) = reduced_orbit_with_coupling(split, params, z0, y0, t_end)?;
    let chi_c = flow::chi_functions_weighted(&orbit, ChiVariant::Bifurcation, &coupling);
    let chi_c1 = chi_c.chi1_at_end();
    let chi_c2 = chi_c.chi2_at_end();
    let diag_scale = params.sigma * chi_c2.sqrt() + params.sigma * params.sigma * chi_c1;

    // tube half-width around the deterministic reduced solution
    let eps_quarter = eps.powf(0.25);
    let ydet: Vec<f64> = orbit.y_det.iter().map(|y| y.norm()).collect();
    let tube = |ydet_norm: f64| -> f64 {
        tau.tube_constant * params.sigma / ydet_norm.sqrt().max(eps_quarter)
    };

    let mut state0 = DVector::zeros(q + m);
    state0.rows_mut(0, q).copy_from(z0);
    state0.rows_mut(q, m).copy_from(y0);
    let warm0 = DVector::zeros(split.n_minus());
    let xm0 = split.centre_manifold_pin(z0, y0, eps, &warm0, 1e-12)?;

    let results: Vec<(f64, bool)> = sde::run_ensemble(n_paths, seed, |_idx, stream| {
        // reduced pass: record (z⁰, y⁰) and the stopping index
        let mut reduced: Vec<DVector<f64>> = Vec::with_capacity(n_steps + 1);
        let mut tau_idx = n_steps;
        let mut stopped = false;
        sde::simulate_reduced_with(
            &ReducedModel::Bifurcation { split },
            params,
            &state0,
            n_steps,
            dt,
            &stream,
            |i, _t, s| {
                if !stopped {
                    let zr = s.rows(0, q);
                    let dev = (&zr - &zdet[i]).norm();
                    if dev >= tube(ydet[i]) {
                        tau_idx = i;
                        stopped = true;
                    }
                }
                reduced.push(s.clone());
            },
        )?;

        // full pass, coupled through the same stream
        let mut sup_dev = 0.0f64;
        simulate_split_full_with(
            split,
            params,
            &xm0,
            z0,
            y0,
            n_steps,
            dt,
            &stream,
            |i, _t, _xm, z, y| {
                if i <= tau_idx {
                    let r = &reduced[i];
                    let mut d2 = 0.0;
                    for j in 0..q {
                        d2 += (z[j] - r[j]).powi(2);
                    }
                    for j in 0..m {
                        d2 += (y[j] - r[q + j]).powi(2);
                    }
                    sup_dev = sup_dev.max(d2.sqrt());
                }
            },
        )?;
        Ok((sup_dev, stopped))
    })?;

    let devs: Vec<f64> = results.iter().map(|(d, _)| *d).collect();
    let stopped_fraction =
        results.iter().filter(|(_, s)| *s).count() as f64 / n_paths as f64;
    Ok(DeviationStats {
        t_end,
        n_paths,
        seed,
        q25: sde::quantile(&devs, 0.25),
        median: sde::quantile(&devs, 0.5),
        q75: sde::quantile(&devs, 0.75),
        q90: sde::quantile(&devs, 0.9),
        max: sde::quantile(&devs, 1.0),
        stopped_fraction,
        chi_c1,
        chi_c2,
        diag_scale,
    })
}

/// Options of the pitchfork scaling experiment.
#[derive(Debug, Clone)]
pub struct PitchforkOptions {
    /// Start time t₀ < 0 (the slow variable is time).
    pub t0: f64,
    /// Horizon after the bifurcation time for the escape statistic.
    pub horizon_after_zero: f64,
    /// Times (< 0) at which the spreading width is measured.
    pub probe_times: Vec<f64>,
    /// Escape threshold δ for |z|.
    pub delta: f64,
    /// σ-ladder for the escape-time regression.
    pub sigma_ladder: Vec<f64>,
}

impl Default for PitchforkOptions {
    fn default() -> Self {
        PitchforkOptions {
            t0: -1.0,
            horizon_after_zero: 0.3,
            probe_times: vec![-0.25, -0.125, -0.0625],
            delta: 0.1,
            sigma_ladder: vec![1e-2, 3e-3, 1e-3],
        }
    }
}

/// One spreading-width sample of the pitchfork experiment.
#[derive(Debug, Clone, Copy)]
pub struct WidthSample {
    pub t: f64,
    pub width_hat: f64,
    /// Predicted scale σ/(|t|^{1/2} ∨ ε^{1/4}), constants not calibrated.
    pub width_pred: f64,
}

/// Escape-time summary for one ladder intensity.
#[derive(Debug, Clone, Copy)]
pub struct EscapeSample {
    pub sigma: f64,
    pub escape_fraction: f64,
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
}

/// Report of the dynamic-pitchfork scaling experiment.
#[derive(Debug, Clone)]
pub struct ScalingReport {
    pub eps: f64,
    pub sigma: f64,
    pub n_paths: usize,
    pub seed: u64,
    pub delta: f64,
    pub widths: Vec<WidthSample>,
    pub escapes: Vec<EscapeSample>,
    /// Regression of median² against ε·ln(1/σ) over the ladder.
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

/// Simulates the reduced pitchfork ensemble and reports (i) the spreading
/// width before the bifurcation, (ii) escape times from |z| ≤ δ after it,
/// and (iii) the regression of median-escape² against ε·ln(1/σ).
pub fn pitchfork_experiment(
    params: &NoiseParams,
    n_paths: usize,
    seed: u64,
    opts: &PitchforkOptions,
) -> Result<ScalingReport> {
    let eps = params.eps;
    let sqrt_eps = eps.sqrt();
    for &s in opts.sigma_ladder.iter().chain([params.sigma].iter()) {
        if s > sqrt_eps {
            return Err(Error::RegimeViolation {
                context: format!("sigma = {s} exceeds √ε = {sqrt_eps}"),
            });
        }
    }
    if opts.t0 >= 0.0 {
        return Err(Error::Config("pitchfork start time t0 must be negative".into()));
    }
    let entry = catalog_entry("pitchfork")?;
    let radius = 1.25 * (opts.t0.abs() + opts.horizon_after_zero).max(1.0);
    let split = split_at_bifurcation(
        &entry.system,
        &DVector::zeros(1),
        &DVector::zeros(1),
        1,
        radius,
    )?;

    let t_total = opts.t0.abs() + opts.horizon_after_zero;
    let (dt, _, n_steps) = flow::grid_layout(eps, t_total, &OrbitOptions::default());
    let zero_idx = (opts.t0.abs() / dt).round() as usize;
    let probe_idx: Vec<usize> = opts
        .probe_times
        .iter()
        .map(|&t| (((t - opts.t0) / dt).round() as usize).min(n_steps))
        .collect();

    let mut state0 = DVector::zeros(2);
    state0[1] = opts.t0;

    // width pass at the base intensity (skipped when no probes requested, so
    // escape-only runs stay cheap)
    let mut widths = Vec::new();
    if !opts.probe_times.is_empty() {
        let probe_ref = &probe_idx;
        let width_steps = *probe_idx.iter().max().unwrap();
        let samples: Vec<Vec<f64>> = sde::run_ensemble(n_paths, seed, |_idx, stream| {
            let mut vals = vec![0.0; probe_ref.len()];
            sde::simulate_reduced_with(
                &ReducedModel::Bifurcation { split: &split },
                params,
                &state0,
                width_steps,
                dt,
                &stream,
                |i, _t, s| {
                    for (j, &pi) in probe_ref.iter().enumerate() {
                        if pi == i {
                            vals[j] = s[0];
                        }
                    }
                },
            )?;
            Ok(vals)
        })?;
        let eps_quarter = eps.powf(0.25);
        for (j, &t) in opts.probe_times.iter().enumerate() {
            let zs: Vec<f64> = samples.iter().map(|v| v[j]).collect();
            let (_, std) = sde::mean_std(&zs);
            widths.push(WidthSample {
                t,
                width_hat: std,
                width_pred: params.sigma / t.abs().sqrt().max(eps_quarter),
            });
        }
    }

    // escape pass over the σ-ladder
    let mut escapes = Vec::new();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for &sigma_j in &opts.sigma_ladder {
        let params_j = NoiseParams::new(eps, sigma_j, params.rho)?;
        let delta = opts.delta;
        let esc: Vec<Option<f64>> = sde::run_ensemble(n_paths, seed, |_idx, stream| {
            let mut hit: Option<f64> = None;
            sde::simulate_reduced_with(
                &ReducedModel::Bifurcation { split: &split },
                &params_j,
                &state0,
                n_steps,
                dt,
                &stream,
                |i, _t, s| {
                    if hit.is_none() && i > zero_idx && s[0].abs() >= delta {
                        hit = Some((i - zero_idx) as f64 * dt);
                    }
                },
            )?;
            Ok(hit)
        })?;
        let escaped: Vec<f64> = esc.iter().flatten().copied().collect();
        let fraction = escaped.len() as f64 / n_paths as f64;
        let sample = if fraction >= 0.5 {
            EscapeSample {
                sigma: sigma_j,
                escape_fraction: fraction,
                median: sde::quantile(&escaped, 0.5),
                q25: sde::quantile(&escaped, 0.25),
                q75: sde::quantile(&escaped, 0.75),
            }
        } else {
            EscapeSample {
                sigma: sigma_j,
                escape_fraction: fraction,
                median: f64::NAN,
                q25: f64::NAN,
                q75: f64::NAN,
            }
        };
        if sample.median.is_finite() {
            xs.push(eps * (1.0 / sigma_j).ln());
            ys.push(sample.median * sample.median);
        }
        escapes.push(sample);
    }

    let (slope, intercept, r2) = if xs.len() >= 2 {
        linear_fit(&xs, &ys)
    } else {
        (f64::NAN, f64::NAN, f64::NAN)
    };

    Ok(ScalingReport {
        eps,
        sigma: params.sigma,
        n_paths,
        seed,
        delta: opts.delta,
        widths,
        escapes,
        slope,
        intercept,
        r2,
    })
}

/// Plain least squares y = a x + b; returns (a, b, r²).
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let xbar = xs.iter().sum::<f64>() / n;
    let ybar = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - xbar).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - xbar) * (y - ybar)).sum();
    let slope = sxy / sxx;
    let intercept = ybar - slope * xbar;
    let ss_res: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - slope * x - intercept).powi(2))
        .sum();
    let ss_tot: f64 = ys.iter().map(|y| (y - ybar).powi(2)).sum();
    let r2 = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    (slope, intercept, r2)
}
