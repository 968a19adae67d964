//! Deterministic machinery along reduced orbits.
//!
//! An [`OrbitTable`] samples the reduced orbit ydet_t together with the
//! linearization data needed by every downstream consumer: the fast block
//! A(ydet_t,ε), the slow blocks B, C, and the manifold-restricted diffusion
//! F₀, G₀. One shared uniform grid per experiment keeps principal solutions,
//! covariance tracks and Monte Carlo paths aligned; fast objects live on the
//! fine grid (step ≤ ε/20), slow diagnostics on the base grid (step ≤ 1/200)
//! obtained by striding.
//!
//! On top of the table this module computes
//!
//! * principal solutions U(t,s) of `ε ξ' = A ξ` and V(t,s) of `η' = B η`,
//! * the coupling block `S(t,s) = ∫ V(t,u) C(u) U(u,s) du`,
//! * the χ-functions (running sup-integrals of ‖V‖, ‖V‖²) measuring слow
//!   orbit divergence,
//! * the coupled covariance evolution (X, Z, Y)(t) of the linearized system.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::manifold;
use crate::model::{NoiseParams, SlowFastSystem};

/// Default base (slow) step.
pub const DEFAULT_BASE_DT: f64 = 1.0 / 200.0;

/// Options for orbit construction.
#[derive(Debug, Clone)]
pub struct OrbitOptions {
    /// Slow-grid step target (≤ 1/200 by default).
    pub base_dt: f64,
    /// Optional cap on the fine step; defaults to ε/20.
    pub fast_dt_cap: Option<f64>,
    pub newton_tol: f64,
}

impl Default for OrbitOptions {
    fn default() -> Self {
        OrbitOptions {
            base_dt: DEFAULT_BASE_DT,
            fast_dt_cap: None,
            newton_tol: 1e-12,
        }
    }
}

/// Sampled reduced orbit with linearization and diffusion data.
#[derive(Debug, Clone)]
pub struct OrbitTable {
    pub eps: f64,
    pub rho: f64,
    pub n: usize,
    pub m: usize,
    pub k: usize,
    /// Fine grid times, uniform step `dt`, `times[0] = 0`.
    pub times: Vec<f64>,
    pub dt: f64,
    /// Fine steps per base step.
    pub refine: usize,
    pub y_det: Vec<DVector<f64>>,
    pub x_bar: Vec<DVector<f64>>,
    pub a_t: Vec<DMatrix<f64>>,
    pub b_t: Vec<DMatrix<f64>>,
    pub c_t: Vec<DMatrix<f64>>,
    pub f0_t: Vec<DMatrix<f64>>,
    pub g0_t: Vec<DMatrix<f64>>,
    /// First fine index with ydet outside 𝒟₀, if any.
    pub exit_index: Option<usize>,
}

impl OrbitTable {
    /// Number of fine nodes.
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn t_end(&self) -> f64 {
        *self.times.last().unwrap()
    }

    /// Snaps a time to its fine-grid index.
    pub fn index_of(&self, t: f64) -> Result<usize> {
        let pos = t / self.dt;
        let idx = pos.round() as isize;
        if idx < 0 || idx as usize >= self.times.len() || (pos - idx as f64).abs() > 1e-6 {
            return Err(Error::GridMismatch {
                context: format!("t = {t} not on the grid (dt = {})", self.dt),
            });
        }
        Ok(idx as usize)
    }

    /// Indices of the base (slow) grid.
    pub fn base_indices(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.times.len()).step_by(self.refine)
    }

    /// Constant-coefficient table on [0, t_end]; handy for closed-form checks.
    #[allow(clippy::too_many_arguments)]
    pub fn with_constant_coefficients(
        eps: f64,
        rho: f64,
        t_end: f64,
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
        f0: DMatrix<f64>,
        g0: DMatrix<f64>,
    ) -> Self {
        let n = a.nrows();
        let m = b.nrows();
        let k = f0.ncols();
        let (dt, refine, count) = grid_layout(eps, t_end, &OrbitOptions::default());
        let times: Vec<f64> = (0..=count).map(|i| i as f64 * dt).collect();
        let len = times.len();
        OrbitTable {
            eps,
            rho,
            n,
            m,
            k,
            times,
            dt,
            refine,
            y_det: vec![DVector::zeros(m); len],
            x_bar: vec![DVector::zeros(n); len],
            a_t: vec![a; len],
            b_t: vec![b; len],
            c_t: vec![c; len],
            f0_t: vec![f0; len],
            g0_t: vec![g0; len],
            exit_index: None,
        }
    }
}

/// Fine-grid layout: step, refinement factor and step count for [0, t_end].
/// Monte Carlo runs use the same layout so paths stay grid-aligned with the
/// deterministic diagnostics.
pub fn grid_layout(eps: f64, t_end: f64, opts: &OrbitOptions) -> (f64, usize, usize) {
    let base_dt_target = opts.base_dt.min(t_end);
    let n_base = (t_end / base_dt_target).ceil().max(1.0) as usize;
    let base_dt = t_end / n_base as f64;
    let fast_cap = opts.fast_dt_cap.unwrap_or(eps / 20.0).min(eps / 20.0);
    let refine = (base_dt / fast_cap).ceil().max(1.0) as usize;
    let dt = base_dt / refine as f64;
    (dt, refine, n_base * refine)
}

/// Integrates the reduced equation `y' = g(x̄(y,ε), y, ε)` with adaptive
/// Dormand-Prince 5(4) stepping and dense output onto the shared grid, then
/// fills the linearization and diffusion samples along the orbit.
pub fn integrate_reduced(
    sys: &SlowFastSystem,
    params: &NoiseParams,
    y0: &DVector<f64>,
    x_guess: &DVector<f64>,
    t_end: f64,
    opts: &OrbitOptions,
) -> Result<OrbitTable> {
    assert!(t_end > 0.0, "t_end must be positive");
    if !sys.domain.contains(y0) {
        return Err(Error::LeftDomainImmediately);
    }
    let eps = params.eps;
    let (dt, refine, count) = grid_layout(eps, t_end, opts);
    let times: Vec<f64> = (0..=count).map(|i| i as f64 * dt).collect();

    // Reduced drift with the fast variable pinned to the adiabatic manifold;
    // warm-start each Newton solve from the previous root.
    let mut warm = x_guess.clone();
    let mut drift = |_t: f64, y: &DVector<f64>| -> Result<DVector<f64>> {
        let xb = manifold::adiabatic_point(sys, y, eps, &warm, opts.newton_tol)?;
        warm = xb.clone();
        Ok(sys.g(&xb, y, eps))
    };
    let y_det = dopri5_dense(&mut drift, y0, &times)?;

    // Exit scan before the frame fill: frames past the exit are not needed.
    let exit_index = y_det.iter().position(|y| !sys.domain.contains(y));
    if exit_index == Some(0) || exit_index == Some(1) {
        return Err(Error::LeftDomainImmediately);
    }
    let filled = exit_index.unwrap_or(y_det.len() - 1);

    // Frames on the base grid, linear interpolation in between.
    let rho = params.rho;
    let sqrt_eps_rho = rho * eps.sqrt();
    let mut frames: Vec<(usize, Frame)> = Vec::new();
    let mut warm_frame = x_guess.clone();
    let mut base_nodes: Vec<usize> = (0..=filled).step_by(refine).collect();
    if *base_nodes.last().unwrap() != filled {
        base_nodes.push(filled);
    }
    for &i in &base_nodes {
        let y = &y_det[i];
        let x_bar = manifold::adiabatic_point(sys, y, eps, &warm_frame, opts.newton_tol)?;
        warm_frame = x_bar.clone();
        let slope = manifold::adiabatic_slope(sys, y, eps, &x_bar, opts.newton_tol)?;
        let c = sys.jac_g_x(&x_bar, y, eps);
        let b = &c * &slope + sys.jac_g_y(&x_bar, y, eps);
        let a = sys.jac_f_x(&x_bar, y, eps) - &slope * &c * eps;
        let g0 = sys.cap_g(&x_bar, y, eps);
        let f0 = sys.cap_f(&x_bar, y, eps) - &slope * &g0 * sqrt_eps_rho;
        frames.push((
            i,
            Frame {
                x_bar,
                a,
                b,
                c,
                f0,
                g0,
            },
        ));
    }

    let len = times.len();
    let mut table = OrbitTable {
        eps,
        rho,
        n: sys.n,
        m: sys.m,
        k: sys.k,
        times,
        dt,
        refine,
        y_det,
        x_bar: vec![DVector::zeros(sys.n); len],
        a_t: vec![DMatrix::zeros(sys.n, sys.n); len],
        b_t: vec![DMatrix::zeros(sys.m, sys.m); len],
        c_t: vec![DMatrix::zeros(sys.m, sys.n); len],
        f0_t: vec![DMatrix::zeros(sys.n, sys.k); len],
        g0_t: vec![DMatrix::zeros(sys.m, sys.k); len],
        exit_index,
    };

    for w in frames.windows(2) {
        let (i0, ref fr0) = w[0];
        let (i1, ref fr1) = w[1];
        for i in i0..=i1 {
            let th = if i1 == i0 {
                0.0
            } else {
                (i - i0) as f64 / (i1 - i0) as f64
            };
            table.x_bar[i] = fr0.x_bar.lerp(&fr1.x_bar, th);
            table.a_t[i] = lerp_mat(&fr0.a, &fr1.a, th);
            table.b_t[i] = lerp_mat(&fr0.b, &fr1.b, th);
            table.c_t[i] = lerp_mat(&fr0.c, &fr1.c, th);
            table.f0_t[i] = lerp_mat(&fr0.f0, &fr1.f0, th);
            table.g0_t[i] = lerp_mat(&fr0.g0, &fr1.g0, th);
        }
    }
    if frames.len() == 1 {
        let (_, fr) = &frames[0];
        table.x_bar[0] = fr.x_bar.clone();
        table.a_t[0] = fr.a.clone();
        table.b_t[0] = fr.b.clone();
        table.c_t[0] = fr.c.clone();
        table.f0_t[0] = fr.f0.clone();
        table.g0_t[0] = fr.g0.clone();
    }
    // Past the exit the samples stay frozen at the last filled frame.
    for i in (filled + 1)..len {
        table.x_bar[i] = table.x_bar[filled].clone();
        table.a_t[i] = table.a_t[filled].clone();
        table.b_t[i] = table.b_t[filled].clone();
        table.c_t[i] = table.c_t[filled].clone();
        table.f0_t[i] = table.f0_t[filled].clone();
        table.g0_t[i] = table.g0_t[filled].clone();
    }
    Ok(table)
}

struct Frame {
    x_bar: DVector<f64>,
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
    f0: DMatrix<f64>,
    g0: DMatrix<f64>,
}

fn lerp_mat(a: &DMatrix<f64>, b: &DMatrix<f64>, th: f64) -> DMatrix<f64> {
    a * (1.0 - th) + b * th
}

// ---------------------------------------------------------------------------
// Dormand-Prince 5(4) with dense output
// ---------------------------------------------------------------------------

const DP_C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const DP_A: [[f64; 6]; 7] = [
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const DP_E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];
const DP_D: [f64; 7] = [
    -12715105075.0 / 11282082432.0,
    0.0,
    87487479700.0 / 32700410799.0,
    -10690763975.0 / 1880347072.0,
    701980252875.0 / 199316789632.0,
    -1453857185.0 / 822651844.0,
    69997945.0 / 29380423.0,
];

/// Integrates y' = f(t, y) adaptively and returns dense output at `out_times`
/// (strictly increasing, starting at the initial time).
fn dopri5_dense(
    f: &mut dyn FnMut(f64, &DVector<f64>) -> Result<DVector<f64>>,
    y0: &DVector<f64>,
    out_times: &[f64],
) -> Result<Vec<DVector<f64>>> {
    let rtol = 1e-9;
    let atol = 1e-11;
    let t_start = out_times[0];
    let t_end = *out_times.last().unwrap();
    let mut outputs = Vec::with_capacity(out_times.len());
    outputs.push(y0.clone());
    let mut next_out = 1;

    let mut t = t_start;
    let mut y = y0.clone();
    let mut k1 = f(t, &y)?;
    let mut h = ((t_end - t_start) / 100.0).min(0.1).max(1e-6);
    let h_min = 1e-12 * (t_end - t_start).max(1.0);
    let mut ks: [DVector<f64>; 7] = core::array::from_fn(|_| DVector::zeros(y0.len()));

    while t < t_end && next_out < out_times.len() {
        if h < h_min {
            return Err(Error::StiffnessFailure { t, step: h });
        }
        if t + h > t_end {
            h = t_end - t;
        }
        ks[0] = k1.clone();
        for stage in 1..7 {
            let mut arg = y.clone();
            for (j, kj) in ks.iter().take(stage).enumerate() {
                let a = DP_A[stage][j];
                if a != 0.0 {
                    arg += kj * (a * h);
                }
            }
            ks[stage] = f(t + DP_C[stage] * h, &arg)?;
        }
        // 5th-order solution is stage 7's argument (FSAL).
        let mut y_new = y.clone();
        for (j, kj) in ks.iter().take(6).enumerate() {
            let a = DP_A[6][j];
            if a != 0.0 {
                y_new += kj * (a * h);
            }
        }
        // error estimate
        let mut err_vec = DVector::zeros(y.len());
        for (j, kj) in ks.iter().enumerate() {
            if DP_E[j] != 0.0 {
                err_vec += kj * (DP_E[j] * h);
            }
        }
        let mut err = 0.0f64;
        for i in 0..y.len() {
            let sc = atol + rtol * y[i].abs().max(y_new[i].abs());
            err += (err_vec[i] / sc).powi(2);
        }
        err = (err / y.len() as f64).sqrt();

        if err <= 1.0 {
            // dense output over (t, t + h]
            let ydiff = &y_new - &y;
            let cont3 = &ks[0] * h - &ydiff;
            let cont4 = &ydiff - &ks[6] * h - &cont3;
            let mut cont5 = DVector::zeros(y.len());
            for (j, kj) in ks.iter().enumerate() {
                if DP_D[j] != 0.0 {
                    cont5 += kj * DP_D[j];
                }
            }
            cont5 *= h;
            while next_out < out_times.len() && out_times[next_out] <= t + h + 1e-14 {
                let theta = ((out_times[next_out] - t) / h).clamp(0.0, 1.0);
                let th1 = 1.0 - theta;
                let inner = &cont3 + (&cont4 + &cont5 * th1) * theta;
                let val = &y + (&ydiff + inner * th1) * theta;
                outputs.push(val);
                next_out += 1;
            }
            t += h;
            y = y_new;
            k1 = ks[6].clone(); // FSAL
        }
        let factor = if err == 0.0 {
            5.0
        } else {
            (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
        };
        h *= factor;
    }
    while next_out < out_times.len() {
        outputs.push(y.clone());
        next_out += 1;
    }
    Ok(outputs)
}

// ---------------------------------------------------------------------------
// Principal solutions
// ---------------------------------------------------------------------------

/// Which homogeneous system a principal solution refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Propagator {
    /// U(t,s): ε ξ' = A(ydet_t, ε) ξ.
    FastU,
    /// V(t,s): η' = B(ydet_t, ε) η.
    SlowV,
}

impl OrbitTable {
    fn generator(&self, kind: Propagator, idx: usize) -> &DMatrix<f64> {
        match kind {
            Propagator::FastU => &self.a_t[idx],
            Propagator::SlowV => &self.b_t[idx],
        }
    }

    fn scale(&self, kind: Propagator) -> f64 {
        match kind {
            Propagator::FastU => 1.0 / self.eps,
            Propagator::SlowV => 1.0,
        }
    }

    fn dim(&self, kind: Propagator) -> usize {
        match kind {
            Propagator::FastU => self.n,
            Propagator::SlowV => self.m,
        }
    }
}

/// One RK4 step of M' = scale · A(t) · M over [idx, idx+1].
fn propagate_step(
    orbit: &OrbitTable,
    kind: Propagator,
    idx: usize,
    m: &DMatrix<f64>,
) -> DMatrix<f64> {
    let h = orbit.dt;
    let scale = orbit.scale(kind);
    let a0 = orbit.generator(kind, idx);
    let a1 = orbit.generator(kind, idx + 1);
    let a_mid = (a0 + a1) * 0.5;
    let k1 = a0 * m * scale;
    let k2 = &a_mid * (m + &k1 * (0.5 * h)) * scale;
    let k3 = &a_mid * (m + &k2 * (0.5 * h)) * scale;
    let k4 = a1 * (m + &k3 * h) * scale;
    m + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
}

/// Backward RK4 step of W' (in its second argument): W(u) = Φ(t,u) satisfies
/// ∂_u W = −scale · W · A(u), stepped from idx+1 down to idx.
fn propagate_step_adjoint(
    orbit: &OrbitTable,
    kind: Propagator,
    idx: usize,
    w: &DMatrix<f64>,
) -> DMatrix<f64> {
    let h = orbit.dt;
    let scale = orbit.scale(kind);
    let a1 = orbit.generator(kind, idx + 1);
    let a0 = orbit.generator(kind, idx);
    let a_mid = (a0 + a1) * 0.5;
    // derivative going backward: d/du W = -scale * W * A(u), step -h
    let k1 = w * a1 * (-scale);
    let k2 = (w + &k1 * (-0.5 * h)) * &a_mid * (-scale);
    let k3 = (w + &k2 * (-0.5 * h)) * &a_mid * (-scale);
    let k4 = (w + &k3 * (-h)) * a0 * (-scale);
    w + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (-h / 6.0)
}

/// Principal solution U(t,s) or V(t,s) by high-order stepping of the matrix
/// ODE along the orbit grid. `s = t` returns the identity.
pub fn principal_solution(
    orbit: &OrbitTable,
    kind: Propagator,
    s: f64,
    t: f64,
) -> Result<DMatrix<f64>> {
    let i0 = orbit.index_of(s)?;
    let i1 = orbit.index_of(t)?;
    if i0 > i1 {
        return Err(Error::GridMismatch {
            context: format!("s = {s} must not exceed t = {t}"),
        });
    }
    let mut m = DMatrix::identity(orbit.dim(kind), orbit.dim(kind));
    for idx in i0..i1 {
        m = propagate_step(orbit, kind, idx, &m);
    }
    Ok(m)
}

/// Full forward track Φ(u,s) for all grid nodes u in [s, t].
pub fn principal_track(
    orbit: &OrbitTable,
    kind: Propagator,
    s: f64,
    t: f64,
) -> Result<Vec<DMatrix<f64>>> {
    let i0 = orbit.index_of(s)?;
    let i1 = orbit.index_of(t)?;
    if i0 > i1 {
        return Err(Error::GridMismatch {
            context: format!("s = {s} must not exceed t = {t}"),
        });
    }
    let mut track = Vec::with_capacity(i1 - i0 + 1);
    let mut m = DMatrix::identity(orbit.dim(kind), orbit.dim(kind));
    track.push(m.clone());
    for idx in i0..i1 {
        m = propagate_step(orbit, kind, idx, &m);
        track.push(m.clone());
    }
    Ok(track)
}

/// Backward track Φ(t,u) for all grid nodes u in [s, t] (index 0 ↔ u = s).
pub fn adjoint_track(
    orbit: &OrbitTable,
    kind: Propagator,
    s: f64,
    t: f64,
) -> Result<Vec<DMatrix<f64>>> {
    let i0 = orbit.index_of(s)?;
    let i1 = orbit.index_of(t)?;
    if i0 > i1 {
        return Err(Error::GridMismatch {
            context: format!("s = {s} must not exceed t = {t}"),
        });
    }
    let dim = orbit.dim(kind);
    let mut track = vec![DMatrix::identity(dim, dim); i1 - i0 + 1];
    for idx in (i0..i1).rev() {
        let next = track[idx + 1 - i0].clone();
        track[idx - i0] = propagate_step_adjoint(orbit, kind, idx, &next);
    }
    Ok(track)
}

/// Composite Simpson weights on a uniform grid (3/8 rule on an odd tail).
fn simpson_weights(count: usize, h: f64) -> Vec<f64> {
    let mut w = vec![0.0; count];
    if count < 2 {
        return w;
    }
    let intervals = count - 1;
    if intervals == 1 {
        return vec![0.5 * h, 0.5 * h];
    }
    let simpson_end = if intervals % 2 == 0 {
        intervals
    } else {
        intervals - 3
    };
    if simpson_end >= 2 {
        w[0] += h / 3.0;
        w[simpson_end] += h / 3.0;
        for (i, wi) in w.iter_mut().enumerate().take(simpson_end).skip(1) {
            *wi += if i % 2 == 1 { 4.0 * h / 3.0 } else { 2.0 * h / 3.0 };
        }
    }
    if simpson_end < intervals {
        // remaining 3 intervals: Simpson 3/8
        let base = simpson_end;
        if intervals - simpson_end == 3 {
            w[base] += 3.0 * h / 8.0;
            w[base + 1] += 9.0 * h / 8.0;
            w[base + 2] += 9.0 * h / 8.0;
            w[base + 3] += 3.0 * h / 8.0;
        } else {
            // 1 or 2 intervals left over (tiny grids): trapezoid
            for i in base..intervals {
                w[i] += 0.5 * h;
                w[i + 1] += 0.5 * h;
            }
        }
    }
    w
}

/// Coupling block `S(t,s) = ∫_s^t V(t,u) C(ydet_u, ε) U(u,s) du` by composite
/// Simpson over the grid, with U and V from the principal solutions.
pub fn coupling_block(orbit: &OrbitTable, s: f64, t: f64) -> Result<DMatrix<f64>> {
    let i0 = orbit.index_of(s)?;
    let i1 = orbit.index_of(t)?;
    if i0 > i1 {
        return Err(Error::GridMismatch {
            context: format!("s = {s} must not exceed t = {t}"),
        });
    }
    if i0 == i1 {
        return Ok(DMatrix::zeros(orbit.m, orbit.n));
    }
    let u_track = principal_track(orbit, Propagator::FastU, s, t)?;
    let v_track = adjoint_track(orbit, Propagator::SlowV, s, t)?;
    let weights = simpson_weights(i1 - i0 + 1, orbit.dt);
    let mut sum = DMatrix::zeros(orbit.m, orbit.n);
    for (off, w) in weights.iter().enumerate() {
        if *w != 0.0 {
            sum += &v_track[off] * &orbit.c_t[i0 + off] * &u_track[off] * *w;
        }
    }
    Ok(sum)
}

// ---------------------------------------------------------------------------
// χ-functions
// ---------------------------------------------------------------------------

/// Which propagator the χ-functions are built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChiVariant {
    /// Slow-variable variant: V(s,v) from `η' = B η`.
    Slow,
    /// Bifurcation variant: U⁰(s,v) from `ε z' = A z`, integrals carry 1/ε.
    Bifurcation,
}

/// Running sup-integrals of the propagator norm,
/// `χ⁽ⁱ⁾(t) = sup_{s ≤ t} [pref] ∫₀ˢ (sup_{u ≤ v ≤ s} ‖Φ(s,v)‖ⁱ) du`.
///
/// Both are nondecreasing in t. They stay O(t) for contracting slow flows
/// and grow exponentially once the slow linearization expands.
#[derive(Debug, Clone)]
pub struct ChiFunctions {
    /// Base-grid times.
    pub times: Vec<f64>,
    pub chi1: Vec<f64>,
    pub chi2: Vec<f64>,
    pub variant: ChiVariant,
    /// Grid modulus bound: max over adjacent base samples of the relative
    /// change in ‖Φ‖, an upper estimate of the sup-discretization error.
    pub grid_modulus: f64,
}

impl ChiFunctions {
    pub fn chi1_at_end(&self) -> f64 {
        *self.chi1.last().unwrap()
    }

    pub fn chi2_at_end(&self) -> f64 {
        *self.chi2.last().unwrap()
    }
}

/// χ-functions over the orbit's base grid.
pub fn chi_functions(orbit: &OrbitTable, variant: ChiVariant) -> ChiFunctions {
    let (kind, prefactor) = match variant {
        ChiVariant::Slow => (Propagator::SlowV, 1.0),
        ChiVariant::Bifurcation => (Propagator::FastU, 1.0 / orbit.eps),
    };
    chi_core(orbit, kind, prefactor, variant, None)
}

/// χ_C variant: the propagator norm is weighted on the right by the supplied
/// coupling samples (one per fine node), ‖Φ(s,v) C(v)‖. Used for the
/// reduced-system fidelity diagnostics.
pub fn chi_functions_weighted(
    orbit: &OrbitTable,
    variant: ChiVariant,
    coupling: &[DMatrix<f64>],
) -> ChiFunctions {
    assert_eq!(coupling.len(), orbit.len(), "one coupling sample per node");
    let (kind, prefactor) = match variant {
        ChiVariant::Slow => (Propagator::SlowV, 1.0),
        ChiVariant::Bifurcation => (Propagator::FastU, 1.0 / orbit.eps),
    };
    chi_core(orbit, kind, prefactor, variant, Some(coupling))
}

fn chi_core(
    orbit: &OrbitTable,
    kind: Propagator,
    prefactor: f64,
    variant: ChiVariant,
    weight_by_c: Option<&[DMatrix<f64>]>,
) -> ChiFunctions {
    let limit = orbit.exit_index.unwrap_or(orbit.len() - 1);
    let base: Vec<usize> = orbit.base_indices().filter(|&i| i <= limit).collect();
    let base_dt = orbit.dt * orbit.refine as f64;
    let mut chi1 = Vec::with_capacity(base.len());
    let mut chi2 = Vec::with_capacity(base.len());
    let mut times = Vec::with_capacity(base.len());
    let mut sup1 = 0.0f64;
    let mut sup2 = 0.0f64;
    let mut modulus = 0.0f64;

    for (bs, &s_idx) in base.iter().enumerate() {
        times.push(orbit.times[s_idx]);
        if bs == 0 {
            chi1.push(0.0);
            chi2.push(0.0);
            continue;
        }
        // Backward track Φ(s, v) sampled at base nodes v ≤ s.
        let track = adjoint_track(orbit, kind, 0.0, orbit.times[s_idx]).expect("grid-aligned");
        let norms: Vec<f64> = base[..=bs]
            .iter()
            .map(|&v_idx| match weight_by_c {
                Some(c) => linalg::op_norm(&(&track[v_idx] * &c[v_idx])),
                None => linalg::op_norm(&track[v_idx]),
            })
            .collect();
        for w in norms.windows(2) {
            let denom = w[0].max(w[1]).max(1e-300);
            modulus = modulus.max((w[0] - w[1]).abs() / denom);
        }
        // suffix maxima over v, then trapezoid over u
        let mut suffix = norms.clone();
        for i in (0..suffix.len() - 1).rev() {
            suffix[i] = suffix[i].max(suffix[i + 1]);
        }
        let mut int1 = 0.0;
        let mut int2 = 0.0;
        for i in 0..suffix.len() - 1 {
            int1 += 0.5 * (suffix[i] + suffix[i + 1]) * base_dt;
            int2 += 0.5 * (suffix[i].powi(2) + suffix[i + 1].powi(2)) * base_dt;
        }
        sup1 = sup1.max(prefactor * int1);
        sup2 = sup2.max(prefactor * int2);
        chi1.push(sup1);
        chi2.push(sup2);
    }
    ChiFunctions {
        times,
        chi1,
        chi2,
        variant,
        grid_modulus: modulus,
    }
}

// ---------------------------------------------------------------------------
// Covariance evolution
// ---------------------------------------------------------------------------

/// Blockwise covariance track of the coupled linearized system.
#[derive(Debug, Clone)]
pub struct CovarianceTrack {
    pub times: Vec<f64>,
    pub x_t: Vec<DMatrix<f64>>,
    pub z_t: Vec<DMatrix<f64>>,
    pub y_t: Vec<DMatrix<f64>>,
    /// Most negative eigenvalue seen across X and Y samples.
    pub min_eig_drift: f64,
}

/// Integrates the four-block slow-fast covariance system
///
/// ```text
/// ε X' = A X + X Aᵀ + F₀F₀ᵀ
/// ε Z' = A Z + ε Z Bᵀ + ε X Cᵀ + √ε ρ F₀G₀ᵀ
///   Y' = B Y + Y Bᵀ + C Z + Zᵀ Cᵀ + ρ² G₀G₀ᵀ
/// ```
///
/// along the orbit. Symmetry of X and Y is restored by averaging after each
/// step; positive semi-definiteness is asserted, not projected, so genuine
/// loss shows up as an error.
pub fn covariance_evolution(
    orbit: &OrbitTable,
    x0: &DMatrix<f64>,
    z0: &DMatrix<f64>,
    y0: &DMatrix<f64>,
) -> Result<CovarianceTrack> {
    assert!(
        orbit.dt <= orbit.eps / 20.0 + 1e-15,
        "covariance evolution needs the fine grid (step ≤ ε/20)"
    );
    let eps = orbit.eps;
    let rho = orbit.rho;
    let len = orbit.len();
    let mut x = linalg::symmetrize(x0);
    let mut z = z0.clone();
    let mut y = linalg::symmetrize(y0);
    let mut x_t = Vec::with_capacity(len);
    let mut z_t = Vec::with_capacity(len);
    let mut y_t = Vec::with_capacity(len);
    let mut min_eig_drift = 0.0f64;

    let deriv = |x: &DMatrix<f64>,
                 z: &DMatrix<f64>,
                 y: &DMatrix<f64>,
                 a: &DMatrix<f64>,
                 b: &DMatrix<f64>,
                 c: &DMatrix<f64>,
                 f0: &DMatrix<f64>,
                 g0: &DMatrix<f64>| {
        let dx = (a * x + x * a.transpose() + f0 * f0.transpose()) / eps;
        let dz = a * z / eps + z * b.transpose() + x * c.transpose()
            + f0 * g0.transpose() * (rho / eps.sqrt());
        let dy = b * y
            + y * b.transpose()
            + c * z
            + (c * z).transpose()
            + g0 * g0.transpose() * (rho * rho);
        (dx, dz, dy)
    };

    for idx in 0..len {
        // record, then check PSD before stepping on
        let (min_x, _) = linalg::sym_eig_range(&x);
        let (min_y, _) = linalg::sym_eig_range(&y);
        let worst = min_x.min(min_y);
        min_eig_drift = min_eig_drift.min(worst);
        if worst < -1e-8 {
            return Err(Error::PsdLoss {
                t: orbit.times[idx],
                min_eig: worst,
            });
        }
        x_t.push(x.clone());
        z_t.push(z.clone());
        y_t.push(y.clone());
        if idx + 1 == len {
            break;
        }
        let h = orbit.dt;
        let a0 = &orbit.a_t[idx];
        let a1 = &orbit.a_t[idx + 1];
        let am = (a0 + a1) * 0.5;
        let b0 = &orbit.b_t[idx];
        let b1 = &orbit.b_t[idx + 1];
        let bm = (b0 + b1) * 0.5;
        let c0 = &orbit.c_t[idx];
        let c1 = &orbit.c_t[idx + 1];
        let cm = (c0 + c1) * 0.5;
        let f0 = &orbit.f0_t[idx];
        let f1 = &orbit.f0_t[idx + 1];
        let fm = (f0 + f1) * 0.5;
        let g0 = &orbit.g0_t[idx];
        let g1 = &orbit.g0_t[idx + 1];
        let gm = (g0 + g1) * 0.5;

        let (kx1, kz1, ky1) = deriv(&x, &z, &y, a0, b0, c0, f0, g0);
        let (kx2, kz2, ky2) = deriv(
            &(&x + &kx1 * (0.5 * h)),
            &(&z + &kz1 * (0.5 * h)),
            &(&y + &ky1 * (0.5 * h)),
            &am,
            &bm,
            &cm,
            &fm,
            &gm,
        );
        let (kx3, kz3, ky3) = deriv(
            &(&x + &kx2 * (0.5 * h)),
            &(&z + &kz2 * (0.5 * h)),
            &(&y + &ky2 * (0.5 * h)),
            &am,
            &bm,
            &cm,
            &fm,
            &gm,
        );
        let (kx4, kz4, ky4) = deriv(
            &(&x + &kx3 * h),
            &(&z + &kz3 * h),
            &(&y + &ky3 * h),
            a1,
            b1,
            c1,
            f1,
            g1,
        );
        x = linalg::symmetrize(&(&x + (kx1 + kx2 * 2.0 + kx3 * 2.0 + kx4) * (h / 6.0)));
        z += (kz1 + kz2 * 2.0 + kz3 * 2.0 + kz4) * (h / 6.0);
        y = linalg::symmetrize(&(&y + (ky1 + ky2 * 2.0 + ky3 * 2.0 + ky4) * (h / 6.0)));
        if !x.iter().all(|v| v.is_finite()) || !y.iter().all(|v| v.is_finite()) {
            return Err(Error::StiffnessFailure {
                t: orbit.times[idx + 1],
                step: h,
            });
        }
    }
    Ok(CovarianceTrack {
        times: orbit.times.clone(),
        x_t,
        z_t,
        y_t,
        min_eig_drift,
    })
}
