//! Stochastic integrators with reproducible noise streams.
//!
//! All variants are driven by the same k-dimensional Brownian motion: the
//! fast and slow updates of one step consume one shared increment ΔW, and
//! full/linearized/reduced runs with the same [`NoiseStream`] consume
//! identical increment sequences, so comparisons are coupled pathwise.
//!
//! Streams are keyed by (master seed, path index) on a counter-based
//! generator, which makes ensembles bit-reproducible regardless of worker
//! count or execution order. Integration is fixed-step Euler-Maruyama: the
//! concentration claims under test concern additive-noise behaviour near
//! manifolds, where strong order 1 suffices, and a fixed step keeps noise
//! streams grid-aligned. (A higher-order scheme could be swapped in behind
//! the same step hooks.)

use nalgebra::DVector;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::bif::SplitSystem;
use crate::error::{Error, Result};
use crate::flow::OrbitTable;
use crate::manifold;
use crate::model::{NoiseParams, SlowFastSystem};

/// States with norm beyond this are recorded as blown up and the path is
/// truncated (unstable regimes must not abort whole ensembles).
pub const BLOW_UP_THRESHOLD: f64 = 1e6;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e3779b97f4a7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// One reproducible Brownian increment stream, keyed by master seed and path
/// index. Identical keys and grid give bit-identical increments.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NoiseStream {
    pub master_seed: u64,
    pub path_index: u64,
}

impl NoiseStream {
    pub fn new(master_seed: u64, path_index: u64) -> Self {
        NoiseStream {
            master_seed,
            path_index,
        }
    }

    /// Increment source for a grid with step `dt` and `k` channels.
    pub fn increments(&self, k: usize, dt: f64) -> Increments {
        let mut state = self.master_seed;
        let mut key = [0u8; 32];
        for chunk in key.chunks_exact_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
        }
        let mut rng = ChaCha12Rng::from_seed(key);
        rng.set_stream(self.path_index);
        Increments {
            rng,
            k,
            sqrt_dt: dt.sqrt(),
        }
    }
}

/// Iterator-like source of ΔW ~ N(0, dt·I_k).
pub struct Increments {
    rng: ChaCha12Rng,
    k: usize,
    sqrt_dt: f64,
}

impl Increments {
    pub fn next_dw(&mut self) -> DVector<f64> {
        DVector::from_iterator(
            self.k,
            (0..self.k).map(|_| {
                let z: f64 = self.rng.sample(StandardNormal);
                z * self.sqrt_dt
            }),
        )
    }
}

/// Which dynamics produced a path.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PathVariant {
    Full,
    Linearized,
    Reduced,
}

/// A sampled trajectory. For reduced bifurcation runs `x_t` carries the
/// bifurcating modes z; for stable reduced runs it carries the pinned x̄.
#[derive(Debug, Clone)]
pub struct PathRecord {
    pub times: Vec<f64>,
    pub x_t: Vec<DVector<f64>>,
    pub y_t: Vec<DVector<f64>>,
    pub variant: PathVariant,
    /// First index with ‖state‖ beyond the blow-up threshold, if any; the
    /// record is truncated there.
    pub blow_up_index: Option<usize>,
}

impl PathRecord {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Euler-Maruyama on the full system
/// `dx = (1/ε) f dt + (σ/√ε) F dW`, `dy = g dt + ρσ G dW`
/// with a per-step callback; both lines consume the same ΔW. Returns the
/// blow-up index if the path escaped.
pub fn simulate_full_with(
    sys: &SlowFastSystem,
    params: &NoiseParams,
    x0: &DVector<f64>,
    y0: &DVector<f64>,
    n_steps: usize,
    dt: f64,
    stream: &NoiseStream,
    mut on_sample: impl FnMut(usize, f64, &DVector<f64>, &DVector<f64>),
) -> Result<Option<usize>> {
    assert!(dt <= params.eps / 20.0 + 1e-15, "step must satisfy dt ≤ ε/20");
    let eps = params.eps;
    let sig_fast = params.sigma / eps.sqrt();
    let sig_slow = params.sigma_prime();
    let mut inc = stream.increments(sys.k, dt);
    let mut x = x0.clone();
    let mut y = y0.clone();
    on_sample(0, 0.0, &x, &y);
    for step in 0..n_steps {
        let t = step as f64 * dt;
        let dw = inc.next_dw();
        let drift_x = sys.f(&x, &y, eps) * (dt / eps);
        let drift_y = sys.g(&x, &y, eps) * dt;
        let noise_x = sys.cap_f(&x, &y, eps) * &dw * sig_fast;
        let noise_y = sys.cap_g(&x, &y, eps) * &dw * sig_slow;
        x += drift_x + noise_x;
        y += drift_y + noise_y;
        let idx = step + 1;
        on_sample(idx, t + dt, &x, &y);
        if x.norm_squared() + y.norm_squared() > BLOW_UP_THRESHOLD * BLOW_UP_THRESHOLD
            || !x.iter().all(|v| v.is_finite())
            || !y.iter().all(|v| v.is_finite())
        {
            return Ok(Some(idx));
        }
    }
    Ok(None)
}

/// Full-system path record on a uniform grid.
pub fn simulate_full(
    sys: &SlowFastSystem,
    params: &NoiseParams,
    x0: &DVector<f64>,
    y0: &DVector<f64>,
    n_steps: usize,
    dt: f64,
    stream: &NoiseStream,
) -> Result<PathRecord> {
    let mut rec = PathRecord {
        times: Vec::with_capacity(n_steps + 1),
        x_t: Vec::with_capacity(n_steps + 1),
        y_t: Vec::with_capacity(n_steps + 1),
        variant: PathVariant::Full,
        blow_up_index: None,
    };
    let blow = simulate_full_with(sys, params, x0, y0, n_steps, dt, stream, |_, t, x, y| {
        rec.times.push(t);
        rec.x_t.push(x.clone());
        rec.y_t.push(y.clone());
    })?;
    rec.blow_up_index = blow;
    Ok(rec)
}

/// Euler-Maruyama on the linearized system along a precomputed orbit:
/// `dξ = (1/ε) A ξ dt + (σ/√ε) F₀ dW`, `dη = (B η + C ξ) dt + ρσ G₀ dW`.
pub fn simulate_linearized_with(
    orbit: &OrbitTable,
    params: &NoiseParams,
    xi0: &DVector<f64>,
    eta0: &DVector<f64>,
    stream: &NoiseStream,
    mut on_sample: impl FnMut(usize, f64, &DVector<f64>, &DVector<f64>),
) -> Result<Option<usize>> {
    if (params.eps - orbit.eps).abs() > 1e-15 * orbit.eps {
        return Err(Error::GridMismatch {
            context: format!(
                "orbit was built for eps = {}, simulation uses eps = {}",
                orbit.eps, params.eps
            ),
        });
    }
    let eps = params.eps;
    let dt = orbit.dt;
    let sig_fast = params.sigma / eps.sqrt();
    let sig_slow = params.sigma_prime();
    let mut inc = stream.increments(orbit.k, dt);
    let mut xi = xi0.clone();
    let mut eta = eta0.clone();
    on_sample(0, 0.0, &xi, &eta);
    for step in 0..orbit.len() - 1 {
        let dw = inc.next_dw();
        let a = &orbit.a_t[step];
        let b = &orbit.b_t[step];
        let c = &orbit.c_t[step];
        let drift_xi = a * &xi * (dt / eps);
        let drift_eta = (b * &eta + c * &xi) * dt;
        xi += drift_xi + &orbit.f0_t[step] * &dw * sig_fast;
        eta += drift_eta + &orbit.g0_t[step] * &dw * sig_slow;
        let idx = step + 1;
        on_sample(idx, orbit.times[idx], &xi, &eta);
        if xi.norm_squared() + eta.norm_squared() > BLOW_UP_THRESHOLD * BLOW_UP_THRESHOLD {
            return Ok(Some(idx));
        }
    }
    Ok(None)
}

/// Linearized path record on the orbit grid.
pub fn simulate_linearized(
    orbit: &OrbitTable,
    params: &NoiseParams,
    xi0: &DVector<f64>,
    eta0: &DVector<f64>,
    stream: &NoiseStream,
) -> Result<PathRecord> {
    let mut rec = PathRecord {
        times: Vec::with_capacity(orbit.len()),
        x_t: Vec::with_capacity(orbit.len()),
        y_t: Vec::with_capacity(orbit.len()),
        variant: PathVariant::Linearized,
        blow_up_index: None,
    };
    let blow = simulate_linearized_with(orbit, params, xi0, eta0, stream, |_, t, x, y| {
        rec.times.push(t);
        rec.x_t.push(x.clone());
        rec.y_t.push(y.clone());
    })?;
    rec.blow_up_index = blow;
    Ok(rec)
}

/// Which lower-dimensional model a reduced simulation integrates.
pub enum ReducedModel<'a> {
    /// Slow dynamics with the fast variable pinned to the adiabatic manifold.
    Stable { sys: &'a SlowFastSystem },
    /// Bifurcating modes (z, y) with the stable block pinned to the centre
    /// manifold of the given splitting.
    Bifurcation { split: &'a SplitSystem },
}

/// Euler-Maruyama on the reduced stochastic system. The noise stream
/// convention matches [`simulate_full_with`] (one shared k-channel ΔW per
/// step), so full-vs-reduced comparisons are coupled pathwise.
///
/// * Stable mode: state is y⁰ ∈ ℝᵐ,
///   `dy⁰ = g(x̄(y⁰,ε), y⁰, ε) dt + ρσ G(x̄(y⁰,ε), y⁰, ε) dW`.
/// * Bifurcation mode: state is (z, y) ∈ ℝ^{q+m},
///   `εdz = f⁰(x̄⁻, z, y, ε) dt + √ε σ F⁰ dW`, `dy = g dt + ρσ G dW`
///   with x̄⁻ = x̄⁻(z, y, ε).
pub fn simulate_reduced_with(
    model: &ReducedModel<'_>,
    params: &NoiseParams,
    state0: &DVector<f64>,
    n_steps: usize,
    dt: f64,
    stream: &NoiseStream,
    mut on_sample: impl FnMut(usize, f64, &DVector<f64>),
) -> Result<Option<usize>> {
    assert!(dt <= params.eps / 20.0 + 1e-15, "step must satisfy dt ≤ ε/20");
    let eps = params.eps;
    let sig_fast = params.sigma / eps.sqrt();
    let sig_slow = params.sigma_prime();
    let newton_tol = 1e-12;
    match model {
        ReducedModel::Stable { sys } => {
            let mut inc = stream.increments(sys.k, dt);
            let mut y = state0.clone();
            let mut warm = DVector::zeros(sys.n);
            on_sample(0, 0.0, &y);
            for step in 0..n_steps {
                let dw = inc.next_dw();
                let x_bar = manifold::adiabatic_point(sys, &y, eps, &warm, newton_tol)?;
                warm = x_bar.clone();
                let drift = sys.g(&x_bar, &y, eps) * dt;
                let noise = sys.cap_g(&x_bar, &y, eps) * &dw * sig_slow;
                y += drift + noise;
                let idx = step + 1;
                on_sample(idx, (idx) as f64 * dt, &y);
                if y.norm() > BLOW_UP_THRESHOLD {
                    return Ok(Some(idx));
                }
            }
            Ok(None)
        }
        ReducedModel::Bifurcation { split } => {
            let q = split.q;
            let m = split.m();
            assert_eq!(state0.len(), q + m, "state must stack (z, y)");
            let mut inc = stream.increments(split.k(), dt);
            let mut z = state0.rows(0, q).into_owned();
            let mut y = state0.rows(q, m).into_owned();
            let mut warm = DVector::zeros(split.n_minus());
            let mut state = state0.clone();
            on_sample(0, 0.0, &state);
            for step in 0..n_steps {
                let dw = inc.next_dw();
                let xm = split.centre_manifold_pin(&z, &y, eps, &warm, newton_tol)?;
                warm = xm.clone();
                let fz = split.f_zero(&xm, &z, &y, eps);
                let gz = split.g_field(&xm, &z, &y, eps);
                let f_cap = split.cap_f_zero(&xm, &z, &y, eps);
                let g_cap = split.cap_g(&xm, &z, &y, eps);
                z += fz * (dt / eps) + f_cap * &dw * sig_fast;
                y += gz * dt + g_cap * &dw * sig_slow;
                let idx = step + 1;
                state.rows_mut(0, q).copy_from(&z);
                state.rows_mut(q, m).copy_from(&y);
                on_sample(idx, idx as f64 * dt, &state);
                if state.norm() > BLOW_UP_THRESHOLD {
                    return Ok(Some(idx));
                }
            }
            Ok(None)
        }
    }
}

/// Reduced path record. Stable mode: `y_t` is the slow path and `x_t` the
/// pinned manifold point. Bifurcation mode: `x_t` carries z and `y_t` y.
pub fn simulate_reduced(
    model: &ReducedModel<'_>,
    params: &NoiseParams,
    state0: &DVector<f64>,
    n_steps: usize,
    dt: f64,
    stream: &NoiseStream,
) -> Result<PathRecord> {
    let mut rec = PathRecord {
        times: Vec::with_capacity(n_steps + 1),
        x_t: Vec::with_capacity(n_steps + 1),
        y_t: Vec::with_capacity(n_steps + 1),
        variant: PathVariant::Reduced,
        blow_up_index: None,
    };
    match model {
        ReducedModel::Stable { sys } => {
            let eps = params.eps;
            let mut warm = DVector::zeros(sys.n);
            let blow = simulate_reduced_with(model, params, state0, n_steps, dt, stream, |_, t, y| {
                rec.times.push(t);
                rec.y_t.push(y.clone());
                let xb = manifold::adiabatic_point(sys, y, eps, &warm, 1e-12)
                    .unwrap_or_else(|_| warm.clone());
                warm = xb.clone();
                rec.x_t.push(xb);
            })?;
            rec.blow_up_index = blow;
        }
        ReducedModel::Bifurcation { split } => {
            let q = split.q;
            let m = split.m();
            let blow =
                simulate_reduced_with(model, params, state0, n_steps, dt, stream, |_, t, s| {
                    rec.times.push(t);
                    rec.x_t.push(s.rows(0, q).into_owned());
                    rec.y_t.push(s.rows(q, m).into_owned());
                })?;
            rec.blow_up_index = blow;
        }
    }
    Ok(rec)
}

/// Runs `n_paths` independent jobs keyed by path index, in parallel, and
/// returns results in path order. Each job owns its noise stream, so the
/// outcome is identical for any worker count.
pub fn run_ensemble<T: Send>(
    n_paths: usize,
    master_seed: u64,
    job: impl Fn(u64, NoiseStream) -> Result<T> + Sync,
) -> Result<Vec<T>> {
    (0..n_paths as u64)
        .into_par_iter()
        .map(|i| job(i, NoiseStream::new(master_seed, i)))
        .collect()
}

/// Sample mean and (unbiased) standard deviation, accumulated in index order.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Quantile by sorting (nearest-rank with linear interpolation).
pub fn quantile(values: &[f64], q: f64) -> f64 {
    assert!((0.0..=1.0).contains(&q));
    if values.is_empty() {
        return f64::NAN;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{self, OrbitOptions};
    use crate::model::catalog_entry;
    use approx::assert_relative_eq;

    fn v1(x: f64) -> DVector<f64> {
        DVector::from_element(1, x)
    }

    #[test]
    fn noiseless_full_run_matches_deterministic_solution() {
        let entry = catalog_entry("linear1d").unwrap();
        let params = NoiseParams::new(0.01, 0.0, 0.0).unwrap();
        let (dt, _, n_steps) = flow::grid_layout(params.eps, 1.0, &OrbitOptions::default());
        let stream = NoiseStream::new(7, 0);
        // start on the adiabatic manifold
        let x0 = v1(1.0 / (1.0 - params.eps));
        let rec =
            simulate_full(&entry.system, &params, &x0, &v1(1.0), n_steps, dt, &stream).unwrap();
        assert!(rec.blow_up_index.is_none());
        let y_end = rec.y_t.last().unwrap()[0];
        assert!((y_end - (-1.0f64).exp()).abs() < 1e-3);
    }

    #[test]
    fn ou_stationary_variance_bracket() {
        // linear1d: xi = x - x̄(y) is OU with stationary variance σ²/2.
        let entry = catalog_entry("linear1d").unwrap();
        let sys = &entry.system;
        let params = NoiseParams::new(0.01, 0.05, 0.0).unwrap();
        let (dt, _, n_steps) = flow::grid_layout(params.eps, 1.0, &OrbitOptions::default());
        let sigma2 = params.sigma * params.sigma;
        let sums = run_ensemble(2000, 99, |_, stream| {
            let mut acc = 0.0;
            let mut count = 0usize;
            let x0 = v1(1.0 / (1.0 - params.eps));
            simulate_full_with(sys, &params, &x0, &v1(1.0), n_steps, dt, &stream, |i, _, x, y| {
                if i >= n_steps / 2 && i % 10 == 0 {
                    let xbar = y[0] / (1.0 - params.eps);
                    acc += (x[0] - xbar).powi(2);
                    count += 1;
                }
            })?;
            Ok(acc / count as f64)
        })
        .unwrap();
        let (mean_var, _) = mean_std(&sums);
        assert!(
            mean_var > 0.45 * sigma2 && mean_var < 0.55 * sigma2,
            "sample variance {mean_var:e} outside σ²·[0.45, 0.55]"
        );
    }

    #[test]
    fn same_seed_same_grid_is_bit_identical() {
        let entry = catalog_entry("cubic1d").unwrap();
        let params = NoiseParams::new(0.02, 0.04, 0.3).unwrap();
        let (dt, _, n_steps) = flow::grid_layout(params.eps, 0.5, &OrbitOptions::default());
        let stream = NoiseStream::new(1234, 55);
        let a = simulate_full(&entry.system, &params, &v1(0.4), &v1(0.5), n_steps, dt, &stream)
            .unwrap();
        let b = simulate_full(&entry.system, &params, &v1(0.4), &v1(0.5), n_steps, dt, &stream)
            .unwrap();
        for (xa, xb) in a.x_t.iter().zip(b.x_t.iter()) {
            assert_eq!(xa[0].to_bits(), xb[0].to_bits());
        }
        for (ya, yb) in a.y_t.iter().zip(b.y_t.iter()) {
            assert_eq!(ya[0].to_bits(), yb[0].to_bits());
        }
    }

    #[test]
    fn ensemble_statistics_invariant_under_worker_count() {
        let entry = catalog_entry("linear1d").unwrap();
        let sys = entry.system.clone();
        let params = NoiseParams::new(0.01, 0.03, 0.2).unwrap();
        let (dt, _, n_steps) = flow::grid_layout(params.eps, 0.2, &OrbitOptions::default());
        let job = |_i: u64, stream: NoiseStream| {
            let rec = simulate_full(&sys, &params, &v1(1.0), &v1(1.0), n_steps, dt, &stream)?;
            Ok(rec.y_t.last().unwrap()[0])
        };
        let parallel = run_ensemble(64, 5, job).unwrap();
        let single = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(|| run_ensemble(64, 5, job).unwrap());
        for (a, b) in parallel.iter().zip(single.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn linearized_homogeneous_solution_tracks_principal_matrix() {
        let entry = catalog_entry("linear1d").unwrap();
        let params = NoiseParams::new(0.01, 0.0, 0.0).unwrap();
        let orbit = flow::integrate_reduced(
            &entry.system,
            &params,
            &v1(1.0),
            &v1(0.0),
            1.0,
            &OrbitOptions::default(),
        )
        .unwrap();
        let stream = NoiseStream::new(3, 0);
        let rec = simulate_linearized(&orbit, &params, &v1(1.0), &v1(0.0), &stream).unwrap();
        let u = flow::principal_solution(&orbit, flow::Propagator::FastU, 0.0, 1.0).unwrap();
        let defect = (rec.x_t.last().unwrap()[0] - u[(0, 0)]).abs();
        assert!(defect < 1e-6, "homogeneous defect {defect:e}");
    }

    #[test]
    fn linearized_unforced_slow_block_stays_zero() {
        // C = 0 and rho = 0: η⁰ never moves.
        let entry = catalog_entry("linear1d").unwrap();
        let params = NoiseParams::new(0.01, 0.05, 0.0).unwrap();
        let orbit = flow::integrate_reduced(
            &entry.system,
            &params,
            &v1(1.0),
            &v1(0.0),
            0.3,
            &OrbitOptions::default(),
        )
        .unwrap();
        let stream = NoiseStream::new(11, 4);
        let rec = simulate_linearized(&orbit, &params, &v1(0.0), &v1(0.0), &stream).unwrap();
        assert!(rec.y_t.iter().all(|h| h[0] == 0.0));
    }

    #[test]
    fn strong_order_one_on_additive_noise() {
        // Fix one Brownian path on the finest grid; coarser runs consume
        // block sums of the fine increments. Halving the step should halve
        // the strong error (EM has strong order 1 for additive noise).
        let entry = catalog_entry("linear1d").unwrap();
        let sys = &entry.system;
        let params = NoiseParams::new(0.05, 0.1, 0.0).unwrap();
        let t_end = 0.5;
        let dt_f = params.eps / 320.0;
        let n_f = (t_end / dt_f).round() as usize;

        let mut errs = Vec::new();
        for level in [8usize, 16] {
            // coarse step = level · dt_f; the reference is 8–16× finer, so
            // its own bias barely perturbs the ratio
            let mut err_sum = 0.0;
            for path in 0..8u64 {
                let stream = NoiseStream::new(77, path);
                let mut inc = stream.increments(1, dt_f);
                let fine: Vec<DVector<f64>> = (0..n_f).map(|_| inc.next_dw()).collect();
                let reference = em_on_increments(sys, &params, dt_f, &fine);
                let coarse: Vec<DVector<f64>> = fine
                    .chunks(level)
                    .map(|ch| {
                        let mut s = DVector::zeros(1);
                        for d in ch {
                            s += d;
                        }
                        s
                    })
                    .collect();
                let run = em_on_increments(sys, &params, dt_f * level as f64, &coarse);
                err_sum += (run - reference).abs();
            }
            errs.push(err_sum / 8.0);
        }
        let ratio = errs[1] / errs[0];
        assert!(
            (1.7..=2.4).contains(&ratio),
            "strong error ratio {ratio} for step doubling"
        );
    }

    fn em_on_increments(
        sys: &SlowFastSystem,
        params: &NoiseParams,
        dt: f64,
        incs: &[DVector<f64>],
    ) -> f64 {
        let eps = params.eps;
        let mut x = v1(1.0);
        let mut y = v1(1.0);
        for dw in incs {
            let dx = sys.f(&x, &y, eps) * (dt / eps) + sys.cap_f(&x, &y, eps) * dw * (params.sigma / eps.sqrt());
            let dy = sys.g(&x, &y, eps) * dt + sys.cap_g(&x, &y, eps) * dw * params.sigma_prime();
            x += dx;
            y += dy;
        }
        x[0]
    }

    #[test]
    fn full_and_reduced_consume_identical_increments() {
        // linear1d's slow drift does not read the fast variable, so the full
        // and reduced y-paths must agree bit for bit when fed the same
        // stream: this pins the shared-channel noise-coupling contract.
        let entry = catalog_entry("linear1d").unwrap();
        let sys = &entry.system;
        let params = NoiseParams::new(0.01, 0.05, 0.7).unwrap();
        let (dt, _, n_steps) = flow::grid_layout(params.eps, 0.5, &OrbitOptions::default());
        let stream = NoiseStream::new(2024, 9);
        let x0 = v1(1.0 / (1.0 - params.eps));
        let full = simulate_full(sys, &params, &x0, &v1(1.0), n_steps, dt, &stream).unwrap();
        let reduced = simulate_reduced(
            &ReducedModel::Stable { sys },
            &params,
            &v1(1.0),
            n_steps,
            dt,
            &stream,
        )
        .unwrap();
        for (yf, yr) in full.y_t.iter().zip(reduced.y_t.iter()) {
            assert_eq!(yf[0].to_bits(), yr[0].to_bits());
        }
    }

    #[test]
    fn reduced_noiseless_matches_reduced_ode() {
        let entry = catalog_entry("linear1d").unwrap();
        let sys = &entry.system;
        let params = NoiseParams::new(0.01, 0.0, 0.0).unwrap();
        let (dt, _, n_steps) = flow::grid_layout(params.eps, 1.0, &OrbitOptions::default());
        let stream = NoiseStream::new(0, 0);
        let rec = simulate_reduced(
            &ReducedModel::Stable { sys },
            &params,
            &v1(1.0),
            n_steps,
            dt,
            &stream,
        )
        .unwrap();
        // reduced drift is g(x̄(y), y) = -y: y(1) = e^{-1} up to O(dt)
        assert_relative_eq!(
            rec.y_t.last().unwrap()[0],
            (-1.0f64).exp(),
            max_relative = 1e-3
        );
    }

    #[test]
    fn blow_up_is_recorded_not_thrown() {
        let entry = catalog_entry("pitchfork").unwrap();
        let mut sys = entry.system.clone();
        // flip the cubic sign: eps z' = yz + z^3 explodes past the axis
        sys.f = std::sync::Arc::new(|z, y, _| v1(y[0] * z[0] + z[0].powi(3)));
        sys.jac_f_x = None;
        sys.jac_f_y = None;
        let params = NoiseParams::new(0.01, 0.0, 0.0).unwrap();
        let (dt, _, n_steps) = flow::grid_layout(params.eps, 2.0, &OrbitOptions::default());
        let stream = NoiseStream::new(5, 0);
        let rec = simulate_full(&sys, &params, &v1(0.5), &v1(1.0), n_steps, dt, &stream).unwrap();
        let idx = rec.blow_up_index.expect("path must blow up");
        assert_eq!(rec.times.len(), idx + 1);
        assert!(rec.x_t[idx - 1][0].is_finite());
    }

    #[test]
    fn quantile_and_mean_std_basics() {
        let vals = [1.0, 3.0, 2.0, 4.0];
        let (mean, std) = mean_std(&vals);
        assert_relative_eq!(mean, 2.5);
        assert_relative_eq!(std, (5.0f64 / 3.0).sqrt(), epsilon = 1e-12);
        assert_relative_eq!(quantile(&vals, 0.5), 2.5);
        assert_relative_eq!(quantile(&vals, 0.0), 1.0);
        assert_relative_eq!(quantile(&vals, 1.0), 4.0);
    }
}
