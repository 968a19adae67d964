//! Concentration-set membership and first-exit statistics.
//!
//! Sample paths of the full system are expected to stay inside the layer
//! `B(h) = {⟨x − x̄(y,ε), X̄(y,ε)⁻¹ (x − x̄(y,ε))⟩ < h²}` for times that are
//! exponentially long in (h/σ)². This module measures that claim: it
//! precomputes the layer geometry on a grid over the slow domain, detects
//! first exits along Monte Carlo paths (at grid resolution, bias ≤ one
//! step), estimates exit probabilities with Wilson intervals over an h-grid
//! and fits the tail exponent κ in `p ≈ C e^{−κ h²/σ²}`.
//!
//! Plain Monte Carlo bounds the usable range to roughly h/σ ≲ 5–6 per 10⁴
//! paths on order-one horizons; levels without observed exits are flagged
//! degenerate and excluded from the fit.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::flow::{self, OrbitOptions};
use crate::linalg;
use crate::manifold;
use crate::lyap;
use crate::model::{Domain, NoiseParams, SlowFastSystem};
use crate::sde::{self, NoiseStream, PathRecord};

/// Precomputed layer geometry over a box of query coordinates: the manifold
/// center x̄(q) and metric X̄(q) at tensor-grid nodes, with multilinear
/// interpolation in between.
#[derive(Debug, Clone)]
pub struct MetricField {
    lo: Vec<f64>,
    hi: Vec<f64>,
    res: Vec<usize>,
    centers: Vec<DVector<f64>>,
    metrics: Vec<DMatrix<f64>>,
    pub eps: f64,
    /// Worst condition number seen across nodes.
    pub max_cond: f64,
}

impl MetricField {
    /// Builds a field by evaluating `node_fn` at every tensor-grid node of
    /// the box. Query dimension is limited to 3 (desk scale).
    pub fn from_fn(
        bounds: &[(f64, f64)],
        resolution: usize,
        eps: f64,
        mut node_fn: impl FnMut(&DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)>,
    ) -> Result<Self> {
        let d = bounds.len();
        if d == 0 || d > 3 {
            return Err(Error::Config(format!(
                "metric fields support 1..=3 query dimensions, got {d}"
            )));
        }
        assert!(resolution >= 2);
        let res = vec![resolution; d];
        let total: usize = res.iter().product();
        let mut centers = Vec::with_capacity(total);
        let mut metrics = Vec::with_capacity(total);
        let mut max_cond = 1.0f64;
        let mut coords = DVector::zeros(d);
        for flat in 0..total {
            let mut rem = flat;
            for axis in 0..d {
                let i = rem % resolution;
                rem /= resolution;
                let (lo, hi) = bounds[axis];
                coords[axis] = lo + (hi - lo) * i as f64 / (resolution - 1) as f64;
            }
            let (center, metric) = node_fn(&coords)?;
            let sv = metric.clone().singular_values();
            max_cond = max_cond.max(sv.max() / sv.min().max(f64::MIN_POSITIVE));
            centers.push(center);
            metrics.push(metric);
        }
        Ok(MetricField {
            lo: bounds.iter().map(|b| b.0).collect(),
            hi: bounds.iter().map(|b| b.1).collect(),
            res,
            centers,
            metrics,
            eps,
            max_cond,
        })
    }

    /// Stable-case field over the slow domain: centers x̄(y,ε), metrics
    /// X̄(y,ε) from the Lyapunov machinery.
    pub fn build_stable(
        sys: &SlowFastSystem,
        params: &NoiseParams,
        resolution: usize,
    ) -> Result<Self> {
        let mut warm = DVector::zeros(sys.n);
        MetricField::from_fn(&sys.domain.bounding_box, resolution, params.eps, |y| {
            let mp = manifold::manifold_point_with_correction(sys, y, &warm, 1e-12)?;
            warm = mp.x_star.clone();
            let metric = lyap::metric_at(sys, params, &mp)?;
            let x_bar = &mp.x_star + mp.x1.as_ref().unwrap() * params.eps;
            Ok((x_bar, metric.x_bar))
        })
    }

    fn locate(&self, q: &DVector<f64>) -> Result<(Vec<usize>, Vec<f64>)> {
        let d = self.lo.len();
        if q.len() != d {
            return Err(Error::GridMismatch {
                context: format!("query dim {} vs field dim {}", q.len(), d),
            });
        }
        let mut cell = Vec::with_capacity(d);
        let mut frac = Vec::with_capacity(d);
        for axis in 0..d {
            let span = self.hi[axis] - self.lo[axis];
            let pos = (q[axis] - self.lo[axis]) / span * (self.res[axis] - 1) as f64;
            if pos < -1e-9 || pos > (self.res[axis] - 1) as f64 + 1e-9 {
                return Err(Error::OutsideDomain {
                    context: format!("coordinate {} = {} outside field box", axis, q[axis]),
                });
            }
            let clamped = pos.clamp(0.0, (self.res[axis] - 1) as f64 - 1e-12);
            let i = clamped.floor() as usize;
            cell.push(i);
            frac.push(clamped - i as f64);
        }
        Ok((cell, frac))
    }

    /// Interpolated (x̄, X̄) at the query point.
    pub fn at(&self, q: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let (cell, frac) = self.locate(q)?;
        let d = self.lo.len();
        let mut center = DVector::zeros(self.centers[0].len());
        let mut metric = DMatrix::zeros(self.metrics[0].nrows(), self.metrics[0].ncols());
        for corner in 0..(1usize << d) {
            let mut weight = 1.0;
            let mut flat = 0;
            let mut stride = 1;
            for axis in 0..d {
                let up = (corner >> axis) & 1 == 1;
                weight *= if up { frac[axis] } else { 1.0 - frac[axis] };
                flat += (cell[axis] + up as usize) * stride;
                stride *= self.res[axis];
            }
            if weight != 0.0 {
                center += &self.centers[flat] * weight;
                metric += &self.metrics[flat] * weight;
            }
        }
        Ok((center, metric))
    }

    /// Quadratic form ⟨x − x̄(q), X̄(q)⁻¹ (x − x̄(q))⟩ via a Cholesky solve
    /// (the metric is never inverted explicitly).
    pub fn quadratic_form(&self, x: &DVector<f64>, q: &DVector<f64>) -> Result<f64> {
        let (center, metric) = self.at(q)?;
        let diff = x - center;
        let chol = Cholesky::new(linalg::symmetrize(&metric)).ok_or_else(|| {
            Error::NotControllable {
                location: format!("metric not positive definite at {:?}", q.as_slice()),
                rank: 0,
                dim: metric.nrows(),
            }
        })?;
        let solved = chol.solve(&diff);
        Ok(diff.dot(&solved))
    }
}

/// First-exit data of one recorded path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExitTimes {
    /// First grid time with quadratic form ≥ h², if any.
    pub tau_b: Option<f64>,
    pub tau_b_index: Option<usize>,
    /// First grid time with the slow variable outside 𝒟₀, if any.
    pub tau_d0: Option<f64>,
    pub tau_d0_index: Option<usize>,
}

/// Scans a recorded path for the first exit from B(h) and from 𝒟₀.
/// Detection is grid-sampled; the bias is at most one step.
pub fn first_exit(
    path: &PathRecord,
    field: &MetricField,
    h: f64,
    domain: &Domain,
) -> Result<ExitTimes> {
    let mut out = ExitTimes {
        tau_b: None,
        tau_b_index: None,
        tau_d0: None,
        tau_d0_index: None,
    };
    let h2 = h * h;
    for (i, (x, y)) in path.x_t.iter().zip(path.y_t.iter()).enumerate() {
        if out.tau_d0.is_none() && !domain.contains(y) {
            out.tau_d0 = Some(path.times[i]);
            out.tau_d0_index = Some(i);
        }
        if out.tau_b.is_none() {
            // outside the field box counts as having left the layer's domain
            match field.quadratic_form(x, y) {
                Ok(q) => {
                    if q >= h2 {
                        out.tau_b = Some(path.times[i]);
                        out.tau_b_index = Some(i);
                    }
                }
                Err(Error::OutsideDomain { .. }) => {
                    if out.tau_d0.is_none() {
                        out.tau_d0 = Some(path.times[i]);
                        out.tau_d0_index = Some(i);
                    }
                }
                Err(e) => return Err(e),
            }
        }
        if out.tau_b.is_some() && out.tau_d0.is_some() {
            break;
        }
    }
    Ok(out)
}

/// Estimated exit probabilities over an h-grid with confidence intervals and
/// the fitted tail exponent.
#[derive(Debug, Clone)]
pub struct ExitCurve {
    pub h_grid: Vec<f64>,
    pub h_over_sigma: Vec<f64>,
    pub t_end: f64,
    pub n_paths: usize,
    pub n_exit: Vec<usize>,
    pub p_hat: Vec<f64>,
    pub ci_low: Vec<f64>,
    pub ci_high: Vec<f64>,
    /// All-exit or no-exit levels; excluded from the exponent fit.
    pub degenerate: Vec<bool>,
    pub sigma: f64,
    pub eps: f64,
    pub seed: u64,
    /// Exit-detection bias bound: one grid step.
    pub detection_bias: f64,
}

/// Weighted least-squares fit of the exit-tail exponent.
#[derive(Debug, Clone, Copy)]
pub struct ExponentFit {
    pub kappa_hat: f64,
    pub kappa_lo: f64,
    pub kappa_hi: f64,
    pub prefactor: f64,
    pub r2: f64,
    pub points_used: usize,
}

/// Wilson 95% interval for a binomial proportion.
pub fn wilson_interval(successes: usize, trials: usize) -> (f64, f64) {
    assert!(trials > 0);
    let z = 1.959_963_984_540_054f64;
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    let lo = if successes == 0 { 0.0 } else { (center - half).max(0.0) };
    let hi = if successes == trials { 1.0 } else { (center + half).min(1.0) };
    (lo, hi)
}

/// Options for exit-probability estimation.
#[derive(Debug, Clone)]
pub struct ExitOptions {
    /// Start point for the slow variable; defaults to the domain box center.
    pub y0: Option<DVector<f64>>,
    /// Metric-field resolution per axis.
    pub resolution: usize,
    /// Upper bound of the admissible h-range.
    pub h0: f64,
}

impl Default for ExitOptions {
    fn default() -> Self {
        ExitOptions {
            y0: None,
            resolution: 129,
            h0: 1.0,
        }
    }
}

/// Generic curve estimator: `exited` decides, per path, which levels of the
/// h-grid were exited before `t_end ∧ τ_domain`. Used by both the stable and
/// the bifurcation harness.
pub(crate) fn estimate_curve(
    h_grid: &[f64],
    t_end: f64,
    n_paths: usize,
    seed: u64,
    sigma: f64,
    eps: f64,
    detection_bias: f64,
    exited: impl Fn(u64, NoiseStream) -> Result<Vec<bool>> + Sync,
) -> Result<ExitCurve> {
    let flags = sde::run_ensemble(n_paths, seed, exited)?;
    let mut n_exit = vec![0usize; h_grid.len()];
    for path_flags in &flags {
        for (j, f) in path_flags.iter().enumerate() {
            if *f {
                n_exit[j] += 1;
            }
        }
    }
    let mut p_hat = Vec::with_capacity(h_grid.len());
    let mut ci_low = Vec::with_capacity(h_grid.len());
    let mut ci_high = Vec::with_capacity(h_grid.len());
    let mut degenerate = Vec::with_capacity(h_grid.len());
    for &count in &n_exit {
        let p = count as f64 / n_paths as f64;
        let (lo, hi) = wilson_interval(count, n_paths);
        p_hat.push(p);
        ci_low.push(lo);
        ci_high.push(hi);
        degenerate.push(count == 0 || count == n_paths);
    }
    Ok(ExitCurve {
        h_grid: h_grid.to_vec(),
        h_over_sigma: h_grid.iter().map(|h| if sigma > 0.0 { h / sigma } else { f64::INFINITY }).collect(),
        t_end,
        n_paths,
        n_exit,
        p_hat,
        ci_low,
        ci_high,
        degenerate,
        sigma,
        eps,
        seed,
        detection_bias,
    })
}

/// Monte Carlo estimate of `P(τ_B(h) < t ∧ τ_D0)` for each h on the grid.
/// All paths share the master seed with distinct path indices and start on
/// the adiabatic manifold above `y0`.
pub fn exit_probability(
    sys: &SlowFastSystem,
    params: &NoiseParams,
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
                "h = {h} outside the admissible range [3σ, h0] = [{three_sigma}, {}]",
                opts.h0
            )));
        }
    }
    let field = MetricField::build_stable(sys, params, opts.resolution)?;
    let y0 = opts.y0.clone().unwrap_or_else(|| {
        DVector::from_iterator(
            sys.m,
            sys.domain.bounding_box.iter().map(|&(lo, hi)| 0.5 * (lo + hi)),
        )
    });
    let (x0, _) = field.at(&y0)?;
    let (dt, _, n_steps) = flow::grid_layout(params.eps, t_end, &OrbitOptions::default());
    let h2: Vec<f64> = h_grid.iter().map(|h| h * h).collect();
    let field_ref = &field;
    let sys_ref = sys;
    let x0_ref = &x0;
    let y0_ref = &y0;

    let curve = estimate_curve(
        h_grid,
        t_end,
        n_paths,
        seed,
        params.sigma,
        params.eps,
        dt,
        move |_idx, stream| {
            let mut exited = vec![false; h2.len()];
            let mut all_exited = false;
            let mut left_domain = false;
            let mut bad: Option<Error> = None;
            sde::simulate_full_with(
                sys_ref,
                params,
                x0_ref,
                y0_ref,
                n_steps,
                dt,
                &stream,
                |_i, _t, x, y| {
                    if left_domain || all_exited || bad.is_some() {
                        return;
                    }
                    if !sys_ref.domain.contains(y) {
                        left_domain = true;
                        return;
                    }
                    match field_ref.quadratic_form(x, y) {
                        Ok(q) => {
                            all_exited = true;
                            for (j, flag) in exited.iter_mut().enumerate() {
                                if !*flag && q >= h2[j] {
                                    *flag = true;
                                }
                                all_exited &= *flag;
                            }
                        }
                        Err(Error::OutsideDomain { .. }) => left_domain = true,
                        Err(e) => bad = Some(e),
                    }
                },
            )?;
            match bad {
                Some(e) => Err(e),
                None => Ok(exited),
            }
        },
    )?;
    Ok(curve)
}

/// Weighted least squares of −σ² ln p̂ against h²; the slope estimates the
/// exit exponent κ. Degenerate levels and estimates outside (1e-4, 0.9) are
/// excluded; at least four usable points are required.
pub fn fit_exponent(curve: &ExitCurve) -> Result<ExponentFit> {
    let sigma2 = curve.sigma * curve.sigma;
    if sigma2 == 0.0 {
        return Err(Error::InsufficientData {
            usable: 0,
            needed: 4,
        });
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut ws = Vec::new();
    for j in 0..curve.h_grid.len() {
        let p = curve.p_hat[j];
        if curve.degenerate[j] || p <= 1e-4 || p >= 0.9 {
            continue;
        }
        let x = curve.h_grid[j] * curve.h_grid[j];
        let y = -sigma2 * p.ln();
        // CI half-width on the log scale sets the weight
        let half = 0.5 * sigma2 * (curve.ci_high[j].ln() - curve.ci_low[j].max(1e-12).ln());
        let w = 1.0 / half.max(1e-300).powi(2);
        xs.push(x);
        ys.push(y);
        ws.push(w);
    }
    let usable = xs.len();
    if usable < 4 {
        return Err(Error::InsufficientData { usable, needed: 4 });
    }
    let wsum: f64 = ws.iter().sum();
    let xbar: f64 = xs.iter().zip(&ws).map(|(x, w)| x * w).sum::<f64>() / wsum;
    let ybar: f64 = ys.iter().zip(&ws).map(|(y, w)| y * w).sum::<f64>() / wsum;
    let sxx: f64 = xs.iter().zip(&ws).map(|(x, w)| w * (x - xbar).powi(2)).sum();
    let sxy: f64 = xs
        .iter()
        .zip(&ys)
        .zip(&ws)
        .map(|((x, y), w)| w * (x - xbar) * (y - ybar))
        .sum();
    let slope = sxy / sxx;
    let intercept = ybar - slope * xbar;
    let ss_res: f64 = xs
        .iter()
        .zip(&ys)
        .zip(&ws)
        .map(|((x, y), w)| w * (y - slope * x - intercept).powi(2))
        .sum();
    let ss_tot: f64 = ys.iter().zip(&ws).map(|(y, w)| w * (y - ybar).powi(2)).sum();
    let r2 = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    let slope_se = (1.0 / sxx).sqrt();
    let z = 1.959_963_984_540_054f64;
    Ok(ExponentFit {
        kappa_hat: slope,
        kappa_lo: slope - z * slope_se,
        kappa_hi: slope + z * slope_se,
        prefactor: (-intercept / sigma2).exp(),
        r2,
        points_used: usable,
    })
}

/// Fraction of paths started at quadratic form δ² that sit inside B(h) at
/// the deadline (general-initial-condition relaxation check).
pub fn reentry_fraction(
    sys: &SlowFastSystem,
    params: &NoiseParams,
    delta2: f64,
    h: f64,
    deadline: f64,
    n_paths: usize,
    seed: u64,
    opts: &ExitOptions,
) -> Result<f64> {
    let field = MetricField::build_stable(sys, params, opts.resolution)?;
    let y0 = opts.y0.clone().unwrap_or_else(|| {
        DVector::from_iterator(
            sys.m,
            sys.domain.bounding_box.iter().map(|&(lo, hi)| 0.5 * (lo + hi)),
        )
    });
    let (x_bar0, metric0) = field.at(&y0)?;
    // displace along the first metric axis so that ⟨ξ, X̄⁻¹ξ⟩ = δ²
    let chol = Cholesky::new(linalg::symmetrize(&metric0)).ok_or_else(|| Error::NotControllable {
        location: "re-entry start".into(),
        rank: 0,
        dim: metric0.nrows(),
    })?;
    let mut e1 = DVector::zeros(sys.n);
    e1[0] = 1.0;
    let x0 = &x_bar0 + chol.l() * e1 * delta2.sqrt();
    let (dt, _, n_steps) = flow::grid_layout(params.eps, deadline, &OrbitOptions::default());
    let h2 = h * h;
    let field_ref = &field;
    let inside: Vec<bool> = sde::run_ensemble(n_paths, seed, |_idx, stream| {
        let mut q_end = f64::INFINITY;
        sde::simulate_full_with(sys, params, &x0, &y0, n_steps, dt, &stream, |i, _t, x, y| {
            if i == n_steps {
                q_end = field_ref.quadratic_form(x, y).unwrap_or(f64::INFINITY);
            }
        })?;
        Ok(q_end < h2)
    })?;
    Ok(inside.iter().filter(|&&b| b).count() as f64 / n_paths as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::catalog_entry;
    use crate::sde::PathVariant;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn v1(x: f64) -> DVector<f64> {
        DVector::from_element(1, x)
    }

    fn linear1d_field(eps: f64) -> (MetricField, NoiseParams) {
        let entry = catalog_entry("linear1d").unwrap();
        let params = NoiseParams::new(eps, 0.03, 0.0).unwrap();
        let field = MetricField::build_stable(&entry.system, &params, 65).unwrap();
        (field, params)
    }

    #[test]
    fn quadratic_form_center_scaling_and_value() {
        let (field, params) = linear1d_field(0.01);
        let y = v1(0.0);
        // at the center the form vanishes
        let (center, _) = field.at(&y).unwrap();
        assert!(field.quadratic_form(&center, &y).unwrap().abs() < 1e-12);
        // linear1d at y = 0: x̄ = 0, X̄ = 1/2, so Q(δ) = 2δ²
        let delta = 0.3;
        let q = field.quadratic_form(&v1(delta), &y).unwrap();
        assert_relative_eq!(q, 2.0 * delta * delta, epsilon = 1e-9);
        // quadratic homogeneity
        let q2 = field.quadratic_form(&v1(2.0 * delta), &y).unwrap();
        assert_relative_eq!(q2, 4.0 * q, epsilon = 1e-9);
        let _ = params;
    }

    #[test]
    fn metric_field_interpolates_centers_linearly() {
        let (field, _) = linear1d_field(0.05);
        // x̄(y) = y/(1-ε) is linear in y, so interpolation is exact up to
        // the O(ε²) manifold truncation.
        for y in [-1.7, -0.4, 0.33, 1.9] {
            let (center, metric) = field.at(&v1(y)).unwrap();
            assert_relative_eq!(center[0], y * (1.0 + 0.05), epsilon = 1e-9);
            assert_relative_eq!(metric[(0, 0)], 0.5, epsilon = 1e-9);
        }
        assert!(field.at(&v1(2.5)).is_err());
    }

    #[test]
    fn first_exit_on_synthetic_fixture() {
        let (field, _) = linear1d_field(0.01);
        let entry = catalog_entry("linear1d").unwrap();
        let domain = &entry.system.domain;
        // hand-built path: stays at the center, then jumps out of B(h) at
        // index 3, leaves the domain at index 5
        let h = 0.1;
        let times: Vec<f64> = (0..7).map(|i| i as f64 * 0.1).collect();
        let mut x_t = vec![v1(0.0); 7];
        let mut y_t = vec![v1(0.0); 7];
        x_t[3] = v1(0.2); // Q = 2·0.04 = 0.08 ≥ h² = 0.01
        for (i, y) in y_t.iter_mut().enumerate().skip(5) {
            *y = v1(2.5 + i as f64 * 0.0);
        }
        let path = PathRecord {
            times,
            x_t,
            y_t,
            variant: PathVariant::Full,
            blow_up_index: None,
        };
        let exits = first_exit(&path, &field, h, domain).unwrap();
        assert_eq!(exits.tau_b_index, Some(3));
        assert_eq!(exits.tau_d0_index, Some(5));

        // a path on the manifold never exits
        let calm = PathRecord {
            times: (0..5).map(|i| i as f64 * 0.1).collect(),
            x_t: vec![v1(0.0); 5],
            y_t: vec![v1(0.0); 5],
            variant: PathVariant::Full,
            blow_up_index: None,
        };
        let exits = first_exit(&calm, &field, h, domain).unwrap();
        assert_eq!(exits.tau_b, None);
        assert_eq!(exits.tau_d0, None);

        // starting outside B(h) exits at index 0
        let out = PathRecord {
            times: vec![0.0],
            x_t: vec![v1(1.5 * h)],
            y_t: vec![v1(0.0)],
            variant: PathVariant::Full,
            blow_up_index: None,
        };
        let exits = first_exit(&out, &field, h, domain).unwrap();
        assert_eq!(exits.tau_b_index, Some(0));
    }

    #[test]
    fn wilson_interval_brackets_point_estimate() {
        let (lo, hi) = wilson_interval(10, 100);
        assert!(lo > 0.0 && lo < 0.1 && hi > 0.1 && hi < 1.0);
        let (lo0, hi0) = wilson_interval(0, 50);
        assert_eq!(lo0, 0.0);
        assert!(hi0 > 0.0 && hi0 < 0.15);
        let (lo1, hi1) = wilson_interval(50, 50);
        assert_eq!(hi1, 1.0);
        assert!(lo1 > 0.85);
    }

    #[test]
    fn noiseless_paths_never_exit() {
        let entry = catalog_entry("linear1d").unwrap();
        let params = NoiseParams::new(0.01, 0.0, 0.0).unwrap();
        let h_grid = [0.05, 0.1];
        let curve = exit_probability(
            &entry.system,
            &params,
            &h_grid,
            0.2,
            1000,
            7,
            &ExitOptions::default(),
        )
        .unwrap();
        assert!(curve.p_hat.iter().all(|&p| p == 0.0));
        assert!(curve.degenerate.iter().all(|&d| d));
    }

    #[test]
    fn exit_probabilities_are_monotone_in_h() {
        let entry = catalog_entry("linear1d").unwrap();
        let params = NoiseParams::new(0.01, 0.03, 0.0).unwrap();
        let sigma = params.sigma;
        let h_grid = [3.5 * sigma, 4.5 * sigma];
        let curve = exit_probability(
            &entry.system,
            &params,
            &h_grid,
            0.5,
            2000,
            11,
            &ExitOptions::default(),
        )
        .unwrap();
        assert!(
            curve.p_hat[0] >= curve.p_hat[1],
            "exit monotonicity violated: {:?}",
            curve.p_hat
        );
        assert!(curve.p_hat[0] > 0.0);
    }

    #[test]
    fn fit_recovers_synthetic_exponent() {
        // exact log-linear curve p = exp(-0.5 h²/σ²)
        let sigma = 0.1;
        let h_grid: Vec<f64> = (3..9).map(|i| i as f64 * 0.5 * sigma).collect();
        let n = 100_000usize;
        let p: Vec<f64> = h_grid
            .iter()
            .map(|h| (-0.5 * h * h / (sigma * sigma)).exp())
            .collect();
        let curve = ExitCurve {
            h_over_sigma: h_grid.iter().map(|h| h / sigma).collect(),
            n_exit: p.iter().map(|p| (p * n as f64) as usize).collect(),
            p_hat: p.clone(),
            ci_low: p.iter().map(|p| p * 0.9).collect(),
            ci_high: p.iter().map(|p| (p * 1.1).min(1.0)).collect(),
            degenerate: vec![false; h_grid.len()],
            h_grid,
            t_end: 1.0,
            n_paths: n,
            sigma,
            eps: 0.01,
            seed: 0,
            detection_bias: 1e-3,
        };
        let fit = fit_exponent(&curve).unwrap();
        assert_relative_eq!(fit.kappa_hat, 0.5, epsilon = 1e-6);
        assert!(fit.r2 > 0.999999);

        // a prefactor lands in the intercept, not the slope
        let mut scaled = curve.clone();
        for p in scaled.p_hat.iter_mut() {
            *p = (*p * 3.0).min(0.89);
        }
        // keep only levels that stayed below the usable ceiling
        let fit2 = fit_exponent(&scaled).unwrap();
        assert!((fit2.kappa_hat - 0.5).abs() < 0.02);
    }

    #[test]
    fn fit_requires_enough_points() {
        let sigma = 0.1;
        let curve = ExitCurve {
            h_grid: vec![0.3, 0.4],
            h_over_sigma: vec![3.0, 4.0],
            t_end: 1.0,
            n_paths: 1000,
            n_exit: vec![100, 10],
            p_hat: vec![0.1, 0.01],
            ci_low: vec![0.08, 0.005],
            ci_high: vec![0.12, 0.02],
            degenerate: vec![false, false],
            sigma,
            eps: 0.01,
            seed: 0,
            detection_bias: 1e-3,
        };
        assert!(matches!(
            fit_exponent(&curve),
            Err(Error::InsufficientData { usable: 2, .. })
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn fit_is_exact_on_noiseless_log_linear_data(
            kappa in 0.15f64..0.35,
            prefactor in 0.5f64..3.0,
        ) {
            let sigma = 0.05f64;
            let h_grid: Vec<f64> = [3.0, 3.5, 4.0, 4.5].iter().map(|r| r * sigma).collect();
            let p: Vec<f64> = h_grid
                .iter()
                .map(|h| prefactor * (-kappa * h * h / (sigma * sigma)).exp())
                .collect();
            prop_assume!(p.iter().all(|&pi| pi > 1e-4 && pi < 0.9));
            let curve = ExitCurve {
                h_over_sigma: h_grid.iter().map(|h| h / sigma).collect(),
                n_exit: vec![1; h_grid.len()],
                p_hat: p.clone(),
                ci_low: p.iter().map(|p| p * 0.9).collect(),
                ci_high: p.iter().map(|p| (p * 1.1).min(1.0)).collect(),
                degenerate: vec![false; h_grid.len()],
                h_grid,
                t_end: 1.0,
                n_paths: 10_000,
                sigma,
                eps: 0.01,
                seed: 0,
                detection_bias: 1e-3,
            };
            let fit = fit_exponent(&curve).unwrap();
            prop_assert!((fit.kappa_hat - kappa).abs() < 1e-9);
            prop_assert!((fit.prefactor - prefactor).abs() / prefactor < 1e-6);
        }
    }
}
