//! Experiment orchestration: configs, dispatch, CSV artifacts.
//!
//! Experiments are described by a JSON [`ExperimentConfig`]; each run writes
//! its CSV artifacts plus a `manifest.json` (config echo, version, wall
//! time, effective seed) into one output directory, also on failure. Given
//! the same config, seed and version, every numeric output byte is
//! identical across reruns and worker counts.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::bif;
use crate::error::{Error, Result};
use crate::exitlab::{self, ExitOptions};
use crate::flow::{self, ChiVariant, OrbitOptions, Propagator};
use crate::linalg;
use crate::lyap;
use crate::manifold;
use crate::model::{catalog_entry, NoiseParams};
use crate::sde::{self, ReducedModel};

/// Which experiment a config runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Manifold,
    Metric,
    Flow,
    Simulate,
    ExitProb,
    Pitchfork,
    CompareReduced,
}

impl Experiment {
    pub fn as_str(&self) -> &'static str {
        match self {
            Experiment::Manifold => "manifold",
            Experiment::Metric => "metric",
            Experiment::Flow => "flow",
            Experiment::Simulate => "simulate",
            Experiment::ExitProb => "exit-prob",
            Experiment::Pitchfork => "pitchfork",
            Experiment::CompareReduced => "compare-reduced",
        }
    }
}

/// Which integrator variant a `simulate` run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SimulateVariant {
    #[default]
    Full,
    Linearized,
    Reduced,
}

/// Grid and experiment-shape knobs; unused fields are ignored by the
/// dispatched experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    /// Horizon of time-dependent experiments.
    pub t_end: f64,
    /// Exit-level grid in units of σ.
    pub h_over_sigma: Vec<f64>,
    /// Start point of the slow variable (defaults to the domain box center).
    pub y0: Option<Vec<f64>>,
    /// Nodes per slow axis for manifold/metric scans.
    pub y_count: usize,
    /// Override of the fast step cap (defaults to ε/20).
    pub step_override: Option<f64>,
    /// Metric-field resolution for exit experiments.
    pub field_resolution: usize,
    /// Simulation variant for `simulate`.
    pub variant: SimulateVariant,
    /// Pitchfork: start time, escape horizon, probes, threshold, ladder.
    pub t0: f64,
    pub horizon_after_zero: f64,
    pub probe_times: Vec<f64>,
    pub escape_delta: f64,
    pub sigma_ladder: Vec<f64>,
    /// Splitting controls for compare-reduced.
    pub critical_dim: usize,
    pub neighborhood_radius: f64,
    pub z0: Option<Vec<f64>>,
    pub tube_constant: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            t_end: 1.0,
            h_over_sigma: vec![4.0, 5.0, 6.0, 7.0, 8.0],
            y0: None,
            y_count: 41,
            step_override: None,
            field_resolution: 129,
            variant: SimulateVariant::Full,
            t0: -1.0,
            horizon_after_zero: 0.3,
            probe_times: vec![-0.25, -0.125, -0.0625],
            escape_delta: 0.1,
            sigma_ladder: vec![1e-2, 3e-3, 1e-3],
            critical_dim: 1,
            neighborhood_radius: 2.0,
            z0: None,
            tube_constant: 3.0,
        }
    }
}

/// Full experiment description; round-trips through JSON unchanged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub system: String,
    pub params: NoiseParams,
    pub experiment: Experiment,
    #[serde(default)]
    pub grids: GridSpec,
    pub n_paths: usize,
    pub master_seed: u64,
    pub output_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("bad config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        // the catalog lookup also validates the system name
        let _ = catalog_entry(&self.system)?;
        NoiseParams::new(self.params.eps, self.params.sigma, self.params.rho)?;
        if self.grids.t_end <= 0.0 {
            return Err(Error::Config("t_end must be positive".into()));
        }
        if self.n_paths == 0 {
            return Err(Error::Config("n_paths must be positive".into()));
        }
        Ok(())
    }
}

/// Record of one run, echoed to `manifest.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArtifactManifest {
    pub tool_version: String,
    pub experiment: String,
    pub config: ExperimentConfig,
    /// Seed actually used (after env override).
    pub master_seed: u64,
    pub worker_count: usize,
    pub wall_time_s: f64,
    pub files: Vec<String>,
    pub error: Option<String>,
    pub warnings: Vec<String>,
}

/// One CSV cell.
#[derive(Debug, Clone)]
pub enum CsvValue {
    F(f64),
    I(i64),
    S(String),
    Empty,
}

impl CsvValue {
    fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        match self {
            // 17 significant digits: round-trip exact for f64
            CsvValue::F(v) => {
                if v.is_finite() {
                    write!(w, "{v:.16e}")
                } else if v.is_nan() {
                    write!(w, "nan")
                } else if *v > 0.0 {
                    write!(w, "inf")
                } else {
                    write!(w, "-inf")
                }
            }
            CsvValue::I(v) => write!(w, "{v}"),
            CsvValue::S(s) => write!(w, "{s}"),
            CsvValue::Empty => Ok(()),
        }
    }
}

/// Streams a table to disk: UTF-8, comma-separated, header first, floats
/// printed with 17 significant digits, deterministic row order.
pub fn emit_csv(
    path: &Path,
    header: &[&str],
    rows: impl Iterator<Item = Vec<CsvValue>>,
) -> Result<usize> {
    let file = fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    writeln!(w, "{}", header.join(","))?;
    let mut count = 0usize;
    for row in rows {
        debug_assert_eq!(row.len(), header.len(), "ragged CSV row");
        for (i, cell) in row.iter().enumerate() {
            if i > 0 {
                w.write_all(b",")?;
            }
            cell.write_to(&mut w)?;
        }
        w.write_all(b"\n")?;
        count += 1;
    }
    w.flush()?;
    Ok(count)
}

fn env_seed_override() -> Option<u64> {
    std::env::var("SLOWFAST_SEED").ok().and_then(|s| s.parse().ok())
}

/// Applies the `SLOWFAST_WORKERS` override to the global thread pool (first
/// call wins; later calls are ignored by rayon).
pub fn init_workers() {
    if let Some(n) = std::env::var("SLOWFAST_WORKERS")
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
    {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

/// Runs the configured experiment, writing CSV artifacts and a manifest
/// (the manifest is also written when the run fails).
pub fn run_experiment(config: &ExperimentConfig) -> Result<ArtifactManifest> {
    config.validate()?;
    let started = Instant::now();
    fs::create_dir_all(&config.output_dir)?;
    let mut effective = config.clone();
    if let Some(seed) = env_seed_override() {
        effective.master_seed = seed;
    }
    let mut files = Vec::new();
    let mut warnings = Vec::new();
    let result = dispatch(&effective, &mut files, &mut warnings);
    let manifest = ArtifactManifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        experiment: config.experiment.as_str().to_string(),
        config: config.clone(),
        master_seed: effective.master_seed,
        worker_count: rayon::current_num_threads(),
        wall_time_s: started.elapsed().as_secs_f64(),
        files: files.clone(),
        error: result.as_ref().err().map(|e| e.to_string()),
        warnings,
    };
    let manifest_path = config.output_dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Config(format!("manifest serialization: {e}")))?;
    fs::write(manifest_path, text)?;
    result.map(|_| manifest)
}

fn dispatch(
    config: &ExperimentConfig,
    files: &mut Vec<String>,
    warnings: &mut Vec<String>,
) -> Result<()> {
    match config.experiment {
        Experiment::Manifold => run_manifold(config, files),
        Experiment::Metric => run_metric(config, files),
        Experiment::Flow => run_flow(config, files),
        Experiment::Simulate => run_simulate(config, files),
        Experiment::ExitProb => run_exit_prob(config, files, warnings),
        Experiment::Pitchfork => run_pitchfork(config, files),
        Experiment::CompareReduced => run_compare_reduced(config, files),
    }
}

fn slow_grid(bounds: &[(f64, f64)], count: usize) -> Vec<DVector<f64>> {
    let m = bounds.len();
    let total = count.pow(m as u32);
    let mut out = Vec::with_capacity(total);
    for flat in 0..total {
        let mut rem = flat;
        let mut y = DVector::zeros(m);
        for axis in 0..m {
            let i = rem % count;
            rem /= count;
            let (lo, hi) = bounds[axis];
            y[axis] = lo + (hi - lo) * i as f64 / (count - 1) as f64;
        }
        out.push(y);
    }
    out
}

fn y0_of(config: &ExperimentConfig, m: usize, bounds: &[(f64, f64)]) -> Result<DVector<f64>> {
    match &config.grids.y0 {
        Some(v) => {
            if v.len() != m {
                return Err(Error::Config(format!(
                    "y0 has {} entries, system has m = {m}",
                    v.len()
                )));
            }
            Ok(DVector::from_vec(v.clone()))
        }
        None => Ok(DVector::from_iterator(
            m,
            bounds.iter().map(|&(lo, hi)| 0.5 * (lo + hi)),
        )),
    }
}

fn orbit_options(config: &ExperimentConfig) -> OrbitOptions {
    OrbitOptions {
        fast_dt_cap: config.grids.step_override,
        ..Default::default()
    }
}

fn run_manifold(config: &ExperimentConfig, files: &mut Vec<String>) -> Result<()> {
    let entry = catalog_entry(&config.system)?;
    let sys = &entry.system;
    let eps = config.params.eps;
    let nodes = slow_grid(&sys.domain.bounding_box, config.grids.y_count);
    let mut header: Vec<String> = (0..sys.m).map(|j| format!("y{j}")).collect();
    header.extend((0..sys.n).map(|j| format!("x_star{j}")));
    header.extend((0..sys.n).map(|j| format!("x1_{j}")));
    header.push("max_re_eig".into());
    header.push("class".into());
    let header_refs: Vec<&str> = header.iter().map(|s| s.as_str()).collect();

    let mut warm = DVector::zeros(sys.n);
    let mut rows = Vec::with_capacity(nodes.len());
    for y in &nodes {
        let mp = manifold::manifold_point_with_correction(sys, y, &warm, 1e-12)?;
        warm = mp.x_star.clone();
        let mut row: Vec<CsvValue> = y.iter().map(|&v| CsvValue::F(v)).collect();
        row.extend(mp.x_star.iter().map(|&v| CsvValue::F(v)));
        row.extend(mp.x1.as_ref().unwrap().iter().map(|&v| CsvValue::F(v)));
        row.push(CsvValue::F(mp.max_re_eig()));
        row.push(CsvValue::S(mp.stability_class.as_str().to_string()));
        rows.push(row);
    }
    let path = config.output_dir.join("manifold.csv");
    emit_csv(&path, &header_refs, rows.into_iter())?;
    files.push("manifold.csv".into());
    let _ = eps;
    Ok(())
}

fn run_metric(config: &ExperimentConfig, files: &mut Vec<String>) -> Result<()> {
    let entry = catalog_entry(&config.system)?;
    let sys = &entry.system;
    let params = config.params;
    let nodes = slow_grid(&sys.domain.bounding_box, config.grids.y_count);
    let mut header: Vec<String> = (0..sys.m).map(|j| format!("y{j}")).collect();
    for i in 0..sys.n {
        for j in 0..sys.n {
            header.push(format!("xbar{i}{j}"));
        }
    }
    for i in 0..sys.n {
        for j in 0..sys.m {
            header.push(format!("zbar{i}{j}"));
        }
    }
    header.push("cond".into());
    header.push("controllable".into());
    let header_refs: Vec<&str> = header.iter().map(|s| s.as_str()).collect();

    let mut warm = DVector::zeros(sys.n);
    let mut rows = Vec::with_capacity(nodes.len());
    for y in &nodes {
        let mp = manifold::solve_slow_manifold(sys, y, &warm, 1e-12)?;
        warm = mp.x_star.clone();
        let metric = lyap::metric_at(sys, &params, &mp)?;
        let mut row: Vec<CsvValue> = y.iter().map(|&v| CsvValue::F(v)).collect();
        for i in 0..sys.n {
            for j in 0..sys.n {
                row.push(CsvValue::F(metric.x_bar[(i, j)]));
            }
        }
        for i in 0..sys.n {
            for j in 0..sys.m {
                row.push(CsvValue::F(metric.z_bar[(i, j)]));
            }
        }
        row.push(CsvValue::F(metric.cond));
        row.push(CsvValue::I(metric.controllable as i64));
        rows.push(row);
    }
    let path = config.output_dir.join("metric.csv");
    emit_csv(&path, &header_refs, rows.into_iter())?;
    files.push("metric.csv".into());
    Ok(())
}

fn run_flow(config: &ExperimentConfig, files: &mut Vec<String>) -> Result<()> {
    let entry = catalog_entry(&config.system)?;
    let sys = &entry.system;
    let params = config.params;
    let y0 = y0_of(config, sys.m, &sys.domain.bounding_box)?;
    let orbit = flow::integrate_reduced(
        sys,
        &params,
        &y0,
        &DVector::zeros(sys.n),
        config.grids.t_end,
        &orbit_options(config),
    )?;
    let chi = flow::chi_functions(&orbit, ChiVariant::Slow);
    // layer metric at the start as covariance seed
    let mp = manifold::solve_slow_manifold(sys, &y0, &DVector::zeros(sys.n), 1e-12)?;
    let metric = lyap::metric_at(sys, &params, &mp)?;
    let track = flow::covariance_evolution(
        &orbit,
        &metric.x_bar,
        &metric.z_bar,
        &DMatrix::zeros(sys.m, sys.m),
    )?;
    let u_track = flow::principal_track(&orbit, Propagator::FastU, 0.0, orbit.t_end())?;
    let v_track = flow::principal_track(&orbit, Propagator::SlowV, 0.0, orbit.t_end())?;

    let mut header: Vec<String> = vec!["t".into()];
    header.extend((0..sys.m).map(|j| format!("ydet{j}")));
    header.push("norm_u_t0".into());
    header.push("norm_v_t0".into());
    header.push("chi1".into());
    header.push("chi2".into());
    for i in 0..sys.n {
        for j in 0..sys.n {
            header.push(format!("x{i}{j}"));
        }
    }
    for i in 0..sys.m {
        for j in 0..sys.m {
            header.push(format!("y{i}{j}"));
        }
    }
    let header_refs: Vec<&str> = header.iter().map(|s| s.as_str()).collect();

    let mut rows = Vec::new();
    for (bi, idx) in orbit.base_indices().enumerate() {
        if bi >= chi.times.len() {
            break;
        }
        let mut row = vec![CsvValue::F(orbit.times[idx])];
        row.extend(orbit.y_det[idx].iter().map(|&v| CsvValue::F(v)));
        row.push(CsvValue::F(linalg::op_norm(&u_track[idx])));
        row.push(CsvValue::F(linalg::op_norm(&v_track[idx])));
        row.push(CsvValue::F(chi.chi1[bi]));
        row.push(CsvValue::F(chi.chi2[bi]));
        row.extend(track.x_t[idx].iter().map(|&v| CsvValue::F(v)));
        row.extend(track.y_t[idx].iter().map(|&v| CsvValue::F(v)));
        rows.push(row);
    }
    let path = config.output_dir.join("flow.csv");
    emit_csv(&path, &header_refs, rows.into_iter())?;
    files.push("flow.csv".into());
    Ok(())
}

fn run_simulate(config: &ExperimentConfig, files: &mut Vec<String>) -> Result<()> {
    let entry = catalog_entry(&config.system)?;
    let sys = &entry.system;
    let params = config.params;
    let y0 = y0_of(config, sys.m, &sys.domain.bounding_box)?;
    let t_end = config.grids.t_end;
    let opts = orbit_options(config);
    let (dt, refine, n_steps) = flow::grid_layout(params.eps, t_end, &opts);
    let x0 = manifold::adiabatic_point(sys, &y0, params.eps, &DVector::zeros(sys.n), 1e-12)?;

    // orbit table needed for the linearized variant
    let variant = config.grids.variant;
    let orbit = match variant {
        SimulateVariant::Linearized => Some(flow::integrate_reduced(
            sys, &params, &y0, &x0, t_end, &opts,
        )?),
        _ => None,
    };

    // base-grid accumulators in path order
    let n_base = n_steps / refine + 1;
    let dim = sys.n + sys.m;
    let per_path: Vec<(Vec<f64>, Option<usize>)> =
        sde::run_ensemble(config.n_paths, config.master_seed, |_idx, stream| {
            let mut samples = vec![0.0; n_base * dim];
            let mut record = |i: usize, x: &DVector<f64>, y: &DVector<f64>| {
                if i % refine == 0 {
                    let b = i / refine;
                    for j in 0..sys.n {
                        samples[b * dim + j] = x[j];
                    }
                    for j in 0..sys.m {
                        samples[b * dim + sys.n + j] = y[j];
                    }
                }
            };
            let blow = match variant {
                SimulateVariant::Full => sde::simulate_full_with(
                    sys, &params, &x0, &y0, n_steps, dt, &stream,
                    |i, _t, x, y| record(i, x, y),
                )?,
                SimulateVariant::Linearized => sde::simulate_linearized_with(
                    orbit.as_ref().unwrap(),
                    &params,
                    &DVector::zeros(sys.n),
                    &DVector::zeros(sys.m),
                    &stream,
                    |i, _t, x, y| record(i, x, y),
                )?,
                SimulateVariant::Reduced => {
                    let model = ReducedModel::Stable { sys };
                    let mut warm = x0.clone();
                    sde::simulate_reduced_with(
                        &model, &params, &y0, n_steps, dt, &stream,
                        |i, _t, y| {
                            let xb = manifold::adiabatic_point(sys, y, params.eps, &warm, 1e-12)
                                .unwrap_or_else(|_| warm.clone());
                            warm = xb.clone();
                            record(i, &xb, y);
                        },
                    )?
                }
            };
            Ok((samples, blow))
        })?;

    // summary statistics per base time, reduced in path order
    let mut header: Vec<String> = vec!["t".into()];
    for j in 0..sys.n {
        header.push(format!("mean_x{j}"));
        header.push(format!("std_x{j}"));
    }
    for j in 0..sys.m {
        header.push(format!("mean_y{j}"));
        header.push(format!("std_y{j}"));
    }
    let header_refs: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
    let n_f = config.n_paths as f64;
    let mut rows = Vec::with_capacity(n_base);
    for b in 0..n_base {
        let mut row = vec![CsvValue::F(b as f64 * dt * refine as f64)];
        for j in 0..dim {
            let mut sum = 0.0;
            let mut sum2 = 0.0;
            for (samples, _) in &per_path {
                let v = samples[b * dim + j];
                sum += v;
                sum2 += v * v;
            }
            let mean = sum / n_f;
            let var = (sum2 / n_f - mean * mean).max(0.0) * n_f / (n_f - 1.0).max(1.0);
            row.push(CsvValue::F(mean));
            row.push(CsvValue::F(var.sqrt()));
        }
        rows.push(row);
    }
    let path = config.output_dir.join("summary.csv");
    emit_csv(&path, &header_refs, rows.into_iter())?;
    files.push("summary.csv".into());

    // per-path dump, capped at 100 paths
    let dump_paths = config.n_paths.min(100);
    let mut pheader: Vec<String> = vec!["path".into(), "t".into()];
    pheader.extend((0..sys.n).map(|j| format!("x{j}")));
    pheader.extend((0..sys.m).map(|j| format!("y{j}")));
    let pheader_refs: Vec<&str> = pheader.iter().map(|s| s.as_str()).collect();
    let rows = (0..dump_paths).flat_map(|p| {
        let (samples, _) = &per_path[p];
        (0..n_base).map(move |b| {
            let mut row = vec![
                CsvValue::I(p as i64),
                CsvValue::F(b as f64 * dt * refine as f64),
            ];
            row.extend((0..dim).map(|j| CsvValue::F(samples[b * dim + j])));
            row
        })
    });
    let path = config.output_dir.join("paths.csv");
    emit_csv(&path, &pheader_refs, rows)?;
    files.push("paths.csv".into());
    Ok(())
}

fn run_exit_prob(
    config: &ExperimentConfig,
    files: &mut Vec<String>,
    warnings: &mut Vec<String>,
) -> Result<()> {
    let entry = catalog_entry(&config.system)?;
    let sys = &entry.system;
    let params = config.params;
    let h_grid: Vec<f64> = config
        .grids
        .h_over_sigma
        .iter()
        .map(|r| r * params.sigma)
        .collect();
    let opts = ExitOptions {
        y0: config
            .grids
            .y0
            .as_ref()
            .map(|v| DVector::from_vec(v.clone())),
        resolution: config.grids.field_resolution,
        h0: 1.0,
    };
    let curve = exitlab::exit_probability(
        sys,
        &params,
        &h_grid,
        config.grids.t_end,
        config.n_paths,
        config.master_seed,
        &opts,
    )?;
    let path = config.output_dir.join("exit_curve.csv");
    emit_csv(
        &path,
        &["h", "h_over_sigma", "p_hat", "ci_low", "ci_high", "n_exit", "N"],
        (0..curve.h_grid.len()).map(|j| {
            vec![
                CsvValue::F(curve.h_grid[j]),
                CsvValue::F(curve.h_over_sigma[j]),
                CsvValue::F(curve.p_hat[j]),
                CsvValue::F(curve.ci_low[j]),
                CsvValue::F(curve.ci_high[j]),
                CsvValue::I(curve.n_exit[j] as i64),
                CsvValue::I(curve.n_paths as i64),
            ]
        }),
    )?;
    files.push("exit_curve.csv".into());

    let fit = exitlab::fit_exponent(&curve);
    let fit_row = match &fit {
        Ok(f) => vec![
            CsvValue::F(f.kappa_hat),
            CsvValue::F(f.kappa_lo),
            CsvValue::F(f.kappa_hi),
            CsvValue::F(f.r2),
            CsvValue::F(curve.sigma),
            CsvValue::F(curve.eps),
            CsvValue::F(curve.t_end),
            CsvValue::I(curve.seed as i64),
        ],
        Err(e) => {
            warnings.push(format!("exponent fit unavailable: {e}"));
            vec![
                CsvValue::F(f64::NAN),
                CsvValue::F(f64::NAN),
                CsvValue::F(f64::NAN),
                CsvValue::F(f64::NAN),
                CsvValue::F(curve.sigma),
                CsvValue::F(curve.eps),
                CsvValue::F(curve.t_end),
                CsvValue::I(curve.seed as i64),
            ]
        }
    };
    let path = config.output_dir.join("fit.csv");
    emit_csv(
        &path,
        &["kappa_hat", "kappa_lo", "kappa_hi", "r2", "sigma", "eps", "t_end", "seed"],
        std::iter::once(fit_row),
    )?;
    files.push("fit.csv".into());
    Ok(())
}

fn run_pitchfork(config: &ExperimentConfig, files: &mut Vec<String>) -> Result<()> {
    let params = config.params;
    let opts = bif::PitchforkOptions {
        t0: config.grids.t0,
        horizon_after_zero: config.grids.horizon_after_zero,
        probe_times: config.grids.probe_times.clone(),
        delta: config.grids.escape_delta,
        sigma_ladder: config.grids.sigma_ladder.clone(),
    };
    let report = bif::pitchfork_experiment(&params, config.n_paths, config.master_seed, &opts)?;
    let header = [
        "sigma",
        "eps",
        "t",
        "width_hat",
        "width_pred",
        "escape_median",
        "escape_q25",
        "escape_q75",
    ];
    let width_rows = report.widths.iter().map(|w| {
        vec![
            CsvValue::F(report.sigma),
            CsvValue::F(report.eps),
            CsvValue::F(w.t),
            CsvValue::F(w.width_hat),
            CsvValue::F(w.width_pred),
            CsvValue::Empty,
            CsvValue::Empty,
            CsvValue::Empty,
        ]
    });
    let escape_rows = report.escapes.iter().map(|e| {
        vec![
            CsvValue::F(e.sigma),
            CsvValue::F(report.eps),
            CsvValue::Empty,
            CsvValue::Empty,
            CsvValue::Empty,
            CsvValue::F(e.median),
            CsvValue::F(e.q25),
            CsvValue::F(e.q75),
        ]
    });
    let path = config.output_dir.join("scaling_report.csv");
    emit_csv(&path, &header, width_rows.chain(escape_rows))?;
    files.push("scaling_report.csv".into());

    let path = config.output_dir.join("escape_fit.csv");
    emit_csv(
        &path,
        &["slope", "intercept", "r2", "delta", "eps", "seed"],
        std::iter::once(vec![
            CsvValue::F(report.slope),
            CsvValue::F(report.intercept),
            CsvValue::F(report.r2),
            CsvValue::F(report.delta),
            CsvValue::F(report.eps),
            CsvValue::I(report.seed as i64),
        ]),
    )?;
    files.push("escape_fit.csv".into());
    Ok(())
}

fn run_compare_reduced(config: &ExperimentConfig, files: &mut Vec<String>) -> Result<()> {
    let entry = catalog_entry(&config.system)?;
    let sys = &entry.system;
    let params = config.params;
    let q = config.grids.critical_dim;
    let split = bif::split_at_bifurcation(
        sys,
        &DVector::zeros(sys.n),
        &DVector::zeros(sys.m),
        q,
        config.grids.neighborhood_radius,
    )?;
    let z0 = match &config.grids.z0 {
        Some(v) => DVector::from_vec(v.clone()),
        None => DVector::zeros(q),
    };
    let y0 = y0_of(config, sys.m, &sys.domain.bounding_box)?;
    let stats = bif::compare_full_reduced(
        &split,
        &params,
        &z0,
        &y0,
        config.grids.t_end,
        config.n_paths,
        config.master_seed,
        &bif::TauSpec {
            tube_constant: config.grids.tube_constant,
        },
    )?;
    let path = config.output_dir.join("deviation.csv");
    emit_csv(
        &path,
        &[
            "q25",
            "median",
            "q75",
            "q90",
            "max",
            "stopped_fraction",
            "chi_c1",
            "chi_c2",
            "diag_scale",
            "t_end",
            "N",
            "seed",
        ],
        std::iter::once(vec![
            CsvValue::F(stats.q25),
            CsvValue::F(stats.median),
            CsvValue::F(stats.q75),
            CsvValue::F(stats.q90),
            CsvValue::F(stats.max),
            CsvValue::F(stats.stopped_fraction),
            CsvValue::F(stats.chi_c1),
            CsvValue::F(stats.chi_c2),
            CsvValue::F(stats.diag_scale),
            CsvValue::F(stats.t_end),
            CsvValue::I(stats.n_paths as i64),
            CsvValue::I(stats.seed as i64),
        ]),
    )?;
    files.push("deviation.csv".into());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn base_config(dir: &Path) -> ExperimentConfig {
        ExperimentConfig {
            system: "linear1d".into(),
            params: NoiseParams::new(0.01, 0.03, 0.0).unwrap(),
            experiment: Experiment::ExitProb,
            grids: GridSpec {
                t_end: 0.2,
                h_over_sigma: vec![3.5, 4.0, 4.5, 5.0],
                y0: Some(vec![1.0]),
                field_resolution: 33,
                ..Default::default()
            },
            n_paths: 1000,
            master_seed: 42,
            output_dir: dir.to_path_buf(),
        }
    }

    #[test]
    fn config_round_trips_through_json() {
        let dir = tempdir().unwrap();
        let cfg = base_config(dir.path());
        let text = serde_json::to_string(&cfg).unwrap();
        let back = ExperimentConfig::from_json(&text).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn unknown_system_is_a_config_error() {
        let dir = tempdir().unwrap();
        let mut cfg = base_config(dir.path());
        cfg.system = "does_not_exist".into();
        let err = cfg.validate().unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn unknown_config_fields_are_rejected() {
        let text = r#"{"system": "linear1d", "bogus": 1}"#;
        assert!(ExperimentConfig::from_json(text).is_err());
    }

    #[test]
    fn float_formatting_round_trips() {
        for v in [0.1f64, 1.0 / 3.0, 2.5e-17, -1.2345678901234567e300, 0.0] {
            let mut buf = Vec::new();
            CsvValue::F(v).write_to(&mut buf).unwrap();
            let s = String::from_utf8(buf).unwrap();
            let parsed: f64 = s.parse().unwrap();
            assert_eq!(parsed.to_bits(), v.to_bits(), "round-trip failed for {s}");
        }
    }

    #[test]
    fn empty_table_is_header_only() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("empty.csv");
        emit_csv(&path, &["a", "b"], std::iter::empty()).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text, "a,b\n");
    }

    #[test]
    fn exit_prob_run_produces_artifacts() {
        let dir = tempdir().unwrap();
        let cfg = base_config(dir.path());
        let manifest = run_experiment(&cfg).unwrap();
        assert!(manifest.error.is_none());
        assert!(dir.path().join("exit_curve.csv").exists());
        assert!(dir.path().join("fit.csv").exists());
        assert!(dir.path().join("manifest.json").exists());
        assert!(manifest.files.contains(&"exit_curve.csv".to_string()));
    }

    #[test]
    fn manifest_is_written_on_failure() {
        let dir = tempdir().unwrap();
        let mut cfg = base_config(dir.path());
        // out-of-range level: h0 cap is violated
        cfg.grids.h_over_sigma = vec![3.5, 4.0, 4.5, 100.0];
        assert!(run_experiment(&cfg).is_err());
        let text = fs::read_to_string(dir.path().join("manifest.json")).unwrap();
        assert!(text.contains("error"));
        let manifest: ArtifactManifest = serde_json::from_str(&text).unwrap();
        assert!(manifest.error.is_some());
    }

    #[test]
    fn reruns_are_byte_identical() {
        let dir_a = tempdir().unwrap();
        let dir_b = tempdir().unwrap();
        let mut cfg_a = base_config(dir_a.path());
        cfg_a.grids.h_over_sigma = vec![3.5, 4.0];
        let mut cfg_b = cfg_a.clone();
        cfg_b.output_dir = dir_b.path().to_path_buf();
        run_experiment(&cfg_a).unwrap();
        run_experiment(&cfg_b).unwrap();
        for file in ["exit_curve.csv", "fit.csv"] {
            let a = fs::read(dir_a.path().join(file)).unwrap();
            let b = fs::read(dir_b.path().join(file)).unwrap();
            assert_eq!(a, b, "{file} differs between reruns");
        }
    }

    #[test]
    fn manifold_scan_runs_on_small_grid() {
        let dir = tempdir().unwrap();
        let mut cfg = base_config(dir.path());
        cfg.experiment = Experiment::Manifold;
        cfg.system = "cubic1d".into();
        cfg.grids.y_count = 9;
        run_experiment(&cfg).unwrap();
        let text = fs::read_to_string(dir.path().join("manifold.csv")).unwrap();
        assert_eq!(text.lines().count(), 10);
        assert!(text.starts_with("y0,x_star0,x1_0,max_re_eig,class"));
    }
}
