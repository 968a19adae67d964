//! Slow-fast system definitions and the built-in benchmark catalog.
//!
//! A [`SlowFastSystem`] bundles the drift fields `f`, `g`, the diffusion
//! matrices `F`, `G`, the dimensions `(n, m, k)` and the slow-variable
//! region `𝒟₀`. Field evaluators must be pure: systems are immutable after
//! construction and shared freely across worker threads.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Vector-valued field of (x, y, eps).
pub type VecField = Arc<dyn Fn(&DVector<f64>, &DVector<f64>, f64) -> DVector<f64> + Send + Sync>;
/// Matrix-valued field of (x, y, eps).
pub type MatField = Arc<dyn Fn(&DVector<f64>, &DVector<f64>, f64) -> DMatrix<f64> + Send + Sync>;
/// Membership predicate over the slow variable.
pub type DomainPredicate = Arc<dyn Fn(&DVector<f64>) -> bool + Send + Sync>;

/// Which analytic Jacobian a mismatch refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JacobianKind {
    Fx,
    Fy,
    Gx,
    Gy,
}

impl JacobianKind {
    fn name(self) -> &'static str {
        match self {
            JacobianKind::Fx => "jac_f_x",
            JacobianKind::Fy => "jac_f_y",
            JacobianKind::Gx => "jac_g_x",
            JacobianKind::Gy => "jac_g_y",
        }
    }
}

/// Slow-variable region 𝒟₀: a membership predicate plus a bounding box used
/// for probe generation and metric-field grids.
#[derive(Clone)]
pub struct Domain {
    pub predicate: DomainPredicate,
    /// One (lo, hi) pair per slow coordinate.
    pub bounding_box: Vec<(f64, f64)>,
}

impl Domain {
    /// Axis-aligned box domain.
    pub fn boxed(bounds: Vec<(f64, f64)>) -> Self {
        let b = bounds.clone();
        Domain {
            predicate: Arc::new(move |y: &DVector<f64>| {
                y.iter()
                    .zip(b.iter())
                    .all(|(&yi, &(lo, hi))| yi >= lo && yi <= hi)
            }),
            bounding_box: bounds,
        }
    }

    pub fn contains(&self, y: &DVector<f64>) -> bool {
        (self.predicate)(y)
    }
}

impl fmt::Debug for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Domain")
            .field("bounding_box", &self.bounding_box)
            .finish()
    }
}

/// A slow-fast system
/// `ε x' = f(x,y,ε) + noise`, `y' = g(x,y,ε) + noise`
/// with fast dimension `n`, slow dimension `m` and `k` Brownian channels.
#[derive(Clone)]
pub struct SlowFastSystem {
    pub name: String,
    pub n: usize,
    pub m: usize,
    pub k: usize,
    pub f: VecField,
    pub g: VecField,
    pub cap_f: MatField,
    pub cap_g: MatField,
    pub jac_f_x: Option<MatField>,
    pub jac_f_y: Option<MatField>,
    pub jac_g_x: Option<MatField>,
    pub jac_g_y: Option<MatField>,
    pub domain: Domain,
}

impl fmt::Debug for SlowFastSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SlowFastSystem")
            .field("name", &self.name)
            .field("n", &self.n)
            .field("m", &self.m)
            .field("k", &self.k)
            .finish()
    }
}

/// Finite-difference step used throughout: `max(1e-6, 1e-6 * |point|)`.
pub(crate) fn fd_step(scale: f64) -> f64 {
    (1e-6 * scale.abs()).max(1e-6)
}

impl SlowFastSystem {
    pub fn f(&self, x: &DVector<f64>, y: &DVector<f64>, eps: f64) -> DVector<f64> {
        (self.f)(x, y, eps)
    }

    pub fn g(&self, x: &DVector<f64>, y: &DVector<f64>, eps: f64) -> DVector<f64> {
        (self.g)(x, y, eps)
    }

    pub fn cap_f(&self, x: &DVector<f64>, y: &DVector<f64>, eps: f64) -> DMatrix<f64> {
        (self.cap_f)(x, y, eps)
    }

    pub fn cap_g(&self, x: &DVector<f64>, y: &DVector<f64>, eps: f64) -> DMatrix<f64> {
        (self.cap_g)(x, y, eps)
    }

    /// ∂f/∂x: analytic if supplied, else central finite differences.
    pub fn jac_f_x(&self, x: &DVector<f64>, y: &DVector<f64>, eps: f64) -> DMatrix<f64> {
        match &self.jac_f_x {
            Some(j) => j(x, y, eps),
            None => fd_jacobian_x(&self.f, x, y, eps, self.n),
        }
    }

    /// ∂f/∂y.
    pub fn jac_f_y(&self, x: &DVector<f64>, y: &DVector<f64>, eps: f64) -> DMatrix<f64> {
        match &self.jac_f_y {
            Some(j) => j(x, y, eps),
            None => fd_jacobian_y(&self.f, x, y, eps, self.n),
        }
    }

    /// ∂g/∂x.
    pub fn jac_g_x(&self, x: &DVector<f64>, y: &DVector<f64>, eps: f64) -> DMatrix<f64> {
        match &self.jac_g_x {
            Some(j) => j(x, y, eps),
            None => fd_jacobian_x(&self.g, x, y, eps, self.m),
        }
    }

    /// ∂g/∂y.
    pub fn jac_g_y(&self, x: &DVector<f64>, y: &DVector<f64>, eps: f64) -> DMatrix<f64> {
        match &self.jac_g_y {
            Some(j) => j(x, y, eps),
            None => fd_jacobian_y(&self.g, x, y, eps, self.m),
        }
    }

    /// ∂f/∂ε by one-sided forward difference (f is only defined for ε ≥ 0).
    pub fn df_deps(&self, x: &DVector<f64>, y: &DVector<f64>, eps: f64) -> DVector<f64> {
        let h = 1e-6;
        ((self.f)(x, y, eps + h) - (self.f)(x, y, eps)) / h
    }
}

fn fd_jacobian_x(
    field: &VecField,
    x: &DVector<f64>,
    y: &DVector<f64>,
    eps: f64,
    rows: usize,
) -> DMatrix<f64> {
    let h = fd_step(x.norm());
    let mut jac = DMatrix::zeros(rows, x.len());
    for j in 0..x.len() {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[j] += h;
        xm[j] -= h;
        let col = (field(&xp, y, eps) - field(&xm, y, eps)) / (2.0 * h);
        jac.set_column(j, &col);
    }
    jac
}

fn fd_jacobian_y(
    field: &VecField,
    x: &DVector<f64>,
    y: &DVector<f64>,
    eps: f64,
    rows: usize,
) -> DMatrix<f64> {
    let h = fd_step(y.norm());
    let mut jac = DMatrix::zeros(rows, y.len());
    for j in 0..y.len() {
        let mut yp = y.clone();
        let mut ym = y.clone();
        yp[j] += h;
        ym[j] -= h;
        let col = (field(x, &yp, eps) - field(x, &ym, eps)) / (2.0 * h);
        jac.set_column(j, &col);
    }
    jac
}

/// Noise parameters: timescale ratio ε, fast intensity σ and the slow/fast
/// ratio ρ = σ'/σ.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct NoiseParams {
    pub eps: f64,
    pub sigma: f64,
    pub rho: f64,
}

impl NoiseParams {
    pub fn new(eps: f64, sigma: f64, rho: f64) -> Result<Self> {
        if !(eps > 0.0 && eps < 1.0) {
            return Err(Error::Config(format!("eps must lie in (0, 1), got {eps}")));
        }
        if !(sigma >= 0.0) {
            return Err(Error::Config(format!("sigma must be >= 0, got {sigma}")));
        }
        if !(0.0..=1e3).contains(&rho) {
            return Err(Error::Config(format!("rho must lie in [0, 1e3], got {rho}")));
        }
        Ok(NoiseParams { eps, sigma, rho })
    }

    /// Slow noise intensity σ' = ρσ.
    pub fn sigma_prime(&self) -> f64 {
        self.rho * self.sigma
    }
}

/// One problem found while probing a system.
#[derive(Debug, Clone)]
pub enum ValidationIssue {
    NonFinite {
        field: &'static str,
        x: Vec<f64>,
        y: Vec<f64>,
    },
    JacobianMismatch {
        which: JacobianKind,
        x: Vec<f64>,
        y: Vec<f64>,
        max_rel: f64,
    },
}

/// Outcome of [`validate_system`]; the system is accepted iff no issues.
#[derive(Debug, Clone, Default)]
pub struct ValidationReport {
    pub issues: Vec<ValidationIssue>,
}

impl ValidationReport {
    pub fn is_accepted(&self) -> bool {
        self.issues.is_empty()
    }

    /// Converts the first issue into an error, if any.
    pub fn into_result(self) -> Result<()> {
        match self.issues.into_iter().next() {
            None => Ok(()),
            Some(ValidationIssue::NonFinite { field, x, y }) => Err(Error::EvaluationFailure {
                field,
                location: format!("x={x:?}, y={y:?}"),
            }),
            Some(ValidationIssue::JacobianMismatch { which, x, y, max_rel }) => {
                Err(Error::JacobianMismatch {
                    which: which.name(),
                    location: format!("x={x:?}, y={y:?}"),
                    max_rel,
                    tol: JAC_CHECK_TOL,
                })
            }
        }
    }
}

/// Relative tolerance for the analytic-vs-finite-difference Jacobian check.
pub const JAC_CHECK_TOL: f64 = 1e-5;

/// Probes the fields at the given (x, y) points and cross-checks analytic
/// Jacobians against central differences. Deterministic in the probe order.
pub fn validate_system(sys: &SlowFastSystem, probes: &[(DVector<f64>, DVector<f64>)]) -> ValidationReport {
    let mut report = ValidationReport::default();
    let eps_probe = 0.0;
    for (x, y) in probes {
        let mut check_vec = |name: &'static str, v: &DVector<f64>| {
            if v.iter().any(|e| !e.is_finite()) {
                report.issues.push(ValidationIssue::NonFinite {
                    field: name,
                    x: x.as_slice().to_vec(),
                    y: y.as_slice().to_vec(),
                });
            }
        };
        check_vec("f", &sys.f(x, y, eps_probe));
        check_vec("g", &sys.g(x, y, eps_probe));
        let fm = sys.cap_f(x, y, eps_probe);
        let gm = sys.cap_g(x, y, eps_probe);
        for (name, mat) in [("F", &fm), ("G", &gm)] {
            if mat.iter().any(|e| !e.is_finite()) {
                report.issues.push(ValidationIssue::NonFinite {
                    field: name,
                    x: x.as_slice().to_vec(),
                    y: y.as_slice().to_vec(),
                });
            }
        }

        let mut check_jac = |which: JacobianKind, analytic: &Option<MatField>, fd: DMatrix<f64>| {
            if let Some(jac) = analytic {
                let a = jac(x, y, eps_probe);
                let denom = fd.norm().max(1.0);
                let rel = (a - &fd).norm() / denom;
                if rel > JAC_CHECK_TOL {
                    report.issues.push(ValidationIssue::JacobianMismatch {
                        which,
                        x: x.as_slice().to_vec(),
                        y: y.as_slice().to_vec(),
                        max_rel: rel,
                    });
                }
            }
        };
        check_jac(JacobianKind::Fx, &sys.jac_f_x, fd_jacobian_x(&sys.f, x, y, eps_probe, sys.n));
        check_jac(JacobianKind::Fy, &sys.jac_f_y, fd_jacobian_y(&sys.f, x, y, eps_probe, sys.n));
        check_jac(JacobianKind::Gx, &sys.jac_g_x, fd_jacobian_x(&sys.g, x, y, eps_probe, sys.m));
        check_jac(JacobianKind::Gy, &sys.jac_g_y, fd_jacobian_y(&sys.g, x, y, eps_probe, sys.m));
    }
    report
}

/// Machine-checkable reference facts attached to catalog entries.
#[derive(Clone, Default)]
pub struct ReferenceFacts {
    /// Exact slow manifold x*(y), if known in closed form.
    pub x_star: Option<Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>>,
    /// Exact adiabatic manifold x̄(y, ε), if known.
    pub x_bar: Option<Arc<dyn Fn(&DVector<f64>, f64) -> DVector<f64> + Send + Sync>>,
    /// Exact fast linearization A*(y) on the slow manifold.
    pub a_star: Option<Arc<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>>,
    /// Exact stationary metric X*(y).
    pub x_star_metric: Option<Arc<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>>,
    /// Exact reduced orbit y(t) from y0, if known.
    pub reduced_orbit: Option<Arc<dyn Fn(&DVector<f64>, f64) -> DVector<f64> + Send + Sync>>,
}

impl fmt::Debug for ReferenceFacts {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ReferenceFacts {{ .. }}")
    }
}

/// A catalog entry: the system, default noise parameters and reference facts.
#[derive(Debug, Clone)]
pub struct CatalogEntry {
    pub system: SlowFastSystem,
    pub default_params: NoiseParams,
    pub facts: ReferenceFacts,
}

fn vec1(v: f64) -> DVector<f64> {
    DVector::from_element(1, v)
}

fn const_mat(rows: usize, cols: usize, entries: &[f64]) -> DMatrix<f64> {
    DMatrix::from_row_slice(rows, cols, entries)
}

/// Built-in benchmark systems keyed by name.
///
/// * `linear1d` — ε x' = −x + y, y' = −y, F = G = 1. Slow manifold x* = y,
///   adiabatic manifold y/(1−ε), metric X̄ = 1/2.
/// * `linear1d_coupled` — ε x' = −x + y, y' = −x, F = G = 1; the slow drift
///   reads the fast variable, so reduced-model error is visible.
/// * `linear2d` — fast block diag(−1,−2) towards x*(y) = (y, y), F = I₂,
///   y' = −y, G = (1 0). X* = diag(1/2, 1/4).
/// * `linear2d_yforcing` — as `linear2d` with F depending on y, so the
///   metric genuinely moves along orbits.
/// * `cubic1d` — ε x' = y − x − x³, y' = −y: smooth nonlinear test bed.
/// * `pitchfork` — ε z' = yz − z³, y' = 1: dynamic pitchfork passage.
/// * `pitchfork_augmented` — pitchfork plus one stable fast mode
///   ε x⁻' = −x⁻ + z² feeding back −x⁻ z into the z equation.
pub fn builtin_catalog() -> BTreeMap<String, CatalogEntry> {
    let mut cat = BTreeMap::new();

    // linear1d: eps x' = -x + y, y' = -y.
    cat.insert("linear1d".to_string(), {
        let system = SlowFastSystem {
            name: "linear1d".into(),
            n: 1,
            m: 1,
            k: 1,
            f: Arc::new(|x, y, _| vec1(-x[0] + y[0])),
            g: Arc::new(|_, y, _| vec1(-y[0])),
            cap_f: Arc::new(|_, _, _| const_mat(1, 1, &[1.0])),
            cap_g: Arc::new(|_, _, _| const_mat(1, 1, &[1.0])),
            jac_f_x: Some(Arc::new(|_, _, _| const_mat(1, 1, &[-1.0]))),
            jac_f_y: Some(Arc::new(|_, _, _| const_mat(1, 1, &[1.0]))),
            jac_g_x: Some(Arc::new(|_, _, _| const_mat(1, 1, &[0.0]))),
            jac_g_y: Some(Arc::new(|_, _, _| const_mat(1, 1, &[-1.0]))),
            domain: Domain::boxed(vec![(-2.0, 2.0)]),
        };
        CatalogEntry {
            system,
            default_params: NoiseParams::new(0.01, 0.03, 0.0).unwrap(),
            facts: ReferenceFacts {
                x_star: Some(Arc::new(|y| y.clone())),
                x_bar: Some(Arc::new(|y, eps| y / (1.0 - eps))),
                a_star: Some(Arc::new(|_| const_mat(1, 1, &[-1.0]))),
                x_star_metric: Some(Arc::new(|_| const_mat(1, 1, &[0.5]))),
                reduced_orbit: Some(Arc::new(|y0, t| y0 * (-t).exp())),
            },
        }
    });

    // linear1d_coupled: eps x' = -x + y, y' = -x. The reduced drift is
    // -x̄(y, ε) = -y/(1-ε); full-vs-reduced slow deviation scales as σ√ε.
    cat.insert("linear1d_coupled".to_string(), {
        let system = SlowFastSystem {
            name: "linear1d_coupled".into(),
            n: 1,
            m: 1,
            k: 1,
            f: Arc::new(|x, y, _| vec1(-x[0] + y[0])),
            g: Arc::new(|x, _, _| vec1(-x[0])),
            cap_f: Arc::new(|_, _, _| const_mat(1, 1, &[1.0])),
            cap_g: Arc::new(|_, _, _| const_mat(1, 1, &[1.0])),
            jac_f_x: Some(Arc::new(|_, _, _| const_mat(1, 1, &[-1.0]))),
            jac_f_y: Some(Arc::new(|_, _, _| const_mat(1, 1, &[1.0]))),
            jac_g_x: Some(Arc::new(|_, _, _| const_mat(1, 1, &[-1.0]))),
            jac_g_y: Some(Arc::new(|_, _, _| const_mat(1, 1, &[0.0]))),
            domain: Domain::boxed(vec![(-2.0, 2.0)]),
        };
        CatalogEntry {
            system,
            default_params: NoiseParams::new(0.01, 0.03, 0.0).unwrap(),
            facts: ReferenceFacts {
                x_star: Some(Arc::new(|y| y.clone())),
                a_star: Some(Arc::new(|_| const_mat(1, 1, &[-1.0]))),
                x_star_metric: Some(Arc::new(|_| const_mat(1, 1, &[0.5]))),
                ..Default::default()
            },
        }
    });

    // linear2d: fast block diag(-1,-2) relaxing to (y, y); F = I2.
    cat.insert("linear2d".to_string(), {
        let system = SlowFastSystem {
            name: "linear2d".into(),
            n: 2,
            m: 1,
            k: 2,
            f: Arc::new(|x, y, _| {
                DVector::from_vec(vec![-(x[0] - y[0]), -2.0 * (x[1] - y[0])])
            }),
            g: Arc::new(|_, y, _| vec1(-y[0])),
            cap_f: Arc::new(|_, _, _| DMatrix::identity(2, 2)),
            cap_g: Arc::new(|_, _, _| const_mat(1, 2, &[1.0, 0.0])),
            jac_f_x: Some(Arc::new(|_, _, _| const_mat(2, 2, &[-1.0, 0.0, 0.0, -2.0]))),
            jac_f_y: Some(Arc::new(|_, _, _| const_mat(2, 1, &[1.0, 2.0]))),
            jac_g_x: Some(Arc::new(|_, _, _| const_mat(1, 2, &[0.0, 0.0]))),
            jac_g_y: Some(Arc::new(|_, _, _| const_mat(1, 1, &[-1.0]))),
            domain: Domain::boxed(vec![(-2.0, 2.0)]),
        };
        CatalogEntry {
            system,
            default_params: NoiseParams::new(0.01, 0.03, 0.5).unwrap(),
            facts: ReferenceFacts {
                x_star: Some(Arc::new(|y| DVector::from_vec(vec![y[0], y[0]]))),
                a_star: Some(Arc::new(|_| const_mat(2, 2, &[-1.0, 0.0, 0.0, -2.0]))),
                x_star_metric: Some(Arc::new(|_| const_mat(2, 2, &[0.5, 0.0, 0.0, 0.25]))),
                reduced_orbit: Some(Arc::new(|y0, t| y0 * (-t).exp())),
                ..Default::default()
            },
        }
    });

    // linear2d_yforcing: same fast dynamics, y-dependent diffusion.
    cat.insert("linear2d_yforcing".to_string(), {
        let system = SlowFastSystem {
            name: "linear2d_yforcing".into(),
            n: 2,
            m: 1,
            k: 2,
            f: Arc::new(|x, y, _| {
                DVector::from_vec(vec![-(x[0] - y[0]), -2.0 * (x[1] - y[0])])
            }),
            g: Arc::new(|_, y, _| vec1(-y[0])),
            cap_f: Arc::new(|_, y, _| {
                let s = 1.0 + 0.5 * y[0].tanh();
                const_mat(2, 2, &[s, 0.0, 0.0, 1.0])
            }),
            cap_g: Arc::new(|_, _, _| const_mat(1, 2, &[1.0, 0.0])),
            jac_f_x: Some(Arc::new(|_, _, _| const_mat(2, 2, &[-1.0, 0.0, 0.0, -2.0]))),
            jac_f_y: Some(Arc::new(|_, _, _| const_mat(2, 1, &[1.0, 2.0]))),
            jac_g_x: Some(Arc::new(|_, _, _| const_mat(1, 2, &[0.0, 0.0]))),
            jac_g_y: Some(Arc::new(|_, _, _| const_mat(1, 1, &[-1.0]))),
            domain: Domain::boxed(vec![(-2.0, 2.0)]),
        };
        CatalogEntry {
            system,
            default_params: NoiseParams::new(0.01, 0.03, 0.0).unwrap(),
            facts: ReferenceFacts {
                x_star: Some(Arc::new(|y| DVector::from_vec(vec![y[0], y[0]]))),
                a_star: Some(Arc::new(|_| const_mat(2, 2, &[-1.0, 0.0, 0.0, -2.0]))),
                x_star_metric: Some(Arc::new(|y| {
                    let s = 1.0 + 0.5 * y[0].tanh();
                    const_mat(2, 2, &[0.5 * s * s, 0.0, 0.0, 0.25])
                })),
                reduced_orbit: Some(Arc::new(|y0, t| y0 * (-t).exp())),
                ..Default::default()
            },
        }
    });

    // cubic1d: eps x' = y - x - x^3, y' = -y.
    cat.insert("cubic1d".to_string(), {
        let system = SlowFastSystem {
            name: "cubic1d".into(),
            n: 1,
            m: 1,
            k: 1,
            f: Arc::new(|x, y, _| vec1(y[0] - x[0] - x[0].powi(3))),
            g: Arc::new(|_, y, _| vec1(-y[0])),
            cap_f: Arc::new(|_, _, _| const_mat(1, 1, &[1.0])),
            cap_g: Arc::new(|_, _, _| const_mat(1, 1, &[1.0])),
            jac_f_x: Some(Arc::new(|x, _, _| const_mat(1, 1, &[-1.0 - 3.0 * x[0] * x[0]]))),
            jac_f_y: Some(Arc::new(|_, _, _| const_mat(1, 1, &[1.0]))),
            jac_g_x: Some(Arc::new(|_, _, _| const_mat(1, 1, &[0.0]))),
            jac_g_y: Some(Arc::new(|_, _, _| const_mat(1, 1, &[-1.0]))),
            domain: Domain::boxed(vec![(-2.0, 2.0)]),
        };
        CatalogEntry {
            system,
            default_params: NoiseParams::new(0.01, 0.02, 0.0).unwrap(),
            facts: ReferenceFacts::default(),
        }
    });

    // pitchfork: eps z' = y z - z^3, y' = 1 (Brownian drive on z only).
    cat.insert("pitchfork".to_string(), {
        let system = SlowFastSystem {
            name: "pitchfork".into(),
            n: 1,
            m: 1,
            k: 1,
            f: Arc::new(|z, y, _| vec1(y[0] * z[0] - z[0].powi(3))),
            g: Arc::new(|_, _, _| vec1(1.0)),
            cap_f: Arc::new(|_, _, _| const_mat(1, 1, &[1.0])),
            cap_g: Arc::new(|_, _, _| const_mat(1, 1, &[0.0])),
            jac_f_x: Some(Arc::new(|z, y, _| const_mat(1, 1, &[y[0] - 3.0 * z[0] * z[0]]))),
            jac_f_y: Some(Arc::new(|z, _, _| const_mat(1, 1, &[z[0]]))),
            jac_g_x: Some(Arc::new(|_, _, _| const_mat(1, 1, &[0.0]))),
            jac_g_y: Some(Arc::new(|_, _, _| const_mat(1, 1, &[0.0]))),
            domain: Domain::boxed(vec![(-2.0, 2.0)]),
        };
        CatalogEntry {
            system,
            default_params: NoiseParams::new(1e-3, 1e-3, 0.0).unwrap(),
            facts: ReferenceFacts {
                reduced_orbit: Some(Arc::new(|y0, t| vec1(y0[0] + t))),
                ..Default::default()
            },
        }
    });

    // pitchfork_augmented: one stable fast mode x⁻ on top of the pitchfork,
    //   eps x⁻' = -x⁻ + z², eps z' = y z - z³ - x⁻ z, y' = 1,
    // fast state ordered (x⁻, z). Centre manifold x̄⁻(z, y, 0) = z².
    cat.insert("pitchfork_augmented".to_string(), {
        let system = SlowFastSystem {
            name: "pitchfork_augmented".into(),
            n: 2,
            m: 1,
            k: 2,
            f: Arc::new(|x, y, _| {
                let (xm, z) = (x[0], x[1]);
                DVector::from_vec(vec![-xm + z * z, y[0] * z - z.powi(3) - xm * z])
            }),
            g: Arc::new(|_, _, _| vec1(1.0)),
            cap_f: Arc::new(|_, _, _| DMatrix::identity(2, 2)),
            cap_g: Arc::new(|_, _, _| const_mat(1, 2, &[0.0, 0.0])),
            jac_f_x: Some(Arc::new(|x, y, _| {
                let (xm, z) = (x[0], x[1]);
                const_mat(2, 2, &[-1.0, 2.0 * z, -z, y[0] - 3.0 * z * z - xm])
            })),
            jac_f_y: Some(Arc::new(|x, _, _| const_mat(2, 1, &[0.0, x[1]]))),
            jac_g_x: Some(Arc::new(|_, _, _| const_mat(1, 2, &[0.0, 0.0]))),
            jac_g_y: Some(Arc::new(|_, _, _| const_mat(1, 1, &[0.0]))),
            domain: Domain::boxed(vec![(-2.0, 2.0)]),
        };
        CatalogEntry {
            system,
            default_params: NoiseParams::new(0.01, 0.03, 0.0).unwrap(),
            facts: ReferenceFacts::default(),
        }
    });

    cat
}

/// Looks up a catalog system by name.
pub fn catalog_entry(name: &str) -> Result<CatalogEntry> {
    builtin_catalog()
        .remove(name)
        .ok_or_else(|| Error::Config(format!("unknown catalog system `{name}`")))
}

/// Deterministic probe points on the domain bounding box (corners + center).
pub fn default_probes(sys: &SlowFastSystem, x_scale: f64) -> Vec<(DVector<f64>, DVector<f64>)> {
    let mut probes = Vec::new();
    let center: DVector<f64> = DVector::from_iterator(
        sys.m,
        sys.domain.bounding_box.iter().map(|&(lo, hi)| 0.5 * (lo + hi)),
    );
    let mut ys = vec![center];
    for j in 0..sys.m {
        let (lo, hi) = sys.domain.bounding_box[j];
        for v in [lo + 0.25 * (hi - lo), lo + 0.75 * (hi - lo)] {
            let mut y = ys[0].clone();
            y[j] = v;
            ys.push(y);
        }
    }
    for y in ys {
        for sx in [-1.0, 0.0, 1.0] {
            probes.push((DVector::from_element(sys.n, sx * x_scale), y.clone()));
        }
    }
    probes
}
