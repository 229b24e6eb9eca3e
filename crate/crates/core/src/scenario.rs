//! Scenario assembly and validation: dynamics, nominal controller, barrier,
//! metric matrices, and the class-K-infinity comparison function `gamma`.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use thiserror::Error;

use crate::expr::{self, Expr};
use crate::geometry::{
    proj_boundary_euclidean, GeometryError, LevelSet, SpdMatrix, State, BOUNDARY_TOL,
};

pub mod file;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("expression parse error: {0}")]
    Parse(#[from] expr::ParseError),
    #[error("expression evaluation error: {0}")]
    Eval(#[from] expr::EvalError),
    #[error("barrier is not differentiable: {0}")]
    Diff(#[from] expr::DiffError),
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

// ───────────────────────── barrier ─────────────────────────

#[derive(Debug, Clone, PartialEq)]
pub enum BarrierKind {
    /// `h(x) = c - x^T Q x`, an ellipsoidal safe set around the origin.
    Quadratic { c: f64, q: SpdMatrix },
    /// User expression with symbolic gradient (auto-derived when omitted).
    Expr { h: Expr, grad: Vec<Expr> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Barrier {
    pub kind: BarrierKind,
    /// Below this gradient norm the boundary is considered degenerate.
    pub gtol: f64,
}

impl Barrier {
    pub fn quadratic(c: f64, q: SpdMatrix) -> Result<Self, ScenarioError> {
        if c <= 0.0 {
            return Err(ScenarioError::Invalid(format!(
                "quadratic barrier level must be positive, got {c}"
            )));
        }
        Ok(Self {
            kind: BarrierKind::Quadratic { c, q },
            gtol: 1e-8,
        })
    }

    /// Builds an expression barrier; when `grad` is `None` the gradient is
    /// derived symbolically, which requires `h` to be smooth.
    pub fn from_expr(h: Expr, grad: Option<Vec<Expr>>, dim: usize) -> Result<Self, ScenarioError> {
        let grad = match grad {
            Some(g) => {
                if g.len() != dim {
                    return Err(ScenarioError::Invalid(format!(
                        "gradient has {} components, expected {dim}",
                        g.len()
                    )));
                }
                g
            }
            None => (0..dim)
                .map(|i| expr::differentiate(&h, i))
                .collect::<Result<_, _>>()?,
        };
        Ok(Self {
            kind: BarrierKind::Expr { h, grad },
            gtol: 1e-8,
        })
    }

    pub fn value(&self, x: &State) -> Result<f64, ScenarioError> {
        match &self.kind {
            BarrierKind::Quadratic { c, q } => Ok(c - q.inner(x, x)?),
            BarrierKind::Expr { h, .. } => {
                Ok(expr::evaluate(h, x.as_slice(), &HashMap::new())?)
            }
        }
    }

    pub fn gradient(&self, x: &State) -> Result<State, ScenarioError> {
        match &self.kind {
            BarrierKind::Quadratic { q, .. } => Ok(q.apply(x) * -2.0),
            BarrierKind::Expr { grad, .. } => {
                let vals: Result<Vec<f64>, _> = grad
                    .iter()
                    .map(|g| expr::evaluate(g, x.as_slice(), &HashMap::new()))
                    .collect();
                Ok(DVector::from_vec(vals?))
            }
        }
    }
}

impl LevelSet for Barrier {
    fn value(&self, x: &State) -> Result<f64, GeometryError> {
        Barrier::value(self, x).map_err(|e| GeometryError::RootFindFailed {
            detail: e.to_string(),
        })
    }
    fn gradient(&self, x: &State) -> Result<State, GeometryError> {
        Barrier::gradient(self, x).map_err(|e| GeometryError::RootFindFailed {
            detail: e.to_string(),
        })
    }
    fn gradient_tol(&self) -> f64 {
        self.gtol
    }
    fn quadratic(&self) -> Option<(f64, &SpdMatrix)> {
        match &self.kind {
            BarrierKind::Quadratic { c, q } => Some((*c, q)),
            BarrierKind::Expr { .. } => None,
        }
    }
}

// ───────────────────────── fields ─────────────────────────

#[derive(Debug, Clone, PartialEq)]
pub enum Dynamics {
    Linear(DMatrix<f64>),
    Affine(DMatrix<f64>, DVector<f64>),
    Expr(Vec<Expr>),
}

impl Dynamics {
    pub fn eval(&self, x: &State) -> Result<State, ScenarioError> {
        match self {
            Dynamics::Linear(a) => Ok(a * x),
            Dynamics::Affine(a, b) => Ok(a * x + b),
            Dynamics::Expr(components) => {
                let vals: Result<Vec<f64>, _> = components
                    .iter()
                    .map(|e| expr::evaluate(e, x.as_slice(), &HashMap::new()))
                    .collect();
                Ok(DVector::from_vec(vals?))
            }
        }
    }

    fn dim_ok(&self, dim: usize) -> bool {
        match self {
            Dynamics::Linear(a) => a.nrows() == dim && a.ncols() == dim,
            Dynamics::Affine(a, b) => a.nrows() == dim && a.ncols() == dim && b.len() == dim,
            Dynamics::Expr(c) => c.len() == dim,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub enum Controller {
    #[default]
    None,
    Linear(DMatrix<f64>),
    Expr(Vec<Expr>),
}

impl Controller {
    pub fn eval(&self, x: &State) -> Result<State, ScenarioError> {
        match self {
            Controller::None => Ok(DVector::zeros(x.len())),
            Controller::Linear(k) => Ok(k * x),
            Controller::Expr(components) => {
                let vals: Result<Vec<f64>, _> = components
                    .iter()
                    .map(|e| expr::evaluate(e, x.as_slice(), &HashMap::new()))
                    .collect();
                Ok(DVector::from_vec(vals?))
            }
        }
    }

    fn dim_ok(&self, dim: usize) -> bool {
        match self {
            Controller::None => true,
            Controller::Linear(k) => k.nrows() == dim && k.ncols() == dim,
            Controller::Expr(c) => c.len() == dim,
        }
    }
}

// ───────────────────────── gamma ─────────────────────────

/// Class K-infinity comparison function bounding the distance to the
/// boundary by the barrier value: `d(x, bd S) <= gamma(h(x))`.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaFn {
    LinearSlope(f64),
    /// Piecewise-linear, strictly increasing through the origin; extrapolates
    /// with the last segment slope so the function is unbounded.
    Tabulated(Vec<(f64, f64)>),
}

impl GammaFn {
    pub fn linear(slope: f64) -> Result<Self, ScenarioError> {
        if !(slope > 0.0) {
            return Err(ScenarioError::Invalid(format!(
                "gamma slope must be positive, got {slope}"
            )));
        }
        Ok(GammaFn::LinearSlope(slope))
    }

    pub fn tabulated(knots: Vec<(f64, f64)>) -> Result<Self, ScenarioError> {
        if knots.len() < 2 || knots[0] != (0.0, 0.0) {
            return Err(ScenarioError::Invalid(
                "gamma table must start at (0, 0) and have at least 2 knots".into(),
            ));
        }
        for w in knots.windows(2) {
            if !(w[1].0 > w[0].0 && w[1].1 > w[0].1) {
                return Err(ScenarioError::Invalid(format!(
                    "gamma table not strictly increasing at ({}, {})",
                    w[1].0, w[1].1
                )));
            }
        }
        Ok(GammaFn::Tabulated(knots))
    }

    pub fn eval(&self, s: f64) -> f64 {
        debug_assert!(s >= 0.0);
        match self {
            GammaFn::LinearSlope(k) => k * s,
            GammaFn::Tabulated(knots) => interp(knots, s, |k| (k.0, k.1)),
        }
    }

    pub fn inverse(&self, r: f64) -> f64 {
        debug_assert!(r >= 0.0);
        match self {
            GammaFn::LinearSlope(k) => r / k,
            GammaFn::Tabulated(knots) => interp(knots, r, |k| (k.1, k.0)),
        }
    }
}

fn interp(knots: &[(f64, f64)], s: f64, axis: impl Fn(&(f64, f64)) -> (f64, f64)) -> f64 {
    let n = knots.len();
    let (last_x, last_y) = axis(&knots[n - 1]);
    if s >= last_x {
        let (prev_x, prev_y) = axis(&knots[n - 2]);
        let slope = (last_y - prev_y) / (last_x - prev_x);
        return last_y + slope * (s - last_x);
    }
    for w in knots.windows(2) {
        let (x0, y0) = axis(&w[0]);
        let (x1, y1) = axis(&w[1]);
        if s <= x1 {
            return y0 + (y1 - y0) * (s - x0) / (x1 - x0);
        }
    }
    unreachable!()
}

/// The analytic comparison function for a quadratic barrier
/// `h(x) = c - x^T Q x`: a linear `gamma` with slope `1/sqrt(c * lambda_min(Q))`.
pub fn gamma_for_quadratic(c: f64, q: &SpdMatrix) -> Result<GammaFn, ScenarioError> {
    if c <= 0.0 {
        return Err(ScenarioError::Invalid("barrier level must be positive".into()));
    }
    GammaFn::linear(1.0 / (c * q.min_eig()).sqrt())
}

/// Fits a tabulated `gamma` for barriers without an analytic one: samples
/// `(h(x), d(x, bd S))` pairs, takes a monotone envelope over a knot grid
/// and inflates it by 1.1. The result is a valid majorant for the sampled
/// points only; validation re-checks it on fresh samples.
pub fn fit_gamma_sampled<R: Rng, B>(
    barrier: &B,
    bounding_box: &(State, State),
    samples: usize,
    rng: &mut R,
) -> Result<GammaFn, ScenarioError>
where
    B: LevelSet + ?Sized,
{
    let (lo, hi) = bounding_box;
    let dim = lo.len();
    let mut pairs: Vec<(f64, f64)> = Vec::new();
    let mut tries = 0;
    while pairs.len() < samples && tries < samples * 50 {
        tries += 1;
        let x = DVector::from_fn(dim, |i, _| rng.gen_range(lo[i]..=hi[i]));
        let h = match barrier.value(&x) {
            Ok(v) => v,
            Err(_) => continue,
        };
        if h < 0.0 {
            continue;
        }
        let Ok(y) = proj_boundary_euclidean(&x, barrier) else {
            continue;
        };
        pairs.push((h, (&x - &y).norm()));
    }
    if pairs.len() < 16 {
        return Err(ScenarioError::Invalid(
            "too few interior samples for gamma fit".into(),
        ));
    }
    let h_max = pairs.iter().map(|p| p.0).fold(0.0, f64::max);
    let n_knots = 32;
    let mut knots = vec![(0.0, 0.0)];
    let mut env: f64 = 0.0;
    for k in 1..=n_knots {
        let s = h_max * (k as f64) / (n_knots as f64);
        let d_max = pairs
            .iter()
            .filter(|p| p.0 <= s)
            .map(|p| p.1)
            .fold(0.0, f64::max);
        // strict increase is required for invertibility
        env = (1.1 * d_max).max(env + 1e-9 * h_max.max(1.0));
        knots.push((s, env));
    }
    GammaFn::tabulated(knots)
}

// ───────────────────────── scenario ─────────────────────────

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub dim: usize,
    pub dynamics: Dynamics,
    pub controller: Controller,
    pub barrier: Barrier,
    /// QP cost metric.
    pub p: SpdMatrix,
    /// Lyapunov metric of the nominal closed loop, when known.
    pub g: Option<SpdMatrix>,
    pub a: f64,
    pub gamma: GammaFn,
    /// Declared bounding box for sampling; derived from the ellipsoid
    /// extents for quadratic barriers, required for expression barriers.
    pub bounding_box: Option<(State, State)>,
}

impl Scenario {
    pub fn new(
        name: impl Into<String>,
        dynamics: Dynamics,
        controller: Controller,
        barrier: Barrier,
        p: SpdMatrix,
        g: Option<SpdMatrix>,
        a: f64,
        gamma: GammaFn,
        bounding_box: Option<(State, State)>,
    ) -> Result<Self, ScenarioError> {
        let dim = p.dim();
        if !(a > 0.0) {
            return Err(ScenarioError::Invalid(format!("a must be positive, got {a}")));
        }
        if !dynamics.dim_ok(dim) || !controller.dim_ok(dim) {
            return Err(ScenarioError::Invalid(
                "dynamics/controller dimension mismatch".into(),
            ));
        }
        if let Some(g) = &g {
            if g.dim() != dim {
                return Err(ScenarioError::Invalid("G dimension mismatch".into()));
            }
        }
        if let BarrierKind::Quadratic { q, .. } = &barrier.kind {
            if q.dim() != dim {
                return Err(ScenarioError::Invalid("barrier dimension mismatch".into()));
            }
        }
        let bounding_box = match (&barrier.kind, bounding_box) {
            (_, Some(bb)) => {
                if bb.0.len() != dim || bb.1.len() != dim {
                    return Err(ScenarioError::Invalid("bounding box dimension mismatch".into()));
                }
                Some(bb)
            }
            (BarrierKind::Quadratic { c, q }, None) => Some(quadratic_extent_box(*c, q)?),
            (BarrierKind::Expr { .. }, None) => None,
        };
        Ok(Self {
            name: name.into(),
            dim,
            dynamics,
            controller,
            barrier,
            p,
            g,
            a,
            gamma,
            bounding_box,
        })
    }

    /// Copy of the scenario with a different constraint parameter `a`.
    pub fn with_a(&self, a: f64) -> Result<Self, ScenarioError> {
        if !(a > 0.0) {
            return Err(ScenarioError::Invalid(format!("a must be positive, got {a}")));
        }
        let mut s = self.clone();
        s.a = a;
        Ok(s)
    }

    /// Effective (closed-loop nominal) field `f0 = f + u0`.
    pub fn effective(&self, x: &State) -> Result<State, ScenarioError> {
        let f = self.dynamics.eval(x)?;
        match &self.controller {
            Controller::None => Ok(f),
            other => Ok(f + other.eval(x)?),
        }
    }

    /// The effective field as a closure, for the analysis machinery.
    pub fn effective_field(&self) -> impl Fn(&State) -> Result<State, ScenarioError> + '_ {
        move |x| self.effective(x)
    }

    pub fn h(&self, x: &State) -> Result<f64, ScenarioError> {
        self.barrier.value(x)
    }

    pub fn grad_h(&self, x: &State) -> Result<State, ScenarioError> {
        self.barrier.gradient(x)
    }

    /// Lie derivative of `h` along the effective field.
    pub fn lie_h(&self, x: &State) -> Result<f64, ScenarioError> {
        Ok(self.grad_h(x)?.dot(&self.effective(x)?))
    }

    pub fn bounding_box(&self) -> Result<(State, State), ScenarioError> {
        self.bounding_box.clone().ok_or_else(|| {
            ScenarioError::Invalid("scenario has no bounding box; declare one".into())
        })
    }

    /// Rejection-samples a point of the safe set from the bounding box.
    pub fn sample_in_set<R: Rng>(&self, rng: &mut R) -> Result<State, ScenarioError> {
        let (lo, hi) = self.bounding_box()?;
        for _ in 0..10_000 {
            let x = DVector::from_fn(self.dim, |i, _| rng.gen_range(lo[i]..=hi[i]));
            if self.h(&x)? >= 0.0 {
                return Ok(x);
            }
        }
        Err(ScenarioError::Invalid(
            "rejection sampling failed: safe set has negligible volume in its box".into(),
        ))
    }

    /// Samples `n` points on the boundary. Quadratic barriers are sampled
    /// parametrically (exact boundary membership up to rounding); other
    /// barriers project interior samples onto the boundary.
    pub fn boundary_points<R: Rng>(
        &self,
        n: usize,
        rng: &mut R,
    ) -> Result<Vec<State>, ScenarioError> {
        let mut out = Vec::with_capacity(n);
        match &self.barrier.kind {
            BarrierKind::Quadratic { c, q } => {
                for _ in 0..n {
                    let u = random_direction(self.dim, rng);
                    let r = (c / q.inner(&u, &u)?).sqrt();
                    out.push(u * r);
                }
            }
            BarrierKind::Expr { .. } => {
                for _ in 0..n {
                    let x = self.sample_in_set(rng)?;
                    out.push(proj_boundary_euclidean(&x, &self.barrier)?);
                }
            }
        }
        Ok(out)
    }
}

fn random_direction<R: Rng>(dim: usize, rng: &mut R) -> State {
    loop {
        let v = DVector::from_fn(dim, |_, _| {
            // Box-Muller standard normal
            let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
            let u2: f64 = rng.gen_range(0.0..1.0);
            (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
        });
        let n = v.norm();
        if n > 1e-6 {
            return v / n;
        }
    }
}

/// Axis-aligned bounding box of the ellipsoid `x^T Q x <= c`: the extent
/// along axis `i` is `sqrt(c * (Q^{-1})_ii)`.
fn quadratic_extent_box(c: f64, q: &SpdMatrix) -> Result<(State, State), ScenarioError> {
    let n = q.dim();
    let mut ext = DVector::zeros(n);
    for i in 0..n {
        let mut e = DVector::zeros(n);
        e[i] = 1.0;
        let qi = q.solve(&e)?;
        ext[i] = (c * qi[i]).sqrt();
    }
    Ok((-ext.clone(), ext))
}

// ───────────────────────── validation ─────────────────────────

#[derive(Debug, Clone, serde::Serialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
    pub witness: Option<Vec<f64>>,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
}

impl ValidationReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.pass)
    }
}

/// Numerically spot-checks the scenario's standing assumptions: boundary
/// gradient regularity, origin equilibrium, strong G-monotonicity of the
/// negated effective field, the `gamma` distance bound, and (heuristically)
/// compactness of the safe set.
pub fn validate_scenario<R: Rng>(
    s: &Scenario,
    samples: usize,
    rng: &mut R,
) -> Result<ValidationReport, ScenarioError> {
    let mut checks = Vec::new();

    // h(0) > 0: origin strictly inside the safe set.
    let origin = DVector::zeros(s.dim);
    let h0 = s.h(&origin)?;
    checks.push(Check {
        name: "origin_in_interior".into(),
        pass: h0 > 0.0,
        detail: format!("h(0) = {h0:.6e}"),
        witness: None,
    });

    // Boundary gradient nonvanishing.
    let mut worst_g = f64::INFINITY;
    let mut worst_at = None;
    for z in s.boundary_points(samples, rng)? {
        let g = s.grad_h(&z)?.norm();
        if g < worst_g {
            worst_g = g;
            worst_at = Some(z.as_slice().to_vec());
        }
    }
    checks.push(Check {
        name: "boundary_gradient_nonvanishing".into(),
        pass: worst_g > s.barrier.gtol,
        detail: format!("min sampled ||grad h|| = {worst_g:.6e}"),
        witness: if worst_g > s.barrier.gtol {
            None
        } else {
            worst_at
        },
    });

    // Origin equilibrium of the effective field (when a controller is set).
    if !matches!(s.controller, Controller::None) {
        let f0 = s.effective(&origin)?.norm();
        checks.push(Check {
            name: "origin_equilibrium".into(),
            pass: f0 <= 1e-9,
            detail: format!("||f0(0)|| = {f0:.6e}"),
            witness: None,
        });
    }

    // Strong G-monotonicity of -f0 on sampled pairs.
    if let Some(g) = &s.g {
        let mut min_ratio = f64::INFINITY;
        let mut min_at = None;
        for _ in 0..samples {
            let x = s.sample_in_set(rng)?;
            let y = s.sample_in_set(rng)?;
            let e = &x - &y;
            let en = g.norm(&e)?;
            if en < 1e-9 {
                continue;
            }
            let df = s.effective(&x)? - s.effective(&y)?;
            let ratio = g.inner(&e, &(-df))? / (en * en);
            if ratio < min_ratio {
                min_ratio = ratio;
                min_at = Some(x.as_slice().to_vec());
            }
        }
        checks.push(Check {
            name: "strong_g_monotonicity".into(),
            pass: min_ratio > 0.0,
            detail: format!("min sampled modulus = {min_ratio:.6e}"),
            witness: if min_ratio > 0.0 { None } else { min_at },
        });
    }

    // gamma bound: d(x, bd S) <= gamma(h(x)) on interior samples.
    let mut worst_slack = f64::INFINITY;
    let mut worst_at = None;
    for _ in 0..samples {
        let x = s.sample_in_set(rng)?;
        let y = proj_boundary_euclidean(&x, &s.barrier)?;
        let d = (&x - &y).norm();
        let slack = s.gamma.eval(s.h(&x)?.max(0.0)) - d;
        if slack < worst_slack {
            worst_slack = slack;
            worst_at = Some(x.as_slice().to_vec());
        }
    }
    checks.push(Check {
        name: "gamma_distance_bound".into(),
        pass: worst_slack >= -1e-8,
        detail: format!("min slack gamma(h) - d = {worst_slack:.6e}"),
        witness: if worst_slack >= -1e-8 { None } else { worst_at },
    });

    // Compactness heuristic: the level set must not touch the declared box.
    if let Ok((lo, hi)) = s.bounding_box() {
        let mut touches = None;
        'faces: for axis in 0..s.dim {
            for &side in &[lo[axis], hi[axis]] {
                for _ in 0..samples.min(200) {
                    let mut x = DVector::from_fn(s.dim, |i, _| rng.gen_range(lo[i]..=hi[i]));
                    x[axis] = side;
                    if s.h(&x)? >= -BOUNDARY_TOL {
                        touches = Some(x.as_slice().to_vec());
                        break 'faces;
                    }
                }
            }
        }
        checks.push(Check {
            name: "compactness_heuristic".into(),
            pass: touches.is_none(),
            detail: "safe set stays inside the declared bounding box".into(),
            witness: touches,
        });
    } else {
        checks.push(Check {
            name: "compactness_heuristic".into(),
            pass: false,
            detail: "no bounding box declared for an expression barrier".into(),
            witness: None,
        });
    }

    Ok(ValidationReport { checks })
}

// ───────────────────────── built-in scenarios ─────────────────────────

fn ellipse_q() -> SpdMatrix {
    SpdMatrix::from_rows(&[vec![3.0, 2.0], vec![2.0, 2.0]]).expect("SPD")
}

fn lyapunov_g() -> SpdMatrix {
    SpdMatrix::from_rows(&[vec![0.625, 0.125], vec![0.125, 2.625]]).expect("SPD")
}

/// The built-in safe-stabilization example: `f(x) = x`, nominal controller
/// `u0(x) = (-2 x1 - 4 x2, x1 - x2)`, ellipsoidal safe set of level 9, QP
/// metric equal to the Lyapunov metric `G`.
pub fn paper_example(a: f64) -> Scenario {
    let g = lyapunov_g();
    build_example(a, g.clone(), Some(g), "paper-example")
}

/// Same closed loop but with the deliberately wrong QP metric `diag(3, 1)`,
/// which introduces a stable undesired equilibrium on the boundary.
pub fn paper_example_wrong_p(a: f64) -> Scenario {
    let p = SpdMatrix::from_rows(&[vec![3.0, 0.0], vec![0.0, 1.0]]).expect("SPD");
    build_example(a, p, Some(lyapunov_g()), "paper-example-wrongP")
}

fn build_example(a: f64, p: SpdMatrix, g: Option<SpdMatrix>, name: &str) -> Scenario {
    let q = ellipse_q();
    let gamma = gamma_for_quadratic(9.0, &q).expect("valid gamma");
    Scenario::new(
        name,
        Dynamics::Linear(DMatrix::identity(2, 2)),
        Controller::Linear(DMatrix::from_row_slice(2, 2, &[-2.0, -4.0, 1.0, -1.0])),
        Barrier::quadratic(9.0, q).expect("valid barrier"),
        p,
        g,
        a,
        gamma,
        None,
    )
    .expect("built-in scenario is valid")
}

/// The same example with the barrier written as a parsed expression, for
/// cross-checking the expression pipeline against the quadratic fast path.
pub fn paper_example_expr(a: f64) -> Scenario {
    let q = ellipse_q();
    let h = expr::parse_expression("9 - (3*x1^2 + 4*x1*x2 + 2*x2^2)", 2).expect("parses");
    let barrier = Barrier::from_expr(h, None, 2).expect("differentiable");
    let gamma = gamma_for_quadratic(9.0, &q).expect("valid gamma");
    let (lo, hi) = quadratic_extent_box(9.0, &q).expect("box");
    let g = lyapunov_g();
    Scenario::new(
        "paper-example-expr",
        Dynamics::Linear(DMatrix::identity(2, 2)),
        Controller::Linear(DMatrix::from_row_slice(2, 2, &[-2.0, -4.0, 1.0, -1.0])),
        barrier,
        g.clone(),
        Some(g),
        a,
        gamma,
        Some((lo * 1.05, hi * 1.05)),
    )
    .expect("built-in scenario is valid")
}

/// Unit disc safe set with contracting linear dynamics `f(x) = -x`.
pub fn unit_disc(a: f64) -> Scenario {
    let q = SpdMatrix::identity(2);
    let gamma = gamma_for_quadratic(1.0, &q).expect("valid gamma");
    Scenario::new(
        "unit-disc",
        Dynamics::Linear(-DMatrix::identity(2, 2)),
        Controller::None,
        Barrier::quadratic(1.0, q).expect("valid barrier"),
        SpdMatrix::identity(2),
        Some(SpdMatrix::identity(2)),
        a,
        gamma,
        None,
    )
    .expect("built-in scenario is valid")
}

/// Resolves `builtin:` scenario URIs.
pub fn builtin(name: &str, a: f64) -> Option<Scenario> {
    match name {
        "paper-example" => Some(paper_example(a)),
        "paper-example-wrongP" => Some(paper_example_wrong_p(a)),
        "paper-example-expr" => Some(paper_example_expr(a)),
        "unit-disc" => Some(unit_disc(a)),
        _ => None,
    }
}
