//! Constant estimation, the perturbation radius `sigma(a, x)`, and the
//! constructive inclusion witness relating the CBF-filtered field to the
//! Krasovskii regularization of the projected-system inclusion.
//!
//! The headline guarantee: for `a >= a_star`, every value of the filtered
//! field lies in `F((x + sigma(a,x) B) ∩ S) + sigma(a,x) B`, with `sigma`
//! strictly decreasing in `a`. `check_inclusion` verifies this pointwise by
//! building the witness pair `(y, eta)` explicitly.

use nalgebra::DVector;
use rand::Rng;
use serde::Serialize;
use thiserror::Error;

use crate::cbf::{self, CbfError};
use crate::geometry::{proj_boundary_euclidean, GeometryError, State};
use crate::scenario::{BarrierKind, Controller, Dynamics, GammaFn, Scenario, ScenarioError};

#[derive(Debug, Error)]
pub enum BoundsError {
    #[error("{0}")]
    Invalid(String),
    #[error("point not in the constrained region U (slack = {slack:.3e})")]
    NotInConstrainedRegion { slack: f64 },
    #[error("a = {a} is below a_star = {a_star}; the lemmas need a >= a_star")]
    BelowAStar { a: f64, a_star: f64 },
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Cbf(#[from] CbfError),
}

/// How a constant was obtained. Sampled values are lower-bound estimates
/// inflated to act as upper bounds; the gap is visible here.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Provenance {
    Analytic,
    Sampled { samples: usize, inflation: f64 },
}

/// Per-constant provenance for a [`ConstantsBundle`].
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ProvenanceFlags {
    pub grad_extrema: Provenance,
    pub l_grad_h: Provenance,
    pub l_f: Provenance,
    pub max_lie_h: Provenance,
}

/// All constants of the perturbation bound, computed once per scenario.
#[derive(Debug, Clone, Serialize)]
pub struct ConstantsBundle {
    pub eps: f64,
    /// min / max of the gradient norm over the boundary.
    pub m1: f64,
    pub m2: f64,
    /// Gradient-norm ceiling on the constrained region: `m2 + l_grad_h * gamma(max_lie_h / a_star)`.
    pub m3: f64,
    /// Lipschitz constant of `grad h` on the safe set.
    pub l_grad_h: f64,
    /// Lipschitz constant of the effective field on the safe set.
    pub l_f: f64,
    /// `max_S |L_f h|`.
    pub max_lie_h: f64,
    /// Activation threshold: filtered and projected fields stay
    /// `sigma`-close whenever `a >= a_star`.
    pub a_star: f64,
    /// Lipschitz constant of the normalized-gradient map `P^{-1} grad h / ||grad h||^2_{P^{-1}}`.
    pub l1: f64,
    pub gamma: GammaFn,
    pub provenance: ProvenanceFlags,
}

/// One point of the inclusion sweep.
#[derive(Debug, Clone, Serialize)]
pub struct InclusionReport {
    pub x: Vec<f64>,
    pub case: InclusionCase,
    /// Boundary witness point (equals `x` in the inactive case).
    pub y: Vec<f64>,
    /// Normal-cone witness at `y`.
    pub eta: Vec<f64>,
    pub sigma: f64,
    /// The field-perturbation branch `(l_f + l1 |L_f h|) * gamma(|L_f h| / a)`.
    pub sigma1: f64,
    pub dist_xy: f64,
    pub dist_field: f64,
    pub pass: bool,
    /// Worst slack-adjusted margin; nonnegative iff `pass`.
    pub margin: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum InclusionCase {
    Inactive,
    Active,
}

pub const DEFAULT_INFLATION: f64 = 1.2;

/// Inflated max difference quotient of `field` over sampled point pairs.
/// A lower-bound estimator made to behave like an upper bound through the
/// inflation factor; pure plumbing, no theory behind the factor.
pub fn estimate_lipschitz(
    field: &dyn Fn(&State) -> Result<State, ScenarioError>,
    sample: &mut dyn FnMut() -> Result<State, ScenarioError>,
    pairs: usize,
    inflation: f64,
) -> Result<f64, BoundsError> {
    if pairs < 1000 {
        return Err(BoundsError::Invalid(format!(
            "need at least 1000 pairs for a usable estimate, got {pairs}"
        )));
    }
    let mut best: f64 = 0.0;
    for _ in 0..pairs {
        let x = sample()?;
        let y = sample()?;
        let d = (&y - &x).norm();
        if d <= 1e-12 {
            continue;
        }
        let fx = field(&x)?;
        let quot = (field(&y)? - &fx).norm() / d;
        best = best.max(quot);
        // Short-baseline pair in the same direction: difference quotients
        // over distant pairs average the field's variation, so they alone
        // under-estimate the local maximum slope.
        let near = &x + (&y - &x) * 1e-3;
        let quot_near = (field(&near)? - fx).norm() / ((&near - &x).norm());
        best = best.max(quot_near);
    }
    Ok(best * inflation)
}

/// Minimum and maximum of `||grad h||` over the boundary.
///
/// Quadratic barriers `h = c - x^T Q x` admit the closed form
/// `2 sqrt(c lambda)` with `lambda` ranging over the eigenvalues of `Q`;
/// other barriers are sampled with a local pattern-search polish.
pub fn boundary_extrema_gradnorm<R: Rng>(
    s: &Scenario,
    samples: usize,
    rng: &mut R,
) -> Result<(f64, f64, Provenance), BoundsError> {
    if samples < 1000 {
        return Err(BoundsError::Invalid(format!(
            "need at least 1000 samples, got {samples}"
        )));
    }
    if let BarrierKind::Quadratic { c, q } = &s.barrier.kind {
        let m1 = 2.0 * (c * q.min_eig()).sqrt();
        let m2 = 2.0 * (c * q.max_eig()).sqrt();
        return Ok((m1, m2, Provenance::Analytic));
    }
    let pts = s.boundary_points(samples, rng)?;
    let mut m1 = f64::INFINITY;
    let mut m2: f64 = 0.0;
    let mut argmin = pts[0].clone();
    let mut argmax = pts[0].clone();
    for x in &pts {
        let g = s.grad_h(x)?.norm();
        if g < m1 {
            m1 = g;
            argmin = x.clone();
        }
        if g > m2 {
            m2 = g;
            argmax = x.clone();
        }
    }
    let gn = |s: &Scenario, x: &State| -> Result<f64, BoundsError> { Ok(s.grad_h(x)?.norm()) };
    m1 = polish_on_boundary(s, &argmin, rng, |v| -v, &|x| gn(s, x))?.min(m1);
    m2 = polish_on_boundary(s, &argmax, rng, |v| v, &|x| gn(s, x))?.max(m2);
    Ok((
        m1,
        m2,
        Provenance::Sampled {
            samples,
            inflation: 1.0,
        },
    ))
}

/// Pattern search along the boundary maximizing `orient(objective)`;
/// candidate steps are projected back onto the boundary. Returns the
/// objective value at the polished point.
fn polish_on_boundary<R: Rng>(
    s: &Scenario,
    start: &State,
    rng: &mut R,
    orient: impl Fn(f64) -> f64,
    objective: &dyn Fn(&State) -> Result<f64, BoundsError>,
) -> Result<f64, BoundsError> {
    let mut x = start.clone();
    let mut best = objective(&x)?;
    let mut step = 0.1 * (1.0 + x.norm());
    for _ in 0..60 {
        let mut improved = false;
        for _ in 0..8 {
            let d = DVector::from_fn(x.len(), |_, _| rng.gen_range(-1.0..1.0));
            if d.norm() < 1e-9 {
                continue;
            }
            let cand = proj_boundary_euclidean(&(&x + d * step), &s.barrier)?;
            let v = objective(&cand)?;
            if orient(v) > orient(best) {
                best = v;
                x = cand;
                improved = true;
            }
        }
        if !improved {
            step *= 0.5;
            if step < 1e-10 {
                break;
            }
        }
    }
    Ok(best)
}

/// `max_S |L_f h|` by rejection sampling into the safe set plus a local
/// ascent polish from the best candidates.
fn max_abs_lie<R: Rng>(s: &Scenario, samples: usize, rng: &mut R) -> Result<f64, BoundsError> {
    let mut scored: Vec<(f64, State)> = Vec::with_capacity(samples);
    for _ in 0..samples {
        let x = s.sample_in_set(rng)?;
        scored.push((s.lie_h(&x)?.abs(), x));
    }
    scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    let mut best = scored[0].0;
    for (_, x0) in scored.iter().take(10) {
        let mut x = x0.clone();
        let mut val = s.lie_h(&x)?.abs();
        let mut step = 0.05 * (1.0 + x.norm());
        for _ in 0..80 {
            let mut improved = false;
            for _ in 0..8 {
                let d = DVector::from_fn(x.len(), |_, _| rng.gen_range(-1.0..1.0));
                if d.norm() < 1e-9 {
                    continue;
                }
                let mut cand = &x + d * step;
                if s.h(&cand)? < 0.0 {
                    cand = proj_boundary_euclidean(&cand, &s.barrier)?;
                }
                let v = s.lie_h(&cand)?.abs();
                if v > val {
                    val = v;
                    x = cand;
                    improved = true;
                }
            }
            if !improved {
                step *= 0.5;
                if step < 1e-10 {
                    break;
                }
            }
        }
        best = best.max(val);
    }
    Ok(best)
}

/// Computes every constant of the perturbation bound.
/// `eps = eps_fraction * m1`; the fraction must lie strictly inside (0, 1)
/// because `a_star` diverges as `eps -> m1` and `l1` diverges as `eps -> 0`.
pub fn compute_constants<R: Rng>(
    s: &Scenario,
    eps_fraction: f64,
    samples: usize,
    rng: &mut R,
) -> Result<ConstantsBundle, BoundsError> {
    if !(eps_fraction > 0.0 && eps_fraction < 1.0) {
        return Err(BoundsError::Invalid(format!(
            "eps_fraction must be in (0, 1), got {eps_fraction}"
        )));
    }
    let (m1, m2, grad_prov) = boundary_extrema_gradnorm(s, samples.max(1000), rng)?;
    let eps = eps_fraction * m1;

    // Lipschitz constant of grad h: analytic 2 lambda_max(Q) for quadratics.
    let (l_grad_h, lgh_prov) = match &s.barrier.kind {
        BarrierKind::Quadratic { q, .. } => (2.0 * q.max_eig(), Provenance::Analytic),
        BarrierKind::Expr { .. } => {
            let barrier = &s.barrier;
            let field = move |x: &State| barrier.gradient(x);
            let mut sampler = sample_closure(s, rng_fork(rng));
            let n = samples.max(1000);
            (
                estimate_lipschitz(&field, &mut sampler, n, DEFAULT_INFLATION)?,
                Provenance::Sampled {
                    samples: n,
                    inflation: DEFAULT_INFLATION,
                },
            )
        }
    };

    // Lipschitz constant of the effective field: spectral norm when the
    // closed loop is linear.
    let (l_f, lf_prov) = match effective_linear_matrix(s) {
        Some(a) => (
            a.singular_values().max(),
            Provenance::Analytic,
        ),
        None => {
            let field = s.effective_field();
            let mut sampler = sample_closure(s, rng_fork(rng));
            let n = samples.max(1000);
            (
                estimate_lipschitz(&field, &mut sampler, n, DEFAULT_INFLATION)?,
                Provenance::Sampled {
                    samples: n,
                    inflation: DEFAULT_INFLATION,
                },
            )
        }
    };

    let n_lie = samples.max(10_000);
    let max_lie_h = max_abs_lie(s, n_lie, rng)?;
    let lie_prov = Provenance::Sampled {
        samples: n_lie,
        inflation: 1.0,
    };

    let (a_star, m3) = if max_lie_h <= 1e-12 {
        (0.0, m2)
    } else {
        let r = (m1 - eps) / l_grad_h;
        let ginv = s.gamma.inverse(r);
        if !(ginv > 0.0) {
            return Err(BoundsError::Invalid(format!(
                "gamma^-1({r}) = {ginv} is not positive; eps too close to m1"
            )));
        }
        let a_star = max_lie_h / ginv;
        let m3 = m2 + l_grad_h * s.gamma.eval(max_lie_h / a_star);
        (a_star, m3)
    };

    let lp_max = s.p.max_eig();
    let lp_min = s.p.min_eig();
    let l1 = (lp_max / (lp_min * eps * eps))
        * l_grad_h
        * (1.0 + m2 * lp_max * (m2 + m3) / (lp_min * m1 * m1));

    let bundle = ConstantsBundle {
        eps,
        m1,
        m2,
        m3,
        l_grad_h,
        l_f,
        max_lie_h,
        a_star,
        l1,
        gamma: s.gamma.clone(),
        provenance: ProvenanceFlags {
            grad_extrema: grad_prov,
            l_grad_h: lgh_prov,
            l_f: lf_prov,
            max_lie_h: lie_prov,
        },
    };
    for (name, v) in [
        ("eps", bundle.eps),
        ("m1", bundle.m1),
        ("m2", bundle.m2),
        ("m3", bundle.m3),
        ("l_grad_h", bundle.l_grad_h),
        ("l_f", bundle.l_f),
        ("max_lie_h", bundle.max_lie_h),
        ("a_star", bundle.a_star),
        ("l1", bundle.l1),
    ] {
        if !v.is_finite() {
            return Err(BoundsError::Invalid(format!("constant {name} is not finite")));
        }
    }
    if !(bundle.eps < bundle.m1 && bundle.m1 <= bundle.m2 && bundle.m2 <= bundle.m3) {
        return Err(BoundsError::Invalid(format!(
            "constant ordering violated: eps={} m1={} m2={} m3={}",
            bundle.eps, bundle.m1, bundle.m2, bundle.m3
        )));
    }
    Ok(bundle)
}

fn rng_fork<R: Rng>(rng: &mut R) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    rand_chacha::ChaCha8Rng::seed_from_u64(rng.gen())
}

fn sample_closure(
    s: &Scenario,
    mut rng: rand_chacha::ChaCha8Rng,
) -> impl FnMut() -> Result<State, ScenarioError> + '_ {
    move || s.sample_in_set(&mut rng)
}

/// The closed-loop matrix when both dynamics and controller are linear.
fn effective_linear_matrix(s: &Scenario) -> Option<nalgebra::DMatrix<f64>> {
    let a = match &s.dynamics {
        Dynamics::Linear(a) => a.clone(),
        _ => return None,
    };
    match &s.controller {
        Controller::None => Some(a),
        Controller::Linear(k) => Some(a + k),
        Controller::Expr(_) => None,
    }
}

/// The perturbation radius
/// `sigma(a, x) = max{gamma(|L_f h(x)|/a), (l_f + l1 |L_f h(x)|) * gamma(|L_f h(x)|/a)}`.
pub fn sigma(
    bundle: &ConstantsBundle,
    a: f64,
    x: &State,
    s: &Scenario,
) -> Result<f64, BoundsError> {
    if !(a > 0.0) {
        return Err(BoundsError::Invalid(format!("a must be positive, got {a}")));
    }
    let lie = s.lie_h(x)?.abs();
    let g = bundle.gamma.eval(lie / a);
    Ok(g.max((bundle.l_f + bundle.l1 * lie) * g))
}

fn require_in_u(s: &Scenario, a: f64, x: &State) -> Result<f64, BoundsError> {
    let slack = s.lie_h(x)? + a * s.h(x)?;
    if slack > 1e-9 {
        return Err(BoundsError::NotInConstrainedRegion { slack });
    }
    Ok(slack)
}

fn require_a(bundle: &ConstantsBundle, a: f64) -> Result<(), BoundsError> {
    if a < bundle.a_star {
        return Err(BoundsError::BelowAStar {
            a,
            a_star: bundle.a_star,
        });
    }
    Ok(())
}

/// Boundary-proximity bound on the constrained region:
/// `||x - proj(x)|| <= gamma(|L_f h(x)| / a)`. Nonnegative margin = pass.
pub fn lemma1_check(
    s: &Scenario,
    bundle: &ConstantsBundle,
    a: f64,
    x: &State,
) -> Result<f64, BoundsError> {
    require_in_u(s, a, x)?;
    let y = proj_boundary_euclidean(x, &s.barrier)?;
    Ok(bundle.gamma.eval(s.lie_h(x)?.abs() / a) - (x - y).norm())
}

/// Gradient-norm sandwich on the constrained region:
/// `eps <= ||grad h(x)|| <= m3` for `a >= a_star`.
/// Returns `(||grad h|| - eps, m3 - ||grad h||)`.
pub fn lemma2_check(
    s: &Scenario,
    bundle: &ConstantsBundle,
    a: f64,
    x: &State,
) -> Result<(f64, f64), BoundsError> {
    require_a(bundle, a)?;
    require_in_u(s, a, x)?;
    let g = s.grad_h(x)?.norm();
    Ok((g - bundle.eps, bundle.m3 - g))
}

fn normalized_grad_dir(s: &Scenario, x: &State) -> Result<State, BoundsError> {
    let g = s.grad_h(x)?;
    let denom = s.p.inv_quad(&g)?;
    Ok(s.p.solve(&g)? / denom)
}

/// Lipschitz bound on the normalized-gradient map between a point and its
/// boundary projection: margin `l1 ||x - y|| - ||n(x) - n(y)||` with
/// `n(z) = P^{-1} grad h(z) / ||grad h(z)||^2_{P^{-1}}`.
pub fn lemma3_check(
    s: &Scenario,
    bundle: &ConstantsBundle,
    a: f64,
    x: &State,
) -> Result<f64, BoundsError> {
    require_a(bundle, a)?;
    require_in_u(s, a, x)?;
    let y = proj_boundary_euclidean(x, &s.barrier)?;
    let diff = (normalized_grad_dir(s, x)? - normalized_grad_dir(s, &y)?).norm();
    Ok(bundle.l1 * (x - &y).norm() - diff)
}

/// Verifies the inclusion pointwise by constructing the witness pair.
///
/// Inactive case: the filtered field equals the raw field, which belongs to
/// the inclusion at `x` itself. Active case: `y` is the boundary projection
/// of `x` and `eta = (L_f h(x) + a h(x)) grad h(y) / ||grad h(y)||^2_{P^{-1}}`
/// is a normal-cone element at `y`; both the travel distance `||x - y||` and
/// the field perturbation `||f(y) - P^{-1} eta - f_cbf(x)||` must fit inside
/// `sigma(a, x)` up to slack.
pub fn check_inclusion(
    s: &Scenario,
    bundle: &ConstantsBundle,
    a: f64,
    x: &State,
) -> Result<InclusionReport, BoundsError> {
    let h = s.h(x)?;
    if h < -crate::geometry::OUTSIDE_TOL {
        return Err(BoundsError::Invalid(format!(
            "point outside the safe set: h = {h:.3e}"
        )));
    }
    require_a(bundle, a)?;
    let sa = s.with_a(a)?;
    let eval = cbf::cbf_field(&sa, x)?;
    let sig = sigma(bundle, a, x, s)?;
    let lie = eval.lie_h;
    let sigma1 = (bundle.l_f + bundle.l1 * lie.abs()) * bundle.gamma.eval(lie.abs() / a);
    let slack = 1e-8 + 1e-6 * sig;

    if !eval.active {
        return Ok(InclusionReport {
            x: x.as_slice().to_vec(),
            case: InclusionCase::Inactive,
            y: x.as_slice().to_vec(),
            eta: vec![0.0; x.len()],
            sigma: sig,
            sigma1,
            dist_xy: 0.0,
            dist_field: 0.0,
            pass: true,
            margin: sig + slack,
        });
    }

    let y = proj_boundary_euclidean(x, &s.barrier)?;
    let coeff = lie + a * h; // <= 0 in the active case
    let gy = s.grad_h(&y)?;
    let denom = s.p.inv_quad(&gy)?;
    let eta = &gy * (coeff / denom);
    let p_inv_eta = s.p.solve(&eta)?;
    let dist_field = (s.effective(&y)? - p_inv_eta - &eval.output).norm();
    let dist_xy = (x - &y).norm();
    let margin = (sig + slack - dist_xy).min(sig + slack - dist_field);
    Ok(InclusionReport {
        x: x.as_slice().to_vec(),
        case: InclusionCase::Active,
        y: y.as_slice().to_vec(),
        eta: eta.as_slice().to_vec(),
        sigma: sig,
        sigma1,
        dist_xy,
        dist_field,
        pass: margin >= 0.0,
        margin,
    })
}
