//! Higher-level studies: equilibrium detection and classification,
//! monotonicity and contraction verification, parameter sweeps, and the
//! built-in safe-stabilization example end to end.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::Serialize;
use thiserror::Error;

use crate::cbf::{self, CbfError};
use crate::geometry::{GeometryError, SpdMatrix, State};
use crate::scenario::{
    paper_example, paper_example_wrong_p, Check, Scenario, ScenarioError, ValidationReport,
};
use crate::sim::{self, PdsScheme, SimError};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Cbf(#[from] CbfError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Classification {
    Stable,
    Unstable,
    Marginal,
}

#[derive(Debug, Clone, Serialize)]
pub struct Equilibrium {
    pub point: Vec<f64>,
    /// Field norm re-evaluated at the reported point.
    pub residual: f64,
    pub classification: Classification,
    /// Whether the point sits on the safe-set boundary (within 1e-6).
    pub boundary: bool,
}

/// Which closed loop to analyze or integrate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Loop {
    /// Safety-filtered closed loop with the given constraint parameter.
    Cbf(f64),
    /// Projected dynamics (time-stepped by set projection).
    Pds,
    /// Unfiltered effective field.
    Nominal,
}

fn loop_scenario(s: &Scenario, l: Loop) -> Result<Scenario, AnalysisError> {
    Ok(match l {
        Loop::Cbf(a) => s.with_a(a)?,
        _ => s.clone(),
    })
}

fn loop_field(s: &Scenario, l: Loop) -> impl Fn(&State) -> Result<State, AnalysisError> + '_ {
    move |x| match l {
        // the extended evaluation stays defined slightly outside the set,
        // which finite-difference stencils at boundary equilibria need
        Loop::Cbf(_) => Ok(cbf::cbf_field_extended(s, x)?.output),
        Loop::Pds | Loop::Nominal => Ok(s.effective(x)?),
    }
}

fn fd_jacobian(
    f: &dyn Fn(&State) -> Result<State, AnalysisError>,
    x: &State,
) -> Result<DMatrix<f64>, AnalysisError> {
    let n = x.len();
    let step = 1e-6 * (1.0 + x.norm());
    let mut j = DMatrix::zeros(n, n);
    for col in 0..n {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[col] += step;
        xm[col] -= step;
        let d = (f(&xp)? - f(&xm)?) / (2.0 * step);
        j.set_column(col, &d);
    }
    Ok(j)
}

fn classify(j: &DMatrix<f64>) -> Classification {
    let re: Vec<f64> = j
        .complex_eigenvalues()
        .iter()
        .map(|c| c.re)
        .collect();
    if re.iter().all(|&r| r < -1e-4) {
        Classification::Stable
    } else if re.iter().any(|&r| r > 1e-4) {
        Classification::Unstable
    } else {
        Classification::Marginal
    }
}

/// Multi-start damped Newton search for zeros of the selected closed-loop
/// field inside the safe set. Duplicates are merged within radius 1e-4 and
/// every reported point has residual at most 1e-6.
pub fn find_equilibria<R: Rng>(
    s: &Scenario,
    which: Loop,
    seeds: usize,
    rng: &mut R,
) -> Result<Vec<Equilibrium>, AnalysisError> {
    if seeds < 10 {
        return Err(AnalysisError::Invalid(format!(
            "need at least 10 seeds, got {seeds}"
        )));
    }
    let sw = loop_scenario(s, which)?;
    let field = loop_field(&sw, which);
    let mut found: Vec<State> = Vec::new();
    for _ in 0..seeds {
        let mut x = sw.sample_in_set(rng)?;
        let mut converged = false;
        for _ in 0..80 {
            let fx = field(&x)?;
            let r = fx.norm();
            if r <= 1e-10 {
                converged = true;
                break;
            }
            let j = fd_jacobian(&field, &x)?;
            let Some(d) = j.lu().solve(&(-&fx)) else { break };
            // backtracking damping
            let mut alpha = 1.0;
            let mut accepted = false;
            for _ in 0..30 {
                let cand = &x + &d * alpha;
                if field(&cand)?.norm() < r {
                    x = cand;
                    accepted = true;
                    break;
                }
                alpha *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        if !converged {
            continue;
        }
        if sw.h(&x)? < -1e-6 {
            continue; // converged outside the safe set
        }
        if found.iter().any(|y| (y - &x).norm() < 1e-4) {
            continue;
        }
        found.push(x);
    }
    found.sort_by(|a, b| {
        a.iter()
            .partial_cmp(b.iter())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut out = Vec::with_capacity(found.len());
    for x in found {
        let residual = field(&x)?.norm();
        if residual > 1e-6 {
            continue;
        }
        let j = fd_jacobian(&field, &x)?;
        out.push(Equilibrium {
            point: x.as_slice().to_vec(),
            residual,
            classification: classify(&j),
            boundary: sw.h(&x)?.abs() <= 1e-6,
        });
    }
    Ok(out)
}

/// Empirical strong-monotonicity modulus of the negated effective field in
/// the `g` metric: the minimum over sampled pairs in the safe set of
/// `<x - y, -(f(x) - f(y))>_g / ||x - y||^2_g`. A positive value certifies
/// the sampled pairs; it is not a proof.
pub fn check_strong_monotonicity<R: Rng>(
    s: &Scenario,
    g: &SpdMatrix,
    pairs: usize,
    rng: &mut R,
) -> Result<f64, AnalysisError> {
    if pairs < 1000 {
        return Err(AnalysisError::Invalid(format!(
            "need at least 1000 pairs, got {pairs}"
        )));
    }
    let mut alpha = f64::INFINITY;
    let mut done = 0;
    while done < pairs {
        let x = s.sample_in_set(rng)?;
        let y = s.sample_in_set(rng)?;
        let d = &x - &y;
        let dd = g.inner(&d, &d)?;
        if dd <= 1e-16 {
            continue;
        }
        let df = s.effective(&y)? - s.effective(&x)?; // -(f(x) - f(y))
        alpha = alpha.min(g.inner(&d, &df)? / dd);
        done += 1;
    }
    Ok(alpha)
}

#[derive(Debug, Clone, Serialize)]
pub struct ContractionReport {
    pub times: Vec<f64>,
    /// Metric distance between the two trajectories at each stored time.
    pub distances: Vec<f64>,
    pub rate: f64,
    pub tol: f64,
    pub pass: bool,
}

/// Integrates the chosen closed loop from two starts and checks exponential
/// contraction of their metric distance:
/// `d(t) <= d(0) exp(-rate t) + tol` with rate 0.15 and tol 1e-4. The
/// metric is the scenario's `G` when declared, the identity otherwise.
pub fn contraction_test(
    s: &Scenario,
    which: Loop,
    x0a: &State,
    x0b: &State,
    dt: f64,
    t_final: f64,
) -> Result<ContractionReport, AnalysisError> {
    let rate = 0.15;
    let tol = 1e-4;
    let metric = match &s.g {
        Some(g) => g.clone(),
        None => SpdMatrix::identity(s.dim),
    };
    let run = |x0: &State| -> Result<sim::Trajectory, AnalysisError> {
        let sw = loop_scenario(s, which)?;
        Ok(match which {
            Loop::Cbf(_) => sim::integrate_cbf(&sw, x0, dt, t_final)?,
            Loop::Pds => sim::integrate_pds(&sw, x0, dt, t_final, PdsScheme::ProjectedEuler)?,
            Loop::Nominal => sim::integrate_nominal(&sw, x0, dt, t_final)?,
        })
    };
    let ta = run(x0a)?;
    let tb = run(x0b)?;
    let mut distances = Vec::with_capacity(ta.len());
    for k in 0..ta.len() {
        distances.push(metric.norm(&(&ta.states[k] - &tb.states[k]))?);
    }
    let d0 = distances[0];
    let pass = ta
        .times
        .iter()
        .zip(&distances)
        .all(|(&t, &d)| d <= d0 * (-rate * t).exp() + tol);
    Ok(ContractionReport {
        times: ta.times,
        distances,
        rate,
        tol,
        pass,
    })
}

/// Sweeps the constraint parameter and reports the sup distance between the
/// filtered trajectory and the projected-dynamics reference.
pub fn convergence_sweep(
    s: &Scenario,
    x0: &State,
    a_list: &[f64],
    dt: f64,
    t_final: f64,
) -> Result<Vec<(f64, f64)>, AnalysisError> {
    if a_list.windows(2).any(|w| w[1] <= w[0]) {
        return Err(AnalysisError::Invalid(
            "a values must be strictly increasing".into(),
        ));
    }
    let reference = sim::integrate_pds(s, x0, dt, t_final, PdsScheme::ProjectedEuler)?;
    let mut table = Vec::with_capacity(a_list.len());
    for &a in a_list {
        let traj = sim::integrate_cbf(&s.with_a(a)?, x0, dt, t_final)?;
        table.push((a, sim::sup_distance(&traj, &reference)?));
    }
    Ok(table)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExampleVariant {
    CorrectP,
    WrongP,
}

/// Runs the built-in safe-stabilization example and checks its headline
/// claims: with the well-chosen projection metric the filtered loop
/// stabilizes the origin for every tested `a`; with the mismatched metric
/// a stable equilibrium appears on the boundary near (-2.985, 2.777).
pub fn reproduce_example<R: Rng>(
    variant: ExampleVariant,
    rng: &mut R,
) -> Result<ValidationReport, AnalysisError> {
    let dt = 1e-3;
    let t_final = 30.0;
    let x0 = DVector::from_vec(vec![-1.0, 2.0]);
    let mut checks = Vec::new();
    let mut push = |name: &str, pass: bool, detail: String, witness: Option<Vec<f64>>| {
        checks.push(Check {
            name: name.into(),
            pass,
            detail,
            witness,
        });
    };

    match variant {
        ExampleVariant::CorrectP => {
            let s = paper_example(1.0);
            let t = sim::integrate_cbf(&s, &x0, dt, t_final)?;
            let final_norm = t.last_state().norm();
            push(
                "origin-convergence",
                final_norm < 1e-3,
                format!("|x(T)| = {final_norm:.3e}"),
                Some(t.last_state().as_slice().to_vec()),
            );
            let margin = sim::safety_margin(&t);
            push(
                "safety",
                margin >= -1e-6,
                format!("min h = {margin:.3e}"),
                None,
            );
            let eq = find_equilibria(&s, Loop::Cbf(1.0), 40, rng)?;
            let only_origin = eq.len() == 1
                && eq[0].point.iter().map(|v| v * v).sum::<f64>().sqrt() < 1e-6
                && eq[0].classification == Classification::Stable;
            push(
                "single-stable-equilibrium",
                only_origin,
                format!("{} equilibria: {eq:?}", eq.len()),
                None,
            );
            for a in [0.1, 1.0, 10.0] {
                let t = sim::integrate_cbf(&s.with_a(a)?, &x0, dt, t_final)?;
                let n = t.last_state().norm();
                push(
                    &format!("stabilizes-at-a-{a}"),
                    n < 1e-3 && sim::safety_margin(&t) >= -1e-6,
                    format!("|x(T)| = {n:.3e}"),
                    None,
                );
            }
        }
        ExampleVariant::WrongP => {
            let s = paper_example_wrong_p(1.0);
            let target = DVector::from_vec(vec![-2.985, 2.777]);
            let t = sim::integrate_cbf(&s, &x0, dt, t_final)?;
            let dist = (t.last_state() - &target).norm();
            push(
                "undesired-equilibrium-convergence",
                dist < 1e-2,
                format!("|x(T) - target| = {dist:.3e}"),
                Some(t.last_state().as_slice().to_vec()),
            );
            let margin = sim::safety_margin(&t);
            push(
                "safety",
                margin >= -1e-6,
                format!("min h = {margin:.3e}"),
                None,
            );
            let eq = find_equilibria(&s, Loop::Cbf(1.0), 40, rng)?;
            let undesired = eq.iter().find(|e| {
                let p = DVector::from_vec(e.point.clone());
                (p - &target).norm() < 1e-2
            });
            push(
                "stable-boundary-equilibrium",
                undesired
                    .map(|e| e.classification == Classification::Stable && e.boundary)
                    .unwrap_or(false),
                format!("equilibria: {eq:?}"),
                undesired.map(|e| e.point.clone()),
            );
        }
    }
    Ok(ValidationReport { checks })
}

/// Bisects for the smallest constraint parameter whose filtered loop still
/// passes the contraction test. Purely empirical: reported as an observed
/// threshold, not a certified constant.
pub fn empirical_stable_a(
    s: &Scenario,
    x0a: &State,
    x0b: &State,
    dt: f64,
    t_final: f64,
    a_lo: f64,
    a_hi: f64,
) -> Result<Option<f64>, AnalysisError> {
    let passes = |a: f64| -> Result<bool, AnalysisError> {
        Ok(contraction_test(s, Loop::Cbf(a), x0a, x0b, dt, t_final)?.pass)
    };
    if !passes(a_hi)? {
        return Ok(None);
    }
    if passes(a_lo)? {
        return Ok(Some(a_lo));
    }
    let (mut lo, mut hi) = (a_lo, a_hi);
    for _ in 0..24 {
        let mid = 0.5 * (lo + hi);
        if passes(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(Some(hi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::unit_disc;
    use nalgebra::dvector;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn correct_p_has_only_the_origin() {
        let s = paper_example(1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let eq = find_equilibria(&s, Loop::Cbf(1.0), 40, &mut rng).unwrap();
        assert_eq!(eq.len(), 1, "{eq:?}");
        assert!(DVector::from_vec(eq[0].point.clone()).norm() < 1e-6);
        assert_eq!(eq[0].classification, Classification::Stable);
        assert!(!eq[0].boundary);
        assert!(eq[0].residual <= 1e-6);
    }

    #[test]
    fn wrong_p_adds_stable_boundary_equilibrium() {
        let s = paper_example_wrong_p(1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let eq = find_equilibria(&s, Loop::Cbf(1.0), 60, &mut rng).unwrap();
        let target = dvector![-2.985, 2.777];
        let undesired = eq
            .iter()
            .find(|e| (DVector::from_vec(e.point.clone()) - &target).norm() < 1e-2)
            .expect("undesired equilibrium not found");
        assert_eq!(undesired.classification, Classification::Stable);
        assert!(undesired.boundary);
        assert!(eq
            .iter()
            .any(|e| DVector::from_vec(e.point.clone()).norm() < 1e-6));
    }

    #[test]
    fn linear_stable_field_has_origin_only() {
        let s = unit_disc(1.0); // f = -x
        let mut rng = ChaCha8Rng::seed_from_u64(35);
        let eq = find_equilibria(&s, Loop::Nominal, 20, &mut rng).unwrap();
        assert_eq!(eq.len(), 1);
        assert_eq!(eq[0].classification, Classification::Stable);
    }

    #[test]
    fn monotonicity_modulus_matches_lyapunov_bound() {
        // G A + A^T G = -I gives modulus 1/(2 lambda_max(G)) ≈ 0.1899 in
        // the G metric; sampling can only overestimate the infimum slightly
        let s = paper_example(1.0);
        let g = s.g.clone().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let alpha = check_strong_monotonicity(&s, &g, 2000, &mut rng).unwrap();
        let exact = 1.0 / (2.0 * g.max_eig());
        assert!((exact - 0.18993).abs() < 1e-4);
        assert!(alpha >= 0.15, "alpha = {alpha}");
        // sampling approaches the true infimum from above
        assert!(alpha >= exact - 1e-9 && alpha <= exact + 5e-3, "alpha = {alpha}");
    }

    #[test]
    fn monotonicity_trivial_fields() {
        let disc = unit_disc(1.0); // f = -x
        let id = SpdMatrix::identity(2);
        let mut rng = ChaCha8Rng::seed_from_u64(39);
        let alpha = check_strong_monotonicity(&disc, &id, 1000, &mut rng).unwrap();
        assert!((alpha - 1.0).abs() < 1e-9);

        let unstable = Scenario::new(
            "anti",
            crate::scenario::Dynamics::Linear(DMatrix::identity(2, 2)),
            crate::scenario::Controller::None,
            disc.barrier.clone(),
            SpdMatrix::identity(2),
            None,
            1.0,
            disc.gamma.clone(),
            None,
        )
        .unwrap();
        let alpha = check_strong_monotonicity(&unstable, &id, 1000, &mut rng).unwrap();
        assert!((alpha + 1.0).abs() < 1e-9);
    }

    #[test]
    fn contraction_identical_starts_is_zero() {
        let s = paper_example(1.0);
        let x0 = dvector![-1.0, 2.0];
        let r = contraction_test(&s, Loop::Pds, &x0, &x0, 1e-2, 1.0).unwrap();
        assert!(r.pass);
        assert!(r.distances.iter().all(|&d| d == 0.0));
    }

    #[test]
    fn pds_contracts_at_declared_rate() {
        let s = paper_example(1.0);
        let r = contraction_test(
            &s,
            Loop::Pds,
            &dvector![-1.0, 2.0],
            &dvector![1.0, 1.0],
            1e-3,
            10.0,
        )
        .unwrap();
        assert!(r.pass, "distances tail: {:?}", &r.distances[r.distances.len() - 3..]);
    }

    #[test]
    fn wrong_p_fails_contraction() {
        let s = paper_example_wrong_p(1.0);
        // one start near the undesired equilibrium, one near the origin:
        // the trajectories settle at different attractors
        let r = contraction_test(
            &s,
            Loop::Cbf(1.0),
            &dvector![-2.9, 2.7],
            &dvector![0.1, 0.1],
            1e-3,
            10.0,
        )
        .unwrap();
        assert!(!r.pass);
        assert!(*r.distances.last().unwrap() > 1.0);
    }

    #[test]
    fn sweep_distances_shrink_with_a() {
        let s = paper_example(1.0);
        let table =
            convergence_sweep(&s, &dvector![-1.0, 2.0], &[1.0, 10.0, 100.0], 1e-3, 5.0).unwrap();
        assert_eq!(table.len(), 3);
        assert!(table[1].1 <= table[0].1 + 1e-6);
        assert!(table[2].1 <= table[1].1 + 1e-6);
    }

    #[test]
    fn sweep_rejects_unsorted() {
        let s = paper_example(1.0);
        assert!(convergence_sweep(&s, &dvector![0.1, 0.1], &[10.0, 1.0], 1e-2, 1.0).is_err());
    }

    #[test]
    fn reproduce_both_variants() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let correct = reproduce_example(ExampleVariant::CorrectP, &mut rng).unwrap();
        assert!(
            correct.all_pass(),
            "failures: {:?}",
            correct.failures().collect::<Vec<_>>()
        );
        let wrong = reproduce_example(ExampleVariant::WrongP, &mut rng).unwrap();
        assert!(
            wrong.all_pass(),
            "failures: {:?}",
            wrong.failures().collect::<Vec<_>>()
        );
    }

    #[test]
    fn empirical_stable_a_finds_threshold() {
        let s = paper_example(1.0);
        let a = empirical_stable_a(
            &s,
            &dvector![-1.0, 2.0],
            &dvector![1.0, 1.0],
            1e-2,
            10.0,
            0.01,
            100.0,
        )
        .unwrap();
        assert!(a.is_some());
    }
}
