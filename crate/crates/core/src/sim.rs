//! Trajectory generation and safety monitoring.
//!
//! The filtered closed loop is a classical ODE and is integrated with
//! fixed-step RK4. The projected system is discontinuous on the boundary;
//! the default scheme projects an explicit Euler step back into the set,
//! the alternative runs RK4 directly on the projected field with snapping.
//! Fixed steps keep CSV outputs byte-identical across runs.

use std::fmt::Write as _;

use thiserror::Error;

use crate::cbf::{self, CbfError};
use crate::geometry::{proj_boundary_euclidean, proj_set_weighted, GeometryError, State, BOUNDARY_TOL};
use crate::pds::{self, PdsError};
use crate::scenario::{Scenario, ScenarioError};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("initial state outside the safe set: h(x0) = {h:.6e}")]
    UnsafeStart { h: f64 },
    #[error("invalid step/horizon: dt = {dt}, t_final = {t_final}")]
    InvalidGrid { dt: f64, t_final: f64 },
    #[error("trajectory escaped the safe set at t = {t:.6}: h = {h:.6e} after snapping")]
    Escape { t: f64, h: f64 },
    #[error("trajectory CSV malformed at line {line}: {detail}")]
    Csv { line: usize, detail: String },
    #[error(transparent)]
    Cbf(#[from] CbfError),
    #[error(transparent)]
    Pds(#[from] PdsError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Rk4Cbf,
    Rk4Nominal,
    ProjectedEuler,
    SwitchedRk4,
}

/// A boundary-handling incident during integration.
#[derive(Debug, Clone)]
pub struct Event {
    pub t: f64,
    pub detail: String,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<State>,
    pub h_values: Vec<f64>,
    /// Whether the safety constraint was active at each stored state
    /// (always false for methods without a constraint).
    pub active: Vec<bool>,
    pub method: Method,
    pub dt: f64,
    pub events: Vec<Event>,
}

impl Trajectory {
    pub fn last_state(&self) -> &State {
        self.states.last().expect("trajectory is never empty")
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

fn check_grid(dt: f64, t_final: f64) -> Result<usize, SimError> {
    if !(dt > 0.0) || !(t_final > 0.0) || !dt.is_finite() || !t_final.is_finite() {
        return Err(SimError::InvalidGrid { dt, t_final });
    }
    Ok((t_final / dt).round().max(1.0) as usize)
}

fn rk4_step(
    f: &mut dyn FnMut(&State) -> Result<State, SimError>,
    x: &State,
    dt: f64,
) -> Result<State, SimError> {
    let k1 = f(x)?;
    let k2 = f(&(x + &k1 * (dt / 2.0)))?;
    let k3 = f(&(x + &k2 * (dt / 2.0)))?;
    let k4 = f(&(x + &k3 * dt))?;
    Ok(x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0))
}

/// One macro-step with substep retries and a final boundary snap.
///
/// The exact flow never leaves the set, so any penetration is numerical;
/// halving the substep usually removes it, and snapping covers the rest.
/// A deep escape (`h < -1e-3` after snapping) means the field itself is
/// unsafe and aborts the run.
fn guarded_step(
    s: &Scenario,
    f: &mut dyn FnMut(&State) -> Result<State, SimError>,
    x: &State,
    t: f64,
    dt: f64,
    events: &mut Vec<Event>,
) -> Result<State, SimError> {
    // While riding the boundary with an outward field, every refinement
    // lands outside too; go straight to the snap instead of 127 substeps.
    let riding = s.h(x)? <= BOUNDARY_TOL;
    let mut substeps = 1;
    while substeps <= if riding { 1 } else { 64 } {
        let sub = dt / substeps as f64;
        let mut y = x.clone();
        let mut ok = true;
        for _ in 0..substeps {
            y = rk4_step(f, &y, sub)?;
            if s.h(&y)? < -BOUNDARY_TOL {
                ok = false;
                break;
            }
        }
        if ok {
            return Ok(y);
        }
        substeps *= 2;
    }
    // All retries overshoot: snap the full-step landing point to the boundary.
    let y = rk4_step(f, x, dt)?;
    let h_before = s.h(&y)?;
    let snapped = proj_boundary_euclidean(&y, &s.barrier)?;
    let h_after = s.h(&snapped)?;
    events.push(Event {
        t: t + dt,
        detail: format!("snapped to boundary, h {h_before:.3e} -> {h_after:.3e}"),
    });
    if h_after < -1e-3 {
        return Err(SimError::Escape { t: t + dt, h: h_after });
    }
    Ok(snapped)
}

fn run_guarded(
    s: &Scenario,
    x0: &State,
    dt: f64,
    t_final: f64,
    method: Method,
    f: &mut dyn FnMut(&State) -> Result<State, SimError>,
    active_at: &mut dyn FnMut(&State) -> Result<bool, SimError>,
) -> Result<Trajectory, SimError> {
    let h0 = s.h(x0)?;
    if h0 < -BOUNDARY_TOL {
        return Err(SimError::UnsafeStart { h: h0 });
    }
    let steps = check_grid(dt, t_final)?;
    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    let mut h_values = Vec::with_capacity(steps + 1);
    let mut active = Vec::with_capacity(steps + 1);
    let mut events = Vec::new();
    let mut x = x0.clone();
    for k in 0..=steps {
        let t = k as f64 * dt;
        h_values.push(s.h(&x)?);
        active.push(active_at(&x)?);
        times.push(t);
        states.push(x.clone());
        if k < steps {
            x = guarded_step(s, f, &x, t, dt, &mut events)?;
        }
    }
    Ok(Trajectory {
        times,
        states,
        h_values,
        active,
        method,
        dt,
        events,
    })
}

/// RK4 on the safety-filtered closed loop.
pub fn integrate_cbf(s: &Scenario, x0: &State, dt: f64, t_final: f64) -> Result<Trajectory, SimError> {
    let mut f = |x: &State| Ok(cbf::cbf_field_extended(s, x)?.output);
    let mut act = |x: &State| Ok(cbf::cbf_field_extended(s, x)?.active);
    run_guarded(s, x0, dt, t_final, Method::Rk4Cbf, &mut f, &mut act)
}

/// RK4 on the unfiltered effective field (nominal closed loop). No safety
/// guarantee: the trajectory may leave the set, and no snapping is applied.
pub fn integrate_nominal(
    s: &Scenario,
    x0: &State,
    dt: f64,
    t_final: f64,
) -> Result<Trajectory, SimError> {
    let steps = check_grid(dt, t_final)?;
    let mut f = |x: &State| Ok(s.effective(x)?);
    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    let mut h_values = Vec::with_capacity(steps + 1);
    let mut x = x0.clone();
    for k in 0..=steps {
        times.push(k as f64 * dt);
        h_values.push(s.h(&x)?);
        states.push(x.clone());
        if k < steps {
            x = rk4_step(&mut f, &x, dt)?;
        }
    }
    let n = times.len();
    Ok(Trajectory {
        times,
        states,
        h_values,
        active: vec![false; n],
        method: Method::Rk4Nominal,
        dt,
        events: Vec::new(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PdsScheme {
    /// `x+ = proj_S^P(x + dt f(x))`: first order, robust to the boundary
    /// discontinuity.
    #[default]
    ProjectedEuler,
    /// RK4 directly on the projected field with boundary snapping; higher
    /// order away from chattering.
    SwitchedRk4,
}

/// Time-stepping for the projected dynamical system.
pub fn integrate_pds(
    s: &Scenario,
    x0: &State,
    dt: f64,
    t_final: f64,
    scheme: PdsScheme,
) -> Result<Trajectory, SimError> {
    match scheme {
        PdsScheme::SwitchedRk4 => {
            // The stage field must not switch branches mid-step: while the
            // state slides on the boundary, RK4 stage points straddle it by
            // integration noise, and mixing the raw interior field into the
            // stage combination corrupts the sliding velocity. Decide the
            // branch once per macro step from the step's start state.
            let sliding = std::cell::Cell::new(false);
            let mut f = |x: &State| {
                let xeval = if sliding.get() || s.h(x)? < -BOUNDARY_TOL {
                    proj_boundary_euclidean(x, &s.barrier)?
                } else {
                    x.clone()
                };
                Ok(pds::pds_field(s, &xeval)?.output)
            };
            let mut act = |x: &State| {
                let on_boundary = s.h(x)? <= BOUNDARY_TOL;
                sliding.set(on_boundary && s.lie_h(x)? < 0.0);
                Ok(on_boundary)
            };
            run_guarded(s, x0, dt, t_final, Method::SwitchedRk4, &mut f, &mut act)
        }
        PdsScheme::ProjectedEuler => {
            let h0 = s.h(x0)?;
            if h0 < -BOUNDARY_TOL {
                return Err(SimError::UnsafeStart { h: h0 });
            }
            let steps = check_grid(dt, t_final)?;
            let mut times = Vec::with_capacity(steps + 1);
            let mut states = Vec::with_capacity(steps + 1);
            let mut h_values = Vec::with_capacity(steps + 1);
            let mut active = Vec::with_capacity(steps + 1);
            let mut x = x0.clone();
            for k in 0..=steps {
                let h = s.h(&x)?;
                times.push(k as f64 * dt);
                h_values.push(h);
                active.push(h <= BOUNDARY_TOL);
                states.push(x.clone());
                if k < steps {
                    let free = &x + s.effective(&x)? * dt;
                    x = if s.h(&free)? >= 0.0 {
                        free
                    } else {
                        proj_set_weighted(&free, &s.p, &s.barrier)?
                    };
                }
            }
            Ok(Trajectory {
                times,
                states,
                h_values,
                active,
                method: Method::ProjectedEuler,
                dt,
                events: Vec::new(),
            })
        }
    }
}

/// Max pointwise state distance over the overlapping time range, with
/// linear interpolation between stored samples.
pub fn sup_distance(t1: &Trajectory, t2: &Trajectory) -> Result<f64, SimError> {
    let lo = t1.times[0].max(t2.times[0]);
    let hi = t1.times.last().unwrap().min(*t2.times.last().unwrap());
    if !(hi >= lo) {
        return Err(SimError::InvalidGrid { dt: lo, t_final: hi });
    }
    let sample = |tr: &Trajectory, t: f64| -> State {
        match tr.times.binary_search_by(|v| v.partial_cmp(&t).unwrap()) {
            Ok(i) => tr.states[i].clone(),
            Err(i) => {
                let (i0, i1) = (i - 1, i.min(tr.times.len() - 1));
                let (t0, t1v) = (tr.times[i0], tr.times[i1]);
                let w = if t1v > t0 { (t - t0) / (t1v - t0) } else { 0.0 };
                &tr.states[i0] * (1.0 - w) + &tr.states[i1] * w
            }
        }
    };
    let mut best: f64 = 0.0;
    for tr in [t1, t2] {
        for &t in &tr.times {
            if t < lo || t > hi {
                continue;
            }
            best = best.max((sample(t1, t) - sample(t2, t)).norm());
        }
    }
    Ok(best)
}

/// Minimum barrier value along the trajectory; safe runs stay above -1e-6.
pub fn safety_margin(t: &Trajectory) -> f64 {
    t.h_values.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Renders `t,x1,...,xn,h,active` rows with 17-significant-digit floats.
pub fn to_csv(t: &Trajectory) -> String {
    let dim = t.states[0].len();
    let mut out = String::new();
    out.push('t');
    for i in 1..=dim {
        let _ = write!(out, ",x{i}");
    }
    out.push_str(",h,active\n");
    for k in 0..t.len() {
        let _ = write!(out, "{:.16e}", t.times[k]);
        for i in 0..dim {
            let _ = write!(out, ",{:.16e}", t.states[k][i]);
        }
        let _ = writeln!(out, ",{:.16e},{}", t.h_values[k], u8::from(t.active[k]));
    }
    out
}

/// Parses trajectory CSV back into `(times, states)`; used by plotting.
pub fn from_csv(text: &str) -> Result<(Vec<f64>, Vec<State>), SimError> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(SimError::Csv {
        line: 1,
        detail: "empty file".into(),
    })?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 4 || cols[0] != "t" || cols[cols.len() - 2] != "h" {
        return Err(SimError::Csv {
            line: 1,
            detail: format!("unexpected header {header:?}"),
        });
    }
    let dim = cols.len() - 3;
    let mut times = Vec::new();
    let mut states = Vec::new();
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != cols.len() {
            return Err(SimError::Csv {
                line: idx + 1,
                detail: format!("expected {} fields, got {}", cols.len(), fields.len()),
            });
        }
        let parse = |s: &str, line: usize| -> Result<f64, SimError> {
            s.parse().map_err(|e| SimError::Csv {
                line,
                detail: format!("bad float {s:?}: {e}"),
            })
        };
        times.push(parse(fields[0], idx + 1)?);
        let mut x = State::zeros(dim);
        for i in 0..dim {
            x[i] = parse(fields[1 + i], idx + 1)?;
        }
        states.push(x);
    }
    Ok((times, states))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{paper_example, paper_example_wrong_p, unit_disc};
    use nalgebra::dvector;

    #[test]
    fn correct_p_stabilizes_origin() {
        let s = paper_example(1.0);
        let t = integrate_cbf(&s, &dvector![-1.0, 2.0], 1e-3, 30.0).unwrap();
        assert!(t.last_state().norm() < 1e-3, "final {:?}", t.last_state());
        assert!(safety_margin(&t) >= -1e-6);
    }

    #[test]
    fn origin_stays_put() {
        let s = paper_example(1.0);
        let t = integrate_cbf(&s, &dvector![0.0, 0.0], 1e-2, 1.0).unwrap();
        assert_eq!(t.last_state().norm(), 0.0);
    }

    #[test]
    fn wrong_p_converges_to_undesired_equilibrium() {
        let s = paper_example_wrong_p(1.0);
        let t = integrate_cbf(&s, &dvector![-1.0, 2.0], 1e-3, 30.0).unwrap();
        let target = dvector![-2.985, 2.777];
        assert!(
            (t.last_state() - target).norm() < 1e-2,
            "final {:?}",
            t.last_state()
        );
        assert!(safety_margin(&t) >= -1e-6);
    }

    #[test]
    fn rk4_self_consistency_under_step_halving() {
        let s = paper_example(1.0);
        let a = integrate_cbf(&s, &dvector![-1.0, 2.0], 1e-3, 5.0).unwrap();
        let b = integrate_cbf(&s, &dvector![-1.0, 2.0], 5e-4, 5.0).unwrap();
        assert!((a.last_state() - b.last_state()).norm() <= 1e-6);
    }

    #[test]
    fn interior_pds_matches_plain_integration() {
        // start close to the origin: the boundary is never reached, so the
        // projection never engages and both schemes track the smooth flow
        let s = paper_example(1.0);
        let x0 = dvector![0.1, 0.1];
        let pe = integrate_pds(&s, &x0, 1e-3, 2.0, PdsScheme::ProjectedEuler).unwrap();
        let rk = integrate_pds(&s, &x0, 1e-3, 2.0, PdsScheme::SwitchedRk4).unwrap();
        let plain = integrate_nominal(&s, &x0, 1e-3, 2.0).unwrap();
        assert!(sup_distance(&pe, &plain).unwrap() < 5e-3); // O(dt)
        assert!(sup_distance(&rk, &plain).unwrap() < 1e-9); // O(dt^4)
    }

    #[test]
    fn pds_schemes_agree_on_boundary_riding_run() {
        let s = paper_example(1.0);
        let x0 = dvector![-1.0, 2.0];
        let dt = 1e-3;
        let pe = integrate_pds(&s, &x0, dt, 10.0, PdsScheme::ProjectedEuler).unwrap();
        let rk = integrate_pds(&s, &x0, dt, 10.0, PdsScheme::SwitchedRk4).unwrap();
        assert!(safety_margin(&pe) >= -1e-6);
        assert!(safety_margin(&rk) >= -1e-6);
        assert!(sup_distance(&pe, &rk).unwrap() <= 5.0 * dt);
        // most of the decay toward the origin has happened by T = 10
        assert!(pe.last_state().norm() < 5e-2);
    }

    #[test]
    fn boundary_start_with_inward_field_moves_inside() {
        let s = unit_disc(1.0); // f = -x points inward
        let x0 = dvector![1.0, 0.0];
        let t = integrate_pds(&s, &x0, 1e-2, 0.1, PdsScheme::ProjectedEuler).unwrap();
        assert!(t.h_values[1] > 0.0);
    }

    #[test]
    fn unsafe_start_rejected() {
        let s = paper_example(1.0);
        assert!(matches!(
            integrate_cbf(&s, &dvector![10.0, 0.0], 1e-2, 1.0),
            Err(SimError::UnsafeStart { .. })
        ));
    }

    #[test]
    fn sup_distance_trivial_cases() {
        let s = paper_example(1.0);
        let t = integrate_cbf(&s, &dvector![-1.0, 2.0], 1e-2, 1.0).unwrap();
        assert_eq!(sup_distance(&t, &t).unwrap(), 0.0);

        let constant = |p: State| Trajectory {
            times: vec![0.0, 1.0],
            states: vec![p.clone(), p.clone()],
            h_values: vec![0.0, 0.0],
            active: vec![false, false],
            method: Method::Rk4Nominal,
            dt: 1.0,
            events: Vec::new(),
        };
        let a = constant(dvector![1.0, 0.0]);
        let b = constant(dvector![0.0, 2.0]);
        assert!((sup_distance(&a, &b).unwrap() - 5.0_f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn csv_round_trip() {
        let s = paper_example(1.0);
        let t = integrate_cbf(&s, &dvector![-1.0, 2.0], 1e-2, 0.5).unwrap();
        let text = to_csv(&t);
        assert!(text.starts_with("t,x1,x2,h,active\n"));
        let (times, states) = from_csv(&text).unwrap();
        assert_eq!(times.len(), t.len());
        for k in 0..t.len() {
            assert_eq!(times[k], t.times[k]);
            assert_eq!(states[k], t.states[k]);
        }
        // h recomputable from stored states
        for (x, h) in t.states.iter().zip(&t.h_values) {
            assert!((s.h(x).unwrap() - h).abs() <= 1e-12);
        }
    }

    #[test]
    fn csv_rejects_malformed_input() {
        assert!(matches!(
            from_csv("nope\n1,2\n"),
            Err(SimError::Csv { line: 1, .. })
        ));
        assert!(from_csv("t,x1,x2,h,active\n0.0,1.0\n").is_err());
    }
}
