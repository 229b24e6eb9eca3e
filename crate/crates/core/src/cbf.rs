//! The CBF-QP safety filter.
//!
//! The filtered field minimally modifies the effective (closed-loop nominal)
//! field so that `L_f h(x) + a h(x) >= 0` holds, which keeps the safe set
//! forward invariant. The closed form and an independent KKT oracle are both
//! provided; they must agree to 1e-10 on all valid inputs.

use nalgebra::DMatrix;
use thiserror::Error;

use crate::geometry::{GeometryError, SpdMatrix, State, OUTSIDE_TOL};
use crate::scenario::{Scenario, ScenarioError};

#[derive(Debug, Error)]
pub enum CbfError {
    #[error("state outside the safe set: h(x) = {h:.6e}")]
    OutsideSafeSet { h: f64 },
    #[error("constraint active but barrier gradient vanished (norm {norm:.3e}); a < a_star or invalid scenario")]
    ActiveGradientVanishes { norm: f64 },
    #[error("zero gradient with violated constraint in QP oracle")]
    InfeasibleZeroGradient,
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// One evaluation of the safety-filtered field.
#[derive(Debug, Clone)]
pub struct CbfEvaluation {
    pub x: State,
    /// Effective field value `f0(x)` before filtering.
    pub field: State,
    pub h: f64,
    /// Lie derivative `L_{f0} h(x)`.
    pub lie_h: f64,
    /// Whether the CBF constraint is active (`L_{f0} h + a h <= 0`).
    pub active: bool,
    pub output: State,
}

/// Closed-form CBF-QP field
/// `f0(x) - min(0, L_{f0} h(x) + a h(x)) * P^{-1} grad h(x) / ||grad h(x)||^2_{P^{-1}}`.
pub fn cbf_field(s: &Scenario, x: &State) -> Result<CbfEvaluation, CbfError> {
    let eval = cbf_field_extended(s, x)?;
    if eval.h < -OUTSIDE_TOL {
        return Err(CbfError::OutsideSafeSet { h: eval.h });
    }
    Ok(eval)
}

/// Same closed form without the safe-set membership check. The formula is
/// well-defined slightly outside the set; equilibrium classification needs
/// finite-difference stencils that straddle the boundary.
pub fn cbf_field_extended(s: &Scenario, x: &State) -> Result<CbfEvaluation, CbfError> {
    let h = s.h(x)?;
    let field = s.effective(x)?;
    let grad = s.grad_h(x)?;
    let lie_h = grad.dot(&field);
    let slack = lie_h + s.a * h;
    let active = slack <= 0.0;
    let output = if !active {
        field.clone()
    } else {
        let gnorm = grad.norm();
        if gnorm <= s.barrier.gtol {
            return Err(CbfError::ActiveGradientVanishes { norm: gnorm });
        }
        let denom = s.p.inv_quad(&grad)?;
        let dir = s.p.solve(&grad)?;
        &field - dir * (slack / denom)
    };
    Ok(CbfEvaluation {
        x: x.clone(),
        field,
        h,
        lie_h,
        active,
        output,
    })
}

/// The safety-filtered control input `u` with `f(x) + u = f_cbf(x)`;
/// equals the nominal input `u0(x)` whenever the constraint is slack.
pub fn cbf_filter_input(s: &Scenario, x: &State) -> Result<State, CbfError> {
    let eval = cbf_field(s, x)?;
    let f_raw = s.dynamics.eval(x)?;
    Ok(eval.output - f_raw)
}

/// Independent oracle for the one-constraint QP
/// `argmin_mu ||mu - fnom||^2_P  s.t.  gradh^T mu + a h >= 0`,
/// solved through the full KKT linear system rather than the closed form.
pub fn qp_oracle(
    fnom: &State,
    gradh: &State,
    h: f64,
    a: f64,
    p: &SpdMatrix,
) -> Result<State, CbfError> {
    let n = fnom.len();
    if gradh.dot(fnom) + a * h >= 0.0 {
        return Ok(fnom.clone()); // unconstrained optimum is feasible
    }
    if gradh.norm() <= 1e-12 {
        return Err(CbfError::InfeasibleZeroGradient);
    }
    // stationarity: 2 P (mu - fnom) - lambda * gradh = 0
    // active constraint: gradh^T mu = -a h
    let mut kkt = DMatrix::zeros(n + 1, n + 1);
    let mut rhs = State::zeros(n + 1);
    let two_p = p.matrix() * 2.0;
    for i in 0..n {
        for j in 0..n {
            kkt[(i, j)] = two_p[(i, j)];
        }
        kkt[(i, n)] = -gradh[i];
        kkt[(n, i)] = gradh[i];
    }
    let pf = p.apply(fnom) * 2.0;
    for i in 0..n {
        rhs[i] = pf[i];
    }
    rhs[n] = -a * h;
    let sol = kkt
        .lu()
        .solve(&rhs)
        .ok_or(GeometryError::NotPositiveDefinite)?;
    Ok(sol.rows(0, n).into_owned())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{paper_example, paper_example_wrong_p, unit_disc};
    use nalgebra::dvector;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn inactive_point_passes_field_through() {
        // h = 6, grad h = (-2, -4), f0 = (-7, -1), L h = 18: constraint slack.
        let s = paper_example(1.0);
        let x = dvector![-1.0, 2.0];
        let eval = cbf_field(&s, &x).unwrap();
        assert!((eval.h - 6.0).abs() < 1e-12);
        assert!((eval.lie_h - 18.0).abs() < 1e-12);
        assert!(!eval.active);
        assert_eq!(eval.output, eval.field);
        assert!((eval.output - dvector![-7.0, -1.0]).norm() < 1e-14);
    }

    #[test]
    fn origin_is_inactive_equilibrium() {
        let s = paper_example(1.0);
        let eval = cbf_field(&s, &dvector![0.0, 0.0]).unwrap();
        assert!(!eval.active);
        assert_eq!(eval.output.norm(), 0.0);
    }

    #[test]
    fn wrong_p_has_undesired_equilibrium_on_boundary() {
        let s = paper_example_wrong_p(1.0);
        let x = dvector![-2.985, 2.777];
        let eval = cbf_field(&s, &x).unwrap();
        assert!(eval.active);
        assert!(eval.output.norm() <= 0.05, "|f_cbf| = {}", eval.output.norm());
    }

    #[test]
    fn outside_safe_set_rejected() {
        let s = paper_example(1.0);
        assert!(matches!(
            cbf_field(&s, &dvector![10.0, 10.0]),
            Err(CbfError::OutsideSafeSet { .. })
        ));
    }

    #[test]
    fn filter_input_equals_nominal_when_inactive() {
        let s = paper_example(1.0);
        let x = dvector![-1.0, 2.0];
        let u = cbf_filter_input(&s, &x).unwrap();
        // u0(-1, 2) = (-2*(-1) - 4*2, -1 - 2) = (-6, -3)
        assert!((u - dvector![-6.0, -3.0]).norm() < 1e-13);
    }

    #[test]
    fn active_output_satisfies_constraint() {
        let s = unit_disc(1.0);
        // on the boundary with outward-facing constraint interplay
        let x = dvector![0.999_999, 0.0];
        let eval = cbf_field(&s, &x).unwrap();
        let lie_out = s.grad_h(&x).unwrap().dot(&eval.output);
        assert!(lie_out + s.a * eval.h >= -1e-9);
    }

    #[test]
    fn qp_oracle_trivial_cases() {
        let p = SpdMatrix::identity(2);
        let fnom = dvector![1.0, 1.0];
        let g = dvector![1.0, 0.0];
        // constraint satisfied at fnom
        assert_eq!(qp_oracle(&fnom, &g, 1.0, 1.0, &p).unwrap(), fnom);
        // Euclidean projection onto the halfspace mu_1 >= 0
        let mu = qp_oracle(&dvector![-1.0, 0.0], &g, 0.0, 1.0, &p).unwrap();
        assert!((mu - dvector![0.0, 0.0]).norm() < 1e-12);
    }

    #[test]
    fn qp_oracle_zero_gradient_error() {
        let p = SpdMatrix::identity(2);
        assert!(matches!(
            qp_oracle(&dvector![-1.0, 0.0], &dvector![0.0, 0.0], -1.0, 1.0, &p),
            Err(CbfError::InfeasibleZeroGradient)
        ));
    }

    #[test]
    fn closed_form_matches_kkt_oracle_fuzz() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let s0 = paper_example(1.0);
        for _ in 0..2000 {
            let x = s0.sample_in_set(&mut rng).unwrap();
            let a = 10.0_f64.powf(rng.gen_range(-1.0..2.0));
            let s = s0.with_a(a).unwrap();
            let eval = cbf_field(&s, &x).unwrap();
            let mu = qp_oracle(
                &eval.field,
                &s.grad_h(&x).unwrap(),
                eval.h,
                a,
                &s.p,
            )
            .unwrap();
            assert!(
                (eval.output - mu).norm() <= 1e-10,
                "disagreement at {x:?}, a = {a}"
            );
        }
    }

    #[test]
    fn activation_tie_is_continuous() {
        // Manufacture L h + a h = 0 exactly: both branches give the same output.
        let p = SpdMatrix::identity(2);
        let g = dvector![0.0, 1.0];
        let fnom = dvector![3.0, -2.0]; // g . fnom = -2
        let mu = qp_oracle(&fnom, &g, 2.0, 1.0, &p).unwrap(); // slack = 0
        assert!((mu - fnom).norm() < 1e-12);
    }
}
