//! Projected dynamical system field, tangent/normal cones, and
//! differential-inclusion residuals.
//!
//! In the interior the PDS follows the effective field unchanged; on the
//! boundary it follows the `P`-metric projection of the field onto the
//! tangent halfspace. The equivalent differential inclusion is
//! `F(x) = f0(x) - P^{-1} N_S(x)`.

use thiserror::Error;

use crate::geometry::{ConeRep, GeometryError, State, BOUNDARY_TOL, OUTSIDE_TOL};
use crate::scenario::{Barrier, Scenario, ScenarioError};

#[derive(Debug, Error)]
pub enum PdsError {
    #[error("state outside the safe set: h(x) = {h:.6e}")]
    OutsideSafeSet { h: f64 },
    #[error("point is not on the boundary: h(x) = {h:.6e}")]
    NotOnBoundary { h: f64 },
    #[error("barrier gradient vanished on the boundary (norm {norm:.3e})")]
    VanishingGradient { norm: f64 },
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Location {
    Interior,
    Boundary,
}

/// One evaluation of the projected field.
#[derive(Debug, Clone)]
pub struct PdsEvaluation {
    pub x: State,
    pub location: Location,
    pub output: State,
    /// Normal-cone coefficient realizing the projection:
    /// `min(0, L_f h) / ||grad h||^2_{P^{-1}}`, zero when the field is
    /// already tangent or the point is interior.
    pub lambda: f64,
}

fn classify(h: f64) -> Result<Location, PdsError> {
    if h < -OUTSIDE_TOL {
        return Err(PdsError::OutsideSafeSet { h });
    }
    if h > BOUNDARY_TOL {
        Ok(Location::Interior)
    } else {
        Ok(Location::Boundary)
    }
}

/// Boundary tangent halfspace `{v | grad h(x)^T v >= 0}`, returned through
/// its inward normal `grad h(x)`.
pub fn tangent_halfspace(barrier: &Barrier, x: &State) -> Result<State, PdsError> {
    let h = barrier.value(x)?;
    if h < -OUTSIDE_TOL {
        return Err(PdsError::OutsideSafeSet { h });
    }
    if h > BOUNDARY_TOL {
        return Err(PdsError::NotOnBoundary { h });
    }
    let grad = barrier.gradient(x)?;
    let gnorm = grad.norm();
    if gnorm <= barrier.gtol {
        return Err(PdsError::VanishingGradient { norm: gnorm });
    }
    Ok(grad)
}

/// Normal cone of the safe set at `x`: `{0}` in the interior, the ray
/// generated by `-grad h(x)` on the boundary.
pub fn normal_cone(barrier: &Barrier, x: &State) -> Result<ConeRep, PdsError> {
    let h = barrier.value(x)?;
    match classify(h)? {
        Location::Interior => Ok(ConeRep::Zero),
        Location::Boundary => {
            let grad = barrier.gradient(x)?;
            let gnorm = grad.norm();
            if gnorm <= barrier.gtol {
                return Err(PdsError::VanishingGradient { norm: gnorm });
            }
            Ok(ConeRep::Ray(grad))
        }
    }
}

/// The projected field. On the boundary this is the single-halfspace KKT
/// closed form `f0(x) - min(0, L_{f0} h(x)) * P^{-1} grad h(x) / ||grad h(x)||^2_{P^{-1}}`.
pub fn pds_field(s: &Scenario, x: &State) -> Result<PdsEvaluation, PdsError> {
    let h = s.h(x)?;
    let location = classify(h)?;
    let field = s.effective(x)?;
    match location {
        Location::Interior => Ok(PdsEvaluation {
            x: x.clone(),
            location,
            output: field,
            lambda: 0.0,
        }),
        Location::Boundary => {
            let grad = s.grad_h(x)?;
            let gnorm = grad.norm();
            if gnorm <= s.barrier.gtol {
                return Err(PdsError::VanishingGradient { norm: gnorm });
            }
            let lie = grad.dot(&field);
            let denom = s.p.inv_quad(&grad)?;
            let lambda = lie.min(0.0) / denom;
            let output = &field - s.p.solve(&grad)? * lambda;
            Ok(PdsEvaluation {
                x: x.clone(),
                location,
                output,
                lambda,
            })
        }
    }
}

/// Euclidean distance from `v` to the inclusion value set
/// `F(x) = {f0(x) + t * P^{-1} grad h(x) | t >= 0}` on the boundary,
/// `{f0(x)}` in the interior.
pub fn di_residual(s: &Scenario, x: &State, v: &State) -> Result<f64, PdsError> {
    let h = s.h(x)?;
    let field = s.effective(x)?;
    match classify(h)? {
        Location::Interior => Ok((v - field).norm()),
        Location::Boundary => {
            let grad = s.grad_h(x)?;
            if grad.norm() <= s.barrier.gtol {
                return Err(PdsError::VanishingGradient { norm: grad.norm() });
            }
            let d = s.p.solve(&grad)?;
            let t = ((v - &field).dot(&d) / d.norm_squared()).max(0.0);
            Ok((v - field - d * t).norm())
        }
    }
}
