//! Scenario JSON schema and conversion to/from [`Scenario`].
//!
//! Expressions appear as strings in the documented grammar; named parameters
//! from the `params` map are substituted at load time, so the in-memory
//! scenario is fully closed.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::expr::{self, Expr};
use crate::geometry::SpdMatrix;

use super::{
    fit_gamma_sampled, gamma_for_quadratic, Barrier, BarrierKind, Controller, Dynamics, GammaFn,
    Scenario, ScenarioError,
};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ScenarioFile {
    pub name: String,
    pub dim: usize,
    pub dynamics: DynamicsFile,
    #[serde(default)]
    pub nominal_controller: ControllerFile,
    pub barrier: BarrierFile,
    pub p: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g: Option<Vec<Vec<f64>>>,
    pub a: f64,
    #[serde(default)]
    pub gamma: GammaFile,
    #[serde(default, skip_serializing_if = "HashMap::is_empty")]
    pub params: HashMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounding_box: Option<BoundingBoxFile>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DynamicsFile {
    Linear { a: Vec<Vec<f64>> },
    Affine { a: Vec<Vec<f64>>, b: Vec<f64> },
    Expr { components: Vec<String> },
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ControllerFile {
    #[default]
    None,
    Linear {
        k: Vec<Vec<f64>>,
    },
    Expr {
        components: Vec<String>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BarrierFile {
    Quadratic {
        c: f64,
        q: Vec<Vec<f64>>,
    },
    Expr {
        h: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        grad: Option<Vec<String>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        gtol: Option<f64>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GammaFile {
    /// Analytic slope for quadratic barriers, sampled fit otherwise.
    #[default]
    Auto,
    LinearSlope {
        slope: f64,
    },
    Table {
        knots: Vec<(f64, f64)>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct BoundingBoxFile {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

fn matrix_from(rows: &[Vec<f64>], dim: usize, what: &str) -> Result<DMatrix<f64>, ScenarioError> {
    if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
        return Err(ScenarioError::Invalid(format!(
            "{what} must be a {dim}x{dim} matrix"
        )));
    }
    Ok(DMatrix::from_fn(dim, dim, |i, j| rows[i][j]))
}

fn matrix_to(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

fn parse_closed(
    text: &str,
    dim: usize,
    params: &HashMap<String, f64>,
) -> Result<Expr, ScenarioError> {
    let ast = expr::parse_expression(text, dim)?;
    let ast = expr::substitute(&ast, params);
    let free = expr::free_params(&ast);
    if !free.is_empty() {
        return Err(ScenarioError::Invalid(format!(
            "unbound parameters in `{text}`: {free:?}"
        )));
    }
    Ok(ast)
}

impl ScenarioFile {
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        serde_json::from_str(text)
            .map_err(|e| ScenarioError::Invalid(format!("scenario JSON: {e}")))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario file serializes")
    }

    /// Builds the validated in-memory scenario. `seed` drives the sampled
    /// gamma fit when `gamma` is `auto` and the barrier is not quadratic.
    pub fn into_scenario(self, seed: u64) -> Result<Scenario, ScenarioError> {
        let dim = self.dim;
        let params = &self.params;
        let dynamics = match &self.dynamics {
            DynamicsFile::Linear { a } => Dynamics::Linear(matrix_from(a, dim, "dynamics.a")?),
            DynamicsFile::Affine { a, b } => {
                if b.len() != dim {
                    return Err(ScenarioError::Invalid("dynamics.b dimension".into()));
                }
                Dynamics::Affine(
                    matrix_from(a, dim, "dynamics.a")?,
                    DVector::from_vec(b.clone()),
                )
            }
            DynamicsFile::Expr { components } => {
                if components.len() != dim {
                    return Err(ScenarioError::Invalid("dynamics components count".into()));
                }
                Dynamics::Expr(
                    components
                        .iter()
                        .map(|t| parse_closed(t, dim, params))
                        .collect::<Result<_, _>>()?,
                )
            }
        };
        let controller = match &self.nominal_controller {
            ControllerFile::None => Controller::None,
            ControllerFile::Linear { k } => {
                Controller::Linear(matrix_from(k, dim, "nominal_controller.k")?)
            }
            ControllerFile::Expr { components } => {
                if components.len() != dim {
                    return Err(ScenarioError::Invalid("controller components count".into()));
                }
                Controller::Expr(
                    components
                        .iter()
                        .map(|t| parse_closed(t, dim, params))
                        .collect::<Result<_, _>>()?,
                )
            }
        };
        let barrier = match &self.barrier {
            BarrierFile::Quadratic { c, q } => {
                Barrier::quadratic(*c, SpdMatrix::new(matrix_from(q, dim, "barrier.q")?)?)?
            }
            BarrierFile::Expr { h, grad, gtol } => {
                let h = parse_closed(h, dim, params)?;
                let grad = grad
                    .as_ref()
                    .map(|g| {
                        g.iter()
                            .map(|t| parse_closed(t, dim, params))
                            .collect::<Result<Vec<_>, _>>()
                    })
                    .transpose()?;
                let mut b = Barrier::from_expr(h, grad, dim)?;
                if let Some(gtol) = gtol {
                    b.gtol = *gtol;
                }
                b
            }
        };
        let p = SpdMatrix::new(matrix_from(&self.p, dim, "p")?)?;
        let g = match &self.g {
            None => None,
            Some(rows) => Some(SpdMatrix::new(matrix_from(rows, dim, "g")?)?),
        };
        let bounding_box = self
            .bounding_box
            .as_ref()
            .map(|bb| {
                if bb.lo.len() != dim || bb.hi.len() != dim {
                    return Err(ScenarioError::Invalid("bounding box dimension".into()));
                }
                Ok((
                    DVector::from_vec(bb.lo.clone()),
                    DVector::from_vec(bb.hi.clone()),
                ))
            })
            .transpose()?;
        let gamma = match &self.gamma {
            GammaFile::LinearSlope { slope } => GammaFn::linear(*slope)?,
            GammaFile::Table { knots } => GammaFn::tabulated(knots.clone())?,
            GammaFile::Auto => match &barrier.kind {
                BarrierKind::Quadratic { c, q } => gamma_for_quadratic(*c, q)?,
                BarrierKind::Expr { .. } => {
                    let bb = bounding_box.clone().ok_or_else(|| {
                        ScenarioError::Invalid(
                            "gamma auto with an expression barrier needs a bounding box".into(),
                        )
                    })?;
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    fit_gamma_sampled(&barrier, &bb, 2000, &mut rng)?
                }
            },
        };
        Scenario::new(
            self.name,
            dynamics,
            controller,
            barrier,
            p,
            g,
            self.a,
            gamma,
            bounding_box,
        )
    }

    /// Serializes a scenario back to its file form. `gamma` is written in its
    /// resolved concrete form, never as `auto`.
    pub fn from_scenario(s: &Scenario) -> Self {
        let dynamics = match &s.dynamics {
            Dynamics::Linear(a) => DynamicsFile::Linear { a: matrix_to(a) },
            Dynamics::Affine(a, b) => DynamicsFile::Affine {
                a: matrix_to(a),
                b: b.as_slice().to_vec(),
            },
            Dynamics::Expr(c) => DynamicsFile::Expr {
                components: c.iter().map(|e| e.to_string()).collect(),
            },
        };
        let nominal_controller = match &s.controller {
            Controller::None => ControllerFile::None,
            Controller::Linear(k) => ControllerFile::Linear { k: matrix_to(k) },
            Controller::Expr(c) => ControllerFile::Expr {
                components: c.iter().map(|e| e.to_string()).collect(),
            },
        };
        let barrier = match &s.barrier.kind {
            BarrierKind::Quadratic { c, q } => BarrierFile::Quadratic {
                c: *c,
                q: matrix_to(q.matrix()),
            },
            BarrierKind::Expr { h, grad } => BarrierFile::Expr {
                h: h.to_string(),
                grad: Some(grad.iter().map(|e| e.to_string()).collect()),
                gtol: Some(s.barrier.gtol),
            },
        };
        let gamma = match &s.gamma {
            GammaFn::LinearSlope(slope) => GammaFile::LinearSlope { slope: *slope },
            GammaFn::Tabulated(knots) => GammaFile::Table {
                knots: knots.clone(),
            },
        };
        ScenarioFile {
            name: s.name.clone(),
            dim: s.dim,
            dynamics,
            nominal_controller,
            barrier,
            p: matrix_to(s.p.matrix()),
            g: s.g.as_ref().map(|g| matrix_to(g.matrix())),
            a: s.a,
            gamma,
            params: HashMap::new(),
            bounding_box: s.bounding_box.as_ref().map(|(lo, hi)| BoundingBoxFile {
                lo: lo.as_slice().to_vec(),
                hi: hi.as_slice().to_vec(),
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario;

    const PAPER_JSON: &str = r#"{
        "name": "paper-example",
        "dim": 2,
        "dynamics": {"kind": "linear", "a": [[1.0, 0.0], [0.0, 1.0]]},
        "nominal_controller": {"kind": "linear", "k": [[-2.0, -4.0], [1.0, -1.0]]},
        "barrier": {"kind": "quadratic", "c": 9.0, "q": [[3.0, 2.0], [2.0, 2.0]]},
        "p": [[0.625, 0.125], [0.125, 2.625]],
        "g": [[0.625, 0.125], [0.125, 2.625]],
        "a": 1.0,
        "gamma": {"kind": "auto"}
    }"#;

    #[test]
    fn loads_paper_example_json() {
        let sf = ScenarioFile::from_json(PAPER_JSON).unwrap();
        let s = sf.into_scenario(42).unwrap();
        assert_eq!(s, scenario::paper_example(1.0));
    }

    #[test]
    fn round_trip_is_identity() {
        for s in [
            scenario::paper_example(1.0),
            scenario::paper_example_wrong_p(2.0),
            scenario::paper_example_expr(1.0),
            scenario::unit_disc(0.5),
        ] {
            let sf = ScenarioFile::from_json(&ScenarioFile::from_scenario(&s).to_json()).unwrap();
            let s2 = sf.into_scenario(42).unwrap();
            assert_eq!(s, s2, "round trip changed scenario {}", s.name);
        }
    }

    #[test]
    fn expr_scenario_with_params() {
        let json = r#"{
            "name": "disc-k",
            "dim": 2,
            "dynamics": {"kind": "expr", "components": ["-k*x1", "-k*x2"]},
            "barrier": {"kind": "quadratic", "c": 1.0, "q": [[1.0, 0.0], [0.0, 1.0]]},
            "p": [[1.0, 0.0], [0.0, 1.0]],
            "a": 1.0,
            "params": {"k": 2.0}
        }"#;
        let s = ScenarioFile::from_json(json).unwrap().into_scenario(42).unwrap();
        let v = s
            .effective(&nalgebra::dvector![1.0, -0.5])
            .unwrap();
        assert!((v - nalgebra::dvector![-2.0, 1.0]).norm() < 1e-14);
    }

    #[test]
    fn unbound_param_rejected() {
        let json = r#"{
            "name": "bad",
            "dim": 1,
            "dynamics": {"kind": "expr", "components": ["-k*x1"]},
            "barrier": {"kind": "quadratic", "c": 1.0, "q": [[1.0]]},
            "p": [[1.0]],
            "a": 1.0
        }"#;
        assert!(ScenarioFile::from_json(json)
            .unwrap()
            .into_scenario(42)
            .is_err());
    }
}
