//! Command-line front end: scenario I/O, simulation, constants, inclusion
//! sweeps, analysis reports, and SVG plots.
//!
//! Exit codes: 0 success, 2 scenario/parameter validation failure,
//! 3 integration failure, 4 inclusion-check failures.

mod plot;

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use cbfpds::analysis::{self, ExampleVariant, Loop};
use cbfpds::bounds;
use cbfpds::geometry::State;
use cbfpds::scenario::{self, validate_scenario, Scenario};
use cbfpds::scenario::file::ScenarioFile;
use cbfpds::sim::{self, PdsScheme};

const EXIT_VALIDATION: u8 = 2;
const EXIT_INTEGRATION: u8 = 3;
const EXIT_INCLUSION: u8 = 4;

#[derive(Parser)]
#[command(name = "cbfpds", version, about = "Safety filters, projected dynamics, and their perturbation bounds")]
struct Cli {
    /// Seed for every randomized procedure (sampling, multi-start search).
    #[arg(long, global = true, default_value_t = 42)]
    seed: u64,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct ScenarioArg {
    /// Scenario JSON file, or one of the built-ins:
    /// builtin:paper-example, builtin:paper-example-wrongP,
    /// builtin:paper-example-expr, builtin:unit-disc.
    #[arg(long)]
    scenario: String,
}

impl ScenarioArg {
    fn load(&self, seed: u64) -> Result<Scenario> {
        if let Some(name) = self.scenario.strip_prefix("builtin:") {
            return scenario::builtin(name, 1.0)
                .ok_or_else(|| anyhow!("unknown builtin scenario {name:?}"));
        }
        let text = fs::read_to_string(&self.scenario)
            .with_context(|| format!("reading {}", self.scenario))?;
        let sf = ScenarioFile::from_json(&text)?;
        Ok(sf.into_scenario(seed)?)
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ControllerChoice {
    /// Unfiltered effective field.
    Nominal,
    /// Safety-filtered closed loop.
    Cbf,
    /// Projected dynamical system.
    Pds,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SchemeChoice {
    ProjectedEuler,
    SwitchedRk4,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum VariantChoice {
    CorrectP,
    WrongP,
    All,
}

#[derive(Subcommand)]
enum Cmd {
    /// Integrate one trajectory and write it as CSV.
    Simulate {
        #[command(flatten)]
        scenario: ScenarioArg,
        #[arg(long, value_enum)]
        controller: ControllerChoice,
        /// Override the scenario's constraint parameter.
        #[arg(long, allow_hyphen_values = true)]
        a: Option<f64>,
        #[arg(long, default_value_t = 1e-3)]
        dt: f64,
        #[arg(long, default_value_t = 30.0)]
        t_final: f64,
        /// Initial state, comma-separated.
        #[arg(long, default_value = "-1,2", allow_hyphen_values = true)]
        x0: String,
        /// Time-stepping scheme for the projected system.
        #[arg(long, value_enum, default_value_t = SchemeChoice::ProjectedEuler)]
        scheme: SchemeChoice,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute all perturbation-bound constants and print them as JSON.
    Bounds {
        #[command(flatten)]
        scenario: ScenarioArg,
        #[arg(long, default_value_t = 0.5)]
        eps_fraction: f64,
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
    },
    /// Verify the inclusion witness on a grid over the safe set.
    CheckInclusion {
        #[command(flatten)]
        scenario: ScenarioArg,
        #[arg(long, allow_hyphen_values = true)]
        a: f64,
        /// Grid resolution per axis.
        #[arg(long, default_value_t = 32)]
        grid: usize,
        #[arg(long, default_value_t = 0.5)]
        eps_fraction: f64,
    },
    /// Sup-distance between the filtered loop and the projected reference
    /// for a list of constraint parameters.
    Sweep {
        #[command(flatten)]
        scenario: ScenarioArg,
        #[arg(long, default_value = "-1,2", allow_hyphen_values = true)]
        x0: String,
        /// Comma-separated increasing list of constraint parameters.
        #[arg(long, default_value = "1,10,100,1000")]
        a_list: String,
        #[arg(long, default_value_t = 1e-3)]
        dt: f64,
        #[arg(long, default_value_t = 10.0)]
        t_final: f64,
    },
    /// Locate and classify closed-loop equilibria.
    Equilibria {
        #[command(flatten)]
        scenario: ScenarioArg,
        #[arg(long, allow_hyphen_values = true)]
        a: Option<f64>,
        #[arg(long, default_value_t = 40)]
        seeds: usize,
    },
    /// Re-run the built-in safe-stabilization example and check its claims.
    Reproduce {
        #[arg(long, value_enum, default_value_t = VariantChoice::All)]
        variant: VariantChoice,
    },
    /// Render trajectories and the safe-set boundary as a standalone SVG.
    Plot {
        #[command(flatten)]
        scenario: ScenarioArg,
        /// Trajectory CSV files (repeatable).
        #[arg(long = "traj")]
        trajectories: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_vector(text: &str) -> Result<State> {
    let vals: Result<Vec<f64>, _> = text.split(',').map(|s| s.trim().parse::<f64>()).collect();
    Ok(DVector::from_vec(vals.context("parsing vector")?))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_VALIDATION)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    let seed = cli.seed;
    match cli.cmd {
        Cmd::Simulate {
            scenario,
            controller,
            a,
            dt,
            t_final,
            x0,
            scheme,
            out,
        } => {
            let mut s = match scenario.load(seed) {
                Ok(s) => s,
                Err(e) => return fail(EXIT_VALIDATION, e),
            };
            if let Some(a) = a {
                s = match s.with_a(a) {
                    Ok(s) => s,
                    Err(e) => return fail(EXIT_VALIDATION, e.into()),
                };
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let report = validate_scenario(&s, 500, &mut rng)?;
            if !report.all_pass() {
                for c in report.failures() {
                    eprintln!("validation failed: {}: {}", c.name, c.detail);
                }
                return Ok(ExitCode::from(EXIT_VALIDATION));
            }
            let x0 = parse_vector(&x0)?;
            let traj = match controller {
                ControllerChoice::Nominal => sim::integrate_nominal(&s, &x0, dt, t_final),
                ControllerChoice::Cbf => sim::integrate_cbf(&s, &x0, dt, t_final),
                ControllerChoice::Pds => {
                    let sch = match scheme {
                        SchemeChoice::ProjectedEuler => PdsScheme::ProjectedEuler,
                        SchemeChoice::SwitchedRk4 => PdsScheme::SwitchedRk4,
                    };
                    sim::integrate_pds(&s, &x0, dt, t_final, sch)
                }
            };
            let traj = match traj {
                Ok(t) => t,
                Err(e) => return fail(EXIT_INTEGRATION, e.into()),
            };
            fs::write(&out, sim::to_csv(&traj)).with_context(|| format!("writing {out:?}"))?;
            println!(
                "wrote {} rows, final state {:?}, min h {:.3e}",
                traj.len(),
                traj.last_state().as_slice(),
                sim::safety_margin(&traj)
            );
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Bounds {
            scenario,
            eps_fraction,
            samples,
        } => {
            let s = match scenario.load(seed) {
                Ok(s) => s,
                Err(e) => return fail(EXIT_VALIDATION, e),
            };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let bundle = match bounds::compute_constants(&s, eps_fraction, samples, &mut rng) {
                Ok(b) => b,
                Err(e) => return fail(EXIT_VALIDATION, e.into()),
            };
            println!("{}", serde_json::to_string_pretty(&bundle)?);
            Ok(ExitCode::SUCCESS)
        }
        Cmd::CheckInclusion {
            scenario,
            a,
            grid,
            eps_fraction,
        } => {
            let s = match scenario.load(seed) {
                Ok(s) => s,
                Err(e) => return fail(EXIT_VALIDATION, e),
            };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let bundle = match bounds::compute_constants(&s, eps_fraction, 10_000, &mut rng) {
                Ok(b) => b,
                Err(e) => return fail(EXIT_VALIDATION, e.into()),
            };
            if grid == 0 {
                return fail(EXIT_VALIDATION, anyhow!("grid must be at least 1"));
            }
            let (lo, hi) = s.bounding_box()?;
            let mut failures = 0usize;
            let mut worst = f64::INFINITY;
            for idx in grid_points(&lo, &hi, grid) {
                if s.h(&idx)? < 0.0 {
                    continue;
                }
                match bounds::check_inclusion(&s, &bundle, a, &idx) {
                    Ok(r) => {
                        worst = worst.min(r.margin);
                        if !r.pass {
                            failures += 1;
                        }
                        println!("{}", serde_json::to_string(&r)?);
                    }
                    Err(e) => {
                        eprintln!("inclusion check failed at {:?}: {e}", idx.as_slice());
                        failures += 1;
                    }
                }
            }
            eprintln!("worst margin: {worst:.6e}, failures: {failures}");
            if failures > 0 {
                return Ok(ExitCode::from(EXIT_INCLUSION));
            }
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Sweep {
            scenario,
            x0,
            a_list,
            dt,
            t_final,
        } => {
            let s = match scenario.load(seed) {
                Ok(s) => s,
                Err(e) => return fail(EXIT_VALIDATION, e),
            };
            let x0 = parse_vector(&x0)?;
            let a_list: Vec<f64> = a_list
                .split(',')
                .map(|v| v.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .context("parsing a list")?;
            let table = match analysis::convergence_sweep(&s, &x0, &a_list, dt, t_final) {
                Ok(t) => t,
                Err(e) => return fail(EXIT_INTEGRATION, e.into()),
            };
            println!("a,sup_distance");
            for (a, d) in table {
                println!("{a},{d:.16e}");
            }
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Equilibria { scenario, a, seeds } => {
            let s = match scenario.load(seed) {
                Ok(s) => s,
                Err(e) => return fail(EXIT_VALIDATION, e),
            };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let which = Loop::Cbf(a.unwrap_or(s.a));
            let eq = analysis::find_equilibria(&s, which, seeds, &mut rng)?;
            println!("{}", serde_json::to_string_pretty(&eq)?);
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Reproduce { variant } => {
            let variants: &[ExampleVariant] = match variant {
                VariantChoice::CorrectP => &[ExampleVariant::CorrectP],
                VariantChoice::WrongP => &[ExampleVariant::WrongP],
                VariantChoice::All => &[ExampleVariant::CorrectP, ExampleVariant::WrongP],
            };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut all_pass = true;
            for &v in variants {
                let report = analysis::reproduce_example(v, &mut rng)?;
                for c in &report.checks {
                    println!(
                        "[{}] {v:?} {}: {}",
                        if c.pass { "PASS" } else { "FAIL" },
                        c.name,
                        c.detail
                    );
                }
                all_pass &= report.all_pass();
            }
            if all_pass {
                Ok(ExitCode::SUCCESS)
            } else {
                Ok(ExitCode::from(EXIT_INTEGRATION))
            }
        }
        Cmd::Plot {
            scenario,
            trajectories,
            out,
        } => {
            let s = match scenario.load(seed) {
                Ok(s) => s,
                Err(e) => return fail(EXIT_VALIDATION, e),
            };
            let mut curves = Vec::new();
            for path in &trajectories {
                let text = match fs::read_to_string(path) {
                    Ok(t) => t,
                    Err(e) => {
                        return fail(
                            EXIT_VALIDATION,
                            anyhow!("reading {path:?}: {e}"),
                        )
                    }
                };
                let (_, states) = match sim::from_csv(&text) {
                    Ok(p) => p,
                    Err(e) => return fail(EXIT_VALIDATION, e.into()),
                };
                if states.first().map(|x| x.len()) != Some(2) {
                    return fail(
                        EXIT_VALIDATION,
                        anyhow!("{path:?}: plotting needs planar trajectories"),
                    );
                }
                curves.push(states);
            }
            let svg = plot::render(&s, &curves)?;
            fs::write(&out, svg).with_context(|| format!("writing {out:?}"))?;
            println!("wrote {}", out.display());
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn fail(code: u8, e: anyhow::Error) -> Result<ExitCode> {
    eprintln!("error: {e:#}");
    Ok(ExitCode::from(code))
}

/// Row-major grid over the box, `n` points per axis (any dimension).
fn grid_points(lo: &State, hi: &State, n: usize) -> Vec<State> {
    let dim = lo.len();
    let total = n.pow(dim as u32);
    let mut out = Vec::with_capacity(total);
    for flat in 0..total {
        let mut x = State::zeros(dim);
        let mut rem = flat;
        for d in 0..dim {
            let i = rem % n;
            rem /= n;
            let w = if n > 1 { i as f64 / (n - 1) as f64 } else { 0.5 };
            x[d] = lo[d] + (hi[d] - lo[d]) * w;
        }
        out.push(x);
    }
    out
}
