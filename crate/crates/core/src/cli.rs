//! The `solve`, `check` and `oracle` commands.

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::flow::{decompose, intensity_from_paths, PathFlow};
use crate::formats;
use crate::geodesics::shortest_costs;
use crate::measures::{TransportPlan, BALANCE_TOL};
use crate::oracle::{brute_force_optimum, OracleSummary};
use crate::solver::{fw_solve, primal_objective, wardrop_check, xi_from_intensity, Problem, SolverReport};
use crate::svg;

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_NOT_CONVERGED: i32 = 2;
pub const EXIT_CHECK_FAILED: i32 = 3;

#[derive(Debug, Clone, Serialize)]
pub struct SolveSummary {
    pub primal: f64,
    pub dual: f64,
    pub gap: f64,
    pub wardrop_gap: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mk_gap: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl SolveSummary {
    pub fn exit_code(&self) -> i32 {
        if self.converged {
            EXIT_OK
        } else {
            EXIT_NOT_CONVERGED
        }
    }
}

#[derive(Debug, Clone, Serialize)]
struct LogRecord {
    iter: usize,
    primal: f64,
    dual: f64,
    gap: f64,
    theta: f64,
    mk_value: f64,
}

pub struct SolveOutcome {
    pub report: SolverReport,
    pub summary: SolveSummary,
    pub out_dir: PathBuf,
}

/// Solves and writes the artifacts selected in `[output]` plus
/// `convergence.jsonl`, `plan.csv` and `summary.json`.
pub fn run_solve(cfg: &RunConfig) -> Result<SolveOutcome> {
    let problem = cfg.build()?;
    let out = cfg.output_dir();
    std::fs::create_dir_all(&out)?;
    let report = fw_solve(&problem, &cfg.solver)?;
    for w in &report.warnings {
        log::warn!("{w}");
    }
    let summary = SolveSummary {
        primal: report.primal,
        dual: report.dual,
        gap: report.gap,
        wardrop_gap: report.wardrop_gap,
        mk_gap: report.mk_gap,
        iterations: report.iterations,
        converged: report.converged,
        warnings: report.warnings.clone(),
    };
    write_artifacts(cfg, &problem, &report, &out)?;
    formats::write_json(&out.join("summary.json"), &summary)?;
    Ok(SolveOutcome {
        report,
        summary,
        out_dir: out,
    })
}

fn write_artifacts(cfg: &RunConfig, problem: &Problem, report: &SolverReport, out: &Path) -> Result<()> {
    let d = &problem.domain;
    let log: Vec<LogRecord> = report
        .history
        .iter()
        .map(|r| LogRecord {
            iter: r.iter,
            primal: r.primal,
            dual: r.best_dual,
            gap: r.gap,
            theta: r.theta,
            mk_value: r.mk_value,
        })
        .collect();
    formats::write_jsonl(&out.join("convergence.jsonl"), &log)?;
    formats::write_plan(&out.join("plan.csv"), d, &report.plan)?;
    let o = &cfg.output;
    if o.intensity && d.lattice().is_some() {
        formats::write_cell_density(&out.join("intensity.csv"), d, &report.intensity)?;
    }
    if o.flows {
        formats::write_edge_flows(&out.join("edge_flows.csv"), d, &report.intensity)?;
    }
    if o.paths {
        formats::write_paths(&out.join("paths.txt"), d, &report.flow)?;
    }
    if o.measures {
        formats::write_measure(&out.join("mu0.csv"), d, &problem.mu0)?;
        formats::write_measure(&out.join("mu1.csv"), d, &problem.mu1)?;
    }
    if o.cost_table {
        let sources = problem.mu0.support();
        let table = shortest_costs(d, &report.xi, &sources)?;
        formats::write_cost_table(&out.join("cost_table.csv"), &table)?;
    }
    if o.svg {
        std::fs::write(out.join("intensity.svg"), svg::render(d, &report.intensity, Some(&report.flow)))?;
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckSummary {
    pub wardrop_gap: f64,
    /// Absent when the plan is fixed by the configuration.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mk_gap: Option<f64>,
    pub primal: f64,
    #[serde(skip)]
    pub passed: bool,
}

impl CheckSummary {
    pub fn exit_code(&self) -> i32 {
        if self.passed {
            EXIT_OK
        } else {
            EXIT_CHECK_FAILED
        }
    }
}

fn plans_agree(a: &TransportPlan, b: &TransportPlan, tol: f64) -> bool {
    let key = |p: &TransportPlan| {
        let mut v: Vec<_> = p.entries().iter().map(|e| ((e.source, e.target), e.mass)).collect();
        v.sort_by_key(|x| x.0);
        v
    };
    let (ka, kb) = (key(a), key(b));
    ka.len() == kb.len() && ka.iter().zip(&kb).all(|(x, y)| x.0 == y.0 && (x.1 - y.1).abs() <= tol)
}

/// Verifies both equilibrium conditions for a given flow and plan.
pub fn check_strategy(cfg: &RunConfig, flow: &PathFlow, plan: &TransportPlan) -> Result<CheckSummary> {
    let problem = cfg.build()?;
    let tol = BALANCE_TOL * problem.mu0.total();
    plan.check_marginals(&problem.mu0, &problem.mu1)?;
    if !plans_agree(&decompose(flow).0, plan, tol) {
        return Err(Error::InconsistentMarginals(
            "path endpoints do not reproduce the plan".into(),
        ));
    }
    if let Some(fixed) = &problem.fixed_plan {
        if !plans_agree(fixed, plan, tol) {
            return Err(Error::InconsistentMarginals("plan differs from the fixed plan".into()));
        }
    }
    let field = intensity_from_paths(&problem.domain, flow)?;
    let xi = xi_from_intensity(&problem, &field);
    let check = wardrop_check(&problem, flow, &xi)?;
    let tol = cfg.check.tol;
    Ok(CheckSummary {
        wardrop_gap: check.wardrop_gap,
        mk_gap: check.mk_gap,
        primal: primal_objective(&problem, &field),
        passed: check.wardrop_gap <= tol && check.mk_gap.is_none_or(|g| g <= tol),
    })
}

pub fn run_check(cfg: &RunConfig, flow_path: &Path, plan_path: &Path) -> Result<CheckSummary> {
    let domain = cfg.build_domain()?;
    let flow = formats::read_paths(flow_path, &domain)?;
    let plan = formats::read_plan(plan_path, &domain)?;
    check_strategy(cfg, &flow, &plan)
}

pub fn run_oracle(cfg: &RunConfig) -> Result<OracleSummary> {
    Ok(brute_force_optimum(&cfg.build()?)?.summary)
}
