//! Frank-Wolfe minimization of the congestion functional over path flows
//! with prescribed marginals, plus equilibrium verification.
//!
//! Each linearized subproblem is solved exactly: shortest paths under the
//! current metric `ξ = H'(i)`, an exact transport plan for the resulting
//! cost, and all-or-nothing routing of each plan entry along one geodesic.
//! The optimal value `W(ξ)` of that subproblem gives the lower bound
//! `P + W(ξ) - ⟨ξ, i⟩ = W(ξ) - Σ A·H*(ξ)` used by the stopping rule.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::congestion::CongestionModel;
use crate::domain::Domain;
use crate::error::{Error, Result};
use crate::flow::{
    check_metric, decompose, element_density, intensity_unchecked, FlowEntry, GridPath, IntensityField, PathFlow,
};
use crate::geodesics::{extract_geodesic, shortest_costs_with, TieBreak};
use crate::measures::{check_balanced, DiscreteMeasure, PlanEntry, TransportPlan};
use crate::transport::{solve_mk_with, CostMatrix, SUPPORT_TRUNCATION};

const EPS: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct Problem {
    pub domain: Domain,
    pub mu0: DiscreteMeasure,
    pub mu1: DiscreteMeasure,
    pub model: CongestionModel,
    pub fixed_plan: Option<TransportPlan>,
}

impl Problem {
    pub fn new(
        domain: Domain,
        mu0: DiscreteMeasure,
        mu1: DiscreteMeasure,
        model: CongestionModel,
        fixed_plan: Option<TransportPlan>,
    ) -> Result<Self> {
        check_balanced(&mu0, &mu1)?;
        let n = domain.node_count();
        if let Some(bad) = mu0.iter().chain(mu1.iter()).map(|(k, _)| k).find(|&k| k >= n) {
            return Err(Error::InvalidDomain(format!("measure atom at missing node {bad}")));
        }
        if let Some(plan) = &fixed_plan {
            plan.check_marginals(&mu0, &mu1)?;
        }
        Ok(Self {
            domain,
            mu0,
            mu1,
            model,
            fixed_plan,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub max_iters: usize,
    /// Relative duality gap target.
    pub gap_tol: f64,
    pub line_search_tol: f64,
    pub path_prune_mass: f64,
    /// Seed for randomized tie-breaking among equal-cost geodesics and
    /// optimal plans; `None` breaks ties by node id.
    pub seed: Option<u64>,
    /// Allow steps away from the worst active vertex, which removes stale
    /// paths exactly and speeds up convergence near the optimum.
    pub away_steps: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iters: 500,
            gap_tol: 1e-4,
            line_search_tol: 1e-12,
            path_prune_mass: 1e-12,
            seed: None,
            away_steps: true,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("gap_tol", self.gap_tol),
            ("line_search_tol", self.line_search_tol),
            ("path_prune_mass", self.path_prune_mass),
        ] {
            if !(v > 0.0) {
                return Err(Error::Config(format!("solver.{name} must be positive")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub primal: f64,
    /// Lower bound from this iteration's linearization.
    pub dual: f64,
    pub best_dual: f64,
    /// Same bound evaluated as `W(ξ) - Σ A·H*(ξ)`.
    pub fenchel_dual: f64,
    pub gap: f64,
    /// Step length; negative for a step away from an active vertex.
    pub theta: f64,
    pub mk_value: f64,
}

#[derive(Debug, Clone)]
pub struct SolverReport {
    pub iterations: usize,
    pub history: Vec<IterationRecord>,
    pub flow: PathFlow,
    pub intensity: IntensityField,
    pub plan: TransportPlan,
    pub xi: Vec<f64>,
    pub primal: f64,
    pub dual: f64,
    pub gap: f64,
    pub wardrop_gap: f64,
    /// Absent in fixed-plan mode.
    pub mk_gap: Option<f64>,
    pub converged: bool,
    pub warnings: Vec<String>,
}

/// `Σ_k A_k · H(ρ_k)` over the congestion elements.
pub fn primal_objective(problem: &Problem, field: &IntensityField) -> f64 {
    let rho = element_density(&problem.domain, field);
    objective_from_density(problem, &rho)
}

fn objective_from_density(problem: &Problem, rho: &[f64]) -> f64 {
    rho.iter()
        .enumerate()
        .map(|(k, &r)| problem.domain.element_area(k) * problem.model.h(r))
        .sum()
}

/// `ξ = H'(ρ)` on every congestion element.
pub fn xi_from_intensity(problem: &Problem, field: &IntensityField) -> Vec<f64> {
    element_density(&problem.domain, field)
        .into_iter()
        .map(|r| problem.model.h_prime(r))
        .collect()
}

/// `Σ_k A_k · H*(ξ_k)`
pub fn conjugate_integral(problem: &Problem, xi: &[f64]) -> f64 {
    xi.iter()
        .enumerate()
        .map(|(k, &x)| problem.domain.element_area(k) * problem.model.h_conj(x))
        .sum()
}

#[derive(Debug, Clone)]
pub struct OracleResult {
    /// All-or-nothing flow along one geodesic per plan entry.
    pub flow: PathFlow,
    pub plan: TransportPlan,
    /// `Σ c_ξ·γ`, equal to `∫ L_ξ dQ` of `flow`.
    pub value: f64,
}

/// Exact minimizer of `Q ↦ ⟨ξ, i_Q⟩` over flows with the problem's
/// marginals (or its fixed plan).
pub fn linearized_oracle(problem: &Problem, xi: &[f64]) -> Result<OracleResult> {
    let tie = TieBreak::by_id(problem.domain.node_count());
    oracle_with(problem, xi, &tie, None)
}

fn oracle_with(problem: &Problem, xi: &[f64], tie: &TieBreak, seed: Option<u64>) -> Result<OracleResult> {
    check_metric(&problem.domain, xi)?;
    let (sources, targets) = match &problem.fixed_plan {
        Some(plan) => {
            let s: BTreeSet<usize> = plan.entries().iter().map(|e| e.source).collect();
            let t: BTreeSet<usize> = plan.entries().iter().map(|e| e.target).collect();
            (s.into_iter().collect::<Vec<_>>(), t.into_iter().collect::<Vec<_>>())
        }
        None => (
            problem.mu0.truncated(SUPPORT_TRUNCATION).support(),
            problem.mu1.truncated(SUPPORT_TRUNCATION).support(),
        ),
    };
    let table = shortest_costs_with(&problem.domain, xi, &sources, Some(&targets), tie)?;
    let plan = match &problem.fixed_plan {
        Some(plan) => plan.clone(),
        None => {
            let costs = CostMatrix::from_fn(&sources, &targets, |s, t| table.cost(s, t).unwrap());
            solve_mk_with(&costs, &problem.mu0, &problem.mu1, seed)?.plan
        }
    };
    let mut entries = Vec::with_capacity(plan.entries().len());
    let mut value = 0.0;
    for pe in plan.entries() {
        let path = extract_geodesic(&table, pe.source, pe.target)?;
        value += pe.mass * path.cost(&problem.domain, xi);
        entries.push(FlowEntry { path, mass: pe.mass });
    }
    Ok(OracleResult {
        flow: PathFlow::new(entries)?,
        plan,
        value,
    })
}

/// Exact line search on `θ ↦ P((1-θ)·f + θ·j)` by bisection on the
/// derivative.
pub fn line_search(problem: &Problem, current: &IntensityField, candidate: &IntensityField, tol: f64) -> f64 {
    let rf = element_density(&problem.domain, current);
    let rj = element_density(&problem.domain, candidate);
    line_search_densities(problem, &rf, &rj, tol)
}

fn line_search_densities(problem: &Problem, rf: &[f64], rj: &[f64], tol: f64) -> f64 {
    if rf == rj {
        return 0.0;
    }
    let area: Vec<f64> = (0..rf.len()).map(|k| problem.domain.element_area(k)).collect();
    let slope = |theta: f64| -> f64 {
        let mut s = 0.0;
        for k in 0..rf.len() {
            let d = rj[k] - rf[k];
            if d != 0.0 {
                let r = ((1.0 - theta) * rf[k] + theta * rj[k]).max(0.0);
                s += area[k] * problem.model.h_prime(r) * d;
            }
        }
        s
    };
    let value = |theta: f64| -> f64 {
        let mut s = 0.0;
        for k in 0..rf.len() {
            let r = ((1.0 - theta) * rf[k] + theta * rj[k]).max(0.0);
            s += area[k] * problem.model.h(r);
        }
        s
    };
    if slope(0.0) >= 0.0 {
        return 0.0;
    }
    if slope(1.0) <= 0.0 {
        return 1.0;
    }
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if slope(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mid = 0.5 * (lo + hi);
    let base = value(0.0);
    [mid, lo, hi]
        .into_iter()
        .filter(|&t| t > 0.0)
        .map(|t| (t, value(t)))
        .filter(|&(_, v)| v <= base)
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map_or(0.0, |(t, _)| t)
}

/// Convex combination of oracle vertices. The path flow is the weighted
/// merge of the vertices, so removing a vertex removes its paths exactly.
struct ActiveSet {
    atoms: Vec<(PathFlow, f64)>,
}

impl ActiveSet {
    fn new(flow: PathFlow) -> Self {
        Self { atoms: vec![(flow, 1.0)] }
    }

    /// `x ← (1-θ)·x + θ·v`
    fn toward(&mut self, vertex: PathFlow, theta: f64) {
        for a in &mut self.atoms {
            a.1 *= 1.0 - theta;
        }
        match self.atoms.iter_mut().find(|a| a.0 == vertex) {
            Some(a) => a.1 += theta,
            None => self.atoms.push((vertex, theta)),
        }
        self.normalize();
    }

    /// `x ← (1+γ)·x - γ·atom`; the atom is dropped when `drop` is set.
    fn away(&mut self, atom: usize, gamma: f64, drop: bool) {
        for (i, a) in self.atoms.iter_mut().enumerate() {
            a.1 = if i == atom { (1.0 + gamma) * a.1 - gamma } else { (1.0 + gamma) * a.1 };
        }
        if drop {
            self.atoms.remove(atom);
        }
        self.normalize();
    }

    fn normalize(&mut self) {
        self.atoms.retain(|a| a.1 > 0.0);
        let total: f64 = self.atoms.iter().map(|a| a.1).sum();
        for a in &mut self.atoms {
            a.1 /= total;
        }
    }

    fn flow(&self, prune: f64) -> PathFlow {
        let mut index: HashMap<&[usize], usize> = HashMap::new();
        let mut entries: Vec<FlowEntry> = Vec::new();
        for (flow, w) in &self.atoms {
            for e in flow.entries() {
                let mass = e.mass * w;
                match index.get(e.path.nodes()) {
                    Some(&i) => entries[i].mass += mass,
                    None => {
                        index.insert(e.path.nodes(), entries.len());
                        entries.push(FlowEntry {
                            path: e.path.clone(),
                            mass,
                        });
                    }
                }
            }
        }
        entries.retain(|e| e.mass >= prune);
        PathFlow::new(entries).expect("active set masses are positive")
    }
}

pub fn fw_solve(problem: &Problem, config: &SolverConfig) -> Result<SolverReport> {
    config.validate()?;
    let domain = &problem.domain;
    let tie = match config.seed {
        Some(seed) => TieBreak::seeded(domain.node_count(), seed),
        None => TieBreak::by_id(domain.node_count()),
    };
    let mut warnings = Vec::new();
    if problem.model.q >= 2.0 {
        warnings.push(format!(
            "q = {} ≥ 2: the continuum cost theory assumes q < 2; the discrete problem is still well-posed",
            problem.model.q
        ));
    }

    let zero = IntensityField::zero(domain);
    let start = oracle_with(problem, &xi_from_intensity(problem, &zero), &tie, config.seed)?;
    let mut active = ActiveSet::new(start.flow);
    let mut flow = active.flow(config.path_prune_mass);
    let mut field = intensity_unchecked(domain, &flow);

    let mut history = Vec::new();
    let mut best_dual = f64::NEG_INFINITY;
    let mut converged = false;
    let mut gap = f64::INFINITY;
    let mut primal = 0.0;
    let mut xi = Vec::new();
    for k in 0..=config.max_iters {
        let rho = element_density(domain, &field);
        primal = objective_from_density(problem, &rho);
        xi = rho.iter().map(|&r| problem.model.h_prime(r)).collect();
        let lin = oracle_with(problem, &xi, &tie, config.seed)?;
        let pairing = field.pairing(domain, &xi);
        let dual = primal + lin.value - pairing;
        let fenchel_dual = lin.value - conjugate_integral(problem, &xi);
        debug_assert!(
            (dual - fenchel_dual).abs() <= 1e-8 * dual.abs().max(primal).max(f64::MIN_POSITIVE),
            "dual bound mismatch: {dual} vs {fenchel_dual}"
        );
        best_dual = best_dual.max(dual);
        gap = if primal > 0.0 {
            ((primal - best_dual) / primal).max(0.0)
        } else {
            0.0
        };
        let mut record = IterationRecord {
            iter: k + 1,
            primal,
            dual,
            best_dual,
            fenchel_dual,
            gap,
            theta: 0.0,
            mk_value: lin.value,
        };
        if gap <= config.gap_tol || k == config.max_iters {
            converged = gap <= config.gap_tol;
            history.push(record);
            break;
        }

        // away candidate: the active vertex with the largest linearized cost
        let away = if config.away_steps && active.atoms.len() > 1 {
            active
                .atoms
                .iter()
                .enumerate()
                .map(|(i, (f, _))| (i, f.total_cost(domain, &xi)))
                .max_by(|a, b| a.1.total_cmp(&b.1))
                .filter(|&(_, v)| v - pairing > pairing - lin.value)
        } else {
            None
        };
        match away {
            Some((i, _)) => {
                let weight = active.atoms[i].1;
                let gamma_max = weight / (1.0 - weight);
                let ra = element_density(domain, &intensity_unchecked(domain, &active.atoms[i].0));
                let end: Vec<f64> = rho
                    .iter()
                    .zip(&ra)
                    .map(|(r, a)| ((1.0 + gamma_max) * r - gamma_max * a).max(0.0))
                    .collect();
                let t = line_search_densities(problem, &rho, &end, config.line_search_tol);
                record.theta = -t * gamma_max;
                if t > 0.0 {
                    active.away(i, t * gamma_max, t == 1.0);
                }
            }
            None => {
                let candidate = intensity_unchecked(domain, &lin.flow);
                let rj = element_density(domain, &candidate);
                let theta = line_search_densities(problem, &rho, &rj, config.line_search_tol);
                record.theta = theta;
                if theta > 0.0 {
                    active.toward(lin.flow, theta);
                }
            }
        }
        log::debug!(
            "iter {}: primal={primal:.10e} dual={dual:.10e} gap={gap:.3e} step={:.3e}",
            k + 1,
            record.theta
        );
        let stalled = record.theta == 0.0;
        history.push(record);
        if stalled {
            // the linearization offers no descent within line-search accuracy
            break;
        }
        flow = active.flow(config.path_prune_mass);
        field = intensity_unchecked(domain, &flow);
    }

    if converged {
        // the gap bounds the mass-weighted excess only, so light paths can
        // still be far from geodesic; move them without touching the plan
        flow = equilibrate_paths(problem, flow, &tie, config)?;
        field = intensity_unchecked(domain, &flow);
        let rho = element_density(domain, &field);
        primal = objective_from_density(problem, &rho);
        xi = rho.iter().map(|&r| problem.model.h_prime(r)).collect();
        gap = if primal > 0.0 {
            ((primal - best_dual) / primal).max(0.0)
        } else {
            0.0
        };
    }

    let check = wardrop_check_with(problem, &flow, &xi, &tie)?;
    let (plan, _) = decompose(&flow);
    Ok(SolverReport {
        iterations: history.len(),
        history,
        intensity: field,
        plan,
        xi,
        primal,
        dual: best_dual,
        gap,
        wardrop_gap: check.wardrop_gap,
        mk_gap: check.mk_gap,
        converged,
        warnings,
        flow,
    })
}

const EQUILIBRATION_ROUNDS: usize = 50;

/// Shifts mass from every path whose relative excess exceeds the gap
/// tolerance onto the current geodesic of the same pair, with an exact line
/// search per path. Each shift lowers the objective.
/// Root of the directional derivative on `[0, 1]`, located on a relative
/// scale so that steps far below `line_search_tol` are still found. A
/// negative slope at the returned point guarantees descent even when the
/// decrease is below the objective's rounding.
fn descent_step(problem: &Problem, rf: &[f64], rj: &[f64]) -> f64 {
    let moving: Vec<usize> = (0..rf.len()).filter(|&k| rj[k] != rf[k]).collect();
    let slope = |theta: f64| -> f64 {
        moving
            .iter()
            .map(|&k| {
                let r = ((1.0 - theta) * rf[k] + theta * rj[k]).max(0.0);
                problem.domain.element_area(k) * problem.model.h_prime(r) * (rj[k] - rf[k])
            })
            .sum()
    };
    if moving.is_empty() || slope(0.0) >= 0.0 {
        return 0.0;
    }
    if slope(1.0) <= 0.0 {
        return 1.0;
    }
    let mut hi = 1.0_f64;
    while slope(0.5 * hi) > 0.0 {
        hi *= 0.5;
        if hi < f64::MIN_POSITIVE {
            return 0.0;
        }
    }
    let mut lo = 0.5 * hi;
    while hi - lo > 1e-12 * hi {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if slope(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

fn equilibrate_paths(problem: &Problem, flow: PathFlow, tie: &TieBreak, config: &SolverConfig) -> Result<PathFlow> {
    let domain = &problem.domain;
    let mut flow = flow;
    for _ in 0..EQUILIBRATION_ROUNDS {
        let mut rho = element_density(domain, &intensity_unchecked(domain, &flow));
        let xi: Vec<f64> = rho.iter().map(|&r| problem.model.h_prime(r)).collect();
        let ends = |f: fn(&GridPath) -> usize| -> Vec<usize> {
            flow.entries().iter().map(|e| f(&e.path)).collect::<BTreeSet<_>>().into_iter().collect()
        };
        let (sources, targets) = (ends(GridPath::start), ends(GridPath::end));
        let table = shortest_costs_with(domain, &xi, &sources, Some(&targets), tie)?;
        let mut entries = flow.entries().to_vec();
        let mut stale: Vec<(usize, f64)> = entries
            .iter()
            .enumerate()
            .filter_map(|(i, e)| {
                let c = table.cost(e.path.start(), e.path.end())?;
                let excess = (e.path.cost(domain, &xi) - c) / c.max(EPS);
                (excess > config.gap_tol).then_some((i, excess))
            })
            .collect();
        if stale.is_empty() {
            break;
        }
        stale.sort_by(|a, b| b.1.total_cmp(&a.1));
        let mut moved = false;
        for (i, _) in stale {
            let entry = entries[i].clone();
            let geo = extract_geodesic(&table, entry.path.start(), entry.path.end())?;
            let density_of = |path: GridPath| -> Result<Vec<f64>> {
                let single = PathFlow::new(vec![FlowEntry { path, mass: entry.mass }])?;
                Ok(element_density(domain, &intensity_unchecked(domain, &single)))
            };
            let (rp, rg) = (density_of(entry.path.clone())?, density_of(geo.clone())?);
            let end: Vec<f64> = rho
                .iter()
                .zip(rp.iter().zip(&rg))
                .map(|(r, (p, g))| (r - p + g).max(0.0))
                .collect();
            let t = descent_step(problem, &rho, &end);
            if t > 0.0 {
                for (r, e) in rho.iter_mut().zip(&end) {
                    *r = (1.0 - t) * *r + t * e;
                }
                entries[i].mass = if t == 1.0 { 0.0 } else { entry.mass * (1.0 - t) };
                entries.push(FlowEntry { path: geo, mass: entry.mass * t });
                moved = true;
            }
        }
        entries.retain(|e| e.mass > 0.0);
        // the equilibrium share of a detour can sit far below the pruning
        // threshold when H' is steep at zero, so nothing positive is dropped
        flow = PathFlow::new(entries)?.merged(f64::MIN_POSITIVE);
        if !moved {
            break;
        }
    }
    Ok(flow)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WardropCheck {
    /// Largest relative excess `(L_ξ(σ) - c_ξ(σ0, σ1)) / c_ξ(σ0, σ1)` over
    /// the stored paths.
    pub wardrop_gap: f64,
    /// Relative suboptimality of the flow's plan for cost `c_ξ`; `None` in
    /// fixed-plan mode.
    pub mk_gap: Option<f64>,
}

/// Checks the geodesic condition on every stored path and, unless the
/// plan is fixed, the optimality of the flow's plan for `c_ξ`.
pub fn wardrop_check(problem: &Problem, flow: &PathFlow, xi: &[f64]) -> Result<WardropCheck> {
    wardrop_check_with(problem, flow, xi, &TieBreak::by_id(problem.domain.node_count()))
}

fn wardrop_check_with(problem: &Problem, flow: &PathFlow, xi: &[f64], tie: &TieBreak) -> Result<WardropCheck> {
    check_metric(&problem.domain, xi)?;
    if flow.is_empty() {
        return Err(Error::InvalidPath("flow has no paths".into()));
    }
    let mu0 = problem.mu0.truncated(SUPPORT_TRUNCATION);
    let mu1 = problem.mu1.truncated(SUPPORT_TRUNCATION);
    let sources: Vec<usize> = flow
        .entries()
        .iter()
        .map(|e| e.path.start())
        .chain(mu0.support())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let targets: Vec<usize> = flow
        .entries()
        .iter()
        .map(|e| e.path.end())
        .chain(mu1.support())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let table = shortest_costs_with(&problem.domain, xi, &sources, Some(&targets), tie)?;

    let mut wardrop_gap: f64 = 0.0;
    for e in flow.entries() {
        let c = table.cost(e.path.start(), e.path.end()).unwrap();
        let l = e.path.cost(&problem.domain, xi);
        wardrop_gap = wardrop_gap.max((l - c) / c.max(EPS));
    }

    let mk_gap = match problem.fixed_plan {
        Some(_) => None,
        None => {
            let (plan, _) = decompose(flow);
            let costs = CostMatrix::from_fn(&sources, &targets, |s, t| table.cost(s, t).unwrap());
            let used = costs.plan_cost(&plan)?;
            let best = solve_mk_with(&costs, &mu0, &mu1, None)?.value;
            Some(((used - best) / best.max(EPS)).max(0.0))
        }
    };
    Ok(WardropCheck {
        wardrop_gap: wardrop_gap.max(0.0),
        mk_gap,
    })
}

/// Row-matching plan helper: pairs atoms of two measures in order.
pub fn plan_from_pairs(pairs: &[(usize, usize, f64)]) -> Result<TransportPlan> {
    TransportPlan::new(
        pairs
            .iter()
            .map(|&(source, target, mass)| PlanEntry { source, target, mass })
            .collect(),
    )
}
