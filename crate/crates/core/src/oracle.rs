//! Reference solver for tiny instances.
//!
//! Works on directed arc flows, one commodity per source atom, with the
//! transport plan as explicit variables. The congestion objective is
//! minimized under flow conservation by a log-barrier Newton method, whose
//! barrier parameter certifies the optimality gap. Nothing is shared with
//! the Frank-Wolfe solver beyond the congestion model and the domain, so
//! the result serves as ground truth in tests.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::domain::{CongestionSupport, Domain};
use crate::error::{Error, Result};
use crate::solver::Problem;
use crate::transport::SUPPORT_TRUNCATION;

pub const MAX_NODES: usize = 12;
pub const MAX_ATOMS: usize = 6;
const MAX_CENTERING: usize = 200;

#[derive(Debug, Clone, Serialize)]
pub struct OracleSummary {
    pub value: f64,
    pub variables: usize,
    pub newton_steps: usize,
    /// Upper bound on `value` minus the true optimum.
    pub gap_bound: f64,
}

#[derive(Debug, Clone)]
pub struct OracleSolution {
    pub summary: OracleSummary,
    /// Total mass crossing each edge, both directions summed.
    pub edge_flow: Vec<f64>,
    /// `(source, target, mass)` for every pair.
    pub plan: Vec<(usize, usize, f64)>,
}

/// Sparse map from edge flow to element densities.
fn density_columns(domain: &Domain) -> Vec<Vec<(usize, f64)>> {
    domain
        .edges()
        .iter()
        .enumerate()
        .map(|(e, edge)| match domain.support() {
            CongestionSupport::Nodes => vec![
                (edge.u, 0.5 * edge.length / domain.node_area(edge.u)),
                (edge.v, 0.5 * edge.length / domain.node_area(edge.v)),
            ],
            CongestionSupport::Edges => vec![(e, 1.0 / edge.width)],
        })
        .collect()
}

/// Fewest-hop route from `s` to `t` as a list of `(edge, forward)` arcs.
fn hop_route(domain: &Domain, s: usize, t: usize) -> Result<Vec<(usize, bool)>> {
    let mut prev: Vec<Option<(usize, usize)>> = vec![None; domain.node_count()];
    let mut seen = vec![false; domain.node_count()];
    seen[s] = true;
    let mut queue = VecDeque::from([s]);
    while let Some(u) = queue.pop_front() {
        for &(v, e) in domain.neighbors(u) {
            if !seen[v] {
                seen[v] = true;
                prev[v] = Some((u, e));
                queue.push_back(v);
            }
        }
    }
    if !seen[t] {
        return Err(Error::UnreachableNode(t));
    }
    let mut route = Vec::new();
    let mut v = t;
    while let Some((u, e)) = prev[v] {
        route.push((e, domain.edge(e).u == u));
        v = u;
    }
    route.reverse();
    Ok(route)
}

struct Layout {
    sources: Vec<usize>,
    targets: Vec<usize>,
    /// Prescribed plan, or `None` when the plan entries are variables.
    fixed: Option<Vec<Vec<f64>>>,
    supply: Vec<f64>,
    demand: Vec<f64>,
    edges: usize,
}

impl Layout {
    fn arc(&self, c: usize, e: usize, forward: bool) -> usize {
        (c * self.edges + e) * 2 + usize::from(!forward)
    }

    fn arcs(&self) -> usize {
        2 * self.edges * self.sources.len()
    }

    fn plan_var(&self, c: usize, j: usize) -> Option<usize> {
        self.fixed.is_none().then(|| self.arcs() + c * self.targets.len() + j)
    }

    fn variables(&self) -> usize {
        self.arcs() + if self.fixed.is_none() { self.sources.len() * self.targets.len() } else { 0 }
    }

    fn plan_value(&self, x: &DVector<f64>, c: usize, j: usize) -> f64 {
        match (&self.fixed, self.plan_var(c, j)) {
            (Some(f), _) => f[c][j],
            (None, Some(i)) => x[i],
            (None, None) => unreachable!(),
        }
    }
}

/// Equality constraints `A x = b`: conservation per commodity and node,
/// plus target marginals when the plan is free. Rows may be redundant.
fn constraints(domain: &Domain, lay: &Layout) -> (DMatrix<f64>, DVector<f64>) {
    let n = domain.node_count();
    let k = lay.sources.len();
    let rows = k * n + if lay.fixed.is_none() { lay.targets.len() } else { 0 };
    let mut a = DMatrix::zeros(rows, lay.variables());
    let mut b = DVector::zeros(rows);
    for c in 0..k {
        for (e, edge) in domain.edges().iter().enumerate() {
            // net outflow: forward arc leaves u and enters v
            a[(c * n + edge.u, lay.arc(c, e, true))] += 1.0;
            a[(c * n + edge.v, lay.arc(c, e, true))] -= 1.0;
            a[(c * n + edge.v, lay.arc(c, e, false))] += 1.0;
            a[(c * n + edge.u, lay.arc(c, e, false))] -= 1.0;
        }
        b[c * n + lay.sources[c]] += lay.supply[c];
        for (j, &t) in lay.targets.iter().enumerate() {
            match (&lay.fixed, lay.plan_var(c, j)) {
                (Some(f), _) => b[c * n + t] -= f[c][j],
                (None, Some(i)) => a[(c * n + t, i)] += 1.0,
                (None, None) => unreachable!(),
            }
        }
    }
    if lay.fixed.is_none() {
        for j in 0..lay.targets.len() {
            for c in 0..k {
                a[(k * n + j, lay.plan_var(c, j).unwrap())] = 1.0;
            }
            b[k * n + j] = lay.demand[j];
        }
    }
    (a, b)
}

/// Keeps a maximal linearly independent subset of the rows of `a`.
fn independent_rows(a: &DMatrix<f64>, b: &DVector<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut keep = Vec::new();
    for r in 0..a.nrows() {
        let row = a.row(r).transpose();
        let mut v = row.clone();
        // two passes of Gram-Schmidt for orthogonality to working precision
        for _ in 0..2 {
            for q in &basis {
                v -= q * q.dot(&v);
            }
        }
        let norm = v.norm();
        if norm > 1e-9 * row.norm() {
            basis.push(v / norm);
            keep.push(r);
        }
    }
    (a.select_rows(&keep), b.select_rows(&keep))
}

struct Objective<'a> {
    problem: &'a Problem,
    cols: Vec<Vec<(usize, f64)>>,
    area: Vec<f64>,
    lay: &'a Layout,
}

impl Objective<'_> {
    fn edge_flow(&self, x: &DVector<f64>) -> Vec<f64> {
        (0..self.lay.edges)
            .map(|e| {
                (0..self.lay.sources.len())
                    .map(|c| x[self.lay.arc(c, e, true)] + x[self.lay.arc(c, e, false)])
                    .sum()
            })
            .collect()
    }

    fn densities(&self, flow: &[f64]) -> Vec<f64> {
        let mut rho = vec![0.0; self.area.len()];
        for (col, f) in self.cols.iter().zip(flow) {
            for &(k, w) in col {
                rho[k] += w * f;
            }
        }
        rho
    }

    fn value(&self, rho: &[f64]) -> f64 {
        let m = &self.problem.model;
        rho.iter().zip(&self.area).map(|(&r, a)| a * m.h(r.max(0.0))).sum()
    }

    /// Gradient and Hessian of the objective with respect to edge flow.
    fn edge_derivatives(&self, rho: &[f64]) -> (Vec<f64>, DMatrix<f64>) {
        let m = &self.problem.model;
        let first: Vec<f64> = rho.iter().zip(&self.area).map(|(&r, a)| a * m.h_prime(r)).collect();
        let second: Vec<f64> = rho.iter().zip(&self.area).map(|(&r, a)| a * m.h_second(r)).collect();
        let ne = self.lay.edges;
        let grad = self.cols.iter().map(|col| col.iter().map(|&(k, w)| first[k] * w).sum()).collect();
        let mut hess = DMatrix::zeros(ne, ne);
        for e in 0..ne {
            for f in 0..ne {
                let mut s = 0.0;
                for &(k, w) in &self.cols[e] {
                    for &(l, v) in &self.cols[f] {
                        if k == l {
                            s += second[k] * w * v;
                        }
                    }
                }
                hess[(e, f)] = s;
            }
        }
        (grad, hess)
    }

    fn edge_of(&self, i: usize) -> Option<usize> {
        (i < self.lay.arcs()).then(|| (i / 2) % self.lay.edges)
    }
}

pub fn brute_force_optimum(problem: &Problem) -> Result<OracleSolution> {
    brute_force_with(problem, 1e-11)
}

/// Minimizes to a certified gap of `rel_tol` times the objective value.
pub fn brute_force_with(problem: &Problem, rel_tol: f64) -> Result<OracleSolution> {
    let domain = &problem.domain;
    if domain.node_count() > MAX_NODES {
        return Err(Error::TooLarge(format!(
            "{} nodes (at most {MAX_NODES})",
            domain.node_count()
        )));
    }
    let mu0 = problem.mu0.truncated(SUPPORT_TRUNCATION);
    let mu1 = problem.mu1.truncated(SUPPORT_TRUNCATION);
    if mu0.len() > MAX_ATOMS || mu1.len() > MAX_ATOMS {
        return Err(Error::TooLarge(format!("marginals need at most {MAX_ATOMS} atoms")));
    }
    let sources = mu0.support();
    let targets = mu1.support();
    let total = mu0.total();
    let demand: Vec<f64> = targets.iter().map(|&t| mu1.get(t) * total / mu1.total()).collect();
    let fixed = match &problem.fixed_plan {
        Some(plan) => {
            let mut f = vec![vec![0.0; targets.len()]; sources.len()];
            for e in plan.entries() {
                let c = sources.binary_search(&e.source);
                let j = targets.binary_search(&e.target);
                match (c, j) {
                    (Ok(c), Ok(j)) => f[c][j] += e.mass,
                    _ => return Err(Error::InconsistentMarginals("plan outside the supports".into())),
                }
            }
            Some(f)
        }
        None => None,
    };
    let lay = Layout {
        supply: match &fixed {
            Some(f) => f.iter().map(|row| row.iter().sum()).collect(),
            None => sources.iter().map(|&s| mu0.get(s)).collect(),
        },
        sources,
        targets,
        fixed,
        demand,
        edges: domain.edge_count(),
    };
    let obj = Objective {
        problem,
        cols: density_columns(domain),
        area: (0..domain.element_count()).map(|k| domain.element_area(k)).collect(),
        lay: &lay,
    };
    let (a, b) = constraints(domain, &lay);
    let (a, b) = independent_rows(&a, &b);
    let m = a.nrows();
    let nv = lay.variables();

    // strictly feasible start: independent coupling routed on fewest-hop
    // paths, plus a small two-way circulation on every edge
    let mut x = DVector::from_element(nv, 0.0);
    let eps = 0.1 * total / lay.edges.max(1) as f64;
    for c in 0..lay.sources.len() {
        for (j, &t) in lay.targets.iter().enumerate() {
            let m = match &lay.fixed {
                Some(f) => f[c][j],
                None => lay.supply[c] * lay.demand[j] / total,
            };
            if let Some(i) = lay.plan_var(c, j) {
                x[i] = m;
            }
            for (e, fwd) in hop_route(domain, lay.sources[c], t)? {
                x[lay.arc(c, e, fwd)] += m;
            }
        }
        for e in 0..lay.edges {
            x[lay.arc(c, e, true)] += eps;
            x[lay.arc(c, e, false)] += eps;
        }
    }

    let barrier = |x: &DVector<f64>, t: f64| -> f64 {
        if x.iter().any(|&v| v <= 0.0) {
            return f64::INFINITY;
        }
        t * obj.value(&obj.densities(&obj.edge_flow(x))) - x.iter().map(|v| v.ln()).sum::<f64>()
    };

    // x²-weighted least-change correction onto A x = b, which leaves tiny
    // entries essentially untouched and so preserves positivity
    let restore = |mut x: DVector<f64>| -> DVector<f64> {
        for _ in 0..2 {
            let r = &b - &a * &x;
            let ax = &a * DMatrix::from_diagonal(&x);
            let gram = &ax * ax.transpose();
            let Some(w) = gram.lu().solve(&r) else { break };
            let dz = ax.transpose() * w;
            if dz.iter().any(|&d| d <= -0.5) {
                break;
            }
            x.component_mul_assign(&dz.map(|d| 1.0 + d));
        }
        x
    };

    let value0 = obj.value(&obj.densities(&obj.edge_flow(&x)));
    let mut t = nv as f64 / value0.max(f64::MIN_POSITIVE);
    let mut steps = 0;
    loop {
        // centering by equality-constrained Newton in the scaled variables
        // z = x / x_k, where the barrier Hessian becomes I + t X ∇²F X
        for _ in 0..MAX_CENTERING {
            let rho = obj.densities(&obj.edge_flow(&x));
            let (ge, he) = obj.edge_derivatives(&rho);
            let mut grad = DVector::zeros(nv);
            let mut hess = DMatrix::identity(nv, nv);
            for i in 0..nv {
                grad[i] = -1.0;
                if let Some(e) = obj.edge_of(i) {
                    grad[i] += t * ge[e] * x[i];
                    for j in 0..nv {
                        if let Some(f) = obj.edge_of(j) {
                            hess[(i, j)] += t * he[(e, f)] * x[i] * x[j];
                        }
                    }
                }
            }
            // KKT system [H (AX)ᵀ; AX 0] [dz; λ] = [-g; b - Ax]; the residual
            // term keeps round-off from drifting off the constraints
            let ax = &a * DMatrix::from_diagonal(&x);
            let mut kkt = DMatrix::zeros(nv + m, nv + m);
            kkt.view_mut((0, 0), (nv, nv)).copy_from(&hess);
            kkt.view_mut((nv, 0), (m, nv)).copy_from(&ax);
            kkt.view_mut((0, nv), (nv, m)).copy_from(&ax.transpose());
            let mut rhs = DVector::zeros(nv + m);
            rhs.rows_mut(0, nv).copy_from(&(-&grad));
            rhs.rows_mut(nv, m).copy_from(&(&b - &a * &x));
            let lu = kkt.clone().lu();
            let Some(mut sol) = lu.solve(&rhs) else {
                return Err(Error::Parse("oracle Newton system is singular".into()));
            };
            for _ in 0..2 {
                if let Some(fix) = lu.solve(&(&rhs - &kkt * &sol)) {
                    sol += fix;
                }
            }
            let dz = sol.rows(0, nv).into_owned();
            let decrement = -grad.dot(&dz);
            steps += 1;
            if decrement <= 1e-12 {
                break;
            }
            let mut alpha: f64 = 1.0;
            for &d in dz.iter() {
                if d < 0.0 {
                    alpha = alpha.min(-0.99 / d);
                }
            }
            let step = |alpha: f64| DVector::from_iterator(nv, x.iter().zip(dz.iter()).map(|(x, d)| x * (1.0 + alpha * d)));
            if decrement < 1e-3 {
                // inside the quadratic region the full step is safe and the
                // barrier value is too flat to compare reliably
                x = restore(step(alpha));
                continue;
            }
            let f0 = barrier(&x, t);
            while barrier(&step(alpha), t) > f0 - 0.25 * alpha * decrement && alpha > 1e-12 {
                alpha *= 0.5;
            }
            if alpha <= 1e-12 {
                break;
            }
            x = restore(step(alpha));
        }
        let value = obj.value(&obj.densities(&obj.edge_flow(&x)));
        if nv as f64 / t <= rel_tol * value {
            let plan = (0..lay.sources.len())
                .flat_map(|c| (0..lay.targets.len()).map(move |j| (c, j)))
                .map(|(c, j)| (lay.sources[c], lay.targets[j], lay.plan_value(&x, c, j)))
                .collect();
            return Ok(OracleSolution {
                summary: OracleSummary {
                    value,
                    variables: nv,
                    newton_steps: steps,
                    gap_bound: nv as f64 / t,
                },
                edge_flow: obj.edge_flow(&x),
                plan,
            });
        }
        t *= 10.0;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::congestion::{CongestionModel, Mode};
    use crate::domain::{Edge, Point, Rect};
    use crate::measures::DiscreteMeasure;

    fn pigou(model: CongestionModel) -> Problem {
        let pts = vec![Point::new(0.0, 0.0), Point::new(1.0, 0.0), Point::new(0.5, 0.5)];
        let e = |u, v| Edge { u, v, length: 1.0, width: 1.0 };
        let d = Domain::network(pts, vec![e(0, 1), e(0, 2), e(2, 1)], CongestionSupport::Edges, None).unwrap();
        Problem::new(d, DiscreteMeasure::dirac(0), DiscreteMeasure::dirac(1), model, None).unwrap()
    }

    #[test]
    fn pigou_closed_form() {
        // the direct edge carries 0.8 and the two-edge detour 0.2
        let model = CongestionModel::new(1.5, 1.0, 0.0, Mode::Equilibrium).unwrap();
        let sol = brute_force_optimum(&pigou(model)).unwrap();
        let expect = model.h(0.8) + 2.0 * model.h(0.2);
        assert!((sol.summary.value - expect).abs() <= 1e-10 * expect, "{} vs {expect}", sol.summary.value);
        assert!((sol.edge_flow[0] - 0.8).abs() < 1e-6);
    }

    #[test]
    fn near_linear_exponent() {
        // the optimum equalizes H' on the direct edge with twice H' on the detour
        let model = CongestionModel::new(1.1, 1.0, 0.0, Mode::Equilibrium).unwrap();
        let sol = brute_force_optimum(&pigou(model)).unwrap();
        let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
        for _ in 0..200 {
            let x = 0.5 * (lo + hi);
            if model.h_prime(x) > 2.0 * model.h_prime(1.0 - x) {
                hi = x;
            } else {
                lo = x;
            }
        }
        let expect = model.h(lo) + 2.0 * model.h(1.0 - lo);
        assert!((sol.summary.value - expect).abs() <= 1e-10 * expect, "{} vs {expect}", sol.summary.value);
    }

    #[test]
    fn single_edge_instance() {
        let d = Domain::network(
            vec![Point::new(0.0, 0.0), Point::new(1.0, 0.0)],
            vec![Edge { u: 0, v: 1, length: 2.0, width: 0.5 }],
            CongestionSupport::Edges,
            None,
        )
        .unwrap();
        let model = CongestionModel::new(1.7, 1.0, 0.1, Mode::SocialCost).unwrap();
        let p = Problem::new(d, DiscreteMeasure::dirac(0), DiscreteMeasure::dirac(1), model, None).unwrap();
        let sol = brute_force_optimum(&p).unwrap();
        let expect = 2.0 * 0.5 * model.h(2.0);
        assert!((sol.summary.value - expect).abs() < 1e-10 * expect);
    }

    #[test]
    fn free_plan_prefers_cheap_pairs() {
        // two sources and two targets on a line: the plan never crosses
        let pts: Vec<Point> = (0..4).map(|i| Point::new(i as f64, 0.0)).collect();
        let e = |u, v| Edge { u, v, length: 1.0, width: 1.0 };
        let d = Domain::network(pts, vec![e(0, 1), e(1, 2), e(2, 3)], CongestionSupport::Edges, None).unwrap();
        let mu0 = DiscreteMeasure::new([(0, 0.5), (1, 0.5)]).unwrap();
        let mu1 = DiscreteMeasure::new([(2, 0.5), (3, 0.5)]).unwrap();
        let model = CongestionModel::new(2.0, 1.0, 0.0, Mode::SocialCost).unwrap();
        let sol = brute_force_optimum(&Problem::new(d, mu0, mu1, model, None).unwrap()).unwrap();
        // flows 0.5, 1, 0.5 whatever the pairing; cost Σ f²
        assert!((sol.summary.value - 1.5).abs() < 1e-10);
        let total: f64 = sol.plan.iter().map(|p| p.2).sum();
        assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn rejects_large_instances() {
        let d = Domain::grid(Rect::unit(), 4, |_| true).unwrap();
        let model = CongestionModel::new(1.5, 1.0, 0.0, Mode::Equilibrium).unwrap();
        let p = Problem::new(d, DiscreteMeasure::dirac(0), DiscreteMeasure::dirac(15), model, None).unwrap();
        assert!(matches!(brute_force_optimum(&p), Err(Error::TooLarge(_))));
    }
}
