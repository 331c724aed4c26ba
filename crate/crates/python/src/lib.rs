//! Python bindings: build a domain and marginals, solve, verify.

use std::collections::BTreeMap;

use congest_core::measures::{gaussian_measure, point_measure, segment_measure, uniform_measure};
use congest_core::{flow, oracle, solver};
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::PyDict;

create_exception!(congest, CongestError, PyException);

fn err(e: congest_core::Error) -> PyErr {
    CongestError::new_err(e.to_string())
}

fn pt((x, y): (f64, f64)) -> congest_core::Point {
    congest_core::Point::new(x, y)
}

#[pyclass(frozen, from_py_object, name = "Domain")]
#[derive(Clone)]
struct PyDomain(congest_core::Domain);

#[pymethods]
impl PyDomain {
    /// Square-cell grid over `(x0, y0, x1, y1)` with `resolution` cells
    /// along the shorter side.
    #[staticmethod]
    fn grid(bounds: (f64, f64, f64, f64), resolution: usize) -> PyResult<Self> {
        let rect = congest_core::Rect::new(bounds.0, bounds.1, bounds.2, bounds.3);
        congest_core::Domain::grid(rect, resolution, |_| true).map(Self).map_err(err)
    }

    /// Explicit network; each edge is `(u, v, length, width)`. Edge
    /// congestion is used unless `node_support` is set.
    #[staticmethod]
    #[pyo3(signature = (nodes, edges, node_support = false))]
    fn network(nodes: Vec<(f64, f64)>, edges: Vec<(usize, usize, f64, f64)>, node_support: bool) -> PyResult<Self> {
        let edges = edges
            .into_iter()
            .map(|(u, v, length, width)| congest_core::Edge { u, v, length, width })
            .collect();
        let support = if node_support {
            congest_core::CongestionSupport::Nodes
        } else {
            congest_core::CongestionSupport::Edges
        };
        congest_core::Domain::network(nodes.into_iter().map(pt).collect(), edges, support, None)
            .map(Self)
            .map_err(err)
    }

    #[getter]
    fn node_count(&self) -> usize {
        self.0.node_count()
    }

    #[getter]
    fn edge_count(&self) -> usize {
        self.0.edge_count()
    }

    fn nodes(&self) -> Vec<(f64, f64)> {
        self.0.nodes().iter().map(|p| (p.x, p.y)).collect()
    }

    fn edges(&self) -> Vec<(usize, usize, f64, f64)> {
        self.0.edges().iter().map(|e| (e.u, e.v, e.length, e.width)).collect()
    }

    /// Nearest node to `(x, y)`.
    fn node_at(&self, x: f64, y: f64) -> PyResult<usize> {
        self.0.node_at(congest_core::Point::new(x, y)).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!("Domain(nodes={}, edges={})", self.0.node_count(), self.0.edge_count())
    }
}

#[pyclass(frozen, from_py_object, name = "Measure")]
#[derive(Clone)]
struct PyMeasure(congest_core::DiscreteMeasure);

#[pymethods]
impl PyMeasure {
    /// Atoms as `{node: mass}`.
    #[new]
    fn new(atoms: BTreeMap<usize, f64>) -> PyResult<Self> {
        congest_core::DiscreteMeasure::new(atoms).map(Self).map_err(err)
    }

    #[staticmethod]
    fn segment(domain: &PyDomain, a: (f64, f64), b: (f64, f64)) -> PyResult<Self> {
        segment_measure(&domain.0, pt(a), pt(b)).map(Self).map_err(err)
    }

    #[staticmethod]
    fn uniform(domain: &PyDomain) -> PyResult<Self> {
        uniform_measure(&domain.0).map(Self).map_err(err)
    }

    #[staticmethod]
    fn gaussian(domain: &PyDomain, center: (f64, f64), sigma: f64) -> PyResult<Self> {
        gaussian_measure(&domain.0, pt(center), sigma).map(Self).map_err(err)
    }

    /// Point masses `(x, y, mass)` snapped to their nearest nodes.
    #[staticmethod]
    fn points(domain: &PyDomain, atoms: Vec<(f64, f64, f64)>) -> PyResult<Self> {
        let atoms: Vec<_> = atoms.into_iter().map(|(x, y, m)| (pt((x, y)), m)).collect();
        point_measure(&domain.0, &atoms).map(Self).map_err(err)
    }

    fn normalize(&self) -> PyResult<Self> {
        self.0.normalize().map(Self).map_err(err)
    }

    #[getter]
    fn total(&self) -> f64 {
        self.0.total()
    }

    fn atoms(&self) -> BTreeMap<usize, f64> {
        self.0.iter().collect()
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }
}

#[pyclass(frozen, from_py_object, name = "CongestionModel")]
#[derive(Clone)]
struct PyModel(congest_core::CongestionModel);

#[pymethods]
impl PyModel {
    /// `g(z) = a z^(q-1) + c0`; `mode` is "equilibrium" or "social_cost".
    #[new]
    #[pyo3(signature = (q, a = 1.0, c0 = 0.05, mode = "equilibrium"))]
    fn new(q: f64, a: f64, c0: f64, mode: &str) -> PyResult<Self> {
        let mode = match mode {
            "equilibrium" => congest_core::Mode::Equilibrium,
            "social_cost" => congest_core::Mode::SocialCost,
            other => return Err(CongestError::new_err(format!("unknown mode {other:?}"))),
        };
        congest_core::CongestionModel::new(q, a, c0, mode).map(Self).map_err(err)
    }

    fn g(&self, z: f64) -> f64 {
        self.0.g(z)
    }

    fn h(&self, z: f64) -> PyResult<f64> {
        self.0.h_eval(z).map_err(err)
    }

    fn h_prime(&self, z: f64) -> PyResult<f64> {
        self.0.h_prime_eval(z).map_err(err)
    }

    fn h_conj(&self, xi: f64) -> PyResult<f64> {
        self.0.h_conj_eval(xi).map_err(err)
    }
}

#[pyclass(frozen, name = "Problem")]
struct PyProblem(solver::Problem);

fn plan_from(entries: Vec<(usize, usize, f64)>) -> congest_core::Result<congest_core::TransportPlan> {
    congest_core::TransportPlan::new(
        entries
            .into_iter()
            .map(|(source, target, mass)| congest_core::PlanEntry { source, target, mass })
            .collect(),
    )
}

fn paths_from(domain: &congest_core::Domain, paths: Vec<(Vec<usize>, f64)>) -> congest_core::Result<congest_core::PathFlow> {
    let entries = paths
        .into_iter()
        .map(|(nodes, mass)| Ok(congest_core::FlowEntry { path: congest_core::GridPath::new(domain, nodes)?, mass }))
        .collect::<congest_core::Result<Vec<_>>>()?;
    congest_core::PathFlow::new(entries)
}

#[pymethods]
impl PyProblem {
    /// `fixed_plan` is a list of `(source, target, mass)`; when given, only
    /// the routing is optimized.
    #[new]
    #[pyo3(signature = (domain, mu0, mu1, model, fixed_plan = None))]
    fn new(
        domain: &PyDomain,
        mu0: &PyMeasure,
        mu1: &PyMeasure,
        model: &PyModel,
        fixed_plan: Option<Vec<(usize, usize, f64)>>,
    ) -> PyResult<Self> {
        let plan = fixed_plan.map(plan_from).transpose().map_err(err)?;
        solver::Problem::new(domain.0.clone(), mu0.0.clone(), mu1.0.clone(), model.0, plan)
            .map(Self)
            .map_err(err)
    }

    /// Congestion objective of a path flow given as `[(nodes, mass), ...]`.
    fn objective(&self, paths: Vec<(Vec<usize>, f64)>) -> PyResult<f64> {
        let flow = paths_from(&self.0.domain, paths).map_err(err)?;
        let field = flow::intensity_from_paths(&self.0.domain, &flow).map_err(err)?;
        Ok(solver::primal_objective(&self.0, &field))
    }
}

#[pyclass(frozen, name = "Report")]
struct PyReport {
    report: congest_core::SolverReport,
    densities: Vec<f64>,
}

#[pymethods]
impl PyReport {
    #[getter]
    fn primal(&self) -> f64 {
        self.report.primal
    }

    #[getter]
    fn dual(&self) -> f64 {
        self.report.dual
    }

    #[getter]
    fn gap(&self) -> f64 {
        self.report.gap
    }

    #[getter]
    fn wardrop_gap(&self) -> f64 {
        self.report.wardrop_gap
    }

    #[getter]
    fn mk_gap(&self) -> Option<f64> {
        self.report.mk_gap
    }

    #[getter]
    fn iterations(&self) -> usize {
        self.report.iterations
    }

    #[getter]
    fn converged(&self) -> bool {
        self.report.converged
    }

    #[getter]
    fn warnings(&self) -> Vec<String> {
        self.report.warnings.clone()
    }

    /// Element densities (per cell on grids, per edge on networks).
    #[getter]
    fn densities(&self) -> Vec<f64> {
        self.densities.clone()
    }

    #[getter]
    fn edge_flow(&self) -> Vec<f64> {
        self.report.intensity.edge_flow.clone()
    }

    #[getter]
    fn xi(&self) -> Vec<f64> {
        self.report.xi.clone()
    }

    /// `[(source, target, mass), ...]`
    #[getter]
    fn plan(&self) -> Vec<(usize, usize, f64)> {
        self.report.plan.entries().iter().map(|e| (e.source, e.target, e.mass)).collect()
    }

    /// `[(nodes, mass), ...]`
    #[getter]
    fn paths(&self) -> Vec<(Vec<usize>, f64)> {
        self.report
            .flow
            .entries()
            .iter()
            .map(|e| (e.path.nodes().to_vec(), e.mass))
            .collect()
    }

    /// One dict per iteration with the bounds and step length.
    fn history<'py>(&self, py: Python<'py>) -> PyResult<Vec<Bound<'py, PyDict>>> {
        self.report
            .history
            .iter()
            .map(|h| {
                let d = PyDict::new(py);
                d.set_item("iter", h.iter)?;
                d.set_item("primal", h.primal)?;
                d.set_item("dual", h.best_dual)?;
                d.set_item("gap", h.gap)?;
                d.set_item("theta", h.theta)?;
                d.set_item("mk_value", h.mk_value)?;
                Ok(d)
            })
            .collect()
    }
}

/// Frank-Wolfe with exact line search until the relative gap reaches `gap_tol`.
#[pyfunction]
#[pyo3(signature = (problem, max_iters = 500, gap_tol = 1e-4, seed = None, away_steps = true))]
fn solve(
    py: Python<'_>,
    problem: &PyProblem,
    max_iters: usize,
    gap_tol: f64,
    seed: Option<u64>,
    away_steps: bool,
) -> PyResult<PyReport> {
    let config = solver::SolverConfig {
        max_iters,
        gap_tol,
        seed,
        away_steps,
        ..Default::default()
    };
    let p = &problem.0;
    let report = py.detach(|| solver::fw_solve(p, &config)).map_err(err)?;
    let densities = flow::element_density(&p.domain, &report.intensity);
    Ok(PyReport { report, densities })
}

/// Returns `(wardrop_gap, mk_gap)` for a path flow under the metric `xi`;
/// `mk_gap` is `None` when the plan is fixed.
#[pyfunction]
fn wardrop_check(problem: &PyProblem, paths: Vec<(Vec<usize>, f64)>, xi: Vec<f64>) -> PyResult<(f64, Option<f64>)> {
    let flow = paths_from(&problem.0.domain, paths).map_err(err)?;
    let c = solver::wardrop_check(&problem.0, &flow, &xi).map_err(err)?;
    Ok((c.wardrop_gap, c.mk_gap))
}

/// Metric `H'(density)` induced by a path flow.
#[pyfunction]
fn metric(problem: &PyProblem, paths: Vec<(Vec<usize>, f64)>) -> PyResult<Vec<f64>> {
    let flow = paths_from(&problem.0.domain, paths).map_err(err)?;
    let field = flow::intensity_from_paths(&problem.0.domain, &flow).map_err(err)?;
    Ok(solver::xi_from_intensity(&problem.0, &field))
}

/// Reference optimum of a tiny instance (at most 12 nodes, 6 atoms per
/// marginal).
#[pyfunction]
fn reference_optimum(py: Python<'_>, problem: &PyProblem) -> PyResult<f64> {
    let p = &problem.0;
    py.detach(|| oracle::brute_force_optimum(p))
        .map(|s| s.summary.value)
        .map_err(err)
}

#[pymodule]
fn congest(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("CongestError", m.py().get_type::<CongestError>())?;
    m.add_class::<PyDomain>()?;
    m.add_class::<PyMeasure>()?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyProblem>()?;
    m.add_class::<PyReport>()?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(wardrop_check, m)?)?;
    m.add_function(wrap_pyfunction!(metric, m)?)?;
    m.add_function(wrap_pyfunction!(reference_optimum, m)?)?;
    Ok(())
}
