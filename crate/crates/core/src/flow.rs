//! Path flows, traffic intensity and path functionals.

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;

use crate::domain::{CongestionSupport, Domain};
use crate::error::{Error, Result};
use crate::measures::{DiscreteMeasure, PlanEntry, TransportPlan};

/// A walk on the domain graph, stored with the edge ids it traverses.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct GridPath {
    nodes: Vec<usize>,
    edges: Vec<usize>,
}

impl GridPath {
    pub fn new(domain: &Domain, nodes: Vec<usize>) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::InvalidPath("empty node sequence".into()));
        }
        if let Some(&bad) = nodes.iter().find(|&&n| n >= domain.node_count()) {
            return Err(Error::InvalidPath(format!("node {bad} does not exist")));
        }
        let edges = nodes
            .windows(2)
            .map(|w| {
                domain
                    .edge_between(w[0], w[1])
                    .ok_or_else(|| Error::InvalidPath(format!("no edge between {} and {}", w[0], w[1])))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { nodes, edges })
    }

    pub fn single(node: usize) -> Self {
        Self {
            nodes: vec![node],
            edges: Vec::new(),
        }
    }

    pub(crate) fn from_parts(nodes: Vec<usize>, edges: Vec<usize>) -> Self {
        debug_assert_eq!(nodes.len(), edges.len() + 1);
        Self { nodes, edges }
    }

    pub fn nodes(&self) -> &[usize] {
        &self.nodes
    }

    pub fn edges(&self) -> &[usize] {
        &self.edges
    }

    pub fn start(&self) -> usize {
        self.nodes[0]
    }

    pub fn end(&self) -> usize {
        *self.nodes.last().unwrap()
    }

    /// Euclidean length `l(σ)`.
    pub fn length(&self, domain: &Domain) -> f64 {
        self.edges.iter().map(|&e| domain.edge(e).length).sum()
    }

    /// `L_ξ(σ)` without argument checks. Summation runs from the start node
    /// in path order, matching the shortest-path label arithmetic.
    #[inline]
    pub fn cost(&self, domain: &Domain, xi: &[f64]) -> f64 {
        let mut acc = 0.0;
        for &e in &self.edges {
            acc += domain.edge_cost(e, xi);
        }
        acc
    }

    fn check_on(&self, domain: &Domain) -> Result<()> {
        for (w, &e) in self.nodes.windows(2).zip(&self.edges) {
            let edge = domain.edges().get(e).ok_or_else(|| Error::InvalidPath(format!("edge {e} does not exist")))?;
            let ok = (edge.u == w[0] && edge.v == w[1]) || (edge.u == w[1] && edge.v == w[0]);
            if !ok {
                return Err(Error::InvalidPath(format!("edge {e} does not join {} and {}", w[0], w[1])));
            }
        }
        Ok(())
    }
}

/// `L_ξ(σ) = Σ_e ℓ_e · ξ_e` over the traversed edges.
pub fn l_xi(domain: &Domain, path: &GridPath, xi: &[f64]) -> Result<f64> {
    check_metric(domain, xi)?;
    path.check_on(domain)?;
    Ok(path.cost(domain, xi))
}

pub(crate) fn check_metric(domain: &Domain, xi: &[f64]) -> Result<()> {
    if xi.len() != domain.element_count() {
        return Err(Error::InvalidDomain(format!(
            "metric has {} values, domain has {} congestion elements",
            xi.len(),
            domain.element_count()
        )));
    }
    if let Some(&bad) = xi.iter().find(|&&v| !(v >= 0.0) || !v.is_finite()) {
        return Err(Error::NegativeMetric(bad));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowEntry {
    pub path: GridPath,
    pub mass: f64,
}

/// A finite path measure `Q`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PathFlow {
    entries: Vec<FlowEntry>,
}

impl PathFlow {
    pub fn new(entries: Vec<FlowEntry>) -> Result<Self> {
        if let Some(e) = entries.iter().find(|e| !(e.mass > 0.0) || !e.mass.is_finite()) {
            return Err(Error::InvalidPath(format!("path mass {} must be positive", e.mass)));
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[FlowEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.entries.iter().map(|e| e.mass).sum()
    }

    /// `e0♯Q`
    pub fn start_measure(&self) -> DiscreteMeasure {
        DiscreteMeasure::new(self.entries.iter().map(|e| (e.path.start(), e.mass))).unwrap_or_default()
    }

    /// `e1♯Q`
    pub fn end_measure(&self) -> DiscreteMeasure {
        DiscreteMeasure::new(self.entries.iter().map(|e| (e.path.end(), e.mass))).unwrap_or_default()
    }

    /// Mean-weighted total length `∫ l dQ`.
    pub fn total_length(&self, domain: &Domain) -> f64 {
        self.entries.iter().map(|e| e.mass * e.path.length(domain)).sum()
    }

    /// `∫ L_ξ dQ`.
    pub fn total_cost(&self, domain: &Domain, xi: &[f64]) -> f64 {
        self.entries.iter().map(|e| e.mass * e.path.cost(domain, xi)).sum()
    }

    /// Merges identical node sequences (first occurrence keeps its slot)
    /// and drops entries lighter than `prune_mass`.
    pub fn merged(self, prune_mass: f64) -> Self {
        let mut index: HashMap<Vec<usize>, usize> = HashMap::with_capacity(self.entries.len());
        let mut out: Vec<FlowEntry> = Vec::with_capacity(self.entries.len());
        for e in self.entries {
            match index.get(e.path.nodes()) {
                Some(&i) => out[i].mass += e.mass,
                None => {
                    index.insert(e.path.nodes().to_vec(), out.len());
                    out.push(e);
                }
            }
        }
        out.retain(|e| e.mass >= prune_mass);
        Self { entries: out }
    }
}

/// Traffic intensity carried by the edges.
#[derive(Debug, Clone, PartialEq)]
pub struct IntensityField {
    /// Mass crossing each edge, counted with multiplicity.
    pub edge_flow: Vec<f64>,
    /// `f_e / w_e`, mass per unit length across the corridor.
    pub edge_density: Vec<f64>,
}

const PAR_CHUNK: usize = 512;

impl IntensityField {
    pub fn zero(domain: &Domain) -> Self {
        Self::from_edge_flows(domain, vec![0.0; domain.edge_count()])
    }

    pub fn from_edge_flows(domain: &Domain, edge_flow: Vec<f64>) -> Self {
        let edge_density = edge_flow
            .iter()
            .zip(domain.edges())
            .map(|(f, e)| f / e.width)
            .collect();
        Self {
            edge_flow,
            edge_density,
        }
    }

    /// `(1-θ)·self + θ·other`
    pub fn blend(&self, domain: &Domain, other: &Self, theta: f64) -> Self {
        let flows = self
            .edge_flow
            .iter()
            .zip(&other.edge_flow)
            .map(|(a, b)| (1.0 - theta) * a + theta * b)
            .collect();
        Self::from_edge_flows(domain, flows)
    }

    /// `Σ_e ℓ_e · f_e`, the total mass of the intensity measure.
    pub fn total_mass(&self, domain: &Domain) -> f64 {
        self.edge_flow
            .iter()
            .zip(domain.edges())
            .map(|(f, e)| e.length * f)
            .sum()
    }

    /// `⟨ξ, i⟩ = Σ_e ℓ_e·w_e·ξ_e·i_e`.
    pub fn pairing(&self, domain: &Domain, xi: &[f64]) -> f64 {
        (0..domain.edge_count())
            .map(|e| domain.edge_cost(e, xi) * self.edge_flow[e])
            .sum()
    }
}

fn accumulate(domain: &Domain, entries: &[FlowEntry]) -> Vec<f64> {
    let mut flows = vec![0.0; domain.edge_count()];
    for e in entries {
        for &edge in e.path.edges() {
            flows[edge] += e.mass;
        }
    }
    flows
}

/// Edge flows `f_e = Σ mass × (number of traversals of e)`.
///
/// Large flows are accumulated in fixed-size chunks in parallel and the
/// chunk sums are added in order, so the result does not depend on
/// scheduling.
pub fn intensity_from_paths(domain: &Domain, flow: &PathFlow) -> Result<IntensityField> {
    for e in flow.entries() {
        e.path.check_on(domain)?;
        if let Some(&bad) = e.path.nodes().iter().find(|&&n| n >= domain.node_count()) {
            return Err(Error::InvalidPath(format!("node {bad} does not exist")));
        }
    }
    Ok(intensity_unchecked(domain, flow))
}

pub(crate) fn intensity_unchecked(domain: &Domain, flow: &PathFlow) -> IntensityField {
    let entries = flow.entries();
    let flows = if entries.len() <= PAR_CHUNK {
        accumulate(domain, entries)
    } else {
        let partial: Vec<Vec<f64>> = entries
            .par_chunks(PAR_CHUNK)
            .map(|chunk| accumulate(domain, chunk))
            .collect();
        let mut flows = vec![0.0; domain.edge_count()];
        for p in partial {
            for (f, x) in flows.iter_mut().zip(p) {
                *f += x;
            }
        }
        flows
    };
    IntensityField::from_edge_flows(domain, flows)
}

/// Per-node density: each edge splits its mass-length `ℓ_e·f_e` equally
/// between its endpoint cells, divided by the cell area.
pub fn cell_density(domain: &Domain, field: &IntensityField) -> Vec<f64> {
    let mut acc = vec![0.0; domain.node_count()];
    for (e, edge) in domain.edges().iter().enumerate() {
        let half = 0.5 * edge.length * field.edge_flow[e];
        acc[edge.u] += half;
        acc[edge.v] += half;
    }
    for (n, a) in acc.iter_mut().enumerate() {
        *a /= domain.node_area(n);
    }
    acc
}

/// Density seen by each congestion element of the domain.
pub fn element_density(domain: &Domain, field: &IntensityField) -> Vec<f64> {
    match domain.support() {
        CongestionSupport::Nodes => cell_density(domain, field),
        CongestionSupport::Edges => field.edge_density.clone(),
    }
}

/// Conditional path laws `p^{x,y}`, keyed by endpoint pair.
pub type PathTable = BTreeMap<(usize, usize), Vec<(GridPath, f64)>>;

/// Splits `Q` into its endpoint plan `γ = (e0, e1)♯Q` and the normalized
/// per-pair path distributions.
pub fn decompose(flow: &PathFlow) -> (TransportPlan, PathTable) {
    let mut table: PathTable = BTreeMap::new();
    for e in flow.entries() {
        table
            .entry((e.path.start(), e.path.end()))
            .or_default()
            .push((e.path.clone(), e.mass));
    }
    let mut entries = Vec::with_capacity(table.len());
    for (&(source, target), paths) in table.iter_mut() {
        let mass: f64 = paths.iter().map(|(_, m)| m).sum();
        for (_, m) in paths.iter_mut() {
            *m /= mass;
        }
        entries.push(PlanEntry {
            source,
            target,
            mass,
        });
    }
    let plan = TransportPlan::new(entries).expect("grouped endpoint pairs are unique");
    (plan, table)
}

/// `Q = p^{x,y} ⊗ γ`. Pairs without a path table entry are skipped.
pub fn compose(plan: &TransportPlan, table: &PathTable) -> Result<PathFlow> {
    let mut entries = Vec::new();
    for pe in plan.entries() {
        let paths = table.get(&(pe.source, pe.target)).ok_or_else(|| {
            Error::InconsistentMarginals(format!("no paths for pair ({}, {})", pe.source, pe.target))
        })?;
        for (path, p) in paths {
            let mass = pe.mass * p;
            if mass > 0.0 {
                entries.push(FlowEntry {
                    path: path.clone(),
                    mass,
                });
            }
        }
    }
    PathFlow::new(entries)
}

/// Straight horizontal paths joining each atom of `mu0` to the atom of
/// `mu1` in the same lattice row. Each row must hold at most one atom of
/// each measure, with equal masses.
pub fn row_flow(domain: &Domain, mu0: &DiscreteMeasure, mu1: &DiscreteMeasure) -> Result<PathFlow> {
    let lattice = domain
        .lattice()
        .ok_or_else(|| Error::InvalidDomain("row paths need a grid domain".into()))?;
    let by_row = |mu: &DiscreteMeasure| -> Result<BTreeMap<usize, (usize, f64)>> {
        let mut rows = BTreeMap::new();
        for (n, m) in mu.iter() {
            let (i, j) = lattice.cell_of_node(n);
            if rows.insert(j, (i, m)).is_some() {
                return Err(Error::InconsistentMarginals(format!("row {j} holds several atoms")));
            }
        }
        Ok(rows)
    };
    let (left, right) = (by_row(mu0)?, by_row(mu1)?);
    if left.keys().ne(right.keys()) {
        return Err(Error::InconsistentMarginals("marginals occupy different rows".into()));
    }
    let mut entries = Vec::with_capacity(left.len());
    for (&j, &(i0, m0)) in &left {
        let (i1, m1) = right[&j];
        if (m0 - m1).abs() > 1e-12 * m0.max(m1) {
            return Err(Error::InconsistentMarginals(format!("row {j}: masses {m0} and {m1}")));
        }
        let cells: Vec<usize> = if i0 <= i1 {
            (i0..=i1).collect()
        } else {
            (i1..=i0).rev().collect()
        };
        let nodes = cells
            .into_iter()
            .map(|i| {
                lattice
                    .node_of_cell(i, j)
                    .ok_or_else(|| Error::InvalidPath(format!("cell ({i}, {j}) is inactive")))
            })
            .collect::<Result<Vec<_>>>()?;
        entries.push(FlowEntry {
            path: GridPath::new(domain, nodes)?,
            mass: m0,
        });
    }
    PathFlow::new(entries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{Edge, Point, Rect};
    use proptest::prelude::*;

    fn line3() -> Domain {
        let pts = vec![Point::new(0.0, 0.0), Point::new(1.0, 0.0), Point::new(2.0, 0.0)];
        let edges = vec![
            Edge { u: 0, v: 1, length: 1.0, width: 1.0 },
            Edge { u: 1, v: 2, length: 1.0, width: 1.0 },
        ];
        Domain::network(pts, edges, CongestionSupport::Nodes, None).unwrap()
    }

    fn one(domain: &Domain, nodes: Vec<usize>, mass: f64) -> PathFlow {
        PathFlow::new(vec![FlowEntry {
            path: GridPath::new(domain, nodes).unwrap(),
            mass,
        }])
        .unwrap()
    }

    /// Horizontal unit-flux flow on the unit square: one path per row.
    fn horizontal_flow(d: &Domain, n: usize) -> PathFlow {
        let lat = d.lattice().unwrap();
        let entries = (0..n)
            .map(|j| FlowEntry {
                path: GridPath::new(d, (0..n).map(|i| lat.node_of_cell(i, j).unwrap()).collect()).unwrap(),
                mass: 1.0 / n as f64,
            })
            .collect();
        PathFlow::new(entries).unwrap()
    }

    #[test]
    fn single_and_repeated_edges() {
        let d = line3();
        let f = intensity_from_paths(&d, &one(&d, vec![0, 1], 1.0)).unwrap();
        assert_eq!(f.edge_flow, vec![1.0, 0.0]);
        let f = intensity_from_paths(&d, &one(&d, vec![0, 1, 0], 1.0)).unwrap();
        assert_eq!(f.edge_flow, vec![2.0, 0.0]);
    }

    #[test]
    fn invalid_paths() {
        let d = line3();
        assert!(GridPath::new(&d, vec![0, 2]).is_err());
        assert!(GridPath::new(&d, vec![]).is_err());
        assert!(GridPath::new(&d, vec![7]).is_err());
        let other = Domain::grid(Rect::unit(), 4, |_| true).unwrap();
        let foreign = one(&other, vec![0, 5, 10], 1.0);
        assert!(intensity_from_paths(&d, &foreign).is_err());
    }

    #[test]
    fn horizontal_flow_has_unit_density() {
        let n = 8;
        let d = Domain::grid(Rect::unit(), n, |_| true).unwrap();
        let f = intensity_from_paths(&d, &horizontal_flow(&d, n)).unwrap();
        for (e, edge) in d.edges().iter().enumerate() {
            let horizontal = d.node(edge.u).y == d.node(edge.v).y;
            let expect = if horizontal { 1.0 / n as f64 } else { 0.0 };
            assert!((f.edge_flow[e] - expect).abs() < 1e-15);
            if horizontal {
                assert!((f.edge_density[e] - 1.0).abs() < 1e-12);
            }
        }
        let rho = cell_density(&d, &f);
        let lat = d.lattice().unwrap();
        for (node, r) in rho.iter().enumerate() {
            let (i, _) = lat.cell_of_node(node);
            let expect = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
            assert!((r - expect).abs() < 1e-12, "cell {node}: {r}");
        }
    }

    #[test]
    fn l_xi_examples() {
        let d = line3();
        let p = GridPath::new(&d, vec![0, 1, 2]).unwrap();
        assert_eq!(l_xi(&d, &p, &[1.0, 3.0, 5.0]).unwrap(), 6.0);
        assert_eq!(l_xi(&d, &p, &[0.0; 3]).unwrap(), 0.0);
        assert_eq!(l_xi(&d, &p, &[1.0; 3]).unwrap(), p.length(&d));
        assert!(matches!(l_xi(&d, &p, &[1.0, -1.0, 1.0]), Err(Error::NegativeMetric(_))));
    }

    #[test]
    fn cell_density_examples() {
        let d = Domain::grid(Rect::unit(), 4, |_| true).unwrap();
        let zero = IntensityField::zero(&d);
        assert!(cell_density(&d, &zero).iter().all(|&r| r == 0.0));
        let f = intensity_from_paths(&d, &one(&d, vec![0, 1], 1.0)).unwrap();
        let rho = cell_density(&d, &f);
        assert!((rho[0] - 2.0).abs() < 1e-12 && (rho[1] - 2.0).abs() < 1e-12);
        assert!(rho[2..].iter().all(|&r| r == 0.0));
    }

    #[test]
    fn decompose_examples() {
        let d = line3();
        let a = GridPath::new(&d, vec![0, 1]).unwrap();
        let b = GridPath::new(&d, vec![0, 1, 2, 1]).unwrap();
        let flow = PathFlow::new(vec![
            FlowEntry { path: a.clone(), mass: 0.3 },
            FlowEntry { path: b.clone(), mass: 0.7 },
        ])
        .unwrap();
        let (plan, table) = decompose(&flow);
        assert_eq!(plan.entries().len(), 1);
        assert!((plan.entries()[0].mass - 1.0).abs() < 1e-15);
        let probs: Vec<f64> = table[&(0, 1)].iter().map(|(_, p)| *p).collect();
        assert!((probs[0] - 0.3).abs() < 1e-15 && (probs[1] - 0.7).abs() < 1e-15);

        let flow = PathFlow::new(vec![
            FlowEntry { path: GridPath::new(&d, vec![0, 1, 2]).unwrap(), mass: 0.5 },
            FlowEntry { path: GridPath::new(&d, vec![2, 1]).unwrap(), mass: 0.5 },
        ])
        .unwrap();
        let (plan, table) = decompose(&flow);
        assert_eq!(plan.entries().len(), 2);
        assert!(table.values().all(|v| v.len() == 1 && v[0].1 == 1.0));
    }

    #[test]
    fn merging_and_pruning() {
        let d = line3();
        let p = GridPath::new(&d, vec![0, 1]).unwrap();
        let flow = PathFlow::new(vec![
            FlowEntry { path: p.clone(), mass: 0.25 },
            FlowEntry { path: GridPath::new(&d, vec![1, 2]).unwrap(), mass: 1e-14 },
            FlowEntry { path: p, mass: 0.75 },
        ])
        .unwrap()
        .merged(1e-12);
        assert_eq!(flow.len(), 1);
        assert_eq!(flow.entries()[0].mass, 1.0);
    }

    fn random_flow(d: &Domain, walks: Vec<(usize, Vec<usize>, f64)>) -> PathFlow {
        let entries = walks
            .into_iter()
            .map(|(start, steps, mass)| {
                let mut nodes = vec![start % d.node_count()];
                for s in steps {
                    let cur = *nodes.last().unwrap();
                    let nb = d.neighbors(cur);
                    nodes.push(nb[s % nb.len()].0);
                }
                FlowEntry {
                    path: GridPath::new(d, nodes).unwrap(),
                    mass,
                }
            })
            .collect();
        PathFlow::new(entries).unwrap()
    }

    fn walks() -> impl Strategy<Value = Vec<(usize, Vec<usize>, f64)>> {
        prop::collection::vec(
            (0usize..1000, prop::collection::vec(0usize..8, 0..12), 0.01f64..1.0),
            1..8,
        )
    }

    proptest! {
        #[test]
        fn compose_inverts_decompose(w in walks()) {
            let d = Domain::grid(Rect::unit(), 4, |_| true).unwrap();
            let flow = random_flow(&d, w).merged(0.0);
            let (plan, table) = decompose(&flow);
            let back = compose(&plan, &table).unwrap();
            prop_assert_eq!(back.len(), flow.len());
            for e in flow.entries() {
                let m = back.entries().iter().find(|b| b.path == e.path).map(|b| b.mass).unwrap();
                prop_assert!((m - e.mass).abs() <= 1e-12 * e.mass.max(1.0));
            }
            let (l, r) = plan.marginals();
            prop_assert!(l.relative_distance(&flow.start_measure()) < 1e-12);
            prop_assert!(r.relative_distance(&flow.end_measure()) < 1e-12);
        }
    }
}
