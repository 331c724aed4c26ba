//! Discretized domains: planar 8-neighbour grids over a masked rectangle,
//! and small explicit networks.
//!
//! Congestion is measured on *elements*. On grids the elements are the cells
//! (one per node, area `h²`), and an edge shares its mass-length equally
//! between its two endpoint cells. On networks built with
//! [`CongestionSupport::Edges`] each edge is its own corridor of area
//! `length · width`.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dist(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    fn dist2(self, other: Point) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        dx * dx + dy * dy
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub min: Point,
    pub max: Point,
}

impl Rect {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self {
            min: Point::new(x0.min(x1), y0.min(y1)),
            max: Point::new(x0.max(x1), y0.max(y1)),
        }
    }

    pub fn unit() -> Self {
        Self::new(0.0, 0.0, 1.0, 1.0)
    }

    pub fn width(&self) -> f64 {
        self.max.x - self.min.x
    }

    pub fn height(&self) -> f64 {
        self.max.y - self.min.y
    }

    pub fn contains(&self, p: Point) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CongestionSupport {
    /// One congestion element per node (grid cells).
    Nodes,
    /// One congestion element per edge (corridor networks).
    Edges,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub u: usize,
    pub v: usize,
    pub length: f64,
    pub width: f64,
}

impl Edge {
    pub fn other(&self, node: usize) -> usize {
        if node == self.u {
            self.v
        } else {
            self.u
        }
    }
}

/// Cell layout of a grid domain.
#[derive(Debug, Clone)]
pub struct Lattice {
    pub spacing: f64,
    pub nx: usize,
    pub ny: usize,
    cell_node: Vec<Option<usize>>,
    node_cell: Vec<(usize, usize)>,
}

impl Lattice {
    pub fn node_of_cell(&self, i: usize, j: usize) -> Option<usize> {
        if i < self.nx && j < self.ny {
            self.cell_node[j * self.nx + i]
        } else {
            None
        }
    }

    pub fn cell_of_node(&self, node: usize) -> (usize, usize) {
        self.node_cell[node]
    }

    pub fn cell_area(&self) -> f64 {
        self.spacing * self.spacing
    }
}

#[derive(Debug, Clone)]
pub struct Domain {
    bounds: Rect,
    nodes: Vec<Point>,
    edges: Vec<Edge>,
    adjacency: Vec<Vec<(usize, usize)>>,
    node_area: Vec<f64>,
    support: CongestionSupport,
    lattice: Option<Lattice>,
}

const GRID_OFFSETS: [(isize, isize); 4] = [(1, 0), (-1, 1), (0, 1), (1, 1)];

impl Domain {
    /// Grid over `bounds` with `resolution` cells along the shorter side.
    /// A cell is active when `mask` accepts its center.
    pub fn grid<F>(bounds: Rect, resolution: usize, mask: F) -> Result<Self>
    where
        F: Fn(Point) -> bool,
    {
        if resolution == 0 {
            return Err(Error::InvalidDomain("resolution must be positive".into()));
        }
        if !(bounds.width() > 0.0 && bounds.height() > 0.0) {
            return Err(Error::InvalidDomain("bounds must have positive extent".into()));
        }
        let h = bounds.width().min(bounds.height()) / resolution as f64;
        let nx = ((bounds.width() / h).round() as usize).max(1);
        let ny = ((bounds.height() / h).round() as usize).max(1);

        let mut cell_node = vec![None; nx * ny];
        let mut node_cell = Vec::new();
        let mut nodes = Vec::new();
        for j in 0..ny {
            for i in 0..nx {
                let c = Point::new(
                    bounds.min.x + (i as f64 + 0.5) * h,
                    bounds.min.y + (j as f64 + 0.5) * h,
                );
                if mask(c) {
                    cell_node[j * nx + i] = Some(nodes.len());
                    node_cell.push((i, j));
                    nodes.push(c);
                }
            }
        }
        if nodes.is_empty() {
            return Err(Error::EmptyDomain);
        }

        let diag = h * std::f64::consts::SQRT_2;
        let mut edges = Vec::new();
        for (u, &(i, j)) in node_cell.iter().enumerate() {
            for (di, dj) in GRID_OFFSETS {
                let (ni, nj) = (i as isize + di, j as isize + dj);
                if ni < 0 || nj < 0 || ni as usize >= nx || nj as usize >= ny {
                    continue;
                }
                if let Some(v) = cell_node[nj as usize * nx + ni as usize] {
                    let length = if di != 0 && dj != 0 { diag } else { h };
                    edges.push(Edge {
                        u,
                        v,
                        length,
                        width: h,
                    });
                }
            }
        }

        let n = nodes.len();
        let lattice = Lattice {
            spacing: h,
            nx,
            ny,
            cell_node,
            node_cell,
        };
        let domain = Self {
            bounds,
            adjacency: build_adjacency(n, &edges),
            nodes,
            edges,
            node_area: vec![h * h; n],
            support: CongestionSupport::Nodes,
            lattice: Some(lattice),
        };
        domain.ensure_connected()?;
        Ok(domain)
    }

    /// Explicit network. `node_area` is only used with node support (and
    /// for cell-density output); it defaults to 1 per node when `None`.
    pub fn network(
        nodes: Vec<Point>,
        edges: Vec<Edge>,
        support: CongestionSupport,
        node_area: Option<Vec<f64>>,
    ) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::EmptyDomain);
        }
        let n = nodes.len();
        let mut seen = std::collections::HashSet::new();
        for e in &edges {
            if e.u >= n || e.v >= n {
                return Err(Error::InvalidDomain(format!(
                    "edge ({}, {}) references a missing node",
                    e.u, e.v
                )));
            }
            if e.u == e.v {
                return Err(Error::InvalidDomain(format!("self-loop at node {}", e.u)));
            }
            if !(e.length > 0.0 && e.width > 0.0) {
                return Err(Error::InvalidDomain(format!(
                    "edge ({}, {}) needs positive length and width",
                    e.u, e.v
                )));
            }
            if !seen.insert((e.u.min(e.v), e.u.max(e.v))) {
                return Err(Error::InvalidDomain(format!(
                    "parallel edges between {} and {}",
                    e.u, e.v
                )));
            }
        }
        let node_area = node_area.unwrap_or_else(|| vec![1.0; n]);
        if node_area.len() != n || node_area.iter().any(|&a| !(a > 0.0)) {
            return Err(Error::InvalidDomain(
                "node areas must be positive, one per node".into(),
            ));
        }
        let (mut lo, mut hi) = (nodes[0], nodes[0]);
        for p in &nodes {
            lo = Point::new(lo.x.min(p.x), lo.y.min(p.y));
            hi = Point::new(hi.x.max(p.x), hi.y.max(p.y));
        }
        let domain = Self {
            bounds: Rect { min: lo, max: hi },
            adjacency: build_adjacency(n, &edges),
            nodes,
            edges,
            node_area,
            support,
            lattice: None,
        };
        domain.ensure_connected()?;
        Ok(domain)
    }

    fn ensure_connected(&self) -> Result<()> {
        let components = self.component_count();
        if components > 1 {
            return Err(Error::DisconnectedDomain { components });
        }
        Ok(())
    }

    fn component_count(&self) -> usize {
        let n = self.nodes.len();
        let mut seen = vec![false; n];
        let mut components = 0;
        let mut queue = VecDeque::new();
        for start in 0..n {
            if seen[start] {
                continue;
            }
            components += 1;
            seen[start] = true;
            queue.push_back(start);
            while let Some(u) = queue.pop_front() {
                for &(v, _) in &self.adjacency[u] {
                    if !seen[v] {
                        seen[v] = true;
                        queue.push_back(v);
                    }
                }
            }
        }
        components
    }

    pub fn bounds(&self) -> Rect {
        self.bounds
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn nodes(&self) -> &[Point] {
        &self.nodes
    }

    pub fn node(&self, id: usize) -> Point {
        self.nodes[id]
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge(&self, id: usize) -> &Edge {
        &self.edges[id]
    }

    /// `(neighbour, edge id)` pairs of `node`.
    pub fn neighbors(&self, node: usize) -> &[(usize, usize)] {
        &self.adjacency[node]
    }

    pub fn edge_between(&self, u: usize, v: usize) -> Option<usize> {
        self.adjacency
            .get(u)?
            .iter()
            .find(|&&(w, _)| w == v)
            .map(|&(_, e)| e)
    }

    pub fn node_area(&self, node: usize) -> f64 {
        self.node_area[node]
    }

    pub fn support(&self) -> CongestionSupport {
        self.support
    }

    pub fn lattice(&self) -> Option<&Lattice> {
        self.lattice.as_ref()
    }

    pub fn spacing(&self) -> Option<f64> {
        self.lattice.as_ref().map(|l| l.spacing)
    }

    pub fn total_area(&self) -> f64 {
        self.node_area.iter().sum()
    }

    /// Number of congestion elements (cells or edges).
    pub fn element_count(&self) -> usize {
        match self.support {
            CongestionSupport::Nodes => self.nodes.len(),
            CongestionSupport::Edges => self.edges.len(),
        }
    }

    /// Area over which the intensity of element `k` is spread.
    pub fn element_area(&self, k: usize) -> f64 {
        match self.support {
            CongestionSupport::Nodes => self.node_area[k],
            CongestionSupport::Edges => self.edges[k].length * self.edges[k].width,
        }
    }

    /// Metric value seen by edge `e` under the element field `xi`.
    #[inline]
    pub fn edge_metric(&self, e: usize, xi: &[f64]) -> f64 {
        let edge = &self.edges[e];
        match self.support {
            CongestionSupport::Nodes => 0.5 * (xi[edge.u] + xi[edge.v]),
            CongestionSupport::Edges => xi[e],
        }
    }

    /// Traversal cost `ℓ_e · ξ_e` of edge `e`.
    #[inline]
    pub fn edge_cost(&self, e: usize, xi: &[f64]) -> f64 {
        self.edges[e].length * self.edge_metric(e, xi)
    }

    /// Nearest node to `p`; ties go to the lowest id.
    pub fn node_at(&self, p: Point) -> Result<usize> {
        let outside = Error::OutsideDomain { x: p.x, y: p.y };
        match &self.lattice {
            Some(lat) => {
                if !self.bounds.contains(p) {
                    return Err(outside);
                }
                let h = lat.spacing;
                let ci = ((p.x - self.bounds.min.x) / h).floor() as isize;
                let cj = ((p.y - self.bounds.min.y) / h).floor() as isize;
                let mut best: Option<(f64, usize)> = None;
                for j in (cj - 2)..=(cj + 2) {
                    for i in (ci - 2)..=(ci + 2) {
                        if i < 0 || j < 0 {
                            continue;
                        }
                        if let Some(id) = lat.node_of_cell(i as usize, j as usize) {
                            let d = p.dist2(self.nodes[id]);
                            if best.is_none_or(|(bd, bid)| d < bd || (d == bd && id < bid)) {
                                best = Some((d, id));
                            }
                        }
                    }
                }
                match best {
                    Some((d, id)) if d.sqrt() <= h => Ok(id),
                    _ => Err(outside),
                }
            }
            None => {
                let tol = self
                    .edges
                    .iter()
                    .map(|e| e.length)
                    .fold(f64::INFINITY, f64::min);
                let (d, id) = self
                    .nodes
                    .iter()
                    .enumerate()
                    .map(|(id, q)| (p.dist2(*q), id))
                    .fold((f64::INFINITY, usize::MAX), |acc, x| {
                        if x.0 < acc.0 {
                            x
                        } else {
                            acc
                        }
                    });
                if d.sqrt() <= tol || self.edges.is_empty() && d == 0.0 {
                    Ok(id)
                } else {
                    Err(outside)
                }
            }
        }
    }
}

fn build_adjacency(n: usize, edges: &[Edge]) -> Vec<Vec<(usize, usize)>> {
    let mut adjacency = vec![Vec::new(); n];
    for (id, e) in edges.iter().enumerate() {
        adjacency[e.u].push((e.v, id));
        adjacency[e.v].push((e.u, id));
    }
    for list in &mut adjacency {
        list.sort_unstable();
    }
    adjacency
}

#[cfg(test)]
mod tests {
    use super::*;

    fn full(_: Point) -> bool {
        true
    }

    /// Independent count: brute-force over all node pairs.
    fn brute_force_edges(nx: usize, ny: usize) -> (usize, usize) {
        let cells: Vec<(i64, i64)> = (0..ny as i64)
            .flat_map(|j| (0..nx as i64).map(move |i| (i, j)))
            .collect();
        let (mut axis, mut diag) = (0, 0);
        for a in 0..cells.len() {
            for b in (a + 1)..cells.len() {
                let dx = (cells[a].0 - cells[b].0).abs();
                let dy = (cells[a].1 - cells[b].1).abs();
                match (dx, dy) {
                    (1, 0) | (0, 1) => axis += 1,
                    (1, 1) => diag += 1,
                    _ => {}
                }
            }
        }
        (axis, diag)
    }

    #[test]
    fn unit_square_res4_counts() {
        let d = Domain::grid(Rect::unit(), 4, full).unwrap();
        assert_eq!(d.node_count(), 16);
        assert_eq!(d.edge_count(), 42);
        let axis = d.edges().iter().filter(|e| e.length == 0.25).count();
        let diag = d
            .edges()
            .iter()
            .filter(|e| e.length == 0.25 * std::f64::consts::SQRT_2)
            .count();
        assert_eq!((axis, diag), (24, 18));
        assert_eq!(brute_force_edges(4, 4), (24, 18));
    }

    #[test]
    fn lattice_formulas_match_enumeration() {
        for (w, hgt, res) in [(3.0, 1.0, 1), (2.0, 1.0, 3), (1.0, 1.0, 5), (1.0, 2.5, 2)] {
            let d = Domain::grid(Rect::new(0.0, 0.0, w, hgt), res, full).unwrap();
            let lat = d.lattice().unwrap();
            let (nx, ny) = (lat.nx, lat.ny);
            let axis = nx * (ny - 1) + ny * (nx - 1);
            let diag = 2 * (nx - 1) * (ny - 1);
            assert_eq!(brute_force_edges(nx, ny), (axis, diag));
            assert_eq!(d.edge_count(), axis + diag);
            let area: f64 = d.total_area();
            assert!((area - (nx * ny) as f64 * lat.cell_area()).abs() < 1e-12);
        }
    }

    #[test]
    fn single_cell_grid() {
        let d = Domain::grid(Rect::unit(), 1, full).unwrap();
        assert_eq!(d.node_count(), 1);
        assert_eq!(d.edge_count(), 0);
    }

    #[test]
    fn masked_rectangle_matches_square() {
        let half = Domain::grid(Rect::new(0.0, 0.0, 2.0, 1.0), 2, |p| p.x < 1.0).unwrap();
        let square = Domain::grid(Rect::unit(), 2, full).unwrap();
        assert_eq!(half.nodes(), square.nodes());
        assert_eq!(half.edges(), square.edges());
    }

    #[test]
    fn empty_and_disconnected_masks() {
        assert!(matches!(
            Domain::grid(Rect::unit(), 4, |_| false),
            Err(Error::EmptyDomain)
        ));
        let split = Domain::grid(Rect::unit(), 4, |p| p.x < 0.25 || p.x > 0.75);
        assert!(matches!(
            split,
            Err(Error::DisconnectedDomain { components: 2 })
        ));
    }

    #[test]
    fn node_lookup() {
        let d = Domain::grid(Rect::unit(), 4, full).unwrap();
        assert_eq!(d.node_at(Point::new(0.1, 0.1)).unwrap(), 0);
        // shared corner of cells 0, 1, 4, 5
        assert_eq!(d.node_at(Point::new(0.25, 0.25)).unwrap(), 0);
        assert_eq!(d.node_at(Point::new(0.9, 0.6)).unwrap(), 11);
        assert!(matches!(
            d.node_at(Point::new(2.0, 2.0)),
            Err(Error::OutsideDomain { .. })
        ));
    }

    #[test]
    fn node_lookup_respects_mask_distance() {
        // only the left column is active; a point in the far right column
        // is more than h away from any active node
        let d = Domain::grid(Rect::unit(), 4, |p| p.x < 0.25).unwrap();
        assert!(d.node_at(Point::new(0.3, 0.5)).is_ok());
        assert!(d.node_at(Point::new(0.95, 0.5)).is_err());
    }

    #[test]
    fn edges_join_eight_neighbours() {
        let d = Domain::grid(Rect::new(-0.5, -0.5, 1.5, 1.5), 6, |p| p.x * p.x + p.y * p.y < 1.2).unwrap();
        let lat = d.lattice().unwrap();
        for e in d.edges() {
            let (a, b) = (lat.cell_of_node(e.u), lat.cell_of_node(e.v));
            let dx = a.0.abs_diff(b.0);
            let dy = a.1.abs_diff(b.1);
            assert!(dx <= 1 && dy <= 1 && dx + dy >= 1);
            assert!((e.length - d.node(e.u).dist(d.node(e.v))).abs() < 1e-12);
        }
        for p in d.nodes() {
            assert!(d.bounds().contains(*p));
        }
    }

    #[test]
    fn network_validation() {
        let pts = vec![Point::new(0.0, 0.0), Point::new(1.0, 0.0)];
        let e = |u, v| Edge {
            u,
            v,
            length: 1.0,
            width: 1.0,
        };
        assert!(Domain::network(pts.clone(), vec![e(0, 1)], CongestionSupport::Edges, None).is_ok());
        assert!(Domain::network(pts.clone(), vec![e(0, 1), e(1, 0)], CongestionSupport::Edges, None).is_err());
        assert!(Domain::network(pts.clone(), vec![e(0, 0)], CongestionSupport::Edges, None).is_err());
        assert!(matches!(
            Domain::network(pts, vec![], CongestionSupport::Edges, None),
            Err(Error::DisconnectedDomain { .. })
        ));
    }
}
