//! Congested cost `c_ξ(x, y)`: shortest paths under edge weights
//! `ℓ_e · ξ_e`, with geodesic extraction.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::domain::Domain;
use crate::error::{Error, Result};
use crate::flow::{check_metric, GridPath};

const NONE: usize = usize::MAX;

/// Single-source label-setting results for a set of sources.
#[derive(Debug, Clone)]
pub struct CostTable {
    sources: Vec<usize>,
    dist: Vec<Vec<f64>>,
    /// `(predecessor node, edge)` per node, `NONE` at the root.
    pred: Vec<Vec<(usize, usize)>>,
}

impl CostTable {
    pub fn sources(&self) -> &[usize] {
        &self.sources
    }

    fn row(&self, source: usize) -> Option<usize> {
        self.sources.iter().position(|&s| s == source)
    }

    /// `c_ξ(source, node)`; `None` if `source` is not in the table.
    pub fn cost(&self, source: usize, node: usize) -> Option<f64> {
        self.row(source).map(|r| self.dist[r][node])
    }

    pub fn costs_from(&self, source: usize) -> Option<&[f64]> {
        self.row(source).map(|r| self.dist[r].as_slice())
    }
}

#[derive(PartialEq)]
struct Label {
    dist: f64,
    rank: u32,
    node: usize,
}

impl Eq for Label {}

impl Ord for Label {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap: smaller distance first, then smaller rank
        other
            .dist
            .total_cmp(&self.dist)
            .then_with(|| other.rank.cmp(&self.rank))
    }
}

impl PartialOrd for Label {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Tie-break priority of nodes: identity by default, or a seeded random
/// permutation. Only the choice among equal-cost labels depends on it.
#[derive(Debug, Clone)]
pub struct TieBreak {
    rank: Vec<u32>,
}

impl TieBreak {
    pub fn by_id(n: usize) -> Self {
        Self {
            rank: (0..n as u32).collect(),
        }
    }

    pub fn seeded(n: usize, seed: u64) -> Self {
        let mut rank: Vec<u32> = (0..n as u32).collect();
        rank.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        Self { rank }
    }

    pub fn rank(&self, node: usize) -> u32 {
        self.rank[node]
    }
}

fn dijkstra(
    domain: &Domain,
    weights: &[f64],
    source: usize,
    targets: Option<&[usize]>,
    tie: &TieBreak,
) -> (Vec<f64>, Vec<(usize, usize)>) {
    let n = domain.node_count();
    let mut dist = vec![f64::INFINITY; n];
    let mut pred = vec![(NONE, NONE); n];
    let mut settled = vec![false; n];
    let mut remaining = targets.map(|t| {
        let mut want = vec![false; n];
        let mut count = 0;
        for &x in t {
            if !want[x] {
                want[x] = true;
                count += 1;
            }
        }
        (want, count)
    });
    let mut heap = BinaryHeap::new();
    dist[source] = 0.0;
    heap.push(Label {
        dist: 0.0,
        rank: tie.rank(source),
        node: source,
    });
    while let Some(Label { dist: d, node: u, .. }) = heap.pop() {
        if settled[u] || d > dist[u] {
            continue;
        }
        settled[u] = true;
        if let Some((want, count)) = remaining.as_mut() {
            if want[u] {
                *count -= 1;
                if *count == 0 {
                    break;
                }
            }
        }
        for &(v, e) in domain.neighbors(u) {
            if settled[v] {
                continue;
            }
            let nd = d + weights[e];
            let better = nd < dist[v] || (nd == dist[v] && tie.rank(u) < tie.rank(pred[v].0));
            if better {
                let improved = nd < dist[v];
                dist[v] = nd;
                pred[v] = (u, e);
                if improved {
                    heap.push(Label {
                        dist: nd,
                        rank: tie.rank(v),
                        node: v,
                    });
                }
            }
        }
    }
    (dist, pred)
}

/// Edge traversal costs `ℓ_e · ξ_e`.
pub fn edge_weights(domain: &Domain, xi: &[f64]) -> Vec<f64> {
    (0..domain.edge_count()).map(|e| domain.edge_cost(e, xi)).collect()
}

/// Exact shortest-path costs from every source to every node.
pub fn shortest_costs(domain: &Domain, xi: &[f64], sources: &[usize]) -> Result<CostTable> {
    shortest_costs_with(domain, xi, sources, None, &TieBreak::by_id(domain.node_count()))
}

/// Like [`shortest_costs`]; with `targets` set, each search stops once all
/// targets are settled (costs of other nodes may then be upper bounds).
pub fn shortest_costs_with(
    domain: &Domain,
    xi: &[f64],
    sources: &[usize],
    targets: Option<&[usize]>,
    tie: &TieBreak,
) -> Result<CostTable> {
    check_metric(domain, xi)?;
    if let Some(&bad) = sources
        .iter()
        .chain(targets.unwrap_or(&[]))
        .find(|&&s| s >= domain.node_count())
    {
        return Err(Error::UnreachableNode(bad));
    }
    let weights = edge_weights(domain, xi);
    let rows: Vec<_> = sources
        .par_iter()
        .map(|&s| dijkstra(domain, &weights, s, targets, tie))
        .collect();
    let mut dist = Vec::with_capacity(rows.len());
    let mut pred = Vec::with_capacity(rows.len());
    for (d, p) in rows {
        let check: Box<dyn Iterator<Item = &usize>> = match targets {
            Some(t) => Box::new(t.iter()),
            None => Box::new([].iter()),
        };
        for &t in check {
            if !d[t].is_finite() {
                return Err(Error::UnreachableNode(t));
            }
        }
        if targets.is_none() {
            if let Some(bad) = d.iter().position(|x| !x.is_finite()) {
                return Err(Error::UnreachableNode(bad));
            }
        }
        dist.push(d);
        pred.push(p);
    }
    Ok(CostTable {
        sources: sources.to_vec(),
        dist,
        pred,
    })
}

/// Geodesic realizing `table.cost(source, target)`.
pub fn extract_geodesic(table: &CostTable, source: usize, target: usize) -> Result<GridPath> {
    let row = table.row(source).ok_or(Error::UnreachableNode(source))?;
    let pred = &table.pred[row];
    if !table.dist[row].get(target).is_some_and(|d| d.is_finite()) {
        return Err(Error::UnreachableNode(target));
    }
    let mut nodes = vec![target];
    let mut edges = Vec::new();
    let mut cur = target;
    while cur != source {
        let (p, e) = pred[cur];
        if p == NONE {
            return Err(Error::UnreachableNode(target));
        }
        nodes.push(p);
        edges.push(e);
        cur = p;
    }
    nodes.reverse();
    edges.reverse();
    Ok(GridPath::from_parts(nodes, edges))
}

/// Empirical Hölder ratio of the congested cost,
/// `max |c(x,y1) - c(x,y2)| / (‖ξ‖_{q*} · |y1-y2|^α)` with `α = 1 - 2/q*`,
/// over `samples` random triples. Data only; the constant is unknown.
pub fn holder_diagnostic(domain: &Domain, xi: &[f64], q: f64, samples: usize, seed: u64) -> Result<f64> {
    let n = domain.node_count();
    if n < 2 || samples == 0 {
        return Ok(0.0);
    }
    let q_star = q / (q - 1.0);
    let alpha = 1.0 - 2.0 / q_star;
    let norm = (0..domain.element_count())
        .map(|k| domain.element_area(k) * xi[k].powf(q_star))
        .sum::<f64>()
        .powf(1.0 / q_star);
    if norm == 0.0 {
        return Ok(0.0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let triples: Vec<(usize, usize, usize)> = (0..samples)
        .map(|_| (rng.random_range(0..n), rng.random_range(0..n), rng.random_range(0..n)))
        .filter(|t| t.1 != t.2)
        .collect();
    let sources: Vec<usize> = {
        let mut s: Vec<usize> = triples.iter().map(|t| t.0).collect();
        s.sort_unstable();
        s.dedup();
        s
    };
    let table = shortest_costs(domain, xi, &sources)?;
    let mut worst: f64 = 0.0;
    for (x, y1, y2) in triples {
        let c = table.costs_from(x).unwrap();
        let sep = domain.node(y1).dist(domain.node(y2));
        worst = worst.max((c[y1] - c[y2]).abs() / (norm * sep.powf(alpha)));
    }
    log::info!("holder diagnostic: alpha={alpha:.3} max ratio={worst:.4e}");
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{CongestionSupport, Edge, Point, Rect};
    use crate::flow::l_xi;

    fn square(res: usize) -> Domain {
        Domain::grid(Rect::unit(), res, |_| true).unwrap()
    }

    /// Exhaustive search over simple paths; independent of the heap.
    fn brute_min(domain: &Domain, xi: &[f64], s: usize, t: usize) -> f64 {
        fn rec(d: &Domain, xi: &[f64], u: usize, t: usize, seen: &mut Vec<bool>, acc: f64, best: &mut f64) {
            if acc >= *best {
                return;
            }
            if u == t {
                *best = acc;
                return;
            }
            for &(v, e) in d.neighbors(u) {
                if !seen[v] {
                    seen[v] = true;
                    rec(d, xi, v, t, seen, acc + d.edge_cost(e, xi), best);
                    seen[v] = false;
                }
            }
        }
        let mut seen = vec![false; domain.node_count()];
        seen[s] = true;
        let mut best = f64::INFINITY;
        rec(domain, xi, s, t, &mut seen, 0.0, &mut best);
        best
    }

    #[test]
    fn uniform_metric_costs() {
        let d = square(4);
        let t = shortest_costs(&d, &[1.0; 16], &[0]).unwrap();
        assert_eq!(t.cost(0, 1).unwrap(), 0.25);
        assert_eq!(t.cost(0, 0).unwrap(), 0.0);
        let t0 = shortest_costs(&d, &[0.0; 16], &[0, 5]).unwrap();
        assert!(t0.costs_from(5).unwrap().iter().all(|&c| c == 0.0));
    }

    #[test]
    fn line_example() {
        let pts = vec![Point::new(0.0, 0.0), Point::new(1.0, 0.0), Point::new(2.0, 0.0)];
        let edges = vec![
            Edge { u: 0, v: 1, length: 1.0, width: 1.0 },
            Edge { u: 1, v: 2, length: 1.0, width: 1.0 },
        ];
        let d = Domain::network(pts, edges, CongestionSupport::Nodes, None).unwrap();
        let xi = [1.0, 3.0, 5.0];
        let t = shortest_costs(&d, &xi, &[0]).unwrap();
        assert_eq!(t.cost(0, 2).unwrap(), 6.0);
        let g = extract_geodesic(&t, 0, 2).unwrap();
        assert_eq!(g.nodes(), &[0, 1, 2]);
        assert_eq!(l_xi(&d, &g, &xi).unwrap(), 6.0);
    }

    #[test]
    fn trivial_geodesic() {
        let d = square(4);
        let t = shortest_costs(&d, &[1.0; 16], &[6]).unwrap();
        let g = extract_geodesic(&t, 6, 6).unwrap();
        assert_eq!(g.nodes(), &[6]);
        assert_eq!(g.cost(&d, &[1.0; 16]), 0.0);
    }

    #[test]
    fn corner_to_corner_matches_exhaustive_search() {
        let d = square(4);
        let xi = vec![1.0; 16];
        let t = shortest_costs(&d, &xi, &[0]).unwrap();
        let g = extract_geodesic(&t, 0, 15).unwrap();
        let brute = brute_min(&d, &xi, 0, 15);
        assert!((t.cost(0, 15).unwrap() - brute).abs() < 1e-12);
        assert_eq!(g.cost(&d, &xi), t.cost(0, 15).unwrap());
        // 3 diagonal steps
        assert!((brute - 3.0 * 0.25 * std::f64::consts::SQRT_2).abs() < 1e-12);
    }

    #[test]
    fn geodesic_threads_the_gap() {
        // column i = 2 is expensive except at row 4
        let d = square(6);
        let lat = d.lattice().unwrap();
        let mut xi = vec![1.0; d.node_count()];
        for j in 0..6 {
            if j != 4 {
                xi[lat.node_of_cell(2, j).unwrap()] = 1e4;
            }
        }
        let (s, t) = (lat.node_of_cell(0, 0).unwrap(), lat.node_of_cell(5, 0).unwrap());
        let table = shortest_costs(&d, &xi, &[s]).unwrap();
        let g = extract_geodesic(&table, s, t).unwrap();
        assert!(g.nodes().contains(&lat.node_of_cell(2, 4).unwrap()));
        assert!((table.cost(s, t).unwrap() - brute_min(&d, &xi, s, t)).abs() < 1e-9);
        assert_eq!(g.cost(&d, &xi), table.cost(s, t).unwrap());
    }

    #[test]
    fn rejects_negative_metric() {
        let d = square(2);
        assert!(matches!(
            shortest_costs(&d, &[1.0, -1.0, 1.0, 1.0], &[0]),
            Err(Error::NegativeMetric(_))
        ));
    }

    #[test]
    fn early_stop_keeps_target_costs() {
        let d = square(8);
        let xi: Vec<f64> = (0..64).map(|k| 0.5 + (k % 7) as f64).collect();
        let full = shortest_costs(&d, &xi, &[3, 40]).unwrap();
        let part = shortest_costs_with(&d, &xi, &[3, 40], Some(&[10, 63]), &TieBreak::by_id(64)).unwrap();
        for s in [3, 40] {
            for t in [10, 63] {
                assert_eq!(full.cost(s, t), part.cost(s, t));
                assert_eq!(
                    extract_geodesic(&full, s, t).unwrap(),
                    extract_geodesic(&part, s, t).unwrap()
                );
            }
        }
    }

    #[test]
    fn seeded_ties_change_paths_not_costs() {
        let d = square(8);
        let xi = vec![1.0; 64];
        let a = shortest_costs_with(&d, &xi, &[0], None, &TieBreak::seeded(64, 1)).unwrap();
        let b = shortest_costs_with(&d, &xi, &[0], None, &TieBreak::seeded(64, 2)).unwrap();
        assert_eq!(a.costs_from(0), b.costs_from(0));
        for t in 0..64 {
            assert_eq!(extract_geodesic(&a, 0, t).unwrap().cost(&d, &xi), a.cost(0, t).unwrap());
        }
    }

    #[test]
    fn holder_ratio_is_finite() {
        let d = square(8);
        let xi: Vec<f64> = (0..64).map(|k| 0.1 + (k % 5) as f64).collect();
        let r = holder_diagnostic(&d, &xi, 1.5, 50, 7).unwrap();
        assert!(r.is_finite() && r > 0.0);
    }
}
