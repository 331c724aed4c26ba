#![allow(dead_code)]

use congest_core::{
    CongestionModel, CongestionSupport, DiscreteMeasure, Domain, Edge, FlowEntry, GridPath, Mode, PathFlow, Point, Problem,
    Rect,
};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

/// Random connected network with at most `max_nodes` nodes.
pub fn random_network(rng: &mut ChaCha8Rng, max_nodes: usize) -> Domain {
    let n = rng.random_range(4..=max_nodes);
    let pts: Vec<Point> = (0..n).map(|_| Point::new(rng.random(), rng.random())).collect();
    let mut pairs = std::collections::BTreeSet::new();
    for i in 1..n {
        pairs.insert((rng.random_range(0..i), i));
    }
    let extra = rng.random_range(1..=n);
    for _ in 0..extra {
        let u = rng.random_range(0..n);
        let v = rng.random_range(0..n);
        if u != v {
            pairs.insert((u.min(v), u.max(v)));
        }
    }
    let edges = pairs
        .into_iter()
        .map(|(u, v)| Edge {
            u,
            v,
            length: pts[u].dist(pts[v]).max(0.05) * rng.random_range(1.0..1.5),
            width: rng.random_range(0.5..2.0),
        })
        .collect();
    Domain::network(pts, edges, CongestionSupport::Edges, None).unwrap()
}

/// Small full or masked grid with at most 12 nodes.
pub fn random_grid(rng: &mut ChaCha8Rng) -> Domain {
    let (w, h) = *[(2.0, 2.0), (3.0, 2.0), (2.0, 3.0), (3.0, 3.0), (4.0, 3.0)]
        .choose(rng)
        .unwrap();
    let hole = rng.random_bool(0.5);
    let bounds = Rect::new(0.0, 0.0, w, h);
    Domain::grid(bounds, h.min(w) as usize, move |p| !(hole && p.x > 1.0 && p.x < 2.0 && p.y > 1.0 && p.y < 2.0))
        .unwrap()
}

fn random_measure(rng: &mut ChaCha8Rng, ids: &[usize]) -> DiscreteMeasure {
    DiscreteMeasure::new(ids.iter().map(|&i| (i, rng.random_range(0.2..1.0))))
        .unwrap()
        .normalize()
        .unwrap()
}

/// Instance with at most three origin-destination pairs, counted as
/// `|supp μ0| · |supp μ1|`.
pub fn random_problem(seed: u64) -> Problem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let domain = if rng.random_bool(0.5) {
        random_network(&mut rng, 12)
    } else {
        random_grid(&mut rng)
    };
    let n = domain.node_count();
    let sizes: Vec<(usize, usize)> = [(1, 1), (1, 2), (2, 1), (1, 3), (3, 1)]
        .into_iter()
        .filter(|&(a, b)| a + b <= n)
        .collect();
    let (a0, a1) = *sizes.choose(&mut rng).unwrap();
    // disjoint supports keep every instance nontrivial
    let mut ids: Vec<usize> = (0..n).collect();
    ids.shuffle(&mut rng);
    let mu0 = random_measure(&mut rng, &ids[..a0]);
    let mu1 = random_measure(&mut rng, &ids[a0..a0 + a1]);
    let mode = if rng.random_bool(0.5) { Mode::Equilibrium } else { Mode::SocialCost };
    let model = CongestionModel::new(
        rng.random_range(1.1..1.9),
        rng.random_range(0.5..2.0),
        rng.random_range(0.01..0.5),
        mode,
    )
    .unwrap();
    Problem::new(domain, mu0, mu1, model, None).unwrap()
}

/// Grid or network with up to a few dozen nodes, for property checks.
pub fn random_domain(rng: &mut ChaCha8Rng) -> Domain {
    if rng.random_bool(0.5) {
        return random_network(rng, 30);
    }
    let res = rng.random_range(2..=10);
    let wide = rng.random_range(1.0..2.0);
    let bounds = Rect::new(0.0, 0.0, wide, 1.0);
    // an optional notch cut from the top edge; retried until connected
    loop {
        let cut = rng.random_range(0.0..wide);
        let notch = rng.random_bool(0.5);
        if let Ok(d) = Domain::grid(bounds, res, move |p| !(notch && p.x < cut && p.y > 0.5)) {
            return d;
        }
    }
}

/// Metric with entries in `[0, 2)`, about one in ten of them zero.
pub fn random_xi(rng: &mut ChaCha8Rng, domain: &Domain) -> Vec<f64> {
    (0..domain.element_count())
        .map(|_| if rng.random_bool(0.1) { 0.0 } else { rng.random_range(0.0..2.0) })
        .collect()
}

/// Random walk of at most `max_len` steps.
pub fn random_walk(rng: &mut ChaCha8Rng, domain: &Domain, max_len: usize) -> GridPath {
    let mut nodes = vec![rng.random_range(0..domain.node_count())];
    for _ in 0..rng.random_range(0..=max_len) {
        let nbrs = domain.neighbors(*nodes.last().unwrap());
        if nbrs.is_empty() {
            break;
        }
        nodes.push(nbrs[rng.random_range(0..nbrs.len())].0);
    }
    GridPath::new(domain, nodes).unwrap()
}

pub fn random_flow(rng: &mut ChaCha8Rng, domain: &Domain) -> PathFlow {
    let k = rng.random_range(1..=8);
    PathFlow::new(
        (0..k)
            .map(|_| FlowEntry {
                path: random_walk(rng, domain, 25),
                mass: rng.random_range(0.01..3.0),
            })
            .collect(),
    )
    .unwrap()
}
