//! Exact discrete Monge-Kantorovich solver.
//!
//! Successive shortest augmenting paths on the bipartite support graph with
//! node potentials. The potentials are kept feasible throughout, so at
//! termination they certify optimality: `u(x) + v(y) ≤ c(x, y)` everywhere,
//! with equality on the support of the plan.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::measures::{check_balanced, DiscreteMeasure, PlanEntry, TransportPlan};

/// Atoms lighter than this are dropped before solving.
pub const SUPPORT_TRUNCATION: f64 = 1e-12;

/// Dense cost block over `sources × targets`.
#[derive(Debug, Clone)]
pub struct CostMatrix {
    sources: Vec<usize>,
    targets: Vec<usize>,
    values: Vec<f64>,
}

impl CostMatrix {
    pub fn from_fn<F>(sources: &[usize], targets: &[usize], mut cost: F) -> Self
    where
        F: FnMut(usize, usize) -> f64,
    {
        let mut values = Vec::with_capacity(sources.len() * targets.len());
        for &s in sources {
            for &t in targets {
                values.push(cost(s, t));
            }
        }
        Self {
            sources: sources.to_vec(),
            targets: targets.to_vec(),
            values,
        }
    }

    pub fn sources(&self) -> &[usize] {
        &self.sources
    }

    pub fn targets(&self) -> &[usize] {
        &self.targets
    }

    pub fn get(&self, source: usize, target: usize) -> Option<f64> {
        let i = self.sources.iter().position(|&s| s == source)?;
        let j = self.targets.iter().position(|&t| t == target)?;
        Some(self.values[i * self.targets.len() + j])
    }

    /// `Σ c·γ` for a plan supported inside the block.
    pub fn plan_cost(&self, plan: &TransportPlan) -> Result<f64> {
        plan.entries()
            .iter()
            .map(|e| {
                self.get(e.source, e.target)
                    .map(|c| c * e.mass)
                    .ok_or(Error::InfiniteCost {
                        source_node: e.source,
                        target: e.target,
                    })
            })
            .sum()
    }
}

#[derive(Debug, Clone)]
pub struct MkSolution {
    pub plan: TransportPlan,
    pub value: f64,
    /// Source potentials `u`, aligned with `sources`.
    pub u: Vec<f64>,
    /// Target potentials `v`, aligned with `targets`.
    pub v: Vec<f64>,
    pub sources: Vec<usize>,
    pub targets: Vec<usize>,
}

impl MkSolution {
    /// `Σ u·μ0 + Σ v·μ1`
    pub fn dual_value(&self, mu0: &DiscreteMeasure, mu1: &DiscreteMeasure) -> f64 {
        let a: f64 = self.sources.iter().zip(&self.u).map(|(&s, u)| u * mu0.get(s)).sum();
        let b: f64 = self.targets.iter().zip(&self.v).map(|(&t, v)| v * mu1.get(t)).sum();
        a + b
    }
}

pub fn solve_mk(costs: &CostMatrix, mu0: &DiscreteMeasure, mu1: &DiscreteMeasure) -> Result<MkSolution> {
    solve_mk_with(costs, mu0, mu1, None)
}

/// `order_seed` permutes the processing order of the supports, which only
/// affects the choice among optimal plans.
pub fn solve_mk_with(
    costs: &CostMatrix,
    mu0: &DiscreteMeasure,
    mu1: &DiscreteMeasure,
    order_seed: Option<u64>,
) -> Result<MkSolution> {
    check_balanced(mu0, mu1)?;
    let mu0 = mu0.truncated(SUPPORT_TRUNCATION);
    let mu1 = mu1.truncated(SUPPORT_TRUNCATION);
    let mut sources = mu0.support();
    let mut targets = mu1.support();
    if let Some(seed) = order_seed {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        sources.shuffle(&mut rng);
        targets.shuffle(&mut rng);
    }
    let (n, m) = (sources.len(), targets.len());

    let row: Vec<usize> = sources
        .iter()
        .map(|s| costs.sources.iter().position(|x| x == s))
        .collect::<Option<_>>()
        .ok_or_else(|| Error::InconsistentMarginals("source outside the cost block".into()))?;
    let col: Vec<usize> = targets
        .iter()
        .map(|t| costs.targets.iter().position(|x| x == t))
        .collect::<Option<_>>()
        .ok_or_else(|| Error::InconsistentMarginals("target outside the cost block".into()))?;
    let width = costs.targets.len();
    let mut c = vec![0.0; n * m];
    for i in 0..n {
        for j in 0..m {
            let v = costs.values[row[i] * width + col[j]];
            if !v.is_finite() {
                return Err(Error::InfiniteCost {
                    source_node: sources[i],
                    target: targets[j],
                });
            }
            c[i * m + j] = v;
        }
    }

    let total = mu0.total();
    let scale = total / mu1.total();
    let mut supply: Vec<f64> = sources.iter().map(|&s| mu0.get(s)).collect();
    let mut demand: Vec<f64> = targets.iter().map(|&t| mu1.get(t) * scale).collect();
    let eps = 1e-14 * total;

    let (x, pi) = augment(&c, n, m, &mut supply, &mut demand, eps);

    let mut entries = Vec::new();
    let mut value = 0.0;
    for i in 0..n {
        for j in 0..m {
            let mass = x[i * m + j];
            if mass > 0.0 {
                entries.push(PlanEntry {
                    source: sources[i],
                    target: targets[j],
                    mass,
                });
                value += mass * c[i * m + j];
            }
        }
    }
    entries.sort_by_key(|e| (e.source, e.target));
    Ok(MkSolution {
        plan: TransportPlan::new(entries)?,
        value,
        u: pi[..n].iter().map(|p| -p).collect(),
        v: pi[n..].to_vec(),
        sources,
        targets,
    })
}

/// Runs the augmentations; returns the dense flow and the potentials
/// (sources first, then targets).
fn augment(c: &[f64], n: usize, m: usize, supply: &mut [f64], demand: &mut [f64], eps: f64) -> (Vec<f64>, Vec<f64>) {
    let nodes = n + m;
    let mut x = vec![0.0; n * m];
    let mut pi = vec![0.0; nodes];
    for j in 0..m {
        pi[n + j] = (0..n).map(|i| c[i * m + j]).fold(f64::INFINITY, f64::min);
    }
    let reduced = |pi: &[f64], i: usize, j: usize| c[i * m + j] + pi[i] - pi[n + j];

    let mut dist = vec![0.0; nodes];
    let mut parent = vec![usize::MAX; nodes];
    let mut done = vec![false; nodes];
    loop {
        if supply.iter().all(|&s| s <= eps) || demand.iter().all(|&d| d <= eps) {
            break;
        }
        for k in 0..nodes {
            dist[k] = if k < n && supply[k] > eps { 0.0 } else { f64::INFINITY };
            parent[k] = usize::MAX;
            done[k] = false;
        }
        let sink = loop {
            let mut best = usize::MAX;
            for k in 0..nodes {
                if !done[k] && dist[k].is_finite() && (best == usize::MAX || dist[k] < dist[best]) {
                    best = k;
                }
            }
            // every target is reachable from any source with supply
            debug_assert!(best != usize::MAX);
            if best == usize::MAX {
                return (x, pi);
            }
            done[best] = true;
            if best >= n && demand[best - n] > eps {
                break best;
            }
            let d = dist[best];
            if best < n {
                let i = best;
                for j in 0..m {
                    let k = n + j;
                    if !done[k] {
                        let nd = d + reduced(&pi, i, j).max(0.0);
                        if nd < dist[k] {
                            dist[k] = nd;
                            parent[k] = i;
                        }
                    }
                }
            } else {
                let j = best - n;
                for i in 0..n {
                    if !done[i] && x[i * m + j] > 0.0 {
                        let nd = d + (-reduced(&pi, i, j)).max(0.0);
                        if nd < dist[i] {
                            dist[i] = nd;
                            parent[i] = best;
                        }
                    }
                }
            }
        };
        let cap = dist[sink];
        for k in 0..nodes {
            pi[k] += dist[k].min(cap);
        }

        // bottleneck along the path sink <- ... <- root source
        let mut amount = demand[sink - n];
        let mut k = sink;
        while parent[k] != usize::MAX {
            let p = parent[k];
            if p >= n {
                // reverse arc target p -> source k
                amount = amount.min(x[k * m + (p - n)]);
            }
            k = p;
        }
        let root = k;
        amount = amount.min(supply[root]);

        let mut k = sink;
        while parent[k] != usize::MAX {
            let p = parent[k];
            if p < n {
                x[p * m + (k - n)] += amount;
            } else {
                let idx = k * m + (p - n);
                x[idx] -= amount;
                if x[idx] <= eps {
                    x[idx] = 0.0;
                }
            }
            k = p;
        }
        supply[root] -= amount;
        if supply[root] <= eps {
            supply[root] = 0.0;
        }
        demand[sink - n] -= amount;
        if demand[sink - n] <= eps {
            demand[sink - n] = 0.0;
        }
    }
    (x, pi)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn measure(pairs: &[(usize, f64)]) -> DiscreteMeasure {
        DiscreteMeasure::new(pairs.iter().copied()).unwrap()
    }

    #[test]
    fn forced_plan() {
        let c = CostMatrix::from_fn(&[0], &[7], |_, _| 2.5);
        let sol = solve_mk(&c, &DiscreteMeasure::dirac(0), &DiscreteMeasure::dirac(7)).unwrap();
        assert_eq!(sol.plan.entries(), &[PlanEntry { source: 0, target: 7, mass: 1.0 }]);
        assert_eq!(sol.value, 2.5);
    }

    #[test]
    fn zero_cost_matching() {
        let c = CostMatrix::from_fn(&[0, 1], &[2, 3], |s, t| if s + 2 == t { 0.0 } else { 1.0 });
        let mu0 = measure(&[(0, 0.5), (1, 0.5)]);
        let mu1 = measure(&[(2, 0.5), (3, 0.5)]);
        let sol = solve_mk(&c, &mu0, &mu1).unwrap();
        assert_eq!(sol.value, 0.0);
        assert_eq!(sol.plan.entries().len(), 2);
        assert!(sol.plan.entries().iter().all(|e| e.source + 2 == e.target));
    }

    #[test]
    fn unbalanced_and_infinite() {
        let c = CostMatrix::from_fn(&[0], &[1], |_, _| 1.0);
        assert!(matches!(
            solve_mk(&c, &measure(&[(0, 1.0)]), &measure(&[(1, 2.0)])),
            Err(Error::UnbalancedMarginals { .. })
        ));
        let c = CostMatrix::from_fn(&[0], &[1], |_, _| f64::INFINITY);
        assert!(matches!(
            solve_mk(&c, &measure(&[(0, 1.0)]), &measure(&[(1, 1.0)])),
            Err(Error::InfiniteCost { .. })
        ));
    }

    #[test]
    fn tiny_atoms_are_truncated() {
        let c = CostMatrix::from_fn(&[0, 1], &[2], |_, _| 1.0);
        let mu0 = measure(&[(0, 1.0), (1, 1e-13)]);
        let sol = solve_mk(&c, &mu0, &measure(&[(2, 1.0)])).unwrap();
        assert_eq!(sol.plan.entries().len(), 1);
    }
}
