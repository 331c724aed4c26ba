//! Node-supported measures and transport plans.

use std::collections::{BTreeMap, HashSet};

use crate::domain::{Domain, Point};
use crate::error::{Error, Result};

/// Relative mass tolerance for marginal and balance checks.
pub const BALANCE_TOL: f64 = 1e-9;

/// Nonnegative masses on domain nodes.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DiscreteMeasure {
    weights: BTreeMap<usize, f64>,
}

impl DiscreteMeasure {
    /// Builds a measure, summing repeated node ids and dropping zero masses.
    pub fn new<I>(weights: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, f64)>,
    {
        let mut map = BTreeMap::new();
        for (node, m) in weights {
            if !m.is_finite() || m < 0.0 {
                return Err(Error::NegativeDensity(m));
            }
            if m > 0.0 {
                *map.entry(node).or_insert(0.0) += m;
            }
        }
        Ok(Self { weights: map })
    }

    pub fn dirac(node: usize) -> Self {
        Self {
            weights: BTreeMap::from([(node, 1.0)]),
        }
    }

    pub fn total(&self) -> f64 {
        self.weights.values().sum()
    }

    pub fn get(&self, node: usize) -> f64 {
        self.weights.get(&node).copied().unwrap_or(0.0)
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.weights.iter().map(|(&k, &v)| (k, v))
    }

    pub fn support(&self) -> Vec<usize> {
        self.weights.keys().copied().collect()
    }

    pub fn normalize(&self) -> Result<Self> {
        let total = self.total();
        if !(total > 0.0) {
            return Err(Error::ZeroMass);
        }
        Ok(Self {
            weights: self.weights.iter().map(|(&k, &v)| (k, v / total)).collect(),
        })
    }

    /// Drops atoms lighter than `min_mass`.
    pub fn truncated(&self, min_mass: f64) -> Self {
        Self {
            weights: self
                .weights
                .iter()
                .filter(|(_, &v)| v >= min_mass)
                .map(|(&k, &v)| (k, v))
                .collect(),
        }
    }

    /// Largest per-node mass difference relative to the larger total.
    pub fn relative_distance(&self, other: &Self) -> f64 {
        let scale = self.total().max(other.total()).max(f64::MIN_POSITIVE);
        let keys: HashSet<usize> = self.weights.keys().chain(other.weights.keys()).copied().collect();
        keys.into_iter()
            .map(|k| (self.get(k) - other.get(k)).abs())
            .fold(0.0, f64::max)
            / scale
    }
}

/// Fails unless the two totals agree within [`BALANCE_TOL`].
pub fn check_balanced(mu0: &DiscreteMeasure, mu1: &DiscreteMeasure) -> Result<()> {
    let (left, right) = (mu0.total(), mu1.total());
    if (left - right).abs() > BALANCE_TOL * left.max(right) || !(left > 0.0) {
        return Err(Error::UnbalancedMarginals { left, right });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanEntry {
    pub source: usize,
    pub target: usize,
    pub mass: f64,
}

/// A coupling between two node measures.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TransportPlan {
    entries: Vec<PlanEntry>,
}

impl TransportPlan {
    pub fn new(entries: Vec<PlanEntry>) -> Result<Self> {
        let mut keys = HashSet::with_capacity(entries.len());
        for e in &entries {
            if !(e.mass > 0.0) || !e.mass.is_finite() {
                return Err(Error::InconsistentMarginals(format!(
                    "plan entry ({}, {}) has non-positive mass {}",
                    e.source, e.target, e.mass
                )));
            }
            if !keys.insert((e.source, e.target)) {
                return Err(Error::InconsistentMarginals(format!(
                    "duplicate plan entry ({}, {})",
                    e.source, e.target
                )));
            }
        }
        Ok(Self { entries })
    }

    /// `(id, id)♯μ`
    pub fn diagonal(mu: &DiscreteMeasure) -> Self {
        Self {
            entries: mu
                .iter()
                .map(|(n, m)| PlanEntry {
                    source: n,
                    target: n,
                    mass: m,
                })
                .collect(),
        }
    }

    pub fn entries(&self) -> &[PlanEntry] {
        &self.entries
    }

    pub fn total(&self) -> f64 {
        self.entries.iter().map(|e| e.mass).sum()
    }

    pub fn marginals(&self) -> (DiscreteMeasure, DiscreteMeasure) {
        let mut left = BTreeMap::new();
        let mut right = BTreeMap::new();
        for e in &self.entries {
            *left.entry(e.source).or_insert(0.0) += e.mass;
            *right.entry(e.target).or_insert(0.0) += e.mass;
        }
        (
            DiscreteMeasure { weights: left },
            DiscreteMeasure { weights: right },
        )
    }

    /// Fails unless the plan's marginals match `mu0` and `mu1`.
    pub fn check_marginals(&self, mu0: &DiscreteMeasure, mu1: &DiscreteMeasure) -> Result<()> {
        let (left, right) = self.marginals();
        let d0 = left.relative_distance(mu0);
        let d1 = right.relative_distance(mu1);
        if d0 > BALANCE_TOL || d1 > BALANCE_TOL {
            return Err(Error::InconsistentMarginals(format!(
                "plan marginals deviate by {d0:.3e} (source) and {d1:.3e} (target)"
            )));
        }
        Ok(())
    }
}

/// Length of the part of segment `a`–`b` inside the closed rectangle.
fn clipped_length(a: Point, b: Point, lo: Point, hi: Point) -> f64 {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let (mut t0, mut t1) = (0.0_f64, 1.0_f64);
    for (p, q) in [
        (-dx, a.x - lo.x),
        (dx, hi.x - a.x),
        (-dy, a.y - lo.y),
        (dy, hi.y - a.y),
    ] {
        if p == 0.0 {
            if q < 0.0 {
                return 0.0;
            }
        } else {
            let r = q / p;
            if p < 0.0 {
                t0 = t0.max(r);
            } else {
                t1 = t1.min(r);
            }
        }
    }
    if t1 > t0 {
        (t1 - t0) * dx.hypot(dy)
    } else {
        0.0
    }
}

/// Probability measure spreading mass over the cells crossed by the
/// segment `a`–`b`, proportionally to the crossing length. A segment lying
/// on a shared cell side is split equally between both cells.
pub fn segment_measure(domain: &Domain, a: Point, b: Point) -> Result<DiscreteMeasure> {
    if a == b {
        return Ok(DiscreteMeasure::dirac(domain.node_at(a)?));
    }
    let lat = domain.lattice().ok_or_else(|| {
        Error::InvalidDomain("segment measures need a grid domain".into())
    })?;
    let h = lat.spacing;
    let origin = domain.bounds().min;
    let cell_range = |lo: f64, hi: f64, o: f64, n: usize| {
        let i0 = (((lo - o) / h).floor() as isize - 1).max(0) as usize;
        let i1 = (((hi - o) / h).floor() as isize + 1).clamp(0, n as isize - 1) as usize;
        i0..=i1
    };
    let mut weights = Vec::new();
    for j in cell_range(a.y.min(b.y), a.y.max(b.y), origin.y, lat.ny) {
        for i in cell_range(a.x.min(b.x), a.x.max(b.x), origin.x, lat.nx) {
            let Some(node) = lat.node_of_cell(i, j) else {
                continue;
            };
            let lo = Point::new(origin.x + i as f64 * h, origin.y + j as f64 * h);
            let hi = Point::new(lo.x + h, lo.y + h);
            let len = clipped_length(a, b, lo, hi);
            if len > 0.0 {
                weights.push((node, len));
            }
        }
    }
    let m = DiscreteMeasure::new(weights)?;
    if m.is_empty() {
        return Err(Error::OutsideDomain { x: a.x, y: a.y });
    }
    m.normalize()
}

/// Uniform probability over all nodes, weighted by node area.
pub fn uniform_measure(domain: &Domain) -> Result<DiscreteMeasure> {
    DiscreteMeasure::new((0..domain.node_count()).map(|n| (n, domain.node_area(n))))?.normalize()
}

/// Normalized isotropic gaussian density, integrated cell by cell.
pub fn gaussian_measure(domain: &Domain, center: Point, sigma: f64) -> Result<DiscreteMeasure> {
    if !(sigma > 0.0) {
        return Err(Error::Config("gaussian sigma must be positive".into()));
    }
    let weights = domain.nodes().iter().enumerate().map(|(n, p)| {
        let r2 = (p.x - center.x).powi(2) + (p.y - center.y).powi(2);
        (n, (-r2 / (2.0 * sigma * sigma)).exp() * domain.node_area(n))
    });
    DiscreteMeasure::new(weights)?.normalize()
}

/// Atoms snapped to their nearest nodes; masses are kept as given.
pub fn point_measure(domain: &Domain, atoms: &[(Point, f64)]) -> Result<DiscreteMeasure> {
    let weights = atoms
        .iter()
        .map(|&(p, m)| domain.node_at(p).map(|n| (n, m)))
        .collect::<Result<Vec<_>>>()?;
    DiscreteMeasure::new(weights)
}
