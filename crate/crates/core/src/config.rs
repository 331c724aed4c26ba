//! Run configuration: TOML or JSON, one section per concern.
//!
//! ```toml
//! [domain]
//! kind = "grid"
//! bounds = [0.0, 0.0, 1.0, 1.0]
//! resolution = 64
//!
//! [mu0]
//! kind = "segment"
//! from = [0.0, 0.0]
//! to = [0.0, 1.0]
//!
//! [congestion]
//! q = 1.5
//! c0 = 0.05
//! ```
//!
//! Relative file paths are resolved against the directory of the config
//! file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::congestion::{CongestionModel, Mode};
use crate::domain::{CongestionSupport, Domain, Edge, Point, Rect};
use crate::error::{Error, Result};
use crate::formats;
use crate::measures::{gaussian_measure, point_measure, segment_measure, uniform_measure, DiscreteMeasure};
use crate::solver::{Problem, SolverConfig};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub domain: DomainSpec,
    pub mu0: MeasureSpec,
    pub mu1: MeasureSpec,
    pub congestion: CongestionSpec,
    #[serde(default)]
    pub solver: SolverConfig,
    /// Plan CSV; when present the plan is held fixed.
    #[serde(default)]
    pub fixed_plan: Option<PathBuf>,
    #[serde(default)]
    pub output: OutputSpec,
    #[serde(default)]
    pub check: CheckSpec,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DomainSpec {
    Grid {
        /// `[x0, y0, x1, y1]`
        bounds: [f64; 4],
        /// Cells along the shorter side.
        resolution: usize,
        #[serde(default)]
        mask: Option<MaskSpec>,
    },
    Network {
        nodes: Vec<[f64; 2]>,
        edges: Vec<EdgeSpec>,
        #[serde(default = "default_support")]
        support: CongestionSupport,
        #[serde(default)]
        node_area: Option<Vec<f64>>,
    },
}

fn default_support() -> CongestionSupport {
    CongestionSupport::Edges
}

/// Region of active cells, tested at cell centers.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum MaskSpec {
    Rectangle { min: [f64; 2], max: [f64; 2] },
    Polygon { vertices: Vec<[f64; 2]> },
}

impl MaskSpec {
    pub fn contains(&self, p: Point) -> bool {
        match self {
            MaskSpec::Rectangle { min, max } => p.x >= min[0] && p.x <= max[0] && p.y >= min[1] && p.y <= max[1],
            MaskSpec::Polygon { vertices } => {
                // even-odd rule
                let mut inside = false;
                let n = vertices.len();
                for i in 0..n {
                    let [xi, yi] = vertices[i];
                    let [xj, yj] = vertices[(i + n - 1) % n];
                    if (yi > p.y) != (yj > p.y) && p.x < (xj - xi) * (p.y - yi) / (yj - yi) + xi {
                        inside = !inside;
                    }
                }
                inside
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeSpec {
    pub u: usize,
    pub v: usize,
    /// Defaults to the euclidean distance between the endpoints.
    #[serde(default)]
    pub length: Option<f64>,
    #[serde(default = "one")]
    pub width: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum MeasureSpec {
    Segment { from: [f64; 2], to: [f64; 2] },
    Uniform,
    Gaussian { center: [f64; 2], sigma: f64 },
    /// `[x, y, mass]` atoms snapped to the nearest node.
    Points { atoms: Vec<[f64; 3]> },
    /// `[node id, mass]` atoms.
    Nodes { atoms: Vec<(usize, f64)> },
    /// `node_x,node_y,mass` file.
    Csv { path: PathBuf },
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CongestionSpec {
    pub q: f64,
    #[serde(default = "one")]
    pub a: f64,
    #[serde(default = "default_c0")]
    pub c0: f64,
    #[serde(default = "default_mode")]
    pub mode: Mode,
}

fn default_c0() -> f64 {
    0.05
}

fn default_mode() -> Mode {
    Mode::Equilibrium
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSpec {
    pub dir: PathBuf,
    /// Cell densities (grids only).
    pub intensity: bool,
    /// Edge flows.
    pub flows: bool,
    pub paths: bool,
    pub svg: bool,
    /// Shortest costs from every source atom under the final metric.
    pub cost_table: bool,
    pub measures: bool,
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            intensity: true,
            flows: true,
            paths: true,
            svg: true,
            cost_table: false,
            measures: false,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CheckSpec {
    /// Both gaps must be at most this for `check` to pass.
    pub tol: f64,
}

impl Default for CheckSpec {
    fn default() -> Self {
        Self { tol: 1e-2 }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = if path.extension().is_some_and(|e| e == "json") {
            Self::from_json(&text)?
        } else {
            Self::from_toml(&text)?
        };
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let c = &self.congestion;
        if !(c.q > 1.0) {
            return Err(Error::Config("congestion.q: q must exceed 1".into()));
        }
        if !(c.a > 0.0) {
            return Err(Error::Config("congestion.a: a must be positive".into()));
        }
        if !(c.c0 >= 0.0) {
            return Err(Error::Config("congestion.c0: c0 must be nonnegative".into()));
        }
        if let DomainSpec::Grid { resolution, bounds, .. } = &self.domain {
            if *resolution < 2 {
                return Err(Error::Config("domain.resolution: resolution must be at least 2".into()));
            }
            if !(bounds[2] > bounds[0] && bounds[3] > bounds[1]) {
                return Err(Error::Config("domain.bounds: expected [x0, y0, x1, y1] with x0 < x1, y0 < y1".into()));
            }
        }
        for (key, m) in [("mu0", &self.mu0), ("mu1", &self.mu1)] {
            if let MeasureSpec::Gaussian { sigma, .. } = m {
                if !(*sigma > 0.0) {
                    return Err(Error::Config(format!("{key}.sigma: sigma must be positive")));
                }
            }
        }
        self.solver.validate()
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.output.dir)
    }

    pub fn build_domain(&self) -> Result<Domain> {
        match &self.domain {
            DomainSpec::Grid {
                bounds,
                resolution,
                mask,
            } => {
                let rect = Rect::new(bounds[0], bounds[1], bounds[2], bounds[3]);
                Domain::grid(rect, *resolution, |p| mask.as_ref().is_none_or(|m| m.contains(p)))
            }
            DomainSpec::Network {
                nodes,
                edges,
                support,
                node_area,
            } => {
                let pts: Vec<Point> = nodes.iter().map(|&[x, y]| Point::new(x, y)).collect();
                let edges = edges
                    .iter()
                    .map(|e| {
                        let (a, b) = (pts.get(e.u), pts.get(e.v));
                        let length = match (e.length, a, b) {
                            (Some(l), _, _) => l,
                            (None, Some(a), Some(b)) => a.dist(*b),
                            _ => f64::NAN,
                        };
                        Edge {
                            u: e.u,
                            v: e.v,
                            length,
                            width: e.width,
                        }
                    })
                    .collect();
                Domain::network(pts, edges, *support, node_area.clone())
            }
        }
    }

    fn build_measure(&self, key: &str, spec: &MeasureSpec, domain: &Domain) -> Result<DiscreteMeasure> {
        let raw = match spec {
            MeasureSpec::Segment { from, to } => {
                segment_measure(domain, Point::new(from[0], from[1]), Point::new(to[0], to[1]))
            }
            MeasureSpec::Uniform => uniform_measure(domain),
            MeasureSpec::Gaussian { center, sigma } => gaussian_measure(domain, Point::new(center[0], center[1]), *sigma),
            MeasureSpec::Points { atoms } => {
                let atoms: Vec<(Point, f64)> = atoms.iter().map(|&[x, y, m]| (Point::new(x, y), m)).collect();
                point_measure(domain, &atoms)
            }
            MeasureSpec::Nodes { atoms } => {
                if let Some(&(bad, _)) = atoms.iter().find(|(n, _)| *n >= domain.node_count()) {
                    return Err(Error::Config(format!("{key}.atoms: node {bad} does not exist")));
                }
                DiscreteMeasure::new(atoms.iter().copied())
            }
            MeasureSpec::Csv { path } => formats::read_measure(&self.resolve(path), domain),
        };
        raw.and_then(|m| m.normalize())
            .map_err(|e| Error::Config(format!("{key}: {e}")))
    }

    /// Builds the problem; marginals are normalized to probabilities.
    pub fn build(&self) -> Result<Problem> {
        let domain = self.build_domain()?;
        let mu0 = self.build_measure("mu0", &self.mu0, &domain)?;
        let mu1 = self.build_measure("mu1", &self.mu1, &domain)?;
        let c = self.congestion;
        let model = CongestionModel::new(c.q, c.a, c.c0, c.mode)?;
        let fixed_plan = match &self.fixed_plan {
            Some(path) => Some(formats::read_plan(&self.resolve(path), &domain)?),
            None => None,
        };
        Problem::new(domain, mu0, mu1, model, fixed_plan)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SQUARE: &str = r#"
[domain]
kind = "grid"
bounds = [0.0, 0.0, 1.0, 1.0]
resolution = 8

[mu0]
kind = "segment"
from = [0.0, 0.0]
to = [0.0, 1.0]

[mu1]
kind = "segment"
from = [1.0, 0.0]
to = [1.0, 1.0]

[congestion]
q = 1.5
"#;

    #[test]
    fn parses_defaults() {
        let cfg = RunConfig::from_toml(SQUARE).unwrap();
        assert_eq!(cfg.congestion.c0, 0.05);
        assert_eq!(cfg.congestion.mode, Mode::Equilibrium);
        assert_eq!(cfg.check.tol, 1e-2);
        assert_eq!(cfg.solver.max_iters, SolverConfig::default().max_iters);
        let p = cfg.build().unwrap();
        assert_eq!(p.domain.node_count(), 64);
        assert_eq!(p.mu0.len(), 8);
        assert!((p.mu1.total() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn q_must_exceed_one() {
        let text = SQUARE.replace("q = 1.5", "q = 1.0");
        let err = RunConfig::from_toml(&text).unwrap_err();
        assert!(err.to_string().contains("q must exceed 1"), "{err}");
    }

    #[test]
    fn unknown_keys_are_named() {
        let text = SQUARE.replace("q = 1.5", "q = 1.5\nbeta = 2");
        let err = RunConfig::from_toml(&text).unwrap_err();
        assert!(err.to_string().contains("beta"), "{err}");
        let text = SQUARE.replace("resolution = 8", "resolution = 1");
        let err = RunConfig::from_toml(&text).unwrap_err();
        assert!(err.to_string().contains("domain.resolution"), "{err}");
    }

    #[test]
    fn json_is_accepted() {
        let cfg = RunConfig::from_toml(SQUARE).unwrap();
        let json = serde_json::to_string(&cfg).unwrap();
        let back = RunConfig::from_json(&json).unwrap();
        assert_eq!(back.build().unwrap().domain.node_count(), 64);
    }

    #[test]
    fn masks() {
        let r = MaskSpec::Rectangle {
            min: [0.0, 0.0],
            max: [1.0, 1.0],
        };
        assert!(r.contains(Point::new(0.5, 0.5)) && !r.contains(Point::new(1.5, 0.5)));
        let tri = MaskSpec::Polygon {
            vertices: vec![[0.0, 0.0], [2.0, 0.0], [0.0, 2.0]],
        };
        assert!(tri.contains(Point::new(0.5, 0.5)));
        assert!(!tri.contains(Point::new(1.5, 1.5)));
    }

    #[test]
    fn network_lengths_default_to_distance() {
        let text = r#"
[domain]
kind = "network"
nodes = [[0.0, 0.0], [3.0, 4.0]]
edges = [{ u = 0, v = 1 }]

[mu0]
kind = "nodes"
atoms = [[0, 1.0]]

[mu1]
kind = "nodes"
atoms = [[1, 2.0]]

[congestion]
q = 1.5
"#;
        let p = RunConfig::from_toml(text).unwrap().build().unwrap();
        assert_eq!(p.domain.edge(0).length, 5.0);
        assert_eq!(p.mu1.get(1), 1.0);
    }
}
