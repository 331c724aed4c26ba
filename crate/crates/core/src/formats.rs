//! Text artifacts. Nodes are written by coordinates and every number uses
//! the shortest decimal form that parses back to the same `f64`, so each
//! file re-reads to an identical value.
//!
//! | file        | layout                          |
//! |-------------|---------------------------------|
//! | edge flows  | `u_x,u_y,v_x,v_y,flow`          |
//! | densities   | `cell_i,cell_j,density`         |
//! | paths       | `mass; x0,y0; x1,y1; ...`       |
//! | plan        | `sx,sy,tx,ty,mass`              |
//! | measure     | `node_x,node_y,mass`            |
//! | cost table  | `source_id,node_id,cost`        |

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::domain::{Domain, Point};
use crate::error::{Error, Result};
use crate::flow::{cell_density, FlowEntry, GridPath, IntensityField, PathFlow};
use crate::geodesics::CostTable;
use crate::measures::{DiscreteMeasure, PlanEntry, TransportPlan};

/// Shortest round-trip representation.
pub fn fmt_num(x: f64) -> String {
    format!("{x:?}")
}

fn parse_num(s: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| Error::Parse(format!("not a number: {s:?}")))
}

/// Coordinate to node id: exact match first, nearest node otherwise.
pub struct NodeLookup<'a> {
    domain: &'a Domain,
    exact: HashMap<(u64, u64), usize>,
}

impl<'a> NodeLookup<'a> {
    pub fn new(domain: &'a Domain) -> Self {
        let exact = domain
            .nodes()
            .iter()
            .enumerate()
            .map(|(i, p)| ((p.x.to_bits(), p.y.to_bits()), i))
            .collect();
        Self { domain, exact }
    }

    pub fn find(&self, x: f64, y: f64) -> Result<usize> {
        match self.exact.get(&(x.to_bits(), y.to_bits())) {
            Some(&n) => Ok(n),
            None => self.domain.node_at(Point::new(x, y)),
        }
    }
}

fn writer(path: &Path, header: &[&str]) -> Result<csv::Writer<BufWriter<File>>> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    w.write_record(header)?;
    Ok(w)
}

fn records(path: &Path, header: &[&str]) -> Result<Vec<Vec<f64>>> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let found: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    if found != header {
        return Err(Error::Parse(format!(
            "{}: expected header {}, found {}",
            path.display(),
            header.join(","),
            found.join(",")
        )));
    }
    r.records()
        .map(|rec| rec?.iter().map(parse_num).collect::<Result<Vec<_>>>())
        .collect()
}

const EDGE_FLOWS: [&str; 5] = ["u_x", "u_y", "v_x", "v_y", "flow"];
const DENSITY: [&str; 3] = ["cell_i", "cell_j", "density"];
const PLAN: [&str; 5] = ["sx", "sy", "tx", "ty", "mass"];
const MEASURE: [&str; 3] = ["node_x", "node_y", "mass"];
const COSTS: [&str; 3] = ["source_id", "node_id", "cost"];

pub fn write_edge_flows(path: &Path, domain: &Domain, field: &IntensityField) -> Result<()> {
    let mut w = writer(path, &EDGE_FLOWS)?;
    for (e, &f) in domain.edges().iter().zip(&field.edge_flow) {
        let (u, v) = (domain.node(e.u), domain.node(e.v));
        w.write_record([fmt_num(u.x), fmt_num(u.y), fmt_num(v.x), fmt_num(v.y), fmt_num(f)])?;
    }
    w.flush()?;
    Ok(())
}

/// Edges missing from the file carry no flow.
pub fn read_edge_flows(path: &Path, domain: &Domain) -> Result<IntensityField> {
    let nodes = NodeLookup::new(domain);
    let mut flows = vec![0.0; domain.edge_count()];
    for r in records(path, &EDGE_FLOWS)? {
        let (u, v) = (nodes.find(r[0], r[1])?, nodes.find(r[2], r[3])?);
        let e = domain
            .edge_between(u, v)
            .ok_or_else(|| Error::Parse(format!("no edge between nodes {u} and {v}")))?;
        flows[e] = r[4];
    }
    Ok(IntensityField::from_edge_flows(domain, flows))
}

/// Grid cell densities, one row per active cell.
pub fn write_cell_density(path: &Path, domain: &Domain, field: &IntensityField) -> Result<()> {
    let lattice = domain
        .lattice()
        .ok_or_else(|| Error::InvalidDomain("cell densities need a grid domain".into()))?;
    let rho = cell_density(domain, field);
    let mut w = writer(path, &DENSITY)?;
    for (n, r) in rho.iter().enumerate() {
        let (i, j) = lattice.cell_of_node(n);
        w.write_record([i.to_string(), j.to_string(), fmt_num(*r)])?;
    }
    w.flush()?;
    Ok(())
}

/// Densities indexed by node id.
pub fn read_cell_density(path: &Path, domain: &Domain) -> Result<Vec<f64>> {
    let lattice = domain
        .lattice()
        .ok_or_else(|| Error::InvalidDomain("cell densities need a grid domain".into()))?;
    let mut rho = vec![0.0; domain.node_count()];
    for r in records(path, &DENSITY)? {
        let n = lattice
            .node_of_cell(r[0] as usize, r[1] as usize)
            .ok_or_else(|| Error::Parse(format!("cell ({}, {}) is not active", r[0], r[1])))?;
        rho[n] = r[2];
    }
    Ok(rho)
}

pub fn write_paths(path: &Path, domain: &Domain, flow: &PathFlow) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for e in flow.entries() {
        write!(w, "{}", fmt_num(e.mass))?;
        for &n in e.path.nodes() {
            let p = domain.node(n);
            write!(w, "; {},{}", fmt_num(p.x), fmt_num(p.y))?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

/// Blank lines and lines starting with `#` are ignored.
pub fn read_paths(path: &Path, domain: &Domain) -> Result<PathFlow> {
    let nodes = NodeLookup::new(domain);
    let mut entries = Vec::new();
    for (lineno, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |what: &str| Error::Parse(format!("{}:{}: {what}", path.display(), lineno + 1));
        let mut parts = line.split(';');
        let mass = parse_num(parts.next().unwrap_or_default())?;
        let seq = parts
            .map(|pt| {
                let (x, y) = pt.split_once(',').ok_or_else(|| bad("expected x,y"))?;
                nodes.find(parse_num(x)?, parse_num(y)?)
            })
            .collect::<Result<Vec<_>>>()?;
        if seq.is_empty() {
            return Err(bad("path has no nodes"));
        }
        entries.push(FlowEntry {
            path: GridPath::new(domain, seq)?,
            mass,
        });
    }
    PathFlow::new(entries)
}

pub fn write_plan(path: &Path, domain: &Domain, plan: &TransportPlan) -> Result<()> {
    let mut w = writer(path, &PLAN)?;
    for e in plan.entries() {
        let (s, t) = (domain.node(e.source), domain.node(e.target));
        w.write_record([fmt_num(s.x), fmt_num(s.y), fmt_num(t.x), fmt_num(t.y), fmt_num(e.mass)])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_plan(path: &Path, domain: &Domain) -> Result<TransportPlan> {
    let nodes = NodeLookup::new(domain);
    let entries = records(path, &PLAN)?
        .into_iter()
        .map(|r| {
            Ok(PlanEntry {
                source: nodes.find(r[0], r[1])?,
                target: nodes.find(r[2], r[3])?,
                mass: r[4],
            })
        })
        .collect::<Result<Vec<_>>>()?;
    TransportPlan::new(entries)
}

pub fn write_measure(path: &Path, domain: &Domain, mu: &DiscreteMeasure) -> Result<()> {
    let mut w = writer(path, &MEASURE)?;
    for (n, m) in mu.iter() {
        let p = domain.node(n);
        w.write_record([fmt_num(p.x), fmt_num(p.y), fmt_num(m)])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_measure(path: &Path, domain: &Domain) -> Result<DiscreteMeasure> {
    let nodes = NodeLookup::new(domain);
    let atoms = records(path, &MEASURE)?
        .into_iter()
        .map(|r| Ok((nodes.find(r[0], r[1])?, r[2])))
        .collect::<Result<Vec<_>>>()?;
    DiscreteMeasure::new(atoms)
}

pub fn write_cost_table(path: &Path, table: &CostTable) -> Result<()> {
    let mut w = writer(path, &COSTS)?;
    for &s in table.sources() {
        for (n, c) in table.costs_from(s).unwrap_or_default().iter().enumerate() {
            if c.is_finite() {
                w.write_record([s.to_string(), n.to_string(), fmt_num(*c)])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// `(source, node, cost)` triples.
pub fn read_cost_table(path: &Path) -> Result<Vec<(usize, usize, f64)>> {
    Ok(records(path, &COSTS)?
        .into_iter()
        .map(|r| (r[0] as usize, r[1] as usize, r[2]))
        .collect())
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::Parse(e.to_string()))?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

/// One compact JSON object per line.
pub fn write_jsonl<T: serde::Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for row in rows {
        serde_json::to_writer(&mut w, row).map_err(|e| Error::Parse(e.to_string()))?;
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}
