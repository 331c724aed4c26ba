//! Density heatmap with a path overlay. Rendering only reads its inputs.

use std::fmt::Write;

use crate::domain::{CongestionSupport, Domain, Point};
use crate::flow::{element_density, IntensityField, PathFlow};

const VIRIDIS: [(u8, u8, u8); 8] = [
    (68, 1, 84),
    (70, 50, 127),
    (54, 92, 141),
    (39, 127, 142),
    (31, 161, 135),
    (74, 194, 109),
    (159, 218, 58),
    (253, 231, 37),
];

const WIDTH: f64 = 600.0;
const MARGIN: f64 = 20.0;
const TOP_PATHS: usize = 20;

/// Piecewise-linear 8-stop ramp on `t ∈ [0, 1]`.
pub fn ramp(t: f64) -> (u8, u8, u8) {
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.0 };
    let x = t * (VIRIDIS.len() - 1) as f64;
    let k = (x.floor() as usize).min(VIRIDIS.len() - 2);
    let f = x - k as f64;
    let mix = |a: u8, b: u8| (a as f64 + f * (b as f64 - a as f64)).round() as u8;
    let (a, b) = (VIRIDIS[k], VIRIDIS[k + 1]);
    (mix(a.0, b.0), mix(a.1, b.1), mix(a.2, b.2))
}

fn hex((r, g, b): (u8, u8, u8)) -> String {
    format!("#{r:02x}{g:02x}{b:02x}")
}

pub fn render(domain: &Domain, field: &IntensityField, flow: Option<&PathFlow>) -> String {
    let b = domain.bounds();
    let scale = (WIDTH - 2.0 * MARGIN) / b.width();
    let height = b.height() * scale + 2.0 * MARGIN + 30.0;
    let map = |p: Point| (MARGIN + (p.x - b.min.x) * scale, MARGIN + (b.max.y - p.y) * scale);

    let rho = element_density(domain, field);
    let lo = rho.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = rho.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if rho.is_empty() { (0.0, 0.0) } else { (lo, hi) };
    let t = |r: f64| if hi > lo { (r - lo) / (hi - lo) } else { 0.0 };

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height:.0}" viewBox="0 0 {WIDTH} {height:.0}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    match domain.lattice() {
        Some(lattice) => {
            let h = lattice.spacing * scale;
            for (n, &r) in rho.iter().enumerate() {
                let (x, y) = map(domain.node(n));
                let _ = writeln!(
                    s,
                    r#"<rect x="{:.3}" y="{:.3}" width="{h:.3}" height="{h:.3}" fill="{}"/>"#,
                    x - h / 2.0,
                    y - h / 2.0,
                    hex(ramp(t(r)))
                );
            }
        }
        None => {
            for (k, e) in domain.edges().iter().enumerate() {
                let (x1, y1) = map(domain.node(e.u));
                let (x2, y2) = map(domain.node(e.v));
                let r = match domain.support() {
                    CongestionSupport::Edges => rho[k],
                    CongestionSupport::Nodes => 0.5 * (rho[e.u] + rho[e.v]),
                };
                let _ = writeln!(
                    s,
                    r#"<line x1="{x1:.3}" y1="{y1:.3}" x2="{x2:.3}" y2="{y2:.3}" stroke="{}" stroke-width="4"/>"#,
                    hex(ramp(t(r)))
                );
            }
        }
    }

    if let Some(flow) = flow {
        let mut heavy: Vec<_> = flow.entries().iter().filter(|e| e.path.nodes().len() > 1).collect();
        heavy.sort_by(|a, b| b.mass.total_cmp(&a.mass));
        for e in heavy.into_iter().take(TOP_PATHS) {
            let pts: Vec<String> = e
                .path
                .nodes()
                .iter()
                .map(|&n| {
                    let (x, y) = map(domain.node(n));
                    format!("{x:.2},{y:.2}")
                })
                .collect();
            let _ = writeln!(
                s,
                r#"<polyline points="{}" fill="none" stroke="white" stroke-opacity="0.7" stroke-width="1"/>"#,
                pts.join(" ")
            );
        }
    }

    let _ = writeln!(
        s,
        r#"<text x="{MARGIN}" y="{:.0}" font-family="monospace" font-size="13">min {lo:.4e}  max {hi:.4e}</text>"#,
        height - 12.0
    );
    s.push_str("</svg>\n");
    s
}
