//! Static SVG phase plots: constraint box, trajectories and ellipses.

use std::fmt::Write;

use rpofsf::linalg::spd_sqrt;
use rpofsf::{Matrix, Vector};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN: f64 = 48.0;
const ELLIPSE_POINTS: usize = 64;

/// The set `{x : ‖x − center‖_P ≤ radius}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Ellipse {
    pub center: [f64; 2],
    pub p: Matrix,
    pub radius: f64,
    pub class: &'static str,
}

impl Ellipse {
    /// Boundary samples, counterclockwise.
    pub fn boundary(&self) -> Vec<[f64; 2]> {
        let Some(inv) = self.p.clone().try_inverse() else {
            return Vec::new();
        };
        let Some(root) = spd_sqrt(&inv) else {
            return Vec::new();
        };
        (0..ELLIPSE_POINTS)
            .map(|i| {
                let t = std::f64::consts::TAU * i as f64 / ELLIPSE_POINTS as f64;
                let d = &root * Vector::from_column_slice(&[t.cos(), t.sin()]) * self.radius;
                [self.center[0] + d[0], self.center[1] + d[1]]
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub label: String,
    pub class: &'static str,
    pub points: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Figure {
    pub x_lo: [f64; 2],
    pub x_hi: [f64; 2],
    pub trajectories: Vec<Trajectory>,
    pub ellipses: Vec<Ellipse>,
}

/// Affine map between data and pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Canvas {
    lo: [f64; 2],
    hi: [f64; 2],
}

impl Canvas {
    /// The constraint box padded by 15 percent, widened to contain `extra`.
    pub fn fit(x_lo: [f64; 2], x_hi: [f64; 2], extra: &[[f64; 2]]) -> Self {
        let mut lo = x_lo;
        let mut hi = x_hi;
        for p in extra {
            for d in 0..2 {
                lo[d] = lo[d].min(p[d]);
                hi[d] = hi[d].max(p[d]);
            }
        }
        for d in 0..2 {
            let pad = 0.15 * (hi[d] - lo[d]).max(1e-9);
            lo[d] -= pad;
            hi[d] += pad;
        }
        Self { lo, hi }
    }

    pub fn to_pixel(&self, p: [f64; 2]) -> [f64; 2] {
        let sx = (WIDTH - 2.0 * MARGIN) / (self.hi[0] - self.lo[0]);
        let sy = (HEIGHT - 2.0 * MARGIN) / (self.hi[1] - self.lo[1]);
        [MARGIN + (p[0] - self.lo[0]) * sx, HEIGHT - MARGIN - (p[1] - self.lo[1]) * sy]
    }

    pub fn to_data(&self, q: [f64; 2]) -> [f64; 2] {
        let sx = (WIDTH - 2.0 * MARGIN) / (self.hi[0] - self.lo[0]);
        let sy = (HEIGHT - 2.0 * MARGIN) / (self.hi[1] - self.lo[1]);
        [self.lo[0] + (q[0] - MARGIN) / sx, self.lo[1] + (HEIGHT - MARGIN - q[1]) / sy]
    }
}

fn points_attr(canvas: &Canvas, pts: &[[f64; 2]]) -> String {
    let mut s = String::new();
    for (i, p) in pts.iter().enumerate() {
        let q = canvas.to_pixel(*p);
        if i > 0 {
            s.push(' ');
        }
        let _ = write!(s, "{:.4},{:.4}", q[0], q[1]);
    }
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

impl Figure {
    pub fn canvas(&self) -> Canvas {
        let all: Vec<[f64; 2]> = self.trajectories.iter().flat_map(|t| t.points.iter().copied()).collect();
        Canvas::fit(self.x_lo, self.x_hi, &all)
    }

    pub fn render(&self) -> String {
        let c = self.canvas();
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
        );
        s.push_str(
            "<style>.box{fill:none;stroke:#000;stroke-width:1.5}.filtered{fill:none;stroke:#1f77b4;stroke-width:1.5}\
             .unfiltered{fill:none;stroke:#d62728;stroke-width:1.5;stroke-dasharray:4 3}\
             .bound{fill:none;stroke:#2ca02c;stroke-width:0.8}.tube{fill:none;stroke:#9467bd;stroke-width:0.8}\
             text{font-family:sans-serif;font-size:12px}</style>\n",
        );
        let corners = [
            [self.x_lo[0], self.x_lo[1]],
            [self.x_hi[0], self.x_lo[1]],
            [self.x_hi[0], self.x_hi[1]],
            [self.x_lo[0], self.x_hi[1]],
        ];
        let _ = writeln!(s, r#"<polygon class="box" points="{}"/>"#, points_attr(&c, &corners));
        for e in &self.ellipses {
            let b = e.boundary();
            if !b.is_empty() {
                let _ = writeln!(s, r#"<polygon class="{}" points="{}"/>"#, e.class, points_attr(&c, &b));
            }
        }
        for (i, t) in self.trajectories.iter().enumerate() {
            let _ = writeln!(
                s,
                r#"<polyline class="{}" data-label="{}" points="{}"/>"#,
                t.class,
                escape(&t.label),
                points_attr(&c, &t.points)
            );
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}">{}</text>"#,
                MARGIN + 8.0,
                MARGIN + 16.0 * (i as f64 + 1.0),
                escape(&t.label)
            );
        }
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}">x1</text>"#, WIDTH / 2.0, HEIGHT - 12.0);
        let _ = writeln!(s, r#"<text x="12" y="{:.1}">x2</text>"#, HEIGHT / 2.0);
        s.push_str("</svg>\n");
        s
    }
}

/// Polyline vertices of the given class, mapped back to data coordinates.
pub fn plotted_points(svg: &str, canvas: &Canvas, class: &str) -> Vec<[f64; 2]> {
    let tag = format!(r#"<polyline class="{class}""#);
    let mut out = Vec::new();
    for line in svg.lines().filter(|l| l.starts_with(&tag)) {
        let Some(start) = line.find(" points=\"") else { continue };
        let rest = &line[start + 9..];
        let Some(end) = rest.find('"') else { continue };
        for pair in rest[..end].split_whitespace() {
            if let Some((a, b)) = pair.split_once(',') {
                if let (Ok(a), Ok(b)) = (a.parse(), b.parse()) {
                    out.push(canvas.to_data([a, b]));
                }
            }
        }
    }
    out
}
