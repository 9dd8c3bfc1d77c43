//! Minimal SVG maps: polygons and points in planar km, no basemap.

use std::fmt::Write;

use wellplan::{CountyPolygon, Point};

const WIDTH: f64 = 800.0;
const MARGIN: f64 = 10.0;

pub const PALETTE: [&str; 10] =
    ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"];

pub fn color(id: usize) -> &'static str {
    PALETTE[id % PALETTE.len()]
}

pub struct Shape<'a> {
    pub polygon: &'a CountyPolygon,
    pub fill: &'a str,
}

pub struct Marker<'a> {
    pub at: Point,
    pub fill: &'a str,
    pub radius: f64,
}

struct Frame {
    x0: f64,
    y1: f64,
    scale: f64,
    height: f64,
}

impl Frame {
    fn fit(bbox: [f64; 4]) -> Self {
        let w = (bbox[2] - bbox[0]).max(1e-9);
        let h = (bbox[3] - bbox[1]).max(1e-9);
        let scale = (WIDTH - 2.0 * MARGIN) / w;
        Frame { x0: bbox[0], y1: bbox[3], scale, height: h * scale + 2.0 * MARGIN }
    }

    fn map(&self, p: Point) -> (f64, f64) {
        (MARGIN + (p.x - self.x0) * self.scale, MARGIN + (self.y1 - p.y) * self.scale)
    }
}

fn bbox_of(shapes: &[Shape], markers: &[Marker]) -> [f64; 4] {
    let mut b = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
    let mut grow = |x0: f64, y0: f64, x1: f64, y1: f64| {
        b = [b[0].min(x0), b[1].min(y0), b[2].max(x1), b[3].max(y1)];
    };
    for s in shapes {
        let q = s.polygon.bbox();
        grow(q[0], q[1], q[2], q[3]);
    }
    for m in markers {
        grow(m.at.x, m.at.y, m.at.x, m.at.y);
    }
    if b[0].is_finite() {
        b
    } else {
        [0.0, 0.0, 1.0, 1.0]
    }
}

/// Renders the shapes beneath the markers.
pub fn render(title: &str, shapes: &[Shape], markers: &[Marker]) -> String {
    let frame = Frame::fit(bbox_of(shapes, markers));
    let mut out = String::new();
    writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH:.0}" height="{:.0}" viewBox="0 0 {WIDTH:.0} {:.2}">"#,
        frame.height.ceil(),
        frame.height
    )
    .unwrap();
    writeln!(out, "<title>{}</title>", escape(title)).unwrap();
    for s in shapes {
        let mut d = String::new();
        for ring in s.polygon.rings() {
            for (k, p) in ring.iter().enumerate() {
                let (x, y) = frame.map(*p);
                write!(d, "{}{x:.2},{y:.2} ", if k == 0 { "M" } else { "L" }).unwrap();
            }
            d.push('Z');
        }
        writeln!(
            out,
            r#"<path d="{d}" fill="{}" fill-opacity="0.25" stroke="black" stroke-width="1" fill-rule="evenodd"><title>{}</title></path>"#,
            s.fill,
            escape(s.polygon.county_id())
        )
        .unwrap();
    }
    for m in markers {
        let (x, y) = frame.map(m.at);
        writeln!(out, r#"<circle cx="{x:.2}" cy="{y:.2}" r="{:.1}" fill="{}"/>"#, m.radius, m.fill).unwrap();
    }
    out.push_str("</svg>\n");
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_polygons_and_points_inside_canvas() {
        let county = CountyPolygon::rectangle("A&B", 0.0, 0.0, 10.0, 5.0).unwrap();
        let svg = render(
            "t",
            &[Shape { polygon: &county, fill: color(0) }],
            &[Marker { at: Point::new(10.0, 0.0), fill: "#000", radius: 2.0 }],
        );
        assert!(svg.starts_with("<svg"));
        assert!(svg.contains("A&amp;B"));
        assert!(svg.contains(r#"cx="790.00" cy="400.00""#));
        assert!(svg.trim_end().ends_with("</svg>"));
    }
}
