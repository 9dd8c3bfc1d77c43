//! Planar points, county polygons and the lon/lat projection.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mean Earth radius in km.
pub const EARTH_RADIUS_KM: f64 = 6371.0;

/// A point in the planar study frame, in km.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn dist2(&self, other: &Point) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        dx * dx + dy * dy
    }

    pub fn dist(&self, other: &Point) -> f64 {
        self.dist2(other).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

/// Equirectangular projection centred on a reference latitude.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    pub ref_lat: f64,
}

impl Projection {
    pub fn new(ref_lat: f64) -> Result<Self> {
        if !ref_lat.is_finite() || ref_lat.abs() >= 90.0 {
            return Err(Error::validation(format!("reference latitude {ref_lat} out of range")));
        }
        Ok(Projection { ref_lat })
    }

    pub fn project(&self, lon: f64, lat: f64) -> Result<Point> {
        project_equirectangular(lon, lat, self.ref_lat)
    }

    pub fn unproject(&self, p: Point) -> (f64, f64) {
        let lat = (p.y / EARTH_RADIUS_KM).to_degrees();
        let lon = (p.x / (EARTH_RADIUS_KM * self.ref_lat.to_radians().cos())).to_degrees();
        (lon, lat)
    }
}

pub fn project_equirectangular(lon: f64, lat: f64, ref_lat: f64) -> Result<Point> {
    if !(lon.is_finite() && lat.is_finite() && ref_lat.is_finite()) {
        return Err(Error::validation("non-finite coordinate"));
    }
    if lat.abs() >= 90.0 || ref_lat.abs() >= 90.0 {
        return Err(Error::validation(format!("latitude {lat} out of range")));
    }
    Ok(Point {
        x: EARTH_RADIUS_KM * ref_lat.to_radians().cos() * lon.to_radians(),
        y: EARTH_RADIUS_KM * lat.to_radians(),
    })
}

/// Signed shoelace area of a closed ring; positive for counterclockwise.
fn signed_ring_area(ring: &[Point]) -> f64 {
    ring.windows(2).map(|w| w[0].x * w[1].y - w[1].x * w[0].y).sum::<f64>() * 0.5
}

fn check_closed(ring: &[Point]) -> Result<()> {
    if ring.len() < 4 {
        return Err(Error::validation(format!("ring has {} vertices, need at least 4", ring.len())));
    }
    if ring.first() != ring.last() {
        return Err(Error::validation("ring is not closed"));
    }
    if ring.iter().any(|p| !p.is_finite()) {
        return Err(Error::validation("ring has non-finite vertex"));
    }
    Ok(())
}

fn segments_cross(a: Point, b: Point, c: Point, d: Point) -> bool {
    fn orient(p: Point, q: Point, r: Point) -> f64 {
        (q.x - p.x) * (r.y - p.y) - (q.y - p.y) * (r.x - p.x)
    }
    let d1 = orient(c, d, a);
    let d2 = orient(c, d, b);
    let d3 = orient(a, b, c);
    let d4 = orient(a, b, d);
    ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
}

/// Proper crossings between non-adjacent edges of one ring.
fn ring_self_intersects(ring: &[Point]) -> bool {
    let m = ring.len() - 1;
    for i in 0..m {
        for j in (i + 2)..m {
            if i == 0 && j == m - 1 {
                continue;
            }
            if segments_cross(ring[i], ring[i + 1], ring[j], ring[j + 1]) {
                return true;
            }
        }
    }
    false
}

/// Shoelace area of a set of rings with holes subtracted.
///
/// The first ring is the shell and the remaining rings are holes, whatever
/// their orientation. Multi-part counties go through [`CountyPolygon`].
pub fn polygon_area(rings: &[Vec<Point>]) -> Result<f64> {
    let mut area = 0.0;
    for (k, ring) in rings.iter().enumerate() {
        check_closed(ring)?;
        let a = signed_ring_area(ring).abs();
        area += if k == 0 { a } else { -a };
    }
    Ok(area)
}

fn on_segment(p: Point, a: Point, b: Point) -> bool {
    let cross = (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x);
    let len2 = a.dist2(&b);
    let scale = len2.max(f64::MIN_POSITIVE);
    if cross * cross > 1e-24 * scale * scale.max(1.0) {
        return false;
    }
    p.x >= a.x.min(b.x) - 1e-12
        && p.x <= a.x.max(b.x) + 1e-12
        && p.y >= a.y.min(b.y) - 1e-12
        && p.y <= a.y.max(b.y) + 1e-12
}

/// Even-odd containment over all rings, counting boundary points as inside.
fn rings_contain(rings: &[Vec<Point>], p: Point) -> bool {
    let mut inside = false;
    for ring in rings {
        for w in ring.windows(2) {
            let (a, b) = (w[0], w[1]);
            if on_segment(p, a, b) {
                return true;
            }
            if (a.y > p.y) != (b.y > p.y) {
                let x_cross = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
                if p.x < x_cross {
                    inside = !inside;
                }
            }
        }
    }
    inside
}

/// Ray-casting containment test on raw rings.
pub fn point_in_polygon(p: Point, rings: &[Vec<Point>]) -> Result<bool> {
    let area = polygon_area(rings)?;
    if area <= 0.0 {
        return Err(Error::validation("degenerate polygon with zero area"));
    }
    Ok(rings_contain(rings, p))
}

/// A validated county boundary: one or more shells plus holes.
///
/// Shells are stored counterclockwise, holes clockwise, and every ring is
/// closed (first vertex repeated at the end).
#[derive(Debug, Clone, PartialEq)]
pub struct CountyPolygon {
    county_id: String,
    rings: Vec<Vec<Point>>,
    area: f64,
    bbox: [f64; 4],
}

impl CountyPolygon {
    /// Builds a county from polygons given as `[shell, hole, hole, ...]`.
    pub fn new(county_id: impl Into<String>, polygons: Vec<Vec<Vec<Point>>>) -> Result<Self> {
        let county_id = county_id.into();
        let mut rings = Vec::new();
        for poly in polygons {
            for (k, mut ring) in poly.into_iter().enumerate() {
                check_closed(&ring)?;
                if ring_self_intersects(&ring) {
                    return Err(Error::validation(format!("county {county_id}: self-intersecting ring")));
                }
                let signed = signed_ring_area(&ring);
                let want_ccw = k == 0;
                if (signed > 0.0) != want_ccw {
                    ring.reverse();
                }
                rings.push(ring);
            }
        }
        let area: f64 = rings.iter().map(|r| signed_ring_area(r)).sum();
        if !(area > 0.0) {
            return Err(Error::validation(format!("county {county_id}: polygon has no area")));
        }
        let mut bbox = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
        for p in rings.iter().flatten() {
            bbox[0] = bbox[0].min(p.x);
            bbox[1] = bbox[1].min(p.y);
            bbox[2] = bbox[2].max(p.x);
            bbox[3] = bbox[3].max(p.y);
        }
        Ok(CountyPolygon { county_id, rings, area, bbox })
    }

    /// Axis-aligned rectangle as a county.
    pub fn rectangle(county_id: impl Into<String>, x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self> {
        let ring =
            vec![Point::new(x0, y0), Point::new(x1, y0), Point::new(x1, y1), Point::new(x0, y1), Point::new(x0, y0)];
        CountyPolygon::new(county_id, vec![vec![ring]])
    }

    pub fn county_id(&self) -> &str {
        &self.county_id
    }

    pub fn rings(&self) -> &[Vec<Point>] {
        &self.rings
    }

    /// Area in km², holes subtracted.
    pub fn area(&self) -> f64 {
        self.area
    }

    /// `[xmin, ymin, xmax, ymax]`.
    pub fn bbox(&self) -> [f64; 4] {
        self.bbox
    }

    pub fn contains(&self, p: Point) -> bool {
        if p.x < self.bbox[0] || p.x > self.bbox[2] || p.y < self.bbox[1] || p.y > self.bbox[3] {
            return false;
        }
        rings_contain(&self.rings, p)
    }

    /// Area-weighted centroid.
    pub fn centroid(&self) -> Point {
        let (mut cx, mut cy, mut a) = (0.0, 0.0, 0.0);
        for ring in &self.rings {
            for w in ring.windows(2) {
                let cross = w[0].x * w[1].y - w[1].x * w[0].y;
                cx += (w[0].x + w[1].x) * cross;
                cy += (w[0].y + w[1].y) * cross;
                a += cross;
            }
        }
        a *= 0.5;
        Point::new(cx / (6.0 * a), cy / (6.0 * a))
    }
}
