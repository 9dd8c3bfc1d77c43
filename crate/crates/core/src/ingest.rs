//! Loading and cleaning of well-test records.
//!
//! Raw records are binarized against the contaminant level, records without a
//! usable location or concentration are rejected, and repeated tests at the
//! same location are merged into a single binary observation that is positive
//! when any of the merged tests exceeded the level.

use std::collections::HashMap;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CountyPolygon, Point, Projection};

pub use crate::geometry::{point_in_polygon, project_equirectangular};

/// Maximum contaminant level for arsenic, mg/L.
pub const DEFAULT_THRESHOLD_MG_L: f64 = 0.01;

/// Locations are compared after rounding to this many units per degree.
const LOCATION_GRID: f64 = 1e6;

/// Coordinates as they appear in an input file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Coordinates {
    Geographic { lon: f64, lat: f64 },
    Planar(Point),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawTestRecord {
    pub well_id: String,
    pub coords: Option<Coordinates>,
    pub county_id: String,
    /// mg/L.
    pub concentration: Option<f64>,
    pub collected_at: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WellObservation {
    /// Well id of the first record merged into this observation.
    pub well_id: String,
    pub site: Point,
    /// Rounded source coordinates (degrees, or km for planar input).
    pub coords: Coordinates,
    pub county_id: String,
    pub y: u8,
    pub n_records: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    MissingLocation,
    MissingConcentration,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RejectionReport {
    pub input: usize,
    pub retained: usize,
    pub missing_location: usize,
    pub missing_concentration: usize,
    /// `(record index, reason)` for every rejected record.
    pub rejected: Vec<(usize, RejectReason)>,
}

impl RejectionReport {
    pub fn rejected_count(&self) -> usize {
        self.missing_location + self.missing_concentration
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationSet {
    pub observations: Vec<WellObservation>,
    pub projection: Option<Projection>,
    pub report: RejectionReport,
}

impl ObservationSet {
    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn sites(&self) -> Vec<Point> {
        self.observations.iter().map(|o| o.site).collect()
    }

    pub fn outcomes(&self) -> Vec<u8> {
        self.observations.iter().map(|o| o.y).collect()
    }

    pub fn county_ids(&self) -> Vec<&str> {
        self.observations.iter().map(|o| o.county_id.as_str()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateWell {
    pub well_id: String,
    pub site: Point,
    pub coords: Coordinates,
    pub county_id: String,
    pub previously_tested: bool,
}

/// 1 iff `concentration` is strictly above `threshold`.
pub fn binarize(concentration: f64, threshold: f64) -> Result<u8> {
    if !(concentration >= 0.0) || !concentration.is_finite() {
        return Err(Error::validation(format!("invalid concentration {concentration}")));
    }
    Ok(u8::from(concentration > threshold))
}

fn round_coord(v: f64) -> f64 {
    (v * LOCATION_GRID).round() / LOCATION_GRID
}

fn location_key(c: &Coordinates) -> (i64, i64) {
    let (a, b) = match *c {
        Coordinates::Geographic { lon, lat } => (lon, lat),
        Coordinates::Planar(p) => (p.x, p.y),
    };
    ((a * LOCATION_GRID).round() as i64, (b * LOCATION_GRID).round() as i64)
}

fn rounded(c: &Coordinates) -> Coordinates {
    match *c {
        Coordinates::Geographic { lon, lat } => {
            Coordinates::Geographic { lon: round_coord(lon), lat: round_coord(lat) }
        }
        Coordinates::Planar(p) => Coordinates::Planar(Point::new(round_coord(p.x), round_coord(p.y))),
    }
}

/// Projection centred on the mean latitude of the geographic records, or
/// `None` when every record is already planar.
pub fn study_projection<'a>(coords: impl IntoIterator<Item = &'a Coordinates>) -> Result<Option<Projection>> {
    let (mut sum, mut n) = (0.0, 0usize);
    for c in coords {
        if let Coordinates::Geographic { lat, .. } = c {
            sum += lat;
            n += 1;
        }
    }
    if n == 0 {
        return Ok(None);
    }
    Projection::new(sum / n as f64).map(Some)
}

pub fn to_planar(c: &Coordinates, projection: Option<&Projection>) -> Result<Point> {
    match (c, projection) {
        (Coordinates::Planar(p), _) => Ok(*p),
        (Coordinates::Geographic { lon, lat }, Some(proj)) => proj.project(*lon, *lat),
        (Coordinates::Geographic { .. }, None) => Err(Error::validation("geographic coordinates without a projection")),
    }
}

/// Binarizes and merges records into one observation per distinct location.
///
/// When `projection` is `None` it is derived from the mean latitude of the
/// retained records.
pub fn aggregate_observations(
    records: &[RawTestRecord],
    threshold: f64,
    projection: Option<Projection>,
) -> Result<ObservationSet> {
    let mut report = RejectionReport { input: records.len(), ..Default::default() };
    let mut kept = Vec::with_capacity(records.len());
    for (idx, rec) in records.iter().enumerate() {
        let Some(coords) = rec.coords.as_ref() else {
            report.missing_location += 1;
            report.rejected.push((idx, RejectReason::MissingLocation));
            continue;
        };
        let Some(conc) = rec.concentration else {
            report.missing_concentration += 1;
            report.rejected.push((idx, RejectReason::MissingConcentration));
            continue;
        };
        kept.push((rec, rounded(coords), binarize(conc, threshold)?));
    }
    report.retained = kept.len();
    if kept.is_empty() {
        return Err(Error::EmptyDataset);
    }

    let projection = match projection {
        Some(p) => Some(p),
        None => study_projection(kept.iter().map(|(_, c, _)| c))?,
    };

    let mut index: HashMap<(i64, i64), usize> = HashMap::new();
    let mut observations: Vec<WellObservation> = Vec::new();
    for (rec, coords, y) in kept {
        let key = location_key(&coords);
        match index.get(&key) {
            Some(&i) => {
                let obs = &mut observations[i];
                obs.y = obs.y.max(y);
                obs.n_records += 1;
            }
            None => {
                index.insert(key, observations.len());
                observations.push(WellObservation {
                    well_id: rec.well_id.clone(),
                    site: to_planar(&coords, projection.as_ref())?,
                    coords,
                    county_id: rec.county_id.clone(),
                    y,
                    n_records: 1,
                });
            }
        }
    }
    Ok(ObservationSet { observations, projection, report })
}

fn schema_err(path: &Path, line: u64, msg: impl Into<String>) -> Error {
    Error::Schema { path: path.to_path_buf(), line, msg: msg.into() }
}

struct Columns {
    well_id: usize,
    coords: (usize, usize, bool),
    county_id: usize,
}

fn locate_columns(path: &Path, headers: &csv::StringRecord, extra: &[&str]) -> Result<(Columns, Vec<usize>)> {
    let find = |name: &str| headers.iter().position(|h| h.trim() == name);
    let need = |name: &str| find(name).ok_or_else(|| schema_err(path, 1, format!("missing column `{name}`")));
    let coords = match (find("lon"), find("lat"), find("x"), find("y")) {
        (Some(a), Some(b), None, None) => (a, b, true),
        (None, None, Some(a), Some(b)) => (a, b, false),
        (Some(_), Some(_), Some(_), Some(_)) => {
            return Err(schema_err(path, 1, "both lon/lat and x/y columns present"));
        }
        _ => return Err(schema_err(path, 1, "missing coordinate columns `lon,lat`")),
    };
    let cols = Columns { well_id: need("well_id")?, coords, county_id: need("county_id")? };
    let extra = extra.iter().map(|n| need(n)).collect::<Result<Vec<_>>>()?;
    Ok((cols, extra))
}

fn parse_opt_f64(path: &Path, line: u64, field: &str, name: &str) -> Result<Option<f64>> {
    let field = field.trim();
    if field.is_empty() {
        return Ok(None);
    }
    field
        .parse::<f64>()
        .map(Some)
        .map_err(|_| schema_err(path, line, format!("column `{name}`: cannot parse `{field}` as a number")))
}

fn parse_coords(path: &Path, line: u64, rec: &csv::StringRecord, cols: &Columns) -> Result<Option<Coordinates>> {
    let (ia, ib, geographic) = cols.coords;
    let a = parse_opt_f64(path, line, rec.get(ia).unwrap_or(""), "lon")?;
    let b = parse_opt_f64(path, line, rec.get(ib).unwrap_or(""), "lat")?;
    let (Some(a), Some(b)) = (a, b) else { return Ok(None) };
    if !a.is_finite() || !b.is_finite() {
        return Ok(None);
    }
    Ok(Some(if geographic {
        if b.abs() >= 90.0 || a.abs() > 180.0 {
            return Err(schema_err(path, line, format!("coordinate ({a}, {b}) out of range")));
        }
        Coordinates::Geographic { lon: a, lat: b }
    } else {
        Coordinates::Planar(Point::new(a, b))
    }))
}

fn csv_reader<R: Read>(input: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().has_headers(true).flexible(false).from_reader(input)
}

fn line_of(rec: &csv::StringRecord) -> u64 {
    rec.position().map_or(0, |p| p.line())
}

/// Parses an observations CSV with header
/// `well_id,lon,lat,county_id,concentration_mg_l,collected_at`.
pub fn read_test_records_from<R: Read>(input: R, path: &Path) -> Result<Vec<RawTestRecord>> {
    let mut rdr = csv_reader(input);
    let headers = rdr.headers().map_err(|e| schema_err(path, 1, e.to_string()))?.clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Err(schema_err(path, 1, "empty file"));
    }
    let (cols, extra) = locate_columns(path, &headers, &["concentration_mg_l"])?;
    let conc_col = extra[0];
    let date_col = headers.iter().position(|h| h.trim() == "collected_at");
    let mut out = Vec::new();
    for row in rdr.records() {
        let rec = row.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            schema_err(path, line, e.to_string())
        })?;
        let line = line_of(&rec);
        let concentration = parse_opt_f64(path, line, rec.get(conc_col).unwrap_or(""), "concentration_mg_l")?;
        if let Some(c) = concentration {
            if !(c >= 0.0) || !c.is_finite() {
                return Err(schema_err(path, line, format!("negative or non-finite concentration {c}")));
            }
        }
        out.push(RawTestRecord {
            well_id: rec.get(cols.well_id).unwrap_or("").trim().to_string(),
            coords: parse_coords(path, line, &rec, &cols)?,
            county_id: rec.get(cols.county_id).unwrap_or("").trim().to_string(),
            concentration,
            collected_at: date_col.and_then(|i| rec.get(i)).map(str::trim).filter(|s| !s.is_empty()).map(String::from),
        });
    }
    Ok(out)
}

pub fn read_test_records(path: &Path) -> Result<Vec<RawTestRecord>> {
    let file = std::fs::File::open(path)?;
    read_test_records_from(file, path)
}

/// A candidate row before projection.
#[derive(Debug, Clone, PartialEq)]
pub struct RawCandidate {
    pub well_id: String,
    pub coords: Option<Coordinates>,
    pub county_id: String,
    pub previously_tested: bool,
}

/// Parses a candidate wells CSV with header
/// `well_id,lon,lat,county_id,previously_tested`.
pub fn read_candidates_from<R: Read>(input: R, path: &Path) -> Result<Vec<RawCandidate>> {
    let mut rdr = csv_reader(input);
    let headers = rdr.headers().map_err(|e| schema_err(path, 1, e.to_string()))?.clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Err(schema_err(path, 1, "empty file"));
    }
    let (cols, extra) = locate_columns(path, &headers, &["previously_tested"])?;
    let mut out = Vec::new();
    for row in rdr.records() {
        let rec = row.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            schema_err(path, line, e.to_string())
        })?;
        let line = line_of(&rec);
        let previously_tested = match rec.get(extra[0]).unwrap_or("").trim() {
            "0" => false,
            "1" => true,
            other => return Err(schema_err(path, line, format!("previously_tested must be 0 or 1, got `{other}`"))),
        };
        out.push(RawCandidate {
            well_id: rec.get(cols.well_id).unwrap_or("").trim().to_string(),
            coords: parse_coords(path, line, &rec, &cols)?,
            county_id: rec.get(cols.county_id).unwrap_or("").trim().to_string(),
            previously_tested,
        });
    }
    Ok(out)
}

pub fn read_candidates(path: &Path) -> Result<Vec<RawCandidate>> {
    let file = std::fs::File::open(path)?;
    read_candidates_from(file, path)
}

/// Candidates with usable coordinates inside the study region, plus the
/// number dropped for lacking a location or falling outside every county.
pub fn prepare_candidates(
    raw: &[RawCandidate],
    projection: Option<&Projection>,
    counties: &[CountyPolygon],
) -> Result<(Vec<CandidateWell>, usize)> {
    let mut out = Vec::with_capacity(raw.len());
    let mut dropped = 0;
    for c in raw {
        let Some(coords) = c.coords.as_ref() else {
            dropped += 1;
            continue;
        };
        let site = to_planar(coords, projection)?;
        if !counties.is_empty() && !counties.iter().any(|poly| poly.contains(site)) {
            dropped += 1;
            continue;
        }
        out.push(CandidateWell {
            well_id: c.well_id.clone(),
            site,
            coords: *coords,
            county_id: c.county_id.clone(),
            previously_tested: c.previously_tested,
        });
    }
    Ok((out, dropped))
}

fn parse_ring(value: &serde_json::Value, projection: Option<&Projection>) -> Result<Vec<Point>> {
    let coords = value.as_array().ok_or_else(|| Error::validation("ring is not an array"))?;
    coords
        .iter()
        .map(|pos| {
            let pos = pos.as_array().ok_or_else(|| Error::validation("position is not an array"))?;
            let (Some(a), Some(b)) = (pos.first().and_then(|v| v.as_f64()), pos.get(1).and_then(|v| v.as_f64())) else {
                return Err(Error::validation("position must hold two numbers"));
            };
            match projection {
                Some(proj) => proj.project(a, b),
                None => Ok(Point::new(a, b)),
            }
        })
        .collect()
}

fn parse_polygon(value: &serde_json::Value, projection: Option<&Projection>) -> Result<Vec<Vec<Point>>> {
    value
        .as_array()
        .ok_or_else(|| Error::validation("polygon coordinates are not an array"))?
        .iter()
        .map(|r| parse_ring(r, projection))
        .collect()
}

/// Parses county boundaries from a GeoJSON FeatureCollection of Polygon or
/// MultiPolygon features carrying a `county_id` property. Positions are
/// `[lon, lat]` and are projected when `projection` is given, otherwise read
/// as planar km.
pub fn parse_counties_geojson(text: &str, projection: Option<&Projection>) -> Result<Vec<CountyPolygon>> {
    let doc: serde_json::Value = serde_json::from_str(text)?;
    if doc.get("type").and_then(|t| t.as_str()) != Some("FeatureCollection") {
        return Err(Error::validation("expected a GeoJSON FeatureCollection"));
    }
    let features = doc
        .get("features")
        .and_then(|f| f.as_array())
        .ok_or_else(|| Error::validation("FeatureCollection without features"))?;
    let mut out = Vec::with_capacity(features.len());
    for (i, feat) in features.iter().enumerate() {
        let id = match feat.get("properties").and_then(|p| p.get("county_id")) {
            Some(serde_json::Value::String(s)) => s.clone(),
            Some(serde_json::Value::Number(n)) => n.to_string(),
            _ => return Err(Error::validation(format!("feature {i} lacks a county_id property"))),
        };
        let geom = feat.get("geometry").ok_or_else(|| Error::validation(format!("feature {i} lacks geometry")))?;
        let coords =
            geom.get("coordinates").ok_or_else(|| Error::validation(format!("feature {i} lacks coordinates")))?;
        let polygons = match geom.get("type").and_then(|t| t.as_str()) {
            Some("Polygon") => vec![parse_polygon(coords, projection)?],
            Some("MultiPolygon") => coords
                .as_array()
                .ok_or_else(|| Error::validation("MultiPolygon coordinates are not an array"))?
                .iter()
                .map(|p| parse_polygon(p, projection))
                .collect::<Result<Vec<_>>>()?,
            other => return Err(Error::validation(format!("feature {i}: unsupported geometry {other:?}"))),
        };
        out.push(CountyPolygon::new(id, polygons)?);
    }
    Ok(out)
}

pub fn read_counties(path: &Path, projection: Option<&Projection>) -> Result<Vec<CountyPolygon>> {
    let text = std::fs::read_to_string(path)?;
    parse_counties_geojson(&text, projection)
}
