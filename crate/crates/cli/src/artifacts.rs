//! Readers and writers for the files stages pass to each other.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use wellplan::estimator::FitReport;
use wellplan::geometry::{CountyPolygon, Point};
use wellplan::ingest::{parse_counties_geojson, CandidateWell, Coordinates, WellObservation};
use wellplan::sizing::{read_sizing_csv, SizingRow};

use crate::error::{CliError, Result};

pub const OBSERVATIONS: &str = "ingest/observations.csv";
pub const CANDIDATES: &str = "ingest/candidates.csv";
pub const COUNTIES: &str = "ingest/counties_km.geojson";
pub const REJECTIONS: &str = "ingest/rejections.csv";
pub const INGEST_SUMMARY: &str = "ingest/summary.json";
pub const GRAPH: &str = "fit/graph.csv";
pub const FIT: &str = "fit/fit.json";
pub const BETA: &str = "fit/beta.csv";
pub const BIC_PATH: &str = "fit/bic_path.csv";
pub const SIZING: &str = "size/sizing.csv";
pub const PLAN_CSV: &str = "design/plan.csv";
pub const PLAN_GEOJSON: &str = "design/plan.geojson";
pub const DEFICIENCY: &str = "design/deficiency.json";
pub const DESIGN_SUMMARY: &str = "design/summary.csv";
pub const REGIONS: &str = "design/regions.csv";
pub const CANDIDATE_INTENSITY: &str = "design/intensity_candidates.csv";
pub const EXISTING_INTENSITY: &str = "design/intensity_existing.csv";
pub const TARGET_INTENSITY: &str = "design/intensity_target.csv";
pub const REPORT: &str = "report/report.md";
pub const CLUSTER_MAP: &str = "report/clusters.svg";
pub const PLAN_MAP: &str = "report/plan.svg";

/// Writes `bytes` under the run directory, creating parent directories.
pub fn write(run_dir: &Path, rel: &str, bytes: &[u8]) -> Result<PathBuf> {
    let path = run_dir.join(rel);
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
    Ok(path)
}

/// Path of an artifact that must already exist.
pub fn require(run_dir: &Path, rel: &str) -> Result<PathBuf> {
    let path = run_dir.join(rel);
    if path.is_file() {
        Ok(path)
    } else {
        Err(CliError::MissingArtifact(path))
    }
}

fn coords_columns(c: &Coordinates) -> (String, String) {
    match c {
        Coordinates::Geographic { lon, lat } => (lon.to_string(), lat.to_string()),
        Coordinates::Planar(_) => (String::new(), String::new()),
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ObservationRow {
    well_id: String,
    lon: Option<f64>,
    lat: Option<f64>,
    x_km: f64,
    y_km: f64,
    county_id: String,
    exceed: u8,
    n_records: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct CandidateRow {
    well_id: String,
    lon: Option<f64>,
    lat: Option<f64>,
    x_km: f64,
    y_km: f64,
    county_id: String,
    previously_tested: u8,
}

fn coords_from(lon: Option<f64>, lat: Option<f64>, x: f64, y: f64) -> Coordinates {
    match (lon, lat) {
        (Some(lon), Some(lat)) => Coordinates::Geographic { lon, lat },
        _ => Coordinates::Planar(Point::new(x, y)),
    }
}

pub fn observations_csv(obs: &[WellObservation]) -> Vec<u8> {
    let mut out = String::from("well_id,lon,lat,x_km,y_km,county_id,exceed,n_records\n");
    for o in obs {
        let (lon, lat) = coords_columns(&o.coords);
        out +=
            &format!("{},{lon},{lat},{},{},{},{},{}\n", o.well_id, o.site.x, o.site.y, o.county_id, o.y, o.n_records);
    }
    out.into_bytes()
}

pub fn candidates_csv(cands: &[CandidateWell]) -> Vec<u8> {
    let mut out = String::from("well_id,lon,lat,x_km,y_km,county_id,previously_tested\n");
    for c in cands {
        let (lon, lat) = coords_columns(&c.coords);
        out += &format!(
            "{},{lon},{lat},{},{},{},{}\n",
            c.well_id,
            c.site.x,
            c.site.y,
            c.county_id,
            u8::from(c.previously_tested)
        );
    }
    out.into_bytes()
}

fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| CliError::artifact(path, e))?;
    rdr.deserialize().map(|r| r.map_err(|e| CliError::artifact(path, e))).collect()
}

pub fn read_observations(run_dir: &Path) -> Result<Vec<WellObservation>> {
    let path = require(run_dir, OBSERVATIONS)?;
    Ok(read_rows::<ObservationRow>(&path)?
        .into_iter()
        .map(|r| WellObservation {
            well_id: r.well_id,
            site: Point::new(r.x_km, r.y_km),
            coords: coords_from(r.lon, r.lat, r.x_km, r.y_km),
            county_id: r.county_id,
            y: r.exceed,
            n_records: r.n_records,
        })
        .collect())
}

pub fn read_candidates(run_dir: &Path) -> Result<Vec<CandidateWell>> {
    let path = require(run_dir, CANDIDATES)?;
    Ok(read_rows::<CandidateRow>(&path)?
        .into_iter()
        .map(|r| CandidateWell {
            well_id: r.well_id,
            site: Point::new(r.x_km, r.y_km),
            coords: coords_from(r.lon, r.lat, r.x_km, r.y_km),
            county_id: r.county_id,
            previously_tested: r.previously_tested != 0,
        })
        .collect())
}

/// Counties in planar km as a GeoJSON FeatureCollection.
pub fn counties_geojson(counties: &[CountyPolygon]) -> Vec<u8> {
    let features: Vec<serde_json::Value> = counties
        .iter()
        .map(|c| {
            // each shell starts a new polygon; the holes that follow belong to it
            let mut polygons: Vec<Vec<Vec<[f64; 2]>>> = Vec::new();
            for ring in c.rings() {
                let pts: Vec<[f64; 2]> = ring.iter().map(|p| [p.x, p.y]).collect();
                let signed: f64 = ring.windows(2).map(|w| w[0].x * w[1].y - w[1].x * w[0].y).sum();
                if signed > 0.0 || polygons.is_empty() {
                    polygons.push(vec![pts]);
                } else {
                    polygons.last_mut().expect("shell precedes holes").push(pts);
                }
            }
            serde_json::json!({
                "type": "Feature",
                "properties": {"county_id": c.county_id()},
                "geometry": {"type": "MultiPolygon", "coordinates": polygons},
            })
        })
        .collect();
    let doc = serde_json::json!({"type": "FeatureCollection", "features": features});
    let mut text = serde_json::to_string(&doc).expect("geojson serializes");
    text.push('\n');
    text.into_bytes()
}

pub fn read_counties(run_dir: &Path) -> Result<Vec<CountyPolygon>> {
    let path = require(run_dir, COUNTIES)?;
    let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    Ok(parse_counties_geojson(&text, None)?)
}

pub fn read_fit(run_dir: &Path) -> Result<FitReport> {
    let path = require(run_dir, FIT)?;
    let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::artifact(&path, e))
}

pub fn read_sizing(run_dir: &Path) -> Result<Vec<SizingRow>> {
    let path = require(run_dir, SIZING)?;
    let file = fs::File::open(&path).map_err(|e| CliError::io(&path, e))?;
    Ok(read_sizing_csv(file)?)
}

/// One row of the design summary table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignSummaryRow {
    pub cluster_id: usize,
    pub area_km2: f64,
    pub existing: usize,
    pub required: f64,
    pub expected: f64,
    pub selected: usize,
    pub oversampled_cells: usize,
    pub deficient_cells: usize,
    pub infeasible: bool,
}

pub fn design_summary_csv(rows: &[DesignSummaryRow]) -> Result<Vec<u8>> {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    for r in rows {
        wtr.serialize(r).map_err(|e| CliError::artifact(DESIGN_SUMMARY, e))?;
    }
    wtr.into_inner().map_err(|e| CliError::artifact(DESIGN_SUMMARY, e.error()))
}

pub fn read_design_summary(run_dir: &Path) -> Result<Vec<DesignSummaryRow>> {
    read_rows(&require(run_dir, DESIGN_SUMMARY)?)
}

#[derive(Debug, Deserialize)]
pub struct PlanRow {
    pub well_id: String,
    pub cluster_id: usize,
}

pub fn read_plan(run_dir: &Path) -> Result<Vec<PlanRow>> {
    read_rows(&require(run_dir, PLAN_CSV)?)
}

#[derive(Debug, Deserialize)]
pub struct RegionRow {
    pub county_id: String,
    pub cluster_id: usize,
}

pub fn read_regions(run_dir: &Path) -> Result<Vec<RegionRow>> {
    read_rows(&require(run_dir, REGIONS)?)
}
