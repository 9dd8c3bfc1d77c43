//! Synthetic well-test datasets with known risk regions.
//!
//! A rectangular study area is split into a grid of rectangular counties and
//! every county belongs to one risk region with its own exceedance
//! probability. Wells are scattered uniformly, a fraction of them is tested,
//! and the generated files follow the same schemas the ingest readers accept.

use std::collections::HashMap;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CountyPolygon, Point, Projection};
use crate::ingest::{Coordinates, ObservationSet, RawCandidate, RawTestRecord, DEFAULT_THRESHOLD_MG_L};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationSpec {
    pub width_km: f64,
    pub height_km: f64,
    pub county_cols: usize,
    pub county_rows: usize,
    /// Exceedance probability of each region.
    pub region_p: Vec<f64>,
    /// Region of each county in row-major order (row 0 at the south edge).
    /// When absent, regions are vertical bands of county columns.
    pub county_regions: Option<Vec<usize>>,
    /// Total number of wells, tested or not.
    pub n_wells: usize,
    pub tested_fraction: f64,
    /// Fraction of tested wells that receive a second, non-exceeding test.
    pub duplicate_fraction: f64,
    /// Extra test rows written without coordinates.
    pub missing_location_rows: usize,
    /// South-west corner of the study area.
    pub origin_lon: f64,
    pub origin_lat: f64,
    pub threshold_mg_l: f64,
    pub seed: u64,
}

impl Default for SimulationSpec {
    fn default() -> Self {
        SimulationSpec {
            width_km: 300.0,
            height_km: 200.0,
            county_cols: 3,
            county_rows: 2,
            region_p: vec![0.03, 0.21, 0.34],
            county_regions: None,
            n_wells: 4000,
            tested_fraction: 0.5,
            duplicate_fraction: 0.05,
            missing_location_rows: 0,
            origin_lon: -95.0,
            origin_lat: 41.0,
            threshold_mg_l: DEFAULT_THRESHOLD_MG_L,
            seed: 0,
        }
    }
}

impl SimulationSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.width_km > 0.0 && self.height_km > 0.0 && self.width_km.is_finite() && self.height_km.is_finite()) {
            return Err(Error::parameter("study area dimensions must be positive"));
        }
        if self.county_cols == 0 || self.county_rows == 0 {
            return Err(Error::parameter("county grid must have at least one row and column"));
        }
        if self.region_p.is_empty() {
            return Err(Error::parameter("at least one region probability is required"));
        }
        if let Some(&p) = self.region_p.iter().find(|&&p| !(p > 0.0 && p < 1.0)) {
            return Err(Error::parameter(format!("region probability {p} outside (0, 1)")));
        }
        if let Some(regions) = &self.county_regions {
            if regions.len() != self.county_cols * self.county_rows {
                return Err(Error::parameter(format!(
                    "county_regions has {} entries for {} counties",
                    regions.len(),
                    self.county_cols * self.county_rows
                )));
            }
            if let Some(&r) = regions.iter().find(|&&r| r >= self.region_p.len()) {
                return Err(Error::parameter(format!("county region {r} has no probability")));
            }
        } else if self.region_p.len() > self.county_cols {
            return Err(Error::parameter("more band regions than county columns"));
        }
        for (name, f) in [("tested_fraction", self.tested_fraction), ("duplicate_fraction", self.duplicate_fraction)] {
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::parameter(format!("{name} = {f} outside [0, 1]")));
            }
        }
        if !(self.threshold_mg_l > 0.0 && self.threshold_mg_l.is_finite()) {
            return Err(Error::parameter("threshold must be positive"));
        }
        Projection::new(self.origin_lat)?;
        Ok(())
    }

    /// Region index of every county, row-major.
    pub fn regions(&self) -> Vec<usize> {
        match &self.county_regions {
            Some(r) => r.clone(),
            None => {
                let k = self.region_p.len();
                (0..self.county_rows)
                    .flat_map(|_| (0..self.county_cols).map(move |c| c * k / self.county_cols))
                    .collect()
            }
        }
    }

    pub fn projection(&self) -> Projection {
        Projection { ref_lat: self.origin_lat }
    }

    fn origin(&self) -> Point {
        let proj = self.projection();
        proj.project(self.origin_lon, self.origin_lat).expect("origin validated")
    }

    fn to_lonlat(&self, local: Point) -> (f64, f64) {
        let o = self.origin();
        self.projection().unproject(Point::new(o.x + local.x, o.y + local.y))
    }
}

fn county_id(row: usize, col: usize, cols: usize) -> String {
    format!("C{:03}", row * cols + col + 1)
}

/// Ground-truth region of one well.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRow {
    pub well_id: String,
    pub county_id: String,
    pub region: usize,
    pub p: f64,
    pub tested: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedData {
    pub spec: SimulationSpec,
    pub records: Vec<RawTestRecord>,
    pub candidates: Vec<RawCandidate>,
    /// County rectangles in local planar km with the origin at the
    /// south-west corner.
    pub counties: Vec<CountyPolygon>,
    pub truth: Vec<TruthRow>,
}

pub fn simulate(spec: &SimulationSpec) -> Result<SimulatedData> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let regions = spec.regions();
    let (cw, ch) = (spec.width_km / spec.county_cols as f64, spec.height_km / spec.county_rows as f64);

    let mut counties = Vec::with_capacity(regions.len());
    for row in 0..spec.county_rows {
        for col in 0..spec.county_cols {
            let (x0, y0) = (col as f64 * cw, row as f64 * ch);
            counties.push(CountyPolygon::rectangle(county_id(row, col, spec.county_cols), x0, y0, x0 + cw, y0 + ch)?);
        }
    }

    let n_tested = (spec.tested_fraction * spec.n_wells as f64).round() as usize;
    let t = spec.threshold_mg_l;
    let mut records = Vec::new();
    let mut candidates = Vec::with_capacity(spec.n_wells);
    let mut truth = Vec::with_capacity(spec.n_wells);
    for w in 0..spec.n_wells {
        let local = Point::new(rng.gen::<f64>() * spec.width_km, rng.gen::<f64>() * spec.height_km);
        let col = ((local.x / cw) as usize).min(spec.county_cols - 1);
        let row = ((local.y / ch) as usize).min(spec.county_rows - 1);
        let cid = county_id(row, col, spec.county_cols);
        let region = regions[row * spec.county_cols + col];
        let p = spec.region_p[region];
        let (lon, lat) = spec.to_lonlat(local);
        let coords = Coordinates::Geographic { lon, lat };
        let well_id = format!("W{:06}", w + 1);
        let tested = w < n_tested;
        if tested {
            let exceeds = rng.gen_bool(p);
            let conc = if exceeds { t * rng.gen_range(1.05..5.0) } else { t * rng.gen_range(0.0..0.95) };
            records.push(RawTestRecord {
                well_id: well_id.clone(),
                coords: Some(coords),
                county_id: cid.clone(),
                concentration: Some(round_conc(conc)),
                collected_at: Some(format!("2020-{:02}-{:02}", 1 + w % 12, 1 + w % 28)),
            });
            if rng.gen_bool(spec.duplicate_fraction) {
                records.push(RawTestRecord {
                    well_id: well_id.clone(),
                    coords: Some(coords),
                    county_id: cid.clone(),
                    concentration: Some(round_conc(t * rng.gen_range(0.0..0.95))),
                    collected_at: Some(format!("2021-{:02}-{:02}", 1 + w % 12, 1 + w % 28)),
                });
            }
        }
        candidates.push(RawCandidate {
            well_id: well_id.clone(),
            coords: Some(coords),
            county_id: cid.clone(),
            previously_tested: tested,
        });
        truth.push(TruthRow { well_id, county_id: cid, region, p, tested });
    }
    for m in 0..spec.missing_location_rows {
        records.push(RawTestRecord {
            well_id: format!("X{:06}", m + 1),
            coords: None,
            county_id: counties[m % counties.len()].county_id().to_string(),
            concentration: Some(round_conc(t * rng.gen_range(0.0..2.0))),
            collected_at: None,
        });
    }
    Ok(SimulatedData { spec: spec.clone(), records, candidates, counties, truth })
}

fn round_conc(c: f64) -> f64 {
    (c * 1e6).round() / 1e6
}

impl SimulatedData {
    /// True region of each aggregated observation, matched by well id.
    pub fn regions_of(&self, obs: &ObservationSet) -> Result<Vec<usize>> {
        let by_id: HashMap<&str, usize> = self.truth.iter().map(|t| (t.well_id.as_str(), t.region)).collect();
        obs.observations
            .iter()
            .map(|o| {
                by_id
                    .get(o.well_id.as_str())
                    .copied()
                    .ok_or_else(|| Error::validation(format!("well {} has no ground truth", o.well_id)))
            })
            .collect()
    }

    pub fn write_records_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "well_id,lon,lat,county_id,concentration_mg_l,collected_at")?;
        for r in &self.records {
            let (lon, lat) = match r.coords {
                Some(Coordinates::Geographic { lon, lat }) => (fmt_coord(lon), fmt_coord(lat)),
                _ => (String::new(), String::new()),
            };
            let conc = r.concentration.map(|c| format!("{c:.6}")).unwrap_or_default();
            let date = r.collected_at.as_deref().unwrap_or("");
            writeln!(out, "{},{lon},{lat},{},{conc},{date}", r.well_id, r.county_id)?;
        }
        Ok(())
    }

    pub fn write_candidates_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "well_id,lon,lat,county_id,previously_tested")?;
        for c in &self.candidates {
            let (lon, lat) = match c.coords {
                Some(Coordinates::Geographic { lon, lat }) => (fmt_coord(lon), fmt_coord(lat)),
                _ => (String::new(), String::new()),
            };
            writeln!(out, "{},{lon},{lat},{},{}", c.well_id, c.county_id, u8::from(c.previously_tested))?;
        }
        Ok(())
    }

    pub fn write_truth_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "well_id,county_id,region,p,tested")?;
        for t in &self.truth {
            writeln!(out, "{},{},{},{},{}", t.well_id, t.county_id, t.region, t.p, u8::from(t.tested))?;
        }
        Ok(())
    }

    /// County boundaries as a GeoJSON FeatureCollection in lon/lat.
    pub fn counties_geojson(&self) -> serde_json::Value {
        let regions = self.spec.regions();
        let features: Vec<serde_json::Value> = self
            .counties
            .iter()
            .zip(&regions)
            .map(|(c, &region)| {
                let rings: Vec<Vec<[f64; 2]>> = c
                    .rings()
                    .iter()
                    .map(|ring| {
                        ring.iter()
                            .map(|&p| {
                                let (lon, lat) = self.spec.to_lonlat(p);
                                [parse_coord(lon), parse_coord(lat)]
                            })
                            .collect()
                    })
                    .collect();
                serde_json::json!({
                    "type": "Feature",
                    "properties": {"county_id": c.county_id(), "region": region},
                    "geometry": {"type": "Polygon", "coordinates": rings},
                })
            })
            .collect();
        serde_json::json!({"type": "FeatureCollection", "features": features})
    }
}

fn fmt_coord(v: f64) -> String {
    format!("{v:.7}")
}

fn parse_coord(v: f64) -> f64 {
    fmt_coord(v).parse().expect("formatted float parses")
}

/// Adjusted Rand index between two labelings of the same items.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len(), "labelings differ in length");
    let n = a.len();
    let mut table: HashMap<(usize, usize), u64> = HashMap::new();
    let mut rows: HashMap<usize, u64> = HashMap::new();
    let mut cols: HashMap<usize, u64> = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1;
        *rows.entry(x).or_default() += 1;
        *cols.entry(y).or_default() += 1;
    }
    let c2 = |m: u64| (m * m.saturating_sub(1)) as f64 / 2.0;
    let index: f64 = table.values().map(|&m| c2(m)).sum();
    let sa: f64 = rows.values().map(|&m| c2(m)).sum();
    let sb: f64 = cols.values().map(|&m| c2(m)).sum();
    let total = c2(n as u64);
    let expected = sa * sb / total;
    let max = 0.5 * (sa + sb);
    if max == expected {
        return 1.0;
    }
    (index - expected) / (max - expected)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::aggregate_observations;

    fn small() -> SimulationSpec {
        SimulationSpec { n_wells: 600, missing_location_rows: 3, seed: 9, ..Default::default() }
    }

    #[test]
    fn bands_follow_columns() {
        let spec = SimulationSpec { county_cols: 6, county_rows: 4, ..Default::default() };
        let r = spec.regions();
        assert_eq!(&r[..6], &[0, 0, 1, 1, 2, 2]);
        assert_eq!(&r[6..12], &[0, 0, 1, 1, 2, 2]);
    }

    #[test]
    fn rejects_bad_probabilities() {
        for p in [0.0, 1.0, -0.2, 1.5] {
            let spec = SimulationSpec { region_p: vec![0.2, p], ..Default::default() };
            assert!(matches!(simulate(&spec), Err(Error::Parameter(_))));
        }
    }

    #[test]
    fn same_seed_same_files() {
        let a = simulate(&small()).unwrap();
        let b = simulate(&small()).unwrap();
        let (mut fa, mut fb) = (Vec::new(), Vec::new());
        a.write_records_csv(&mut fa).unwrap();
        b.write_records_csv(&mut fb).unwrap();
        assert_eq!(fa, fb);
        let c = simulate(&SimulationSpec { seed: 10, ..small() }).unwrap();
        let mut fc = Vec::new();
        c.write_records_csv(&mut fc).unwrap();
        assert_ne!(fa, fc);
    }

    #[test]
    fn counts_and_aggregation() {
        let data = simulate(&small()).unwrap();
        assert_eq!(data.candidates.len(), 600);
        assert_eq!(data.candidates.iter().filter(|c| c.previously_tested).count(), 300);
        let obs = aggregate_observations(&data.records, DEFAULT_THRESHOLD_MG_L, None).unwrap();
        assert_eq!(obs.report.missing_location, 3);
        assert_eq!(obs.len(), 300);
        let regions = data.regions_of(&obs).unwrap();
        assert_eq!(regions.len(), 300);
    }

    #[test]
    fn no_tests_means_no_existing_wells() {
        let data = simulate(&SimulationSpec { tested_fraction: 0.0, ..small() }).unwrap();
        assert!(data.candidates.iter().all(|c| !c.previously_tested));
        assert!(data.records.iter().all(|r| r.coords.is_none()));
    }

    #[test]
    fn written_files_read_back() {
        let data = simulate(&small()).unwrap();
        let mut buf = Vec::new();
        data.write_records_csv(&mut buf).unwrap();
        let back = crate::ingest::read_test_records_from(&buf[..], std::path::Path::new("mem")).unwrap();
        assert_eq!(back.len(), data.records.len());
        let mut buf = Vec::new();
        data.write_candidates_csv(&mut buf).unwrap();
        let back = crate::ingest::read_candidates_from(&buf[..], std::path::Path::new("mem")).unwrap();
        assert_eq!(back.len(), 600);
        let geo = data.counties_geojson().to_string();
        let proj = data.spec.projection();
        let counties = crate::ingest::parse_counties_geojson(&geo, Some(&proj)).unwrap();
        let total: f64 = counties.iter().map(|c| c.area()).sum();
        assert!((total - 300.0 * 200.0).abs() < 1e-2 * 60000.0 * 1e-3);
    }

    #[test]
    fn ari_examples() {
        assert_eq!(adjusted_rand_index(&[0, 0, 1, 1], &[5, 5, 7, 7]), 1.0);
        assert_eq!(adjusted_rand_index(&[0, 0, 0], &[1, 1, 1]), 1.0);
        // standard worked example: contingency [[1,1],[1,1]] has ARI -0.5
        let ari = adjusted_rand_index(&[0, 0, 1, 1], &[0, 1, 0, 1]);
        assert!((ari + 0.5).abs() < 1e-12);
    }
}
