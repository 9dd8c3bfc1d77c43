//! Spatially balanced selection of new wells to test.
//!
//! Candidate and existing-test intensities are estimated on a grid by
//! Gaussian kernel smoothing with uniform edge correction. Within each
//! cluster region the target intensity is the required density `n_i / a_i`
//! minus the existing-test intensity, floored at zero, and every untested
//! candidate is kept independently with probability
//! `min(target / candidate, 1)` at its grid cell.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CountyPolygon, Point};
use crate::ingest::{CandidateWell, Coordinates, WellObservation};

/// Default number of cells across the window diagonal.
pub const DEFAULT_CELLS_PER_DIAMETER: f64 = 256.0;

/// Kernel truncation radius in bandwidths.
const KERNEL_RADIUS: f64 = 4.0;

/// Total area of a county in km², holes subtracted.
pub fn polygon_area(poly: &CountyPolygon) -> f64 {
    poly.area()
}

/// Rectangular lattice of square cells. Cell `(i, j)` has its centre at
/// `(x0 + (i + 1/2) cell, y0 + (j + 1/2) cell)` and is stored at `j * nx + i`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub x0: f64,
    pub y0: f64,
    pub cell: f64,
    pub nx: usize,
    pub ny: usize,
}

impl Grid {
    /// Smallest grid of `cell`-sized squares covering `bbox = [xmin, ymin, xmax, ymax]`.
    pub fn covering(bbox: [f64; 4], cell: f64) -> Result<Self> {
        if !(cell > 0.0 && cell.is_finite()) {
            return Err(Error::parameter(format!("cell size {cell} must be positive")));
        }
        let [xmin, ymin, xmax, ymax] = bbox;
        if !(xmax >= xmin && ymax >= ymin) || bbox.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("invalid bounding box"));
        }
        let nx = (((xmax - xmin) / cell).ceil() as usize).max(1);
        let ny = (((ymax - ymin) / cell).ceil() as usize).max(1);
        Ok(Grid { x0: xmin, y0: ymin, cell, nx, ny })
    }

    /// Grid over the window with cell size `diameter / 256` unless given.
    pub fn for_window(window: &Window, cell: Option<f64>) -> Result<Self> {
        let bbox = window.bbox();
        let diameter = (bbox[2] - bbox[0]).hypot(bbox[3] - bbox[1]);
        Grid::covering(bbox, cell.unwrap_or(diameter / DEFAULT_CELLS_PER_DIAMETER))
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cell_area(&self) -> f64 {
        self.cell * self.cell
    }

    pub fn center(&self, idx: usize) -> Point {
        let (i, j) = (idx % self.nx, idx / self.nx);
        Point::new(self.x0 + (i as f64 + 0.5) * self.cell, self.y0 + (j as f64 + 0.5) * self.cell)
    }

    /// Cell containing `p`, or `None` outside the grid.
    pub fn locate(&self, p: Point) -> Option<usize> {
        let fx = (p.x - self.x0) / self.cell;
        let fy = (p.y - self.y0) / self.cell;
        if !(fx >= 0.0 && fy >= 0.0) {
            return None;
        }
        // points on the far edge belong to the last cell
        let i = (fx as usize).min(if fx <= self.nx as f64 { self.nx - 1 } else { self.nx });
        let j = (fy as usize).min(if fy <= self.ny as f64 { self.ny - 1 } else { self.ny });
        (i < self.nx && j < self.ny).then_some(j * self.nx + i)
    }
}

/// Study window: the union of a set of polygons.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    polygons: Vec<CountyPolygon>,
}

impl Window {
    pub fn new(polygons: Vec<CountyPolygon>) -> Result<Self> {
        if polygons.is_empty() {
            return Err(Error::validation("window needs at least one polygon"));
        }
        Ok(Window { polygons })
    }

    pub fn polygons(&self) -> &[CountyPolygon] {
        &self.polygons
    }

    pub fn area(&self) -> f64 {
        self.polygons.iter().map(CountyPolygon::area).sum()
    }

    pub fn bbox(&self) -> [f64; 4] {
        self.polygons.iter().fold([f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY], |b, p| {
            let q = p.bbox();
            [b[0].min(q[0]), b[1].min(q[1]), b[2].max(q[2]), b[3].max(q[3])]
        })
    }

    pub fn contains(&self, p: Point) -> bool {
        self.polygons.iter().any(|poly| poly.contains(p))
    }

    /// Cells whose centre lies in the window.
    pub fn mask(&self, grid: &Grid) -> Vec<bool> {
        (0..grid.len()).map(|idx| self.contains(grid.center(idx))).collect()
    }
}

/// Rule-of-thumb bandwidth `h = s n^(-1/6)` with `s` the mean of the two
/// coordinate standard deviations.
pub fn scott_bandwidth(points: &[Point]) -> Result<f64> {
    if points.len() < 2 {
        return Err(Error::parameter("bandwidth rule needs at least two points"));
    }
    let n = points.len() as f64;
    let sd = |f: fn(&Point) -> f64| {
        let mean = points.iter().map(f).sum::<f64>() / n;
        (points.iter().map(|p| (f(p) - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    let s = 0.5 * (sd(|p| p.x) + sd(|p| p.y));
    if !(s > 0.0) {
        return Err(Error::parameter("points have no spread"));
    }
    Ok(s * n.powf(-1.0 / 6.0))
}

/// Intensity in points per km² on a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntensityField {
    pub grid: Grid,
    pub values: Vec<f64>,
    pub bandwidth: f64,
}

impl IntensityField {
    pub fn zeros(grid: Grid, bandwidth: f64) -> Self {
        IntensityField { grid, values: vec![0.0; grid.len()], bandwidth }
    }

    pub fn constant(grid: Grid, mask: &[bool], value: f64) -> Self {
        IntensityField { grid, values: mask.iter().map(|&m| if m { value } else { 0.0 }).collect(), bandwidth: 0.0 }
    }

    /// Value of the cell holding `p`; zero outside the grid.
    pub fn at(&self, p: Point) -> f64 {
        self.grid.locate(p).map_or(0.0, |i| self.values[i])
    }

    /// Riemann sum over all cells.
    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.cell_area()
    }

    /// Riemann sum over the cells in `mask`.
    pub fn integral_over(&self, mask: &[bool]) -> f64 {
        self.values.iter().zip(mask).filter(|(_, &m)| m).map(|(v, _)| v).sum::<f64>() * self.grid.cell_area()
    }

    /// Writes `x,y,value` rows for every cell.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "x,y,value")?;
        for (idx, v) in self.values.iter().enumerate() {
            let c = self.grid.center(idx);
            writeln!(out, "{},{},{}", c.x, c.y, v)?;
        }
        Ok(())
    }
}

/// Normalized Gaussian weights at integer cell offsets `-r..=r`.
fn kernel_weights(bandwidth: f64, cell: f64) -> Vec<f64> {
    let r = ((KERNEL_RADIUS * bandwidth / cell).ceil() as usize).max(1);
    let mut w: Vec<f64> = (0..=2 * r)
        .map(|k| {
            let d = (k as f64 - r as f64) * cell / bandwidth;
            (-0.5 * d * d).exp()
        })
        .collect();
    let total: f64 = w.iter().sum();
    for v in &mut w {
        *v /= total;
    }
    w
}

/// Separable convolution with zero padding.
fn convolve(grid: &Grid, data: &[f64], w: &[f64]) -> Vec<f64> {
    let (nx, ny) = (grid.nx, grid.ny);
    let r = (w.len() / 2) as isize;
    let mut rows = vec![0.0; data.len()];
    for j in 0..ny {
        let line = &data[j * nx..(j + 1) * nx];
        for (i, &v) in line.iter().enumerate() {
            if v == 0.0 {
                continue;
            }
            let lo = (i as isize - r).max(0) as usize;
            let hi = ((i as isize + r) as usize).min(nx - 1);
            for t in lo..=hi {
                rows[j * nx + t] += v * w[(t as isize - i as isize + r) as usize];
            }
        }
    }
    let mut out = vec![0.0; data.len()];
    for j in 0..ny {
        for i in 0..nx {
            let v = rows[j * nx + i];
            if v == 0.0 {
                continue;
            }
            let lo = (j as isize - r).max(0) as usize;
            let hi = ((j as isize + r) as usize).min(ny - 1);
            for t in lo..=hi {
                out[t * nx + i] += v * w[(t as isize - j as isize + r) as usize];
            }
        }
    }
    out
}

/// Gaussian kernel intensity estimate with uniform edge correction,
/// `lambda(s) = sum_k K_h(s - x_k) / e(s)` with `e(s)` the kernel mass inside
/// the window. Points are binned to cell centres; cells outside `mask` are 0.
pub fn kernel_intensity(points: &[Point], mask: &[bool], grid: &Grid, bandwidth: f64) -> Result<IntensityField> {
    if !(bandwidth > 0.0 && bandwidth.is_finite()) {
        return Err(Error::parameter(format!("bandwidth {bandwidth} must be positive")));
    }
    if points.is_empty() {
        return Err(Error::parameter("intensity estimation needs at least one point"));
    }
    if mask.len() != grid.len() {
        return Err(Error::parameter("mask does not match the grid"));
    }
    let mut counts = vec![0.0; grid.len()];
    for p in points {
        if let Some(idx) = grid.locate(*p) {
            counts[idx] += 1.0;
        }
    }
    let w = kernel_weights(bandwidth, grid.cell);
    let smoothed = convolve(grid, &counts, &w);
    let window: Vec<f64> = mask.iter().map(|&m| f64::from(u8::from(m))).collect();
    let edge = convolve(grid, &window, &w);
    let area = grid.cell_area();
    let values = smoothed
        .iter()
        .zip(&edge)
        .zip(mask)
        .map(|((&s, &e), &m)| if m && e > 0.0 { s / (e * area) } else { 0.0 })
        .collect();
    Ok(IntensityField { grid: *grid, values, bandwidth })
}

/// Union of the counties assigned to one cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterRegion {
    pub cluster_id: usize,
    pub polygons: Vec<CountyPolygon>,
    pub area_km2: f64,
    pub required_n: f64,
    pub existing_count: usize,
}

impl ClusterRegion {
    pub fn county_ids(&self) -> Vec<&str> {
        self.polygons.iter().map(CountyPolygon::county_id).collect()
    }

    pub fn contains(&self, p: Point) -> bool {
        self.polygons.iter().any(|poly| poly.contains(p))
    }

    pub fn mask(&self, grid: &Grid) -> Vec<bool> {
        (0..grid.len()).map(|idx| self.contains(grid.center(idx))).collect()
    }
}

/// Assigns each county to the cluster holding most of its observations (ties
/// to the smaller cluster id) and each county without observations to the
/// cluster of the nearest observation-bearing county centroid. Clusters that
/// win no county get no region.
pub fn assign_regions(
    counties: &[CountyPolygon],
    obs: &[WellObservation],
    labels: &[usize],
) -> Result<Vec<ClusterRegion>> {
    if obs.len() != labels.len() {
        return Err(Error::parameter("labels and observations differ in length"));
    }
    if obs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let index: HashMap<&str, usize> = counties.iter().enumerate().map(|(i, c)| (c.county_id(), i)).collect();
    if index.len() != counties.len() {
        return Err(Error::validation("duplicate county ids"));
    }
    let mut votes: Vec<BTreeMap<usize, usize>> = vec![BTreeMap::new(); counties.len()];
    for (o, &label) in obs.iter().zip(labels) {
        let &c = index.get(o.county_id.as_str()).ok_or_else(|| {
            Error::validation(format!("observation {} has unknown county {}", o.well_id, o.county_id))
        })?;
        *votes[c].entry(label).or_default() += 1;
    }
    let mut owner: Vec<Option<usize>> = votes
        .iter()
        .map(|v| {
            // BTreeMap iterates ids in ascending order, so the first maximum wins ties
            v.iter()
                .fold(None, |best: Option<(usize, usize)>, (&id, &n)| match best {
                    Some((_, bn)) if bn >= n => best,
                    _ => Some((id, n)),
                })
                .map(|(id, _)| id)
        })
        .collect();
    let centroids: Vec<Point> = counties.iter().map(CountyPolygon::centroid).collect();
    let bearing: Vec<usize> = (0..counties.len()).filter(|&c| owner[c].is_some()).collect();
    for c in 0..counties.len() {
        if owner[c].is_none() {
            let nearest = bearing
                .iter()
                .copied()
                .min_by(|&a, &b| {
                    centroids[c].dist2(&centroids[a]).total_cmp(&centroids[c].dist2(&centroids[b])).then(a.cmp(&b))
                })
                .expect("at least one county has observations");
            owner[c] = owner[nearest];
        }
    }
    let mut regions: BTreeMap<usize, ClusterRegion> = BTreeMap::new();
    for (c, poly) in counties.iter().enumerate() {
        let id = owner[c].expect("every county assigned");
        let region = regions.entry(id).or_insert_with(|| ClusterRegion {
            cluster_id: id,
            polygons: Vec::new(),
            area_km2: 0.0,
            required_n: 0.0,
            existing_count: 0,
        });
        region.area_km2 += poly.area();
        region.existing_count += votes[c].values().sum::<usize>();
        region.polygons.push(poly.clone());
    }
    Ok(regions.into_values().collect())
}

/// Target intensity of one region with the cells where existing tests
/// already exceed the required density.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetField {
    pub cluster_id: usize,
    pub field: IntensityField,
    /// Cells of the region.
    pub region_mask: Vec<bool>,
    /// Region cells where the existing intensity exceeded `n_i / a_i`.
    pub oversampled: Vec<bool>,
}

impl TargetField {
    pub fn oversampled_count(&self) -> usize {
        self.oversampled.iter().filter(|&&o| o).count()
    }
}

/// `max(n_i / a_i - existing, 0)` on the region's cells.
pub fn target_intensity(region: &ClusterRegion, existing: &IntensityField) -> Result<TargetField> {
    let mask = region.mask(&existing.grid);
    target_intensity_masked(region, existing, mask)
}

/// [`target_intensity`] with a precomputed region mask.
pub fn target_intensity_masked(
    region: &ClusterRegion,
    existing: &IntensityField,
    mask: Vec<bool>,
) -> Result<TargetField> {
    if mask.len() != existing.grid.len() {
        return Err(Error::parameter("mask does not match the grid"));
    }
    if !(region.area_km2 > 0.0) {
        return Err(Error::validation(format!("cluster {} region has no area", region.cluster_id)));
    }
    if !(region.required_n >= 0.0 && region.required_n.is_finite()) {
        return Err(Error::parameter("required sample size must be nonnegative"));
    }
    let base = region.required_n / region.area_km2;
    let mut values = vec![0.0; mask.len()];
    let mut oversampled = vec![false; mask.len()];
    for (idx, &m) in mask.iter().enumerate() {
        if m {
            let d = base - existing.values[idx];
            values[idx] = d.max(0.0);
            oversampled[idx] = d < 0.0;
        }
    }
    Ok(TargetField {
        cluster_id: region.cluster_id,
        field: IntensityField { grid: existing.grid, values, bandwidth: existing.bandwidth },
        region_mask: mask,
        oversampled,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RenormalizeMode {
    #[default]
    Off,
    Rescale,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Renormalized {
    pub field: IntensityField,
    pub iterations: usize,
    /// The ceiling leaves too little room to reach the required count.
    pub infeasible: bool,
}

/// Rescales the positive cells of `target` so that its integral, capped by
/// `ceiling` where given, equals `required_n`.
pub fn renormalize_target(
    target: &IntensityField,
    ceiling: Option<&IntensityField>,
    required_n: f64,
    mode: RenormalizeMode,
) -> Renormalized {
    let mut field = target.clone();
    if mode == RenormalizeMode::Off || required_n <= 0.0 {
        return Renormalized { field, iterations: 0, infeasible: false };
    }
    let cap = |idx: usize| ceiling.map_or(f64::INFINITY, |c| c.values[idx]);
    let area = field.grid.cell_area();
    let capped_total =
        |f: &IntensityField| f.values.iter().enumerate().map(|(i, &v)| v.min(cap(i))).sum::<f64>() * area;
    let mut iterations = 0;
    for _ in 0..10 {
        let total = capped_total(&field);
        if (total - required_n).abs() <= 1e-12 * required_n {
            break;
        }
        let (mut free, mut fixed) = (0.0, 0.0);
        for (i, &v) in field.values.iter().enumerate() {
            if v <= 0.0 {
                continue;
            }
            if v >= cap(i) {
                fixed += cap(i);
            } else {
                free += v;
            }
        }
        let (free, fixed) = (free * area, fixed * area);
        if free <= 0.0 {
            break;
        }
        iterations += 1;
        let scale = ((required_n - fixed) / free).max(0.0);
        for (i, v) in field.values.iter_mut().enumerate() {
            if *v > 0.0 && *v < cap(i) {
                *v = (*v * scale).min(cap(i));
            }
        }
    }
    let infeasible = capped_total(&field) < required_n * (1.0 - 1e-3);
    Renormalized { field, iterations, infeasible }
}

/// Grid cell where the target exceeded the candidate intensity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeficientCell {
    pub cluster_id: usize,
    pub cell: usize,
    pub x: f64,
    pub y: f64,
    pub target: f64,
    pub candidate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    /// Position in the candidate list passed to the thinning step.
    pub index: usize,
    pub well_id: String,
    pub cluster_id: usize,
    pub selection_prob: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SamplePlan {
    pub selected: Vec<Selection>,
    pub per_cluster_counts: BTreeMap<usize, usize>,
    pub rng_seed: u64,
    pub deficiency_report: Vec<DeficientCell>,
    /// `integral of min(target, candidate)` per cluster.
    pub expected_counts: BTreeMap<usize, f64>,
}

impl SamplePlan {
    pub fn len(&self) -> usize {
        self.selected.len()
    }

    pub fn is_empty(&self) -> bool {
        self.selected.is_empty()
    }

    /// Appends another cluster's plan.
    pub fn merge(&mut self, other: SamplePlan) {
        self.selected.extend(other.selected);
        for (k, v) in other.per_cluster_counts {
            *self.per_cluster_counts.entry(k).or_default() += v;
        }
        for (k, v) in other.expected_counts {
            *self.expected_counts.entry(k).or_default() += v;
        }
        self.deficiency_report.extend(other.deficiency_report);
    }
}

/// 64-bit FNV-1a.
fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3))
}

/// Uniform draw for one well, independent of the order wells are visited.
pub fn well_uniform(seed: u64, well_id: &str) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(fnv1a(well_id.as_bytes()));
    rng.gen::<f64>()
}

/// Keeps each untested candidate independently with probability
/// `min(target / candidate, 1)` at its cell. Only candidates inside the
/// target's region are considered.
pub fn thin_candidates(
    candidates: &[CandidateWell],
    target: &TargetField,
    candidate_field: &IntensityField,
    seed: u64,
) -> Result<SamplePlan> {
    let grid = &target.field.grid;
    if candidate_field.grid != *grid {
        return Err(Error::parameter("target and candidate fields use different grids"));
    }
    let cluster_id = target.cluster_id;
    let area = grid.cell_area();

    let mut deficiency_report = Vec::new();
    let mut expected = 0.0;
    for (idx, (&t, &c)) in target.field.values.iter().zip(&candidate_field.values).enumerate() {
        if !target.region_mask[idx] || t <= 0.0 {
            continue;
        }
        expected += t.min(c) * area;
        if t > c {
            let centre = grid.center(idx);
            deficiency_report.push(DeficientCell {
                cluster_id,
                cell: idx,
                x: centre.x,
                y: centre.y,
                target: t,
                candidate: c,
            });
        }
    }

    let mut selected = Vec::new();
    for (index, cand) in candidates.iter().enumerate() {
        if cand.previously_tested {
            continue;
        }
        let Some(cell) = grid.locate(cand.site) else { continue };
        if !target.region_mask[cell] {
            continue;
        }
        let t = target.field.values[cell];
        if t <= 0.0 {
            continue;
        }
        let c = candidate_field.values[cell];
        let prob = if c > 0.0 { (t / c).min(1.0) } else { 1.0 };
        if well_uniform(seed, &cand.well_id) < prob {
            selected.push(Selection { index, well_id: cand.well_id.clone(), cluster_id, selection_prob: prob });
        }
    }
    let mut per_cluster_counts = BTreeMap::new();
    per_cluster_counts.insert(cluster_id, selected.len());
    let mut expected_counts = BTreeMap::new();
    expected_counts.insert(cluster_id, expected);
    Ok(SamplePlan { selected, per_cluster_counts, rng_seed: seed, deficiency_report, expected_counts })
}

fn lon_lat(c: &CandidateWell) -> (f64, f64) {
    match c.coords {
        Coordinates::Geographic { lon, lat } => (lon, lat),
        Coordinates::Planar(p) => (p.x, p.y),
    }
}

/// Writes `well_id,lon,lat,cluster_id,selection_prob`; planar inputs keep
/// their planar coordinates in the `lon,lat` columns.
pub fn write_plan_csv<W: Write>(plan: &SamplePlan, candidates: &[CandidateWell], mut out: W) -> std::io::Result<()> {
    writeln!(out, "well_id,lon,lat,cluster_id,selection_prob")?;
    for s in &plan.selected {
        let (lon, lat) = lon_lat(&candidates[s.index]);
        writeln!(out, "{},{},{},{},{}", s.well_id, lon, lat, s.cluster_id, s.selection_prob)?;
    }
    Ok(())
}

/// Selected wells as a GeoJSON FeatureCollection of points.
pub fn plan_geojson(plan: &SamplePlan, candidates: &[CandidateWell]) -> serde_json::Value {
    let features: Vec<serde_json::Value> = plan
        .selected
        .iter()
        .map(|s| {
            let (lon, lat) = lon_lat(&candidates[s.index]);
            serde_json::json!({
                "type": "Feature",
                "properties": {"well_id": s.well_id, "cluster_id": s.cluster_id, "selection_prob": s.selection_prob},
                "geometry": {"type": "Point", "coordinates": [lon, lat]},
            })
        })
        .collect();
    serde_json::json!({"type": "FeatureCollection", "features": features})
}
