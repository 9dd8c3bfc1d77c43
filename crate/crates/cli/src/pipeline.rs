//! Pipeline stages and the driver that records them in the run manifest.
//!
//! Each stage reads its inputs, computes its artifacts in memory and hands
//! them back as bytes; the driver writes them, hashes them and updates the
//! manifest.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use wellplan::design::{
    assign_regions, kernel_intensity, plan_geojson, renormalize_target, scott_bandwidth, target_intensity_masked,
    thin_candidates, write_plan_csv, Grid, IntensityField, SamplePlan, Window,
};
use wellplan::estimator::{log_grid, rho_max, select_rho, write_beta_csv, FitReport};
use wellplan::graph::hybrid_graph;
use wellplan::ingest::{aggregate_observations, prepare_candidates, read_candidates, read_counties, read_test_records};
use wellplan::simulate::simulate;
use wellplan::sizing::{size_rows, write_sizing_csv, SizingRow, SizingSpec};
use wellplan::Point;

use crate::artifacts::{self as art, DesignSummaryRow};
use crate::config::{RhoGrid, RunConfig, SizeMethod};
use crate::error::{CliError, Result};
use crate::report;
use crate::rundir::{file_digest, sha256_hex, RunManifest, StageRecord};

/// Directory, relative to the run directory, that `simulate` writes to.
pub const SIMULATE_DIR: &str = "simulate";
/// Configuration written next to simulated data.
pub const SIMULATED_CONFIG: &str = "simulate/run_config.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Ingest,
    Fit,
    Size,
    Design,
    Report,
    Simulate,
}

impl Stage {
    /// The analysis stages in execution order.
    pub const PIPELINE: [Stage; 5] = [Stage::Ingest, Stage::Fit, Stage::Size, Stage::Design, Stage::Report];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Fit => "fit",
            Stage::Size => "size",
            Stage::Design => "design",
            Stage::Report => "report",
            Stage::Simulate => "simulate",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Artifacts and diagnostics of one stage, not yet written.
#[derive(Debug, Default)]
pub struct StageOutput {
    /// Relative path and contents.
    pub files: Vec<(String, Vec<u8>)>,
    pub warnings: Vec<String>,
    /// External input files read by the stage.
    pub inputs: Vec<PathBuf>,
    /// One-line summary for the terminal.
    pub message: String,
}

impl StageOutput {
    fn file(&mut self, rel: &str, bytes: Vec<u8>) {
        self.files.push((rel.to_string(), bytes));
    }
}

/// Outcome of a stage after its artifacts were written.
#[derive(Debug, Clone)]
pub struct StageSummary {
    pub stage: Stage,
    pub message: String,
    pub warnings: Vec<String>,
    pub outputs: Vec<PathBuf>,
}

pub struct Pipeline {
    pub config: RunConfig,
    pub run_dir: PathBuf,
}

impl Pipeline {
    pub fn new(config: RunConfig, run_dir: impl Into<PathBuf>) -> Result<Self> {
        config.validate()?;
        Ok(Pipeline { config, run_dir: run_dir.into() })
    }

    pub fn config_hash(&self) -> String {
        sha256_hex(self.config.canonical_json().as_bytes())
    }

    /// Runs one stage, writes its artifacts and records it in the manifest.
    pub fn execute(&self, stage: Stage) -> Result<StageSummary> {
        let start = Instant::now();
        let out = match stage {
            Stage::Ingest => ingest(&self.config)?,
            Stage::Fit => fit(&self.config, &self.run_dir)?,
            Stage::Size => size(&self.config, &self.run_dir)?,
            Stage::Design => design(&self.config, &self.run_dir)?,
            Stage::Report => report::report(&self.run_dir)?,
            Stage::Simulate => simulate_data(&self.config)?,
        };
        let mut record = StageRecord { seconds: 0.0, outputs: BTreeMap::new(), warnings: out.warnings.clone() };
        let mut outputs = Vec::with_capacity(out.files.len());
        for (rel, bytes) in &out.files {
            outputs.push(art::write(&self.run_dir, rel, bytes)?);
            record.outputs.insert(rel.clone(), sha256_hex(bytes));
        }
        record.seconds = start.elapsed().as_secs_f64();

        let mut manifest = RunManifest::load_or_new(&self.run_dir, &self.config_hash())?;
        for input in &out.inputs {
            manifest.inputs.insert(input.display().to_string(), file_digest(input)?);
        }
        manifest.seeds.insert("design".into(), self.config.design.seed);
        manifest.seeds.insert("simulate".into(), self.config.simulate.seed);
        manifest.stages.insert(stage.name().into(), record);
        manifest.save(&self.run_dir)?;
        Ok(StageSummary { stage, message: out.message, warnings: out.warnings, outputs })
    }
}

fn input<'a>(path: &'a Option<PathBuf>, name: &'static str) -> Result<&'a Path> {
    let path = path.as_deref().ok_or(CliError::MissingInput(name))?;
    if path.is_file() {
        Ok(path)
    } else {
        Err(CliError::Config(format!("{name} file {} does not exist", path.display())))
    }
}

fn json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut text = serde_json::to_string_pretty(value).expect("artifact serializes");
    text.push('\n');
    text.into_bytes()
}

fn csv_bytes<T: Serialize>(rows: &[T], name: &str) -> Result<Vec<u8>> {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    for r in rows {
        wtr.serialize(r).map_err(|e| CliError::artifact(name, e))?;
    }
    wtr.into_inner().map_err(|e| CliError::artifact(name, e.error()))
}

fn buffer(f: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Vec<u8> {
    let mut buf = Vec::new();
    f(&mut buf).expect("writing to memory cannot fail");
    buf
}

#[derive(Debug, Serialize)]
struct RejectionRow<'a> {
    record: usize,
    well_id: &'a str,
    reason: wellplan::ingest::RejectReason,
}

#[derive(Debug, Serialize)]
struct IngestSummary {
    input_records: usize,
    retained_records: usize,
    rejected_missing_location: usize,
    rejected_missing_concentration: usize,
    observations: usize,
    positive_observations: usize,
    counties: usize,
    candidates: usize,
    candidates_previously_tested: usize,
    candidates_dropped: usize,
}

pub fn ingest(cfg: &RunConfig) -> Result<StageOutput> {
    let mut out = StageOutput::default();
    let obs_path = input(&cfg.inputs.observations, "observations")?;
    out.inputs.push(obs_path.to_path_buf());
    let records = read_test_records(obs_path)?;
    let set = aggregate_observations(&records, cfg.threshold_mg_l, None)?;
    let projection = set.projection.as_ref();

    let counties = match &cfg.inputs.counties {
        Some(_) => {
            let path = input(&cfg.inputs.counties, "counties")?;
            out.inputs.push(path.to_path_buf());
            read_counties(path, projection)?
        }
        None => Vec::new(),
    };
    let (candidates, dropped) = match &cfg.inputs.candidates {
        Some(_) => {
            let path = input(&cfg.inputs.candidates, "candidates")?;
            out.inputs.push(path.to_path_buf());
            prepare_candidates(&read_candidates(path)?, projection, &counties)?
        }
        None => (Vec::new(), 0),
    };

    let report = &set.report;
    let rejections: Vec<RejectionRow> = report
        .rejected
        .iter()
        .map(|&(idx, reason)| RejectionRow { record: idx + 1, well_id: &records[idx].well_id, reason })
        .collect();
    let summary = IngestSummary {
        input_records: report.input,
        retained_records: report.retained,
        rejected_missing_location: report.missing_location,
        rejected_missing_concentration: report.missing_concentration,
        observations: set.len(),
        positive_observations: set.observations.iter().filter(|o| o.y == 1).count(),
        counties: counties.len(),
        candidates: candidates.len(),
        candidates_previously_tested: candidates.iter().filter(|c| c.previously_tested).count(),
        candidates_dropped: dropped,
    };
    if dropped > 0 {
        out.warnings.push(format!("{dropped} candidates dropped for lacking a location inside the study counties"));
    }
    out.message = format!(
        "ingest: {} of {} records retained ({} rejected), {} observations, {} candidates",
        report.retained,
        report.input,
        report.rejected_count(),
        set.len(),
        candidates.len()
    );
    out.file(art::OBSERVATIONS, art::observations_csv(&set.observations));
    out.file(art::CANDIDATES, art::candidates_csv(&candidates));
    if !counties.is_empty() {
        out.file(art::COUNTIES, art::counties_geojson(&counties));
    }
    out.file(art::REJECTIONS, csv_bytes(&rejections, art::REJECTIONS)?);
    out.file(art::INGEST_SUMMARY, json_bytes(&summary));
    Ok(out)
}

pub fn fit(cfg: &RunConfig, run_dir: &Path) -> Result<StageOutput> {
    let mut out = StageOutput::default();
    let obs = art::read_observations(run_dir)?;
    let y: Vec<u8> = obs.iter().map(|o| o.y).collect();
    let graph = hybrid_graph(&obs, cfg.graph)?;
    let grid = match &cfg.rho_grid {
        RhoGrid::Auto { count, span } => log_grid(rho_max(&y, &graph, &cfg.fit)?, *span, *count),
        RhoGrid::Explicit { values } => values.clone(),
    };
    let selection = select_rho(&y, &graph, &grid, &cfg.fit)?;
    let best = &selection.best;

    for p in &selection.path {
        if !p.converged {
            out.warnings.push(format!("fit at rho {:e} did not converge in {} iterations", p.rho, p.iterations));
        }
        if p.prox_failures > 0 {
            out.warnings
                .push(format!("fit at rho {:e}: {} inner solves hit their iteration cap", p.rho, p.prox_failures));
        }
    }
    let report = FitReport::from(best);
    for c in report.clusters.iter().filter(|c| c.clamped) {
        out.warnings.push(format!("cluster {} proportion clamped to {}", c.id, c.p_hat));
    }
    out.message = format!(
        "fit: {} observations, {} edges, {} rho values, selected rho {:e} with {} clusters (BIC {:.3})",
        obs.len(),
        graph.n_edges(),
        grid.len(),
        best.rho,
        best.n_clusters,
        best.bic
    );
    out.file(art::GRAPH, buffer(|b| graph.write_edge_csv(b)));
    out.file(art::FIT, json_bytes(&report));
    out.file(art::BETA, buffer(|b| write_beta_csv(&best.beta, b)));
    out.file(art::BIC_PATH, csv_bytes(&selection.path, art::BIC_PATH)?);
    Ok(out)
}

pub fn size(cfg: &RunConfig, run_dir: &Path) -> Result<StageOutput> {
    let mut out = StageOutput::default();
    let fit = art::read_fit(run_dir)?;
    let mut requests = Vec::with_capacity(fit.clusters.len() * cfg.sizing.confidences.len());
    for c in &fit.clusters {
        for &level in &cfg.sizing.confidences {
            requests.push((c.id.to_string(), SizingSpec::relative(c.p_hat, cfg.sizing.delta_fraction, level)?));
        }
    }
    let rows = size_rows(&requests, cfg.sizing.include_boundary_terms)?;
    let mut bytes = Vec::new();
    write_sizing_csv(&rows, &mut bytes)?;
    out.message = format!("size: {} rows for {} clusters", rows.len(), fit.clusters.len());
    out.file(art::SIZING, bytes);
    Ok(out)
}

fn required_size(rows: &[SizingRow], cluster: usize, cfg: &RunConfig) -> Result<u64> {
    let id = cluster.to_string();
    let row = rows
        .iter()
        .find(|r| r.cluster_id == id && (r.confidence - cfg.sizing.design_confidence).abs() < 1e-12)
        .ok_or_else(|| {
        CliError::Config(format!(
            "sizing table has no row for cluster {cluster} at confidence {}",
            cfg.sizing.design_confidence
        ))
    })?;
    Ok(match cfg.sizing.design_method {
        SizeMethod::Jeffreys => row.n_jeffreys,
        SizeMethod::Wilson => row.n_wilson,
    })
}

fn intensity(points: &[Point], mask: &[bool], grid: &Grid, bandwidth: f64) -> Result<IntensityField> {
    if points.is_empty() {
        Ok(IntensityField::zeros(*grid, bandwidth))
    } else {
        Ok(kernel_intensity(points, mask, grid, bandwidth)?)
    }
}

#[derive(Debug, Serialize)]
struct RegionRow<'a> {
    county_id: &'a str,
    cluster_id: usize,
}

#[derive(Debug, Serialize)]
struct DeficiencyDoc<'a> {
    bandwidth_km: f64,
    cell_km: f64,
    infeasible_clusters: Vec<usize>,
    clusters_without_region: Vec<usize>,
    cells: &'a [wellplan::design::DeficientCell],
}

pub fn design(cfg: &RunConfig, run_dir: &Path) -> Result<StageOutput> {
    let mut out = StageOutput::default();
    let obs = art::read_observations(run_dir)?;
    let candidates = art::read_candidates(run_dir)?;
    let counties = art::read_counties(run_dir)?;
    let fit = art::read_fit(run_dir)?;
    let sizing = art::read_sizing(run_dir)?;
    if fit.labels.len() != obs.len() {
        return Err(CliError::artifact(run_dir.join(art::FIT), "labels do not match the observations"));
    }

    let mut regions = assign_regions(&counties, &obs, &fit.labels)?;
    let window = Window::new(counties)?;
    let grid = Grid::for_window(&window, cfg.design.cell_km)?;
    let mask = window.mask(&grid);
    let untested: Vec<Point> = candidates.iter().filter(|c| !c.previously_tested).map(|c| c.site).collect();
    let existing: Vec<Point> = obs.iter().map(|o| o.site).collect();
    let bandwidth = match cfg.design.bandwidth_km {
        Some(h) => h,
        None if untested.len() >= 2 => scott_bandwidth(&untested)?,
        None => scott_bandwidth(&existing)?,
    };
    let candidate_field = intensity(&untested, &mask, &grid, bandwidth)?;
    let existing_field = intensity(&existing, &mask, &grid, bandwidth)?;

    let mut plan = SamplePlan { rng_seed: cfg.design.seed, ..SamplePlan::default() };
    let mut target_total = IntensityField::zeros(grid, bandwidth);
    let mut summary = Vec::with_capacity(regions.len());
    let mut infeasible_clusters = Vec::new();
    for region in &mut regions {
        let id = region.cluster_id;
        region.required_n = required_size(&sizing, id, cfg)? as f64;
        let region_mask = region.mask(&grid);
        let mut target = target_intensity_masked(region, &existing_field, region_mask)?;
        let renorm =
            renormalize_target(&target.field, Some(&candidate_field), region.required_n, cfg.design.renormalize);
        target.field = renorm.field;
        let part = thin_candidates(&candidates, &target, &candidate_field, cfg.design.seed)?;
        for (t, v) in target_total.values.iter_mut().zip(&target.field.values) {
            *t += v;
        }
        let deficient = part.deficiency_report.len();
        if deficient > 0 {
            out.warnings
                .push(format!("cluster {id}: candidate intensity falls short of the target in {deficient} cells"));
        }
        if renorm.infeasible {
            infeasible_clusters.push(id);
            out.warnings.push(format!("cluster {id}: required sample size {} cannot be reached", region.required_n));
        }
        summary.push(DesignSummaryRow {
            cluster_id: id,
            area_km2: region.area_km2,
            existing: region.existing_count,
            required: region.required_n,
            expected: part.expected_counts.get(&id).copied().unwrap_or(0.0),
            selected: part.len(),
            oversampled_cells: target.oversampled_count(),
            deficient_cells: deficient,
            infeasible: renorm.infeasible,
        });
        plan.merge(part);
    }
    let clusters_without_region: Vec<usize> =
        (0..fit.n_clusters).filter(|id| !regions.iter().any(|r| r.cluster_id == *id)).collect();
    for id in &clusters_without_region {
        out.warnings.push(format!("cluster {id} holds no county majority and receives no design region"));
    }

    let region_rows: Vec<RegionRow> = regions
        .iter()
        .flat_map(|r| r.county_ids().into_iter().map(move |c| RegionRow { county_id: c, cluster_id: r.cluster_id }))
        .collect();
    let deficiency = DeficiencyDoc {
        bandwidth_km: bandwidth,
        cell_km: grid.cell,
        infeasible_clusters,
        clusters_without_region,
        cells: &plan.deficiency_report,
    };
    out.message = format!(
        "design: {} wells selected across {} regions (bandwidth {:.3} km, {}x{} grid)",
        plan.len(),
        regions.len(),
        bandwidth,
        grid.nx,
        grid.ny
    );
    out.file(art::PLAN_CSV, buffer(|b| write_plan_csv(&plan, &candidates, b)));
    out.file(art::PLAN_GEOJSON, json_bytes(&plan_geojson(&plan, &candidates)));
    out.file(art::DEFICIENCY, json_bytes(&deficiency));
    out.file(art::DESIGN_SUMMARY, art::design_summary_csv(&summary)?);
    out.file(art::REGIONS, csv_bytes(&region_rows, art::REGIONS)?);
    out.file(art::CANDIDATE_INTENSITY, buffer(|b| candidate_field.write_csv(b)));
    out.file(art::EXISTING_INTENSITY, buffer(|b| existing_field.write_csv(b)));
    out.file(art::TARGET_INTENSITY, buffer(|b| target_total.write_csv(b)));
    Ok(out)
}

pub fn simulate_data(cfg: &RunConfig) -> Result<StageOutput> {
    let mut out = StageOutput::default();
    let data = simulate(&cfg.simulate)?;
    let mut run_config = cfg.clone();
    run_config.inputs.observations = Some("observations.csv".into());
    run_config.inputs.candidates = Some("candidates.csv".into());
    run_config.inputs.counties = Some("counties.geojson".into());
    run_config.threshold_mg_l = cfg.simulate.threshold_mg_l;

    let dir = |name: &str| format!("{SIMULATE_DIR}/{name}");
    out.file(&dir("observations.csv"), buffer(|b| data.write_records_csv(b)));
    out.file(&dir("candidates.csv"), buffer(|b| data.write_candidates_csv(b)));
    out.file(&dir("counties.geojson"), json_bytes(&data.counties_geojson()));
    out.file(&dir("truth.csv"), buffer(|b| data.write_truth_csv(b)));
    out.file(SIMULATED_CONFIG, json_bytes(&run_config));
    out.message = format!(
        "simulate: {} records, {} candidates, {} counties (seed {}); config at {SIMULATED_CONFIG}",
        data.records.len(),
        data.candidates.len(),
        data.counties.len(),
        cfg.simulate.seed
    );
    Ok(out)
}
