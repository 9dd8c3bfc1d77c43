//! Markdown summary and SVG maps built from the artifacts of a run.

use std::collections::HashMap;
use std::fmt::Write;
use std::path::Path;

use wellplan::CountyPolygon;

use crate::artifacts as art;
use crate::error::{CliError, Result};
use crate::pipeline::StageOutput;
use crate::rundir::{RunManifest, MANIFEST_FILE};
use crate::svg::{self, Marker, Shape};

/// Loads an artifact, noting it as missing instead of failing.
fn optional<T>(loaded: Result<T>, missing: &mut Vec<String>) -> Result<Option<T>> {
    match loaded {
        Ok(v) => Ok(Some(v)),
        Err(CliError::MissingArtifact(path)) => {
            missing.push(path.display().to_string());
            Ok(None)
        }
        Err(e) => Err(e),
    }
}

fn manifest_warnings(run_dir: &Path) -> Result<Vec<String>> {
    let path = run_dir.join(MANIFEST_FILE);
    if !path.is_file() {
        return Ok(Vec::new());
    }
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    let manifest: RunManifest = serde_json::from_str(&text).map_err(|e| CliError::artifact(&path, e))?;
    Ok(manifest
        .stages
        .iter()
        .filter(|(name, _)| name.as_str() != "report")
        .flat_map(|(name, s)| s.warnings.iter().map(move |w| format!("{name}: {w}")))
        .collect())
}

pub fn report(run_dir: &Path) -> Result<StageOutput> {
    let mut out = StageOutput::default();
    let mut missing = Vec::new();
    let fit = optional(art::read_fit(run_dir), &mut missing)?;
    let sizing = optional(art::read_sizing(run_dir), &mut missing)?;
    let design = optional(art::read_design_summary(run_dir), &mut missing)?;
    let counties = optional(art::read_counties(run_dir), &mut missing)?;
    let observations = optional(art::read_observations(run_dir), &mut missing)?;
    let warnings = manifest_warnings(run_dir)?;

    let mut md = String::from("# Well sampling report\n");
    if let Some(fit) = &fit {
        writeln!(
            md,
            "\n## Clusters\n\nSelected penalty {:e}, BIC {:.3}, {} clusters, converged: {}.\n",
            fit.rho, fit.bic, fit.n_clusters, fit.converged
        )
        .unwrap();
        md.push_str("| cluster | wells | positives | p_hat | clamped |\n|---:|---:|---:|---:|:---|\n");
        for c in &fit.clusters {
            writeln!(
                md,
                "| {} | {} | {} | {:.4} | {} |",
                c.id,
                c.size,
                c.positives,
                c.p_hat,
                if c.clamped { "yes" } else { "no" }
            )
            .unwrap();
        }
    }
    if let Some(rows) = &sizing {
        md.push_str("\n## Sample sizes\n\n| cluster | p | delta | confidence | Wilson | Jeffreys |\n|---:|---:|---:|---:|---:|---:|\n");
        for r in rows {
            writeln!(
                md,
                "| {} | {:.4} | {:.5} | {:.2} | {} | {} |",
                r.cluster_id, r.p, r.delta, r.confidence, r.n_wilson, r.n_jeffreys
            )
            .unwrap();
        }
    }
    if let Some(rows) = &design {
        md.push_str(
            "\n## Sampling design\n\n| cluster | area km² | existing | required | expected | selected | over-sampled cells | deficient cells |\n\
             |---:|---:|---:|---:|---:|---:|---:|---:|\n",
        );
        for r in rows {
            writeln!(
                md,
                "| {} | {:.1} | {} | {:.0} | {:.1} | {} | {} | {} |",
                r.cluster_id,
                r.area_km2,
                r.existing,
                r.required,
                r.expected,
                r.selected,
                r.oversampled_cells,
                r.deficient_cells
            )
            .unwrap();
        }
    }
    if !warnings.is_empty() {
        md.push_str("\n## Warnings\n\n");
        for w in &warnings {
            writeln!(md, "- {w}").unwrap();
        }
    }
    if !missing.is_empty() {
        md.push_str("\n## Missing artifacts\n\n");
        for m in &missing {
            let rel = Path::new(m).strip_prefix(run_dir).map_or(m.clone(), |p| p.display().to_string());
            writeln!(md, "- {rel}").unwrap();
        }
    }

    if let (Some(counties), Some(obs), Some(fit)) = (&counties, &observations, &fit) {
        if fit.labels.len() == obs.len() {
            let shapes: Vec<Shape> = counties.iter().map(|c| Shape { polygon: c, fill: "#ffffff" }).collect();
            let markers: Vec<Marker> = obs
                .iter()
                .zip(&fit.labels)
                .map(|(o, &l)| Marker { at: o.site, fill: svg::color(l), radius: 1.5 })
                .collect();
            out.files.push((art::CLUSTER_MAP.into(), svg::render("Clusters", &shapes, &markers).into_bytes()));
            md.push_str("\n![clusters](clusters.svg)\n");
        }
    }
    if let (Some(counties), Some(obs), true) = (&counties, &observations, design.is_some()) {
        let plan = art::read_plan(run_dir)?;
        let regions = art::read_regions(run_dir)?;
        let candidates = art::read_candidates(run_dir)?;
        out.files.push((art::PLAN_MAP.into(), plan_map(counties, obs, &plan, &regions, &candidates).into_bytes()));
        md.push_str("\n![plan](plan.svg)\n");
    }

    out.message = format!(
        "report: {} sections, {} warnings, {} missing artifacts",
        [fit.is_some(), sizing.is_some(), design.is_some()].iter().filter(|&&b| b).count(),
        warnings.len(),
        missing.len()
    );
    if !missing.is_empty() {
        out.warnings.push(format!("{} artifacts missing; report is partial", missing.len()));
    }
    out.files.insert(0, (art::REPORT.into(), md.into_bytes()));
    Ok(out)
}

fn plan_map(
    counties: &[CountyPolygon],
    obs: &[wellplan::ingest::WellObservation],
    plan: &[art::PlanRow],
    regions: &[art::RegionRow],
    candidates: &[wellplan::ingest::CandidateWell],
) -> String {
    let owner: HashMap<&str, usize> = regions.iter().map(|r| (r.county_id.as_str(), r.cluster_id)).collect();
    let shapes: Vec<Shape> = counties
        .iter()
        .map(|c| Shape { polygon: c, fill: owner.get(c.county_id()).map_or("#ffffff", |&id| svg::color(id)) })
        .collect();
    let sites: HashMap<&str, wellplan::Point> = candidates.iter().map(|c| (c.well_id.as_str(), c.site)).collect();
    let mut markers: Vec<Marker> = obs.iter().map(|o| Marker { at: o.site, fill: "#999999", radius: 1.0 }).collect();
    markers.extend(
        plan.iter()
            .filter_map(|p| sites.get(p.well_id.as_str()).map(|&at| Marker { at, fill: "#000000", radius: 2.0 })),
    );
    svg::render("Sampling plan", &shapes, &markers)
}
