#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use wellplan_cli::config::RhoGrid;
use wellplan_cli::{load_config, run_stages, RunConfig, Stage};

pub const RECORD_HEADER: &str = "well_id,lon,lat,county_id,concentration_mg_l,collected_at";

/// Runs the binary with `args`.
pub fn wellplan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wellplan")).args(args).output().expect("binary runs")
}

pub fn write(path: &Path, text: &str) -> PathBuf {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).unwrap();
    }
    fs::write(path, text).unwrap();
    path.to_path_buf()
}

pub fn write_config(path: &Path, cfg: &RunConfig) -> PathBuf {
    write(path, &serde_json::to_string_pretty(cfg).unwrap())
}

/// A small simulated study: `cols x 1` counties, one region per county.
pub fn small_study(dir: &Path, region_p: Vec<f64>, n_wells: usize, seed: u64) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.simulate.county_cols = region_p.len();
    cfg.simulate.county_rows = 1;
    cfg.simulate.width_km = 100.0 * region_p.len() as f64;
    cfg.simulate.height_km = 100.0;
    cfg.simulate.n_wells = n_wells;
    cfg.simulate.region_p = region_p;
    cfg.simulate.seed = seed;
    cfg.rho_grid = RhoGrid::Auto { count: 12, span: 1e3 };
    run_stages(cfg, dir, &[Stage::Simulate]).unwrap();
    load_config(Some(&dir.join("simulate/run_config.json")), None).unwrap()
}

pub fn read(dir: &Path, rel: &str) -> String {
    fs::read_to_string(dir.join(rel)).unwrap_or_else(|e| panic!("{rel}: {e}"))
}
