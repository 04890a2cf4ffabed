//! Position-error-bound map of a single static RIS over the configured grid.

use super::config::Config;
use super::{csv_preamble, ris_pose, scenario, HarnessError};
use crate::codebook::build_schedule;
use crate::crlb::{heatmap_csv, peb_heatmap, Grid, PebCell};
use crate::geometry::Point2;

#[derive(Debug, Clone, PartialEq)]
pub struct PebMap {
    pub cells: Vec<PebCell>,
    pub csv: String,
}

pub fn run_peb_map(cfg: &Config) -> Result<PebMap, HarnessError> {
    cfg.validate()?;
    let ofdm = cfg.ofdm.params();
    let template = scenario(cfg, vec![ris_pose(cfg, &ofdm, cfg.scene.ris.into(), [0.0, 0.0], [0.0, 0.0])]);
    let sched = build_schedule(1, cfg.k_max(), cfg.scene.elements, ofdm.t, ofdm.n_t)?;
    let p = &cfg.peb;
    let grid = Grid { min: Point2::from(p.grid_min), max: Point2::from(p.grid_max), step: p.step };
    let cells = peb_heatmap(&grid, &template, &sched, &ofdm, p.exclusion_radius);
    let mut csv = csv_preamble(cfg, "peb-map");
    heatmap_csv(&cells, &mut csv);
    Ok(PebMap { cells, csv })
}
