//! Vaccinated-suite directory layout: `base.carm`, one `m_q*.carm` per grid
//! quality, and a `suite.meta` text file recording the grid.

use std::path::Path;

use super::{load_model, save_model, DataError};
use crate::codec::QualityFactor;
use crate::defense::{QualityGrid, VaccinatedSuite};

pub fn save_suite(suite: &VaccinatedSuite, dir: &Path) -> Result<(), DataError> {
    std::fs::create_dir_all(dir)?;
    save_model(suite.base(), &dir.join("base.carm"))?;
    for (q, model) in suite.models() {
        save_model(model, &dir.join(format!("m_q{:03}.carm", q.get())))?;
    }
    let grid: Vec<String> = suite
        .grid()
        .qualities()
        .iter()
        .map(|q| q.to_string())
        .collect();
    std::fs::write(
        dir.join("suite.meta"),
        format!("format=carm-suite\nversion=1\ngrid={}\n", grid.join(",")),
    )?;
    Ok(())
}

pub fn load_suite(dir: &Path) -> Result<VaccinatedSuite, DataError> {
    let meta = std::fs::read_to_string(dir.join("suite.meta"))?;
    let mut grid_field = None;
    for line in meta.lines() {
        match line.trim().split_once('=') {
            Some(("format", v)) if v != "carm-suite" => {
                return Err(DataError::Malformed(format!("not a suite directory: format={v}")))
            }
            Some(("version", v)) if v != "1" => {
                return Err(DataError::UnsupportedVersion(v.parse().unwrap_or(0)))
            }
            Some(("grid", v)) => grid_field = Some(v.to_string()),
            _ => {}
        }
    }
    let grid_field = grid_field.ok_or_else(|| DataError::Malformed("suite.meta missing grid".into()))?;
    let mut qualities = Vec::new();
    for part in grid_field.split(',') {
        let q: u32 = part
            .trim()
            .parse()
            .map_err(|_| DataError::Malformed(format!("bad grid entry '{part}'")))?;
        qualities.push(QualityFactor::new(q).map_err(|_| DataError::Malformed(format!("bad grid entry '{part}'")))?);
    }
    let grid = QualityGrid::new(qualities)
        .map_err(|e| DataError::Malformed(format!("invalid suite grid: {e}")))?;

    let base = load_model(&dir.join("base.carm"))?;
    let mut models = Vec::with_capacity(grid.len());
    for &q in grid.qualities() {
        let model = load_model(&dir.join(format!("m_q{:03}.carm", q.get())))?;
        models.push((q, model));
    }
    VaccinatedSuite::new(base, models, grid)
        .map_err(|e| DataError::Malformed(format!("inconsistent suite: {e}")))
}
