//! Data sets on disk: a `manifest.json` plus one FGRID file per measurement.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use shg_core::data::{DataSet, ForwardModel};
use shg_core::{GridSpec, TraceKind};

use crate::fgrid::{Fgrid, FgridError};

pub const BOUNDARY_ORDER: &str = "counterclockwise from (x0, y0), corners once";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridRecord {
    pub nx: usize,
    pub ny: usize,
    pub x0: f64,
    pub y0: f64,
    pub lx: f64,
    pub ly: f64,
}

impl From<&GridSpec> for GridRecord {
    fn from(g: &GridSpec) -> Self {
        Self {
            nx: g.nx,
            ny: g.ny,
            x0: g.x0,
            y0: g.y0,
            lx: g.lx,
            ly: g.ly,
        }
    }
}

impl GridRecord {
    pub fn spec(&self) -> shg_core::Result<GridSpec> {
        GridSpec::new(self.nx, self.ny, self.x0, self.y0, self.lx, self.ly)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub n_s: usize,
    pub model: String,
    pub noise_level: f64,
    pub seed: u64,
    pub fine_factor: usize,
    pub grid: GridRecord,
    pub boundary_order: String,
    pub h: Vec<String>,
    pub e: Vec<String>,
    pub j_u: Vec<String>,
    pub j_v: Vec<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error(transparent)]
    Fgrid(#[from] FgridError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("manifest: {0}")]
    Manifest(#[from] serde_json::Error),
    #[error("unknown forward model {0:?}")]
    Model(String),
    #[error(transparent)]
    Core(#[from] shg_core::Error),
}

pub fn model_name(m: ForwardModel) -> &'static str {
    match m {
        ForwardModel::Coupled => "coupled",
        ForwardModel::OneWay => "one_way",
    }
}

fn parse_model(s: &str) -> Result<ForwardModel, DatasetError> {
    match s {
        "coupled" => Ok(ForwardModel::Coupled),
        "one_way" => Ok(ForwardModel::OneWay),
        _ => Err(DatasetError::Model(s.into())),
    }
}

/// Write `d` under `dir`; returns every file written, manifest last.
pub fn write(d: &DataSet, grid: &GridSpec, dir: &Path) -> Result<Vec<PathBuf>, DatasetError> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut put = |name: String, f: Fgrid| -> Result<String, DatasetError> {
        let p = dir.join(&name);
        f.write(&p)?;
        written.push(p);
        Ok(name)
    };
    let mut m = Manifest {
        n_s: d.h.len(),
        model: model_name(d.model).into(),
        noise_level: d.noise_level,
        seed: d.seed,
        fine_factor: d.fine_factor,
        grid: grid.into(),
        boundary_order: BOUNDARY_ORDER.into(),
        h: Vec::new(),
        e: Vec::new(),
        j_u: Vec::new(),
        j_v: Vec::new(),
    };
    for (j, h) in d.h.iter().enumerate() {
        m.h.push(put(format!("H_{j:03}.fgrd"), Fgrid::from_real(h))?);
    }
    for (j, e) in d.e.iter().flatten().enumerate() {
        m.e.push(put(format!("E_{j:03}.fgrd"), Fgrid::from_complex(e))?);
    }
    for (j, t) in d.j_u.iter().flatten().enumerate() {
        m.j_u.push(put(format!("J_u_{j:03}.fgrd"), Fgrid::from_trace(t))?);
    }
    for (j, t) in d.j_v.iter().flatten().enumerate() {
        m.j_v.push(put(format!("J_v_{j:03}.fgrd"), Fgrid::from_trace(t))?);
    }
    let p = dir.join("manifest.json");
    fs::write(&p, serde_json::to_string_pretty(&m)? + "\n")?;
    written.push(p);
    Ok(written)
}

pub fn read(dir: &Path) -> Result<(DataSet, GridSpec), DatasetError> {
    let m: Manifest = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
    let grid = m.grid.spec()?;
    let load = |name: &String| Fgrid::read(&dir.join(name));
    let h = m.h.iter().map(|n| Ok(load(n)?.into_real()?)).collect::<Result<Vec<_>, DatasetError>>()?;
    let e = m.e.iter().map(|n| Ok(load(n)?.into_complex()?)).collect::<Result<Vec<_>, DatasetError>>()?;
    let trace = |names: &[String]| {
        names
            .iter()
            .map(|n| Ok(load(n)?.into_trace(grid, TraceKind::Neumann)?))
            .collect::<Result<Vec<_>, DatasetError>>()
    };
    let (j_u, j_v) = (trace(&m.j_u)?, trace(&m.j_v)?);
    let data = DataSet {
        h,
        e: (!e.is_empty()).then_some(e),
        j_u: (!j_u.is_empty()).then_some(j_u),
        j_v: (!j_v.is_empty()).then_some(j_v),
        noise_level: m.noise_level,
        seed: m.seed,
        model: parse_model(&m.model)?,
        fine_factor: m.fine_factor,
    };
    Ok((data, grid))
}
