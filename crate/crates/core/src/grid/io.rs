//! Field files: a raw little-endian `f64` payload plus a JSON sidecar header
//! stored next to it as `<file>.json`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Density, DensityField, GridSpec, MomentumField, ScalarField, SpaceGrid};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FieldKind {
    Density,
    Momentum,
    Scalar,
}

/// Sidecar header. A single density slice is stored with `nt = 0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldHeader {
    pub kind: FieldKind,
    pub d: usize,
    pub nt: usize,
    pub nx: usize,
    #[serde(rename = "R")]
    pub r: f64,
}

impl FieldHeader {
    fn expected_len(&self) -> Result<usize> {
        let space = SpaceGrid::new(self.d, self.nx, self.r)?;
        Ok(match self.kind {
            FieldKind::Density if self.nt == 0 => space.n_cells(),
            FieldKind::Density => (self.nt + 1) * space.n_cells(),
            FieldKind::Scalar => self.nt * space.n_cells(),
            FieldKind::Momentum => (0..self.d).map(|a| self.nt * space.n_faces(a)).sum(),
        })
    }

    fn grid(&self) -> Result<GridSpec> {
        GridSpec::new(self.d, self.nt, self.nx, self.r)
    }
}

fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn write_raw(path: &Path, header: FieldHeader, values: &[&[f64]]) -> Result<()> {
    let mut bytes = Vec::with_capacity(8 * values.iter().map(|v| v.len()).sum::<usize>());
    for chunk in values {
        for v in *chunk {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, bytes)?;
    let mut head = serde_json::to_string_pretty(&header)?;
    head.push('\n');
    fs::write(sidecar(path), head)?;
    Ok(())
}

pub fn read_header(path: &Path) -> Result<FieldHeader> {
    let text = fs::read_to_string(sidecar(path))?;
    Ok(serde_json::from_str(&text)?)
}

fn read_raw(path: &Path, kind: FieldKind) -> Result<(FieldHeader, Vec<f64>)> {
    let header = read_header(path)?;
    if header.kind != kind {
        return Err(Error::Invalid(format!(
            "{}: expected a {kind:?} field, found {:?}",
            path.display(),
            header.kind
        )));
    }
    let bytes = fs::read(path)?;
    let expected = header.expected_len()?;
    if bytes.len() != 8 * expected {
        return Err(Error::Shape(format!(
            "{}: payload has {} bytes, header implies {}",
            path.display(),
            bytes.len(),
            8 * expected
        )));
    }
    let values = bytes
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
        .collect();
    Ok((header, values))
}

pub fn write_density_slice(path: &Path, m: &Density) -> Result<()> {
    let s = m.space;
    let header = FieldHeader { kind: FieldKind::Density, d: s.d, nt: 0, nx: s.nx, r: s.r };
    write_raw(path, header, &[&m.values])
}

/// Reads a single slice (`nt = 0` in the header).
pub fn read_density_slice(path: &Path) -> Result<Density> {
    let (h, values) = read_raw(path, FieldKind::Density)?;
    if h.nt != 0 {
        return Err(Error::Invalid(format!(
            "{}: expected a single density slice (nt = 0), found nt = {}",
            path.display(),
            h.nt
        )));
    }
    Density::new(SpaceGrid::new(h.d, h.nx, h.r)?, values)
}

pub fn write_density(path: &Path, m: &DensityField) -> Result<()> {
    let g = m.grid;
    let header = FieldHeader { kind: FieldKind::Density, d: g.d, nt: g.nt, nx: g.nx, r: g.r };
    write_raw(path, header, &[&m.data])
}

pub fn read_density(path: &Path) -> Result<DensityField> {
    let (h, data) = read_raw(path, FieldKind::Density)?;
    Ok(DensityField { grid: h.grid()?, data })
}

pub fn write_momentum(path: &Path, w: &MomentumField) -> Result<()> {
    let g = w.grid;
    let header = FieldHeader { kind: FieldKind::Momentum, d: g.d, nt: g.nt, nx: g.nx, r: g.r };
    let parts: Vec<&[f64]> = w.comps.iter().map(|c| c.as_slice()).collect();
    write_raw(path, header, &parts)
}

pub fn read_momentum(path: &Path) -> Result<MomentumField> {
    let (h, data) = read_raw(path, FieldKind::Momentum)?;
    let grid = h.grid()?;
    let space = grid.space();
    let mut comps = Vec::with_capacity(grid.d);
    let mut start = 0;
    for a in 0..grid.d {
        let len = grid.nt * space.n_faces(a);
        comps.push(data[start..start + len].to_vec());
        start += len;
    }
    Ok(MomentumField { grid, comps })
}

pub fn write_scalar(path: &Path, s: &ScalarField) -> Result<()> {
    let g = s.grid;
    let header = FieldHeader { kind: FieldKind::Scalar, d: g.d, nt: g.nt, nx: g.nx, r: g.r };
    write_raw(path, header, &[&s.data])
}

pub fn read_scalar(path: &Path) -> Result<ScalarField> {
    let (h, data) = read_raw(path, FieldKind::Scalar)?;
    Ok(ScalarField { grid: h.grid()?, data })
}

/// Writes `x, <col>...` rows for `d = 1` plotting; each column holds one value per cell.
pub fn write_csv_1d(path: &Path, space: &SpaceGrid, columns: &[(&str, &[f64])]) -> Result<()> {
    if space.d != 1 {
        return Err(Error::Unsupported("CSV export is for d = 1".into()));
    }
    for (name, col) in columns {
        if col.len() != space.nx {
            return Err(Error::Shape(format!("column {name} has {} rows, expected {}", col.len(), space.nx)));
        }
    }
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    write!(out, "x")?;
    for (name, _) in columns {
        write!(out, ",{name}")?;
    }
    writeln!(out)?;
    for i in 0..space.nx {
        write!(out, "{:e}", space.center_coord(i))?;
        for (_, col) in columns {
            write!(out, ",{:e}", col[i])?;
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}
