//! Field dumps: a JSON header plus a raw little-endian `f64` payload, or a
//! lossless CSV with node coordinates.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{Grid, ScalarField};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DumpHeader {
    pub dim: usize,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub n_nodes: Vec<usize>,
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<String>,
}

impl DumpHeader {
    pub fn for_field(field: &ScalarField, name: &str) -> Self {
        let g = field.grid();
        DumpHeader {
            dim: g.dim(),
            lo: g.lo().to_vec(),
            hi: g.hi().to_vec(),
            n_nodes: g.n_nodes().to_vec(),
            name: name.to_string(),
            provenance: None,
        }
    }

    pub fn grid(&self) -> Result<Arc<Grid>> {
        Grid::new(self.dim, &self.lo, &self.hi, &self.n_nodes)
    }
}

/// Paths of the header/payload pair for a dump base path (`base.json`, `base.bin`).
pub fn dump_paths(base: &Path) -> (PathBuf, PathBuf) {
    (base.with_extension("json"), base.with_extension("bin"))
}

pub fn write_dump(field: &ScalarField, header: &DumpHeader, base: &Path) -> Result<()> {
    let (json_path, bin_path) = dump_paths(base);
    let text = serde_json::to_string_pretty(header)?;
    fs::write(&json_path, text).map_err(|e| Error::io(&json_path, e))?;
    let mut bytes = Vec::with_capacity(field.len() * 8);
    for v in field.values() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(&bin_path, bytes).map_err(|e| Error::io(&bin_path, e))?;
    Ok(())
}

pub fn read_dump(base: &Path) -> Result<(DumpHeader, ScalarField)> {
    let (json_path, bin_path) = dump_paths(base);
    let text = fs::read_to_string(&json_path).map_err(|e| Error::io(&json_path, e))?;
    let header: DumpHeader = serde_json::from_str(&text)?;
    let grid = header.grid()?;
    let bytes = fs::read(&bin_path).map_err(|e| Error::io(&bin_path, e))?;
    if bytes.len() != grid.len() * 8 {
        return Err(Error::Config(format!(
            "{} holds {} bytes, expected {}",
            bin_path.display(),
            bytes.len(),
            grid.len() * 8
        )));
    }
    let values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    let field = ScalarField::new(grid, values)?;
    Ok((header, field))
}

/// CSV text with one row per node: coordinates then value. Floats are written
/// in shortest round-trip form, so parsing recovers every bit.
pub fn field_to_csv(field: &ScalarField) -> String {
    let g = field.grid();
    let mut out = String::new();
    out.push_str(if g.dim() == 1 { "x,value\n" } else { "x,y,value\n" });
    for (i, v) in field.values().iter().enumerate() {
        let p = g.point(i);
        if g.dim() == 1 {
            out.push_str(&format!("{},{}\n", p[0], v));
        } else {
            out.push_str(&format!("{},{},{}\n", p[0], p[1], v));
        }
    }
    out
}

/// Parses CSV produced by [`field_to_csv`] onto `grid`, checking that the
/// coordinates match the grid's nodes.
pub fn field_from_csv(grid: Arc<Grid>, text: &str) -> Result<ScalarField> {
    let mut lines = text.lines();
    lines.next().ok_or_else(|| Error::Config("empty CSV".into()))?;
    let mut values = Vec::with_capacity(grid.len());
    for (i, line) in lines.filter(|l| !l.trim().is_empty()).enumerate() {
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != grid.dim() + 1 {
            return Err(Error::Config(format!("CSV row {i} has {} columns", cols.len())));
        }
        let parse = |s: &str| -> Result<f64> {
            s.trim()
                .parse::<f64>()
                .map_err(|e| Error::Config(format!("CSV row {i}: {e}")))
        };
        if i >= grid.len() {
            return Err(Error::Config("CSV has more rows than grid nodes".into()));
        }
        let p = grid.point(i);
        for a in 0..grid.dim() {
            let x = parse(cols[a])?;
            if (x - p[a]).abs() > 1e-9 * (1.0 + p[a].abs()) {
                return Err(Error::Config(format!("CSV row {i}: coordinate {x} does not match node {}", p[a])));
            }
        }
        values.push(parse(cols[grid.dim()])?);
    }
    ScalarField::new(grid, values)
}

pub fn write_csv(field: &ScalarField, path: &Path) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(field_to_csv(field).as_bytes()).map_err(|e| Error::io(path, e))
}
