//! File output. Densities go to two-column CSV with 17 significant digits,
//! scalars to JSON; every file is written to a temporary sibling and renamed.

use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tempfile::NamedTempFile;

use crate::pdfgrid::{GridSpec, GriddedPdf};

/// Writes `bytes` to `path` atomically.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

/// Formats a float with 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// CSV with columns `x,density`.
pub fn density_csv(p: &GriddedPdf) -> String {
    let g = p.grid();
    let mut s = String::with_capacity(g.n_points * 48 + 16);
    s.push_str("x,density\n");
    for (i, v) in p.values().iter().enumerate() {
        s.push_str(&fmt_f64(g.x(i)));
        s.push(',');
        s.push_str(&fmt_f64(*v));
        s.push('\n');
    }
    s
}

pub fn write_density_csv(path: &Path, p: &GriddedPdf) -> io::Result<()> {
    write_atomic(path, density_csv(p).as_bytes())
}

/// Reads a density written by [`write_density_csv`]. The grid is rebuilt from
/// the first and last `x` and the row count.
pub fn read_density_csv(path: &Path, truncated_mass: f64) -> io::Result<GriddedPdf> {
    let reader = BufReader::new(fs::File::open(path)?);
    let (mut xs, mut vs) = (Vec::new(), Vec::new());
    for (k, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || (k == 0 && line.starts_with('x')) {
            continue;
        }
        let mut it = line.split(',');
        let parse = |f: Option<&str>| -> io::Result<f64> {
            f.ok_or_else(|| invalid(format!("{}: line {}: missing column", path.display(), k + 1)))?
                .trim()
                .parse()
                .map_err(|e| invalid(format!("{}: line {}: {e}", path.display(), k + 1)))
        };
        xs.push(parse(it.next())?);
        vs.push(parse(it.next())?);
    }
    if xs.len() < 2 {
        return Err(invalid(format!("{}: too few rows", path.display())));
    }
    let grid = GridSpec::new(xs[0], *xs.last().unwrap(), xs.len()).map_err(|e| invalid(e.to_string()))?;
    GriddedPdf::from_values(grid, vs, truncated_mass).map_err(|e| invalid(e.to_string()))
}

fn invalid(msg: String) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg)
}

/// Generic CSV table with full-precision floats.
pub fn table_csv(header: &[&str], rows: &[Vec<f64>]) -> String {
    let mut s = header.join(",");
    s.push('\n');
    for r in rows {
        let cells: Vec<String> = r.iter().map(|&v| fmt_f64(v)).collect();
        s.push_str(&cells.join(","));
        s.push('\n');
    }
    s
}

pub fn write_table_csv(path: &Path, header: &[&str], rows: &[Vec<f64>]) -> io::Result<()> {
    write_atomic(path, table_csv(header, rows).as_bytes())
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> io::Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(io::Error::other)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> io::Result<T> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))
}

/// Index of the per-step density files of a run, written next to them as
/// [`DensityIndex::FILE_NAME`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityIndex {
    /// `z`, `y` or `dz`
    pub variable: String,
    pub grid: GridSpec,
    pub entries: Vec<DensityEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityEntry {
    pub t: usize,
    /// file name relative to the index
    pub file: String,
    pub truncated_mass: f64,
}

impl DensityIndex {
    pub const FILE_NAME: &'static str = "densities.json";

    /// Loads the index in `dir` together with every listed density.
    pub fn load(dir: &Path) -> io::Result<(Self, Vec<(usize, GriddedPdf)>)> {
        let index: Self = read_json(&dir.join(Self::FILE_NAME))?;
        let pdfs = index
            .entries
            .iter()
            .map(|e| Ok((e.t, read_density_csv(&dir.join(&e.file), e.truncated_mass)?)))
            .collect::<io::Result<_>>()?;
        Ok((index, pdfs))
    }
}

/// File name of the density of `variable` at step `t`.
pub fn step_file_name(variable: &str, t: usize) -> String {
    format!("{variable}_t{t:05}.csv")
}

/// Writes each density to `dir` and returns the index (also written) plus the paths.
pub fn write_densities(
    dir: &Path,
    variable: &str,
    densities: &[(usize, GriddedPdf)],
) -> io::Result<(DensityIndex, Vec<PathBuf>)> {
    let grid = match densities.first() {
        Some((_, p)) => *p.grid(),
        None => return Err(invalid("no densities to write".into())),
    };
    let sub = dir.join(variable);
    fs::create_dir_all(&sub)?;
    let mut entries = Vec::with_capacity(densities.len());
    let mut paths = Vec::with_capacity(densities.len() + 1);
    for (t, p) in densities {
        let file = step_file_name(variable, *t);
        let path = sub.join(&file);
        write_density_csv(&path, p)?;
        paths.push(path);
        entries.push(DensityEntry {
            t: *t,
            file,
            truncated_mass: p.truncated_mass(),
        });
    }
    let index = DensityIndex {
        variable: variable.to_string(),
        grid,
        entries,
    };
    let ipath = sub.join(DensityIndex::FILE_NAME);
    write_json(&ipath, &index)?;
    paths.push(ipath);
    Ok((index, paths))
}
