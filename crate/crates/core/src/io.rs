//! File outputs: legacy VTK fields, PGM coefficient rasters, CSV tables and
//! the binary reference-solution cache.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::coefficient::PiecewiseConstantCoefficient;
use crate::error::{Error, Result};
use crate::geometry::StructuredTriMesh;
use crate::msolver::ErrorReport;

pub const ERROR_CSV_HEADER: &str = "H,m,rel_l2,rel_h1,rel_h1_semi,h";

/// Legacy ASCII VTK unstructured grid with nodal scalar fields and an
/// optional per-element coefficient.
pub fn write_vtk(
    path: &Path,
    mesh: &StructuredTriMesh,
    point_fields: &[(&str, &[f64])],
    coefficient: Option<&PiecewiseConstantCoefficient>,
) -> Result<()> {
    for (name, values) in point_fields {
        if values.len() != mesh.num_vertices() {
            return Err(Error::DimensionMismatch {
                expected: mesh.num_vertices(),
                found: values.len(),
            });
        }
        if name.contains(char::is_whitespace) {
            return Err(Error::Config(format!("VTK field name {name:?} contains whitespace")));
        }
    }
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "# vtk DataFile Version 3.0")?;
    writeln!(w, "mspum n={}", mesh.n())?;
    writeln!(w, "ASCII")?;
    writeln!(w, "DATASET UNSTRUCTURED_GRID")?;
    writeln!(w, "POINTS {} double", mesh.num_vertices())?;
    for p in mesh.vertices() {
        writeln!(w, "{} {} 0", p[0], p[1])?;
    }
    let nt = mesh.num_triangles();
    writeln!(w, "CELLS {} {}", nt, 4 * nt)?;
    for t in mesh.triangles() {
        writeln!(w, "3 {} {} {}", t[0], t[1], t[2])?;
    }
    writeln!(w, "CELL_TYPES {nt}")?;
    for _ in 0..nt {
        writeln!(w, "5")?;
    }
    if let Some(c) = coefficient {
        writeln!(w, "CELL_DATA {nt}")?;
        writeln!(w, "SCALARS coefficient double 1")?;
        writeln!(w, "LOOKUP_TABLE default")?;
        for v in c.values() {
            writeln!(w, "{v}")?;
        }
    }
    if !point_fields.is_empty() {
        writeln!(w, "POINT_DATA {}", mesh.num_vertices())?;
        for (name, values) in point_fields {
            writeln!(w, "SCALARS {name} double 1")?;
            writeln!(w, "LOOKUP_TABLE default")?;
            for v in values.iter() {
                writeln!(w, "{v}")?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Binary PGM of `log10 A`, one pixel per half cell so both triangles of a
/// cell are visible; row 0 is the top of the domain.
pub fn write_coefficient_pgm(path: &Path, mesh: &StructuredTriMesh, coeff: &PiecewiseConstantCoefficient) -> Result<()> {
    if coeff.len() != mesh.num_triangles() {
        return Err(Error::DimensionMismatch {
            expected: mesh.num_triangles(),
            found: coeff.len(),
        });
    }
    let res = 2 * mesh.n();
    let (lo, hi) = (coeff.alpha().log10(), coeff.beta().log10());
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut pixels = Vec::with_capacity(res * res);
    for row in (0..res).rev() {
        for col in 0..res {
            let p = [(col as f64 + 0.5) / res as f64, (row as f64 + 0.5) / res as f64];
            let v = coeff.values()[mesh.locate(p)].log10();
            pixels.push((255.0 * (v - lo) / span).round().clamp(0.0, 255.0) as u8);
        }
    }
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "P5\n{res} {res}\n255\n")?;
    w.write_all(&pixels)?;
    w.flush()?;
    Ok(())
}

fn format_row(r: &ErrorReport) -> String {
    let m = r.m.map_or_else(|| "ideal".to_string(), |m| m.to_string());
    format!("{},{},{},{},{},{}", r.coarse_h, m, r.rel_l2, r.rel_h1, r.rel_h1_semi, r.h)
}

pub fn write_error_csv<W: Write>(mut w: W, rows: &[ErrorReport]) -> Result<()> {
    writeln!(w, "{ERROR_CSV_HEADER}")?;
    for r in rows {
        writeln!(w, "{}", format_row(r))?;
    }
    Ok(())
}

pub fn read_error_csv<R: Read>(r: R) -> Result<Vec<ErrorReport>> {
    let mut lines = BufReader::new(r).lines();
    let header = lines.next().transpose()?.unwrap_or_default();
    if header.trim() != ERROR_CSV_HEADER {
        return Err(Error::Config(format!("unexpected CSV header {header:?}")));
    }
    let parse = |s: &str| -> Result<f64> { s.trim().parse().map_err(|_| Error::Config(format!("bad number {s:?}"))) };
    let mut rows = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 6 {
            return Err(Error::Config(format!("expected 6 columns in {line:?}")));
        }
        let m = match f[1].trim() {
            "ideal" => None,
            s => Some(s.parse().map_err(|_| Error::Config(format!("bad m {s:?}")))?),
        };
        rows.push(ErrorReport {
            coarse_h: parse(f[0])?,
            m,
            rel_l2: parse(f[2])?,
            rel_h1: parse(f[3])?,
            rel_h1_semi: parse(f[4])?,
            h: parse(f[5])?,
        });
    }
    Ok(rows)
}

pub fn write_decay_csv(path: &Path, profile: &[f64]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "k,e_k")?;
    for (k, e) in profile.iter().enumerate() {
        writeln!(w, "{k},{e}")?;
    }
    w.flush()?;
    Ok(())
}

const CACHE_MAGIC: &[u8; 8] = b"MSPUMREF";

/// Stores a nodal field as little-endian `f64` after a magic tag and length.
pub fn write_field_cache(path: &Path, values: &[f64]) -> Result<()> {
    let tmp = path.with_extension("partial");
    {
        let mut w = BufWriter::new(File::create(&tmp)?);
        w.write_all(CACHE_MAGIC)?;
        w.write_all(&(values.len() as u64).to_le_bytes())?;
        for v in values {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()?;
    }
    std::fs::rename(tmp, path)?;
    Ok(())
}

/// Returns `None` when the file is missing or does not hold `len` values.
pub fn read_field_cache(path: &Path, len: usize) -> Result<Option<Vec<f64>>> {
    let mut bytes = Vec::new();
    match File::open(path) {
        Ok(mut f) => f.read_to_end(&mut bytes)?,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
        Err(e) => return Err(e.into()),
    };
    if bytes.len() != 16 + 8 * len || &bytes[..8] != CACHE_MAGIC {
        return Ok(None);
    }
    if u64::from_le_bytes(bytes[8..16].try_into().unwrap()) != len as u64 {
        return Ok(None);
    }
    Ok(Some(
        bytes[16..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
    ))
}
