//! On-disk interchange for mesh-indexed matrices (Green matrices,
//! generators), so grid outputs can be compared across runs and tools.
//!
//! Two formats, both round-tripping bit for bit:
//!
//! * **binary** (`GRNMESH1`): little-endian; magic (8 bytes), `u32`
//!   dimension, `u64` cell count, `f64` spacing, the `n·d` lattice
//!   coordinates as `i64`, then the `n²` entries as `f64`, row-major.
//! * **text** (`grnmesh v1`): a header (`dim`, `h`, `n`), one
//!   `cell i k_0 … k_{d−1}` line per cell, one `entry i j v` line per
//!   matrix entry. Floats print as Rust's shortest round-tripping
//!   decimal, so parsing recovers the exact bits.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use super::assemble::DiscreteGenerator;
use super::green::GreenMatrix;
use super::GridError;

const MAGIC: &[u8; 8] = b"GRNMESH1";

/// A matrix over mesh cells, with enough mesh identity (dimension,
/// spacing, lattice coordinates) to interpret the indices.
#[derive(Debug, Clone, PartialEq)]
pub struct ExportedMatrix {
    pub dim: usize,
    pub h: f64,
    pub coords: Vec<Vec<i64>>,
    pub entries: DMatrix<f64>,
}

impl ExportedMatrix {
    pub fn of_green(gen: &DiscreteGenerator, green: &GreenMatrix) -> Self {
        Self {
            dim: gen.mesh.domain.dim(),
            h: green.h,
            coords: gen.mesh.coords.clone(),
            entries: green.g.clone(),
        }
    }

    pub fn of_generator(gen: &DiscreteGenerator) -> Self {
        Self {
            dim: gen.mesh.domain.dim(),
            h: gen.mesh.h,
            coords: gen.mesh.coords.clone(),
            entries: gen.neg_l.clone(),
        }
    }

    pub fn n(&self) -> usize {
        self.coords.len()
    }

    fn validate(&self) -> Result<(), GridError> {
        if self.entries.nrows() != self.n() || self.entries.ncols() != self.n() {
            return Err(GridError::BadFormat(format!(
                "matrix is {}×{} but the mesh has {} cells",
                self.entries.nrows(),
                self.entries.ncols(),
                self.n()
            )));
        }
        if self.coords.iter().any(|k| k.len() != self.dim) {
            return Err(GridError::BadFormat(
                "lattice coordinate of the wrong dimension".into(),
            ));
        }
        Ok(())
    }
}

pub fn write_matrix_binary(path: &Path, m: &ExportedMatrix) -> Result<(), GridError> {
    m.validate()?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&(m.dim as u32).to_le_bytes())?;
    w.write_all(&(m.n() as u64).to_le_bytes())?;
    w.write_all(&m.h.to_le_bytes())?;
    for k in &m.coords {
        for &c in k {
            w.write_all(&c.to_le_bytes())?;
        }
    }
    for i in 0..m.n() {
        for j in 0..m.n() {
            w.write_all(&m.entries[(i, j)].to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_matrix_binary(path: &Path) -> Result<ExportedMatrix, GridError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(GridError::BadFormat(format!(
            "bad magic {:?}, expected {:?}",
            magic, MAGIC
        )));
    }
    let mut b4 = [0u8; 4];
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b4)?;
    let dim = u32::from_le_bytes(b4) as usize;
    r.read_exact(&mut b8)?;
    let n = u64::from_le_bytes(b8) as usize;
    if dim == 0 || dim > 16 {
        return Err(GridError::BadFormat(format!("implausible dimension {dim}")));
    }
    r.read_exact(&mut b8)?;
    let h = f64::from_le_bytes(b8);
    let mut coords = Vec::with_capacity(n);
    for _ in 0..n {
        let mut k = Vec::with_capacity(dim);
        for _ in 0..dim {
            r.read_exact(&mut b8)?;
            k.push(i64::from_le_bytes(b8));
        }
        coords.push(k);
    }
    let mut entries = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            r.read_exact(&mut b8)?;
            entries[(i, j)] = f64::from_le_bytes(b8);
        }
    }
    let m = ExportedMatrix {
        dim,
        h,
        coords,
        entries,
    };
    m.validate()?;
    Ok(m)
}

pub fn write_matrix_text(path: &Path, m: &ExportedMatrix) -> Result<(), GridError> {
    m.validate()?;
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "grnmesh v1")?;
    writeln!(w, "dim {}", m.dim)?;
    writeln!(w, "h {}", m.h)?;
    writeln!(w, "n {}", m.n())?;
    for (i, k) in m.coords.iter().enumerate() {
        write!(w, "cell {i}")?;
        for c in k {
            write!(w, " {c}")?;
        }
        writeln!(w)?;
    }
    for i in 0..m.n() {
        for j in 0..m.n() {
            writeln!(w, "entry {i} {j} {}", m.entries[(i, j)])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn bad(line_no: usize, what: &str) -> GridError {
    GridError::BadFormat(format!("line {line_no}: {what}"))
}

pub fn read_matrix_text(path: &Path) -> Result<ExportedMatrix, GridError> {
    let r = BufReader::new(File::open(path)?);
    let mut lines = r.lines().enumerate();
    let mut next_line = || -> Result<(usize, String), GridError> {
        match lines.next() {
            Some((no, Ok(l))) => Ok((no + 1, l)),
            Some((no, Err(e))) => Err(GridError::BadFormat(format!("line {}: {e}", no + 1))),
            None => Err(GridError::BadFormat("unexpected end of file".into())),
        }
    };
    let (no, header) = next_line()?;
    if header.trim() != "grnmesh v1" {
        return Err(bad(no, "missing `grnmesh v1` header"));
    }
    let mut field = |name: &str| -> Result<String, GridError> {
        let (no, l) = next_line()?;
        let mut it = l.split_whitespace();
        if it.next() != Some(name) {
            return Err(bad(no, &format!("expected `{name}`")));
        }
        it.next()
            .map(str::to_owned)
            .ok_or_else(|| bad(no, &format!("`{name}` has no value")))
    };
    let dim: usize = field("dim")?
        .parse()
        .map_err(|e| GridError::BadFormat(format!("dim: {e}")))?;
    let h: f64 = field("h")?
        .parse()
        .map_err(|e| GridError::BadFormat(format!("h: {e}")))?;
    let n: usize = field("n")?
        .parse()
        .map_err(|e| GridError::BadFormat(format!("n: {e}")))?;
    let mut coords = Vec::with_capacity(n);
    for i in 0..n {
        let (no, l) = next_line()?;
        let mut it = l.split_whitespace();
        if it.next() != Some("cell") {
            return Err(bad(no, "expected `cell`"));
        }
        let idx: usize = it
            .next()
            .ok_or_else(|| bad(no, "missing cell index"))?
            .parse()
            .map_err(|_| bad(no, "bad cell index"))?;
        if idx != i {
            return Err(bad(no, &format!("cell {idx} out of order, expected {i}")));
        }
        let k: Vec<i64> = it
            .map(|t| t.parse())
            .collect::<Result<_, _>>()
            .map_err(|_| bad(no, "bad lattice coordinate"))?;
        if k.len() != dim {
            return Err(bad(no, "lattice coordinate of the wrong dimension"));
        }
        coords.push(k);
    }
    let mut entries = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let (no, l) = next_line()?;
            let mut it = l.split_whitespace();
            if it.next() != Some("entry") {
                return Err(bad(no, "expected `entry`"));
            }
            let (pi, pj) = (
                it.next().and_then(|t| t.parse::<usize>().ok()),
                it.next().and_then(|t| t.parse::<usize>().ok()),
            );
            if pi != Some(i) || pj != Some(j) {
                return Err(bad(no, &format!("entry indices out of order at ({i},{j})")));
            }
            let v: f64 = it
                .next()
                .ok_or_else(|| bad(no, "missing value"))?
                .parse()
                .map_err(|_| bad(no, "bad float"))?;
            entries[(i, j)] = v;
        }
    }
    let m = ExportedMatrix {
        dim,
        h,
        coords,
        entries,
    };
    m.validate()?;
    Ok(m)
}
