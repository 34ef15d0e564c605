//! Binary field, observation and coefficient files.
//!
//! All integers and floats are little-endian. Layouts:
//!
//! | file | layout |
//! |---|---|
//! | field (`.field`) | `SCHFLD01`, u32 dim, u32 level, dim × (f64 lower, f64 upper), u64 n, n × f64 row-major values |
//! | observation (`.obs`) | `SCHOBS01`, f64 eps, then a field body without its magic |
//! | coefficients (`.coef`) | `SCHCOE01`, u32 dim, u32 j0, u32 J, u64 levels, levels × u64 count, u64 trees, trees × level-ordered f64 |

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use schrodinger_core::grid::{Domain, Grid, GridFunction};
use schrodinger_core::obsmodel::Observation;
use schrodinger_core::wavelet::CoefficientTree;

const FIELD_MAGIC: &[u8; 8] = b"SCHFLD01";
const OBS_MAGIC: &[u8; 8] = b"SCHOBS01";
const COEF_MAGIC: &[u8; 8] = b"SCHCOE01";

fn invalid(msg: impl Into<String>) -> std::io::Error {
    std::io::Error::new(std::io::ErrorKind::InvalidData, msg.into())
}

fn put_u32(w: &mut impl Write, v: u32) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn put_u64(w: &mut impl Write, v: u64) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn put_f64s(w: &mut impl Write, vs: &[f64]) -> std::io::Result<()> {
    for v in vs {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn get<const N: usize>(r: &mut impl Read) -> std::io::Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b)?;
    Ok(b)
}

fn get_u32(r: &mut impl Read) -> std::io::Result<u32> {
    Ok(u32::from_le_bytes(get(r)?))
}

fn get_u64(r: &mut impl Read) -> std::io::Result<u64> {
    Ok(u64::from_le_bytes(get(r)?))
}

fn get_f64(r: &mut impl Read) -> std::io::Result<f64> {
    Ok(f64::from_le_bytes(get(r)?))
}

fn get_f64s(r: &mut impl Read, n: usize) -> std::io::Result<Vec<f64>> {
    (0..n).map(|_| get_f64(r)).collect()
}

fn expect_magic(r: &mut impl Read, magic: &[u8; 8]) -> std::io::Result<()> {
    if &get::<8>(r)? != magic {
        return Err(invalid(format!("bad magic, expected {}", String::from_utf8_lossy(magic))));
    }
    Ok(())
}

fn put_field_body(w: &mut impl Write, a: &GridFunction) -> std::io::Result<()> {
    let grid = a.grid();
    put_u32(w, grid.dim() as u32)?;
    put_u32(w, grid.level())?;
    for (lo, hi) in grid.domain().bounds() {
        put_f64s(w, &[lo, hi])?;
    }
    put_u64(w, a.values().len() as u64)?;
    put_f64s(w, a.values())
}

fn get_field_body(r: &mut impl Read) -> std::io::Result<GridFunction> {
    let dim = get_u32(r)? as usize;
    let level = get_u32(r)?;
    if !(1..=2).contains(&dim) {
        return Err(invalid(format!("unsupported dimension {dim}")));
    }
    let bounds = (0..dim).map(|_| Ok((get_f64(r)?, get_f64(r)?))).collect::<std::io::Result<Vec<_>>>()?;
    let n = get_u64(r)? as usize;
    let grid = Domain::new(&bounds)
        .and_then(|d| Grid::new(d, level))
        .map_err(|e| invalid(e.to_string()))?;
    if n != grid.node_count() {
        return Err(invalid(format!("{n} values for a grid of {} nodes", grid.node_count())));
    }
    GridFunction::new(grid, get_f64s(r, n)?).map_err(|e| invalid(e.to_string()))
}

pub fn write_field(path: &Path, a: &GridFunction) -> std::io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(FIELD_MAGIC)?;
    put_field_body(&mut w, a)?;
    w.flush()
}

pub fn read_field(path: &Path) -> std::io::Result<GridFunction> {
    let mut r = BufReader::new(File::open(path)?);
    expect_magic(&mut r, FIELD_MAGIC)?;
    get_field_body(&mut r)
}

pub fn write_observation(path: &Path, obs: &Observation) -> std::io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(OBS_MAGIC)?;
    put_f64s(&mut w, &[obs.eps])?;
    put_field_body(&mut w, &obs.y)?;
    w.flush()
}

pub fn read_observation(path: &Path) -> std::io::Result<Observation> {
    let mut r = BufReader::new(File::open(path)?);
    expect_magic(&mut r, OBS_MAGIC)?;
    let eps = get_f64(&mut r)?;
    let y = get_field_body(&mut r)?;
    Observation::new(y, eps).map_err(|e| invalid(e.to_string()))
}

/// Writes trees sharing one shape.
pub fn write_coefficients(path: &Path, trees: &[CoefficientTree]) -> std::io::Result<()> {
    let first = trees.first().ok_or_else(|| invalid("no trees to write"))?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(COEF_MAGIC)?;
    put_u32(&mut w, first.dim() as u32)?;
    put_u32(&mut w, first.coarse_level())?;
    put_u32(&mut w, first.max_level())?;
    let counts: Vec<usize> = first.levels().map(|(_, c)| c.len()).collect();
    put_u64(&mut w, counts.len() as u64)?;
    for c in &counts {
        put_u64(&mut w, *c as u64)?;
    }
    put_u64(&mut w, trees.len() as u64)?;
    for t in trees {
        if t.len() != first.len() {
            return Err(invalid("trees differ in shape"));
        }
        put_f64s(&mut w, &t.to_flat())?;
    }
    w.flush()
}

pub fn read_coefficients(path: &Path) -> std::io::Result<Vec<CoefficientTree>> {
    let mut r = BufReader::new(File::open(path)?);
    expect_magic(&mut r, COEF_MAGIC)?;
    let dim = get_u32(&mut r)? as usize;
    let j0 = get_u32(&mut r)?;
    let max_level = get_u32(&mut r)?;
    let levels = get_u64(&mut r)? as usize;
    let counts = (0..levels).map(|_| get_u64(&mut r)).collect::<std::io::Result<Vec<_>>>()?;
    let per_tree: u64 = counts.iter().sum();
    let n = get_u64(&mut r)?;
    (0..n)
        .map(|_| {
            let flat = get_f64s(&mut r, per_tree as usize)?;
            CoefficientTree::from_flat(dim, j0, max_level, &flat).map_err(|e| invalid(e.to_string()))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn field_and_coefficients_survive_a_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let grid = Grid::new(Domain::new(&[(0.0, 2.0), (-1.0, 1.0)]).unwrap(), 3).unwrap();
        let vals: Vec<f64> = (0..grid.node_count()).map(|k| (k as f64).sin()).collect();
        let a = GridFunction::new(grid, vals).unwrap();
        let p = dir.path().join("a.field");
        write_field(&p, &a).unwrap();
        let b = read_field(&p).unwrap();
        assert_eq!(b.values(), a.values());
        assert_eq!(b.grid().domain().bounds(), a.grid().domain().bounds());

        let flat: Vec<f64> = (0..CoefficientTree::zeros(1, 2, 2).len()).map(|k| k as f64 * 0.5).collect();
        let t = CoefficientTree::from_flat(1, 2, 2, &flat).unwrap();
        let p = dir.path().join("t.coef");
        write_coefficients(&p, &[t.clone(), t.scale(-1.0)]).unwrap();
        let back = read_coefficients(&p).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[1].to_flat(), t.scale(-1.0).to_flat());
        assert!(read_field(&p).is_err());
    }
}
