//! Grid files and Haar sub-band files.
//!
//! Both share a 16-byte header: magic (4), version u16, channels u16,
//! height u32, width u32. A grid file (`"GRID"`) follows it with the
//! `c·h·w` values. A sub-band file (`"HAAR"`) follows it with seven f64
//! sections: the input grid, `LL`, `LH`, `HL`, `HH` (each `c·⌈h/2⌉·⌈w/2⌉`),
//! the reconstruction and the zeros variant. Values are f64 LE, channel-major
//! then row-major.

use std::path::Path;

use ndarray::Array3;

use crate::error::{Error, Result};
use crate::fap::{self, Grid, SubBands};

use super::{checked_size, put_f64s, Reader};

pub const GRID_MAGIC: &[u8; 4] = b"GRID";
pub const HAAR_MAGIC: &[u8; 4] = b"HAAR";
pub const VERSION: u16 = 1;

/// Contents of a sub-band file.
#[derive(Debug, Clone, PartialEq)]
pub struct Golden {
    pub grid: Grid,
    pub bands: SubBands,
    pub reconstruction: Grid,
    pub zeros: Grid,
}

impl Golden {
    pub fn compute(grid: &Grid) -> Result<Self> {
        let bands = fap::dwt2(grid)?;
        let reconstruction = fap::idwt2(&bands)?;
        let zeros = fap::augment(grid, 0, 0.0)?.zeros;
        Ok(Golden {
            grid: grid.clone(),
            bands,
            reconstruction,
            zeros,
        })
    }
}

fn put_header(out: &mut Vec<u8>, magic: &[u8; 4], grid: &Grid) -> Result<()> {
    let c = u16::try_from(grid.channels()).map_err(|_| Error::invalid("too many channels"))?;
    let h = u32::try_from(grid.height()).map_err(|_| Error::invalid("grid too tall"))?;
    let w = u32::try_from(grid.width()).map_err(|_| Error::invalid("grid too wide"))?;
    out.extend_from_slice(magic);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&c.to_le_bytes());
    out.extend_from_slice(&h.to_le_bytes());
    out.extend_from_slice(&w.to_le_bytes());
    Ok(())
}

fn read_header(r: &mut Reader<'_>, magic: &[u8; 4], bytes: &[u8]) -> Result<(usize, usize, usize)> {
    if bytes.len() >= 4 && &bytes[..4] != magic {
        return Err(Error::format(
            0,
            format!("bad magic, expected {:?}", String::from_utf8_lossy(magic)),
        ));
    }
    r.take(4, "header")?;
    let version = r.u16("header")?;
    if version != VERSION {
        return Err(Error::format(4, format!("unsupported version {version}")));
    }
    let c = r.u16("header")? as usize;
    let h = r.u32("header")? as usize;
    let w = r.u32("header")? as usize;
    if c == 0 || h == 0 || w == 0 {
        return Err(Error::format(6, "grid dimensions must be positive"));
    }
    Ok((c, h, w))
}

fn read_block(r: &mut Reader<'_>, shape: (usize, usize, usize), what: &str) -> Result<Array3<f64>> {
    let n = shape.0 * shape.1 * shape.2;
    let values = r.f64s(n, what)?;
    Ok(Array3::from_shape_vec(shape, values).expect("exact element count"))
}

/// Checks that `bytes` holds exactly `16 + 8·cells` bytes before any allocation.
fn expect_len(bytes: &[u8], cells: u64) -> Result<()> {
    let expected = checked_size(cells, 8, 8)?
        .checked_add(16)
        .ok_or_else(|| Error::format(8, "declared size overflows"))?;
    let actual = bytes.len() as u64;
    if actual < expected {
        return Err(Error::format(actual, format!("truncated: header declares {expected} bytes")));
    }
    if actual > expected {
        return Err(Error::format(expected, format!("{} trailing bytes", actual - expected)));
    }
    Ok(())
}

pub fn encode_grid(grid: &Grid) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    put_header(&mut out, GRID_MAGIC, grid)?;
    put_f64s(&mut out, grid.data.iter().copied());
    Ok(out)
}

pub fn decode_grid(bytes: &[u8]) -> Result<Grid> {
    let mut r = Reader::new(bytes);
    let (c, h, w) = read_header(&mut r, GRID_MAGIC, bytes)?;
    expect_len(bytes, (c as u64) * (h as u64) * (w as u64))?;
    let grid = Grid::new(read_block(&mut r, (c, h, w), "grid")?);
    r.finish()?;
    Ok(grid)
}

pub fn encode_golden(g: &Golden) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    put_header(&mut out, HAAR_MAGIC, &g.grid)?;
    put_f64s(&mut out, g.grid.data.iter().copied());
    for band in [&g.bands.ll, &g.bands.lh, &g.bands.hl, &g.bands.hh] {
        put_f64s(&mut out, band.iter().copied());
    }
    put_f64s(&mut out, g.reconstruction.data.iter().copied());
    put_f64s(&mut out, g.zeros.data.iter().copied());
    Ok(out)
}

pub fn decode_golden(bytes: &[u8]) -> Result<Golden> {
    let mut r = Reader::new(bytes);
    let (c, h, w) = read_header(&mut r, HAAR_MAGIC, bytes)?;
    let (bh, bw) = (h.div_ceil(2), w.div_ceil(2));
    let full = (c as u64) * (h as u64) * (w as u64);
    let band = (c as u64) * (bh as u64) * (bw as u64);
    expect_len(bytes, 3 * full + 4 * band)?;
    let grid = Grid::new(read_block(&mut r, (c, h, w), "grid")?);
    let ll = read_block(&mut r, (c, bh, bw), "LL band")?;
    let lh = read_block(&mut r, (c, bh, bw), "LH band")?;
    let hl = read_block(&mut r, (c, bh, bw), "HL band")?;
    let hh = read_block(&mut r, (c, bh, bw), "HH band")?;
    let reconstruction = Grid::new(read_block(&mut r, (c, h, w), "reconstruction")?);
    let zeros = Grid::new(read_block(&mut r, (c, h, w), "zeros variant")?);
    r.finish()?;
    Ok(Golden {
        grid,
        bands: SubBands {
            ll,
            lh,
            hl,
            hh,
            original: (h, w),
        },
        reconstruction,
        zeros,
    })
}

pub fn write_golden(g: &Golden, path: &Path) -> Result<()> {
    std::fs::write(path, encode_golden(g)?)?;
    Ok(())
}

pub fn read_golden(path: &Path) -> Result<Golden> {
    decode_golden(&std::fs::read(path)?)
}

pub fn read_grid(path: &Path) -> Result<Grid> {
    decode_grid(&std::fs::read(path)?)
}

pub fn write_grid(grid: &Grid, path: &Path) -> Result<()> {
    std::fs::write(path, encode_grid(grid)?)?;
    Ok(())
}

/// Largest absolute difference between two sub-band files' contents.
pub fn max_abs_diff(a: &Golden, b: &Golden) -> Option<f64> {
    let pairs = [
        (&a.grid.data, &b.grid.data),
        (&a.bands.ll, &b.bands.ll),
        (&a.bands.lh, &b.bands.lh),
        (&a.bands.hl, &b.bands.hl),
        (&a.bands.hh, &b.bands.hh),
        (&a.reconstruction.data, &b.reconstruction.data),
        (&a.zeros.data, &b.zeros.data),
    ];
    let mut worst: f64 = 0.0;
    for (x, y) in pairs {
        if x.dim() != y.dim() {
            return None;
        }
        for (p, q) in x.iter().zip(y.iter()) {
            worst = worst.max((p - q).abs());
        }
    }
    Some(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn golden_round_trip() {
        let g = Golden::compute(&fap::golden_grid()).unwrap();
        let bytes = encode_golden(&g).unwrap();
        assert_eq!(bytes.len(), 16 + 8 * (3 * 64 + 4 * 16));
        assert_eq!(decode_golden(&bytes).unwrap(), g);
        assert!(decode_golden(&bytes[..bytes.len() - 8]).is_err());
        assert!(matches!(decode_grid(&bytes), Err(Error::Format { offset: 0, .. })));
    }

    #[test]
    fn odd_grid_round_trip() {
        let grid = Grid::from_rows(3, 5, (0..15).map(f64::from).collect()).unwrap();
        let bytes = encode_grid(&grid).unwrap();
        assert_eq!(decode_grid(&bytes).unwrap(), grid);
        let g = Golden::compute(&grid).unwrap();
        assert_eq!(decode_golden(&encode_golden(&g).unwrap()).unwrap(), g);
    }
}
