//! Run-length encoded `.binvox` reader/writer.
//!
//! Header lines `#binvox 1`, `dim n n n`, `translate tx ty tz`, `scale s`,
//! `data`, followed by `(value, count)` byte pairs with `count` in 1..=255.
//! The stream enumerates voxels with x slowest and y fastest
//! (`x*n*n + z*n + y`).

use std::path::Path;

use crate::error::{Error, Result};
use crate::voxel::VoxelGrid;

fn file_order(n: usize) -> impl Iterator<Item = (usize, usize, usize)> {
    (0..n).flat_map(move |x| (0..n).flat_map(move |z| (0..n).map(move |y| (x, y, z))))
}

pub fn encode(grid: &VoxelGrid) -> Vec<u8> {
    let n = grid.res();
    let t = grid.translate;
    let mut out = format!(
        "#binvox 1\ndim {n} {n} {n}\ntranslate {} {} {}\nscale {}\ndata\n",
        t[0], t[1], t[2], grid.scale
    )
    .into_bytes();
    let mut run: Option<(u8, u8)> = None;
    for (x, y, z) in file_order(n) {
        let v = grid.get(x, y, z) as u8;
        run = match run {
            Some((rv, c)) if rv == v && c < 255 => Some((rv, c + 1)),
            Some((rv, c)) => {
                out.extend_from_slice(&[rv, c]);
                Some((v, 1))
            }
            None => Some((v, 1)),
        };
    }
    if let Some((rv, c)) = run {
        out.extend_from_slice(&[rv, c]);
    }
    out
}

fn header_line<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<(usize, &'a str)> {
    let start = *pos;
    let end = bytes[start..]
        .iter()
        .position(|&b| b == b'\n')
        .map(|i| start + i)
        .ok_or_else(|| Error::Format { offset: start, msg: "unterminated header line".into() })?;
    *pos = end + 1;
    let line = std::str::from_utf8(&bytes[start..end])
        .map_err(|_| Error::Format { offset: start, msg: "non-ASCII header".into() })?;
    Ok((start, line.trim_end_matches('\r')))
}

fn floats<const N: usize>(offset: usize, parts: &[&str]) -> Result<[f64; N]> {
    if parts.len() != N {
        return Err(Error::Format { offset, msg: format!("expected {N} values") });
    }
    let mut out = [0.0; N];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = p
            .parse()
            .map_err(|_| Error::Format { offset, msg: format!("bad number {p:?}") })?;
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<VoxelGrid> {
    let mut pos = 0;
    let (_, magic) = header_line(bytes, &mut pos)?;
    if !magic.starts_with("#binvox") {
        return Err(Error::Format { offset: 0, msg: "bad magic".into() });
    }
    let mut n = None;
    let mut translate = [0.0; 3];
    let mut scale = 1.0;
    loop {
        let (off, line) = header_line(bytes, &mut pos)?;
        let parts: Vec<&str> = line.split_whitespace().collect();
        match parts.first().copied() {
            Some("dim") => {
                let d = floats::<3>(off, &parts[1..])?;
                if d[0] != d[1] || d[1] != d[2] || d[0] < 1.0 || d[0].fract() != 0.0 {
                    return Err(Error::Format { offset: off, msg: "only cubic grids are supported".into() });
                }
                n = Some(d[0] as usize);
            }
            Some("translate") => translate = floats::<3>(off, &parts[1..])?,
            Some("scale") => scale = floats::<1>(off, &parts[1..])?[0],
            Some("data") => break,
            _ => return Err(Error::Format { offset: off, msg: format!("unknown header line {line:?}") }),
        }
    }
    let n = n.ok_or(Error::Format { offset: pos, msg: "missing dim line".into() })?;
    let total = n * n * n;
    let mut grid = VoxelGrid::empty(n);
    grid.translate = translate;
    grid.scale = scale;
    let mut order = file_order(n);
    let mut filled = 0usize;
    while filled < total {
        if pos + 2 > bytes.len() {
            return Err(Error::Format { offset: pos, msg: format!("truncated run stream ({filled} of {total} voxels)") });
        }
        let (value, count) = (bytes[pos], bytes[pos + 1] as usize);
        if value > 1 {
            return Err(Error::Format { offset: pos, msg: format!("voxel value {value} is not binary") });
        }
        if count == 0 {
            return Err(Error::Format { offset: pos + 1, msg: "zero-length run".into() });
        }
        if filled + count > total {
            return Err(Error::Format { offset: pos + 1, msg: "run count overflows the grid".into() });
        }
        for _ in 0..count {
            let (x, y, z) = order.next().expect("bounded by total");
            grid.set(x, y, z, value == 1);
        }
        filled += count;
        pos += 2;
    }
    if pos != bytes.len() {
        return Err(Error::Format { offset: pos, msg: "trailing bytes after voxel data".into() });
    }
    Ok(grid)
}

pub fn read(path: &Path) -> Result<VoxelGrid> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

pub fn write(path: &Path, grid: &VoxelGrid) -> Result<()> {
    std::fs::write(path, encode(grid)).map_err(|e| Error::io(path, e))
}
