//! Binary record formats.
//!
//! Complex frame cubes (`RBTK`): magic, `u16` version, three `u32` dims
//! (antennas, samples, chirps), then little-endian interleaved re/im `f32`
//! values in antenna-major, sample-next, chirp-minor order.
//!
//! Real tensors (`RBTR`): magic, `u16` version, `u8` dtype (0 = f32,
//! 1 = f64), `u32` rank, `rank` × `u32` dims, then little-endian values.
//!
//! Files hold any number of consecutive records.

use std::io::{self, Read, Write};

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::radar_synth::{RadarFrameCube, RadarWaveformConfig};
use crate::scalar::Scalar;

pub const CUBE_MAGIC: &[u8; 4] = b"RBTK";
pub const REAL_MAGIC: &[u8; 4] = b"RBTR";
pub const FORMAT_VERSION: u16 = 1;

fn u16_le<R: Read>(r: &mut R) -> io::Result<u16> {
    let mut b = [0u8; 2];
    r.read_exact(&mut b)?;
    Ok(u16::from_le_bytes(b))
}

fn u32_le<R: Read>(r: &mut R) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

/// Reads the 4-byte magic; `None` on a clean end of stream.
fn magic<R: Read>(r: &mut R) -> Result<Option<[u8; 4]>> {
    let mut m = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        match r.read(&mut m[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => return Err(Error::Format("truncated record header".into())),
            Ok(k) => got += k,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(Error::Format(e.to_string())),
        }
    }
    Ok(Some(m))
}

fn fmt_err(e: io::Error) -> Error {
    Error::Format(format!("truncated record: {e}"))
}

fn dim32(d: usize) -> io::Result<u32> {
    u32::try_from(d).map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "dimension exceeds u32"))
}

pub fn write_cube<W: Write>(w: &mut W, cube: &RadarFrameCube) -> io::Result<()> {
    let (a, s, c) = cube.dims();
    w.write_all(CUBE_MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    for d in [a, s, c] {
        w.write_all(&dim32(d)?.to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(cube.data.len() * 8);
    for z in &cube.data {
        buf.extend_from_slice(&(z.re as f32).to_le_bytes());
        buf.extend_from_slice(&(z.im as f32).to_le_bytes());
    }
    w.write_all(&buf)
}

/// Next cube record, checked against `config`'s dimensions.
pub fn read_cube<R: Read>(r: &mut R, config: &RadarWaveformConfig, timestamp_s: f64) -> Result<Option<RadarFrameCube>> {
    let Some(m) = magic(r)? else { return Ok(None) };
    if &m != CUBE_MAGIC {
        return Err(Error::Format(format!("bad cube magic {m:?}")));
    }
    let version = u16_le(r).map_err(fmt_err)?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported cube version {version}")));
    }
    let dims = [u32_le(r), u32_le(r), u32_le(r)];
    let dims: Vec<usize> = dims
        .into_iter()
        .map(|d| d.map(|v| v as usize))
        .collect::<io::Result<_>>()
        .map_err(fmt_err)?;
    if dims != [config.n_ant, config.n_samples, config.n_chirps] {
        return Err(Error::Format(format!(
            "cube dims {dims:?} do not match the radar configuration"
        )));
    }
    let n = dims.iter().product::<usize>();
    let mut raw = vec![0u8; n * 8];
    r.read_exact(&mut raw).map_err(fmt_err)?;
    let data = raw
        .chunks_exact(8)
        .map(|b| {
            Complex64::new(
                f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
                f32::from_le_bytes([b[4], b[5], b[6], b[7]]) as f64,
            )
        })
        .collect();
    RadarFrameCube::from_data(config, data, timestamp_s).map(Some)
}

fn dtype_code(tag: &str) -> u8 {
    match tag {
        "f64" => 1,
        _ => 0,
    }
}

/// Writes `data` in the scalar's own precision.
pub fn write_real<W: Write, T: Scalar>(w: &mut W, shape: &[usize], data: &[T]) -> io::Result<()> {
    if shape.iter().product::<usize>() != data.len() {
        return Err(io::Error::new(io::ErrorKind::InvalidInput, "shape does not match data length"));
    }
    let code = dtype_code(T::DTYPE);
    w.write_all(REAL_MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&[code])?;
    w.write_all(&dim32(shape.len())?.to_le_bytes())?;
    for &d in shape {
        w.write_all(&dim32(d)?.to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(data.len() * if code == 1 { 8 } else { 4 });
    for &v in data {
        if code == 1 {
            buf.extend_from_slice(&v.as_f64().to_le_bytes());
        } else {
            buf.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    w.write_all(&buf)
}

/// Next real record as `(shape, values)` converted to `T`.
pub fn read_real<R: Read, T: Scalar>(r: &mut R) -> Result<Option<(Vec<usize>, Vec<T>)>> {
    let Some(m) = magic(r)? else { return Ok(None) };
    if &m != REAL_MAGIC {
        return Err(Error::Format(format!("bad tensor magic {m:?}")));
    }
    let version = u16_le(r).map_err(fmt_err)?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported tensor version {version}")));
    }
    let mut code = [0u8; 1];
    r.read_exact(&mut code).map_err(fmt_err)?;
    let width = match code[0] {
        0 => 4,
        1 => 8,
        c => return Err(Error::Format(format!("unknown dtype code {c}"))),
    };
    let rank = u32_le(r).map_err(fmt_err)? as usize;
    if rank > 16 {
        return Err(Error::Format(format!("implausible tensor rank {rank}")));
    }
    let shape: Vec<usize> = (0..rank)
        .map(|_| u32_le(r).map(|d| d as usize))
        .collect::<io::Result<_>>()
        .map_err(fmt_err)?;
    let n: usize = shape.iter().product();
    let mut raw = vec![0u8; n * width];
    r.read_exact(&mut raw).map_err(fmt_err)?;
    let data = if width == 8 {
        raw.chunks_exact(8)
            .map(|b| T::of(f64::from_le_bytes(b.try_into().expect("8-byte chunk"))))
            .collect()
    } else {
        raw.chunks_exact(4)
            .map(|b| T::of(f32::from_le_bytes(b.try_into().expect("4-byte chunk")) as f64))
            .collect()
    };
    Ok(Some((shape, data)))
}
