//! Binary persistence and CSV export of [`QTable`].
//!
//! Layout, all little-endian:
//!
//! | field                         | type      |
//! |-------------------------------|-----------|
//! | magic `b"ACOFIQT\0"`          | 8 bytes   |
//! | version                       | u32       |
//! | nx, ny, ntheta                | 3 × u32   |
//! | gamma                         | f64       |
//! | v, omega                      | 2 × f64   |
//! | min_x, max_x, min_y, max_y    | 4 × f64   |
//! | values, `(ix, iy, iθ, a)` row-major | `nx·ny·nθ·3` × f64 |

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{GridSpec, QTable, N_ACTIONS};
use crate::env::{Action, DynamicsConfig, Rect};
use crate::{Error, Result};

pub const MAGIC: [u8; 8] = *b"ACOFIQT\0";
pub const FORMAT_VERSION: u32 = 1;

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64(r: &mut impl Read) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(f64::from_le_bytes(b))
}

fn truncated(e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::Format("file is truncated".into())
    } else {
        Error::Io(e)
    }
}

impl QTable {
    pub fn write_to(&self, w: impl Write) -> Result<()> {
        let mut w = BufWriter::new(w);
        let spec = self.grid.spec;
        w.write_all(&MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        for n in [spec.nx, spec.ny, spec.ntheta] {
            w.write_all(&(n as u32).to_le_bytes())?;
        }
        let b = self.grid.bounds;
        for x in [self.gamma, self.dyn_.v, self.dyn_.omega, b.min_x, b.max_x, b.min_y, b.max_y] {
            w.write_all(&x.to_le_bytes())?;
        }
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from(r: impl Read) -> Result<Self> {
        let mut r = BufReader::new(r);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(truncated)?;
        if magic != MAGIC {
            return Err(Error::Format("bad magic; not a q-table file".into()));
        }
        let version = read_u32(&mut r)?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let spec = GridSpec {
            nx: read_u32(&mut r)? as usize,
            ny: read_u32(&mut r)? as usize,
            ntheta: read_u32(&mut r)? as usize,
        };
        spec.validate().map_err(|e| Error::Format(e.to_string()))?;
        let gamma = read_f64(&mut r)?;
        let dyn_ = DynamicsConfig { v: read_f64(&mut r)?, omega: read_f64(&mut r)? };
        let bounds = Rect {
            min_x: read_f64(&mut r)?,
            max_x: read_f64(&mut r)?,
            min_y: read_f64(&mut r)?,
            max_y: read_f64(&mut r)?,
        };
        let n = spec.node_count() * N_ACTIONS;
        let mut values = Vec::with_capacity(n);
        for _ in 0..n {
            values.push(read_f64(&mut r)?);
        }
        if r.read(&mut [0u8; 1])? != 0 {
            return Err(Error::Format("trailing bytes after table body".into()));
        }
        QTable::from_values(spec, bounds, gamma, dyn_, values).map_err(|e| match e {
            Error::Config(m) => Error::Format(m),
            e => e,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(std::fs::File::open(path)?)
    }

    /// `px,py,theta,a,Q` rows, `a` being the steering sign.
    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut w = BufWriter::new(w);
        writeln!(w, "px,py,theta,a,Q")?;
        let spec = self.grid.spec;
        for i in 0..spec.nx {
            for j in 0..spec.ny {
                for k in 0..spec.ntheta {
                    let s = self.grid.node_state(i, j, k);
                    for a in Action::ALL {
                        writeln!(w, "{},{},{},{},{}", s.px, s.py, s.theta, a.sign(), self.stored(i, j, k, a))?;
                    }
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}
