//! Binary parameter files.
//!
//! All integers and floats are little-endian:
//!
//! ```text
//! offset  size  field
//! 0       4     magic            b"ANCP"
//! 4       2     format version   1
//! 6       1     activation       0 relu, 1 erf, 2 rbf, 3 linear
//! 7       1     reserved         0
//! 8       4     input_dim        u32
//! 12      4     hidden_width     u32
//! 16      8     rbf_width_sq     f64
//! 24      8     count            u64, must equal the shape's parameter count
//! 32      8*count theta          f64
//! ```
//!
//! Floats are stored as raw IEEE-754 bits, so a write/read cycle is bit-exact.

use std::io::{Read, Write};

use nalgebra::DVector;

use super::{Activation, NetworkParams, NetworkShape};
use crate::error::{Error, Result};

pub const PARAMS_MAGIC: [u8; 4] = *b"ANCP";
const VERSION: u16 = 1;

pub(crate) fn write_header<W: Write>(w: &mut W, magic: [u8; 4], shape: &NetworkShape) -> std::io::Result<()> {
    w.write_all(&magic)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&[shape.activation.code(), 0])?;
    w.write_all(&(shape.input_dim as u32).to_le_bytes())?;
    w.write_all(&(shape.hidden_width as u32).to_le_bytes())?;
    w.write_all(&shape.rbf_width_sq.to_le_bytes())?;
    w.write_all(&(shape.num_params() as u64).to_le_bytes())
}

pub(crate) fn read_header<R: Read>(r: &mut R, magic: [u8; 4]) -> Result<NetworkShape> {
    let mut buf = [0u8; 32];
    r.read_exact(&mut buf)?;
    if buf[0..4] != magic {
        return Err(format_error(format!("bad magic {:?}", &buf[0..4])));
    }
    let version = u16::from_le_bytes([buf[4], buf[5]]);
    if version != VERSION {
        return Err(format_error(format!("unsupported version {version}")));
    }
    let activation =
        Activation::from_code(buf[6]).ok_or_else(|| format_error(format!("unknown activation code {}", buf[6])))?;
    let input_dim = u32::from_le_bytes(buf[8..12].try_into().unwrap()) as usize;
    let hidden = u32::from_le_bytes(buf[12..16].try_into().unwrap()) as usize;
    let width = f64::from_le_bytes(buf[16..24].try_into().unwrap());
    let count = u64::from_le_bytes(buf[24..32].try_into().unwrap()) as usize;
    let shape = NetworkShape::with_rbf_width(input_dim, hidden, activation, width)?;
    if count != shape.num_params() {
        return Err(format_error(format!(
            "parameter count {count} does not match shape ({} expected)",
            shape.num_params()
        )));
    }
    Ok(shape)
}

pub(crate) fn write_vector<W: Write>(w: &mut W, v: &DVector<f64>) -> std::io::Result<()> {
    for x in v.iter() {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

pub(crate) fn read_vector<R: Read>(r: &mut R, len: usize) -> Result<DVector<f64>> {
    let mut bytes = vec![0u8; len * 8];
    r.read_exact(&mut bytes)?;
    Ok(DVector::from_iterator(
        len,
        bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())),
    ))
}

fn format_error(message: String) -> Error {
    Error::Format {
        path: Default::default(),
        message,
    }
}

pub fn write_params<W: Write>(w: &mut W, params: &NetworkParams) -> Result<()> {
    write_header(w, PARAMS_MAGIC, params.shape())?;
    write_vector(w, params.theta())?;
    Ok(())
}

pub fn read_params<R: Read>(r: &mut R) -> Result<NetworkParams> {
    let shape = read_header(r, PARAMS_MAGIC)?;
    let theta = read_vector(r, shape.num_params())?;
    NetworkParams::new(shape, theta)
}
