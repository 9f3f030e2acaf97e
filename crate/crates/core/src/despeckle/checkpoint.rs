//! Versioned binary model checkpoints.
//!
//! Layout (little-endian): magic `RLDN`, `u32` version, architecture
//! (`u32` levels, `u32` kernel, `u8` residual, `f64` leaky slope, `u32`
//! channel count then one `u32` per channel), `f32` normalisation mean and
//! std, `u32` tensor count, then per tensor a `u32` rank, `u32` dims and
//! the `f32` values.

use std::path::Path;

use super::layers::Conv2d;
use super::model::DenoiserModel;
use super::unet::{Architecture, UNet};
use crate::error::{Error, Result};
use crate::io::{atomic_write, Reader};

pub const MAGIC: &[u8; 4] = b"RLDN";
pub const VERSION: u32 = 1;

pub fn encode(model: &DenoiserModel) -> Vec<u8> {
    let arch = model.arch();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(arch.levels as u32).to_le_bytes());
    out.extend_from_slice(&(arch.kernel as u32).to_le_bytes());
    out.push(arch.residual as u8);
    out.extend_from_slice(&arch.leaky_slope.to_le_bytes());
    out.extend_from_slice(&(arch.channels.len() as u32).to_le_bytes());
    for &c in &arch.channels {
        out.extend_from_slice(&(c as u32).to_le_bytes());
    }
    out.extend_from_slice(&model.norm_mean.to_le_bytes());
    out.extend_from_slice(&model.norm_std.to_le_bytes());
    out.extend_from_slice(&(2 * model.net.convs.len() as u32).to_le_bytes());
    for conv in &model.net.convs {
        let dims = [conv.cout, conv.cin, conv.k, conv.k];
        out.extend_from_slice(&4u32.to_le_bytes());
        for d in dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        conv.weight.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
        out.extend_from_slice(&1u32.to_le_bytes());
        out.extend_from_slice(&(conv.cout as u32).to_le_bytes());
        conv.bias.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<DenoiserModel> {
    let mut r = Reader::new(bytes);
    if r.take(4)? != MAGIC {
        return Err(Error::Format("not a model checkpoint (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let levels = r.u32()? as usize;
    let kernel = r.u32()? as usize;
    let residual = r.u8()? != 0;
    let leaky_slope = f64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
    let nch = r.u32()? as usize;
    if nch > 64 {
        return Err(Error::Format(format!("implausible channel count {nch}")));
    }
    let channels = (0..nch).map(|_| r.u32().map(|c| c as usize)).collect::<Result<Vec<_>>>()?;
    let arch = Architecture {
        levels,
        channels,
        kernel,
        residual,
        leaky_slope,
    };
    arch.validate().map_err(|e| Error::Format(e.to_string()))?;
    let norm_mean = r.f32()?;
    let norm_std = r.f32()?;

    let shapes = arch.conv_shapes();
    let count = r.u32()? as usize;
    if count != 2 * shapes.len() {
        return Err(Error::Format(format!(
            "expected {} tensors, found {count}",
            2 * shapes.len()
        )));
    }
    let mut convs = Vec::with_capacity(shapes.len());
    for (cin, cout, k) in shapes {
        let weight = read_tensor(&mut r, &[cout, cin, k, k])?;
        let bias = read_tensor(&mut r, &[cout])?;
        convs.push(Conv2d {
            cin,
            cout,
            k,
            weight,
            bias,
        });
    }
    if !r.is_empty() {
        return Err(Error::Format("trailing bytes after checkpoint".into()));
    }
    Ok(DenoiserModel {
        net: UNet { arch, convs },
        norm_mean,
        norm_std,
    })
}

fn read_tensor(r: &mut Reader, expected: &[usize]) -> Result<Vec<f32>> {
    let rank = r.u32()? as usize;
    if rank != expected.len() {
        return Err(Error::Format(format!("tensor rank {rank}, expected {}", expected.len())));
    }
    for &e in expected {
        let d = r.u32()? as usize;
        if d != e {
            return Err(Error::Format(format!("tensor shape mismatch: {d} vs {e}")));
        }
    }
    let n: usize = expected.iter().product();
    (0..n).map(|_| r.f32()).collect()
}

pub fn save(model: &DenoiserModel, path: impl AsRef<Path>) -> Result<()> {
    atomic_write(path.as_ref(), &encode(model))
}

pub fn load(path: impl AsRef<Path>) -> Result<DenoiserModel> {
    decode(&std::fs::read(path)?)
}
