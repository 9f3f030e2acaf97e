//! SRAS: magic `SRAS`, `u32` version, `u8` kind tag, `u32` width, `u32`
//! height, then `width * height` little-endian `f32` samples, row-major.

use std::path::Path;

use super::{atomic_write, Reader};
use crate::error::{Error, Result};
use crate::raster::{Raster, RasterKind};

pub const RASTER_MAGIC: &[u8; 4] = b"SRAS";
pub const RASTER_VERSION: u32 = 1;
const HEADER_LEN: usize = 17;

/// Serialises a raster; samples are rounded to `f32`.
pub fn encode_raster(raster: &Raster) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * raster.len());
    out.extend_from_slice(RASTER_MAGIC);
    out.extend_from_slice(&RASTER_VERSION.to_le_bytes());
    out.push(raster.kind().tag());
    out.extend_from_slice(&(raster.width() as u32).to_le_bytes());
    out.extend_from_slice(&(raster.height() as u32).to_le_bytes());
    for &v in raster.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode_raster(bytes: &[u8]) -> Result<Raster> {
    let mut r = Reader::new(bytes);
    if r.take(4).map_err(|_| Error::Format("truncated header".into()))? != RASTER_MAGIC {
        return Err(Error::Format("not an SRAS raster (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != RASTER_VERSION {
        return Err(Error::Format(format!("unsupported SRAS version {version}")));
    }
    let tag = r.u8()?;
    let kind = RasterKind::from_tag(tag).ok_or_else(|| Error::Format(format!("unknown kind tag {tag}")))?;
    let width = r.u32()? as usize;
    let height = r.u32()? as usize;
    let n = width
        .checked_mul(height)
        .filter(|n| n.checked_mul(4).is_some())
        .ok_or_else(|| Error::Format(format!("dimensions {width}x{height} overflow")))?;
    if r.remaining() != n * 4 {
        return Err(Error::Format(format!(
            "payload is {} bytes, expected {} for {width}x{height}",
            r.remaining(),
            n * 4
        )));
    }
    let data = (0..n).map(|_| r.f32().map(f64::from)).collect::<Result<Vec<_>>>()?;
    Raster::new(width, height, kind, data).map_err(|e| Error::Format(e.to_string()))
}

pub fn write_raster(raster: &Raster, path: impl AsRef<Path>) -> Result<()> {
    atomic_write(path.as_ref(), &encode_raster(raster))
}

pub fn read_raster(path: impl AsRef<Path>) -> Result<Raster> {
    decode_raster(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_pixel_round_trip() {
        let r = Raster::new(1, 1, RasterKind::Cost, vec![0.125]).unwrap();
        let bytes = encode_raster(&r);
        assert_eq!(bytes.len(), HEADER_LEN + 4);
        assert_eq!(decode_raster(&bytes).unwrap(), r);
    }

    #[test]
    fn malformed_inputs() {
        let r = Raster::new(2, 1, RasterKind::Mask, vec![0.0, 1.0]).unwrap();
        let bytes = encode_raster(&r);
        let mut bad = bytes.clone();
        bad[..4].copy_from_slice(b"SRAZ");
        assert!(matches!(decode_raster(&bad), Err(Error::Format(_))));
        assert!(decode_raster(&bytes[..bytes.len() - 1]).is_err());
        assert!(decode_raster(&bytes[..3]).is_err());
        let mut kind = bytes.clone();
        kind[8] = 42;
        assert!(decode_raster(&kind).is_err());
        let mut huge = bytes;
        huge[9..13].copy_from_slice(&u32::MAX.to_le_bytes());
        huge[13..17].copy_from_slice(&u32::MAX.to_le_bytes());
        assert!(decode_raster(&huge).is_err());
    }

    proptest! {
        #[test]
        fn f32_valued_rasters_round_trip_bit_exact(
            (w, h) in (1usize..12, 1usize..12),
            seed in any::<u64>(),
        ) {
            let mut s = seed | 1;
            let r = Raster::from_fn(w, h, RasterKind::LogIntensity, |_, _| {
                s ^= s << 13; s ^= s >> 7; s ^= s << 17;
                f32::from_bits((s as u32 & 0x007f_ffff) | 0x3f80_0000) as f64 - 1.5
            }).unwrap();
            let back = decode_raster(&encode_raster(&r)).unwrap();
            prop_assert_eq!(back.kind(), r.kind());
            let same = back.data().iter().zip(r.data()).all(|(a, b)| a.to_bits() == b.to_bits());
            prop_assert!(same);
            prop_assert_eq!(encode_raster(&back), encode_raster(&r));
        }
    }
}
