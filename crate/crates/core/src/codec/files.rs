//! GMXT latent tensor files and GMXB bitstream files.
//!
//! Both are little-endian and end with a CRC32 of every preceding byte.

use std::io::{Read, Write};
use std::path::Path;

use crate::grouping::{GroupOrder, GroupScheme, SpatialPattern};
use crate::numerics::Tensor;
use crate::{Error, Result};

pub const TENSOR_MAGIC: [u8; 4] = *b"GMXT";
pub const TENSOR_VERSION: u16 = 1;
pub const STREAM_MAGIC: [u8; 4] = *b"GMXB";
pub const STREAM_VERSION: u16 = 1;

/// Appends the CRC32 of `buf` to it.
pub(crate) fn seal(mut buf: Vec<u8>) -> Vec<u8> {
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    buf
}

/// Checks the trailing CRC32 and returns the covered bytes.
pub(crate) fn unseal(bytes: &[u8]) -> Result<&[u8]> {
    if bytes.len() < 4 {
        return Err(Error::Truncated("checksum"));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }
    Ok(body)
}

/// Little-endian cursor over a byte slice.
pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8], what: &'static str) -> Self {
        Self { buf, pos: 0, what }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Truncated(self.what));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = self.take(n.checked_mul(4).ok_or(Error::Truncated(self.what))?)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect())
    }

    pub fn magic(&mut self, expected: [u8; 4]) -> Result<()> {
        let found: [u8; 4] = self.take(4)?.try_into().unwrap();
        if found != expected {
            return Err(Error::Magic { expected, found });
        }
        Ok(())
    }

    pub fn version(&mut self, expected: u16) -> Result<()> {
        let found = self.u16()?;
        if found != expected {
            return Err(Error::Version { expected, found });
        }
        Ok(())
    }

    pub fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes in {}",
                self.buf.len() - self.pos,
                self.what
            )));
        }
        Ok(())
    }
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    Ok(buf)
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(bytes)?;
    Ok(())
}

fn dim_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Shape(format!("{what} {v} does not fit in u32")))
}

/// Serialises an `[H × W × C]` tensor as GMXT.
pub fn tensor_to_bytes(y: &Tensor) -> Result<Vec<u8>> {
    let (h, w, c) = match *y.shape() {
        [h, w, c] => (h, w, c),
        _ => return Err(Error::Shape(format!("GMXT holds H×W×C tensors, got {:?}", y.shape()))),
    };
    let mut buf = Vec::with_capacity(22 + y.len() * 4);
    buf.extend_from_slice(&TENSOR_MAGIC);
    buf.extend_from_slice(&TENSOR_VERSION.to_le_bytes());
    for d in [h, w, c] {
        buf.extend_from_slice(&dim_u32(d, "dimension")?.to_le_bytes());
    }
    for v in y.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    Ok(seal(buf))
}

pub fn tensor_from_bytes(bytes: &[u8]) -> Result<Tensor> {
    let mut r = Reader::new(bytes, "GMXT");
    r.magic(TENSOR_MAGIC)?;
    r.version(TENSOR_VERSION)?;
    let body = unseal(bytes)?;
    let mut r = Reader::new(body, "GMXT");
    r.take(6)?;
    let (h, w, c) = (r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
    let n = h
        .checked_mul(w)
        .and_then(|v| v.checked_mul(c))
        .ok_or_else(|| Error::Format("GMXT dimensions overflow".into()))?;
    let data = r.f32s(n)?;
    r.finish()?;
    Tensor::new(vec![h, w, c], data)
}

pub fn write_tensor(path: impl AsRef<Path>, y: &Tensor) -> Result<()> {
    write_file(path.as_ref(), &tensor_to_bytes(y)?)
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    tensor_from_bytes(&read_file(path.as_ref())?)
}

/// Compressed latents: header plus the hyper (`z`) and latent (`y`) streams.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bitstream {
    /// Hash of the model configuration the stream was coded with.
    pub config_hash: u64,
    pub height: u32,
    pub width: u32,
    pub channels: u32,
    pub scheme: GroupScheme,
    /// Reserved, always 0.
    pub flags: u16,
    pub z: Vec<u8>,
    pub y: Vec<u8>,
}

impl Bitstream {
    /// Total payload bits of both streams.
    pub fn payload_bits(&self) -> u64 {
        8 * (self.z.len() + self.y.len()) as u64
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::with_capacity(48 + self.z.len() + self.y.len());
        buf.extend_from_slice(&STREAM_MAGIC);
        buf.extend_from_slice(&STREAM_VERSION.to_le_bytes());
        buf.extend_from_slice(&self.config_hash.to_le_bytes());
        for d in [self.height, self.width, self.channels] {
            buf.extend_from_slice(&d.to_le_bytes());
        }
        buf.extend_from_slice(&dim_u32(self.scheme.channel_slices(), "channel slices")?.to_le_bytes());
        buf.push(self.scheme.pattern().code());
        buf.push(self.scheme.order().code());
        buf.extend_from_slice(&self.flags.to_le_bytes());
        for s in [&self.z, &self.y] {
            buf.extend_from_slice(&dim_u32(s.len(), "stream length")?.to_le_bytes());
            buf.extend_from_slice(s);
        }
        Ok(seal(buf))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, "GMXB");
        r.magic(STREAM_MAGIC)?;
        r.version(STREAM_VERSION)?;
        let body = unseal(bytes)?;
        let mut r = Reader::new(body, "GMXB");
        r.take(6)?;
        let config_hash = r.u64()?;
        let (height, width, channels) = (r.u32()?, r.u32()?, r.u32()?);
        let slices = r.u32()? as usize;
        let pattern = SpatialPattern::from_code(r.u8()?)?;
        let order = GroupOrder::from_code(r.u8()?)?;
        let scheme = GroupScheme::new(slices, pattern, order)?;
        let flags = r.u16()?;
        if flags != 0 {
            return Err(Error::Format(format!("unknown stream flags {flags:#06x}")));
        }
        scheme.dims(height as usize, width as usize, channels as usize)?;
        let zl = r.u32()? as usize;
        let z = r.take(zl)?.to_vec();
        let yl = r.u32()? as usize;
        let y = r.take(yl)?.to_vec();
        r.finish()?;
        Ok(Self {
            config_hash,
            height,
            width,
            channels,
            scheme,
            flags,
            z,
            y,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        write_file(path.as_ref(), &self.to_bytes()?)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&read_file(path.as_ref())?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_stream() -> Bitstream {
        Bitstream {
            config_hash: 0x0123_4567_89AB_CDEF,
            height: 16,
            width: 16,
            channels: 32,
            scheme: GroupScheme::new(4, SpatialPattern::Checkerboard2, GroupOrder::ChannelFirst).unwrap(),
            flags: 0,
            z: vec![1, 2, 3, 4],
            y: vec![9; 10],
        }
    }

    #[test]
    fn tensor_roundtrip_and_layout() {
        let y = Tensor::from_fn(&[2, 3, 4], |i| i as f32 * 0.5 - 3.0);
        let b = tensor_to_bytes(&y).unwrap();
        assert_eq!(&b[..4], b"GMXT");
        assert_eq!(b.len(), 4 + 2 + 12 + 24 * 4 + 4);
        // Element (i=1, j=2, k=3) sits at ((1·3)+2)·4+3 = 23.
        let off = 18 + 23 * 4;
        assert_eq!(f32::from_le_bytes(b[off..off + 4].try_into().unwrap()), y.data()[23]);
        assert_eq!(tensor_from_bytes(&b).unwrap(), y);
    }

    #[test]
    fn tensor_rejects_corruption() {
        let y = Tensor::from_fn(&[1, 2, 2], |i| i as f32);
        let mut b = tensor_to_bytes(&y).unwrap();
        b[20] ^= 1;
        assert!(matches!(tensor_from_bytes(&b), Err(Error::Checksum { .. })));
        let mut b = tensor_to_bytes(&y).unwrap();
        b[0] = b'X';
        assert!(matches!(tensor_from_bytes(&b), Err(Error::Magic { .. })));
        let mut b = tensor_to_bytes(&y).unwrap();
        b[4] = 9;
        assert!(matches!(tensor_from_bytes(&b), Err(Error::Version { found: 9, .. })));
        assert!(tensor_from_bytes(&b[..3]).is_err());
        assert!(tensor_to_bytes(&Tensor::zeros(&[4])).is_err());
    }

    #[test]
    fn stream_roundtrip() {
        let s = sample_stream();
        let b = s.to_bytes().unwrap();
        assert_eq!(&b[..4], b"GMXB");
        assert_eq!(Bitstream::from_bytes(&b).unwrap(), s);
        assert_eq!(s.payload_bits(), 112);
    }

    #[test]
    fn stream_rejects_bad_headers() {
        let mut s = sample_stream();
        s.flags = 1;
        assert!(Bitstream::from_bytes(&s.to_bytes().unwrap()).is_err());
        let mut s = sample_stream();
        s.width = 15;
        assert!(Bitstream::from_bytes(&s.to_bytes().unwrap()).is_err());
        let mut b = sample_stream().to_bytes().unwrap();
        let n = b.len();
        b[n - 6] ^= 0x40;
        assert!(matches!(Bitstream::from_bytes(&b), Err(Error::Checksum { .. })));
    }
}
