//! On-disk container. All integers little-endian.
//!
//! ```text
//! "IFLW"  u16 version
//! [32] model hash
//! u32 k  u32 h  u64 S  u32 b  u32 K  u32 M
//! u64 channels  u64 positions  i64 range_lo  i64 range_hi
//! u8 dequantizer (0 uniform, 1 flow + 6 × f64)
//! u64 seed  u64 initial_fill
//! u32 streams, then per stream:
//!     u64 samples  u64 borrowed  u64 words  words × u32  u64 state
//! u64 metadata length, metadata bytes
//! ```

use crate::codec::dequant::{Dequantizer, FlowDequantizer};
use crate::error::{Error, Result};
use crate::fixedq::Precision;
use crate::ubcs::{CoderParams, CoderState};

pub const MAGIC: &[u8; 4] = b"IFLW";
pub const VERSION: u16 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct StreamRecord {
    pub samples: u64,
    /// Seeded words the encoder drew from below the starting top.
    pub borrowed: u64,
    pub state: CoderState,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Container {
    pub model_hash: [u8; 32],
    pub precision: Precision,
    pub coder: CoderParams,
    pub channels: u64,
    pub positions: u64,
    /// Integer range `[lo, hi)` of the data.
    pub range: (i64, i64),
    pub dequantizer: Dequantizer,
    pub seed: u64,
    pub initial_fill: u64,
    pub streams: Vec<StreamRecord>,
    /// Opaque bytes for the application, e.g. an image header.
    pub metadata: Vec<u8>,
}

impl Container {
    pub fn sample_count(&self) -> u64 {
        self.streams.iter().map(|s| s.samples).sum()
    }

    /// Bits of stored payload words over all streams.
    pub fn payload_bits(&self) -> u64 {
        self.streams
            .iter()
            .map(|s| s.state.stream().len() as u64 * self.coder.word_bits() as u64)
            .sum()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Vec::new();
        w.extend_from_slice(MAGIC);
        w.extend_from_slice(&VERSION.to_le_bytes());
        w.extend_from_slice(&self.model_hash);
        let p = &self.precision;
        for v in [p.k, p.h] {
            w.extend_from_slice(&v.to_le_bytes());
        }
        w.extend_from_slice(&p.s.to_le_bytes());
        for v in [p.b, self.coder.word_bits(), self.coder.norm_bits()] {
            w.extend_from_slice(&v.to_le_bytes());
        }
        for v in [self.channels, self.positions] {
            w.extend_from_slice(&v.to_le_bytes());
        }
        for v in [self.range.0, self.range.1] {
            w.extend_from_slice(&v.to_le_bytes());
        }
        match self.dequantizer {
            Dequantizer::Uniform => w.push(0),
            Dequantizer::Flow(f) => {
                w.push(1);
                for v in [
                    f.noise_scale,
                    f.scale_weight,
                    f.scale_bias,
                    f.shift_weight,
                    f.shift_bias,
                    f.scale_bound,
                ] {
                    w.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        for v in [self.seed, self.initial_fill] {
            w.extend_from_slice(&v.to_le_bytes());
        }
        w.extend_from_slice(&(self.streams.len() as u32).to_le_bytes());
        for s in &self.streams {
            w.extend_from_slice(&s.samples.to_le_bytes());
            w.extend_from_slice(&s.borrowed.to_le_bytes());
            w.extend_from_slice(&s.state.to_bytes());
        }
        w.extend_from_slice(&(self.metadata.len() as u64).to_le_bytes());
        w.extend_from_slice(&self.metadata);
        w
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Corrupt("not an iflow container".into()));
        }
        let version = r.u16()?;
        if version != VERSION {
            return Err(Error::Version(version));
        }
        let model_hash: [u8; 32] = r.take(32)?.try_into().unwrap();
        let (k, h, s, b) = (r.u32()?, r.u32()?, r.u64()?, r.u32()?);
        let precision = Precision::new(k, h, s, b).map_err(|e| Error::Corrupt(format!("header precision: {e}")))?;
        let coder = CoderParams::new(r.u32()?, r.u32()?).map_err(|e| Error::Corrupt(format!("header coder: {e}")))?;
        let channels = r.u64()?;
        let positions = r.u64()?;
        let range = (r.i64()?, r.i64()?);
        if range.0 >= range.1 {
            return Err(Error::Corrupt("empty data range".into()));
        }
        let dequantizer = match r.u8()? {
            0 => Dequantizer::Uniform,
            1 => {
                let f = FlowDequantizer {
                    noise_scale: r.f64()?,
                    scale_weight: r.f64()?,
                    scale_bias: r.f64()?,
                    shift_weight: r.f64()?,
                    shift_bias: r.f64()?,
                    scale_bound: r.f64()?,
                };
                f.validate().map_err(|e| Error::Corrupt(format!("dequantizer: {e}")))?;
                Dequantizer::Flow(f)
            }
            t => return Err(Error::Corrupt(format!("unknown dequantizer tag {t}"))),
        };
        let seed = r.u64()?;
        let initial_fill = r.u64()?;
        let n = r.u32()?;
        let mut streams = Vec::new();
        for _ in 0..n {
            let samples = r.u64()?;
            let borrowed = r.u64()?;
            let (state, used) = CoderState::from_bytes(coder, &bytes[r.pos..])?;
            r.pos += used;
            streams.push(StreamRecord {
                samples,
                borrowed,
                state,
            });
        }
        let meta_len = usize::try_from(r.u64()?).map_err(|_| r.short())?;
        let metadata = r.take(meta_len)?.to_vec();
        if r.pos != bytes.len() {
            return Err(Error::Corrupt(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Container {
            model_hash,
            precision,
            coder,
            channels,
            positions,
            range,
            dequantizer,
            seed,
            initial_fill,
            streams,
            metadata,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn short(&self) -> Error {
        Error::Corrupt(format!("container truncated at byte {}", self.pos))
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| self.short())?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn i64(&mut self) -> Result<i64> {
        Ok(i64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
