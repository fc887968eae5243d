//! Serialized stream format.
//!
//! Little-endian layout:
//!
//! ```text
//! magic "RTC1" | version u16 | n u32 | levels u16 | t_obs_us u64 |
//! digest u64 | flags u8 (bit 0: DC present) | released bitmap u32 |
//! [dc u16] | released band payloads, ascending k, 4^k x u16 each
//! ```
//!
//! Counts are signed (ON/OFF pathways share one array) and stored
//! zigzag-mapped in fixed 16-bit cells. Bands whose release time lies past
//! the stream's observation time carry no payload; the bitmap says which.

use thiserror::Error;

pub const STREAM_MAGIC: [u8; 4] = *b"RTC1";
pub const STREAM_VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum StreamError {
    #[error("bad magic {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("unsupported stream version {0}")]
    UnsupportedVersion(u16),
    #[error("stream is truncated: need {needed} bytes, have {got}")]
    Truncated { needed: usize, got: usize },
    #[error("{got} trailing bytes after the declared payload")]
    TrailingBytes { got: usize },
    #[error("malformed header: {0}")]
    BadHeader(String),
    #[error("band {band} holds {got} counts, expected {expected}")]
    BandLength {
        band: usize,
        got: usize,
        expected: usize,
    },
    #[error("count {0} does not fit the 16-bit symbol range")]
    CountOverflow(i64),
    #[error("stream digest {stream:016x} does not match configuration digest {config:016x}")]
    DigestMismatch { stream: u64, config: u64 },
}

/// A coded image: header fields plus per-band signed spike counts. Bands
/// not yet released at `t_obs_us` are `None`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedImage {
    pub n: u32,
    pub levels: u16,
    pub t_obs_us: u64,
    pub digest: u64,
    pub dc: Option<i32>,
    pub bands: Vec<Option<Vec<i32>>>,
}

impl EncodedImage {
    pub fn t_obs_s(&self) -> f64 {
        self.t_obs_us as f64 * 1e-6
    }

    /// Number of coefficients band `k` must hold when released.
    pub fn band_len(k: usize) -> usize {
        1usize << (2 * k)
    }

    pub fn validate(&self) -> Result<(), StreamError> {
        if !self.n.is_power_of_two() || self.n < 8 {
            return Err(StreamError::BadHeader(format!(
                "n must be a power of two >= 8, got {}",
                self.n
            )));
        }
        let expected_levels = self.n.ilog2() as u16 + 1;
        if self.levels != expected_levels {
            return Err(StreamError::BadHeader(format!(
                "levels {} inconsistent with n {}",
                self.levels, self.n
            )));
        }
        if self.bands.len() != self.levels as usize {
            return Err(StreamError::BadHeader(format!(
                "band table holds {} entries, expected {}",
                self.bands.len(),
                self.levels
            )));
        }
        for (k, band) in self.bands.iter().enumerate() {
            if let Some(counts) = band {
                if counts.len() != Self::band_len(k) {
                    return Err(StreamError::BandLength {
                        band: k,
                        got: counts.len(),
                        expected: Self::band_len(k),
                    });
                }
            }
        }
        Ok(())
    }
}

fn zigzag(v: i32) -> Result<u16, StreamError> {
    if !(-32768..=32767).contains(&v) {
        return Err(StreamError::CountOverflow(v as i64));
    }
    let v = v as i16;
    Ok(((v << 1) ^ (v >> 15)) as u16)
}

fn unzigzag(u: u16) -> i32 {
    ((u >> 1) as i16 ^ -((u & 1) as i16)) as i32
}

pub fn serialize(image: &EncodedImage) -> Result<Vec<u8>, StreamError> {
    image.validate()?;
    if image.levels > 32 {
        return Err(StreamError::BadHeader(format!(
            "released bitmap holds at most 32 bands, got {}",
            image.levels
        )));
    }
    let mut out = Vec::new();
    out.extend_from_slice(&STREAM_MAGIC);
    out.extend_from_slice(&STREAM_VERSION.to_le_bytes());
    out.extend_from_slice(&image.n.to_le_bytes());
    out.extend_from_slice(&image.levels.to_le_bytes());
    out.extend_from_slice(&image.t_obs_us.to_le_bytes());
    out.extend_from_slice(&image.digest.to_le_bytes());
    let flags: u8 = u8::from(image.dc.is_some());
    out.push(flags);
    let mut bitmap: u32 = 0;
    for (k, band) in image.bands.iter().enumerate() {
        if band.is_some() {
            bitmap |= 1 << k;
        }
    }
    out.extend_from_slice(&bitmap.to_le_bytes());
    if let Some(dc) = image.dc {
        out.extend_from_slice(&zigzag(dc)?.to_le_bytes());
    }
    for band in image.bands.iter().flatten() {
        for &count in band {
            out.extend_from_slice(&zigzag(count)?.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn deserialize(bytes: &[u8]) -> Result<EncodedImage, StreamError> {
    let mut r = Reader { bytes, pos: 0 };
    let magic: [u8; 4] = r.take(4)?.try_into().unwrap();
    if magic != STREAM_MAGIC {
        return Err(StreamError::BadMagic(magic));
    }
    let version = u16::from_le_bytes(r.take(2)?.try_into().unwrap());
    if version != STREAM_VERSION {
        return Err(StreamError::UnsupportedVersion(version));
    }
    let n = u32::from_le_bytes(r.take(4)?.try_into().unwrap());
    let levels = u16::from_le_bytes(r.take(2)?.try_into().unwrap());
    let t_obs_us = u64::from_le_bytes(r.take(8)?.try_into().unwrap());
    let digest = u64::from_le_bytes(r.take(8)?.try_into().unwrap());
    let flags = r.take(1)?[0];
    if flags & !1 != 0 {
        return Err(StreamError::BadHeader(format!(
            "unknown flag bits {flags:#04x}"
        )));
    }
    let bitmap = u32::from_le_bytes(r.take(4)?.try_into().unwrap());
    if levels > 32 || (levels < 32 && bitmap >> levels != 0) {
        return Err(StreamError::BadHeader(format!(
            "released bitmap {bitmap:#x} names bands past level {levels}"
        )));
    }

    let dc = if flags & 1 != 0 {
        Some(unzigzag(u16::from_le_bytes(r.take(2)?.try_into().unwrap())))
    } else {
        None
    };

    let mut bands = Vec::with_capacity(levels as usize);
    for k in 0..levels as usize {
        if bitmap & (1 << k) == 0 {
            bands.push(None);
            continue;
        }
        let len = EncodedImage::band_len(k);
        let raw = r.take(2 * len)?;
        let counts = raw
            .chunks_exact(2)
            .map(|c| unzigzag(u16::from_le_bytes([c[0], c[1]])))
            .collect();
        bands.push(Some(counts));
    }
    if r.pos != bytes.len() {
        return Err(StreamError::TrailingBytes {
            got: bytes.len() - r.pos,
        });
    }

    let image = EncodedImage {
        n,
        levels,
        t_obs_us,
        digest,
        dc,
        bands,
    };
    image.validate()?;
    Ok(image)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], StreamError> {
        if self.pos + n > self.bytes.len() {
            return Err(StreamError::Truncated {
                needed: self.pos + n,
                got: self.bytes.len(),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> EncodedImage {
        EncodedImage {
            n: 8,
            levels: 4,
            t_obs_us: 50_000,
            digest: 0xdeadbeefcafef00d,
            dc: Some(42),
            bands: vec![
                Some(vec![3]),
                Some(vec![-1, 0, 2, 7]),
                None,
                Some(vec![0; 64]),
            ],
        }
    }

    #[test]
    fn roundtrip_preserves_everything() {
        let image = sample();
        let bytes = serialize(&image).unwrap();
        let back = deserialize(&bytes).unwrap();
        assert_eq!(back, image);
    }

    #[test]
    fn corrupted_magic_is_rejected() {
        let mut bytes = serialize(&sample()).unwrap();
        bytes[0] ^= 0xff;
        assert!(matches!(deserialize(&bytes), Err(StreamError::BadMagic(_))));
    }

    #[test]
    fn truncation_is_detected() {
        let bytes = serialize(&sample()).unwrap();
        for cut in [bytes.len() - 1, bytes.len() - 7, 10, 3] {
            assert!(
                matches!(deserialize(&bytes[..cut]), Err(StreamError::Truncated { .. })),
                "cut at {cut}"
            );
        }
    }

    #[test]
    fn trailing_bytes_are_rejected() {
        let mut bytes = serialize(&sample()).unwrap();
        bytes.push(0);
        assert!(matches!(
            deserialize(&bytes),
            Err(StreamError::TrailingBytes { .. })
        ));
    }

    #[test]
    fn band_length_mismatch_is_rejected_before_serialization() {
        let mut image = sample();
        image.bands[1] = Some(vec![1, 2, 3]); // band 1 must hold 4
        assert!(matches!(
            serialize(&image),
            Err(StreamError::BandLength { band: 1, .. })
        ));
    }

    #[test]
    fn count_overflow_is_rejected() {
        let mut image = sample();
        image.dc = Some(40_000);
        assert!(matches!(
            serialize(&image),
            Err(StreamError::CountOverflow(40_000))
        ));
    }

    #[test]
    fn zigzag_examples() {
        for (v, expect) in [(0, 0u16), (-1, 1), (1, 2), (-2, 3), (2, 4)] {
            assert_eq!(zigzag(v).unwrap(), expect);
            assert_eq!(unzigzag(expect), v);
        }
    }

    proptest! {
        #[test]
        fn zigzag_roundtrips(v in -32768i32..=32767) {
            prop_assert_eq!(unzigzag(zigzag(v).unwrap()), v);
        }

        #[test]
        fn random_streams_roundtrip(
            dc in proptest::option::of(-300i32..300),
            t_obs in 0u64..10_000_000,
            releases in proptest::collection::vec(any::<bool>(), 4),
            seed in any::<u64>(),
        ) {
            let mut state = seed;
            let mut next = || {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1);
                ((state >> 40) as i32 % 200) - 100
            };
            let bands: Vec<Option<Vec<i32>>> = releases
                .iter()
                .enumerate()
                .map(|(k, &on)| {
                    on.then(|| (0..EncodedImage::band_len(k)).map(|_| next()).collect())
                })
                .collect();
            let image = EncodedImage {
                n: 8,
                levels: 4,
                t_obs_us: t_obs,
                digest: seed,
                dc,
                bands,
            };
            let bytes = serialize(&image).unwrap();
            prop_assert_eq!(deserialize(&bytes).unwrap(), image);
        }
    }
}
