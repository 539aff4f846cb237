//! `AELT` latent token files.
//!
//! ```text
//! offset  size  field
//!      0     4  magic "AELT"
//!      4     4  version (u32, = 1)
//!      8     4  n_samples (u32)
//!     12     4  n_tokens N (u32)
//!     16     4  d (u32)
//!     20     4  total_steps T (u32)
//!     24     4  dtype: element size in bytes (u32, 4 = f32, 8 = f64)
//!     28        n_samples × { timestep: u32, tokens: N·d elements, row-major }
//! ```
//!
//! All fields are little-endian. The file length must match the header exactly.

use std::fs;
use std::path::Path;

use super::Dtype;
use crate::attention::LatentTokens;
use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub const LATENT_MAGIC: [u8; 4] = *b"AELT";
pub const LATENT_VERSION: u32 = 1;
const HEADER_LEN: usize = 28;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LatentHeader {
    pub version: u32,
    pub n_samples: u32,
    pub n_tokens: u32,
    pub d: u32,
    pub total_steps: u32,
    pub dtype: Dtype,
}

impl LatentHeader {
    fn sample_len(&self) -> u64 {
        4 + u64::from(self.n_tokens) * u64::from(self.d) * self.dtype.size() as u64
    }

    fn file_len(&self) -> u64 {
        HEADER_LEN as u64 + u64::from(self.n_samples) * self.sample_len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentFile {
    pub header: LatentHeader,
    /// Every sample carries its timestep.
    pub samples: Vec<LatentTokens>,
}

impl LatentFile {
    pub fn new(samples: Vec<LatentTokens>, total_steps: u32, dtype: Dtype) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::invalid("a latent file needs at least one sample"))?;
        let (n_tokens, d) = first.z.shape();
        for s in &samples {
            if s.z.shape() != (n_tokens, d) {
                return Err(Error::DimensionMismatch {
                    op: "latent file",
                    lhs: s.z.shape(),
                    rhs: (n_tokens, d),
                });
            }
            if s.timestep.is_none() {
                return Err(Error::invalid("every latent sample needs a timestep"));
            }
        }
        let to_u32 = |x: usize, what: &str| u32::try_from(x).map_err(|_| Error::invalid(format!("{what} exceeds u32")));
        Ok(Self {
            header: LatentHeader {
                version: LATENT_VERSION,
                n_samples: to_u32(samples.len(), "n_samples")?,
                n_tokens: to_u32(n_tokens, "n_tokens")?,
                d: to_u32(d, "d")?,
                total_steps,
                dtype,
            },
            samples,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let h = &self.header;
        let mut out = Vec::with_capacity(h.file_len() as usize);
        out.extend_from_slice(&LATENT_MAGIC);
        for field in [h.version, h.n_samples, h.n_tokens, h.d, h.total_steps, h.dtype.size() as u32] {
            out.extend_from_slice(&field.to_le_bytes());
        }
        for s in &self.samples {
            out.extend_from_slice(&s.timestep.unwrap_or(0).to_le_bytes());
            h.dtype.encode_into(s.z.as_slice(), &mut out);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let fail = |reason: String| Error::format(path, reason);
        if bytes.len() < HEADER_LEN {
            return Err(fail(format!("file is {} bytes, shorter than the {HEADER_LEN}-byte header", bytes.len())));
        }
        if bytes[..4] != LATENT_MAGIC {
            return Err(fail("bad magic (expected \"AELT\")".into()));
        }
        let field = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().expect("4 bytes"));
        let version = field(0);
        if version != LATENT_VERSION {
            return Err(fail(format!("unsupported version {version}")));
        }
        let dtype = Dtype::from_size(field(5)).ok_or_else(|| fail(format!("unknown dtype code {}", field(5))))?;
        let header = LatentHeader {
            version,
            n_samples: field(1),
            n_tokens: field(2),
            d: field(3),
            total_steps: field(4),
            dtype,
        };
        if header.n_tokens == 0 || header.d == 0 {
            return Err(fail("n_tokens and d must be positive".into()));
        }
        if header.file_len() != bytes.len() as u64 {
            return Err(fail(format!(
                "declared sizes imply {} bytes but file has {}",
                header.file_len(),
                bytes.len()
            )));
        }

        let (n, d) = (header.n_tokens as usize, header.d as usize);
        let stride = header.sample_len() as usize;
        let mut samples = Vec::with_capacity(header.n_samples as usize);
        for chunk in bytes[HEADER_LEN..].chunks_exact(stride) {
            let timestep = u32::from_le_bytes(chunk[..4].try_into().expect("4 bytes"));
            let z = Matrix::new(n, d, dtype.decode(&chunk[4..]))
                .map_err(|e| fail(format!("sample {}: {e}", samples.len())))?;
            samples.push(LatentTokens::at_timestep(z, timestep));
        }
        Ok(Self { header, samples })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }

    /// Same header, new sample contents.
    pub fn with_samples(&self, samples: Vec<LatentTokens>) -> Self {
        Self {
            header: self.header,
            samples,
        }
    }
}
