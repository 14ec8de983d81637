//! On-disk formats. All integers and floats are little-endian.
//!
//! Matrix file (`SSHMAT01`):
//!
//! | offset | size | field                           |
//! |--------|------|---------------------------------|
//! | 0      | 8    | magic `SSHMAT01`                |
//! | 8      | 4    | rows, u32                       |
//! | 12     | 4    | cols, u32                       |
//! | 16     | 4·rc | entries, f32, row-major         |
//!
//! Checkpoint (`SSHCKPT1`), `n = n_energy + n_random`:
//!
//! | offset  | size | field                                        |
//! |---------|------|----------------------------------------------|
//! | 0       | 8    | magic `SSHCKPT1`                             |
//! | 8       | 4    | d1, u32                                      |
//! | 12      | 4    | d2, u32                                      |
//! | 16      | 8    | alpha, f64                                   |
//! | 24      | 4    | n_energy, u32                                |
//! | 28      | 4    | n_random, u32                                |
//! | 32      | 8n   | positions, (u: u32, v: u32), energy set first|
//! | 32+8n   | 4n   | coefficients, f32, same order                |
//! | 32+12n  | 8    | digest of the base weight, u64               |
//!
//! The digest is 64-bit FNV-1a over `d1` and `d2` (as u64) followed by the
//! IEEE-754 bits of every `W0` entry (as u64), row-major.

use std::path::Path;

use crate::adapter::SshLayer;
use crate::numerics::Matrix;
use crate::spectrum::{FrequencyMask, Fnv1a};
use crate::{Error, Result};

pub const MATRIX_MAGIC: &[u8; 8] = b"SSHMAT01";
pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SSHCKPT1";

const MATRIX_HEADER: usize = 16;
const CHECKPOINT_HEADER: usize = 32;

fn u32_at(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"))
}

fn u64_at(bytes: &[u8], at: usize) -> u64 {
    u64::from_le_bytes(bytes[at..at + 8].try_into().expect("8 bytes"))
}

fn to_u32(x: usize, what: &str) -> Result<u32> {
    u32::try_from(x).map_err(|_| Error::Contract(format!("{what} {x} does not fit in u32")))
}

pub fn encode_matrix(m: &Matrix) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(MATRIX_HEADER + 4 * m.len());
    out.extend_from_slice(MATRIX_MAGIC);
    out.extend_from_slice(&to_u32(m.rows(), "rows")?.to_le_bytes());
    out.extend_from_slice(&to_u32(m.cols(), "cols")?.to_le_bytes());
    for &v in m.as_slice() {
        let f = v as f32;
        if !f.is_finite() {
            return Err(Error::Numeric(format!("{v} does not fit in f32")));
        }
        out.extend_from_slice(&f.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_matrix(bytes: &[u8]) -> Result<Matrix> {
    let parse = |offset: usize, message: String| Error::Parse { offset, message };
    if bytes.len() < MATRIX_HEADER {
        return Err(parse(
            bytes.len(),
            format!("header needs {MATRIX_HEADER} bytes, file has {}", bytes.len()),
        ));
    }
    if &bytes[..8] != MATRIX_MAGIC {
        return Err(parse(0, format!("bad magic {:?}", &bytes[..8])));
    }
    let rows = u32_at(bytes, 8) as usize;
    let cols = u32_at(bytes, 12) as usize;
    if rows == 0 || cols == 0 {
        return Err(parse(8, format!("empty shape {rows}x{cols}")));
    }
    let expected = rows
        .checked_mul(cols)
        .and_then(|rc| rc.checked_mul(4))
        .and_then(|b| b.checked_add(MATRIX_HEADER))
        .ok_or_else(|| parse(8, format!("shape {rows}x{cols} overflows")))?;
    if bytes.len() != expected {
        return Err(parse(
            bytes.len().min(expected),
            format!("{rows}x{cols} matrix needs {expected} bytes, file has {}", bytes.len()),
        ));
    }
    let mut data = Vec::with_capacity(rows * cols);
    for (i, chunk) in bytes[MATRIX_HEADER..].chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
        if !v.is_finite() {
            return Err(parse(MATRIX_HEADER + 4 * i, format!("non-finite entry {v}")));
        }
        data.push(f64::from(v));
    }
    Matrix::new(rows, cols, data)
}

pub fn write_matrix(path: &Path, m: &Matrix) -> Result<()> {
    std::fs::write(path, encode_matrix(m)?).map_err(|e| Error::io(path, e))
}

pub fn read_matrix(path: &Path) -> Result<Matrix> {
    decode_matrix(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}

/// Digest binding a checkpoint to its base weight.
pub fn weight_digest(w0: &Matrix) -> u64 {
    let mut h = Fnv1a::new();
    h.write_u64(w0.rows() as u64);
    h.write_u64(w0.cols() as u64);
    for &v in w0.as_slice() {
        h.write_u64(v.to_bits());
    }
    h.finish()
}

/// Decoded checkpoint contents.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub shape: (usize, usize),
    pub alpha: f64,
    pub energy_positions: Vec<(usize, usize)>,
    pub random_positions: Vec<(usize, usize)>,
    /// Coefficients in mask order, at storage precision.
    pub values: Vec<f32>,
    pub w0_digest: u64,
}

impl Checkpoint {
    pub fn from_layer(layer: &SshLayer) -> Self {
        let mask = layer.mask();
        Self {
            shape: layer.shape(),
            alpha: layer.alpha(),
            energy_positions: mask.energy_positions().to_vec(),
            random_positions: mask.random_positions().to_vec(),
            values: layer.delta().values().iter().map(|&v| v as f32).collect(),
            w0_digest: weight_digest(layer.w0()),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let n = self.values.len();
        let mut out = Vec::with_capacity(CHECKPOINT_HEADER + 12 * n + 8);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&to_u32(self.shape.0, "d1")?.to_le_bytes());
        out.extend_from_slice(&to_u32(self.shape.1, "d2")?.to_le_bytes());
        out.extend_from_slice(&self.alpha.to_le_bytes());
        out.extend_from_slice(&to_u32(self.energy_positions.len(), "n_energy")?.to_le_bytes());
        out.extend_from_slice(&to_u32(self.random_positions.len(), "n_random")?.to_le_bytes());
        for &(u, v) in self.energy_positions.iter().chain(&self.random_positions) {
            out.extend_from_slice(&to_u32(u, "u")?.to_le_bytes());
            out.extend_from_slice(&to_u32(v, "v")?.to_le_bytes());
        }
        for &x in &self.values {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out.extend_from_slice(&self.w0_digest.to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let magic_len = bytes.len().min(8);
        if bytes[..magic_len] != CHECKPOINT_MAGIC[..magic_len] {
            return Err(Error::BadMagic {
                found: bytes[..magic_len].to_vec(),
            });
        }
        let need = |section: &'static str, end: usize| {
            if bytes.len() < end {
                Err(Error::Truncated {
                    section,
                    needed: end,
                    available: bytes.len(),
                })
            } else {
                Ok(())
            }
        };
        need("header", CHECKPOINT_HEADER)?;
        let d1 = u32_at(bytes, 8) as usize;
        let d2 = u32_at(bytes, 12) as usize;
        let alpha = f64::from_le_bytes(bytes[16..24].try_into().expect("8 bytes"));
        let n_energy = u32_at(bytes, 24) as usize;
        let n_random = u32_at(bytes, 28) as usize;
        let n = n_energy + n_random;

        let positions_end = CHECKPOINT_HEADER + 8 * n;
        need("positions", positions_end)?;
        let mut positions = (0..n).map(|i| {
            let at = CHECKPOINT_HEADER + 8 * i;
            (u32_at(bytes, at) as usize, u32_at(bytes, at + 4) as usize)
        });
        let energy_positions: Vec<_> = positions.by_ref().take(n_energy).collect();
        let random_positions: Vec<_> = positions.collect();

        let values_end = positions_end + 4 * n;
        need("values", values_end)?;
        let values = bytes[positions_end..values_end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();

        need("digest", values_end + 8)?;
        let w0_digest = u64_at(bytes, values_end);
        if bytes.len() > values_end + 8 {
            return Err(Error::Parse {
                offset: values_end + 8,
                message: format!("{} trailing bytes after digest", bytes.len() - values_end - 8),
            });
        }
        Ok(Self {
            shape: (d1, d2),
            alpha,
            energy_positions,
            random_positions,
            values,
            w0_digest,
        })
    }

    /// Rebuilds the layer on top of `w0`, which must hash to the stored digest.
    pub fn into_layer(self, w0: Matrix) -> Result<SshLayer> {
        let actual = weight_digest(&w0);
        if actual != self.w0_digest {
            return Err(Error::DigestMismatch {
                expected: self.w0_digest,
                actual,
            });
        }
        let mask = FrequencyMask::from_parts(self.shape, self.energy_positions, self.random_positions)?;
        SshLayer::from_parts(w0, mask, self.values.into_iter().map(f64::from).collect(), self.alpha)
    }
}

pub fn save_checkpoint(path: &Path, layer: &SshLayer) -> Result<Checkpoint> {
    let ckpt = Checkpoint::from_layer(layer);
    std::fs::write(path, ckpt.to_bytes()?).map_err(|e| Error::io(path, e))?;
    Ok(ckpt)
}

pub fn load_checkpoint(path: &Path, w0: Matrix) -> Result<SshLayer> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)?.into_layer(w0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapter::ssh_init;
    use crate::numerics::Rng;
    use crate::spectrum::SelectionConfig;
    use proptest::prelude::{any, prop_assert_eq, proptest};

    fn layer(seed: u64, d1: usize, d2: usize, n: usize) -> SshLayer {
        let mut rng = Rng::new(seed);
        let w0 = Matrix::random_normal(&mut rng, d1, d2);
        ssh_init(w0, &SelectionConfig::new(n, 0.5, seed), 2.5, &mut rng).unwrap()
    }

    #[test]
    fn matrix_round_trip_and_layout() {
        let m = Matrix::new(2, 3, vec![1.0, -2.0, 0.5, 0.0, 3.25, -7.0]).unwrap();
        let bytes = encode_matrix(&m).unwrap();
        assert_eq!(bytes.len(), 16 + 24);
        assert_eq!(&bytes[..8], b"SSHMAT01");
        assert_eq!(&bytes[8..16], &[2, 0, 0, 0, 3, 0, 0, 0]);
        assert_eq!(&bytes[20..24], &(-2.0f32).to_le_bytes());
        assert_eq!(decode_matrix(&bytes).unwrap(), m);
    }

    #[test]
    fn matrix_parse_errors_carry_offsets() {
        let m = Matrix::filled(2, 2, 1.0);
        let bytes = encode_matrix(&m).unwrap();
        let offset = |b: &[u8]| match decode_matrix(b) {
            Err(Error::Parse { offset, .. }) => offset,
            other => panic!("{other:?}"),
        };
        assert_eq!(offset(&bytes[..10]), 10);
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert_eq!(offset(&bad), 0);
        assert_eq!(offset(&bytes[..20]), 20);
        let mut nan = bytes.clone();
        nan[24..28].copy_from_slice(&f32::NAN.to_le_bytes());
        assert_eq!(offset(&nan), 24);
        let mut zero = bytes;
        zero[8..12].copy_from_slice(&0u32.to_le_bytes());
        assert_eq!(offset(&zero), 8);
    }

    #[test]
    fn checkpoint_layout() {
        let l = layer(1, 4, 5, 3);
        let bytes = Checkpoint::from_layer(&l).to_bytes().unwrap();
        assert_eq!(bytes.len(), 32 + 12 * 3 + 8);
        assert_eq!(&bytes[..8], b"SSHCKPT1");
        assert_eq!(f64::from_le_bytes(bytes[16..24].try_into().unwrap()), 2.5);
        assert_eq!(u32_at(&bytes, 24), 1);
        assert_eq!(u32_at(&bytes, 28), 2);
        assert_eq!(u64_at(&bytes, bytes.len() - 8), weight_digest(l.w0()));
    }

    #[test]
    fn checkpoint_errors_are_distinct() {
        let l = layer(2, 6, 6, 8);
        let bytes = Checkpoint::from_layer(&l).to_bytes().unwrap();

        let mut bad = bytes.clone();
        bad[7] = b'2';
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::BadMagic { .. })));
        assert!(matches!(Checkpoint::from_bytes(b"SSH"), Err(Error::Truncated { section: "header", .. })));

        for (cut, section) in [(20, "header"), (40, "positions"), (32 + 64 + 4, "values"), (bytes.len() - 1, "digest")] {
            match Checkpoint::from_bytes(&bytes[..cut]) {
                Err(Error::Truncated { section: s, .. }) => assert_eq!(s, section),
                other => panic!("cut {cut}: {other:?}"),
            }
        }

        let mut other_w0 = l.w0().clone();
        other_w0.set(0, 0, other_w0.get(0, 0) + 1e-12);
        assert!(matches!(
            Checkpoint::from_bytes(&bytes).unwrap().into_layer(other_w0),
            Err(Error::DigestMismatch { .. })
        ));

        let mut long = bytes;
        long.push(0);
        assert!(matches!(Checkpoint::from_bytes(&long), Err(Error::Parse { .. })));
    }

    #[test]
    fn checkpoint_file_round_trip() {
        let dir = std::env::temp_dir().join(format!("ssh-ckpt-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("layer.ckpt");
        let l = layer(3, 8, 8, 10);
        save_checkpoint(&path, &l).unwrap();
        let loaded = load_checkpoint(&path, l.w0().clone()).unwrap();
        assert_eq!(loaded.mask(), l.mask());
        assert_eq!(loaded.alpha(), l.alpha());
        let stored: Vec<f64> = l.delta().values().iter().map(|&v| f64::from(v as f32)).collect();
        assert_eq!(loaded.delta().values(), stored.as_slice());
        std::fs::remove_dir_all(dir).unwrap();
    }

    proptest! {
        #[test]
        fn save_load_save_is_byte_identical(seed in any::<u64>(), d1 in 1usize..10, d2 in 1usize..10) {
            let n = 1 + (seed as usize) % (d1 * d2);
            let l = layer(seed, d1, d2, n);
            let first = Checkpoint::from_layer(&l).to_bytes().unwrap();
            let reloaded = Checkpoint::from_bytes(&first).unwrap().into_layer(l.w0().clone()).unwrap();
            let second = Checkpoint::from_layer(&reloaded).to_bytes().unwrap();
            prop_assert_eq!(first, second);
        }
    }
}
