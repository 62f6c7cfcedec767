//! Binary checkpoint of policy and value parameters.
//!
//! All integers and values are little-endian.
//!
//! | bytes        | field                                                 |
//! |--------------|-------------------------------------------------------|
//! | 8            | magic `BSPNCKPT`                                      |
//! | 4 (u32)      | schema version, currently 1                           |
//! | 1 (u8)       | scalar width in bytes, 4 or 8                         |
//! | 1 (u8)       | byte order, always 0 (little-endian)                  |
//! | 2            | reserved, zero                                        |
//! | 8 (u64)      | training iteration                                    |
//! | 32           | SHA-256 of the embedded config text                   |
//! | 8 (u64)      | config length `c`                                     |
//! | `c`          | config text (UTF-8 TOML)                              |
//! | 4 (u32)      | tensor count `n`                                      |
//! | per tensor   | u16 name length, name bytes, u8 rank, rank × u64 dims |
//! | per tensor   | `prod(dims)` values of `width` bytes, table order     |
//!
//! Nothing may follow the last array.

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nn::{PolicyParams, Scalar};

pub const MAGIC: &[u8; 8] = b"BSPNCKPT";
pub const SCHEMA_VERSION: u32 = 1;
const BYTE_ORDER_LE: u8 = 0;

/// SHA-256 of `text`, lower-case hex.
pub fn digest_hex(text: &str) -> String {
    hex_of(&Sha256::digest(text.as_bytes()))
}

fn hex_of(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<F: Scalar> {
    pub params: PolicyParams<F>,
    pub iteration: u64,
    pub config_toml: String,
}

/// Header fields readable without knowing the scalar type.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CheckpointHeader {
    pub version: u32,
    pub scalar_width: u8,
    pub iteration: u64,
    pub config_digest: String,
    pub config_toml: String,
    pub tensors: Vec<(String, Vec<usize>)>,
}

impl CheckpointHeader {
    pub fn num_params(&self) -> usize {
        self.tensors.iter().map(|(_, s)| s.iter().product::<usize>()).sum()
    }
}

impl<F: Scalar> Checkpoint<F> {
    pub fn new(params: PolicyParams<F>, iteration: u64, config_toml: impl Into<String>) -> Self {
        Self { params, iteration, config_toml: config_toml.into() }
    }

    pub fn config_digest(&self) -> String {
        digest_hex(&self.config_toml)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&SCHEMA_VERSION.to_le_bytes());
        out.push(F::WIDTH as u8);
        out.push(BYTE_ORDER_LE);
        out.extend_from_slice(&[0, 0]);
        out.extend_from_slice(&self.iteration.to_le_bytes());
        out.extend_from_slice(&Sha256::digest(self.config_toml.as_bytes()));
        out.extend_from_slice(&(self.config_toml.len() as u64).to_le_bytes());
        out.extend_from_slice(self.config_toml.as_bytes());
        let tensors = self.params.tensors();
        out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
        for (name, shape, _) in &tensors {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(shape.len() as u8);
            for d in shape {
                out.extend_from_slice(&(*d as u64).to_le_bytes());
            }
        }
        for (_, _, data) in &tensors {
            for v in data.iter() {
                v.write_le(&mut out);
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let header = read_header(&mut r)?;
        if header.scalar_width as usize != F::WIDTH {
            return Err(Error::Checkpoint(format!(
                "scalar width {} does not match expected {}",
                header.scalar_width,
                F::WIDTH
            )));
        }
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for (name, shape) in header.tensors {
            let count: usize = shape.iter().product();
            let raw = r.take(count.checked_mul(F::WIDTH).ok_or_else(|| corrupt("tensor size overflow"))?)?;
            let data = raw.chunks_exact(F::WIDTH).map(F::read_le).collect();
            tensors.push((name, shape, data));
        }
        if r.pos != bytes.len() {
            return Err(corrupt("trailing bytes after last tensor"));
        }
        let params = PolicyParams::from_tensors(tensors)?;
        Ok(Self { params, iteration: header.iteration, config_toml: header.config_toml })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// Parses and checks the header and tensor table only.
pub fn read_checkpoint_header(bytes: &[u8]) -> Result<CheckpointHeader> {
    let mut r = Reader { bytes, pos: 0 };
    let header = read_header(&mut r)?;
    let expected = header.num_params() as u64 * header.scalar_width as u64;
    if (bytes.len() - r.pos) as u64 != expected {
        return Err(corrupt(format!("payload holds {} bytes, table needs {expected}", bytes.len() - r.pos)));
    }
    Ok(header)
}

fn corrupt(msg: impl std::fmt::Display) -> Error {
    Error::Checkpoint(format!("corrupt checkpoint: {msg}"))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.bytes.len()).ok_or_else(|| corrupt("truncated"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self, max: u64) -> Result<usize> {
        let n = self.u64()?;
        if n > max {
            return Err(corrupt(format!("length {n} exceeds remaining input")));
        }
        Ok(n as usize)
    }
}

fn read_header(r: &mut Reader<'_>) -> Result<CheckpointHeader> {
    if r.take(8)? != MAGIC {
        return Err(corrupt("bad magic"));
    }
    let version = r.u32()?;
    if version != SCHEMA_VERSION {
        return Err(Error::Checkpoint(format!("unsupported schema version {version}")));
    }
    let scalar_width = r.u8()?;
    if scalar_width != 4 && scalar_width != 8 {
        return Err(corrupt(format!("scalar width {scalar_width}")));
    }
    if r.u8()? != BYTE_ORDER_LE {
        return Err(corrupt("byte order must be little-endian"));
    }
    if r.take(2)? != [0, 0] {
        return Err(corrupt("reserved bytes not zero"));
    }
    let iteration = r.u64()?;
    let digest = r.take(32)?.to_vec();
    let remaining = (r.bytes.len() - r.pos) as u64;
    let config_len = r.len(remaining)?;
    let config_toml =
        String::from_utf8(r.take(config_len)?.to_vec()).map_err(|_| corrupt("config text is not UTF-8"))?;
    if Sha256::digest(config_toml.as_bytes()).as_slice() != digest.as_slice() {
        return Err(corrupt("config digest mismatch"));
    }
    let count = r.u32()? as usize;
    let mut tensors = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let name_len = r.u16()? as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec()).map_err(|_| corrupt("tensor name is not UTF-8"))?;
        let rank = r.u8()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let remaining = (r.bytes.len() - r.pos) as u64;
            shape.push(r.len(remaining)?);
        }
        tensors.push((name, shape));
    }
    Ok(CheckpointHeader { version, scalar_width, iteration, config_digest: hex_of(&digest), config_toml, tensors })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::NetworkConfig;
    use proptest::{prop_assert_eq, proptest};

    fn small(seed: u64) -> PolicyParams<f32> {
        let cfg = NetworkConfig { hidden: vec![5, 4], ..Default::default() };
        PolicyParams::init(seed, 7, 3, &cfg)
    }

    #[test]
    fn digest_matches_known_vector() {
        assert_eq!(digest_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }

    #[test]
    fn header_reports_shapes_and_count() {
        let p = small(1);
        let bytes = Checkpoint::new(p.clone(), 9, "seed = 1\n").to_bytes();
        let h = read_checkpoint_header(&bytes).unwrap();
        assert_eq!(h.version, SCHEMA_VERSION);
        assert_eq!(h.scalar_width, 4);
        assert_eq!(h.iteration, 9);
        assert_eq!(h.config_digest, digest_hex("seed = 1\n"));
        assert_eq!(h.tensors[0], ("policy.0.weight".to_string(), vec![7, 5]));
        // (7+1)*5 + (5+1)*4 + (4+1)*3 for each head, minus the value output, plus log-std.
        let closed = (8 * 5 + 6 * 4 + 5 * 3) + (8 * 5 + 6 * 4 + 5) + 3;
        assert_eq!(h.num_params(), closed);
        assert_eq!(p.num_params(), closed);
    }

    #[test]
    fn every_truncation_is_rejected() {
        let bytes = Checkpoint::new(small(2), 0, "x = 1\n").to_bytes();
        for cut in 0..bytes.len() {
            assert!(Checkpoint::<f32>::from_bytes(&bytes[..cut]).is_err(), "cut at {cut}");
            assert!(read_checkpoint_header(&bytes[..cut]).is_err(), "cut at {cut}");
        }
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Checkpoint::<f32>::from_bytes(&extra).is_err());
    }

    #[test]
    fn corrupted_header_fields_are_rejected() {
        let bytes = Checkpoint::new(small(3), 0, "x = 1\n").to_bytes();
        for idx in [0usize, 8, 12, 13, 14, 24, 56, 64] {
            let mut b = bytes.clone();
            b[idx] ^= 0x5a;
            assert!(matches!(Checkpoint::<f32>::from_bytes(&b), Err(Error::Checkpoint(_))), "byte {idx}");
        }
    }

    #[test]
    fn width_mismatch_is_a_schema_error() {
        let bytes = Checkpoint::new(small(4), 0, "").to_bytes();
        assert!(matches!(Checkpoint::<f64>::from_bytes(&bytes), Err(Error::Checkpoint(_))));
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(seed in 0u64..1000, iteration in 0u64..u64::MAX, text in "[ -~\n]{0,64}") {
            let c = Checkpoint::new(small(seed), iteration, text);
            let back = Checkpoint::<f32>::from_bytes(&c.to_bytes()).unwrap();
            let bits = |p: &PolicyParams<f32>| -> Vec<u32> {
                p.tensors().iter().flat_map(|t| t.2.iter().map(|v| v.to_bits())).collect()
            };
            prop_assert_eq!(bits(&back.params), bits(&c.params));
            prop_assert_eq!(back.iteration, c.iteration);
            prop_assert_eq!(&back.config_toml, &c.config_toml);
            prop_assert_eq!(back.to_bytes(), c.to_bytes());
        }
    }
}
