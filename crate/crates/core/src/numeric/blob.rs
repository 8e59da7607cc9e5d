//! Versioned binary encoding of a network's parameters.
//!
//! All integers are little-endian `u32`, all reals little-endian `f64`:
//!
//! | offset      | size | field                                             |
//! |-------------|------|---------------------------------------------------|
//! | 0           | 4    | magic `b"CCRL"`                                   |
//! | 4           | 4    | format version (currently 1)                      |
//! | 8           | 4    | output transform tag (0 identity, 1 sigmoid, 2 softplus) |
//! | 12          | 4    | layer count `L`                                   |
//! | 16          | 8·L  | layer table, `(input, output)` per layer          |
//! | 16+8L       | 4    | auxiliary value count `A`                         |
//! | 20+8L       | 8·P  | parameters, `P = Σ (input+1)·output`              |
//! | ...         | 8·A  | auxiliary values (e.g. Gaussian log-stddev)       |
//! | end-8       | 8    | checksum: first 8 bytes of SHA-256 of all prior bytes, as u64 |

use sha2::{Digest, Sha256};

use super::mlp::{LayerDesc, Mlp, NetworkSpec, OutputTransform, ParameterStore};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"CCRL";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkBlob {
    pub mlp: Mlp,
    pub aux: Vec<f64>,
}

fn digest64(bytes: &[u8]) -> u64 {
    let d = Sha256::digest(bytes);
    u64::from_le_bytes(d[..8].try_into().expect("32-byte digest"))
}

pub fn encode(mlp: &Mlp, aux: &[f64]) -> Vec<u8> {
    let store = mlp.store();
    let layers = store.layers();
    let mut out = Vec::with_capacity(32 + 8 * layers.len() + 8 * (store.len() + aux.len()));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&mlp.spec().output.tag().to_le_bytes());
    out.extend_from_slice(&(layers.len() as u32).to_le_bytes());
    for l in layers {
        out.extend_from_slice(&(l.input as u32).to_le_bytes());
        out.extend_from_slice(&(l.output as u32).to_le_bytes());
    }
    out.extend_from_slice(&(aux.len() as u32).to_le_bytes());
    for p in store.params().iter().chain(aux) {
        out.extend_from_slice(&p.to_le_bytes());
    }
    let sum = digest64(&out);
    out.extend_from_slice(&sum.to_le_bytes());
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Blob(format!(
                "truncated: need {} bytes at offset {}, have {}",
                n,
                self.pos,
                self.bytes.len()
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn decode(bytes: &[u8], what: &str) -> Result<NetworkBlob> {
    if bytes.len() < 8 + 4 {
        return Err(Error::Blob(format!("{what}: too short ({} bytes)", bytes.len())));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 8);
    let stored = u64::from_le_bytes(tail.try_into().expect("8 bytes"));
    let computed = digest64(body);
    if stored != computed {
        return Err(Error::Corruption {
            what: what.to_string(),
            stored,
            computed,
        });
    }
    let mut r = Reader { bytes: body, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Blob(format!("{what}: bad magic")));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Blob(format!("{what}: unsupported format version {version}")));
    }
    let output = OutputTransform::from_tag(r.u32()?)
        .ok_or_else(|| Error::Blob(format!("{what}: unknown output transform")))?;
    let n_layers = r.u32()? as usize;
    if n_layers == 0 {
        return Err(Error::Blob(format!("{what}: empty layer table")));
    }
    let mut layers = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let input = r.u32()? as usize;
        let output = r.u32()? as usize;
        layers.push(LayerDesc { input, output });
    }
    for w in layers.windows(2) {
        if w[0].output != w[1].input {
            return Err(Error::Blob(format!("{what}: inconsistent layer table")));
        }
    }
    let n_aux = r.u32()? as usize;
    let n_params: usize = layers.iter().map(LayerDesc::param_count).sum();
    let mut params = Vec::with_capacity(n_params);
    for _ in 0..n_params {
        params.push(r.f64()?);
    }
    let mut aux = Vec::with_capacity(n_aux);
    for _ in 0..n_aux {
        aux.push(r.f64()?);
    }
    if r.pos != body.len() {
        return Err(Error::Blob(format!("{what}: trailing bytes")));
    }
    let spec = NetworkSpec {
        input_dim: layers[0].input,
        hidden: layers[..n_layers - 1].iter().map(|l| l.output).collect(),
        output_dim: layers[n_layers - 1].output,
        output,
    };
    let store = ParameterStore::from_parts(layers, params)?;
    Ok(NetworkBlob {
        mlp: Mlp::new(spec, store)?,
        aux,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample(seed: u64) -> Mlp {
        let spec = NetworkSpec::new(3, &[4, 2], 2).with_output(OutputTransform::Softplus);
        Mlp::init(spec, &mut ChaCha8Rng::seed_from_u64(seed), 1.0).unwrap()
    }

    #[test]
    fn header_layout() {
        let mlp = sample(0);
        let bytes = encode(&mlp, &[0.5]);
        assert_eq!(&bytes[..4], b"CCRL");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 3);
        let expected = 16 + 3 * 8 + 4 + 8 * (mlp.param_count() + 1) + 8;
        assert_eq!(bytes.len(), expected);
    }

    #[test]
    fn tampered_byte_detected() {
        let mut bytes = encode(&sample(1), &[]);
        bytes[40] ^= 0x01;
        assert!(matches!(decode(&bytes, "x"), Err(Error::Corruption { .. })));
    }

    #[test]
    fn truncated_rejected() {
        let bytes = encode(&sample(1), &[]);
        assert!(decode(&bytes[..bytes.len() - 9], "x").is_err());
    }

    proptest! {
        #[test]
        fn roundtrip_bit_exact(seed in 0u64..1000, aux in proptest::collection::vec(-5.0f64..5.0, 0..4)) {
            let mlp = sample(seed);
            let bytes = encode(&mlp, &aux);
            let back = decode(&bytes, "p").unwrap();
            prop_assert_eq!(&back.mlp, &mlp);
            prop_assert_eq!(back.aux.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
                            aux.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
            prop_assert_eq!(encode(&back.mlp, &back.aux), bytes);
        }
    }
}
