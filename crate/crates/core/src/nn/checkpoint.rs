//! Binary checkpoint format.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "INVABC-CKPT"                      11 bytes
//! version                            u32
//! meta count                         u32
//!   key len u32, key bytes, value u64
//! network count                      u32
//!   name len u32, name bytes
//!   layer count u32
//!   layer records (kind u8 + fields, see `LayerKind`)
//! parameter block: for every network, every layer in order, every
//!   parameter tensor as f64 LE values (batch norm: gamma, beta,
//!   running_mean, running_var)
//! ```
//!
//! Layer records:
//!
//! | kind | fields |
//! |------|--------|
//! | 1 dense | in u32, out u32 |
//! | 2 conv2d | kh, kw, c_in, c_out u32; sh, sw u32; padding u8 (0 SAME, 1 VALID) |
//! | 3 conv2d_transpose | as conv2d |
//! | 4 batchnorm | channels u32, eps f64, momentum f64 |
//! | 5 activation | kind u8 (0 leaky ReLU, 1 ReLU, 2 sigmoid), lambda f64 |
//! | 6 reshape | rank u32, dims u32 × rank |

use std::io::{Read, Write};

use super::activation::Activation;
use super::batchnorm::BatchNorm;
use super::conv::{ConvGeometry, Padding};
use super::layer::{Layer, Sequential};
use super::{NnError, Tensor};

pub const MAGIC: &[u8; 11] = b"INVABC-CKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: Vec<(String, u64)>,
    pub networks: Vec<(String, Sequential)>,
}

impl Checkpoint {
    pub fn meta(&self, key: &str) -> Option<u64> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| *v)
    }

    pub fn network(&self, name: &str) -> Option<&Sequential> {
        self.networks.iter().find(|(n, _)| n == name).map(|(_, s)| s)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), NnError> {
        w.write_all(MAGIC)?;
        put_u32(&mut w, VERSION)?;
        put_u32(&mut w, self.meta.len() as u32)?;
        for (k, v) in &self.meta {
            put_str(&mut w, k)?;
            w.write_all(&v.to_le_bytes())?;
        }
        put_u32(&mut w, self.networks.len() as u32)?;
        for (name, net) in &self.networks {
            put_str(&mut w, name)?;
            put_u32(&mut w, net.layers.len() as u32)?;
            for layer in &net.layers {
                write_descriptor(&mut w, layer)?;
            }
        }
        for (_, net) in &self.networks {
            for layer in &net.layers {
                for t in stored_tensors(layer) {
                    for v in t.data() {
                        w.write_all(&v.to_le_bytes())?;
                    }
                }
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, NnError> {
        let mut magic = [0u8; 11];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(NnError::Checkpoint("bad magic".into()));
        }
        let version = get_u32(&mut r)?;
        if version != VERSION {
            return Err(NnError::Checkpoint(format!("unsupported version {version}")));
        }
        let n_meta = get_u32(&mut r)?;
        let mut meta = Vec::with_capacity(n_meta as usize);
        for _ in 0..n_meta {
            let k = get_str(&mut r)?;
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            meta.push((k, u64::from_le_bytes(b)));
        }
        let n_nets = get_u32(&mut r)?;
        let mut networks = Vec::with_capacity(n_nets as usize);
        for _ in 0..n_nets {
            let name = get_str(&mut r)?;
            let n_layers = get_u32(&mut r)?;
            let mut layers = Vec::with_capacity(n_layers as usize);
            for _ in 0..n_layers {
                layers.push(read_descriptor(&mut r)?);
            }
            networks.push((name, Sequential::new(layers)));
        }
        for (_, net) in &mut networks {
            for layer in &mut net.layers {
                for t in stored_tensors_mut(layer) {
                    for v in t.data_mut() {
                        let mut b = [0u8; 8];
                        r.read_exact(&mut b)?;
                        *v = f64::from_le_bytes(b);
                    }
                }
                if let Layer::BatchNorm(bn) = layer {
                    bn.validate()?;
                }
            }
        }
        let mut rest = Vec::new();
        r.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(NnError::Checkpoint(format!("{} trailing bytes", rest.len())));
        }
        Ok(Self { meta, networks })
    }
}

/// Check that `loaded` has exactly the layer structure of `expected`.
pub fn ensure_same_architecture(expected: &Sequential, loaded: &Sequential) -> Result<(), NnError> {
    if expected.layers.len() != loaded.layers.len() {
        return Err(NnError::Checkpoint(format!(
            "expected {} layers, checkpoint has {}",
            expected.layers.len(),
            loaded.layers.len()
        )));
    }
    for (i, (a, b)) in expected.layers.iter().zip(&loaded.layers).enumerate() {
        let mut da = Vec::new();
        let mut db = Vec::new();
        write_descriptor(&mut da, a)?;
        write_descriptor(&mut db, b)?;
        if da != db {
            return Err(NnError::Checkpoint(format!(
                "layer {i} ({}) differs from configured architecture ({})",
                b.name(),
                a.name()
            )));
        }
    }
    Ok(())
}

fn stored_tensors(layer: &Layer) -> Vec<&Tensor> {
    match layer {
        Layer::BatchNorm(bn) => vec![&bn.gamma, &bn.beta, &bn.running_mean, &bn.running_var],
        other => other.params(),
    }
}

fn stored_tensors_mut(layer: &mut Layer) -> Vec<&mut Tensor> {
    match layer {
        Layer::BatchNorm(bn) => vec![
            &mut bn.gamma,
            &mut bn.beta,
            &mut bn.running_mean,
            &mut bn.running_var,
        ],
        other => other.params_mut(),
    }
}

fn write_descriptor<W: Write>(w: &mut W, layer: &Layer) -> Result<(), NnError> {
    match layer {
        Layer::Dense { weights, .. } => {
            w.write_all(&[1])?;
            put_u32(w, weights.shape()[0] as u32)?;
            put_u32(w, weights.shape()[1] as u32)?;
        }
        Layer::Conv2d { geometry, .. } => {
            w.write_all(&[2])?;
            put_geometry(w, geometry)?;
        }
        Layer::ConvTranspose2d { geometry, .. } => {
            w.write_all(&[3])?;
            put_geometry(w, geometry)?;
        }
        Layer::BatchNorm(bn) => {
            w.write_all(&[4])?;
            put_u32(w, bn.channels() as u32)?;
            w.write_all(&bn.eps.to_le_bytes())?;
            w.write_all(&bn.momentum.to_le_bytes())?;
        }
        Layer::Activation(a) => {
            w.write_all(&[5])?;
            let (kind, lambda) = match a {
                Activation::LeakyRelu(l) => (0u8, *l),
                Activation::Relu => (1, 0.0),
                Activation::Sigmoid => (2, 0.0),
            };
            w.write_all(&[kind])?;
            w.write_all(&lambda.to_le_bytes())?;
        }
        Layer::Reshape(dims) => {
            w.write_all(&[6])?;
            put_u32(w, dims.len() as u32)?;
            for &d in dims {
                put_u32(w, d as u32)?;
            }
        }
    }
    Ok(())
}

fn read_descriptor<R: Read>(r: &mut R) -> Result<Layer, NnError> {
    let mut kind = [0u8; 1];
    r.read_exact(&mut kind)?;
    Ok(match kind[0] {
        1 => {
            let i = get_u32(r)? as usize;
            let o = get_u32(r)? as usize;
            nonzero(&[i, o])?;
            Layer::Dense {
                weights: Tensor::zeros(&[i, o]),
                bias: Tensor::zeros(&[o]),
            }
        }
        2 | 3 => {
            let geometry = get_geometry(r)?;
            let (_, _, ci, co) = geometry.filter;
            let weights = Tensor::zeros(&geometry.weight_shape());
            if kind[0] == 2 {
                Layer::Conv2d {
                    geometry,
                    weights,
                    bias: Tensor::zeros(&[co]),
                }
            } else {
                Layer::ConvTranspose2d {
                    geometry,
                    weights,
                    bias: Tensor::zeros(&[ci]),
                }
            }
        }
        4 => {
            let c = get_u32(r)? as usize;
            nonzero(&[c])?;
            let eps = get_f64(r)?;
            let momentum = get_f64(r)?;
            Layer::BatchNorm(BatchNorm::with_params(c, eps, momentum))
        }
        5 => {
            let mut k = [0u8; 1];
            r.read_exact(&mut k)?;
            let lambda = get_f64(r)?;
            let a = match k[0] {
                0 => Activation::leaky(lambda)?,
                1 => Activation::Relu,
                2 => Activation::Sigmoid,
                other => return Err(NnError::Checkpoint(format!("unknown activation {other}"))),
            };
            Layer::Activation(a)
        }
        6 => {
            let rank = get_u32(r)? as usize;
            let dims = (0..rank)
                .map(|_| get_u32(r).map(|d| d as usize))
                .collect::<Result<Vec<_>, _>>()?;
            nonzero(&dims)?;
            Layer::Reshape(dims)
        }
        other => return Err(NnError::Checkpoint(format!("unknown layer kind {other}"))),
    })
}

fn nonzero(dims: &[usize]) -> Result<(), NnError> {
    if dims.iter().any(|&d| d == 0) {
        return Err(NnError::Checkpoint(format!("zero extent in {dims:?}")));
    }
    Ok(())
}

fn put_geometry<W: Write>(w: &mut W, g: &ConvGeometry) -> Result<(), NnError> {
    let (kh, kw, ci, co) = g.filter;
    for v in [kh, kw, ci, co, g.strides.0, g.strides.1] {
        put_u32(w, v as u32)?;
    }
    w.write_all(&[match g.padding {
        Padding::Same => 0,
        Padding::Valid => 1,
    }])?;
    Ok(())
}

fn get_geometry<R: Read>(r: &mut R) -> Result<ConvGeometry, NnError> {
    let mut v = [0usize; 6];
    for slot in &mut v {
        *slot = get_u32(r)? as usize;
    }
    nonzero(&v)?;
    let mut p = [0u8; 1];
    r.read_exact(&mut p)?;
    let padding = match p[0] {
        0 => Padding::Same,
        1 => Padding::Valid,
        other => return Err(NnError::Checkpoint(format!("unknown padding {other}"))),
    };
    Ok(ConvGeometry {
        filter: (v[0], v[1], v[2], v[3]),
        strides: (v[4], v[5]),
        padding,
    })
}

fn put_u32<W: Write>(w: &mut W, v: u32) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn put_str<W: Write>(w: &mut W, s: &str) -> std::io::Result<()> {
    put_u32(w, s.len() as u32)?;
    w.write_all(s.as_bytes())
}

fn get_u32<R: Read>(r: &mut R) -> Result<u32, NnError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn get_f64<R: Read>(r: &mut R) -> Result<f64, NnError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

fn get_str<R: Read>(r: &mut R) -> Result<String, NnError> {
    let n = get_u32(r)? as usize;
    if n > 1 << 16 {
        return Err(NnError::Checkpoint(format!("string length {n} too large")));
    }
    let mut b = vec![0u8; n];
    r.read_exact(&mut b)?;
    String::from_utf8(b).map_err(|e| NnError::Checkpoint(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample_net() -> Sequential {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut bn = BatchNorm::new(4);
        bn.running_mean = Tensor::uniform(&[4], 1.0, &mut rng);
        Sequential::new(vec![
            Layer::conv2d(ConvGeometry::new((4, 4, 3, 4), 2, Padding::Same), &mut rng),
            Layer::BatchNorm(bn),
            Layer::Activation(Activation::LeakyRelu(0.2)),
            Layer::Reshape(vec![64]),
            Layer::dense(64, 2, &mut rng),
            Layer::Reshape(vec![1, 1, 2]),
            Layer::conv_transpose2d(ConvGeometry::new((4, 4, 3, 2), 2, Padding::Same), &mut rng),
            Layer::Activation(Activation::Sigmoid),
        ])
    }

    #[test]
    fn round_trip_preserves_everything() {
        let ckpt = Checkpoint {
            meta: vec![("latent_dim".into(), 8)],
            networks: vec![("net".into(), sample_net())],
        };
        let mut buf = Vec::new();
        ckpt.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..11], MAGIC);
        let back = Checkpoint::read_from(&buf[..]).unwrap();
        assert_eq!(back, ckpt);
        ensure_same_architecture(&sample_net(), back.network("net").unwrap()).unwrap();
    }

    #[test]
    fn truncated_and_corrupt_inputs_fail() {
        let ckpt = Checkpoint {
            meta: vec![],
            networks: vec![("net".into(), sample_net())],
        };
        let mut buf = Vec::new();
        ckpt.write_to(&mut buf).unwrap();
        assert!(Checkpoint::read_from(&buf[..buf.len() - 3]).is_err());
        let mut extra = buf.clone();
        extra.push(0);
        assert!(Checkpoint::read_from(&extra[..]).is_err());
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(Checkpoint::read_from(&bad[..]).is_err());
    }

    #[test]
    fn architecture_mismatch_detected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let other = Sequential::new(vec![Layer::dense(3, 2, &mut rng)]);
        assert!(ensure_same_architecture(&sample_net(), &other).is_err());
    }
}
