//! Binary parameter format.
//!
//! ```text
//! magic        4 bytes  "CVNN"
//! version      u32 LE   (1)
//! layer_count  u32 LE
//! per layer:
//!   role       u8       0 = standalone, 1 = encoder, 2 = decoder (Bernoulli),
//!                       3 = decoder (Gaussian)
//!   activation u8       0 identity, 1 relu, 2 tanh, 3 sigmoid
//!   in_dim     u32 LE
//!   out_dim    u32 LE
//!   weight     out_dim * in_dim f64 LE, row-major
//!   bias       out_dim f64 LE
//! ```

use std::io::{Read, Write};

use super::{Activation, DenseLayer, Tensor2};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"CVNN";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum LayerRole {
    Standalone = 0,
    Encoder = 1,
    DecoderBernoulli = 2,
    DecoderGaussian = 3,
}

impl LayerRole {
    fn from_code(c: u8) -> Option<Self> {
        Some(match c {
            0 => LayerRole::Standalone,
            1 => LayerRole::Encoder,
            2 => LayerRole::DecoderBernoulli,
            3 => LayerRole::DecoderGaussian,
            _ => return None,
        })
    }
}

pub fn write_layers<W: Write>(w: &mut W, layers: &[(LayerRole, &DenseLayer)]) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(layers.len() as u32).to_le_bytes())?;
    for (role, layer) in layers {
        w.write_all(&[*role as u8, layer.activation().code()])?;
        w.write_all(&(layer.input_dim() as u32).to_le_bytes())?;
        w.write_all(&(layer.output_dim() as u32).to_le_bytes())?;
        for v in layer.weight().as_slice().iter().chain(layer.bias()) {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; n * 8];
    r.read_exact(&mut buf)?;
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

pub fn read_layers<R: Read>(r: &mut R) -> Result<Vec<(LayerRole, DenseLayer)>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}")));
    }
    let version = read_u32(r)?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let count = read_u32(r)? as usize;
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let mut tags = [0u8; 2];
        r.read_exact(&mut tags)?;
        let role = LayerRole::from_code(tags[0])
            .ok_or_else(|| Error::Format(format!("layer {i}: unknown role {}", tags[0])))?;
        let act = Activation::from_code(tags[1])
            .ok_or_else(|| Error::Format(format!("layer {i}: unknown activation {}", tags[1])))?;
        let input = read_u32(r)? as usize;
        let output = read_u32(r)? as usize;
        if input == 0 || output == 0 || input.saturating_mul(output) > (1 << 28) {
            return Err(Error::Format(format!("layer {i}: bad dims {output}x{input}")));
        }
        let weight = Tensor2::from_vec(output, input, read_f64s(r, input * output)?)?;
        let bias = read_f64s(r, output)?;
        out.push((role, DenseLayer::from_parts(weight, bias, act)?));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn roundtrip_is_bit_exact() {
        let mut rng = seeded(4);
        let a = DenseLayer::xavier(3, 5, Activation::Relu, &mut rng);
        let b = DenseLayer::xavier(5, 2, Activation::Identity, &mut rng);
        let mut buf = Vec::new();
        write_layers(&mut buf, &[(LayerRole::Encoder, &a), (LayerRole::DecoderGaussian, &b)])
            .unwrap();
        assert_eq!(&buf[..4], MAGIC);
        assert_eq!(buf.len(), 12 + 2 * 10 + 8 * (15 + 5 + 10 + 2));
        let back = read_layers(&mut buf.as_slice()).unwrap();
        assert_eq!(back[0].0, LayerRole::Encoder);
        assert_eq!(back[1].0, LayerRole::DecoderGaussian);
        assert_eq!(back[0].1.weight(), a.weight());
        assert_eq!(back[1].1.bias(), b.bias());
        assert_eq!(back[1].1.activation(), Activation::Identity);
    }

    #[test]
    fn rejects_garbage() {
        assert!(read_layers(&mut &b"NOPE\x01\0\0\0"[..]).is_err());
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&7u32.to_le_bytes());
        assert!(matches!(read_layers(&mut buf.as_slice()), Err(Error::Format(_))));
    }
}
