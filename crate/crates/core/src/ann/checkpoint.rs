//! Model checkpoint file.
//!
//! All integers and floats are little-endian.
//!
//! | field            | type                 |
//! |------------------|----------------------|
//! | magic            | `b"QCORRMLP"`        |
//! | version          | u32 = 1              |
//! | flags            | u32, bit 0 = BN on inputs |
//! | seed             | u64                  |
//! | n                | u32                  |
//! | feature indices  | n × u32              |
//! | layer count L    | u32                  |
//! | widths           | (L + 1) × u32        |
//! | parameters       | f32 arrays           |
//!
//! Parameters are stored layer by layer: when the layer is normalized,
//! γ, β, running mean and running variance (each of the input width), then
//! the weight (`inputs × outputs`, row-major) and the bias.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::model::{BatchNorm, Dense, Layer, MlpModel};
use crate::collective::NUM_FEATURES;
use crate::correlations::NUM_CLASSES;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: [u8; 8] = *b"QCORRMLP";
pub const CHECKPOINT_VERSION: u32 = 1;

const MAX_WIDTH: usize = 1 << 16;

pub fn write_model<W: Write>(model: &MlpModel, mut w: W) -> Result<()> {
    w.write_all(&CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&u32::from(model.bn_input()).to_le_bytes())?;
    w.write_all(&model.seed().to_le_bytes())?;
    w.write_all(&(model.n_inputs() as u32).to_le_bytes())?;
    for &i in model.feature_indices() {
        w.write_all(&(i as u32).to_le_bytes())?;
    }
    w.write_all(&(model.layers().len() as u32).to_le_bytes())?;
    for width in model.widths() {
        w.write_all(&(width as u32).to_le_bytes())?;
    }
    let mut put = |v: &[f32]| -> Result<()> {
        for x in v {
            w.write_all(&x.to_le_bytes())?;
        }
        Ok(())
    };
    for layer in model.layers() {
        if let Some(bn) = &layer.norm {
            put(&bn.gamma)?;
            put(&bn.beta)?;
            put(&bn.running_mean)?;
            put(&bn.running_var)?;
        }
        put(&layer.dense.weight)?;
        put(&layer.dense.bias)?;
    }
    Ok(())
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes<const K: usize>(&mut self) -> Result<[u8; K]> {
        let mut b = [0u8; K];
        self.inner.read_exact(&mut b).map_err(truncated)?;
        Ok(b)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }

    fn f32s(&mut self, len: usize) -> Result<Vec<f32>> {
        let mut raw = vec![0u8; len * 4];
        self.inner.read_exact(&mut raw).map_err(truncated)?;
        let v: Vec<f32> = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Corrupt("non-finite parameter".into()));
        }
        Ok(v)
    }
}

fn truncated(e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::Corrupt("checkpoint truncated".into())
    } else {
        Error::Io(e)
    }
}

pub fn read_model<R: Read>(r: R) -> Result<MlpModel> {
    let mut r = Reader { inner: r };
    if r.bytes::<8>()? != CHECKPOINT_MAGIC {
        return Err(Error::Corrupt("not a model checkpoint".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Corrupt(format!("unsupported checkpoint version {version}")));
    }
    let flags = r.u32()?;
    if flags > 1 {
        return Err(Error::Corrupt(format!("unknown flags {flags:#x}")));
    }
    let bn_input = flags & 1 == 1;
    let seed = u64::from_le_bytes(r.bytes()?);
    let n = r.u32()? as usize;
    if n > NUM_FEATURES {
        return Err(Error::Corrupt(format!("{n} input features")));
    }
    let mut indices = Vec::with_capacity(n);
    for _ in 0..n {
        let i = r.u32()? as usize;
        if i >= NUM_FEATURES || indices.contains(&i) {
            return Err(Error::Corrupt(format!("bad feature index {i}")));
        }
        indices.push(i);
    }
    let depth = r.u32()? as usize;
    if !(1..=64).contains(&depth) {
        return Err(Error::Corrupt(format!("{depth} layers")));
    }
    let widths = (0..=depth).map(|_| r.u32().map(|w| w as usize)).collect::<Result<Vec<_>>>()?;
    if widths[0] != n || widths[depth] != NUM_CLASSES || widths.iter().any(|&w| w > MAX_WIDTH) {
        return Err(Error::Corrupt(format!("layer widths {widths:?}")));
    }
    let mut layers = Vec::with_capacity(depth);
    for l in 0..depth {
        let (i, o) = (widths[l], widths[l + 1]);
        let norm = if l > 0 || bn_input {
            let bn = BatchNorm {
                gamma: r.f32s(i)?,
                beta: r.f32s(i)?,
                running_mean: r.f32s(i)?,
                running_var: r.f32s(i)?,
            };
            if bn.running_var.iter().any(|v| *v < 0.0) {
                return Err(Error::Corrupt("negative running variance".into()));
            }
            Some(bn)
        } else {
            None
        };
        layers.push(Layer {
            norm,
            dense: Dense {
                inputs: i,
                outputs: o,
                weight: r.f32s(i * o)?,
                bias: r.f32s(o)?,
            },
        });
    }
    let mut rest = [0u8; 1];
    if r.inner.read(&mut rest)? != 0 {
        return Err(Error::Corrupt("trailing bytes after checkpoint".into()));
    }
    Ok(MlpModel::from_parts(layers, indices, bn_input, seed))
}

pub fn save_model(model: &MlpModel, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_model(model, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<MlpModel> {
    read_model(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ann::model::ModelConfig;

    fn model(bn_input: bool) -> MlpModel {
        let mut cfg = ModelConfig::new(vec![6, 0, 3], 42);
        cfg.hidden = vec![7, 4];
        cfg.bn_input = bn_input;
        let mut m = MlpModel::new(&cfg).unwrap();
        m.layers_mut()[1].norm.as_mut().unwrap().running_var[2] = 0.5;
        m
    }

    #[test]
    fn round_trip() {
        for bn_input in [true, false] {
            let m = model(bn_input);
            let mut buf = Vec::new();
            write_model(&m, &mut buf).unwrap();
            assert_eq!(read_model(&buf[..]).unwrap(), m);
        }
    }

    #[test]
    fn header_layout() {
        let mut buf = Vec::new();
        write_model(&model(true), &mut buf).unwrap();
        assert_eq!(&buf[..8], b"QCORRMLP");
        assert_eq!(u32::from_le_bytes(buf[8..12].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(buf[12..16].try_into().unwrap()), 1);
        assert_eq!(u64::from_le_bytes(buf[16..24].try_into().unwrap()), 42);
        assert_eq!(u32::from_le_bytes(buf[24..28].try_into().unwrap()), 3);
        assert_eq!(u32::from_le_bytes(buf[28..32].try_into().unwrap()), 6);
        // header + (4·3 + 3·7 + 7) + (4·7 + 7·4 + 4) + (4·4 + 4·5 + 5) floats
        let header = 8 + 4 + 4 + 8 + 4 + 12 + 4 + 16;
        assert_eq!(buf.len(), header + 4 * (40 + 60 + 41));
    }

    #[test]
    fn corruption_rejected() {
        let mut buf = Vec::new();
        write_model(&model(true), &mut buf).unwrap();

        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_model(&bad[..]), Err(Error::Corrupt(_))));
        assert!(matches!(read_model(&buf[..buf.len() - 1]), Err(Error::Corrupt(_))));
        let mut long = buf.clone();
        long.push(0);
        assert!(matches!(read_model(&long[..]), Err(Error::Corrupt(_))));
        let mut nan = buf.clone();
        let end = nan.len();
        nan[end - 4..].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(read_model(&nan[..]), Err(Error::Corrupt(_))));
    }
}
