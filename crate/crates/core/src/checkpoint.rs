//! Network checkpoints: JSON metadata followed by one binary record per layer.
//!
//! Layout (little-endian): `GCNC`, version u32, metadata length u32, metadata
//! JSON, layer count u32, then the layer records. GoF layers use their `GOF1`
//! record; other layers use `CNV1`, `LIN1`, `RELU`, `POOL` and `DROP`.
//! Optimizer accumulators are not stored.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::binio::*;
use crate::error::{GcnError, Result};
use crate::gof::{GofLayer, GOF_MAGIC};
use crate::model::ModelConfig;
use crate::network::{ConvLayer, FeatureShape, Layer, LinearLayer, Network};
use crate::tensor::Filter4;
use crate::train::TrainSchedule;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"GCNC";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    /// Completed epochs.
    pub epoch: usize,
    pub seed: u64,
    pub schedule: TrainSchedule,
    #[serde(default)]
    pub model: Option<ModelConfig>,
    pub input: FeatureShape,
    pub num_classes: usize,
}

pub fn write_checkpoint(w: &mut impl Write, net: &Network, meta: &CheckpointMeta) -> Result<()> {
    put_bytes(w, CHECKPOINT_MAGIC)?;
    put_u32(w, CHECKPOINT_VERSION)?;
    let json = serde_json::to_vec(meta).map_err(|e| GcnError::Format(e.to_string()))?;
    put_usize(w, json.len())?;
    put_bytes(w, &json)?;
    put_usize(w, net.layers().len())?;
    for layer in net.layers() {
        match layer {
            Layer::Gof(g) => g.write_to(w)?,
            Layer::Conv(c) => {
                put_bytes(w, b"CNV1")?;
                for d in c.weights().shape() {
                    put_usize(w, d)?;
                }
                put_usize(w, c.pad())?;
                put_usize(w, c.stride())?;
                put_f64s(w, c.weights().data())?;
                put_f64s(w, c.bias())?;
            }
            Layer::Linear(l) => {
                put_bytes(w, b"LIN1")?;
                put_usize(w, l.inputs())?;
                put_usize(w, l.outputs())?;
                put_f64s(w, l.weights())?;
                put_f64s(w, l.bias())?;
            }
            Layer::Relu => put_bytes(w, b"RELU")?,
            Layer::MaxPool2 => put_bytes(w, b"POOL")?,
            Layer::Dropout(p) => {
                put_bytes(w, b"DROP")?;
                put_f64(w, *p)?;
            }
        }
    }
    Ok(())
}

/// A GoF record is read by [`GofLayer::read_from`], which expects its magic
/// still unread.
struct Prefixed<'a, R> {
    head: &'a [u8],
    rest: &'a mut R,
}

impl<R: Read> Read for Prefixed<'_, R> {
    fn read(&mut self, buf: &mut [u8]) -> std::io::Result<usize> {
        if !self.head.is_empty() {
            let n = self.head.len().min(buf.len());
            buf[..n].copy_from_slice(&self.head[..n]);
            self.head = &self.head[n..];
            return Ok(n);
        }
        self.rest.read(buf)
    }
}

pub fn read_checkpoint(r: &mut impl Read) -> Result<(Network, CheckpointMeta)> {
    expect_magic(r, CHECKPOINT_MAGIC)?;
    let version = get_u32(r)?;
    if version != CHECKPOINT_VERSION {
        return Err(GcnError::Format(format!("unsupported checkpoint version {version}")));
    }
    let json_len = get_usize(r)?;
    let meta: CheckpointMeta =
        serde_json::from_slice(&get_bytes(r, json_len)?).map_err(|e| GcnError::Format(e.to_string()))?;
    let count = get_usize(r)?;
    let mut layers = Vec::with_capacity(count);
    for _ in 0..count {
        let tag = get_tag(r)?;
        let layer = match &tag {
            t if t == GOF_MAGIC => Layer::Gof(GofLayer::read_from(&mut Prefixed { head: &tag, rest: r })?),
            b"CNV1" => {
                let shape = [get_usize(r)?, get_usize(r)?, get_usize(r)?, get_usize(r)?];
                let (pad, stride) = (get_usize(r)?, get_usize(r)?);
                let weights = Filter4::from_vec(shape, get_f64s(r, shape.iter().product())?)?;
                let mut conv = ConvLayer::from_parts(weights, pad, stride)?;
                let bias = get_f64s(r, shape[0])?;
                conv.bias_mut().copy_from_slice(&bias);
                Layer::Conv(conv)
            }
            b"LIN1" => {
                let (inputs, outputs) = (get_usize(r)?, get_usize(r)?);
                let weights = get_f64s(r, inputs * outputs)?;
                let bias = get_f64s(r, outputs)?;
                Layer::Linear(LinearLayer::from_parts(inputs, outputs, weights, bias)?)
            }
            b"RELU" => Layer::Relu,
            b"POOL" => Layer::MaxPool2,
            b"DROP" => Layer::Dropout(get_f64(r)?),
            other => {
                return Err(GcnError::Format(format!(
                    "unknown layer record {:?}",
                    String::from_utf8_lossy(other)
                )))
            }
        };
        layers.push(layer);
    }
    let net = Network::new(layers, meta.input, meta.num_classes)?;
    Ok((net, meta))
}

pub fn save_checkpoint(path: &Path, net: &Network, meta: &CheckpointMeta) -> Result<()> {
    let file = File::create(path).map_err(|e| GcnError::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_checkpoint(&mut w, net, meta)?;
    w.flush().map_err(|e| GcnError::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(Network, CheckpointMeta)> {
    let file = File::open(path).map_err(|e| GcnError::io(path, e))?;
    read_checkpoint(&mut BufReader::new(file)).map_err(|e| match e {
        GcnError::Format(msg) => GcnError::Format(format!("{}: {msg}", path.display())),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::MNIST_SHAPE;
    use crate::model::ModelConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn meta(model: &ModelConfig) -> CheckpointMeta {
        CheckpointMeta {
            epoch: 3,
            seed: 9,
            schedule: TrainSchedule::default(),
            model: Some(model.clone()),
            input: MNIST_SHAPE,
            num_classes: 10,
        }
    }

    #[test]
    fn round_trip_gcn_and_cnn() {
        let gcn = ModelConfig::gcn(vec![2, 3], 4, 2);
        for cfg in [gcn.clone(), gcn.matched_cnn()] {
            let net = cfg.build(MNIST_SHAPE, 10, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
            let mut buf = Vec::new();
            write_checkpoint(&mut buf, &net, &meta(&cfg)).unwrap();
            let (back, m) = read_checkpoint(&mut buf.as_slice()).unwrap();
            assert_eq!(m, meta(&cfg));
            assert_eq!(back.params_flat(), net.params_flat());
            assert_eq!(back.shapes(), net.shapes());
        }
    }

    #[test]
    fn truncated_and_foreign_files() {
        let cfg = ModelConfig::gcn(vec![2], 4, 1);
        let net = cfg.build(MNIST_SHAPE, 10, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &net, &meta(&cfg)).unwrap();
        buf.truncate(buf.len() - 5);
        assert!(matches!(read_checkpoint(&mut buf.as_slice()), Err(GcnError::Format(_))));
        assert!(matches!(
            read_checkpoint(&mut &b"GOF1...."[..]),
            Err(GcnError::Format(_))
        ));
    }
}
