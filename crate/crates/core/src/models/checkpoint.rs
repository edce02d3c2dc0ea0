use std::io::{Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{Model, ModelConfig};
use crate::autodiff::Tensor;
use crate::math::RngStream;
use crate::{ensure, Error, Result};

const MAGIC: &[u8; 4] = b"ICLM";
const VERSION: u32 = 1;

/// SHA-256 of the canonical JSON form of `config`.
pub fn config_hash(config: &ModelConfig) -> [u8; 32] {
    let json = serde_json::to_vec(config).expect("config serializes");
    Sha256::digest(&json).into()
}

/// Writes magic, version, config hash and every parameter tensor.
pub fn save_checkpoint(model: &Model, config: &ModelConfig, path: &Path) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&config_hash(config))?;
    let params = model.params();
    w.write_all(&(params.len() as u32).to_le_bytes())?;
    for p in params {
        let shape = p.value.shape();
        w.write_all(&(shape.len() as u32).to_le_bytes())?;
        for &s in shape {
            w.write_all(&(s as u64).to_le_bytes())?;
        }
        for v in p.value.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|_| Error::Format("truncated checkpoint".into()))?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)
        .map_err(|_| Error::Format("truncated checkpoint".into()))?;
    Ok(u64::from_le_bytes(b))
}

/// Loads parameters into a freshly built model for `config`; refuses files
/// written for a different configuration.
pub fn load_checkpoint(config: &ModelConfig, path: &Path) -> Result<Model> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Format("truncated checkpoint".into()))?;
    ensure!(&magic == MAGIC, Format, "not a model checkpoint");
    let version = read_u32(&mut r)?;
    ensure!(
        version == VERSION,
        Format,
        "unsupported checkpoint version {version}"
    );
    let mut hash = [0u8; 32];
    r.read_exact(&mut hash)
        .map_err(|_| Error::Format("truncated checkpoint".into()))?;
    ensure!(
        hash == config_hash(config),
        Config,
        "checkpoint was written for a different model configuration"
    );

    let mut model = Model::init(config, &mut RngStream::new(0, 0))?;
    let count = read_u32(&mut r)? as usize;
    let mut params = model.params_mut_ordered();
    ensure!(
        count == params.len(),
        Format,
        "checkpoint has {count} tensors, model has {}",
        params.len()
    );
    for p in params.iter_mut() {
        let rank = read_u32(&mut r)? as usize;
        let shape = (0..rank)
            .map(|_| read_u64(&mut r).map(|v| v as usize))
            .collect::<Result<Vec<_>>>()?;
        ensure!(
            shape == p.value.shape(),
            Format,
            "tensor shape {shape:?} does not match {:?}",
            p.value.shape()
        );
        let data = (0..p.value.numel())
            .map(|_| read_u64(&mut r).map(f64::from_bits))
            .collect::<Result<Vec<_>>>()?;
        p.value = Tensor::new(shape, data)?;
        p.grad = None;
    }
    let mut extra = [0u8; 1];
    ensure!(
        r.read(&mut extra)? == 0,
        Format,
        "trailing bytes in checkpoint"
    );
    Ok(model)
}

impl Model {
    /// Mutable parameters in the same order as [`Model::params`].
    pub(crate) fn params_mut_ordered(&mut self) -> Vec<&mut crate::autodiff::Param> {
        match self {
            Model::Mlp(m) => m.params_mut(),
            Model::Minimal(m) => {
                let mut v = vec![&mut m.beta, &mut m.w];
                v.extend(m.mlp.params_mut());
                v
            }
            Model::Transformer(m) => {
                let mut v = vec![&mut m.q, &mut m.k, &mut m.v];
                v.extend(m.mlp.params_mut());
                v
            }
        }
    }
}
