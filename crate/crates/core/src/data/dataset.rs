use std::io::{Read, Write};
use std::path::Path;

use super::config::{DataConfig, DatasetSize};
use crate::math::RngStream;
use crate::{ensure, Error, Result};

const MAGIC: &[u8; 4] = b"ICLD";
const VERSION: u32 = 1;

/// `K` items in `R^D` with `N(0, 1/D)` components and uniform ±1 labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    d: usize,
    items: Vec<f64>,
    labels: Vec<f64>,
}

/// Draws a finite dataset from `rng`.
pub fn sample_dataset(config: &DataConfig, rng: &mut RngStream) -> Result<Dataset> {
    config.validate()?;
    let DatasetSize::Finite(k) = config.k else {
        return Err(Error::Config(
            "cannot materialize an infinite dataset".into(),
        ));
    };
    Ok(Dataset::sample(k, config.d, rng))
}

pub(crate) fn fresh_item(d: usize, rng: &mut RngStream, out: &mut Vec<f64>) {
    let std = 1.0 / (d as f64).sqrt();
    out.extend((0..d).map(|_| std * rng.normal()));
}

impl Dataset {
    pub fn sample(k: usize, d: usize, rng: &mut RngStream) -> Self {
        let mut items = Vec::with_capacity(k * d);
        for _ in 0..k {
            fresh_item(d, rng, &mut items);
        }
        let labels = (0..k).map(|_| rng.sign()).collect();
        Self { d, items, labels }
    }

    pub fn from_parts(d: usize, items: Vec<f64>, labels: Vec<f64>) -> Result<Self> {
        ensure!(d >= 1, Shape, "item dimension must be positive");
        ensure!(
            items.len() == d * labels.len(),
            Shape,
            "{} values for {} items of dimension {d}",
            items.len(),
            labels.len()
        );
        ensure!(
            labels.iter().all(|l| *l == 1.0 || *l == -1.0),
            Domain,
            "labels must be ±1"
        );
        Ok(Self { d, items, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn item(&self, i: usize) -> &[f64] {
        &self.items[i * self.d..(i + 1) * self.d]
    }

    pub fn label(&self, i: usize) -> f64 {
        self.labels[i]
    }

    pub fn items(&self) -> &[f64] {
        &self.items
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    /// Writes the binary format: magic, version, D, K, items (f64 LE), labels (i8).
    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.d as u64).to_le_bytes())?;
        w.write_all(&(self.len() as u64).to_le_bytes())?;
        for v in &self.items {
            w.write_all(&v.to_le_bytes())?;
        }
        let labels: Vec<u8> = self.labels.iter().map(|&l| (l as i8) as u8).collect();
        w.write_all(&labels)?;
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut head = [0u8; 24];
        r.read_exact(&mut head)
            .map_err(|_| Error::Format("truncated header".into()))?;
        ensure!(&head[0..4] == MAGIC, Format, "bad magic {:?}", &head[0..4]);
        let version = u32::from_le_bytes(head[4..8].try_into().unwrap());
        ensure!(
            version == VERSION,
            Format,
            "unsupported dataset version {version}"
        );
        let d = u64::from_le_bytes(head[8..16].try_into().unwrap()) as usize;
        let k = u64::from_le_bytes(head[16..24].try_into().unwrap()) as usize;
        ensure!(d >= 1, Format, "zero item dimension");
        let n_items = k
            .checked_mul(d)
            .filter(|n| *n <= (1 << 34))
            .ok_or_else(|| Error::Format("implausible size".into()))?;
        let mut payload = vec![0u8; n_items * 8 + k];
        r.read_exact(&mut payload)
            .map_err(|_| Error::Format("truncated payload".into()))?;
        let mut extra = [0u8; 1];
        ensure!(
            r.read(&mut extra)? == 0,
            Format,
            "trailing bytes after payload"
        );
        let items = payload[..n_items * 8]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let labels = payload[n_items * 8..]
            .iter()
            .map(|&b| match b as i8 {
                1 => Ok(1.0),
                -1 => Ok(-1.0),
                v => Err(Error::Format(format!("label byte {v}"))),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { d, items, labels })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(&mut std::io::BufReader::new(std::fs::File::open(path)?))
    }
}
