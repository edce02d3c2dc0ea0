use super::dataset::{fresh_item, Dataset};
use super::zipf::ZipfSampler;
use crate::math::RngStream;
use crate::{ensure, Result};

/// Where context items come from.
#[derive(Debug, Clone, Copy)]
pub enum ItemSource<'a> {
    /// Indices into a fixed dataset, uniform or Zipf-distributed.
    Finite {
        dataset: &'a Dataset,
        zipf: Option<&'a ZipfSampler>,
    },
    /// New Gaussian items and labels for every context position.
    Fresh { d: usize },
}

impl<'a> ItemSource<'a> {
    pub fn uniform(dataset: &'a Dataset) -> Self {
        Self::Finite {
            dataset,
            zipf: None,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Finite { dataset, .. } => dataset.dim(),
            Self::Fresh { d } => *d,
        }
    }

    fn draw_index(dataset: &Dataset, zipf: Option<&ZipfSampler>, rng: &mut RngStream) -> usize {
        match zipf {
            Some(z) => z.sample(rng),
            None => rng.index(dataset.len()),
        }
    }
}

/// `B` sequences of `N` context pairs plus a target item.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceBatch {
    pub batch: usize,
    pub n: usize,
    pub d: usize,
    /// `B×N×D`.
    pub context_items: Vec<f64>,
    /// `B×N`, ±1.
    pub context_labels: Vec<f64>,
    /// `B×N` dataset indices when the items came from a dataset.
    pub context_indices: Option<Vec<usize>>,
    /// `B×D`.
    pub target_items: Vec<f64>,
    pub target_labels: Vec<f64>,
    pub target_indices: Option<Vec<usize>>,
    /// Context position holding a copy of the target, if any.
    pub exemplar: Vec<Option<usize>>,
    /// Number of +1 labels in each context.
    pub n_plus: Vec<usize>,
}

impl SequenceBatch {
    fn with_capacity(batch: usize, n: usize, d: usize, indexed: bool) -> Self {
        Self {
            batch,
            n,
            d,
            context_items: Vec::with_capacity(batch * n * d),
            context_labels: Vec::with_capacity(batch * n),
            context_indices: indexed.then(|| Vec::with_capacity(batch * n)),
            target_items: Vec::with_capacity(batch * d),
            target_labels: Vec::with_capacity(batch),
            target_indices: indexed.then(|| Vec::with_capacity(batch)),
            exemplar: Vec::with_capacity(batch),
            n_plus: Vec::with_capacity(batch),
        }
    }

    pub fn context_item(&self, row: usize, j: usize) -> &[f64] {
        let o = (row * self.n + j) * self.d;
        &self.context_items[o..o + self.d]
    }

    pub fn context_label(&self, row: usize, j: usize) -> f64 {
        self.context_labels[row * self.n + j]
    }

    pub fn target_item(&self, row: usize) -> &[f64] {
        &self.target_items[row * self.d..(row + 1) * self.d]
    }

    /// `(2 n₊ − N) / √N` per row.
    pub fn eta(&self) -> Vec<f64> {
        let n = self.n as f64;
        self.n_plus
            .iter()
            .map(|&p| (2.0 * p as f64 - n) / n.sqrt())
            .collect()
    }

    fn push_context(&mut self, item: &[f64], label: f64, index: Option<usize>) {
        self.context_items.extend_from_slice(item);
        self.context_labels.push(label);
        if let (Some(v), Some(i)) = (self.context_indices.as_mut(), index) {
            v.push(i);
        }
    }

    /// Copies context position `pos` of the row being built into the target.
    fn finish_row_with_exemplar(&mut self, pos: usize) {
        let row = self.exemplar.len();
        let o = (row * self.n + pos) * self.d;
        self.target_items
            .extend_from_slice(&self.context_items[o..o + self.d]);
        self.target_labels
            .push(self.context_labels[row * self.n + pos]);
        if let Some(ti) = self.target_indices.as_mut() {
            ti.push(self.context_indices.as_ref().unwrap()[row * self.n + pos]);
        }
        self.exemplar.push(Some(pos));
        self.count_plus(row);
    }

    fn count_plus(&mut self, row: usize) {
        let labels = &self.context_labels[row * self.n..(row + 1) * self.n];
        self.n_plus
            .push(labels.iter().filter(|l| **l > 0.0).count());
    }
}

/// Context drawn with replacement; the target copies a uniformly chosen
/// context position.
pub fn build_training_batch(
    source: ItemSource<'_>,
    n: usize,
    batch: usize,
    rng: &mut RngStream,
) -> Result<SequenceBatch> {
    ensure!(n >= 1, Config, "context length must be positive");
    let d = source.dim();
    let mut out =
        SequenceBatch::with_capacity(batch, n, d, matches!(source, ItemSource::Finite { .. }));
    let mut scratch = Vec::with_capacity(d);
    for _ in 0..batch {
        for _ in 0..n {
            match source {
                ItemSource::Finite { dataset, zipf } => {
                    ensure!(!dataset.is_empty(), Config, "empty dataset");
                    let i = ItemSource::draw_index(dataset, zipf, rng);
                    out.push_context(dataset.item(i), dataset.label(i), Some(i));
                }
                ItemSource::Fresh { d } => {
                    scratch.clear();
                    fresh_item(d, rng, &mut scratch);
                    let l = rng.sign();
                    out.push_context(&scratch, l, None);
                }
            }
        }
        let pos = rng.index(n);
        out.finish_row_with_exemplar(pos);
    }
    Ok(out)
}

/// Novel items for every sequence, exemplar present.
pub fn build_icl_eval_batch(
    d: usize,
    n: usize,
    batch: usize,
    rng: &mut RngStream,
) -> Result<SequenceBatch> {
    ensure!(d >= 1, Config, "item dimension must be positive");
    build_training_batch(ItemSource::Fresh { d }, n, batch, rng)
}

/// Target from the dataset, context drawn from the remaining items.
pub fn build_iwl_eval_batch(
    dataset: &Dataset,
    n: usize,
    batch: usize,
    rng: &mut RngStream,
) -> Result<SequenceBatch> {
    let k = dataset.len();
    ensure!(
        k > n,
        Config,
        "in-weights evaluation needs K > N (K = {k}, N = {n})"
    );
    let d = dataset.dim();
    let mut out = SequenceBatch::with_capacity(batch, n, d, true);
    for row in 0..batch {
        let t = rng.index(k);
        for _ in 0..n {
            // Uniform over the other K-1 items.
            let mut i = rng.index(k - 1);
            if i >= t {
                i += 1;
            }
            out.push_context(dataset.item(i), dataset.label(i), Some(i));
        }
        out.target_items.extend_from_slice(dataset.item(t));
        out.target_labels.push(dataset.label(t));
        out.target_indices.as_mut().unwrap().push(t);
        out.exemplar.push(None);
        out.count_plus(row);
    }
    Ok(out)
}

/// Contexts with exactly `N/2` labels of each sign; the target copies a
/// uniformly chosen context position.
pub fn build_balanced_batch(
    source: ItemSource<'_>,
    n: usize,
    batch: usize,
    rng: &mut RngStream,
) -> Result<SequenceBatch> {
    ensure!(
        n >= 2 && n.is_multiple_of(2),
        Config,
        "balanced sequences need an even context length, got {n}"
    );
    if let ItemSource::Finite { dataset, .. } = source {
        let plus = dataset.labels().iter().filter(|l| **l > 0.0).count();
        ensure!(
            plus > 0 && plus < dataset.len(),
            Config,
            "balanced sequences need both labels in the dataset"
        );
    }
    let d = source.dim();
    let mut out =
        SequenceBatch::with_capacity(batch, n, d, matches!(source, ItemSource::Finite { .. }));
    let mut signs: Vec<f64> = (0..n).map(|j| if j < n / 2 { 1.0 } else { -1.0 }).collect();
    let mut scratch = Vec::with_capacity(d);
    for _ in 0..batch {
        rng.shuffle(&mut signs);
        for &s in &signs {
            match source {
                ItemSource::Finite { dataset, zipf } => {
                    // Rejection keeps the within-label distribution of the sampler.
                    let i = loop {
                        let i = ItemSource::draw_index(dataset, zipf, rng);
                        if dataset.label(i) == s {
                            break i;
                        }
                    };
                    out.push_context(dataset.item(i), s, Some(i));
                }
                ItemSource::Fresh { d } => {
                    scratch.clear();
                    fresh_item(d, rng, &mut scratch);
                    out.push_context(&scratch, s, None);
                }
            }
        }
        let pos = rng.index(n);
        out.finish_row_with_exemplar(pos);
    }
    Ok(out)
}
