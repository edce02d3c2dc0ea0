use serde::{Deserialize, Serialize};

use super::SequenceBatch;
use crate::autodiff::Tensor;

/// How labels are appended to items.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelEncoding {
    /// `+1 → (1, 0)`, `−1 → (0, 1)`; width `D + 2`.
    OneHot,
    /// A single ±1 slot; width `D + 1`.
    Scalar,
}

impl LabelEncoding {
    pub fn label_width(self) -> usize {
        match self {
            Self::OneHot => 2,
            Self::Scalar => 1,
        }
    }

    pub fn token_width(self, d: usize) -> usize {
        d + self.label_width()
    }
}

/// `B×(N+1)×T` tokens; the last position is the target with zeroed label slots.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenMatrix {
    pub encoding: LabelEncoding,
    pub tokens: Tensor,
}

impl TokenMatrix {
    pub fn batch(&self) -> usize {
        self.tokens.shape()[0]
    }

    pub fn seq_len(&self) -> usize {
        self.tokens.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.tokens.shape()[2]
    }

    pub fn token(&self, row: usize, pos: usize) -> &[f64] {
        let (l, t) = (self.seq_len(), self.width());
        &self.tokens.data()[(row * l + pos) * t..(row * l + pos + 1) * t]
    }
}

pub fn encode_tokens(batch: &SequenceBatch, encoding: LabelEncoding) -> TokenMatrix {
    let (b, n, d) = (batch.batch, batch.n, batch.d);
    let t = encoding.token_width(d);
    let mut data = vec![0.0; b * (n + 1) * t];
    for row in 0..b {
        for j in 0..n {
            let tok = &mut data[(row * (n + 1) + j) * t..(row * (n + 1) + j + 1) * t];
            tok[..d].copy_from_slice(batch.context_item(row, j));
            let l = batch.context_label(row, j);
            match encoding {
                LabelEncoding::OneHot => tok[if l > 0.0 { d } else { d + 1 }] = 1.0,
                LabelEncoding::Scalar => tok[d] = l,
            }
        }
        let o = (row * (n + 1) + n) * t;
        data[o..o + d].copy_from_slice(batch.target_item(row));
    }
    let tokens = Tensor::new(vec![b, n + 1, t], data).expect("sized above");
    TokenMatrix { encoding, tokens }
}
