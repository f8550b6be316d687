//! Beam predictors: the beam-hold baseline, the transmitter-identification
//! LSTM fed by tracker states, and the end-to-end CNN-LSTM fed by
//! range-Doppler maps. Public beam indices are 1-based; the learned models
//! work with 0-based class indices internally.

mod e2e;
mod train;
mod txid;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub use e2e::{prepare_map, E2eConfig, E2eInput, E2eModel, FrameFeatures, FrameRef};
pub use train::{epoch_order, train, write_loss_csv, EpochLoss};
pub use txid::{normalize_state, TxIdConfig, TxIdModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Hold,
    Txid,
    E2e,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Hold => "hold",
            ModelKind::Txid => "txid",
            ModelKind::E2e => "e2e",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hold" => Ok(ModelKind::Hold),
            "txid" => Ok(ModelKind::Txid),
            "e2e" => Ok(ModelKind::E2e),
            _ => Err(Error::config(format!("unknown model kind {s:?} (hold, txid, e2e)"))),
        }
    }
}

/// `[b, b-1, b+1, b-2, b+2][..k]`; indices that fall off the codebook are
/// replaced by the nearest unused in-range beams (closer first, lower index
/// first on equal distance).
pub fn beam_hold_predict(initial_beam: usize, k: usize, n_beams: usize) -> Result<Vec<usize>> {
    if !matches!(k, 1 | 3 | 5) || k > n_beams {
        return Err(Error::config(format!("beam hold supports k in {{1, 3, 5}} up to the codebook size, got {k}")));
    }
    if initial_beam == 0 || initial_beam > n_beams {
        return Err(Error::IndexOutOfRange {
            index: initial_beam,
            max: n_beams,
        });
    }
    let b = initial_beam as isize;
    let mut out = Vec::with_capacity(k);
    let mut dist = 0isize;
    while out.len() < k {
        let cands: &[isize] = if dist == 0 { &[b] } else { &[b - dist, b + dist] };
        for &c in cands {
            if c >= 1 && c <= n_beams as isize && out.len() < k {
                out.push(c as usize);
            }
        }
        dist += 1;
    }
    Ok(out)
}

/// 1-based indices of the `k` largest logits, best first, ties to the lower
/// index.
pub fn predict_topk<T: Scalar>(logits: &[T], k: usize) -> Result<Vec<usize>> {
    if k > logits.len() {
        return Err(Error::config(format!("top-{k} requested from {} logits", logits.len())));
    }
    let mut idx: Vec<usize> = (0..logits.len()).collect();
    idx.sort_by(|&a, &b| {
        logits[b]
            .partial_cmp(&logits[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    Ok(idx.into_iter().take(k).map(|i| i + 1).collect())
}
