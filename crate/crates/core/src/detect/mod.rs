//! Coarse keypoint extraction from channel images.

pub mod classical;
pub mod net;
pub mod weights;

use serde::{Deserialize, Serialize};

use crate::channel::Position;
use crate::error::Result;
use crate::imaging::{pixel_to_physical, ChannelImage};

pub use classical::detect_classical;
pub use net::{infer, Layer, NetArch, OutputMode};
pub use weights::WeightBundle;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeypointPrediction {
    /// `(row, col)` pixel coordinates, ordered by column.
    pub points_px: Vec<[f64; 2]>,
    /// Confidence per point; present only for flexible-mode predictions.
    pub scores: Option<Vec<f64>>,
    /// Set when the detector had to pad with non-peak pixels.
    #[serde(default)]
    pub low_confidence: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoarseParam {
    pub position: Position,
    pub score: Option<f64>,
}

/// De-normalises each predicted keypoint to physical coordinates.
pub fn coarse_params(pred: &KeypointPrediction, img: &ChannelImage) -> Result<Vec<CoarseParam>> {
    pred.points_px
        .iter()
        .enumerate()
        .map(|(i, p)| {
            Ok(CoarseParam {
                position: pixel_to_physical(img, (p[0], p[1]))?,
                score: pred.scores.as_ref().map(|s| s[i]),
            })
        })
        .collect()
}

/// Keeps the predictions scoring at least `tau`.
pub fn filter_by_score(pred: &KeypointPrediction, tau: f64) -> KeypointPrediction {
    let Some(scores) = &pred.scores else {
        return pred.clone();
    };
    let keep: Vec<usize> = (0..scores.len()).filter(|&i| scores[i] >= tau).collect();
    KeypointPrediction {
        points_px: keep.iter().map(|&i| pred.points_px[i]).collect(),
        scores: Some(keep.iter().map(|&i| scores[i]).collect()),
        low_confidence: pred.low_confidence,
    }
}
