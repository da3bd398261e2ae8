//! Peak picking on channel images with non-maximum suppression.

use log::warn;

use super::KeypointPrediction;
use crate::imaging::ChannelImage;

/// Suppression radius in pixels: `max(3, dim / 32)`.
pub fn nms_radius(img: &ChannelImage) -> usize {
    (img.i_h.max(img.i_w) / 32).max(3)
}

/// `a` outranks `b`: brighter intensity, then lower row, then lower column.
fn outranks(a: (u8, usize, usize), b: (u8, usize, usize)) -> bool {
    a.0 > b.0 || (a.0 == b.0 && (a.1, a.2) < (b.1, b.2))
}

/// Pixels that outrank every other pixel within the Chebyshev radius.
pub fn local_maxima(img: &ChannelImage, radius: usize) -> Vec<(usize, usize)> {
    let intensity = |r: usize, c: usize| 255 - img.get(r, c);
    let mut out = Vec::new();
    for r in 0..img.i_h {
        for c in 0..img.i_w {
            let me = (intensity(r, c), r, c);
            let rows = r.saturating_sub(radius)..(r + radius + 1).min(img.i_h);
            let is_peak = rows.into_iter().all(|rr| {
                (c.saturating_sub(radius)..(c + radius + 1).min(img.i_w)).all(|cc| {
                    (rr, cc) == (r, c) || outranks(me, (intensity(rr, cc), rr, cc))
                })
            });
            if is_peak {
                out.push((r, c));
            }
        }
    }
    out
}

/// Local maxima at the default suppression radius, strongest first (ties by
/// row, then column).
pub fn ranked_peaks(img: &ChannelImage) -> Vec<(usize, usize)> {
    let mut peaks = local_maxima(img, nms_radius(img));
    peaks.sort_by_key(|&(r, c)| (img.get(r, c), r, c));
    peaks
}

/// Returns the `s` strongest energy peaks, sorted by column.
///
/// When fewer than `s` peaks exist, the remainder is filled from the global
/// pixel ranking (skipping pixels within the suppression radius of a chosen
/// point where possible) and the prediction is marked low-confidence.
pub fn detect_classical(img: &ChannelImage, s: usize) -> KeypointPrediction {
    let radius = nms_radius(img);
    let key = |&(r, c): &(usize, usize)| (255 - img.get(r, c), r, c);
    let mut peaks = ranked_peaks(img);
    peaks.truncate(s);
    let low_confidence = peaks.len() < s;
    if low_confidence {
        warn!("classical detector found {} of {} peaks; padding from global ranking", peaks.len(), s);
        let mut all: Vec<(usize, usize)> = (0..img.i_h)
            .flat_map(|r| (0..img.i_w).map(move |c| (r, c)))
            .collect();
        all.sort_by(|a, b| {
            let (ka, kb) = (key(a), key(b));
            kb.0.cmp(&ka.0).then((ka.1, ka.2).cmp(&(kb.1, kb.2)))
        });
        let far = |p: &(usize, usize), chosen: &[(usize, usize)]| {
            chosen
                .iter()
                .all(|q| p.0.abs_diff(q.0) > radius || p.1.abs_diff(q.1) > radius)
        };
        for pass in 0..2 {
            for p in &all {
                if peaks.len() >= s {
                    break;
                }
                let ok = if pass == 0 { far(p, &peaks) } else { !peaks.contains(p) };
                if ok {
                    peaks.push(*p);
                }
            }
        }
    }
    peaks.sort_by_key(|&(r, c)| (c, r));
    KeypointPrediction {
        points_px: peaks.iter().map(|&(r, c)| [r as f64, c as f64]).collect(),
        scores: None,
        low_confidence,
    }
}
